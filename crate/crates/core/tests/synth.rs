use privis_core::oracle::{separation_ratio, NearestCentroid};
use privis_core::resample::downsample;
use privis_core::rng::fnv1a64;
use privis_core::synth::{gen_scene, plan_dataset, GenSpec, Mixture, Split, Task, ViewMix};
use privis_core::{normalize_depth, DepthFrame, DepthRange};

fn render(spec: &GenSpec) -> (Vec<DepthFrame>, Vec<usize>, Vec<Split>) {
    let plan = plan_dataset(spec).unwrap();
    let frames = plan.iter().map(|p| gen_scene(&p.scene).unwrap()).collect();
    let labels = plan.iter().map(|p| p.label.unwrap()).collect();
    let splits = plan.iter().map(|p| p.split).collect();
    (frames, labels, splits)
}

fn split_of<T: Clone>(items: &[T], splits: &[Split], s: Split) -> Vec<T> {
    items.iter().zip(splits).filter(|(_, x)| **x == s).map(|(v, _)| v.clone()).collect()
}

#[test]
fn hand_hygiene_is_separable_by_raw_centroids() {
    let spec = GenSpec::new(Task::HandHygiene, 200, 11);
    let (frames, labels, splits) = render(&spec);
    let (tr_f, tr_l) = (split_of(&frames, &splits, Split::Train), split_of(&labels, &splits, Split::Train));
    let (te_f, te_l) = (split_of(&frames, &splits, Split::Test), split_of(&labels, &splits, Split::Test));
    let oracle = NearestCentroid::fit(&tr_f, &tr_l, 2).unwrap();
    let train_acc = oracle.accuracy(&tr_f, &tr_l).unwrap();
    let test_acc = oracle.accuracy(&te_f, &te_l).unwrap();
    assert!(train_acc > 0.9 && test_acc > 0.9, "train {train_acc}, test {test_acc}");
}

#[test]
fn silhouettes_survive_sixteenfold_downsampling() {
    let spec = GenSpec::new(Task::HandHygiene, 200, 12);
    let (frames, labels, _) = render(&spec);
    let small: Vec<DepthFrame> = frames
        .iter()
        .map(|f| downsample(&normalize_depth(f).unwrap(), 16).unwrap())
        .collect();
    assert_eq!((small[0].width(), small[0].height()), (14, 14));
    let ratio = separation_ratio(&small, &labels, 2).unwrap();
    assert!(ratio > 5.0, "separation {ratio}");
}

#[test]
fn icu_classes_are_distinguishable() {
    let spec = GenSpec::new(Task::Icu, 150, 13);
    let (frames, labels, _) = render(&spec);
    let oracle = NearestCentroid::fit(&frames, &labels, 5).unwrap();
    let acc = oracle.accuracy(&frames, &labels).unwrap();
    assert!(acc > 0.6, "icu centroid accuracy {acc}");
}

#[test]
fn every_sample_is_in_the_sensor_envelope() {
    let lo = DepthRange::encode_mm(0.8);
    let hi = DepthRange::encode_mm(4.0);
    for (task, view) in [
        (Task::HandHygiene, ViewMix::Side),
        (Task::HandHygiene, ViewMix::TopDown),
        (Task::Icu, ViewMix::Mixed),
    ] {
        let spec = GenSpec {
            view,
            dropout: 0.05,
            ..GenSpec::new(task, 12, 5)
        };
        for f in render(&spec).0 {
            assert!(f.as_raw().unwrap().iter().all(|&v| v == 0 || (lo..=hi).contains(&v)));
        }
    }
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let spec = GenSpec {
        mixture: Mixture::Reference,
        ..GenSpec::new(Task::HandHygiene, 30, 99)
    };
    let digest = |s: &GenSpec| {
        let mut bytes = Vec::new();
        for f in render(s).0 {
            bytes.extend(f.as_raw().unwrap().iter().flat_map(|v| v.to_le_bytes()));
        }
        fnv1a64(&bytes)
    };
    assert_eq!(digest(&spec), digest(&spec));
    assert_ne!(digest(&spec), digest(&GenSpec { seed: 100, ..spec.clone() }));
}

#[test]
fn reference_mixture_counts() {
    let spec = GenSpec {
        mixture: Mixture::Reference,
        ..GenSpec::new(Task::HandHygiene, 1000, 1)
    };
    let plan = plan_dataset(&spec).unwrap();
    assert_eq!(plan.iter().filter(|p| p.label == Some(1)).count(), 106);
}
