use privis_core::resample::{downsample, resample_bicubic};
use privis_core::sr::{build_dcscn, extract_patch_pairs, psnr, sr_forward, SrConfig};
use privis_core::{DepthFrame, Error, Provenance};
use proptest::prelude::*;

fn frame(side: usize, vals: &[f32]) -> DepthFrame {
    let data = (0..side * side).map(|i| vals[i % vals.len()]).collect();
    DepthFrame::normalized(side, side, data, Provenance::Synthetic).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn untrained_output_is_the_bicubic_upsample(
        vals in proptest::collection::vec(0.0f32..=1.0, 1..64),
        side in 2usize..=14,
        seed in any::<u64>(),
    ) {
        let model = build_dcscn(&SrConfig::default(), seed).unwrap();
        let lr = frame(side, &vals);
        let up = sr_forward(&model, &lr).unwrap();
        let bicubic = resample_bicubic(&lr, side * 4, side * 4).unwrap();
        prop_assert_eq!(up.as_normalized(), bicubic.as_normalized());
    }

    #[test]
    fn output_dims_scale(side in 1usize..=14) {
        for scale in [4usize, 16] {
            let model = build_dcscn(&SrConfig::with_scale(scale), 1).unwrap();
            let lr = frame(side, &[0.3, 0.6]);
            if side * scale <= 224 {
                let up = sr_forward(&model, &lr).unwrap();
                prop_assert_eq!((up.width(), up.height()), (side * scale, side * scale));
            } else {
                prop_assert!(sr_forward(&model, &lr).is_err());
            }
        }
    }
}

#[test]
fn psnr_closed_forms() {
    let a = frame(4, &[0.5]);
    let b = frame(4, &[0.6]);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert_eq!(psnr(&frame(4, &[0.0]), &frame(4, &[1.0])).unwrap(), 0.0);
    assert!(psnr(&a, &frame(5, &[0.5])).is_err());
}

#[test]
fn lr_patches_are_bicubic_downsamples_of_hr_patches() {
    let hr: Vec<DepthFrame> = (0..3)
        .map(|k| {
            let data = (0..64 * 64).map(|i| ((i * (k + 3)) % 97) as f32 / 97.0).collect();
            DepthFrame::normalized(64, 64, data, Provenance::Public).unwrap()
        })
        .collect();
    let cfg = SrConfig::default();
    let set = extract_patch_pairs(&hr, Provenance::Public, "fixture", &cfg, 12, 5).unwrap();
    assert_eq!(set.pairs.len(), 12);
    for (lo, hi) in &set.pairs {
        assert_eq!((lo.width(), hi.width()), (8, 32));
        assert_eq!(lo.as_normalized(), downsample(hi, 4).unwrap().as_normalized());
    }
    let err = extract_patch_pairs(&hr, Provenance::Private, "fixture", &cfg, 12, 5).unwrap_err();
    assert_eq!(err, Error::PrivateProvenance);
}
