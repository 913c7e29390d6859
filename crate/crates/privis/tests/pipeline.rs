use std::fs;
use std::path::Path;

use privis::checkpoint;
use privis::config::RunConfig;
use privis::manifest::{gen_dataset, load_manifest, sha256_hex, DatasetManifest, MANIFEST_FILE};
use privis::pipeline::{audit_privacy, cmd_downsample, cmd_enhance, cmd_eval, cmd_report, cmd_train_cls, cmd_train_sr, Ctx};
use privis::Error;
use privis_core::resample::resample_bicubic;
use privis_core::sr::sr_forward;
use privis_core::synth::{GenMode, GenSpec, Split, Task, ViewMix};
use privis_core::{normalize_depth, PrivacyLevel, Provenance};
use tempfile::TempDir;

fn small_ctx(policy: PrivacyLevel) -> Ctx {
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.privacy_policy = policy;
    cfg.sr.steps = 3;
    cfg.sr.patches = 16;
    cfg.cls.steps = 3;
    Ctx::new(cfg)
}

fn labeled(dir: &Path, n: usize) -> DatasetManifest {
    gen_dataset(&GenSpec::new(Task::HandHygiene, n, 17), dir).unwrap()
}

fn corpus(dir: &Path) -> DatasetManifest {
    let spec = GenSpec {
        mode: GenMode::SrCorpus,
        view: ViewMix::Mixed,
        ..GenSpec::new(Task::HandHygiene, 6, 18)
    };
    gen_dataset(&spec, dir).unwrap()
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn rewrite_line(path: &Path, line: usize, f: impl Fn(&str) -> String) {
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i + 1 == line { f(l) } else { l.to_string() })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn manifest_round_trip_and_regeneration() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let m = labeled(a.path(), 12);
    assert_eq!(load_manifest(&a.path().join(MANIFEST_FILE)).unwrap(), m);
    labeled(b.path(), 12);
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(m.header.capture_source);
    assert_eq!(m.split(Split::Train).count() + m.split(Split::Test).count(), 12);
}

#[test]
fn manifest_invariants_are_enforced() {
    let dir = TempDir::new().unwrap();
    let m = labeled(dir.path(), 6);
    let path = dir.path().join(MANIFEST_FILE);
    let original = fs::read_to_string(&path).unwrap();

    let first = m.entries[0].path.clone();
    rewrite_line(&path, 3, |l| {
        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
        v["path"] = first.clone().into();
        v["split"] = "test".into();
        v.to_string()
    });
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains(&first) && err.contains(":3:"), "{err}");

    fs::write(&path, &original).unwrap();
    rewrite_line(&path, 2, |l| l.replace("\"synthetic\"", "\"private\""));
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("mixed provenance"), "{err}");

    fs::write(&path, &original).unwrap();
    rewrite_line(&path, 4, |_| "{not json".into());
    let err = load_manifest(&path).unwrap_err();
    assert!(matches!(err, Error::Manifest { line: 4, .. }), "{err}");

    fs::write(&path, &original).unwrap();
    fs::remove_file(dir.path().join(&m.entries[1].path)).unwrap();
    assert!(load_manifest(&path).is_err());
}

#[test]
fn downsample_obeys_the_policy() {
    let src = TempDir::new().unwrap();
    labeled(src.path(), 4);
    let manifest = src.path().join(MANIFEST_FILE);
    let out = TempDir::new().unwrap();

    let strong = small_ctx(PrivacyLevel::Strong);
    let m = cmd_downsample(&strong, &manifest, 16, &out.path().join("x16")).unwrap();
    assert_eq!(m.header.side, 14);
    assert_eq!(m.header.scale, 16);
    assert_eq!(m.header.parent_hash.as_deref(), Some(sha256_hex(&fs::read(&manifest).unwrap()).as_str()));
    assert!(!m.header.capture_source);
    let again = load_manifest(&out.path().join("x16").join(MANIFEST_FILE)).unwrap();
    assert_eq!(again.load_frame(&again.entries[0]).unwrap().width(), 14);

    let err = cmd_downsample(&strong, &manifest, 4, &out.path().join("x4")).unwrap_err();
    assert!(matches!(err, Error::PolicyViolation { width: 56, .. }));
    assert!(!out.path().join("x4").exists());

    let open = small_ctx(PrivacyLevel::None);
    let copy = cmd_downsample(&open, &manifest, 1, &out.path().join("x1")).unwrap();
    for e in &copy.entries {
        assert_eq!(fs::read(copy.resolve(e)).unwrap(), fs::read(src.path().join(&e.path)).unwrap());
    }
    assert!(cmd_downsample(&open, &manifest, 3, &out.path().join("x3")).is_err());
}

#[test]
fn sr_training_refuses_private_data_and_zero_steps_is_bicubic() {
    let dir = TempDir::new().unwrap();
    let m = corpus(&dir.path().join("corpus"));
    let manifest = dir.path().join("corpus").join(MANIFEST_FILE);

    let mut ctx = small_ctx(PrivacyLevel::Strong);
    ctx.config.sr.steps = 0;
    let ck = dir.path().join("sr.pvst");
    let loss = dir.path().join("loss.csv");
    let model = cmd_train_sr(&ctx, &manifest, 4, &ck, Some(&loss)).unwrap();
    assert_eq!(checkpoint::load_sr(&ck).unwrap(), model);
    assert_eq!(fs::read_to_string(&loss).unwrap(), "step,loss\n");
    let hr = normalize_depth(&m.load_frame(&m.entries[0]).unwrap()).unwrap();
    let lr = resample_bicubic(&hr, 14, 14).unwrap();
    assert_eq!(
        sr_forward(&model, &lr).unwrap().as_normalized(),
        resample_bicubic(&lr, 56, 56).unwrap().as_normalized()
    );

    let text = fs::read_to_string(&manifest).unwrap().replace("\"synthetic\"", "\"private\"");
    fs::write(&manifest, text).unwrap();
    assert_eq!(load_manifest(&manifest).unwrap().header.provenance, Provenance::Private);
    let err = cmd_train_sr(&ctx, &manifest, 4, &dir.path().join("private.pvst"), None).unwrap_err();
    assert_eq!(err.kind(), "provenance");
    assert!(!dir.path().join("private.pvst").exists());
}

#[test]
fn enhance_is_gated_on_output_size() {
    let dir = TempDir::new().unwrap();
    corpus(&dir.path().join("corpus"));
    labeled(&dir.path().join("orig"), 4);
    let ctx = small_ctx(PrivacyLevel::Strong);
    let ck = dir.path().join("sr.pvst");
    cmd_train_sr(&ctx, &dir.path().join("corpus").join(MANIFEST_FILE), 4, &ck, None).unwrap();
    let small = dir.path().join("x16");
    cmd_downsample(&ctx, &dir.path().join("orig").join(MANIFEST_FILE), 16, &small).unwrap();
    let m = small.join(MANIFEST_FILE);
    let err = cmd_enhance(&ctx, &m, &ck, &dir.path().join("enh")).unwrap_err();
    assert!(matches!(err, Error::PolicyViolation { width: 56, .. }));
    assert!(!dir.path().join("enh").exists());
    let weak = small_ctx(PrivacyLevel::Weak);
    let enhanced = cmd_enhance(&weak, &m, &ck, &dir.path().join("enh")).unwrap();
    assert_eq!(enhanced.header.side, 56);
    assert!(audit_privacy(dir.path(), PrivacyLevel::Weak).is_ok());
    let err = audit_privacy(dir.path(), PrivacyLevel::Strong).unwrap_err();
    assert!(matches!(err, Error::Audit(4, _)), "{err}");
}

#[test]
fn classifier_cells_evaluate_reproducibly() {
    let dir = TempDir::new().unwrap();
    labeled(&dir.path().join("orig"), 20);
    let manifest = dir.path().join("orig").join(MANIFEST_FILE);
    let ctx = small_ctx(PrivacyLevel::Strong);
    let ck = dir.path().join("cls.pvst");
    let meta = cmd_train_cls(&ctx, &manifest, 56, None, &ck, Some(&dir.path().join("cls_loss.csv"))).unwrap();
    assert_eq!((meta.dim, meta.dcscn, meta.task.as_str()), (56, false, "hand_hygiene"));
    let loss = fs::read_to_string(dir.path().join("cls_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);

    let reports = dir.path().join("reports");
    let a = cmd_eval(&manifest, &ck, None, Some(&reports.join("a.json"))).unwrap();
    let b = cmd_eval(&manifest, &ck, None, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dim, 56);
    assert_eq!(a.total(), 2);

    let err = cmd_eval(&manifest, &dir.path().join("missing.pvst"), None, None).unwrap_err();
    assert_eq!(err.kind(), "io");
    let err = cmd_eval(&manifest, &ck, Some(&ck), None).unwrap_err();
    assert_eq!(err.kind(), "config");

    let grid = cmd_report(&reports, &dir.path().join("grid")).unwrap();
    assert_eq!(grid.lines().count(), 4);
    assert!(dir.path().join("grid/grid.csv").exists());
}
