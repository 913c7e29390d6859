//! The pipeline stages behind each subcommand, and the full run.
//!
//! Every stage derives its random stream from the master seed and a stage
//! name, so any stage can be rerun in isolation. Stages that persist frames
//! check the privacy policy against the output size before writing
//! anything.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use privis_core::classify::{
    build_classifier, evaluate, preprocess, train_cls, ClsConfig, ClsTrainConfig, EvalReport,
};
use privis_core::resample::downsample;
use privis_core::rng::derive_seed;
use privis_core::sr::{build_dcscn, check_provenance, extract_patch_pairs, sr_forward, train_sr, SrConfig, SrModel, SrTrainConfig};
use privis_core::synth::{GenSpec, Split};
use privis_core::{normalize_depth, privacy_gate, privacy_level, DepthFrame, PrivacyLevel};

use crate::checkpoint::{self, ClassifierMeta};
use crate::config::RunConfig;
use crate::depthio::{self, Encoding};
use crate::error::{Error, IoContext, Result};
use crate::manifest::{
    file_hash, gen_dataset, load_manifest, DatasetManifest, ManifestEntry, ManifestHeader, MANIFEST_FILE,
};
use crate::report;

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub seed: u64,
    pub policy: PrivacyLevel,
    pub config: RunConfig,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Ctx {
    pub fn new(config: RunConfig) -> Self {
        Ctx {
            seed: config.seed,
            policy: config.privacy_policy,
            config,
            verbose: false,
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn cls_config(&self, num_classes: usize, dim: usize, dcscn: bool) -> ClsConfig {
        ClsConfig {
            blocks: self.config.cls.blocks.clone(),
            groups: self.config.cls.groups,
            seed: self.stage_seed(&format!("cls-init/{dim}/{}", cell_tag(dcscn))),
            ..ClsConfig::new(num_classes)
        }
    }
}

fn cell_tag(dcscn: bool) -> &'static str {
    if dcscn {
        "dcscn"
    } else {
        "bicubic"
    }
}

/// Fails unless frames of `side x side` may be persisted under `policy`.
pub fn check_policy(side: usize, policy: PrivacyLevel) -> Result<()> {
    let level = privacy_level(side, side);
    if level >= policy {
        Ok(())
    } else {
        Err(Error::PolicyViolation {
            width: side,
            height: side,
            level,
            policy,
        })
    }
}

fn write_loss_csv(path: &Path, curve: &[f32]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{i},{l}");
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, s).at(path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).at(dir),
        _ => Ok(()),
    }
}

/// Renders a dataset. Generated originals are marked as the capture
/// source and are not subject to the policy.
pub fn cmd_synth(spec: &GenSpec, out: &Path) -> Result<DatasetManifest> {
    gen_dataset(spec, out)
}

/// Bicubic-downsamples every frame of a manifest by `scale`. The policy is
/// checked against the output size before anything is written.
pub fn cmd_downsample(ctx: &Ctx, manifest: &Path, scale: usize, out: &Path) -> Result<DatasetManifest> {
    let parent = load_manifest(manifest)?;
    let side = parent.header.side;
    if scale == 0 || side % scale != 0 {
        return Err(Error::Config(format!("scale: {scale} does not divide the frame side {side}")));
    }
    let new_side = side / scale;
    check_policy(new_side, ctx.policy)?;
    let parent_hash = file_hash(manifest)?;
    let encoding = if scale == 1 {
        parent.header.encoding
    } else {
        Encoding::Unit16
    };
    fs::create_dir_all(out).at(out)?;
    for e in &parent.entries {
        let dst = out.join(&e.path);
        ensure_parent(&dst)?;
        if scale == 1 {
            fs::copy(parent.resolve(e), &dst).at(&dst)?;
            continue;
        }
        let frame = normalize_depth(&parent.load_frame(e)?)?;
        let small = downsample(&frame, scale)?;
        privacy_gate(&small, ctx.policy)?;
        depthio::save_frame(&dst, &small)?;
    }
    let derived = DatasetManifest {
        header: ManifestHeader {
            encoding,
            side: new_side,
            scale: parent.header.scale * scale,
            parent_hash: Some(parent_hash),
            capture_source: false,
            ..parent.header.clone()
        },
        entries: parent.entries.clone(),
        root: out.to_path_buf(),
    };
    derived.write()?;
    ctx.log(format!(
        "downsample: {} frames {side}x{side} -> {new_side}x{new_side} in {}",
        derived.entries.len(),
        out.display()
    ));
    Ok(derived)
}

/// Trains a DCSCN of the given scale on the train split of a manifest.
/// Private manifests are refused before any frame is read.
pub fn cmd_train_sr(ctx: &Ctx, manifest: &Path, scale: usize, out: &Path, loss_csv: Option<&Path>) -> Result<SrModel> {
    let m = load_manifest(manifest)?;
    check_provenance(m.header.provenance)?;
    let cfg = SrConfig::with_scale(scale);
    cfg.validate()?;
    if m.header.side < cfg.patch_size {
        return Err(Error::Config(format!(
            "sr: {}x{} frames are smaller than the {} pixel patch",
            m.header.side, m.header.side, cfg.patch_size
        )));
    }
    let frames = m
        .split(Split::Train)
        .map(|e| m.load_frame(e).and_then(|f| Ok(normalize_depth(&f)?)))
        .collect::<Result<Vec<DepthFrame>>>()?;
    let s = &ctx.config.sr;
    let source = manifest.display().to_string();
    let pairs = extract_patch_pairs(
        &frames,
        m.header.provenance,
        &source,
        &cfg,
        s.patches,
        ctx.stage_seed(&format!("sr-patches/x{scale}")),
    )?;
    let mut model = build_dcscn(&cfg, ctx.stage_seed(&format!("sr-init/x{scale}")))?;
    let hyper = SrTrainConfig {
        lr: s.lr,
        batch: s.batch,
        steps: s.steps,
        seed: ctx.stage_seed(&format!("sr-train/x{scale}")),
    };
    ctx.log(format!("train-sr: x{scale}, {} pairs, {} steps", pairs.pairs.len(), s.steps));
    let curve = train_sr(&mut model, &pairs, &hyper)?;
    ensure_parent(out)?;
    checkpoint::save_sr(out, &model)?;
    if let Some(p) = loss_csv {
        write_loss_csv(p, &curve)?;
    }
    Ok(model)
}

/// Super-resolves every frame of a manifest. The enhanced size is checked
/// against the policy first, so under `strong` this always refuses.
pub fn cmd_enhance(ctx: &Ctx, manifest: &Path, sr: &Path, out: &Path) -> Result<DatasetManifest> {
    let m = load_manifest(manifest)?;
    let model = checkpoint::load_sr(sr)?;
    let scale = model.config().scale;
    let new_side = m.header.side * scale;
    check_policy(new_side, ctx.policy)?;
    let parent_hash = file_hash(manifest)?;
    let enhanced = m
        .entries
        .iter()
        .map(|e| Ok(sr_forward(&model, &normalize_depth(&m.load_frame(e)?)?)?))
        .collect::<Result<Vec<DepthFrame>>>()?;
    fs::create_dir_all(out).at(out)?;
    for (e, f) in m.entries.iter().zip(&enhanced) {
        let dst = out.join(&e.path);
        ensure_parent(&dst)?;
        depthio::save_frame(&dst, f)?;
    }
    let derived = DatasetManifest {
        header: ManifestHeader {
            encoding: Encoding::Unit16,
            side: new_side,
            scale: (m.header.scale / scale).max(1),
            parent_hash: Some(parent_hash),
            capture_source: false,
            ..m.header.clone()
        },
        entries: m.entries.clone(),
        root: out.to_path_buf(),
    };
    derived.write()?;
    Ok(derived)
}

fn load_sr_for(dim: usize, sr: Option<&Path>, input_side: usize) -> Result<Option<SrModel>> {
    let Some(path) = sr else { return Ok(None) };
    let model = checkpoint::load_sr(path)?;
    let scale = model.config().scale;
    if dim * scale != input_side {
        return Err(Error::Config(format!(
            "dcscn: a x{scale} model cannot bring {dim}x{dim} to {input_side}x{input_side}"
        )));
    }
    Ok(Some(model))
}

fn prepared_split(
    m: &DatasetManifest,
    split: Split,
    dim: usize,
    sr: Option<&SrModel>,
    input_side: usize,
) -> Result<(Vec<DepthFrame>, Vec<usize>)> {
    if m.header.side < dim {
        return Err(Error::Config(format!(
            "manifest frames are {0}x{0}, cannot evaluate at {dim}x{dim}",
            m.header.side
        )));
    }
    let (frames, labels) = m.load_labeled(split)?;
    let frames = frames
        .iter()
        .map(|f| Ok(preprocess(f, dim, sr, input_side)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, labels))
}

/// Trains the classifier for one (dimension, enhancement) cell.
pub fn cmd_train_cls(
    ctx: &Ctx,
    manifest: &Path,
    dim: usize,
    sr: Option<&Path>,
    out: &Path,
    loss_csv: Option<&Path>,
) -> Result<ClassifierMeta> {
    let m = load_manifest(manifest)?;
    let task = m.header.task;
    let dcscn = sr.is_some();
    let cfg = ctx.cls_config(task.num_classes(), dim, dcscn);
    cfg.validate()?;
    let sr_model = load_sr_for(dim, sr, cfg.input_side)?;
    let (frames, labels) = prepared_split(&m, Split::Train, dim, sr_model.as_ref(), cfg.input_side)?;
    let mut model = build_classifier(&cfg)?;
    let c = &ctx.config.cls;
    let hyper = ClsTrainConfig {
        lr: c.lr,
        batch: c.batch,
        steps: c.steps,
        seed: ctx.stage_seed(&format!("cls-train/{dim}/{}", cell_tag(dcscn))),
        augment: c.augment,
    };
    ctx.log(format!(
        "train-cls: {dim}x{dim} {}, {} frames, {} steps",
        cell_tag(dcscn),
        frames.len(),
        c.steps
    ));
    let curve = train_cls(&mut model, &frames, &labels, &hyper)?;
    let meta = ClassifierMeta {
        model: cfg,
        task: task.tag().to_string(),
        dim,
        dcscn,
    };
    ensure_parent(out)?;
    checkpoint::save_cls(out, &model, &meta)?;
    if let Some(p) = loss_csv {
        write_loss_csv(p, &curve)?;
    }
    Ok(meta)
}

/// Evaluates a classifier on the test split, preprocessing frames exactly
/// as during training. Writes the report as JSON when `out` is given.
pub fn cmd_eval(manifest: &Path, cls: &Path, sr: Option<&Path>, out: Option<&Path>) -> Result<EvalReport> {
    let m = load_manifest(manifest)?;
    let (model, meta) = checkpoint::load_cls(cls)?;
    if meta.dcscn != sr.is_some() {
        return Err(Error::Config(format!(
            "dcscn: classifier was trained {} enhancement",
            if meta.dcscn { "with" } else { "without" }
        )));
    }
    if meta.task != m.header.task.tag() {
        return Err(Error::Config(format!(
            "task: classifier is for {}, manifest is {}",
            meta.task,
            m.header.task.tag()
        )));
    }
    let sr_model = load_sr_for(meta.dim, sr, meta.model.input_side)?;
    let (frames, labels) = prepared_split(&m, Split::Test, meta.dim, sr_model.as_ref(), meta.model.input_side)?;
    let report = evaluate(&model, &frames, &labels, &meta.task, meta.dim, meta.dcscn)?;
    if let Some(p) = out {
        ensure_parent(p)?;
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        fs::write(p, text).at(p)?;
    }
    Ok(report)
}

/// Builds `grid.csv` and `grid.txt` from every report in `reports`.
pub fn cmd_report(reports: &Path, out: &Path) -> Result<String> {
    report::write_grid(report::read_reports(reports)?, out)
}

fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, files)?;
        } else {
            files.push(p);
        }
    }
    Ok(())
}

/// Summary of a privacy audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audit {
    /// Frame files inspected.
    pub frames: usize,
    /// Of those, generated capture-source originals.
    pub exempt: usize,
}

/// Checks every frame file under `root` against `policy`. Frames listed in
/// a capture-source manifest are exempt; everything else counts.
pub fn audit_privacy(root: &Path, policy: PrivacyLevel) -> Result<Audit> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut exempt = HashSet::new();
    for f in files.iter().filter(|p| p.file_name().is_some_and(|n| n == MANIFEST_FILE)) {
        let text = fs::read_to_string(f).at(f)?;
        let Some(first) = text.lines().next() else { continue };
        let Ok(header) = serde_json::from_str::<ManifestHeader>(first) else { continue };
        if !header.capture_source {
            continue;
        }
        let dir = f.parent().unwrap_or(Path::new(""));
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let e: ManifestEntry =
                serde_json::from_str(line).map_err(|x| Error::format(f, x.to_string()))?;
            exempt.insert(dir.join(e.path));
        }
    }
    let mut audit = Audit { frames: 0, exempt: 0 };
    let mut violations = Vec::new();
    for f in &files {
        let is_frame = f
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"));
        if !is_frame {
            continue;
        }
        audit.frames += 1;
        if exempt.contains(f) {
            audit.exempt += 1;
            continue;
        }
        let (w, h) = depthio::read_dims(f)?;
        if privacy_level(w, h) < policy {
            violations.push(f.clone());
        }
    }
    match violations.first() {
        Some(first) => Err(Error::Audit(violations.len(), first.clone())),
        None => Ok(audit),
    }
}

/// Everything a full run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<EvalReport>,
    pub grid: String,
    pub audit: Audit,
}

/// Runs synth, downsample, train-sr, train-cls, eval and report for every
/// configured cell, writing under `work`:
///
/// - `data/original`, `data/sr_corpus`: generated originals
/// - `data/x{scale}`: persisted downsampled sets the policy allows
/// - `models/`: checkpoints and loss curves
/// - `reports/`: one JSON report per cell
/// - `grid/`: the result grid
pub fn run_pipeline(ctx: &Ctx, work: &Path) -> Result<RunSummary> {
    let cfg = &ctx.config;
    let data = work.join("data");
    let models = work.join("models");
    let reports = work.join("reports");

    let labeled = match &cfg.paths.manifest {
        Some(p) => p.clone(),
        None => {
            let spec = cfg.labeled_spec(ctx.stage_seed("synth/labeled"));
            ctx.log(format!("synth: {} labeled frames", spec.instances * spec.frames_per_instance));
            cmd_synth(&spec, &data.join("original"))?;
            data.join("original").join(MANIFEST_FILE)
        }
    };
    let side = load_manifest(&labeled)?.header.side;

    let mut by_dim: Vec<(usize, PathBuf)> = Vec::new();
    for &dim in &cfg.dims {
        if dim == side {
            by_dim.push((dim, labeled.clone()));
        } else if privacy_level(dim, dim) >= ctx.policy {
            let out = data.join(format!("x{}", side / dim));
            cmd_downsample(ctx, &labeled, side / dim, &out)?;
            by_dim.push((dim, out.join(MANIFEST_FILE)));
        } else {
            // kept in memory only
            by_dim.push((dim, labeled.clone()));
        }
    }

    let mut sr_paths: Vec<(usize, PathBuf)> = Vec::new();
    if !cfg.dcscn_dims.is_empty() {
        let corpus = match &cfg.paths.sr_manifest {
            Some(p) => p.clone(),
            None => {
                let spec = cfg.sr_corpus_spec(ctx.stage_seed("synth/sr-corpus"));
                ctx.log(format!("synth: {} corpus frames", spec.instances * spec.frames_per_instance));
                cmd_synth(&spec, &data.join("sr_corpus"))?;
                data.join("sr_corpus").join(MANIFEST_FILE)
            }
        };
        let mut scales: Vec<usize> = cfg.dcscn_dims.iter().map(|&d| side / d).collect();
        scales.sort_unstable();
        scales.dedup();
        for s in scales {
            let ck = models.join(format!("dcscn_x{s}.pvst"));
            let loss = models.join(format!("dcscn_x{s}_loss.csv"));
            cmd_train_sr(ctx, &corpus, s, &ck, Some(&loss))?;
            sr_paths.push((s, ck));
        }
    }

    let mut cells: Vec<(usize, bool)> = cfg.dims.iter().map(|&d| (d, false)).collect();
    cells.extend(cfg.dcscn_dims.iter().map(|&d| (d, true)));
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut out = Vec::with_capacity(cells.len());
    for (dim, dcscn) in cells {
        let manifest = &by_dim.iter().find(|(d, _)| *d == dim).expect("every dim has a source").1;
        let sr = dcscn.then(|| {
            let s = side / dim;
            sr_paths.iter().find(|(k, _)| *k == s).expect("trained above").1.as_path()
        });
        let stem = format!("cls_{dim}_{}", cell_tag(dcscn));
        let ck = models.join(format!("{stem}.pvst"));
        cmd_train_cls(ctx, manifest, dim, sr, &ck, Some(&models.join(format!("{stem}_loss.csv"))))?;
        let r = cmd_eval(
            manifest,
            &ck,
            sr,
            Some(&reports.join(format!("{}_{dim:03}_{}.json", cfg.task.tag(), cell_tag(dcscn)))),
        )?;
        ctx.log(format!(
            "eval: {dim}x{dim} {}: accuracy {:.4}",
            cell_tag(dcscn),
            r.test_accuracy
        ));
        out.push(r);
    }
    let grid = cmd_report(&reports, &work.join("grid"))?;
    let audit = audit_privacy(work, ctx.policy)?;
    Ok(RunSummary {
        reports: report::order_reports(out)?,
        grid,
        audit,
    })
}
