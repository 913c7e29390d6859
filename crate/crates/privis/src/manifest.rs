//! Dataset manifests: JSON lines, a header line followed by one entry per
//! frame. Entry paths are relative to the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use privis_core::synth::{gen_scene, plan_dataset, GenMode, GenSpec, Split, Task};
use privis_core::{DepthFrame, Provenance};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::depthio::{self, Encoding};
use crate::error::{Error, IoContext, Result};

pub const FORMAT: &str = "privis-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub seed: u64,
    pub spec_hash: String,
    pub task: Task,
    pub mode: GenMode,
    pub provenance: Provenance,
    pub encoding: Encoding,
    /// Frame side length in pixels.
    pub side: usize,
    /// Total downsampling factor relative to the generated originals.
    pub scale: usize,
    pub parent_hash: Option<String>,
    /// Marks generated originals that simulate the scene before capture.
    /// They are exempt from the persistence gate; nothing derived is.
    pub capture_source: bool,
    /// Full generator settings, including difficulty parameters.
    pub generator: Option<GenSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Option<usize>,
    pub split: Split,
    pub task: Task,
    pub provenance: Provenance,
    pub instance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    /// Directory entry paths are resolved against.
    pub root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).at(path)?))
}

pub fn spec_hash(spec: &GenSpec) -> String {
    sha256_hex(&serde_json::to_vec(spec).expect("spec serializes"))
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_frame(&self, entry: &ManifestEntry) -> Result<DepthFrame> {
        depthio::load_frame(&self.resolve(entry), self.header.encoding, entry.provenance)
    }

    /// Frames and labels of one split, in manifest order.
    pub fn load_labeled(&self, split: Split) -> Result<(Vec<DepthFrame>, Vec<usize>)> {
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for e in self.split(split) {
            let label = e.label.ok_or_else(|| {
                Error::Config(format!("{}: entry {} has no label", self.root.display(), e.path))
            })?;
            frames.push(self.load_frame(e)?);
            labels.push(label);
        }
        if frames.is_empty() {
            return Err(privis_core::Error::EmptySplit(match split {
                Split::Train => "train",
                Split::Test => "test",
            })
            .into());
        }
        Ok((frames, labels))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes `manifest.jsonl` under `root` and returns its path.
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_jsonl()).at(&path)?;
        Ok(path)
    }
}

/// Parses and validates a manifest: every path exists and decodes at the
/// declared size, no path is listed twice, provenance is uniform and labels
/// fit the task.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).at(path)?;
    let err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
    let header: ManifestHeader =
        serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(err(1, format!("unknown format {:?}", header.format)));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut seen: HashMap<String, (usize, Split)> = HashMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(line).map_err(|e| err(n, format!("bad entry: {e}")))?;
        if e.provenance != header.provenance {
            return Err(err(
                n,
                format!(
                    "mixed provenance: entry {} is {:?}, manifest is {:?}",
                    e.path, e.provenance, header.provenance
                ),
            ));
        }
        if let Some((first_line, split)) = seen.get(&e.path) {
            let msg = if *split != e.split {
                format!("path {} appears in both train and test splits (line {first_line})", e.path)
            } else {
                format!("duplicate path {} (line {first_line})", e.path)
            };
            return Err(err(n, msg));
        }
        if let Some(l) = e.label {
            if l >= e.task.num_classes() {
                return Err(err(n, format!("label {l} out of range for {}", e.task.tag())));
            }
        }
        let file = root.join(&e.path);
        let (w, h) = depthio::read_dims(&file).map_err(|x| err(n, x.to_string()))?;
        if w != header.side || h != header.side {
            return Err(err(
                n,
                format!("{} is {w}x{h}, manifest declares {}x{}", e.path, header.side, header.side),
            ));
        }
        seen.insert(e.path.clone(), (n, e.split));
        entries.push(e);
    }
    Ok(DatasetManifest { header, entries, root })
}

/// Renders every frame of `spec` into `out/frames/` and writes the manifest.
pub fn gen_dataset(spec: &GenSpec, out: &Path) -> Result<DatasetManifest> {
    let plan = plan_dataset(spec)?;
    let frames_dir = out.join("frames");
    fs::create_dir_all(&frames_dir).at(&frames_dir)?;
    let mut entries = Vec::with_capacity(plan.len());
    for p in &plan {
        let frame = gen_scene(&p.scene)?;
        let rel = format!("frames/{}.pgm", p.stem());
        depthio::save_frame(&out.join(&rel), &frame)?;
        entries.push(ManifestEntry {
            path: rel,
            label: p.label,
            split: p.split,
            task: p.scene.task,
            provenance: Provenance::Synthetic,
            instance: p.instance,
        });
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            format: FORMAT.into(),
            seed: spec.seed,
            spec_hash: spec_hash(spec),
            task: spec.task,
            mode: spec.mode,
            provenance: Provenance::Synthetic,
            encoding: Encoding::Millimeters,
            side: spec.side,
            scale: 1,
            parent_hash: None,
            capture_source: true,
            generator: Some(spec.clone()),
        },
        entries,
        root: out.to_path_buf(),
    };
    manifest.write()?;
    Ok(manifest)
}
