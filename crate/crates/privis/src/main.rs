use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use privis::config::RunConfig;
use privis::pipeline::{self, Ctx};
use privis::{Error, Result};
use privis_core::synth::{GenMode, GenSpec};
use privis_core::PrivacyLevel;

#[derive(Parser)]
#[command(name = "privis", version, about = "Privacy-gated depth recognition pipeline")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Smallest privacy tier any persisted derived frame may have.
    #[arg(long, global = true, value_enum)]
    privacy_policy: Option<Policy>,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    None,
    Weak,
    Strong,
}

impl From<Policy> for PrivacyLevel {
    fn from(p: Policy) -> Self {
        match p {
            Policy::None => PrivacyLevel::None,
            Policy::Weak => PrivacyLevel::Weak,
            Policy::Strong => PrivacyLevel::Strong,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Labeled,
    SrCorpus,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset.
    Synth {
        /// Generator spec (JSON). Defaults to the config's data section.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "labeled")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bicubic-downsample a dataset by an integer factor.
    Downsample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a super-resolution model on a public or synthetic corpus.
    TrainSr {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Super-resolve every frame of a dataset.
    Enhance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier for one input cell.
    TrainCls {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dim: usize,
        /// Enhance inputs with this super-resolution checkpoint.
        #[arg(long)]
        sr: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Evaluate a classifier on the test split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cls: PathBuf,
        #[arg(long)]
        sr: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the result grid from a directory of reports.
    Report {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage for every configured cell.
    Run {
        #[arg(long)]
        work: PathBuf,
    },
    /// Check persisted frames under a directory against the policy.
    Audit {
        #[arg(long)]
        root: PathBuf,
    },
}

fn context(cli: &Cli) -> Result<Ctx> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(p) = cli.privacy_policy {
        config.privacy_policy = p.into();
    }
    let mut ctx = Ctx::new(config);
    ctx.verbose = cli.verbose;
    Ok(ctx)
}

fn run(cli: Cli) -> Result<()> {
    let ctx = context(&cli)?;
    match cli.cmd {
        Cmd::Synth { spec, mode, out } => {
            let (mut spec, stage) = match (spec, mode) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    let spec: GenSpec = serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    let stage = match spec.mode {
                        GenMode::Labeled => "synth/labeled",
                        GenMode::SrCorpus => "synth/sr-corpus",
                    };
                    (spec, stage)
                }
                (None, Mode::Labeled) => (ctx.config.labeled_spec(ctx.stage_seed("synth/labeled")), ""),
                (None, Mode::SrCorpus) => (ctx.config.sr_corpus_spec(ctx.stage_seed("synth/sr-corpus")), ""),
            };
            // an explicit master seed replaces the seed stored in a spec file
            if cli.seed.is_some() && !stage.is_empty() {
                spec.seed = ctx.stage_seed(stage);
            }
            let m = pipeline::cmd_synth(&spec, &out)?;
            println!("{} frames -> {}", m.entries.len(), out.display());
        }
        Cmd::Downsample { manifest, scale, out } => {
            let m = pipeline::cmd_downsample(&ctx, &manifest, scale, &out)?;
            println!("{} frames at {}x{} -> {}", m.entries.len(), m.header.side, m.header.side, out.display());
        }
        Cmd::TrainSr {
            manifest,
            scale,
            out,
            loss_csv,
        } => {
            pipeline::cmd_train_sr(&ctx, &manifest, scale, &out, loss_csv.as_deref())?;
            println!("{}", out.display());
        }
        Cmd::Enhance { manifest, sr, out } => {
            let m = pipeline::cmd_enhance(&ctx, &manifest, &sr, &out)?;
            println!("{} frames at {}x{} -> {}", m.entries.len(), m.header.side, m.header.side, out.display());
        }
        Cmd::TrainCls {
            manifest,
            dim,
            sr,
            out,
            loss_csv,
        } => {
            pipeline::cmd_train_cls(&ctx, &manifest, dim, sr.as_deref(), &out, loss_csv.as_deref())?;
            println!("{}", out.display());
        }
        Cmd::Eval { manifest, cls, sr, out } => {
            let r = pipeline::cmd_eval(&manifest, &cls, sr.as_deref(), out.as_deref())?;
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
        }
        Cmd::Report { reports, out } => {
            print!("{}", pipeline::cmd_report(&reports, &out)?);
        }
        Cmd::Run { work } => {
            let s = pipeline::run_pipeline(&ctx, &work)?;
            print!("{}", s.grid);
        }
        Cmd::Audit { root } => {
            let a = pipeline::audit_privacy(&root, ctx.policy)?;
            println!("{} frames checked, {} capture-source originals exempt", a.frames, a.exempt);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
