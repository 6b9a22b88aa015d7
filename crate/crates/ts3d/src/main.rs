use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ts3d::checkpoint::Checkpoint;
use ts3d::config::{is_model_key, RunConfig};
use ts3d::dataset::{build_pseudo_gt, load_pseudo_gt, Dataset, Split};
use ts3d::evaluate::{evaluate, format_metrics, read_pairs};
use ts3d::infer::Predictor;
use ts3d::train::Trainer;
use ts3d::{heatmap, kitti, Error, Result};
use ts3d_core::gradsuite::{self, Scope};

#[derive(Parser)]
#[command(name = "ts3d", version, about = "Stereo 3D object detection on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Configuration file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set train.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        self.resolve_over(RunConfig::desk())
    }

    /// Like `resolve`, with `base` standing in when no file is given.
    fn resolve_over(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => base,
        };
        cfg.apply(self.overrides.iter().map(String::as_str))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::All => None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cache block-matching disparity for every frame of a dataset.
    Pseudogt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train on the training split of a dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also print every step record on stdout.
        #[arg(long)]
        verbose: bool,
    },
    /// Write KITTI label files with scores for a dataset split.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Inference overrides (`infer.*` keys), e.g. `--set infer.min_score=0.2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare a prediction directory against a label directory.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
        /// Only cases whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Dump the positional-encoding similarity of a probe pixel.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        frame: String,
        /// Probe pixel as `u,v`.
        #[arg(long, value_parser = parse_probe)]
        probe: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScopeArg {
    Ops,
    Modules,
    End2end,
    All,
}

fn parse_probe(s: &str) -> std::result::Result<(usize, usize), String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    Ok((u.trim().parse().map_err(|_| "bad u")?, v.trim().parse().map_err(|_| "bad v")?))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = Dataset::generate(cfg)?;
    data.save(out)?;
    cfg.save(&out.join("config.txt"))?;
    println!("frames={} train={} val={}", data.frames.len(), data.indices(Some(Split::Train)).len(), data.indices(Some(Split::Val)).len());
    Ok(())
}

fn train(args: &ConfigArgs, dataset: &Path, out: &Path, resume: Option<&Path>, verbose: bool) -> Result<()> {
    let resume = resume.map(Checkpoint::load).transpose()?;
    let cfg = &match &resume {
        Some(c) => args.resolve_over(c.config.clone())?,
        None => args.resolve()?,
    };
    let data = Dataset::load(dataset)?;
    let idx = data.indices(Some(Split::Train));
    if idx.is_empty() {
        return Err(Error::Config(format!("{}: dataset has no training frames", dataset.display())));
    }
    let frames: Vec<_> = idx.iter().map(|&i| data.frames[i].clone()).collect();
    let cached = idx
        .iter()
        .map(|&i| load_pseudo_gt(dataset, &data.manifest.frames[i].id))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = match &resume {
        Some(c) => Trainer::resume(c, cfg, &frames, Some(cached))?,
        None => Trainer::new(cfg, data.priors_for(cfg), &frames, Some(cached))?,
    };
    cfg.save(&out.join("config.txt"))?;
    let log_path = out.join("metrics.log");
    let mut log = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    while !trainer.finished() {
        let rec = trainer.step()?;
        writeln!(log, "{rec}").map_err(|e| Error::io(&log_path, e))?;
        if verbose {
            println!("{rec}");
        }
        let every = cfg.train.checkpoint_every;
        if (every > 0 && rec.step % every == 0) || trainer.finished() {
            let ckpt = trainer.checkpoint();
            ckpt.save(&out.join(format!("checkpoint-{:06}.ts3d", rec.step)))?;
            ckpt.save(&out.join("last.ts3d"))?;
        }
    }
    println!("steps={} checkpoint={}", trainer.step_count(), out.join("last.ts3d").display());
    Ok(())
}

fn infer(checkpoint: &Path, dataset: &Path, out: &Path, split: SplitArg, overrides: &[String]) -> Result<()> {
    let mut ckpt = Checkpoint::load(checkpoint)?;
    if let Some(o) = overrides.iter().find(|o| !o.trim_start().starts_with("infer.")) {
        return Err(Error::Config(format!("inference accepts only infer.* overrides, got `{o}`")));
    }
    ckpt.config.apply(overrides.iter().map(String::as_str))?;
    ckpt.config.validate()?;
    let data = Dataset::load(dataset)?;
    let mut scene_cfg = ckpt.config.clone();
    scene_cfg.model.width = data.manifest.scene.width;
    scene_cfg.model.height = data.manifest.scene.height;
    ckpt.check_config(&scene_cfg, is_model_key)?;
    let pred = Predictor::from_checkpoint(&ckpt)?;
    let idx = data.indices(split.split());
    let frames: Vec<_> = idx.iter().map(|&i| &data.frames[i]).collect();
    let dets = pred.detect_all(&frames)?;
    for (&i, labels) in idx.iter().zip(&dets) {
        kitti::write_labels(&out.join(format!("{}.txt", data.manifest.frames[i].id)), labels)?;
    }
    ckpt.config.save(&out.join("config.txt"))?;
    println!("frames={} detections={}", frames.len(), dets.iter().map(Vec::len).sum::<usize>());
    Ok(())
}

fn gradcheck(scope: ScopeArg, filter: Option<&str>) -> Result<()> {
    let scopes: &[Scope] = match scope {
        ScopeArg::Ops => &[Scope::Ops],
        ScopeArg::Modules => &[Scope::Modules],
        ScopeArg::End2end => &[Scope::EndToEnd],
        ScopeArg::All => &Scope::ALL,
    };
    let mut failed = Vec::new();
    let mut total = 0;
    for &s in scopes {
        for o in gradsuite::run(s, filter)? {
            println!("{}", gradsuite::describe(&o));
            total += 1;
            if !o.passed() {
                failed.push(format!("{}/{}", s.name(), o.name));
            }
        }
    }
    println!("cases={total} failed={}", failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join(", ")))
    }
}

fn heatmap_cmd(checkpoint: &Path, dataset: &Path, frame: &str, probe: (usize, usize), out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let pred = Predictor::from_checkpoint(&ckpt)?;
    let f = ts3d::dataset::load_frame(dataset, frame)?;
    heatmap::write_heatmap(out, &pred, &f, probe)?;
    println!("heatmap={} masked={}", out.join("heatmap.pgm").display(), out.join("masked.ppm").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    ts3d::init_threads()?;
    match cli.command {
        Command::Synth { cfg, out } => synth(&cfg.resolve()?, &out),
        Command::Pseudogt { cfg, dataset } => {
            let cfg = cfg.resolve()?;
            let data = Dataset::load(&dataset)?;
            build_pseudo_gt(&dataset, &data, &cfg)?;
            println!("frames={}", data.frames.len());
            Ok(())
        }
        Command::Train { cfg, dataset, out, resume, verbose } => train(&cfg, &dataset, &out, resume.as_deref(), verbose),
        Command::Infer { checkpoint, dataset, out, split, overrides } => infer(&checkpoint, &dataset, &out, split, &overrides),
        Command::Eval { pred, gt } => {
            print!("{}", format_metrics(&evaluate(&read_pairs(&pred, &gt)?)?));
            Ok(())
        }
        Command::Gradcheck { scope, filter } => gradcheck(scope, filter.as_deref()),
        Command::Heatmap { checkpoint, dataset, frame, probe, out } => heatmap_cmd(&checkpoint, &dataset, &frame, probe, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
