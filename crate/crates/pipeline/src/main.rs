use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stratavatar_core::dataset::{generate_synthetic, ingest_external, split, IngestFormat, MotionFile, SyntheticConfig};
use stratavatar_core::{KinematicTree, SparseObservation};
use stratavatar_pipeline::ablate::{run_ablation, Ablation};
use stratavatar_pipeline::corpus::{list_corpus, load_clip, motion_path};
use stratavatar_pipeline::eval::{evaluate, write_outputs};
use stratavatar_pipeline::{Error, LatencyStats, Result, Run, RunConfig, Stage};

/// Full-body motion from head and hand tracking: data preparation, staged
/// training, online inference and evaluation.
#[derive(Parser)]
#[command(name = "stratavatar", version)]
struct Cli {
    /// TOML run configuration; profile defaults fill any missing key.
    #[arg(long, short, global = true, env = "STRATAVATAR_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceFormat {
    Amass,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus into the corpus directory.
    SynthData {
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert external motion files into the corpus directory.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Source format; inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<SourceFormat>,
    },
    /// Write the train/test manifest for the corpus directory.
    Split {
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage (or `all` stages in order).
    Train { stage: String },
    /// Run online inference over an observation stream.
    Infer {
        /// Observation text file, or a motion file (`.samf`/`.json`) to derive observations from.
        #[arg(long)]
        input: PathBuf,
        /// Output motion file; `.json` selects the text variant.
        #[arg(long)]
        output: PathBuf,
        /// Per-frame latency log (CSV).
        #[arg(long)]
        latency: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the trained chain on the test split.
    Eval {
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Compare the trained run against one changed design choice.
    Ablate {
        /// conditioning, objective, disentangle, refiner or decoder
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let tree = KinematicTree::smpl();
    match cli.command {
        Command::SynthData { sequences, frames, seed } => {
            let s = &config.data.synthetic;
            let cfg = SyntheticConfig::new(sequences.unwrap_or(s.sequences), frames.unwrap_or(s.frames), s.fps, seed.unwrap_or(s.seed));
            let dir = &config.data.corpus;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let corpus = generate_synthetic(&cfg, &tree)?;
            for (name, file) in &corpus {
                file.write(&motion_path(dir, name))?;
            }
            println!("wrote {} sequences to {}", corpus.len(), dir.display());
        }
        Command::Ingest { inputs, format } => {
            let dir = &config.data.corpus;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let format = format.map(|f| match f {
                SourceFormat::Amass => IngestFormat::AmassNpz,
                SourceFormat::Json => IngestFormat::Json,
            });
            for input in &inputs {
                let file = ingest_external(input, format, &tree)?;
                let name = input.file_stem().and_then(|s| s.to_str()).unwrap_or("motion");
                let out = motion_path(dir, name);
                file.write(&out)?;
                println!("{} -> {} ({} frames)", input.display(), out.display(), file.frame_count());
            }
        }
        Command::Split { ratio, seed } => {
            let names = list_corpus(&config.data.corpus)?;
            let manifest = split(&names, ratio.unwrap_or(config.data.train_ratio), seed.unwrap_or(config.data.split_seed))
                .map_err(|e| Error::Config(e.to_string()))?;
            if let Some(dir) = config.data.manifest.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            manifest.write(&config.data.manifest)?;
            println!("{} train / {} test -> {}", manifest.train.len(), manifest.test.len(), config.data.manifest.display());
        }
        Command::Train { stage } => {
            let run = Run::new(config);
            let stages = if stage == "all" {
                Stage::plan(&run.config)
            } else {
                vec![stage.parse::<Stage>().map_err(Error::Config)?]
            };
            for s in stages {
                let report = run.train(s)?;
                println!("{} {} {}", report.stage, report.hash, report.path.display());
            }
        }
        Command::Infer { input, output, latency, seed } => {
            let run = Run::new(config);
            let obs = read_observation(&input, &run)?;
            let chain = run.chain()?;
            let result = chain.infer_online(&obs, seed.unwrap_or(run.config.seeds.infer))?;
            let file = MotionFile::from_sequence(&result.motion, &run.tree)?;
            if output.extension().and_then(|e| e.to_str()) == Some("json") {
                std::fs::write(&output, file.to_json()).map_err(|e| Error::io(&output, e))?;
            } else {
                file.write(&output)?;
            }
            let stats = LatencyStats::from_durations(&result.latency);
            println!(
                "{} frames -> {}; latency per frame: mean {:.3} ms, median {:.3} ms, p95 {:.3} ms, max {:.3} ms",
                stats.frames,
                output.display(),
                stats.mean_ms,
                stats.median_ms,
                stats.p95_ms,
                stats.max_ms
            );
            if let Some(path) = latency {
                let mut csv = String::from("frame,latency_ms\n");
                for (t, d) in result.latency.iter().enumerate() {
                    csv.push_str(&format!("{t},{:.6}\n", d.as_secs_f64() * 1e3));
                }
                std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Eval { out } => {
            let run = Run::new(config);
            let chain = run.chain()?;
            let result = evaluate(&chain, &run.clips()?.1, run.config.seeds.infer, &run.partition)?;
            for path in write_outputs(&result, &run.tree, &out)? {
                println!("wrote {}", path.display());
            }
            let a = &result.report.aggregate;
            println!(
                "MPJRE {:.2}  MPJPE {:.2}  MPJVE {:.2}  Hand PE {:.2}  Upper PE {:.2}  Lower PE {:.2}  Root PE {:.2}  Jitter {:.2}",
                a.mpjre, a.mpjpe, a.mpjve, a.hand_pe, a.upper_pe, a.lower_pe, a.root_pe, a.jitter
            );
        }
        Command::Ablate { name, out } => {
            let which: Ablation = name.parse().map_err(Error::Config)?;
            let run = Run::new(config);
            let out = out.unwrap_or_else(|| PathBuf::from(format!("ablate-{which}")));
            let result = run_ablation(&run, which, &out)?;
            print!("{}", std::fs::read_to_string(&result.table).map_err(|e| Error::io(&result.table, e))?);
        }
    }
    Ok(())
}

fn read_observation(path: &Path, run: &Run) -> Result<SparseObservation<f64>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    if ext == "samf" || ext == "json" {
        let dir = path.parent().unwrap_or(Path::new("."));
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if ext == "samf" {
            return Ok(load_clip(dir, name, &run.tree, &run.config.tracked())?.obs);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seq = MotionFile::from_json(&text)?.to_sequence()?;
        return Ok(stratavatar_pipeline::Clip::new(name, seq, &run.tree, &run.config.tracked())?.obs);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let obs = SparseObservation::parse(&text)?;
    if obs.joints() != &run.config.tracked() {
        return Err(Error::Config(format!(
            "observation tracks joints {:?}, the config expects {:?}",
            obs.joints().joints(),
            run.config.tracked().joints()
        )));
    }
    Ok(obs)
}
