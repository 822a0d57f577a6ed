use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kneeseg::config::{InputSource, PipelineConfig};
use kneeseg::error::{Error, Result};
use kneeseg::kvol;
use kneeseg::lowrank::blockwise_lowrank;
use kneeseg::metrics::evaluate;
use kneeseg::pipeline::{self, run_pipeline, run_sweep, thread_pool};
use kneeseg::segmenter::{make_phantom, stub_segment, PhantomSpec};

#[derive(Parser)]
#[command(name = "kneeseg", version, about = "Low-rank + matting refinement of 3D segmentations")]
struct Cli {
    /// Cap on worker threads (0 = all cores). Overrides the config value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON pipeline config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => PipelineConfig::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SegPath {
    Source,
    Lowrank,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic volume and its ground-truth labels.
    Phantom {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Block-wise low-rank approximation along the slice axis.
    Lowrank {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        block_depth: Option<usize>,
        #[arg(long)]
        slice_rank: Option<usize>,
    },
    /// Run the stub segmenter configured for one path.
    Segment {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "source")]
        path: SegPath,
    },
    /// Trimap for one foreground class from the two paths' probability maps.
    Trimap {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        lowrank: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Matte every slice and write fused labels plus per-class trimaps and alphas.
    Matte {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        lowrank: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a label volume against a reference and print the metric table.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Number of classes including background.
        #[arg(long)]
        classes: Option<usize>,
        /// Comma-separated class names, background first.
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
    },
    /// Run the full pipeline into a run directory.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Phantom seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid over block depths and slice ranks.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = pipeline::SWEEP_BLOCKS)]
        blocks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = pipeline::SWEEP_RANKS)]
        ranks: Vec<usize>,
    },
    /// Print the effective config as JSON.
    PrintConfig {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn phantom_spec(cfg: &PipelineConfig, seed: Option<u64>) -> PhantomSpec {
    let mut spec = match &cfg.input {
        InputSource::Phantom(s) => s.clone(),
        InputSource::Volume { .. } => PhantomSpec::default(),
    };
    if let Some(s) = seed {
        spec.rng_seed = s;
    }
    spec
}

fn read_input_volume(path: &Path) -> Result<kneeseg::lowrank::DenseTensor3> {
    pipeline::normalize_intensities(kvol::read_volume(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    match cli.command {
        Command::Phantom { config, seed, out, truth } => {
            let cfg = config.load()?;
            let (volume, labels) = make_phantom(&phantom_spec(&cfg, seed))?;
            kvol::write_volume(&volume, &out)?;
            kvol::write_labels(&labels, &truth)
        }
        Command::Lowrank { config, input, out, block_depth, slice_rank } => {
            let mut cfg = config.load()?.lowrank;
            cfg.block_depth = block_depth.unwrap_or(cfg.block_depth);
            cfg.slice_rank = slice_rank.unwrap_or(cfg.slice_rank);
            let volume = read_input_volume(&input)?;
            let low = thread_pool(threads)?.install(|| blockwise_lowrank(&volume, &cfg))?;
            kvol::write_volume(&low, &out)
        }
        Command::Segment { config, input, out, path } => {
            let cfg = config.load()?;
            let params = match path {
                SegPath::Source => cfg.source_stub,
                SegPath::Lowrank => cfg.lowrank_stub,
            };
            let volume = read_input_volume(&input)?;
            let probs = thread_pool(threads)?.install(|| stub_segment(&volume, &params))?;
            kvol::write_probmap(&probs, &out)
        }
        Command::Trimap { source, lowrank, class, out } => {
            let trimap = pipeline::trimap_volume(
                &kvol::read_probmap(&source)?,
                &kvol::read_probmap(&lowrank)?,
                class,
            )?;
            kvol::write_labels(&trimap, &out)
        }
        Command::Matte { config, volume, source, lowrank, out } => {
            let cfg = config.load()?;
            let volume = read_input_volume(&volume)?;
            let ps = kvol::read_probmap(&source)?;
            let pl = kvol::read_probmap(&lowrank)?;
            let slices = thread_pool(threads)?
                .install(|| pipeline::matte_volume(&volume, &ps, &pl, &cfg.matte))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let labels = pipeline::assemble_labels(volume.dims(), ps.class_count(), &slices)?;
            pipeline::write_class_artifacts(&out, volume.dims(), ps.class_count(), &slices)?;
            kvol::write_labels(&labels, &out.join(pipeline::LABELS))
        }
        Command::Eval { config, pred, truth, classes, names } => {
            let cfg = config.load()?;
            let p = kvol::read_labels(&pred, None)?;
            let t = kvol::read_labels(&truth, None)?;
            let c = classes
                .unwrap_or(cfg.class_names.len())
                .max(p.class_count())
                .max(t.class_count());
            let report = evaluate(&p.with_class_count(c)?, &t.with_class_count(c)?)?;
            emit(&report.to_table(&names.unwrap_or(cfg.class_names)));
            Ok(())
        }
        Command::Pipeline { config, out, seed } => {
            let mut cfg = config.load()?;
            apply_overrides(&mut cfg, out, seed, threads);
            let outcome = run_pipeline(&cfg)?;
            let text = std::fs::read_to_string(outcome.run_dir.join(pipeline::SUMMARY_TXT))
                .map_err(|e| Error::Io { path: outcome.run_dir.clone(), source: e })?;
            emit(&text);
            Ok(())
        }
        Command::Sweep { config, out, blocks, ranks } => {
            let mut cfg = config.load()?;
            apply_overrides(&mut cfg, out, None, threads);
            emit(&run_sweep(&cfg, &blocks, &ranks)?.to_table());
            Ok(())
        }
        Command::PrintConfig { config } => {
            emit(&(config.load()?.to_json() + "\n"));
            Ok(())
        }
    }
}

// A closed pipe (e.g. `| head`) is not an error worth reporting.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn apply_overrides(cfg: &mut PipelineConfig, out: Option<PathBuf>, seed: Option<u64>, threads: usize) {
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let (Some(s), InputSource::Phantom(spec)) = (seed, &mut cfg.input) {
        spec.rng_seed = s;
    }
    if threads > 0 {
        cfg.threads = threads;
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kneeseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
