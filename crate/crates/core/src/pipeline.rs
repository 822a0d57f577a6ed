//! End-to-end orchestration: volume → low-rank path → two-path segmentation
//! → per-slice trimap and matting → labels → metrics, with every
//! intermediate persisted as KVOL in the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InputSource, PipelineConfig};
use crate::error::{Error, Result};
use crate::kvol::{self, quantize};
use crate::lowrank::{blockwise_lowrank_with_summary, DenseTensor3};
use crate::matting::{
    generate_trimap, matte_slice_multiclass, BinaryMask2D, ClassProbSlice, GrayImage2D, SliceMatte,
};
use crate::metrics::{evaluate, LabelVolume, MetricsReport, ProbVolume};
use crate::segmenter::{make_phantom, stub_segment};

pub const SOURCE: &str = "source";
pub const TRUTH: &str = "truth";
pub const LOWRANK: &str = "lowrank";
pub const PROBS_SOURCE: &str = "probs_source";
pub const PROBS_LOWRANK: &str = "probs_lowrank";
pub const LABELS: &str = "labels";
pub const LABELS_SOURCE: &str = "labels_source";
pub const METRICS: &str = "metrics.tsv";
pub const METRICS_SOURCE: &str = "metrics_source.tsv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SUMMARY_JSON: &str = "summary.json";

pub fn trimap_name(class: usize) -> String {
    format!("trimap_class{class}")
}

pub fn alpha_name(class: usize) -> String {
    format!("alpha_class{class}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub blocks: usize,
    pub slices: usize,
    pub classes: usize,
    pub unknown_pixels: usize,
    pub matte_solves: usize,
    pub max_overshoot: f64,
}

/// Machine-readable run summary (`summary.json`). Carries no timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: PipelineConfig,
    pub dims: [usize; 3],
    pub stats: RunStats,
    pub metrics: Option<MetricsReport>,
    pub source_metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub labels: LabelVolume,
    /// Argmax of the source path alone.
    pub source_labels: LabelVolume,
    pub metrics: Option<MetricsReport>,
    pub source_metrics: Option<MetricsReport>,
    pub stats: RunStats,
}

/// Builds a rayon pool with `threads` workers (0 means the rayon default).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot build a {threads}-thread pool: {e}")))
}

/// Maps intensities into `[0, 1]` by min-max scaling when they fall outside it.
pub fn normalize_intensities(volume: DenseTensor3) -> Result<DenseTensor3> {
    let (lo, hi) = volume
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo >= 0.0 && hi <= 1.0 {
        return Ok(volume);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let dims = volume.dims();
    DenseTensor3::new(dims, volume.data().iter().map(|v| (v - lo) / span).collect())
}

/// Round-trips a probability volume through storage precision.
pub fn quantize_probs(p: &ProbVolume) -> Result<ProbVolume> {
    ProbVolume::new(p.dims(), p.class_count(), quantize(p.data()))
}

pub fn quantize_volume(v: &DenseTensor3) -> Result<DenseTensor3> {
    DenseTensor3::new(v.dims(), quantize(v.data()))
}

/// Mattes every slice of `volume` along i3 and assembles the fused labels.
pub fn matte_volume(
    volume: &DenseTensor3,
    probs_source: &ProbVolume,
    probs_lowrank: &ProbVolume,
    params: &crate::matting::MatteParams,
) -> Result<Vec<SliceMatte>> {
    let (w, h, slices) = volume.dims();
    for p in [probs_source, probs_lowrank] {
        if p.dims() != volume.dims() {
            return Err(Error::usage(format!(
                "probability map dims {:?} do not match volume dims {:?}",
                p.dims(),
                volume.dims()
            )));
        }
    }
    if probs_source.class_count() != probs_lowrank.class_count() {
        return Err(Error::usage(format!(
            "class counts differ between paths: {} vs {}",
            probs_source.class_count(),
            probs_lowrank.class_count()
        )));
    }
    let classes = probs_source.class_count();
    (0..slices)
        .into_par_iter()
        .map(|i3| {
            let pixels = volume.slice(i3).iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let img = GrayImage2D::new(w, h, pixels)?;
            let src = ClassProbSlice::new(w, h, classes, probs_source.slice(i3))?;
            let low = ClassProbSlice::new(w, h, classes, probs_lowrank.slice(i3))?;
            matte_slice_multiclass(&img, &src, &low, params)
                .map_err(|e| e.in_stage("matte", format!("slice {i3}")))
        })
        .collect()
}

/// Trimap codes (0 background, 1 unknown, 2 foreground) for one class over
/// the whole volume, from the two paths' argmax masks.
pub fn trimap_volume(probs_source: &ProbVolume, probs_lowrank: &ProbVolume, class: usize) -> Result<LabelVolume> {
    if probs_source.dims() != probs_lowrank.dims() || probs_source.class_count() != probs_lowrank.class_count() {
        return Err(Error::usage("probability maps differ in shape or class count"));
    }
    if class == 0 || class >= probs_source.class_count() {
        return Err(Error::usage(format!(
            "class {class} is not a foreground class of a {}-class map",
            probs_source.class_count()
        )));
    }
    let (w, h, _) = probs_source.dims();
    let mask = |labels: &LabelVolume| {
        labels.labels().iter().map(|&l| l as usize == class).collect::<Vec<bool>>()
    };
    let src = mask(&probs_source.argmax());
    let low = mask(&probs_lowrank.argmax());
    let mut codes = Vec::with_capacity(src.len());
    for (s, l) in src.chunks(w * h).zip(low.chunks(w * h)) {
        let trimap = generate_trimap(
            &BinaryMask2D::new(w, h, s.to_vec())?,
            &BinaryMask2D::new(w, h, l.to_vec())?,
        )?;
        codes.extend(trimap.labels().iter().map(|t| t.code()));
    }
    LabelVolume::new(probs_source.dims(), 3, codes)
}

/// Stacks per-slice labels into a volume.
pub fn assemble_labels(dims: (usize, usize, usize), classes: usize, slices: &[SliceMatte]) -> Result<LabelVolume> {
    let mut labels = Vec::with_capacity(dims.0 * dims.1 * dims.2);
    for s in slices {
        labels.extend_from_slice(&s.labels.labels);
    }
    LabelVolume::new(dims, classes, labels)
}

struct Stopwatch {
    lines: Vec<(String, f64)>,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.lines.push((stage.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }
}

fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn load_input(config: &PipelineConfig) -> Result<(DenseTensor3, Option<LabelVolume>, String)> {
    match &config.input {
        InputSource::Phantom(spec) => {
            let (volume, truth) = make_phantom(spec)?;
            Ok((volume, Some(truth), format!("phantom(seed={})", spec.rng_seed)))
        }
        InputSource::Volume { path, truth } => {
            let volume = normalize_intensities(kvol::read_volume(path)?)?;
            let truth = truth
                .as_ref()
                .map(|t| kvol::read_labels(t, None))
                .transpose()?;
            Ok((volume, truth, path.display().to_string()))
        }
    }
}

/// Runs the full pipeline and persists every artifact under
/// `config.output_dir`. Artifacts already written are left in place when a
/// later stage fails.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let pool = thread_pool(config.threads)?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &PipelineConfig) -> Result<PipelineOutcome> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut clock = Stopwatch::new();

    let (volume, truth, input_name) =
        load_input(config).map_err(|e| e.in_stage("input", "config.input"))?;
    let volume = quantize_volume(&volume)?;
    kvol::write_volume(&volume, &artifact(&dir, SOURCE))?;
    if let Some(t) = &truth {
        kvol::write_labels(t, &artifact(&dir, TRUTH))?;
    }
    clock.lap("input");

    let (lowrank, blocks) = blockwise_lowrank_with_summary(&volume, &config.lowrank)
        .map_err(|e| e.in_stage("lowrank", artifact(&dir, SOURCE).display().to_string()))?;
    let lowrank = quantize_volume(&lowrank)?;
    kvol::write_volume(&lowrank, &artifact(&dir, LOWRANK))?;
    clock.lap("lowrank");

    let (probs_source, probs_lowrank) = match &config.external_probs {
        Some(ext) => (
            kvol::read_probmap(&ext.source)
                .map_err(|e| e.in_stage("segment", ext.source.display().to_string()))?,
            kvol::read_probmap(&ext.lowrank)
                .map_err(|e| e.in_stage("segment", ext.lowrank.display().to_string()))?,
        ),
        None => (
            stub_segment(&volume, &config.source_stub)
                .and_then(|p| quantize_probs(&p))
                .map_err(|e| e.in_stage("segment", artifact(&dir, SOURCE).display().to_string()))?,
            stub_segment(&lowrank, &config.lowrank_stub)
                .and_then(|p| quantize_probs(&p))
                .map_err(|e| e.in_stage("segment", artifact(&dir, LOWRANK).display().to_string()))?,
        ),
    };
    kvol::write_probmap(&probs_source, &artifact(&dir, PROBS_SOURCE))?;
    kvol::write_probmap(&probs_lowrank, &artifact(&dir, PROBS_LOWRANK))?;
    clock.lap("segment");

    let slices = matte_volume(&volume, &probs_source, &probs_lowrank, &config.matte)
        .map_err(|e| e.in_stage("matte", artifact(&dir, PROBS_SOURCE).display().to_string()))?;
    let classes = truth
        .as_ref()
        .map_or(probs_source.class_count(), |t| t.class_count().max(probs_source.class_count()));
    let dims = volume.dims();
    let labels = assemble_labels(dims, classes, &slices)?;
    let source_labels = probs_source.argmax().with_class_count(classes)?;

    let mut stats = RunStats {
        blocks: blocks.len(),
        slices: dims.2,
        classes,
        ..Default::default()
    };
    for s in &slices {
        for cm in &s.classes {
            stats.unknown_pixels += cm.trimap.counts().unknown;
            if let Some(r) = cm.report {
                stats.matte_solves += 1;
                stats.max_overshoot = stats.max_overshoot.max(r.max_overshoot);
            }
        }
    }
    write_class_artifacts(&dir, dims, probs_source.class_count(), &slices)?;
    kvol::write_labels(&labels, &artifact(&dir, LABELS))?;
    kvol::write_labels(&source_labels, &artifact(&dir, LABELS_SOURCE))?;
    clock.lap("matte");

    let (metrics, source_metrics) = match &truth {
        Some(t) => {
            let t = t.clone().with_class_count(classes)?;
            let stage = |e: Error| e.in_stage("eval", artifact(&dir, TRUTH).display().to_string());
            (
                Some(evaluate(&labels, &t).map_err(stage)?),
                Some(evaluate(&source_labels, &t).map_err(stage)?),
            )
        }
        None => (None, None),
    };
    if let (Some(m), Some(s)) = (&metrics, &source_metrics) {
        write_text(&artifact(&dir, METRICS), &m.to_table(&config.class_names))?;
        write_text(&artifact(&dir, METRICS_SOURCE), &s.to_table(&config.class_names))?;
    }
    clock.lap("eval");

    let summary = RunSummary {
        config: config.clone(),
        dims: [dims.0, dims.1, dims.2],
        stats: stats.clone(),
        metrics: metrics.clone(),
        source_metrics: source_metrics.clone(),
    };
    write_text(
        &artifact(&dir, SUMMARY_JSON),
        &(serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n"),
    )?;
    write_text(
        &artifact(&dir, SUMMARY_TXT),
        &summary_text(&summary, &input_name, &clock.lines),
    )?;

    Ok(PipelineOutcome {
        run_dir: dir,
        labels,
        source_labels,
        metrics,
        source_metrics,
        stats,
    })
}

/// Writes `trimap_class{c}` and `alpha_class{c}` for every foreground class.
pub fn write_class_artifacts(
    dir: &Path,
    dims: (usize, usize, usize),
    classes: usize,
    slices: &[SliceMatte],
) -> Result<()> {
    for class in 1..classes {
        let mut codes = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        let mut alpha = Vec::with_capacity(codes.capacity());
        for s in slices {
            let cm = &s.classes[class - 1];
            codes.extend(cm.trimap.labels().iter().map(|l| l.code()));
            alpha.extend_from_slice(cm.alpha.alpha());
        }
        kvol::write_labels(
            &LabelVolume::new(dims, 3, codes)?,
            &artifact(dir, &trimap_name(class)),
        )?;
        kvol::write_volume(&DenseTensor3::new(dims, alpha)?, &artifact(dir, &alpha_name(class)))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Human-readable summary. Lines starting with `timing` are the only ones
/// that vary between identical runs.
fn summary_text(summary: &RunSummary, input: &str, timings: &[(String, f64)]) -> String {
    let mut out = String::new();
    let cfg = serde_json::to_string(&summary.config).expect("config serialises");
    let s = &summary.stats;
    let _ = writeln!(out, "input\t{input}");
    let _ = writeln!(out, "config\t{cfg}");
    let _ = writeln!(out, "dims\t{}x{}x{}", summary.dims[0], summary.dims[1], summary.dims[2]);
    let _ = writeln!(out, "classes\t{}", s.classes);
    let _ = writeln!(out, "blocks\t{}", s.blocks);
    let _ = writeln!(out, "unknown_pixels\t{}", s.unknown_pixels);
    let _ = writeln!(out, "matte_solves\t{}", s.matte_solves);
    let _ = writeln!(out, "max_overshoot\t{}", s.max_overshoot);
    let names = &summary.config.class_names;
    for (tag, report) in [("combined", &summary.metrics), ("source_only", &summary.source_metrics)] {
        if let Some(r) = report {
            for line in r.to_table(names).lines() {
                let _ = writeln!(out, "{tag}\t{line}");
            }
        }
    }
    for (stage, secs) in timings {
        let _ = writeln!(out, "timing\t{stage}\t{secs:.3}s");
    }
    out
}

/// One cell of a block-depth × slice-rank sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub block_depth: usize,
    pub slice_rank: usize,
    /// Dice per foreground class, empty when the cell failed.
    pub class_dice: Vec<f64>,
    /// Mean dice over foreground classes, `None` when the cell failed.
    pub mean_dice: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub class_names: Vec<String>,
    /// Source path alone, per foreground class.
    pub baseline_class_dice: Vec<f64>,
    pub baseline_dice: f64,
    pub cells: Vec<SweepCell>,
    pub best: Option<(usize, usize)>,
}

impl SweepReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("block_depth\tslice_rank");
        for name in &self.class_names {
            let _ = write!(out, "\t{name}");
        }
        out.push_str("\taverage\tbest\n");
        let row = |out: &mut String, b: &str, r: &str, dice: &[f64], mean: Option<f64>, best: bool| {
            let _ = write!(out, "{b}\t{r}");
            match mean {
                Some(m) => {
                    for d in dice {
                        let _ = write!(out, "\t{d}");
                    }
                    let _ = write!(out, "\t{m}");
                }
                None => {
                    for _ in &self.class_names {
                        out.push_str("\tFAILED");
                    }
                    out.push_str("\tFAILED");
                }
            }
            out.push_str(if best { "\t*\n" } else { "\t\n" });
        };
        row(&mut out, "source_only", "-", &self.baseline_class_dice, Some(self.baseline_dice), false);
        for c in &self.cells {
            let best = self.best == Some((c.block_depth, c.slice_rank));
            row(
                &mut out,
                &c.block_depth.to_string(),
                &c.slice_rank.to_string(),
                &c.class_dice,
                c.mean_dice,
                best,
            );
        }
        out
    }
}

/// `(block_depth, slice_rank)` of the cell with the highest mean dice; ties
/// prefer the smaller rank, then the smaller block depth.
pub fn best_cell(cells: &[SweepCell]) -> Option<(usize, usize)> {
    cells
        .iter()
        .filter_map(|c| c.mean_dice.map(|d| (d, c.slice_rank, c.block_depth)))
        .fold(None::<(f64, usize, usize)>, |best, cur| match best {
            Some(b) if b.0 > cur.0 || (b.0 == cur.0 && (b.1, b.2) <= (cur.1, cur.2)) => Some(b),
            _ => Some(cur),
        })
        .map(|(_, r, b)| (b, r))
}

pub const SWEEP_BLOCKS: [usize; 3] = [5, 10, 15];
pub const SWEEP_RANKS: [usize; 4] = [2, 3, 4, 5];

fn foreground_dice(report: &MetricsReport) -> Vec<f64> {
    report.classes.iter().map(|m| m.dice).collect()
}

/// Runs the pipeline once per (block depth, slice rank) cell, each in its own
/// subdirectory `cell_b{B}_r{R}` of `config.output_dir`. A failing cell is
/// recorded and the grid continues. Writes `sweep.txt` and `sweep.json`.
pub fn run_sweep(config: &PipelineConfig, blocks: &[usize], ranks: &[usize]) -> Result<SweepReport> {
    if blocks.is_empty() || ranks.is_empty() {
        return Err(Error::usage("sweep needs at least one block depth and one rank"));
    }
    config.validate()?;
    let root = config.output_dir.clone();
    let mut cells = Vec::new();
    let mut baseline: Option<MetricsReport> = None;
    for &b in blocks {
        for &r in ranks {
            let mut cfg = config.clone();
            cfg.lowrank.block_depth = b;
            cfg.lowrank.slice_rank = r;
            cfg.output_dir = root.join(format!("cell_b{b}_r{r}"));
            let cell = match run_pipeline(&cfg) {
                Ok(out) => {
                    let (Some(m), Some(s)) = (out.metrics, out.source_metrics) else {
                        return Err(Error::usage("sweep requires ground-truth labels"));
                    };
                    baseline.get_or_insert(s);
                    SweepCell {
                        block_depth: b,
                        slice_rank: r,
                        class_dice: foreground_dice(&m),
                        mean_dice: Some(m.mean.dice),
                        error: None,
                    }
                }
                Err(e) => SweepCell {
                    block_depth: b,
                    slice_rank: r,
                    class_dice: Vec::new(),
                    mean_dice: None,
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    let baseline = baseline.ok_or_else(|| Error::Numeric("every sweep cell failed".into()))?;
    let classes = baseline.classes.len() + 1;
    let report = SweepReport {
        class_names: (1..classes).map(|c| config.class_name(c)).collect(),
        baseline_class_dice: foreground_dice(&baseline),
        baseline_dice: baseline.mean.dice,
        best: best_cell(&cells),
        cells,
    };
    write_text(&root.join("sweep.txt"), &report.to_table())?;
    write_text(
        &root.join("sweep.json"),
        &(serde_json::to_string_pretty(&report).expect("sweep serialises") + "\n"),
    )?;
    Ok(report)
}
