use std::path::Path;
use std::process::{Command, Output};

use kneeseg::config::{InputSource, PipelineConfig};
use kneeseg::error::Error;
use kneeseg::kvol::{self, DType, Payload, VolumeHeader, VolumeKind};
use kneeseg::lowrank::DenseTensor3;
use kneeseg::pipeline::{self, best_cell, run_pipeline, run_sweep, SweepCell};
use kneeseg::segmenter::{make_phantom, stub_segment, PhantomSpec, StubParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kneeseg"))
}

fn run_cli(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn small_config(dir: &Path, seed: u64) -> PipelineConfig {
    PipelineConfig {
        input: InputSource::Phantom(PhantomSpec {
            dims: [24, 24, 20],
            rng_seed: seed,
            ..PhantomSpec::default()
        }),
        output_dir: dir.to_path_buf(),
        ..PipelineConfig::default()
    }
}

#[test]
fn f32_volume_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v");
    let header = VolumeHeader::new(VolumeKind::Volume, vec![4, 4, 4], DType::F32Le);
    let payload = Payload::F32((0..64).map(|i| (i as f32).sin() * 1e-3 + f32::EPSILON).collect());
    kvol::write_kvol(&header, &payload, &path).unwrap();
    let (h, p) = kvol::read_kvol(&path).unwrap();
    assert_eq!(h, header);
    match (p, payload) {
        (Payload::F32(a), Payload::F32(b)) => {
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()))
        }
        _ => panic!("dtype changed"),
    }
}

#[test]
fn payload_length_mismatch_names_expected_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v");
    let header = VolumeHeader::new(VolumeKind::Volume, vec![2, 2, 2], DType::F32Le);
    kvol::write_kvol(&header, &Payload::F32(vec![0.0; 8]), &path).unwrap();
    let mut bytes = std::fs::read(kvol::payload_path(&path)).unwrap();
    bytes.push(0);
    assert_eq!(bytes.len(), 33);
    std::fs::write(kvol::payload_path(&path), bytes).unwrap();
    match kvol::read_kvol(&path) {
        Err(Error::Format { field, message }) => {
            assert_eq!(field, "dims");
            assert!(message.contains("33") && message.contains("32"), "{message}");
        }
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn u8_probmap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p");
    let header = VolumeHeader::new(VolumeKind::Probmap, vec![3, 8, 8, 4], DType::U8);
    let err = kvol::write_kvol(&header, &Payload::U8(vec![0; 768]), &path).unwrap_err();
    assert!(matches!(err, Error::Format { ref field, .. } if field == "dtype"), "{err}");
}

#[test]
fn identical_undegraded_paths_reduce_to_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 4);
    cfg.source_stub = StubParams::default();
    cfg.lowrank_stub = StubParams::default();
    // Full slice rank makes both paths see the same volume.
    cfg.lowrank.slice_rank = cfg.lowrank.block_depth;
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.stats.unknown_pixels, 0);
    assert_eq!(out.stats.matte_solves, 0);
    assert_eq!(out.labels.labels(), out.source_labels.labels());
}

#[test]
fn partial_outputs_survive_a_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 5);
    cfg.matte.solver_max_iter = 1;
    let err = run_pipeline(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("`matte`") && msg.contains("probs_source"), "{msg}");
    assert_eq!(err.exit_code(), 3);
    for name in [pipeline::SOURCE, pipeline::LOWRANK, pipeline::PROBS_SOURCE, pipeline::PROBS_LOWRANK] {
        assert!(kvol::header_path(&dir.path().join(name)).exists(), "{name}");
    }
    assert!(!kvol::header_path(&dir.path().join(pipeline::LABELS)).exists());
}

#[test]
fn external_probmaps_replace_the_stub() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&small_config(&dir.path().join("a"), 6)).unwrap();
    let mut cfg = small_config(&dir.path().join("b"), 6);
    cfg.external_probs = Some(kneeseg::config::ExternalProbs {
        source: first.run_dir.join(pipeline::PROBS_SOURCE),
        lowrank: first.run_dir.join(pipeline::PROBS_LOWRANK),
    });
    // Stub settings must no longer matter.
    cfg.source_stub.erosion_depth = 7;
    let second = run_pipeline(&cfg).unwrap();
    assert_eq!(first.labels.labels(), second.labels.labels());
}

#[test]
fn full_rank_sweep_cells_equal_untruncated_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 7);
    let spec = match &cfg.input {
        InputSource::Phantom(s) => s.clone(),
        _ => unreachable!(),
    };
    let volume = pipeline::quantize_volume(&make_phantom(&spec).unwrap().0).unwrap();
    let ps = pipeline::quantize_probs(&stub_segment(&volume, &cfg.source_stub).unwrap()).unwrap();
    let pl = pipeline::quantize_probs(&stub_segment(&volume, &cfg.lowrank_stub).unwrap()).unwrap();
    let slices = pipeline::matte_volume(&volume, &ps, &pl, &cfg.matte).unwrap();
    let expected = pipeline::assemble_labels(volume.dims(), 3, &slices).unwrap();

    for b in [4, 5] {
        let report = run_sweep(
            &PipelineConfig {
                output_dir: dir.path().join(format!("b{b}")),
                ..cfg.clone()
            },
            &[b],
            &[b],
        )
        .unwrap();
        assert!(report.cells[0].mean_dice.is_some());
        let labels = kvol::read_labels(&dir.path().join(format!("b{b}/cell_b{b}_r{b}/labels")), Some(3)).unwrap();
        assert_eq!(labels.labels(), expected.labels(), "block {b}");
    }
}

#[test]
fn default_grid_has_twelve_cells_and_a_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(
        &small_config(dir.path(), 8),
        &pipeline::SWEEP_BLOCKS,
        &pipeline::SWEEP_RANKS,
    )
    .unwrap();
    assert_eq!(report.cells.len(), 12);
    let text = std::fs::read_to_string(dir.path().join("sweep.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + 12);
    assert!(lines[1].starts_with("source_only\t-\t"));
    assert_eq!(lines.iter().filter(|l| l.ends_with("\t*")).count(), 1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 12);
    let (b, r) = report.best.unwrap();
    let best = report.cells.iter().find(|c| (c.block_depth, c.slice_rank) == (b, r)).unwrap();
    assert!(report.cells.iter().all(|c| c.mean_dice <= best.mean_dice));
}

fn cell(b: usize, r: usize, dice: Option<f64>) -> SweepCell {
    SweepCell {
        block_depth: b,
        slice_rank: r,
        class_dice: Vec::new(),
        mean_dice: dice,
        error: None,
    }
}

#[test]
fn best_cell_breaks_ties_by_rank_then_block() {
    let cells = vec![
        cell(5, 3, Some(0.9)),
        cell(10, 2, Some(0.9)),
        cell(5, 2, Some(0.9)),
        cell(15, 5, Some(0.8)),
        cell(15, 2, None),
    ];
    assert_eq!(best_cell(&cells), Some((5, 2)));
    assert_eq!(best_cell(&[cell(5, 2, Some(0.5)), cell(10, 4, Some(0.6))]), Some((10, 4)));
    assert_eq!(best_cell(&[cell(5, 2, None)]), None);
}

#[test]
fn failed_cell_is_marked_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    // Rank 0 is invalid; the other cell still runs.
    let report = run_sweep(&small_config(dir.path(), 9), &[5], &[0, 2]).unwrap();
    assert!(report.cells[0].mean_dice.is_none());
    assert!(report.cells[1].mean_dice.is_some());
    let text = std::fs::read_to_string(dir.path().join("sweep.txt")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("5\t0\tFAILED")));
}

#[test]
fn cli_stages_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(&d.join("run"), 10);
    std::fs::write(d.join("cfg.json"), cfg.to_json()).unwrap();

    let out = run_cli(&["pipeline", "--config", "cfg.json"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.lines().any(|l| l.starts_with("combined\tmean\tdice\t")));
    assert!(summary.lines().any(|l| l.starts_with("timing\t")));

    let steps: [&[&str]; 6] = [
        &["phantom", "--config", "cfg.json", "--out", "src", "--truth", "truth"],
        &["lowrank", "--config", "cfg.json", "--input", "src", "--out", "low"],
        &["segment", "--config", "cfg.json", "--input", "src", "--out", "ps", "--path", "source"],
        &["segment", "--config", "cfg.json", "--input", "low", "--out", "pl", "--path", "lowrank"],
        &["trimap", "--source", "ps", "--lowrank", "pl", "--class", "2", "--out", "tri2"],
        &["matte", "--config", "cfg.json", "--volume", "src", "--source", "ps", "--lowrank", "pl", "--out", "m"],
    ];
    for args in steps {
        let out = run_cli(args, d);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let same = |a: &str, b: &str| {
        std::fs::read(kvol::payload_path(&d.join(a))).unwrap()
            == std::fs::read(kvol::payload_path(&d.join(b))).unwrap()
    };
    assert!(same("src", "run/source"));
    assert!(same("low", "run/lowrank"));
    assert!(same("ps", "run/probs_source"));
    assert!(same("pl", "run/probs_lowrank"));
    assert!(same("tri2", "run/trimap_class2"));
    assert!(same("m/alpha_class1", "run/alpha_class1"));
    assert!(same("m/labels", "run/labels"));
}

#[test]
fn eval_reproduces_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_pipeline(&small_config(&d.join("run"), 11)).unwrap();
    let out = run_cli(&["eval", "--pred", "run/labels", "--truth", "run/truth"], d);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        std::fs::read_to_string(d.join("run").join(pipeline::METRICS)).unwrap()
    );
    let out = run_cli(&["eval", "--pred", "run/labels_source", "--truth", "run/truth"], d);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        std::fs::read_to_string(d.join("run").join(pipeline::METRICS_SOURCE)).unwrap()
    );
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run_cli(&["pipeline", "--bogus"], d).status.code(), Some(1));
    std::fs::write(d.join("bad.json"), "{\"lowrank\": 3}").unwrap();
    assert_eq!(run_cli(&["print-config", "--config", "bad.json"], d).status.code(), Some(1));
    assert_eq!(run_cli(&["--help"], d).status.code(), Some(0));

    let v = DenseTensor3::zeros((2, 2, 2)).unwrap();
    kvol::write_volume(&v, &d.join("v")).unwrap();
    let mut bin = std::fs::read(kvol::payload_path(&d.join("v"))).unwrap();
    bin.push(0);
    std::fs::write(kvol::payload_path(&d.join("v")), bin).unwrap();
    let out = run_cli(&["lowrank", "--input", "v", "--out", "w"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dims"));

    let mut cfg = small_config(&d.join("run"), 12);
    cfg.matte.solver_max_iter = 1;
    std::fs::write(d.join("cfg.json"), cfg.to_json()).unwrap();
    let out = run_cli(&["pipeline", "--config", "cfg.json"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["print-config"], dir.path());
    let cfg = PipelineConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn thread_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), small_config(Path::new("run"), 13).to_json()).unwrap();
    for (threads, out) in [("1", "r1"), ("4", "r4")] {
        let o = run_cli(&["--threads", threads, "pipeline", "--config", "cfg.json", "--out", out], d);
        assert!(o.status.success());
    }
    assert_eq!(
        std::fs::read(kvol::payload_path(&d.join("r1/labels"))).unwrap(),
        std::fs::read(kvol::payload_path(&d.join("r4/labels"))).unwrap()
    );
    assert_eq!(
        std::fs::read(d.join("r1/metrics.tsv")).unwrap(),
        std::fs::read(d.join("r4/metrics.tsv")).unwrap()
    );
}
