mod common;

use std::path::Path;

use common::{read_csv, tiny_config, write_dataset};
use snncl::config::ExperimentConfig;
use snncl::report::{emit_report, MetricsFile, ACCURACY_MATRIX, LEARNING_CURVES, METRICS, SIMILARITY, WEIGHT_CHANGE};
use snncl::runner::{collect_records, run_dir, run_experiment, sweep, Datasets, RunOptions, RunRecord};
use snncl_core::experiment::Mode;

fn quiet() -> RunOptions {
    RunOptions { keep_all_checkpoints: false, stop_after: None, verbose: false }
}

fn run(cfg: &ExperimentConfig, opts: RunOptions) -> RunRecord {
    let data = Datasets::load(&cfg.data_paths()).unwrap();
    run_experiment(cfg, &data, opts).unwrap()
}

fn matrix_bits(r: &RunRecord) -> Vec<Option<u64>> {
    let m = &r.progress.matrix;
    let n = m.tasks();
    let mut out: Vec<Option<u64>> = (0..n).map(|t| m.baseline(t).map(f64::to_bits)).collect();
    for k in 0..n {
        for t in 0..n {
            out.push(m.get(t, k).map(f64::to_bits));
        }
    }
    out
}

#[test]
fn same_config_and_seed_give_identical_matrices() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let a = run(&tiny_config(&dir.path().join("data"), &dir.path().join("a")), quiet());
    let b = run(&tiny_config(&dir.path().join("data"), &dir.path().join("b")), quiet());
    assert!(a.is_complete());
    assert_eq!(matrix_bits(&a), matrix_bits(&b));
    assert_eq!(a.progress, b.progress);

    let mut other = tiny_config(&dir.path().join("data"), &dir.path().join("c"));
    other.seeds = vec![4];
    assert_ne!(matrix_bits(&a), matrix_bits(&run(&other, quiet())));
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let whole_cfg = tiny_config(&dir.path().join("data"), &dir.path().join("whole"));
    let whole = run(&whole_cfg, quiet());

    let cfg = tiny_config(&dir.path().join("data"), &dir.path().join("parts"));
    let mut stopped = None;
    for stop in [1, 3] {
        let partial = run(&cfg, RunOptions { stop_after: Some(stop), ..quiet() });
        assert_eq!(partial.progress.tasks_done, stop);
        assert!(!partial.is_complete());
        stopped = Some(partial);
    }
    assert_eq!(stopped.unwrap().progress.matrix.completed_columns(), 3);
    let resumed = run(&cfg, quiet());
    assert!(resumed.is_complete());
    assert_eq!(matrix_bits(&resumed), matrix_bits(&whole));
    assert_eq!(resumed.progress, whole.progress);
    assert_eq!(resumed.metrics, whole.metrics);

    let last = |c: &ExperimentConfig, r: &RunRecord| std::fs::read(run_dir(c).join(r.checkpoints.last().unwrap())).unwrap();
    assert_eq!(last(&cfg, &resumed), last(&whole_cfg, &whole));
    assert_eq!(resumed.checkpoints, vec!["after_task_05.ckpt".to_string()]);
}

#[test]
fn keeping_checkpoints_keeps_one_per_task() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let cfg = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    let r = run(&cfg, RunOptions { keep_all_checkpoints: true, ..quiet() });
    assert_eq!(r.checkpoints.len(), 6);
    for c in &r.checkpoints {
        assert!(run_dir(&cfg).join(c).exists(), "{c}");
    }
    let reloaded = RunRecord::load(&run_dir(&cfg)).unwrap();
    assert_eq!(reloaded, r);
}

/// With decay and metaplastic growth switched off by hand, the full model
/// must behave exactly like the baseline variant.
#[test]
fn tacos_without_its_mechanisms_is_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let mut base = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    base.mode = Mode::Baseline;
    let mut stripped = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    stripped.plasticity.l_decay = 0.0;
    stripped.plasticity.delta_m = 0.0;
    stripped.plasticity.delta_m_output = 0.0;
    assert_ne!(base.hash(), stripped.hash());
    let a = run(&base, quiet());
    let b = run(&stripped, quiet());
    assert_eq!(matrix_bits(&a), matrix_bits(&b));
    assert_eq!(a.progress, b.progress);

    let full = run(&tiny_config(&dir.path().join("data"), &dir.path().join("full")), quiet());
    assert_ne!(full.progress.weight_change, a.progress.weight_change);
}

fn parse(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        Some(s.parse().unwrap())
    }
}

/// Recomputes every metric in metrics.json from accuracy_matrix.csv with
/// plain arithmetic and requires bit equality.
#[test]
fn report_metrics_recompute_from_the_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let mut cfg = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    cfg.seeds = vec![3, 5];
    let mut base = cfg.clone();
    base.mode = Mode::Baseline;
    let outcome = sweep(&[cfg, base], quiet()).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.records.len(), 4);
    let out = dir.path().join("report");
    emit_report(&outcome.records, &out).unwrap();

    let metrics: MetricsFile = serde_json::from_str(&std::fs::read_to_string(out.join(METRICS)).unwrap()).unwrap();
    let (header, rows) = read_csv(&out.join(ACCURACY_MATRIX));
    assert_eq!(header[..7], ["config_hash", "name", "mode", "m_max", "seed", "task", "untrained"]);
    assert_eq!(header.len(), 12);
    assert_eq!(rows.len(), 20);
    assert_eq!(metrics.runs.len(), 4);
    for run in &metrics.runs {
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == run.config_hash).collect();
        assert_eq!(mine.len(), 5);
        let r = |t: usize, k: usize| parse(&mine[t][7 + k]).unwrap();
        let b = |t: usize| parse(&mine[t][6]).unwrap();
        let n = 5;
        let ma = (0..n).map(|t| r(t, n - 1)).sum::<f64>() / n as f64;
        let bwt = (0..n - 1).map(|t| r(t, n - 1) - r(t, t)).sum::<f64>() / (n - 1) as f64;
        let printed = (0..n - 1).map(|t| r(t, n - 1)).sum::<f64>() / (n - 1) as f64;
        let fwt: Vec<f64> = (1..n).map(|k| (k..n).map(|t| r(t, k - 1) - b(t)).sum::<f64>() / (n - k) as f64).collect();
        let m = &run.metrics;
        assert_eq!(m.mean_accuracy.to_bits(), ma.to_bits());
        assert_eq!(m.backward_transfer.unwrap().to_bits(), bwt.to_bits());
        assert_eq!(m.backward_transfer_as_printed.unwrap().to_bits(), printed.to_bits());
        assert_eq!(m.forward_transfer_by_task, fwt);
        assert_eq!(m.forward_transfer.unwrap().to_bits(), (fwt.iter().sum::<f64>() / 4.0).to_bits());
        assert_eq!(m.final_task_accuracy.to_bits(), r(n - 1, n - 1).to_bits());
        let mo = match run.mode {
            Mode::Baseline => 1.0,
            _ => {
                let (syn, neurons) = (36.0 * 16.0 + 16.0 * 2.0, 36.0 + 16.0 + 2.0);
                (2.5 * syn + neurons) / syn
            }
        };
        assert_eq!(m.memory_overhead, mo);
    }
    assert_eq!(metrics.aggregate.len(), 2);
    for row in &metrics.aggregate {
        assert_eq!(row.runs, 2);
        let vals: Vec<f64> =
            metrics.runs.iter().filter(|r| r.mode == row.mode).map(|r| r.metrics.mean_accuracy).collect();
        assert_eq!(row.mean_accuracy.mean, (vals[0] + vals[1]) / 2.0);
    }
}

#[test]
fn report_files_have_expected_headers_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let cfg = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    let rec = run(&cfg, quiet());
    let out = dir.path().join("report");
    let written = emit_report(std::slice::from_ref(&rec), &out).unwrap();
    assert_eq!(written.len(), 5);

    let expect = |name: &str, tail: &[&str], rows: usize| {
        let (header, body) = read_csv(&out.join(name));
        let mut want = vec!["config_hash", "name", "mode", "m_max", "seed"];
        want.extend_from_slice(tail);
        assert_eq!(header, want, "{name}");
        assert_eq!(body.len(), rows, "{name}");
        for row in &body {
            assert_eq!(row.len(), header.len(), "{name}");
            assert_eq!(row[0], rec.config_hash);
        }
    };
    expect(LEARNING_CURVES, &["task", "after_task", "accuracy"], 5 * 6);
    expect(WEIGHT_CHANGE, &["task", "block", "mean_abs_change"], 5 * 2);
    expect(SIMILARITY, &["class", "learned_after_task", "final_task", "cosine"], 10);

    let (_, sim) = read_csv(&out.join(SIMILARITY));
    let own: Vec<f64> = sim.iter().filter(|r| r[6] == "5").filter_map(|r| parse(&r[8])).collect();
    assert!(!own.is_empty());
    for c in own {
        assert!((c - 1.0).abs() < 1e-12, "a class compared with itself: {c}");
    }
    assert!(sim.iter().filter_map(|r| parse(&r[8])).all(|c| (-1.0..=1.0).contains(&c)));
}

#[test]
fn report_refuses_bad_inputs_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let cfg = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    assert!(emit_report(&[], &dir.path().join("r0")).is_err());
    assert!(!dir.path().join("r0").exists());

    let partial = run(&cfg, RunOptions { stop_after: Some(2), ..quiet() });
    let err = emit_report(&[partial], &dir.path().join("r1")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(!dir.path().join("r1").exists());

    let done = run(&cfg, quiet());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    assert_eq!(emit_report(&[done], &blocker.join("sub")).unwrap_err().exit_code(), 4);
}

#[test]
fn records_are_collected_from_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"));
    let mut cfg = tiny_config(&dir.path().join("data"), &dir.path().join("runs"));
    cfg.m_max_sweep = vec![5.0, 25.0];
    let outcome = sweep(std::slice::from_ref(&cfg), quiet()).unwrap();
    assert_eq!(outcome.records.len(), 2);
    assert_eq!(outcome.aggregate.len(), 2);
    let mut found = collect_records(&dir.path().join("runs")).unwrap();
    found.sort_by(|a, b| a.m_max.total_cmp(&b.m_max));
    assert_eq!(found.iter().map(|r| r.m_max).collect::<Vec<_>>(), [5.0, 25.0]);
    assert!(found.iter().all(|r| r.is_complete()));
    let one = collect_records(Path::new(&run_dir(&cfg.expand()[0]))).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("nowhere"), &dir.path().join("runs"));
    let outcome = sweep(&[cfg], quiet()).unwrap();
    assert!(outcome.records.is_empty());
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].1.exit_code(), 3);
}
