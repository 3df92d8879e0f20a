use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kmbdf::data::WindowPair;
use kmbdf::harness::train::{prepare_dataset, StopDecision};
use kmbdf::harness::{evaluate, run_sweep, timing_probe, train, EarlyStopping, ExperimentConfig, SweepGrid, TimingConfig};
use kmbdf::models::LinearForecaster;

fn small(extra: &[&str]) -> ExperimentConfig {
    let mut overrides: Vec<String> = ["data.length=700", "history=8", "horizon=4", "max_epochs=4", "batch_size=16"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    overrides.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::default().with_overrides(&overrides).unwrap()
}

#[test]
fn alpha_zero_matches_mse_objective() {
    let kmb = small(&["objective.alpha=0.0"]);
    let mse = small(&["objective.kind=\"mse\""]);
    // Trailing batches are only dropped when smaller than top_k.
    let windows = prepare_dataset(&kmb).unwrap().train.len();
    assert!(windows % 16 == 0 || windows % 16 >= kmb.objective.top_k);
    let a = train(&kmb).unwrap().report;
    let b = train(&mse).unwrap().report;
    assert_eq!(a.test, b.test);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn patience_one_stops_after_second_epoch() {
    let mut stopper = EarlyStopping::new(1);
    let curve = [1.0, 1.5, 2.0, 2.5];
    let mut seen = 0;
    for (i, v) in curve.iter().enumerate() {
        seen += 1;
        if stopper.observe(i + 1, *v) == StopDecision::Stop {
            break;
        }
    }
    assert_eq!(seen, 2);

    let report = train(&small(&["patience=1", "max_epochs=50"])).unwrap().report;
    let best = report.best_val_mse;
    for e in &report.epochs[report.best_epoch..] {
        assert!(e.val_mse >= best);
    }
    if report.stopped_early {
        assert_eq!(report.epochs.len(), report.best_epoch + 1);
    }
}

#[test]
fn evaluate_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = LinearForecaster::new(5, 3, 2, 1).unwrap();
    let windows: Vec<WindowPair> = (0..7)
        .map(|start| WindowPair {
            start,
            x: ndarray::Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0)),
            y: ndarray::Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0)),
        })
        .collect();
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0.0);
    for w in &windows {
        let pred = model.forward(&w.x).unwrap();
        for t in 0..3 {
            for d in 0..2 {
                let e = pred[[t, d]] - w.y[[t, d]];
                se += e * e;
                ae += e.abs();
                n += 1.0;
            }
        }
    }
    let m = evaluate(&model, &windows).unwrap();
    assert!((m.mse - se / n).abs() < 1e-12);
    assert!((m.mae - ae / n).abs() < 1e-12);

    let perfect: Vec<WindowPair> = windows
        .iter()
        .map(|w| WindowPair {
            y: model.forward(&w.x).unwrap(),
            ..w.clone()
        })
        .collect();
    let m = evaluate(&model, &perfect).unwrap();
    assert_eq!((m.mse, m.mae), (0.0, 0.0));
}

#[test]
fn sweep_of_one_and_k_sweep_round_trip() {
    let res = run_sweep(&small(&[]), &SweepGrid::new("objective.alpha", [0.5])).unwrap();
    assert_eq!(res.reports.len(), 1);

    let res = run_sweep(&small(&[]), &SweepGrid::new("objective.top_k", [1, 3, 5])).unwrap();
    let csv = res.to_csv();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let base: f64 = rows[0][2].parse().unwrap();
    for (row, parsed) in res.rows.iter().zip(&rows[1..]) {
        let mse: f64 = parsed[2].parse().unwrap();
        let delta: f64 = parsed[4].parse().unwrap();
        assert!(mse.is_finite());
        assert_eq!(mse, row.metrics.unwrap().mse);
        let recomputed = (mse - base) / base * 100.0;
        assert!((recomputed - delta).abs() <= 1e-9 * recomputed.abs().max(1e-12));
    }
}

#[test]
fn csv_source_trains() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let mut text = String::from("date,a,b\n");
    for i in 0..300 {
        let t = i as f64;
        text.push_str(&format!("2020-01-01 {i:03},{},{}\n", (t * 0.2).sin(), (t * 0.05).cos()));
    }
    std::fs::write(&path, text).unwrap();
    let cfg = small(&[]).with_overrides(&[
        format!("data={{ source = \"csv\", path = {:?}, date_column = true }}", path.display().to_string()),
    ]);
    let report = train(&cfg.unwrap()).unwrap().report;
    assert!(report.test.mse.is_finite());
    assert_eq!(report.config.history, 8);
}

fn probe(batch: usize) -> f64 {
    let cfg = TimingConfig {
        batch,
        history: 16,
        channels: 4,
        reps: 100,
        horizons: vec![16],
        ..TimingConfig::default()
    };
    timing_probe(&cfg).unwrap()[0].total_ms
}

#[test]
fn timing_scales_with_batch_and_is_stable() {
    let a = probe(32);
    let b = probe(32);
    assert!(a / b < 3.0 && b / a < 3.0, "{a} vs {b}");
    let doubled = probe(64);
    assert!(doubled >= 1.5 * a.min(b), "{doubled} vs {a}");
}
