//! End-to-end acceptance checks. Run with
//! `cargo test -p kmbdf --test acceptance -- --nocapture` to see the
//! per-criterion report.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kmbdf::balancing::{hinge_slack, kmb_df_loss_and_grad, mmd_squared, AnchorMode, BalanceConfig, HingeMode};
use kmbdf::gradcheck::{run_suite, RandomBatch};
use kmbdf::harness::sweep::ALPHA_KEY;
use kmbdf::harness::train::prepare_dataset;
use kmbdf::harness::{run_sweep, timing_probe, train, train_on, ExperimentConfig, SweepGrid, TimingConfig};
use kmbdf::kernels::{eval_kernel, gram_matrix, median_bandwidth, JointSequence, KernelFamily, KernelSpec};
use kmbdf::objectives::mse_loss;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    let family = KernelFamily::ALL[rng.random_range(0..KernelFamily::ALL.len())];
    match family {
        KernelFamily::Exponential => KernelSpec::exponential(rng.random_range(0.5..2.0)),
        KernelFamily::Gaussian => KernelSpec::gaussian(rng.random_range(0.5..2.0)),
        f => KernelSpec::new(f),
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> RandomBatch {
    let (h, t, d) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=2));
    RandomBatch::sample(rng, n, h, t, d)
}

fn random_joints(rng: &mut ChaCha8Rng, n: usize, h: usize, t: usize, d: usize, shift: f64, spread: f64) -> Vec<JointSequence> {
    (0..n)
        .map(|_| {
            let v = Array2::from_shape_fn((h + t, d), |_| shift + spread * rng.random_range(-1.0..1.0));
            JointSequence::new(v, h).unwrap()
        })
        .collect()
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let entries = run_suite(11, 20).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let all = entries.iter().all(|e| e.passes(1e-5) && e.instances >= 20);
    let failing: Vec<_> = entries.iter().filter(|e| !e.passes(1e-5)).map(|e| e.name.clone()).collect();
    outcome(
        all && secs < 30.0,
        format!(
            "{} groups x >=20 instances, worst rel err {worst:.2e}, {secs:.1}s{}",
            entries.len(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )
}

fn balance_at_optimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut max_delta, mut max_total, mut max_grad) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let b = random_batch(&mut rng, n);
        let mode = if rng.random_bool(0.5) { AnchorMode::Forecast } else { AnchorMode::Real };
        let cfg = BalanceConfig::new(
            rng.random_range(0.0..=1.0),
            rng.random_range(1..=n),
            [0.0, 0.0005, 0.001, 0.01, 0.05][rng.random_range(0..5)],
            random_kernel(&mut rng),
        )
        .with_modes(mode, HingeMode::Canonical);
        let (total, diag, grads) = kmb_df_loss_and_grad(&cfg, &b.histories, &b.labels, &b.labels).unwrap();
        max_delta = diag.deltas.iter().fold(max_delta, |m, d| m.max(d.abs()));
        max_total = max_total.max(total.abs());
        max_grad = grads.iter().flat_map(|g| g.iter()).fold(max_grad, |m, v| m.max(v.abs()));
    }
    outcome(
        max_delta < 1e-10 && max_total == 0.0 && max_grad == 0.0,
        format!("50 batches: max |delta| {max_delta:.1e}, max |total| {max_total:.1e}, max |grad| {max_grad:.1e}"),
    )
}

fn kernel_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut symmetric = true;
    for _ in 0..100 {
        let pts = random_joints(&mut rng, 2, 3, 2, 2, 0.0, 2.0);
        for family in KernelFamily::ALL {
            let spec = KernelSpec::new(family).with_sigma(rng.random_range(0.3..3.0));
            symmetric &= eval_kernel(&spec, &pts[0], &pts[1]).unwrap() == eval_kernel(&spec, &pts[1], &pts[0]).unwrap();
        }
    }

    let pts = random_joints(&mut rng, 20, 3, 2, 2, 0.0, 2.0);
    let mut min_eig = f64::INFINITY;
    for spec in [KernelSpec::exponential(1.0), KernelSpec::gaussian(1.0)] {
        let g = gram_matrix(&spec, &pts, &pts).unwrap();
        let m = DMatrix::from_fn(20, 20, |i, j| g[[i, j]]);
        min_eig = min_eig.min(SymmetricEigen::new(m).eigenvalues.min());
    }

    let mut decays = true;
    let mut unit_diag = true;
    for _ in 0..100 {
        let pts = random_joints(&mut rng, 2, 3, 2, 2, 0.0, 1.0);
        let (a, b) = (&pts[0], &pts[1]);
        let t = rng.random_range(1.1..3.0);
        let far = JointSequence::new(a.values() + &((b.values() - a.values()) * t), 3).unwrap();
        for spec in [KernelSpec::exponential(1.0), KernelSpec::gaussian(1.0)] {
            decays &= eval_kernel(&spec, a, &far).unwrap() < eval_kernel(&spec, a, b).unwrap();
            unit_diag &= eval_kernel(&spec, a, a).unwrap() == 1.0;
        }
    }
    outcome(
        symmetric && min_eig >= -1e-8 && decays && unit_diag,
        format!("symmetric {symmetric}, min Gram eigenvalue {min_eig:.2e}, monotone decay {decays}, K(a,a)=1 {unit_diag}"),
    )
}

fn mmd_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_joints(&mut rng, 30, 4, 2, 2, 0.0, 1.0);
    let sigma = median_bandwidth(KernelFamily::Exponential, &p).unwrap();
    let identical = mmd_squared(&KernelSpec::exponential(sigma), &p, &p).unwrap().value;

    let a = random_joints(&mut rng, 20, 4, 2, 2, 0.0, 0.1);
    let b = random_joints(&mut rng, 20, 4, 2, 2, 5.0, 0.1);
    let pooled: Vec<_> = a.iter().chain(&b).cloned().collect();
    let sigma = median_bandwidth(KernelFamily::Exponential, &pooled).unwrap();
    let separated = mmd_squared(&KernelSpec::exponential(sigma), &a, &b).unwrap().value;

    let mut same = 0.0;
    for _ in 0..20 {
        let pool = random_joints(&mut rng, 100, 4, 2, 2, 0.0, 1.0);
        let sigma = median_bandwidth(KernelFamily::Exponential, &pool).unwrap();
        same += mmd_squared(&KernelSpec::exponential(sigma), &pool[..50], &pool[50..]).unwrap().value.abs();
    }
    same /= 20.0;
    outcome(
        identical.abs() <= 1e-12 && separated > 0.5 && same < 0.05,
        format!("identical {identical:.1e}, separated {separated:.3}, same-distribution mean |MMD2| {same:.4}"),
    )
}

fn directional() -> Outcome {
    let t0 = Instant::now();
    let (mut mse_wins, mut mmd_wins) = (0, 0);
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let cfg = ExperimentConfig::default().with_overrides(&[format!("seed={seed}")]).unwrap();
        assert_eq!((cfg.objective.alpha, cfg.objective.margin_c, cfg.objective.top_k), (0.3, 0.001, 3));
        let dataset = prepare_dataset(&cfg).unwrap();
        let kmb = train_on(&cfg, &dataset).unwrap().report;
        let base_cfg = cfg.with_overrides(&[format!("{ALPHA_KEY}=0.0")]).unwrap();
        let base = train_on(&base_cfg, &dataset).unwrap().report;
        mse_wins += usize::from(kmb.test.mse <= base.test.mse);
        mmd_wins += usize::from(kmb.test_mmd2 <= base.test_mmd2);
        rows.push(format!(
            "seed {seed}: mse {:.5} vs {:.5}, mmd2 {:.3e} vs {:.3e}",
            kmb.test.mse, base.test.mse, kmb.test_mmd2, base.test_mmd2
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    for r in &rows {
        println!("    {r}");
    }
    outcome(
        mse_wins >= 4 && mmd_wins >= 4 && secs < 600.0,
        format!("MSE wins {mse_wins}/5, MMD2 wins {mmd_wins}/5, {secs:.1}s"),
    )
}

fn sweeps() -> Outcome {
    let base = ExperimentConfig::default();
    let grids = [
        SweepGrid::new(ALPHA_KEY, [0.1, 0.3, 0.5, 0.7, 0.9]),
        SweepGrid::new("objective.margin_c", [0.0005, 0.001, 0.005, 0.01, 0.05]),
        SweepGrid::new("objective.top_k", [1, 2, 3, 4, 5]),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for grid in &grids {
        let res = run_sweep(&base, grid).unwrap();
        let csv = res.to_csv();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        ok &= header == ["param", "value", "mse", "mae", "delta_mse_pct", "delta_mae_pct", "error"];
        let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        ok &= records.len() == grid.values.len() + 1;
        let base_mse: f64 = records[0][2].parse().unwrap();
        let base_mae: f64 = records[0][3].parse().unwrap();
        for rec in &records[1..] {
            let nums: Vec<f64> = (2..6).map(|i| rec[i].parse::<f64>().unwrap_or(f64::NAN)).collect();
            ok &= nums.iter().all(|v| v.is_finite()) && rec[6].is_empty();
            let d_mse = (nums[0] - base_mse) / base_mse * 100.0;
            let d_mae = (nums[1] - base_mae) / base_mae * 100.0;
            ok &= (d_mse - nums[2]).abs() <= 1e-9 * d_mse.abs().max(1e-12);
            ok &= (d_mae - nums[3]).abs() <= 1e-9 * d_mae.abs().max(1e-12);
        }
        let best = res
            .rows
            .iter()
            .filter_map(|r| r.delta_mse_pct.map(|d| (r.value.clone(), d)))
            .fold((String::new(), f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        notes.push(format!("{}: best {}={} ({:+.3}%)", grid.param, grid.param, best.0, best.1));
    }
    outcome(ok, notes.join("; "))
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::default()
        .with_overrides(&["seed=7".into(), "max_epochs=5".into()])
        .unwrap();
    let a = train(&cfg).unwrap().report.to_deterministic_json().unwrap();
    let b = train(&cfg).unwrap().report.to_deterministic_json().unwrap();
    outcome(a == b, format!("{} bytes, identical {}", a.len(), a == b))
}

fn complexity() -> Outcome {
    let rows = timing_probe(&TimingConfig::default()).unwrap();
    let totals: Vec<f64> = rows.iter().map(|r| r.total_ms).collect();
    let increasing = totals.windows(2).all(|w| w[1] > w[0]);
    let ratio = totals[totals.len() - 1] / totals[0];
    let listing: Vec<String> = rows.iter().map(|r| format!("T={} {:.1}ms", r.horizon, r.total_ms)).collect();
    outcome(
        increasing && ratio <= 25.0,
        format!("{}; ratio {ratio:.1}x", listing.join(", ")),
    )
}

fn cross_module() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let b = random_batch(&mut rng, n);
        let mode = if rng.random_bool(0.5) { AnchorMode::Forecast } else { AnchorMode::Real };
        let hinge = if rng.random_bool(0.5) { HingeMode::Canonical } else { HingeMode::Shifted };
        let cfg = BalanceConfig::new(0.0, rng.random_range(1..=n), rng.random_range(0.0..0.1), random_kernel(&mut rng))
            .with_modes(mode, hinge);
        let (kmb, _, _) = kmb_df_loss_and_grad(&cfg, &b.histories, &b.labels, &b.forecasts).unwrap();
        let mse = mse_loss(&b.labels, &b.forecasts).unwrap().sum;
        worst = worst.max((kmb - mse).abs() / mse.abs().max(f64::MIN_POSITIVE));
    }
    let mut shifted_exact = true;
    for _ in 0..1000 {
        let delta = rng.random_range(-2.0..2.0);
        let c = rng.random_range(0.0..1.0);
        shifted_exact &= hinge_slack(delta, c, HingeMode::Shifted) == (delta + c).abs();
    }
    outcome(
        worst <= 1e-12 && shifted_exact,
        format!("alpha=0 vs MSE worst rel diff {worst:.1e} over 100 batches; shifted hinge == |delta+C| on 1000 pairs: {shifted_exact}"),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 gradient suite", gradient_suite),
        ("2 balance at optimum", balance_at_optimum),
        ("3 kernel suite", kernel_suite),
        ("4 MMD suite", mmd_suite),
        ("5 directional AR(1)", directional),
        ("6 sweeps", sweeps),
        ("7 determinism", determinism),
        ("8 complexity trend", complexity),
        ("9 cross-module equality", cross_module),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let t0 = Instant::now();
        let o = check();
        println!(
            "[{}] criterion {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
