//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscp_core::conformal::{rolling_calibrate, uncertainty_threshold, ThresholdMode};
use tscp_core::datasets::{synth_seasonal, DatasetSpec};
use tscp_core::domain::{ConformityScores, MiscoverageRate};
use tscp_core::forecasters::Naive;
use tscp_core::harness::{run_experiment_detailed, ExperimentConfig, ExperimentRun, ResultRow};
use tscp_core::metrics::{mase, msiw, EvaluationRecord};

const ECHO: &str = env!("CARGO_BIN_EXE_echo-adapter");

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Smallest score s with #{scores <= s} >= k, or the maximum when k > n.
fn brute_force_quantile(scores: &[f64], alpha_percent: u64) -> f64 {
    let n = scores.len() as u64;
    let k = ((n + 1) * (100 - alpha_percent)).div_ceil(100);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if k > n {
        return max;
    }
    let mut best = f64::INFINITY;
    for &s in scores {
        let count = scores.iter().filter(|&&v| v <= s).count() as u64;
        if count >= k && s < best {
            best = s;
        }
    }
    best
}

fn quantile_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        // Quarter steps on a small range force many ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..24) as f64 / 4.0).collect();
        let set = ConformityScores::from_values(scores.clone()).map_err(|e| e.to_string())?;
        for pct in [5u64, 10, 20] {
            let alpha = MiscoverageRate::new(pct as f64 / 100.0).map_err(|e| e.to_string())?;
            let got = uncertainty_threshold(&set, alpha).map_err(|e| e.to_string())?.q_hat;
            let want = brute_force_quantile(&scores, pct);
            ensure(got.to_bits() == want.to_bits(), || {
                format!("n={n} alpha={pct}%: got {got}, oracle {want}, scores {scores:?}")
            })?;
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} threshold/oracle pairs equal in {elapsed:.2?}"))
}

fn run(toml: &str) -> Result<ExperimentRun, String> {
    let config = ExperimentConfig::from_toml(toml).map_err(|e| e.to_string())?;
    run_experiment_detailed(&config).map_err(|e| e.to_string())
}

fn exchangeable_coverage(runs: &mut Vec<ExperimentRun>) -> Outcome {
    let started = Instant::now();
    let out = run(
        r#"
alpha = 0.1
seed = 7

[dataset]
name = "iid"
frequency = "hourly"
expected_series = 500
expected_length = 232
source = { kind = "synthetic", generator = "iid", mean = 5.0, sigma = 1.0 }

[[scenarios]]
kind = "per_series"
horizons = ["S"]
steps = [8]

[[estimators]]
name = "Naive"
kind = "naive"
split = { mode = "context", context_length = 64 }
"#,
    )?;
    let elapsed = started.elapsed();
    let row = out.rows[0].clone();
    let mcr = row.mcr.ok_or("no MCR")?;
    runs.push(out);
    ensure(row.n_units == 500 && row.failures == 0, || format!("{row:?}"))?;
    ensure((0.87..=0.94).contains(&mcr), || format!("MCR {mcr:.4} outside [0.87, 0.94]"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("MCR {mcr:.4} over 500 series in {elapsed:.2?}"))
}

fn rolling_bookkeeping() -> Outcome {
    let naive = Naive::new("naive");
    let mut seen = Vec::new();
    for (n, horizons, expected) in [(8760usize, &[24usize, 72, 168][..], 8248usize), (2232, &[24, 72, 168], 1720)] {
        let series = synth_seasonal(n, 24, 5.0, 1.0, n as u64);
        for &h in horizons {
            let scores = rolling_calibrate(&series, &naive, 512, h).map_err(|e| e.to_string())?;
            ensure(scores.len() == expected, || format!("N={n} H={h}: {} scores", scores.len()))?;
            seen.push(format!("N={n},H={h}:{}", scores.len()));
        }
    }
    Ok(seen.join(" "))
}

fn dataset_block(name: &str) -> String {
    let spec = DatasetSpec::known(name).expect("known dataset");
    format!(
        "[dataset]\nname = \"{name}\"\nfrequency = \"{}\"\nexpected_series = {}\nexpected_length = {}\nstrict = true\nsource = {{ kind = \"synthetic\", generator = \"seasonal\", mean = 100.0, sigma = 2.0, amplitude = 10.0 }}\n",
        format!("{:?}", spec.frequency).to_lowercase(),
        spec.expected_series,
        spec.expected_length
    )
}

fn scenario_block(name: &str) -> String {
    if name == "ercot" {
        "[[scenarios]]\nkind = \"windows\"\nwindow_points = 8760\n\n[[scenarios]]\nkind = \"windows\"\nwindow_points = 2232\n".into()
    } else {
        "[[scenarios]]\nkind = \"per_series\"\n".into()
    }
}

const DATASETS: [&str; 4] = ["ercot", "nn5_daily", "nn5_weekly", "m3_monthly"];

fn scaling_identities(runs: &mut Vec<ExperimentRun>) -> Outcome {
    let mut cells = 0;
    for name in DATASETS {
        for mode in ["local", "global"] {
            let out = run(&format!(
                "alpha = 0.1\nthreshold_mode = \"{mode}\"\n\n{}\n{}\n[[estimators]]\nname = \"Naive\"\nkind = \"naive\"\n",
                dataset_block(name),
                scenario_block(name)
            ))?;
            for r in &out.rows {
                let (m, w) = (r.mase.ok_or("missing MASE")?, r.msiw.ok_or("missing MSIW")?);
                ensure((m - 1.0).abs() <= 1e-12 && (w - 1.0).abs() <= 1e-12, || {
                    format!("{} {} {mode}: MASE {m} MSIW {w}", r.dataset, r.horizon_label)
                })?;
                ensure(r.failures == 0, || format!("{r:?}"))?;
                cells += 1;
            }
            runs.push(out);
        }
    }
    Ok(format!("{cells} naive cells at MASE = MSIW = 1"))
}

fn interval_geometry(runs: &[ExperimentRun]) -> Outcome {
    let mut units = 0;
    let mut worst: f64 = 0.0;
    for run in runs {
        for u in &run.units {
            let q = u.threshold.q_hat;
            let centers = u.interval.center().point();
            let scale = centers.iter().fold(0.0f64, |a, c| a.max(c.abs())) + q;
            // Each bound is rounded once; the mean adds one rounding per step.
            let (upper, lower) = (u.interval.upper(), u.interval.lower());
            for k in 0..centers.len() {
                let err = ((upper[k] - lower[k]) - 2.0 * q).abs();
                ensure(err <= 2.0 * f64::EPSILON * scale, || {
                    format!("{} {} step {k}: width {} vs 2q {}", u.dataset, u.unit_id, upper[k] - lower[k], 2.0 * q)
                })?;
            }
            let err = (u.record.iw - 2.0 * q).abs();
            let budget = (centers.len() as f64 + 2.0) * f64::EPSILON * scale;
            ensure(err <= budget, || {
                format!("{} {}: iw {} vs 2q {}", u.dataset, u.unit_id, u.record.iw, 2.0 * q)
            })?;
            worst = worst.max(err / scale.max(f64::MIN_POSITIVE));
            for (k, &c) in centers.iter().enumerate() {
                ensure(u.interval.contains(k, c), || format!("{} step {k} excludes its center", u.unit_id))?;
            }
            units += 1;
        }
    }
    ensure(units > 0, || "no units".into())?;
    Ok(format!("{units} intervals, worst relative width error {worst:.1e}"))
}

fn bitwise_equal(a: &[ResultRow], b: &[ResultRow]) -> Result<(), String> {
    ensure(a.len() == b.len(), || format!("{} vs {} rows", a.len(), b.len()))?;
    for (x, y) in a.iter().zip(b) {
        let bits = |r: &ResultRow| r.metrics().map(|m| m.map(f64::to_bits));
        ensure(x == y && bits(x) == bits(y), || format!("{x:?} != {y:?}"))?;
    }
    Ok(())
}

fn echo_equivalence(runs: &mut Vec<ExperimentRun>) -> Outcome {
    let mut rows = 0;
    for name in ["ercot", "nn5_weekly"] {
        let scenarios = if name == "ercot" {
            "[[scenarios]]\nkind = \"windows\"\nwindow_points = 2232\nn_windows = 4\n".to_string()
        } else {
            scenario_block(name)
        };
        let base = format!("alpha = 0.1\n\n{}\n{scenarios}\n", dataset_block(name));
        let builtin = run(&format!("{base}[[estimators]]\nname = \"Model\"\nkind = \"naive\"\n"))?;
        let bridged = run(&format!(
            "{base}[[estimators]]\nname = \"Model\"\nkind = \"external\"\nendpoint = \"{ECHO}\"\nconnections = 4\nsplit = {{ mode = \"context\", context_length = 1 }}\n"
        ))?;
        ensure(bridged.failures.is_empty(), || format!("{:?}", bridged.failures.first()))?;
        bitwise_equal(&builtin.rows, &bridged.rows)?;
        ensure(builtin.units == bridged.units, || format!("{name}: unit outcomes differ"))?;
        rows += builtin.rows.len();
        runs.push(bridged);
    }
    Ok(format!("{rows} rows bitwise identical through the bridge"))
}

fn local_global_collapse(runs: &mut Vec<ExperimentRun>) -> Outcome {
    let body = "[[scenarios]]\nkind = \"windows\"\nwindow_points = 2232\nn_windows = 5\n\n[[estimators]]\nname = \"Naive\"\nkind = \"naive\"\n\n[[estimators]]\nname = \"SeasonalNaive\"\nkind = \"seasonal_naive\"\n\n[[estimators]]\nname = \"StatEnsembleLight\"\nkind = \"stat_ensemble_light\"\n";
    let make = |mode: &str| {
        run(&format!(
            "alpha = 0.1\nthreshold_mode = \"{mode}\"\n\n{}\n{body}",
            dataset_block("ercot")
        ))
    };
    let local = make("local")?;
    let global = make("global")?;
    ensure(global.units.len() == local.units.len(), || "unit counts differ".into())?;
    for (l, g) in local.units.iter().zip(&global.units) {
        ensure(l.threshold == g.threshold && l.threshold.q_hat.to_bits() == g.threshold.q_hat.to_bits(), || {
            format!("{} {}: {:?} vs {:?}", l.estimator, l.unit_id, l.threshold, g.threshold)
        })?;
    }
    let strip = |rows: &[ResultRow]| {
        rows.iter()
            .map(|r| ResultRow { threshold_mode: ThresholdMode::Local, ..r.clone() })
            .collect::<Vec<_>>()
    };
    bitwise_equal(&strip(&local.rows), &strip(&global.rows))?;
    let n = local.units.len();
    runs.push(local);
    runs.push(global);
    Ok(format!("{n} units share q̂ and metrics across modes"))
}

fn aggregation_asymmetry() -> Outcome {
    let rec = |id: &str, iw: f64, mae: f64| EvaluationRecord {
        unit_id: id.into(),
        cr: 1.0,
        iw,
        mae,
    };
    let model = [rec("a", 1.0, 1.0), rec("b", 3.0, 30.0)];
    let naive = [rec("a", 2.0, 2.0), rec("b", 2.0, 20.0)];
    let m = mase(&model, &naive).map_err(|e| e.to_string())?;
    let w = msiw(&model, &naive).map_err(|e| e.to_string())?;
    ensure(m == 31.0 / 22.0, || format!("MASE {m}"))?;
    ensure(w == 1.0, || format!("MSIW {w}"))?;
    Ok(format!("MASE {m} = 31/22, MSIW {w}"))
}

fn report(name: &str, check: impl FnOnce() -> Outcome, failed: &mut usize) {
    let started = Instant::now();
    let outcome = check();
    let took = started.elapsed();
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
        Err(why) => {
            *failed += 1;
            println!("FAIL {name}: {why} [{took:.1?}]");
        }
    }
}

fn main() {
    let mut runs = Vec::new();
    let mut failed = 0;
    report("quantile-oracle equivalence", quantile_oracle, &mut failed);
    report("exchangeable coverage", || exchangeable_coverage(&mut runs), &mut failed);
    report("rolling-window bookkeeping", rolling_bookkeeping, &mut failed);
    report("naive scaling identities", || scaling_identities(&mut runs), &mut failed);
    report("echo-adapter equivalence", || echo_equivalence(&mut runs), &mut failed);
    report("local/global collapse", || local_global_collapse(&mut runs), &mut failed);
    report("interval geometry", || interval_geometry(&runs), &mut failed);
    report("MASE/MSIW aggregation asymmetry", aggregation_asymmetry, &mut failed);
    println!("{} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
