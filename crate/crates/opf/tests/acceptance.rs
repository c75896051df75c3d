//! Acceptance checks, one line per criterion.
//!
//! Runs the `opf` binary end to end where a criterion is about the command
//! line, and the library directly for the oracle comparisons. Exits non-zero
//! only when a criterion fails; criteria whose data cannot be found print
//! `SKIP` with the reason.
//!
//! Data locations:
//! - `OPF_SMOKING_CSV`, else `<workspace>/data/smoking.csv`: the Proposition 99
//!   panel with columns `state,year,cigsale,retprice` (extra columns ignored).
//! - `OPF_IHDP_DIR`: a directory of `ihdp_npci_<i>.csv` replicates
//!   (treatment, y_factual, y_cfactual, mu0, mu1, x1..x25; no header).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use opf_core::cohort::{build_cohorts, CohortParams, CrossSection};
use opf_core::config::{Hyperparameters, RefuteParams};
use opf_core::dataset::{DataShape, Period, RuleFacts, TreatmentRow, TreatmentTable};
use opf_core::decide::{stage_one, stage_two, summarize};
use opf_core::dml::{estimate_dml, DmlSpec, Fitting};
use opf_core::estimate::{weighted_combine, EffectEstimate, EstimatorId};
use opf_core::gsc::{fit_ife, select_rank};
use opf_core::refute::refutation_suite;
use opf_core::synth::{generate, CrossSectionalSpec, SynthSpec};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

/// Collects sub-check results into one verdict.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(format!("{}{what}", if ok { "" } else { "!" }));
    }

    fn outcome(self) -> Outcome {
        let detail = self.notes.join("; ");
        if self.failed.is_empty() {
            Outcome::Pass(detail)
        } else {
            Outcome::Fail(detail)
        }
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn opf(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_opf"))
        .args(args)
        .env("OPF_LOG_LEVEL", "error")
        .output()
        .expect("opf binary runs");
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// `opf synth` from a spec document into `dir/data`.
fn synth(dir: &Path, spec: Value) -> PathBuf {
    let spec_path = dir.join("spec.json");
    write(&spec_path, &spec);
    let data = dir.join("data");
    let (ok, err) = opf(&["synth", "--spec", s(&spec_path), "--out", s(&data)]);
    assert!(ok, "opf synth failed: {err}");
    data
}

/// `opf run` on a data directory; returns the result document and the wall
/// time.
fn run(data: &Path, config: &Path, out: &Path, extra: &[&str]) -> (Value, Duration) {
    let (treatment, observations) = (data.join("treatment.csv"), data.join("observations.csv"));
    let t = Instant::now();
    let mut args = vec![
        "run",
        "--treatment",
        s(&treatment),
        "--observations",
        s(&observations),
        "--config",
        s(config),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    let (ok, err) = opf(&args);
    let elapsed = t.elapsed();
    assert!(ok, "opf run failed: {err}");
    (read_json(&out.join("result.json")), elapsed)
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn candidate<'a>(result: &'a Value, id: &str) -> Option<&'a Value> {
    result["candidates"].as_array()?.iter().find(|c| c["estimator"] == id)
}

fn validation_test<'a>(result: &'a Value, name: &str) -> &'a Value {
    result["validation"]["tests"]
        .as_array()
        .and_then(|t| t.iter().find(|x| x["name"] == name))
        .unwrap_or(&Value::Null)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Least squares through a Householder QR of `z`.
fn ols(z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = z.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).expect("full column rank")
}

/// Shared by the first and sixth criteria.
struct Synth1 {
    result: Value,
    elapsed: Duration,
}

fn synth1_run(dir: &Path) -> Synth1 {
    let data = synth(dir, json!({"kind": "cross_sectional_linear", "seed": 42}));
    let (result, elapsed) = run(&data, &data.join("config.json"), &dir.join("out"), &[]);
    Synth1 { result, elapsed }
}

fn ac1(r: &Synth1) -> Outcome {
    let mut c = Checks::default();
    let sel = &r.result["selected"];
    let id = sel["estimator"].as_str().unwrap_or("");
    let (ate, se) = (f(&sel["ate"]), f(&sel["se"]));
    c.check(id.starts_with("dml_"), format!("selected {id}"));
    c.check((9.5..=10.5).contains(&ate), format!("ate {ate} in [9.5, 10.5]"));
    c.check(se < 0.15, format!("se {se} < 0.15"));
    let lin = candidate(&r.result, "dml_linear").map_or(f64::NAN, |v| f(&v["ate"]));
    c.check((9.7..=10.3).contains(&lin), format!("dml_linear {lin} in [9.7, 10.3]"));
    let secs = r.elapsed.as_secs_f64();
    c.check(secs < 30.0, format!("run {secs:.1}s < 30s"));
    c.outcome()
}

fn ac2(dir: &Path) -> Outcome {
    let mut c = Checks::default();
    let data = synth(dir, json!({"kind": "panel_nonlinear"}));
    let (result, elapsed) = run(&data, &data.join("config.json"), &dir.join("out"), &[]);

    let planned: BTreeSet<String> = result["decision_trace"]["candidate_set"]["estimator_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let ran: BTreeSet<String> = result["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["estimator"].as_str().unwrap().to_string())
        .collect();
    let all: BTreeSet<String> = EstimatorId::ALL.iter().map(|e| e.as_str().to_string()).collect();
    c.check(planned == all && ran == all, format!("candidates ran {ran:?}"));

    let gsc = candidate(&result, "gsc");
    let gsc_ate = gsc.map_or(f64::NAN, |g| f(&g["ate"]));
    c.check((19.0..=21.0).contains(&gsc_ate), format!("gsc ate {gsc_ate} in [19, 21]"));
    let min_se = result["candidates"].as_array().unwrap().iter().map(|v| f(&v["se"])).fold(f64::INFINITY, f64::min);
    let gsc_se = gsc.map_or(f64::NAN, |g| f(&g["se"]));
    let selected = result["selected"]["estimator"].as_str().unwrap_or("");
    if gsc_se <= min_se {
        c.check(selected == "gsc", format!("gsc has least se {gsc_se}, selected {selected}"));
    } else {
        c.notes.push(format!("gsc se {gsc_se} not minimal ({min_se}); selected {selected}"));
    }

    // cohorts against the treatment file
    let mut rdr = csv::Reader::from_path(data.join("treatment.csv")).unwrap();
    let dates: Vec<String> = rdr.records().map(|r| r.unwrap()[1].to_string()).collect();
    let distinct: BTreeSet<String> = dates.iter().cloned().collect();
    let cohorts = result["cohorts"].as_array().unwrap();
    let mut times = Vec::new();
    let mut n = 0;
    for co in cohorts {
        n += co["n_treated"].as_u64().unwrap() as usize;
        times.extend(co["treatment_times"].as_array().unwrap().iter().map(|d| d.as_str().unwrap().to_string()));
    }
    let sorted = times.windows(2).all(|w| w[0] < w[1]);
    c.check(
        !cohorts.is_empty() && n == dates.len() && sorted && times.iter().cloned().collect::<BTreeSet<_>>() == distinct,
        format!("{} cohorts partition {} treated units", cohorts.len(), dates.len()),
    );

    // per-cohort DML estimates recombine into the reported one
    let mut cfg = read_json(&data.join("config.json"));
    cfg["algorithm"] = json!("dml_linear");
    let cfg_path = dir.join("config_dml.json");
    write(&cfg_path, &cfg);
    let (dml, _) = run(&data, &cfg_path, &dir.join("out_dml"), &[]);
    let parts: Vec<(f64, f64, f64)> = dml["cohorts"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|co| {
            let e = co.get("estimate")?;
            Some((f(&e["n_treated"]), f(&e["ate"]), f(&e["se"])))
        })
        .collect();
    let sw: f64 = parts.iter().map(|p| p.0).sum();
    let ate = parts.iter().map(|p| p.0 * p.1).sum::<f64>() / sw;
    let se = parts.iter().map(|p| p.0 * p.0 * p.2 * p.2).sum::<f64>().sqrt() / sw;
    let sel = &dml["selected"];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * b.abs().max(1e-3);
    c.check(
        !parts.is_empty()
            && close(f(&sel["ate"]), ate)
            && close(f(&sel["se"]), se)
            && f(&sel["n_treated"]) == sw,
        format!("aggregate {} of {} cohort estimates = weighted {ate:.4}", f(&sel["ate"]), parts.len()),
    );

    let secs = elapsed.as_secs_f64();
    c.check(secs < 300.0, format!("run {secs:.1}s < 300s"));
    c.outcome()
}

fn smoking_csv() -> Option<PathBuf> {
    std::env::var_os("OPF_SMOKING_CSV")
        .map(PathBuf::from)
        .or_else(|| Some(workspace().join("data/smoking.csv")))
        .filter(|p| p.is_file())
}

fn ac3(dir: &Path) -> Outcome {
    let Some(src) = smoking_csv() else {
        return Outcome::Skip("Proposition 99 data not found (set OPF_SMOKING_CSV or add data/smoking.csv)".into());
    };
    let mut rdr = csv::Reader::from_path(&src).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ks), Some(ky), Some(kc), Some(kp)) = (col("state"), col("year"), col("cigsale"), col("retprice")) else {
        return Outcome::Fail(format!("{} lacks state/year/cigsale/retprice columns", src.display()));
    };
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let mut obs = csv::Writer::from_path(data.join("observations.csv")).unwrap();
    obs.write_record(["state", "date", "cigsale", "retprice"]).unwrap();
    let mut states = BTreeSet::new();
    for r in rdr.records() {
        let r = r.unwrap();
        let year: f64 = r[ky].parse().unwrap();
        states.insert(r[ks].to_string());
        obs.write_record([&r[ks], &format!("{}-01-01", year as i64), &r[kc], &r[kp]]).unwrap();
    }
    obs.flush().unwrap();
    // California is state 3 in the numeric coding of the data
    let ca = if states.contains("California") { "California" } else { "3" };
    std::fs::write(data.join("treatment.csv"), format!("state,treatment_date\n{ca},1989-01-01\n")).unwrap();

    let run_with = |name: &str, covariates: Value| {
        let cfg = json!({
            "time_column": "date", "unit_column": "state", "outcome_column": "cigsale",
            "pre_window": 19, "post_window": 12, "treatment_unit_column": "state",
            "covariate_columns": covariates,
        });
        let path = dir.join(format!("{name}.json"));
        write(&path, &cfg);
        run(&data, &path, &dir.join(name), &[])
    };
    let mut c = Checks::default();
    let (plain, t_plain) = run_with("plain", json!([]));
    let (priced, t_priced) = run_with("priced", json!(["retprice"]));
    let (a0, se0) = (f(&plain["selected"]["ate"]), f(&plain["selected"]["se"]));
    let a1 = f(&priced["selected"]["ate"]);
    c.check(plain["selected"]["estimator"] == "gsc", format!("selected {}", plain["selected"]["estimator"]));
    c.check((-30.0..=-15.0).contains(&a0), format!("ate {a0} in [-30, -15]"));
    c.check(a1.abs() < a0.abs() && a1.signum() == a0.signum(), format!("with retprice {a1} closer to zero"));
    c.check((2.0..=12.0).contains(&se0), format!("se {se0} in [2, 12]"));
    let secs = t_plain.max(t_priced).as_secs_f64();
    c.check(secs < 60.0, format!("run {secs:.1}s < 60s"));
    c.outcome()
}

fn ihdp_replicate(path: &Path) -> (CrossSection, f64) {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    let (mut t, mut y, mut x, mut cate, mut ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in rdr.records() {
        let r = r.unwrap();
        let v: Vec<f64> = match r.iter().map(|c| c.trim().parse()).collect::<Result<_, _>>() {
            Ok(v) => v,
            // a header line
            Err(_) => continue,
        };
        ids.push(format!("r{}", ids.len()));
        t.push(v[0]);
        y.push(v[1]);
        cate.push(v[4] - v[3]);
        x.push(v[5..].to_vec());
    }
    let p = x[0].len();
    let features = DMatrix::from_fn(x.len(), p, |i, j| x[i][j]);
    let truth = cate.iter().sum::<f64>() / cate.len() as f64;
    let cs = CrossSection {
        unit_ids: ids,
        treatment: t,
        outcome: y,
        feature_names: (1..=p).map(|j| format!("x{j}")).collect(),
        features,
    };
    (cs, truth)
}

fn ac4() -> Outcome {
    let Some(dir) = std::env::var_os("OPF_IHDP_DIR").map(PathBuf::from) else {
        return Outcome::Skip("IHDP replicates need a download; set OPF_IHDP_DIR".into());
    };
    let spec = DmlSpec::for_estimator(EstimatorId::DmlLinear, &Hyperparameters::default()).unwrap();
    let mut errors = Vec::new();
    for i in 1..=100 {
        let path = dir.join(format!("ihdp_npci_{i}.csv"));
        if !path.is_file() {
            return Outcome::Fail(format!("missing {}", path.display()));
        }
        let (cs, truth) = ihdp_replicate(&path);
        let est = estimate_dml(&cs, &spec, i).unwrap();
        errors.push((est.ate - truth).abs());
    }
    let mae = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut c = Checks::default();
    c.check((0.2..=0.8).contains(&mae), format!("mean abs ATE error {mae:.3} in [0.2, 0.8]"));
    c.outcome()
}

fn ac5() -> Outcome {
    let mut c = Checks::default();
    // 39 states over 1970..=2000, one treated state, treatment in 1989
    let smoking = RuleFacts {
        total_events: 39 * 31,
        shape: DataShape::Panel,
        n_treated_units: 1,
        max_treated_per_cohort: 1,
        n_control_units: 38,
        n_covariates: 1,
        pre_periods: 19,
        post_periods: 12,
    };
    let ids = stage_one(&smoking).map(|s| s.estimator_ids).unwrap_or_default();
    c.check(ids == [EstimatorId::Gsc], format!("smoking facts -> {ids:?}"));

    let data = generate(&SynthSpec::CrossSectionalLinear(CrossSectionalSpec::default())).unwrap();
    let cfg = &data.metadata.config;
    let facts = summarize(&data.panel, &data.treatment, &cfg.cohort_params(data.panel.period)).unwrap();
    let ids = stage_one(&facts).map(|s| s.estimator_ids).unwrap_or_default();
    c.check(!ids.is_empty() && !ids.contains(&EstimatorId::Gsc), format!("synthetic #1 facts -> {ids:?}"));

    let one = EffectEstimate::new(EstimatorId::Gsc, -24.6, 3.0, 1, 38);
    let sel = stage_two(std::slice::from_ref(&one)).unwrap();
    c.check(sel.voting_degraded && sel.selected == one, "single candidate is degraded");
    c.outcome()
}

fn ac6(r: &Synth1) -> Outcome {
    let mut c = Checks::default();
    let ate = f(&r.result["selected"]["ate"]);
    let placebo = validation_test(&r.result, "placebo_treatment");
    let (pa, ps) = (f(&placebo["perturbed_ate"]), f(&placebo["perturbed_se"]));
    c.check(pa.abs() < 2.0 * ps && placebo["passed"] == true, format!("placebo {pa:.4} vs 2se {:.4}", 2.0 * ps));
    for name in ["random_common_cause", "data_subset"] {
        let t = validation_test(&r.result, name);
        let dev = (f(&t["perturbed_ate"]) - ate).abs() / ate.abs();
        c.check(dev <= 0.10 && t["passed"] == true, format!("{name} deviation {:.2}%", 100.0 * dev));
    }
    let u = validation_test(&r.result, "unobserved_common_cause");
    let ua = f(&u["perturbed_ate"]);
    c.check(
        ua.signum() == ate.signum() && (ua - ate).abs() <= 0.30 * ate.abs() && u["passed"] == true,
        format!("unobserved cause {ua:.3}"),
    );
    c.check(r.result["validation"]["overall_passed"] == true, "overall passed");

    let spec = DmlSpec::for_estimator(EstimatorId::DmlLinear, &Hyperparameters::default()).unwrap();
    let mut passes = 0;
    for seed in 0..20u64 {
        let data = generate(&SynthSpec::CrossSectionalLinear(CrossSectionalSpec {
            true_ate: 0.0,
            seed: 1000 + seed,
            ..CrossSectionalSpec::default()
        }))
        .unwrap();
        let cs = opf_core::cohort::cross_section_from_rows(&data.panel, &data.treatment).unwrap();
        let est = estimate_dml(&cs, &spec, seed).unwrap();
        let report = refutation_suite(&[cs], &spec, &est, &RefuteParams::default(), seed);
        passes += usize::from(report.tests.iter().any(|t| t.name == "placebo_treatment" && t.passed));
    }
    c.check(passes >= 18, format!("null-effect placebo {passes}/20"));
    c.outcome()
}

fn ac7a() -> (usize, f64) {
    let hp = Hyperparameters {
        ridge_lambda: 0.0,
        ..Hyperparameters::default()
    };
    let mut spec = DmlSpec::for_estimator(EstimatorId::DmlLinear, &hp).unwrap();
    spec.fitting = Fitting::FullSample;
    let mut worst = 0.0f64;
    let mut ok = 0;
    for k in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let n = rng.random_range(30..200);
        let p = rng.random_range(1..7);
        let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
        let t: Vec<f64> = (0..n)
            .map(|i| {
                let score = x[(i, 0)] + normal(&mut rng);
                if score > 0.0 { 1.0 } else { 0.0 }
            })
            .collect();
        let theta = rng.random_range(-5.0..5.0);
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + theta * t[i] + (0..p).map(|j| (j as f64 + 1.0) * x[(i, j)]).sum::<f64>() + normal(&mut rng))
            .collect();
        let cs = CrossSection {
            unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
            treatment: t.clone(),
            outcome: y.clone(),
            feature_names: (0..p).map(|j| format!("x{j}")).collect(),
            features: x.clone(),
        };
        let Ok(est) = estimate_dml(&cs, &spec, k) else { continue };
        let z = DMatrix::from_fn(n, p + 2, |i, j| match j {
            0 => 1.0,
            j if j <= p => x[(i, j - 1)],
            _ => t[i],
        });
        let joint = ols(&z, &DVector::from_vec(y))[p + 1];
        let d = (est.ate - joint).abs();
        worst = worst.max(d);
        ok += usize::from(d <= 1e-8);
    }
    (ok, worst)
}

fn ac7b() -> (usize, f64) {
    let (mut ok, mut worst) = (0, 0.0f64);
    for k in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
        let (n, t, p) = (15, 10, 2);
        let alpha: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let xi: Vec<f64> = (0..t).map(|_| normal(&mut rng)).collect();
        let x: Vec<DMatrix<f64>> = (0..p).map(|_| DMatrix::from_fn(n, t, |_, _| normal(&mut rng))).collect();
        let y = DMatrix::from_fn(n, t, |i, s| 2.0 + alpha[i] + xi[s] + 1.5 * x[0][(i, s)] - 0.7 * x[1][(i, s)] + normal(&mut rng));
        let model = fit_ife(&y, &x, 0, 1e-12, 1000).unwrap();
        // intercept, unit dummies 1.., period dummies 1.., covariates
        let cols = 1 + (n - 1) + (t - 1) + p;
        let z = DMatrix::from_fn(n * t, cols, |r, j| {
            let (i, s) = (r / t, r % t);
            if j == 0 {
                1.0
            } else if j < n {
                f64::from(u8::from(i == j))
            } else if j < n + t - 1 {
                f64::from(u8::from(s == j - n + 1))
            } else {
                x[j - (n + t - 1)][(i, s)]
            }
        });
        let yv = DVector::from_fn(n * t, |r, _| y[(r / t, r % t)]);
        let b = ols(&z, &yv);
        let d = (0..p).map(|j| (model.beta[j] - b[cols - p + j]).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        ok += usize::from(d <= 1e-6);
    }
    (ok, worst)
}

fn ac7c() -> (usize, Vec<String>) {
    let (n, t) = (40, 30);
    let mut misses = Vec::new();
    let mut ok = 0;
    for seed in 0..20u64 {
        let rank = (seed % 4) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let load = DMatrix::from_fn(n, rank, |_, _| normal(&mut rng));
        let fac = DMatrix::from_fn(t, rank, |_, _| normal(&mut rng));
        let alpha: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let xi: Vec<f64> = (0..t).map(|_| normal(&mut rng)).collect();
        let common = &load * fac.transpose();
        let y = DMatrix::from_fn(n, t, |i, s| 5.0 + alpha[i] + xi[s] + common[(i, s)]);
        match select_rank(&y, &[], 5, t, 1e-10, 2000, seed) {
            Ok(sel) if sel.rank == rank => ok += 1,
            Ok(sel) => misses.push(format!("seed {seed}: planted {rank}, chose {}", sel.rank)),
            Err(e) => misses.push(format!("seed {seed}: {e}")),
        }
    }
    (ok, misses)
}

fn ac7() -> Outcome {
    let mut c = Checks::default();
    let (a, wa) = ac7a();
    c.check(a == 50, format!("FWL {a}/50 within 1e-8 (max diff {wa:.1e})"));
    let (b, wb) = ac7b();
    c.check(b == 10, format!("rank-0 beta vs two-way FE {b}/10 within 1e-6 (max diff {wb:.1e})"));
    let (r, misses) = ac7c();
    c.check(r == 20, format!("planted rank {r}/20 {misses:?}"));
    c.outcome()
}

fn cohort_invariants(table: &TreatmentTable, params: &CohortParams) -> Result<(), String> {
    let cohorts = build_cohorts(table, params).map_err(|e| e.to_string())?;
    let mut seen = BTreeMap::new();
    let mut times = Vec::new();
    for c in &cohorts {
        if c.treatment_times.len() > params.max_times || c.n_treated != c.treated_ids.len() {
            return Err(format!("cohort {} breaks its limits", c.index));
        }
        times.extend(c.treatment_times.iter().copied());
        for u in &c.treated_ids {
            if seen.insert(u.clone(), c.index).is_some() {
                return Err(format!("{u} in two cohorts"));
            }
            if !c.treatment_times.contains(&table.date_of(u).unwrap()) {
                return Err(format!("{u} outside its cohort's times"));
            }
        }
    }
    let distinct: BTreeSet<NaiveDate> = table.rows().iter().map(|r| r.treatment_date).collect();
    if seen.len() != table.len() || times != distinct.into_iter().collect::<Vec<_>>() {
        return Err("cohorts do not partition the treatment table".into());
    }
    Ok(())
}

fn determinism(dir: &Path) -> Result<usize, String> {
    let data = synth(
        dir,
        json!({"kind": "panel_nonlinear", "n_units": 150, "n_treated": 30, "n_periods": 36,
               "first_treatment_period": 18, "last_treatment_period": 26, "seed": 7}),
    );
    let mut cfg = read_json(&data.join("config.json"));
    cfg["hyperparameters"] = json!({"bootstrap_b": 50});
    let cfg_path = dir.join("config.json");
    write(&cfg_path, &cfg);
    let (a, b) = (dir.join("a"), dir.join("b"));
    run(&data, &cfg_path, &a, &["--jobs", "1"]);
    run(&data, &cfg_path, &b, &["--jobs", "4"]);
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let is_output = Path::new(&name).extension().is_some_and(|e| e == "json" || e == "csv");
        if !is_output {
            continue;
        }
        let (x, y) = (std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)));
        if y.ok().as_deref() != Some(&x[..]) {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        compared += 1;
    }
    Ok(compared)
}

fn ac8(dir: &Path) -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    let mut bad = Vec::new();
    for case in 0..1000 {
        let n = rng.random_range(1..120);
        let span = rng.random_range(1..40);
        let rows = (0..n)
            .map(|i| TreatmentRow {
                unit_id: format!("u{i}"),
                treatment_date: Period::Weekly.advance(base, rng.random_range(0..span)).unwrap(),
            })
            .collect();
        let table = TreatmentTable::new(rows).unwrap();
        let min_times = rng.random_range(1..4);
        let params = CohortParams {
            min_times,
            max_times: min_times + rng.random_range(0..4),
            min_treated: rng.random_range(1..60),
        };
        if let Err(e) = cohort_invariants(&table, &params) {
            bad.push(format!("case {case}: {e}"));
        }
    }
    c.check(bad.is_empty(), format!("cohort invariants on 1000 tables {:?}", bad.iter().take(3).collect::<Vec<_>>()));

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..15);
        let mut parts: Vec<EffectEstimate> = (0..k)
            .map(|_| {
                EffectEstimate::new(
                    EstimatorId::DmlLinear,
                    rng.random_range(-30.0..30.0),
                    rng.random_range(0.01..4.0),
                    rng.random_range(1..300),
                    rng.random_range(1..3000),
                )
            })
            .collect();
        let a = weighted_combine(parts.iter()).unwrap();
        parts.shuffle(&mut rng);
        let b = weighted_combine(parts.iter()).unwrap();
        worst = worst.max((a.ate - b.ate).abs()).max((a.se - b.se).abs());
    }
    c.check(worst <= 1e-9, format!("aggregation permutation max diff {worst:.1e}"));

    match determinism(dir) {
        Ok(k) => c.check(k >= 2, format!("{k} output files byte-identical across --jobs 1 and 4")),
        Err(e) => c.check(false, e),
    }
    c.outcome()
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|m| m.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let d = root.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        d
    };
    let s1 = catch_unwind(AssertUnwindSafe(|| synth1_run(&sub("ac1")))).ok();
    let needs_s1 = |f: fn(&Synth1) -> Outcome| match &s1 {
        Some(r) => guarded(|| f(r)),
        None => Outcome::Fail("synthetic #1 run failed".into()),
    };
    let results = [
        ("AC1 synthetic #1 recovery", needs_s1(ac1)),
        ("AC2 synthetic #2 recovery", guarded(|| ac2(&sub("ac2")))),
        ("AC3 smoking benchmark", guarded(|| ac3(&sub("ac3")))),
        ("AC4 IHDP", guarded(ac4)),
        ("AC5 decision-path fixtures", guarded(ac5)),
        ("AC6 refutation suite", needs_s1(ac6)),
        ("AC7 oracle equivalences", guarded(ac7)),
        ("AC8 property suites", guarded(|| ac8(&sub("ac8")))),
    ];
    let mut failed = 0;
    let mut out = String::new();
    for (name, o) in &results {
        let (tag, detail) = match o {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        let _ = writeln!(out, "{tag} {name}: {detail}");
    }
    print!("{out}");
    if failed > 0 {
        std::process::exit(1);
    }
}
