//! Metrics, baselines, OOD sweeps and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{generate_split, za_sweep_splits, Dataset};
use crate::dynamics::{full_field, SystemSpec};
use crate::error::{Error, Result};
use crate::hybrid::{Observation, Predictor};
use crate::integrators::{rk4_rollout, OnDivergence, Schedule};
use crate::tensor::{Rng, Tensor, Var};

/// Floor applied when the squared error is exactly zero.
pub const LOG_FLOOR: f64 = -690.7755278982137; // ln(1e-300)

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMse {
    pub value: f64,
    pub mse: f64,
    /// Predictions matched the targets exactly and `value` is the floor.
    pub exact: bool,
}

/// Natural log of the mean squared error over every element.
pub fn log_mse(pred: &Tensor, target: &Tensor) -> Result<LogMse> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("log_mse", &[pred.shape(), target.shape()]));
    }
    if pred.numel() == 0 {
        return Err(Error::InvalidArgument("log_mse of empty trajectories".into()));
    }
    let mse = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(LogMse { value: LOG_FLOOR, mse, exact: true });
    }
    Ok(LogMse { value: mse.ln().max(LOG_FLOOR), mse, exact: false })
}

/// Mean over samples of `(1/k) Σ_i |(z_i − μ_i) / z_i|`, in percent.
pub fn relative_param_error(z_true: &Tensor, mu: &Tensor) -> Result<f64> {
    if z_true.shape() != mu.shape() || z_true.ndim() != 2 {
        return Err(Error::shape("relative_param_error", &[z_true.shape(), mu.shape()]));
    }
    let (n, k) = (z_true.shape()[0], z_true.shape()[1]);
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument("relative_param_error of empty parameters".into()));
    }
    if let Some(i) = z_true.data().iter().position(|&z| z == 0.0) {
        return Err(Error::InvalidArgument(format!("true parameter {} of sample {} is zero", i % k, i / k)));
    }
    let total: f64 = z_true.data().iter().zip(mu.data()).map(|(z, m)| ((z - m) / z).abs()).sum();
    Ok(100.0 * total / (n * k) as f64)
}

/// Predicts the per-step, per-coordinate training mean, ignoring the query.
#[derive(Clone, Debug)]
pub struct MeanBaseline {
    /// `[T, S…]`
    pub mean: Tensor,
    pub dt: f64,
}

impl MeanBaseline {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let n = train.len();
        let per = train.y.row_len();
        let mut mean = vec![0.0; per];
        for i in 0..n {
            mean.iter_mut().zip(train.y.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let spec = train.system_spec()?;
        Ok(MeanBaseline { mean: Tensor::new(train.y.shape()[1..].to_vec(), mean)?, dt: spec.dt })
    }
}

impl Predictor for MeanBaseline {
    fn predict(&self, obs: &Observation, _x: &Tensor, t0: f64, n_obs: usize, _rng: &mut Rng) -> Result<Tensor> {
        // Step k of the stored mean is at time (k + 1) dt.
        let start = (t0 / self.dt).round() as usize;
        if start + n_obs > self.mean.rows() {
            return Err(Error::InvalidArgument(format!(
                "baseline covers {} steps, asked for {}..{}",
                self.mean.rows(),
                start,
                start + n_obs
            )));
        }
        let window = self.mean.select_rows(&(start..start + n_obs).collect::<Vec<_>>());
        let b = obs.batch();
        let mut shape = vec![b];
        shape.extend(window.shape());
        let data = window.data().repeat(b);
        Tensor::new(shape, data)
    }

    fn estimate_ze(&self, _obs: &Observation, _rng: &mut Rng) -> Result<Option<Tensor>> {
        Ok(None)
    }
}

/// Integrates the true field with the generating parameters carried by
/// the observation. Its error is solver error only.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    pub spec: SystemSpec,
    pub substeps: usize,
}

impl Predictor for OraclePredictor {
    fn predict(&self, obs: &Observation, x: &Tensor, t0: f64, n_obs: usize, _rng: &mut Rng) -> Result<Tensor> {
        let (ze, za) = obs
            .truth
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("oracle needs the generating parameters".into()))?;
        let (ze, za) = (Var::constant(ze.clone()), Var::constant(za.clone()));
        let states = rk4_rollout(
            |t, y| full_field(self.spec.system, t, y, &ze, &za),
            &Var::constant(x.clone()),
            Schedule::new(t0, n_obs, self.spec.dt, self.substeps)?,
            OnDivergence::Fail,
        )?;
        Tensor::stack_time(&states.iter().map(|s| s.value().clone()).collect::<Vec<_>>())
    }

    fn estimate_ze(&self, obs: &Observation, _rng: &mut Rng) -> Result<Option<Tensor>> {
        Ok(obs.truth.as_ref().map(|(ze, _)| ze.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub log_mse: LogMse,
    /// Relative expert-parameter error in percent, when the model estimates it.
    pub ze_error: Option<f64>,
    pub n: usize,
}

/// Condition on the first `t1` window, forecast `(t1, t2]` from `y_{t1}`.
pub fn evaluate_model(model: &dyn Predictor, data: &Dataset, seed: u64) -> Result<Metrics> {
    data.validate()?;
    let spec = data.system_spec()?;
    let t1 = spec.steps_t1();
    let total = data.steps();
    if t1 == 0 || t1 >= total {
        return Err(Error::InvalidArgument(format!("dataset has {total} steps, need more than t1 = {t1}")));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let obs = Observation::from_dataset(data, &all, t1)?;
    let x = data.y.time_step(t1 - 1);
    let mut rng = Rng::new(seed);
    let pred = model.predict(&obs, &x, spec.t1, total - t1, &mut rng)?;
    let target = data.y.narrow1(t1, total - t1)?;
    let log_mse = log_mse(&pred, &target)?;
    let ze_error = match model.estimate_ze(&obs, &mut rng)? {
        Some(est) => Some(relative_param_error(&data.z_e, &est)?),
        None => None,
    };
    Ok(Metrics { log_mse, ze_error, n: data.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub base: Metrics,
    pub plus: Metrics,
}

/// Evaluate both models on one freshly generated test split per z_a bin
/// (expert parameters in the OOD box).
pub fn za_sweep(
    base: &dyn Predictor,
    plus: &dyn Predictor,
    spec: &SystemSpec,
    bins: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    za_sweep_splits(spec, bins, count, seed)
        .iter()
        .enumerate()
        .map(|(bin, split)| {
            let data = generate_split(split)?;
            Ok(SweepRow {
                bin,
                lo: split.za.lo[0],
                hi: split.za.hi[0],
                base: evaluate_model(base, &data, seed)?,
                plus: evaluate_model(plus, &data, seed)?,
            })
        })
        .collect()
}

/// One evaluated (split, model, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub split: String,
    pub model: String,
    pub seed: u64,
    pub log_mse: f64,
    pub ze_error: Option<f64>,
    pub n: usize,
}

/// One evaluated (bin, model, seed) cell of a z_a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub model: String,
    pub seed: u64,
    pub log_mse: f64,
    pub n: usize,
}

/// Mean and sample standard deviation with the count they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, count: values.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub split: String,
    pub model: String,
    pub log_mse: Stat,
    pub ze_error: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub system: String,
    pub seeds: Vec<u64>,
    pub flavor: String,
    /// Hash of the resolved run config; wall-clock timings are kept out of
    /// the report so that reruns are byte-identical.
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: RunMeta,
    pub summaries: Vec<Summary>,
    pub runs: Vec<RunRecord>,
    pub sweep: Vec<SweepRecord>,
}

impl ExperimentReport {
    /// Aggregate `runs` over seeds per (split, model).
    pub fn new(meta: RunMeta, runs: Vec<RunRecord>, sweep: Vec<SweepRecord>) -> Self {
        let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
        for r in &runs {
            groups.entry((r.split.clone(), r.model.clone())).or_default().push(r);
        }
        let summaries = groups
            .into_iter()
            .map(|((split, model), rs)| {
                let lm: Vec<f64> = rs.iter().map(|r| r.log_mse).collect();
                let ze: Vec<f64> = rs.iter().filter_map(|r| r.ze_error).collect();
                Summary { split, model, log_mse: Stat::of(&lm).expect("group is nonempty"), ze_error: Stat::of(&ze) }
            })
            .collect();
        ExperimentReport { meta, summaries, runs, sweep }
    }

    pub fn summary(&self, split: &str, model: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.split == split && s.model == model)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Write `report.json`, `tables/runs.csv` and `tables/sweep.csv` under
/// `dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = dir.join("tables");
    fs::create_dir_all(&tables).map_err(|e| Error::io(&tables, e))?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;

    let runs_path = tables.join("runs.csv");
    let mut w = csv::Writer::from_path(&runs_path).map_err(|e| csv_err(&runs_path, e))?;
    let write = |w: &mut csv::Writer<fs::File>, rec: &[String]| w.write_record(rec).map_err(|e| csv_err(&runs_path, e));
    write(&mut w, &["split", "model", "seed", "log_mse", "ze_error_pct", "n"].map(String::from))?;
    for r in &report.runs {
        write(
            &mut w,
            &[r.split.clone(), r.model.clone(), r.seed.to_string(), format!("{}", r.log_mse), fmt_opt(r.ze_error), r.n.to_string()],
        )?;
    }
    w.flush().map_err(|e| Error::io(&runs_path, e))?;

    let sweep_path = tables.join("sweep.csv");
    let mut w = csv::Writer::from_path(&sweep_path).map_err(|e| csv_err(&sweep_path, e))?;
    let write = |w: &mut csv::Writer<fs::File>, rec: &[String]| w.write_record(rec).map_err(|e| csv_err(&sweep_path, e));
    write(&mut w, &["bin", "lo", "hi", "model", "seed", "log_mse", "n"].map(String::from))?;
    for r in &report.sweep {
        write(
            &mut w,
            &[
                r.bin.to_string(),
                format!("{}", r.lo),
                format!("{}", r.hi),
                r.model.clone(),
                r.seed.to_string(),
                format!("{}", r.log_mse),
                r.n.to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(&sweep_path, e))?;
    Ok(vec![json_path, runs_path, sweep_path])
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Read a report written by [`emit_report`].
pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::standard_splits;
    use crate::dynamics::System;

    #[test]
    fn uniform_error_gives_log_of_square() {
        let a = Tensor::zeros(&[2, 3, 2]);
        let b = Tensor::full(&[2, 3, 2], 0.1);
        let l = log_mse(&a, &b).unwrap();
        assert!((l.value - 0.01f64.ln()).abs() < 1e-12);
        assert!(!l.exact);
        let e = log_mse(&b, &b).unwrap();
        assert!(e.exact && e.value == LOG_FLOOR);
        assert!(log_mse(&a, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn worse_predictions_never_score_lower() {
        let target = Tensor::vector(&[0.0, 1.0, 2.0, 3.0]);
        let good = Tensor::vector(&[0.1, 1.0, 2.1, 3.0]);
        let bad = Tensor::vector(&[0.2, 1.0, 2.1, 2.9]);
        assert!(log_mse(&bad, &target).unwrap().value >= log_mse(&good, &target).unwrap().value);
    }

    #[test]
    fn relative_error_examples() {
        let z = Tensor::matrix(&[&[2.0, 0.5]]).unwrap();
        let mu = Tensor::matrix(&[&[1.0, 0.75]]).unwrap();
        assert!((relative_param_error(&z, &mu).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(relative_param_error(&z, &z).unwrap(), 0.0);
        let scaled = |t: &Tensor| t.map(|v| 7.5 * v);
        assert!((relative_param_error(&scaled(&z), &scaled(&mu)).unwrap() - 50.0).abs() < 1e-12);
        let zero = Tensor::matrix(&[&[0.0, 1.0]]).unwrap();
        assert!(relative_param_error(&zero, &mu).is_err());
    }

    fn pendulum(n: usize) -> Dataset {
        let mut s = standard_splits(&SystemSpec::new(System::Pendulum), (n, 1, 1), 0)[0].clone();
        s.count = n;
        generate_split(&s).unwrap()
    }

    #[test]
    fn baseline_ignores_query_and_fits_constants() {
        let mut d = pendulum(4);
        let base = MeanBaseline::fit(&d).unwrap();
        let spec = d.system_spec().unwrap();
        let t1 = spec.steps_t1();
        let obs_a = Observation::from_dataset(&d, &[0], t1).unwrap();
        let obs_b = Observation::from_dataset(&d, &[3], t1).unwrap();
        let x = d.x.select_rows(&[0]);
        let mut rng = Rng::new(0);
        let pa = base.predict(&obs_a, &x, spec.t1, 10, &mut rng).unwrap();
        let pb = base.predict(&obs_b, &x, spec.t1, 10, &mut rng).unwrap();
        assert_eq!(pa, pb);
        d.y.data_mut().fill(0.25);
        let flat = MeanBaseline::fit(&d).unwrap();
        let m = evaluate_model(&flat, &d, 0).unwrap();
        assert!(m.log_mse.exact);
        assert!(m.ze_error.is_none());
    }

    #[test]
    fn oracle_is_solver_exact() {
        let d = pendulum(5);
        let spec = d.system_spec().unwrap();
        let oracle = OraclePredictor { spec, substeps: 4 };
        let m = evaluate_model(&oracle, &d, 0).unwrap();
        assert!(m.log_mse.value < -10.0, "{:?}", m);
        assert_eq!(m.ze_error, Some(0.0));
        assert_eq!(evaluate_model(&oracle, &d, 0).unwrap(), m);
    }

    fn toy_report() -> ExperimentReport {
        let runs = vec![
            RunRecord { split: "test".into(), model: "aphynity".into(), seed: 0, log_mse: -2.5, ze_error: Some(40.0), n: 100 },
            RunRecord { split: "test".into(), model: "aphynity".into(), seed: 1, log_mse: -2.0, ze_error: Some(30.0), n: 100 },
            RunRecord { split: "test".into(), model: "baseline".into(), seed: 0, log_mse: -1.0, ze_error: None, n: 100 },
        ];
        let sweep = vec![SweepRecord { bin: 0, lo: 0.3, hi: 0.4, model: "aphynity+".into(), seed: 0, log_mse: -3.25, n: 50 }];
        let meta = RunMeta { system: "pendulum".into(), seeds: vec![0, 1], flavor: "aphynity".into(), config_hash: "abc".into() };
        ExperimentReport::new(meta, runs, sweep)
    }

    #[test]
    fn report_aggregates_and_round_trips() {
        let r = toy_report();
        let s = r.summary("test", "aphynity").unwrap();
        assert_eq!(s.log_mse.count, 2);
        assert!((s.log_mse.mean + 2.25).abs() < 1e-12);
        assert!((s.log_mse.std - 0.125f64.sqrt()).abs() < 1e-12);
        assert!(r.summary("test", "baseline").unwrap().ze_error.is_none());
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(load_report(dir.path()).unwrap(), r);
        let runs = fs::read_to_string(dir.path().join("tables/runs.csv")).unwrap();
        assert_eq!(runs.lines().count(), 1 + r.runs.len());
        let sweep = fs::read_to_string(dir.path().join("tables/sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 1 + r.sweep.len());
    }

    #[test]
    fn toy_report_matches_golden_files() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&toy_report(), dir.path()).unwrap();
        let runs = fs::read_to_string(dir.path().join("tables/runs.csv")).unwrap();
        assert_eq!(runs, GOLDEN_RUNS_CSV);
        let json = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert_eq!(json, GOLDEN_REPORT_JSON);
    }

    const GOLDEN_RUNS_CSV: &str = include_str!("../tests/golden/toy_runs.csv");
    const GOLDEN_REPORT_JSON: &str = include_str!("../tests/golden/toy_report.json");
}
