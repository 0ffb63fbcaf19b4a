use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_trial, trial_rng, TrialOptions, Workspace};
use crate::acquisition::Method;
use crate::error::{Error, Result};
use crate::estimation::EstimatorKind;
use crate::scenario::{PowerProfile, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SnrDb,
    TFast,
    JSnapshots,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::TFast => "t_fast",
            SweepVariable::JSnapshots => "j_snapshots",
        }
    }
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::RrMmse, EstimatorKind::BaLs, EstimatorKind::Ls]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Amf, Method::Mf]
}
fn yes() -> bool {
    true
}
fn default_snr() -> f64 {
    30.0
}
fn default_draws() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Also run the true-covariance, true-support pipeline.
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default)]
    pub power_profile: PowerProfile,
    /// SNR of the weakest group when the sweep variable is not SNR.
    #[serde(default = "default_snr")]
    pub base_snr_db: f64,
    #[serde(default = "default_draws")]
    pub empirical_draws: usize,
    /// Stop after acquisition and report detection metrics only.
    #[serde(default)]
    pub detection_only: bool,
}

impl SweepSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Sweep(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Sweep("at least one sweep value is required".into()));
        }
        if self.trials == 0 {
            return Err(Error::Sweep("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Sweep("at least one acquisition method is required".into()));
        }
        if matches!(self.variable, SweepVariable::TFast | SweepVariable::JSnapshots)
            && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0)
        {
            return Err(Error::Sweep(format!("{} values must be positive integers", self.variable.name())));
        }
        Ok(())
    }

    /// The scenario at sweep point `value`.
    pub fn apply(&self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        match self.variable {
            SweepVariable::SnrDb => s.apply_power_profile(value, self.power_profile),
            SweepVariable::TFast => {
                s.fast_pilot_len = value as usize;
                s.apply_power_profile(self.base_snr_db, self.power_profile);
            }
            SweepVariable::JSnapshots => {
                s.snapshots = value as usize;
                s.apply_power_profile(self.base_snr_db, self.power_profile);
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn trial_options(&self) -> TrialOptions {
        TrialOptions {
            methods: self.methods.clone(),
            estimators: self.estimators.clone(),
            oracle: self.oracle,
            empirical_draws: self.empirical_draws,
            detection_only: self.detection_only,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOptions {
    pub threads: Option<usize>,
}

/// One row of `records.csv`. Ratios are kept as numerator `x` and
/// denominator `y` so aggregation can pool them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub point: usize,
    pub variable: String,
    pub value: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub method: String,
    /// `p_d`, `p_fa`, `nmse_analytic`, `nmse_empirical` or `error`.
    pub record: String,
    pub group: String,
    pub user: String,
    pub estimator: String,
    pub provenance: String,
    pub x: f64,
    pub y: f64,
    pub note: String,
    pub elapsed_ms: u64,
}

/// Runs every `(point, trial)` pair; failures become `error` records.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec, master_seed: u64, options: &SweepOptions) -> Result<Vec<Record>> {
    spec.validate()?;
    base.validate()?;
    let scenarios: Vec<Scenario> = spec
        .values
        .iter()
        .map(|&v| spec.apply(base, v))
        .collect::<Result<_>>()?;
    // Geometry does not depend on the sweep variable.
    let ws = Workspace::new(base)?;
    let opts = spec.trial_options();
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(p, t)| trial_records(&scenarios[p], &ws, &opts, spec, p, t, master_seed))
            .collect::<Vec<_>>()
    };
    let chunks = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Sweep(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(chunks.into_iter().flatten().collect())
}

fn trial_records(
    scenario: &Scenario,
    ws: &Workspace,
    opts: &TrialOptions,
    spec: &SweepSpec,
    point: usize,
    trial: usize,
    master_seed: u64,
) -> Vec<Record> {
    let value = spec.values[point];
    let (mut rng, stream) = trial_rng(master_seed, point, trial);
    let started = Instant::now();
    let active = scenario.sample_active(&mut rng);
    let result = run_trial(&active, ws, opts, &mut rng);
    let elapsed_ms = started.elapsed().as_millis() as u64;
    let base = Record {
        point,
        variable: spec.variable.name().into(),
        value,
        trial,
        trial_seed: stream,
        method: String::new(),
        record: String::new(),
        group: String::new(),
        user: String::new(),
        estimator: String::new(),
        provenance: String::new(),
        x: 0.0,
        y: 0.0,
        note: String::new(),
        elapsed_ms,
    };
    let mut out = Vec::new();
    match result {
        Err(e) => out.push(Record {
            record: "error".into(),
            note: e.to_string(),
            ..base
        }),
        Ok(outcome) => {
            for d in &outcome.detections {
                for (name, x, y) in [
                    ("p_d", d.counts.hits, d.counts.mpcs),
                    ("p_fa", d.counts.false_alarms, d.counts.cells),
                ] {
                    out.push(Record {
                        method: d.method.name().into(),
                        record: name.into(),
                        group: d.group.to_string(),
                        user: d.user.to_string(),
                        x: x as f64,
                        y: y as f64,
                        ..base.clone()
                    });
                }
            }
            for n in &outcome.nmse {
                let mut rows = vec![("nmse_analytic", n.analytic)];
                if let Some(e) = n.empirical {
                    rows.push(("nmse_empirical", e));
                }
                for (name, parts) in rows {
                    out.push(Record {
                        method: n.pipeline.name().into(),
                        record: name.into(),
                        group: n.group.to_string(),
                        estimator: n.estimator.name().into(),
                        provenance: n.provenance.name().into(),
                        x: parts.error,
                        y: parts.energy,
                        ..base.clone()
                    });
                }
            }
            for f in &outcome.failures {
                out.push(Record {
                    method: f.pipeline.map(|p| p.name().to_string()).unwrap_or_default(),
                    record: "error".into(),
                    group: f.group.map(|g| g.to_string()).unwrap_or_default(),
                    estimator: f.estimator.map(|e| e.name().to_string()).unwrap_or_default(),
                    note: f.message.clone(),
                    ..base.clone()
                });
            }
        }
    }
    out
}

/// One row of `curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub variable: String,
    pub value: f64,
    pub method: String,
    pub metric: String,
    pub group: String,
    pub estimator: String,
    pub provenance: String,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Ratio of sums over trials with a delta-method standard error, from
/// per-trial `(x, y)` pairs.
pub fn ratio_estimate(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len();
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    if sy == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let r = sx / sy;
    if n < 2 {
        return (r, 0.0);
    }
    let ybar = sy / n as f64;
    let ss: f64 = pairs.iter().map(|&(x, y)| (x - r * y).powi(2)).sum();
    let se = (ss / (n as f64 * (n - 1) as f64)).sqrt() / ybar;
    (r, se)
}

type CurveKey = (usize, String, String, String, String, String);

/// Pools records into curves. Detection metrics pool counts per group and
/// over all users; nMSE is a ratio of sums per group, and the `all` row
/// averages the group curves.
pub fn aggregate(records: &[Record]) -> Vec<CurvePoint> {
    let mut values: BTreeMap<usize, (String, f64)> = BTreeMap::new();
    // (point, method, metric, group, estimator, provenance) -> trial -> (x, y)
    let mut cells: BTreeMap<CurveKey, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for r in records {
        if r.record == "error" {
            continue;
        }
        values.entry(r.point).or_insert((r.variable.clone(), r.value));
        let mut groups = vec![r.group.clone()];
        if r.record.starts_with("p_") {
            groups.push("all".into());
        }
        for g in groups {
            let key = (r.point, r.method.clone(), r.record.clone(), g, r.estimator.clone(), r.provenance.clone());
            let e = cells.entry(key).or_default().entry(r.trial).or_insert((0.0, 0.0));
            e.0 += r.x;
            e.1 += r.y;
        }
    }
    let mut out = Vec::new();
    let mut nmse_groups: BTreeMap<(usize, String, String, String, String), Vec<(f64, f64, usize)>> = BTreeMap::new();
    for (key, trials) in &cells {
        let pairs: Vec<(f64, f64)> = trials.values().copied().collect();
        let (mean, stderr) = ratio_estimate(&pairs);
        let (variable, value) = values[&key.0].clone();
        if key.2.starts_with("nmse") {
            nmse_groups
                .entry((key.0, key.1.clone(), key.2.clone(), key.4.clone(), key.5.clone()))
                .or_default()
                .push((mean, stderr, pairs.len()));
        }
        out.push(CurvePoint {
            variable,
            value,
            method: key.1.clone(),
            metric: key.2.clone(),
            group: key.3.clone(),
            estimator: key.4.clone(),
            provenance: key.5.clone(),
            mean,
            stderr,
            count: pairs.len(),
        });
    }
    for ((point, method, metric, estimator, provenance), parts) in nmse_groups {
        let g = parts.len() as f64;
        let (variable, value) = values[&point].clone();
        out.push(CurvePoint {
            variable,
            value,
            method,
            metric,
            group: "all".into(),
            estimator,
            provenance,
            mean: parts.iter().map(|p| p.0).sum::<f64>() / g,
            stderr: parts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / g,
            count: parts.iter().map(|p| p.2).min().unwrap_or(0),
        });
    }
    out.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.metric.cmp(&b.metric))
            .then_with(|| a.group.cmp(&b.group))
            .then_with(|| a.estimator.cmp(&b.estimator))
            .then_with(|| a.provenance.cmp(&b.provenance))
    });
    out
}

/// Looks up one curve value.
pub fn find_curve<'a>(
    curves: &'a [CurvePoint],
    value: f64,
    method: &str,
    metric: &str,
    group: &str,
    estimator: &str,
    provenance: &str,
) -> Option<&'a CurvePoint> {
    curves.iter().find(|c| {
        c.value == value
            && c.method == method
            && c.metric == metric
            && c.group == group
            && c.estimator == estimator
            && c.provenance == provenance
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(trial: usize, x: f64, y: f64) -> Record {
        Record {
            point: 0,
            variable: "snr_db".into(),
            value: 10.0,
            trial,
            trial_seed: trial as u64,
            method: "amf".into(),
            record: "nmse_analytic".into(),
            group: "1".into(),
            user: String::new(),
            estimator: "ls".into(),
            provenance: "estimated".into(),
            x,
            y,
            note: String::new(),
            elapsed_ms: 0,
        }
    }

    #[test]
    fn single_record_has_zero_stderr() {
        let c = aggregate(&[rec(0, 0.3, 1.0)]);
        let p = find_curve(&c, 10.0, "amf", "nmse_analytic", "1", "ls", "estimated").unwrap();
        assert_eq!(p.mean, 0.3);
        assert_eq!(p.stderr, 0.0);
    }

    #[test]
    fn symmetric_pair_averages() {
        let c = aggregate(&[rec(0, 0.2, 1.0), rec(1, 0.4, 1.0)]);
        let p = find_curve(&c, 10.0, "amf", "nmse_analytic", "1", "ls", "estimated").unwrap();
        assert!((p.mean - 0.3).abs() < 1e-15);
        assert!((p.stderr - 0.1).abs() < 1e-12);
        let all = find_curve(&c, 10.0, "amf", "nmse_analytic", "all", "ls", "estimated").unwrap();
        assert!((all.mean - 0.3).abs() < 1e-15);
    }

    #[test]
    fn aggregate_ignores_order() {
        let a = vec![rec(0, 0.2, 1.0), rec(1, 0.5, 2.0), rec(2, 0.1, 0.5)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(aggregate(&a), aggregate(&b));
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::from_json_str(r#"{"variable":"snr_db","values":[],"trials":1}"#).is_err());
        assert!(SweepSpec::from_json_str(r#"{"variable":"t_fast","values":[2.5],"trials":1}"#).is_err());
        let s = SweepSpec::from_json_str(r#"{"variable":"j_snapshots","values":[1,5],"trials":3}"#).unwrap();
        assert_eq!(s.methods, vec![Method::Amf, Method::Mf]);
    }
}
