//! Monte Carlo orchestration: one trial runs slow-time acquisition, covariance
//! reconstruction, beam design and fast-time estimation for every requested
//! method; sweeps repeat trials over a grid of one variable.

pub mod output;
pub mod sweep;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{detection_metrics, run_acquisition, DetectionCounts, Jadpp, Method, SearchBeams, SparsityMap};
use crate::beam_design::{build_statistical_beamformer, reduce_observation, BeamformerStack};
use crate::covariance::{build_group_covariances, estimated_group_covariances, grid_steering, GroupCovariances};
use crate::error::Result;
use crate::estimation::{
    analytic_nmse, ba_ls_matrix, effective_channel, empirical_error, ls_matrix, rr_mmse_matrix, EstimatorKind,
    EstimatorMatrix, NmseParts, Provenance, TrueModel,
};
use crate::numerics::CMatrix;
use crate::scenario::{ChannelModel, ChannelRealization, Scenario};
use crate::signals::{synthesize_snapshot, training_matrix, PilotSet, SymbolMode};

pub use output::{write_curves, write_manifest, write_records, Manifest};
pub use sweep::{aggregate, find_curve, run_sweep, ratio_estimate, CurvePoint, Record, SweepOptions, SweepSpec, SweepVariable};

/// Source of the covariances and clusters behind a beamformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Acquired(Method),
    /// True covariances and true supports.
    Oracle,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Acquired(m) => m.name(),
            Pipeline::Oracle => "oracle",
        }
    }
}

/// Per-trial RNG: the master seed selects the key, `(point, trial)` the stream.
pub fn trial_rng(master_seed: u64, point: usize, trial: usize) -> (ChaCha8Rng, u64) {
    let stream = ((point as u64) << 32) | trial as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    (rng, stream)
}

/// Geometry shared by every trial of a scenario.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub model: ChannelModel,
    pub beams: SearchBeams,
    pub steering: CMatrix,
}

impl Workspace {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Ok(Self {
            model: ChannelModel::new(scenario),
            beams: SearchBeams::build(scenario)?,
            steering: grid_steering(&scenario.array(), &scenario.grid()),
        })
    }
}

/// What a trial computes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOptions {
    pub methods: Vec<Method>,
    pub estimators: Vec<EstimatorKind>,
    pub oracle: bool,
    /// Fast-time channel draws for the empirical nMSE; 0 skips it.
    pub empirical_draws: usize,
    /// Skip beam design and fast-time estimation entirely.
    pub detection_only: bool,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Amf, Method::Mf],
            estimators: vec![EstimatorKind::RrMmse, EstimatorKind::BaLs, EstimatorKind::Ls],
            oracle: true,
            empirical_draws: 10,
            detection_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserDetection {
    pub method: Method,
    pub user: usize,
    pub group: usize,
    pub counts: DetectionCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseEntry {
    pub pipeline: Pipeline,
    pub group: usize,
    pub estimator: EstimatorKind,
    pub provenance: Provenance,
    pub analytic: NmseParts,
    pub empirical: Option<NmseParts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub pipeline: Option<Pipeline>,
    pub group: Option<usize>,
    pub estimator: Option<EstimatorKind>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrialOutcome {
    /// Ids of the users active in this trial.
    pub active: Vec<usize>,
    pub detections: Vec<UserDetection>,
    pub nmse: Vec<NmseEntry>,
    pub failures: Vec<TrialFailure>,
}

/// Beamformer and estimators of one pipeline.
struct Design {
    pipeline: Pipeline,
    stack: BeamformerStack,
    /// Per group: estimators and the exact second-order model for the group's `S`.
    groups: Vec<(Vec<EstimatorMatrix>, TrueModel)>,
}

/// Acquisition output for one method.
pub struct Acquired {
    pub method: Method,
    pub jadpp: Jadpp,
    pub map: SparsityMap,
}

/// Synthesizes the slow-time snapshots of `active` and runs every method.
pub fn acquire<R: Rng + ?Sized>(
    active: &Scenario,
    ws: &Workspace,
    methods: &[Method],
    rng: &mut R,
) -> Result<(Vec<ChannelRealization>, Vec<Acquired>)> {
    let pilots = PilotSet::kasami(active.users.len(), active.slow_pilot_len, active.channel_memory)?;
    let draws: Vec<ChannelRealization> = (0..active.snapshots).map(|_| ws.model.draw(active, rng)).collect();
    let results = run_acquisition(active, &ws.beams, &draws, &pilots, methods, rng)?;
    let acquired = methods
        .iter()
        .zip(results)
        .map(|(&method, (jadpp, map))| Acquired { method, jadpp, map })
        .collect();
    Ok((draws, acquired))
}

/// True group covariances of the active users.
pub fn true_covariances(active: &Scenario, ws: &Workspace) -> GroupCovariances {
    let users = ws.model.user_ccms(active);
    build_group_covariances(&users, &active.group_members(), &active.groups(), active.noise_power)
}

/// Covariances and beamformer stack of one pipeline.
pub fn design_pipeline(
    active: &Scenario,
    ws: &Workspace,
    truth: &GroupCovariances,
    acquired: Option<&Acquired>,
) -> Result<(GroupCovariances, BeamformerStack)> {
    let members = active.group_members();
    let chains = active.group_rf_chains();
    let (covs, map) = match acquired {
        Some(a) => (
            estimated_group_covariances(&a.map, &a.jadpp, &ws.steering, &members, &active.groups(), active.noise_power),
            a.map.clone(),
        ),
        None => (truth.clone(), SparsityMap::oracle(active)),
    };
    let stack = build_statistical_beamformer(
        &covs,
        &map,
        &chains,
        active.overlap_threshold,
        active.allocation,
        active.jitter,
    )?;
    Ok((covs, stack))
}

fn build_estimators(
    active: &Scenario,
    pipeline: Pipeline,
    covs: &GroupCovariances,
    truth: &GroupCovariances,
    stack: &BeamformerStack,
    x_per_group: &[CMatrix],
    opts: &TrialOptions,
    failures: &mut Vec<TrialFailure>,
) -> Result<Vec<(Vec<EstimatorMatrix>, TrueModel)>> {
    let mut out = Vec::with_capacity(stack.groups.len());
    for (g, bf) in stack.groups.iter().enumerate() {
        let x = &x_per_group[g];
        let model = TrueModel::new(x, truth, g, &bf.s)?;
        let mut ests = Vec::new();
        let own = match pipeline {
            Pipeline::Oracle => Provenance::True,
            Pipeline::Acquired(_) => Provenance::Estimated,
        };
        for &kind in &opts.estimators {
            let built = match kind {
                EstimatorKind::RrMmse => {
                    let mut v = vec![rr_mmse_matrix(x, covs, g, &bf.s, active.estimator_prior, own)];
                    if own == Provenance::Estimated {
                        v.push(rr_mmse_matrix(x, truth, g, &bf.s, active.estimator_prior, Provenance::True));
                    }
                    v
                }
                EstimatorKind::BaLs => vec![ba_ls_matrix(x, active.channel_memory, bf).map(|mut w| {
                    w.provenance = own;
                    w
                })],
                EstimatorKind::Ls => vec![ls_matrix(x, bf.s.ncols()).map(|mut w| {
                    w.provenance = own;
                    w
                })],
            };
            for result in built {
                match result {
                    Ok(w) => ests.push(w),
                    Err(e) => failures.push(TrialFailure {
                        pipeline: Some(pipeline),
                        group: Some(bf.group),
                        estimator: Some(kind),
                        message: e.to_string(),
                    }),
                }
            }
        }
        out.push((ests, model));
    }
    Ok(out)
}

/// One Monte Carlo trial on the users of `active`.
pub fn run_trial<R: Rng + ?Sized>(active: &Scenario, ws: &Workspace, opts: &TrialOptions, rng: &mut R) -> Result<TrialOutcome> {
    let mut outcome = TrialOutcome {
        active: active.users.iter().map(|u| u.id).collect(),
        ..Default::default()
    };
    let (_, acquired) = acquire(active, ws, &opts.methods, rng)?;
    for a in &acquired {
        for (k, counts) in detection_metrics(&a.map, active).into_iter().enumerate() {
            outcome.detections.push(UserDetection {
                method: a.method,
                user: active.users[k].id,
                group: active.users[k].group,
                counts,
            });
        }
    }
    if opts.detection_only {
        return Ok(outcome);
    }

    let truth = true_covariances(active, ws);
    let members = active.group_members();
    let fast_pilots = PilotSet::kasami(active.users.len(), active.fast_pilot_len, active.channel_memory)?;
    let x_per_group: Vec<CMatrix> = members
        .iter()
        .map(|m| training_matrix(&fast_pilots, m, active.fast_pilot_len))
        .collect::<Result<_>>()?;

    let mut pipelines: Vec<(Pipeline, Option<&Acquired>)> =
        acquired.iter().map(|a| (Pipeline::Acquired(a.method), Some(a))).collect();
    if opts.oracle {
        pipelines.push((Pipeline::Oracle, None));
    }
    let mut designs = Vec::with_capacity(pipelines.len());
    for (pipeline, acq) in pipelines {
        let built = design_pipeline(active, ws, &truth, acq).and_then(|(covs, stack)| {
            let groups = build_estimators(active, pipeline, &covs, &truth, &stack, &x_per_group, opts, &mut outcome.failures)?;
            Ok(Design { pipeline, stack, groups })
        });
        match built {
            Ok(d) => designs.push(d),
            Err(e) => outcome.failures.push(TrialFailure {
                pipeline: Some(pipeline),
                group: None,
                estimator: None,
                message: e.to_string(),
            }),
        }
    }

    // Empirical errors with common random numbers across pipelines and estimators.
    let mut empirical: Vec<Vec<Vec<NmseParts>>> = designs
        .iter()
        .map(|d| d.groups.iter().map(|(e, _)| vec![NmseParts { error: 0.0, energy: 0.0 }; e.len()]).collect())
        .collect();
    for _ in 0..opts.empirical_draws {
        let h = ws.model.draw(active, rng);
        for (g, m) in members.iter().enumerate() {
            let modes: Vec<SymbolMode> = (0..active.users.len())
                .map(|k| if m.contains(&k) { SymbolMode::Pilot } else { SymbolMode::Data })
                .collect();
            let y = synthesize_snapshot(&h, &fast_pilots, &modes, active.noise_power, rng)?;
            for (di, d) in designs.iter().enumerate() {
                let s = &d.stack.groups[g].s;
                let yv = reduce_observation(&y, s)?;
                let truth_vec = effective_channel(&h, s, m);
                for (ei, w) in d.groups[g].0.iter().enumerate() {
                    let est = w.w.adjoint() * &yv;
                    let e = empirical_error(&est, &truth_vec);
                    let acc = &mut empirical[di][g][ei];
                    acc.error += e.error;
                    acc.energy += e.energy;
                }
            }
        }
    }
    for (di, d) in designs.iter().enumerate() {
        for (g, (ests, model)) in d.groups.iter().enumerate() {
            for (ei, w) in ests.iter().enumerate() {
                outcome.nmse.push(NmseEntry {
                    pipeline: d.pipeline,
                    group: d.stack.groups[g].group,
                    estimator: w.kind,
                    provenance: w.provenance,
                    analytic: analytic_nmse(&w.w, model),
                    empirical: (opts.empirical_draws > 0).then(|| empirical[di][g][ei]),
                });
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let (mut a, sa) = trial_rng(7, 0, 1);
        let (mut b, sb) = trial_rng(7, 1, 0);
        let (mut c, _) = trial_rng(7, 0, 1);
        assert_ne!(sa, sb);
        let x: u64 = a.random();
        assert_ne!(x, b.random::<u64>());
        assert_eq!(x, c.random::<u64>());
    }
}
