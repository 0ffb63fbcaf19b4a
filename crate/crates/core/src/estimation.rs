//! Fast-time estimation of the effective (beamspace) channels: RR-MMSE,
//! beamspace-aware LS, conventional LS and the closed-form nMSE.
//!
//! Effective channels are stacked in `(user, delay, beam)` order, so column
//! `c = k·L + l` of the training matrix owns entries `c·D_g … c·D_g + D_g − 1`.
//! Observations are `y = (X ⊗ I_{D_g}) h̄ + η`.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::beam_design::GroupBeamformer;
use crate::covariance::{GroupCovariance, GroupCovariances};
use crate::error::{Error, Result};
use crate::numerics::{c, pseudo_inverse_with_rank, solve, CMatrix, CVector, C64, DEFAULT_PINV_RTOL};
use crate::scenario::ChannelRealization;

/// Channel covariance assigned to each user of a group by RR-MMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariancePrior {
    /// Every member is modelled with the group covariance `R_l^(g)`.
    #[default]
    Group,
    /// Every member uses its own covariance `R_l^(k)`.
    PerUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    RrMmse,
    BaLs,
    Ls,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::RrMmse => "rr_mmse",
            EstimatorKind::BaLs => "ba_ls",
            EstimatorKind::Ls => "ls",
        }
    }
}

/// Where the covariances behind an estimator came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Estimated,
    True,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Estimated => "estimated",
            Provenance::True => "true",
        }
    }
}

/// `W^(g)` (`T_fast·D_g × K_g·L·D_g`); estimates are `Wᴴ y`.
#[derive(Debug, Clone)]
pub struct EstimatorMatrix {
    pub kind: EstimatorKind,
    pub provenance: Provenance,
    pub w: CMatrix,
}

/// `h̄_eff`: `S^H h_l^(k)` stacked over members and delays.
pub fn effective_channel(realization: &ChannelRealization, s: &CMatrix, members: &[usize]) -> CVector {
    let d = s.ncols();
    let l_mem = realization.delays();
    let mut out = CVector::zeros(members.len() * l_mem * d);
    for (kk, &k) in members.iter().enumerate() {
        for l in 0..l_mem {
            if !realization.active[k][l] {
                continue;
            }
            let e = s.adjoint() * realization.tap(k, l);
            out.rows_mut((kk * l_mem + l) * d, d).copy_from(&e);
        }
    }
    out
}

/// Beamspace covariance `C_c = Sᴴ R_c S` for every training column.
fn beamspace_priors(
    group: &GroupCovariance,
    users: &crate::covariance::UserCcms,
    s: &CMatrix,
    l_mem: usize,
    prior: CovariancePrior,
) -> Vec<CMatrix> {
    let d = s.ncols();
    let project = |r: &Option<CMatrix>| match r {
        Some(r) => s.adjoint() * r * s,
        None => CMatrix::zeros(d, d),
    };
    let shared: Vec<CMatrix> = (0..l_mem).map(|l| project(&group.per_delay[l])).collect();
    let mut out = Vec::with_capacity(group.members.len() * l_mem);
    for &k in &group.members {
        for l in 0..l_mem {
            out.push(match prior {
                CovariancePrior::Group => shared[l].clone(),
                CovariancePrior::PerUser => project(&users.ccms[k][l]),
            });
        }
    }
    out
}

fn loaded_interference(eta: &CMatrix, s: &CMatrix) -> CMatrix {
    let q = s.adjoint() * eta * s;
    if q.clone().cholesky().is_some() {
        return q;
    }
    let d = q.nrows();
    let delta = 1e-9 * q.trace().re.abs() / d as f64;
    debug!("loading singular beamspace interference with {delta:e}");
    q + CMatrix::identity(d, d) * c(delta.max(f64::MIN_POSITIVE), 0.0)
}

/// `dst[r.., c..] += coef·m`.
fn add_block(dst: &mut CMatrix, at: (usize, usize), coef: C64, m: &CMatrix) {
    let mut view = dst.view_mut(at, m.shape());
    view.zip_apply(m, |a, b| *a += coef * b);
}

/// `(Σ_c x_c x_cᴴ ⊗ SNR_c + I)^{-1} (Σ_c x_c e_cᵀ ⊗ SNR_c)` with
/// `SNR_c = (Sᴴ R_η S)^{-1} C_c`.
pub fn rr_mmse_from_priors(x: &CMatrix, priors: &[CMatrix], q: &CMatrix) -> Result<CMatrix> {
    let (t, cols) = x.shape();
    let d = q.nrows();
    if priors.len() != cols {
        return Err(Error::Dimension(format!("{} priors for {cols} training columns", priors.len())));
    }
    let mut lhs = CMatrix::identity(t * d, t * d);
    let mut rhs = CMatrix::zeros(t * d, cols * d);
    for (col, cov) in priors.iter().enumerate() {
        if cov.iter().all(|z| *z == c(0.0, 0.0)) {
            continue;
        }
        let snr = solve(q, cov, "beamspace interference covariance")?;
        for a in 0..t {
            let xa = x[(a, col)];
            if xa == c(0.0, 0.0) {
                continue;
            }
            add_block(&mut rhs, (a * d, col * d), xa, &snr);
            for b in 0..t {
                let coef = xa * x[(b, col)].conj();
                add_block(&mut lhs, (a * d, b * d), coef, &snr);
            }
        }
    }
    Ok(solve(&lhs, &rhs, "RR-MMSE system")?)
}

/// RR-MMSE estimator from group covariances (estimated or true).
pub fn rr_mmse_matrix(
    x: &CMatrix,
    covs: &GroupCovariances,
    group_pos: usize,
    s: &CMatrix,
    prior: CovariancePrior,
    provenance: Provenance,
) -> Result<EstimatorMatrix> {
    let gc = &covs.groups[group_pos];
    let l_mem = gc.per_delay.len();
    let priors = beamspace_priors(gc, &covs.users, s, l_mem, prior);
    let q = loaded_interference(&gc.interference, s);
    Ok(EstimatorMatrix {
        kind: EstimatorKind::RrMmse,
        provenance,
        w: rr_mmse_from_priors(x, &priors, &q)?,
    })
}

/// `Σ_ℓ pinv(M_ℓ Xᴴ) ⊗ E_𝔇ℓ`: per cluster, LS on its delays only, read out
/// on its own beams.
pub fn ba_ls_matrix(x: &CMatrix, l_mem: usize, bf: &GroupBeamformer) -> Result<EstimatorMatrix> {
    let (t, cols) = x.shape();
    let k_g = cols / l_mem;
    let d = bf.s.ncols();
    let mut w = CMatrix::zeros(t * d, cols * d);
    for (ci, (delays, block)) in bf.clusters.clusters.iter().zip(&bf.blocks).enumerate() {
        if block.is_empty() {
            continue;
        }
        let idx: Vec<usize> = (0..k_g)
            .flat_map(|k| delays.iter().map(move |&l| k * l_mem + l))
            .collect();
        let sub = CMatrix::from_fn(t, idx.len(), |r, j| x[(r, idx[j])]);
        let (pinv, rank) = pseudo_inverse_with_rank(&sub.adjoint(), DEFAULT_PINV_RTOL);
        let expected = t.min(idx.len());
        if rank != expected {
            return Err(Error::RankDeficientCluster {
                group: bf.group,
                cluster: ci,
                rank,
                expected,
            });
        }
        // pinv is T × |idx|; entry (a, j) lands at rows a·D+n, cols idx_j·D+n for n ∈ 𝔇.
        for a in 0..t {
            for (j, &col) in idx.iter().enumerate() {
                let v = pinv[(a, j)];
                for n in block.clone() {
                    w[(a * d + n, col * d + n)] = v;
                }
            }
        }
    }
    Ok(EstimatorMatrix {
        kind: EstimatorKind::BaLs,
        provenance: Provenance::Estimated,
        w,
    })
}

/// Conventional LS: `X(XᴴX)^{-1} ⊗ I` when tall, `(XXᴴ)^{-1}X ⊗ I` otherwise.
pub fn ls_matrix(x: &CMatrix, d: usize) -> Result<EstimatorMatrix> {
    let (t, cols) = x.shape();
    let (_, rank) = pseudo_inverse_with_rank(x, DEFAULT_PINV_RTOL);
    if rank < t.min(cols) {
        return Err(Error::RankDeficientTraining { rows: t, cols, rank });
    }
    let base = if t >= cols {
        let gram = x.adjoint() * x;
        let inv = solve(&gram, &CMatrix::identity(cols, cols), "training Gram matrix")?;
        x * inv
    } else {
        let gram = x * x.adjoint();
        solve(&gram, x, "training Gram matrix")?
    };
    Ok(EstimatorMatrix {
        kind: EstimatorKind::Ls,
        provenance: Provenance::Estimated,
        w: crate::numerics::kron(&base, &CMatrix::identity(d, d)),
    })
}

/// `Wᴴ y`.
pub fn estimate_channels(y: &CVector, w: &EstimatorMatrix) -> Result<CVector> {
    if y.len() != w.w.nrows() {
        return Err(Error::Dimension(format!(
            "observation length {} but estimator has {} rows",
            y.len(),
            w.w.nrows()
        )));
    }
    Ok(w.w.adjoint() * y)
}

/// Second-order model of one group's fast-time observation under the exact
/// per-user covariances.
#[derive(Debug, Clone)]
pub struct TrueModel {
    /// `R_eff`: block diagonal of `C_c`.
    pub r_eff: CMatrix,
    /// `R_y = Σ_c x_c x_cᴴ ⊗ C_c + I ⊗ Sᴴ R_η S`.
    pub r_y: CMatrix,
    /// `A = E{h̄ yᴴ}`.
    pub a: CMatrix,
    /// `W_mmse = R_y^{-1} Aᴴ`.
    pub w_mmse: CMatrix,
    /// `Tr(R_eff − A R_y^{-1} Aᴴ)`.
    pub mmse_trace: f64,
}

impl TrueModel {
    pub fn new(x: &CMatrix, truth: &GroupCovariances, group_pos: usize, s: &CMatrix) -> Result<Self> {
        let gc = &truth.groups[group_pos];
        let l_mem = gc.per_delay.len();
        let priors = beamspace_priors(gc, &truth.users, s, l_mem, CovariancePrior::PerUser);
        let (t, cols) = x.shape();
        let d = s.ncols();
        let q = s.adjoint() * &gc.interference * s;
        let mut r_eff = CMatrix::zeros(cols * d, cols * d);
        let mut r_y = crate::numerics::kron(&CMatrix::identity(t, t), &q);
        let mut a = CMatrix::zeros(cols * d, t * d);
        for (col, cov) in priors.iter().enumerate() {
            r_eff.view_mut((col * d, col * d), (d, d)).copy_from(cov);
            for i in 0..t {
                let xi = x[(i, col)];
                add_block(&mut a, (col * d, i * d), xi.conj(), cov);
                for j in 0..t {
                    add_block(&mut r_y, (i * d, j * d), xi * x[(j, col)].conj(), cov);
                }
            }
        }
        let w_mmse = solve(&r_y, &a.adjoint(), "true observation covariance")?;
        let mmse_trace = r_eff.trace().re - (&a * &w_mmse).trace().re;
        Ok(Self {
            r_eff,
            r_y,
            a,
            w_mmse,
            mmse_trace,
        })
    }
}

/// Numerator and denominator of the closed-form nMSE of estimator `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseParts {
    pub error: f64,
    pub energy: f64,
}

impl NmseParts {
    pub fn ratio(&self) -> f64 {
        self.error / self.energy
    }
}

/// `Tr(R_mmse) + Tr((W − W_mmse)ᴴ R_y (W − W_mmse))` over `Tr(R_eff)`.
pub fn analytic_nmse(w: &CMatrix, model: &TrueModel) -> NmseParts {
    let diff = w - &model.w_mmse;
    let excess = (diff.adjoint() * &model.r_y * &diff).trace().re;
    NmseParts {
        error: model.mmse_trace + excess,
        energy: model.r_eff.trace().re,
    }
}

/// `‖ĥ − h̄‖²` and `‖h̄‖²`.
pub fn empirical_error(estimate: &CVector, truth: &CVector) -> NmseParts {
    NmseParts {
        error: (estimate - truth).norm_squared(),
        energy: truth.norm_squared(),
    }
}
