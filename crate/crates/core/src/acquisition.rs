//! Slow-time beam acquisition: search beams, AMF/MF power-profile estimation,
//! two-stage CFAR and the resulting sparsity maps.

use log::debug;
use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{c, dominant_eigenvectors, CMatrix, CVector, C64};
use crate::scenario::{angular_covariance, complex_gaussian_vector, ArrayConfig, ChannelRealization, Scenario};
use crate::signals::{shifted_pilot, synthesize_snapshot, PilotSet, SymbolMode};

/// Uniform look-angle grid `φ_i = lo + i·(hi − lo)/M`, `i = 0 … M−1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularGrid {
    start: f64,
    step: f64,
    len: usize,
}

impl AngularGrid {
    pub fn from_sector(lo_deg: f64, hi_deg: f64, m: usize) -> Self {
        Self {
            start: lo_deg,
            step: (hi_deg - lo_deg) / m as f64,
            len: m,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step_deg(&self) -> f64 {
        self.step
    }

    pub fn angle(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.angle(i)).collect()
    }

    /// Index of the grid angle closest to `phi`; ties go to the lower index.
    pub fn nearest(&self, phi_deg: f64) -> usize {
        let x = (phi_deg - self.start) / self.step;
        let i = (x - 0.5).ceil().max(0.0) as usize;
        i.min(self.len - 1)
    }

    /// Indices whose look angle lies inside `[lo, hi]`.
    pub fn support_indices(&self, lo_deg: f64, hi_deg: f64) -> Vec<usize> {
        let eps = 1e-9 * self.step;
        (0..self.len)
            .filter(|&i| {
                let a = self.angle(i);
                a >= lo_deg - eps && a <= hi_deg + eps
            })
            .collect()
    }
}

/// Top-`D` eigenvectors of `∫ u uᴴ dφ` over the sub-sector.
pub fn sector_beamformer(array: &ArrayConfig, lo_deg: f64, hi_deg: f64, d: usize, quad: usize) -> Result<CMatrix> {
    let r = angular_covariance(array, lo_deg, hi_deg, hi_deg - lo_deg, quad);
    Ok(dominant_eigenvectors(&r, d)?)
}

/// Fraction `‖U_RFᴴ u(φ)‖²` of each steering vector kept by the analog beams.
pub fn captured_energy(array: &ArrayConfig, u_rf: &CMatrix, angles_deg: &[f64]) -> Vec<f64> {
    let a = array.steering_matrix(angles_deg);
    let p = u_rf.adjoint() * a;
    (0..angles_deg.len())
        .map(|i| p.column(i).norm_squared())
        .collect()
}

/// Top-`D_search` eigenvectors of `U_RFᴴ (∫_{φ±σ/2} u uᴴ dφ) U_RF`.
pub fn fine_beams(
    array: &ArrayConfig,
    u_rf: &CMatrix,
    phi_deg: f64,
    sigma_deg: f64,
    d_search: usize,
    quad: usize,
) -> Result<CMatrix> {
    if d_search > u_rf.ncols() {
        return Err(Error::Dimension(format!(
            "D_search={d_search} exceeds D={}",
            u_rf.ncols()
        )));
    }
    let quad = quad.max(1);
    let nodes: Vec<f64> = (0..quad)
        .map(|q| phi_deg - sigma_deg / 2.0 + (q as f64 + 0.5) * sigma_deg / quad as f64)
        .collect();
    let w = (1.0 / quad as f64).sqrt();
    let b = u_rf.adjoint() * array.weighted_steering_matrix(&nodes, &vec![w; quad]);
    let r = &b * b.adjoint();
    Ok(dominant_eigenvectors(&r, d_search)?)
}

/// Analog and digital search beams for one contiguous sub-sector.
#[derive(Debug, Clone)]
pub struct SubSectorBeams {
    pub lo_deg: f64,
    pub hi_deg: f64,
    pub u_rf: CMatrix,
    /// Grid indices served by this sub-sector.
    pub indices: std::ops::Range<usize>,
    /// `U_φi` for each served grid index.
    pub fine: Vec<CMatrix>,
    /// `ũ_i = U_φiᴴ U_RFᴴ u(φ_i)`.
    pub looks: Vec<CVector>,
}

#[derive(Debug, Clone)]
pub struct SearchBeams {
    pub grid: AngularGrid,
    pub sub_sectors: Vec<SubSectorBeams>,
}

impl SearchBeams {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        let array = scenario.array();
        let grid = scenario.grid();
        let [lo, hi] = scenario.sector_deg;
        let count = match scenario.sub_sector_width_deg {
            Some(w) => ((hi - lo) / w - 1e-9).ceil().max(1.0) as usize,
            None => 1,
        };
        let width = (hi - lo) / count as f64;
        let mut sub_sectors = Vec::with_capacity(count);
        let mut next = 0usize;
        for p in 0..count {
            let a = lo + p as f64 * width;
            let b = if p + 1 == count { hi } else { a + width };
            let end = if p + 1 == count {
                grid.len()
            } else {
                (next..grid.len()).find(|&i| grid.angle(i) >= b - 1e-9).unwrap_or(grid.len())
            };
            let u_rf = sector_beamformer(&array, a, b, scenario.rf_chains, scenario.sector_quad_points)?;
            let mut fine = Vec::with_capacity(end - next);
            let mut looks = Vec::with_capacity(end - next);
            for i in next..end {
                let phi = grid.angle(i);
                let u_phi = fine_beams(
                    &array,
                    &u_rf,
                    phi,
                    scenario.look_spread_deg,
                    scenario.search_beams,
                    scenario.patch_quad_points,
                )?;
                let look = u_phi.adjoint() * (u_rf.adjoint() * array.steering(phi));
                fine.push(u_phi);
                looks.push(look);
            }
            sub_sectors.push(SubSectorBeams {
                lo_deg: a,
                hi_deg: b,
                u_rf,
                indices: next..end,
                fine,
                looks,
            });
            next = end;
        }
        Ok(Self { grid, sub_sectors })
    }

    /// Captured energy of every grid angle under its own sub-sector beams.
    pub fn coverage(&self, array: &ArrayConfig) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        for s in &self.sub_sectors {
            let angles: Vec<f64> = s.indices.clone().map(|i| self.grid.angle(i)).collect();
            out.extend(captured_energy(array, &s.u_rf, &angles));
        }
        out
    }
}

/// Matched-filter gain `ũᴴ Ỹ x / (‖ũ‖² ‖x‖²)`.
pub fn mf_estimate(y: &CMatrix, u: &CVector, x: &CVector) -> C64 {
    let num = u.dotc(&(y * x));
    num / (u.norm_squared() * x.norm_squared())
}

/// Signal-nulled sample covariance `Ỹ (I − x xᴴ/‖x‖²) Ỹᴴ`.
pub fn nulled_covariance(y: &CMatrix, x: &CVector) -> CMatrix {
    let yx = y * x;
    let s = x.norm_squared();
    y * y.adjoint() - (&yx * yx.adjoint()) / c(s, 0.0)
}

/// AMF gain with a supplied interference covariance `Ψ`.
pub fn amf_estimate_with(y: &CMatrix, u: &CVector, x: &CVector, psi: &CMatrix) -> Result<C64> {
    let lu = psi.clone().lu();
    let yx = y * x;
    let stacked = CMatrix::from_columns(&[u.clone(), yx]);
    let sol = lu
        .solve(&stacked)
        .ok_or_else(|| Error::Dimension("interference covariance is singular".into()))?;
    let num = u.dotc(&sol.column(1).into_owned());
    let den = u.dotc(&sol.column(0).into_owned());
    Ok(num / (den * x.norm_squared()))
}

/// AMF gain `ũᴴΨ⁻¹Ỹx / (‖x‖² ũᴴΨ⁻¹ũ)` with `Ψ` estimated from the data.
/// A numerically singular `Ψ` gets diagonal loading `1e-9·Tr(Ψ)/D_search`.
pub fn amf_estimate(y: &CMatrix, u: &CVector, x: &CVector) -> Result<C64> {
    if x.norm_squared() == 0.0 {
        return Err(Error::Dimension("zero pilot vector".into()));
    }
    let psi = nulled_covariance(y, x);
    if condition_too_large(&psi) {
        return amf_estimate_with(y, u, x, &load(&psi));
    }
    amf_estimate_with(y, u, x, &psi)
}

fn load(psi: &CMatrix) -> CMatrix {
    let n = psi.nrows();
    let delta = 1e-9 * psi.trace().re / n as f64;
    debug!("loading singular AMF covariance with {delta:e}");
    psi + CMatrix::identity(n, n) * c(delta.max(f64::MIN_POSITIVE), 0.0)
}

fn condition_too_large(psi: &CMatrix) -> bool {
    match crate::numerics::hermitian_eigenvalues(&crate::numerics::hermitian_part(psi)) {
        Ok(e) => {
            let max = e[0];
            let min = *e.last().unwrap();
            !(max > 0.0) || min <= max * 1e-12
        }
        Err(_) => true,
    }
}

/// Which JADPP estimator drives the acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Amf,
    Mf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Amf => "amf",
            Method::Mf => "mf",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Estimated joint angle-delay power profile: one `M×L` matrix per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Jadpp {
    pub power: Vec<DMatrix<f64>>,
}

/// Slow-time observations after the analog stage: `z[j][p] = U_RF,pᴴ Y_{j,p}`.
#[derive(Debug, Clone)]
pub struct SlowTimeData {
    pub z: Vec<Vec<CMatrix>>,
}

/// Synthesizes `J` snapshots, one channel draw each, and one noisy
/// repetition per sub-sector of every snapshot. Realizations are returned
/// alongside so callers can score them.
pub fn acquire_snapshots<R: Rng + ?Sized>(
    beams: &SearchBeams,
    realizations: &[ChannelRealization],
    pilots: &PilotSet,
    noise_power: f64,
    rng: &mut R,
) -> Result<SlowTimeData> {
    let mut z = Vec::with_capacity(realizations.len());
    for h in realizations {
        let modes = vec![SymbolMode::Pilot; h.users()];
        let clean = synthesize_snapshot(h, pilots, &modes, 0.0, rng)?;
        let (n, t) = clean.shape();
        let mut per = Vec::with_capacity(beams.sub_sectors.len());
        for s in &beams.sub_sectors {
            let noise = complex_gaussian_vector(rng, n * t, noise_power);
            let y = &clean + CMatrix::from_column_slice(n, t, noise.as_slice());
            per.push(s.u_rf.adjoint() * y);
        }
        z.push(per);
    }
    Ok(SlowTimeData { z })
}

/// `β̂_l^(k)(φ_i)` averaged over snapshots for every requested method.
/// Results follow the order of `methods`.
pub fn estimate_jadpp(
    beams: &SearchBeams,
    data: &SlowTimeData,
    pilots: &PilotSet,
    n_users: usize,
    methods: &[Method],
) -> Result<Vec<Jadpp>> {
    let m = beams.grid.len();
    let l_mem = pilots.memory();
    let want_amf = methods.contains(&Method::Amf);
    let want_mf = methods.contains(&Method::Mf);
    let mut amf = vec![DMatrix::<f64>::zeros(m, l_mem); n_users];
    let mut mf = vec![DMatrix::<f64>::zeros(m, l_mem); n_users];
    let xs: Vec<CVector> = (0..n_users)
        .flat_map(|k| (0..l_mem).map(move |l| (k, l)))
        .map(|(k, l)| shifted_pilot(pilots, k, l))
        .collect();
    let j_count = data.z.len();
    if j_count == 0 {
        return Err(Error::Dimension("no slow-time snapshots".into()));
    }
    for snapshot in &data.z {
        for (p, s) in beams.sub_sectors.iter().enumerate() {
            let z = &snapshot[p];
            let g = z * z.adjoint();
            // Columns Z x_l^(k) for every (k, l).
            let xmat = CMatrix::from_columns(&xs);
            let zx = z * &xmat;
            for (offset, i) in s.indices.clone().enumerate() {
                let u_phi = &s.fine[offset];
                let look = &s.looks[offset];
                let v_all = u_phi.adjoint() * &zx;
                if want_mf {
                    let un = look.norm_squared();
                    for (col, x) in xs.iter().enumerate() {
                        let a = look.dotc(&v_all.column(col).into_owned()) / (un * x.norm_squared());
                        let (k, l) = (col / l_mem, col % l_mem);
                        mf[k][(i, l)] += a.norm_sqr();
                    }
                }
                if want_amf {
                    let gi = u_phi.adjoint() * &g * u_phi;
                    let chol = gi.clone().cholesky();
                    for (col, x) in xs.iter().enumerate() {
                        let v = v_all.column(col).into_owned();
                        let s_norm = x.norm_squared();
                        let alpha = match &chol {
                            Some(ch) => {
                                let a = ch.solve(look);
                                let b = ch.solve(&v);
                                let den = s_norm - v.dotc(&b).re;
                                if den > 1e-9 * s_norm {
                                    let ub = look.dotc(&b);
                                    let num = ub * s_norm / den;
                                    let quad = look.dotc(&a).re + ub.norm_sqr() / den;
                                    Some(num / (quad * s_norm))
                                } else {
                                    None
                                }
                            }
                            None => None,
                        };
                        let alpha = match alpha {
                            Some(a) => a,
                            None => {
                                debug!("AMF fast path fell back at grid index {i}, column {col}");
                                let ytil = u_phi.adjoint() * z;
                                let psi = nulled_covariance(&ytil, x);
                                amf_estimate_with(&ytil, look, x, &load(&psi))
                                    .map_err(|e| e.context(format!("AMF at user {}, delay {}, grid {i}", col / l_mem, col % l_mem)))?
                            }
                        };
                        let (k, l) = (col / l_mem, col % l_mem);
                        amf[k][(i, l)] += alpha.norm_sqr();
                    }
                }
            }
        }
    }
    let scale = 1.0 / j_count as f64;
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let src = match method {
            Method::Amf => &amf,
            Method::Mf => &mf,
        };
        out.push(Jadpp {
            power: src.iter().map(|p| p * scale).collect(),
        });
    }
    Ok(out)
}

/// CFAR scaling `P̄^{−1/n} − 1` for `n` exponential reference cells.
pub fn cfar_multiplier(p_fa: f64, n_ref: usize) -> f64 {
    if n_ref == 0 {
        return f64::INFINITY;
    }
    p_fa.powf(-1.0 / n_ref as f64) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfarDecision {
    pub threshold: f64,
    pub detected: bool,
}

/// Temporal test over the delays of one look angle: reference cells are all
/// `l' ≠ l`.
pub fn cfar_temporal(row: &[f64], l: usize, p_fa: f64) -> CfarDecision {
    let sum: f64 = row.iter().enumerate().filter(|&(j, _)| j != l).map(|(_, v)| v).sum();
    let threshold = cfar_multiplier(p_fa, row.len() - 1) * sum;
    CfarDecision {
        threshold,
        detected: row[l] > threshold,
    }
}

/// Guard half-width κ in cells for a guard of `guard_deg`.
pub fn guard_half_width(guard_deg: f64, cell_deg: f64) -> usize {
    (guard_deg / (2.0 * cell_deg)).round() as usize
}

/// Spatial test over the look angles of one delay; the guard window
/// `[i−κ, i+κ]` is truncated at the edges and excluded from the reference.
pub fn cfar_spatial(column: &[f64], i: usize, p_fa: f64, kappa: usize) -> Result<CfarDecision> {
    let m = column.len();
    if 2 * kappa + 1 >= m {
        return Err(Error::GuardWindow {
            window: 2 * kappa + 1,
            grid: m,
        });
    }
    let lo = i.saturating_sub(kappa);
    let hi = (i + kappa + 1).min(m);
    let sum: f64 = column[..lo].iter().chain(&column[hi..]).sum();
    let n_ref = m - (hi - lo);
    let threshold = cfar_multiplier(p_fa, n_ref) * sum;
    Ok(CfarDecision {
        threshold,
        detected: column[i] > threshold,
    })
}

/// Binary angle-delay maps, one `M×L` matrix per user.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMap {
    pub maps: Vec<DMatrix<bool>>,
}

impl SparsityMap {
    /// A user with no detection is treated as inactive.
    pub fn is_active(&self, k: usize) -> bool {
        self.maps[k].iter().any(|&b| b)
    }

    pub fn detections(&self, k: usize) -> usize {
        self.maps[k].iter().filter(|&&b| b).count()
    }

    /// Oracle map holding every grid cell inside each MPC support.
    pub fn oracle(scenario: &Scenario) -> Self {
        let grid = scenario.grid();
        let maps = scenario
            .users
            .iter()
            .map(|user| {
                let mut m = DMatrix::from_element(grid.len(), scenario.channel_memory, false);
                for mpc in &user.mpcs {
                    let (a, b) = mpc.support();
                    for i in grid.support_indices(a, b) {
                        m[(i, mpc.delay)] = true;
                    }
                }
                m
            })
            .collect();
        Self { maps }
    }
}

/// Declares `(i, l)` active when `β̂` exceeds both CFAR thresholds.
pub fn build_sparsity_map(jadpp: &Jadpp, p_fa: f64, kappa: usize) -> Result<SparsityMap> {
    let mut maps = Vec::with_capacity(jadpp.power.len());
    for p in &jadpp.power {
        let (m, l_mem) = p.shape();
        if 2 * kappa + 1 >= m {
            return Err(Error::GuardWindow {
                window: 2 * kappa + 1,
                grid: m,
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite JADPP entry".into()));
        }
        let temporal_mult = cfar_multiplier(p_fa, l_mem.saturating_sub(1));
        let row_sums: Vec<f64> = (0..m).map(|i| p.row(i).sum()).collect();
        let mut map = DMatrix::from_element(m, l_mem, false);
        for l in 0..l_mem {
            let col = p.column(l);
            let mut prefix = Vec::with_capacity(m + 1);
            prefix.push(0.0);
            for v in col.iter() {
                prefix.push(prefix.last().unwrap() + v);
            }
            let total = prefix[m];
            for i in 0..m {
                let v = col[i];
                let g1 = temporal_mult * (row_sums[i] - v);
                let lo = i.saturating_sub(kappa);
                let hi = (i + kappa + 1).min(m);
                let sum = total - (prefix[hi] - prefix[lo]);
                let g2 = cfar_multiplier(p_fa, m - (hi - lo)) * sum;
                map[(i, l)] = v > g1.max(g2);
            }
        }
        maps.push(map);
    }
    Ok(SparsityMap { maps })
}

/// Per-user detection counts for one trial; ratios are taken after summing
/// counts over trials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionCounts {
    /// Active MPCs detected at their nearest grid cell.
    pub hits: usize,
    /// Active MPCs of the user.
    pub mpcs: usize,
    /// Detections outside every MPC support.
    pub false_alarms: usize,
    /// `M·L`.
    pub cells: usize,
}

impl DetectionCounts {
    pub fn p_d(&self) -> f64 {
        self.hits as f64 / self.mpcs as f64
    }

    pub fn p_fa(&self) -> f64 {
        self.false_alarms as f64 / self.cells as f64
    }

    pub fn merge(&mut self, other: &DetectionCounts) {
        self.hits += other.hits;
        self.mpcs += other.mpcs;
        self.false_alarms += other.false_alarms;
        self.cells += other.cells;
    }
}

/// Scores each user's map against the true MPC geometry.
pub fn detection_metrics(map: &SparsityMap, scenario: &Scenario) -> Vec<DetectionCounts> {
    let grid = scenario.grid();
    scenario
        .users
        .iter()
        .zip(&map.maps)
        .map(|(user, m)| {
            let (rows, l_mem) = m.shape();
            let mut inside = DMatrix::from_element(rows, l_mem, false);
            let mut hits = 0;
            for mpc in &user.mpcs {
                let (a, b) = mpc.support();
                for i in grid.support_indices(a, b) {
                    inside[(i, mpc.delay)] = true;
                }
                if m[(grid.nearest(mpc.aoa_deg), mpc.delay)] {
                    hits += 1;
                }
            }
            let false_alarms = m
                .iter()
                .zip(inside.iter())
                .filter(|(&d, &s)| d && !s)
                .count();
            DetectionCounts {
                hits,
                mpcs: user.mpcs.len(),
                false_alarms,
                cells: rows * l_mem,
            }
        })
        .collect()
}

/// Runs the whole slow-time stage: snapshot synthesis, JADPP per method and
/// sparsity maps. `realizations` holds the `J` channel draws.
pub fn run_acquisition<R: Rng + ?Sized>(
    scenario: &Scenario,
    beams: &SearchBeams,
    realizations: &[ChannelRealization],
    pilots: &PilotSet,
    methods: &[Method],
    rng: &mut R,
) -> Result<Vec<(Jadpp, SparsityMap)>> {
    let data = acquire_snapshots(beams, realizations, pilots, scenario.noise_power, rng)?;
    let jadpps = estimate_jadpp(beams, &data, pilots, scenario.users.len(), methods)?;
    let kappa = scenario.guard_half_width();
    jadpps
        .into_iter()
        .map(|j| {
            let map = build_sparsity_map(&j, scenario.p_fa, kappa)?;
            Ok((j, map))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::orthonormality_defect;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(r, cols, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn grid_nearest_and_support() {
        let g = AngularGrid::from_sector(-45.0, 45.0, 360);
        assert_eq!(g.angle(180), 0.0);
        assert_eq!(g.nearest(0.1), 180);
        assert_eq!(g.nearest(0.125), 180);
        assert_eq!(g.nearest(-50.0), 0);
        assert_eq!(g.nearest(50.0), 359);
        let s = g.support_indices(-1.5, 1.5);
        assert_eq!(s.len(), 13);
        assert_eq!(s[0], 174);
    }

    #[test]
    fn full_dimension_sector_is_unitary() {
        let array = ArrayConfig::new(6).unwrap();
        let u = sector_beamformer(&array, -45.0, 45.0, 6, 512).unwrap();
        assert!(orthonormality_defect(&u) < 1e-10);
        for e in captured_energy(&array, &u, &[-40.0, 0.0, 33.0]) {
            assert!((e - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn narrow_sector_aligns_with_center() {
        let array = ArrayConfig::new(16).unwrap();
        let u = sector_beamformer(&array, 9.5, 10.5, 1, 64).unwrap();
        let corr = u.column(0).dotc(&array.steering(10.0)).norm();
        assert!(corr > 0.99, "{corr}");
    }

    #[test]
    fn fine_beams_limits() {
        let array = ArrayConfig::new(16).unwrap();
        let u_rf = sector_beamformer(&array, -10.0, 10.0, 6, 512).unwrap();
        let full = fine_beams(&array, &u_rf, 2.0, 3.0, 6, 64).unwrap();
        assert!(orthonormality_defect(&full) < 1e-10);
        let point = fine_beams(&array, &u_rf, 2.0, 1e-6, 1, 4).unwrap();
        let target = u_rf.adjoint() * array.steering(2.0);
        let corr = point.column(0).dotc(&target).norm() / target.norm();
        assert!(corr > 0.999, "{corr}");
    }

    #[test]
    fn mf_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_matrix(&mut rng, 5, 12);
        let u = random_vector(&mut rng, 5);
        let x = random_vector(&mut rng, 12);
        let mut acc = c(0.0, 0.0);
        for d in 0..5 {
            for t in 0..12 {
                acc += u[d].conj() * y[(d, t)] * x[t];
            }
        }
        let expected = acc / (u.norm_squared() * x.norm_squared());
        assert!((mf_estimate(&y, &u, &x) - expected).norm() < 1e-12);
    }

    #[test]
    fn mf_noiseless_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_vector(&mut rng, 4);
        let x = random_vector(&mut rng, 10);
        let alpha = c(0.3, -1.2);
        let y = (&u * x.adjoint()) * alpha;
        assert!((mf_estimate(&y, &u, &x) - alpha).norm() < 1e-12);
        let w = CVector::from_vec(vec![u[1].conj(), -u[0].conj(), c(0.0, 0.0), c(0.0, 0.0)]);
        let y = &w * x.adjoint();
        assert!(mf_estimate(&y, &u, &x).norm() < 1e-12);
    }

    #[test]
    fn amf_with_identity_is_mf() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random_matrix(&mut rng, 5, 16);
        let u = random_vector(&mut rng, 5);
        let x = random_vector(&mut rng, 16);
        let a = amf_estimate_with(&y, &u, &x, &CMatrix::identity(5, 5)).unwrap();
        let b = mf_estimate(&y, &u, &x);
        assert!((a - b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn amf_is_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = random_matrix(&mut rng, 4, 20);
        let u = random_vector(&mut rng, 4);
        let x = random_vector(&mut rng, 20);
        let k = c(2.5, -0.7);
        let a = amf_estimate(&y, &u, &x).unwrap();
        let b = amf_estimate(&(&y * k), &u, &x).unwrap();
        assert!((b - a * k).norm() < 1e-10 * b.norm());
    }

    #[test]
    fn amf_recovers_planted_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_vector(&mut rng, 4);
        let x = random_vector(&mut rng, 40);
        let alpha = c(1.0, 2.0);
        let noise = random_matrix(&mut rng, 4, 40) * c(1e-4, 0.0);
        let y = (&u * x.adjoint()) * alpha + noise;
        let est = amf_estimate(&y, &u, &x).unwrap();
        assert!((est - alpha).norm() < 1e-2 * alpha.norm(), "{est}");
    }

    #[test]
    fn cfar_multipliers() {
        assert!((cfar_multiplier(1e-3, 31) - 0.2496).abs() < 1e-4);
        assert!((cfar_multiplier(1e-3, 343) - 0.0203).abs() < 1e-4);
    }

    #[test]
    fn cfar_flat_and_spike() {
        let flat = vec![1.0; 32];
        assert!(!cfar_temporal(&flat, 3, 1e-3).detected);
        let flat = vec![1.0; 360];
        assert!(!cfar_spatial(&flat, 100, 1e-3, 8).unwrap().detected);
        let mut spike = vec![0.0; 360];
        spike[100] = 1.0;
        assert!(cfar_spatial(&spike, 100, 1e-3, 8).unwrap().detected);
        assert!(cfar_spatial(&spike, 100, 1e-3, 180).is_err());
    }

    #[test]
    fn spatial_edges_truncate() {
        let col: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let d = cfar_spatial(&col, 0, 0.1, 2).unwrap();
        let sum: f64 = col[3..].iter().sum();
        assert!((d.threshold - cfar_multiplier(0.1, 17) * sum).abs() < 1e-12);
    }

    #[test]
    fn map_matches_scalar_tests() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DMatrix::from_fn(40, 6, |_, _| -rng.random::<f64>().ln());
        let mut q = p.clone();
        q[(7, 2)] = 50.0;
        q[(30, 5)] = 80.0;
        let j = Jadpp { power: vec![q.clone()] };
        let map = build_sparsity_map(&j, 1e-2, 2).unwrap();
        for i in 0..40 {
            for l in 0..6 {
                let row: Vec<f64> = q.row(i).iter().copied().collect();
                let col: Vec<f64> = q.column(l).iter().copied().collect();
                let t = cfar_temporal(&row, l, 1e-2);
                let s = cfar_spatial(&col, i, 1e-2, 2).unwrap();
                assert_eq!(map.maps[0][(i, l)], t.detected && s.detected);
            }
        }
        assert!(map.maps[0][(7, 2)] && map.maps[0][(30, 5)]);
    }

    #[test]
    fn zero_jadpp_means_inactive() {
        let j = Jadpp { power: vec![DMatrix::zeros(30, 4)] };
        let map = build_sparsity_map(&j, 1e-3, 2).unwrap();
        assert!(!map.is_active(0));
    }

    #[test]
    fn single_spike_single_detection() {
        let mut p = DMatrix::zeros(30, 4);
        p[(12, 1)] = 3.0;
        let map = build_sparsity_map(&Jadpp { power: vec![p] }, 1e-3, 2).unwrap();
        assert_eq!(map.detections(0), 1);
    }
}
