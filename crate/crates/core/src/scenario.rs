//! Scenario description, ULA geometry and the statistical channel model.
//!
//! Each multipath component (MPC) has a uniform angular power density over its
//! support `[μ − Δ/2, μ + Δ/2]`, so its covariance is
//! `R = (β/Δ) ∫ u(φ) uᴴ(φ) dφ` and `Tr R = β`. Angles are degrees everywhere in
//! the public interface; radians only appear inside [`ArrayConfig::steering`].

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::acquisition::AngularGrid;
use crate::beam_design::AllocationPolicy;
use crate::covariance::{build_group_covariances, GroupCovariances, UserCcms};
use crate::error::{Error, Result};
use crate::estimation::CovariancePrior;
use crate::numerics::{c, CMatrix, CVector, C64};

/// Uniform linear array with half-wavelength spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_antennas: usize,
}

impl ArrayConfig {
    pub fn new(n_antennas: usize) -> Result<Self> {
        if n_antennas < 2 {
            return Err(Error::Config(format!("array needs at least 2 antennas, got {n_antennas}")));
        }
        Ok(Self { n_antennas })
    }

    /// `u(φ)` with entries `exp(jπ m sin φ)/√N`.
    pub fn steering(&self, phi_deg: f64) -> CVector {
        let n = self.n_antennas;
        let k = std::f64::consts::PI * phi_deg.to_radians().sin();
        let scale = 1.0 / (n as f64).sqrt();
        CVector::from_fn(n, |m, _| C64::from_polar(scale, k * m as f64))
    }

    /// Steering vectors of `angles` stacked as columns, each scaled by `weights[i]`.
    pub fn weighted_steering_matrix(&self, angles_deg: &[f64], weights: &[f64]) -> CMatrix {
        let n = self.n_antennas;
        let scale = 1.0 / (n as f64).sqrt();
        CMatrix::from_fn(n, angles_deg.len(), |m, q| {
            let k = std::f64::consts::PI * angles_deg[q].to_radians().sin();
            C64::from_polar(scale * weights[q], k * m as f64)
        })
    }

    pub fn steering_matrix(&self, angles_deg: &[f64]) -> CMatrix {
        self.weighted_steering_matrix(angles_deg, &vec![1.0; angles_deg.len()])
    }
}

pub fn steering_vector(array: &ArrayConfig, phi_deg: f64) -> CVector {
    array.steering(phi_deg)
}

/// `∫ w(φ) u(φ)uᴴ(φ) dφ` over `[lo, hi]` by the midpoint rule with `points`
/// nodes, where the weights integrate to `total`.
pub fn angular_covariance(array: &ArrayConfig, lo_deg: f64, hi_deg: f64, total: f64, points: usize) -> CMatrix {
    let points = points.max(1);
    let width = hi_deg - lo_deg;
    let nodes: Vec<f64> = (0..points)
        .map(|q| lo_deg + (q as f64 + 0.5) * width / points as f64)
        .collect();
    let w = (total / points as f64).sqrt();
    let a = array.weighted_steering_matrix(&nodes, &vec![w; points]);
    &a * a.adjoint()
}

fn unit_weight() -> f64 {
    1.0
}

/// One multipath component of a user channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSpec {
    pub delay: usize,
    pub aoa_deg: f64,
    pub spread_deg: f64,
    /// Share of the user's power carried by this MPC (normalised over the user).
    #[serde(default = "unit_weight")]
    pub weight: f64,
    /// Linear power β; filled in from the owning user's `power_db`.
    #[serde(skip)]
    pub power: f64,
}

impl MpcSpec {
    pub fn support(&self) -> (f64, f64) {
        (self.aoa_deg - self.spread_deg / 2.0, self.aoa_deg + self.spread_deg / 2.0)
    }

    /// Uniform angular power density `ρ = β/Δ` (per degree).
    pub fn density(&self) -> f64 {
        self.power / self.spread_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: usize,
    pub group: usize,
    /// Total received SNR of the user, `10·log10(β/N₀)`.
    #[serde(default)]
    pub power_db: f64,
    pub mpcs: Vec<MpcSpec>,
}

impl UserSpec {
    pub fn total_power(&self) -> f64 {
        self.mpcs.iter().map(|m| m.power).sum()
    }

    pub fn mpc_at(&self, delay: usize) -> Option<&MpcSpec> {
        self.mpcs.iter().find(|m| m.delay == delay)
    }
}

/// How per-group received power is set from a sweep SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PowerProfile {
    /// Every user at the sweep SNR.
    #[default]
    Equal,
    /// Groups ranked by id get `snr + rank·step_db`; the first group is the weakest.
    NearFar { step_db: f64 },
}

fn default_rays() -> usize {
    100
}
fn default_quad() -> usize {
    256
}
fn default_noise() -> f64 {
    1.0
}
fn default_zeta() -> f64 {
    0.5
}
fn default_sector_quad() -> usize {
    2048
}
fn default_patch_quad() -> usize {
    64
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub n_antennas: usize,
    /// Channel memory `L` (delays `0..L`).
    pub channel_memory: usize,
    /// Slow-time pilot length `T`.
    pub slow_pilot_len: usize,
    /// Fast-time pilot length `T_fast`.
    pub fast_pilot_len: usize,
    /// Total RF chains `D`.
    pub rf_chains: usize,
    /// Digital search beams per look angle `D_search`.
    pub search_beams: usize,
    /// Angular sector `[lo, hi)` in degrees.
    pub sector_deg: [f64; 2],
    /// Number of look angles `M` spanning the sector.
    pub grid_size: usize,
    /// Width of the sub-sectors scanned with separate analog beams; `None`
    /// scans the whole sector with one set.
    #[serde(default)]
    pub sub_sector_width_deg: Option<f64>,
    pub look_spread_deg: f64,
    /// Slow-time snapshots `J`.
    pub snapshots: usize,
    pub p_fa: f64,
    pub guard_deg: f64,
    #[serde(default = "default_zeta")]
    pub overlap_threshold: f64,
    #[serde(default = "default_noise")]
    pub noise_power: f64,
    #[serde(default = "default_rays")]
    pub rays: usize,
    #[serde(default = "default_quad")]
    pub quad_points: usize,
    #[serde(default = "default_sector_quad")]
    pub sector_quad_points: usize,
    #[serde(default = "default_patch_quad")]
    pub patch_quad_points: usize,
    /// When set, this many users per group are drawn at random for each trial.
    #[serde(default)]
    pub active_per_group: Option<usize>,
    #[serde(default)]
    pub estimator_prior: CovariancePrior,
    #[serde(default)]
    pub allocation: AllocationPolicy,
    /// Relative diagonal jitter allowed for an indefinite received covariance.
    #[serde(default)]
    pub jitter: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub users: Vec<UserSpec>,
}

/// Longest pilot supported by the length-63 code family.
pub const MAX_PILOT_LEN: usize = 63;

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        scenario.resolve_powers();
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn array(&self) -> ArrayConfig {
        ArrayConfig {
            n_antennas: self.n_antennas,
        }
    }

    pub fn grid(&self) -> AngularGrid {
        AngularGrid::from_sector(self.sector_deg[0], self.sector_deg[1], self.grid_size)
    }

    /// Sorted distinct group ids.
    pub fn groups(&self) -> Vec<usize> {
        self.users
            .iter()
            .map(|u| u.group)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Positions (into `users`) of the members of each group, in group order.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        self.groups()
            .into_iter()
            .map(|g| {
                self.users
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| u.group == g)
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let n = self.n_antennas;
        ArrayConfig::new(n)?;
        if self.channel_memory == 0 {
            return fail("channel_memory must be positive".into());
        }
        if self.slow_pilot_len < self.channel_memory {
            return fail(format!(
                "slow_pilot_len T={} must be at least channel_memory L={}",
                self.slow_pilot_len, self.channel_memory
            ));
        }
        if self.slow_pilot_len > MAX_PILOT_LEN {
            return fail(format!("slow_pilot_len must be at most {MAX_PILOT_LEN}"));
        }
        if self.fast_pilot_len == 0 || self.fast_pilot_len > MAX_PILOT_LEN {
            return fail(format!("fast_pilot_len must be in 1..={MAX_PILOT_LEN}"));
        }
        if self.rf_chains == 0 || self.rf_chains >= n {
            return fail(format!("rf_chains D={} must satisfy 0 < D < N={n}", self.rf_chains));
        }
        if self.search_beams == 0 || self.search_beams > self.rf_chains {
            return fail(format!(
                "search_beams D_search={} must be in 1..=D={}",
                self.search_beams, self.rf_chains
            ));
        }
        if self.slow_pilot_len <= self.search_beams {
            return fail("slow_pilot_len must exceed search_beams for the adaptive filter".into());
        }
        let [lo, hi] = self.sector_deg;
        if !(lo < hi && lo >= -90.0 && hi <= 90.0) {
            return fail(format!("sector [{lo}, {hi}) must be an increasing interval inside [-90, 90]"));
        }
        if self.grid_size < 2 {
            return fail("grid_size M must be at least 2".into());
        }
        if let Some(w) = self.sub_sector_width_deg {
            if !(w > 0.0) {
                return fail("sub_sector_width_deg must be positive".into());
            }
        }
        if !(self.look_spread_deg > 0.0) {
            return fail("look_spread_deg must be positive".into());
        }
        if self.snapshots == 0 {
            return fail("snapshots J must be at least 1".into());
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return fail("p_fa must lie in (0, 1)".into());
        }
        if !(self.guard_deg >= 0.0) {
            return fail("guard_deg must be nonnegative".into());
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return fail("overlap_threshold must lie in (0, 1]".into());
        }
        if !(self.noise_power > 0.0) {
            return fail("noise_power must be positive".into());
        }
        if self.rays == 0 {
            return fail("rays must be at least 1".into());
        }
        if self.quad_points < 8 {
            return fail("quad_points must be at least 8".into());
        }
        if self.users.is_empty() {
            return fail("scenario has no users".into());
        }
        let mut ids = BTreeSet::new();
        for user in &self.users {
            if !ids.insert(user.id) {
                return fail(format!("duplicate user id {}", user.id));
            }
            if user.mpcs.is_empty() {
                return fail(format!("user {} has no MPCs", user.id));
            }
            let mut delays = BTreeSet::new();
            for mpc in &user.mpcs {
                if mpc.delay >= self.channel_memory {
                    return fail(format!(
                        "user {}: delay {} outside 0..{}",
                        user.id, mpc.delay, self.channel_memory
                    ));
                }
                if !delays.insert(mpc.delay) {
                    return fail(format!("user {}: two MPCs at delay {}", user.id, mpc.delay));
                }
                if !(mpc.spread_deg > 0.0) || !(mpc.weight > 0.0) {
                    return fail(format!("user {}: MPC spread and weight must be positive", user.id));
                }
                let (a, b) = mpc.support();
                if a < lo || b > hi {
                    return fail(format!(
                        "user {}: MPC support [{a}, {b}] leaves the sector [{lo}, {hi})",
                        user.id
                    ));
                }
            }
        }
        if let Some(k) = self.active_per_group {
            if k == 0 {
                return fail("active_per_group must be positive".into());
            }
            for members in self.group_members() {
                if members.len() < k {
                    return fail(format!("a group has fewer than {k} users"));
                }
            }
        }
        Ok(())
    }

    /// Recomputes every MPC power from the user totals and weights.
    pub fn resolve_powers(&mut self) {
        let n0 = self.noise_power;
        for user in &mut self.users {
            let total = n0 * 10f64.powf(user.power_db / 10.0);
            let wsum: f64 = user.mpcs.iter().map(|m| m.weight).sum();
            for mpc in &mut user.mpcs {
                mpc.power = total * mpc.weight / wsum;
            }
        }
    }

    pub fn apply_power_profile(&mut self, snr_db: f64, profile: PowerProfile) {
        let groups = self.groups();
        for user in &mut self.users {
            let rank = groups.iter().position(|&g| g == user.group).unwrap_or(0);
            user.power_db = match profile {
                PowerProfile::Equal => snr_db,
                PowerProfile::NearFar { step_db } => snr_db + step_db * rank as f64,
            };
        }
        self.resolve_powers();
    }

    /// Keeps only the users whose ids are listed, in their original order.
    pub fn with_users(&self, ids: &[usize]) -> Scenario {
        let mut out = self.clone();
        out.users.retain(|u| ids.contains(&u.id));
        out.active_per_group = None;
        out
    }

    /// Draws `active_per_group` users per group when configured, else all users.
    pub fn sample_active<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        match self.active_per_group {
            None => self.clone(),
            Some(k) => {
                let mut ids = Vec::new();
                for members in self.group_members() {
                    let picks = rand::seq::index::sample(rng, members.len(), k);
                    let mut chosen: Vec<usize> = picks.iter().map(|i| self.users[members[i]].id).collect();
                    chosen.sort_unstable();
                    ids.extend(chosen);
                }
                self.with_users(&ids)
            }
        }
    }

    /// Guard half-width κ in cells: `round(guard/(2·cell))`.
    pub fn guard_half_width(&self) -> usize {
        let cell = self.grid().step_deg();
        (self.guard_deg / (2.0 * cell)).round() as usize
    }

    /// RF chains per group, proportional to group sizes.
    pub fn group_rf_chains(&self) -> Vec<usize> {
        let sizes: Vec<usize> = self.group_members().iter().map(|m| m.len()).collect();
        crate::beam_design::distribute_rf_chains(self.rf_chains, &sizes)
    }
}

/// Per-user, per-delay channel vectors `h_l^(k)` (zero where the user has no MPC).
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub taps: Vec<Vec<CVector>>,
    pub active: Vec<Vec<bool>>,
}

impl ChannelRealization {
    pub fn zeros(users: usize, delays: usize, n: usize) -> Self {
        Self {
            taps: vec![vec![CVector::zeros(n); delays]; users],
            active: vec![vec![false; delays]; users],
        }
    }

    pub fn tap(&self, user: usize, delay: usize) -> &CVector {
        &self.taps[user][delay]
    }

    pub fn users(&self) -> usize {
        self.taps.len()
    }

    pub fn delays(&self) -> usize {
        self.taps.first().map_or(0, |t| t.len())
    }
}

/// Ray geometry and unit-power covariances for every MPC of a scenario,
/// keyed by user id so that per-trial subsets reuse them.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    rays: HashMap<(usize, usize), CMatrix>,
    unit_ccms: HashMap<(usize, usize), CMatrix>,
    n: usize,
    delays: usize,
}

impl ChannelModel {
    pub fn new(scenario: &Scenario) -> Self {
        let array = scenario.array();
        let p = scenario.rays;
        let mut rays = HashMap::new();
        let mut unit_ccms = HashMap::new();
        for user in &scenario.users {
            for mpc in &user.mpcs {
                let angles: Vec<f64> = (0..p)
                    .map(|i| mpc.aoa_deg + mpc.spread_deg * (i as f64 / p as f64 - 0.5))
                    .collect();
                // h = sqrt(β/P) Σ g_p u(φ_p) with g_p ~ CN(0,1); β applied at draw time.
                let a = array.weighted_steering_matrix(&angles, &vec![(1.0 / p as f64).sqrt(); p]);
                rays.insert((user.id, mpc.delay), a);
                let (lo, hi) = mpc.support();
                unit_ccms.insert(
                    (user.id, mpc.delay),
                    angular_covariance(&array, lo, hi, 1.0, scenario.quad_points),
                );
            }
        }
        Self {
            rays,
            unit_ccms,
            n: scenario.n_antennas,
            delays: scenario.channel_memory,
        }
    }

    /// Draws one block-fading realization for the users of `scenario`.
    pub fn draw<R: Rng + ?Sized>(&self, scenario: &Scenario, rng: &mut R) -> ChannelRealization {
        let mut out = ChannelRealization::zeros(scenario.users.len(), self.delays, self.n);
        for (k, user) in scenario.users.iter().enumerate() {
            for mpc in &user.mpcs {
                if mpc.power <= 0.0 {
                    continue;
                }
                let a = &self.rays[&(user.id, mpc.delay)];
                let g = complex_gaussian_vector(rng, a.ncols(), mpc.power);
                out.taps[k][mpc.delay] = a * g;
                out.active[k][mpc.delay] = true;
            }
        }
        out
    }

    /// True per-MPC covariances of the users in `scenario`.
    pub fn user_ccms(&self, scenario: &Scenario) -> UserCcms {
        let mut out = UserCcms::empty(scenario.users.len(), self.delays, self.n);
        for (k, user) in scenario.users.iter().enumerate() {
            for mpc in &user.mpcs {
                if mpc.power > 0.0 {
                    let unit = &self.unit_ccms[&(user.id, mpc.delay)];
                    out.ccms[k][mpc.delay] = Some(unit * c(mpc.power, 0.0));
                }
            }
        }
        out
    }
}

/// `CN(0, variance·I)` samples.
pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVector {
    let s = (variance / 2.0).sqrt();
    CVector::from_fn(len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(s * re, s * im)
    })
}

/// Midpoint-rule covariance of one MPC under the uniform angular density.
pub fn true_ccm(array: &ArrayConfig, mpc: &MpcSpec, quad_points: usize) -> CMatrix {
    let (lo, hi) = mpc.support();
    angular_covariance(array, lo, hi, mpc.power, quad_points)
}

/// One realization of every user's channel.
pub fn draw_channel<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> ChannelRealization {
    ChannelModel::new(scenario).draw(scenario, rng)
}

/// True group covariances `R_l^(g)`, `R_y` and `R_η^(g)`.
pub fn group_true_ccms(scenario: &Scenario) -> GroupCovariances {
    let ccms = ChannelModel::new(scenario).user_ccms(scenario);
    build_group_covariances(&ccms, &scenario.group_members(), &scenario.groups(), scenario.noise_power)
}
