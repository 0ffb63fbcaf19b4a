//! Channel covariances rebuilt from sparsity maps, and the group, received
//! and interference covariances derived from them.

use crate::acquisition::{AngularGrid, Jadpp, SparsityMap};
use crate::error::{Error, Result};
use crate::numerics::{c, hermitian_defect, hermitian_eigenvalues, CMatrix};
use crate::scenario::ArrayConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceRole {
    Mpc { user: usize, delay: usize },
    GroupDelay { group: usize, delay: usize },
    Received,
    Interference { group: usize },
    Cluster { group: usize, cluster: usize },
}

impl std::fmt::Display for CovarianceRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovarianceRole::Mpc { user, delay } => write!(f, "MPC covariance (user {user}, delay {delay})"),
            CovarianceRole::GroupDelay { group, delay } => {
                write!(f, "group covariance (group {group}, delay {delay})")
            }
            CovarianceRole::Received => f.write_str("received-signal covariance"),
            CovarianceRole::Interference { group } => write!(f, "interference covariance (group {group})"),
            CovarianceRole::Cluster { group, cluster } => {
                write!(f, "cluster covariance (group {group}, cluster {cluster})")
            }
        }
    }
}

/// Hermitian PSD matrix tagged with what it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub role: CovarianceRole,
    pub matrix: CMatrix,
}

impl Covariance {
    /// Checks Hermitian symmetry and `λ_min ≥ −1e-10·Tr`.
    pub fn new(role: CovarianceRole, matrix: CMatrix) -> Result<Self> {
        let cov = Self { role, matrix };
        cov.check()?;
        Ok(cov)
    }

    pub fn check(&self) -> Result<()> {
        let defect = hermitian_defect(&self.matrix);
        if defect > 1e-10 {
            return Err(Error::Dimension(format!("{} is not Hermitian ({defect:e})", self.role)));
        }
        let tr = self.matrix.trace().re;
        let eigs = hermitian_eigenvalues(&crate::numerics::hermitian_part(&self.matrix))?;
        let min = eigs.last().copied().unwrap_or(0.0);
        if min < -1e-10 * tr.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Dimension(format!("{} has eigenvalue {min:e}", self.role)));
        }
        Ok(())
    }
}

/// Per-user, per-delay covariances; `None` marks an inactive cell.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCcms {
    pub n: usize,
    pub ccms: Vec<Vec<Option<CMatrix>>>,
}

impl UserCcms {
    pub fn empty(users: usize, delays: usize, n: usize) -> Self {
        Self {
            n,
            ccms: vec![vec![None; delays]; users],
        }
    }

    pub fn delays(&self) -> usize {
        self.ccms.first().map_or(0, |c| c.len())
    }

    /// The covariance of `(k, l)`, zero when inactive.
    pub fn get_or_zero(&self, k: usize, l: usize) -> CMatrix {
        self.ccms[k][l].clone().unwrap_or_else(|| CMatrix::zeros(self.n, self.n))
    }
}

/// Steering vectors of every grid angle as columns.
pub fn grid_steering(array: &ArrayConfig, grid: &AngularGrid) -> CMatrix {
    array.steering_matrix(&grid.angles())
}

/// `R̂_l^(k) = Σ_i (β̂_l(φ_i)/c_l)·[I]_(i,l)·u(φ_i)uᴴ(φ_i)` with `c_l` the number
/// of detected cells at delay `l`; zero when nothing was detected.
pub fn build_mpc_ccm(map: &SparsityMap, jadpp: &Jadpp, steering: &CMatrix, k: usize, l: usize) -> CMatrix {
    let n = steering.nrows();
    let m = &map.maps[k];
    let p = &jadpp.power[k];
    let cells: Vec<usize> = (0..m.nrows()).filter(|&i| m[(i, l)]).collect();
    if cells.is_empty() {
        return CMatrix::zeros(n, n);
    }
    let count = cells.len() as f64;
    let mut a = CMatrix::zeros(n, cells.len());
    for (col, &i) in cells.iter().enumerate() {
        let w = (p[(i, l)].max(0.0) / count).sqrt();
        a.set_column(col, &(steering.column(i) * c(w, 0.0)));
    }
    &a * a.adjoint()
}

/// Covariances of every user from its map; users without detections are
/// inactive and contribute nothing.
pub fn build_user_ccms(map: &SparsityMap, jadpp: &Jadpp, steering: &CMatrix) -> UserCcms {
    let n = steering.nrows();
    let delays = map.maps.first().map_or(0, |m| m.ncols());
    let mut out = UserCcms::empty(map.maps.len(), delays, n);
    for k in 0..map.maps.len() {
        for l in 0..delays {
            if (0..map.maps[k].nrows()).any(|i| map.maps[k][(i, l)]) {
                out.ccms[k][l] = Some(build_mpc_ccm(map, jadpp, steering, k, l));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCovariance {
    pub group: usize,
    /// Positions of the member users.
    pub members: Vec<usize>,
    /// `R_l^(g)`, `None` where no member is active at `l`.
    pub per_delay: Vec<Option<CMatrix>>,
    /// `R_η^(g) = R_y − Σ_l R_l^(g)`.
    pub interference: CMatrix,
}

impl GroupCovariance {
    pub fn active_delays(&self) -> Vec<usize> {
        (0..self.per_delay.len()).filter(|&l| self.per_delay[l].is_some()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCovariances {
    pub groups: Vec<GroupCovariance>,
    /// `R_y = Σ_g Σ_l R_l^(g) + N₀ I`.
    pub received: CMatrix,
    /// The per-user covariances the groups were built from.
    pub users: UserCcms,
}

/// Sums per-user covariances into group, received and interference matrices.
pub fn build_group_covariances(
    users: &UserCcms,
    members: &[Vec<usize>],
    group_ids: &[usize],
    noise_power: f64,
) -> GroupCovariances {
    let n = users.n;
    let delays = users.delays();
    let mut received = CMatrix::identity(n, n) * c(noise_power, 0.0);
    let mut partial = Vec::with_capacity(members.len());
    for (g, list) in members.iter().enumerate() {
        let mut per_delay: Vec<Option<CMatrix>> = vec![None; delays];
        let mut own = CMatrix::zeros(n, n);
        for &k in list {
            for l in 0..delays {
                if let Some(r) = &users.ccms[k][l] {
                    match &mut per_delay[l] {
                        Some(acc) => *acc += r,
                        slot @ None => *slot = Some(r.clone()),
                    }
                    own += r;
                }
            }
        }
        received += &own;
        partial.push((group_ids[g], list.clone(), per_delay, own));
    }
    let groups = partial
        .into_iter()
        .map(|(group, members, per_delay, own)| GroupCovariance {
            group,
            members,
            per_delay,
            interference: &received - own,
        })
        .collect();
    GroupCovariances {
        groups,
        received,
        users: users.clone(),
    }
}

/// Estimated group covariances from acquisition output.
pub fn estimated_group_covariances(
    map: &SparsityMap,
    jadpp: &Jadpp,
    steering: &CMatrix,
    members: &[Vec<usize>],
    group_ids: &[usize],
    noise_power: f64,
) -> GroupCovariances {
    let users = build_user_ccms(map, jadpp, steering);
    build_group_covariances(&users, members, group_ids, noise_power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{true_ccm, MpcSpec};
    use nalgebra::DMatrix;

    fn single_map(m: usize, l: usize, cells: &[(usize, usize)]) -> SparsityMap {
        let mut map = DMatrix::from_element(m, l, false);
        for &(i, d) in cells {
            map[(i, d)] = true;
        }
        SparsityMap { maps: vec![map] }
    }

    #[test]
    fn empty_row_gives_zero() {
        let array = ArrayConfig::new(8).unwrap();
        let grid = AngularGrid::from_sector(-45.0, 45.0, 36);
        let s = grid_steering(&array, &grid);
        let map = single_map(36, 2, &[]);
        let j = Jadpp { power: vec![DMatrix::from_element(36, 2, 1.0)] };
        assert_eq!(build_mpc_ccm(&map, &j, &s, 0, 0).norm(), 0.0);
    }

    #[test]
    fn single_cell_is_rank_one() {
        let array = ArrayConfig::new(8).unwrap();
        let grid = AngularGrid::from_sector(-45.0, 45.0, 36);
        let s = grid_steering(&array, &grid);
        let map = single_map(36, 2, &[(10, 1)]);
        let mut p = DMatrix::zeros(36, 2);
        p[(10, 1)] = 2.5;
        let r = build_mpc_ccm(&map, &Jadpp { power: vec![p] }, &s, 0, 1);
        let u = array.steering(grid.angle(10));
        let expected = (&u * u.adjoint()) * c(2.5, 0.0);
        assert!((r - expected).norm() < 1e-12);
    }

    #[test]
    fn oracle_map_converges() {
        let array = ArrayConfig::new(32).unwrap();
        let mpc = MpcSpec { delay: 0, aoa_deg: 7.3, spread_deg: 3.0, weight: 1.0, power: 1.0 };
        let truth = true_ccm(&array, &mpc, 4096);
        let grid = AngularGrid::from_sector(-45.0, 45.0, 3600);
        let s = grid_steering(&array, &grid);
        let (a, b) = mpc.support();
        let idx = grid.support_indices(a, b);
        let map = single_map(3600, 1, &idx.iter().map(|&i| (i, 0)).collect::<Vec<_>>());
        let p = DMatrix::from_element(3600, 1, mpc.power);
        let r = build_mpc_ccm(&map, &Jadpp { power: vec![p] }, &s, 0, 0);
        let err = (&r - &truth).norm() / truth.norm();
        assert!(err <= 0.02, "{err}");
    }

    #[test]
    fn single_group_interference_is_noise() {
        let array = ArrayConfig::new(6).unwrap();
        let mut users = UserCcms::empty(2, 2, 6);
        let u = array.steering(10.0);
        users.ccms[0][0] = Some(&u * u.adjoint());
        users.ccms[1][1] = Some((&u * u.adjoint()) * c(3.0, 0.0));
        let g = build_group_covariances(&users, &[vec![0, 1]], &[1], 0.5);
        assert!((&g.groups[0].interference - CMatrix::identity(6, 6) * c(0.5, 0.0)).norm() < 1e-12);
        let tr: f64 = g.groups[0].per_delay.iter().flatten().map(|r| r.trace().re).sum();
        assert!((g.received.trace().re - (tr + 6.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn covariance_role_checks() {
        let ok = Covariance::new(CovarianceRole::Received, CMatrix::identity(3, 3));
        assert!(ok.is_ok());
        let bad = CMatrix::identity(3, 3) * c(-1.0, 0.0);
        let err = Covariance::new(CovarianceRole::Interference { group: 2 }, bad).unwrap_err();
        assert!(err.to_string().contains("interference covariance (group 2)"));
    }
}
