//! Statistical analog beamformer per user group: MPC clustering, RF-chain
//! distribution and generalized-eigenvector beams.

use std::ops::Range;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::acquisition::SparsityMap;
use crate::covariance::GroupCovariances;
use crate::error::{Error, Result};
use crate::numerics::{dominant_eigenvectors, generalized_eig_with, orthonormalize_columns, CMatrix, CVector, GenEigOptions};

/// What to do when a group has more MPC clusters than RF chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AllocationPolicy {
    /// Every cluster gets at least one chain; too few chains is an error.
    #[default]
    Strict,
    /// Keep the floor when possible, otherwise serve only the clusters with
    /// the largest leading eigenvalue and give the rest no chain.
    DropWeakest,
}

/// Largest-remainder split of `total` chains proportional to `sizes`; ties go
/// to the lower group.
pub fn distribute_rf_chains(total: usize, sizes: &[usize]) -> Vec<usize> {
    let k: usize = sizes.iter().sum();
    if k == 0 {
        return vec![0; sizes.len()];
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| total * s / k).collect();
    let mut rem: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(g, &s)| (total * s % k, g)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = total - out.iter().sum::<usize>();
    for &(_, g) in rem.iter().take(left) {
        out[g] += 1;
    }
    out
}

/// Per-delay angular supports of a group (union over members) and the
/// clusters of spatially overlapping delays.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcClusters {
    /// `Γ_l`: sorted grid indices detected at delay `l`.
    pub supports: Vec<Vec<usize>>,
    /// Delay sets, ordered by their smallest delay.
    pub clusters: Vec<Vec<usize>>,
}

impl MpcClusters {
    pub fn count(&self) -> usize {
        self.clusters.len()
    }

    pub fn active_delays(&self) -> Vec<usize> {
        (0..self.supports.len()).filter(|&l| !self.supports[l].is_empty()).collect()
    }
}

/// Union of the member maps at each delay.
pub fn group_supports(map: &SparsityMap, members: &[usize]) -> Vec<Vec<usize>> {
    let Some(first) = members.first() else {
        return Vec::new();
    };
    let (m, l_mem) = map.maps[*first].shape();
    (0..l_mem)
        .map(|l| {
            (0..m)
                .filter(|&i| members.iter().any(|&k| map.maps[k][(i, l)]))
                .collect()
        })
        .collect()
}

fn overlap(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / a.len().min(b.len()) as f64
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Connected components of the graph linking delays whose support overlap
/// `|Γ_l ∩ Γ_l'| / min(|Γ_l|, |Γ_l'|)` reaches `zeta`.
pub fn cluster_mpcs(supports: &[Vec<usize>], zeta: f64) -> MpcClusters {
    let active: Vec<usize> = (0..supports.len()).filter(|&l| !supports[l].is_empty()).collect();
    let mut parent: Vec<usize> = (0..active.len()).collect();
    for a in 0..active.len() {
        for b in a + 1..active.len() {
            if overlap(&supports[active[a]], &supports[active[b]]) >= zeta {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_slot: Vec<Option<usize>> = vec![None; active.len()];
    for a in 0..active.len() {
        let r = find(&mut parent, a);
        match root_slot[r] {
            Some(slot) => clusters[slot].push(active[a]),
            None => {
                root_slot[r] = Some(clusters.len());
                clusters.push(vec![active[a]]);
            }
        }
    }
    MpcClusters {
        supports: supports.to_vec(),
        clusters,
    }
}

/// Objective `Σ_ℓ Σ_{n≤d_ℓ} 1/(λ_{ℓ,n}+1)`.
pub fn allocation_cost(spectra: &[Vec<f64>], counts: &[usize]) -> f64 {
    spectra
        .iter()
        .zip(counts)
        .map(|(s, &d)| s.iter().take(d).map(|l| 1.0 / (l + 1.0)).sum::<f64>())
        .sum()
}

/// Chains per cluster from non-increasing eigenvalue sequences. Each cluster
/// is seeded with one chain, the rest go one at a time to the largest next
/// eigenvalue (lower cluster index on ties).
pub fn allocate_rf_chains(spectra: &[Vec<f64>], chains: usize, policy: AllocationPolicy, group: usize) -> Result<Vec<usize>> {
    let n = spectra.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut counts = vec![0usize; n];
    if chains < n {
        match policy {
            AllocationPolicy::Strict => {
                return Err(Error::TooFewChains {
                    group,
                    clusters: n,
                    chains,
                })
            }
            AllocationPolicy::DropWeakest => {
                let mut order: Vec<usize> = (0..n).collect();
                let lead = |i: usize| spectra[i].first().copied().unwrap_or(0.0);
                order.sort_by(|&a, &b| lead(b).total_cmp(&lead(a)).then(a.cmp(&b)));
                for &i in order.iter().take(chains) {
                    counts[i] = 1;
                }
                debug!("group {group}: {n} clusters for {chains} chains, serving {:?}", &order[..chains]);
                return Ok(counts);
            }
        }
    }
    counts.iter_mut().for_each(|d| *d = 1);
    for _ in n..chains {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in spectra.iter().enumerate() {
            let next = s.get(counts[i]).copied().unwrap_or(f64::NEG_INFINITY);
            // Ties go to the cluster holding fewer chains.
            if best.is_none_or(|(j, b)| next > b || (next == b && counts[i] < counts[j])) {
                best = Some((i, next));
            }
        }
        let (i, _) = best.expect("at least one cluster");
        counts[i] += 1;
    }
    Ok(counts)
}

/// Analog beamformer of one group.
#[derive(Debug, Clone)]
pub struct GroupBeamformer {
    pub group: usize,
    /// Column-orthonormal `S^(g)` (N×D_g).
    pub s: CMatrix,
    /// Concatenated generalized eigenvectors before orthonormalisation.
    pub pre_qr: CMatrix,
    pub clusters: MpcClusters,
    /// `d_ℓ` per cluster.
    pub counts: Vec<usize>,
    /// `𝔇_ℓ` as contiguous column ranges.
    pub blocks: Vec<Range<usize>>,
    /// `λ_{ℓ,n}` against `R̂_y − R̂_ℓ`.
    pub eigenvalues: Vec<Vec<f64>>,
    /// True when no cluster was found and dominant eigenvectors of `R̂_y` were used.
    pub fallback: bool,
}

impl GroupBeamformer {
    pub fn chains(&self) -> usize {
        self.s.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct BeamformerStack {
    pub groups: Vec<GroupBeamformer>,
}

impl BeamformerStack {
    /// `[S^(1) … S^(G)]`.
    pub fn combined(&self) -> CMatrix {
        let cols: Vec<CVector> = self
            .groups
            .iter()
            .flat_map(|g| g.s.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
            .collect();
        CMatrix::from_columns(&cols)
    }
}

/// `Σ_{l∈𝔏_ℓ} R̂_l^(g)`.
pub fn cluster_covariance(per_delay: &[Option<CMatrix>], delays: &[usize], n: usize) -> CMatrix {
    let mut r = CMatrix::zeros(n, n);
    for &l in delays {
        if let Some(m) = &per_delay[l] {
            r += m;
        }
    }
    r
}

/// Builds `S^(g)` for one group from its clusters and `D_g` chains.
pub fn build_group_beamformer(
    covs: &GroupCovariances,
    group_pos: usize,
    clusters: MpcClusters,
    chains: usize,
    policy: AllocationPolicy,
    jitter: Option<f64>,
) -> Result<GroupBeamformer> {
    let gc = &covs.groups[group_pos];
    let n = covs.received.nrows();
    let group = gc.group;
    if clusters.count() == 0 {
        info!("group {group}: no active MPC detected, using dominant received-signal eigenvectors");
        let s = dominant_eigenvectors(&covs.received, chains)?;
        return Ok(GroupBeamformer {
            group,
            pre_qr: s.clone(),
            s,
            clusters,
            counts: Vec::new(),
            blocks: Vec::new(),
            eigenvalues: Vec::new(),
            fallback: true,
        });
    }
    let opts = GenEigOptions {
        b_role: "received-signal covariance",
        jitter,
    };
    let depth = chains.min(n);
    let mut spectra = Vec::with_capacity(clusters.count());
    let mut vectors = Vec::with_capacity(clusters.count());
    for delays in &clusters.clusters {
        let r_c = cluster_covariance(&gc.per_delay, delays, n);
        let eig = generalized_eig_with(&r_c, &covs.received, depth, &opts)
            .map_err(|e| Error::from(e).context(format!("group {group}, cluster {delays:?}")))?;
        // Against R̂_y − R̂_ℓ the same vectors give λ' = μ/(1 − μ).
        let lambdas: Vec<f64> = eig
            .values
            .iter()
            .map(|&mu| {
                let mu = mu.clamp(0.0, 1.0 - 1e-15);
                mu / (1.0 - mu)
            })
            .collect();
        spectra.push(lambdas);
        vectors.push(eig.vectors);
    }
    let counts = allocate_rf_chains(&spectra, chains, policy, group)?;
    let mut cols: Vec<CVector> = Vec::with_capacity(chains);
    let mut blocks = Vec::with_capacity(counts.len());
    for (v, &d) in vectors.iter().zip(&counts) {
        let start = cols.len();
        cols.extend((0..d).map(|j| v.column(j).into_owned()));
        blocks.push(start..cols.len());
    }
    let pre_qr = CMatrix::from_columns(&cols);
    let s = orthonormalize_columns(&pre_qr);
    Ok(GroupBeamformer {
        group,
        s,
        pre_qr,
        clusters,
        counts,
        blocks,
        eigenvalues: spectra,
        fallback: false,
    })
}

/// Beamformers of every group: clusters from `map`, covariances from `covs`.
pub fn build_statistical_beamformer(
    covs: &GroupCovariances,
    map: &SparsityMap,
    chains: &[usize],
    zeta: f64,
    policy: AllocationPolicy,
    jitter: Option<f64>,
) -> Result<BeamformerStack> {
    let groups = covs
        .groups
        .iter()
        .enumerate()
        .map(|(g, gc)| {
            let clusters = cluster_mpcs(&group_supports(map, &gc.members), zeta);
            build_group_beamformer(covs, g, clusters, chains[g], policy, jitter)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerStack { groups })
}

/// `vec(S^H Y)`: entry `t·D_g + d` is `s_dᴴ y_t`.
pub fn reduce_observation(y: &CMatrix, s: &CMatrix) -> Result<CVector> {
    if y.nrows() != s.nrows() {
        return Err(Error::Dimension(format!(
            "observation has {} rows, beamformer {}",
            y.nrows(),
            s.nrows()
        )));
    }
    let r = s.adjoint() * y;
    Ok(CVector::from_column_slice(r.as_slice()))
}

/// `|s_dᴴ u(φ)|²` for every beam column and angle; rows are angles.
pub fn beam_pattern(s: &CMatrix, steering: &CMatrix) -> nalgebra::DMatrix<f64> {
    let p = steering.adjoint() * s;
    p.map(|z| z.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_group_covariances, UserCcms};
    use crate::numerics::{c, generalized_eig, orthonormality_defect};
    use crate::scenario::ArrayConfig;

    #[test]
    fn proportional_chain_split() {
        assert_eq!(distribute_rf_chains(8, &[4, 4, 4, 4]), vec![2, 2, 2, 2]);
        assert_eq!(distribute_rf_chains(8, &[2, 2]), vec![4, 4]);
        assert_eq!(distribute_rf_chains(8, &[1, 1, 1]), vec![3, 3, 2]);
        assert_eq!(distribute_rf_chains(5, &[3, 1]), vec![4, 1]);
    }

    #[test]
    fn disjoint_supports_stay_apart() {
        let s = vec![vec![1, 2, 3], vec![], vec![10, 11], vec![20]];
        let c = cluster_mpcs(&s, 0.5);
        assert_eq!(c.clusters, vec![vec![0], vec![2], vec![3]]);
    }

    #[test]
    fn identical_supports_merge() {
        let s = vec![vec![4, 5, 6], vec![4, 5, 6]];
        assert_eq!(cluster_mpcs(&s, 1.0).clusters, vec![vec![0, 1]]);
    }

    #[test]
    fn chains_are_transitive() {
        let s = vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5], vec![4, 5, 6, 7]];
        assert!(overlap(&s[0], &s[2]) < 0.5);
        assert_eq!(cluster_mpcs(&s, 0.5).clusters, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn allocation_examples() {
        let one = allocate_rf_chains(&[vec![3.0, 2.0, 1.0]], 3, AllocationPolicy::Strict, 1).unwrap();
        assert_eq!(one, vec![3]);
        let two = allocate_rf_chains(
            &[vec![10.0, 9.0, 8.0], vec![0.1, 0.05, 0.01]],
            3,
            AllocationPolicy::Strict,
            1,
        )
        .unwrap();
        assert_eq!(two, vec![2, 1]);
        let eq = allocate_rf_chains(&[vec![1.0; 4], vec![1.0; 4]], 5, AllocationPolicy::Strict, 1).unwrap();
        assert_eq!(eq, vec![3, 2]);
    }

    #[test]
    fn too_few_chains() {
        let spectra = vec![vec![1.0], vec![5.0], vec![3.0]];
        let err = allocate_rf_chains(&spectra, 2, AllocationPolicy::Strict, 4).unwrap_err();
        assert!(err.to_string().contains("raise rf_chains"));
        let kept = allocate_rf_chains(&spectra, 2, AllocationPolicy::DropWeakest, 4).unwrap();
        assert_eq!(kept, vec![0, 1, 1]);
    }

    #[test]
    fn reduce_observation_layout() {
        let y = CMatrix::from_fn(4, 3, |i, j| c(i as f64, j as f64));
        let s = CMatrix::from_fn(4, 2, |i, j| c((i + j) as f64, 0.5));
        let v = reduce_observation(&y, &s).unwrap();
        for t in 0..3 {
            for d in 0..2 {
                let expected = s.column(d).dotc(&y.column(t));
                assert!((v[t * 2 + d] - expected).norm() < 1e-12);
            }
        }
        let id = CMatrix::identity(4, 4);
        let y0 = y.columns(0, 1).into_owned();
        assert_eq!(reduce_observation(&y0, &id).unwrap(), y0.column(0).into_owned());
    }

    fn two_cluster_covs() -> (GroupCovariances, ArrayConfig) {
        let array = ArrayConfig::new(32).unwrap();
        let mut users = UserCcms::empty(1, 2, 32);
        let r0 = crate::scenario::angular_covariance(&array, -22.0, -19.0, 100.0, 128);
        let r1 = crate::scenario::angular_covariance(&array, 18.0, 21.0, 100.0, 128);
        users.ccms[0][0] = Some(r0);
        users.ccms[0][1] = Some(r1);
        (build_group_covariances(&users, &[vec![0]], &[1], 1.0), array)
    }

    #[test]
    fn orthogonal_clusters_leak_little() {
        let (covs, _) = two_cluster_covs();
        let clusters = cluster_mpcs(&[vec![0, 1, 2], vec![50, 51]], 0.5);
        let bf = build_group_beamformer(&covs, 0, clusters, 4, AllocationPolicy::Strict, None).unwrap();
        assert!(orthonormality_defect(&bf.s) < 1e-10);
        assert_eq!(bf.counts.iter().sum::<usize>(), 4);
        let r = [
            covs.groups[0].per_delay[0].clone().unwrap(),
            covs.groups[0].per_delay[1].clone().unwrap(),
        ];
        for (a, b) in [(0, 1), (1, 0)] {
            let s = bf.pre_qr.columns(bf.blocks[a].start, bf.blocks[a].len()).into_owned();
            let own = (s.adjoint() * &r[a] * &s).norm();
            let leak = (s.adjoint() * &r[b] * &s).norm();
            assert!(leak / own < 0.05, "{}", leak / own);
        }
    }

    #[test]
    fn eigenvalues_match_diagonal_formula() {
        let (covs, _) = two_cluster_covs();
        let r0 = covs.groups[0].per_delay[0].clone().unwrap();
        let eta = &covs.received - &r0;
        let eig = generalized_eig(&r0, &covs.received, 3).unwrap();
        let direct = generalized_eig(&r0, &eta, 3).unwrap();
        let s = &eig.vectors;
        let m = (s.adjoint() * &eta * s).try_inverse().unwrap() * (s.adjoint() * &r0 * s);
        for n in 0..3 {
            let mu = eig.values[n];
            assert!((m[(n, n)].re - mu / (1.0 - mu)).abs() < 1e-8 * direct.values[n].max(1.0));
            assert!((direct.values[n] - mu / (1.0 - mu)).abs() < 1e-8 * direct.values[n].max(1.0));
        }
    }

    #[test]
    fn rank_one_beam_is_capon_direction() {
        let array = ArrayConfig::new(16).unwrap();
        let u = array.steering(12.0);
        let mut users = UserCcms::empty(1, 1, 16);
        users.ccms[0][0] = Some((&u * u.adjoint()) * c(10.0, 0.0));
        let covs = build_group_covariances(&users, &[vec![0]], &[1], 0.1);
        let clusters = cluster_mpcs(&[vec![3]], 0.5);
        let bf = build_group_beamformer(&covs, 0, clusters, 1, AllocationPolicy::Strict, None).unwrap();
        let capon = covs.received.clone().try_inverse().unwrap() * &u;
        let corr = bf.s.column(0).dotc(&capon).norm() / capon.norm();
        assert!((corr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_group_falls_back() {
        let (covs, _) = two_cluster_covs();
        let clusters = cluster_mpcs(&[vec![], vec![]], 0.5);
        let bf = build_group_beamformer(&covs, 0, clusters, 3, AllocationPolicy::Strict, None).unwrap();
        assert!(bf.fallback);
        assert_eq!(bf.s.ncols(), 3);
    }
}
