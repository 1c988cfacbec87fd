//! Exact diagonalization in the totally symmetric irrep, one block per value
//! of the conserved excitation number.
//!
//! In the symmetric irrep the U(3) generators act as `A_ij = b_i† b_j` on
//! three-mode occupation states `|n1, n2, n3>`, so a sector basis is a list of
//! occupations plus the photon number fixed by `M`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{excitation_weights, validate, Configuration, Coupling, ModelError, ModelParams};

#[derive(Debug, Error, Clone)]
pub enum QuantumError {
    #[error("basis is for {basis_config} with {basis_atoms} atoms, parameters are {params_config} with {params_atoms}")]
    DimensionMismatch {
        basis_config: Configuration,
        basis_atoms: u32,
        params_config: Configuration,
        params_atoms: u32,
    },
    #[error("empty sector basis")]
    EmptyBasis,
    #[error("eigensolver residual {residual:.3e} exceeds bound")]
    EigenFailure { residual: f64 },
    #[error("sector cap {cap} reached while the ground energy was still improving")]
    CapReached { best: Box<GroundStateResult>, cap: u32 },
    #[error("sector M = {0} is not valid here (need M >= 1)")]
    InvalidSector(i64),
    #[error(transparent)]
    InvalidParams(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisState {
    pub n1: u32,
    pub n2: u32,
    pub n3: u32,
    pub photons: u32,
}

impl BasisState {
    pub fn occupations(&self) -> [u32; 3] {
        [self.n1, self.n2, self.n3]
    }

    fn with_occupations(occ: [u32; 3], photons: u32) -> Self {
        BasisState {
            n1: occ[0],
            n2: occ[1],
            n3: occ[2],
            photons,
        }
    }

    pub fn label(&self) -> String {
        format!("|{},{},{};{}>", self.n1, self.n2, self.n3, self.photons)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorBasis {
    pub config: Configuration,
    pub n_atoms: u32,
    pub m_total: i64,
    pub states: Vec<BasisState>,
}

impl SectorBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, state: &BasisState) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }
}

/// All occupation/photon states with `n_atoms` atoms and excitation number
/// `m_total`, ordered lexicographically by `(n3, n2)`.
pub fn enumerate_sector(config: Configuration, n_atoms: u32, m_total: i64) -> SectorBasis {
    let w = excitation_weights(config).level_weights;
    let mut states = Vec::new();
    if m_total >= 0 {
        for n3 in 0..=n_atoms {
            for n2 in 0..=(n_atoms - n3) {
                let atomic = (w[1] * n2 + w[2] * n3) as i64;
                if atomic <= m_total {
                    states.push(BasisState {
                        n1: n_atoms - n2 - n3,
                        n2,
                        n3,
                        photons: (m_total - atomic) as u32,
                    });
                }
            }
        }
    }
    SectorBasis {
        config,
        n_atoms,
        m_total,
        states,
    }
}

fn diagonal_energy(state: &BasisState, params: &ModelParams) -> f64 {
    state.photons as f64
        + params.omega1 * state.n1 as f64
        + params.omega2 * state.n2 as f64
        + params.omega3 * state.n3 as f64
}

/// Off-diagonal action of the interaction on `state`, restricted to the
/// emission half `a† b_lo† b_hi` of each coupling: returns
/// `(target, element)` with the target one photon up and one atom moved from
/// the upper to the lower level. The absorption half is the transpose.
fn emissions(state: &BasisState, params: &ModelParams) -> Vec<(BasisState, f64)> {
    let scale = 1.0 / (params.n_atoms as f64).sqrt();
    let occ = state.occupations();
    let mut out = Vec::with_capacity(3);
    for coupling in Coupling::ALL {
        let mu = params.coupling(coupling);
        if mu == 0.0 {
            continue;
        }
        let (lo, hi) = coupling.levels();
        if occ[hi] == 0 {
            continue;
        }
        let mut target = occ;
        target[hi] -= 1;
        target[lo] += 1;
        let element = -mu * scale
            * (occ[hi] as f64).sqrt()
            * ((occ[lo] + 1) as f64).sqrt()
            * ((state.photons + 1) as f64).sqrt();
        out.push((BasisState::with_occupations(target, state.photons + 1), element));
    }
    out
}

/// Assembles `H` on an arbitrary list of states. Matrix elements leading
/// outside the list are dropped. Both triangle entries come from the same
/// product, so the result is exactly symmetric.
fn assemble(states: &[BasisState], params: &ModelParams) -> DMatrix<f64> {
    let index: HashMap<BasisState, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let dim = states.len();
    let mut h = DMatrix::zeros(dim, dim);
    for (col, state) in states.iter().enumerate() {
        h[(col, col)] = diagonal_energy(state, params);
        for (target, element) in emissions(state, params) {
            if let Some(&row) = index.get(&target) {
                h[(row, col)] += element;
                h[(col, row)] += element;
            }
        }
    }
    h
}

pub fn build_hamiltonian(basis: &SectorBasis, params: &ModelParams) -> Result<DMatrix<f64>, QuantumError> {
    if basis.config != params.config || basis.n_atoms != params.n_atoms {
        return Err(QuantumError::DimensionMismatch {
            basis_config: basis.config,
            basis_atoms: basis.n_atoms,
            params_config: params.config,
            params_atoms: params.n_atoms,
        });
    }
    if basis.is_empty() {
        return Err(QuantumError::EmptyBasis);
    }
    Ok(assemble(&basis.states, params))
}

/// `||H v - E v||`.
pub fn residual(h: &DMatrix<f64>, energy: f64, vector: &DVector<f64>) -> f64 {
    (h * vector - vector * energy).norm()
}

/// Lowest eigenpair; the eigenvector is normalized with its largest-magnitude
/// component positive.
pub fn sector_ground(basis: &SectorBasis, params: &ModelParams) -> Result<(f64, DVector<f64>), QuantumError> {
    let h = build_hamiltonian(basis, params)?;
    let eig = SymmetricEigen::new(h.clone());
    let (idx, &energy) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(QuantumError::EmptyBasis)?;
    let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
    v /= v.norm();
    let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    if pivot < 0.0 {
        v.neg_mut();
    }
    let res = residual(&h, energy, &v);
    if res.is_nan() || res > 1e-10 * energy.abs().max(1.0) {
        return Err(QuantumError::EigenFailure { residual: res });
    }
    Ok((energy, v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Stop after this many consecutive sectors without improvement.
    pub window: u32,
    pub hard_cap: u32,
    /// Ties within this are resolved toward the smaller M.
    pub tie_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            window: 20,
            hard_cap: 500,
            tie_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateResult {
    /// Total energy (not per atom).
    pub energy: f64,
    pub m_star: u32,
    pub basis: SectorBasis,
    pub amplitudes: Vec<f64>,
    pub m_expectation: f64,
    pub sector_energies: BTreeMap<u32, f64>,
    pub converged: bool,
}

#[derive(Serialize)]
struct AmplitudeEntry {
    state: String,
    n1: u32,
    n2: u32,
    n3: u32,
    photons: u32,
    amplitude: f64,
}

#[derive(Serialize)]
struct GroundStateJson<'a> {
    energy: f64,
    m_star: u32,
    converged: bool,
    sector_energies: &'a BTreeMap<u32, f64>,
    top_amplitudes: Vec<AmplitudeEntry>,
}

impl GroundStateResult {
    /// JSON summary with the ten largest-magnitude amplitudes.
    pub fn to_json(&self) -> String {
        let mut idx: Vec<usize> = (0..self.amplitudes.len()).collect();
        idx.sort_by(|&a, &b| {
            self.amplitudes[b]
                .abs()
                .total_cmp(&self.amplitudes[a].abs())
                .then(a.cmp(&b))
        });
        let top_amplitudes = idx
            .into_iter()
            .take(10)
            .map(|i| {
                let s = self.basis.states[i];
                AmplitudeEntry {
                    state: s.label(),
                    n1: s.n1,
                    n2: s.n2,
                    n3: s.n3,
                    photons: s.photons,
                    amplitude: self.amplitudes[i],
                }
            })
            .collect();
        serde_json::to_string_pretty(&GroundStateJson {
            energy: self.energy,
            m_star: self.m_star,
            converged: self.converged,
            sector_energies: &self.sector_energies,
            top_amplitudes,
        })
        .expect("ground state serializes")
    }
}

/// Largest excitation number per atom any coherent state reaches at its
/// optimal field amplitude: the top level weight plus the largest photon
/// density, `(mu12^2 + mu13^2 + mu23^2) / 4` for any two couplings chained
/// through a shared level.
pub fn excitation_ceiling(params: &ModelParams) -> u32 {
    let w_max = *excitation_weights(params.config).level_weights.iter().max().unwrap_or(&0) as f64;
    let photons = (params.mu12.powi(2) + params.mu13.powi(2) + params.mu23.powi(2)) / 4.0;
    (params.n_atoms as f64 * (w_max + photons)).ceil().min(u32::MAX as f64 / 2.0) as u32
}

/// Scans sectors `M = 0, 1, 2, ...` in chunks of `window` (evaluated in
/// parallel). Stops once `window` consecutive sectors fail to improve the
/// minimum and the scan has passed [`excitation_ceiling`] by `window`:
/// near first-order lines the collective sector sits behind a barrier of
/// non-improving sectors whose width grows with `N`.
pub fn global_ground(params: &ModelParams, search: &SearchOptions) -> Result<GroundStateResult, QuantumError> {
    let params = validate(*params)?;
    let window = search.window.max(1);
    let floor = excitation_ceiling(&params).saturating_add(window);
    let mut sector_energies = BTreeMap::new();
    let mut best: Option<(u32, f64, DVector<f64>)> = None;
    let mut last_improvement = 0u32;
    let mut next = 0u32;
    let mut done = false;
    while !done && next <= search.hard_cap {
        let hi = (next + window - 1).min(search.hard_cap);
        let chunk: Vec<(u32, Result<(f64, DVector<f64>), QuantumError>)> = (next..=hi)
            .into_par_iter()
            .map(|m| {
                let basis = enumerate_sector(params.config, params.n_atoms, m as i64);
                (m, sector_ground(&basis, &params))
            })
            .collect();
        for (m, res) in chunk {
            let (e, v) = res?;
            sector_energies.insert(m, e);
            let improves = match &best {
                None => true,
                Some((_, be, _)) => e < be - search.tie_tol,
            };
            if improves {
                best = Some((m, e, v));
                last_improvement = m;
            } else if m - last_improvement >= window && m >= floor.min(search.hard_cap) {
                done = true;
                break;
            }
        }
        next = hi + 1;
    }
    let (m_star, energy, v) = best.expect("sector 0 is never empty");
    let basis = enumerate_sector(params.config, params.n_atoms, m_star as i64);
    let result = GroundStateResult {
        energy,
        m_star,
        basis,
        amplitudes: v.iter().copied().collect(),
        m_expectation: m_star as f64,
        sector_energies,
        converged: done,
    };
    if !done {
        return Err(QuantumError::CapReached {
            best: Box::new(result),
            cap: search.hard_cap,
        });
    }
    Ok(result)
}

/// Closed-form one-atom ladder energy at resonance, `M - sqrt(M mu12^2 + (M-1) mu23^2)`.
pub fn analytic_one_atom_xi(m_total: i64, mu12: f64, mu23: f64) -> Result<f64, QuantumError> {
    if m_total < 1 {
        return Err(QuantumError::InvalidSector(m_total));
    }
    let m = m_total as f64;
    Ok(m - (m * mu12 * mu12 + (m - 1.0) * mu23 * mu23).sqrt())
}

/// Largest matrix element connecting different excitation sectors when the
/// full interaction (all three couplings as given, no validation) acts on the
/// union of sectors `sample_m - 1 ..= sample_m + 1`.
pub fn commutant_check(params: &ModelParams, n_atoms: u32, sample_m: i64) -> f64 {
    let params = ModelParams { n_atoms, ..*params };
    let weights = excitation_weights(params.config);
    let states: Vec<BasisState> = (sample_m - 1..=sample_m + 1)
        .flat_map(|m| enumerate_sector(params.config, n_atoms, m).states)
        .collect();
    let h = assemble(&states, &params);
    let m_of: Vec<u32> = states.iter().map(|s| weights.count(s.occupations(), s.photons)).collect();
    let mut worst = 0.0f64;
    for r in 0..states.len() {
        for c in 0..states.len() {
            if m_of[r] != m_of[c] {
                worst = worst.max(h[(r, c)].abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn enumerate_examples() {
        let b = enumerate_sector(Configuration::Xi, 1, 1);
        assert_eq!(
            b.states,
            vec![
                BasisState { n1: 1, n2: 0, n3: 0, photons: 1 },
                BasisState { n1: 0, n2: 1, n3: 0, photons: 0 },
            ]
        );
        assert_eq!(enumerate_sector(Configuration::Xi, 1, 2).dim(), 3);
        let b = enumerate_sector(Configuration::Lambda, 1, 0);
        assert_eq!(
            b.states,
            vec![
                BasisState { n1: 1, n2: 0, n3: 0, photons: 0 },
                BasisState { n1: 0, n2: 1, n3: 0, photons: 0 },
            ]
        );
        assert!(enumerate_sector(Configuration::V, 3, -1).is_empty());
    }

    #[test]
    fn brute_force_sector_counts() {
        for config in Configuration::ALL {
            let w = excitation_weights(config);
            for n in 1..=4u32 {
                for m in 0..=12i64 {
                    let mut count = 0;
                    for n1 in 0..=n {
                        for n2 in 0..=n {
                            for n3 in 0..=n {
                                for nu in 0..=12u32 {
                                    if n1 + n2 + n3 == n && w.count([n1, n2, n3], nu) as i64 == m {
                                        count += 1;
                                    }
                                }
                            }
                        }
                    }
                    let basis = enumerate_sector(config, n, m);
                    assert_eq!(basis.dim(), count, "{config} N={n} M={m}");
                    let mut sorted = basis.states.clone();
                    sorted.sort_by_key(|s| (s.n3, s.n2));
                    assert_eq!(sorted, basis.states);
                }
            }
        }
    }

    #[test]
    fn one_atom_ladder_matrix() {
        let mu = 0.7;
        let p = ModelParams::xi_resonant(mu, 0.3, 1);
        let h = build_hamiltonian(&enumerate_sector(Configuration::Xi, 1, 1), &p).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[1.0, -mu, -mu, 1.0]));
        let (e, _) = sector_ground(&enumerate_sector(Configuration::Xi, 1, 1), &p).unwrap();
        assert_abs_diff_eq!(e, 1.0 - mu, epsilon = 1e-14);
    }

    #[test]
    fn one_atom_m2() {
        let p = ModelParams::xi_resonant(1.0, 1.0, 1);
        let (e, _) = sector_ground(&enumerate_sector(Configuration::Xi, 1, 2), &p).unwrap();
        assert_abs_diff_eq!(e, 2.0 - 3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(analytic_one_atom_xi(2, 1.0, 1.0).unwrap(), 2.0 - 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn analytic_examples() {
        assert_eq!(analytic_one_atom_xi(1, 1.0, 7.0).unwrap(), 0.0);
        assert_eq!(analytic_one_atom_xi(1, 0.0, 0.0).unwrap(), 1.0);
        assert!(matches!(analytic_one_atom_xi(0, 1.0, 1.0), Err(QuantumError::InvalidSector(0))));
    }

    #[test]
    fn free_hamiltonian_is_diagonal() {
        let p = ModelParams::new(Configuration::V, [0.0, 0.6, 1.4], 3);
        let basis = enumerate_sector(Configuration::V, 3, 4);
        let h = build_hamiltonian(&basis, &p).unwrap();
        for (i, s) in basis.states.iter().enumerate() {
            for j in 0..basis.dim() {
                let expected = if i == j { diagonal_energy(s, &p) } else { 0.0 };
                assert_abs_diff_eq!(h[(i, j)], expected, epsilon = 1e-14);
            }
        }
        let (e, v) = sector_ground(&basis, &p).unwrap();
        let min = basis.states.iter().map(|s| diagonal_energy(s, &p)).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(e, min, epsilon = 1e-13);
        assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_irrep_elements_spot_check() {
        // Two atoms, ladder: <n1=1,n2=1; nu=1| a† A12 |n1=0,n2=2; nu=0>
        // = sqrt(1) * sqrt(n2=2) * sqrt(n1+1=1) = sqrt(2), times -mu12/sqrt(2).
        let p = ModelParams::xi_resonant(0.9, 0.0, 2);
        let basis = enumerate_sector(Configuration::Xi, 2, 2);
        let h = build_hamiltonian(&basis, &p).unwrap();
        let from = basis.index_of(&BasisState { n1: 0, n2: 2, n3: 0, photons: 0 }).unwrap();
        let to = basis.index_of(&BasisState { n1: 1, n2: 1, n3: 0, photons: 1 }).unwrap();
        assert_abs_diff_eq!(h[(to, from)], -0.9, epsilon = 1e-15);
        // <2,0,0;2| a† A12 |1,1,0;1> = sqrt(2) * sqrt(1) * sqrt(2) = 2, times -0.9/sqrt(2)
        let from2 = to;
        let to2 = basis.index_of(&BasisState { n1: 2, n2: 0, n3: 0, photons: 2 }).unwrap();
        assert_abs_diff_eq!(h[(to2, from2)], -0.9 * 2.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn mismatch_rejected() {
        let p = ModelParams::xi_resonant(1.0, 0.0, 2);
        let basis = enumerate_sector(Configuration::Xi, 3, 1);
        assert!(matches!(build_hamiltonian(&basis, &p), Err(QuantumError::DimensionMismatch { .. })));
        let basis = enumerate_sector(Configuration::V, 2, 1);
        assert!(matches!(build_hamiltonian(&basis, &p), Err(QuantumError::DimensionMismatch { .. })));
    }

    #[test]
    fn vacuum_ground_without_coupling() {
        for config in Configuration::ALL {
            let p = ModelParams::new(config, [0.0, 1.0, 2.0], 3);
            let g = global_ground(&p, &SearchOptions::default()).unwrap();
            assert_eq!(g.energy, 0.0);
            assert_eq!(g.m_star, 0);
        }
    }

    #[test]
    fn normal_region_two_atoms() {
        let g = global_ground(&ModelParams::xi_resonant(0.5, 0.0, 2), &SearchOptions::default()).unwrap();
        assert_eq!(g.m_star, 0);
        assert_eq!(g.energy, 0.0);
        assert!(g.converged);
    }

    #[test]
    fn cap_reached_is_flagged() {
        let search = SearchOptions { window: 20, hard_cap: 2, tie_tol: 1e-12 };
        match global_ground(&ModelParams::xi_resonant(2.0, 0.0, 1), &search) {
            Err(QuantumError::CapReached { best, cap }) => {
                assert_eq!(cap, 2);
                assert!(!best.converged);
                assert_eq!(best.sector_energies.len(), 3);
            }
            other => panic!("expected CapReached, got {other:?}"),
        }
    }

    #[test]
    fn collective_sector_behind_barrier_is_found() {
        // level 1 decoupled: every sector below the collective one is >= 0
        let p = ModelParams::xi_resonant(0.0, 2.5, 10);
        let g = global_ground(&p, &SearchOptions::default()).unwrap();
        assert!(g.m_star > 20, "M* = {}", g.m_star);
        assert!(g.energy < 0.0);
        assert!((1..=20).all(|m| g.sector_energies[&m] >= 0.0));
    }

    #[test]
    fn commutant_detects_forbidden_coupling() {
        let p = ModelParams::xi_resonant(0.8, 1.1, 2);
        assert_eq!(commutant_check(&p, 2, 3), 0.0);
        let broken = p.with_coupling(Coupling::Mu13, 0.5);
        assert!(commutant_check(&broken, 2, 3) > 0.1);
    }

    #[test]
    fn json_summary_has_top_amplitudes() {
        let g = global_ground(&ModelParams::xi_resonant(2.0, 1.0, 4), &SearchOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["m_star"].as_u64().unwrap() as u32, g.m_star);
        let top = v["top_amplitudes"].as_array().unwrap();
        assert_eq!(top.len(), g.amplitudes.len().min(10));
        let first = top[0]["amplitude"].as_f64().unwrap();
        assert!(first > 0.0);
    }
}
