//! Coherent-state energy surface, its global minimization, the closed-form
//! separatrices and numerical classification of the transition order.
//!
//! The reduced surface per atom is
//!
//! ```text
//! E(rb, r2, r3) = rb^2 + (w1 + w2 r3^2 + w3 r2^2) / D - 2 rb P / D
//! P = |mu12| r3 + |mu13| r2 + |mu23| r2 r3,    D = 1 + r2^2 + r3^2
//! ```
//!
//! where `rb` is the field amplitude per sqrt(N), `r3` weights level 2 and
//! `r2` weights level 3. Eliminating `rb = P / D` leaves a function of the
//! normalized level amplitudes `c = (1, r3, r2) / sqrt(D)` alone:
//! `F(c) = sum_k w_k c_k^2 - (|mu12| c1 c2 + |mu13| c1 c3 + |mu23| c2 c3)^2`.
//! `F` is homogeneous of degree zero in `c`, so it is minimized on projective
//! charts (one amplitude pinned to 1). The chart pinning level 1 is exactly the
//! `(r3, r2)` plane; the other two charts reach the boundary where level 1 is
//! empty, which is where the ladder and lambda minima sit when the couplings
//! out of level 1 vanish.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{excitation_weights, validate, Configuration, Coupling, ModelError, ModelParams};

#[derive(Debug, Error, Clone)]
pub enum SemiclassicalError {
    #[error("non-finite input to the energy surface")]
    NonFiniteInput,
    #[error("minimizer did not converge (gradient norm {grad_norm:.3e})")]
    NoConvergence {
        best: Box<SemiclassicalResult>,
        grad_norm: f64,
    },
    #[error("separatrix needs strictly positive gaps, got omega21 = {omega21}, omega31 = {omega31}")]
    DegenerateGap { omega21: f64, omega31: f64 },
    #[error("segment does not cross the separatrix (both ends are {0:?})")]
    NoCrossing(Phase),
    #[error("order classification ambiguous: jump {jump:.3e} too close to threshold {jump_tol:.1e}")]
    AmbiguousClassification { jump: f64, jump_tol: f64 },
    #[error("invalid coupling range: {0}")]
    InvalidRange(String),
    #[error(transparent)]
    InvalidParams(#[from] ModelError),
}

/// Reduced coherent-state coordinates. `rho2` and `rho3` are `+inf` only when
/// the minimum empties level 1 completely; `populations` in
/// [`SemiclassicalResult`] stay finite in that case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalPoint {
    pub rho_bar: f64,
    pub rho2: f64,
    pub rho3: f64,
}

impl VariationalPoint {
    pub const ORIGIN: VariationalPoint = VariationalPoint {
        rho_bar: 0.0,
        rho2: 0.0,
        rho3: 0.0,
    };

    pub fn new(rho_bar: f64, rho2: f64, rho3: f64) -> Self {
        VariationalPoint { rho_bar, rho2, rho3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Normal,
    Collective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalResult {
    pub energy_per_atom: f64,
    pub point: VariationalPoint,
    pub m_per_atom: f64,
    /// Fractional occupations of levels 1, 2, 3.
    pub populations: [f64; 3],
    pub photon_density: f64,
    pub phase_label: Phase,
    /// Another minimum ties with the reported one within `tie_tol`.
    pub degenerate: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Points per side of the coarse angular grid.
    pub grid_size: usize,
    pub n_starts: usize,
    pub grad_tol: f64,
    /// Points with `rho2, rho3` below this are reported as the origin.
    pub origin_tol: f64,
    pub tie_tol: f64,
    pub max_iter: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            grid_size: 64,
            n_starts: 5,
            grad_tol: 1e-9,
            origin_tol: 1e-6,
            tie_tol: 1e-12,
            max_iter: 500,
        }
    }
}

fn check_finite(values: &[f64]) -> Result<(), SemiclassicalError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SemiclassicalError::NonFiniteInput)
    }
}

/// Direct evaluation of the reduced energy surface (energy per atom).
pub fn energy_surface(point: VariationalPoint, params: &ModelParams) -> Result<f64, SemiclassicalError> {
    let VariationalPoint { rho_bar, rho2, rho3 } = point;
    check_finite(&[rho_bar, rho2, rho3])?;
    check_finite(&[params.omega1, params.omega2, params.omega3, params.mu12, params.mu13, params.mu23])?;
    let d = 1.0 + rho2 * rho2 + rho3 * rho3;
    let p = params.mu12.abs() * rho3 + params.mu13.abs() * rho2 + params.mu23.abs() * rho2 * rho3;
    let atomic = (params.omega1 + params.omega2 * rho3 * rho3 + params.omega3 * rho2 * rho2) / d;
    Ok(rho_bar * rho_bar + atomic - 2.0 * rho_bar * p / d)
}

/// Analytic partials of [`energy_surface`] with respect to `(rho_bar, rho2, rho3)`.
pub fn energy_surface_gradient(point: VariationalPoint, params: &ModelParams) -> Result<[f64; 3], SemiclassicalError> {
    let VariationalPoint { rho_bar, rho2, rho3 } = point;
    check_finite(&[rho_bar, rho2, rho3])?;
    let (a12, a13, a23) = (params.mu12.abs(), params.mu13.abs(), params.mu23.abs());
    let d = 1.0 + rho2 * rho2 + rho3 * rho3;
    let p = a12 * rho3 + a13 * rho2 + a23 * rho2 * rho3;
    let q = params.omega1 + params.omega2 * rho3 * rho3 + params.omega3 * rho2 * rho2;
    let dp2 = a13 + a23 * rho3;
    let dp3 = a12 + a23 * rho2;
    let d_rb = 2.0 * rho_bar - 2.0 * p / d;
    // d(q/d) = (dq d - q dd) / d^2 and the same for p/d
    let d_r2 = (2.0 * params.omega3 * rho2 * d - q * 2.0 * rho2) / (d * d)
        - 2.0 * rho_bar * (dp2 * d - p * 2.0 * rho2) / (d * d);
    let d_r3 = (2.0 * params.omega2 * rho3 * d - q * 2.0 * rho3) / (d * d)
        - 2.0 * rho_bar * (dp3 * d - p * 2.0 * rho3) / (d * d);
    Ok([d_rb, d_r2, d_r3])
}

/// Field amplitude per sqrt(N) that minimizes the surface at fixed `(rho2, rho3)`.
pub fn optimal_field_amplitude(rho2: f64, rho3: f64, params: &ModelParams) -> f64 {
    let d = 1.0 + rho2 * rho2 + rho3 * rho3;
    (params.mu12.abs() * rho3 + params.mu13.abs() * rho2 + params.mu23.abs() * rho2 * rho3) / d
}

/// `F(u)` on unnormalized level amplitudes, measured from `omega1`.
#[derive(Debug, Clone, Copy)]
struct Surface {
    gaps: [f64; 3],
    a12: f64,
    a13: f64,
    a23: f64,
}

impl Surface {
    fn new(params: &ModelParams) -> Self {
        Surface {
            gaps: [0.0, params.omega21(), params.omega31()],
            a12: params.mu12.abs(),
            a13: params.mu13.abs(),
            a23: params.mu23.abs(),
        }
    }

    fn coupling(&self, u: &[f64; 3]) -> f64 {
        self.a12 * u[0] * u[1] + self.a13 * u[0] * u[2] + self.a23 * u[1] * u[2]
    }

    fn value(&self, u: &[f64; 3]) -> f64 {
        let n2 = u.iter().map(|x| x * x).sum::<f64>();
        let q = (0..3).map(|k| self.gaps[k] * u[k] * u[k]).sum::<f64>();
        let p = self.coupling(u);
        q / n2 - p * p / (n2 * n2)
    }

    fn gradient(&self, u: &[f64; 3]) -> [f64; 3] {
        let n2 = u.iter().map(|x| x * x).sum::<f64>();
        let q = (0..3).map(|k| self.gaps[k] * u[k] * u[k]).sum::<f64>();
        let p = self.coupling(u);
        let dp = [
            self.a12 * u[1] + self.a13 * u[2],
            self.a12 * u[0] + self.a23 * u[2],
            self.a13 * u[0] + self.a23 * u[1],
        ];
        let n4 = n2 * n2;
        let mut g = [0.0; 3];
        for k in 0..3 {
            g[k] = 2.0 * self.gaps[k] * u[k] / n2 - 2.0 * q * u[k] / n4 - 2.0 * p * dp[k] / n4
                + 4.0 * p * p * u[k] / (n4 * n2);
        }
        g
    }

    /// Rounding level of [`Surface::value`]: it is a difference of terms of
    /// size up to the largest gap plus the squared coupling sum.
    fn value_noise(&self) -> f64 {
        let couplings = self.a12 + self.a13 + self.a23;
        16.0 * f64::EPSILON * (self.gaps[1].max(self.gaps[2]) + couplings * couplings).max(1.0)
    }

    /// Hessian at the origin in the level-1 chart, coordinates `(u2, u3)`.
    fn origin_hessian(&self) -> [[f64; 2]; 2] {
        [
            [2.0 * (self.gaps[1] - self.a12 * self.a12), -2.0 * self.a12 * self.a13],
            [-2.0 * self.a12 * self.a13, 2.0 * (self.gaps[2] - self.a13 * self.a13)],
        ]
    }
}

/// Projective chart: amplitude `pinned` fixed to 1, the other two free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Chart {
    pinned: usize,
}

impl Chart {
    fn free(self) -> (usize, usize) {
        match self.pinned {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    fn embed(self, z: [f64; 2]) -> [f64; 3] {
        let (i, j) = self.free();
        let mut u = [0.0; 3];
        u[self.pinned] = 1.0;
        u[i] = z[0];
        u[j] = z[1];
        u
    }

    fn project(self, u: &[f64; 3]) -> [f64; 2] {
        let (i, j) = self.free();
        [u[i] / u[self.pinned], u[j] / u[self.pinned]]
    }

    fn best_for(u: &[f64; 3]) -> Chart {
        let mut pinned = 0;
        for k in 1..3 {
            if u[k].abs() > u[pinned].abs() * (1.0 + 1e-12) {
                pinned = k;
            }
        }
        Chart { pinned }
    }
}

fn chart_value(s: &Surface, chart: Chart, z: [f64; 2]) -> f64 {
    s.value(&chart.embed(z))
}

fn chart_gradient(s: &Surface, chart: Chart, z: [f64; 2]) -> [f64; 2] {
    let g = s.gradient(&chart.embed(z));
    let (i, j) = chart.free();
    [g[i], g[j]]
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn chart_hessian(s: &Surface, chart: Chart, z: [f64; 2]) -> [[f64; 2]; 2] {
    if chart.pinned == 0 && z == [0.0, 0.0] {
        return s.origin_hessian();
    }
    let h = 1e-6;
    let mut out = [[0.0; 2]; 2];
    for col in 0..2 {
        let mut zp = z;
        let mut zm = z;
        zp[col] += h;
        zm[col] -= h;
        let gp = chart_gradient(s, chart, zp);
        let gm = chart_gradient(s, chart, zm);
        for row in 0..2 {
            out[row][col] = (gp[row] - gm[row]) / (2.0 * h);
        }
    }
    let off = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = off;
    out[1][0] = off;
    out
}

/// Smallest eigenpair of a symmetric 2x2 matrix.
fn lowest_eigen2(m: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + d);
    let r = (0.5 * (a - d)).hypot(b);
    let lambda = mean - r;
    let v = if b.abs() > 1e-300 {
        [b, lambda - a]
    } else if a <= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = norm2(v);
    (lambda, [v[0] / n, v[1] / n])
}

#[derive(Debug, Clone, Copy)]
struct LocalMin {
    u: [f64; 3],
    value: f64,
    grad_norm: f64,
}

/// BFGS with backtracking in one chart; returns the final coordinates.
fn bfgs(s: &Surface, chart: Chart, z0: [f64; 2], opts: &MinimizeOptions) -> [f64; 2] {
    let mut z = z0;
    let mut f = chart_value(s, chart, z);
    let mut g = chart_gradient(s, chart, z);
    let mut hinv = [[1.0, 0.0], [0.0, 1.0]];
    let target = opts.grad_tol * 1e-2;
    for _ in 0..opts.max_iter {
        if norm2(g) < target || z[0].abs() > 1.5 || z[1].abs() > 1.5 {
            break;
        }
        let mut p = [
            -(hinv[0][0] * g[0] + hinv[0][1] * g[1]),
            -(hinv[1][0] * g[0] + hinv[1][1] * g[1]),
        ];
        let mut slope = p[0] * g[0] + p[1] * g[1];
        if slope >= 0.0 {
            hinv = [[1.0, 0.0], [0.0, 1.0]];
            p = [-g[0], -g[1]];
            slope = -(g[0] * g[0] + g[1] * g[1]);
        }
        let plen = norm2(p);
        let mut alpha = if plen > 0.5 { 0.5 / plen } else { 1.0 };
        let mut accepted = None;
        for _ in 0..80 {
            let zn = [z[0] + alpha * p[0], z[1] + alpha * p[1]];
            let fn_ = chart_value(s, chart, zn);
            if fn_ <= f + 1e-4 * alpha * slope {
                accepted = Some((zn, fn_));
                break;
            }
            alpha *= 0.5;
        }
        let Some((zn, fn_)) = accepted else { break };
        let gn = chart_gradient(s, chart, zn);
        let sv = [zn[0] - z[0], zn[1] - z[1]];
        let yv = [gn[0] - g[0], gn[1] - g[1]];
        let sy = sv[0] * yv[0] + sv[1] * yv[1];
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = [
                hinv[0][0] * yv[0] + hinv[0][1] * yv[1],
                hinv[1][0] * yv[0] + hinv[1][1] * yv[1],
            ];
            let yhy = yv[0] * hy[0] + yv[1] * hy[1];
            for r in 0..2 {
                for c in 0..2 {
                    hinv[r][c] += -rho * (hy[r] * sv[c] + sv[r] * hy[c]) + (rho * rho * yhy + rho) * sv[r] * sv[c];
                }
            }
        }
        let stalled = fn_ >= f && norm2(sv) < 1e-15;
        z = zn;
        f = fn_;
        g = gn;
        if stalled {
            break;
        }
    }
    z
}

/// Newton steps with a finite-difference Hessian; only accepted when they
/// lower the gradient norm without raising the value.
fn newton_polish(s: &Surface, chart: Chart, mut z: [f64; 2], opts: &MinimizeOptions) -> [f64; 2] {
    for _ in 0..8 {
        let g = chart_gradient(s, chart, z);
        if norm2(g) < opts.grad_tol * 1e-3 {
            break;
        }
        let h = chart_hessian(s, chart, z);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(h[0][0] > 0.0 && det > 0.0) {
            break;
        }
        let step = [
            -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
            -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
        ];
        let zn = [z[0] + step[0], z[1] + step[1]];
        let gn = chart_gradient(s, chart, zn);
        if norm2(gn) < norm2(g) && chart_value(s, chart, zn) <= chart_value(s, chart, z) + s.value_noise() {
            z = zn;
        } else {
            break;
        }
    }
    z
}

fn local_minimize(s: &Surface, start: [f64; 3], opts: &MinimizeOptions) -> LocalMin {
    let mut u = start;
    for _ in 0..12 {
        let chart = Chart::best_for(&u);
        let mut z = chart.project(&u);
        z = bfgs(s, chart, z, opts);
        let drifted = Chart::best_for(&chart.embed(z)) != chart;
        if drifted {
            u = chart.embed(z);
            continue;
        }
        z = newton_polish(s, chart, z, opts);
        u = chart.embed(z);

        // escape saddles (the origin above threshold is the typical one)
        let (lambda, dir) = lowest_eigen2(chart_hessian(s, chart, z));
        if lambda < -1e-10 {
            let f0 = chart_value(s, chart, z);
            let mut best: Option<([f64; 2], f64)> = None;
            let mut step = 0.3;
            while step > 1e-7 {
                for sign in [1.0, -1.0] {
                    let zn = [z[0] + sign * step * dir[0], z[1] + sign * step * dir[1]];
                    let fv = chart_value(s, chart, zn);
                    if fv < f0 && best.is_none_or(|(_, bf)| fv < bf) {
                        best = Some((zn, fv));
                    }
                }
                step /= 3.0;
            }
            if let Some((zn, _)) = best {
                u = chart.embed(zn);
                continue;
            }
        }
        break;
    }
    let chart = Chart::best_for(&u);
    let z = chart.project(&u);
    let u = chart.embed(z);
    LocalMin {
        u,
        value: s.value(&u),
        grad_norm: norm2(chart_gradient(s, chart, z)),
    }
}

fn normalized_abs(u: &[f64; 3]) -> [f64; 3] {
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    [u[0].abs() / n, u[1].abs() / n, u[2].abs() / n]
}

fn result_from(
    s: &Surface,
    params: &ModelParams,
    m: &LocalMin,
    opts: &MinimizeOptions,
    degenerate: bool,
) -> SemiclassicalResult {
    let w = excitation_weights(params.config).level_weights;
    let c = normalized_abs(&m.u);
    let (rho2, rho3) = if c[0] > 0.0 {
        (c[2] / c[0], c[1] / c[0])
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    if rho2 < opts.origin_tol && rho3 < opts.origin_tol {
        return SemiclassicalResult {
            energy_per_atom: params.omega1,
            point: VariationalPoint::ORIGIN,
            m_per_atom: 0.0,
            populations: [1.0, 0.0, 0.0],
            photon_density: 0.0,
            phase_label: Phase::Normal,
            degenerate,
            grad_norm: m.grad_norm,
        };
    }
    let rho_bar = s.coupling(&c);
    let populations = [c[0] * c[0], c[1] * c[1], c[2] * c[2]];
    let photon_density = rho_bar * rho_bar;
    let m_per_atom = photon_density
        + (0..3).map(|k| w[k] as f64 * populations[k]).sum::<f64>();
    SemiclassicalResult {
        energy_per_atom: params.omega1 + m.value,
        point: VariationalPoint { rho_bar, rho2, rho3 },
        m_per_atom,
        populations,
        photon_density,
        phase_label: Phase::Collective,
        degenerate,
        grad_norm: m.grad_norm,
    }
}

fn angle_point(theta: f64, phi: f64) -> [f64; 3] {
    [theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()]
}

/// Global minimum of the energy surface: coarse angular grid over the
/// positive octant of level amplitudes, then quasi-Newton refinement from the
/// best grid-local minima.
pub fn minimize(params: &ModelParams, opts: &MinimizeOptions) -> Result<SemiclassicalResult, SemiclassicalError> {
    let params = validate(*params)?;
    let s = Surface::new(&params);
    let n = opts.grid_size.max(3);
    let step = FRAC_PI_2 / (n - 1) as f64;
    let grid: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            s.value(&angle_point(i as f64 * step, j as f64 * step))
        })
        .collect();

    let at = |i: usize, j: usize| grid[i * n + j];
    let mut local: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        for j in 0..n {
            let v = at(i, j);
            let mut is_min = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                        continue;
                    }
                    if at(ii as usize, jj as usize) < v {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                local.push((i, j));
            }
        }
    }
    let by_value = |a: &(usize, usize), b: &(usize, usize)| {
        at(a.0, a.1)
            .partial_cmp(&at(b.0, b.1))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    local.sort_by(by_value);
    let mut cells: Vec<(usize, usize)> = local.into_iter().take(opts.n_starts).collect();
    if cells.len() < opts.n_starts {
        let mut rest: Vec<(usize, usize)> = (1..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|c| !cells.contains(c))
            .collect();
        rest.sort_by(by_value);
        cells.extend(rest.into_iter().take(opts.n_starts - cells.len()));
    }

    // the origin (theta = 0 row) is always a candidate
    let mut starts = vec![[1.0, 0.0, 0.0]];
    starts.extend(cells.iter().map(|&(i, j)| angle_point(i as f64 * step, j as f64 * step)));

    let minima: Vec<LocalMin> = starts.iter().map(|u| local_minimize(&s, *u, opts)).collect();
    let best_value = minima.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
    let w = excitation_weights(params.config).level_weights;
    let m_of = |m: &LocalMin| {
        let c = normalized_abs(&m.u);
        let rb = s.coupling(&c);
        rb * rb + (0..3).map(|k| w[k] as f64 * c[k] * c[k]).sum::<f64>()
    };
    let mut tied: Vec<&LocalMin> = minima.iter().filter(|m| m.value <= best_value + opts.tie_tol).collect();
    tied.sort_by(|a, b| m_of(a).partial_cmp(&m_of(b)).unwrap_or(Ordering::Equal));
    let chosen = *tied[0];
    let chosen_c = normalized_abs(&chosen.u);
    let degenerate = tied.iter().any(|m| {
        let c = normalized_abs(&m.u);
        (0..3).any(|k| (c[k] - chosen_c[k]).abs() > 1e-4)
    });

    let result = result_from(&s, &params, &chosen, opts, degenerate);
    if result.phase_label == Phase::Collective && chosen.grad_norm > opts.grad_tol {
        return Err(SemiclassicalError::NoConvergence {
            grad_norm: chosen.grad_norm,
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Sampling range of the driving coupling when tracing a separatrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRange {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl CouplingRange {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        CouplingRange { min, max, steps }
    }

    pub fn check(&self) -> Result<(), SemiclassicalError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(SemiclassicalError::InvalidRange(format!("[{}, {}]", self.min, self.max)));
        }
        if self.steps < 2 {
            return Err(SemiclassicalError::InvalidRange(format!("{} steps", self.steps)));
        }
        Ok(())
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.steps {
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps).map(move |i| self.value(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatrixSegment {
    /// `(x, y)` points in the configuration's coupling plane.
    pub points: Vec<(f64, f64)>,
    pub order: Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatrixCurve {
    pub config: Configuration,
    pub x_axis: Coupling,
    pub y_axis: Coupling,
    pub segments: Vec<SeparatrixSegment>,
}

impl SeparatrixCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu_x,mu_y,order_label\n");
        for seg in &self.segments {
            let label = match seg.order {
                Order::First => "first",
                Order::Second => "second",
            };
            for (x, y) in &seg.points {
                out.push_str(&format!("{},{},{}\n", crate::scan::fmt_f64(*x), crate::scan::fmt_f64(*y), label));
            }
        }
        out
    }
}

/// Level gaps; only the V ellipse divides by them, so only V needs both
/// strictly positive.
fn gaps(config: Configuration, params: &ModelParams) -> Result<(f64, f64), SemiclassicalError> {
    let (omega21, omega31) = (params.omega21(), params.omega31());
    if config == Configuration::V && !(omega21 > 0.0 && omega31 > 0.0) {
        return Err(SemiclassicalError::DegenerateGap { omega21, omega31 });
    }
    Ok((omega21, omega31))
}

/// Threshold on `|y|` beyond which the ladder/lambda boundary bends onto
/// the circular arc (`None` for V, which is a single ellipse).
fn kink(config: Configuration, omega21: f64, omega31: f64) -> Option<f64> {
    match config {
        Configuration::Xi => Some(omega31.sqrt()),
        Configuration::Lambda => Some(omega21.sqrt()),
        Configuration::V => None,
    }
}

/// Order of the transition where the boundary passes height `y`.
pub fn boundary_order(config: Configuration, params: &ModelParams, y: f64) -> Result<Order, SemiclassicalError> {
    let (omega21, omega31) = gaps(config, params)?;
    Ok(match kink(config, omega21, omega31) {
        Some(k) if y.abs() > k => Order::First,
        _ => Order::Second,
    })
}

/// Left-hand side minus right-hand side of the closed-form boundary relation
/// at `(x, y)` in the configuration's coupling plane.
pub fn separatrix_residual(config: Configuration, params: &ModelParams, x: f64, y: f64) -> Result<f64, SemiclassicalError> {
    let (omega21, omega31) = gaps(config, params)?;
    let heaviside_sq = |excess: f64| if excess > 0.0 { excess * excess } else { 0.0 };
    Ok(match config {
        Configuration::Xi => x * x + heaviside_sq(y.abs() - omega31.sqrt()) - omega21,
        Configuration::Lambda => x * x + heaviside_sq(y.abs() - omega21.sqrt()) - omega31,
        Configuration::V => x * x / omega21 + y * y / omega31 - 1.0,
    })
}

/// Nonnegative boundary value of the x-axis coupling at height `y`, or `None`
/// when the normal region does not reach that height.
pub fn critical_coupling(config: Configuration, params: &ModelParams, y: f64) -> Result<Option<f64>, SemiclassicalError> {
    let (omega21, omega31) = gaps(config, params)?;
    let (radius_sq, excess) = match config {
        Configuration::Xi => (omega21, (y.abs() - omega31.sqrt()).max(0.0)),
        Configuration::Lambda => (omega31, (y.abs() - omega21.sqrt()).max(0.0)),
        Configuration::V => {
            let frac = 1.0 - y * y / omega31;
            return Ok((frac >= 0.0).then(|| (omega21 * frac).sqrt()));
        }
    };
    let rem = radius_sq - excess * excess;
    Ok((rem >= 0.0).then(|| rem.sqrt()))
}

/// Samples the normal/collective boundary over `range` of the y-axis
/// coupling (mu23 for ladder and lambda, mu13 for V).
pub fn separatrix(config: Configuration, params: &ModelParams, range: CouplingRange) -> Result<SeparatrixCurve, SemiclassicalError> {
    range.check()?;
    let (x_axis, y_axis) = config.axes();
    let mut segments: Vec<SeparatrixSegment> = Vec::new();
    let mut last_y_present = false;
    for y in range.values() {
        let Some(x) = critical_coupling(config, params, y)? else {
            last_y_present = false;
            continue;
        };
        let order = boundary_order(config, params, y)?;
        match segments.last_mut() {
            Some(seg) if last_y_present && seg.order == order => seg.points.push((x, y)),
            _ => segments.push(SeparatrixSegment {
                points: vec![(x, y)],
                order,
            }),
        }
        last_y_present = true;
    }
    Ok(SeparatrixCurve {
        config,
        x_axis,
        y_axis,
        segments,
    })
}

/// A straight path in the configuration's coupling plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingSegment {
    pub from: (f64, f64),
    pub to: (f64, f64),
}

impl CrossingSegment {
    pub fn new(from: (f64, f64), to: (f64, f64)) -> Self {
        CrossingSegment { from, to }
    }

    fn at(&self, t: f64) -> (f64, f64) {
        (
            self.from.0 + t * (self.to.0 - self.from.0),
            self.from.1 + t * (self.to.1 - self.from.1),
        )
    }

    fn length(&self) -> f64 {
        (self.to.0 - self.from.0).hypot(self.to.1 - self.from.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOptions {
    pub jump_tol: f64,
    /// Offsets from the crossing, in coupling units, largest first.
    pub offsets: Vec<f64>,
    pub minimize: MinimizeOptions,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            jump_tol: 1e-3,
            offsets: (2..=10).map(|k| 10f64.powi(-k)).collect(),
            minimize: MinimizeOptions::default(),
        }
    }
}

/// Parameters at a point of the coupling plane.
pub fn params_at(config: Configuration, params: &ModelParams, (x, y): (f64, f64)) -> ModelParams {
    let (xa, ya) = config.axes();
    let mut p = *params;
    p.config = config;
    p.with_coupling(xa, x).with_coupling(ya, y)
}

/// Locates where `crossing` leaves/enters the normal phase by bisection and
/// watches the field amplitude on both sides at shrinking offsets.
pub fn classify_order(
    config: Configuration,
    params: &ModelParams,
    crossing: CrossingSegment,
    opts: &ClassifyOptions,
) -> Result<Order, SemiclassicalError> {
    let eval = |t: f64| minimize(&params_at(config, params, crossing.at(t)), &opts.minimize);
    let start = eval(0.0)?.phase_label;
    let end = eval(1.0)?.phase_label;
    if start == end {
        return Err(SemiclassicalError::NoCrossing(start));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        if hi - lo < 1e-14 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eval(mid)?.phase_label == start {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tc = 0.5 * (lo + hi);
    let len = crossing.length();
    let amplitude = |delta: f64| -> Result<(f64, f64), SemiclassicalError> {
        let dt = delta / len;
        Ok((eval(tc - dt)?.point.rho_bar, eval(tc + dt)?.point.rho_bar))
    };
    let mut offsets = opts.offsets.clone();
    offsets.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let smallest = *offsets.last().ok_or(SemiclassicalError::InvalidRange("no offsets".into()))?;
    let (before, after) = amplitude(smallest)?;
    let jump = (after - before).abs();
    if jump > 10.0 * opts.jump_tol {
        return Ok(Order::First);
    }
    if jump >= 0.1 * opts.jump_tol {
        return Err(SemiclassicalError::AmbiguousClassification {
            jump,
            jump_tol: opts.jump_tol,
        });
    }
    // continuous: require a kink in the amplitude to call it a transition
    let (far_before, far_after) = amplitude(offsets[0])?;
    let span = offsets[0] - smallest;
    let slope_before = (before - far_before) / span;
    let slope_after = (far_after - after) / span;
    if (slope_after - slope_before).abs() > opts.jump_tol {
        Ok(Order::Second)
    } else {
        Err(SemiclassicalError::AmbiguousClassification {
            jump,
            jump_tol: opts.jump_tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn xi(mu12: f64, mu23: f64) -> ModelParams {
        ModelParams::xi_resonant(mu12, mu23, 1)
    }

    #[test]
    fn surface_direct_values() {
        let p = ModelParams::xi_resonant(1.0, 0.0, 1);
        assert_eq!(energy_surface(VariationalPoint::ORIGIN, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(energy_surface(VariationalPoint::new(1.0, 0.0, 1.0), &p).unwrap(), 0.5, epsilon = 1e-15);
        let p = ModelParams::new(Configuration::Lambda, [0.0, 1.0, 2.0], 1).with_coupling(Coupling::Mu13, 2.0);
        assert_abs_diff_eq!(energy_surface(VariationalPoint::new(1.0, 1.0, 0.0), &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn surface_rejects_nan() {
        let p = xi(1.0, 0.0);
        assert!(matches!(
            energy_surface(VariationalPoint::new(f64::NAN, 0.0, 0.0), &p),
            Err(SemiclassicalError::NonFiniteInput)
        ));
        assert!(energy_surface(VariationalPoint::new(0.0, f64::INFINITY, 0.0), &p).is_err());
    }

    #[test]
    fn field_amplitude_examples() {
        assert_eq!(optimal_field_amplitude(0.0, 0.0, &xi(2.0, 1.0)), 0.0);
        assert_abs_diff_eq!(optimal_field_amplitude(0.0, 1.0, &xi(2.0, 0.0)), 1.0, epsilon = 1e-15);
        let p = ModelParams::new(Configuration::Xi, [0.0, 1.0, 2.0], 1).with_coupling(Coupling::Mu23, 3.0);
        assert_abs_diff_eq!(optimal_field_amplitude(1.0, 1.0, &p), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn field_amplitude_is_stationary() {
        let p = ModelParams::new(Configuration::V, [0.0, 0.7, 1.1], 1)
            .with_coupling(Coupling::Mu12, 1.3)
            .with_coupling(Coupling::Mu13, -0.8);
        for &(r2, r3) in &[(0.3, 0.7), (1.5, 0.2), (0.0, 2.0)] {
            let rb = optimal_field_amplitude(r2, r3, &p);
            let g = energy_surface_gradient(VariationalPoint::new(rb, r2, r3), &p).unwrap();
            assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn chart_value_matches_reduced_surface() {
        // level-1 chart coordinates are (rho3, rho2)
        let p = ModelParams::new(Configuration::Xi, [0.2, 1.1, 2.5], 1)
            .with_coupling(Coupling::Mu12, 1.7)
            .with_coupling(Coupling::Mu23, 0.9);
        let s = Surface::new(&p);
        for &(r2, r3) in &[(0.1, 0.4), (2.0, 1.0), (0.0, 3.0)] {
            let rb = optimal_field_amplitude(r2, r3, &p);
            let direct = energy_surface(VariationalPoint::new(rb, r2, r3), &p).unwrap();
            let charted = p.omega1 + chart_value(&s, Chart { pinned: 0 }, [r3, r2]);
            assert_abs_diff_eq!(direct, charted, epsilon = 1e-13);
        }
    }

    #[test]
    fn chart_gradient_matches_finite_differences() {
        let p = ModelParams::new(Configuration::Lambda, [0.0, 0.5, 1.3], 1)
            .with_coupling(Coupling::Mu13, 1.4)
            .with_coupling(Coupling::Mu23, 2.1);
        let s = Surface::new(&p);
        for pinned in 0..3 {
            let chart = Chart { pinned };
            for &z in &[[0.3, -0.6], [0.9, 0.1], [-0.2, 0.8]] {
                let g = chart_gradient(&s, chart, z);
                for k in 0..2 {
                    let h = 1e-5;
                    let mut zp = z;
                    let mut zm = z;
                    zp[k] += h;
                    zm[k] -= h;
                    let fd = (chart_value(&s, chart, zp) - chart_value(&s, chart, zm)) / (2.0 * h);
                    assert_abs_diff_eq!(g[k], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn below_threshold_is_normal() {
        let r = minimize(&xi(0.5, 0.0), &MinimizeOptions::default()).unwrap();
        assert_eq!(r.phase_label, Phase::Normal);
        assert_eq!(r.energy_per_atom, 0.0);
        assert_eq!(r.point, VariationalPoint::ORIGIN);
    }

    #[test]
    fn two_level_closed_form() {
        let r = minimize(&xi(2.0, 0.0), &MinimizeOptions::default()).unwrap();
        assert_eq!(r.phase_label, Phase::Collective);
        assert_abs_diff_eq!(r.energy_per_atom, -9.0 / 16.0, epsilon = 1e-12);
        assert!(r.point.rho2.abs() < 1e-8);
        // x = rho3^2/(1+rho3^2) = (mu^2 - 1)/(2 mu^2) = 3/8
        let x = r.point.rho3.powi(2) / (1.0 + r.point.rho3.powi(2));
        assert_abs_diff_eq!(x, 3.0 / 8.0, epsilon = 1e-8);
        assert!(r.grad_norm < 1e-9);
    }

    #[test]
    fn v_inside_ellipse_is_normal() {
        let p = ModelParams::new(Configuration::V, [0.0, 1.0, 1.0], 1)
            .with_coupling(Coupling::Mu12, 0.4)
            .with_coupling(Coupling::Mu13, 0.4);
        let r = minimize(&p, &MinimizeOptions::default()).unwrap();
        assert_eq!(r.phase_label, Phase::Normal);
        assert_eq!(r.energy_per_atom, 0.0);
    }

    #[test]
    fn level_one_decoupled_minimum_sits_at_infinity() {
        // mu12 = 0: the optimum leaves level 1 empty; energy 2 - (1+mu^2)^2/(4 mu^2)
        let mu: f64 = 3.0;
        let r = minimize(&xi(0.0, mu), &MinimizeOptions::default()).unwrap();
        let expected = 2.0 - (1.0 + mu * mu).powi(2) / (4.0 * mu * mu);
        assert_abs_diff_eq!(r.energy_per_atom, expected, epsilon = 1e-12);
        assert!(r.populations[0] < 1e-10);
        assert_abs_diff_eq!(r.populations.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn populations_and_m_consistent() {
        let p = ModelParams::xi_resonant(1.4, 2.2, 1);
        let r = minimize(&p, &MinimizeOptions::default()).unwrap();
        assert_abs_diff_eq!(r.populations.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let m = r.photon_density + r.populations[1] + 2.0 * r.populations[2];
        assert_abs_diff_eq!(r.m_per_atom, m, epsilon = 1e-12);
        let e = energy_surface(r.point, &p).unwrap();
        assert_abs_diff_eq!(e, r.energy_per_atom, epsilon = 1e-11);
    }

    #[test]
    fn separatrix_examples() {
        let p = ModelParams::xi_resonant(0.0, 0.0, 1);
        assert_eq!(critical_coupling(Configuration::Xi, &p, 0.0).unwrap(), Some(1.0));
        assert_eq!(critical_coupling(Configuration::Xi, &p, 1.2).unwrap(), Some(1.0));
        assert_eq!(critical_coupling(Configuration::Xi, &p, 2.0f64.sqrt()).unwrap(), Some(1.0));
        assert_eq!(critical_coupling(Configuration::Xi, &p, 2.5).unwrap(), None);
        let v = ModelParams::new(Configuration::V, [0.0, 1.0, 1.0], 1);
        assert_abs_diff_eq!(critical_coupling(Configuration::V, &v, 0.6).unwrap().unwrap(), 0.8, epsilon = 1e-15);
        let l = ModelParams::new(Configuration::Lambda, [0.0, 0.5, 1.3], 1);
        assert_abs_diff_eq!(
            critical_coupling(Configuration::Lambda, &l, 0.0).unwrap().unwrap(),
            1.3f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn separatrix_segments_and_labels() {
        let p = ModelParams::xi_resonant(0.0, 0.0, 1);
        let curve = separatrix(Configuration::Xi, &p, CouplingRange::new(0.0, 3.0, 61)).unwrap();
        assert_eq!(curve.segments.len(), 2);
        assert_eq!(curve.segments[0].order, Order::Second);
        assert_eq!(curve.segments[1].order, Order::First);
        for seg in &curve.segments {
            for &(x, y) in &seg.points {
                assert!(separatrix_residual(Configuration::Xi, &p, x, y).unwrap().abs() < 1e-12);
            }
        }
        let v = ModelParams::new(Configuration::V, [0.0, 1.0, 1.0], 1);
        let curve = separatrix(Configuration::V, &v, CouplingRange::new(0.0, 1.0, 11)).unwrap();
        assert_eq!(curve.segments.len(), 1);
        assert_eq!(curve.segments[0].order, Order::Second);
    }

    #[test]
    fn degenerate_gap_reported() {
        let p = ModelParams::new(Configuration::V, [0.0, 0.0, 1.0], 1);
        assert!(matches!(
            separatrix(Configuration::V, &p, CouplingRange::new(0.0, 1.0, 5)),
            Err(SemiclassicalError::DegenerateGap { .. })
        ));
        // the lambda boundary only takes square roots: a zero lower gap
        // turns it into the full circle of radius sqrt(omega31)
        let p = ModelParams::new(Configuration::Lambda, [0.0, 0.0, 1.0], 1);
        let curve = separatrix(Configuration::Lambda, &p, CouplingRange::new(0.0, 1.0, 5)).unwrap();
        let pts: Vec<(f64, f64)> = curve.segments.iter().flat_map(|s| s.points.clone()).collect();
        assert_eq!(pts.len(), 5);
        for (x, y) in pts {
            assert!((x * x + y * y - 1.0).abs() < 1e-12);
        }
        assert_eq!(curve.segments.last().unwrap().order, Order::First);
    }

    #[test]
    fn bad_range_rejected() {
        let p = ModelParams::xi_resonant(0.0, 0.0, 1);
        assert!(separatrix(Configuration::Xi, &p, CouplingRange::new(1.0, 0.0, 5)).is_err());
        assert!(separatrix(Configuration::Xi, &p, CouplingRange::new(0.0, 1.0, 1)).is_err());
    }

    #[test]
    fn classify_no_crossing() {
        let p = ModelParams::xi_resonant(0.0, 0.0, 1);
        let seg = CrossingSegment::new((0.1, 0.0), (0.5, 0.0));
        assert!(matches!(
            classify_order(Configuration::Xi, &p, seg, &ClassifyOptions::default()),
            Err(SemiclassicalError::NoCrossing(Phase::Normal))
        ));
    }
}
