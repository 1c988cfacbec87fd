//! Python bindings. Parameters are a mutable `ModelParams` class; the solvers
//! are module-level functions returning small result classes or plain tuples.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use trilevel::scan::{self, Engine, ScanSpec};
use trilevel::{Configuration, CouplingRange, MinimizeOptions, Order, Phase, SearchOptions};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_config(name: &str) -> PyResult<Configuration> {
    name.parse().map_err(value_err)
}

#[pyclass(name = "ModelParams", module = "pytrilevel", from_py_object)]
#[derive(Clone)]
pub struct PyModelParams {
    inner: trilevel::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (config, omega = (0.0, 1.0, 2.0), mu12 = 0.0, mu13 = 0.0, mu23 = 0.0, n_atoms = 1))]
    fn new(config: &str, omega: (f64, f64, f64), mu12: f64, mu13: f64, mu23: f64, n_atoms: u32) -> PyResult<Self> {
        let mut inner = trilevel::ModelParams::new(parse_config(config)?, [omega.0, omega.1, omega.2], n_atoms);
        inner.mu12 = mu12;
        inner.mu13 = mu13;
        inner.mu23 = mu23;
        Ok(PyModelParams {
            inner: inner.validate().map_err(value_err)?,
        })
    }

    /// Parses the flat `key = value` parameter format.
    #[staticmethod]
    fn from_kv(text: &str) -> PyResult<Self> {
        let inner = trilevel::ModelParams::from_kv_str(text).map_err(value_err)?;
        Ok(PyModelParams { inner })
    }

    fn to_kv(&self) -> String {
        self.inner.to_kv_string()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map(|_| ()).map_err(value_err)
    }

    #[getter]
    fn config(&self) -> String {
        self.inner.config.to_string()
    }

    #[getter]
    fn omega(&self) -> (f64, f64, f64) {
        let w = self.inner.omegas();
        (w[0], w[1], w[2])
    }

    #[setter]
    fn set_omega(&mut self, w: (f64, f64, f64)) {
        self.inner.omega1 = w.0;
        self.inner.omega2 = w.1;
        self.inner.omega3 = w.2;
    }

    #[getter]
    fn mu12(&self) -> f64 {
        self.inner.mu12
    }

    #[setter]
    fn set_mu12(&mut self, v: f64) {
        self.inner.mu12 = v;
    }

    #[getter]
    fn mu13(&self) -> f64 {
        self.inner.mu13
    }

    #[setter]
    fn set_mu13(&mut self, v: f64) {
        self.inner.mu13 = v;
    }

    #[getter]
    fn mu23(&self) -> f64 {
        self.inner.mu23
    }

    #[setter]
    fn set_mu23(&mut self, v: f64) {
        self.inner.mu23 = v;
    }

    #[getter]
    fn n_atoms(&self) -> u32 {
        self.inner.n_atoms
    }

    #[setter]
    fn set_n_atoms(&mut self, n: u32) {
        self.inner.n_atoms = n;
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(config='{}', omega=({}, {}, {}), mu12={}, mu13={}, mu23={}, n_atoms={})",
            p.config, p.omega1, p.omega2, p.omega3, p.mu12, p.mu13, p.mu23, p.n_atoms
        )
    }
}

#[pyclass(name = "SemiclassicalResult", module = "pytrilevel", frozen, get_all)]
pub struct PySemiclassicalResult {
    energy_per_atom: f64,
    rho_bar: f64,
    rho2: f64,
    rho3: f64,
    m_per_atom: f64,
    populations: (f64, f64, f64),
    photon_density: f64,
    phase: String,
    degenerate: bool,
    grad_norm: f64,
}

#[pymethods]
impl PySemiclassicalResult {
    fn __repr__(&self) -> String {
        format!(
            "SemiclassicalResult(energy_per_atom={}, phase='{}', m_per_atom={})",
            self.energy_per_atom, self.phase, self.m_per_atom
        )
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Normal => "normal",
        Phase::Collective => "collective",
    }
}

fn order_name(o: Order) -> &'static str {
    match o {
        Order::First => "first",
        Order::Second => "second",
    }
}

#[pyclass(name = "GroundState", module = "pytrilevel", frozen, get_all)]
pub struct PyGroundState {
    energy: f64,
    m_star: u32,
    m_expectation: f64,
    converged: bool,
    /// `(n1, n2, n3, photons)` per basis state of the winning sector.
    states: Vec<(u32, u32, u32, u32)>,
    amplitudes: Vec<f64>,
    sector_energies: BTreeMap<u32, f64>,
    json: String,
}

#[pymethods]
impl PyGroundState {
    fn to_json(&self) -> String {
        self.json.clone()
    }

    fn __repr__(&self) -> String {
        let converged = if self.converged { "True" } else { "False" };
        format!("GroundState(energy={}, m_star={}, converged={converged})", self.energy, self.m_star)
    }
}

/// Global minimum of the coherent-state energy surface.
#[pyfunction]
fn minimize(params: &PyModelParams) -> PyResult<PySemiclassicalResult> {
    let r = trilevel::minimize(&params.inner, &MinimizeOptions::default()).map_err(runtime_err)?;
    Ok(PySemiclassicalResult {
        energy_per_atom: r.energy_per_atom,
        rho_bar: r.point.rho_bar,
        rho2: r.point.rho2,
        rho3: r.point.rho3,
        m_per_atom: r.m_per_atom,
        populations: (r.populations[0], r.populations[1], r.populations[2]),
        photon_density: r.photon_density,
        phase: phase_name(r.phase_label).to_string(),
        degenerate: r.degenerate,
        grad_norm: r.grad_norm,
    })
}

/// Exact ground state over all excitation sectors.
#[pyfunction]
#[pyo3(signature = (params, window = 20, hard_cap = 500))]
fn global_ground(py: Python<'_>, params: &PyModelParams, window: u32, hard_cap: u32) -> PyResult<PyGroundState> {
    let search = SearchOptions {
        window,
        hard_cap,
        ..SearchOptions::default()
    };
    let p = params.inner;
    let g = py.detach(|| trilevel::global_ground(&p, &search)).map_err(runtime_err)?;
    Ok(PyGroundState {
        energy: g.energy,
        m_star: g.m_star,
        m_expectation: g.m_expectation,
        converged: g.converged,
        states: g.basis.states.iter().map(|s| (s.n1, s.n2, s.n3, s.photons)).collect(),
        amplitudes: g.amplitudes.clone(),
        sector_energies: g.sector_energies.clone(),
        json: g.to_json(),
    })
}

/// Basis of one excitation sector as `(n1, n2, n3, photons)` tuples.
#[pyfunction]
fn enumerate_sector(config: &str, n_atoms: u32, m: i64) -> PyResult<Vec<(u32, u32, u32, u32)>> {
    let basis = trilevel::enumerate_sector(parse_config(config)?, n_atoms, m);
    Ok(basis.states.iter().map(|s| (s.n1, s.n2, s.n3, s.photons)).collect())
}

/// Lowest eigenpair of sector `m`: `(energy, amplitudes)`.
#[pyfunction]
fn sector_ground(params: &PyModelParams, m: i64) -> PyResult<(f64, Vec<f64>)> {
    let p = params.inner.validate().map_err(value_err)?;
    let basis = trilevel::enumerate_sector(p.config, p.n_atoms, m);
    let (e, v) = trilevel::sector_ground(&basis, &p).map_err(runtime_err)?;
    Ok((e, v.iter().copied().collect()))
}

/// Sector Hamiltonian as a list of rows.
#[pyfunction]
fn sector_hamiltonian(params: &PyModelParams, m: i64) -> PyResult<Vec<Vec<f64>>> {
    let p = params.inner.validate().map_err(value_err)?;
    let basis = trilevel::enumerate_sector(p.config, p.n_atoms, m);
    let h = trilevel::build_hamiltonian(&basis, &p).map_err(runtime_err)?;
    Ok((0..h.nrows()).map(|r| h.row(r).iter().copied().collect()).collect())
}

#[pyfunction]
fn analytic_one_atom_xi(m: i64, mu12: f64, mu23: f64) -> PyResult<f64> {
    trilevel::analytic_one_atom_xi(m, mu12, mu23).map_err(value_err)
}

/// Separatrix samples `(x, y, order)` over `steps` values of the y-axis
/// coupling in `[y_min, y_max]`.
#[pyfunction]
#[pyo3(signature = (params, y_min = 0.0, y_max = 3.0, steps = 61))]
fn separatrix(params: &PyModelParams, y_min: f64, y_max: f64, steps: usize) -> PyResult<Vec<(f64, f64, &'static str)>> {
    let p = params.inner;
    let curve = trilevel::separatrix(p.config, &p, CouplingRange::new(y_min, y_max, steps)).map_err(value_err)?;
    Ok(curve
        .segments
        .iter()
        .flat_map(|s| s.points.iter().map(move |&(x, y)| (x, y, order_name(s.order))))
        .collect())
}

/// Order of the transition crossed on the straight path `start -> end`.
#[pyfunction]
fn classify_order(params: &PyModelParams, start: (f64, f64), end: (f64, f64)) -> PyResult<&'static str> {
    let p = params.inner;
    let o = trilevel::classify_order(
        p.config,
        &p,
        trilevel::CrossingSegment::new(start, end),
        &trilevel::ClassifyOptions::default(),
    )
    .map_err(runtime_err)?;
    Ok(order_name(o))
}

/// Coupling-plane scan; returns the CSV text the command-line tool writes.
#[pyfunction]
#[pyo3(signature = (config, omega = (0.0, 1.0, 2.0), n_atoms = 1, x = (0.0, 3.0, 61), y = (0.0, 3.0, 61), engine = "quantum"))]
fn scan_csv(
    py: Python<'_>,
    config: &str,
    omega: (f64, f64, f64),
    n_atoms: u32,
    x: (f64, f64, usize),
    y: (f64, f64, usize),
    engine: &str,
) -> PyResult<String> {
    let engine: Engine = engine.parse().map_err(value_err)?;
    let spec = ScanSpec::new(
        parse_config(config)?,
        [omega.0, omega.1, omega.2],
        n_atoms,
        CouplingRange::new(x.0, x.1, x.2),
        CouplingRange::new(y.0, y.1, y.2),
        engine,
    );
    spec.check().map_err(value_err)?;
    let grid = py.detach(|| scan::run_scan(&spec)).map_err(runtime_err)?;
    scan::write_csv(&grid).map_err(runtime_err)
}

/// Integer excitation weights `(field, level1, level2, level3)`.
#[pyfunction]
fn excitation_weights(config: &str) -> PyResult<(u32, u32, u32, u32)> {
    let w = trilevel::excitation_weights(parse_config(config)?);
    Ok((w.field_weight, w.level_weights[0], w.level_weights[1], w.level_weights[2]))
}

#[pymodule]
pub fn pytrilevel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PySemiclassicalResult>()?;
    m.add_class::<PyGroundState>()?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(global_ground, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_sector, m)?)?;
    m.add_function(wrap_pyfunction!(sector_ground, m)?)?;
    m.add_function(wrap_pyfunction!(sector_hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_one_atom_xi, m)?)?;
    m.add_function(wrap_pyfunction!(separatrix, m)?)?;
    m.add_function(wrap_pyfunction!(classify_order, m)?)?;
    m.add_function(wrap_pyfunction!(scan_csv, m)?)?;
    m.add_function(wrap_pyfunction!(excitation_weights, m)?)?;
    Ok(())
}
