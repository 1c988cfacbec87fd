//! Coupling-plane scans, crossover extraction and the finite-N convergence
//! study, plus the CSV / JSON-lines formats they are written in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate, Configuration, Coupling, ModelError, ModelParams};
use crate::quantum::{global_ground, SearchOptions};
use crate::semiclassical::{critical_coupling, minimize, CouplingRange, MinimizeOptions, Phase, SemiclassicalError};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("axes must be the two active couplings of {config} ({expected_x}, {expected_y}), got ({x}, {y})")]
    WrongAxes {
        config: Configuration,
        expected_x: Coupling,
        expected_y: Coupling,
        x: Coupling,
        y: Coupling,
    },
    #[error("axis {0}: need min <= max and at least 2 steps")]
    BadAxis(Coupling),
    #[error("grid incomplete: {0}")]
    IncompleteGrid(String),
    #[error("atom counts must be nonempty and ascending")]
    BadAtomCounts,
    #[error("cannot parse scan output: {0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Semiclassical(#[from] SemiclassicalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Floats in output files: 12 significant digits, scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.11e}", v)
}

fn round12(v: f64) -> f64 {
    if v.is_finite() {
        fmt_f64(v).parse().unwrap_or(v)
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Semiclassical,
    Quantum,
    Both,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "semiclassical" | "sc" => Ok(Engine::Semiclassical),
            "quantum" | "q" => Ok(Engine::Quantum),
            "both" => Ok(Engine::Both),
            other => Err(format!("unknown engine '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coupling: Coupling,
    pub range: CouplingRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub config: Configuration,
    pub omegas: [f64; 3],
    pub n_atoms: u32,
    pub x: Axis,
    pub y: Axis,
    pub engine: Engine,
    pub format: OutputFormat,
    pub minimize: MinimizeOptions,
    pub search: SearchOptions,
}

impl ScanSpec {
    /// A scan over the configuration's coupling plane with default options.
    pub fn new(config: Configuration, omegas: [f64; 3], n_atoms: u32, x: CouplingRange, y: CouplingRange, engine: Engine) -> Self {
        let (xa, ya) = config.axes();
        ScanSpec {
            config,
            omegas,
            n_atoms,
            x: Axis { coupling: xa, range: x },
            y: Axis { coupling: ya, range: y },
            engine,
            format: OutputFormat::Csv,
            minimize: MinimizeOptions::default(),
            search: SearchOptions::default(),
        }
    }

    pub fn check(&self) -> Result<(), ScanError> {
        let (ex, ey) = self.config.axes();
        let (x, y) = (self.x.coupling, self.y.coupling);
        if !((x == ex && y == ey) || (x == ey && y == ex)) {
            return Err(ScanError::WrongAxes {
                config: self.config,
                expected_x: ex,
                expected_y: ey,
                x,
                y,
            });
        }
        for axis in [&self.x, &self.y] {
            if axis.range.check().is_err() {
                return Err(ScanError::BadAxis(axis.coupling));
            }
        }
        validate(self.params_at(self.x.range.min, self.y.range.min))?;
        Ok(())
    }

    pub fn params_at(&self, mu_x: f64, mu_y: f64) -> ModelParams {
        ModelParams::new(self.config, self.omegas, self.n_atoms)
            .with_coupling(self.x.coupling, mu_x)
            .with_coupling(self.y.coupling, mu_y)
    }

    pub fn nx(&self) -> usize {
        self.x.range.steps
    }

    pub fn ny(&self) -> usize {
        self.y.range.steps
    }
}

/// Ground-state label at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Phase(PhaseKey),
    Sector(u32),
}

/// Orderable stand-in for [`Phase`] (normal sorts first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseKey {
    Normal,
    Collective,
}

impl From<Phase> for Label {
    fn from(p: Phase) -> Self {
        Label::Phase(match p {
            Phase::Normal => PhaseKey::Normal,
            Phase::Collective => PhaseKey::Collective,
        })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Phase(PhaseKey::Normal) => f.write_str("normal"),
            Label::Phase(PhaseKey::Collective) => f.write_str("collective"),
            Label::Sector(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for Label {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Phase(PhaseKey::Normal)),
            "collective" => Ok(Label::Phase(PhaseKey::Collective)),
            other => other
                .parse::<u32>()
                .map(Label::Sector)
                .map_err(|_| ScanError::Parse(format!("bad label '{other}'"))),
        }
    }
}

/// One engine's answer at a grid point. Quantum values are totals (energy,
/// M*); semiclassical values are per atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub energy: f64,
    pub m_value: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub mu_x: f64,
    pub mu_y: f64,
    /// Quantum result for `Quantum`/`Both`, semiclassical for `Semiclassical`.
    pub value: Option<PointValue>,
    /// Semiclassical result alongside the quantum one for `Both`.
    pub semiclassical: Option<PointValue>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub spec: ScanSpec,
    /// Row-major: `records[iy * nx + ix]`.
    pub records: Vec<ScanRecord>,
}

impl ScanGrid {
    pub fn failed(&self) -> Vec<&ScanRecord> {
        self.records.iter().filter(|r| r.error.is_some()).collect()
    }

    pub fn record(&self, ix: usize, iy: usize) -> &ScanRecord {
        &self.records[iy * self.spec.nx() + ix]
    }
}

fn semiclassical_value(params: &ModelParams, opts: &MinimizeOptions) -> Result<PointValue, String> {
    let r = minimize(params, opts).map_err(|e| e.to_string())?;
    Ok(PointValue {
        energy: r.energy_per_atom,
        m_value: r.m_per_atom,
        label: r.phase_label.into(),
    })
}

fn quantum_value(params: &ModelParams, search: &SearchOptions) -> Result<PointValue, String> {
    let g = global_ground(params, search).map_err(|e| e.to_string())?;
    Ok(PointValue {
        energy: g.energy,
        m_value: g.m_star as f64,
        label: Label::Sector(g.m_star),
    })
}

/// Label the scan's primary engine assigns at a coupling point.
pub fn label_at(spec: &ScanSpec, mu_x: f64, mu_y: f64) -> Result<Label, String> {
    let p = spec.params_at(mu_x, mu_y);
    match spec.engine {
        Engine::Semiclassical => semiclassical_value(&p, &spec.minimize).map(|v| v.label),
        Engine::Quantum | Engine::Both => quantum_value(&p, &spec.search).map(|v| v.label),
    }
}

fn evaluate(spec: &ScanSpec, mu_x: f64, mu_y: f64) -> ScanRecord {
    let p = spec.params_at(mu_x, mu_y);
    let (value, semiclassical) = match spec.engine {
        Engine::Semiclassical => (semiclassical_value(&p, &spec.minimize), None),
        Engine::Quantum => (quantum_value(&p, &spec.search), None),
        Engine::Both => (quantum_value(&p, &spec.search), Some(semiclassical_value(&p, &spec.minimize))),
    };
    let mut errors = Vec::new();
    let value = value.map_err(|e| errors.push(e)).ok();
    let semiclassical = semiclassical.and_then(|r| r.map_err(|e| errors.push(format!("semiclassical: {e}"))).ok());
    ScanRecord {
        mu_x,
        mu_y,
        value,
        semiclassical,
        error: (!errors.is_empty()).then(|| errors.join("; ")),
    }
}

/// Evaluates every grid point. Per-point failures land in the record's
/// error field; the scan itself only fails on an invalid spec.
pub fn run_scan(spec: &ScanSpec) -> Result<ScanGrid, ScanError> {
    spec.check()?;
    let (nx, ny) = (spec.nx(), spec.ny());
    let records: Vec<ScanRecord> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| evaluate(spec, spec.x.range.value(idx % nx), spec.y.range.value(idx / nx)))
        .collect();
    Ok(ScanGrid { spec: spec.clone(), records })
}

/// [`run_scan`] on a dedicated pool of `threads` workers.
pub fn run_scan_with_threads(spec: &ScanSpec, threads: usize) -> Result<ScanGrid, ScanError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ScanError::ThreadPool(e.to_string()))?;
    pool.install(|| run_scan(spec))
}

fn csv_header(both: bool) -> Vec<&'static str> {
    let mut h = vec!["mu_x", "mu_y", "energy", "m_value", "label", "error"];
    if both {
        h.extend(["sc_energy", "sc_m_value", "sc_label"]);
    }
    h
}

fn value_fields(v: &Option<PointValue>) -> [String; 3] {
    match v {
        Some(v) => [fmt_f64(v.energy), fmt_f64(v.m_value), v.label.to_string()],
        None => [String::new(), String::new(), String::new()],
    }
}

pub fn write_csv(grid: &ScanGrid) -> Result<String, ScanError> {
    let both = grid.spec.engine == Engine::Both;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(csv_header(both))?;
    for r in &grid.records {
        let [e, m, l] = value_fields(&r.value);
        let mut row = vec![fmt_f64(r.mu_x), fmt_f64(r.mu_y), e, m, l, r.error.clone().unwrap_or_default()];
        if both {
            row.extend(value_fields(&r.semiclassical));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ScanError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ScanError::Parse(e.to_string()))
}

fn parse_f64(s: &str) -> Result<f64, ScanError> {
    s.parse::<f64>().map_err(|_| ScanError::Parse(format!("bad number '{s}'")))
}

fn parse_value(e: &str, m: &str, l: &str) -> Result<Option<PointValue>, ScanError> {
    if l.is_empty() {
        return Ok(None);
    }
    Ok(Some(PointValue {
        energy: parse_f64(e)?,
        m_value: parse_f64(m)?,
        label: l.parse()?,
    }))
}

/// Parses records written by [`write_csv`] (the scan settings are not stored in the file).
pub fn read_csv(text: &str) -> Result<Vec<ScanRecord>, ScanError> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rd.headers()?.clone();
    let both = headers.len() == 9;
    if headers.iter().collect::<Vec<_>>() != csv_header(both) {
        return Err(ScanError::Parse("unexpected header".into()));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        out.push(ScanRecord {
            mu_x: parse_f64(&row[0])?,
            mu_y: parse_f64(&row[1])?,
            value: parse_value(&row[2], &row[3], &row[4])?,
            semiclassical: if both { parse_value(&row[6], &row[7], &row[8])? } else { None },
            error: (!row[5].is_empty()).then(|| row[5].to_string()),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct JsonValue {
    energy: Option<f64>,
    m_value: Option<f64>,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    mu_x: f64,
    mu_y: f64,
    energy: Option<f64>,
    m_value: Option<f64>,
    label: Option<String>,
    error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semiclassical: Option<JsonValue>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then(|| round12(v))
}

/// One JSON object per line.
pub fn write_jsonl(grid: &ScanGrid) -> Result<String, ScanError> {
    let mut out = String::new();
    for r in &grid.records {
        let rec = JsonRecord {
            mu_x: round12(r.mu_x),
            mu_y: round12(r.mu_y),
            energy: r.value.and_then(|v| finite(v.energy)),
            m_value: r.value.and_then(|v| finite(v.m_value)),
            label: r.value.map(|v| v.label.to_string()),
            error: r.error.clone(),
            semiclassical: r.semiclassical.map(|v| JsonValue {
                energy: finite(v.energy),
                m_value: finite(v.m_value),
                label: v.label.to_string(),
            }),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl(text: &str) -> Result<Vec<ScanRecord>, ScanError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let rec: JsonRecord = serde_json::from_str(line)?;
            let value = match rec.label {
                Some(l) => Some(PointValue {
                    energy: rec.energy.unwrap_or(f64::NAN),
                    m_value: rec.m_value.unwrap_or(f64::NAN),
                    label: l.parse()?,
                }),
                None => None,
            };
            let semiclassical = match rec.semiclassical {
                Some(v) => Some(PointValue {
                    energy: v.energy.unwrap_or(f64::NAN),
                    m_value: v.m_value.unwrap_or(f64::NAN),
                    label: v.label.parse()?,
                }),
                None => None,
            };
            Ok(ScanRecord {
                mu_x: rec.mu_x,
                mu_y: rec.mu_y,
                value,
                semiclassical,
                error: rec.error,
            })
        })
        .collect()
}

/// Matrix-format heat map: energies then M values as two gnuplot data blocks,
/// one row per y value.
pub fn write_gnuplot_matrix(grid: &ScanGrid) -> String {
    let nx = grid.spec.nx();
    let mut out = format!(
        "# {} x {}: {} in [{}, {}], {} in [{}, {}]\n",
        nx,
        grid.spec.ny(),
        grid.spec.x.coupling,
        grid.spec.x.range.min,
        grid.spec.x.range.max,
        grid.spec.y.coupling,
        grid.spec.y.range.min,
        grid.spec.y.range.max
    );
    for (title, pick) in [("energy", 0usize), ("m_value", 1)] {
        out.push_str(&format!("# {title}\n"));
        for row in grid.records.chunks(nx) {
            let line: Vec<String> = row
                .iter()
                .map(|r| match r.value {
                    Some(v) => fmt_f64(if pick == 0 { v.energy } else { v.m_value }),
                    None => "nan".to_string(),
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out.push_str("\n\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossover {
    /// Smaller of the two labels.
    pub from: String,
    pub to: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CrossoverSet {
    pub crossovers: Vec<Crossover>,
}

impl CrossoverSet {
    pub fn is_empty(&self) -> bool {
        self.crossovers.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,from,to,mu_x,mu_y\n");
        for (i, c) in self.crossovers.iter().enumerate() {
            for (x, y) in &c.points {
                out.push_str(&format!("{},{},{},{},{}\n", i, c.from, c.to, fmt_f64(*x), fmt_f64(*y)));
            }
        }
        out
    }
}

/// A crossing edge between grid nodes `a` and `b` (row-major indices).
#[derive(Debug, Clone, Copy)]
struct EdgeVertex {
    a: usize,
    b: usize,
    pair: (Label, Label),
    point: (f64, f64),
}

fn grid_labels(grid: &ScanGrid) -> Result<Vec<Label>, ScanError> {
    let (nx, ny) = (grid.spec.nx(), grid.spec.ny());
    if grid.records.len() != nx * ny {
        return Err(ScanError::IncompleteGrid(format!(
            "{} records for a {nx} x {ny} grid",
            grid.records.len()
        )));
    }
    grid.records
        .iter()
        .map(|r| {
            r.value.map(|v| v.label).ok_or_else(|| {
                ScanError::IncompleteGrid(format!("no value at ({}, {})", r.mu_x, r.mu_y))
            })
        })
        .collect()
}

/// Midpoint-of-edge crossover extraction.
pub fn extract_crossovers(grid: &ScanGrid) -> Result<CrossoverSet, ScanError> {
    extract_crossovers_refined(grid, None)
}

/// As [`extract_crossovers`]; with `refine = Some(tol)` each crossing is
/// bisected along its edge with the scan's engine down to `tol`.
pub fn extract_crossovers_refined(grid: &ScanGrid, refine: Option<f64>) -> Result<CrossoverSet, ScanError> {
    let labels = grid_labels(grid)?;
    let spec = &grid.spec;
    let (nx, ny) = (spec.nx(), spec.ny());
    let coord = |idx: usize| (grid.records[idx].mu_x, grid.records[idx].mu_y);

    // edge id -> vertex; horizontal edges then vertical edges
    let mut vertices: BTreeMap<(usize, usize), EdgeVertex> = BTreeMap::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let a = iy * nx + ix;
            let mut neighbours = Vec::with_capacity(2);
            if ix + 1 < nx {
                neighbours.push(a + 1);
            }
            if iy + 1 < ny {
                neighbours.push(a + nx);
            }
            for b in neighbours {
                let (la, lb) = (labels[a], labels[b]);
                if la == lb {
                    continue;
                }
                let (pa, pb) = (coord(a), coord(b));
                let point = match refine {
                    None => (0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1)),
                    Some(tol) => bisect_edge(spec, pa, pb, la, tol)?,
                };
                vertices.insert(
                    (a, b),
                    EdgeVertex {
                        a,
                        b,
                        pair: (la.min(lb), la.max(lb)),
                        point,
                    },
                );
            }
        }
    }

    // link vertices sharing a cell and a label pair
    let keys: Vec<(usize, usize)> = vertices.keys().copied().collect();
    let id_of: BTreeMap<(usize, usize), usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    for cy in 0..ny.saturating_sub(1) {
        for cx in 0..nx.saturating_sub(1) {
            let c00 = cy * nx + cx;
            let (c10, c01, c11) = (c00 + 1, c00 + nx, c00 + nx + 1);
            // bottom, right, top, left
            let edges = [(c00, c10), (c10, c11), (c01, c11), (c00, c01)];
            let mut by_pair: BTreeMap<(Label, Label), Vec<usize>> = BTreeMap::new();
            for e in edges {
                if let Some(&id) = id_of.get(&e) {
                    by_pair.entry(vertices[&e].pair).or_default().push(id);
                }
            }
            for ids in by_pair.values() {
                for pair in ids.chunks(2) {
                    if let [p, q] = *pair {
                        adjacency[p].push(q);
                        adjacency[q].push(p);
                    }
                }
            }
        }
    }

    let mut used = vec![false; keys.len()];
    let mut crossovers = Vec::new();
    let walk = |start: usize, used: &mut Vec<bool>| {
        let mut path = vec![start];
        used[start] = true;
        let mut cur = start;
        loop {
            let next = adjacency[cur].iter().copied().find(|&n| !used[n]);
            match next {
                Some(n) => {
                    used[n] = true;
                    path.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        if path.len() > 2 && adjacency[cur].contains(&start) {
            path.push(start);
        }
        let v0 = vertices[&keys[start]];
        let (from, to) = v0.pair;
        Crossover {
            from: from.to_string(),
            to: to.to_string(),
            points: path.iter().map(|&i| vertices[&keys[i]].point).collect(),
        }
    };
    for start in 0..keys.len() {
        if !used[start] && adjacency[start].len() <= 1 {
            crossovers.push(walk(start, &mut used));
        }
    }
    for start in 0..keys.len() {
        if !used[start] {
            crossovers.push(walk(start, &mut used));
        }
    }
    debug_assert!(vertices.values().all(|v| labels[v.a] != labels[v.b]));
    Ok(CrossoverSet { crossovers })
}

fn bisect_edge(spec: &ScanSpec, pa: (f64, f64), pb: (f64, f64), la: Label, tol: f64) -> Result<(f64, f64), ScanError> {
    let (mut lo, mut hi) = (pa, pb);
    let dist = |p: (f64, f64), q: (f64, f64)| (p.0 - q.0).hypot(p.1 - q.1);
    while dist(lo, hi) > tol {
        let mid = (0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1));
        let l = label_at(spec, mid.0, mid.1).map_err(ScanError::IncompleteGrid)?;
        if l == la {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOptions {
    /// Upper end of the x-axis coupling searched for the boundary.
    pub x_max: f64,
    /// Coarse steps along x before bisection.
    pub x_steps: usize,
    /// Bisection tolerance in coupling units; `None` keeps the coarse midpoint.
    pub refine_tol: Option<f64>,
    pub search: SearchOptions,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions {
            x_max: 3.0,
            x_steps: 61,
            refine_tol: Some(1e-4),
            search: SearchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryCurve {
    pub name: String,
    /// `None` for the semiclassical separatrix.
    pub n_atoms: Option<u32>,
    pub values: Vec<f64>,
}

impl BoundaryCurve {
    pub fn mean_gap(&self, other: &BoundaryCurve) -> f64 {
        let n = self.values.len().max(1) as f64;
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub config: Configuration,
    pub x_axis: Coupling,
    pub y_axis: Coupling,
    /// Shared y-axis samples.
    pub abscissae: Vec<f64>,
    /// One boundary per atom count, then the separatrix.
    pub curves: Vec<BoundaryCurve>,
}

impl ConvergenceTable {
    pub fn separatrix(&self) -> &BoundaryCurve {
        self.curves.last().expect("separatrix is always present")
    }

    pub fn boundary(&self, n_atoms: u32) -> Option<&BoundaryCurve> {
        self.curves.iter().find(|c| c.n_atoms == Some(n_atoms))
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.y_axis.to_string();
        for c in &self.curves {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        for (i, y) in self.abscissae.iter().enumerate() {
            out.push_str(&fmt_f64(*y));
            for c in &self.curves {
                out.push(',');
                out.push_str(&fmt_f64(c.values[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Largest x (from 0) up to which the finite-N ground state stays in M = 0
/// at height `y`; 0 when it already left at x = 0, `x_max` when it never does.
pub fn quantum_boundary(params: &ModelParams, y: f64, opts: &ConvergenceOptions) -> Result<f64, ScanError> {
    let (xa, ya) = params.config.axes();
    let base = params.with_coupling(ya, y);
    let in_normal = |x: f64| -> Result<bool, ScanError> {
        let g = global_ground(&base.with_coupling(xa, x), &opts.search)
            .map_err(|e| ScanError::IncompleteGrid(e.to_string()))?;
        Ok(g.m_star == 0)
    };
    if !in_normal(0.0)? {
        return Ok(0.0);
    }
    let steps = opts.x_steps.max(2);
    let dx = opts.x_max / (steps - 1) as f64;
    let mut prev = 0.0;
    for i in 1..steps {
        let x = i as f64 * dx;
        if !in_normal(x)? {
            let (mut lo, mut hi) = (prev, x);
            match opts.refine_tol {
                None => return Ok(0.5 * (lo + hi)),
                Some(tol) => {
                    while hi - lo > tol {
                        let mid = 0.5 * (lo + hi);
                        if in_normal(mid)? {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    return Ok(0.5 * (lo + hi));
                }
            }
        }
        prev = x;
    }
    Ok(opts.x_max)
}

/// Finite-N M = 0 boundaries for each atom count next to the analytic
/// separatrix, sampled at the same y-axis couplings.
pub fn convergence_study(
    config: Configuration,
    omegas: [f64; 3],
    atom_counts: &[u32],
    abscissae: CouplingRange,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceTable, ScanError> {
    if atom_counts.is_empty() || atom_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ScanError::BadAtomCounts);
    }
    abscissae.check()?;
    let ys: Vec<f64> = abscissae.values().collect();
    let (x_axis, y_axis) = config.axes();
    let mut curves = Vec::new();
    for &n in atom_counts {
        let params = validate(ModelParams::new(config, omegas, n))?;
        let values = ys
            .par_iter()
            .map(|&y| quantum_boundary(&params, y, opts))
            .collect::<Result<Vec<f64>, ScanError>>()?;
        curves.push(BoundaryCurve {
            name: format!("N={n}"),
            n_atoms: Some(n),
            values,
        });
    }
    let params = ModelParams::new(config, omegas, 1);
    let sep = ys
        .iter()
        .map(|&y| Ok(critical_coupling(config, &params, y)?.unwrap_or(0.0)))
        .collect::<Result<Vec<f64>, ScanError>>()?;
    curves.push(BoundaryCurve {
        name: "separatrix".into(),
        n_atoms: None,
        values: sep,
    });
    Ok(ConvergenceTable {
        config,
        x_axis,
        y_axis,
        abscissae: ys,
        curves,
    })
}
