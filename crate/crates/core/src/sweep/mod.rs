//! Grid sweeps over the two-parameter families of the four methods.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycle::{analyze, AnalysisConfig, Thresholds, Verdict};
use crate::methods::{heavy_ball, inexact_gradient, nesterov, three_operator_splitting, MethodError, MethodSpec};
use crate::pep::{build_cycle_problem, default_classes};
use crate::sdp::{SolveStatus, SolverOptions};

mod heatmap;
mod table;

pub use heatmap::{boundary_overlays, emit_heatmap, render_heatmap, Overlay};
pub use table::{emit_csv, fmt12, parse_csv, quantize, render_csv, CSV_HEADER};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Config(String),
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("cannot resume: {0}")]
    Mismatch(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Hb,
    Nag,
    Igd,
    Tos,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Hb => "hb",
            MethodName::Nag => "nag",
            MethodName::Igd => "igd",
            MethodName::Tos => "tos",
        }
    }

    /// Name of the second swept parameter; the first is always `gamma`.
    pub fn second_parameter(self) -> &'static str {
        match self {
            MethodName::Igd => "eps",
            _ => "beta",
        }
    }

    /// The method at `(gamma, p2)`, with `alpha` the resolvent scale of TOS.
    pub fn build(self, gamma: f64, p2: f64, alpha: f64) -> Result<MethodSpec, MethodError> {
        match self {
            MethodName::Hb => Ok(heavy_ball(gamma, p2)),
            MethodName::Nag => Ok(nesterov(gamma, p2)),
            MethodName::Igd => inexact_gradient(gamma, p2),
            MethodName::Tos => three_operator_splitting(gamma, p2, alpha),
        }
    }

    /// Largest step-size of the region of interest at `p2`, or `None` for
    /// the rectangular regions.
    pub fn boundary_gamma(self, l: f64, p2: f64) -> Option<f64> {
        match self {
            MethodName::Hb => Some(2.0 * (1.0 + p2) / l),
            MethodName::Nag => Some(2.0 / l * (1.0 + p2) / (1.0 + 2.0 * p2)),
            MethodName::Igd | MethodName::Tos => None,
        }
    }

    /// Default `(gamma, p2)` ranges: the bounding box of the region.
    pub fn default_ranges(self, l: f64) -> ((f64, f64), (f64, f64)) {
        match self {
            MethodName::Hb => ((0.0, 4.0 / l), (0.0, 1.0)),
            MethodName::Nag | MethodName::Igd => ((0.0, 2.0 / l), (0.0, 1.0)),
            MethodName::Tos => ((0.0, 2.0 / l), (0.0, 2.0)),
        }
    }

    /// Membership in the closed region of interest, up to rounding.
    pub fn in_region(self, l: f64, gamma: f64, p2: f64) -> bool {
        let tol = 1e-12;
        let within = |v: f64, lo: f64, hi: f64| v >= lo - tol * (1.0 + lo.abs()) && v <= hi + tol * (1.0 + hi.abs());
        let (g, p) = self.default_ranges(l);
        if !within(p2, p.0, p.1) || !within(gamma, g.0, g.1) {
            return false;
        }
        match self.boundary_gamma(l, p2) {
            Some(hi) => within(gamma, 0.0, hi),
            None => true,
        }
    }
}

/// An inclusive, evenly spaced axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let n = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.min + (self.max - self.min) * i as f64 / n)
            .collect()
    }

    /// Spacing between neighbouring values; 0 for a single point.
    pub fn step(&self) -> f64 {
        if self.points <= 1 {
            0.0
        } else {
            (self.max - self.min) / (self.points - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub jobs: usize,
    pub resume: bool,
    /// Leave the `ms` column empty so that repeated runs compare byte for byte.
    pub omit_timing: bool,
    /// Solved cells per atomic rewrite of the CSV.
    pub chunk: usize,
    /// Fraction of in-region cells allowed to fail before the run reports failure.
    pub max_failure_fraction: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("sweep-out"),
            jobs: 1,
            resume: false,
            omit_timing: false,
            chunk: 16,
            max_failure_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub method: MethodName,
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    /// Resolvent scale, read by TOS only.
    pub alpha: f64,
    pub kmin: usize,
    pub kmax: usize,
    pub region_filter: bool,
    /// Move the first cell past a curved boundary onto the boundary itself.
    pub snap_boundary: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Axis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param2: Option<Axis>,
    pub thresholds: Thresholds,
    pub solver: SolverOptions,
    pub output: OutputConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            method: MethodName::Hb,
            l: 1.0,
            mu: 0.0,
            alpha: 1.0,
            kmin: 2,
            kmax: 25,
            region_filter: true,
            snap_boundary: true,
            gamma: None,
            param2: None,
            thresholds: Thresholds::default(),
            solver: SolverOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn for_method(method: MethodName) -> Self {
        Self {
            method,
            ..Self::default()
        }
        .resolved()
    }

    /// Parses a config file; axes it leaves unset stay `None` until
    /// [`SweepConfig::resolved`].
    pub fn from_toml(text: &str) -> Result<Self, SweepError> {
        toml::from_str(text).map_err(|e| SweepError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.clone().resolved()).expect("config serializes")
    }

    /// Fills unset axes with the method's default 50-point ranges.
    pub fn resolved(mut self) -> Self {
        let (g, p) = self.method.default_ranges(self.l);
        self.gamma.get_or_insert(Axis {
            min: g.0,
            max: g.1,
            points: 50,
        });
        self.param2.get_or_insert(Axis {
            min: p.0,
            max: p.1,
            points: 50,
        });
        self
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::Config(m));
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad(format!("L must be positive, got {}", self.l));
        }
        if !(self.mu >= 0.0 && self.mu < self.l) {
            return bad(format!("mu must lie in [0, L), got {}", self.mu));
        }
        if self.kmin < 2 || self.kmax < self.kmin {
            return bad(format!("invalid K range {}..={}", self.kmin, self.kmax));
        }
        for (name, axis) in [("gamma", self.gamma), ("param2", self.param2)] {
            let Some(a) = axis else { continue };
            if a.points == 0 || !a.min.is_finite() || !a.max.is_finite() || a.max < a.min {
                return bad(format!("axis {name} must have min <= max and at least one point"));
            }
            if a.points > 1 && a.max == a.min {
                return bad(format!("axis {name} repeats the point {} {} times", a.min, a.points));
            }
        }
        if self.output.chunk == 0 {
            return bad("output.chunk must be positive".into());
        }
        Ok(())
    }

    fn axes(&self) -> (Axis, Axis) {
        let c = self.clone().resolved();
        (c.gamma.unwrap(), c.param2.unwrap())
    }

    /// Settings that determine cell results; resuming requires them to match.
    fn fingerprint(&self) -> String {
        let mut c = self.clone().resolved();
        c.output = OutputConfig::default();
        c.solver.verbose = false;
        c.to_toml()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub param1: f64,
    pub param2: f64,
    pub in_region: bool,
}

/// Cells in row-major order: `param2` outer, `gamma` inner.
#[derive(Debug, Clone)]
pub struct Grid {
    pub axis1: Axis,
    pub axis2: Axis,
    pub cells: Vec<Cell>,
    keys: HashMap<(String, String), usize>,
}

impl Grid {
    pub fn new(cfg: &SweepConfig) -> Grid {
        let (axis1, axis2) = cfg.axes();
        let gammas = axis1.values();
        let mut cells = Vec::with_capacity(axis1.points * axis2.points);
        for p2 in axis2.values() {
            let mut crossed = false;
            for (i, &g) in gammas.iter().enumerate() {
                let mut cell = Cell {
                    index: cells.len(),
                    param1: quantize(g),
                    param2: quantize(p2),
                    in_region: !cfg.region_filter || cfg.method.in_region(cfg.l, g, p2),
                };
                if cfg.region_filter && cfg.snap_boundary && !cell.in_region && !crossed && i > 0 {
                    if let Some(hi) = cfg.method.boundary_gamma(cfg.l, p2) {
                        // A previous point already on the boundary (up to rounding) stays the only one.
                        let on_edge = (gammas[i - 1] - hi).abs() <= 1e-12 * (1.0 + hi.abs());
                        if gammas[i - 1] < hi && !on_edge && cfg.method.in_region(cfg.l, hi, p2) {
                            cell.param1 = quantize(hi);
                            cell.in_region = true;
                        }
                    }
                }
                crossed |= !cell.in_region;
                cells.push(cell);
            }
        }
        let keys = cells
            .iter()
            .map(|c| ((fmt12(c.param1), fmt12(c.param2)), c.index))
            .collect();
        Grid {
            axis1,
            axis2,
            cells,
            keys,
        }
    }

    pub fn index_of(&self, param1: f64, param2: f64) -> Option<usize> {
        self.keys.get(&(fmt12(param1), fmt12(param2))).copied()
    }

    /// Column and row of cell `index`.
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index % self.axis1.points, index / self.axis1.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Cycle,
    NoCycle,
    Inconclusive,
    Failed,
    Skipped,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Cycle => "cycle",
            CellStatus::NoCycle => "no_cycle",
            CellStatus::Inconclusive => "inconclusive",
            CellStatus::Failed => "failed",
            CellStatus::Skipped => "skipped",
        }
    }

    pub fn parse(s: &str) -> Option<CellStatus> {
        [
            CellStatus::Cycle,
            CellStatus::NoCycle,
            CellStatus::Inconclusive,
            CellStatus::Failed,
            CellStatus::Skipped,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

/// Outcome of one cell. Floats are stored at CSV precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub param1: f64,
    pub param2: f64,
    pub status: CellStatus,
    pub k_min: Option<usize>,
    /// Score at `k_min` for cycles, otherwise the smallest score over the scan.
    pub score: Option<f64>,
    pub iters: usize,
    pub ms: Option<u64>,
}

impl CellRecord {
    fn skipped(cell: &Cell) -> CellRecord {
        CellRecord {
            param1: cell.param1,
            param2: cell.param2,
            status: CellStatus::Skipped,
            k_min: None,
            score: None,
            iters: 0,
            ms: None,
        }
    }
}

/// Records in grid order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionMap {
    pub records: Vec<CellRecord>,
}

impl RegionMap {
    pub fn count(&self, status: CellStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    /// Failed cells as a fraction of the cells that were searched.
    pub fn failure_fraction(&self) -> f64 {
        let searched = self.records.len() - self.count(CellStatus::Skipped);
        if searched == 0 {
            0.0
        } else {
            self.count(CellStatus::Failed) as f64 / searched as f64
        }
    }
}

/// Scans `K = kmin..=kmax` at one cell, stopping at the first cycle.
pub fn evaluate_cell(cfg: &SweepConfig, cell: &Cell) -> CellRecord {
    let mut rec = CellRecord::skipped(cell);
    if !cell.in_region {
        return rec;
    }
    let start = Instant::now();
    let analysis = AnalysisConfig {
        thresholds: cfg.thresholds,
        solver: cfg.solver,
    };
    let (mut failed, mut inconclusive) = (false, false);
    let mut best: Option<f64> = None;
    rec.status = CellStatus::NoCycle;
    match cfg.method.build(cell.param1, cell.param2, cfg.alpha) {
        Err(_) => failed = true,
        Ok(method) => {
            let classes = default_classes(&method, cfg.mu, cfg.l);
            for k in cfg.kmin..=cfg.kmax {
                let outcome = build_cycle_problem(&method, &classes, k)
                    .map_err(crate::cycle::CycleError::from)
                    .and_then(|p| analyze(&p, &analysis));
                let a = match outcome {
                    Ok(a) => a,
                    Err(_) => {
                        failed = true;
                        continue;
                    }
                };
                rec.iters += a.iterations;
                let d = a.decision;
                match d.verdict {
                    Verdict::CycleFound => {
                        rec.status = CellStatus::Cycle;
                        rec.k_min = Some(k);
                        best = Some(d.score);
                        break;
                    }
                    Verdict::NoCycleAtThisK => {}
                    Verdict::Inconclusive => {
                        if matches!(d.status, SolveStatus::Optimal | SolveStatus::SlowProgress) {
                            inconclusive = true;
                        } else {
                            failed = true;
                        }
                    }
                }
                if d.score.is_finite() || d.verdict == Verdict::NoCycleAtThisK {
                    best = Some(best.map_or(d.score, |b: f64| b.min(d.score)));
                }
            }
        }
    }
    if rec.status != CellStatus::Cycle {
        rec.status = if failed {
            CellStatus::Failed
        } else if inconclusive {
            CellStatus::Inconclusive
        } else {
            CellStatus::NoCycle
        };
    }
    rec.score = best.map(quantize);
    if !cfg.output.omit_timing {
        rec.ms = Some(start.elapsed().as_millis() as u64);
    }
    rec
}

/// Evaluates `pending` cells on `jobs` workers; `sink` is the only consumer
/// of results and sees them in completion order.
fn execute(
    cfg: &SweepConfig,
    grid: &Grid,
    pending: &[usize],
    mut sink: impl FnMut(usize, CellRecord) -> Result<(), SweepError>,
) -> Result<(), SweepError> {
    if pending.is_empty() {
        return Ok(());
    }
    let jobs = cfg.output.jobs.clamp(1, pending.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            let (tx, next) = (tx.clone(), &next);
            s.spawn(move || loop {
                let n = next.fetch_add(1, Ordering::Relaxed);
                let Some(&idx) = pending.get(n) else { break };
                let rec = evaluate_cell(cfg, &grid.cells[idx]);
                if tx.send((idx, rec)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let result = rx.iter().try_for_each(|(idx, rec)| sink(idx, rec));
        if result.is_err() {
            // Stop handing out work; running cells finish and are dropped.
            next.store(pending.len(), Ordering::Relaxed);
        }
        result
    })
}

/// Runs the whole grid in memory.
pub fn run_sweep(cfg: &SweepConfig) -> Result<RegionMap, SweepError> {
    cfg.validate()?;
    let grid = Grid::new(cfg);
    let mut done: BTreeMap<usize, CellRecord> = BTreeMap::new();
    let mut pending = Vec::new();
    for c in &grid.cells {
        if c.in_region {
            pending.push(c.index);
        } else {
            done.insert(c.index, CellRecord::skipped(c));
        }
    }
    execute(cfg, &grid, &pending, |idx, rec| {
        done.insert(idx, rec);
        Ok(())
    })?;
    Ok(RegionMap {
        records: done.into_values().collect(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Solve at most this many new cells, then stop as an interrupted run would.
    pub max_new_cells: Option<usize>,
    /// Report progress on stderr after each chunk.
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub map: RegionMap,
    pub solved: usize,
    pub complete: bool,
    pub csv: PathBuf,
    pub svg: Option<PathBuf>,
}

pub const CSV_NAME: &str = "region.csv";
pub const SVG_NAME: &str = "region.svg";
pub const CONFIG_NAME: &str = "sweep.toml";

/// Runs the grid into `cfg.output.dir`, rewriting `region.csv` atomically
/// every `chunk` solved cells and drawing `region.svg` once all cells are in.
/// With `cfg.output.resume`, cells already present in the CSV are kept.
pub fn run_sweep_to_dir(cfg: &SweepConfig, opts: &RunOptions) -> Result<SweepOutcome, SweepError> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let grid = Grid::new(cfg);
    let csv = dir.join(CSV_NAME);
    let cfg_path = dir.join(CONFIG_NAME);
    let mut done: BTreeMap<usize, CellRecord> = BTreeMap::new();
    if cfg.output.resume && csv.exists() {
        if let Ok(prior) = std::fs::read_to_string(&cfg_path) {
            let prior = SweepConfig::from_toml(&prior)?.resolved();
            if prior.fingerprint() != cfg.fingerprint() {
                return Err(SweepError::Mismatch(format!(
                    "{} was produced with different settings",
                    csv.display()
                )));
            }
        }
        let text = std::fs::read_to_string(&csv).map_err(io_err(&csv))?;
        for rec in parse_csv(&text, &csv)?.records {
            let Some(idx) = grid.index_of(rec.param1, rec.param2) else {
                return Err(SweepError::Mismatch(format!(
                    "row ({}, {}) is not a cell of this grid",
                    fmt12(rec.param1),
                    fmt12(rec.param2)
                )));
            };
            if done.insert(idx, rec).is_some() {
                return Err(SweepError::Mismatch(format!("cell {idx} appears twice in {}", csv.display())));
            }
        }
    }
    table::write_atomic(&cfg_path, cfg.to_toml().as_bytes())?;
    for c in &grid.cells {
        if !c.in_region && !done.contains_key(&c.index) {
            done.insert(c.index, CellRecord::skipped(c));
        }
    }
    let mut pending: Vec<usize> = grid
        .cells
        .iter()
        .filter(|c| !done.contains_key(&c.index))
        .map(|c| c.index)
        .collect();
    if let Some(n) = opts.max_new_cells {
        pending.truncate(n);
    }
    let snapshot = |done: &BTreeMap<usize, CellRecord>| RegionMap {
        records: done.values().cloned().collect(),
    };
    emit_csv(&snapshot(&done), &csv)?;
    let total = grid.cells.len();
    let mut since_flush = 0;
    let mut solved = 0;
    execute(cfg, &grid, &pending, |idx, rec| {
        done.insert(idx, rec);
        solved += 1;
        since_flush += 1;
        if since_flush >= cfg.output.chunk {
            since_flush = 0;
            emit_csv(&snapshot(&done), &csv)?;
            if opts.progress {
                eprintln!("{}/{} cells", done.len(), total);
            }
        }
        Ok(())
    })?;
    let map = snapshot(&done);
    emit_csv(&map, &csv)?;
    let complete = done.len() == total;
    let svg = if complete {
        let path = dir.join(SVG_NAME);
        emit_heatmap(cfg, &grid, &map, &path)?;
        Some(path)
    } else {
        None
    };
    Ok(SweepOutcome {
        map,
        solved,
        complete,
        csv,
        svg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: MethodName, n1: usize, n2: usize) -> SweepConfig {
        let mut cfg = SweepConfig::for_method(method);
        cfg.gamma.as_mut().unwrap().points = n1;
        cfg.param2.as_mut().unwrap().points = n2;
        cfg
    }

    #[test]
    fn config_round_trips_through_toml() {
        for m in [MethodName::Hb, MethodName::Nag, MethodName::Igd, MethodName::Tos] {
            let cfg = SweepConfig::for_method(m);
            assert_eq!(SweepConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_toml_takes_method_defaults() {
        let cfg = SweepConfig::from_toml("method = \"tos\"\nkmax = 6\n[output]\njobs = 3\n").unwrap();
        assert!(cfg.param2.is_none());
        assert_eq!(cfg.clone().resolved().param2.unwrap().max, 2.0);
        assert_eq!(cfg.kmax, 6);
        assert_eq!(cfg.output.jobs, 3);
        assert!(SweepConfig::from_toml("method = \"xx\"").is_err());
        assert!(SweepConfig::from_toml("unknown_key = 1").is_err());
    }

    #[test]
    fn region_membership() {
        let l = 1.0;
        assert!(MethodName::Hb.in_region(l, 4.0, 1.0));
        assert!(!MethodName::Hb.in_region(l, 2.1, 0.0));
        assert!(MethodName::Nag.in_region(l, 2.0, 0.0));
        assert!(MethodName::Nag.in_region(l, 1.5, 0.5));
        assert!(!MethodName::Nag.in_region(l, 1.51, 0.5));
        assert!(MethodName::Igd.in_region(l, 2.0, 1.0));
        assert!(!MethodName::Igd.in_region(l, 2.01, 0.5));
        assert!(MethodName::Tos.in_region(l, 2.0, 2.0));
        assert!(!MethodName::Tos.in_region(l, 1.0, 2.1));
    }

    #[test]
    fn grid_is_inclusive_and_row_major() {
        let grid = Grid::new(&small(MethodName::Igd, 3, 2));
        let pts: Vec<(f64, f64)> = grid.cells.iter().map(|c| (c.param1, c.param2)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
        assert!(grid.cells.iter().all(|c| c.in_region));
        assert_eq!(grid.position(4), (1, 1));
        assert_eq!(grid.index_of(2.0, 1.0), Some(5));
    }

    #[test]
    fn snapping_puts_one_cell_on_each_curved_boundary() {
        let cfg = small(MethodName::Nag, 7, 5);
        let grid = Grid::new(&cfg);
        for row in grid.cells.chunks(7) {
            let beta = row[0].param2;
            let hi = MethodName::Nag.boundary_gamma(1.0, beta).unwrap();
            let on: Vec<_> = row.iter().filter(|c| (c.param1 - hi).abs() <= 1e-11).collect();
            assert_eq!(on.len(), 1, "beta {beta}");
            assert!(row.iter().all(|c| c.in_region == (c.param1 <= hi + 1e-11)));
        }
        // At beta = 0.2 the boundary 12/7 is itself a grid point of the 8-point axis.
        let grid = Grid::new(&small(MethodName::Nag, 8, 6));
        let keys: std::collections::HashSet<_> = grid.cells.iter().map(|c| (fmt12(c.param1), fmt12(c.param2))).collect();
        assert_eq!(keys.len(), grid.cells.len());
        let mut plain = cfg.clone();
        plain.snap_boundary = false;
        assert!(Grid::new(&plain).cells.len() == 35);
        plain.region_filter = false;
        assert!(Grid::new(&plain).cells.iter().all(|c| c.in_region));
    }

    #[test]
    fn skipped_cells_are_not_solved() {
        let mut cfg = small(MethodName::Hb, 2, 1);
        cfg.gamma = Some(Axis {
            min: 3.0,
            max: 4.0,
            points: 2,
        });
        cfg.snap_boundary = false;
        let map = run_sweep(&cfg).unwrap();
        assert_eq!(map.count(CellStatus::Skipped), 2);
        assert!(map.records.iter().all(|r| r.iters == 0 && r.k_min.is_none()));
    }

    #[test]
    fn gradient_descent_cells() {
        let mut cfg = small(MethodName::Hb, 3, 1);
        cfg.kmax = 3;
        cfg.output.omit_timing = true;
        // gamma in {0, 1, 2} at beta = 0: stationary, convergent, boundary.
        cfg.gamma = Some(Axis {
            min: 0.0,
            max: 2.0,
            points: 3,
        });
        let map = run_sweep(&cfg).unwrap();
        let st: Vec<_> = map.records.iter().map(|r| (r.status, r.k_min)).collect();
        assert_eq!(
            st,
            vec![(CellStatus::NoCycle, None), (CellStatus::NoCycle, None), (CellStatus::Cycle, Some(2))]
        );
        // A frozen second-order method keeps |x_1 - x_0| forever.
        assert!((map.records[0].score.unwrap() - 1.0).abs() <= 1e-6);
        assert!(map.records[1].score.unwrap() >= 1e-3);
        assert!(map.records.iter().all(|r| r.ms.is_none()));
    }

    #[test]
    fn invalid_tos_cells_fail() {
        let mut cfg = small(MethodName::Tos, 1, 1);
        cfg.kmax = 2;
        cfg.gamma = Some(Axis {
            min: 1.0,
            max: 1.0,
            points: 1,
        });
        let map = run_sweep(&cfg).unwrap();
        assert_eq!(map.records[0].status, CellStatus::Failed);
        assert_eq!(map.failure_fraction(), 1.0);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = SweepConfig::for_method(MethodName::Hb);
        cfg.kmin = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = SweepConfig::for_method(MethodName::Hb);
        cfg.gamma.as_mut().unwrap().points = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SweepConfig::for_method(MethodName::Hb);
        cfg.l = -1.0;
        assert!(matches!(run_sweep(&cfg), Err(SweepError::Config(_))));
    }
}
