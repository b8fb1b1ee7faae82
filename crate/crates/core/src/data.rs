//! Observed panels, empirical marginals, and the latent truncation intervals
//! implied by the ranks of the observations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::normal;

/// One observed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    /// Category code in `0..categories`.
    Ordinal(u32),
    Continuous(f64),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Ordinal { categories: u32 },
    Continuous,
}

/// `n` samples observed at `T` consecutive time points on `p` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalSeriesDataset {
    n: usize,
    t: usize,
    p: usize,
    values: Vec<Cell>,
    kinds: Vec<VarKind>,
    names: Vec<String>,
}

impl OrdinalSeriesDataset {
    /// Validates and wraps a dense `n × T × p` panel laid out with the
    /// variable index fastest, then time, then sample.
    pub fn new(
        n: usize,
        t: usize,
        p: usize,
        values: Vec<Cell>,
        kinds: Vec<VarKind>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        if n < 1 || p < 1 || t < 2 {
            return Err(Error::InvalidDataset(format!("need n >= 1, p >= 1, T >= 2 (got n={n}, p={p}, T={t})")));
        }
        if values.len() != n * t * p {
            return Err(Error::DimensionMismatch { expected: n * t * p, found: values.len() });
        }
        if kinds.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: kinds.len() });
        }
        let names = match names {
            Some(names) if names.len() != p => {
                return Err(Error::DimensionMismatch { expected: p, found: names.len() })
            }
            Some(names) => names,
            None => (1..=p).map(|j| format!("X{j}")).collect(),
        };
        let ds = Self { n, t, p, values, kinds, names };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for (j, kind) in self.kinds.iter().enumerate() {
            let mut first: Option<Cell> = None;
            let mut distinct = false;
            for i in 0..self.n {
                for t in 0..self.t {
                    let cell = self.get(i, t, j);
                    match (kind, cell) {
                        (_, Cell::Missing) => continue,
                        (VarKind::Ordinal { categories }, Cell::Ordinal(k)) => {
                            if *categories < 2 {
                                return Err(Error::InvalidDataset(format!(
                                    "ordinal variable {j} needs at least two categories"
                                )));
                            }
                            if k >= *categories {
                                return Err(Error::InvalidDataset(format!(
                                    "code {k} out of range for variable {j} with {categories} categories"
                                )));
                            }
                        }
                        (VarKind::Continuous, Cell::Continuous(x)) if x.is_finite() => {}
                        _ => {
                            return Err(Error::InvalidDataset(format!(
                                "cell ({i}, {t}, {j}) does not match the kind of variable {j}"
                            )))
                        }
                    }
                    match first {
                        None => first = Some(cell),
                        Some(f) if f != cell => distinct = true,
                        _ => {}
                    }
                }
            }
            if !distinct {
                return Err(Error::DegenerateVariable { var: j });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn time_points(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, j: usize) -> Cell {
        self.values[(i * self.t + t) * self.p + j]
    }

    pub fn kinds(&self) -> &[VarKind] {
        &self.kinds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Cell] {
        &self.values
    }

    /// Non-missing values of variable `j`, at time `t` or pooled over all times.
    fn observed(&self, j: usize, t: Option<usize>) -> Vec<Cell> {
        let times: Vec<usize> = match t {
            Some(t) => vec![t],
            None => (0..self.t).collect(),
        };
        let mut out = Vec::new();
        for i in 0..self.n {
            for &t in &times {
                let c = self.get(i, t, j);
                if !c.is_missing() {
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Shrunk empirical CDF `#{i : yᵢ ≤ q} / (n + 1)`; NaN entries count as missing.
pub fn empirical_cdf(values: &[f64], query: f64) -> Result<f64> {
    let mut n = 0usize;
    let mut below = 0usize;
    for &v in values {
        if v.is_nan() {
            continue;
        }
        n += 1;
        if v <= query {
            below += 1;
        }
    }
    if n == 0 {
        return Err(Error::AllMissing);
    }
    Ok(below as f64 / (n + 1) as f64)
}

/// Whether marginals are estimated separately for every time point or
/// pooled over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalMode {
    #[default]
    PerTime,
    Pooled,
}

/// Marginal estimate for one (variable, time) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalTable {
    /// `c₀ = −∞ ≤ c₁ ≤ … ≤ c_{C−1} ≤ c_C = +∞`; equal neighbours only
    /// around categories that were never observed.
    Ordinal { cutpoints: Vec<f64> },
    /// Sorted distinct values with their shrunk CDF values.
    Continuous { values: Vec<f64>, cdf: Vec<f64> },
    /// Nothing observed for this pair.
    Empty,
}

impl MarginalTable {
    fn fit(kind: VarKind, cells: &[Cell]) -> Self {
        if cells.is_empty() {
            return MarginalTable::Empty;
        }
        let denom = (cells.len() + 1) as f64;
        match kind {
            VarKind::Ordinal { categories } => {
                let c = categories as usize;
                let mut counts = vec![0usize; c];
                for cell in cells {
                    if let Cell::Ordinal(k) = cell {
                        counts[*k as usize] += 1;
                    }
                }
                let mut cutpoints = Vec::with_capacity(c + 1);
                cutpoints.push(f64::NEG_INFINITY);
                let mut cum = 0usize;
                for count in counts.iter().take(c - 1) {
                    cum += count;
                    cutpoints.push(normal::inv_cdf(cum as f64 / denom));
                }
                cutpoints.push(f64::INFINITY);
                MarginalTable::Ordinal { cutpoints }
            }
            VarKind::Continuous => {
                let mut xs: Vec<f64> = cells
                    .iter()
                    .filter_map(|c| match c {
                        Cell::Continuous(x) => Some(*x),
                        _ => None,
                    })
                    .collect();
                xs.sort_by(f64::total_cmp);
                let mut values = Vec::new();
                let mut cdf = Vec::new();
                let mut idx = 0;
                while idx < xs.len() {
                    let x = xs[idx];
                    while idx < xs.len() && xs[idx] == x {
                        idx += 1;
                    }
                    values.push(x);
                    cdf.push(idx as f64 / denom);
                }
                MarginalTable::Continuous { values, cdf }
            }
        }
    }

    /// Shrunk CDF of a continuous value (0 below the smallest observation).
    pub fn continuous_cdf(&self, y: f64) -> Option<f64> {
        match self {
            MarginalTable::Continuous { values, cdf } => {
                let pos = values.partition_point(|&v| v <= y);
                Some(if pos == 0 { 0.0 } else { cdf[pos - 1] })
            }
            _ => None,
        }
    }
}

/// Empirical marginals for every variable and time point.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModel {
    mode: MarginalMode,
    time_points: usize,
    tables: Vec<MarginalTable>,
}

impl MarginalModel {
    pub fn estimate(dataset: &OrdinalSeriesDataset, mode: MarginalMode) -> Self {
        let slots = match mode {
            MarginalMode::PerTime => dataset.time_points(),
            MarginalMode::Pooled => 1,
        };
        let mut tables = Vec::with_capacity(dataset.p() * slots);
        for j in 0..dataset.p() {
            for s in 0..slots {
                let t = match mode {
                    MarginalMode::PerTime => Some(s),
                    MarginalMode::Pooled => None,
                };
                tables.push(MarginalTable::fit(dataset.kinds()[j], &dataset.observed(j, t)));
            }
        }
        Self { mode, time_points: slots, tables }
    }

    pub fn mode(&self) -> MarginalMode {
        self.mode
    }

    pub fn table(&self, j: usize, t: usize) -> &MarginalTable {
        let slot = match self.mode {
            MarginalMode::PerTime => t,
            MarginalMode::Pooled => 0,
        };
        &self.tables[j * self.time_points + slot]
    }
}

/// Truncation interval of one latent cell. Continuous cells are degenerate
/// (`lower == upper`), missing cells are `(−∞, +∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub lower: f64,
    pub upper: f64,
}

impl CellBounds {
    pub const UNBOUNDED: CellBounds = CellBounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn point(z: f64) -> Self {
        Self { lower: z, upper: z }
    }

    /// The latent value when the interval is a single point.
    pub fn as_point(&self) -> Option<f64> {
        (self.lower == self.upper).then_some(self.lower)
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }
}

/// Latent-scale intervals for the whole panel, same layout as the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBounds {
    n: usize,
    t: usize,
    p: usize,
    cells: Vec<CellBounds>,
}

impl LatentBounds {
    pub fn from_cells(n: usize, t: usize, p: usize, cells: Vec<CellBounds>) -> Result<Self> {
        if cells.len() != n * t * p {
            return Err(Error::DimensionMismatch { expected: n * t * p, found: cells.len() });
        }
        if t < 2 || n < 1 || p < 1 {
            return Err(Error::InvalidDataset("bounds need n >= 1, p >= 1, T >= 2".to_string()));
        }
        if let Some(bad) = cells.iter().position(|c| !(c.lower <= c.upper)) {
            return Err(Error::InvalidDataset(format!("cell {bad} has lower > upper")));
        }
        Ok(Self { n, t, p, cells })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn time_points(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, j: usize) -> CellBounds {
        self.cells[(i * self.t + t) * self.p + j]
    }

    /// All cells of sample `i`, time-major.
    pub fn sample(&self, i: usize) -> &[CellBounds] {
        &self.cells[i * self.t * self.p..(i + 1) * self.t * self.p]
    }

    pub fn all_degenerate(&self) -> bool {
        self.cells.iter().all(|c| c.as_point().is_some())
    }
}

/// Maps every observation to its latent interval.
pub fn compute_bounds(dataset: &OrdinalSeriesDataset, marginals: &MarginalModel) -> Result<LatentBounds> {
    let (n, tt, p) = (dataset.n(), dataset.time_points(), dataset.p());
    let mut cells = Vec::with_capacity(n * tt * p);
    for i in 0..n {
        for t in 0..tt {
            for j in 0..p {
                let b = match (dataset.get(i, t, j), marginals.table(j, t)) {
                    (Cell::Missing, _) => CellBounds::UNBOUNDED,
                    (Cell::Ordinal(k), MarginalTable::Ordinal { cutpoints }) => {
                        let k = k as usize;
                        CellBounds { lower: cutpoints[k], upper: cutpoints[k + 1] }
                    }
                    (Cell::Continuous(y), table @ MarginalTable::Continuous { .. }) => {
                        let u = table.continuous_cdf(y).unwrap_or(0.0);
                        CellBounds::point(normal::inv_cdf(u))
                    }
                    _ => {
                        return Err(Error::InvalidDataset(format!(
                            "marginal model does not match cell ({i}, {t}, {j})"
                        )))
                    }
                };
                cells.push(b);
            }
        }
    }
    LatentBounds::from_cells(n, tt, p, cells)
}

impl OrdinalSeriesDataset {
    /// Convenience: marginals followed by bounds.
    pub fn latent_bounds(&self, mode: MarginalMode) -> Result<LatentBounds> {
        compute_bounds(self, &MarginalModel::estimate(self, mode))
    }
}
