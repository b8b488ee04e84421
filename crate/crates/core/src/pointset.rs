//! Point sets in ℝᵈ: separation, half-open cube counting and upper Beurling density.
//!
//! Every [`PointSet`] is finite. Infinite families (lattices, the reciprocal
//! family `{1/n}`) are represented by truncations that remember how they were
//! generated, so that callers can grow the truncation and watch how counts
//! behave.
//!
//! Cube membership is the half-open product `∏ [lᵢ, lᵢ + h)` evaluated with
//! exact floating comparisons. All counting paths share [`Cube::contains`] so
//! the sliding-window and brute-force routes agree bit for bit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper limit on the number of lattice coefficient vectors visited by a generator.
const MAX_LATTICE_ENUMERATION: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointSetError {
    #[error("a point needs at least one coordinate")]
    ZeroDimension,
    #[error("coordinate {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate point {0:?}")]
    Duplicate(Vec<f64>),
    #[error("separation is undefined for fewer than two points")]
    UndefinedSeparation,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("window too small: cube side {h} does not fit inside generator window of extent {extent}")]
    WindowTooSmall { h: f64, extent: f64 },
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
}

pub type Result<T> = std::result::Result<T, PointSetError>;

/// A point of ℝᵈ with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(PointSetError::ZeroDimension);
        }
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, c)| !c.is_finite()) {
            return Err(PointSetError::NonFinite { index, value });
        }
        // -0.0 and 0.0 are the same point
        Ok(Point(coords.into_iter().map(|c| c + 0.0).collect()))
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim.max(1)])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &Point) -> f64 {
        distance(&self.0, &other.0)
    }

    /// Componentwise `self + other`.
    pub fn offset_by(&self, other: &Point) -> Result<Point> {
        check_dim(self.dim(), other.dim())?;
        Point::new(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn negated(&self) -> Point {
        Point(self.0.iter().map(|c| -c + 0.0).collect())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(PointSetError::DimensionMismatch { expected, found })
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Half-open axis-aligned cube `∏ [lᵢ, lᵢ + side)`.
///
/// Stored by its lower corner; [`Cube::centered`] builds `Q_h(x)` with
/// lower corner `x − h/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    lower: Vec<f64>,
    side: f64,
}

impl Cube {
    pub fn centered(center: &Point, side: f64) -> Result<Self> {
        check_side(side)?;
        Ok(Cube {
            lower: center.0.iter().map(|c| c - side / 2.0).collect(),
            side,
        })
    }

    pub fn anchored(lower: &Point, side: f64) -> Result<Self> {
        check_side(side)?;
        Ok(Cube {
            lower: lower.0.clone(),
            side,
        })
    }

    /// `Q_h` centered at the origin of ℝᵈ.
    pub fn at_origin(dim: usize, side: f64) -> Result<Self> {
        Self::centered(&Point::origin(dim), side)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<f64> {
        self.lower.iter().map(|l| l + self.side).collect()
    }

    pub fn center(&self) -> Point {
        Point(self.lower.iter().map(|l| l + self.side / 2.0).collect())
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.contains_coords(&p.0)
    }

    pub(crate) fn contains_coords(&self, x: &[f64]) -> bool {
        self.lower
            .iter()
            .zip(x)
            .all(|(&l, &c)| in_window(l, self.side, c))
    }
}

#[inline]
fn in_window(lower: f64, side: f64, x: f64) -> bool {
    lower <= x && x < lower + side
}

fn check_side(side: f64) -> Result<()> {
    if side.is_finite() && side > 0.0 {
        Ok(())
    } else {
        Err(PointSetError::InvalidParameter(format!(
            "cube side must be positive and finite, got {side}"
        )))
    }
}

/// How a truncated point set was generated.
///
/// Lattices keep the points `Σ nᵢ bᵢ + offset` that fall inside the closed
/// window `[−window, window]ᵈ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Lattice {
        basis: Vec<Vec<f64>>,
        window: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    /// Lattice points moved by independent uniform jitter in `[−amplitude, amplitude]`.
    PerturbedLattice {
        basis: Vec<Vec<f64>>,
        window: f64,
        amplitude: f64,
        seed: u64,
    },
    /// `{1/n : 1 ≤ n ≤ N}` in ℝ.
    Reciprocal {
        #[serde(rename = "N", alias = "n")]
        n: usize,
    },
    Union {
        children: Vec<Provenance>,
    },
    Explicit {
        rows: Vec<Vec<f64>>,
    },
}

impl Provenance {
    /// Integer lattice `spacing·ℤᵈ` with an axis-aligned basis.
    pub fn scaled_lattice(spacing: f64, dim: usize, window: f64) -> Self {
        let basis = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { spacing } else { 0.0 }).collect())
            .collect();
        Provenance::Lattice {
            basis,
            window,
            offset: None,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Provenance::Lattice { basis, .. } | Provenance::PerturbedLattice { basis, .. } => {
                Some(basis.len())
            }
            Provenance::Reciprocal { .. } => Some(1),
            Provenance::Union { children } => children.iter().find_map(|c| c.dim()),
            Provenance::Explicit { rows } => rows.first().map(Vec::len),
        }
    }

    /// Same generator with its truncation parameter replaced: the window for
    /// lattices, `N` for the reciprocal family. Explicit sets are unchanged.
    pub fn truncated(&self, radius: f64) -> Provenance {
        match self {
            Provenance::Lattice { basis, offset, .. } => Provenance::Lattice {
                basis: basis.clone(),
                window: radius,
                offset: offset.clone(),
            },
            Provenance::PerturbedLattice {
                basis,
                amplitude,
                seed,
                ..
            } => Provenance::PerturbedLattice {
                basis: basis.clone(),
                window: radius,
                amplitude: *amplitude,
                seed: *seed,
            },
            Provenance::Reciprocal { .. } => Provenance::Reciprocal {
                n: radius.max(1.0).round() as usize,
            },
            Provenance::Union { children } => Provenance::Union {
                children: children.iter().map(|c| c.truncated(radius)).collect(),
            },
            Provenance::Explicit { rows } => Provenance::Explicit { rows: rows.clone() },
        }
    }

    /// True when the set is a finite truncation of an infinite family.
    pub fn is_truncated(&self) -> bool {
        match self {
            Provenance::Lattice { .. }
            | Provenance::PerturbedLattice { .. }
            | Provenance::Reciprocal { .. } => true,
            Provenance::Union { children } => children.iter().any(Provenance::is_truncated),
            Provenance::Explicit { .. } => false,
        }
    }

    /// Side length of the smallest lattice window involved, if any.
    pub fn window_extent(&self) -> Option<f64> {
        match self {
            Provenance::Lattice { window, .. } | Provenance::PerturbedLattice { window, .. } => {
                Some(2.0 * window)
            }
            Provenance::Union { children } => children
                .iter()
                .filter_map(Provenance::window_extent)
                .min_by(f64::total_cmp),
            _ => None,
        }
    }

    /// Whether every point of the untruncated family lying in the open box
    /// `(lo, hi)` is present in the truncation.
    pub fn covers_open_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        match self {
            Provenance::Lattice { window, .. } => {
                lo.iter().all(|&l| l >= -window) && hi.iter().all(|&h| h <= *window)
            }
            Provenance::PerturbedLattice {
                window, amplitude, ..
            } => {
                let inner = window - amplitude;
                lo.iter().all(|&l| l >= -inner) && hi.iter().all(|&h| h <= inner)
            }
            Provenance::Reciprocal { n } => {
                // the missing tail {1/m : m > n} fills (0, 1/(n+1)]
                let tail_top = 1.0 / (*n as f64 + 1.0);
                !(lo[0] < tail_top && hi[0] > 0.0)
            }
            Provenance::Union { children } => children.iter().all(|c| c.covers_open_box(lo, hi)),
            Provenance::Explicit { .. } => true,
        }
    }

    /// Materialize the points (unsorted, possibly with duplicates).
    fn generate_rows(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            Provenance::Lattice {
                basis,
                window,
                offset,
            } => lattice_rows(basis, *window, offset.as_deref()),
            Provenance::PerturbedLattice {
                basis,
                window,
                amplitude,
                seed,
            } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(PointSetError::InvalidGenerator(format!(
                        "perturbation amplitude must be nonnegative, got {amplitude}"
                    )));
                }
                let mut rows = lattice_rows(basis, *window, None)?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for row in &mut rows {
                    for c in row.iter_mut() {
                        *c += rng.random_range(-1.0..=1.0) * amplitude;
                    }
                }
                Ok(rows)
            }
            Provenance::Reciprocal { n } => {
                if *n == 0 {
                    return Err(PointSetError::InvalidGenerator(
                        "reciprocal family needs N ≥ 1".into(),
                    ));
                }
                Ok((1..=*n).map(|k| vec![1.0 / k as f64]).collect())
            }
            Provenance::Union { children } => {
                let mut rows = Vec::new();
                for child in children {
                    rows.extend(child.generate_rows()?);
                }
                Ok(rows)
            }
            Provenance::Explicit { rows } => Ok(rows.clone()),
        }
    }
}

fn lattice_rows(basis: &[Vec<f64>], window: f64, offset: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
    let d = basis.len();
    if d == 0 || basis.iter().any(|b| b.len() != d) {
        return Err(PointSetError::InvalidGenerator(
            "lattice basis must be d vectors of length d".into(),
        ));
    }
    if !(window.is_finite() && window >= 0.0) {
        return Err(PointSetError::InvalidGenerator(format!(
            "lattice window must be nonnegative, got {window}"
        )));
    }
    let zero = vec![0.0; d];
    let offset = offset.unwrap_or(&zero);
    check_dim(d, offset.len())?;

    let m = DMatrix::from_fn(d, d, |row, col| basis[col][row]);
    let inv = m
        .try_inverse()
        .ok_or_else(|| PointSetError::InvalidGenerator("lattice basis is singular".into()))?;
    let bounds: Vec<i64> = (0..d)
        .map(|i| {
            let reach: f64 = (0..d)
                .map(|j| inv[(i, j)].abs() * (window + offset[j].abs()))
                .sum();
            reach.ceil() as i64 + 1
        })
        .collect();
    let total = bounds
        .iter()
        .try_fold(1usize, |acc, b| acc.checked_mul((2 * b + 1) as usize));
    match total {
        Some(t) if t <= MAX_LATTICE_ENUMERATION => {}
        _ => {
            return Err(PointSetError::InvalidGenerator(
                "lattice window too large to enumerate".into(),
            ))
        }
    }

    let mut rows = Vec::new();
    let mut n: Vec<i64> = bounds.iter().map(|b| -b).collect();
    loop {
        let x: Vec<f64> = (0..d)
            .map(|j| {
                let mut s = 0.0;
                for (i, ni) in n.iter().enumerate() {
                    s += *ni as f64 * basis[i][j];
                }
                s + offset[j]
            })
            .collect();
        if x.iter().all(|c| c.abs() <= window) {
            rows.push(x);
        }
        // odometer increment
        let mut axis = 0;
        loop {
            if axis == d {
                return Ok(rows);
            }
            n[axis] += 1;
            if n[axis] > bounds[axis] {
                n[axis] = -bounds[axis];
                axis += 1;
            } else {
                break;
            }
        }
    }
}

/// A finite set of distinct points of ℝᵈ, stored in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSet {
    dim: usize,
    points: Vec<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// `ν⁺(h)` bracket. `exact` means `lower == upper == ν⁺(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuPlus {
    pub lower: usize,
    pub upper: usize,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Smallest pairwise distance; `None` for fewer than two points.
    pub min_gap: Option<f64>,
    pub delta: f64,
    pub part_count: usize,
    /// Indices into [`PointSet::points`].
    pub parts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub h: f64,
    pub nu_lower: usize,
    pub nu_upper: usize,
    pub exact: bool,
    pub ratio_lower: f64,
    pub ratio_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub rows: Vec<DensityRow>,
    /// Max of `ratio_lower` over the largest third of the `h` values.
    pub density_estimate: f64,
    /// Set when the points are a truncation of an infinite family; large
    /// cubes then undercount near the truncation boundary.
    pub truncation_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityRow {
    pub h: f64,
    pub union_nu: usize,
    pub parts_nu_upper_sum: usize,
    pub holds: bool,
}

impl PointSet {
    pub fn new(dim: usize, points: Vec<Point>) -> Result<Self> {
        Self::build(dim, points, None)
    }

    /// Build from coordinate rows; the dimension is taken from the first row.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| {
            PointSetError::InvalidParameter("cannot infer dimension of an empty row list".into())
        })?;
        let points = rows.into_iter().map(Point::new).collect::<Result<Vec<_>>>()?;
        Self::new(dim, points)
    }

    pub fn from_1d(xs: &[f64]) -> Result<Self> {
        let points = xs.iter().map(|&x| Point::scalar(x)).collect::<Result<Vec<_>>>()?;
        Self::new(1, points)
    }

    pub fn generate(provenance: &Provenance) -> Result<Self> {
        let dim = provenance
            .dim()
            .ok_or_else(|| PointSetError::InvalidGenerator("cannot infer dimension".into()))?;
        let points = provenance
            .generate_rows()?
            .into_iter()
            .map(Point::new)
            .collect::<Result<Vec<_>>>()?;
        let provenance = match provenance {
            Provenance::Explicit { .. } => None,
            other => Some(other.clone()),
        };
        Self::build(dim, points, provenance)
    }

    /// `spacing·ℤᵈ ∩ [−window, window]ᵈ`.
    pub fn lattice(spacing: f64, dim: usize, window: f64) -> Result<Self> {
        Self::generate(&Provenance::scaled_lattice(spacing, dim, window))
    }

    pub fn reciprocal(n: usize) -> Result<Self> {
        Self::generate(&Provenance::Reciprocal { n })
    }

    /// Union of point sets that must not share points.
    pub fn union(children: &[PointSet]) -> Result<Self> {
        let provs = children
            .iter()
            .map(|c| {
                c.provenance.clone().unwrap_or_else(|| Provenance::Explicit {
                    rows: c.rows(),
                })
            })
            .collect();
        Self::generate(&Provenance::Union { children: provs })
    }

    fn build(dim: usize, mut points: Vec<Point>, provenance: Option<Provenance>) -> Result<Self> {
        if dim == 0 {
            return Err(PointSetError::ZeroDimension);
        }
        for p in &points {
            check_dim(dim, p.dim())?;
        }
        points.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        if let Some(w) = points.windows(2).find(|w| w[0] == w[1]) {
            return Err(PointSetError::Duplicate(w[0].0.clone()));
        }
        Ok(PointSet {
            dim,
            points,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.0.clone()).collect()
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Regenerate with a new truncation parameter (see [`Provenance::truncated`]).
    /// Sets without provenance are returned unchanged.
    pub fn truncated(&self, radius: f64) -> Result<Self> {
        match &self.provenance {
            Some(p) => Self::generate(&p.truncated(radius)),
            None => Ok(self.clone()),
        }
    }

    /// The sub-sets of a union-provenance set, in declaration order.
    pub fn union_parts(&self) -> Result<Option<Vec<PointSet>>> {
        match &self.provenance {
            Some(Provenance::Union { children }) => {
                children.iter().map(PointSet::generate).collect::<Result<Vec<_>>>().map(Some)
            }
            _ => Ok(None),
        }
    }

    /// Translate every point by `shift`.
    pub fn shifted(&self, shift: &Point) -> Result<Self> {
        check_dim(self.dim, shift.dim())?;
        let points = self
            .points
            .iter()
            .map(|p| p.offset_by(shift))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.dim, points)
    }

    /// Range of indices whose first coordinate lies in `[lo, hi)`.
    pub(crate) fn axis0_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.points.partition_point(|p| p.0[0] < lo);
        let end = self.points.partition_point(|p| p.0[0] < hi);
        start..end.max(start)
    }

    /// Infimum of pairwise Euclidean distances.
    pub fn min_separation(&self) -> Result<f64> {
        if self.points.len() < 2 {
            return Err(PointSetError::UndefinedSeparation);
        }
        let mut best = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                if q.0[0] - p.0[0] >= best {
                    break;
                }
                best = best.min(p.distance(q));
            }
        }
        Ok(best)
    }

    /// Greedy first-fit partition into δ-separated parts (pairwise distances ≥ δ).
    ///
    /// Points are visited in lexicographic order and placed in the first part
    /// with no member closer than `delta`. The part count is an upper bound on
    /// the chromatic number of the conflict graph `{(i, j) : |γᵢ − γⱼ| < δ}`.
    pub fn decompose_separated(&self, delta: f64) -> Result<SeparationReport> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(PointSetError::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        // each part keeps a hash grid of side delta; conflicts live in adjacent cells
        let cell_of = |p: &Point| -> Vec<i64> {
            p.0.iter().map(|c| (c / delta).floor() as i64).collect()
        };
        let neighbours = neighbour_offsets(self.dim);
        let mut parts: Vec<Vec<usize>> = Vec::new();
        let mut grids: Vec<HashMap<Vec<i64>, Vec<usize>>> = Vec::new();

        for (i, p) in self.points.iter().enumerate() {
            let cell = cell_of(p);
            let slot = grids.iter().position(|grid| {
                neighbours.iter().all(|off| {
                    let key: Vec<i64> = cell.iter().zip(off).map(|(c, o)| c + o).collect();
                    grid.get(&key).is_none_or(|members| {
                        members.iter().all(|&j| p.distance(&self.points[j]) >= delta)
                    })
                })
            });
            let slot = slot.unwrap_or_else(|| {
                parts.push(Vec::new());
                grids.push(HashMap::new());
                parts.len() - 1
            });
            parts[slot].push(i);
            grids[slot].entry(cell).or_default().push(i);
        }

        Ok(SeparationReport {
            min_gap: self.min_separation().ok(),
            delta,
            part_count: parts.len(),
            parts,
        })
    }

    pub fn count_in_cube(&self, q: &Cube) -> Result<usize> {
        check_dim(self.dim, q.dim())?;
        let lo = q.lower[0];
        Ok(self.points[self.axis0_range(lo, lo + q.side)]
            .iter()
            .filter(|p| q.contains(p))
            .count())
    }

    /// `ν⁺(h) = sup_x #(Γ ∩ Q_h(x))`: exact for d ≤ 2, grid-bracketed otherwise.
    pub fn nu_plus(&self, h: f64) -> Result<NuPlus> {
        check_side(h)?;
        Ok(nu_plus_of(&self.points, self.dim, h))
    }

    /// Grid bracket `N_h ≤ ν⁺(h) ≤ 2ᵈ N_h` with `N_h = max_n #(Γ ∩ Q_h(hn))`.
    pub fn nu_plus_grid(&self, h: f64) -> Result<NuPlus> {
        check_side(h)?;
        Ok(grid_bracket(&self.points, self.dim, h))
    }

    /// Counts of the grid cubes `Q_h(hn)`, `n ∈ ℤᵈ`, that contain points.
    pub fn grid_counts(&self, h: f64) -> Result<BTreeMap<Vec<i64>, usize>> {
        check_side(h)?;
        Ok(grid_counts_of(&self.points, h))
    }

    pub fn density_profile(&self, h_values: &[f64]) -> Result<DensityProfile> {
        if h_values.is_empty() {
            return Err(PointSetError::InvalidParameter("h_values is empty".into()));
        }
        if h_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PointSetError::InvalidParameter(
                "h_values must be strictly increasing".into(),
            ));
        }
        let h_max = *h_values.last().unwrap();
        if let Some(extent) = self.provenance.as_ref().and_then(Provenance::window_extent) {
            if h_max >= extent {
                return Err(PointSetError::WindowTooSmall { h: h_max, extent });
            }
        }
        let rows = h_values
            .iter()
            .map(|&h| {
                let nu = self.nu_plus(h)?;
                let vol = h.powi(self.dim as i32);
                Ok(DensityRow {
                    h,
                    nu_lower: nu.lower,
                    nu_upper: nu.upper,
                    exact: nu.exact,
                    ratio_lower: nu.lower as f64 / vol,
                    ratio_upper: nu.upper as f64 / vol,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DensityProfile {
            density_estimate: top_third_max(&rows, |r| r.ratio_lower),
            rows,
            truncation_bias: self
                .provenance
                .as_ref()
                .is_some_and(Provenance::is_truncated),
        })
    }

    /// Points whose open `radius`-ball holds at least `threshold` other points.
    ///
    /// A finite-truncation heuristic for accumulation points: a finite set
    /// has none, but a cluster that keeps filling up as the truncation grows
    /// is the finite trace of one.
    pub fn detect_accumulation(&self, radius: f64, threshold: usize) -> Result<Vec<Point>> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(PointSetError::InvalidParameter(format!(
                "radius must be positive, got {radius}"
            )));
        }
        if threshold < 2 {
            return Err(PointSetError::InvalidParameter(
                "threshold must be at least 2".into(),
            ));
        }
        Ok(self
            .points
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                let x = p.0[0];
                let range = self.axis0_range(x - radius, x + radius);
                let others = range
                    .filter(|j| j != i && p.distance(&self.points[*j]) < radius)
                    .count();
                others >= threshold
            })
            .map(|(_, p)| p.clone())
            .collect())
    }

    /// Checks `ν⁺(Γ, h) ≤ Σₖ ν⁺(Γₖ, h)` for a union-provenance set.
    pub fn subadditivity(&self, h_values: &[f64]) -> Result<Option<Vec<SubadditivityRow>>> {
        let Some(parts) = self.union_parts()? else {
            return Ok(None);
        };
        let refs: Vec<&PointSet> = parts.iter().collect();
        subadditivity_rows(&refs, h_values).map(Some)
    }
}

/// Compare the disjoint union of `parts` (multiset semantics) against the
/// sum of the parts' upper brackets at each `h`.
pub fn subadditivity_rows(parts: &[&PointSet], h_values: &[f64]) -> Result<Vec<SubadditivityRow>> {
    let dim = parts
        .first()
        .map(|p| p.dim)
        .ok_or_else(|| PointSetError::InvalidParameter("no parts".into()))?;
    let mut all: Vec<Point> = Vec::new();
    for p in parts {
        check_dim(dim, p.dim)?;
        all.extend(p.points.iter().cloned());
    }
    all.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    h_values
        .iter()
        .map(|&h| {
            check_side(h)?;
            let union_nu = nu_plus_of(&all, dim, h).lower;
            let parts_nu_upper_sum = parts
                .iter()
                .map(|p| nu_plus_of(&p.points, dim, h).upper)
                .sum();
            Ok(SubadditivityRow {
                h,
                union_nu,
                parts_nu_upper_sum,
                holds: union_nu <= parts_nu_upper_sum,
            })
        })
        .collect()
}

pub(crate) fn top_third_max<T>(rows: &[T], key: impl Fn(&T) -> f64) -> f64 {
    let take = rows.len().div_ceil(3).max(1);
    rows[rows.len() - take..]
        .iter()
        .map(key)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn neighbour_offsets(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |o| {
                    let mut w = v.clone();
                    w.push(o);
                    w
                })
            })
            .collect();
    }
    out
}

/// `ν⁺` on a lexicographically sorted slice; duplicates count with multiplicity.
pub(crate) fn nu_plus_of(points: &[Point], dim: usize, h: f64) -> NuPlus {
    if points.is_empty() {
        return NuPlus {
            lower: 0,
            upper: 0,
            exact: true,
        };
    }
    match dim {
        1 => {
            let xs: Vec<f64> = points.iter().map(|p| p.0[0]).collect();
            exact(max_window_1d(&xs, h))
        }
        2 => exact(max_window_2d(points, h)),
        _ => grid_bracket(points, dim, h),
    }
}

fn exact(n: usize) -> NuPlus {
    NuPlus {
        lower: n,
        upper: n,
        exact: true,
    }
}

/// Max number of sorted values inside a window `[xs[i], xs[i] + h)`.
///
/// The supremum over all windows is attained with the left end on a point:
/// sliding a window right until its left end meets its first point never
/// drops a point.
fn max_window_1d(xs: &[f64], h: f64) -> usize {
    let mut best = 0;
    let mut end = 0;
    for (i, &a) in xs.iter().enumerate() {
        end = end.max(i);
        while end < xs.len() && in_window(a, h, xs[end]) {
            end += 1;
        }
        best = best.max(end - i);
    }
    best
}

/// Exact planar `ν⁺`: an optimal square can be slid until its left face
/// meets a point and its bottom face meets a point in the resulting strip.
fn max_window_2d(points: &[Point], h: f64) -> usize {
    let mut best = 0;
    let mut prev_anchor = None;
    let mut ys = Vec::new();
    for i in 0..points.len() {
        let a = points[i].0[0];
        if prev_anchor == Some(a) {
            continue;
        }
        prev_anchor = Some(a);
        ys.clear();
        let mut j = i;
        while j < points.len() && in_window(a, h, points[j].0[0]) {
            ys.push(points[j].0[1]);
            j += 1;
        }
        if ys.len() <= best {
            continue;
        }
        ys.sort_by(f64::total_cmp);
        best = best.max(max_window_1d(&ys, h));
    }
    best
}

/// Boundary `b_n` of the grid cubes along one axis: cube `n` is `[b_n, b_{n+1})`.
fn grid_boundary(n: i64, h: f64) -> f64 {
    n as f64 * h - h / 2.0
}

fn grid_index(x: f64, h: f64) -> i64 {
    let mut n = (x / h + 0.5).floor() as i64;
    while x < grid_boundary(n, h) {
        n -= 1;
    }
    while x >= grid_boundary(n + 1, h) {
        n += 1;
    }
    n
}

fn grid_counts_of(points: &[Point], h: f64) -> BTreeMap<Vec<i64>, usize> {
    let mut counts = BTreeMap::new();
    for p in points {
        let key: Vec<i64> = p.0.iter().map(|&c| grid_index(c, h)).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

fn grid_bracket(points: &[Point], dim: usize, h: f64) -> NuPlus {
    let n_h = grid_counts_of(points, h).values().copied().max().unwrap_or(0);
    NuPlus {
        lower: n_h,
        upper: n_h << dim,
        exact: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube1(center: f64, side: f64) -> Cube {
        Cube::centered(&Point::scalar(center).unwrap(), side).unwrap()
    }

    fn ints(n: i64) -> PointSet {
        PointSet::from_1d(&(-n..=n).map(|k| k as f64).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn min_separation_examples() {
        let s = PointSet::from_1d(&[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(s.min_separation().unwrap(), 0.5);
        let s = PointSet::from_rows(vec![vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.min_separation().unwrap(), 5.0);
        let s = PointSet::from_1d(&[1.0]).unwrap();
        assert_eq!(s.min_separation(), Err(PointSetError::UndefinedSeparation));
    }

    #[test]
    fn reciprocal_min_gap_matches_brute_force() {
        let s = PointSet::reciprocal(100).unwrap();
        let pts = s.rows();
        let mut brute = f64::INFINITY;
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i != j {
                    brute = brute.min((pts[i][0] - pts[j][0]).abs());
                }
            }
        }
        assert_eq!(s.min_separation().unwrap(), brute);
        assert!((brute - 1.0 / 9900.0).abs() < 1e-15);
    }

    #[test]
    fn duplicates_are_rejected() {
        let err = PointSet::from_1d(&[0.0, 1.0, 0.0]).unwrap_err();
        assert_eq!(err, PointSetError::Duplicate(vec![0.0]));
        assert!(PointSet::from_1d(&[-0.0, 0.0]).is_err());
    }

    #[test]
    fn decompose_interleaved_progressions() {
        let s = PointSet::from_1d(&[0.0, 0.1, 1.0, 1.1, 2.0, 2.1]).unwrap();
        let r = s.decompose_separated(0.5).unwrap();
        assert_eq!(r.part_count, 2);
        let values: Vec<Vec<f64>> = r
            .parts
            .iter()
            .map(|part| part.iter().map(|&i| s.points()[i].coords()[0]).collect())
            .collect();
        assert_eq!(values, vec![vec![0.0, 1.0, 2.0], vec![0.1, 1.1, 2.1]]);

        let s = PointSet::from_1d(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.decompose_separated(0.5).unwrap().part_count, 1);
    }

    #[test]
    fn decompose_uses_non_strict_separation() {
        let s = PointSet::from_1d(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(s.decompose_separated(0.5).unwrap().part_count, 1);
        assert_eq!(s.decompose_separated(0.5000001).unwrap().part_count, 2);
    }

    #[test]
    fn count_in_cube_half_open() {
        let z = ints(5);
        assert_eq!(z.count_in_cube(&cube1(0.0, 1.0)).unwrap(), 1);
        assert_eq!(z.count_in_cube(&cube1(0.5, 2.0)).unwrap(), 2);
        let s = PointSet::from_1d(&[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(s.count_in_cube(&cube1(0.5, 1.0)).unwrap(), 2);
        let q2 = Cube::at_origin(2, 1.0).unwrap();
        assert!(matches!(
            s.count_in_cube(&q2),
            Err(PointSetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nu_plus_examples() {
        let s = PointSet::from_1d(&[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(s.nu_plus(1.0).unwrap(), exact(2));
        assert_eq!(s.nu_plus(1.1).unwrap(), exact(3));
        let half = PointSet::lattice(0.5, 2, 4.0).unwrap();
        assert_eq!(half.nu_plus(1.0).unwrap(), exact(4));
        let empty = PointSet::new(3, vec![]).unwrap();
        assert_eq!(empty.nu_plus(1.0).unwrap(), exact(0));
    }

    #[test]
    fn nu_plus_in_three_dimensions_is_bracketed() {
        let s = PointSet::lattice(1.0, 3, 3.0).unwrap();
        let nu = s.nu_plus(2.0).unwrap();
        assert!(!nu.exact);
        assert_eq!(nu.lower, 8);
        assert_eq!(nu.upper, 64);
    }

    #[test]
    fn integer_density_profile() {
        // a half-open window of integer length h holds exactly h integers
        let p = ints(100).density_profile(&[10.0, 20.0, 40.0]).unwrap();
        let ratios: Vec<f64> = p.rows.iter().map(|r| r.ratio_lower).collect();
        assert_eq!(ratios, vec![1.0, 1.0, 1.0]);
        assert_eq!(p.density_estimate, 1.0);
        // non-integer sides pick up one more point
        let p = ints(100).density_profile(&[10.5]).unwrap();
        assert_eq!(p.rows[0].nu_lower, 11);
    }

    #[test]
    fn window_too_small_is_reported() {
        let z = PointSet::lattice(1.0, 1, 10.0).unwrap();
        assert!(z.density_profile(&[5.0, 19.0]).is_ok());
        assert!(matches!(
            z.density_profile(&[5.0, 20.0]),
            Err(PointSetError::WindowTooSmall { .. })
        ));
        assert!(z.density_profile(&[5.0]).unwrap().truncation_bias);
        assert!(ints(10).density_profile(&[5.0]).map(|p| !p.truncation_bias).unwrap());
    }

    #[test]
    fn reciprocal_counts_grow() {
        for n in [10usize, 50, 100] {
            let s = PointSet::reciprocal(n).unwrap();
            assert_eq!(s.nu_plus(1.0).unwrap().lower, n);
        }
    }

    #[test]
    fn accumulation_examples() {
        let s = PointSet::reciprocal(200).unwrap();
        let acc = s.detect_accumulation(0.01, 50).unwrap();
        assert!(acc.iter().any(|p| p.coords()[0] == 1.0 / 200.0));
        assert!(ints(100).detect_accumulation(0.4, 2).unwrap().is_empty());
        let mut xs = vec![0.0];
        xs.extend((1..=100).map(|k| 0.001 * k as f64));
        let s = PointSet::from_1d(&xs).unwrap();
        assert!(!s.detect_accumulation(0.05, 10).unwrap().is_empty());
    }

    #[test]
    fn lattice_generator_with_offset_and_skew() {
        let p = Provenance::Lattice {
            basis: vec![vec![1.0]],
            window: 3.0,
            offset: Some(vec![0.5]),
        };
        let s = PointSet::generate(&p).unwrap();
        assert_eq!(s.rows(), vec![vec![-2.5], vec![-1.5], vec![-0.5], vec![0.5], vec![1.5], vec![2.5]]);

        let hex = Provenance::Lattice {
            basis: vec![vec![1.0, 0.0], vec![0.5, 1.0]],
            window: 2.0,
            offset: None,
        };
        let s = PointSet::generate(&hex).unwrap();
        assert!(s.points().iter().all(|p| p.coords().iter().all(|c| c.abs() <= 2.0)));
        assert!(s.points().contains(&Point::new(vec![0.5, 1.0]).unwrap()));
        assert_eq!(s.min_separation().unwrap(), 1.0);
    }

    #[test]
    fn union_rejects_shared_points_and_keeps_parts() {
        let a = PointSet::lattice(1.0, 1, 5.0).unwrap();
        let b = PointSet::generate(&Provenance::Lattice {
            basis: vec![vec![1.0]],
            window: 5.0,
            offset: Some(vec![0.5]),
        })
        .unwrap();
        let u = PointSet::union(&[a.clone(), b]).unwrap();
        assert_eq!(u.len(), 21);
        assert_eq!(u.union_parts().unwrap().unwrap().len(), 2);
        assert!(PointSet::union(&[a.clone(), a]).is_err());
        let rows = u.subadditivity(&[0.5, 1.0, 3.0]).unwrap().unwrap();
        assert!(rows.iter().all(|r| r.holds));
    }

    #[test]
    fn perturbed_lattice_is_reproducible() {
        let p = Provenance::PerturbedLattice {
            basis: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            window: 5.0,
            amplitude: 0.2,
            seed: 7,
        };
        let a = PointSet::generate(&p).unwrap();
        let b = PointSet::generate(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 121);
        assert!(a.min_separation().unwrap() >= 0.6);
    }

    #[test]
    fn reach_coverage() {
        let lat = Provenance::scaled_lattice(1.0, 1, 20.0);
        assert!(lat.covers_open_box(&[-1.25], &[0.25]));
        assert!(!lat.covers_open_box(&[-21.0], &[0.25]));
        let rec = Provenance::Reciprocal { n: 100 };
        assert!(!rec.covers_open_box(&[-1.25], &[0.25]));
        assert!(rec.covers_open_box(&[0.5], &[2.0]));
    }
}
