//! Exact Lᵖ calculus on compactly supported piecewise-constant functions.
//!
//! A [`PiecewiseFn`] is a finite list of disjoint half-open boxes carrying
//! complex values. Norms, restrictions and dual pairings are evaluated in
//! closed form from box intersections, so there is no quadrature anywhere.
//! The pairing is sesquilinear: `⟨h, f⟩ = ∫ h · conj(f)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointset::{Cube, Point};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid box: {0}")]
    InvalidBlock(String),
    #[error("pieces {0} and {1} overlap; canonicalize the piece list first")]
    Overlap(usize, usize),
    #[error("operation needs a nonzero function")]
    ZeroFunction,
    #[error("exponent must lie in (1, ∞), got {0}")]
    InvalidExponent(f64),
    #[error("sampling: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, LpError>;

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LpError::DimensionMismatch { expected, found })
    }
}

/// Conjugate exponents `1/p + 1/q = 1` with `1 < p < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub p: f64,
    pub q: f64,
}

impl ExponentPair {
    pub fn new(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(LpError::InvalidExponent(p));
        }
        Ok(ExponentPair {
            p,
            q: conjugate(p),
        })
    }

    /// The same pair viewed from the dual side.
    pub fn dual(self) -> Self {
        ExponentPair {
            p: self.q,
            q: self.p,
        }
    }
}

pub fn conjugate(p: f64) -> f64 {
    if p == 2.0 {
        2.0
    } else {
        p / (p - 1.0)
    }
}

/// Half-open box `∏ [lowerᵢ, upperᵢ)` with positive volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Block {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(LpError::InvalidBlock("zero-dimensional box".into()));
        }
        check_dim(lower.len(), upper.len())?;
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(LpError::InvalidBlock(format!(
                    "need finite lower < upper on every axis, got [{l}, {u})"
                )));
            }
        }
        Ok(Block { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn from_cube(q: &Cube) -> Self {
        Block {
            lower: q.lower().to_vec(),
            upper: q.upper(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn min_side(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn intersect(&self, other: &Block) -> Option<Block> {
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let l = self.lower[i].max(other.lower[i]);
            let u = self.upper[i].min(other.upper[i]);
            if u <= l {
                return None;
            }
            lower.push(l);
            upper.push(u);
        }
        Some(Block { lower, upper })
    }

    pub fn contains_block(&self, other: &Block) -> bool {
        (0..self.dim())
            .all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    pub fn contains_coords(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= x[i] && x[i] < self.upper[i])
    }

    /// Shifted copy; `None` if rounding collapses an axis.
    pub fn shifted(&self, shift: &[f64]) -> Option<Block> {
        let lower: Vec<f64> = self.lower.iter().zip(shift).map(|(l, s)| l + s).collect();
        let upper: Vec<f64> = self.upper.iter().zip(shift).map(|(u, s)| u + s).collect();
        lower
            .iter()
            .zip(&upper)
            .all(|(l, u)| l < u)
            .then_some(Block { lower, upper })
    }

    fn cmp_corner(&self, other: &Block) -> Ordering {
        lex(&self.lower, &other.lower).then_with(|| lex(&self.upper, &other.upper))
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Volume of `a ∩ (b + shift)`.
#[inline]
fn overlap_volume(a: &Block, b: &Block, shift: &[f64]) -> f64 {
    let mut vol = 1.0;
    for i in 0..a.lower.len() {
        let l = a.lower[i].max(b.lower[i] + shift[i]);
        let u = a.upper[i].min(b.upper[i] + shift[i]);
        if u <= l {
            return 0.0;
        }
        vol *= u - l;
    }
    vol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub block: Block,
    pub value: Complex64,
}

impl Piece {
    pub fn new(block: Block, value: Complex64) -> Self {
        Piece { block, value }
    }

    pub fn real(block: Block, value: f64) -> Self {
        Piece {
            block,
            value: Complex64::new(value, 0.0),
        }
    }
}

/// Compactly supported piecewise-constant function on ℝᵈ.
///
/// Pieces are disjoint, nonzero, and sorted by lower corner. That order is
/// the summation order of every reduction, so results are reproducible bit
/// for bit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseFn {
    dim: usize,
    pieces: Vec<Piece>,
    /// Largest piece width along axis 0; bounds the candidate scan in pairings.
    #[serde(skip)]
    max_width0: f64,
}

impl PiecewiseFn {
    /// Build from disjoint pieces. Zero-valued pieces are dropped.
    pub fn new(dim: usize, pieces: Vec<Piece>) -> Result<Self> {
        let f = Self::assemble(dim, pieces)?;
        if let Some((i, j)) = f.first_overlap() {
            return Err(LpError::Overlap(i, j));
        }
        Ok(f)
    }

    /// Build from an arbitrary piece list: overlaps are split along every
    /// breakpoint and their values summed.
    pub fn from_overlapping(dim: usize, pieces: Vec<Piece>) -> Result<Self> {
        let f = Self::assemble(dim, pieces)?;
        if f.first_overlap().is_none() {
            return Ok(f);
        }
        Ok(f.split_and_sum())
    }

    pub fn zero(dim: usize) -> Self {
        PiecewiseFn {
            dim,
            pieces: Vec::new(),
            max_width0: 0.0,
        }
    }

    pub fn indicator(block: Block) -> Self {
        Self::constant(block, Complex64::new(1.0, 0.0))
    }

    pub fn constant(block: Block, value: Complex64) -> Self {
        let dim = block.dim();
        Self::assemble(dim, vec![Piece::new(block, value)]).expect("single piece is valid")
    }

    pub fn cube_indicator(q: &Cube) -> Self {
        Self::indicator(Block::from_cube(q))
    }

    fn assemble(dim: usize, pieces: Vec<Piece>) -> Result<Self> {
        if dim == 0 {
            return Err(LpError::InvalidBlock("zero-dimensional function".into()));
        }
        for p in &pieces {
            check_dim(dim, p.block.dim())?;
            if !(p.value.re.is_finite() && p.value.im.is_finite()) {
                return Err(LpError::InvalidBlock("non-finite piece value".into()));
            }
        }
        let mut pieces: Vec<Piece> = pieces
            .into_iter()
            .filter(|p| p.value != Complex64::new(0.0, 0.0))
            .collect();
        pieces.sort_by(|a, b| a.block.cmp_corner(&b.block));
        let max_width0 = pieces
            .iter()
            .map(|p| p.block.upper[0] - p.block.lower[0])
            .fold(0.0, f64::max);
        Ok(PiecewiseFn {
            dim,
            pieces,
            max_width0,
        })
    }

    fn first_overlap(&self) -> Option<(usize, usize)> {
        let zero = vec![0.0; self.dim];
        for (i, a) in self.pieces.iter().enumerate() {
            for (j, b) in self.pieces.iter().enumerate().skip(i + 1) {
                if b.block.lower[0] >= a.block.upper[0] {
                    break;
                }
                if overlap_volume(&a.block, &b.block, &zero) > 0.0 {
                    return Some((i, j));
                }
            }
        }
        None
    }

    fn split_and_sum(&self) -> Self {
        let d = self.dim;
        let breaks: Vec<Vec<f64>> = (0..d)
            .map(|axis| {
                let mut b: Vec<f64> = self
                    .pieces
                    .iter()
                    .flat_map(|p| [p.block.lower[axis], p.block.upper[axis]])
                    .collect();
                b.sort_by(f64::total_cmp);
                b.dedup();
                b
            })
            .collect();
        let index = |axis: usize, x: f64| breaks[axis].partition_point(|&b| b < x);

        let mut cells: BTreeMap<Vec<usize>, Complex64> = BTreeMap::new();
        for p in &self.pieces {
            let ranges: Vec<(usize, usize)> = (0..d)
                .map(|a| (index(a, p.block.lower[a]), index(a, p.block.upper[a])))
                .collect();
            let mut cell: Vec<usize> = ranges.iter().map(|r| r.0).collect();
            'cells: loop {
                *cells.entry(cell.clone()).or_default() += p.value;
                for a in (0..d).rev() {
                    cell[a] += 1;
                    if cell[a] < ranges[a].1 {
                        continue 'cells;
                    }
                    cell[a] = ranges[a].0;
                }
                break;
            }
        }

        // merge runs along the last axis
        let mut merged: Vec<(Vec<usize>, usize, Complex64)> = Vec::new();
        for (cell, value) in cells {
            if value == Complex64::new(0.0, 0.0) {
                continue;
            }
            if let Some((start, end, v)) = merged.last_mut() {
                let same_prefix = start[..d - 1] == cell[..d - 1];
                if same_prefix && *end == cell[d - 1] && *v == value {
                    *end += 1;
                    continue;
                }
            }
            let end = cell[d - 1] + 1;
            merged.push((cell, end, value));
        }

        let pieces = merged
            .into_iter()
            .map(|(start, end, value)| {
                let lower: Vec<f64> = (0..d).map(|a| breaks[a][start[a]]).collect();
                let upper: Vec<f64> = (0..d)
                    .map(|a| {
                        if a == d - 1 {
                            breaks[a][end]
                        } else {
                            breaks[a][start[a] + 1]
                        }
                    })
                    .collect();
                Piece::new(Block { lower, upper }, value)
            })
            .collect();
        Self::assemble(d, pieces).expect("split cells are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Already canonical; kept for symmetry with [`PiecewiseFn::from_overlapping`].
    pub fn canonicalize(&self) -> Self {
        self.clone()
    }

    pub fn bounding_box(&self) -> Option<Block> {
        let first = self.pieces.first()?;
        let mut lower = first.block.lower.clone();
        let mut upper = first.block.upper.clone();
        for p in &self.pieces[1..] {
            for a in 0..self.dim {
                lower[a] = lower[a].min(p.block.lower[a]);
                upper[a] = upper[a].max(p.block.upper[a]);
            }
        }
        Some(Block { lower, upper })
    }

    pub fn min_piece_side(&self) -> Option<f64> {
        self.pieces
            .iter()
            .map(|p| p.block.min_side())
            .min_by(f64::total_cmp)
    }

    pub fn max_abs(&self) -> f64 {
        self.pieces.iter().map(|p| p.value.norm()).fold(0.0, f64::max)
    }

    pub fn evaluate(&self, x: &[f64]) -> Complex64 {
        self.pieces
            .iter()
            .find(|p| p.block.contains_coords(x))
            .map_or(Complex64::new(0.0, 0.0), |p| p.value)
    }

    /// `(T_γ f)(x) = f(x − γ)`.
    pub fn translate(&self, gamma: &Point) -> Result<Self> {
        check_dim(self.dim, gamma.dim())?;
        let pieces = self
            .pieces
            .iter()
            .filter_map(|p| {
                p.block
                    .shifted(gamma.coords())
                    .map(|b| Piece::new(b, p.value))
            })
            .collect();
        Self::assemble(self.dim, pieces)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece::new(p.block.clone(), p.value * c))
            .collect();
        Self::assemble(self.dim, pieces).expect("scaling keeps pieces valid")
    }

    pub fn add(&self, other: &PiecewiseFn) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let pieces = self.pieces.iter().chain(&other.pieces).cloned().collect();
        Self::from_overlapping(self.dim, pieces)
    }

    /// `∫ |f|ᵖ`.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        self.pieces
            .iter()
            .map(|piece| piece.value.norm().powf(p) * piece.block.volume())
            .sum()
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.lp_norm_pow(p).powf(1.0 / p)
    }

    /// `χ_Q · f`.
    pub fn restrict(&self, q: &Cube) -> Result<Self> {
        check_dim(self.dim, q.dim())?;
        Ok(self.restrict_block(&Block::from_cube(q)))
    }

    pub fn restrict_block(&self, b: &Block) -> Self {
        let pieces = self
            .pieces
            .iter()
            .filter_map(|p| p.block.intersect(b).map(|blk| Piece::new(blk, p.value)))
            .collect();
        Self::assemble(self.dim, pieces).expect("restriction keeps pieces valid")
    }

    /// `⟨self, other⟩ = ∫ self · conj(other)`.
    pub fn pair(&self, other: &PiecewiseFn) -> Result<Complex64> {
        check_dim(self.dim, other.dim)?;
        Ok(self.pair_shifted(other, &vec![0.0; self.dim]))
    }

    /// `⟨self, T_shift other⟩` without materializing the translate.
    pub fn pair_translated(&self, other: &PiecewiseFn, shift: &Point) -> Result<Complex64> {
        check_dim(self.dim, other.dim)?;
        check_dim(self.dim, shift.dim())?;
        Ok(self.pair_shifted(other, shift.coords()))
    }

    pub(crate) fn pair_shifted(&self, other: &PiecewiseFn, shift: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        if self.pieces.is_empty() || other.pieces.is_empty() {
            return acc;
        }
        let s0 = shift[0];
        let w = other.max_width0;
        for a in &self.pieces {
            let lo = a.block.lower[0] - w - s0;
            let hi = a.block.upper[0] - s0;
            let slack = 1e-12 * (lo.abs() + hi.abs() + 1.0);
            let start = other
                .pieces
                .partition_point(|b| b.block.lower[0] < lo - slack);
            for b in &other.pieces[start..] {
                if b.block.lower[0] >= hi + slack {
                    break;
                }
                let vol = overlap_volume(&a.block, &b.block, shift);
                if vol > 0.0 {
                    acc += a.value * b.value.conj() * vol;
                }
            }
        }
        acc
    }

    /// `∫ f(x) · conj(e^{2πi⟨ξ,x⟩}) dx`, in closed form per box.
    pub fn pair_modulated(&self, freq: &Point) -> Result<Complex64> {
        check_dim(self.dim, freq.dim())?;
        Ok(self
            .pieces
            .iter()
            .map(|p| p.value * character_integral(&p.block, freq.coords()))
            .sum())
    }

    /// `⟨self, E_ξ g⟩ = ∫ self · conj(g) · e^{−2πi⟨ξ,x⟩}` with `(E_ξ g)(x) = e^{2πi⟨ξ,x⟩} g(x)`.
    pub fn pair_modulated_with(&self, g: &PiecewiseFn, freq: &Point) -> Result<Complex64> {
        check_dim(self.dim, g.dim)?;
        check_dim(self.dim, freq.dim())?;
        let mut acc = Complex64::new(0.0, 0.0);
        for a in &self.pieces {
            for b in &g.pieces {
                if let Some(blk) = a.block.intersect(&b.block) {
                    acc += a.value * b.value.conj() * character_integral(&blk, freq.coords());
                }
            }
        }
        Ok(acc)
    }

    /// Scale to unit Lᵖ norm.
    pub fn normalize(&self, p: f64) -> Result<Self> {
        let norm = self.lp_norm(p);
        if self.is_zero() || norm == 0.0 {
            return Err(LpError::ZeroFunction);
        }
        Ok(self.scale(Complex64::new(1.0 / norm, 0.0)))
    }

    /// The unit-norm functional in L^q attaining `⟨f, f̃⟩ = ‖f‖_p`:
    /// `f̃ = f·|f|^{p−2} / ‖f‖_p^{p−1}`.
    pub fn norming_functional(&self, p: f64) -> Result<Self> {
        if self.is_zero() {
            return Err(LpError::ZeroFunction);
        }
        let norm = self.lp_norm(p);
        let denom = norm.powf(p - 1.0);
        let pieces = self
            .pieces
            .iter()
            .map(|piece| {
                let m = piece.value.norm();
                Piece::new(piece.block.clone(), piece.value * (m.powf(p - 2.0) / denom))
            })
            .collect();
        Self::assemble(self.dim, pieces)
    }
}

/// `∫_B e^{−2πi⟨ξ,x⟩} dx` as a product of one-dimensional integrals.
fn character_integral(b: &Block, freq: &[f64]) -> Complex64 {
    b.lower
        .iter()
        .zip(&b.upper)
        .zip(freq)
        .map(|((&l, &u), &xi)| {
            // ∫_l^u e^{−iωx} dx = e^{−iωm} · w · sinc(ωw/2), stable as ω → 0
            let omega = 2.0 * PI * xi;
            let m = 0.5 * (l + u);
            let w = u - l;
            let t = 0.5 * omega * w;
            let sinc = if t == 0.0 { 1.0 } else { t.sin() / t };
            Complex64::from_polar(w * sinc, -omega * m)
        })
        .product()
}

/// Closed-form functions available to the grid sampler. Each is a product
/// of even one-dimensional factors that decrease in `|xᵢ|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    /// `exp(−π|x|²)`
    Gaussian,
    /// `∏ max(0, 1 − |xᵢ|)`
    Tent,
}

impl Expression {
    fn factor(self, t: f64) -> f64 {
        match self {
            Expression::Gaussian => (-PI * t * t).exp(),
            Expression::Tent => (1.0 - t.abs()).max(0.0),
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        x.iter().map(|&t| self.factor(t)).product()
    }

    /// (max, min) of a factor over `[l, u]`.
    fn factor_range(self, l: f64, u: f64) -> (f64, f64) {
        let near = if l <= 0.0 && 0.0 <= u {
            0.0
        } else {
            l.abs().min(u.abs())
        };
        let far = l.abs().max(u.abs());
        (self.factor(near), self.factor(far))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sampled {
    pub function: PiecewiseFn,
    pub step: f64,
    /// `max cell oscillation × vol(support)^{1/p}`; bounds the Lᵖ error on the
    /// support (the tail outside the support is not included).
    pub error_bound: f64,
}

/// Sample `expr` at cell centers of the grid of side `step` covering `support`.
pub fn sample(expr: Expression, step: f64, support: &Block, p: f64) -> Result<Sampled> {
    if !(step.is_finite() && step > 0.0) {
        return Err(LpError::Sampling(format!("step must be positive, got {step}")));
    }
    let d = support.dim();
    let counts: Vec<usize> = (0..d)
        .map(|a| {
            let n = (support.upper[a] - support.lower[a]) / step;
            if (n - n.round()).abs() > 1e-9 {
                Err(LpError::Sampling(format!(
                    "support extent on axis {a} is not a multiple of the step"
                )))
            } else {
                Ok(n.round() as usize)
            }
        })
        .collect::<Result<_>>()?;
    let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
    if total.is_none_or(|t| t > 1 << 22) {
        return Err(LpError::Sampling("grid has too many cells".into()));
    }

    let mut pieces = Vec::new();
    let mut max_osc: f64 = 0.0;
    let mut idx = vec![0usize; d];
    'cells: loop {
        let lower: Vec<f64> = (0..d)
            .map(|a| support.lower[a] + idx[a] as f64 * step)
            .collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + step).collect();
        let center: Vec<f64> = lower.iter().map(|l| l + step / 2.0).collect();
        let (hi, lo) = (0..d).fold((1.0, 1.0), |(hi, lo), a| {
            let (fmax, fmin) = expr.factor_range(lower[a], upper[a]);
            (hi * fmax, lo * fmin)
        });
        max_osc = max_osc.max(hi - lo);
        pieces.push(Piece::real(Block { lower, upper }, expr.eval(&center)));
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                continue 'cells;
            }
            idx[a] = 0;
        }
        break;
    }
    Ok(Sampled {
        function: PiecewiseFn::new(d, pieces)?,
        step,
        error_bound: max_osc * support.volume().powf(1.0 / p),
    })
}
