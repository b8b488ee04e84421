//! Finite unions of translate families `⋃ₖ {T_γ fₖ : γ ∈ Γₖ}` in Lᵖ(ℝᵈ).
//!
//! The quantities here are finite surrogates for infinite sums: each Γₖ is
//! a truncation, and every operation that depends on the missing points
//! checks that no translate outside the truncation can reach the test
//! function (the reach check).
//!
//! Terms are summed in `(k, γ)` order with γ in lexicographic order, and
//! each term is an exact box-intersection pairing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpfunc::{Block, ExponentPair, LpError, PiecewiseFn};
use crate::pointset::{self, Cube, Point, PointSet, PointSetError, SubadditivityRow};

/// Relative slack for the floating evaluation of exact inequalities.
pub const INEQUALITY_SLACK: f64 = 1e-12;
/// A fitted log–log slope below this is treated as flat.
pub const SLOPE_FLOOR: f64 = 1e-3;
/// Minimum coefficient of determination for a divergence verdict.
pub const DIVERGENCE_R2: f64 = 0.99;

/// Witness anchors are ranked by cube count; this many get an exact count.
const WITNESS_CANDIDATES: usize = 16;
/// Grid evaluations allowed while certifying the witness cube.
const WITNESS_GRID_BUDGET: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    PointSet(#[from] PointSetError),
    #[error("generator `{0}` has a zero function")]
    ZeroGenerator(String),
    #[error("a translate system needs at least one generator")]
    EmptySystem,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("test function is zero")]
    ZeroTest,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("epsilon {epsilon} must lie in (0, |⟨f, f̃⟩|) = (0, {pairing})")]
    EpsilonOutOfRange { epsilon: f64, pairing: f64 },
    #[error("truncation too small: translates of `{label}` outside the truncation can reach the test support")]
    TruncationTooSmall { label: String },
}

pub type Result<T> = std::result::Result<T, SystemError>;

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(SystemError::DimensionMismatch { expected, found })
    }
}

fn check_exponent(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 1.0 {
        Ok(())
    } else {
        Err(SystemError::InvalidParameter(format!(
            "{name} must lie in (1, ∞), got {v}"
        )))
    }
}

/// One family `{T_γ f : γ ∈ Γ}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    f: PiecewiseFn,
    gamma: PointSet,
    label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitenessBound {
    /// Separation constant δ of Γ.
    pub separation: f64,
    /// Number of δ-separated parts (one: Γ itself is δ-separated).
    pub parts: usize,
    /// Grid step ε = δ/(2√d), so every ε-cell has diameter below δ.
    pub epsilon: f64,
    /// The cube `Q_{2Nε}` encloses the query cube.
    pub cells_per_half_axis: u64,
    /// `n (2N)ᵈ ‖f‖_pᵖ`
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMass {
    pub label: String,
    pub mass: f64,
    pub finiteness: Option<FinitenessBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedMassReport {
    pub cube: Cube,
    pub p: f64,
    pub per_generator: Vec<GeneratorMass>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub h: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassDecay {
    pub center: Point,
    pub rows: Vec<MassRow>,
    /// Masses never increase as `h` shrinks.
    pub monotone: bool,
    pub tolerance: f64,
    pub final_below_tolerance: bool,
}

impl Generator {
    pub fn new(f: PiecewiseFn, gamma: PointSet, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if f.is_zero() {
            return Err(SystemError::ZeroGenerator(label));
        }
        check_dim(f.dim(), gamma.dim())?;
        Ok(Generator { f, gamma, label })
    }

    pub fn function(&self) -> &PiecewiseFn {
        &self.f
    }

    pub fn gamma(&self) -> &PointSet {
        &self.gamma
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn truncated(&self, radius: f64) -> Result<Self> {
        Ok(Generator {
            f: self.f.clone(),
            gamma: self.gamma.truncated(radius)?,
            label: self.label.clone(),
        })
    }

    /// Open box of shifts γ for which `T_γ f` can meet `support`.
    fn reach(&self, support: &Block) -> (Vec<f64>, Vec<f64>) {
        let bb = self.f.bounding_box().expect("generator is nonzero");
        let lo = support
            .lower()
            .iter()
            .zip(bb.upper())
            .map(|(s, f)| s - f)
            .collect();
        let hi = support
            .upper()
            .iter()
            .zip(bb.lower())
            .map(|(s, f)| s - f)
            .collect();
        (lo, hi)
    }

    /// Indices of Γ whose first coordinate could place `T_γ f` on `support`.
    fn candidates(&self, support: &Block) -> std::ops::Range<usize> {
        let (lo, hi) = self.reach(support);
        let slack = 1e-12 * (lo[0].abs() + hi[0].abs() + 1.0);
        self.gamma.axis0_range(lo[0] - slack, hi[0] + slack)
    }

    /// Fails when points missing from the truncation could meet `support`.
    pub fn reach_check(&self, support: &Block) -> Result<()> {
        let (lo, hi) = self.reach(support);
        match self.gamma.provenance() {
            Some(p) if !p.covers_open_box(&lo, &hi) => Err(SystemError::TruncationTooSmall {
                label: self.label.clone(),
            }),
            _ => Ok(()),
        }
    }

    /// Calls `visit(γ, ⟨test, T_γ f⟩)` for every γ whose translate meets the
    /// test support, in lexicographic γ order.
    fn for_each_pairing(&self, test: &PiecewiseFn, mut visit: impl FnMut(&Point, Complex64)) {
        let Some(support) = test.bounding_box() else {
            return;
        };
        let points = self.gamma.points();
        for gamma in &points[self.candidates(&support)] {
            let v = test.pair_shifted(&self.f, gamma.coords());
            if v != Complex64::new(0.0, 0.0) {
                visit(gamma, v);
            }
        }
    }

    fn power_sum(&self, test: &PiecewiseFn, exponent: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_pairing(test, |_, v| acc += v.norm().powf(exponent));
        acc
    }

    fn mass_in(&self, cube_block: &Block, p: f64) -> f64 {
        let mut acc = 0.0;
        let points = self.gamma.points();
        for gamma in &points[self.candidates(cube_block)] {
            for piece in self.f.pieces() {
                if let Some(b) = piece
                    .block
                    .shifted(gamma.coords())
                    .and_then(|b| b.intersect(cube_block))
                {
                    acc += piece.value.norm().powf(p) * b.volume();
                }
            }
        }
        acc
    }

    fn finiteness_bound(&self, q: &Cube, p: f64, mass: f64) -> Option<FinitenessBound> {
        let delta = self.gamma.min_separation().ok()?;
        let d = self.dim();
        let epsilon = delta / (2.0 * (d as f64).sqrt());
        let reach = q
            .lower()
            .iter()
            .chain(q.upper().iter())
            .fold(0.0f64, |m, c| m.max(c.abs()));
        let n = ((reach / epsilon).ceil() as u64).max(1);
        let bound = (2.0 * n as f64).powi(d as i32) * self.f.lp_norm_pow(p);
        Some(FinitenessBound {
            separation: delta,
            parts: 1,
            epsilon,
            cells_per_half_axis: n,
            bound,
            holds: mass <= bound * (1.0 + INEQUALITY_SLACK),
        })
    }

    /// `Σ_γ ‖χ_Q T_γ f‖_pᵖ`.
    pub fn localized_mass(&self, q: &Cube, p: f64) -> Result<LocalizedMassReport> {
        check_dim(self.dim(), q.dim())?;
        if !(p.is_finite() && p >= 1.0) {
            return Err(SystemError::InvalidParameter(format!("p must be ≥ 1, got {p}")));
        }
        let mass = self.mass_in(&Block::from_cube(q), p);
        Ok(LocalizedMassReport {
            cube: q.clone(),
            p,
            per_generator: vec![GeneratorMass {
                label: self.label.clone(),
                mass,
                finiteness: self.finiteness_bound(q, p, mass),
            }],
            total: mass,
        })
    }

    /// Localized mass on `Q_h(x)` for a decreasing list of sides.
    pub fn mass_decay_sweep(
        &self,
        x: &Point,
        h_values: &[f64],
        p: f64,
        tolerance: f64,
    ) -> Result<MassDecay> {
        check_decreasing(h_values)?;
        let rows = h_values
            .iter()
            .map(|&h| {
                let q = Cube::centered(x, h)?;
                Ok(MassRow {
                    h,
                    mass: self.localized_mass(&q, p)?.total,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let monotone = rows.windows(2).all(|w| w[1].mass <= w[0].mass);
        let last = rows.last().map_or(0.0, |r| r.mass);
        Ok(MassDecay {
            center: x.clone(),
            rows,
            monotone,
            tolerance,
            final_below_tolerance: last < tolerance,
        })
    }
}

fn check_decreasing(h_values: &[f64]) -> Result<()> {
    if h_values.is_empty() {
        return Err(SystemError::InvalidParameter("h_values is empty".into()));
    }
    if h_values.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(SystemError::InvalidParameter("h_values must be positive".into()));
    }
    if h_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SystemError::InvalidParameter(
            "h_values must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselRow {
    pub test: String,
    pub bessel_sum: f64,
    pub q_norm: f64,
    pub ratio: f64,
}

/// Certified lower bound on any upper p′-Bessel constant of the truncated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselEstimate {
    pub p_prime: f64,
    pub per_test: Vec<BesselRow>,
    pub bound_estimate: f64,
}

/// Smallest (C_q) constant compatible with one test functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KRequired {
    Finite(f64),
    /// The test annihilates every translate.
    Unbounded,
}

impl KRequired {
    pub fn finite(self) -> Option<f64> {
        match self {
            KRequired::Finite(k) => Some(k),
            KRequired::Unbounded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqRow {
    pub h: f64,
    pub q_norm: f64,
    pub p_power_sum: f64,
    /// `None` when the test annihilates the truncated system.
    pub k_required: Option<f64>,
    /// `Σₖ Σ_γ ‖χ_{Q_{2h}} T_γ fₖ‖_pᵖ`, indicator sweeps only.
    pub localized_mass: Option<f64>,
    /// `‖χ_{Q_{2h}}‖_qᵖ × localized_mass`, an upper bound for `p_power_sum`.
    pub holder_bound: Option<f64>,
    pub holder_bound_holds: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CqVerdict {
    /// `K_required` grows like a positive power of `1/h`.
    Divergent,
    Bounded,
    /// Some test annihilates the truncated system: `K_required = ∞`.
    UnboundedWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqSweep {
    pub rows: Vec<CqRow>,
    pub fit: Option<LogLogFit>,
    pub verdict: CqVerdict,
}

/// Least-squares fit of `ln y` against `ln(1/h)`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Option<LogLogFit> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(h, _)| (1.0 / h).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 { 0.0 } else { 1.0 - ss_res / syy };
    Some(LogLogFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
    })
}

/// Result of searching for many large pairings `|⟨T_γ f, T_β f̃⟩| > ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupWitness {
    pub beta: Point,
    /// `#{γ ∈ Γ : |⟨T_γ f, T_β f̃⟩| > ε}`, counted exactly.
    pub count: usize,
    /// `count · εᵖ′`, a lower bound on the p′-Bessel sum at the test `T_β f̃`.
    pub sum_lower_bound: f64,
    /// Side of the cube `Q_h` on which the grid infimum of `|⟨T_x f, f̃⟩|` exceeds ε.
    pub h: f64,
    pub grid_step: f64,
    pub epsilon: f64,
    pub p_prime: f64,
}

/// Find β with many γ ∈ Γ satisfying `|⟨T_γ f, T_β f̃⟩| > ε`.
///
/// First a cube `Q_h` is found on which `x ↦ |⟨T_x f, f̃⟩|` stays above ε
/// on a grid of step one quarter of the smallest piece side (halved until a
/// positive `h` is certified on the grid). Then the centers of the densest
/// side-`h` cubes of Γ are ranked and the best ones get an exact count.
/// Ties go to the anchor closest to the origin.
pub fn blowup_witness(
    f: &PiecewiseFn,
    f_dual: &PiecewiseFn,
    gamma: &PointSet,
    epsilon: f64,
    p_prime: f64,
) -> Result<BlowupWitness> {
    check_dim(f.dim(), f_dual.dim())?;
    check_dim(f.dim(), gamma.dim())?;
    check_exponent("p_prime", p_prime)?;
    let pairing = f_dual.pair(f)?.norm();
    if !(epsilon > 0.0 && epsilon < pairing) {
        return Err(SystemError::EpsilonOutOfRange { epsilon, pairing });
    }
    let d = f.dim();
    let base_step = f
        .min_piece_side()
        .into_iter()
        .chain(f_dual.min_piece_side())
        .fold(f64::INFINITY, f64::min)
        / 4.0;
    let (h, grid_step) = certify_cube(d, base_step, |x| f_dual.pair_shifted(f, x).norm() > epsilon)
        .ok_or_else(|| {
            SystemError::InvalidParameter("could not certify a cube for the given epsilon".into())
        })?;

    // candidate centers: cubes centered on points, then cubes anchored at points
    let mut candidates: Vec<(usize, Point)> = Vec::with_capacity(2 * gamma.len());
    for pt in gamma.points() {
        let anchored = Point::new(pt.coords().iter().map(|c| c + h / 2.0).collect())?;
        for beta in [pt.clone(), anchored] {
            let count = gamma.count_in_cube(&Cube::centered(&beta, h)?)?;
            candidates.push((count, beta));
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| a.1.norm().total_cmp(&b.1.norm()))
            .then_with(|| lex_points(&a.1, &b.1))
    });
    candidates.dedup_by(|a, b| a.1 == b.1);

    let probe = Generator {
        f: f.clone(),
        gamma: gamma.clone(),
        label: String::new(),
    };
    let mut best: Option<(usize, Point)> = None;
    for (_, beta) in candidates.into_iter().take(WITNESS_CANDIDATES) {
        let test = f_dual.translate(&beta)?;
        let mut count = 0;
        probe.for_each_pairing(&test, |_, v| {
            if v.norm() > epsilon {
                count += 1;
            }
        });
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, beta));
        }
    }
    let (count, beta) = best.unwrap_or_else(|| (0, Point::origin(d)));
    Ok(BlowupWitness {
        beta,
        count,
        sum_lower_bound: count as f64 * epsilon.powf(p_prime),
        h,
        grid_step,
        epsilon,
        p_prime,
    })
}

fn lex_points(a: &Point, b: &Point) -> std::cmp::Ordering {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Largest `h = 2ms` such that `above` holds on the grid `s·{−m..m}ᵈ`;
/// the step `s` is halved while not even `m = 1` passes.
fn certify_cube(d: usize, base_step: f64, above: impl Fn(&[f64]) -> bool) -> Option<(f64, f64)> {
    let max_m = (((WITNESS_GRID_BUDGET as f64).powf(1.0 / d as f64) - 1.0) / 2.0)
        .floor()
        .clamp(1.0, 64.0) as i64;
    let mut step = base_step;
    for _ in 0..40 {
        if !above(&vec![0.0; d]) {
            return None;
        }
        let mut m = 0;
        while m < max_m && shell(d, m + 1).iter().all(|j| {
            let x: Vec<f64> = j.iter().map(|&k| k as f64 * step).collect();
            above(&x)
        }) {
            m += 1;
        }
        if m > 0 {
            return Some((2.0 * m as f64 * step, step));
        }
        step /= 2.0;
    }
    None
}

/// Integer vectors with sup-norm exactly `r`.
fn shell(d: usize, r: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-r..=r).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().any(|k| k.abs() == r));
    out
}

/// A finite union of translate families with a common exponent pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslateSystem {
    generators: Vec<Generator>,
    exponents: ExponentPair,
}

impl TranslateSystem {
    pub fn new(generators: Vec<Generator>, p: f64) -> Result<Self> {
        let exponents = ExponentPair::new(p)?;
        let first = generators.first().ok_or(SystemError::EmptySystem)?;
        let d = first.dim();
        for g in &generators {
            check_dim(d, g.dim())?;
        }
        Ok(TranslateSystem {
            generators,
            exponents,
        })
    }

    pub fn single(f: PiecewiseFn, gamma: PointSet, p: f64) -> Result<Self> {
        Self::new(vec![Generator::new(f, gamma, "f")?], p)
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn exponents(&self) -> ExponentPair {
        self.exponents
    }

    pub fn dim(&self) -> usize {
        self.generators[0].dim()
    }

    /// Total number of translates.
    pub fn len(&self) -> usize {
        self.generators.iter().map(|g| g.gamma.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncated(&self, radius: f64) -> Result<Self> {
        Ok(TranslateSystem {
            generators: self
                .generators
                .iter()
                .map(|g| g.truncated(radius))
                .collect::<Result<_>>()?,
            exponents: self.exponents,
        })
    }

    /// Translate every Γₖ by `beta`; provenance is dropped.
    pub fn shifted(&self, beta: &Point) -> Result<Self> {
        Ok(TranslateSystem {
            generators: self
                .generators
                .iter()
                .map(|g| {
                    Ok(Generator {
                        f: g.f.clone(),
                        gamma: g.gamma.shifted(beta)?,
                        label: g.label.clone(),
                    })
                })
                .collect::<Result<_>>()?,
            exponents: self.exponents,
        })
    }

    fn check_test(&self, test: &PiecewiseFn) -> Result<()> {
        check_dim(self.dim(), test.dim())?;
        if test.is_zero() {
            return Err(SystemError::ZeroTest);
        }
        Ok(())
    }

    /// `Σₖ Σ_γ |⟨test, T_γ fₖ⟩|^exponent`.
    pub fn power_sum(&self, test: &PiecewiseFn, exponent: f64) -> Result<f64> {
        check_dim(self.dim(), test.dim())?;
        Ok(self
            .generators
            .iter()
            .map(|g| g.power_sum(test, exponent))
            .sum())
    }

    /// Every nonzero pairing `(k, γ, ⟨test, T_γ fₖ⟩)` in summation order.
    pub fn pairings(&self, test: &PiecewiseFn) -> Result<Vec<(usize, Point, Complex64)>> {
        check_dim(self.dim(), test.dim())?;
        let mut out = Vec::new();
        for (k, g) in self.generators.iter().enumerate() {
            g.for_each_pairing(test, |gamma, v| out.push((k, gamma.clone(), v)));
        }
        Ok(out)
    }

    pub fn bessel_sum(&self, test: &PiecewiseFn, p_prime: f64) -> Result<f64> {
        self.check_test(test)?;
        check_exponent("p_prime", p_prime)?;
        self.power_sum(test, p_prime)
    }

    /// Ratios `bessel_sum / ‖test‖_q^{p′}`. Their maximum is a lower bound on
    /// any valid Bessel constant, never an upper bound.
    pub fn bessel_bound_estimate(
        &self,
        tests: &[PiecewiseFn],
        p_prime: f64,
    ) -> Result<BesselEstimate> {
        if tests.is_empty() {
            return Err(SystemError::InvalidParameter("no test functions".into()));
        }
        let q = self.exponents.q;
        let per_test = tests
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let bessel_sum = self.bessel_sum(t, p_prime)?;
                let q_norm = t.lp_norm(q);
                Ok(BesselRow {
                    test: format!("test[{i}]"),
                    bessel_sum,
                    q_norm,
                    ratio: bessel_sum / q_norm.powf(p_prime),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bound_estimate = per_test.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Ok(BesselEstimate {
            p_prime,
            per_test,
            bound_estimate,
        })
    }

    /// `‖test‖_q / (Σₖ Σ_γ |⟨test, T_γ fₖ⟩|ᵖ)^{1/p}`: every (C_q) constant of
    /// the system is at least this large.
    pub fn cq_required_constant(&self, test: &PiecewiseFn) -> Result<KRequired> {
        self.check_test(test)?;
        let ExponentPair { p, q } = self.exponents;
        let sum = self.power_sum(test, p)?;
        if sum == 0.0 {
            return Ok(KRequired::Unbounded);
        }
        Ok(KRequired::Finite(test.lp_norm(q) / sum.powf(1.0 / p)))
    }

    /// Fails when translates missing from a truncation could reach `support`.
    pub fn reach_check(&self, support: &Block) -> Result<()> {
        self.generators.iter().try_for_each(|g| g.reach_check(support))
    }

    /// `Σₖ Σ_γ ‖χ_Q T_γ fₖ‖_pᵖ` with per-generator finiteness bounds.
    pub fn localized_mass(&self, q: &Cube) -> Result<LocalizedMassReport> {
        let p = self.exponents.p;
        let mut per_generator = Vec::new();
        for g in &self.generators {
            per_generator.extend(g.localized_mass(q, p)?.per_generator);
        }
        let total = per_generator.iter().map(|m| m.mass).sum();
        Ok(LocalizedMassReport {
            cube: q.clone(),
            p,
            per_generator,
            total,
        })
    }

    /// (C_q) sweep over the tests `χ_{Q_{2h}}` centered at the origin.
    pub fn cq_indicator_sweep(&self, h_values: &[f64]) -> Result<CqSweep> {
        self.cq_indicator_sweep_at(&Point::origin(self.dim()), h_values)
    }

    pub fn cq_indicator_sweep_at(&self, center: &Point, h_values: &[f64]) -> Result<CqSweep> {
        check_dim(self.dim(), center.dim())?;
        check_decreasing(h_values)?;
        let ExponentPair { p, q } = self.exponents;
        let mut rows = Vec::with_capacity(h_values.len());
        for &h in h_values {
            let cube = Cube::centered(center, 2.0 * h)?;
            let block = Block::from_cube(&cube);
            self.reach_check(&block)?;
            let test = PiecewiseFn::indicator(block);
            let mut row = self.cq_row(h, &test)?;
            let mass = self.localized_mass(&cube)?.total;
            let bound = row.q_norm.powf(p) * mass;
            row.localized_mass = Some(mass);
            row.holder_bound = Some(bound);
            row.holder_bound_holds = Some(row.p_power_sum <= bound * (1.0 + INEQUALITY_SLACK));
            rows.push(row);
        }
        debug_assert_eq!(q, self.exponents.q);
        Ok(Self::finish_sweep(rows))
    }

    /// Sweep with an arbitrary test family `h ↦ test(h)`.
    pub fn cq_sweep_with(
        &self,
        h_values: &[f64],
        test_for: impl Fn(f64) -> PiecewiseFn,
    ) -> Result<CqSweep> {
        check_decreasing(h_values)?;
        let rows = h_values
            .iter()
            .map(|&h| {
                let test = test_for(h);
                self.check_test(&test)?;
                if let Some(bb) = test.bounding_box() {
                    self.reach_check(&bb)?;
                }
                self.cq_row(h, &test)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::finish_sweep(rows))
    }

    fn cq_row(&self, h: f64, test: &PiecewiseFn) -> Result<CqRow> {
        let ExponentPair { p, q } = self.exponents;
        let p_power_sum = self.power_sum(test, p)?;
        let q_norm = test.lp_norm(q);
        Ok(CqRow {
            h,
            q_norm,
            p_power_sum,
            k_required: (p_power_sum > 0.0).then(|| q_norm / p_power_sum.powf(1.0 / p)),
            localized_mass: None,
            holder_bound: None,
            holder_bound_holds: None,
        })
    }

    fn finish_sweep(rows: Vec<CqRow>) -> CqSweep {
        if rows.iter().any(|r| r.k_required.is_none()) {
            return CqSweep {
                rows,
                fit: None,
                verdict: CqVerdict::UnboundedWitness,
            };
        }
        // rows run from large to small h; fit the smallest half
        let take = rows.len().div_ceil(2).max(2).min(rows.len());
        let tail: Vec<(f64, f64)> = rows[rows.len() - take..]
            .iter()
            .map(|r| (r.h, r.k_required.unwrap()))
            .collect();
        let fit = fit_log_log(&tail);
        let verdict = match fit {
            Some(f) if f.slope > SLOPE_FLOOR && f.r_squared > DIVERGENCE_R2 => CqVerdict::Divergent,
            _ => CqVerdict::Bounded,
        };
        CqSweep { rows, fit, verdict }
    }

    pub fn dichotomy_report(&self, config: &DichotomyConfig) -> Result<DichotomyReport> {
        dichotomy_report(self, config)
    }
}

fn default_density_h() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DichotomyTolerances {
    /// Relative change of the Bessel estimate between the two largest
    /// truncations below which the Bessel horn counts as bounded.
    pub bessel_variation: f64,
    pub accumulation_radius: f64,
    pub accumulation_threshold: usize,
    /// Witness ε as a fraction of `|⟨fₖ, f̃ₖ⟩| = ‖fₖ‖_p`.
    pub witness_epsilon_fraction: f64,
}

impl Default for DichotomyTolerances {
    fn default() -> Self {
        DichotomyTolerances {
            bessel_variation: 0.1,
            accumulation_radius: 0.01,
            accumulation_threshold: 20,
            witness_epsilon_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyConfig {
    /// Decreasing half-sides of the (C_q) indicator tests.
    pub h_values: Vec<f64>,
    pub p_prime: f64,
    /// Increasing truncation parameters (lattice window, reciprocal `N`).
    pub truncation_radii: Vec<f64>,
    #[serde(default = "default_density_h")]
    pub density_h_values: Vec<f64>,
    #[serde(default)]
    pub tolerances: DichotomyTolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessEntry {
    pub label: String,
    pub witness: BlowupWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub radius: f64,
    pub sizes: Vec<usize>,
    pub bessel: BesselEstimate,
    /// Blowup witnesses for generators whose Γₖ shows an accumulation cluster.
    pub witnesses: Vec<WitnessEntry>,
    /// Max of the test ratios and the witness ratios.
    pub bessel_lower_bound: f64,
    /// Density estimate of the disjoint union over `density_h_values`.
    pub density_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CqOutcome {
    Evaluated { sweep: CqSweep },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityComparison {
    pub union_estimate: f64,
    pub part_estimates: Vec<f64>,
    pub parts_sum: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horn {
    /// Bessel ratios bounded, `K_required` divergent.
    CqDivergent,
    /// Bessel ratios grow with the truncation.
    BesselDivergent,
    Both,
    /// Neither horn could be certified (e.g. the sweep was skipped).
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub truncations: Vec<TruncationRow>,
    pub bessel_variation: f64,
    pub bessel_bounded: bool,
    pub cq: CqOutcome,
    pub k_bounded: bool,
    pub subadditivity: Vec<SubadditivityRow>,
    pub subadditivity_holds: bool,
    pub density: DensityComparison,
    pub horn: Horn,
    /// False exactly when both the Bessel ratios and `K_required` look bounded.
    pub consistent: bool,
}

fn dichotomy_report(sys: &TranslateSystem, config: &DichotomyConfig) -> Result<DichotomyReport> {
    check_exponent("p_prime", config.p_prime)?;
    let radii = &config.truncation_radii;
    if radii.len() < 2 || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SystemError::InvalidParameter(
            "need at least two strictly increasing truncation radii".into(),
        ));
    }
    let tol = &config.tolerances;
    let d = sys.dim();
    let p = sys.exponents.p;

    // fixed test family: two indicators plus a witness-located dual per generator
    let smallest = sys.truncated(radii[0])?;
    let mut tests = vec![
        PiecewiseFn::cube_indicator(&Cube::at_origin(d, 1.0)?),
        PiecewiseFn::cube_indicator(&Cube::at_origin(d, 2.0)?),
    ];
    for g in smallest.generators() {
        let dual = g.f.norming_functional(p)?;
        let eps = tol.witness_epsilon_fraction * g.f.lp_norm(p);
        let w = blowup_witness(&g.f, &dual, &g.gamma, eps, config.p_prime)?;
        tests.push(dual.translate(&w.beta)?);
    }

    let mut truncations = Vec::with_capacity(radii.len());
    let mut largest = smallest;
    for &radius in radii {
        let t = sys.truncated(radius)?;
        let bessel = t.bessel_bound_estimate(&tests, config.p_prime)?;
        let mut witnesses = Vec::new();
        for g in t.generators() {
            let clusters =
                g.gamma
                    .detect_accumulation(tol.accumulation_radius, tol.accumulation_threshold)?;
            if clusters.is_empty() {
                continue;
            }
            let dual = g.f.norming_functional(p)?;
            let eps = tol.witness_epsilon_fraction * g.f.lp_norm(p);
            let witness = blowup_witness(&g.f, &dual, &g.gamma, eps, config.p_prime)?;
            witnesses.push(WitnessEntry {
                label: g.label.clone(),
                witness,
            });
        }
        // the translated dual has unit q-norm, so the witness bound is already a ratio
        let bessel_lower_bound = witnesses
            .iter()
            .map(|w| w.witness.sum_lower_bound)
            .fold(bessel.bound_estimate, f64::max);
        let parts: Vec<&PointSet> = t.generators.iter().map(|g| &g.gamma).collect();
        let rows = pointset::subadditivity_rows(&parts, &config.density_h_values)?;
        let density_estimate =
            pointset::top_third_max(&rows, |r| r.union_nu as f64 / r.h.powi(d as i32));
        truncations.push(TruncationRow {
            radius,
            sizes: t.generators.iter().map(|g| g.gamma.len()).collect(),
            bessel,
            witnesses,
            bessel_lower_bound,
            density_estimate,
        });
        largest = t;
    }

    let n = truncations.len();
    let (prev, last) = (
        truncations[n - 2].bessel_lower_bound,
        truncations[n - 1].bessel_lower_bound,
    );
    let bessel_variation = if prev > 0.0 {
        (last - prev).abs() / prev
    } else if last > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let bessel_bounded = bessel_variation < tol.bessel_variation;

    let cq = match largest.cq_indicator_sweep(&config.h_values) {
        Ok(sweep) => CqOutcome::Evaluated { sweep },
        Err(e @ SystemError::TruncationTooSmall { .. }) => CqOutcome::Skipped {
            reason: e.to_string(),
        },
        Err(e) => return Err(e),
    };
    let (k_bounded, cq_divergent) = match &cq {
        CqOutcome::Evaluated { sweep } => (
            sweep.verdict == CqVerdict::Bounded,
            sweep.verdict != CqVerdict::Bounded,
        ),
        CqOutcome::Skipped { .. } => (false, false),
    };

    let parts: Vec<&PointSet> = largest.generators.iter().map(|g| &g.gamma).collect();
    let subadditivity = pointset::subadditivity_rows(&parts, &config.density_h_values)?;
    let subadditivity_holds = subadditivity.iter().all(|r| r.holds);
    let union_estimate =
        pointset::top_third_max(&subadditivity, |r| r.union_nu as f64 / r.h.powi(d as i32));
    let part_estimates = parts
        .iter()
        .map(|s| {
            let profile = s.density_profile(&config.density_h_values)?;
            Ok(pointset::top_third_max(&profile.rows, |r| r.ratio_upper))
        })
        .collect::<Result<Vec<_>>>()?;
    let parts_sum: f64 = part_estimates.iter().sum();
    let density = DensityComparison {
        union_estimate,
        holds: union_estimate <= parts_sum,
        part_estimates,
        parts_sum,
    };

    let horn = match (cq_divergent, !bessel_bounded) {
        (true, true) => Horn::Both,
        (true, false) => Horn::CqDivergent,
        (false, true) => Horn::BesselDivergent,
        (false, false) => Horn::Undetermined,
    };
    Ok(DichotomyReport {
        truncations,
        bessel_variation,
        bessel_bounded,
        cq,
        k_bounded,
        subadditivity,
        subadditivity_holds,
        density,
        horn,
        consistent: !(bessel_bounded && k_bounded),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chi(l: f64, u: f64) -> PiecewiseFn {
        PiecewiseFn::indicator(Block::interval(l, u).unwrap())
    }

    fn ints(n: i64) -> PointSet {
        PointSet::from_1d(&(-n..=n).map(|k| k as f64).collect::<Vec<_>>()).unwrap()
    }

    fn pt(x: f64) -> Point {
        Point::scalar(x).unwrap()
    }

    #[test]
    fn bessel_sum_examples() {
        let sys = TranslateSystem::single(chi(0.0, 1.0), ints(10), 2.0).unwrap();
        for pp in [1.5, 2.0, 4.0] {
            assert_eq!(sys.bessel_sum(&chi(0.0, 1.0), pp).unwrap(), 1.0);
        }
        assert_eq!(sys.bessel_sum(&chi(0.0, 2.0), 2.0).unwrap(), 2.0);
        let sys = TranslateSystem::single(chi(0.0, 1.0), PointSet::from_1d(&[0.0, 0.5]).unwrap(), 2.0)
            .unwrap();
        assert_eq!(sys.bessel_sum(&chi(0.0, 1.0), 2.0).unwrap(), 1.25);
        assert_eq!(
            sys.bessel_sum(&PiecewiseFn::zero(1), 2.0),
            Err(SystemError::ZeroTest)
        );
    }

    #[test]
    fn bessel_estimate_examples() {
        let sys = TranslateSystem::single(chi(0.0, 1.0), ints(10), 2.0).unwrap();
        let est = sys.bessel_bound_estimate(&[chi(0.0, 1.0)], 2.0).unwrap();
        assert_eq!(est.bound_estimate, 1.0);
        let est = sys
            .bessel_bound_estimate(&[chi(0.0, 1.0), chi(0.0, 2.0)], 2.0)
            .unwrap();
        let ratios: Vec<f64> = est.per_test.iter().map(|r| r.ratio).collect();
        assert!((ratios[0] - 1.0).abs() < 1e-15 && (ratios[1] - 1.0).abs() < 1e-15);

        let tests = [chi(-0.3, 0.7), chi(0.25, 2.5)];
        let scaled: Vec<PiecewiseFn> = tests
            .iter()
            .map(|t| t.scale(Complex64::new(3.5, 0.0)))
            .collect();
        let a = sys.bessel_bound_estimate(&tests, 3.0).unwrap();
        let b = sys.bessel_bound_estimate(&scaled, 3.0).unwrap();
        for (x, y) in a.per_test.iter().zip(&b.per_test) {
            assert!((x.ratio - y.ratio).abs() < 1e-12 * x.ratio.max(1.0));
        }
    }

    #[test]
    fn cq_required_constant_closed_form() {
        let sys = TranslateSystem::single(chi(0.0, 1.0), ints(20), 2.0).unwrap();
        for (h, expected) in [(0.25, 2.0), (1.0 / 16.0, 4.0)] {
            let k = sys.cq_required_constant(&chi(-h, h)).unwrap();
            assert!((k.finite().unwrap() - expected).abs() < 1e-12);
        }
        let far = TranslateSystem::single(chi(0.0, 1.0), PointSet::from_1d(&[100.0]).unwrap(), 2.0)
            .unwrap();
        assert_eq!(
            far.cq_required_constant(&chi(-0.25, 0.25)).unwrap(),
            KRequired::Unbounded
        );
    }

    #[test]
    fn cq_constant_is_translation_covariant() {
        let sys = TranslateSystem::single(chi(0.0, 1.0), ints(20), 3.0).unwrap();
        let beta = pt(0.375);
        let test = chi(-0.2, 0.45);
        let k0 = sys.cq_required_constant(&test).unwrap().finite().unwrap();
        let moved = sys.shifted(&beta).unwrap();
        let k1 = moved
            .cq_required_constant(&test.translate(&beta).unwrap())
            .unwrap()
            .finite()
            .unwrap();
        assert!((k0 - k1).abs() < 1e-12 * k0);
    }

    #[test]
    fn indicator_sweep_diverges_like_inverse_sqrt() {
        let gamma = PointSet::lattice(1.0, 1, 20.0).unwrap();
        let sys = TranslateSystem::single(chi(0.0, 1.0), gamma, 2.0).unwrap();
        let hs: Vec<f64> = (2..=10).map(|k| 2f64.powi(-k)).collect();
        let sweep = sys.cq_indicator_sweep(&hs).unwrap();
        for row in &sweep.rows {
            assert!((row.k_required.unwrap() - row.h.powf(-0.5)).abs() < 1e-9);
            assert_eq!(row.holder_bound_holds, Some(true));
        }
        assert_eq!(sweep.verdict, CqVerdict::Divergent);
        assert!((sweep.fit.unwrap().slope - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fixed_test_sweep_is_bounded() {
        let sys = TranslateSystem::single(chi(0.0, 1.0), ints(20), 2.0).unwrap();
        let hs: Vec<f64> = (2..=6).map(|k| 2f64.powi(-k)).collect();
        let sweep = sys.cq_sweep_with(&hs, |_| chi(0.0, 1.0)).unwrap();
        assert_eq!(sweep.verdict, CqVerdict::Bounded);
        assert!(sweep.rows.iter().all(|r| r.k_required == Some(1.0)));
    }

    #[test]
    fn far_system_gives_unbounded_witness() {
        let sys = TranslateSystem::single(chi(0.0, 1.0), PointSet::from_1d(&[100.0]).unwrap(), 2.0)
            .unwrap();
        let sweep = sys.cq_indicator_sweep(&[0.5, 0.25, 0.125]).unwrap();
        assert_eq!(sweep.verdict, CqVerdict::UnboundedWitness);
        assert!(sweep.rows.iter().all(|r| r.k_required.is_none()));
    }

    #[test]
    fn sweep_rejects_short_truncation() {
        let gamma = PointSet::lattice(1.0, 1, 2.0).unwrap();
        let sys = TranslateSystem::single(chi(0.0, 1.0), gamma, 2.0).unwrap();
        assert!(matches!(
            sys.cq_indicator_sweep(&[2.0, 1.0]),
            Err(SystemError::TruncationTooSmall { .. })
        ));
        assert!(sys.cq_indicator_sweep(&[0.5, 0.25]).is_ok());
    }

    #[test]
    fn localized_mass_tiling() {
        let gen = Generator::new(chi(0.0, 1.0), ints(5), "z").unwrap();
        for (x, h) in [(0.0, 0.5), (0.3, 0.5), (0.3, 0.75), (-1.7, 0.125)] {
            let q = Cube::centered(&pt(x), h).unwrap();
            let r = gen.localized_mass(&q, 2.0).unwrap();
            assert_eq!(r.total, h);
            let fb = r.per_generator[0].finiteness.as_ref().unwrap();
            assert!(fb.holds);
        }
        let double = Generator::new(chi(0.0, 2.0), ints(5), "z2").unwrap();
        let q = Cube::centered(&pt(0.0), 0.5).unwrap();
        assert_eq!(double.localized_mass(&q, 2.0).unwrap().total, 1.0);
    }

    #[test]
    fn mass_decay_halves() {
        let gen = Generator::new(chi(0.0, 1.0), ints(5), "z").unwrap();
        let hs: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
        let decay = gen.mass_decay_sweep(&pt(0.0), &hs, 2.0, 1e-2).unwrap();
        assert!(decay.monotone && decay.final_below_tolerance);
        for w in decay.rows.windows(2) {
            assert_eq!(w[1].mass / w[0].mass, 0.5);
        }
    }

    #[test]
    fn reciprocal_mass_grows_linearly() {
        // Q_{1/2}(0) = [−1/4, 1/4) meets [1/n, 1 + 1/n) in [1/n, 1/4) for n ≥ 5
        let oracle = |n: usize| -> f64 { (5..=n).map(|k| 0.25 - 1.0 / k as f64).sum() };
        let q = Cube::centered(&pt(0.0), 0.5).unwrap();
        let mut masses = Vec::new();
        for n in [100usize, 200] {
            let gen = Generator::new(chi(0.0, 1.0), PointSet::reciprocal(n).unwrap(), "r").unwrap();
            let m = gen.localized_mass(&q, 2.0).unwrap().total;
            assert!((m - oracle(n)).abs() < 1e-12);
            masses.push(m);
        }
        let ratio = masses[1] / masses[0];
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn single_point_mass_vanishes() {
        let gen = Generator::new(chi(0.0, 1.0), PointSet::from_1d(&[0.25]).unwrap(), "one").unwrap();
        let hs = [0.5, 0.25, 0.125, 0.0625];
        let decay = gen.mass_decay_sweep(&pt(0.25), &hs, 2.0, 0.05).unwrap();
        for r in &decay.rows {
            assert!(r.mass <= (r.h).min(1.0));
        }
        assert!(decay.final_below_tolerance);
    }

    #[test]
    fn witness_on_dense_cluster() {
        let f = chi(0.0, 1.0);
        let gamma = PointSet::from_1d(&(0..100).map(|k| k as f64 / 100.0).collect::<Vec<_>>())
            .unwrap();
        let w = blowup_witness(&f, &f, &gamma, 0.5, 2.0).unwrap();
        // |⟨T_γ f, T_β f⟩| = 1 − |γ − β| on [−1, 1]
        let beta = w.beta.coords()[0];
        let oracle = (0..100)
            .filter(|k| 1.0 - (*k as f64 / 100.0 - beta).abs() > 0.5)
            .count();
        assert_eq!(w.count, oracle);
        assert!(w.count >= 50, "count {}", w.count);
        assert_eq!(w.sum_lower_bound, w.count as f64 * 0.25);
        let sys = TranslateSystem::single(f.clone(), gamma, 2.0).unwrap();
        let direct = sys.bessel_sum(&f.translate(&w.beta).unwrap(), 2.0).unwrap();
        assert!(w.sum_lower_bound <= direct);
    }

    #[test]
    fn witness_on_separated_and_single_sets() {
        let f = chi(0.0, 1.0);
        let w = blowup_witness(&f, &f, &ints(10), 0.5, 2.0).unwrap();
        assert!(w.h < 1.0);
        assert_eq!(w.count, 1);

        let single = PointSet::from_1d(&[0.0]).unwrap();
        let w = blowup_witness(&f, &f, &single, 0.999, 2.0).unwrap();
        assert_eq!(w.count, 1);
        assert_eq!(w.beta, pt(0.0));

        assert!(matches!(
            blowup_witness(&f, &f, &single, 1.0, 2.0),
            Err(SystemError::EpsilonOutOfRange { .. })
        ));
    }

    #[test]
    fn log_log_fit_recovers_power() {
        let pts: Vec<(f64, f64)> = [0.5, 0.25, 0.125].iter().map(|&h: &f64| (h, 3.0 * h.powf(-0.7))).collect();
        let fit = fit_log_log(&pts).unwrap();
        assert!((fit.slope - 0.7).abs() < 1e-12);
        assert!(fit.r_squared > 0.999_999);
        assert!(fit_log_log(&pts[..1]).is_none());
    }
}
