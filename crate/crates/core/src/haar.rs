//! The Haar system on `[0, 1)` normalized in Lᵖ, with its biorthogonal
//! dual system in L^q.
//!
//! Every Haar function is piecewise constant on dyadic intervals, so norms,
//! pairings and sign-flipped sums are computed exactly on a dyadic grid.
//! The coefficient inequalities
//!
//! ```text
//! (C A_p)⁻¹ ‖a‖₂ ≤ ‖Σ aₖ hₖ‖_p ≤ C ‖a‖_p      1 < p ≤ 2
//! C⁻¹ ‖a‖_p ≤ ‖Σ aₖ hₖ‖_p ≤ C B_p ‖a‖₂        2 ≤ p < ∞
//! ```
//!
//! involve constants with no closed form; they are fitted from random
//! batches and then checked on held-out batches.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::lpfunc::{conjugate, Block, LpError, Piece, PiecewiseFn};

/// Support sizes up to this are sign-flipped exhaustively.
pub const EXHAUSTIVE_SIGN_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HaarError {
    #[error("offset {offset} out of range for level {level}")]
    InvalidOffset { level: u32, offset: u64 },
    #[error("level {0} is too deep")]
    LevelTooDeep(u32),
    #[error("invalid Haar index `{0}`")]
    Parse(String),
    #[error("sign pattern does not cover {0}")]
    IncompletePattern(HaarIndex),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

pub type Result<T> = std::result::Result<T, HaarError>;

/// Deepest level whose cells are still exact in `f64`.
pub const MAX_LEVEL: u32 = 40;

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(HaarError::InvalidParameter(format!("p must lie in (1, ∞), got {p}")))
    }
}

/// The constant function on `[0, 1)` or the wavelet
/// `h_{j,k} = ±2^{j/p}` on the halves of `[k 2⁻ʲ, (k+1) 2⁻ʲ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HaarIndex {
    Constant,
    Wavelet { level: u32, offset: u64 },
}

impl HaarIndex {
    pub fn wavelet(level: u32, offset: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(HaarError::LevelTooDeep(level));
        }
        if offset >= 1u64 << level {
            return Err(HaarError::InvalidOffset { level, offset });
        }
        Ok(HaarIndex::Wavelet { level, offset })
    }

    /// The constant function followed by all wavelets of level `< levels`.
    pub fn up_to(levels: u32) -> Vec<HaarIndex> {
        let mut out = vec![HaarIndex::Constant];
        for level in 0..levels {
            for offset in 0..(1u64 << level) {
                out.push(HaarIndex::Wavelet { level, offset });
            }
        }
        out
    }

    fn validate(self) -> Result<Self> {
        match self {
            HaarIndex::Constant => Ok(self),
            HaarIndex::Wavelet { level, offset } => HaarIndex::wavelet(level, offset),
        }
    }

    /// Finest dyadic grid `2^{-n}` on which the function is constant per cell.
    fn resolution(self) -> u32 {
        match self {
            HaarIndex::Constant => 0,
            HaarIndex::Wavelet { level, .. } => level + 1,
        }
    }
}

impl fmt::Display for HaarIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HaarIndex::Constant => write!(f, "const"),
            HaarIndex::Wavelet { level, offset } => write!(f, "{level},{offset}"),
        }
    }
}

impl FromStr for HaarIndex {
    type Err = HaarError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "const" {
            return Ok(HaarIndex::Constant);
        }
        let bad = || HaarError::Parse(s.to_string());
        let (j, k) = s.split_once(',').ok_or_else(bad)?;
        let level = j.trim().parse().map_err(|_| bad())?;
        let offset = k.trim().parse().map_err(|_| bad())?;
        HaarIndex::wavelet(level, offset)
    }
}

impl Serialize for HaarIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HaarIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Amplitudes `(a_p, a_q)` with `a_p a_q = 2ʲ` exactly, `a_p ≈ 2^{j/p}`.
fn amplitudes(level: u32, p: f64) -> (f64, f64) {
    let scale = (1u64 << level) as f64;
    let a = (level as f64 / p).exp2();
    let mut b = scale / a;
    // walk b by ulps until the product rounds to 2ʲ
    for _ in 0..4 {
        let prod = a * b;
        if prod == scale {
            break;
        }
        b = if prod > scale {
            f64::from_bits(b.to_bits() - 1)
        } else {
            f64::from_bits(b.to_bits() + 1)
        };
    }
    (a, b)
}

fn two_halves(level: u32, offset: u64, amp: f64) -> PiecewiseFn {
    let w = ((level + 1) as f64).exp2().recip();
    let l = 2.0 * offset as f64 * w;
    let pieces = vec![
        Piece::real(Block::interval(l, l + w).expect("dyadic interval"), amp),
        Piece::real(Block::interval(l + w, l + 2.0 * w).expect("dyadic interval"), -amp),
    ];
    PiecewiseFn::new(1, pieces).expect("disjoint halves")
}

fn unit_interval() -> PiecewiseFn {
    PiecewiseFn::indicator(Block::interval(0.0, 1.0).expect("unit interval"))
}

/// Haar function with unit Lᵖ norm.
pub fn haar_fn(idx: HaarIndex, p: f64) -> Result<PiecewiseFn> {
    check_p(p)?;
    Ok(match idx.validate()? {
        HaarIndex::Constant => unit_interval(),
        HaarIndex::Wavelet { level, offset } => two_halves(level, offset, amplitudes(level, p).0),
    })
}

/// Biorthogonal functional: `⟨haar_fn(i), dual_fn(i′)⟩ = δ_{ii′}`, values
/// `±2^{j/q}`, unit L^q norm.
pub fn dual_fn(idx: HaarIndex, p: f64) -> Result<PiecewiseFn> {
    check_p(p)?;
    Ok(match idx.validate()? {
        HaarIndex::Constant => unit_interval(),
        HaarIndex::Wavelet { level, offset } => two_halves(level, offset, amplitudes(level, p).1),
    })
}

/// Finitely supported coefficient map.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HaarExpansion {
    coefficients: BTreeMap<HaarIndex, Complex64>,
}

impl HaarExpansion {
    pub fn new(coefficients: BTreeMap<HaarIndex, Complex64>) -> Result<Self> {
        for idx in coefficients.keys() {
            idx.validate()?;
        }
        Ok(HaarExpansion { coefficients })
    }

    pub fn from_real(terms: &[(HaarIndex, f64)]) -> Result<Self> {
        Self::new(
            terms
                .iter()
                .map(|&(i, a)| (i, Complex64::new(a, 0.0)))
                .collect(),
        )
    }

    pub fn coefficients(&self) -> &BTreeMap<HaarIndex, Complex64> {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// `(Σ |aₖ|ʳ)^{1/r}`.
    pub fn coefficient_norm(&self, r: f64) -> f64 {
        self.coefficients
            .values()
            .map(|a| a.norm().powf(r))
            .sum::<f64>()
            .powf(1.0 / r)
    }

    /// Smallest `n` with every term constant on the cells of `2⁻ⁿ ℤ`.
    pub fn resolution(&self) -> u32 {
        self.coefficients
            .keys()
            .map(|i| i.resolution())
            .max()
            .unwrap_or(0)
    }

    /// Values of `Σ aₖ hₖ` on the `2ⁿ` cells of `[0, 1)`, `n ≥ resolution()`.
    pub fn grid_values(&self, p: f64, n: u32) -> Result<Vec<Complex64>> {
        check_p(p)?;
        if n < self.resolution() || n > 24 {
            return Err(HaarError::InvalidParameter(format!(
                "grid level {n} must lie in [{}, 24]",
                self.resolution()
            )));
        }
        let mut values = vec![Complex64::new(0.0, 0.0); 1 << n];
        for (&idx, &a) in &self.coefficients {
            match idx {
                HaarIndex::Constant => values.iter_mut().for_each(|v| *v += a),
                HaarIndex::Wavelet { level, offset } => {
                    let amp = amplitudes(level, p).0;
                    let half = 1usize << (n - level - 1);
                    let start = offset as usize * 2 * half;
                    for v in &mut values[start..start + half] {
                        *v += a * amp;
                    }
                    for v in &mut values[start + half..start + 2 * half] {
                        *v -= a * amp;
                    }
                }
            }
        }
        Ok(values)
    }

    /// `Σ aₖ hₖ` as a piecewise-constant function on its finest dyadic grid.
    pub fn synthesize(&self, p: f64) -> Result<PiecewiseFn> {
        let n = self.resolution();
        let values = self.grid_values(p, n)?;
        let w = (n as f64).exp2().recip();
        let pieces = values
            .iter()
            .enumerate()
            .map(|(c, &v)| {
                let l = c as f64 * w;
                Piece::new(Block::interval(l, l + w).expect("dyadic cell"), v)
            })
            .collect();
        Ok(PiecewiseFn::new(1, pieces)?)
    }

    /// `S_θ`: multiply each coefficient by its sign.
    pub fn apply_signs(&self, signs: &SignPattern) -> Result<HaarExpansion> {
        let coefficients = self
            .coefficients
            .iter()
            .map(|(&i, &a)| {
                let s = signs
                    .signs
                    .get(&i)
                    .ok_or(HaarError::IncompletePattern(i))?;
                Ok((i, a * f64::from(*s)))
            })
            .collect::<Result<_>>()?;
        Ok(HaarExpansion { coefficients })
    }

    /// Random expansion with `terms` distinct indices among the constant and
    /// the wavelets of level `< levels`, with standard normal coefficients.
    pub fn random(rng: &mut impl Rng, terms: usize, levels: u32) -> Result<Self> {
        let mut pool = HaarIndex::up_to(levels);
        if terms > pool.len() {
            return Err(HaarError::InvalidParameter(format!(
                "{terms} terms requested from {} indices",
                pool.len()
            )));
        }
        let mut coefficients = BTreeMap::new();
        for t in 0..terms {
            let pick = rng.random_range(t..pool.len());
            pool.swap(t, pick);
            coefficients.insert(pool[t], Complex64::new(rng.sample(StandardNormal), 0.0));
        }
        Ok(HaarExpansion { coefficients })
    }
}

/// Coefficients `⟨f, dual_fn(i)⟩` for all indices of level `< levels`.
///
/// Reproduces `f` exactly (up to rounding) when `f` is constant on the cells
/// of `2^{-levels} ℤ ∩ [0, 1)` and supported in `[0, 1)`.
pub fn expand(f: &PiecewiseFn, p: f64, levels: u32) -> Result<HaarExpansion> {
    check_p(p)?;
    let mut coefficients = BTreeMap::new();
    for idx in HaarIndex::up_to(levels) {
        let a = f.pair(&dual_fn(idx, p)?)?;
        if a != Complex64::new(0.0, 0.0) {
            coefficients.insert(idx, a);
        }
    }
    Ok(HaarExpansion { coefficients })
}

/// `‖Σ aₖ hₖ‖_p`, computed exactly on the finest dyadic grid.
pub fn expansion_norm(coeffs: &HaarExpansion, p: f64) -> Result<f64> {
    let n = coeffs.resolution();
    let values = coeffs.grid_values(p, n)?;
    Ok(grid_norm(&values, n, p))
}

fn grid_norm(values: &[Complex64], n: u32, p: f64) -> f64 {
    let w = (n as f64).exp2().recip();
    (values.iter().map(|v| v.norm().powf(p)).sum::<f64>() * w).powf(1.0 / p)
}

/// Signs `θₖ ∈ {±1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern {
    pub signs: BTreeMap<HaarIndex, i8>,
}

impl SignPattern {
    /// Bit `b` of `bits` set means index number `b` gets sign −1.
    fn from_bits(indices: &[HaarIndex], bits: u64) -> Self {
        SignPattern {
            signs: indices
                .iter()
                .enumerate()
                .map(|(b, &i)| (i, if bits >> b & 1 == 1 { -1 } else { 1 }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconditionalEstimate {
    /// `max ‖S_θ x‖_p / ‖x‖_p` over the evaluated patterns and members.
    pub constant: f64,
    pub patterns_evaluated: usize,
    /// Every member had at most [`EXHAUSTIVE_SIGN_LIMIT`] terms.
    pub exhaustive: bool,
}

/// Lower estimate of the unconditional constant of the Haar system in Lᵖ.
///
/// Members with at most [`EXHAUSTIVE_SIGN_LIMIT`] terms are flipped through
/// all `2ⁿ` patterns; larger ones through `trials` uniform patterns drawn
/// from a ChaCha8 stream seeded with `seed`.
pub fn unconditional_constant_estimate(
    family: &[HaarExpansion],
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<UnconditionalEstimate> {
    check_p(p)?;
    if trials == 0 {
        return Err(HaarError::InvalidParameter("trials must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut constant: f64 = 0.0;
    let mut patterns_evaluated = 0;
    let mut exhaustive = true;
    for x in family {
        let base = expansion_norm(x, p)?;
        if base == 0.0 {
            continue;
        }
        let n = x.resolution();
        let indices: Vec<HaarIndex> = x.coefficients.keys().copied().collect();
        let patterns: Vec<u64> = if indices.len() <= EXHAUSTIVE_SIGN_LIMIT {
            (0..1u64 << indices.len()).collect()
        } else {
            exhaustive = false;
            let mask = if indices.len() >= 64 { u64::MAX } else { (1u64 << indices.len()) - 1 };
            (0..trials).map(|_| rng.random::<u64>() & mask).collect()
        };
        for bits in patterns {
            let flipped = x.apply_signs(&SignPattern::from_bits(&indices, bits))?;
            let norm = grid_norm(&flipped.grid_values(p, n)?, n, p);
            constant = constant.max(norm / base);
            patterns_evaluated += 1;
        }
    }
    Ok(UnconditionalEstimate {
        constant,
        patterns_evaluated,
        exhaustive,
    })
}

/// One expansion's terms of the coefficient sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    /// `‖a‖₂` for `p ≤ 2`, `‖a‖_p` for `p > 2`.
    pub lhs: f64,
    /// `‖Σ aₖ hₖ‖_p`
    pub mid: f64,
    /// `‖a‖_p` for `p ≤ 2`, `‖a‖₂` for `p > 2`.
    pub rhs: f64,
}

/// Empirical constants with `lhs ≤ lower·mid` and `mid ≤ upper·rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichFit {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub p: f64,
    pub rows: Vec<SandwichRow>,
    pub fit: SandwichFit,
    pub violations: usize,
}

pub fn sandwich_row(coeffs: &HaarExpansion, p: f64) -> Result<SandwichRow> {
    let mid = expansion_norm(coeffs, p)?;
    let l2 = coeffs.coefficient_norm(2.0);
    let lp = coeffs.coefficient_norm(p);
    Ok(if p <= 2.0 {
        SandwichRow { lhs: l2, mid, rhs: lp }
    } else {
        SandwichRow { lhs: lp, mid, rhs: l2 }
    })
}

pub fn fit_sandwich(rows: &[SandwichRow]) -> SandwichFit {
    let mut fit = SandwichFit { lower: 0.0, upper: 0.0 };
    for r in rows.iter().filter(|r| r.mid > 0.0 && r.rhs > 0.0) {
        fit.lower = fit.lower.max(r.lhs / r.mid);
        fit.upper = fit.upper.max(r.mid / r.rhs);
    }
    fit
}

/// Rows breaking `lhs / (lower·m) ≤ mid ≤ upper·m·rhs`, with `m = 1 + margin`.
pub fn sandwich_violations(rows: &[SandwichRow], fit: SandwichFit, margin: f64) -> usize {
    let m = 1.0 + margin;
    rows.iter()
        .filter(|r| r.lhs > fit.lower * m * r.mid || r.mid > fit.upper * m * r.rhs)
        .count()
}

/// Evaluate the sandwich on a batch and fit its constants.
pub fn coefficient_sandwich_check(batch: &[HaarExpansion], p: f64) -> Result<SandwichReport> {
    check_p(p)?;
    let rows = batch
        .iter()
        .map(|c| sandwich_row(c, p))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_sandwich(&rows);
    let violations = sandwich_violations(&rows, fit, 0.0);
    Ok(SandwichReport {
        p,
        rows,
        fit,
        violations,
    })
}

/// `count` random expansions of `terms` terms over levels `< levels`.
pub fn random_batch(
    count: usize,
    terms: usize,
    levels: u32,
    seed: u64,
) -> Result<Vec<HaarExpansion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| HaarExpansion::random(&mut rng, terms, levels))
        .collect()
}

/// Random real step function on `[0, 1)` with up to `max_jumps` jumps at
/// uniform positions and standard normal values.
pub fn random_step_test(rng: &mut impl Rng, max_jumps: usize) -> PiecewiseFn {
    let jumps = rng.random_range(0..=max_jumps);
    let mut cuts: Vec<f64> = (0..jumps).map(|_| rng.random::<f64>()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = cuts
        .windows(2)
        .map(|w| {
            let v: f64 = rng.sample(StandardNormal);
            Piece::real(Block::interval(w[0], w[1]).expect("sorted cuts"), v)
        })
        .collect();
    PiecewiseFn::new(1, pieces).expect("disjoint cells")
}

/// `count` tests from [`random_step_test`] on a ChaCha8 stream.
pub fn random_step_tests(count: usize, max_jumps: usize, seed: u64) -> Vec<PiecewiseFn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_step_test(&mut rng, max_jumps))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop43Row {
    /// `(Σ |⟨t, hᵢ⟩|ʳ)^{1/r} / ‖t‖_q`.
    pub bessel_ratio: f64,
    /// `‖t‖_q / (Σ |⟨t, hᵢ⟩|ˢ)^{1/s}`; `None` if every pairing vanishes.
    pub k_required: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop43Report {
    pub p: f64,
    pub q: f64,
    /// Haar levels `0..cutoff` plus the constant.
    pub cutoff: u32,
    /// `r`: `q` for `p ≤ 2`, `2` for `p > 2`.
    pub bessel_exponent: f64,
    /// `s`: `2` for `p ≤ 2`, `q` for `p > 2`.
    pub frame_exponent: f64,
    pub rows: Vec<Prop43Row>,
    pub max_bessel_ratio: f64,
    pub max_k_required: Option<f64>,
    /// `inf ‖f̃ᵢ‖_p` and `sup ‖f̃ᵢ‖_q` over the dual functions in the cutoff.
    pub c1_p: f64,
    pub c2_q: f64,
    /// `inf ‖f̃ᵢ‖_q` and `sup ‖f̃ᵢ‖_p`.
    pub c1_q: f64,
    pub c2_p: f64,
}

/// Bessel ratios and (C) constants of the truncated Haar system in Lᵖ,
/// tested against functionals `t ∈ L^q`.
pub fn prop43_check(p: f64, cutoff: u32, tests: &[PiecewiseFn]) -> Result<Prop43Report> {
    check_p(p)?;
    if cutoff > 20 {
        return Err(HaarError::LevelTooDeep(cutoff));
    }
    let q = conjugate(p);
    let (r, s) = if p <= 2.0 { (q, 2.0) } else { (2.0, q) };
    let indices = HaarIndex::up_to(cutoff);
    let system = indices
        .iter()
        .map(|&i| haar_fn(i, p))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(tests.len());
    for t in tests {
        if t.is_zero() {
            return Err(HaarError::Lp(LpError::ZeroFunction));
        }
        let pairs = system
            .iter()
            .map(|h| t.pair(h).map(|c| c.norm()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let tq = t.lp_norm(q);
        let bessel = pairs.iter().map(|a| a.powf(r)).sum::<f64>().powf(1.0 / r);
        let frame = pairs.iter().map(|a| a.powf(s)).sum::<f64>().powf(1.0 / s);
        rows.push(Prop43Row {
            bessel_ratio: bessel / tq,
            k_required: (frame > 0.0).then(|| tq / frame),
        });
    }
    let max_bessel_ratio = rows.iter().map(|r| r.bessel_ratio).fold(0.0, f64::max);
    let max_k_required = rows
        .iter()
        .map(|r| r.k_required)
        .try_fold(0.0f64, |m, k| k.map(|k| m.max(k)));

    let (mut c1_p, mut c2_p, mut c1_q, mut c2_q) =
        (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for &i in &indices {
        let d = dual_fn(i, p)?;
        let (np, nq) = (d.lp_norm(p), d.lp_norm(q));
        c1_p = c1_p.min(np);
        c2_p = c2_p.max(np);
        c1_q = c1_q.min(nq);
        c2_q = c2_q.max(nq);
    }
    Ok(Prop43Report {
        p,
        q,
        cutoff,
        bessel_exponent: r,
        frame_exponent: s,
        rows,
        max_bessel_ratio,
        max_k_required,
        c1_p,
        c2_q,
        c1_q,
        c2_p,
    })
}
