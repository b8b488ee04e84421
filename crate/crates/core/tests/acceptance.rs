//! Acceptance suite: nine end-to-end criteria, each with a wall-clock limit.
//!
//! Runs without the libtest harness so every criterion prints one line:
//!
//! ```text
//! cargo test -p tdens-core --test acceptance
//! ```

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdens::haar::{self, HaarIndex};
use tdens::system::{self, CqOutcome, CqVerdict, DichotomyConfig, DichotomyTolerances, Generator};
use tdens::{Block, Cube, Piece, PiecewiseFn, Point, PointSet, Provenance, TranslateSystem};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn chi(l: f64, u: f64) -> PiecewiseFn {
    PiecewiseFn::indicator(Block::interval(l, u).unwrap())
}

fn unit_cube_indicator(d: usize) -> PiecewiseFn {
    PiecewiseFn::indicator(Block::new(vec![0.0; d], vec![1.0; d]).unwrap())
}

fn lattice(spacing: f64, dim: usize, window: f64) -> PointSet {
    PointSet::lattice(spacing, dim, window).unwrap()
}

// 1. Lattice density ---------------------------------------------------------

fn lattice_density() -> Outcome {
    let cases = [(1.0, 1, 100.0), (0.5, 1, 100.0), (0.5, 2, 20.0)];
    let mut detail = Vec::new();
    for (a, d, window) in cases {
        let set = lattice(a, d, window);
        // window/h ≥ 20 on every row
        let hs: Vec<f64> = [0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0]
            .into_iter()
            .filter(|h| window / h >= 20.0 - 1e-12)
            .collect();
        let profile = set.density_profile(&hs).map_err(|e| e.to_string())?;
        let target = a.powi(-(d as i32));
        let rel = (profile.density_estimate - target).abs() / target;
        ensure(rel <= 0.05, || {
            format!("a={a} d={d}: estimate {} vs {target}", profile.density_estimate)
        })?;
        detail.push(format!("a={a},d={d}: {:.4}", profile.density_estimate));
    }
    Ok(detail.join("; "))
}

// 2. ν⁺ oracle equivalence ---------------------------------------------------

/// Maximum over anchors built from point coordinates: the optimal cube can
/// always be slid until each lower face touches a point.
fn brute_nu(points: &[Vec<f64>], h: f64) -> usize {
    let d = points[0].len();
    let coords: Vec<Vec<f64>> = (0..d)
        .map(|k| points.iter().map(|p| p[k]).collect())
        .collect();
    let mut best = 0;
    let mut anchor = vec![0usize; d];
    loop {
        let lower: Vec<f64> = (0..d).map(|k| coords[k][anchor[k]]).collect();
        let count = points
            .iter()
            .filter(|p| (0..d).all(|k| lower[k] <= p[k] && p[k] < lower[k] + h))
            .count();
        best = best.max(count);
        let mut k = 0;
        while k < d {
            anchor[k] += 1;
            if anchor[k] < points.len() {
                break;
            }
            anchor[k] = 0;
            k += 1;
        }
        if k == d {
            return best;
        }
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    // half the sets live on a quarter grid to force ties at cube faces
    let grid = rng.random_bool(0.5);
    let span = if d == 1 { 150 } else { 40 };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < n {
        let p: Vec<f64> = (0..d)
            .map(|_| {
                if grid {
                    rng.random_range(-span..span) as f64 * 0.25
                } else {
                    rng.random_range(-10.0..10.0)
                }
            })
            .collect();
        if !rows.contains(&p) {
            rows.push(p);
        }
    }
    rows
}

fn nu_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for (sets, max_n, d) in [(200, 200, 1), (50, 60, 2)] {
        for _ in 0..sets {
            let n = rng.random_range(1..=max_n);
            let rows = random_rows(&mut rng, n, d);
            let set = PointSet::from_rows(rows.clone()).unwrap();
            let h = if rng.random_bool(0.5) {
                rng.random_range(1..=12) as f64 * 0.25
            } else {
                rng.random_range(0.1..5.0)
            };
            let nu = set.nu_plus(h).map_err(|e| e.to_string())?;
            let brute = brute_nu(&rows, h);
            ensure(nu.exact && nu.lower == brute && nu.upper == brute, || {
                format!("d={d} n={n} h={h}: exact {:?} vs brute {brute}", nu)
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} sets agree"))
}

// 3. Separation dichotomy ---------------------------------------------------

fn separation_dichotomy() -> Outcome {
    let mut parts = Vec::new();
    let mut int_parts = Vec::new();
    for n in [100usize, 200, 400] {
        let r = PointSet::reciprocal(n).unwrap();
        let nu = r.nu_plus(1.0).unwrap();
        ensure(nu.exact && nu.lower == n, || format!("ν⁺(1) = {:?} for N={n}", nu))?;
        parts.push(r.decompose_separated(0.01).unwrap().part_count);

        let z = lattice(1.0, 1, n as f64);
        let nu = z.nu_plus(1.0).unwrap();
        ensure(nu.exact && nu.lower == 1, || format!("ℤ window {n}: ν⁺(1) = {:?}", nu))?;
        int_parts.push(z.decompose_separated(0.01).unwrap().part_count);
    }
    ensure(parts.windows(2).all(|w| w[0] < w[1]), || {
        format!("reciprocal part counts not increasing: {parts:?}")
    })?;
    ensure(int_parts.iter().all(|&c| c == int_parts[0]), || {
        format!("integer part counts vary: {int_parts:?}")
    })?;
    Ok(format!("reciprocal parts {parts:?}, integer parts {int_parts:?}"))
}

// 4. Pairing exactness -------------------------------------------------------

/// Midpoint sum of `∫_l^u e^{−2πiξx} dx` with `cells` cells.
fn riemann_1d(l: f64, u: f64, xi: f64, cells: usize) -> Complex64 {
    let step = (u - l) / cells as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..cells {
        let x = l + (i as f64 + 0.5) * step;
        acc += Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * xi * x);
    }
    acc * step
}

/// Riemann sum of `∫ g e^{−2πi⟨ξ,x⟩}` for `g = c·χ_B`. The integrand is a
/// product over axes, so each axis gets its own 10⁶-point midpoint sum; a
/// single 10⁶-point grid in 2D would leave ~1e-6 discretization error.
fn riemann_modulated(c: Complex64, b: &Block, freq: &[f64]) -> Complex64 {
    (0..b.dim())
        .map(|k| riemann_1d(b.lower()[k], b.upper()[k], freq[k], 1_000_000))
        .product::<Complex64>()
        * c
}

fn pairing_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = chi(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-2.0..2.0);
        let v = f
            .pair_translated(&f, &Point::scalar(x).unwrap())
            .unwrap();
        let err = (v - Complex64::new((1.0 - x.abs()).max(0.0), 0.0)).norm();
        worst = worst.max(err);
    }
    ensure(worst <= 1e-12, || format!("translated pairing error {worst:e}"))?;

    let mut worst_mod: f64 = 0.0;
    for case in 0..20 {
        let d = if case % 2 == 0 { 1 } else { 2 };
        let lower: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.2..2.0)).collect();
        let freq: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b = Block::new(lower, upper).unwrap();
        let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let g = PiecewiseFn::new(d, vec![Piece::new(b.clone(), c)]).unwrap();
        let exact = g
            .pair_modulated(&Point::new(freq.clone()).unwrap())
            .unwrap();
        let approx = riemann_modulated(c, &b, &freq);
        worst_mod = worst_mod.max((exact - approx).norm());
    }
    ensure(worst_mod <= 1e-6, || format!("modulated pairing error {worst_mod:e}"))?;
    Ok(format!("max errors {worst:.1e} (shift), {worst_mod:.1e} (modulated)"))
}

// 5. (C_q) sweep divergence --------------------------------------------------

fn cq_divergence() -> Outcome {
    let sys = TranslateSystem::single(chi(0.0, 1.0), lattice(1.0, 1, 20.0), 2.0).unwrap();
    let hs: Vec<f64> = (2..=10).map(|k| 2f64.powi(-k)).collect();
    let sweep = sys.cq_indicator_sweep(&hs).map_err(|e| e.to_string())?;
    for row in &sweep.rows {
        let k = row.k_required.ok_or("unbounded row")?;
        ensure((k - row.h.powf(-0.5)).abs() <= 1e-9, || {
            format!("h={}: K={k} vs {}", row.h, row.h.powf(-0.5))
        })?;
        ensure(row.holder_bound_holds == Some(true), || {
            format!("Hölder bound fails at h={}", row.h)
        })?;
    }
    let fit = sweep.fit.ok_or("no fit")?;
    ensure((fit.slope - 0.5).abs() <= 0.01, || format!("slope {}", fit.slope))?;
    ensure(sweep.verdict == CqVerdict::Divergent, || {
        format!("verdict {:?}", sweep.verdict)
    })?;
    Ok(format!("slope {:.6}, R² {:.6}", fit.slope, fit.r_squared))
}

// 6. Localized mass tiling ---------------------------------------------------

fn mass_tiling() -> Outcome {
    let gen = Generator::new(chi(0.0, 1.0), lattice(1.0, 1, 50.0), "z").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x: f64 = rng.random_range(-40.0..40.0);
        let side: f64 = rng.random_range(0.01..5.0);
        let q = Cube::centered(&Point::scalar(x).unwrap(), side).unwrap();
        let m = gen.localized_mass(&q, 2.0).unwrap().total;
        worst = worst.max((m - side).abs() / side);
    }
    ensure(worst <= 1e-12, || format!("relative tiling error {worst:e}"))?;

    let hs: Vec<f64> = (0..10).map(|k| 2f64.powi(-k)).collect();
    for _ in 0..5 {
        let x = Point::scalar(rng.random_range(-10.0..10.0)).unwrap();
        let decay = gen.mass_decay_sweep(&x, &hs, 2.0, 1e-2).unwrap();
        ensure(decay.monotone, || "mass not monotone".into())?;
        for w in decay.rows.windows(2) {
            let r = w[1].mass / w[0].mass;
            ensure((r - 0.5).abs() <= 1e-9, || format!("halving ratio {r}"))?;
        }
    }
    Ok(format!("max relative tiling error {worst:.1e}"))
}

// 7. Blowup witness ----------------------------------------------------------

fn blowup() -> Outcome {
    let f = chi(0.0, 1.0);
    let mut detail = Vec::new();
    for n in [100usize, 200, 400] {
        let gamma =
            PointSet::from_1d(&(0..n).map(|k| k as f64 / n as f64).collect::<Vec<_>>()).unwrap();
        let w = system::blowup_witness(&f, &f, &gamma, 0.5, 2.0).map_err(|e| e.to_string())?;
        ensure(w.sum_lower_bound >= 0.2 * n as f64, || {
            format!("N={n}: bound {} < {}", w.sum_lower_bound, 0.2 * n as f64)
        })?;
        let sys = TranslateSystem::single(f.clone(), gamma, 2.0).unwrap();
        let direct = sys
            .bessel_sum(&f.translate(&w.beta).unwrap(), 2.0)
            .unwrap();
        ensure(w.sum_lower_bound <= direct, || {
            format!("N={n}: certified {} exceeds direct {direct}", w.sum_lower_bound)
        })?;
        detail.push(format!("N={n}: {:.2} ≤ {:.2}", w.sum_lower_bound, direct));
    }
    Ok(detail.join("; "))
}

// 8. Dichotomy verdicts ------------------------------------------------------

fn generator(f: PiecewiseFn, provenance: Provenance, label: &str) -> Generator {
    Generator::new(f, PointSet::generate(&provenance).unwrap(), label).unwrap()
}

fn shifted_lattice(offset: f64, window: f64) -> Provenance {
    Provenance::Lattice {
        basis: vec![vec![1.0]],
        window,
        offset: Some(vec![offset]),
    }
}

fn dichotomy_suite() -> Outcome {
    let chi1 = chi(0.0, 1.0);
    let reciprocal = Provenance::Reciprocal { n: 100 };
    let systems: Vec<(&str, Vec<Generator>, Vec<f64>)> = vec![
        (
            "Z",
            vec![generator(chi1.clone(), Provenance::scaled_lattice(1.0, 1, 20.0), "Z")],
            vec![20.0, 40.0, 80.0],
        ),
        (
            "Z/2",
            vec![generator(chi1.clone(), Provenance::scaled_lattice(0.5, 1, 20.0), "Z/2")],
            vec![20.0, 40.0, 80.0],
        ),
        (
            "Z^2",
            vec![generator(
                unit_cube_indicator(2),
                Provenance::scaled_lattice(1.0, 2, 10.0),
                "Z^2",
            )],
            vec![10.0, 20.0, 40.0],
        ),
        (
            "Z ∪ (Z+1/2)",
            vec![
                generator(chi1.clone(), shifted_lattice(0.0, 20.0), "Z"),
                generator(chi1.clone(), shifted_lattice(0.5, 20.0), "Z+1/2"),
            ],
            vec![20.0, 40.0, 80.0],
        ),
        (
            "{1/n}",
            vec![generator(chi1.clone(), reciprocal.clone(), "1/n")],
            vec![100.0, 200.0, 400.0],
        ),
        (
            "Z ∪ {1/n}",
            vec![
                generator(chi1.clone(), Provenance::scaled_lattice(1.0, 1, 100.0), "Z"),
                generator(chi(0.0, 0.5), reciprocal, "1/n"),
            ],
            vec![100.0, 200.0, 400.0],
        ),
    ];
    let mut detail = Vec::new();
    for (name, gens, radii) in systems {
        let union = gens.len() > 1;
        let sys = TranslateSystem::new(gens, 2.0).unwrap();
        let config = DichotomyConfig {
            h_values: (2..=8).map(|k| 2f64.powi(-k)).collect(),
            p_prime: 2.0,
            truncation_radii: radii,
            density_h_values: vec![1.0, 2.0, 4.0],
            tolerances: DichotomyTolerances::default(),
        };
        let report = sys
            .dichotomy_report(&config)
            .map_err(|e| format!("{name}: {e}"))?;
        let k_bounded = matches!(&report.cq, CqOutcome::Evaluated { sweep } if sweep.verdict == CqVerdict::Bounded);
        ensure(!(report.bessel_bounded && k_bounded) && report.consistent, || {
            format!("{name}: Bessel ratios and K_required both bounded")
        })?;
        if union {
            ensure(report.subadditivity_holds, || format!("{name}: subadditivity fails"))?;
        }
        detail.push(format!("{name}: {:?}", report.horn));
    }
    Ok(detail.join("; "))
}

// 9. Haar system -------------------------------------------------------------

fn haar_suite() -> Outcome {
    let indices = HaarIndex::up_to(7);
    for p in [1.5, 2.0, 3.0] {
        let duals: Vec<_> = indices.iter().map(|&i| haar::dual_fn(i, p).unwrap()).collect();
        let prims: Vec<_> = indices.iter().map(|&i| haar::haar_fn(i, p).unwrap()).collect();
        for (a, d) in duals.iter().enumerate() {
            for (b, h) in prims.iter().enumerate() {
                let want = Complex64::new(if a == b { 1.0 } else { 0.0 }, 0.0);
                let got = d.pair(h).unwrap();
                ensure(got == want, || {
                    format!("p={p}: ⟨{}, {}⟩ = {got}", indices[a], indices[b])
                })?;
            }
        }
    }

    let mut worst: f64 = 0.0;
    for e in haar::random_batch(1000, 16, 6, 90).unwrap() {
        let n = haar::expansion_norm(&e, 2.0).unwrap();
        worst = worst.max((n - e.coefficient_norm(2.0)).abs());
    }
    ensure(worst <= 1e-12, || format!("p=2 isometry error {worst:e}"))?;

    let margin = 0.25;
    let mut detail = vec![format!("isometry error {worst:.1e}")];
    for (k, p) in [1.5, 3.0].into_iter().enumerate() {
        let seed = 1000 * k as u64;
        let fit_a = haar::coefficient_sandwich_check(&haar::random_batch(1000, 16, 6, seed).unwrap(), p)
            .unwrap();
        let batch_b = haar::random_batch(1000, 16, 6, seed + 1).unwrap();
        let fit_b = haar::coefficient_sandwich_check(&batch_b, p).unwrap();
        let violations = haar::sandwich_violations(&fit_b.rows, fit_a.fit, margin);
        ensure(violations == 0, || format!("p={p}: {violations} held-out violations"))?;
        let factor = [
            fit_a.fit.lower / fit_b.fit.lower,
            fit_a.fit.upper / fit_b.fit.upper,
        ]
        .into_iter()
        .map(|r| r.max(1.0 / r))
        .fold(1.0, f64::max);
        ensure(factor <= 2.0, || format!("p={p}: fit instability factor {factor}"))?;

        let tests = haar::random_step_tests(50, 8, seed + 3);
        let at8 = haar::prop43_check(p, 8, &tests).unwrap();
        let at10 = haar::prop43_check(p, 10, &tests).unwrap();
        let rel_b = (at10.max_bessel_ratio - at8.max_bessel_ratio).abs() / at8.max_bessel_ratio;
        let (k8, k10) = (
            at8.max_k_required.ok_or("annihilated test")?,
            at10.max_k_required.ok_or("annihilated test")?,
        );
        let rel_k = (k10 - k8).abs() / k8;
        ensure(rel_b <= 0.2 && rel_k <= 0.2, || {
            format!("p={p}: prop43 drift {rel_b:.3} (Bessel), {rel_k:.3} (K)")
        })?;
        detail.push(format!(
            "p={p}: C_fit [{:.3}, {:.3}], drift {rel_b:.1e}/{rel_k:.1e}",
            fit_a.fit.lower, fit_a.fit.upper
        ));
    }
    Ok(detail.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, u64); 9] = [
        ("lattice density", lattice_density, 5),
        ("nu+ oracle equivalence", nu_oracle, 30),
        ("separation dichotomy", separation_dichotomy, 10),
        ("pairing exactness", pairing_exactness, 10),
        ("(C_q) sweep divergence", cq_divergence, 5),
        ("localized mass tiling", mass_tiling, 5),
        ("blowup witness", blowup, 10),
        ("dichotomy verdicts", dichotomy_suite, 60),
        ("Haar system", haar_suite, 60),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > Duration::from_secs(limit) => {
                Err(format!("{d}; took {elapsed:.2?}, limit {limit}s"))
            }
            other => other,
        };
        match outcome {
            Ok(d) => println!("criterion {}: PASS  {name} ({elapsed:.2?}) {d}", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({elapsed:.2?}) {e}", i + 1)
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
