//! Dispatch from spec steps to toolkit operations.

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use tdens::formats::{self, FormatError, Resolver};
use tdens::haar::{self, HaarIndex};
use tdens::system::{self, CqVerdict, DichotomyConfig, SystemError, TranslateSystem};
use tdens::{Cube, Point, PointSetError};

use crate::spec::*;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

/// Failures while reading inputs are input errors, whatever their cause.
fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn precondition(e: impl std::fmt::Display) -> CliError {
    CliError::Precondition(e.to_string())
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        precondition(e)
    }
}

impl From<PointSetError> for CliError {
    fn from(e: PointSetError) -> Self {
        precondition(e)
    }
}

impl From<tdens::LpError> for CliError {
    fn from(e: tdens::LpError) -> Self {
        precondition(e)
    }
}

impl From<haar::HaarError> for CliError {
    fn from(e: haar::HaarError) -> Self {
        precondition(e)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        input(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub holds: bool,
}

fn verdict(name: &str, holds: bool) -> Verdict {
    Verdict {
        name: name.to_string(),
        holds,
    }
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub outputs: Value,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    /// `(file stem, csv text)`
    pub tables: Vec<(String, String)>,
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize to JSON")
}

pub struct Context<'a> {
    pub resolver: &'a mut Resolver,
    pub seed: Option<u64>,
}

impl Context<'_> {
    fn system(&mut self, r: &SystemRef, warnings: &mut Vec<String>) -> Result<TranslateSystem, CliError> {
        let ingested = match r {
            SystemRef::Path(p) => self.resolver.system_file(p),
            SystemRef::Inline(s) => self.resolver.system(s),
        }
        .map_err(input)?;
        warnings.extend(ingested.warnings);
        Ok(ingested.value)
    }
}

fn point(coords: &[f64]) -> Result<Point, CliError> {
    Point::new(coords.to_vec()).map_err(input)
}

pub fn execute(step: &Step, cx: &mut Context) -> Result<StepOutput, CliError> {
    match step {
        Step::Density(s) => density(s, cx),
        Step::Separate(s) => separate(s, cx),
        Step::Pair(s) => pair(s, cx),
        Step::Bessel(s) => bessel(s, cx),
        Step::BlowupWitness(s) => witness(s, cx),
        Step::CqSweep(s) => cq_sweep(s, cx),
        Step::LocalizedMass(s) => localized_mass(s, cx),
        Step::MassDecay(s) => mass_decay(s, cx),
        Step::HaarCheck(s) => haar_check(s, cx),
        Step::Dichotomy(s) => dichotomy(s, cx),
    }
}

fn density(s: &DensitySpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let set = cx.resolver.points(&s.points)?;
    let profile = set.density_profile(&s.h_values)?;
    let mut out = StepOutput {
        tables: vec![("density".into(), formats::density_csv(&profile.rows))],
        ..Default::default()
    };
    let mut outputs = json!({ "size": set.len(), "dimension": set.dim(), "profile": profile });
    if let Some(rows) = set.subadditivity(&s.h_values)? {
        out.verdicts
            .push(verdict("subadditivity", rows.iter().all(|r| r.holds)));
        outputs["subadditivity"] = to_value(&rows);
    }
    if profile.truncation_bias {
        out.warnings
            .push("truncated family: large cubes undercount near the window boundary".into());
    }
    out.outputs = outputs;
    Ok(out)
}

fn separate(s: &SeparateSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let set = cx.resolver.points(&s.points)?;
    let min_gap = set.min_separation().ok();
    let delta = match (s.delta, min_gap) {
        (Some(d), _) => d,
        (None, Some(g)) => g,
        (None, None) => {
            return Err(precondition(
                "delta is required when the set has fewer than two points",
            ))
        }
    };
    let report = set.decompose_separated(delta)?;
    let mut outputs = json!({ "size": set.len(), "min_separation": min_gap, "decomposition": report });
    if let Some(a) = &s.accumulation {
        let clusters = set.detect_accumulation(a.radius, a.threshold)?;
        outputs["accumulation"] = json!({
            "radius": a.radius,
            "threshold": a.threshold,
            "points": clusters,
        });
    }
    Ok(StepOutput {
        outputs,
        ..Default::default()
    })
}

fn pair(s: &PairSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let f = cx.resolver.function(&s.f)?;
    let g = cx.resolver.function(&s.g)?;
    out.warnings.extend(f.warnings.into_iter().chain(g.warnings));
    let (f, g) = (f.value, g.value);
    let mut outputs = json!({ "pairing": f.pair(&g)? });
    let mut shifted = Vec::new();
    for x in &s.shifts {
        let x = point(x)?;
        shifted.push(json!({ "shift": x, "pairing": f.pair_translated(&g, &x)? }));
    }
    outputs["shifted"] = Value::Array(shifted);
    let mut modulated = Vec::new();
    for xi in &s.frequencies {
        let xi = point(xi)?;
        modulated.push(json!({ "frequency": xi, "integral": f.pair_modulated(&xi)? }));
    }
    outputs["modulated"] = Value::Array(modulated);
    if let Some(p) = s.p {
        let q = tdens::ExponentPair::new(p)?.q;
        let (nf, ng) = (f.lp_norm(p), g.lp_norm(q));
        let holder = f.pair(&g)?.norm() <= nf * ng * (1.0 + system::INEQUALITY_SLACK);
        outputs["norms"] = json!({ "p": p, "q": q, "f_p": nf, "g_q": ng });
        out.verdicts.push(verdict("holder", holder));
    }
    out.outputs = outputs;
    Ok(out)
}

fn bessel(s: &BesselSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let sys = cx.system(&s.system, &mut out.warnings)?;
    let mut tests = Vec::with_capacity(s.tests.len());
    for t in &s.tests {
        let t = cx.resolver.function(t)?;
        out.warnings.extend(t.warnings);
        tests.push(t.value);
    }
    for t in &tests {
        if let Some(bb) = t.bounding_box() {
            sys.reach_check(&bb)?;
        }
    }
    let p_prime = s.p_prime.unwrap_or(sys.exponents().q);
    out.outputs = to_value(&sys.bessel_bound_estimate(&tests, p_prime)?);
    Ok(out)
}

fn witness(s: &WitnessSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let f = cx.resolver.function(&s.f)?;
    out.warnings.extend(f.warnings);
    let f = f.value;
    let p = s.p.unwrap_or(2.0);
    let dual = match &s.f_dual {
        Some(spec) => {
            let d = cx.resolver.function(spec)?;
            out.warnings.extend(d.warnings);
            d.value
        }
        None => f.norming_functional(p)?,
    };
    let gamma = cx.resolver.points(&s.points)?;
    let w = system::blowup_witness(&f, &dual, &gamma, s.epsilon, s.p_prime)?;
    let sys = TranslateSystem::single(f, gamma, p)?;
    let direct = sys.bessel_sum(&dual.translate(&w.beta)?, s.p_prime)?;
    out.verdicts.push(verdict(
        "witness_below_direct_sum",
        w.sum_lower_bound <= direct * (1.0 + system::INEQUALITY_SLACK),
    ));
    out.outputs = json!({ "witness": w, "direct_bessel_sum": direct });
    Ok(out)
}

fn cq_sweep(s: &CqSweepSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let sys = cx.system(&s.system, &mut out.warnings)?;
    let center = match &s.center {
        Some(c) => point(c)?,
        None => Point::origin(sys.dim()),
    };
    let sweep = sys.cq_indicator_sweep_at(&center, &s.h_values)?;
    out.verdicts.push(verdict(
        "holder_bound",
        sweep.rows.iter().all(|r| r.holder_bound_holds != Some(false)),
    ));
    out.tables.push(("sweep".into(), formats::sweep_csv(&sweep.rows)));
    out.outputs = to_value(&sweep);
    Ok(out)
}

fn localized_mass(s: &LocalizedMassSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let sys = cx.system(&s.system, &mut out.warnings)?;
    let cube: Cube = s.cube.to_cube().map_err(input)?;
    let report = sys.localized_mass(&cube)?;
    out.verdicts.push(verdict(
        "finiteness_bound",
        report
            .per_generator
            .iter()
            .all(|g| g.finiteness.as_ref().is_none_or(|b| b.holds)),
    ));
    out.outputs = to_value(&report);
    Ok(out)
}

fn mass_decay(s: &MassDecaySpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let sys = cx.system(&s.system, &mut out.warnings)?;
    let x = point(&s.center)?;
    let p = sys.exponents().p;
    let mut per_generator = Vec::new();
    for g in sys.generators() {
        let decay = g.mass_decay_sweep(&x, &s.h_values, p, s.tolerance)?;
        out.verdicts
            .push(verdict(&format!("{}: monotone", g.label()), decay.monotone));
        per_generator.push(json!({ "label": g.label(), "decay": decay }));
    }
    out.outputs = Value::Array(per_generator);
    Ok(out)
}

fn haar_check(s: &HaarCheckSpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let seed = cx
        .seed
        .or(s.seed)
        .ok_or_else(|| input("haar-check needs a seed (spec field `seed` or --seed)"))?;
    let mut out = StepOutput::default();
    let mut per_p = Vec::new();
    let mut rows = Vec::new();
    let indices = HaarIndex::up_to(s.levels);
    for (n, &p) in s.p_values.iter().enumerate() {
        let base = seed.wrapping_add(1000 * n as u64);

        let mut biorthogonal = true;
        for &i in &indices {
            let d = haar::dual_fn(i, p)?;
            for &k in &indices {
                let v = d.pair(&haar::haar_fn(k, p)?)?;
                biorthogonal &= v.re == f64::from(u8::from(i == k)) && v.im == 0.0;
            }
        }

        let fit_batch = haar::random_batch(s.batch_size, s.terms, s.levels, base)?;
        let held_batch = haar::random_batch(s.batch_size, s.terms, s.levels, base + 1)?;
        let fit = haar::coefficient_sandwich_check(&fit_batch, p)?;
        let held = haar::coefficient_sandwich_check(&held_batch, p)?;
        let held_out_violations = haar::sandwich_violations(&held.rows, fit.fit, s.margin);
        let stability = (fit.fit.upper / held.fit.upper)
            .max(held.fit.upper / fit.fit.upper)
            .max(fit.fit.lower / held.fit.lower)
            .max(held.fit.lower / fit.fit.lower);

        let sample: Vec<_> = fit_batch.iter().take(20).cloned().collect();
        let uncond = haar::unconditional_constant_estimate(&sample, p, s.sign_trials, base + 2)?;

        let tests = haar::random_step_tests(s.tests, 8, base + 3);
        let mut reports = Vec::new();
        for &c in &s.cutoffs {
            let r = haar::prop43_check(p, c, &tests)?;
            rows.push(vec![
                formats::fmt_f64(p),
                c.to_string(),
                formats::fmt_f64(fit.fit.upper),
                formats::fmt_f64(r.max_bessel_ratio),
            ]);
            reports.push(r);
        }
        let ratio_stable = reports.windows(2).all(|w| {
            let (a, b) = (w[0].max_bessel_ratio, w[1].max_bessel_ratio);
            (b - a).abs() <= 0.2 * a
        });

        let norms = s
            .expansions
            .iter()
            .map(|e| haar::expansion_norm(e, p))
            .collect::<Result<Vec<_>, _>>()?;

        let tag = |name: &str| format!("p={p}: {name}");
        out.verdicts.push(verdict(&tag("biorthogonality"), biorthogonal));
        out.verdicts
            .push(verdict(&tag("held_out_sandwich"), held_out_violations == 0));
        out.verdicts.push(verdict(&tag("fit_stability"), stability <= 2.0));
        out.verdicts.push(verdict(&tag("prop43_stability"), ratio_stable));
        per_p.push(json!({
            "p": p,
            "biorthogonal": biorthogonal,
            "fit": fit.fit,
            "held_out_fit": held.fit,
            "held_out_violations": held_out_violations,
            "fit_stability_factor": stability,
            "unconditional": uncond,
            "prop43": reports,
            "expansion_norms": norms,
        }));
    }
    out.tables.push((
        "haar".into(),
        formats::table(&["p", "cutoff", "fitted_C", "max_ratio"], rows),
    ));
    out.outputs = json!({ "seed": seed, "margin": s.margin, "per_p": per_p });
    Ok(out)
}

fn dichotomy(s: &DichotomySpec, cx: &mut Context) -> Result<StepOutput, CliError> {
    let mut out = StepOutput::default();
    let sys = cx.system(&s.system, &mut out.warnings)?;
    let config = DichotomyConfig {
        h_values: s.h_values.clone(),
        p_prime: s.p_prime.unwrap_or(sys.exponents().q),
        truncation_radii: s.truncation_radii.clone(),
        density_h_values: s.density_h_values.clone(),
        tolerances: s.tolerances.clone(),
    };
    let report = sys.dichotomy_report(&config)?;
    out.verdicts.push(verdict("dichotomy_consistent", report.consistent));
    out.verdicts
        .push(verdict("subadditivity", report.subadditivity_holds));
    out.verdicts
        .push(verdict("density_subadditivity", report.density.holds));
    if let system::CqOutcome::Evaluated { sweep } = &report.cq {
        out.tables.push(("sweep".into(), formats::sweep_csv(&sweep.rows)));
        if sweep.verdict == CqVerdict::UnboundedWitness {
            out.warnings
                .push("a test functional annihilates the truncated system".into());
        }
    }
    out.outputs = to_value(&report);
    Ok(out)
}
