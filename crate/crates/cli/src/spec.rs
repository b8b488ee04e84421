//! Experiment spec files, one struct per subcommand.

use serde::{Deserialize, Serialize};
use tdens::formats::{CubeSpec, FunctionSpec, PointSetSpec, SystemSpec};
use tdens::haar::HaarExpansion;
use tdens::system::DichotomyTolerances;

/// A system given inline or as a path to a system JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemRef {
    Path(String),
    Inline(SystemSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySpec {
    pub points: PointSetSpec,
    pub h_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparateSpec {
    pub points: PointSetSpec,
    /// Defaults to the minimum separation of the set.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub accumulation: Option<AccumulationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccumulationSpec {
    pub radius: f64,
    pub threshold: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSpec {
    pub f: FunctionSpec,
    pub g: FunctionSpec,
    /// Shifts `x` for `⟨f, T_x g⟩`.
    #[serde(default)]
    pub shifts: Vec<Vec<f64>>,
    /// Frequencies `ξ` for `∫ f e^{−2πi⟨ξ,x⟩}`.
    #[serde(default)]
    pub frequencies: Vec<Vec<f64>>,
    /// Exponent for the reported norms and the Hölder check.
    #[serde(default)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BesselSpec {
    pub system: SystemRef,
    pub tests: Vec<FunctionSpec>,
    /// Defaults to the conjugate exponent `q` of the system.
    #[serde(default)]
    pub p_prime: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessSpec {
    pub f: FunctionSpec,
    /// Defaults to the norming functional of `f` in Lᵖ.
    #[serde(default)]
    pub f_dual: Option<FunctionSpec>,
    pub points: PointSetSpec,
    pub epsilon: f64,
    pub p_prime: f64,
    #[serde(default)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CqSweepSpec {
    pub system: SystemRef,
    pub h_values: Vec<f64>,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizedMassSpec {
    pub system: SystemRef,
    pub cube: CubeSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassDecaySpec {
    pub system: SystemRef,
    pub center: Vec<f64>,
    pub h_values: Vec<f64>,
    pub tolerance: f64,
}

fn default_p_values() -> Vec<f64> {
    vec![1.5, 3.0]
}

fn default_batch() -> usize {
    1000
}

fn default_terms() -> usize {
    16
}

fn default_levels() -> u32 {
    6
}

fn default_margin() -> f64 {
    0.25
}

fn default_cutoffs() -> Vec<u32> {
    vec![8, 10]
}

fn default_tests() -> usize {
    50
}

fn default_sign_trials() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaarCheckSpec {
    #[serde(default = "default_p_values")]
    pub p_values: Vec<f64>,
    /// Required unless given on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_terms")]
    pub terms: usize,
    /// Random expansions use Haar levels `0..levels`; biorthogonality is
    /// checked on the same range.
    #[serde(default = "default_levels")]
    pub levels: u32,
    /// Relative slack on fitted constants for the held-out batch.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<u32>,
    #[serde(default = "default_tests")]
    pub tests: usize,
    #[serde(default = "default_sign_trials")]
    pub sign_trials: usize,
    /// Expansions whose norms are reported directly.
    #[serde(default)]
    pub expansions: Vec<HaarExpansion>,
}

fn default_density_h() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomySpec {
    pub system: SystemRef,
    pub h_values: Vec<f64>,
    #[serde(default)]
    pub p_prime: Option<f64>,
    pub truncation_radii: Vec<f64>,
    #[serde(default = "default_density_h")]
    pub density_h_values: Vec<f64>,
    #[serde(default)]
    pub tolerances: DichotomyTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Step {
    Density(DensitySpec),
    Separate(SeparateSpec),
    Pair(PairSpec),
    Bessel(BesselSpec),
    BlowupWitness(WitnessSpec),
    CqSweep(CqSweepSpec),
    LocalizedMass(LocalizedMassSpec),
    MassDecay(MassDecaySpec),
    HaarCheck(HaarCheckSpec),
    Dichotomy(DichotomySpec),
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Density(_) => "density",
            Step::Separate(_) => "separate",
            Step::Pair(_) => "pair",
            Step::Bessel(_) => "bessel",
            Step::BlowupWitness(_) => "blowup-witness",
            Step::CqSweep(_) => "cq-sweep",
            Step::LocalizedMass(_) => "localized-mass",
            Step::MassDecay(_) => "mass-decay",
            Step::HaarCheck(_) => "haar-check",
            Step::Dichotomy(_) => "dichotomy",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub steps: Vec<Step>,
    #[serde(default)]
    pub seed: Option<u64>,
}
