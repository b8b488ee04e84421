//! File formats: point sets (CSV or generator descriptors), piecewise
//! functions and translate systems (JSON), and CSV tables for reports.
//!
//! Relative paths inside a spec resolve against the directory of the file
//! that mentions them, and every file read is recorded so callers can
//! digest their inputs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpfunc::{sample, Block, Expression, LpError, Piece, PiecewiseFn};
use crate::pointset::{Cube, DensityRow, Point, PointSet, PointSetError, Provenance};
use crate::system::{CqRow, Generator, SystemError, TranslateSystem};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    PointSet(#[from] PointSetError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn parse_error(path: &Path, line: Option<u64>, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> FormatError {
    parse_error(path, Some(e.line() as u64), e.to_string())
}

/// A point set given as a CSV path or a generator descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSetSpec {
    Csv(String),
    Generator(Provenance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CubeSpec {
    Centered { center: Vec<f64>, side: f64 },
    Anchored { lower: Vec<f64>, side: f64 },
}

impl CubeSpec {
    pub fn to_cube(&self) -> Result<Cube> {
        Ok(match self {
            CubeSpec::Centered { center, side } => Cube::centered(&Point::new(center.clone())?, *side)?,
            CubeSpec::Anchored { lower, side } => Cube::anchored(&Point::new(lower.clone())?, *side)?,
        })
    }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionKind {
    Indicator {
        cube: CubeSpec,
    },
    Block {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "one")]
        re: f64,
        #[serde(default)]
        im: f64,
    },
    Sampled {
        expression: Expression,
        step: f64,
        support: SupportSpec,
        #[serde(default = "two")]
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// A function given inline, by shorthand kind, or by name/path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    /// A name from the enclosing `functions` table, otherwise a JSON path.
    Reference(String),
    Pieces {
        dimension: usize,
        pieces: Vec<PieceSpec>,
    },
    Kind(FunctionKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub f: FunctionSpec,
    pub gamma: PointSetSpec,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub p: f64,
    pub generators: Vec<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub functions: BTreeMap<String, FunctionSpec>,
}

/// The canonical on-disk form of a [`PiecewiseFn`].
pub fn function_to_spec(f: &PiecewiseFn) -> FunctionSpec {
    FunctionSpec::Pieces {
        dimension: f.dim(),
        pieces: f
            .pieces()
            .iter()
            .map(|p| PieceSpec {
                lower: p.block.lower().to_vec(),
                upper: p.block.upper().to_vec(),
                re: p.value.re,
                im: p.value.im,
            })
            .collect(),
    }
}

pub fn write_function_json(path: &Path, f: &PiecewiseFn) -> Result<()> {
    let text = serde_json::to_string_pretty(&function_to_spec(f))
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| FormatError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FormatError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Exponent form with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One point per row, `d` columns; a non-numeric first row is a header.
pub fn parse_points_csv(path: &Path, text: &str) -> Result<PointSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen: HashMap<Vec<u64>, u64> = HashMap::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let line = |r: &csv::StringRecord| r.position().map(|p| p.line());
        let record = record.map_err(|e| {
            parse_error(path, e.position().map(|p| p.line()), e.to_string())
        })?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_error(path, line(&record), format!("bad number: {e}"))),
        };
        if row.is_empty() {
            continue;
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(parse_error(
                    path,
                    line(&record),
                    format!("expected {d} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        let key: Vec<u64> = row.iter().map(|x| (x + 0.0).to_bits()).collect();
        let here = line(&record).unwrap_or(0);
        if let Some(first) = seen.insert(key, here) {
            return Err(parse_error(
                path,
                Some(here),
                format!("duplicate point {row:?} (first on line {first})"),
            ));
        }
        rows.push(row);
    }
    let dim = dim.ok_or_else(|| parse_error(path, None, "no points"))?;
    let points = rows
        .into_iter()
        .map(Point::new)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PointSet::new(dim, points)?)
}

pub fn points_to_csv(set: &PointSet) -> String {
    let mut out = String::new();
    for p in set.points() {
        let row: Vec<String> = p.coords().iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// `h, nu_lower, nu_upper, ratio_lower, ratio_upper`
pub fn density_csv(rows: &[DensityRow]) -> String {
    table(
        &["h", "nu_lower", "nu_upper", "ratio_lower", "ratio_upper"],
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.h),
                r.nu_lower.to_string(),
                r.nu_upper.to_string(),
                fmt_f64(r.ratio_lower),
                fmt_f64(r.ratio_upper),
            ]
        }),
    )
}

/// `h, q_norm, p_power_sum, K_required, localized_mass`; unbounded or
/// missing values are written as `inf` and an empty field.
pub fn sweep_csv(rows: &[CqRow]) -> String {
    table(
        &["h", "q_norm", "p_power_sum", "K_required", "localized_mass"],
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.h),
                fmt_f64(r.q_norm),
                fmt_f64(r.p_power_sum),
                r.k_required.map_or_else(|| "inf".to_string(), fmt_f64),
                r.localized_mass.map(fmt_f64).unwrap_or_default(),
            ]
        }),
    )
}

pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii table")
}

/// A function after ingestion; `warnings` notes any automatic repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Resolves specs against a base directory and records files read.
#[derive(Debug, Clone)]
pub struct Resolver {
    base: PathBuf,
    files: Vec<PathBuf>,
}

impl Resolver {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Resolver {
            base: base.into(),
            files: Vec::new(),
        }
    }

    /// Resolver rooted at the directory containing `spec_path`.
    pub fn for_file(spec_path: &Path) -> Self {
        Self::new(spec_path.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    pub fn files_read(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn read(&mut self, path: &str) -> Result<(PathBuf, String)> {
        let full = self.resolve(path);
        let text = read_text(&full)?;
        if !self.files.contains(&full) {
            self.files.push(full.clone());
        }
        Ok((full, text))
    }

    pub fn points(&mut self, spec: &PointSetSpec) -> Result<PointSet> {
        match spec {
            PointSetSpec::Csv(path) => {
                let (full, text) = self.read(path)?;
                parse_points_csv(&full, &text)
            }
            PointSetSpec::Generator(p) => Ok(PointSet::generate(p)?),
        }
    }

    pub fn function(&mut self, spec: &FunctionSpec) -> Result<Ingested<PiecewiseFn>> {
        self.function_in(spec, &BTreeMap::new(), 0)
    }

    fn function_in(
        &mut self,
        spec: &FunctionSpec,
        names: &BTreeMap<String, FunctionSpec>,
        depth: usize,
    ) -> Result<Ingested<PiecewiseFn>> {
        if depth > 8 {
            return Err(FormatError::Invalid("function references nest too deeply".into()));
        }
        match spec {
            FunctionSpec::Reference(name) => {
                if let Some(inner) = names.get(name) {
                    return self.function_in(inner, names, depth + 1);
                }
                let (full, text) = self.read(name)?;
                let inner: FunctionSpec =
                    serde_json::from_str(&text).map_err(|e| json_error(&full, e))?;
                let mut nested = Resolver::for_file(&full);
                let out = nested.function_in(&inner, names, depth + 1);
                self.files.extend(nested.files);
                out
            }
            FunctionSpec::Pieces { dimension, pieces } => {
                let pieces = pieces
                    .iter()
                    .map(|p| {
                        Ok(Piece::new(
                            Block::new(p.lower.clone(), p.upper.clone())?,
                            Complex64::new(p.re, p.im),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                match PiecewiseFn::new(*dimension, pieces.clone()) {
                    Ok(f) => Ok(Ingested {
                        value: f,
                        warnings: Vec::new(),
                    }),
                    Err(LpError::Overlap(i, j)) => Ok(Ingested {
                        value: PiecewiseFn::from_overlapping(*dimension, pieces)?,
                        warnings: vec![format!(
                            "pieces {i} and {j} overlap; overlapping values were summed"
                        )],
                    }),
                    Err(e) => Err(e.into()),
                }
            }
            FunctionSpec::Kind(kind) => {
                let value = match kind {
                    FunctionKind::Indicator { cube } => PiecewiseFn::cube_indicator(&cube.to_cube()?),
                    FunctionKind::Block {
                        lower,
                        upper,
                        re,
                        im,
                    } => PiecewiseFn::constant(
                        Block::new(lower.clone(), upper.clone())?,
                        Complex64::new(*re, *im),
                    ),
                    FunctionKind::Sampled {
                        expression,
                        step,
                        support,
                        p,
                    } => {
                        let support = Block::new(support.lower.clone(), support.upper.clone())?;
                        let s = sample(*expression, *step, &support, *p)?;
                        return Ok(Ingested {
                            value: s.function,
                            warnings: vec![format!(
                                "sampled approximation with Lᵖ error at most {:e}",
                                s.error_bound
                            )],
                        });
                    }
                };
                Ok(Ingested {
                    value,
                    warnings: Vec::new(),
                })
            }
        }
    }

    pub fn system(&mut self, spec: &SystemSpec) -> Result<Ingested<TranslateSystem>> {
        let mut warnings = Vec::new();
        let mut generators = Vec::with_capacity(spec.generators.len());
        for (k, g) in spec.generators.iter().enumerate() {
            let f = self.function_in(&g.f, &spec.functions, 0)?;
            warnings.extend(f.warnings);
            let gamma = self.points(&g.gamma)?;
            let label = g.label.clone().unwrap_or_else(|| format!("f{}", k + 1));
            generators.push(Generator::new(f.value, gamma, label)?);
        }
        Ok(Ingested {
            value: TranslateSystem::new(generators, spec.p)?,
            warnings,
        })
    }

    /// Read a system spec file.
    pub fn system_file(&mut self, path: &str) -> Result<Ingested<TranslateSystem>> {
        let (full, text) = self.read(path)?;
        let spec: SystemSpec = serde_json::from_str(&text).map_err(|e| json_error(&full, e))?;
        let mut nested = Resolver::for_file(&full);
        let out = nested.system(&spec);
        self.files.extend(nested.files);
        out
    }
}
