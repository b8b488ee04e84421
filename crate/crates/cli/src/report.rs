//! Run reports: spec echo, outputs, verdicts and input provenance.
//!
//! Reports carry no timestamp, so an identical spec, inputs and seed give a
//! byte-identical report.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tdens::formats::Resolver;

use crate::exec::{self, CliError, Context, Verdict};
use crate::spec::{RunSpec, Step};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub inputs: Vec<InputDigest>,
    pub version: &'static str,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct StepReport {
    pub command: String,
    pub outputs: Value,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub spec: Value,
    /// A single step's outputs, or one entry per step for `run`.
    pub outputs: Value,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

fn digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn parse_step(command: &str, spec: &Value) -> Result<Step, CliError> {
    let mut tagged = spec.clone();
    match &mut tagged {
        Value::Object(map) => {
            map.insert("command".into(), Value::String(command.into()));
        }
        _ => return Err(CliError::Input("spec must be a JSON object".into())),
    }
    serde_json::from_value(tagged).map_err(|e| CliError::Input(format!("spec: {e}")))
}

/// Execute `command` on the spec at `spec_path` and write the report.
pub fn run(
    command: &str,
    spec_path: &Path,
    out_dir: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunReport, CliError> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", spec_path.display())))?;
    let spec: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", spec_path.display())))?;

    let (steps, spec_seed) = if command == "run" {
        let run: RunSpec = serde_json::from_value(spec.clone())
            .map_err(|e| CliError::Input(format!("spec: {e}")))?;
        (run.steps, run.seed)
    } else {
        let seed = spec.get("seed").and_then(Value::as_u64);
        (vec![parse_step(command, &spec)?], seed)
    };
    let seed = seed_override.or(spec_seed);

    let mut resolver = Resolver::for_file(spec_path);
    let mut cx = Context {
        resolver: &mut resolver,
        seed,
    };
    let mut step_reports = Vec::with_capacity(steps.len());
    let mut verdicts = Vec::new();
    let mut warnings = Vec::new();
    let mut tables = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let out = exec::execute(step, &mut cx)?;
        let prefix = if command == "run" {
            format!("step{}-", i + 1)
        } else {
            String::new()
        };
        for (stem, csv) in out.tables {
            tables.push((format!("{prefix}{stem}.csv"), csv));
        }
        verdicts.extend(out.verdicts.iter().map(|v| Verdict {
            name: format!("{prefix}{}", v.name),
            holds: v.holds,
        }));
        warnings.extend(out.warnings);
        step_reports.push(StepReport {
            command: step.name().to_string(),
            outputs: out.outputs,
            verdicts: out.verdicts,
        });
    }

    let mut inputs = vec![InputDigest {
        path: spec_path.display().to_string(),
        sha256: digest(spec_path)?,
    }];
    for f in resolver.files_read() {
        inputs.push(InputDigest {
            path: f.display().to_string(),
            sha256: digest(f)?,
        });
    }
    let outputs = if command == "run" {
        serde_json::to_value(&step_reports).expect("step reports serialize")
    } else {
        step_reports.pop().map(|s| s.outputs).unwrap_or(Value::Null)
    };
    let report = RunReport {
        command: command.to_string(),
        spec,
        outputs,
        verdicts,
        warnings,
        provenance: Provenance {
            inputs,
            version: env!("CARGO_PKG_VERSION"),
            seed,
        },
    };

    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match out_dir {
        Some(dir) => {
            let write = |name: &str, text: &str| {
                fs::write(dir.join(name), text)
                    .map_err(|e| CliError::Output(format!("{}: {e}", dir.join(name).display())))
            };
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
            write(&format!("{command}.json"), &json)?;
            for (name, csv) in &tables {
                write(name, csv)?;
            }
        }
        None => print!("{json}"),
    }
    Ok(report)
}
