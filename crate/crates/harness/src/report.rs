use std::io::Write;
use std::path::Path;

use symbiosis::flips::format_sections;

use crate::error::{Error, Result};
use crate::experiment::{AttackReport, Experiment};

pub const CSV_COLUMNS: [&str; 18] = [
    "model",
    "dataset",
    "defense",
    "mode",
    "attack",
    "budget",
    "mean_acc",
    "se_acc",
    "seeds",
    "runtime_s",
    "row",
    "seed",
    "clean_acc",
    "perturbed_acc",
    "budget_fraction",
    "sweep_param",
    "sweep_value",
    "flips_file",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-format CSV: per report one `summary` row followed by one `seed` row
/// per finished seed. On seed rows `mean_acc` is that seed's perturbed
/// accuracy and `se_acc` is empty.
pub fn to_csv(reports: &[AttackReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in reports {
        let mode = match r.mode {
            symbiosis::Mode::Transductive => "transductive",
            symbiosis::Mode::Inductive => "inductive",
        };
        let (sweep_param, sweep_value) = match &r.sweep {
            Some(p) => (p.param.name().to_string(), p.value.to_string()),
            None => (String::new(), String::new()),
        };
        let head = [
            r.model.clone(),
            r.dataset.clone(),
            r.defense.clone(),
            mode.to_string(),
            r.attack.name().to_string(),
            r.budget.to_string(),
        ];
        let tail = [r.budget_fraction.to_string(), sweep_param.clone(), sweep_value.clone()];
        let mut summary: Vec<String> = head.to_vec();
        summary.extend([
            r.mean_acc.to_string(),
            r.se_acc.to_string(),
            r.runs.len().to_string(),
            opt(r.runtime_s),
            if r.failure.is_some() {
                "summary_failed"
            } else {
                "summary"
            }
            .to_string(),
            String::new(),
            r.mean_clean_acc.to_string(),
            r.mean_acc.to_string(),
        ]);
        summary.extend(tail.iter().cloned());
        summary.push(String::new());
        w.write_record(&summary)?;
        for run in &r.runs {
            let mut row: Vec<String> = head.to_vec();
            row.extend([
                run.perturbed_acc.to_string(),
                String::new(),
                "1".to_string(),
                opt(run.runtime_s),
                "seed".to_string(),
                run.seed.to_string(),
                run.clean_acc.to_string(),
                run.perturbed_acc.to_string(),
            ]);
            row.extend(tail.iter().cloned());
            row.push(run.flips_file.clone());
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io {
        path: "report.csv".into(),
        source: e.into_error(),
    })
}

pub fn to_json(reports: &[AttackReport]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(reports).map_err(|source| Error::Json {
        path: "report.json".into(),
        source,
    })?;
    out.push(b'\n');
    Ok(out)
}

pub fn from_json(text: &str, path: &Path) -> Result<Vec<AttackReport>> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn emit_report(reports: &[AttackReport], format: Format, path: &Path) -> Result<()> {
    let bytes = match format {
        Format::Csv => to_csv(reports)?,
        Format::Json => to_json(reports)?,
    };
    write_atomic(path, &bytes)
}

/// Writes `report.csv`, `report.json` and one flip file per seed under
/// `out`.
pub fn write_outputs(out: &Path, experiments: &[Experiment]) -> Result<()> {
    for e in experiments {
        for (run, (seed, sections)) in e.report.runs.iter().zip(&e.flips) {
            debug_assert_eq!(run.seed, *seed);
            write_atomic(&out.join(&run.flips_file), format_sections(sections).as_bytes())?;
        }
    }
    let reports: Vec<AttackReport> = experiments.iter().map(|e| e.report.clone()).collect();
    emit_report(&reports, Format::Csv, &out.join("report.csv"))?;
    emit_report(&reports, Format::Json, &out.join("report.json"))
}
