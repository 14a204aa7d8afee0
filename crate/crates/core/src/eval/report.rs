use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::metrics::{MetricsReport, Trial};
use super::replay::ReplayOutput;
use super::EvalError;

/// One JSON object per line, in trial order.
pub fn write_trials_jsonl(path: &Path, trials: &[Trial]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trials {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_jsonl(path: &Path) -> Result<Vec<Trial>, EvalError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct NamedReport<'a> {
    system: &'a str,
    #[serde(flatten)]
    report: &'a MetricsReport,
    warnings: usize,
}

pub fn write_report_json(path: &Path, outputs: &[ReplayOutput]) -> Result<(), EvalError> {
    let named: Vec<NamedReport> = outputs
        .iter()
        .map(|o| NamedReport {
            system: &o.system,
            report: &o.report,
            warnings: o.warnings.len(),
        })
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &named)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One row per system and day, for plotting learning curves.
pub fn write_per_day_csv(path: &Path, outputs: &[ReplayOutput]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "system",
        "day",
        "trials",
        "hit1",
        "hit5",
        "mrr",
        "local_fraction",
        "mean_latency_ms",
        "mean_model_ms",
    ])?;
    for o in outputs {
        for d in &o.report.per_day {
            w.write_record([
                o.system.clone(),
                d.day.to_string(),
                d.trials.to_string(),
                d.hit1.to_string(),
                d.hit5.to_string(),
                d.mrr.to_string(),
                d.local_fraction.to_string(),
                d.mean_latency_ms.to_string(),
                d.mean_model_ms.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock timings per trial, which the JSONL log leaves out.
pub fn write_timing_csv(path: &Path, trials: &[Trial]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "day", "latency_ms", "model_ms"])?;
    for t in trials {
        w.write_record([
            t.index.to_string(),
            t.day.to_string(),
            t.latency_ms.to_string(),
            t.model_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `trials-<system>.jsonl`, `timing-<system>.csv`, `report.json` and
/// `per_day.csv` under `dir`.
pub fn write_outputs(dir: &Path, outputs: &[ReplayOutput]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for o in outputs {
        write_trials_jsonl(&dir.join(format!("trials-{}.jsonl", o.system)), &o.trials)?;
        write_timing_csv(&dir.join(format!("timing-{}.csv", o.system)), &o.trials)?;
    }
    write_report_json(&dir.join("report.json"), outputs)?;
    write_per_day_csv(&dir.join("per_day.csv"), outputs)?;
    Ok(())
}
