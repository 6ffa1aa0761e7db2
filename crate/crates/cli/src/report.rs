use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use firewatch_core::{EnvVariable, Readings};
use firewatch_service::{EventLog, Record};

pub fn header() -> Vec<String> {
    let mut cols = vec!["timestamp".to_string()];
    cols.extend(EnvVariable::ALL.iter().map(|v| v.as_str().to_string()));
    cols.extend(
        EnvVariable::ALL
            .iter()
            .map(|v| format!("avg_{}", v.as_str())),
    );
    cols.extend(["percentage".to_string(), "level".to_string()]);
    cols
}

fn push_readings(row: &mut Vec<String>, r: &Readings) {
    row.extend(EnvVariable::ALL.iter().map(|&v| r.get(v).to_string()));
}

/// Writes one CSV row per assessment of `area`, in log order.
///
/// A log without measurements yields just the header; an area that never
/// appears in a non-empty log is an error.
pub fn write_csv(log: &Path, area: &str, out: impl Write) -> anyhow::Result<usize> {
    let recovery = EventLog::read(log).with_context(|| format!("reading {}", log.display()))?;
    if let Some(problem) = &recovery.problem {
        tracing::warn!(%problem, "log has an invalid tail; reporting committed entries only");
    }
    let mut readings = HashMap::new();
    let mut rows = Vec::new();
    let mut any_measurement = false;
    for e in &recovery.entries {
        match &e.record {
            Record::Measurement {
                package_id,
                measurement,
                ..
            } => {
                any_measurement = true;
                if measurement.area_id == area {
                    readings.insert(*package_id, measurement.readings);
                }
            }
            Record::Assessment {
                package_id,
                assessment,
            } if assessment.area_id == area => {
                let last = readings.remove(package_id).unwrap_or(assessment.last);
                let mut row = vec![assessment
                    .timestamp
                    .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
                push_readings(&mut row, &last);
                push_readings(&mut row, &assessment.averages);
                row.push(format!("{:.4}", assessment.percentage));
                row.push(assessment.level.to_string());
                rows.push(row);
            }
            _ => {}
        }
    }
    if any_measurement && rows.is_empty() {
        bail!("area `{area}` does not appear in {}", log.display());
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(rows.len())
}
