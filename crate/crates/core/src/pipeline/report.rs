//! Run reports: a timestamp header line, a JSON block with the effective
//! configuration, version and summary, and a per-trial CSV table.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::cell::{FailureCause, Metrics, Outcome, StitchRecord};

use super::{PipelineError, VERSION};

pub const REPORT_CSV_HEADER: &str = "trial,design,slot,outcome,cause,stitch_size_mm,duration_s";

fn csv_row(r: &StitchRecord) -> String {
    format!(
        "{},{},{},{},{},{},{:.3}",
        r.trial,
        r.design,
        r.slot,
        match r.outcome {
            Outcome::Success => "Success",
            Outcome::Fail => "Fail",
        },
        r.cause.map(FailureCause::as_str).unwrap_or(""),
        r.stitch_size_mm.map(|s| format!("{s:.4}")).unwrap_or_default(),
        r.duration_s
    )
}

/// Deterministic report body: a JSON block (tool, version, command,
/// effective config, summary), a blank line, then a CSV table.
pub fn document_body<C: Serialize, S: Serialize>(
    command: &str,
    config: &C,
    summary: &S,
    csv_header: &str,
    rows: &[String],
) -> String {
    let head = json!({
        "tool": "stitchcell",
        "version": VERSION,
        "command": command,
        "config": config,
        "summary": summary,
    });
    let mut out = serde_json::to_string_pretty(&head).expect("serializable");
    out.push_str("\n\n");
    out.push_str(csv_header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// Prefixes a body with the header line holding the generation time.
pub fn with_timestamp(body: &str) -> String {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# stitchcell report generated_unix_s={now}\n{body}")
}

/// The deterministic part of a stitch report.
pub fn report_body<C: Serialize>(command: &str, config: &C, records: &[StitchRecord], metrics: &Metrics) -> String {
    let rows: Vec<String> = records.iter().map(csv_row).collect();
    document_body(command, config, metrics, REPORT_CSV_HEADER, &rows)
}

/// Full stitch report: one header line with the generation time, then
/// the body.
pub fn render_report<C: Serialize>(command: &str, config: &C, records: &[StitchRecord], metrics: &Metrics) -> String {
    with_timestamp(&report_body(command, config, records, metrics))
}

/// Writes records as JSON lines.
pub fn write_records(records: &[StitchRecord], path: &Path) -> Result<(), PipelineError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("serializable"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

/// Reads records written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<StitchRecord>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: StitchRecord = serde_json::from_str(l)
                .map_err(|e| PipelineError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if r.is_success() != r.stitch_size_mm.is_some() || r.is_success() == r.cause.is_some() {
                return Err(PipelineError::Input(format!(
                    "{}:{}: size must be present iff the stitch succeeded",
                    path.display(),
                    i + 1
                )));
            }
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::compute_metrics;

    fn records() -> Vec<StitchRecord> {
        vec![
            StitchRecord {
                trial: 1,
                design: "D".into(),
                slot: 0,
                outcome: Outcome::Success,
                cause: None,
                stitch_size_mm: Some(4.1),
                duration_s: 20.0,
            },
            StitchRecord {
                trial: 2,
                design: "D".into(),
                slot: 1,
                outcome: Outcome::Fail,
                cause: Some(FailureCause::NeedleStentTouching),
                stitch_size_mm: None,
                duration_s: 12.5,
            },
        ]
    }

    #[test]
    fn failures_leave_the_size_blank() {
        let r = records();
        let body = report_body("run", &json!({"seed": 1}), &r, &compute_metrics(&r).unwrap());
        let lines: Vec<&str> = body.lines().collect();
        let h = lines.iter().position(|l| *l == REPORT_CSV_HEADER).unwrap();
        assert_eq!(lines[h + 1], "1,D,0,Success,,4.1000,20.000");
        assert_eq!(lines[h + 2], "2,D,1,Fail,NeedleStentTouching,,12.500");
        let json_part: serde_json::Value = serde_json::from_str(&lines[..h].join("\n")).unwrap();
        assert_eq!(json_part["version"], VERSION);
        assert_eq!(json_part["config"]["seed"], 1);
        assert_eq!(json_part["summary"]["overall"]["successes"], 1);
    }

    #[test]
    fn header_line_holds_the_only_timestamp() {
        let r = records();
        let m = compute_metrics(&r).unwrap();
        let a = render_report("run", &json!({}), &r, &m);
        let (first, rest) = a.split_once('\n').unwrap();
        assert!(first.starts_with("# stitchcell report generated_unix_s="));
        assert_eq!(rest, report_body("run", &json!({}), &r, &m));
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.jsonl");
        write_records(&records(), &p).unwrap();
        assert_eq!(read_records(&p).unwrap(), records());
        std::fs::write(&p, r#"{"trial":1,"design":"A","slot":0,"outcome":"Fail","cause":null,"stitch_size_mm":null,"duration_s":1.0}"#).unwrap();
        assert!(matches!(read_records(&p), Err(PipelineError::Input(_))));
    }
}
