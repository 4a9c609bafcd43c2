use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{MetricsReport, RankEntry, RANK_COLUMNS};

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Aligned text table with one row per method.
pub fn render_table(reports: &[(String, MetricsReport)], ranks: &[RankEntry]) -> String {
    let name_w = reports.iter().map(|(n, _)| n.len()).chain([9]).max().unwrap();
    let w = 8;
    let mut out = String::new();
    let groups = [
        ("Accuracy", 3),
        ("B4C", 2),
        ("L", 3),
        ("F", 1),
        ("R", 3),
    ];
    let _ = write!(out, "{:name_w$}", "");
    for (g, n) in groups {
        let _ = write!(out, " |{:^width$}", g, width = n * w + n - 1);
    }
    let _ = writeln!(out, " |");
    let heads = ["L", "F", "R", "F1", "TTM", "Miss", "Delay", "Over", "Freq", "Miss", "Delay", "Over"];
    let _ = write!(out, "{:name_w$}", "Algorithm");
    let mut k = 0;
    for (_, n) in groups {
        let _ = write!(out, " |");
        for j in 0..n {
            let sep = if j == 0 { "" } else { " " };
            let _ = write!(out, "{sep}{:>w$}", heads[k]);
            k += 1;
        }
    }
    let _ = writeln!(out, " | Total Rank");
    for (name, r) in reports {
        let _ = write!(out, "{name:name_w$}");
        let mut k = 0;
        for (_, n) in groups {
            let _ = write!(out, " |");
            for j in 0..n {
                let sep = if j == 0 { "" } else { " " };
                let _ = write!(out, "{sep}{:>w$}", cell((RANK_COLUMNS[k].value)(r)));
                k += 1;
            }
        }
        let total = ranks.iter().find(|e| &e.name == name).map(|e| e.total_rank);
        let _ = writeln!(out, " | {}", total.map_or("-".into(), |t| format!("{t}")));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub metric: String,
    pub value: Option<f64>,
}

fn records(name: &str, r: &MetricsReport) -> Vec<MetricRecord> {
    let mut v: Vec<(String, Option<f64>)> = RANK_COLUMNS.iter().map(|c| (c.name.to_string(), (c.value)(r))).collect();
    v.extend([
        ("precision".into(), Some(r.b4c.precision)),
        ("recall".into(), Some(r.b4c.recall)),
        ("l_freq".into(), r.events.left.frequency_mean),
        ("r_freq".into(), r.events.right.frequency_mean),
        ("l_events".into(), Some(r.events.left.events as f64)),
        ("r_events".into(), Some(r.events.right.events as f64)),
        ("f_events".into(), Some(r.events.follow_events as f64)),
        ("frames".into(), Some(r.frames as f64)),
        ("targets".into(), Some(r.targets as f64)),
    ]);
    v.into_iter()
        .map(|(metric, value)| MetricRecord {
            method: name.to_string(),
            metric,
            value,
        })
        .collect()
}

/// One NDJSON record per method per metric.
pub fn write_records<W: Write>(mut w: W, reports: &[(String, MetricsReport)]) -> std::io::Result<()> {
    for (name, r) in reports {
        for rec in records(name, r) {
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
    }
    Ok(())
}
