use serde::{Deserialize, Serialize};

use super::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    HigherBetter,
    LowerBetter,
}

pub struct Column {
    pub name: &'static str,
    pub polarity: Polarity,
    pub value: fn(&MetricsReport) -> Option<f64>,
}

use Polarity::{HigherBetter as Hi, LowerBetter as Lo};

/// The ranked columns, in table order.
pub const RANK_COLUMNS: [Column; 12] = [
    Column { name: "acc_l", polarity: Hi, value: |r| r.accuracy[0] },
    Column { name: "acc_f", polarity: Hi, value: |r| r.accuracy[1] },
    Column { name: "acc_r", polarity: Hi, value: |r| r.accuracy[2] },
    Column { name: "f1", polarity: Hi, value: |r| Some(r.b4c.f1) },
    Column { name: "ttm", polarity: Hi, value: |r| Some(r.b4c.ttm_mean_s.unwrap_or(0.0)) },
    Column { name: "l_miss", polarity: Lo, value: |r| r.events.left.miss_rate },
    Column { name: "l_delay", polarity: Lo, value: |r| r.events.left.delay_mean_s },
    Column { name: "l_overlap", polarity: Hi, value: |r| r.events.left.overlap_mean },
    Column { name: "f_freq", polarity: Lo, value: |r| r.events.follow_frequency },
    Column { name: "r_miss", polarity: Lo, value: |r| r.events.right.miss_rate },
    Column { name: "r_delay", polarity: Lo, value: |r| r.events.right.delay_mean_s },
    Column { name: "r_overlap", polarity: Hi, value: |r| r.events.right.overlap_mean },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub name: String,
    pub column_ranks: Vec<f64>,
    pub mean_rank: f64,
    /// 1 is best; tied methods share the mean of their positions.
    pub total_rank: f64,
}

/// Fractional ranks of `keys` (smaller is better, `None` worst).
fn fractional(keys: &[Option<f64>]) -> Vec<f64> {
    let before = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    };
    keys.iter()
        .map(|&k| {
            let better = keys.iter().filter(|&&o| before(o, k)).count();
            let equal = keys.iter().filter(|&&o| !before(o, k) && !before(k, o)).count();
            better as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

/// Ranks raw table rows: `rows[m][c]` is method `m` in column `c`.
pub fn rank_rows(names: &[String], rows: &[Vec<Option<f64>>], polarity: &[Polarity]) -> Vec<RankEntry> {
    let m = rows.len();
    let mut col_ranks = vec![Vec::with_capacity(polarity.len()); m];
    for (c, pol) in polarity.iter().enumerate() {
        let keys: Vec<Option<f64>> = rows
            .iter()
            .map(|r| r[c].map(|v| if *pol == Polarity::HigherBetter { -v } else { v }))
            .collect();
        for (i, r) in fractional(&keys).into_iter().enumerate() {
            col_ranks[i].push(r);
        }
    }
    let means: Vec<f64> = col_ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64)
        .collect();
    let totals = fractional(&means.iter().map(|&v| Some(v)).collect::<Vec<_>>());
    (0..m)
        .map(|i| RankEntry {
            name: names[i].clone(),
            column_ranks: col_ranks[i].clone(),
            mean_rank: means[i],
            total_rank: totals[i],
        })
        .collect()
}

/// Column-wise ranking over [`RANK_COLUMNS`], then ordering of mean ranks.
pub fn rank_methods(reports: &[(String, MetricsReport)]) -> Vec<RankEntry> {
    let names: Vec<String> = reports.iter().map(|(n, _)| n.clone()).collect();
    let rows: Vec<Vec<Option<f64>>> = reports
        .iter()
        .map(|(_, r)| RANK_COLUMNS.iter().map(|c| (c.value)(r)).collect())
        .collect();
    let pol: Vec<Polarity> = RANK_COLUMNS.iter().map(|c| c.polarity).collect();
    rank_rows(&names, &rows, &pol)
}
