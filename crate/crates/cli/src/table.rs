//! Plain-text results table: one row per repeat plus a summary row.

use std::fmt::Write;

use crate::logs::MetricsRecord;

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Win rate and mean return as mean ± sample standard deviation over repeats;
/// participation is pooled over all episodes.
pub fn format_table(repeats: &[MetricsRecord], pooled: &MetricsRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<14} {:>7} {:>8} {:>6} {:>14} {:>14} {:>17}",
        "scenario", "mode", "repeat", "episodes", "wins", "win rate (%)", "mean return", "participation (%)"
    );
    for r in repeats {
        let _ = writeln!(
            s,
            "{:<8} {:<14} {:>7} {:>8} {:>6} {:>14.1} {:>14.2} {:>17.2}",
            r.scenario,
            r.mode.name(),
            r.repeat.map_or("-".to_string(), |k| (k + 1).to_string()),
            r.episodes,
            r.wins,
            r.win_rate,
            r.mean_return,
            r.participation
        );
    }
    let (wr, wr_sd) = mean_sd(&repeats.iter().map(|r| r.win_rate).collect::<Vec<_>>());
    let (ret, ret_sd) = mean_sd(&repeats.iter().map(|r| r.mean_return).collect::<Vec<_>>());
    let _ = writeln!(
        s,
        "{:<8} {:<14} {:>7} {:>8} {:>6} {:>14} {:>14} {:>17.2}",
        pooled.scenario,
        pooled.mode.name(),
        "all",
        pooled.episodes,
        pooled.wins,
        format!("{wr:.1} ± {wr_sd:.1}"),
        format!("{ret:.2} ± {ret_sd:.2}"),
        pooled.participation
    );
    s
}
