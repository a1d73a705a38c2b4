use std::io::Write;

use serde_json::json;

use super::{rank_summary, ExperimentReport, RankSummary, ScoreGrid};

/// One JSON record per line: a leading `config` record, then one `seed`
/// record per (cell, seed), one `cell` record per completed cell and one
/// `absent` record per failed cell.
pub fn write_jsonl(report: &ExperimentReport, w: &mut impl Write) -> std::io::Result<()> {
    let line = |w: &mut dyn Write, v: serde_json::Value| writeln!(w, "{v}");
    line(
        w,
        json!({ "record": "config", "experiment": report.config, "provenance": report.provenance }),
    )?;
    for c in &report.cells {
        for s in &c.seeds {
            line(
                w,
                json!({
                    "record": "seed",
                    "extractor": c.key.extractor,
                    "model": c.key.model,
                    "machine_type": c.key.machine_type,
                    "machine_id": c.key.machine_id,
                    "seed": s.seed,
                    "auc": s.auc,
                    "n_pos": s.n_pos,
                    "n_neg": s.n_neg,
                    "n_train_clips": s.n_train_clips,
                    "n_train_rows": s.n_train_rows,
                }),
            )?;
        }
        line(
            w,
            json!({
                "record": "cell",
                "extractor": c.key.extractor,
                "model": c.key.model,
                "machine_type": c.key.machine_type,
                "machine_id": c.key.machine_id,
                "seeds": c.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
                "mean_auc": c.mean_auc,
            }),
        )?;
    }
    for a in &report.absent {
        line(
            w,
            json!({
                "record": "absent",
                "extractor": a.key.extractor,
                "model": a.key.model,
                "machine_type": a.key.machine_type,
                "machine_id": a.key.machine_id,
                "reason": a.reason,
            }),
        )?;
    }
    Ok(())
}

/// Markdown table: rows are grid rows, columns are groups, values are
/// percentages. Per column the best value is bold and the runner-up italic.
pub fn render_table(grid: &ScoreGrid, scale: f64) -> String {
    let mut out = String::new();
    out.push_str("| |");
    for c in &grid.columns {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(grid.columns.len()));
    out.push('\n');
    let places: Vec<(f64, f64)> = (0..grid.columns.len())
        .map(|c| {
            let vals: Vec<f64> = grid.rows.iter().filter_map(|r| r.values[c]).collect();
            let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let second = vals.iter().copied().filter(|&v| v < best).fold(f64::NEG_INFINITY, f64::max);
            (best, second)
        })
        .collect();
    for r in &grid.rows {
        out.push_str(&format!("| {} |", r.label));
        for (c, v) in r.values.iter().enumerate() {
            let cell = match v {
                None => "-".to_string(),
                Some(v) => {
                    let s = format!("{:.1}", v * scale);
                    if *v == places[c].0 {
                        format!("**{s}**")
                    } else if *v == places[c].1 {
                        format!("_{s}_")
                    } else {
                        s
                    }
                }
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

pub fn render_rank_summary(summary: &RankSummary) -> String {
    let mut out = String::from("Placements (1st, 2nd) per column\n\n");
    for (title, map) in [("extractor", &summary.by_extractor), ("model", &summary.by_model)] {
        let mut entries: Vec<_> = map.iter().collect();
        entries.sort_by(|a, b| (b.1.first, b.1.second).cmp(&(a.1.first, a.1.second)).then(a.0.cmp(b.0)));
        out.push_str(&format!("by {title}:\n"));
        for (name, c) in entries {
            out.push_str(&format!("  {name} ({}, {})\n", c.first, c.second));
        }
    }
    if !summary.ties.is_empty() {
        out.push_str("ties:\n");
        for t in &summary.ties {
            out.push_str(&format!("  {} place {} at {}: {}\n", t.column, t.place, t.value, t.rows.join(", ")));
        }
    }
    out
}

/// Table followed by the rank section, or a note when the grid is incomplete.
pub fn render_report(report: &ExperimentReport) -> String {
    let grid = ScoreGrid::from_report(report);
    let mut out = render_table(&grid, 100.0);
    out.push('\n');
    match rank_summary(&grid) {
        Ok(s) => out.push_str(&render_rank_summary(&s)),
        Err(e) => out.push_str(&format!("rank summary unavailable: {e}\n")),
    }
    if !report.absent.is_empty() {
        out.push_str("\nabsent cells:\n");
        for a in &report.absent {
            out.push_str(&format!("  {}: {}\n", a.key, a.reason));
        }
    }
    out
}
