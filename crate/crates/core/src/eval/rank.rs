use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentReport;
use crate::error::{Error, Result};

/// One row of a results grid: an (extractor, model) combination, or a
/// baseline that belongs to a single extractor group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub extractor: String,
    pub model: String,
    /// One value per column; `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub columns: Vec<String>,
    pub rows: Vec<GridRow>,
}

impl ScoreGrid {
    /// Parses the tab-separated layout
    /// `row, extractor, model, <column>...`; `#` lines are comments and `-`
    /// marks a missing value.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("grid has no header".into()))?
            .split('\t')
            .collect();
        if header.len() < 4 || header[..3] != ["row", "extractor", "model"] {
            return Err(Error::Format(format!("unexpected grid header {header:?}")));
        }
        let columns: Vec<String> = header[3..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != header.len() {
                return Err(Error::Format(format!(
                    "grid row {} has {} fields, expected {}",
                    n + 1,
                    f.len(),
                    header.len()
                )));
            }
            let values = f[3..]
                .iter()
                .map(|v| match v.trim() {
                    "-" | "" => Ok(None),
                    s => s
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|e| Error::Format(format!("grid value {s:?}: {e}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(GridRow {
                label: f[0].to_string(),
                extractor: f[1].to_string(),
                model: f[2].to_string(),
                values,
            });
        }
        Ok(Self { columns, rows })
    }

    /// Inverse of [`ScoreGrid::from_tsv`]; values are multiplied by `scale`.
    pub fn to_tsv(&self, scale: f64) -> String {
        let mut out = String::from("row\textractor\tmodel");
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}", r.label, r.extractor, r.model));
            for v in &r.values {
                match v {
                    Some(v) => out.push_str(&format!("\t{:?}", v * scale)),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Mean AUCs of a report, one row per (extractor, model) and one column
    /// per group, both in sorted order. Absent cells become `None`.
    pub fn from_report(report: &ExperimentReport) -> Self {
        let mut columns: Vec<String> = report
            .cells
            .iter()
            .map(|c| c.key.group())
            .chain(report.absent.iter().map(|a| a.key.group()))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|g| g.to_string())
            .collect();
        columns.dedup();
        let mut rows: BTreeMap<(String, crate::models::ModelKind), Vec<Option<f64>>> = BTreeMap::new();
        let keys = report.cells.iter().map(|c| &c.key).chain(report.absent.iter().map(|a| &a.key));
        for key in keys {
            rows.entry((key.extractor.clone(), key.model)).or_insert_with(|| vec![None; columns.len()]);
        }
        for c in &report.cells {
            let col = columns.iter().position(|g| *g == c.key.group().to_string()).expect("column exists");
            rows.get_mut(&(c.key.extractor.clone(), c.key.model)).expect("row exists")[col] = Some(c.mean_auc);
        }
        Self {
            columns,
            rows: rows
                .into_iter()
                .map(|((extractor, model), values)| GridRow {
                    label: format!("{extractor} {}", model.display_name()),
                    extractor,
                    model: model.display_name().to_string(),
                    values,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCounts {
    pub first: u32,
    pub second: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieNote {
    pub column: String,
    /// 1 or 2.
    pub place: u8,
    pub value: f64,
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub by_extractor: BTreeMap<String, RankCounts>,
    pub by_model: BTreeMap<String, RankCounts>,
    pub ties: Vec<TieNote>,
}

/// Per column, finds the best and second-best rows (competition ranking)
/// and counts placements per extractor and per model. Tied entries all
/// receive the place and the tie is recorded; a tie for first leaves no
/// second place in that column.
pub fn rank_summary(grid: &ScoreGrid) -> Result<RankSummary> {
    if grid.rows.is_empty() {
        return Err(Error::IncompleteGrid("grid has no rows".into()));
    }
    let mut summary = RankSummary {
        by_extractor: grid.rows.iter().map(|r| (r.extractor.clone(), RankCounts::default())).collect(),
        by_model: grid.rows.iter().map(|r| (r.model.clone(), RankCounts::default())).collect(),
        ties: Vec::new(),
    };
    for (c, column) in grid.columns.iter().enumerate() {
        let mut vals = Vec::with_capacity(grid.rows.len());
        for r in &grid.rows {
            match r.values.get(c).copied().flatten() {
                Some(v) if v.is_finite() => vals.push(v),
                _ => return Err(Error::IncompleteGrid(format!("{} has no finite value for {column}", r.label))),
            }
        }
        let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let firsts: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] == best).collect();
        let award = |rows: &[usize], place: u8, value: f64, summary: &mut RankSummary| {
            for &i in rows {
                let r = &grid.rows[i];
                for counts in [
                    summary.by_extractor.get_mut(&r.extractor).expect("seeded"),
                    summary.by_model.get_mut(&r.model).expect("seeded"),
                ] {
                    if place == 1 {
                        counts.first += 1;
                    } else {
                        counts.second += 1;
                    }
                }
            }
            if rows.len() > 1 {
                summary.ties.push(TieNote {
                    column: column.clone(),
                    place,
                    value,
                    rows: rows.iter().map(|&i| grid.rows[i].label.clone()).collect(),
                });
            }
        };
        award(&firsts, 1, best, &mut summary);
        if firsts.len() > 1 {
            continue;
        }
        let runner = vals.iter().copied().filter(|&v| v < best).fold(f64::NEG_INFINITY, f64::max);
        if runner.is_finite() {
            let seconds: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] == runner).collect();
            award(&seconds, 2, runner, &mut summary);
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[(&str, &str, &[f64])]) -> ScoreGrid {
        ScoreGrid {
            columns: (0..rows[0].2.len()).map(|i| format!("c{i}")).collect(),
            rows: rows
                .iter()
                .map(|(e, m, v)| GridRow {
                    label: format!("{e} {m}"),
                    extractor: e.to_string(),
                    model: m.to_string(),
                    values: v.iter().map(|&x| Some(x)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn single_group_wins_everything() {
        let g = grid(&[("only", "GMM", &[0.5; 16])]);
        let s = rank_summary(&g).unwrap();
        assert_eq!(s.by_extractor["only"], RankCounts { first: 16, second: 0 });
    }

    #[test]
    fn ties_are_shared_and_flagged() {
        let g = grid(&[
            ("a", "GMM", &[0.9, 0.7]),
            ("b", "GMM", &[0.9, 0.8]),
            ("c", "IF", &[0.1, 0.8]),
        ]);
        let s = rank_summary(&g).unwrap();
        assert_eq!(s.by_extractor["a"], RankCounts { first: 1, second: 0 });
        assert_eq!(s.by_extractor["b"], RankCounts { first: 2, second: 0 });
        assert_eq!(s.by_extractor["c"], RankCounts { first: 1, second: 0 });
        assert_eq!(s.by_model["GMM"], RankCounts { first: 3, second: 0 });
        assert_eq!(s.ties.len(), 2);
        assert_eq!(s.ties[0].rows, vec!["a GMM", "b GMM"]);
    }

    #[test]
    fn second_place_tie() {
        let g = grid(&[("a", "X", &[0.9]), ("b", "Y", &[0.8]), ("c", "Z", &[0.8])]);
        let s = rank_summary(&g).unwrap();
        assert_eq!(s.by_extractor["b"].second, 1);
        assert_eq!(s.by_extractor["c"].second, 1);
        assert_eq!(s.ties[0].place, 2);
    }

    #[test]
    fn missing_value_is_an_error() {
        let mut g = grid(&[("a", "X", &[0.9, 0.1]), ("b", "Y", &[0.8, 0.2])]);
        g.rows[1].values[1] = None;
        assert!(matches!(rank_summary(&g), Err(Error::IncompleteGrid(_))));
    }

    #[test]
    fn tsv_round_trip() {
        let text = "# comment\nrow\textractor\tmodel\tfan/M0\tfan/M2\nA GMM\tA\tGMM\t50.0\t-\n";
        let g = ScoreGrid::from_tsv(text).unwrap();
        assert_eq!(g.columns, vec!["fan/M0", "fan/M2"]);
        assert_eq!(g.rows[0].values, vec![Some(50.0), None]);
        assert_eq!(ScoreGrid::from_tsv(&g.to_tsv(1.0)).unwrap(), g);
        assert!(ScoreGrid::from_tsv("row\tx\n").is_err());
    }
}
