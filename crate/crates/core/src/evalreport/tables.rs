use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{weighted_average, EvalError};
use crate::composition::PromptTemplate;
use crate::protocol::{write_atomic, Method, PipelineOrder, RunRecord, Strategy};
use crate::taskgen::{registry_valid_composites, TaskId};

pub const REPORT_FILES: [&str; 5] = ["table3.csv", "table4.csv", "table5.csv", "fig3.csv", "report.txt"];

/// Rows of seed-mean EM percentages over a fixed set of task columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub title: String,
    pub label_header: String,
    pub columns: Vec<TaskId>,
    /// Row label and `(EM, n)` per column.
    pub rows: Vec<(String, Vec<Option<(f64, usize)>>)>,
}

impl Grid {
    fn new(title: &str, label_header: &str, columns: Vec<TaskId>) -> Self {
        Grid { title: title.into(), label_header: label_header.into(), columns, rows: Vec::new() }
    }

    fn push(&mut self, label: String, cells: Vec<Option<(f64, usize)>>) {
        if cells.iter().any(Option::is_some) {
            self.rows.push((label, cells));
        }
    }

    /// Weighted average over the row's filled cells.
    pub fn avg(&self, label: &str) -> Option<f64> {
        let (_, cells) = self.rows.iter().find(|(l, _)| l == label)?;
        weighted_average(&cells.iter().flatten().copied().collect::<Vec<_>>()).ok()
    }

    pub fn cell(&self, label: &str, task: TaskId) -> Option<f64> {
        let (_, cells) = self.rows.iter().find(|(l, _)| l == label)?;
        let i = self.columns.iter().position(|&c| c == task)?;
        cells[i].map(|c| c.0)
    }

    fn header(&self) -> Vec<String> {
        std::iter::once(self.label_header.clone())
            .chain(self.columns.iter().map(|c| c.to_string()))
            .chain(std::iter::once("Avg".to_string()))
            .collect()
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(label, cells)| {
                std::iter::once(label.clone())
                    .chain(cells.iter().map(|c| c.map_or_else(String::new, |(em, _)| format!("{em:.2}"))))
                    .chain(std::iter::once(self.avg(label).map_or_else(String::new, |a| format!("{a:.2}"))))
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.header())?;
        for row in self.cells() {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.cells());
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0)).collect();
        let mut out = format!("{}\n", self.title);
        for line in &lines {
            let mut s = String::new();
            for (i, (cell, w)) in line.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{cell:<w$}");
                } else {
                    let _ = write!(s, "  {cell:>w$}");
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tables {
    pub table3: Grid,
    pub table4: Grid,
    pub table5: Grid,
    pub fig3: Grid,
}

/// Seed-mean `(EM, n)` of `task` over the matching records.
fn seed_mean<'a>(records: impl Iterator<Item = &'a RunRecord>, task: TaskId) -> Option<(f64, usize)> {
    let scores: Vec<_> = records.filter_map(|r| r.scores.get(&task)).collect();
    if scores.is_empty() || scores.iter().any(|s| s.n == 0) {
        return None;
    }
    let mean = scores.iter().map(|s| s.em()).sum::<f64>() / scores.len() as f64;
    Some((mean, scores[0].n))
}

fn template_suffix(t: PromptTemplate) -> String {
    if t == PromptTemplate::default() {
        String::new()
    } else {
        format!(" [{t}]")
    }
}

/// Rows for strategy runs with the target as column: seed-mean of the
/// target score across records with that target.
fn target_row<'a>(records: &[&'a RunRecord], columns: &[TaskId], keep: impl Fn(&RunRecord) -> bool) -> Vec<Option<(f64, usize)>> {
    columns
        .iter()
        .map(|&t| seed_mean(records.iter().copied().filter(|r| r.target == Some(t) && keep(r)), t))
        .collect()
}

/// Builds every table from a record set. Duplicate (config, seed) pairs
/// count once.
pub fn build_tables(records: &[RunRecord]) -> Tables {
    let mut seen = BTreeSet::new();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.config_hash, a.seed).cmp(&(&b.config_hash, b.seed)));
    let records: Vec<&RunRecord> = sorted.into_iter().filter(|r| seen.insert((r.config_hash.clone(), r.seed))).collect();
    let strategy_runs: Vec<&RunRecord> = records.iter().copied().filter(|r| r.strategy.is_some()).collect();
    let templates: BTreeSet<PromptTemplate> = strategy_runs.iter().map(|r| r.template).collect();
    let targets: Vec<TaskId> = registry_valid_composites().iter().map(|e| e.task()).collect();

    let canonical = |r: &RunRecord| r.method != Method::Pipeline || r.pipeline_order == PipelineOrder::Canonical;

    let mut table3 = Grid::new("Target composition EM by category and method", "category/method", targets.clone());
    let layout = [
        (Strategy::AllAtomics, Method::Prompt),
        (Strategy::AllAtomics, Method::Pipeline),
        (Strategy::HoldOneOut, Method::Prompt),
        (Strategy::HoldOneOut, Method::Prefix),
        (Strategy::Full, Method::Prompt),
        (Strategy::Full, Method::Prefix),
    ];
    for &tpl in &templates {
        for (strategy, method) in layout {
            let row = target_row(&strategy_runs, &targets, |r| {
                r.strategy == Some(strategy) && r.method == method && r.template == tpl && canonical(r)
            });
            table3.push(format!("{}/{method}{}", strategy.category(), template_suffix(tpl)), row);
        }
    }

    let voice: Vec<TaskId> = registry_valid_composites().iter().filter(|e| e.is_voice()).map(|e| e.task()).collect();
    let mut table4 = Grid::new("Pipeline EM by voice stage position", "order", voice.clone());
    for &tpl in &templates {
        for (label, voice_first) in [("Voice First", true), ("Voice Later", false)] {
            let row = target_row(&strategy_runs, &voice, |r| {
                r.method == Method::Pipeline
                    && r.strategy == Some(Strategy::AllAtomics)
                    && r.template == tpl
                    && r.executed_order().is_some_and(|o| o[0].is_voice() == voice_first)
            });
            table4.push(format!("{label}{}", template_suffix(tpl)), row);
        }
    }

    let mut table5 = Grid::new("Target composition EM by method and training strategy", "method:strategy", targets.clone());
    for &tpl in &templates {
        for method in Method::ALL {
            let mut unseen_one = Vec::new();
            for strategy in Strategy::ALL {
                let row = target_row(&strategy_runs, &targets, |r| {
                    r.strategy == Some(strategy) && r.method == method && r.template == tpl && canonical(r)
                });
                if matches!(strategy, Strategy::UnseenOneFirst | Strategy::UnseenOneSecond) {
                    unseen_one.push(row.clone());
                }
                table5.push(format!("{method}:{strategy}{}", template_suffix(tpl)), row);
                if strategy == Strategy::UnseenOneSecond {
                    let avg = unseen_one[0]
                        .iter()
                        .zip(&unseen_one[1])
                        .map(|(a, b)| match (a, b) {
                            (Some(a), Some(b)) => Some(((a.0 + b.0) / 2.0, a.1)),
                            _ => None,
                        })
                        .collect();
                    table5.push(format!("{method}:UnseenOne(Avg){}", template_suffix(tpl)), avg);
                }
            }
        }
    }

    let scaling: Vec<&RunRecord> = records.iter().copied().filter(|r| r.scaling_n.is_some()).collect();
    let held_out: Vec<TaskId> = scaling
        .first()
        .map(|r| {
            let visible: BTreeSet<TaskId> = r.visible.iter().copied().collect();
            r.scores.keys().copied().filter(|t| !visible.contains(t)).collect()
        })
        .unwrap_or_default();
    let mut fig3 = Grid::new("Held-out composite EM against number of training composites", "series", held_out.clone());
    let mut series: BTreeMap<(Method, PromptTemplate, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in &scaling {
        series.entry((r.method, r.template, r.scaling_n.unwrap_or(0))).or_default().push(r);
    }
    for ((method, tpl, n), runs) in series {
        let row = held_out.iter().map(|&t| seed_mean(runs.iter().copied(), t)).collect();
        fig3.push(format!("{method}{} n={n}", template_suffix(tpl)), row);
    }

    Tables { table3, table4, table5, fig3 }
}

/// Writes the four CSV grids and an aligned text rendering into `dir`.
pub fn emit_tables(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(dir)?;
    let t = build_tables(records);
    let grids = [&t.table3, &t.table4, &t.table5, &t.fig3];
    let mut paths = Vec::new();
    let mut text = String::new();
    for (grid, name) in grids.iter().zip(REPORT_FILES) {
        let path = dir.join(name);
        write_atomic(&path, grid.to_csv()?.as_bytes())?;
        paths.push(path);
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&grid.to_text());
    }
    let path = dir.join(REPORT_FILES[4]);
    write_atomic(&path, text.as_bytes())?;
    paths.push(path);
    Ok(paths)
}
