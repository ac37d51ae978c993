use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Setting;
use crate::orchestrator::{OrchestratorError, RunReport, Task, Variant};

/// Sample mean and sample standard deviation (`n - 1` denominator). A single
/// value has zero spread.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// `run_id:seed` of every score that went into the cell.
    pub sources: Vec<String>,
    /// Lowest mean in its row.
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: Setting,
    /// Set for the local-forecast table only.
    pub variable: Option<String>,
    /// One entry per [`Variant::ALL`]; `None` is a gap.
    pub cells: Vec<Option<Cell>>,
}

impl TableRow {
    pub fn label(&self) -> String {
        match &self.variable {
            Some(v) => format!("{} / {v}", self.setting.as_str()),
            None => self.setting.as_str().to_owned(),
        }
    }

    pub fn cell(&self, variant: Variant) -> Option<&Cell> {
        let k = Variant::ALL.iter().position(|&v| v == variant)?;
        self.cells[k].as_ref()
    }
}

/// Test MSE aggregated over seeds, rows by setting (and variable for the
/// local task), columns by variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub task: Task,
    pub rows: Vec<TableRow>,
}

#[derive(Default)]
struct Acc {
    scores: Vec<f64>,
    sources: Vec<String>,
    seen: BTreeSet<(String, u64)>,
}

impl Acc {
    fn push(&mut self, run_id: &str, seed: u64, score: f64) {
        if self.seen.insert((run_id.to_owned(), seed)) {
            self.scores.push(score);
            self.sources.push(format!("{run_id}:{seed}"));
        }
    }

    fn cell(&self) -> Option<Cell> {
        if self.scores.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(&self.scores);
        Some(Cell { mean, std, n: self.scores.len(), sources: self.sources.clone(), best: false })
    }
}

impl ResultsTable {
    pub fn build(reports: &[RunReport]) -> Result<Self, OrchestratorError> {
        let Some(first) = reports.first() else {
            return Err(OrchestratorError::Config("no run reports to tabulate".into()));
        };
        let task = first.task;
        if let Some(other) = reports.iter().find(|r| r.task != task) {
            return Err(OrchestratorError::Config(format!(
                "cannot mix tasks in one table: {} and {} ({})",
                task.as_str(),
                other.task.as_str(),
                other.run_id
            )));
        }

        // Row keys in canonical setting order, variables in first-seen order.
        let mut keys: Vec<(Setting, Option<String>)> = Vec::new();
        for setting in Setting::ALL {
            let runs: Vec<&RunReport> = reports.iter().filter(|r| r.setting == setting).collect();
            if runs.is_empty() {
                continue;
            }
            match task {
                Task::H2coForecast => keys.push((setting, None)),
                Task::LocalForecast => {
                    let mut vars: Vec<String> = Vec::new();
                    for r in &runs {
                        for v in r.variables() {
                            if !vars.contains(&v) {
                                vars.push(v);
                            }
                        }
                    }
                    keys.extend(vars.into_iter().map(|v| (setting, Some(v))));
                }
            }
        }

        let rows = keys
            .into_iter()
            .map(|(setting, variable)| {
                let mut cells: Vec<Option<Cell>> = Variant::ALL
                    .iter()
                    .map(|&variant| {
                        let mut acc = Acc::default();
                        for r in reports.iter().filter(|r| r.setting == setting && r.variant == variant) {
                            let scores = match &variable {
                                None => r.seed_scores(),
                                Some(v) => r.variable_scores(v),
                            };
                            // variable_scores skips seeds without the variable
                            let seeds = r.seeds.iter().filter(|s| match &variable {
                                None => true,
                                Some(v) => s.clients.iter().any(|c| c.test.get(v).is_some()),
                            });
                            for (s, score) in seeds.zip(scores) {
                                acc.push(&r.run_id, s.seed, score);
                            }
                        }
                        acc.cell()
                    })
                    .collect();
                let best = cells
                    .iter()
                    .enumerate()
                    .filter_map(|(k, c)| c.as_ref().map(|c| (k, c.mean)))
                    .filter(|(_, m)| m.is_finite())
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k);
                if let Some(k) = best {
                    cells[k].as_mut().expect("present").best = true;
                }
                TableRow { setting, variable, cells }
            })
            .collect();
        Ok(Self { task, rows })
    }

    pub fn row(&self, setting: Setting, variable: Option<&str>) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.setting == setting && r.variable.as_deref() == variable)
    }

    /// Aligned plain-text grid. Gaps print as `-`; the row minimum carries `*`.
    pub fn render_text(&self) -> String {
        let header: Vec<String> = std::iter::once(match self.task {
            Task::H2coForecast => "setting".to_owned(),
            Task::LocalForecast => "setting / variable".to_owned(),
        })
        .chain(Variant::ALL.iter().map(|v| v.label().to_owned()))
        .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.label())
                    .chain(r.cells.iter().map(|c| match c {
                        None => "-".to_owned(),
                        Some(c) => format!(
                            "{:.4} ± {:.4} (n={}){}",
                            c.mean,
                            c.std,
                            c.n,
                            if c.best { " *" } else { "" }
                        ),
                    }))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|k| {
                std::iter::once(&header)
                    .chain(&body)
                    .map(|row| row[k].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "task: {}  (test MSE, mean ± sample std over seeds)", self.task.as_str());
        for row in std::iter::once(&header).chain(&body) {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(k, (s, &w))| {
                    let pad = w - s.chars().count();
                    if k == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    /// Long format: one line per row and variant, gaps included with empty
    /// statistics.
    pub fn render_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["task", "setting", "variable", "variant", "mean", "std", "n", "best", "sources"]);
        for r in &self.rows {
            for (variant, cell) in Variant::ALL.iter().zip(&r.cells) {
                let (mean, std, n, best, sources) = match cell {
                    Some(c) => (
                        format!("{}", c.mean),
                        format!("{}", c.std),
                        c.n.to_string(),
                        c.best.to_string(),
                        c.sources.join(";"),
                    ),
                    None => (String::new(), String::new(), "0".into(), "false".into(), String::new()),
                };
                let _ = w.write_record([
                    self.task.as_str(),
                    r.setting.as_str(),
                    r.variable.as_deref().unwrap_or(""),
                    variant.as_str(),
                    &mean,
                    &std,
                    &n,
                    &best,
                    &sources,
                ]);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
    }
}
