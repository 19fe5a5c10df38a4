//! Result tables in "x/y" cells, markdown and CSV rendering, and an SVG
//! success-rate plot.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use super::protocol::Condition;
use crate::sim::TaskId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub task: TaskId,
    pub condition: Condition,
    pub successes: usize,
    pub trials: usize,
}

impl ResultRow {
    pub fn cell(&self) -> String {
        format!("{}/{}", self.successes, self.trials)
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    /// 95% Wilson score interval.
    pub fn wilson_interval(&self) -> (f64, f64) {
        if self.trials == 0 {
            return (0.0, 1.0);
        }
        let z = 1.959_963_984_540_054;
        let n = self.trials as f64;
        let p = self.rate();
        let denom = 1.0 + z * z / n;
        let center = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        ((center - half).max(0.0), (center + half).min(1.0))
    }
}

/// Fixed leading columns; other tasks follow when present.
pub const TABLE_COLUMNS: [TaskId; 4] = [TaskId::PickObject, TaskId::LiftFromRack, TaskId::ObjectOnTarget, TaskId::TakeOut];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn parse_cell(cell: &str) -> anyhow::Result<(usize, usize)> {
    let (s, t) = cell.split_once('/').with_context(|| format!("cell `{cell}` is not x/y"))?;
    let (s, t): (usize, usize) = (s.trim().parse()?, t.trim().parse()?);
    if s > t {
        bail!("cell `{cell}` has more successes than trials");
    }
    Ok((s, t))
}

impl ResultTable {
    pub fn new(rows: Vec<ResultRow>) -> Self {
        Self { rows }
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, method: &str, task: TaskId, condition: Condition) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.task == task && r.condition == condition)
    }

    fn columns(&self) -> Vec<TaskId> {
        let mut cols = TABLE_COLUMNS.to_vec();
        for t in TaskId::ALL {
            if !cols.contains(&t) && self.rows.iter().any(|r| r.task == t) {
                cols.push(t);
            }
        }
        cols
    }

    /// `(method, condition)` keys in first-appearance order.
    fn groups(&self) -> Vec<(String, Condition)> {
        let mut out: Vec<(String, Condition)> = Vec::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.condition);
            if !out.contains(&key) {
                out.push(key);
            }
        }
        out
    }

    fn wide(&self) -> (Vec<TaskId>, Vec<(String, Condition, Vec<String>)>) {
        let cols = self.columns();
        let rows = self
            .groups()
            .into_iter()
            .map(|(m, c)| {
                let cells = cols
                    .iter()
                    .map(|&t| self.get(&m, t, c).map(ResultRow::cell).unwrap_or_default())
                    .collect();
                (m, c, cells)
            })
            .collect();
        (cols, rows)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation report\n\n");
        if self.is_empty() {
            out.push_str("No results.\n");
            return out;
        }
        let (cols, rows) = self.wide();
        out.push_str("## Success by task\n\n| Method | Condition |");
        for c in &cols {
            out.push_str(&format!(" {} |", c.column()));
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(cols.len()));
        out.push('\n');
        for (m, c, cells) in rows {
            out.push_str(&format!("| {m} | {c} |"));
            for cell in cells {
                out.push_str(&format!(" {} |", if cell.is_empty() { "-" } else { &cell }));
            }
            out.push('\n');
        }
        out.push_str("\n## Detail\n\n| Method | Task | Condition | Success | Rate | 95% CI |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let (lo, hi) = r.wilson_interval();
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.0}% | [{:.0}%, {:.0}%] |\n",
                r.method,
                r.task,
                r.condition,
                r.cell(),
                100.0 * r.rate(),
                100.0 * lo,
                100.0 * hi
            ));
        }
        out
    }

    /// Wide CSV: `method,condition,Pick,Lift,Place,TakeOut[,...]`.
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let (cols, rows) = self.wide();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "condition".to_string()];
        header.extend(cols.iter().map(|c| c.column().to_string()));
        w.write_record(&header)?;
        for (m, c, cells) in rows {
            let mut rec = vec![m, c.to_string()];
            rec.extend(cells);
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn from_csv(text: &str) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("method") || header.get(1) != Some("condition") {
            bail!("CSV must start with method,condition columns");
        }
        let tasks: Vec<TaskId> = header
            .iter()
            .skip(2)
            .map(|h| {
                TaskId::ALL
                    .into_iter()
                    .find(|t| t.column() == h)
                    .with_context(|| format!("unknown task column `{h}`"))
            })
            .collect::<anyhow::Result<_>>()?;
        let mut rows = Vec::new();
        // collect per group, then restore task-major order within the group
        let mut order: BTreeMap<usize, ResultRow> = BTreeMap::new();
        for (gi, rec) in r.records().enumerate() {
            let rec = rec?;
            let method = rec.get(0).context("missing method")?.to_string();
            let condition: Condition = rec
                .get(1)
                .context("missing condition")?
                .parse()
                .map_err(anyhow::Error::msg)?;
            for (ti, &task) in tasks.iter().enumerate() {
                let cell = rec.get(ti + 2).unwrap_or("");
                if cell.is_empty() {
                    continue;
                }
                let (successes, trials) = parse_cell(cell)?;
                order.insert(
                    gi * tasks.len() + ti,
                    ResultRow {
                        method: method.clone(),
                        task,
                        condition,
                        successes,
                        trials,
                    },
                );
            }
        }
        rows.extend(order.into_values());
        Ok(Self { rows })
    }

    /// Rows sorted the way the wide tables list them, for comparisons.
    pub fn canonical(&self) -> Vec<ResultRow> {
        let groups = self.groups();
        let cols = self.columns();
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| {
            (
                groups.iter().position(|g| g.0 == r.method && g.1 == r.condition),
                cols.iter().position(|&c| c == r.task),
            )
        });
        rows
    }

    /// Success rate per condition, one line per `(method, task)`.
    pub fn plot_svg(&self, path: &Path) -> anyhow::Result<()> {
        use plotters::prelude::*;
        let conditions: Vec<Condition> = Condition::ALL
            .into_iter()
            .filter(|c| self.rows.iter().any(|r| r.condition == *c))
            .collect();
        let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
        root.fill(&WHITE)?;
        let n = conditions.len().max(1);
        let mut chart = ChartBuilder::on(&root)
            .caption("Success rate by condition", ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), 0f64..1.05f64)?;
        let labels = conditions.clone();
        chart
            .configure_mesh()
            .x_labels(n)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    labels.get(i as usize).map(|c| c.to_string()).unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc("success rate")
            .draw()?;
        let mut series: Vec<(String, TaskId)> = Vec::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.task);
            if !series.contains(&key) {
                series.push(key);
            }
        }
        for (i, (method, task)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let pts: Vec<(f64, f64)> = conditions
                .iter()
                .enumerate()
                .filter_map(|(ci, &c)| self.get(method, *task, c).map(|r| (ci as f64, r.rate())))
                .collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
                .label(format!("{method} / {}", task.column()))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))?;
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()?;
        }
        root.present()?;
        Ok(())
    }
}
