//! Result-table rendering: aligned text, CSV and per-run loss-curve plots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::trainer::aggregate_runs;

/// Rows keyed by `(method, arch)`, columns by label budget, cells
/// formatted `MM.DD±SS.DD` (percent, two decimals).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub budgets: Vec<usize>,
    pub rows: Vec<TableRow>,
    pub footnotes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub arch: String,
    pub cells: BTreeMap<usize, String>,
}

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", mean * 100.0, std * 100.0)
}

const EMPTY_CELL: &str = "------";

/// Aggregate records into a table. When `requested_budgets` is given,
/// budgets without records are omitted with a footnote.
pub fn build_table(records: &[RunRecord], requested_budgets: Option<&[usize]>) -> Result<ResultTable> {
    if records.is_empty() {
        return Err(Error::Config("no records found".into()));
    }
    // (method, arch) -> budget -> seed -> error; later records win (reruns)
    let mut grid: BTreeMap<(String, String), BTreeMap<usize, BTreeMap<u64, f64>>> = BTreeMap::new();
    let mut found_budgets: Vec<usize> = Vec::new();
    for r in records {
        grid.entry((r.method.clone(), r.arch.clone()))
            .or_default()
            .entry(r.budget)
            .or_default()
            .insert(r.seed, r.error_rate);
        if !found_budgets.contains(&r.budget) {
            found_budgets.push(r.budget);
        }
    }
    found_budgets.sort_unstable();

    let mut footnotes = Vec::new();
    let budgets = match requested_budgets {
        Some(req) => {
            let mut cols = Vec::new();
            for &b in req {
                if found_budgets.contains(&b) {
                    cols.push(b);
                } else {
                    footnotes.push(format!("note: no records for {b}L; column omitted"));
                }
            }
            cols
        }
        None => found_budgets,
    };

    let mut rows = Vec::new();
    for ((method, arch), by_budget) in grid {
        let mut cells = BTreeMap::new();
        for &b in &budgets {
            if let Some(by_seed) = by_budget.get(&b) {
                let errors: Vec<f64> = by_seed.values().copied().collect();
                let agg = aggregate_runs(&errors)?;
                cells.insert(b, format_cell(agg.mean, agg.std));
            }
        }
        rows.push(TableRow { method, arch, cells });
    }
    Ok(ResultTable {
        budgets,
        rows,
        footnotes,
    })
}

impl ResultTable {
    pub fn render_text(&self) -> String {
        let label = |row: &TableRow| format!("{}({})", row.method, row.arch);
        let first_width = self
            .rows
            .iter()
            .map(|r| label(r).len())
            .chain(["Method".len()])
            .max()
            .unwrap_or(6);
        let col_width = 14usize;
        let mut out = String::new();
        out.push_str(&format!("{:<first_width$}", "Method"));
        for b in &self.budgets {
            out.push_str(&format!("{:>col_width$}", format!("{b}L")));
        }
        out.push('\n');
        out.push_str(&"-".repeat(first_width + col_width * self.budgets.len()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<first_width$}", label(row)));
            for b in &self.budgets {
                let cell = row.cells.get(b).map(String::as_str).unwrap_or(EMPTY_CELL);
                out.push_str(&format!("{cell:>col_width$}"));
            }
            out.push('\n');
        }
        for note in &self.footnotes {
            out.push_str(note);
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("method,arch");
        for b in &self.budgets {
            out.push_str(&format!(",{b}L"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.method);
            out.push(',');
            out.push_str(&row.arch);
            for b in &self.budgets {
                out.push(',');
                out.push_str(row.cells.get(b).map(String::as_str).unwrap_or(EMPTY_CELL));
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of `render_csv`, for verification.
    pub fn parse_csv(text: &str) -> Result<ResultTable> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "method" || cols[1] != "arch" {
            return Err(Error::Config("unexpected CSV header".into()));
        }
        let budgets: Vec<usize> = cols[2..]
            .iter()
            .map(|c| {
                c.trim_end_matches('L')
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad budget column '{c}'")))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != budgets.len() + 2 {
                return Err(Error::Config(format!("row has {} fields", fields.len())));
            }
            let mut cells = BTreeMap::new();
            for (b, cell) in budgets.iter().zip(&fields[2..]) {
                if *cell != EMPTY_CELL {
                    cells.insert(*b, (*cell).to_string());
                }
            }
            rows.push(TableRow {
                method: fields[0].to_string(),
                arch: fields[1].to_string(),
                cells,
            });
        }
        Ok(ResultTable {
            budgets,
            rows,
            footnotes: Vec::new(),
        })
    }
}

/// Minimal SVG polyline plot of a loss trace.
pub fn write_loss_curve_svg(path: &Path, title: &str, values: &[f32]) -> Result<()> {
    let (w, h) = (640.0f32, 360.0f32);
    let (ml, mr, mt, mb) = (50.0f32, 10.0f32, 30.0f32, 30.0f32);
    let vmin = values.iter().copied().fold(f32::INFINITY, f32::min);
    let vmax = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (vmax - vmin).max(1e-12);
    let n = values.len().max(2) as f32;
    let mut points = String::new();
    for (i, &v) in values.iter().enumerate() {
        let x = ml + (w - ml - mr) * i as f32 / (n - 1.0);
        let y = mt + (h - mt - mb) * (1.0 - (v - vmin) / span);
        points.push_str(&format!("{x:.1},{y:.1} "));
    }
    let svg = format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
            "<text x=\"5\" y=\"{ytop}\" font-size=\"10\">{vmax:.4}</text>\n",
            "<text x=\"5\" y=\"{ybot}\" font-size=\"10\">{vmin:.4}</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"{points}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        tx = w / 2.0,
        title = title,
        ytop = mt + 4.0,
        ybot = h - mb,
        vmax = vmax,
        vmin = vmin,
        points = points.trim_end(),
    );
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Render a results directory: aligned text to stdout and `table.txt`,
/// `table.csv`, plus one loss-curve SVG per record.
pub fn cmd_report(results_dir: &Path, requested_budgets: Option<&[usize]>, out_dir: &Path) -> Result<String> {
    let records = super::read_records(results_dir)?;
    let table = build_table(&records, requested_budgets)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let text = table.render_text();
    fs::write(out_dir.join("table.txt"), &text).map_err(|e| Error::io(out_dir, e))?;
    fs::write(out_dir.join("table.csv"), table.render_csv()).map_err(|e| Error::io(out_dir, e))?;
    for r in &records {
        if r.trace_totals.is_empty() {
            continue;
        }
        let name: PathBuf = out_dir.join(format!(
            "loss_{}_{}_{}L_s{}_w{}.svg",
            r.dataset, r.arch, r.budget, r.seed, r.omega
        ));
        let title = format!("{}({}) {}L seed {}", r.method, r.arch, r.budget, r.seed);
        write_loss_curve_svg(&name, &title, &r.trace_totals)?;
    }
    Ok(text)
}
