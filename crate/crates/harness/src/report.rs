//! Result tables across runs, with best and second-best marked per column.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::pipeline::{SummaryRow, SUMMARY_FILE};
use crate::HarnessError;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TEXT: &str = "report.txt";

/// Rank of a cell within its column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Best,
    Second,
    #[serde(rename = "")]
    None,
}

/// One table row: a variant of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub summary: SummaryRow,
}

/// Marks for one column. Every row sharing the top value is best; rows
/// sharing the next distinct value are second. NaN never ranks.
pub fn rank_column(values: &[f64]) -> Vec<Mark> {
    let mut distinct: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    values
        .iter()
        .map(|v| match distinct.iter().position(|d| d == v) {
            Some(0) => Mark::Best,
            Some(1) => Mark::Second,
            _ => Mark::None,
        })
        .collect()
}

/// Run directories under `roots`: each root itself if it holds a summary,
/// otherwise its immediate subdirectories that do (sorted by name).
pub fn find_runs(roots: &[PathBuf]) -> Result<Vec<PathBuf>, HarnessError> {
    let mut runs = Vec::new();
    for root in roots {
        if root.join(SUMMARY_FILE).is_file() {
            runs.push(root.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", root.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SUMMARY_FILE).is_file())
            .collect();
        subs.sort();
        runs.extend(subs);
    }
    if runs.is_empty() {
        return Err(HarnessError::Data("no completed runs found".into()));
    }
    Ok(runs)
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn load_rows(runs: &[PathBuf]) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    for dir in runs {
        let mut r = csv::Reader::from_path(dir.join(SUMMARY_FILE))?;
        for s in r.deserialize::<SummaryRow>() {
            rows.push(ReportRow { run: run_name(dir), summary: s? });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    run: &'a str,
    variant: &'a str,
    train_mean: f64,
    train_std: f64,
    train_mark: Mark,
    val_mean: f64,
    val_std: f64,
    val_mark: Mark,
    test_mean: f64,
    test_std: f64,
    test_mark: Mark,
    seeds: usize,
}

/// Rendered tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub text: String,
    /// Column-wise marks in row order: (train, val, test).
    pub marks: Vec<(Mark, Mark, Mark)>,
}

fn tie_notes(name: &str, rows: &[ReportRow], marks: &[Mark]) -> Vec<String> {
    let mut notes = Vec::new();
    for (mark, word) in [(Mark::Best, "best"), (Mark::Second, "second best")] {
        let tied: Vec<String> = rows
            .iter()
            .zip(marks)
            .filter(|(_, m)| **m == mark)
            .map(|(r, _)| format!("{}/{}", r.run, r.summary.variant))
            .collect();
        if tied.len() > 1 {
            notes.push(format!("note: {name} tie for {word}: {}", tied.join(", ")));
        }
    }
    notes
}

/// Build CSV and aligned-text tables from `rows` (order preserved).
pub fn render(rows: &[ReportRow]) -> Result<Report, HarnessError> {
    let col = |f: fn(&SummaryRow) -> f64| rank_column(&rows.iter().map(|r| f(&r.summary)).collect::<Vec<_>>());
    let (tr, va, te) = (col(|s| s.train_mean), col(|s| s.val_mean), col(|s| s.test_mean));
    let marks: Vec<(Mark, Mark, Mark)> = (0..rows.len()).map(|i| (tr[i], va[i], te[i])).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    for (r, &(a, b, c)) in rows.iter().zip(&marks) {
        let s = &r.summary;
        w.serialize(CsvRow {
            run: &r.run,
            variant: &s.variant,
            train_mean: s.train_mean,
            train_std: s.train_std,
            train_mark: a,
            val_mean: s.val_mean,
            val_std: s.val_std,
            val_mark: b,
            test_mean: s.test_mean,
            test_std: s.test_std,
            test_mark: c,
            seeds: s.seeds,
        })?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?).expect("csv is utf-8");

    let cell = |mean: f64, std: f64, m: Mark| {
        let tag = match m {
            Mark::Best => " (best)",
            Mark::Second => " (second)",
            Mark::None => "",
        };
        format!("{mean:.4} ± {std:.4}{tag}")
    };
    let mut table: Vec<[String; 5]> = vec![["run".into(), "variant".into(), "train".into(), "val".into(), "test".into()]];
    for (r, &(a, b, c)) in rows.iter().zip(&marks) {
        let s = &r.summary;
        table.push([
            r.run.clone(),
            s.variant.clone(),
            cell(s.train_mean, s.train_std, a),
            cell(s.val_mean, s.val_std, b),
            cell(s.test_mean, s.test_std, c),
        ]);
    }
    let widths: Vec<usize> = (0..5).map(|k| table.iter().map(|row| row[k].chars().count()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    for (name, m) in [("train", &tr), ("val", &va), ("test", &te)] {
        for note in tie_notes(name, rows, m) {
            text.push_str(&note);
            text.push('\n');
        }
    }
    Ok(Report { csv, text, marks })
}

/// Tabulate every run under `roots` and write `report.csv` / `report.txt` into `out`.
pub fn report(roots: &[PathBuf], out: &Path) -> Result<Report, HarnessError> {
    let rows = load_rows(&find_runs(roots)?)?;
    let rep = render(&rows)?;
    std::fs::create_dir_all(out)?;
    std::fs::File::create(out.join(REPORT_CSV))?.write_all(rep.csv.as_bytes())?;
    std::fs::File::create(out.join(REPORT_TEXT))?.write_all(rep.text.as_bytes())?;
    Ok(rep)
}
