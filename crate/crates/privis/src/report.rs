//! Result grids: one row per (input dimension, enhancement) cell.

use std::fs;
use std::path::{Path, PathBuf};

use privis_core::classify::EvalReport;

use crate::error::{Error, IoContext, Result};

pub const GRID_CSV: &str = "grid.csv";
pub const GRID_TXT: &str = "grid.txt";

/// Sorts cells as 224/no, 56/no, 56/yes, 14/no, 14/yes: larger inputs
/// first, unenhanced before enhanced. Rejects mixed tasks and repeated
/// cells.
pub fn order_reports(mut reports: Vec<EvalReport>) -> Result<Vec<EvalReport>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Report("no evaluation reports".into()))?;
    let (task, k) = (first.task.clone(), first.num_classes);
    for r in &reports {
        if r.task != task {
            return Err(Error::Report(format!("task {:?} mixed with {:?}", r.task, task)));
        }
        if r.num_classes != k || r.auc.len() != k {
            return Err(Error::Report(format!(
                "{}x{} cell has {} classes, expected {k}",
                r.dim, r.dim, r.num_classes
            )));
        }
    }
    reports.sort_by(|a, b| b.dim.cmp(&a.dim).then(a.dcscn.cmp(&b.dcscn)));
    for w in reports.windows(2) {
        if (w[0].dim, w[0].dcscn) == (w[1].dim, w[1].dcscn) {
            return Err(Error::Report(format!(
                "duplicate cell {}x{} dcscn={}",
                w[0].dim, w[0].dim, w[0].dcscn
            )));
        }
    }
    Ok(reports)
}

fn trimmed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn auc_cell(a: Option<f64>) -> String {
    a.map_or_else(|| "NA".into(), |v| trimmed(v, 4))
}

/// `dim,dcscn,test_acc,auc_0..auc_{k-1}` with full-precision values.
pub fn render_csv(reports: &[EvalReport]) -> String {
    let k = reports.first().map_or(0, |r| r.num_classes);
    let mut out = String::from("dim,dcscn,test_acc");
    for c in 0..k {
        out.push_str(&format!(",auc_{c}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{},{},{}", r.dim, r.dcscn, r.test_accuracy));
        for a in &r.auc {
            out.push(',');
            out.push_str(&a.map_or_else(|| "NA".into(), |v| v.to_string()));
        }
        out.push('\n');
    }
    out
}

/// Aligned text table. Binary tasks get one AUC column (the positive
/// class); larger tasks get `AUC (n)` per class.
pub fn render_grid(reports: &[EvalReport]) -> String {
    let k = reports.first().map_or(0, |r| r.num_classes);
    let mut header = vec!["Original Dim".to_string(), "DCSCN".into(), "Test Acc.".into()];
    if k == 2 {
        header.push("AUC".into());
    } else {
        header.extend((0..k).map(|c| format!("AUC ({c})")));
    }
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![
            format!("{}x{}", r.dim, r.dim),
            if r.dcscn { "Yes" } else { "No" }.into(),
            trimmed(r.test_accuracy * 100.0, 2),
        ];
        if k == 2 {
            row.push(auc_cell(r.auc[1]));
        } else {
            row.extend(r.auc.iter().map(|&a| auc_cell(a)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    if let Some(r) = reports.first() {
        out.push_str(&format!("task: {}\n", r.task));
    }
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Every `*.json` report in `dir`, in file-name order.
pub fn read_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).at(p)?;
            serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))
        })
        .collect()
}

/// Writes `grid.csv` and `grid.txt` into `out` and returns the text grid.
pub fn write_grid(reports: Vec<EvalReport>, out: &Path) -> Result<String> {
    let reports = order_reports(reports)?;
    fs::create_dir_all(out).at(out)?;
    let csv = out.join(GRID_CSV);
    fs::write(&csv, render_csv(&reports)).at(&csv)?;
    let grid = render_grid(&reports);
    let txt = out.join(GRID_TXT);
    fs::write(&txt, &grid).at(&txt)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(task: &str, dim: usize, dcscn: bool, acc: f64, auc: Vec<Option<f64>>) -> EvalReport {
        let k = auc.len();
        EvalReport {
            task: task.into(),
            dim,
            dcscn,
            num_classes: k,
            test_accuracy: acc,
            auc,
            confusion: vec![vec![0; k]; k],
        }
    }

    fn binary(dim: usize, dcscn: bool, acc: f64, auc: f64) -> EvalReport {
        cell("hand_hygiene", dim, dcscn, acc, vec![Some(auc), Some(auc)])
    }

    #[test]
    fn reference_rows_render_verbatim() {
        let reports = vec![
            binary(14, true, 0.9587, 0.994),
            binary(56, false, 0.9627, 0.992),
            binary(224, false, 0.945, 0.987),
            binary(14, false, 0.9259, 0.9735),
            binary(56, true, 0.9824, 0.995),
        ];
        let grid = render_grid(&order_reports(reports).unwrap());
        let rows: Vec<Vec<&str>> = grid
            .lines()
            .skip(3)
            .map(|l| l.split('|').map(str::trim).collect())
            .collect();
        let want = [
            ["224x224", "No", "94.5", "0.987"],
            ["56x56", "No", "96.27", "0.992"],
            ["56x56", "Yes", "98.24", "0.995"],
            ["14x14", "No", "92.59", "0.9735"],
            ["14x14", "Yes", "95.87", "0.994"],
        ];
        assert_eq!(rows, want);
    }

    #[test]
    fn single_report_single_row() {
        let r = order_reports(vec![binary(224, false, 1.0, 1.0)]).unwrap();
        assert_eq!(render_grid(&r).lines().count(), 4);
        assert_eq!(render_csv(&r), "dim,dcscn,test_acc,auc_0,auc_1\n224,false,1,1,1\n");
    }

    #[test]
    fn five_classes_get_per_class_columns() {
        let auc = vec![Some(0.9), None, Some(0.75), Some(0.5), Some(1.0)];
        let r = order_reports(vec![cell("icu", 14, false, 0.626, auc)]).unwrap();
        let grid = render_grid(&r);
        let header: Vec<&str> = grid.lines().nth(1).unwrap().split('|').map(str::trim).collect();
        assert_eq!(
            header,
            ["Original Dim", "DCSCN", "Test Acc.", "AUC (0)", "AUC (1)", "AUC (2)", "AUC (3)", "AUC (4)"]
        );
        assert!(grid.lines().nth(3).unwrap().contains("NA"));
        assert!(render_csv(&r).starts_with("dim,dcscn,test_acc,auc_0,auc_1,auc_2,auc_3,auc_4\n"));
    }

    #[test]
    fn inconsistent_inputs() {
        let icu = cell("icu", 56, false, 0.5, vec![None; 5]);
        let err = order_reports(vec![binary(224, false, 1.0, 1.0), icu]).unwrap_err();
        assert!(matches!(err, Error::Report(_)));
        let dup = vec![binary(56, true, 1.0, 1.0), binary(56, true, 0.5, 0.5)];
        assert!(order_reports(dup).is_err());
        assert!(order_reports(Vec::new()).is_err());
    }

    #[test]
    fn trimming() {
        assert_eq!(trimmed(94.5, 2), "94.5");
        assert_eq!(trimmed(100.0, 2), "100");
        assert_eq!(trimmed(0.97351, 4), "0.9735");
    }
}
