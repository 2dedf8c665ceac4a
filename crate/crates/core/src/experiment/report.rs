use std::fmt::Write as _;

use serde::Serialize;

use super::RunSummary;
use crate::Result;

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| crate::Error::Training(format!("csv: {e}")))?;
    let bytes = w.into_inner().map_err(|e| crate::Error::Training(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Per-fold metrics of one run followed by the macro and pooled rows. Only
/// deterministic fields are written, so identical runs give identical files.
pub fn summary_csv(s: &RunSummary) -> Result<String> {
    csv_string(|w| {
        w.write_record(["fold", "seed", "precision", "recall", "f1", "best_epoch", "epochs_run"])?;
        for f in &s.folds {
            w.write_record([
                f.fold.to_string(),
                f.seed.to_string(),
                format!("{:.4}", f.precision),
                format!("{:.4}", f.recall),
                format!("{:.4}", f.f1),
                f.best_epoch.to_string(),
                f.epochs_run.to_string(),
            ])?;
        }
        let p = s.pooled;
        w.write_record(["macro", "", "", "", &format!("{:.4}", s.macro_f1), "", ""])?;
        w.write_record(["pooled", "", &format!("{:.4}", p.precision), &format!("{:.4}", p.recall), &format!("{:.4}", p.f1), "", ""])?;
        Ok(())
    })
}

pub fn summary_markdown(s: &RunSummary) -> String {
    let mut md = format!(
        "# {}\n\n{} on {} → {} ({:?}), {}\n\n| fold | precision | recall | F1 | best epoch | epochs |\n|---|---|---|---|---|---|\n",
        s.run_id,
        s.variant.label(),
        s.train_set,
        s.test_set,
        s.protocol,
        s.config.hyperparameters()
    );
    for f in &s.folds {
        writeln!(md, "| {} | {:.4} | {:.4} | {:.4} | {} | {} |", f.fold, f.precision, f.recall, f.f1, f.best_epoch, f.epochs_run).unwrap();
    }
    writeln!(md, "\nMacro F1: **{:.4}**; pooled F1: {:.4}", s.macro_f1, s.pooled.f1).unwrap();
    md
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub train_set: String,
    pub test_set: String,
    pub f1: f64,
    /// F1 minus the best F1 for the same train/test combination.
    pub diff_to_best: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// One row per run, grouped by train/test combination; `pooled` picks the
/// pooled-token F1 instead of the fold average.
pub fn report(summaries: &[RunSummary], pooled: bool) -> Report {
    let score = |s: &RunSummary| if pooled { s.pooled.f1 } else { s.macro_f1 };
    let mut rows: Vec<ReportRow> = summaries
        .iter()
        .map(|s| {
            let best = summaries
                .iter()
                .filter(|o| o.train_set == s.train_set && o.test_set == s.test_set)
                .map(score)
                .fold(f64::NEG_INFINITY, f64::max);
            ReportRow {
                model: format!("{} ({})", s.variant.label(), s.preprocessing),
                train_set: s.train_set.clone(),
                test_set: s.test_set.clone(),
                f1: score(s),
                diff_to_best: score(s) - best,
                best: score(s) == best,
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.train_set, &a.test_set, &a.model).cmp(&(&b.train_set, &b.test_set, &b.model)));
    Report { rows }
}

impl Report {
    pub fn csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(["train", "test", "model", "f1", "diff_to_best", "best"])?;
            for r in &self.rows {
                w.write_record([
                    r.train_set.as_str(),
                    &r.test_set,
                    &r.model,
                    &format!("{:.4}", r.f1),
                    &format!("{:.4}", r.diff_to_best),
                    if r.best { "1" } else { "0" },
                ])?;
            }
            Ok(())
        })
    }

    /// Same rows as [`Report::csv`]; the best score of each combination is bold.
    pub fn markdown(&self) -> String {
        let mut md = String::from("| train | test | model | F1 | diff to best |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let f1 = if r.best { format!("**{:.4}**", r.f1) } else { format!("{:.4}", r.f1) };
            writeln!(md, "| {} | {} | {} | {} | {:.4} |", r.train_set, r.test_set, r.model, f1, r.diff_to_best).unwrap();
        }
        md
    }
}

/// Body cells of a pipe table, with bold markers removed.
pub fn parse_markdown_table(md: &str) -> Vec<Vec<String>> {
    md.lines()
        .filter(|l| l.starts_with('|'))
        .skip(2)
        .map(|l| l.trim().trim_matches('|').split('|').map(|c| c.trim().trim_matches('*').to_string()).collect())
        .collect()
}
