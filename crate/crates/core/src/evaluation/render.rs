use std::fmt::Write;

use super::MetricsReport;
use crate::stage::StageLabel;

/// Fixed-width summary table, one row per labelled report.
pub fn render_summary(rows: &[(String, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<width$} {:>8} {:>7} {:>7} {:>7}", "model", "epochs", "Acc", "MF1", "kappa");
    for s in StageLabel::ALL {
        let _ = write!(out, " {:>7}", format!("F1-{s}"));
    }
    out.push('\n');
    for (name, r) in rows {
        let _ = write!(
            out,
            "{name:<width$} {:>8} {:>7.3} {:>7.3} {:>7.3}",
            r.n_epochs, r.accuracy, r.mf1, r.kappa
        );
        for c in &r.per_class {
            let _ = write!(out, " {:>7.3}", c.f1);
        }
        out.push('\n');
    }
    out
}

/// Confusion matrix with predicted stages as rows.
pub fn render_confusion(report: &MetricsReport) -> String {
    let mut out = String::from("pred\\true");
    for s in StageLabel::ALL {
        let _ = write!(out, " {:>7}", s.name());
    }
    let _ = writeln!(out, " {:>7}", "PR");
    for (i, s) in StageLabel::ALL.iter().enumerate() {
        let _ = write!(out, "{:<9}", s.name());
        for n in report.confusion.counts[i] {
            let _ = write!(out, " {n:>7}");
        }
        let _ = writeln!(out, " {:>7.3}", report.per_class[i].precision);
    }
    let _ = write!(out, "{:<9}", "RE");
    for c in &report.per_class {
        let _ = write!(out, " {:>7.3}", c.recall);
    }
    out.push('\n');
    out
}
