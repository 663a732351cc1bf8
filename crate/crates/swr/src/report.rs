//! Fixed-width comparison tables: one row per model, entries `mean±std` in
//! percent.

use std::fmt::Write as _;

use swr_core::data::LabelMode;
use swr_core::metrics::MeanStd;

use crate::harness::RunReport;

fn columns(mode: LabelMode) -> [(&'static str, &'static str); 2] {
    match mode {
        LabelMode::Multiclass => [("Acc", "accuracy"), ("F1", "f1")],
        LabelMode::Multilabel => [("mAP", "map"), ("F1", "f1")],
    }
}

fn cell(v: Option<&MeanStd>, single: bool) -> String {
    match v {
        Some(m) => format!("{:.2}±{:.2}{}", 100.0 * m.mean, 100.0 * m.std, if single { "*" } else { "" }),
        None => "n/a".into(),
    }
}

/// One block per dataset, in first-appearance order; rows keep input order.
pub fn render_table(runs: &[RunReport]) -> String {
    let mut blocks: Vec<(&str, LabelMode, Vec<&RunReport>)> = Vec::new();
    for r in runs {
        match blocks.iter_mut().find(|b| b.0 == r.dataset && b.1 == r.label_mode) {
            Some(b) => b.2.push(r),
            None => blocks.push((&r.dataset, r.label_mode, vec![r])),
        }
    }
    let mut out = String::new();
    let mut any_single = false;
    for (i, (name, mode, rows)) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let cols = columns(*mode);
        let cells: Vec<[String; 2]> = rows
            .iter()
            .map(|r| {
                let single = r.aggregate.single_run;
                any_single |= single;
                cols.map(|(_, key)| cell(r.aggregate.summary.get(key), single))
            })
            .collect();
        let w0 = rows.iter().map(|r| r.model.as_str().len()).chain([5]).max().unwrap_or(5);
        let w = cells.iter().flatten().map(|c| c.chars().count()).chain([6]).max().unwrap_or(6);
        let seeds = rows.iter().map(|r| r.aggregate.seeds.len()).max().unwrap_or(0);
        let _ = writeln!(out, "{name} ({}, {seeds} seeds)", mode.as_str());
        let _ = writeln!(out, "{:<w0$}  {:>w$}  {:>w$}", "Model", cols[0].0, cols[1].0);
        let _ = writeln!(out, "{}", "-".repeat(w0 + 2 * w + 4));
        for (r, c) in rows.iter().zip(&cells) {
            let _ = writeln!(out, "{:<w0$}  {:>w$}  {:>w$}", r.model.as_str(), c[0], c[1]);
        }
    }
    if any_single {
        out.push_str("* single run, std not estimated\n");
    }
    out
}
