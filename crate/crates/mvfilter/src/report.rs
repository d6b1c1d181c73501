//! Markdown summaries of result records.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::acceptance::Outcome;
use crate::records::ResultRecord;

/// The metric shown in the tables for each diagnostic.
fn headline(diagnostic: &str) -> &'static str {
    match diagnostic {
        "tracking" => "average_error",
        "mass" | "zakai" | "uniqueness" => "terminal",
        "ks" => "residual",
        "gronwall" => "rate",
        "fpe" => "mean",
        "projected" => "drift_0_mean",
        _ => "value",
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Key of a sweep cell without its replicate index. Floats are keyed by their
/// bit patterns so that cells keep the order they were run in.
type CellKey = (u64, usize, usize, usize, Option<u64>);

/// One table per diagnostic and target, one row per sweep cell, with the
/// median over replicates of `|headline metric|`.
pub fn render(records: &[ResultRecord]) -> String {
    let mut doc = String::from("# Experiment report\n\n");
    if records.is_empty() {
        doc.push_str("No records.\n");
        return doc;
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.experiment_id.as_str()).collect();
    ids.dedup();
    let _ = writeln!(doc, "Experiments: {}. Version: {}.\n", ids.join(", "), records[0].version);
    let passed = records.iter().filter(|r| r.passed).count();
    let _ = writeln!(doc, "{passed} of {} records pass.\n", records.len());

    let mut groups: Vec<((&str, &str), Vec<&ResultRecord>)> = Vec::new();
    for r in records {
        let key = (r.diagnostic.as_str(), r.target.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    for ((diagnostic, target), rs) in groups {
        let metric = headline(diagnostic);
        let _ = writeln!(doc, "## {diagnostic}: {target}\n");
        let _ = writeln!(doc, "| dt | N_filt | N_law | M | ε | replicates | median \\|{metric}\\| | passed |");
        doc.push_str("|---|---|---|---|---|---|---|---|\n");
        let mut rows: Vec<(CellKey, Vec<&ResultRecord>)> = Vec::new();
        for r in rs {
            let c = &r.cell;
            let key = (c.dt.to_bits(), c.n_filt, c.n_law, c.ensemble, c.epsilon.map(f64::to_bits));
            match rows.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => rows.push((key, vec![r])),
            }
        }
        for (_, rs) in rows {
            let c = &rs[0].cell;
            let m = median(rs.iter().filter_map(|r| r.metric(metric)).map(f64::abs).collect());
            let ok = rs.iter().filter(|r| r.passed).count();
            let eps = c.epsilon.map_or_else(|| "fitted".to_string(), |e| format!("{e:.3e}"));
            let _ = writeln!(
                doc,
                "| {} | {} | {} | {} | {eps} | {} | {m:.4e} | {ok}/{} |",
                c.dt,
                c.n_filt,
                c.n_law,
                c.ensemble,
                rs.len(),
                rs.len()
            );
        }
        doc.push('\n');
    }
    doc
}

/// The acceptance table: one row per criterion.
pub fn render_acceptance(outcomes: &[Outcome]) -> String {
    let mut doc = String::from("# Acceptance\n\n| id | criterion | result | detail |\n|---|---|---|---|\n");
    for o in outcomes {
        let _ = writeln!(doc, "| {} | {} | {} | {} |", o.id, o.name, if o.passed { "PASS" } else { "FAIL" }, o.detail.replace('|', "\\|"));
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let _ = writeln!(doc, "\n{passed} of {} criteria pass.", outcomes.len());
    doc
}

/// Per-diagnostic pass counts, for the CLI summary line.
pub fn pass_counts(records: &[ResultRecord]) -> BTreeMap<String, (usize, usize)> {
    let mut counts = BTreeMap::new();
    for r in records {
        let e = counts.entry(r.diagnostic.clone()).or_insert((0, 0));
        e.0 += usize::from(r.passed);
        e.1 += 1;
    }
    counts
}
