//! Markdown and CSV renderings of run outcomes.

use super::runs::{ModelRecord, Outcome, SweepOutcome};
use crate::metrics::SimilarityReport;
use std::fmt::Write as _;

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

fn sim_table(out: &mut String, rows: &[(&str, &SimilarityReport)]) {
    out.push_str("| comparison | matched | shuffled | gap / s.e. | pairs |\n|---|---|---|---|---|\n");
    for (name, s) in rows {
        writeln!(
            out,
            "| {name} | {} | {} | {:.1} | {} |",
            pm(s.matched_mean, s.matched_std),
            pm(s.shuffled_mean, s.shuffled_std),
            s.gap() / s.gap_stderr(),
            s.n_pairs
        )
        .unwrap();
    }
}

fn ref_name(r: &super::config::Reference) -> &'static str {
    match r {
        super::config::Reference::Training => "training",
        super::config::Reference::Balanced => "balanced",
    }
}

/// One row per method in report column order.
pub fn sweep_table(s: &SweepOutcome) -> String {
    let mut out = String::from("| method | kept |");
    for r in &s.references {
        write!(out, " Fréchet ({}) |", ref_name(r)).unwrap();
    }
    out.push_str(" similarity vs Unpruned | shuffled |\n|---|---|");
    for _ in &s.references {
        out.push_str("---|");
    }
    out.push_str("---|---|\n");
    for row in &s.rows {
        write!(out, "| {} | {} |", row.label, row.kept).unwrap();
        for (m, sd) in row.frechet.iter().zip(&row.frechet_std) {
            if row.replicates > 1 {
                write!(out, " {} |", pm(*m, *sd)).unwrap();
            } else {
                write!(out, " {m:.4} |").unwrap();
            }
        }
        writeln!(
            out,
            " {} | {} |",
            pm(row.similarity_mean, row.similarity_std),
            pm(row.shuffled_mean, row.shuffled_std)
        )
        .unwrap();
    }
    out
}

pub fn markdown(kind: &str, digest: &str, outcome: &Outcome, models: &[ModelRecord]) -> String {
    let mut out = format!("# {kind}\n\nconfig digest: `{digest}`\n\n");
    match outcome {
        Outcome::DisjointSubsets(o) => {
            writeln!(out, "Subset sizes: {} and {}.\n", o.sizes[0], o.sizes[1]).unwrap();
            sim_table(&mut out, &[("subset A vs subset B", &o.similarity)]);
            writeln!(
                out,
                "\nFréchet A↔B {:.4}; A↔data {:.4}; B↔data {:.4}.",
                o.frechet_between, o.frechet_to_data[0], o.frechet_to_data[1]
            )
            .unwrap();
        }
        Outcome::ModeRemoval(o) => {
            writeln!(out, "Dropped modes {:?}; coverage radius {:.4}.\n", o.dropped, o.radius).unwrap();
            sim_table(
                &mut out,
                &[("retained-mode pairs", &o.retained), ("all pairs", &o.all_pairs)],
            );
            writeln!(
                out,
                "\nRetained matched minus all-pairs shuffled: {:.4} ({:.1} s.e.).\n",
                o.retained_gap(),
                o.retained_gap() / o.retained_gap_stderr()
            )
            .unwrap();
            out.push_str("| mode | full | dropped-mode model |\n|---|---|---|\n");
            for m in 0..o.coverage_full.counts.len() {
                writeln!(
                    out,
                    "| {m} | {:.4} | {:.4} |",
                    o.coverage_full.fraction(m),
                    o.coverage_pruned.fraction(m)
                )
                .unwrap();
            }
            writeln!(
                out,
                "| orphan | {:.4} | {:.4} |\n\nEndpoints on dropped modes: {:.4}.",
                o.coverage_full.orphan_fraction(),
                o.coverage_pruned.orphan_fraction(),
                o.dropped_fraction
            )
            .unwrap();
        }
        Outcome::DataSwap(o) => {
            writeln!(out, "Variant dataset: `{}` {:?}.\n", o.variant.name, o.variant.params).unwrap();
            sim_table(&mut out, &[("dataset A vs dataset B", &o.similarity)]);
            writeln!(out, "\nFréchet A↔B {:.4}.", o.frechet_between).unwrap();
        }
        Outcome::ArchChange(o) => {
            let names: Vec<String> = o.pairs.iter().map(|p| format!("{} vs {}", p.a, p.b)).collect();
            let rows: Vec<(&str, &SimilarityReport)> =
                names.iter().map(String::as_str).zip(o.pairs.iter().map(|p| &p.similarity)).collect();
            sim_table(&mut out, &rows);
            out.push_str("\nMatched similarity matrix:\n\n|  |");
            for a in &o.archs {
                write!(out, " {a} |").unwrap();
            }
            out.push_str("\n|---|");
            for _ in &o.archs {
                out.push_str("---|");
            }
            out.push('\n');
            for (a, row) in o.archs.iter().zip(&o.matrix) {
                write!(out, "| {a} |").unwrap();
                for v in row {
                    write!(out, " {v:.4} |").unwrap();
                }
                out.push('\n');
            }
        }
        Outcome::PruningSweep(s) => {
            writeln!(out, "Pruning fraction {}.\n", s.pr).unwrap();
            out.push_str(&sweep_table(s));
            writeln!(
                out,
                "\nCluster sizes {:?}; proportional quotas {:?}; balanced quotas {:?}.",
                s.cluster_sizes, s.quotas_proportional, s.quotas_balanced
            )
            .unwrap();
        }
    }
    out.push_str("\n## Models\n\n| role | arch | train size | checkpoint | eval loss start → end |\n|---|---|---|---|---|\n");
    for m in models {
        writeln!(
            out,
            "| {} | {} | {} | `{}` | {:.4} → {:.4} |",
            m.role,
            m.arch,
            m.train_size,
            &m.checkpoint[..16],
            m.initial_eval_loss,
            m.final_eval_loss
        )
        .unwrap();
    }
    out
}

fn sim_csv(out: &mut String, name: &str, s: &SimilarityReport) {
    writeln!(
        out,
        "{name},{},{},{},{},{}",
        s.matched_mean, s.matched_std, s.shuffled_mean, s.shuffled_std, s.n_pairs
    )
    .unwrap();
}

pub fn csv(outcome: &Outcome) -> String {
    match outcome {
        Outcome::PruningSweep(s) => {
            let mut out = String::from("method,kept,replicates");
            for r in &s.references {
                write!(out, ",frechet_{0},frechet_{0}_std", ref_name(r)).unwrap();
            }
            out.push_str(",similarity_mean,similarity_std,shuffled_mean,shuffled_std\n");
            for row in &s.rows {
                write!(out, "{},{},{}", row.method.tag(), row.kept, row.replicates).unwrap();
                for (m, sd) in row.frechet.iter().zip(&row.frechet_std) {
                    write!(out, ",{m},{sd}").unwrap();
                }
                writeln!(
                    out,
                    ",{},{},{},{}",
                    row.similarity_mean, row.similarity_std, row.shuffled_mean, row.shuffled_std
                )
                .unwrap();
            }
            out
        }
        other => {
            let mut out =
                String::from("comparison,matched_mean,matched_std,shuffled_mean,shuffled_std,pairs\n");
            match other {
                Outcome::DisjointSubsets(o) => sim_csv(&mut out, "a-vs-b", &o.similarity),
                Outcome::ModeRemoval(o) => {
                    sim_csv(&mut out, "retained", &o.retained);
                    sim_csv(&mut out, "all", &o.all_pairs);
                }
                Outcome::DataSwap(o) => sim_csv(&mut out, "a-vs-b", &o.similarity),
                Outcome::ArchChange(o) => {
                    for p in &o.pairs {
                        sim_csv(&mut out, &format!("{}-vs-{}", p.a, p.b), &p.similarity);
                    }
                }
                Outcome::PruningSweep(_) => unreachable!(),
            }
            out
        }
    }
}
