//! Plain-text tables in the layout of the paper's Tables 1–3.

use std::fmt::Write;

use crate::experiment::{BestIndex, ExperimentReport, OverlapRow};

/// Table 1: `n candidates | Average | Cumulative`.
pub fn render_overlap(rows: &[OverlapRow]) -> String {
    let mut s = String::new();
    s.push_str("Lexical overlap between ASR candidates and GT\n");
    s.push_str("+--------------+---------+------------+\n");
    s.push_str("| n candidates | Average | Cumulative |\n");
    s.push_str("+--------------+---------+------------+\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {:>12} | {:>6.1}% | {:>9.1}% |",
            r.n,
            100.0 * r.average,
            100.0 * r.cumulative
        );
    }
    s.push_str("+--------------+---------+------------+\n");
    s
}

/// Table 2: share of each candidate index among best-BLEU translations.
pub fn render_best_index(b: &BestIndex) -> String {
    let mut head = String::from("| Best BLEU idx  |");
    let mut row = String::from("| percentage (%) |");
    for (i, p) in b.percentages.iter().enumerate() {
        let _ = write!(head, " {:>6} |", i + 1);
        let _ = write!(row, " {:>6.2} |", p);
    }
    let rule = format!("+{}+\n", "-".repeat(head.len() - 2));
    let mut s = String::from("Index of the best candidate by translation BLEU\n");
    s.push_str(&rule);
    s.push_str(&head);
    s.push('\n');
    s.push_str(&rule);
    s.push_str(&row);
    s.push('\n');
    s.push_str(&rule);
    let _ = writeln!(
        s,
        "first-candidate BLEU {:.2}, best-candidate BLEU {:.2} (translator: {})",
        b.first_candidate_bleu, b.oracle_candidate_bleu, b.translator
    );
    s
}

/// Table 3: one row per setting.
pub fn render_settings(r: &ExperimentReport) -> String {
    let mut s = String::from("Corpus BLEU per setting\n");
    s.push_str("+---------+-----------------------------+---+-------+\n");
    s.push_str("| setting | system                      | n | BLEU  |\n");
    s.push_str("+---------+-----------------------------+---+-------+\n");
    for x in &r.settings {
        let _ = writeln!(
            s,
            "| {:>7} | {:<27} | {} | {:>5.2} |",
            format!("({})", x.label),
            x.description,
            x.n_candidates,
            x.corpus_bleu
        );
    }
    if let Some(tb) = r.transcript_bleu {
        let _ = writeln!(s, "| {:>7} | {:<27} | 1 | {:>5.2} |", "MT", "ground-truth transcript", tb);
    }
    s.push_str("+---------+-----------------------------+---+-------+\n");
    s
}

pub fn render_experiment(r: &ExperimentReport) -> String {
    let d = &r.data;
    let mut s = String::new();
    let _ = writeln!(s, "{} — {}", r.name, r.version);
    let _ = writeln!(s, "seed {}", r.seeds.master);
    let _ = writeln!(
        s,
        "{} utterances ({} train / {} test), vocab {} -> {}, {} homophone groups{}",
        d.utterances,
        d.train,
        d.test,
        d.source_vocab,
        d.target_vocab,
        d.homophone_groups,
        d.unit_k.map(|k| format!(", {k} speech units")).unwrap_or_default()
    );
    let _ = writeln!(
        s,
        "top-1 ASR: WER {:.3}, exact {:.1}%\n",
        d.top1_wer,
        100.0 * d.top1_exact
    );
    s.push_str(&render_overlap(&r.overlap));
    s.push('\n');
    if let Some(b) = &r.best_index {
        s.push_str(&render_best_index(b));
        s.push('\n');
    }
    s.push_str(&render_settings(r));
    s
}
