use std::fmt::Write;

use exocausal::metrics::{EvalReport, RankStats};
use exocausal::timeline::METRIC_NAMES;

use crate::commands::{compare, Artifacts};
use crate::config::RunConfig;

/// "7-day horizon", "36-hour horizon" and so on.
pub fn horizon_label(r: &EvalReport) -> String {
    let days = r.horizon_days;
    if days.fract() == 0.0 {
        format!("{days}-day horizon")
    } else {
        format!("{}-hour horizon", (days * 24.0).round())
    }
}

fn stats_row(out: &mut String, name: &str, s: Option<&RankStats>) {
    match s {
        Some(s) => writeln!(out, "| {name} | {:.3} | {:.3} | {:.3} |", s.spearman, s.kendall_w, s.ccc),
        None => writeln!(out, "| {name} | n/a | n/a | n/a |"),
    }
    .unwrap();
}

/// Markdown summary of whatever stages have produced outputs.
pub fn render(cfg: &RunConfig, a: &Artifacts) -> String {
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "# exocausal run report\n").unwrap();
    writeln!(w, "Seed {}, model `{}`.\n", cfg.seed, cfg.model.variant_name()).unwrap();

    if let Some(o) = &a.oracle {
        let n: usize = o.sources.iter().map(|s| s.n_posts).sum();
        writeln!(w, "## Data\n").unwrap();
        writeln!(
            w,
            "{n} synthetic posts from {} source(s) on a {}-day signal with {} spikes. \
             Base dynamics: mu {}, eta {}, phi {}, kappa {}.\n",
            o.sources.len(),
            cfg.signal.days,
            o.scenario.spikes.len(),
            o.params.mu,
            o.params.eta,
            o.params.phi,
            o.params.kappa
        )
        .unwrap();
    }

    if let Some(t) = &a.train {
        writeln!(w, "## Training\n").unwrap();
        writeln!(
            w,
            "`{}` with {} parameters. Validation RMSE went from {:.4} untrained to {:.4} at epoch {} \
             (stopped after epoch {}).\n",
            t.variant, t.n_params, t.initial.val_rmse, t.best_val_rmse, t.best_epoch, t.stopped_epoch
        )
        .unwrap();
    }

    if let Some(e) = &a.eval {
        writeln!(w, "## Forecast accuracy\n").unwrap();
        writeln!(
            w,
            "Test split, {} posts, {} prediction times over a {}.\n",
            e.n_posts,
            e.k,
            horizon_label(e)
        )
        .unwrap();
        writeln!(w, "| quantity | value |\n|---|---|").unwrap();
        writeln!(w, "| RMSE (normalized) | {:.4} |", e.rmse).unwrap();
        for (name, v) in METRIC_NAMES.iter().zip(e.rmse_per_metric) {
            writeln!(w, "| RMSE {name} (normalized) | {v:.4} |").unwrap();
        }
        writeln!(w, "| RMSE (counts) | {:.3} |", e.rmse_counts).unwrap();
        writeln!(w, "| treatment BCE | {:.4} |\n", e.bce).unwrap();
    }

    if let Some(g) = &a.grid {
        writeln!(w, "## Counterfactual scenarios\n").unwrap();
        writeln!(
            w,
            "Average effects on the test split in per-metric standard deviations, with 95% bootstrap intervals.\n"
        )
        .unwrap();
        writeln!(w, "| scenario | ATE | 95% CI | true | covered |\n|---|---|---|---|---|").unwrap();
        for r in compare(g, a.oracle.as_ref()) {
            let truth = r.oracle.map_or("n/a".into(), |v| format!("{v:.4}"));
            let cov = r.covered.map_or("n/a", |c| if c { "yes" } else { "no" });
            writeln!(w, "| {} | {:.4} | [{:.4}, {:.4}] | {truth} | {cov} |", r.scenario, r.ate, r.ci_lo, r.ci_hi)
                .unwrap();
        }
        writeln!(w).unwrap();
    }

    if let Some(r) = &a.rank_stats {
        writeln!(w, "## Source influence\n").unwrap();
        writeln!(w, "{} sources over {} posts, compared with each source's true signal gain.\n", r.n_sources, r.n_posts)
            .unwrap();
        writeln!(w, "| ranking | Spearman | Kendall's W | CCC |\n|---|---|---|---|").unwrap();
        stats_row(w, "influence score", r.influence_vs_gain.as_ref());
        stats_row(w, "post count", r.post_count_vs_gain.as_ref());
        writeln!(w).unwrap();
        for n in &r.notes {
            writeln!(w, "- {n}").unwrap();
        }
        if let Some(rows) = &a.influence {
            let mut top: Vec<_> = rows.iter().collect();
            top.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.source.cmp(&y.source)));
            writeln!(w, "\n| source | posts | effect | score |\n|---|---|---|---|").unwrap();
            for t in top.iter().take(10) {
                writeln!(w, "| {} | {} | {:.2} | {:.4} |", t.source, t.n_posts, t.effect, t.score).unwrap();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(days: f64) -> EvalReport {
        EvalReport {
            variant: "ssm+adapter".into(),
            n_posts: 1,
            k: 7,
            horizon_days: days,
            rmse: 0.0,
            rmse_per_metric: [0.0; 4],
            rmse_counts: 0.0,
            bce: 0.0,
        }
    }

    #[test]
    fn horizon_is_named_in_days() {
        assert_eq!(horizon_label(&eval(7.0)), "7-day horizon");
        assert_eq!(horizon_label(&eval(1.5)), "36-hour horizon");
    }

    #[test]
    fn report_declares_the_horizon() {
        let a = Artifacts {
            eval: Some(eval(7.0)),
            ..Artifacts::default()
        };
        let md = render(&RunConfig::default(), &a);
        assert!(md.contains("7-day horizon"), "{md}");
    }
}
