//! One function per subcommand. Stages hand data to each other only through
//! files under the output directory.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use exocausal::backbones::ModelRegistry;
use exocausal::counterfactual::{save_grid, scenario_grid, AteEstimate};
use exocausal::dataset::Dataset;
use exocausal::metrics::{
    decile_matrix, evaluate, influence_scores, rank_stats, write_decile_csv, write_influence_csv, EvalReport,
    RankStats, ScorePair, SourceInfluence,
};
use exocausal::synthgen::{gen_signal, make_dataset, Oracle};
use exocausal::training::{train, Forecaster, TrainReport};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report;

pub const ORACLE_FILE: &str = "oracle.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRID_FILE: &str = "ate_grid.json";
pub const COMPARISON_FILE: &str = "oracle_comparison.csv";
pub const INFLUENCE_FILE: &str = "influence.json";
pub const RANK_STATS_FILE: &str = "rank_stats.json";
pub const REPORT_FILE: &str = "report.md";

/// Stable locations of every stage's outputs under `--out`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn evaluate(&self) -> PathBuf {
        self.root.join("evaluate")
    }

    pub fn counterfactual(&self) -> PathBuf {
        self.root.join("counterfactual")
    }

    pub fn influence(&self) -> PathBuf {
        self.root.join("influence")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join(REPORT_FILE)
    }

    fn dataset(&self) -> Result<Dataset> {
        require(&self.data().join(exocausal::dataset::DATASET_FILE), "gen-data")?;
        Dataset::load(&self.data()).with_context(|| format!("loading dataset from {}", self.data().display()))
    }

    fn oracle(&self) -> Result<Oracle> {
        read_json(&self.data().join(ORACLE_FILE), "gen-data")
    }

    fn forecaster(&self) -> Result<Forecaster> {
        require(&self.model().join(exocausal::training::MODEL_FILE), "train")?;
        Forecaster::load(&self.model()).with_context(|| format!("loading model from {}", self.model().display()))
    }
}

fn require(path: &Path, stage: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingStage {
            path: path.to_path_buf(),
            stage,
        })
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    require(path, stage)?;
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
        .into()
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Layout) -> Result<()> {
    let dir = out.data();
    let scenario = cfg.signal.scenario(cfg.seed)?;
    let signal = gen_signal(&scenario)?;
    let data = make_dataset(&signal, &cfg.dataset, &cfg.dgp, cfg.seed)?;
    data.save(&dir)?;
    let oracle = Oracle::build(cfg.seed, &cfg.dgp, &scenario, &cfg.dataset, &data, &cfg.contrasts())?;
    write_json(&dir.join(ORACLE_FILE), &oracle)?;
    cfg.write(&dir)?;
    println!(
        "gen-data: {} posts ({} train / {} val / {} test) from {} source(s) -> {}",
        data.posts.len(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len(),
        oracle.sources.len(),
        dir.display()
    );
    Ok(())
}

pub fn train_model(cfg: &RunConfig, out: &Layout) -> Result<()> {
    let data = out.dataset()?;
    let dir = out.model();
    let registry = ModelRegistry::standard();
    let model = registry.build(&cfg.model.variant_name(), &cfg.model)?;
    let (fc, mut report) = train(model, &data, &cfg.features, &cfg.train)?;
    report.checkpoint = Some(exocausal::training::MODEL_FILE.into());
    fc.save(&dir)?;
    write_json(&dir.join(TRAIN_REPORT_FILE), &report)?;
    cfg.write(&dir)?;
    println!(
        "train: {} with {} parameters, best val RMSE {:.4} at epoch {} of {} -> {}",
        report.variant,
        report.n_params,
        report.best_val_rmse,
        report.best_epoch,
        report.stopped_epoch,
        dir.display()
    );
    Ok(())
}

pub fn evaluate_model(cfg: &RunConfig, out: &Layout) -> Result<()> {
    let data = out.dataset()?;
    let fc = out.forecaster()?;
    let dir = out.evaluate();
    std::fs::create_dir_all(&dir)?;
    let report = evaluate(&fc, &data, &data.split.test)?;
    write_json(&dir.join(METRICS_FILE), &report)?;
    cfg.write(&dir)?;
    println!(
        "evaluate: {} over the {}: RMSE {:.4} (normalized), {:.2} (counts), BCE {:.4} -> {}",
        report.variant,
        report::horizon_label(&report),
        report.rmse,
        report.rmse_counts,
        report.bce,
        dir.display()
    );
    Ok(())
}

/// One grid row next to the true effect on the same posts, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub ate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub oracle: Option<f64>,
    pub covered: Option<bool>,
}

pub fn compare(grid: &[AteEstimate], oracle: Option<&Oracle>) -> Vec<ComparisonRow> {
    grid.iter()
        .map(|g| {
            let truth = oracle.and_then(|o| o.ates.iter().find(|a| a.label == g.label)).map(|a| a.normalized);
            ComparisonRow {
                scenario: g.label.clone(),
                ate: g.ate_normalized,
                ci_lo: g.ci95.0,
                ci_hi: g.ci95.1,
                oracle: truth,
                covered: truth.map(|t| g.ci95.0 <= t && t <= g.ci95.1),
            }
        })
        .collect()
}

fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["scenario", "ate", "ci_lo", "ci_hi", "oracle", "covered"])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.ate.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            opt(r.oracle.map(|v| v.to_string())),
            opt(r.covered.map(|v| v.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn counterfactual(cfg: &RunConfig, out: &Layout) -> Result<()> {
    let data = out.dataset()?;
    let fc = out.forecaster()?;
    let dir = out.counterfactual();
    let contrasts = cfg.contrasts();
    let grid = scenario_grid(
        &fc,
        &data,
        &data.split.test,
        &contrasts,
        &data.metric_std(),
        &cfg.counterfactual.bootstrap,
    )?;
    save_grid(&dir, &grid)?;
    let oracle = out.oracle().ok();
    write_comparison(&dir.join(COMPARISON_FILE), &compare(&grid, oracle.as_ref()))?;
    cfg.write(&dir)?;
    println!(
        "counterfactual: {} scenarios over {} test posts, {} bootstrap resamples -> {}",
        grid.len(),
        data.split.test.len(),
        cfg.counterfactual.bootstrap.n_bootstrap,
        dir.display()
    );
    Ok(())
}

/// Agreement of influence scores with the sources' true gains, next to the
/// naive post-count ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSummary {
    pub n_sources: usize,
    pub n_posts: usize,
    pub influence_vs_gain: Option<RankStats>,
    pub post_count_vs_gain: Option<RankStats>,
    /// Why a statistic is missing, if one is.
    pub notes: Vec<String>,
}

fn stats_or_note(a: Vec<f64>, b: Vec<f64>, what: &str, notes: &mut Vec<String>) -> Result<Option<RankStats>> {
    match rank_stats(&ScorePair::new(a, b)?) {
        Ok(s) => Ok(Some(s)),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            Ok(None)
        }
    }
}

pub fn influence(cfg: &RunConfig, out: &Layout) -> Result<()> {
    let data = out.dataset()?;
    let fc = out.forecaster()?;
    let oracle = out.oracle()?;
    let dir = out.influence();
    std::fs::create_dir_all(&dir)?;
    let all: Vec<usize> = (0..data.posts.len()).collect();
    let scores: Vec<SourceInfluence> = influence_scores(&fc, &data, &all)?;
    write_influence_csv(File::create(dir.join("influence.csv"))?, &scores)?;
    write_json(&dir.join(INFLUENCE_FILE), &scores)?;

    let gain = |name: &str| oracle.sources.iter().find(|s| s.name == name).map(|s| s.eta);
    let gains: Vec<f64> = scores
        .iter()
        .map(|s| gain(&s.source).with_context(|| format!("source {} is not in the oracle", s.source)))
        .collect::<Result<_>>()?;
    let score_v: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let counts: Vec<f64> = scores.iter().map(|s| s.n_posts as f64).collect();
    let mut notes = Vec::new();
    let summary = InfluenceSummary {
        n_sources: scores.len(),
        n_posts: all.len(),
        influence_vs_gain: stats_or_note(score_v.clone(), gains.clone(), "influence vs gain", &mut notes)?,
        post_count_vs_gain: stats_or_note(counts, gains.clone(), "post count vs gain", &mut notes)?,
        notes: Vec::new(),
    };
    match decile_matrix(&ScorePair::new(score_v, gains)?) {
        Ok(cells) => write_decile_csv(File::create(dir.join("deciles.csv"))?, &cells)?,
        Err(e) => notes.push(format!("decile matrix: {e}")),
    }
    let summary = InfluenceSummary { notes, ..summary };
    write_json(&dir.join(RANK_STATS_FILE), &summary)?;
    cfg.write(&dir)?;
    match &summary.influence_vs_gain {
        Some(s) => println!(
            "influence: {} sources, Spearman {:.3} / W {:.3} / CCC {:.3} against true gains -> {}",
            summary.n_sources,
            s.spearman,
            s.kendall_w,
            s.ccc,
            dir.display()
        ),
        None => println!("influence: {} source(s), rank statistics undefined -> {}", summary.n_sources, dir.display()),
    }
    Ok(())
}

/// Artifacts the report draws on; any stage that has not run is skipped.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub oracle: Option<Oracle>,
    pub train: Option<TrainReport>,
    pub eval: Option<EvalReport>,
    pub grid: Option<Vec<AteEstimate>>,
    pub influence: Option<Vec<SourceInfluence>>,
    pub rank_stats: Option<InfluenceSummary>,
}

fn optional<T: DeserializeOwned>(path: PathBuf) -> Result<Option<T>> {
    if path.exists() {
        read_json(&path, "").map(Some)
    } else {
        Ok(None)
    }
}

pub fn collect(out: &Layout) -> Result<Artifacts> {
    Ok(Artifacts {
        oracle: optional(out.data().join(ORACLE_FILE))?,
        train: optional(out.model().join(TRAIN_REPORT_FILE))?,
        eval: optional(out.evaluate().join(METRICS_FILE))?,
        grid: optional(out.counterfactual().join(GRID_FILE))?,
        influence: optional(out.influence().join(INFLUENCE_FILE))?,
        rank_stats: optional(out.influence().join(RANK_STATS_FILE))?,
    })
}

pub fn write_report(cfg: &RunConfig, out: &Layout) -> Result<()> {
    let artifacts = collect(out)?;
    if artifacts.oracle.is_none() && artifacts.train.is_none() && artifacts.eval.is_none() {
        return Err(CliError::MissingStage {
            path: out.data().join(ORACLE_FILE),
            stage: "gen-data",
        }
        .into());
    }
    std::fs::create_dir_all(&out.root)?;
    std::fs::write(out.report(), report::render(cfg, &artifacts))?;
    cfg.write(&out.root)?;
    println!("report -> {}", out.report().display());
    Ok(())
}

pub fn run_all(cfg: &RunConfig, out: &Layout) -> Result<()> {
    gen_data(cfg, out)?;
    train_model(cfg, out)?;
    evaluate_model(cfg, out)?;
    counterfactual(cfg, out)?;
    influence(cfg, out)?;
    write_report(cfg, out)
}
