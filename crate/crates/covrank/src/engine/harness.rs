//! Evaluation harnesses: leave-one-out within a project, cross-project
//! transfer, and toggle ablations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CovrankError, Result};
use crate::synth::gen::derive_seed;

use super::features::{build_features, BugFeatures, DatasetFeatures, Toggles};
use super::metrics::{BugRanking, EvalReport, MetricBlock};
use super::models::{localize_methods, localize_statements, train_models, TrainedModels};
use super::PipelineConfig;

/// Granularity of the ranked elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Statement,
    Method,
}

fn localize(models: &TrainedModels, bug: &BugFeatures, level: Level) -> Result<BugRanking> {
    match level {
        Level::Statement => localize_statements(models, bug),
        Level::Method => localize_methods(models, bug),
    }
}

/// Train on all bugs but one, rank the held-out bug; repeat for every bug.
/// Folds run in parallel with per-fold seeds, so the report is independent
/// of worker count.
pub fn run_leave_one_out(dataset: &Dataset, level: Level, cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if dataset.bugs.len() < 2 {
        return Err(CovrankError::Config(format!(
            "leave-one-out needs >= 2 bugs, got {}",
            dataset.bugs.len()
        )));
    }
    let feats = build_features(dataset, cfg)?;
    let rankings: Result<Vec<BugRanking>> = (0..feats.bugs.len())
        .into_par_iter()
        .map(|i| {
            let train: Vec<&BugFeatures> = feats
                .bugs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| b)
                .collect();
            let models = train_models(&train, cfg, derive_seed(cfg.seed, 0xf01d + i as u64))?;
            localize(&models, &feats.bugs[i], level)
        })
        .collect();
    let mut per_project = BTreeMap::new();
    per_project.insert(feats.project.clone(), rankings?);
    EvalReport::from_project_rankings(&per_project)
}

/// Hold out each project in turn: train on the union of the other projects'
/// bugs, rank every bug of the held-out project.
pub fn run_cross_project(
    datasets: &[Dataset],
    level: Level,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if datasets.len() < 2 {
        return Err(CovrankError::Config(format!(
            "cross-project needs >= 2 projects, got {}",
            datasets.len()
        )));
    }
    let feats: Result<Vec<DatasetFeatures>> =
        datasets.iter().map(|d| build_features(d, cfg)).collect();
    let feats = feats?;
    let per_project: Result<BTreeMap<String, Vec<BugRanking>>> = (0..feats.len())
        .into_par_iter()
        .map(|held| {
            let train: Vec<&BugFeatures> = feats
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != held)
                .flat_map(|(_, f)| f.bugs.iter())
                .collect();
            let models = train_models(&train, cfg, derive_seed(cfg.seed, 0xc105 + held as u64))?;
            let rankings: Result<Vec<BugRanking>> = feats[held]
                .bugs
                .iter()
                .map(|bug| localize(&models, bug, level))
                .collect();
            Ok((feats[held].project.clone(), rankings?))
        })
        .collect();
    EvalReport::from_project_rankings(&per_project?)
}

/// One named toggle variant and its leave-one-out result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub rows: Vec<(String, MetricBlock)>,
}

impl AblationOutcome {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("variant           bugs  top1  top3  top5     P%     MFR     MAR\n");
        for (name, b) in &self.rows {
            out.push_str(&format!(
                "{name:<17} {:>5} {:>5} {:>5} {:>5} {:>6.1} {:>7.2} {:>7.2}\n",
                b.bugs, b.top1, b.top3, b.top5, b.percent, b.mfr, b.mar
            ));
        }
        out
    }
}

/// Leave-one-out for each named toggle combination, all from the same base
/// config and seed.
pub fn ablate(
    dataset: &Dataset,
    level: Level,
    cfg: &PipelineConfig,
    variants: &[(String, Toggles)],
) -> Result<AblationOutcome> {
    let mut rows = Vec::with_capacity(variants.len());
    for (name, toggles) in variants {
        let mut vcfg = cfg.clone();
        vcfg.toggles = *toggles;
        let report = run_leave_one_out(dataset, level, &vcfg)?;
        rows.push((name.clone(), report.overall));
    }
    Ok(AblationOutcome { rows })
}
