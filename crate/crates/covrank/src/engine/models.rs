//! Model training and localization. Each level (statement, method) uses
//! per-channel CNNs to embed coverage images, fuses the channel vectors with
//! an outer product, and scores the fused tensor with a classifier CNN.

use rayon::prelude::*;

use crate::error::{CovrankError, Result};
use crate::nn::{fc_reduce_4d, train, ConvNet, ConvNetConfig, FcLayer, NdArray, TrainConfig};
use crate::sbfl::rank_by_score;
use crate::synth::gen::derive_seed;

use super::features::{BugFeatures, MethodFeatures, StatementFeatures};
use super::metrics::BugRanking;
use super::{broadcast_hadamard, PipelineConfig};

/// All nets for one trained pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub cfg: PipelineConfig,
    /// Statement spectrum channel: (2, tests_window, embed_dim) -> l_ss.
    pub stmt_spectrum: ConvNet,
    /// Statement mutation channel: same input shape -> l_ms.
    pub stmt_mutation: ConvNet,
    /// Statement classifier over the fused (l_cs, l_ss, l_ms) tensor.
    pub stmt_classifier: ConvNet,
    /// Method spectrum channel: (2, stmts_window, tests_window) -> l_sm.
    pub method_spectrum: ConvNet,
    /// Method mutation channel: same input shape -> l_mm.
    pub method_mutation: ConvNet,
    /// Method classifier over the fused (l_cm, l_sm, l_mm) tensor.
    pub method_classifier: ConvNet,
    /// Collapses the 15-entry similarity axis of the method fusion tensor.
    pub sim_reducer: FcLayer,
}

fn channel_net(
    input: (usize, usize, usize),
    out_len: usize,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ConvNet> {
    ConvNet::new(ConvNetConfig {
        input,
        k: cfg.cnn_filters,
        filter: (cfg.cnn_filter_size, cfg.cnn_filter_size),
        out_len,
        with_head: true,
        seed,
    })
}

fn train_cfg(cfg: &PipelineConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        class_weights: None,
        seed,
    }
}

/// Keep every positive sample; fill with negatives, in a deterministic
/// seed-shuffled order, up to `cap` samples total.
fn subsample(samples: Vec<(NdArray, usize)>, cap: usize, seed: u64) -> Vec<(NdArray, usize)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let (pos, mut neg): (Vec<_>, Vec<_>) = samples.into_iter().partition(|(_, l)| *l == 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    let room = cap.saturating_sub(pos.len());
    let mut out = pos;
    out.extend(neg.into_iter().take(room));
    out
}

fn train_on(net: &mut ConvNet, samples: Vec<(NdArray, usize)>, cfg: &PipelineConfig, seed: u64) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    let samples = subsample(samples, cfg.max_train_samples, derive_seed(seed, 0x5b));
    train(net, &samples, &train_cfg(cfg, seed))?;
    Ok(())
}

impl TrainedModels {
    /// Fused statement tensor (l_cs, l_ss, l_ms) for one statement.
    pub fn statement_tensor(&self, s: &StatementFeatures) -> Result<NdArray> {
        let v_ss = self.stmt_spectrum.embed(&s.spectrum)?;
        let v_ms = match &s.mutation {
            Some(x) => self.stmt_mutation.embed(x)?,
            None => vec![1.0; self.cfg.l_ms],
        };
        broadcast_hadamard(&[s.v_cs.clone(), v_ss, v_ms])
    }

    /// Fused method tensor (l_cm, l_sm, l_mm) for one method.
    pub fn method_tensor(&self, m: &MethodFeatures) -> Result<NdArray> {
        let v_sm = self.method_spectrum.embed(&m.spectrum)?;
        let v_mm = match &m.mutation {
            Some(x) => self.method_mutation.embed(x)?,
            None => vec![1.0; self.cfg.l_mm],
        };
        let fused =
            broadcast_hadamard(&[v_sm, m.v_sim.clone(), v_mm, m.v_cm.clone()])?;
        // (l_sm, 15, l_mm, l_cm): collapse the similarity axis, then move the
        // code axis to the front so the classifier sees it as channels.
        let reduced = fc_reduce_4d(&fused, &self.sim_reducer)?;
        let (s, mm, c) = (self.cfg.l_sm, self.cfg.l_mm, self.cfg.l_cm);
        let mut out = NdArray::zeros(&[c, s, mm]);
        for ci in 0..c {
            for si in 0..s {
                for mi in 0..mm {
                    out.data[(ci * s + si) * mm + mi] = reduced.data[(si * mm + mi) * c + ci];
                }
            }
        }
        Ok(out)
    }

    /// Probability that a statement is faulty.
    pub fn score_statement(&self, s: &StatementFeatures) -> Result<f64> {
        let t = self.statement_tensor(s)?;
        Ok(self.stmt_classifier.classify(&t)?[1])
    }

    /// Probability that a method is faulty.
    pub fn score_method(&self, m: &MethodFeatures) -> Result<f64> {
        let t = self.method_tensor(m)?;
        Ok(self.method_classifier.classify(&t)?[1])
    }
}

const MODEL_FILES: [&str; 6] = [
    "stmt_spectrum.cnn",
    "stmt_mutation.cnn",
    "stmt_classifier.cnn",
    "method_spectrum.cnn",
    "method_mutation.cnn",
    "method_classifier.cnn",
];

/// Write a model directory: `config.json` plus one checkpoint per net. The
/// similarity reducer is a fixed averaging layer and is reconstructed on load.
pub fn save_models(models: &TrainedModels, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CovrankError::io(dir.display().to_string(), e))?;
    let cfg_path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&models.cfg)?;
    std::fs::write(&cfg_path, json + "\n")
        .map_err(|e| CovrankError::io(cfg_path.display().to_string(), e))?;
    let nets = [
        &models.stmt_spectrum,
        &models.stmt_mutation,
        &models.stmt_classifier,
        &models.method_spectrum,
        &models.method_mutation,
        &models.method_classifier,
    ];
    for (net, name) in nets.iter().zip(MODEL_FILES) {
        crate::nn::save_checkpoint(net, &dir.join(name))?;
    }
    Ok(())
}

pub fn load_models(dir: &std::path::Path) -> Result<TrainedModels> {
    let cfg_path = dir.join("config.json");
    let json = std::fs::read_to_string(&cfg_path)
        .map_err(|e| CovrankError::io(cfg_path.display().to_string(), e))?;
    let cfg: PipelineConfig = serde_json::from_str(&json)?;
    cfg.validate()?;
    let mut nets = MODEL_FILES.iter().map(|name| crate::nn::load_checkpoint(&dir.join(name)));
    let mut next = || nets.next().expect("six model files");
    Ok(TrainedModels {
        cfg,
        stmt_spectrum: next()?,
        stmt_mutation: next()?,
        stmt_classifier: next()?,
        method_spectrum: next()?,
        method_mutation: next()?,
        method_classifier: next()?,
        sim_reducer: FcLayer::averaging(1, 15),
    })
}

/// Two-stage training over the given bugs: first the per-channel CNNs on
/// their own images, then the classifiers on the fused tensors.
pub fn train_models(bugs: &[&BugFeatures], cfg: &PipelineConfig, seed: u64) -> Result<TrainedModels> {
    cfg.validate()?;
    if bugs.is_empty() {
        return Err(CovrankError::EmptyCorpus("train_models over zero bugs".to_string()));
    }
    let stmt_input = (2, cfg.tests_window, cfg.embed_dim);
    let method_input = (2, cfg.stmts_window, cfg.tests_window);
    let mut models = TrainedModels {
        cfg: cfg.clone(),
        stmt_spectrum: channel_net(stmt_input, cfg.l_ss, cfg, derive_seed(seed, 1))?,
        stmt_mutation: channel_net(stmt_input, cfg.l_ms, cfg, derive_seed(seed, 2))?,
        stmt_classifier: channel_net((cfg.l_cs, cfg.l_ss, cfg.l_ms), 2, cfg, derive_seed(seed, 3))?,
        method_spectrum: channel_net(method_input, cfg.l_sm, cfg, derive_seed(seed, 4))?,
        method_mutation: channel_net(method_input, cfg.l_mm, cfg, derive_seed(seed, 5))?,
        method_classifier: channel_net((cfg.l_cm, cfg.l_sm, cfg.l_mm), 2, cfg, derive_seed(seed, 6))?,
        sim_reducer: FcLayer::averaging(1, 15),
    };

    // Stage 1: channel CNNs, each with its own 2-class head.
    let mut stmt_spec = Vec::new();
    let mut stmt_mut = Vec::new();
    let mut meth_spec = Vec::new();
    let mut meth_mut = Vec::new();
    for bug in bugs {
        for m in &bug.methods {
            let ml = m.label as usize;
            meth_spec.push((m.spectrum.clone(), ml));
            if let Some(x) = &m.mutation {
                meth_mut.push((x.clone(), ml));
            }
            for s in &m.statements {
                let sl = s.label as usize;
                stmt_spec.push((s.spectrum.clone(), sl));
                if let Some(x) = &s.mutation {
                    stmt_mut.push((x.clone(), sl));
                }
            }
        }
    }
    train_on(&mut models.stmt_spectrum, stmt_spec, cfg, derive_seed(seed, 11))?;
    train_on(&mut models.stmt_mutation, stmt_mut, cfg, derive_seed(seed, 12))?;
    train_on(&mut models.method_spectrum, meth_spec, cfg, derive_seed(seed, 13))?;
    train_on(&mut models.method_mutation, meth_mut, cfg, derive_seed(seed, 14))?;

    // Stage 2: classifiers on fused tensors built from the frozen channels.
    let mut stmt_fused = Vec::new();
    let mut meth_fused = Vec::new();
    for bug in bugs {
        for m in &bug.methods {
            meth_fused.push((models.method_tensor(m)?, m.label as usize));
            for s in &m.statements {
                stmt_fused.push((models.statement_tensor(s)?, s.label as usize));
            }
        }
    }
    train_on(&mut models.stmt_classifier, stmt_fused, cfg, derive_seed(seed, 21))?;
    train_on(&mut models.method_classifier, meth_fused, cfg, derive_seed(seed, 22))?;
    Ok(models)
}

/// Rank every statement of a bug; ids are global statement indices in
/// method-then-statement order.
pub fn localize_statements(models: &TrainedModels, bug: &BugFeatures) -> Result<BugRanking> {
    let stmts = bug.statements();
    let scores: Result<Vec<f64>> = stmts
        .par_iter()
        .map(|(_, _, s)| models.score_statement(s))
        .collect();
    let faulty: Vec<usize> = stmts
        .iter()
        .filter(|(_, _, s)| s.label)
        .map(|(g, _, _)| *g)
        .collect();
    Ok(BugRanking {
        bug_id: bug.bug_id.clone(),
        items: rank_by_score(&scores?),
        faulty,
    })
}

/// Rank every method of a bug; ids are method indices.
pub fn localize_methods(models: &TrainedModels, bug: &BugFeatures) -> Result<BugRanking> {
    let scores: Result<Vec<f64>> = bug
        .methods
        .par_iter()
        .map(|m| models.score_method(m))
        .collect();
    let faulty: Vec<usize> = bug
        .methods
        .iter()
        .enumerate()
        .filter(|(_, m)| m.label)
        .map(|(i, _)| i)
        .collect();
    Ok(BugRanking {
        bug_id: bug.bug_id.clone(),
        items: rank_by_score(&scores?),
        faulty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::features::build_features;
    use crate::synth::{generate_benchmark, BenchmarkConfig};

    fn fixture() -> (crate::engine::features::DatasetFeatures, PipelineConfig) {
        let ds = generate_benchmark(&BenchmarkConfig {
            seed: 11,
            n_bugs: 3,
            tests_per_bug: 6,
            distractors: 2,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = PipelineConfig::desk();
        cfg.epochs = 2;
        let feats = build_features(&ds, &cfg).unwrap();
        (feats, cfg)
    }

    #[test]
    fn training_and_localization_run_end_to_end() {
        let (feats, cfg) = fixture();
        let train: Vec<&BugFeatures> = feats.bugs.iter().collect();
        let models = train_models(&train, &cfg, 7).unwrap();
        for bug in &feats.bugs {
            let sr = localize_statements(&models, bug).unwrap();
            assert_eq!(sr.items.len(), bug.statements().len());
            assert!(!sr.faulty.is_empty());
            let mr = localize_methods(&models, bug).unwrap();
            assert_eq!(mr.items.len(), bug.methods.len());
            assert_eq!(mr.faulty.len(), 1, "one faulty method per bug");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (feats, cfg) = fixture();
        let train: Vec<&BugFeatures> = feats.bugs.iter().collect();
        let a = train_models(&train, &cfg, 7).unwrap();
        let b = train_models(&train, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let ra = localize_statements(&a, &feats.bugs[0]).unwrap();
        let rb = localize_statements(&b, &feats.bugs[0]).unwrap();
        assert_eq!(ra.items, rb.items);
    }

    #[test]
    fn identical_statements_get_identical_scores() {
        let (feats, cfg) = fixture();
        let train: Vec<&BugFeatures> = feats.bugs.iter().collect();
        let models = train_models(&train, &cfg, 7).unwrap();
        // Duplicate one statement's features; scores must match exactly, so
        // the shared rank is the average of the two positions.
        let s = &feats.bugs[0].methods[0].statements[0];
        let a = models.score_statement(s).unwrap();
        let b = models.score_statement(&s.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scores_are_permutation_equivariant() {
        let (feats, cfg) = fixture();
        let train: Vec<&BugFeatures> = feats.bugs.iter().collect();
        let models = train_models(&train, &cfg, 7).unwrap();
        let bug = &feats.bugs[0];
        let base: Vec<f64> = bug
            .statements()
            .iter()
            .map(|(_, _, s)| models.score_statement(s).unwrap())
            .collect();
        // Reverse the methods (and their statements); per-element scores are
        // independent of position, so the score multiset is unchanged.
        let mut rev = bug.clone();
        rev.methods.reverse();
        for m in &mut rev.methods {
            m.statements.reverse();
        }
        let mut permuted: Vec<f64> = rev
            .statements()
            .iter()
            .map(|(_, _, s)| models.score_statement(s).unwrap())
            .collect();
        // Reversing methods+statements then reversing the score list
        // restores the original order.
        permuted.reverse();
        assert_eq!(base, permuted);
    }

    #[test]
    fn single_method_bug_ranks_it_first() {
        let (feats, cfg) = fixture();
        let train: Vec<&BugFeatures> = feats.bugs.iter().collect();
        let models = train_models(&train, &cfg, 7).unwrap();
        let mut bug = feats.bugs[0].clone();
        let fi = bug.methods.iter().position(|m| m.label).unwrap();
        bug.methods = vec![bug.methods[fi].clone()];
        let r = localize_methods(&models, &bug).unwrap();
        assert_eq!(r.items.len(), 1);
        assert_eq!(crate::sbfl::best_position_of(&r.items, 0), Some(1));
    }

    #[test]
    fn model_directory_round_trips() {
        let (feats, cfg) = fixture();
        let train: Vec<&BugFeatures> = feats.bugs.iter().collect();
        let models = train_models(&train, &cfg, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_models(&models, dir.path()).unwrap();
        let loaded = load_models(dir.path()).unwrap();
        assert_eq!(models, loaded);
        let a = localize_statements(&models, &feats.bugs[0]).unwrap();
        let b = localize_statements(&loaded, &feats.bugs[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = PipelineConfig::desk();
        assert!(train_models(&[], &cfg, 0).is_err());
    }
}
