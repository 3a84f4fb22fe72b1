//! End-to-end fault localization: representation fusion, CNN scoring,
//! ranking, metrics, and evaluation harnesses.

pub mod features;
pub mod harness;
pub mod metrics;
pub mod models;

pub use features::{DatasetFeatures, Toggles};
pub use harness::{ablate, run_cross_project, run_leave_one_out, AblationOutcome};
pub use metrics::{mar, mfr, topk_recall, BugRanking, EvalReport, MetricBlock};
pub use models::{
    load_models, localize_methods, localize_statements, save_models, train_models, TrainedModels,
};

use serde::{Deserialize, Serialize};

use crate::error::{CovrankError, Result};
use crate::nn::NdArray;

/// Outer ("broadcast Hadamard") product: entry (i1..ik) = prod of v_t[i_t].
pub fn broadcast_hadamard(vs: &[Vec<f64>]) -> Result<NdArray> {
    if vs.len() < 2 {
        return Err(CovrankError::Shape(format!(
            "broadcast_hadamard needs >= 2 vectors, got {}",
            vs.len()
        )));
    }
    if let Some(i) = vs.iter().position(|v| v.is_empty()) {
        return Err(CovrankError::Shape(format!("input vector {i} is empty")));
    }
    let shape: Vec<usize> = vs.iter().map(|v| v.len()).collect();
    let mut out = NdArray::zeros(&shape);
    let total: usize = shape.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut prod = 1.0;
        for (axis, v) in vs.iter().enumerate().rev() {
            let extent = shape[axis];
            prod *= v[rem % extent];
            rem /= extent;
        }
        out.data[flat] = prod;
    }
    Ok(out)
}

/// Hyperparameters shared by training and evaluation. Serialized next to
/// every model and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Dependency-embedding dimension d.
    pub embed_dim: usize,
    /// Channel vector lengths (spectrum, mutation, code).
    pub l_ss: usize,
    pub l_ms: usize,
    pub l_cs: usize,
    /// Method-level vector lengths.
    pub l_sm: usize,
    pub l_mm: usize,
    pub l_cm: usize,
    /// Test columns consumed per matrix (ordered view, zero-padded).
    pub tests_window: usize,
    /// Statement rows consumed per method-level image.
    pub stmts_window: usize,
    pub cnn_filters: usize,
    pub cnn_filter_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Cap on training samples per fold; all positives are kept.
    pub max_train_samples: usize,
    pub toggles: Toggles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::desk()
    }
}

impl PipelineConfig {
    /// Minutes-scale defaults.
    pub fn desk() -> PipelineConfig {
        PipelineConfig {
            seed: 0,
            embed_dim: 8,
            l_ss: 8,
            l_ms: 8,
            l_cs: 6,
            l_sm: 8,
            l_mm: 8,
            l_cm: 6,
            tests_window: 8,
            stmts_window: 12,
            cnn_filters: 4,
            cnn_filter_size: 2,
            lr: 0.08,
            epochs: 6,
            batch: 16,
            max_train_samples: 480,
            toggles: Toggles::all_on(),
        }
    }

    /// Larger settings closer to the tuned grid; slower.
    pub fn thorough() -> PipelineConfig {
        PipelineConfig {
            embed_dim: 16,
            l_ss: 16,
            l_ms: 16,
            l_cs: 16,
            l_sm: 16,
            l_mm: 16,
            l_cm: 16,
            tests_window: 12,
            stmts_window: 16,
            cnn_filters: 8,
            cnn_filter_size: 3,
            lr: 0.003,
            epochs: 20,
            batch: 32,
            max_train_samples: 2000,
            ..PipelineConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("l_ss", self.l_ss),
            ("l_ms", self.l_ms),
            ("l_cs", self.l_cs),
            ("l_sm", self.l_sm),
            ("l_mm", self.l_mm),
            ("l_cm", self.l_cm),
            ("tests_window", self.tests_window),
            ("stmts_window", self.stmts_window),
            ("cnn_filters", self.cnn_filters),
            ("epochs", self.epochs),
            ("batch", self.batch),
            ("max_train_samples", self.max_train_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CovrankError::Config(format!("{name} must be positive")));
            }
        }
        if self.cnn_filter_size == 0 || self.cnn_filter_size > self.tests_window {
            return Err(CovrankError::Config(format!(
                "cnn_filter_size {} outside [1, tests_window {}]",
                self.cnn_filter_size, self.tests_window
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CovrankError::Config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }
}
