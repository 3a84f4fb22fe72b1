//! Per-dataset feature extraction. All features here are fold-independent
//! (no labels are consumed), so they are computed once per dataset and
//! reused across evaluation folds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{
    extract_long_paths, facet_documents, method_code_vector, path_token_sequences,
    statement_vector, tfidf_similarity, TfidfModel, TokenVocab, DEFAULT_MAX_PATHS,
    DEFAULT_MAX_PATH_LEN,
};
use crate::dataset::{BugRecord, Dataset, MethodRecord};
use crate::ee::{enhance_matrix, order_tests};
use crate::embed::{
    build_weighted_dfg, combine_with_matrix, statement_dependency_vectors,
    train_graph_embedding, train_sequence_embedding, EmbeddingTable, Node2vecParams,
    SgnsParams, StatementDependencyVector,
};
use crate::error::Result;
use crate::matrix::{build_mutation_matrices, build_spectrum_matrix, CoverageMatrix};
use crate::nn::{FcLayer, NdArray};
use crate::synth::gen::derive_seed;

use super::PipelineConfig;

/// Enhancement and channel switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    pub ordering: bool,
    pub ee_marks: bool,
    pub stat_dep: bool,
    pub mutation: bool,
    pub code_rep: bool,
    pub text_sim: bool,
}

impl Toggles {
    pub fn all_on() -> Toggles {
        Toggles {
            ordering: true,
            ee_marks: true,
            stat_dep: true,
            mutation: true,
            code_rep: true,
            text_sim: true,
        }
    }

    pub fn all_off() -> Toggles {
        Toggles {
            ordering: false,
            ee_marks: false,
            stat_dep: false,
            mutation: false,
            code_rep: false,
            text_sim: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatementFeatures {
    pub stmt_id: usize,
    pub label: bool,
    /// (2, tests_window, embed_dim) spectrum image. Plane 0 is the
    /// statement's combined coverage row; plane 1 is the same row restricted
    /// to failing-test columns, which makes scores comparable across methods
    /// with different test outcomes.
    pub spectrum: NdArray,
    /// Same shape; absent when the statement's method has no mutants or the
    /// mutation channel is toggled off. Plane 1 uses each mutant's own
    /// failing tests, so outcome changes under mutation are visible.
    pub mutation: Option<NdArray>,
    /// Code-channel vector, length l_cs.
    pub v_cs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodFeatures {
    pub method_id: String,
    pub label: bool,
    /// (2, stmts_window, tests_window) method image; planes as in
    /// `StatementFeatures::spectrum`.
    pub spectrum: NdArray,
    pub mutation: Option<NdArray>,
    /// Long-path vector, length l_cm.
    pub v_cm: Vec<f64>,
    /// The 15 text-similarity features.
    pub v_sim: Vec<f64>,
    pub statements: Vec<StatementFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BugFeatures {
    pub bug_id: String,
    pub methods: Vec<MethodFeatures>,
}

impl BugFeatures {
    /// (global statement index, method index, features) for every statement.
    pub fn statements(&self) -> Vec<(usize, usize, &StatementFeatures)> {
        let mut out = Vec::new();
        for (mi, m) in self.methods.iter().enumerate() {
            for s in &m.statements {
                out.push((out.len(), mi, s));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFeatures {
    pub project: String,
    pub bugs: Vec<BugFeatures>,
}

/// Spectrum matrix with the configured enhancements applied.
pub fn prepared_matrix(method: &MethodRecord, toggles: &Toggles) -> Result<CoverageMatrix> {
    let mut matrix = build_spectrum_matrix(method);
    if toggles.ee_marks {
        matrix = enhance_matrix(&matrix, method)?;
    }
    if toggles.ordering {
        matrix = order_tests(&matrix);
    }
    Ok(matrix)
}

fn window_rows(rows: &[Vec<f64>], n: usize, d: usize) -> NdArray {
    let mut data = vec![0.0; n * d];
    for (i, row) in rows.iter().take(n).enumerate() {
        for (j, &v) in row.iter().take(d).enumerate() {
            data[i * d + j] = v;
        }
    }
    NdArray { shape: vec![1, n, d], data }
}

/// Failing-test indicator per ordered column position.
fn fail_mask(method: &MethodRecord, col_order: &[usize]) -> Vec<bool> {
    col_order
        .iter()
        .map(|&j| method.tests[j].is_failing())
        .collect()
}

/// Stack a full plane over a failing-rows-only plane: (2, n, d).
fn two_planes(full: &[Vec<f64>], row_mask: &[bool], n: usize, d: usize) -> NdArray {
    let masked: Vec<Vec<f64>> = full
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row_mask.get(i).copied().unwrap_or(false) {
                row.clone()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect();
    let a = window_rows(full, n, d);
    let b = window_rows(&masked, n, d);
    let mut data = a.data;
    data.extend(b.data);
    NdArray { shape: vec![2, n, d], data }
}

/// As `two_planes`, but the mask selects columns of each row instead of rows.
fn two_planes_cols(full: &[Vec<f64>], col_mask: &[bool], n: usize, d: usize) -> NdArray {
    let masked: Vec<Vec<f64>> = full
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| if col_mask.get(j).copied().unwrap_or(false) { v } else { 0.0 })
                .collect()
        })
        .collect();
    let a = window_rows(full, n, d);
    let b = window_rows(&masked, n, d);
    let mut data = a.data;
    data.extend(b.data);
    NdArray { shape: vec![2, n, d], data }
}

fn dependency_vectors(
    method: &MethodRecord,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<StatementDependencyVector>> {
    let m = method.num_statements();
    if !cfg.toggles.stat_dep {
        return Ok((0..m)
            .map(|stmt_id| StatementDependencyVector {
                stmt_id,
                vec: vec![1.0; cfg.embed_dim],
            })
            .collect());
    }
    let paths: Vec<Vec<usize>> = method
        .tests
        .iter()
        .map(|t| t.exec_path.clone())
        .filter(|p| !p.is_empty())
        .collect();
    let sgns = SgnsParams { dim: cfg.embed_dim, epochs: 4, seed, ..Default::default() };
    let seq = if paths.is_empty() {
        EmbeddingTable { dim: cfg.embed_dim, vectors: Default::default() }
    } else {
        train_sequence_embedding(&paths, &sgns)?
    };
    let g = build_weighted_dfg(m, &method.dfg_edges);
    let walk = Node2vecParams { walk_len: 8, walks_per_node: 4, ..Default::default() };
    let graph = train_graph_embedding(&g, &walk, &sgns)?;
    let mut sdvecs = statement_dependency_vectors(&seq, &graph, m)?;
    // Calibrate every vector to mean 1 and standard deviation 1/2. Raw
    // embedding coordinates have method-local axes with no meaning across
    // methods, so their scale and sign would otherwise swamp the coverage
    // polarity of the combined images; after calibration the coverage value
    // still sets each image row's sign while the dependency structure
    // modulates it.
    let d = cfg.embed_dim as f64;
    for sd in &mut sdvecs {
        let mean = sd.vec.iter().sum::<f64>() / d;
        let var = sd.vec.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
        let std = var.sqrt();
        if std > 1e-12 {
            for x in &mut sd.vec {
                *x = 1.0 + (*x - mean) / (2.0 * std);
            }
        } else {
            sd.vec = vec![1.0; cfg.embed_dim];
        }
    }
    Ok(sdvecs)
}

/// Statement-dependency vectors (execution-order and data-dependency
/// channels, Hadamard-combined) for one method, for external inspection.
pub fn statement_dependency_table(
    method: &MethodRecord,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<StatementDependencyVector>> {
    dependency_vectors(method, cfg, seed)
}

/// Per-statement mutation slabs: `full` averages the statement's mutants'
/// combined coverage rows per ordered column; `failing` averages the same
/// rows restricted to each mutant's own failing tests (so outcome changes
/// under mutation are encoded). Statements without mutants fall back to the
/// spectrum rows, mirroring the padding rule of `combine_mutation`.
struct MutationSlabs {
    full: Vec<Vec<f64>>,
    failing: Vec<Vec<f64>>,
}

fn mutation_rows(
    method: &MethodRecord,
    base: &CoverageMatrix,
    sdvecs: &[StatementDependencyVector],
    outcome_plane: bool,
) -> Result<Option<Vec<MutationSlabs>>> {
    if method.mutants.is_empty() {
        return Ok(None);
    }
    let mut mbm = build_mutation_matrices(method)?;
    for (_, m) in &mut mbm {
        m.col_order = base.col_order.clone();
    }
    let combined_rows = |matrix: &CoverageMatrix, i: usize, sd: &[f64]| -> Vec<Vec<f64>> {
        (0..matrix.cols)
            .map(|pos| {
                let v = matrix.get_ordered(i, pos) as f64;
                sd.iter().map(|x| v * x).collect()
            })
            .collect()
    };
    let base_mask = if outcome_plane {
        fail_mask(method, &base.col_order)
    } else {
        vec![false; base.cols]
    };
    let mask_rows = |rows: &[Vec<f64>], mask: &[bool]| -> Vec<Vec<f64>> {
        rows.iter()
            .enumerate()
            .map(|(pos, row)| {
                if mask.get(pos).copied().unwrap_or(false) {
                    row.clone()
                } else {
                    vec![0.0; row.len()]
                }
            })
            .collect()
    };
    let add = |acc: &mut [Vec<f64>], rows: &[Vec<f64>], scale: f64| {
        for (a, r) in acc.iter_mut().zip(rows) {
            for (x, v) in a.iter_mut().zip(r) {
                *x += v * scale;
            }
        }
    };

    let mut out = Vec::with_capacity(method.num_statements());
    for (i, sd) in sdvecs.iter().enumerate() {
        // This statement's mutants, with their matrices and outcome masks.
        let own: Vec<(usize, &CoverageMatrix)> = method
            .mutants
            .iter()
            .enumerate()
            .filter(|(_, mu)| mu.stmt_id == i)
            .map(|(mi, _)| (mi, &mbm[mi].1))
            .collect();
        if own.is_empty() {
            let rows = combined_rows(base, i, &sd.vec);
            let failing = mask_rows(&rows, &base_mask);
            out.push(MutationSlabs { full: rows, failing });
            continue;
        }
        let mut full = vec![vec![0.0; sd.vec.len()]; base.cols];
        let mut failing = full.clone();
        let scale = 1.0 / own.len() as f64;
        for (mi, matrix) in own {
            let rows = combined_rows(matrix, i, &sd.vec);
            let mask: Vec<bool> = if outcome_plane {
                base.col_order
                    .iter()
                    .map(|&j| method.mutants[mi].tests[j].is_failing())
                    .collect()
            } else {
                vec![false; base.cols]
            };
            add(&mut full, &rows, scale);
            add(&mut failing, &mask_rows(&rows, &mask), scale);
        }
        out.push(MutationSlabs { full, failing });
    }
    Ok(Some(out))
}

struct SharedTables {
    tfidf: TfidfModel,
    token_vocab: TokenVocab,
    token_table: EmbeddingTable,
    path_vocab: TokenVocab,
    path_table: EmbeddingTable,
    cs_reducer: FcLayer,
    cm_reducer: FcLayer,
}

/// Project-wide tables: TF-IDF document frequencies, statement-token and
/// path-node embeddings, and the fixed seeded reducers.
fn build_shared(dataset: &Dataset, cfg: &PipelineConfig) -> Result<SharedTables> {
    let tfidf = TfidfModel::fit(&facet_documents(&dataset.bugs));

    let mut token_seqs: Vec<Vec<String>> = Vec::new();
    let mut path_seqs: Vec<Vec<String>> = Vec::new();
    for bug in &dataset.bugs {
        for method in &bug.methods {
            for s in &method.statements {
                token_seqs.push(crate::code::tokenize_statement(&s.text));
            }
            let paths =
                extract_long_paths(&method.ast, DEFAULT_MAX_PATHS, DEFAULT_MAX_PATH_LEN);
            path_seqs.extend(path_token_sequences(&paths));
        }
    }
    let token_vocab = TokenVocab::fit(&token_seqs);
    let path_vocab = TokenVocab::fit(&path_seqs);
    let sgns = SgnsParams {
        dim: cfg.embed_dim,
        epochs: 2,
        seed: derive_seed(cfg.seed, 0xc0de),
        ..Default::default()
    };
    let encode = |vocab: &TokenVocab, seqs: &[Vec<String>]| -> Vec<Vec<usize>> {
        seqs.iter().map(|s| vocab.encode(s)).collect()
    };
    let empty = |dim| EmbeddingTable { dim, vectors: Default::default() };
    let token_table = {
        let ids = encode(&token_vocab, &token_seqs);
        if ids.iter().all(|s| s.is_empty()) {
            empty(cfg.embed_dim)
        } else {
            train_sequence_embedding(&ids, &sgns)?
        }
    };
    let path_table = {
        let ids = encode(&path_vocab, &path_seqs);
        if ids.iter().all(|s| s.is_empty()) {
            empty(cfg.embed_dim)
        } else {
            train_sequence_embedding(&ids, &sgns)?
        }
    };

    let mut rng = rand::SeedableRng::seed_from_u64(derive_seed(cfg.seed, 0xfc));
    let cs_reducer = FcLayer::new_seeded(cfg.l_cs, cfg.embed_dim, &mut rng);
    let cm_reducer = FcLayer::new_seeded(cfg.l_cm, cfg.embed_dim, &mut rng);
    Ok(SharedTables {
        tfidf,
        token_vocab,
        token_table,
        path_vocab,
        path_table,
        cs_reducer,
        cm_reducer,
    })
}

fn method_matrix_image(
    matrix: &CoverageMatrix,
    col_mask: &[bool],
    stmts_window: usize,
    tests_window: usize,
) -> NdArray {
    let rows: Vec<Vec<f64>> = (0..matrix.rows)
        .map(|i| (0..matrix.cols).map(|j| matrix.get_ordered(i, j) as f64).collect())
        .collect();
    two_planes_cols(&rows, col_mask, stmts_window, tests_window)
}

fn build_method_features(
    bug: &BugRecord,
    method: &MethodRecord,
    shared: &SharedTables,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<MethodFeatures> {
    let toggles = &cfg.toggles;
    let matrix = prepared_matrix(method, toggles)?;
    let sdvecs = dependency_vectors(method, cfg, seed)?;
    let combined = combine_with_matrix(&matrix, &sdvecs)?;
    let mut_rows = if toggles.mutation {
        mutation_rows(method, &matrix, &sdvecs, toggles.ee_marks)?
    } else {
        None
    };

    // The failing-test plane is part of the enhancement channel: without EE
    // marking the images carry coverage only, as a plain spectrum baseline.
    let mask = if toggles.ee_marks {
        fail_mask(method, &matrix.col_order)
    } else {
        vec![false; matrix.cols]
    };
    let mut statements = Vec::with_capacity(method.statements.len());
    for (i, stmt) in method.statements.iter().enumerate() {
        let spectrum = two_planes(&combined[i].rows, &mask, cfg.tests_window, cfg.embed_dim);
        let mutation = mut_rows.as_ref().map(|slabs| {
            let s = &slabs[i];
            let a = window_rows(&s.full, cfg.tests_window, cfg.embed_dim);
            let b = window_rows(&s.failing, cfg.tests_window, cfg.embed_dim);
            let mut data = a.data;
            data.extend(b.data);
            NdArray { shape: vec![2, cfg.tests_window, cfg.embed_dim], data }
        });
        let v_cs = if toggles.code_rep {
            let tokens = crate::code::tokenize_statement(&stmt.text);
            statement_vector(&tokens, &shared.token_vocab, &shared.token_table, &shared.cs_reducer)?
        } else {
            vec![1.0; cfg.l_cs]
        };
        statements.push(StatementFeatures {
            stmt_id: stmt.stmt_id,
            label: stmt.is_faulty,
            spectrum,
            mutation,
            v_cs,
        });
    }

    // Method-level images share the statement matrix but collapse d away.
    let spectrum = method_matrix_image(&matrix, &mask, cfg.stmts_window, cfg.tests_window);
    let mutation = if let Some(slabs) = &mut_rows {
        // Mean over d of each statement's averaged mutant slab, per plane.
        let collapse = |pick: &dyn Fn(&MutationSlabs) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            slabs
                .iter()
                .map(|s| {
                    pick(s)
                        .iter()
                        .map(|r| {
                            if r.is_empty() {
                                0.0
                            } else {
                                r.iter().sum::<f64>() / r.len() as f64
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let a = window_rows(&collapse(&|s| &s.full), cfg.stmts_window, cfg.tests_window);
        let b = window_rows(&collapse(&|s| &s.failing), cfg.stmts_window, cfg.tests_window);
        let mut data = a.data;
        data.extend(b.data);
        Some(NdArray { shape: vec![2, cfg.stmts_window, cfg.tests_window], data })
    } else {
        None
    };

    let v_cm = if toggles.code_rep {
        let paths = extract_long_paths(&method.ast, DEFAULT_MAX_PATHS, DEFAULT_MAX_PATH_LEN);
        method_code_vector(&paths, &shared.path_vocab, &shared.path_table, &shared.cm_reducer)?
    } else {
        vec![1.0; cfg.l_cm]
    };
    let v_sim = if toggles.text_sim {
        tfidf_similarity(&bug.failing_test_facets, &method.facets, &shared.tfidf)
            .0
            .to_vec()
    } else {
        vec![1.0; 15]
    };

    Ok(MethodFeatures {
        method_id: method.method_id.clone(),
        label: method.is_faulty,
        spectrum,
        mutation,
        v_cm,
        v_sim,
        statements,
    })
}

/// All features for a dataset. Bugs are processed in parallel with per-bug
/// seeds, so the result is independent of worker count.
pub fn build_features(dataset: &Dataset, cfg: &PipelineConfig) -> Result<DatasetFeatures> {
    cfg.validate()?;
    let shared = build_shared(dataset, cfg)?;
    let bugs: Result<Vec<BugFeatures>> = dataset
        .bugs
        .par_iter()
        .enumerate()
        .map(|(bi, bug)| {
            let methods: Result<Vec<MethodFeatures>> = bug
                .methods
                .iter()
                .enumerate()
                .map(|(mi, method)| {
                    let seed = derive_seed(cfg.seed, (bi as u64) << 16 | mi as u64);
                    build_method_features(bug, method, &shared, cfg, seed)
                })
                .collect();
            Ok(BugFeatures { bug_id: bug.bug_id.clone(), methods: methods? })
        })
        .collect();
    Ok(DatasetFeatures { project: dataset.project.clone(), bugs: bugs? })
}
