//! Statement-dependency representations: skip-gram embeddings over execution
//! paths, node2vec embeddings over weighted data-flow graphs, Hadamard
//! statement vectors, and their combination with coverage matrices into
//! 2-D/3-D/4-D inputs.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CovrankError, Result};
use crate::matrix::CoverageMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Statement-id token -> vector of length `dim`.
    pub vectors: BTreeMap<usize, Vec<f64>>,
}

impl EmbeddingTable {
    /// Vector for a token; tokens absent from the table get the all-ones
    /// vector, the identity for the Hadamard product.
    pub fn get(&self, token: usize) -> Vec<f64> {
        self.vectors
            .get(&token)
            .cloned()
            .unwrap_or_else(|| vec![1.0; self.dim])
    }

    pub fn validate(&self) -> Result<()> {
        for (tok, v) in &self.vectors {
            if v.len() != self.dim {
                return Err(CovrankError::invariant(
                    "EmbeddingTable",
                    format!("token {tok} has length {} != dim {}", v.len(), self.dim),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CovrankError::invariant(
                    "EmbeddingTable",
                    format!("token {tok} has a non-finite entry"),
                ));
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn init_vectors(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let half = 0.5 / dim as f64;
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-half..half)).collect())
        .collect()
}

/// Cumulative unigram^0.75 table for negative sampling.
struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[usize]) -> NegativeTable {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0.0;
        for &c in counts {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
        }
        NegativeTable { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("nonempty vocab");
        let x = rng.gen_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SgnsParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SgnsParams {
    fn default() -> Self {
        SgnsParams {
            dim: 16,
            window: 2,
            negatives: 4,
            epochs: 8,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Skip-gram with negative sampling over token sequences. Training order is
/// fixed (epochs, then sequences, then positions) so output is a pure
/// function of the corpus and seed.
fn train_sgns(corpus: &[Vec<usize>], params: &SgnsParams) -> EmbeddingTable {
    let mut vocab: BTreeMap<usize, usize> = BTreeMap::new();
    let mut counts: Vec<usize> = Vec::new();
    for seq in corpus {
        for &tok in seq {
            let next = vocab.len();
            let idx = *vocab.entry(tok).or_insert(next);
            if idx == counts.len() {
                counts.push(0);
            }
            counts[idx] += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut input = init_vectors(vocab.len(), params.dim, &mut rng);
    let mut output = vec![vec![0.0; params.dim]; vocab.len()];

    if !vocab.is_empty() {
        let table = NegativeTable::new(&counts);
        let lr = params.learning_rate;
        for _ in 0..params.epochs {
            for seq in corpus {
                let ids: Vec<usize> = seq.iter().map(|t| vocab[t]).collect();
                for (pos, &center) in ids.iter().enumerate() {
                    let lo = pos.saturating_sub(params.window);
                    let hi = (pos + params.window + 1).min(ids.len());
                    for ctx_pos in lo..hi {
                        if ctx_pos == pos {
                            continue;
                        }
                        let context = ids[ctx_pos];
                        let mut grad_in = vec![0.0; params.dim];
                        // Positive pair plus `negatives` sampled non-pairs.
                        for neg in 0..=params.negatives {
                            let (target, label) = if neg == 0 {
                                (context, 1.0)
                            } else {
                                (table.sample(&mut rng), 0.0)
                            };
                            if neg > 0 && target == context {
                                continue;
                            }
                            let dot: f64 = input[center]
                                .iter()
                                .zip(&output[target])
                                .map(|(a, b)| a * b)
                                .sum();
                            let g = (label - sigmoid(dot)) * lr;
                            for d in 0..params.dim {
                                grad_in[d] += g * output[target][d];
                                output[target][d] += g * input[center][d];
                            }
                        }
                        for d in 0..params.dim {
                            input[center][d] += grad_in[d];
                        }
                    }
                }
            }
        }
    }

    // Emit input + output vectors: directly co-occurring tokens then score
    // high, not just tokens with shared contexts. Output starts at zero so
    // untrained tokens still read as their init vectors.
    let vectors = vocab
        .into_iter()
        .map(|(tok, idx)| {
            let v = input[idx].iter().zip(&output[idx]).map(|(a, b)| a + b).collect();
            (tok, v)
        })
        .collect();
    EmbeddingTable { dim: params.dim, vectors }
}

/// Sequence embedding over test execution paths.
pub fn train_sequence_embedding(
    paths: &[Vec<usize>],
    params: &SgnsParams,
) -> Result<EmbeddingTable> {
    if paths.iter().all(|p| p.is_empty()) {
        return Err(CovrankError::EmptyCorpus("no nonempty execution paths".to_string()));
    }
    Ok(train_sgns(paths, params))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedDfg {
    /// Node count; nodes are statement ids 0..n.
    pub nodes: usize,
    /// (src, dst, weight); weight +1 for real edges, -1 for artificial
    /// reverse edges.
    pub edges: Vec<(usize, usize, i8)>,
}

/// Real edges get weight +1. For each real (a,b) without a real (b,a), the
/// reverse edge is added with weight -1 so walks can revisit definitions.
pub fn build_weighted_dfg(nodes: usize, dfg_edges: &[(usize, usize)]) -> WeightedDfg {
    let mut edges: Vec<(usize, usize, i8)> =
        dfg_edges.iter().map(|&(a, b)| (a, b, 1)).collect();
    for &(a, b) in dfg_edges {
        if !dfg_edges.contains(&(b, a)) {
            edges.push((b, a, -1));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    WeightedDfg { nodes, edges }
}

#[derive(Debug, Clone, Copy)]
pub struct Node2vecParams {
    pub walk_len: usize,
    pub walks_per_node: usize,
    pub p: f64,
    pub q: f64,
    /// Transition-mass multiplier for artificial (-1) edges. The sign itself
    /// never enters the sampler; it only labels the edge as artificial.
    pub artificial_edge_mass: f64,
}

impl Default for Node2vecParams {
    fn default() -> Self {
        Node2vecParams {
            walk_len: 10,
            walks_per_node: 8,
            p: 1.0,
            q: 1.0,
            artificial_edge_mass: 1.0,
        }
    }
}

fn adjacency(g: &WeightedDfg, artificial_edge_mass: f64) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); g.nodes];
    for &(a, b, w) in &g.edges {
        let mass = if w > 0 { 1.0 } else { artificial_edge_mass };
        if mass > 0.0 {
            adj[a].push((b, mass));
        }
    }
    adj
}

fn weighted_pick(options: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = options.iter().map(|(_, m)| m).sum();
    let mut x = rng.gen_range(0.0..total);
    for &(node, m) in options {
        if x < m {
            return node;
        }
        x -= m;
    }
    options.last().expect("nonempty options").0
}

/// Second-order biased walks. The return-to-previous bias is 1/p, staying in
/// the previous node's neighborhood is 1, and moving outward is 1/q.
pub(crate) fn node2vec_walks(
    g: &WeightedDfg,
    params: &Node2vecParams,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let adj = adjacency(g, params.artificial_edge_mass);
    let mut walks = Vec::new();
    for start in 0..g.nodes {
        for _ in 0..params.walks_per_node {
            let mut walk = vec![start];
            while walk.len() < params.walk_len {
                let cur = *walk.last().expect("walk nonempty");
                if adj[cur].is_empty() {
                    break;
                }
                let next = if walk.len() == 1 {
                    weighted_pick(&adj[cur], rng)
                } else {
                    let prev = walk[walk.len() - 2];
                    let biased: Vec<(usize, f64)> = adj[cur]
                        .iter()
                        .map(|&(nxt, mass)| {
                            let alpha = if nxt == prev {
                                1.0 / params.p
                            } else if adj[prev].iter().any(|&(n, _)| n == nxt) {
                                1.0
                            } else {
                                1.0 / params.q
                            };
                            (nxt, mass * alpha)
                        })
                        .collect();
                    weighted_pick(&biased, rng)
                };
                walk.push(next);
            }
            walks.push(walk);
        }
    }
    walks
}

/// Graph embedding: node2vec walks fed to skip-gram. Isolated nodes only ever
/// appear as single-token walks, so they keep their init vectors.
pub fn train_graph_embedding(
    g: &WeightedDfg,
    walk_params: &Node2vecParams,
    sgns_params: &SgnsParams,
) -> Result<EmbeddingTable> {
    if g.nodes == 0 {
        return Err(CovrankError::EmptyCorpus("graph has no nodes".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sgns_params.seed ^ 0x6e32_7663);
    let walks = node2vec_walks(g, walk_params, &mut rng);
    Ok(train_sgns(&walks, sgns_params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatementDependencyVector {
    pub stmt_id: usize,
    pub vec: Vec<f64>,
}

/// Hadamard product of the sequence and graph vectors per statement.
pub fn statement_dependency_vectors(
    seq: &EmbeddingTable,
    graph: &EmbeddingTable,
    m: usize,
) -> Result<Vec<StatementDependencyVector>> {
    if seq.dim != graph.dim {
        return Err(CovrankError::Shape(format!(
            "table dims differ: sequence {} vs graph {}",
            seq.dim, graph.dim
        )));
    }
    Ok((0..m)
        .map(|stmt_id| {
            let a = seq.get(stmt_id);
            let b = graph.get(stmt_id);
            let vec = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            StatementDependencyVector { stmt_id, vec }
        })
        .collect())
}

/// (n, d) slab for one statement: row j = v_ij * S^sd_i over ordered columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedStatementMatrix {
    pub stmt_id: usize,
    /// n rows of length d.
    pub rows: Vec<Vec<f64>>,
}

/// Combine a coverage matrix with statement-dependency vectors. Output
/// indexes columns through `col_order`, so position j is the j-th test in the
/// enhanced ordering. Method-level shape is (m, n, d).
pub fn combine_with_matrix(
    ecc: &CoverageMatrix,
    sdvecs: &[StatementDependencyVector],
) -> Result<Vec<EnhancedStatementMatrix>> {
    if sdvecs.len() != ecc.rows {
        return Err(CovrankError::Shape(format!(
            "{} dependency vectors for a {}-row matrix",
            sdvecs.len(),
            ecc.rows
        )));
    }
    Ok((0..ecc.rows)
        .map(|i| {
            let sd = &sdvecs[i].vec;
            let rows = (0..ecc.cols)
                .map(|j| {
                    let v = ecc.get_ordered(i, j) as f64;
                    sd.iter().map(|x| v * x).collect()
                })
                .collect();
            EnhancedStatementMatrix { stmt_id: sdvecs[i].stmt_id, rows }
        })
        .collect())
}

/// (k, n, d) slab for one statement built from its mutants' matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationStatementTensor {
    pub stmt_id: usize,
    /// k slices of n rows of length d.
    pub slices: Vec<Vec<Vec<f64>>>,
}

/// Combine per-statement mutation matrices with dependency vectors. Each
/// statement gets k slices, k = max mutant count over the method. Statements
/// with fewer mutants are padded by repeating their spectrum row so the
/// method tensor (m, k, n, d) stays rectangular.
pub fn combine_mutation(
    mbm: &[(usize, CoverageMatrix)],
    spectrum: &CoverageMatrix,
    sdvecs: &[StatementDependencyVector],
) -> Result<Vec<MutationStatementTensor>> {
    if mbm.is_empty() {
        return Err(CovrankError::EmptyCorpus("method has no mutation matrices".to_string()));
    }
    if sdvecs.len() != spectrum.rows {
        return Err(CovrankError::Shape(format!(
            "{} dependency vectors for a {}-row matrix",
            sdvecs.len(),
            spectrum.rows
        )));
    }
    let mut per_stmt: BTreeMap<usize, Vec<&CoverageMatrix>> = BTreeMap::new();
    for (stmt_id, m) in mbm {
        if m.rows != spectrum.rows || m.cols != spectrum.cols {
            return Err(CovrankError::Shape(format!(
                "mutation matrix for statement {stmt_id} is {}x{}, spectrum is {}x{}",
                m.rows, m.cols, spectrum.rows, spectrum.cols
            )));
        }
        per_stmt.entry(*stmt_id).or_default().push(m);
    }
    let k = per_stmt.values().map(|v| v.len()).max().expect("nonempty mbm");

    let row_of = |matrix: &CoverageMatrix, i: usize, sd: &[f64]| -> Vec<Vec<f64>> {
        (0..matrix.cols)
            .map(|j| {
                let v = matrix.get_ordered(i, j) as f64;
                sd.iter().map(|x| v * x).collect()
            })
            .collect()
    };

    Ok((0..spectrum.rows)
        .map(|i| {
            let sd = &sdvecs[i].vec;
            let own = per_stmt.get(&i).map(|v| v.as_slice()).unwrap_or(&[]);
            let mut slices: Vec<Vec<Vec<f64>>> =
                own.iter().map(|m| row_of(m, i, sd)).collect();
            while slices.len() < k {
                slices.push(row_of(spectrum, i, sd));
            }
            MutationStatementTensor { stmt_id: sdvecs[i].stmt_id, slices }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::MatrixKind;

    fn mat(
        rows: usize,
        cols: usize,
        cells: Vec<i8>,
        order: Vec<usize>,
        kind: MatrixKind,
    ) -> CoverageMatrix {
        let mut m = CoverageMatrix::new(rows, cols, cells, kind).unwrap();
        m.col_order = order;
        m.validate().unwrap();
        m
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn table_params(seed: u64) -> SgnsParams {
        SgnsParams { dim: 8, epochs: 12, seed, ..Default::default() }
    }

    #[test]
    fn repeated_pair_beats_random_tokens() {
        // Corpus: [0,1] repeated plus unrelated filler tokens 2..8.
        let mut wins = 0;
        for seed in 0..5u64 {
            let mut corpus: Vec<Vec<usize>> = (0..1000).map(|_| vec![0, 1]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
            for _ in 0..200 {
                let a = rng.gen_range(2..8);
                let b = rng.gen_range(2..8);
                corpus.push(vec![a, b]);
            }
            let t = train_sequence_embedding(&corpus, &table_params(seed)).unwrap();
            let pair = cosine(&t.get(0), &t.get(1));
            let mean_rand: f64 =
                (2..8).map(|k| cosine(&t.get(0), &t.get(k))).sum::<f64>() / 6.0;
            if pair > mean_rand + 0.2 {
                wins += 1;
            }
        }
        assert_eq!(wins, 5, "pair cosine margin missed in {} of 5 seeds", 5 - wins);
    }

    #[test]
    fn single_token_paths_stay_at_init() {
        // No context pairs are generated, so training is a no-op and the
        // zero-epoch table is an exact oracle.
        let corpus: Vec<Vec<usize>> = vec![vec![3], vec![7], vec![3]];
        let trained = train_sequence_embedding(&corpus, &table_params(1)).unwrap();
        let init = train_sequence_embedding(
            &corpus,
            &SgnsParams { epochs: 0, ..table_params(1) },
        )
        .unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let corpus: Vec<Vec<usize>> = (0..50).map(|i| vec![i % 5, (i + 1) % 5]).collect();
        let a = train_sequence_embedding(&corpus, &table_params(9)).unwrap();
        let b = train_sequence_embedding(&corpus, &table_params(9)).unwrap();
        assert_eq!(a, b);
        let c = train_sequence_embedding(&corpus, &table_params(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = train_sequence_embedding(&[vec![], vec![]], &table_params(0));
        assert!(matches!(err, Err(CovrankError::EmptyCorpus(_))));
    }

    #[test]
    fn weighted_dfg_adds_artificial_reverse_edges() {
        let g = build_weighted_dfg(2, &[(0, 1)]);
        assert_eq!(g.edges, vec![(0, 1, 1), (1, 0, -1)]);

        let g = build_weighted_dfg(2, &[(0, 1), (1, 0)]);
        assert_eq!(g.edges, vec![(0, 1, 1), (1, 0, 1)]);
    }

    #[test]
    fn fig4_dfg_artificial_count_matches_counting_oracle() {
        let prog = crate::synth::lang::tests::fig4_program(7);
        let real = crate::synth::build_dfg(&prog);
        let g = build_weighted_dfg(prog.statement_count(), &real);
        let mutual = real
            .iter()
            .filter(|&&(a, b)| real.contains(&(b, a)))
            .count();
        let artificial = g.edges.iter().filter(|e| e.2 < 0).count();
        assert_eq!(artificial, real.len() - mutual);
    }

    fn two_cliques() -> WeightedDfg {
        // Nodes 0..4 and 4..8, fully connected inside, nothing across.
        let mut edges = Vec::new();
        for base in [0usize, 4] {
            for a in base..base + 4 {
                for b in base..base + 4 {
                    if a != b {
                        edges.push((a, b));
                    }
                }
            }
        }
        build_weighted_dfg(8, &edges)
    }

    fn clique_separation(t: &EmbeddingTable) -> (f64, f64) {
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for a in 0..8usize {
            for b in 0..8usize {
                if a >= b {
                    continue;
                }
                let c = cosine(&t.get(a), &t.get(b));
                if (a < 4) == (b < 4) {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&intra), mean(&inter))
    }

    #[test]
    fn disconnected_cliques_separate() {
        let g = two_cliques();
        for seed in 0..5u64 {
            let t = train_graph_embedding(
                &g,
                &Node2vecParams::default(),
                &SgnsParams { dim: 8, epochs: 20, seed, ..Default::default() },
            )
            .unwrap();
            let (intra, inter) = clique_separation(&t);
            assert!(
                intra > inter + 0.2,
                "seed {seed}: intra {intra:.3} vs inter {inter:.3}"
            );
        }
    }

    #[test]
    fn loop_heavy_corpus_still_separates_cliques() {
        // Walks revisit loop nodes many times; separation must survive.
        let g = two_cliques();
        let t = train_graph_embedding(
            &g,
            &Node2vecParams { walk_len: 40, walks_per_node: 12, ..Default::default() },
            &SgnsParams { dim: 8, epochs: 10, seed: 3, ..Default::default() },
        )
        .unwrap();
        let (intra, inter) = clique_separation(&t);
        assert!(intra > inter + 0.2, "intra {intra:.3} vs inter {inter:.3}");
    }

    #[test]
    fn single_isolated_node_keeps_init_vector() {
        let g = WeightedDfg { nodes: 1, edges: vec![] };
        let sp = SgnsParams { dim: 8, seed: 5, ..Default::default() };
        let t = train_graph_embedding(&g, &Node2vecParams::default(), &sp).unwrap();
        let t0 = train_graph_embedding(
            &g,
            &Node2vecParams::default(),
            &SgnsParams { epochs: 0, ..sp },
        )
        .unwrap();
        assert_eq!(t, t0);
        let half = 0.5 / 8.0;
        assert!(t.get(0).iter().all(|x| x.abs() <= half));
    }

    #[test]
    fn first_order_walk_frequencies_match_edge_mass() {
        // Node 0 has a real edge to 1 (mass 1.0) and an artificial edge to 2
        // (mass scaled 0.5): expected split 2/3 vs 1/3.
        let g = WeightedDfg { nodes: 3, edges: vec![(0, 1, 1), (0, 2, -1)] };
        let params = Node2vecParams {
            walk_len: 2,
            walks_per_node: 1,
            artificial_edge_mass: 0.5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut to1 = 0u64;
        let mut total = 0u64;
        for _ in 0..100_000 {
            let walks = node2vec_walks(&g, &params, &mut rng);
            if let Some(&next) = walks[0].get(1) {
                total += 1;
                if next == 1 {
                    to1 += 1;
                }
            }
        }
        let frac = to1 as f64 / total as f64;
        assert!((frac - 2.0 / 3.0).abs() < 0.02, "fraction to node 1: {frac:.4}");
    }

    fn sd(stmt_id: usize, vec: &[f64]) -> StatementDependencyVector {
        StatementDependencyVector { stmt_id, vec: vec.to_vec() }
    }

    fn table(dim: usize, entries: &[(usize, &[f64])]) -> EmbeddingTable {
        EmbeddingTable {
            dim,
            vectors: entries.iter().map(|(t, v)| (*t, v.to_vec())).collect(),
        }
    }

    #[test]
    fn hadamard_definition_and_missing_policy() {
        let seq = table(2, &[(0, &[1.0, 2.0])]);
        let graph = table(2, &[(0, &[3.0, 4.0])]);
        let v = statement_dependency_vectors(&seq, &graph, 2).unwrap();
        assert_eq!(v[0].vec, vec![3.0, 8.0]);
        // Statement 1 missing from both tables: all-ones.
        assert_eq!(v[1].vec, vec![1.0, 1.0]);

        // Missing from one table only: passes through unchanged.
        let v = statement_dependency_vectors(&seq, &table(2, &[]), 1).unwrap();
        assert_eq!(v[0].vec, vec![1.0, 2.0]);
    }

    #[test]
    fn hadamard_is_symmetric() {
        let a = table(3, &[(0, &[1.5, -2.0, 0.5]), (2, &[0.1, 0.2, 0.3])]);
        let b = table(3, &[(0, &[-1.0, 4.0, 2.0]), (1, &[7.0, 8.0, 9.0])]);
        assert_eq!(
            statement_dependency_vectors(&a, &b, 3).unwrap(),
            statement_dependency_vectors(&b, &a, 3).unwrap()
        );
    }

    #[test]
    fn dim_mismatch_rejected() {
        let a = table(2, &[]);
        let b = table(3, &[]);
        assert!(statement_dependency_vectors(&a, &b, 1).is_err());
    }

    #[test]
    fn combine_cell_rule() {
        // 2x2 matrix with one EE cell and one zero.
        let m = mat(
            2,
            2,
            vec![1, 0, -1, 1],
            vec![0, 1],
            MatrixKind::Spectrum,
        );
        let sdvecs = vec![sd(0, &[2.0, 3.0]), sd(1, &[5.0, 7.0])];
        let out = combine_with_matrix(&m, &sdvecs).unwrap();
        assert_eq!(out[0].rows, vec![vec![2.0, 3.0], vec![0.0, 0.0]]);
        assert_eq!(out[1].rows, vec![vec![-5.0, -7.0], vec![5.0, 7.0]]);
    }

    #[test]
    fn combine_uses_ordered_columns() {
        let m = mat(
            1,
            2,
            vec![1, 0],
            vec![1, 0], // reversed view
            MatrixKind::Spectrum,
        );
        let out = combine_with_matrix(&m, &[sd(0, &[4.0])]).unwrap();
        assert_eq!(out[0].rows, vec![vec![0.0], vec![4.0]]);
    }

    #[test]
    fn combine_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cells: Vec<i8> = (0..12).map(|_| [1, 0, -1][rng.gen_range(0..3)]).collect();
        // CoverageMatrix allows at most one -1 per column; repair extras.
        let mut cells = cells;
        for j in 0..3 {
            let mut seen = false;
            for i in 0..4 {
                if cells[i * 3 + j] == -1 {
                    if seen {
                        cells[i * 3 + j] = 1;
                    }
                    seen = true;
                }
            }
        }
        let m = mat(4, 3, cells.clone(), vec![2, 0, 1], MatrixKind::Spectrum);
        let sdvecs: Vec<StatementDependencyVector> = (0..4)
            .map(|i| sd(i, &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let out = combine_with_matrix(&m, &sdvecs).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                for d in 0..2 {
                    let expect = cells[i * 3 + m.col_order[j]] as f64 * sdvecs[i].vec[d];
                    assert_eq!(out[i].rows[j][d], expect, "({i},{j},{d})");
                }
            }
        }
    }

    #[test]
    fn flipping_cell_sign_negates_row() {
        let m1 = mat(1, 1, vec![1], vec![0], MatrixKind::Spectrum);
        let m2 = mat(1, 1, vec![-1], vec![0], MatrixKind::Spectrum);
        let sdvecs = vec![sd(0, &[0.5, -0.25])];
        let a = combine_with_matrix(&m1, &sdvecs).unwrap();
        let b = combine_with_matrix(&m2, &sdvecs).unwrap();
        let neg: Vec<f64> = a[0].rows[0].iter().map(|x| -x).collect();
        assert_eq!(b[0].rows[0], neg);
    }

    fn tiny_matrix(cells: Vec<i8>) -> CoverageMatrix {
        mat(2, 2, cells, vec![0, 1], MatrixKind::Mutation)
    }

    #[test]
    fn mutation_k1_reduces_to_spectrum_shape_plus_unit_axis() {
        let spectrum = mat(
            2,
            2,
            vec![1, 1, 0, 1],
            vec![0, 1],
            MatrixKind::Spectrum,
        );
        let mbm = vec![(0, tiny_matrix(vec![1, 0, 0, 1])), (1, tiny_matrix(vec![0, 1, 1, 0]))];
        let sdvecs = vec![sd(0, &[2.0]), sd(1, &[3.0])];
        let out = combine_mutation(&mbm, &spectrum, &sdvecs).unwrap();
        assert_eq!(out.len(), 2);
        for t in &out {
            assert_eq!(t.slices.len(), 1);
            assert_eq!(t.slices[0].len(), 2);
        }
        assert_eq!(out[0].slices[0][0], vec![2.0]);
        assert_eq!(out[0].slices[0][1], vec![0.0]);
    }

    #[test]
    fn mutation_padding_repeats_spectrum_row() {
        let spectrum = mat(
            2,
            2,
            vec![1, 0, 1, 1],
            vec![0, 1],
            MatrixKind::Spectrum,
        );
        // Statement 0 has 2 mutants, statement 1 has none: k = 2, statement
        // 1 padded twice with its spectrum row.
        let mbm = vec![(0, tiny_matrix(vec![1, 1, 0, 0])), (0, tiny_matrix(vec![0, 0, 1, 1]))];
        let sdvecs = vec![sd(0, &[1.0]), sd(1, &[4.0])];
        let out = combine_mutation(&mbm, &spectrum, &sdvecs).unwrap();
        assert_eq!(out[1].slices.len(), 2);
        let spectrum_row1 = vec![vec![4.0], vec![4.0]];
        assert_eq!(out[1].slices[0], spectrum_row1);
        assert_eq!(out[1].slices[1], spectrum_row1);
    }

    #[test]
    fn mutation_matches_quadruple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rand_cells = |rng: &mut ChaCha8Rng| -> Vec<i8> {
            (0..4).map(|_| [0i8, 1][rng.gen_range(0..2)]).collect()
        };
        let spectrum = mat(
            2,
            2,
            rand_cells(&mut rng),
            vec![1, 0],
            MatrixKind::Spectrum,
        );
        let mbm: Vec<(usize, CoverageMatrix)> = vec![
            (0, mat(2, 2, rand_cells(&mut rng), vec![1, 0], MatrixKind::Mutation)),
            (1, mat(2, 2, rand_cells(&mut rng), vec![1, 0], MatrixKind::Mutation)),
            (1, mat(2, 2, rand_cells(&mut rng), vec![1, 0], MatrixKind::Mutation)),
        ];
        let sdvecs = vec![sd(0, &[0.5, 2.0]), sd(1, &[-1.0, 3.0])];
        let out = combine_mutation(&mbm, &spectrum, &sdvecs).unwrap();
        let k = 2;
        for i in 0..2usize {
            let own: Vec<&CoverageMatrix> =
                mbm.iter().filter(|(s, _)| *s == i).map(|(_, m)| m).collect();
            for t in 0..k {
                let src = if t < own.len() { own[t] } else { &spectrum };
                for j in 0..2 {
                    for d in 0..2 {
                        let expect = src.get_ordered(i, j) as f64 * sdvecs[i].vec[d];
                        assert_eq!(out[i].slices[t][j][d], expect, "({i},{t},{j},{d})");
                    }
                }
            }
        }
    }

    #[test]
    fn mutation_empty_set_rejected() {
        let spectrum =
            mat(1, 1, vec![1], vec![0], MatrixKind::Spectrum);
        let err = combine_mutation(&[], &spectrum, &[sd(0, &[1.0])]);
        assert!(matches!(err, Err(CovrankError::EmptyCorpus(_))));
    }
}
