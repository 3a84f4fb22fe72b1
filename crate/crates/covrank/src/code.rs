//! Static source-code representations: statement tokenization, token and
//! AST-long-path vectors, and the 15-feature text-similarity vector.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{AstNode, FailingTestFacets, MethodFacets};
use crate::embed::EmbeddingTable;
use crate::error::{CovrankError, Result};
use crate::nn::FcLayer;

/// Fixed token window per statement.
pub const STATEMENT_TOKEN_WINDOW: usize = 16;
pub const DEFAULT_MAX_PATHS: usize = 64;
pub const DEFAULT_MAX_PATH_LEN: usize = 16;

/// Split a statement into identifiers, numbers, and operator/punctuation
/// tokens. Two-character comparison operators stay whole; whitespace is the
/// only dropped content.
pub fn tokenize_statement(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if i + 1 < chars.len()
            && matches!(
                (c, chars[i + 1]),
                ('=', '=') | ('!', '=') | ('<', '=') | ('>', '=')
            )
        {
            out.push(chars[i..i + 2].iter().collect());
            i += 2;
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

/// Bidirectional map between code-token strings and the integer ids the
/// embedding tables are keyed by.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenVocab {
    ids: BTreeMap<String, usize>,
}

impl TokenVocab {
    pub fn fit(sequences: &[Vec<String>]) -> TokenVocab {
        let mut ids = BTreeMap::new();
        for seq in sequences {
            for tok in seq {
                let next = ids.len();
                ids.entry(tok.clone()).or_insert(next);
            }
        }
        TokenVocab { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn encode(&self, seq: &[String]) -> Vec<usize> {
        seq.iter().filter_map(|t| self.get(t)).collect()
    }
}

/// V_cs: mean of the statement's token vectors over a fixed window of
/// `STATEMENT_TOKEN_WINDOW` slots (absent slots contribute zero), reduced by
/// a fully connected layer. A zero-token statement reduces the zero matrix,
/// so the output is the reducer's bias pattern.
pub fn statement_vector(
    tokens: &[String],
    vocab: &TokenVocab,
    table: &EmbeddingTable,
    reducer: &FcLayer,
) -> Result<Vec<f64>> {
    if reducer.in_dim() != table.dim {
        return Err(CovrankError::Shape(format!(
            "reducer input width {} != token dim {}",
            reducer.in_dim(),
            table.dim
        )));
    }
    let mut mean = vec![0.0; table.dim];
    for tok in tokens.iter().take(STATEMENT_TOKEN_WINDOW) {
        let v = match vocab.get(tok) {
            Some(id) => table.get(id),
            None => vec![1.0; table.dim],
        };
        for (m, x) in mean.iter_mut().zip(&v) {
            *m += x / STATEMENT_TOKEN_WINDOW as f64;
        }
    }
    Ok(reducer.forward(&mean))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathNode {
    pub kind: String,
    pub token: Option<String>,
}

impl PathNode {
    /// Embedding token: lexeme for leaves, kind string for internal nodes.
    pub fn embed_token(&self) -> String {
        self.token.clone().unwrap_or_else(|| self.kind.clone())
    }
}

/// Leaf-to-leaf path through the pivot node (the root, or for single-child
/// roots the highest node with at least two children).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongPath {
    pub nodes: Vec<PathNode>,
    /// Index of the pivot within `nodes`.
    pub pivot: usize,
}

struct LeafChain {
    /// Preorder index of the leaf.
    order: usize,
    /// Which pivot subtree the leaf lives in.
    subtree: usize,
    /// Nodes from just below the pivot down to the leaf.
    chain: Vec<PathNode>,
}

fn path_node(n: &AstNode) -> PathNode {
    PathNode { kind: n.kind.clone(), token: n.token.clone() }
}

/// Highest node with >= 2 children, scanning down through single-child
/// nodes. Returns the chain is irrelevant: paths pivot here.
fn find_pivot(ast: &AstNode) -> &AstNode {
    let mut cur = ast;
    while cur.children.len() == 1 {
        cur = &cur.children[0];
    }
    cur
}

fn collect_leaves(
    node: &AstNode,
    subtree: usize,
    prefix: &mut Vec<PathNode>,
    order: &mut usize,
    out: &mut Vec<LeafChain>,
) {
    prefix.push(path_node(node));
    if node.children.is_empty() {
        out.push(LeafChain { order: *order, subtree, chain: prefix.clone() });
    }
    *order += 1;
    for c in &node.children {
        collect_leaves(c, subtree, prefix, order, out);
    }
    prefix.pop();
}

/// Leaf-pair paths through the pivot, ordered lexicographically by the two
/// leaves' preorder indices, truncated to `max_paths` after dropping paths
/// longer than `max_len` nodes.
pub fn extract_long_paths(ast: &AstNode, max_paths: usize, max_len: usize) -> Vec<LongPath> {
    let pivot = find_pivot(ast);
    if pivot.children.len() < 2 {
        return Vec::new();
    }
    let mut leaves = Vec::new();
    let mut order = 0;
    for (si, child) in pivot.children.iter().enumerate() {
        let mut prefix = Vec::new();
        collect_leaves(child, si, &mut prefix, &mut order, &mut leaves);
    }
    let pivot_node = path_node(pivot);
    let mut out = Vec::new();
    for a in 0..leaves.len() {
        for b in a + 1..leaves.len() {
            let (la, lb) = (&leaves[a], &leaves[b]);
            if la.subtree == lb.subtree {
                continue;
            }
            let len = la.chain.len() + lb.chain.len() + 1;
            if len > max_len {
                continue;
            }
            let mut nodes: Vec<PathNode> = la.chain.iter().rev().cloned().collect();
            nodes.push(pivot_node.clone());
            nodes.extend(lb.chain.iter().cloned());
            out.push((la.order, lb.order, LongPath { nodes, pivot: la.chain.len() }));
        }
    }
    out.sort_by_key(|(a, b, _)| (*a, *b));
    out.truncate(max_paths);
    out.into_iter().map(|(_, _, p)| p).collect()
}

/// All embedding-token sequences of a method's long paths, for training the
/// path-node table.
pub fn path_token_sequences(paths: &[LongPath]) -> Vec<Vec<String>> {
    paths
        .iter()
        .map(|p| p.nodes.iter().map(|n| n.embed_token()).collect())
        .collect()
}

/// V_cm: mean of all path-node vectors across the (already canonically
/// ordered and truncated) path list, reduced by a fully connected layer.
/// With zero paths the reduction sees the zero matrix and yields the bias
/// pattern; callers treat `paths.is_empty()` as the flag for that case.
pub fn method_code_vector(
    paths: &[LongPath],
    vocab: &TokenVocab,
    table: &EmbeddingTable,
    reducer: &FcLayer,
) -> Result<Vec<f64>> {
    if reducer.in_dim() != table.dim {
        return Err(CovrankError::Shape(format!(
            "reducer input width {} != node dim {}",
            reducer.in_dim(),
            table.dim
        )));
    }
    let mut mean = vec![0.0; table.dim];
    let mut count = 0usize;
    for path in paths {
        for node in &path.nodes {
            let tok = node.embed_token();
            let v = match vocab.get(&tok) {
                Some(id) => table.get(id),
                None => vec![1.0; table.dim],
            };
            for (m, x) in mean.iter_mut().zip(&v) {
                *m += x;
            }
            count += 1;
        }
    }
    if count > 0 {
        for m in &mut mean {
            *m /= count as f64;
        }
    }
    Ok(reducer.forward(&mean))
}

/// TF-IDF document model: log-scaled term frequency, smoothed inverse
/// document frequency ln((1+N)/(1+df)) + 1, cosine similarity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TfidfModel {
    n_docs: usize,
    df: BTreeMap<String, usize>,
}

fn bag(doc: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for tok in doc.split_whitespace().flat_map(|w| tokenize_statement(w)) {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

impl TfidfModel {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> TfidfModel {
        let mut df = BTreeMap::new();
        for doc in docs {
            let terms: BTreeSet<String> = bag(doc.as_ref()).into_keys().collect();
            for t in terms {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        TfidfModel { n_docs: docs.len(), df }
    }

    fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((1 + self.n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn vector(&self, doc: &str) -> BTreeMap<String, f64> {
        bag(doc)
            .into_iter()
            .map(|(t, c)| {
                let w = (1.0 + (c as f64).ln()) * self.idf(&t);
                (t, w)
            })
            .collect()
    }

    /// Cosine similarity of the two documents' TF-IDF vectors, clipped to
    /// [0, 1]. Either document empty gives 0.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let va = self.vector(a);
        let vb = self.vector(b);
        if va.is_empty() || vb.is_empty() {
            return 0.0;
        }
        let dot: f64 = va
            .iter()
            .filter_map(|(t, x)| vb.get(t).map(|y| x * y))
            .sum();
        let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// The 15 similarity features, fixed order: test facets {names, source,
/// messages} crossed with code facets {qualified_name, accessed_classes,
/// invocations, variables, comments}.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector(pub [f64; 15]);

pub fn tfidf_similarity(
    bug: &FailingTestFacets,
    method: &MethodFacets,
    model: &TfidfModel,
) -> SimilarityVector {
    let mut out = [0.0; 15];
    for t in 0..3 {
        for c in 0..5 {
            out[t * 5 + c] = model.similarity(bug.by_index(t), method.by_index(c));
        }
    }
    SimilarityVector(out)
}

/// Every facet document of every bug and method in a corpus slice; the IDF
/// population for `tfidf_similarity`.
pub fn facet_documents(bugs: &[crate::dataset::BugRecord]) -> Vec<String> {
    let mut docs = Vec::new();
    for bug in bugs {
        for t in 0..3 {
            docs.push(bug.failing_test_facets.by_index(t).to_string());
        }
        for m in &bug.methods {
            for c in 0..5 {
                docs.push(m.facets.by_index(c).to_string());
            }
        }
    }
    docs
}
