//! Data model for bugs, methods, statements, tests, and mutants, plus the
//! versioned `fl-dataset/v1` JSON ingestion and serialization layer.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CovrankError, Result};

pub const SCHEMA: &str = "fl-dataset/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    pub class: String,
    pub method: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub message: String,
    pub frames: Vec<StackFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_id: String,
    pub outcome: Outcome,
    pub covered: Vec<usize>,
    pub exec_path: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorMessage>,
}

impl TestRecord {
    pub fn is_failing(&self) -> bool {
        self.outcome == Outcome::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementRecord {
    pub stmt_id: usize,
    pub line: u32,
    pub text: String,
    pub is_faulty: bool,
}

/// AST as shipped in the dataset: leaves carry lexemes, internal nodes may not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn leaf(kind: impl Into<String>, token: impl Into<String>) -> Self {
        AstNode {
            kind: kind.into(),
            token: Some(token.into()),
            children: Vec::new(),
        }
    }

    pub fn inner(kind: impl Into<String>, children: Vec<AstNode>) -> Self {
        AstNode {
            kind: kind.into(),
            token: None,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn count_leaves(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(|c| c.count_leaves()).sum()
        }
    }
}

/// Five text facets extracted from a method's source.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodFacets {
    pub qualified_name: String,
    pub accessed_classes: String,
    pub invocations: String,
    pub variables: String,
    pub comments: String,
}

impl MethodFacets {
    pub fn by_index(&self, i: usize) -> &str {
        match i {
            0 => &self.qualified_name,
            1 => &self.accessed_classes,
            2 => &self.invocations,
            3 => &self.variables,
            4 => &self.comments,
            _ => panic!("facet index out of range: {i}"),
        }
    }
}

/// Three text facets extracted from a bug's failing tests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingTestFacets {
    pub names: String,
    pub source: String,
    pub messages: String,
}

impl FailingTestFacets {
    pub fn by_index(&self, i: usize) -> &str {
        match i {
            0 => &self.names,
            1 => &self.source,
            2 => &self.messages,
            _ => panic!("test facet index out of range: {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantRecord {
    pub mutant_id: String,
    pub stmt_id: usize,
    pub operator: String,
    pub tests: Vec<TestRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method_id: String,
    pub is_faulty: bool,
    pub statements: Vec<StatementRecord>,
    pub ast: AstNode,
    pub dfg_edges: Vec<(usize, usize)>,
    pub facets: MethodFacets,
    pub tests: Vec<TestRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mutants: Vec<MutantRecord>,
}

impl MethodRecord {
    pub fn num_statements(&self) -> usize {
        self.statements.len()
    }

    pub fn num_tests(&self) -> usize {
        self.tests.len()
    }

    /// Statement whose source line equals `line`, treating each statement as
    /// covering the range from its own line up to (not including) the next
    /// statement's line, so multi-line statements match on any of their lines.
    pub fn statement_at_line(&self, line: u32) -> Option<usize> {
        let mut hit = None;
        for s in &self.statements {
            if s.line <= line {
                hit = Some(s.stmt_id);
            } else {
                break;
            }
        }
        // A line before the first statement matches nothing.
        match hit {
            Some(id) if self.statements.iter().any(|s| s.stmt_id == id && s.line == line) => {
                Some(id)
            }
            Some(id) => {
                // Range containment: only valid if the line falls strictly
                // inside this statement's span (before the next statement).
                let idx = id;
                let next_line = self.statements.get(idx + 1).map(|s| s.line);
                match next_line {
                    Some(nl) if line < nl => Some(id),
                    None => Some(id),
                    _ => None,
                }
            }
            None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    pub bug_id: String,
    pub failing_test_facets: FailingTestFacets,
    pub methods: Vec<MethodRecord>,
}

impl BugRecord {
    pub fn faulty_methods(&self) -> impl Iterator<Item = &MethodRecord> {
        self.methods.iter().filter(|m| m.is_faulty)
    }

    pub fn has_failing_test(&self) -> bool {
        self.methods
            .iter()
            .any(|m| m.tests.iter().any(|t| t.is_failing()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: String,
    pub project: String,
    pub bugs: Vec<BugRecord>,
}

impl Dataset {
    pub fn new(project: impl Into<String>, bugs: Vec<BugRecord>) -> Self {
        Dataset {
            schema: SCHEMA.to_string(),
            project: project.into(),
            bugs,
        }
    }
}

fn check(cond: bool, context: &str, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CovrankError::invariant(context, message()))
    }
}

fn validate_test(test: &TestRecord, m: usize, ctx: &str) -> Result<()> {
    let ctx = format!("{ctx}/test {}", test.test_id);
    let covered: BTreeSet<usize> = test.covered.iter().copied().collect();
    let path: BTreeSet<usize> = test.exec_path.iter().copied().collect();
    check(covered == path, &ctx, || {
        "covered set differs from exec_path statement set".to_string()
    })?;
    for &s in &test.covered {
        check(s < m, &ctx, || format!("covered stmt_id {s} out of range"))?;
    }
    if let Some(err) = &test.error {
        check(test.outcome == Outcome::Fail, &ctx, || {
            "error message present on a passing test".to_string()
        })?;
        check(!err.frames.is_empty(), &ctx, || {
            "error message with empty frame list".to_string()
        })?;
        for f in &err.frames {
            check(f.line >= 1, &ctx, || format!("frame line {} < 1", f.line))?;
        }
    }
    Ok(())
}

fn validate_method(method: &MethodRecord, ctx: &str) -> Result<()> {
    let ctx = format!("{ctx}/method {}", method.method_id);
    let m = method.statements.len();
    check(m > 0, &ctx, || "method has no statements".to_string())?;
    for (i, s) in method.statements.iter().enumerate() {
        check(s.stmt_id == i, &ctx, || {
            format!("stmt_ids not dense: position {i} holds stmt_id {}", s.stmt_id)
        })?;
        check(s.line >= 1, &ctx, || format!("statement {i} line < 1"))?;
        if i > 0 {
            check(s.line > method.statements[i - 1].line, &ctx, || {
                format!("line numbers not strictly increasing at stmt {i}")
            })?;
        }
    }
    for &(src, dst) in &method.dfg_edges {
        check(src < m && dst < m, &ctx, || {
            format!("dfg edge ({src},{dst}) out of range")
        })?;
        check(src != dst, &ctx, || format!("dfg self-edge on {src}"))?;
    }
    check(!method.tests.is_empty(), &ctx, || {
        "method has no tests".to_string()
    })?;
    for t in &method.tests {
        validate_test(t, m, &ctx)?;
    }
    let parent_ids: Vec<&str> = method.tests.iter().map(|t| t.test_id.as_str()).collect();
    for mu in &method.mutants {
        let mctx = format!("{ctx}/mutant {}", mu.mutant_id);
        check(mu.stmt_id < m, &mctx, || {
            format!("mutant targets unknown stmt_id {}", mu.stmt_id)
        })?;
        let ids: Vec<&str> = mu.tests.iter().map(|t| t.test_id.as_str()).collect();
        check(ids == parent_ids, &mctx, || {
            "mutant test_ids differ from parent method's".to_string()
        })?;
        for t in &mu.tests {
            validate_test(t, m, &mctx)?;
        }
    }
    Ok(())
}

pub fn validate_bug(bug: &BugRecord) -> Result<()> {
    let ctx = format!("bug {}", bug.bug_id);
    check(bug.faulty_methods().next().is_some(), &ctx, || {
        "no method flagged is_faulty".to_string()
    })?;
    check(bug.has_failing_test(), &ctx, || {
        "no failing test in any method".to_string()
    })?;
    for m in &bug.methods {
        validate_method(m, &ctx)?;
    }
    Ok(())
}

pub fn validate_dataset(ds: &Dataset) -> Result<()> {
    if ds.schema != SCHEMA {
        return Err(CovrankError::SchemaMismatch {
            expected: SCHEMA.to_string(),
            found: ds.schema.clone(),
        });
    }
    for bug in &ds.bugs {
        validate_bug(bug)?;
    }
    Ok(())
}

/// Canonical JSON bytes: keys sorted, two-space indent, trailing newline.
/// Round-trips are byte-stable because serialization goes through a
/// `serde_json::Value` whose object maps are ordered.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let v = serde_json::to_value(value)?;
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    // Probe the schema tag before full decoding so version errors are clear.
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    let found = probe
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or("<missing>");
    if found != SCHEMA {
        return Err(CovrankError::SchemaMismatch {
            expected: SCHEMA.to_string(),
            found: found.to_string(),
        });
    }
    let ds: Dataset = serde_json::from_str(&text)?;
    validate_dataset(&ds)?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    validate_dataset(ds)?;
    let bytes = to_canonical_json(ds)?;
    std::fs::write(path, bytes).map_err(|e| CovrankError::io(path.display().to_string(), e))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub(crate) fn tiny_method() -> MethodRecord {
        MethodRecord {
            method_id: "m0".to_string(),
            is_faulty: true,
            statements: vec![
                StatementRecord {
                    stmt_id: 0,
                    line: 2,
                    text: "x = a + 1;".into(),
                    is_faulty: false,
                },
                StatementRecord {
                    stmt_id: 1,
                    line: 3,
                    text: "y = x * 2;".into(),
                    is_faulty: true,
                },
                StatementRecord {
                    stmt_id: 2,
                    line: 5,
                    text: "return y;".into(),
                    is_faulty: false,
                },
            ],
            ast: AstNode::inner(
                "method",
                vec![AstNode::leaf("name", "m0"), AstNode::leaf("param", "a")],
            ),
            dfg_edges: vec![(0, 1), (1, 2)],
            facets: MethodFacets::default(),
            tests: vec![
                TestRecord {
                    test_id: "t0".into(),
                    outcome: Outcome::Pass,
                    covered: vec![0, 1],
                    exec_path: vec![0, 1],
                    error: None,
                },
                TestRecord {
                    test_id: "t1".into(),
                    outcome: Outcome::Fail,
                    covered: vec![1, 2],
                    exec_path: vec![1, 2],
                    error: Some(ErrorMessage {
                        message: "wrong value".into(),
                        frames: vec![StackFrame {
                            class: "Synth".into(),
                            method: "m0".into(),
                            line: 5,
                        }],
                    }),
                },
            ],
            mutants: vec![],
        }
    }

    pub(crate) fn tiny_bug() -> BugRecord {
        BugRecord {
            bug_id: "b0".to_string(),
            failing_test_facets: FailingTestFacets::default(),
            methods: vec![tiny_method()],
        }
    }
}
