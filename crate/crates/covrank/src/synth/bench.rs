//! Emission of complete `fl-dataset/v1` datasets from generated programs:
//! tests, coverage, execution paths, DFGs, error messages, mutants, ground
//! truth, and text facets.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{
    BugRecord, Dataset, ErrorMessage, FailingTestFacets, MethodFacets, MethodRecord, MutantRecord,
    Outcome, StackFrame, StatementRecord, TestRecord,
};
use crate::error::{CovrankError, Result};
use crate::matrix::build_spectrum_matrix;

use super::dfg::build_dfg;
use super::gen::{enumerate_mutants, generate_program, random_fault, rng_for};
use super::lang::{interpret, Crash, MiniProgram};

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub n_bugs: usize,
    pub tests_per_bug: usize,
    /// Non-faulty methods per bug.
    pub distractors: usize,
    /// Statement count range for generated methods.
    pub min_size: usize,
    pub max_size: usize,
    /// Emit mutant records (slower, needed for the mutation channel).
    pub with_mutants: bool,
    /// Every k-th bug must fail by crashing at the faulty statement, so its
    /// stack frames name the faulty line (0 disables the requirement). Other
    /// bugs fail by wrong values, whose frames name the returning statement.
    pub crash_every: usize,
    pub project: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 0,
            n_bugs: 10,
            tests_per_bug: 10,
            distractors: 5,
            min_size: 6,
            max_size: 12,
            with_mutants: true,
            crash_every: 4,
            project: "synth".to_string(),
        }
    }
}

fn class_name(project: &str) -> String {
    let mut c = project.to_string();
    if let Some(first) = c.get_mut(0..1) {
        let up = first.to_uppercase();
        c.replace_range(0..1, &up);
    }
    format!("{c}Class")
}

/// Run one test input against a program, comparing against the reference
/// output of the fixed program.
pub fn execute_test(
    prog: &MiniProgram,
    inputs: &[i64],
    reference_output: i64,
    test_id: &str,
    method_id: &str,
    class: &str,
) -> TestRecord {
    let ex = interpret(prog, inputs);
    let flat = prog.flatten();
    let mut covered: Vec<usize> = ex.exec_path.clone();
    covered.sort_unstable();
    covered.dedup();
    let (outcome, error) = match &ex.result {
        Ok(v) if *v == reference_output => (Outcome::Pass, None),
        Ok(v) => {
            // Wrong value: the error exhibits at the returning statement.
            let ret = ex.return_stmt.expect("returned without return stmt");
            (
                Outcome::Fail,
                Some(ErrorMessage {
                    message: format!(
                        "AssertionError: {method_id}({inputs:?}) expected {reference_output} but was {v}"
                    ),
                    frames: vec![StackFrame {
                        class: class.to_string(),
                        method: method_id.to_string(),
                        line: flat[ret].line,
                    }],
                }),
            )
        }
        Err(crash) => {
            let stmt = crash.stmt_id();
            (
                Outcome::Fail,
                Some(ErrorMessage {
                    message: format!("{} in {method_id}({inputs:?})", crash.message()),
                    frames: vec![StackFrame {
                        class: class.to_string(),
                        method: method_id.to_string(),
                        line: flat[stmt].line,
                    }],
                }),
            )
        }
    };
    TestRecord {
        test_id: test_id.to_string(),
        outcome,
        covered,
        exec_path: ex.exec_path,
        error,
    }
}

fn sample_inputs(arity: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    (0..arity).map(|_| rng.gen_range(-4..10)).collect()
}

/// Inputs on which the fixed program terminates normally, so the reference
/// output is well-defined and the fixed program passes its own tests.
fn sample_reference_inputs(
    prog: &MiniProgram,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<i64>, i64)> {
    for _ in 0..100 {
        let inputs = sample_inputs(prog.params.len(), rng);
        match interpret(prog, &inputs).result {
            Ok(v) => return Some((inputs, v)),
            Err(Crash::DivisionByZero { .. }) | Err(Crash::IterationCap { .. }) => continue,
        }
    }
    None
}

struct MethodBuild {
    method_id: String,
    is_faulty: bool,
    shipped: MiniProgram,
    faulty_stmt: Option<usize>,
    tests: Vec<TestRecord>,
}

fn build_method_record(
    b: MethodBuild,
    class: &str,
    qualified_prefix: &str,
    with_mutants: bool,
) -> MethodRecord {
    let flat = b.shipped.flatten();
    let statements: Vec<StatementRecord> = flat
        .iter()
        .map(|f| StatementRecord {
            stmt_id: f.stmt_id,
            line: f.line,
            text: f.text.clone(),
            is_faulty: Some(f.stmt_id) == b.faulty_stmt,
        })
        .collect();

    let mut vars: Vec<String> = Vec::new();
    for f in &flat {
        for v in f.uses.iter().chain(f.defines.iter()) {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
    }

    let mutants = if with_mutants {
        enumerate_mutants(&b.shipped)
            .into_iter()
            .map(|(stmt_id, operator, mprog)| {
                // Mutant tests re-run against the same reference outputs,
                // which are implied by each parent test's observed behavior.
                let tests = b
                    .tests
                    .iter()
                    .map(|t| {
                        let inputs = recover_inputs(t);
                        let reference = recover_reference(t);
                        execute_test(
                            &mprog,
                            &inputs,
                            reference,
                            &t.test_id,
                            &b.method_id,
                            class,
                        )
                    })
                    .collect();
                MutantRecord {
                    mutant_id: format!("{}::s{}_{}", b.method_id, stmt_id, operator),
                    stmt_id,
                    operator,
                    tests,
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    MethodRecord {
        method_id: b.method_id.clone(),
        is_faulty: b.is_faulty,
        statements,
        ast: b.shipped.ast(&b.method_id),
        dfg_edges: build_dfg(&b.shipped),
        facets: MethodFacets {
            qualified_name: format!("{qualified_prefix}.{}", b.method_id),
            accessed_classes: class.to_string(),
            invocations: String::new(),
            variables: vars.join(" "),
            comments: format!("computes over {}", vars.join(" ")),
        },
        tests: b.tests,
        mutants,
    }
}

// Test inputs/references are carried in the test_id so mutants can re-execute
// without a side table: "t{i}[a,b,c]=r".
fn encode_test_id(i: usize, inputs: &[i64], reference: i64) -> String {
    let ins: Vec<String> = inputs.iter().map(|v| v.to_string()).collect();
    format!("t{i}[{}]={reference}", ins.join(","))
}

fn recover_inputs(t: &TestRecord) -> Vec<i64> {
    let s = &t.test_id;
    let open = s.find('[').expect("test id carries inputs");
    let close = s.find(']').expect("test id carries inputs");
    s[open + 1..close]
        .split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().expect("test id input"))
        .collect()
}

fn recover_reference(t: &TestRecord) -> i64 {
    let s = &t.test_id;
    let eq = s.rfind('=').expect("test id carries reference");
    s[eq + 1..].parse().expect("test id reference")
}

/// Whether the faulty statement's spectrum row is duplicated by at least two
/// other rows, the tie pathology subset.
pub fn is_tie_heavy(bug: &BugRecord) -> bool {
    for method in bug.methods.iter().filter(|m| m.is_faulty) {
        let matrix = build_spectrum_matrix(method);
        for s in method.statements.iter().filter(|s| s.is_faulty) {
            let row: Vec<i8> = (0..matrix.cols).map(|j| matrix.get(s.stmt_id, j)).collect();
            let dup = (0..matrix.rows)
                .filter(|&i| i != s.stmt_id)
                .filter(|&i| (0..matrix.cols).all(|j| matrix.get(i, j) == row[j]))
                .count();
            if dup >= 2 {
                return true;
            }
        }
    }
    false
}

fn generate_bug(cfg: &BenchmarkConfig, bug_index: usize) -> Result<BugRecord> {
    let class = class_name(&cfg.project);
    let qualified_prefix = format!("{}.Bug{bug_index}", cfg.project);
    let want_crash = cfg.crash_every > 0 && bug_index % cfg.crash_every == 0;
    for attempt in 0..200u64 {
        let mut rng = rng_for(cfg.seed, (bug_index as u64) * 1000 + attempt);
        let size = rng.gen_range(cfg.min_size..=cfg.max_size);
        let prog_seed = rng.gen::<u64>();
        let fixed = generate_program(prog_seed, size);
        let Some((spec, buggy)) = random_fault(&fixed, &mut rng) else {
            continue;
        };

        // Tests: inputs sampled where the fixed program terminates normally.
        let method_id = format!("method{bug_index}_0");
        let mut tests = Vec::new();
        let mut n_fail = 0;
        for i in 0..cfg.tests_per_bug {
            let Some((inputs, reference)) = sample_reference_inputs(&fixed, &mut rng) else {
                break;
            };
            let t = execute_test(
                &buggy,
                &inputs,
                reference,
                &encode_test_id(i, &inputs, reference),
                &method_id,
                &class,
            );
            if t.outcome == Outcome::Fail {
                n_fail += 1;
            }
            tests.push(t);
        }
        if tests.len() < cfg.tests_per_bug || n_fail == 0 || n_fail == tests.len() {
            continue; // need at least one failing and one passing test
        }
        if want_crash && attempt < 150 {
            // A crash bug: some failing test crashed at the faulty statement
            // itself, so its frame names the faulty line. Give up on the
            // requirement late in the attempt budget rather than failing.
            let faulty_line = buggy.flatten()[spec.target_stmt].line;
            let crash_hit = tests.iter().any(|t| {
                t.outcome == Outcome::Fail
                    && t.error.as_ref().is_some_and(|e| {
                        !e.message.starts_with("AssertionError")
                            && e.frames.iter().any(|f| f.line == faulty_line)
                    })
            });
            if !crash_hit {
                continue;
            }
        }

        let faulty_method = build_method_record(
            MethodBuild {
                method_id: method_id.clone(),
                is_faulty: true,
                shipped: buggy,
                faulty_stmt: Some(spec.target_stmt),
                tests,
            },
            &class,
            &qualified_prefix,
            cfg.with_mutants,
        );

        // Distractors: independent correct methods whose tests all pass.
        let mut methods = Vec::new();
        for d in 0..cfg.distractors {
            let d_id = format!("method{bug_index}_{}", d + 1);
            let d_seed = rng.gen::<u64>();
            let d_size = rng.gen_range(cfg.min_size..=cfg.max_size);
            let d_prog = generate_program(d_seed, d_size);
            let mut d_tests = Vec::new();
            for i in 0..cfg.tests_per_bug {
                let Some((inputs, reference)) = sample_reference_inputs(&d_prog, &mut rng)
                else {
                    break;
                };
                d_tests.push(execute_test(
                    &d_prog,
                    &inputs,
                    reference,
                    &encode_test_id(i, &inputs, reference),
                    &d_id,
                    &class,
                ));
            }
            if d_tests.is_empty() {
                continue;
            }
            methods.push(build_method_record(
                MethodBuild {
                    method_id: d_id,
                    is_faulty: false,
                    shipped: d_prog,
                    faulty_stmt: None,
                    tests: d_tests,
                },
                &class,
                &qualified_prefix,
                cfg.with_mutants,
            ));
        }

        // Faulty method at a seed-dependent position among the distractors.
        let pos = rng.gen_range(0..=methods.len());
        methods.insert(pos, faulty_method);

        let failing: Vec<&TestRecord> = methods
            .iter()
            .flat_map(|m| m.tests.iter())
            .filter(|t| t.is_failing())
            .collect();
        let names = failing
            .iter()
            .map(|t| t.test_id.clone())
            .collect::<Vec<_>>()
            .join(" ");
        let source = failing
            .iter()
            .map(|t| format!("assert {method_id}({:?}) == {}", recover_inputs(t), recover_reference(t)))
            .collect::<Vec<_>>()
            .join("\n");
        let messages = failing
            .iter()
            .filter_map(|t| t.error.as_ref())
            .map(|e| {
                let frames = e
                    .frames
                    .iter()
                    .map(|f| format!("at {}.{}:{}", f.class, f.method, f.line))
                    .collect::<Vec<_>>()
                    .join(" ");
                format!("{} {frames}", e.message)
            })
            .collect::<Vec<_>>()
            .join("\n");

        let bug = BugRecord {
            bug_id: format!("{}-{bug_index}", cfg.project),
            failing_test_facets: FailingTestFacets { names, source, messages },
            methods,
        };
        return Ok(bug);
    }
    Err(CovrankError::Other(format!(
        "resampling budget exhausted for bug {bug_index}: inputs never distinguish buggy/fixed"
    )))
}

/// Full benchmark: `n_bugs` bugs, each one faulty method among distractors,
/// generated in parallel with per-bug RNG streams so the output is
/// independent of the worker count.
pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Dataset> {
    if cfg.n_bugs < 1 {
        return Err(CovrankError::Config("n_bugs must be >= 1".to_string()));
    }
    let bugs: Result<Vec<BugRecord>> = (0..cfg.n_bugs)
        .into_par_iter()
        .map(|i| generate_bug(cfg, i))
        .collect();
    Ok(Dataset::new(cfg.project.clone(), bugs?))
}
