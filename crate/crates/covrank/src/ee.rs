//! Error-exhibiting line detection, EE cell marking, and the test-case
//! ordering pass that together turn a coverage matrix into an enhanced one.

use serde::{Deserialize, Serialize};

use crate::dataset::{MethodRecord, TestRecord};
use crate::error::{CovrankError, Result};
use crate::matrix::CoverageMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EeSource {
    FrameMatch,
    ExecPathFallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EeResolution {
    pub test_id: String,
    pub stmt_id: Option<usize>,
    pub source: EeSource,
}

/// Scan the failing test's stack frames in order for the first frame naming
/// this method; its line picks the EE statement. No match falls back to the
/// last statement of the execution path.
pub fn resolve_ee(method: &MethodRecord, test: &TestRecord) -> Result<EeResolution> {
    if !test.is_failing() {
        return Err(CovrankError::invariant(
            format!("test {}", test.test_id),
            "EE resolution requested for a passing test".to_string(),
        ));
    }
    if let Some(err) = &test.error {
        for frame in &err.frames {
            if frame.method == method.method_id {
                if let Some(stmt) = method.statement_at_line(frame.line) {
                    return Ok(EeResolution {
                        test_id: test.test_id.clone(),
                        stmt_id: Some(stmt),
                        source: EeSource::FrameMatch,
                    });
                }
                // Frame line matches no statement: keep scanning, then fall
                // back to the execution path.
            }
        }
    }
    match test.exec_path.last() {
        Some(&stmt) => Ok(EeResolution {
            test_id: test.test_id.clone(),
            stmt_id: Some(stmt),
            source: EeSource::ExecPathFallback,
        }),
        None => Err(CovrankError::invariant(
            format!("test {}", test.test_id),
            "failing test has an empty execution path; EE unresolvable".to_string(),
        )),
    }
}

/// Set cell[i][j] = -1 for each resolved failing test j with EE statement i.
/// All other cells are untouched. A resolution may mark a 0 cell (frame line
/// outside the covered set); the mark still applies.
pub fn mark_ee(
    matrix: &CoverageMatrix,
    method: &MethodRecord,
    resolutions: &[EeResolution],
) -> Result<CoverageMatrix> {
    let mut out = matrix.clone();
    for res in resolutions {
        let col = method
            .tests
            .iter()
            .position(|t| t.test_id == res.test_id)
            .ok_or_else(|| {
                CovrankError::invariant(
                    "mark_ee",
                    format!("resolution names unknown test {}", res.test_id),
                )
            })?;
        if !method.tests[col].is_failing() {
            return Err(CovrankError::invariant(
                "mark_ee",
                format!("resolution targets passing test {}", res.test_id),
            ));
        }
        if let Some(stmt) = res.stmt_id {
            if stmt >= out.rows {
                return Err(CovrankError::invariant(
                    "mark_ee",
                    format!("EE statement {stmt} out of range"),
                ));
            }
            out.set(stmt, col, -1);
        }
    }
    out.validate()?;
    Ok(out)
}

/// Resolve and mark every failing test of the method in one step.
pub fn enhance_matrix(matrix: &CoverageMatrix, method: &MethodRecord) -> Result<CoverageMatrix> {
    let mut resolutions = Vec::new();
    for t in method.tests.iter().filter(|t| t.is_failing()) {
        resolutions.push(resolve_ee(method, t)?);
    }
    mark_ee(matrix, method, &resolutions)
}

/// Experimental row-level variant, off by default: each resolved EE row gets
/// -1 across all failing-test columns instead of a single cell.
pub fn mark_ee_row_level(
    matrix: &CoverageMatrix,
    method: &MethodRecord,
    resolutions: &[EeResolution],
) -> Result<CoverageMatrix> {
    let mut out = matrix.clone();
    for res in resolutions {
        let Some(stmt) = res.stmt_id else { continue };
        for (col, t) in method.tests.iter().enumerate() {
            if t.is_failing() {
                out.set(stmt, col, -1);
            }
        }
    }
    // Row-level marking can place several -1 in a column only if several EE
    // rows exist; the single-mark column invariant is deliberately not
    // enforced for this experimental variant.
    Ok(out)
}

// Column facts used by the ordering rules, all over *original* column indices.

fn last_one_row(matrix: &CoverageMatrix, col: usize) -> Option<usize> {
    (0..matrix.rows).rev().find(|&i| matrix.get(i, col) == 1)
}

fn ones_count(matrix: &CoverageMatrix, col: usize) -> usize {
    (0..matrix.rows).filter(|&i| matrix.get(i, col) == 1).count()
}

fn shared_ones(matrix: &CoverageMatrix, a: usize, b: usize) -> usize {
    (0..matrix.rows)
        .filter(|&i| matrix.get(i, a) == 1 && matrix.get(i, b) == 1)
        .count()
}

/// Tie-break: prefer the column whose last 1 lies at the later statement,
/// then the lower original index. `better(a, b)` says whether a beats b.
fn tie_better(matrix: &CoverageMatrix, a: usize, b: usize) -> bool {
    let la = last_one_row(matrix, a).map(|v| v as i64).unwrap_or(-1);
    let lb = last_one_row(matrix, b).map(|v| v as i64).unwrap_or(-1);
    if la != lb {
        return la > lb;
    }
    a < b
}

fn select_best<F: Fn(usize) -> i64>(
    matrix: &CoverageMatrix,
    remaining: &[usize],
    key: F,
) -> usize {
    let mut best = remaining[0];
    let mut best_key = key(best);
    for &c in &remaining[1..] {
        let k = key(c);
        if k > best_key || (k == best_key && tie_better(matrix, c, best)) {
            best = c;
            best_key = k;
        }
    }
    best
}

fn remove(remaining: &mut Vec<usize>, col: usize) {
    let pos = remaining.iter().position(|&c| c == col).unwrap();
    remaining.remove(pos);
}

/// Test-case ordering. Failing tests (columns with -1) are selected first,
/// seeded by the column whose -1 row is latest, chained by same-row -1s; then
/// passing tests are selected by most 1s and chained by most shared 1-rows
/// with the previously selected column. Only `col_order` changes.
pub fn order_tests(matrix: &CoverageMatrix) -> CoverageMatrix {
    let mut remaining: Vec<usize> = (0..matrix.cols).collect();
    let mut order: Vec<usize> = Vec::with_capacity(matrix.cols);

    while !remaining.is_empty() {
        let has_minus = remaining.iter().any(|&c| matrix.has_ee(c));
        if has_minus {
            let candidates: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&c| matrix.has_ee(c))
                .collect();
            let mut sel = select_best(matrix, &candidates, |c| {
                matrix.ee_row(c).unwrap() as i64
            });
            let row = matrix.ee_row(sel).unwrap();
            remove(&mut remaining, sel);
            order.push(sel);
            loop {
                let same_row: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&c| matrix.ee_row(c) == Some(row))
                    .collect();
                if same_row.is_empty() {
                    break;
                }
                sel = select_best(matrix, &same_row, |_| 0);
                remove(&mut remaining, sel);
                order.push(sel);
            }
        } else {
            let all: Vec<usize> = remaining.clone();
            let mut sel = select_best(matrix, &all, |c| ones_count(matrix, c) as i64);
            remove(&mut remaining, sel);
            order.push(sel);
            loop {
                if remaining.is_empty() {
                    break;
                }
                let best_overlap = remaining
                    .iter()
                    .map(|&c| shared_ones(matrix, sel, c))
                    .max()
                    .unwrap();
                if best_overlap == 0 {
                    break;
                }
                let prev = sel;
                sel = select_best(matrix, &remaining, |c| shared_ones(matrix, prev, c) as i64);
                remove(&mut remaining, sel);
                order.push(sel);
            }
        }
    }

    let mut out = matrix.clone();
    out.col_order = order;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ErrorMessage, MethodRecord, Outcome, StackFrame, TestRecord};
    use crate::matrix::{build_spectrum_matrix, CoverageMatrix, MatrixKind};

    fn test(id: &str, outcome: Outcome, covered: &[usize], error: Option<ErrorMessage>) -> TestRecord {
        TestRecord {
            test_id: id.into(),
            outcome,
            covered: covered.to_vec(),
            exec_path: covered.to_vec(),
            error,
        }
    }

    fn frames_error(frames: Vec<StackFrame>) -> Option<ErrorMessage> {
        Some(ErrorMessage {
            message: "boom".into(),
            frames,
        })
    }

    fn get_paint_method() -> MethodRecord {
        // Hand-built fixture: method getPaint with a statement at line 128.
        let mut m = crate::dataset::test_support::tiny_method();
        m.method_id = "getPaint".into();
        m.statements[0].line = 126;
        m.statements[1].line = 128;
        m.statements[2].line = 130;
        m.tests = vec![
            test("t_pass", Outcome::Pass, &[0, 1, 2], None),
            test(
                "t_fail",
                Outcome::Fail,
                &[0, 1, 2],
                frames_error(vec![
                    StackFrame {
                        class: "IllegalArgumentException".into(),
                        method: "checkArg".into(),
                        line: 11,
                    },
                    StackFrame {
                        class: "GrayPaintScale".into(),
                        method: "getPaint".into(),
                        line: 128,
                    },
                ]),
            ),
        ];
        m
    }

    #[test]
    fn frame_match_resolves_line_128() {
        let m = get_paint_method();
        let res = resolve_ee(&m, &m.tests[1]).unwrap();
        assert_eq!(res.stmt_id, Some(1));
        assert_eq!(res.source, EeSource::FrameMatch);
    }

    #[test]
    fn no_matching_frame_falls_back_to_exec_path() {
        let mut m = get_paint_method();
        m.tests[1].error = frames_error(vec![StackFrame {
            class: "Other".into(),
            method: "somewhereElse".into(),
            line: 5,
        }]);
        m.tests[1].exec_path = vec![0, 1, 2];
        let res = resolve_ee(&m, &m.tests[1]).unwrap();
        assert_eq!(res.stmt_id, Some(2));
        assert_eq!(res.source, EeSource::ExecPathFallback);
    }

    #[test]
    fn third_frame_match_wins_when_earlier_frames_miss() {
        let mut m = get_paint_method();
        m.tests[1].error = frames_error(vec![
            StackFrame {
                class: "A".into(),
                method: "other1".into(),
                line: 1,
            },
            StackFrame {
                class: "B".into(),
                method: "other2".into(),
                line: 2,
            },
            StackFrame {
                class: "GrayPaintScale".into(),
                method: "getPaint".into(),
                line: 126,
            },
        ]);
        let res = resolve_ee(&m, &m.tests[1]).unwrap();
        assert_eq!(res.stmt_id, Some(0));
        assert_eq!(res.source, EeSource::FrameMatch);
    }

    #[test]
    fn passing_test_rejected() {
        let m = get_paint_method();
        assert!(resolve_ee(&m, &m.tests[0]).is_err());
    }

    #[test]
    fn mark_ee_sets_only_named_cells() {
        let m = get_paint_method();
        let spec = build_spectrum_matrix(&m);
        let res = vec![resolve_ee(&m, &m.tests[1]).unwrap()];
        let marked = mark_ee(&spec, &m, &res).unwrap();
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                if i == 1 && j == 1 {
                    assert_eq!(marked.get(i, j), -1);
                } else {
                    assert_eq!(marked.get(i, j), spec.get(i, j));
                }
            }
        }
        // Empty resolution list leaves the matrix unchanged.
        assert_eq!(mark_ee(&spec, &m, &[]).unwrap(), spec);
    }

    #[test]
    fn mark_ee_may_overwrite_uncovered_cell() {
        let mut m = get_paint_method();
        m.tests[1].covered = vec![0, 2];
        m.tests[1].exec_path = vec![0, 2];
        let spec = build_spectrum_matrix(&m);
        assert_eq!(spec.get(1, 1), 0);
        let res = vec![resolve_ee(&m, &m.tests[1]).unwrap()];
        // Frame still names line 128 -> stmt 1, not in the covered set.
        assert_eq!(res[0].stmt_id, Some(1));
        let marked = mark_ee(&spec, &m, &res).unwrap();
        assert_eq!(marked.get(1, 1), -1);
    }

    /// Ordering fixture: 12 statements, two failing tests whose EE
    /// marks sit at the line-13 row (index 6) and the line-(10-11) row
    /// (index 5); the line-13 mark is latest so that test is ordered first.
    pub(crate) fn two_failing_matrix() -> CoverageMatrix {
        let rows = 12;
        // Columns: t9 (fail, EE at row 6), t33 (fail, EE at row 5), two broad
        // passing tests, one narrow passing test, one empty test.
        let cols_spec: Vec<(Vec<usize>, Option<usize>)> = vec![
            (vec![0, 2, 3, 5, 6, 7, 8, 9, 10, 11], Some(6)), // t9
            (vec![0, 2, 3, 5, 6], Some(5)),                  // t33
            (vec![0, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], None),
            (vec![0, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], None),
            (vec![], None),
            (vec![], None),
        ];
        let n = cols_spec.len();
        let mut cells = vec![0i8; rows * n];
        for (j, (ones, ee)) in cols_spec.iter().enumerate() {
            for &i in ones {
                cells[i * n + j] = 1;
            }
            if let Some(i) = ee {
                cells[i * n + j] = -1;
            }
        }
        CoverageMatrix::new(rows, n, cells, MatrixKind::Spectrum).unwrap()
    }

    #[test]
    fn failing_tests_ordered_first() {
        let m = two_failing_matrix();
        let ordered = order_tests(&m);
        assert_eq!(ordered.col_order[0], 0, "t9 first: its -1 row is latest");
        assert_eq!(ordered.col_order[1], 1, "t33 second");
        // Cells untouched.
        assert_eq!(ordered.cells, m.cells);
    }

    #[test]
    fn no_failing_identical_columns_preserve_order() {
        // Identical columns: every selection is a tie broken by lowest index.
        let m = CoverageMatrix::new(2, 3, vec![1, 1, 1, 0, 0, 0], MatrixKind::Spectrum).unwrap();
        let ordered = order_tests(&m);
        assert_eq!(ordered.col_order, vec![0, 1, 2]);
    }

    #[test]
    fn ordering_is_idempotent() {
        let m = two_failing_matrix();
        let once = order_tests(&m);
        let twice = order_tests(&once);
        assert_eq!(once.col_order, twice.col_order);
    }
}
