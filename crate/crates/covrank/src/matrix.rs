//! Code coverage matrices: spectrum- and mutation-based, with the 1/0/-1 cell
//! domain and an explicit column ordering used by the enhancement passes.

use serde::{Deserialize, Serialize};

use crate::dataset::{MethodRecord, TestRecord};
use crate::error::{CovrankError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Spectrum,
    Mutation,
}

/// Dense statements-by-tests matrix. `cells` is row-major over the *original*
/// test order; `col_order` records the display/consumption permutation so EE
/// marking and ordering stay composable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<i8>,
    pub col_order: Vec<usize>,
    pub kind: MatrixKind,
}

impl CoverageMatrix {
    pub fn new(rows: usize, cols: usize, cells: Vec<i8>, kind: MatrixKind) -> Result<Self> {
        let m = CoverageMatrix {
            rows,
            cols,
            cells,
            col_order: (0..cols).collect(),
            kind,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.rows * self.cols {
            return Err(CovrankError::Shape(format!(
                "matrix cells length {} != {}x{}",
                self.cells.len(),
                self.rows,
                self.cols
            )));
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v = self.get(i, j);
                if !matches!(v, -1 | 0 | 1) {
                    return Err(CovrankError::invariant(
                        "coverage matrix",
                        format!("cell ({i},{j}) has value {v}, expected one of {{1,0,-1}}"),
                    ));
                }
            }
        }
        let mut seen = vec![false; self.cols];
        for &c in &self.col_order {
            if c >= self.cols || seen[c] {
                return Err(CovrankError::invariant(
                    "coverage matrix",
                    "col_order is not a permutation".to_string(),
                ));
            }
            seen[c] = true;
        }
        if self.col_order.len() != self.cols {
            return Err(CovrankError::invariant(
                "coverage matrix",
                "col_order length != cols".to_string(),
            ));
        }
        for j in 0..self.cols {
            let minus = (0..self.rows).filter(|&i| self.get(i, j) == -1).count();
            if minus > 1 {
                return Err(CovrankError::invariant(
                    "coverage matrix",
                    format!("column {j} holds {minus} EE marks, at most one allowed"),
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.cells[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: i8) {
        self.cells[row * self.cols + col] = v;
    }

    /// Cell at display position `pos` (after col_order is applied).
    #[inline]
    pub fn get_ordered(&self, row: usize, pos: usize) -> i8 {
        self.get(row, self.col_order[pos])
    }

    /// Row index of the column's EE mark, if any.
    pub fn ee_row(&self, col: usize) -> Option<usize> {
        (0..self.rows).find(|&i| self.get(i, col) == -1)
    }

    pub fn has_ee(&self, col: usize) -> bool {
        self.ee_row(col).is_some()
    }

    /// Rows of the matrix materialized in display order, {.,#,*} for {0,1,-1}.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            for pos in 0..self.cols {
                out.push(match self.get_ordered(i, pos) {
                    1 => '#',
                    -1 => '*',
                    _ => '.',
                });
            }
            out.push('\n');
        }
        out
    }
}

fn spectrum_cells(tests: &[TestRecord], m: usize) -> Vec<i8> {
    let n = tests.len();
    let mut cells = vec![0i8; m * n];
    for (j, t) in tests.iter().enumerate() {
        for &s in &t.covered {
            cells[s * n + j] = 1;
        }
    }
    cells
}

/// cell[i][j] = 1 iff statement i is covered by test j; identity column
/// order, no EE marks yet.
pub fn build_spectrum_matrix(method: &MethodRecord) -> CoverageMatrix {
    let m = method.num_statements();
    CoverageMatrix {
        rows: m,
        cols: method.tests.len(),
        cells: spectrum_cells(&method.tests, m),
        col_order: (0..method.tests.len()).collect(),
        kind: MatrixKind::Spectrum,
    }
}

/// One spectrum-style matrix per mutant, built from the mutant's re-executed
/// tests and tagged `Mutation`. Mutants keep their dataset order, which is
/// already grouped by stmt_id by the generator.
pub fn build_mutation_matrices(method: &MethodRecord) -> Result<Vec<(usize, CoverageMatrix)>> {
    let m = method.num_statements();
    let mut out = Vec::with_capacity(method.mutants.len());
    for mu in &method.mutants {
        if mu.stmt_id >= m {
            return Err(CovrankError::invariant(
                format!("mutant {}", mu.mutant_id),
                format!("references unknown stmt_id {}", mu.stmt_id),
            ));
        }
        out.push((
            mu.stmt_id,
            CoverageMatrix {
                rows: m,
                cols: mu.tests.len(),
                cells: spectrum_cells(&mu.tests, m),
                col_order: (0..mu.tests.len()).collect(),
                kind: MatrixKind::Mutation,
            },
        ));
    }
    Ok(out)
}
