//! Data-flow graph extraction: reaching definitions over the control-flow
//! graph of a mini program. Edge (a, b) means statement a defines a variable
//! that b uses with no intervening redefinition on some path.

use std::collections::BTreeSet;

use super::lang::{MiniProgram, Stmt};

/// Control-flow successors per flat statement id.
pub fn cfg_successors(prog: &MiniProgram) -> Vec<Vec<usize>> {
    let total = prog.statement_count();
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); total];
    // exit "continuation" None = falls off (only the final return has none).
    let mut id = 0usize;
    build_block(&prog.body, &mut id, None, &mut succ);
    succ.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Wire a block given the continuation statement id after the block.
/// Returns the id of the block's first statement, if the block is nonempty.
fn build_block(
    block: &[Stmt],
    id: &mut usize,
    cont: Option<usize>,
    succ: &mut [BTreeSet<usize>],
) -> Option<usize> {
    // First pass: compute each statement's own flat id and the id following
    // its subtree, so intra-block continuations are known.
    let mut heads = Vec::with_capacity(block.len());
    {
        let mut probe = *id;
        for stmt in block {
            heads.push(probe);
            probe += subtree_size(stmt);
        }
    }
    for (i, stmt) in block.iter().enumerate() {
        let stmt_id = heads[i];
        let next = heads.get(i + 1).copied().or(cont);
        *id = stmt_id + 1;
        match stmt {
            Stmt::Assign { .. } => {
                if let Some(n) = next {
                    succ[stmt_id].insert(n);
                }
            }
            Stmt::If { then_block, else_block, .. } => {
                let then_head = build_block(then_block, id, next, succ);
                let else_head = build_block(else_block, id, next, succ);
                match then_head {
                    Some(h) => {
                        succ[stmt_id].insert(h);
                    }
                    None => {
                        if let Some(n) = next {
                            succ[stmt_id].insert(n);
                        }
                    }
                }
                match else_head {
                    Some(h) => {
                        succ[stmt_id].insert(h);
                    }
                    None => {
                        if let Some(n) = next {
                            succ[stmt_id].insert(n);
                        }
                    }
                }
            }
            Stmt::While { block: body, .. } => {
                let body_head = build_block(body, id, Some(stmt_id), succ);
                if let Some(h) = body_head {
                    succ[stmt_id].insert(h);
                } else {
                    succ[stmt_id].insert(stmt_id); // empty body loops on itself
                }
                if let Some(n) = next {
                    succ[stmt_id].insert(n);
                }
            }
            Stmt::Return(_) => {}
        }
        *id = stmt_id + subtree_size(stmt);
    }
    heads.first().copied()
}

fn subtree_size(stmt: &Stmt) -> usize {
    match stmt {
        Stmt::Assign { .. } | Stmt::Return(_) => 1,
        Stmt::If { then_block, else_block, .. } => {
            1 + then_block.iter().map(subtree_size).sum::<usize>()
                + else_block.iter().map(subtree_size).sum::<usize>()
        }
        Stmt::While { block, .. } => 1 + block.iter().map(subtree_size).sum::<usize>(),
    }
}

/// Real data-flow edges via iterative reaching definitions.
pub fn build_dfg(prog: &MiniProgram) -> Vec<(usize, usize)> {
    let flat = prog.flatten();
    let n = flat.len();
    let succ = cfg_successors(prog);
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, ss) in succ.iter().enumerate() {
        for &b in ss {
            pred[b].push(a);
        }
    }

    // Reaching definition sets hold flat ids of defining statements.
    let mut inset: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut outset: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            let mut inp = BTreeSet::new();
            for &p in &pred[s] {
                inp.extend(outset[p].iter().copied());
            }
            let mut out = inp.clone();
            if let Some(var) = &flat[s].defines {
                out.retain(|&d| flat[d].defines.as_ref() != Some(var));
                out.insert(s);
            }
            if inp != inset[s] || out != outset[s] {
                inset[s] = inp;
                outset[s] = out;
                changed = true;
            }
        }
    }

    let mut edges = Vec::new();
    for (b, fb) in flat.iter().enumerate() {
        for used in &fb.uses {
            for &a in &inset[b] {
                if flat[a].defines.as_deref() == Some(used.as_str()) && a != b {
                    edges.push((a, b));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::lang::{BinOp, CmpOp, Cond, Expr};

    fn assign(var: &str, expr: Expr) -> Stmt {
        Stmt::Assign { var: var.into(), expr }
    }

    fn var(v: &str) -> Expr {
        Expr::Var(v.into())
    }

    fn konst(c: i64) -> Expr {
        Expr::Const(c)
    }

    fn bin(a: Expr, op: BinOp, b: Expr) -> Expr {
        Expr::Bin(Box::new(a), op, Box::new(b))
    }

    #[test]
    fn simple_def_use_edge() {
        let p = MiniProgram {
            params: vec![],
            body: vec![
                assign("x", konst(1)),
                assign("y", bin(var("x"), BinOp::Add, konst(1))),
                Stmt::Return(var("y")),
            ],
        };
        let edges = build_dfg(&p);
        assert!(edges.contains(&(0, 1)));
        assert!(edges.contains(&(1, 2)));
    }

    #[test]
    fn killed_definition_produces_no_edge() {
        let p = MiniProgram {
            params: vec![],
            body: vec![
                assign("x", konst(1)),
                assign("x", konst(2)),
                assign("y", var("x")),
                Stmt::Return(var("y")),
            ],
        };
        let edges = build_dfg(&p);
        assert!(edges.contains(&(1, 2)));
        assert!(!edges.contains(&(0, 2)));
    }

    #[test]
    fn branch_merges_keep_both_definitions() {
        let p = MiniProgram {
            params: vec!["a".into()],
            body: vec![
                Stmt::If {
                    cond: Cond { left: var("a"), op: CmpOp::Gt, right: konst(0) }, // 0
                    then_block: vec![assign("x", konst(1))],                       // 1
                    else_block: vec![assign("x", konst(2))],                       // 2
                },
                Stmt::Return(var("x")), // 3
            ],
        };
        let edges = build_dfg(&p);
        assert!(edges.contains(&(1, 3)));
        assert!(edges.contains(&(2, 3)));
    }

    #[test]
    fn fig4_dfg_contains_condition_and_return_chains() {
        let p = crate::synth::lang::tests::fig4_program(4);
        let edges = build_dfg(&p);
        // i defined at stmt 0 feeds the outer condition (stmt 3).
        assert!(edges.contains(&(0, 3)));
        // m chain: every m update reaches the return through stmt 8/9.
        assert!(edges.contains(&(2, 5)));
        assert!(edges.contains(&(5, 9)));
        assert!(edges.contains(&(6, 9)));
        assert!(edges.contains(&(7, 9)));
        // i = m + 1 (stmt 8) is dead for the return value.
        assert!(!edges.contains(&(8, 9)));
    }

    #[test]
    fn loop_body_reaches_its_own_condition() {
        let p = MiniProgram {
            params: vec!["n".into()],
            body: vec![
                assign("i", konst(0)), // 0
                Stmt::While {
                    cond: Cond { left: var("i"), op: CmpOp::Lt, right: var("n") }, // 1
                    block: vec![assign("i", bin(var("i"), BinOp::Add, konst(1)))], // 2
                },
                Stmt::Return(var("i")), // 3
            ],
        };
        let edges = build_dfg(&p);
        assert!(edges.contains(&(0, 1)));
        assert!(edges.contains(&(2, 1))); // back edge def reaches condition
        assert!(edges.contains(&(2, 3)));
        assert!(!edges.contains(&(2, 2)), "self edges excluded");
        assert!(edges.contains(&(0, 3))); // zero-iteration path
    }

    /// Brute-force oracle: a def-use pair (a,b) is an edge iff some CFG path
    /// from a to b (with bounded revisits) has no intervening redefinition.
    fn oracle_dfg(p: &MiniProgram) -> Vec<(usize, usize)> {
        let flat = p.flatten();
        let succ = cfg_successors(p);
        let n = flat.len();
        let mut edges = Vec::new();
        for a in 0..n {
            let Some(var) = flat[a].defines.clone() else { continue };
            // DFS from a's successors; stop at redefinitions of var.
            let mut reached = vec![0u8; n];
            let mut stack: Vec<usize> = succ[a].clone();
            while let Some(s) = stack.pop() {
                if reached[s] >= 2 {
                    continue;
                }
                reached[s] += 1;
                if s != a && flat[s].uses.contains(&var) {
                    edges.push((a, s));
                }
                if flat[s].defines.as_ref() == Some(&var) {
                    continue; // killed
                }
                for &nx in &succ[s] {
                    stack.push(nx);
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    #[test]
    fn reaching_definitions_matches_path_oracle() {
        let progs = vec![
            crate::synth::lang::tests::fig4_program(4),
            MiniProgram {
                params: vec!["n".into()],
                body: vec![
                    assign("i", konst(0)),
                    assign("s", konst(0)),
                    Stmt::While {
                        cond: Cond { left: var("i"), op: CmpOp::Lt, right: var("n") },
                        block: vec![
                            assign("s", bin(var("s"), BinOp::Add, var("i"))),
                            assign("i", bin(var("i"), BinOp::Add, konst(1))),
                        ],
                    },
                    Stmt::Return(var("s")),
                ],
            },
        ];
        for p in progs {
            let mut got = build_dfg(&p);
            let mut want = oracle_dfg(&p);
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }
}
