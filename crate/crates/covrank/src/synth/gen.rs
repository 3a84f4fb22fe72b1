//! Random program generation, fault injection, and the mutator set used for
//! mutation-based matrices.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CovrankError, Result};

use super::lang::{interpret, BinOp, CmpOp, Cond, Expr, MiniProgram, Stmt};

const PARAM_NAMES: [&str; 3] = ["x", "y", "z"];
const LOCAL_NAMES: [&str; 6] = ["i", "j", "m", "s", "t", "u"];

/// SplitMix64 step, used to derive independent RNG streams from (seed, index).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    defined: Vec<String>,
}

impl<'r> Gen<'r> {
    fn rand_var(&mut self) -> String {
        self.defined[self.rng.gen_range(0..self.defined.len())].clone()
    }

    fn rand_expr(&mut self, depth: usize) -> Expr {
        let choice = self.rng.gen_range(0..10);
        if depth == 0 || choice < 3 {
            if choice % 2 == 0 && !self.defined.is_empty() {
                Expr::Var(self.rand_var())
            } else {
                Expr::Const(self.rng.gen_range(0..8))
            }
        } else {
            // Division is rare and always by a nonzero constant plus a
            // variable-free guard is not enforced; crashes are legal outcomes.
            let op = match self.rng.gen_range(0..10) {
                0..=3 => BinOp::Add,
                4..=6 => BinOp::Sub,
                7..=8 => BinOp::Mul,
                _ => BinOp::Div,
            };
            Expr::Bin(
                Box::new(self.rand_expr(depth - 1)),
                op,
                Box::new(self.rand_expr(depth - 1)),
            )
        }
    }

    fn rand_cond(&mut self) -> Cond {
        let op = match self.rng.gen_range(0..6) {
            0 => CmpOp::Lt,
            1 => CmpOp::Le,
            2 => CmpOp::Gt,
            3 => CmpOp::Ge,
            4 => CmpOp::Eq,
            _ => CmpOp::Ne,
        };
        Cond {
            left: Expr::Var(self.rand_var()),
            op,
            right: self.rand_expr(1),
        }
    }

    fn rand_assign(&mut self) -> Stmt {
        let expr = self.rand_expr(2);
        let var = if self.rng.gen_bool(0.5) || self.defined.len() >= LOCAL_NAMES.len() + 3 {
            self.rand_var()
        } else {
            let fresh = LOCAL_NAMES
                .iter()
                .find(|n| !self.defined.iter().any(|d| d == **n));
            match fresh {
                Some(n) => {
                    self.defined.push(n.to_string());
                    n.to_string()
                }
                None => self.rand_var(),
            }
        };
        Stmt::Assign { var, expr }
    }
}

/// Deterministic random program with `size` statements (size in [5, 60]).
/// Programs of size >= 8 always contain at least one branching construct,
/// and the generator resamples until the all-zero input runs to a return.
pub fn generate_program(seed: u64, size: usize) -> MiniProgram {
    assert!((5..=60).contains(&size), "size must be in [5, 60]");
    for attempt in 0..200u64 {
        let mut rng = rng_for(seed, 0x70_000 + attempt);
        let prog = generate_candidate(&mut rng, size);
        let zeros = vec![0i64; prog.params.len()];
        if interpret(&prog, &zeros).result.is_ok() {
            return prog;
        }
    }
    // Resampling budget exhausted: fall back to a straight-line program that
    // cannot crash.
    let mut body: Vec<Stmt> = Vec::new();
    body.push(Stmt::Assign { var: "i".into(), expr: Expr::Var("x".into()) });
    for k in 1..size - 2 {
        body.push(Stmt::Assign {
            var: "i".into(),
            expr: Expr::Bin(
                Box::new(Expr::Var("i".into())),
                BinOp::Add,
                Box::new(Expr::Const(k as i64 % 5)),
            ),
        });
    }
    body.push(Stmt::Assign { var: "j".into(), expr: Expr::Var("i".into()) });
    body.push(Stmt::Return(Expr::Var("j".into())));
    MiniProgram { params: vec!["x".into(), "y".into()], body }
}

fn generate_candidate(rng: &mut ChaCha8Rng, size: usize) -> MiniProgram {
    let n_params = rng.gen_range(2..=3);
    let params: Vec<String> = PARAM_NAMES[..n_params].iter().map(|s| s.to_string()).collect();
    let mut g = Gen { rng, defined: params.clone() };

    let want_branch = size >= 8;
    let mut body: Vec<Stmt> = Vec::new();
    let mut remaining = size - 1; // reserve the return
    let mut have_branch = false;

    // Opening straight-line block so ties between fully-covered rows exist.
    let prefix = g.rng.gen_range(2..=3.min(remaining.saturating_sub(4)).max(2));
    for _ in 0..prefix.min(remaining.saturating_sub(1)) {
        body.push(g.rand_assign());
        remaining -= 1;
    }

    while remaining > 0 {
        let can_branch = remaining >= 4;
        let roll = g.rng.gen_range(0..10);
        if can_branch && (roll < 4 || (want_branch && !have_branch && remaining <= 7)) {
            // if/else consuming 1 + then + else statements
            let budget = (remaining - 1).min(6);
            let then_n = g.rng.gen_range(1..=budget.saturating_sub(1).max(1));
            let else_n = g.rng.gen_range(0..=(budget - then_n).min(3));
            let cond = g.rand_cond();
            // Fresh locals introduced inside an arm are not defined on the
            // other path; drop them from scope when the arm closes.
            let scope = g.defined.len();
            let then_block: Vec<Stmt> = (0..then_n).map(|_| g.rand_assign()).collect();
            g.defined.truncate(scope);
            let else_block: Vec<Stmt> = (0..else_n).map(|_| g.rand_assign()).collect();
            g.defined.truncate(scope);
            remaining -= 1 + then_n + else_n;
            body.push(Stmt::If { cond, then_block, else_block });
            have_branch = true;
        } else if can_branch && roll < 6 {
            // counted loop: ctr = 0; while (ctr < bound) { ...; ctr = ctr + 1 }
            let budget = (remaining - 2).min(4);
            let inner_n = g.rng.gen_range(0..=budget.saturating_sub(2));
            let ctr = "k".to_string();
            if !g.defined.contains(&ctr) {
                g.defined.push(ctr.clone());
            }
            body.push(Stmt::Assign { var: ctr.clone(), expr: Expr::Const(0) });
            let scope = g.defined.len();
            let mut block: Vec<Stmt> = (0..inner_n).map(|_| g.rand_assign()).collect();
            g.defined.truncate(scope);
            block.push(Stmt::Assign {
                var: ctr.clone(),
                expr: Expr::Bin(
                    Box::new(Expr::Var(ctr.clone())),
                    BinOp::Add,
                    Box::new(Expr::Const(1)),
                ),
            });
            let bound = g.rng.gen_range(1..5);
            body.push(Stmt::While {
                cond: Cond {
                    left: Expr::Var(ctr.clone()),
                    op: CmpOp::Lt,
                    right: Expr::Bin(
                        Box::new(Expr::Var(g.rand_var())),
                        BinOp::Add,
                        Box::new(Expr::Const(bound)),
                    ),
                },
                block,
            });
            remaining -= 2 + inner_n + 1;
            have_branch = true;
        } else {
            body.push(g.rand_assign());
            remaining -= 1;
        }
    }
    // Returning the sum of every in-scope variable keeps each top-level
    // assignment live, so injected faults are usually observable.
    let mut ret = Expr::Var(g.defined[0].clone());
    for v in &g.defined[1..] {
        ret = Expr::Bin(Box::new(ret), BinOp::Add, Box::new(Expr::Var(v.clone())));
    }
    body.push(Stmt::Return(ret));
    MiniProgram { params, body }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    WrongOperator,
    WrongVariable,
    WrongConstant,
    WrongComparison,
}

#[derive(Debug, Clone)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target_stmt: usize,
    pub detail: String,
}

/// Statement-id-directed rewriting. The callback sees each flat statement and
/// may replace it; used by both fault injection and mutation.
fn rewrite_block<F>(block: &[Stmt], id: &mut usize, f: &mut F) -> Vec<Stmt>
where
    F: FnMut(usize, &Stmt) -> Option<Stmt>,
{
    let mut out = Vec::with_capacity(block.len());
    for stmt in block {
        let stmt_id = *id;
        *id += 1;
        // Apply to the statement head first (condition/expr level), then
        // recurse into sub-blocks with the shared id counter.
        let replaced = f(stmt_id, stmt);
        let base = replaced.unwrap_or_else(|| stmt.clone());
        let rebuilt = match base {
            Stmt::If { cond, then_block, else_block } => {
                let tb = rewrite_block(&then_block, id, f);
                let eb = rewrite_block(&else_block, id, f);
                Stmt::If { cond, then_block: tb, else_block: eb }
            }
            Stmt::While { cond, block: b } => {
                let nb = rewrite_block(&b, id, f);
                Stmt::While { cond, block: nb }
            }
            other => other,
        };
        out.push(rebuilt);
    }
    out
}

pub fn rewrite_stmt<F>(prog: &MiniProgram, mut f: F) -> MiniProgram
where
    F: FnMut(usize, &Stmt) -> Option<Stmt>,
{
    let mut id = 0usize;
    MiniProgram {
        params: prog.params.clone(),
        body: rewrite_block(&prog.body, &mut id, &mut f),
    }
}

fn mutate_expr_op(e: &Expr, new_op: BinOp) -> Option<Expr> {
    match e {
        Expr::Bin(a, op, b) if *op != new_op => {
            Some(Expr::Bin(a.clone(), new_op, b.clone()))
        }
        _ => None,
    }
}

fn first_const_mut(e: &Expr, delta: i64) -> Option<Expr> {
    match e {
        Expr::Const(c) => Some(Expr::Const(c + delta)),
        Expr::Var(_) => None,
        Expr::Bin(a, op, b) => {
            if let Some(na) = first_const_mut(a, delta) {
                Some(Expr::Bin(Box::new(na), *op, b.clone()))
            } else {
                first_const_mut(b, delta).map(|nb| Expr::Bin(a.clone(), *op, Box::new(nb)))
            }
        }
    }
}

fn replace_first_var(e: &Expr, from: &str, to: &str) -> Option<Expr> {
    match e {
        Expr::Var(v) if v == from => Some(Expr::Var(to.to_string())),
        Expr::Var(_) | Expr::Const(_) => None,
        Expr::Bin(a, op, b) => {
            if let Some(na) = replace_first_var(a, from, to) {
                Some(Expr::Bin(Box::new(na), *op, b.clone()))
            } else {
                replace_first_var(b, from, to).map(|nb| Expr::Bin(a.clone(), *op, Box::new(nb)))
            }
        }
    }
}

fn next_cmp(op: CmpOp) -> CmpOp {
    match op {
        CmpOp::Lt => CmpOp::Le,
        CmpOp::Le => CmpOp::Gt,
        CmpOp::Gt => CmpOp::Ge,
        CmpOp::Ge => CmpOp::Eq,
        CmpOp::Eq => CmpOp::Ne,
        CmpOp::Ne => CmpOp::Lt,
    }
}

/// Apply a fault to the target statement, producing a program that differs
/// textually in exactly that statement. No-op rewrites are rejected.
pub fn inject_fault(prog: &MiniProgram, spec: &FaultSpec) -> Result<MiniProgram> {
    let mut applied = false;
    let mutated = rewrite_stmt(prog, |id, stmt| {
        if id != spec.target_stmt || applied {
            return None;
        }
        let new = apply_fault(stmt, spec);
        if new.is_some() {
            applied = true;
        }
        new
    });
    if !applied {
        return Err(CovrankError::invariant(
            "inject_fault",
            format!(
                "fault kind {:?} not applicable to statement {}",
                spec.kind, spec.target_stmt
            ),
        ));
    }
    let orig_flat = prog.flatten();
    let new_flat = mutated.flatten();
    let diffs: Vec<usize> = orig_flat
        .iter()
        .zip(&new_flat)
        .filter(|(a, b)| a.text != b.text)
        .map(|(a, _)| a.stmt_id)
        .collect();
    if diffs.is_empty() {
        return Err(CovrankError::invariant(
            "inject_fault",
            "no-op fault: mutated statement is textually identical".to_string(),
        ));
    }
    if diffs != vec![spec.target_stmt] {
        return Err(CovrankError::invariant(
            "inject_fault",
            format!("fault changed statements {diffs:?}, expected only {}", spec.target_stmt),
        ));
    }
    Ok(mutated)
}

fn apply_fault(stmt: &Stmt, spec: &FaultSpec) -> Option<Stmt> {
    match (spec.kind, stmt) {
        (FaultKind::WrongOperator, Stmt::Assign { var, expr }) => {
            let new_op = parse_binop(&spec.detail)?;
            mutate_expr_op(expr, new_op).map(|e| Stmt::Assign { var: var.clone(), expr: e })
        }
        (FaultKind::WrongConstant, Stmt::Assign { var, expr }) => {
            let delta: i64 = spec.detail.parse().ok()?;
            first_const_mut(expr, delta).map(|e| Stmt::Assign { var: var.clone(), expr: e })
        }
        (FaultKind::WrongVariable, Stmt::Assign { var, expr }) => {
            let (from, to) = spec.detail.split_once("->")?;
            replace_first_var(expr, from.trim(), to.trim())
                .map(|e| Stmt::Assign { var: var.clone(), expr: e })
        }
        (FaultKind::WrongComparison, Stmt::If { cond, then_block, else_block }) => {
            Some(Stmt::If {
                cond: mutate_cond(cond, &spec.detail)?,
                then_block: then_block.clone(),
                else_block: else_block.clone(),
            })
        }
        (FaultKind::WrongComparison, Stmt::While { cond, block }) => Some(Stmt::While {
            cond: mutate_cond(cond, &spec.detail)?,
            block: block.clone(),
        }),
        _ => None,
    }
}

fn mutate_cond(cond: &Cond, detail: &str) -> Option<Cond> {
    if let Some(rest) = detail.strip_prefix("const") {
        let delta: i64 = rest.trim().parse().ok()?;
        // Shift the first constant in the condition, e.g.
        // (`i < y + 4` vs the fixed `i < y + 7`).
        if let Some(right) = first_const_mut(&cond.right, delta) {
            return Some(Cond { left: cond.left.clone(), op: cond.op, right });
        }
        first_const_mut(&cond.left, delta)
            .map(|left| Cond { left, op: cond.op, right: cond.right.clone() })
    } else if detail == "op" {
        Some(Cond { left: cond.left.clone(), op: next_cmp(cond.op), right: cond.right.clone() })
    } else {
        None
    }
}

fn parse_binop(s: &str) -> Option<BinOp> {
    match s {
        "+" => Some(BinOp::Add),
        "-" => Some(BinOp::Sub),
        "*" => Some(BinOp::Mul),
        "/" => Some(BinOp::Div),
        _ => None,
    }
}

/// Whether the two programs disagree on any of a pool of random inputs.
fn observably_differs(a: &MiniProgram, b: &MiniProgram, rng: &mut ChaCha8Rng) -> bool {
    for _ in 0..40 {
        let inputs: Vec<i64> = (0..a.params.len()).map(|_| rng.gen_range(-4..10)).collect();
        if interpret(a, &inputs).result != interpret(b, &inputs).result {
            return true;
        }
    }
    false
}

/// Pick a random applicable fault for the program, trying statements until
/// one accepts a fault of a randomly chosen kind. Candidate faults that no
/// random input can observe are resampled; if every candidate is silent the
/// last applicable one is returned anyway.
pub fn random_fault(prog: &MiniProgram, rng: &mut ChaCha8Rng) -> Option<(FaultSpec, MiniProgram)> {
    let mut fallback = None;
    let flat = prog.flatten();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.shuffle(rng);
    // Bias toward earlier statements so tie-heavy straight-line faults occur.
    order.sort_by_key(|&i| if rng.gen_bool(0.55) { i } else { i + flat.len() });
    for &target in &order {
        let kinds = [
            FaultKind::WrongOperator,
            FaultKind::WrongVariable,
            FaultKind::WrongConstant,
            FaultKind::WrongComparison,
        ];
        let mut kinds = kinds.to_vec();
        kinds.shuffle(rng);
        for kind in kinds {
            let detail = match kind {
                FaultKind::WrongOperator => ["+", "-", "*", "/"][rng.gen_range(0..4)].to_string(),
                FaultKind::WrongConstant => {
                    let d = [1i64, -1, 2, 3][rng.gen_range(0..4)];
                    d.to_string()
                }
                FaultKind::WrongVariable => {
                    let uses = &flat[target].uses;
                    if uses.is_empty() {
                        continue;
                    }
                    let from = uses[rng.gen_range(0..uses.len())].clone();
                    // Parameters are defined on every path, so swapping to one
                    // keeps the defined-before-use invariant.
                    let candidates: Vec<&String> =
                        prog.params.iter().filter(|v| **v != from).collect();
                    if candidates.is_empty() {
                        continue;
                    }
                    let to = candidates[rng.gen_range(0..candidates.len())].clone();
                    format!("{from}->{to}")
                }
                FaultKind::WrongComparison => {
                    if rng.gen_bool(0.5) {
                        "op".to_string()
                    } else {
                        format!("const {}", [3i64, -3, 2][rng.gen_range(0..3)])
                    }
                }
            };
            let spec = FaultSpec { kind, target_stmt: target, detail };
            if let Ok(mutated) = inject_fault(prog, &spec) {
                if observably_differs(prog, &mutated, rng) {
                    return Some((spec, mutated));
                }
                fallback = Some((spec, mutated));
            }
        }
    }
    fallback
}

/// The mutator set for mutation-based matrices: arithmetic-operator
/// replacement, relational-operator replacement, constant +-1.
pub const MUTATORS: [&str; 3] = ["arith_op", "rel_op", "const_delta"];

/// All applicable mutants of the program as (stmt_id, operator, program).
pub fn enumerate_mutants(prog: &MiniProgram) -> Vec<(usize, String, MiniProgram)> {
    let total = prog.statement_count();
    let mut out = Vec::new();
    for stmt_id in 0..total {
        for op in MUTATORS {
            let mutated = rewrite_stmt(prog, |id, stmt| {
                if id != stmt_id {
                    return None;
                }
                match (op, stmt) {
                    ("arith_op", Stmt::Assign { var, expr }) => {
                        let new = match expr {
                            Expr::Bin(_, BinOp::Add, _) => mutate_expr_op(expr, BinOp::Sub),
                            Expr::Bin(_, _, _) => mutate_expr_op(expr, BinOp::Add),
                            _ => None,
                        };
                        new.map(|e| Stmt::Assign { var: var.clone(), expr: e })
                    }
                    ("rel_op", Stmt::If { cond, then_block, else_block }) => Some(Stmt::If {
                        cond: Cond {
                            left: cond.left.clone(),
                            op: next_cmp(cond.op),
                            right: cond.right.clone(),
                        },
                        then_block: then_block.clone(),
                        else_block: else_block.clone(),
                    }),
                    ("rel_op", Stmt::While { cond, block }) => Some(Stmt::While {
                        cond: Cond {
                            left: cond.left.clone(),
                            op: next_cmp(cond.op),
                            right: cond.right.clone(),
                        },
                        block: block.clone(),
                    }),
                    ("const_delta", Stmt::Assign { var, expr }) => first_const_mut(expr, 1)
                        .map(|e| Stmt::Assign { var: var.clone(), expr: e }),
                    ("const_delta", Stmt::Return(expr)) => {
                        first_const_mut(expr, 1).map(Stmt::Return)
                    }
                    _ => None,
                }
            });
            if mutated != *prog {
                out.push((stmt_id, op.to_string(), mutated));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_program(1, 8), generate_program(1, 8));
        assert_ne!(generate_program(1, 8), generate_program(2, 8));
    }

    #[test]
    fn generated_programs_have_declared_size_and_run_on_zeros() {
        for seed in 0..50 {
            for &size in &[5usize, 8, 12, 20] {
                let p = generate_program(seed, size);
                assert_eq!(p.statement_count(), size, "seed {seed} size {size}");
                let zeros = vec![0i64; p.params.len()];
                assert!(interpret(&p, &zeros).result.is_ok());
            }
        }
    }

    #[test]
    fn size_ge_8_contains_a_branch() {
        for seed in 0..1000 {
            let p = generate_program(seed, 10);
            let has_branch = p
                .flatten()
                .iter()
                .any(|f| f.text.starts_with("if ") || f.text.starts_with("while "));
            assert!(has_branch, "seed {seed} produced a branch-free program");
        }
    }

    #[test]
    fn fig4_comparison_fault_shape() {
        let fixed = crate::synth::lang::tests::fig4_program(7);
        let spec = FaultSpec {
            kind: FaultKind::WrongComparison,
            target_stmt: 3,
            detail: "const -3".to_string(),
        };
        let buggy = inject_fault(&fixed, &spec).unwrap();
        let flat = buggy.flatten();
        assert_eq!(flat[3].text, "if (i < y + 4) {");
        // Exactly one statement differs textually.
        let orig = fixed.flatten();
        let ndiff = orig
            .iter()
            .zip(&flat)
            .filter(|(a, b)| a.text != b.text)
            .count();
        assert_eq!(ndiff, 1);
    }

    #[test]
    fn inapplicable_fault_rejected() {
        let p = crate::synth::lang::tests::fig4_program(4);
        // Return statement accepts no operator fault.
        let spec = FaultSpec {
            kind: FaultKind::WrongOperator,
            target_stmt: 9,
            detail: "+".to_string(),
        };
        assert!(inject_fault(&p, &spec).is_err());
    }

    #[test]
    fn noop_fault_rejected() {
        let p = crate::synth::lang::tests::fig4_program(4);
        // Stmt 2 is `m = 5;` with no binary operator: WrongOperator no-op.
        let spec = FaultSpec {
            kind: FaultKind::WrongOperator,
            target_stmt: 2,
            detail: "+".to_string(),
        };
        assert!(inject_fault(&p, &spec).is_err());
    }

    #[test]
    fn most_injected_faults_change_some_outcome() {
        // Over generated (program, fault) pairs, at least 90% must change an
        // output for at least one of a pool of random inputs.
        let mut changed = 0;
        let mut total = 0;
        for seed in 0..100u64 {
            let p = generate_program(seed, 10);
            let mut rng = rng_for(seed, 999);
            let Some((_, buggy)) = random_fault(&p, &mut rng) else { continue };
            total += 1;
            let mut differs = false;
            for _ in 0..40 {
                let inputs: Vec<i64> =
                    (0..p.params.len()).map(|_| rng.gen_range(-4..10)).collect();
                if interpret(&p, &inputs).result != interpret(&buggy, &inputs).result {
                    differs = true;
                    break;
                }
            }
            if differs {
                changed += 1;
            }
        }
        assert!(total >= 80, "fault injection failed too often: {total}");
        assert!(
            changed as f64 >= 0.9 * total as f64,
            "only {changed}/{total} faults observable"
        );
    }

    #[test]
    fn mutants_touch_exactly_one_statement() {
        let p = crate::synth::lang::tests::fig4_program(4);
        let muts = enumerate_mutants(&p);
        assert!(!muts.is_empty());
        let orig = p.flatten();
        for (stmt_id, _, m) in &muts {
            let flat = m.flatten();
            let diffs: Vec<usize> = orig
                .iter()
                .zip(&flat)
                .filter(|(a, b)| a.text != b.text)
                .map(|(a, _)| a.stmt_id)
                .collect();
            assert_eq!(diffs, vec![*stmt_id]);
        }
    }
}
