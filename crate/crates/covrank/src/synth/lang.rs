//! Mini imperative language: integer variables, arithmetic, comparisons,
//! if/else, capped while loops, one trailing return. Programs exist to
//! exercise the coverage pipeline, so the interpreter records the executed
//! statement sequence and turns crashes into failure outcomes.

use std::collections::BTreeMap;

use crate::dataset::AstNode;

pub const LOOP_CAP: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn eval(&self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Const(i64),
    Var(String),
    Bin(Box<Expr>, BinOp, Box<Expr>),
}

impl Expr {
    pub fn text(&self) -> String {
        match self {
            Expr::Const(c) => c.to_string(),
            Expr::Var(v) => v.clone(),
            Expr::Bin(a, op, b) => format!("{} {} {}", a.text(), op.symbol(), b.text()),
        }
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Bin(a, _, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cond {
    pub left: Expr,
    pub op: CmpOp,
    pub right: Expr,
}

impl Cond {
    pub fn text(&self) -> String {
        format!("{} {} {}", self.left.text(), self.op.symbol(), self.right.text())
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        self.left.vars(out);
        self.right.vars(out);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Assign { var: String, expr: Expr },
    If { cond: Cond, then_block: Vec<Stmt>, else_block: Vec<Stmt> },
    While { cond: Cond, block: Vec<Stmt> },
    Return(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniProgram {
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
}

/// One flattened statement, id and line assigned in program (pre-)order.
#[derive(Debug, Clone)]
pub struct FlatStmt {
    pub stmt_id: usize,
    pub line: u32,
    pub text: String,
    /// Variable defined here (assignments only).
    pub defines: Option<String>,
    /// Variables read here.
    pub uses: Vec<String>,
}

impl MiniProgram {
    pub fn statement_count(&self) -> usize {
        count_block(&self.body)
    }

    /// Flatten to dense stmt_ids; line numbers start at 2 (line 1 is the
    /// method signature) and follow flat order, so they strictly increase.
    pub fn flatten(&self) -> Vec<FlatStmt> {
        let mut out = Vec::new();
        let mut id = 0usize;
        flatten_block(&self.body, &mut id, &mut out);
        out
    }

    pub fn signature_text(&self, name: &str) -> String {
        format!("int {}(int {}) {{", name, self.params.join(", int "))
    }

    /// AST with leaves carrying lexemes; the root holds the parameter list
    /// and body blocks.
    pub fn ast(&self, name: &str) -> AstNode {
        let mut children = vec![AstNode::leaf("name", name)];
        for p in &self.params {
            children.push(AstNode::leaf("param", p));
        }
        children.push(AstNode::inner("block", block_ast(&self.body)));
        AstNode::inner("method", children)
    }
}

fn count_block(block: &[Stmt]) -> usize {
    block
        .iter()
        .map(|s| match s {
            Stmt::Assign { .. } | Stmt::Return(_) => 1,
            Stmt::If { then_block, else_block, .. } => {
                1 + count_block(then_block) + count_block(else_block)
            }
            Stmt::While { block, .. } => 1 + count_block(block),
        })
        .sum()
}

fn flatten_block(block: &[Stmt], id: &mut usize, out: &mut Vec<FlatStmt>) {
    for stmt in block {
        let stmt_id = *id;
        *id += 1;
        let line = stmt_id as u32 + 2;
        match stmt {
            Stmt::Assign { var, expr } => {
                let mut uses = Vec::new();
                expr.vars(&mut uses);
                out.push(FlatStmt {
                        stmt_id,
                        line,
                        text: format!("{} = {};", var, expr.text()),
                        defines: Some(var.clone()),
                        uses,
                    });
            }
            Stmt::If { cond, then_block, else_block } => {
                let mut uses = Vec::new();
                cond.vars(&mut uses);
                out.push(FlatStmt {
                        stmt_id,
                        line,
                        text: format!("if ({}) {{", cond.text()),
                        defines: None,
                        uses,
                    });
                flatten_block(then_block, id, out);
                flatten_block(else_block, id, out);
            }
            Stmt::While { cond, block } => {
                let mut uses = Vec::new();
                cond.vars(&mut uses);
                out.push(FlatStmt {
                        stmt_id,
                        line,
                        text: format!("while ({}) {{", cond.text()),
                        defines: None,
                        uses,
                    });
                flatten_block(block, id, out);
            }
            Stmt::Return(expr) => {
                let mut uses = Vec::new();
                expr.vars(&mut uses);
                out.push(FlatStmt {
                        stmt_id,
                        line,
                        text: format!("return {};", expr.text()),
                        defines: None,
                        uses,
                    });
            }
        }
    }
}

fn block_ast(block: &[Stmt]) -> Vec<AstNode> {
    block
        .iter()
        .map(|s| match s {
            Stmt::Assign { var, expr } => AstNode::inner(
                "assign",
                vec![AstNode::leaf("var", var), expr_ast(expr)],
            ),
            Stmt::If { cond, then_block, else_block } => AstNode::inner(
                "if",
                vec![
                    cond_ast(cond),
                    AstNode::inner("then", block_ast(then_block)),
                    AstNode::inner("else", block_ast(else_block)),
                ],
            ),
            Stmt::While { cond, block } => AstNode::inner(
                "while",
                vec![cond_ast(cond), AstNode::inner("body", block_ast(block))],
            ),
            Stmt::Return(expr) => AstNode::inner("return", vec![expr_ast(expr)]),
        })
        .collect()
}

fn cond_ast(c: &Cond) -> AstNode {
    AstNode::inner(
        format!("cmp_{}", c.op.symbol()),
        vec![expr_ast(&c.left), expr_ast(&c.right)],
    )
}

fn expr_ast(e: &Expr) -> AstNode {
    match e {
        Expr::Const(c) => AstNode::leaf("const", c.to_string()),
        Expr::Var(v) => AstNode::leaf("var", v),
        Expr::Bin(a, op, b) => AstNode::inner(
            format!("binop_{}", op.symbol()),
            vec![expr_ast(a), expr_ast(b)],
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Crash {
    DivisionByZero { stmt_id: usize },
    IterationCap { stmt_id: usize },
}

impl Crash {
    pub fn stmt_id(&self) -> usize {
        match self {
            Crash::DivisionByZero { stmt_id } | Crash::IterationCap { stmt_id } => *stmt_id,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Crash::DivisionByZero { .. } => "ArithmeticError: division by zero".to_string(),
            Crash::IterationCap { .. } => "LoopError: iteration cap exceeded".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub result: Result<i64, Crash>,
    pub exec_path: Vec<usize>,
    /// Flat id of the return statement that produced the value, if any.
    pub return_stmt: Option<usize>,
}

enum Flow {
    Next,
    Returned(i64),
    Crashed(Crash),
}

/// Interpret the program, recording the flat-id execution path. Loop bodies
/// unroll in the path; division by zero and cap overruns crash at the
/// offending statement.
pub fn interpret(prog: &MiniProgram, inputs: &[i64]) -> Execution {
    assert_eq!(inputs.len(), prog.params.len(), "input arity mismatch");
    let mut env = BTreeMap::new();
    for (p, v) in prog.params.iter().zip(inputs) {
        env.insert(p.clone(), *v);
    }
    let mut path = Vec::new();
    let mut id = 0usize;
    let mut return_stmt = None;
    let flow = exec_block(&prog.body, &mut id, &mut env, &mut path, &mut return_stmt);
    let result = match flow {
        Flow::Returned(v) => Ok(v),
        Flow::Crashed(c) => Err(c),
        // Structural invariant: generated programs end in a return.
        Flow::Next => panic!("program fell off the end without returning"),
    };
    Execution {
        result,
        exec_path: path,
        return_stmt,
    }
}

fn eval_expr(e: &Expr, env: &BTreeMap<String, i64>, stmt_id: usize) -> Result<i64, Crash> {
    match e {
        Expr::Const(c) => Ok(*c),
        Expr::Var(v) => Ok(*env.get(v).expect("use before def")),
        Expr::Bin(a, op, b) => {
            let x = eval_expr(a, env, stmt_id)?;
            let y = eval_expr(b, env, stmt_id)?;
            match op {
                BinOp::Add => Ok(x.wrapping_add(y)),
                BinOp::Sub => Ok(x.wrapping_sub(y)),
                BinOp::Mul => Ok(x.wrapping_mul(y)),
                BinOp::Div => {
                    if y == 0 {
                        Err(Crash::DivisionByZero { stmt_id })
                    } else {
                        Ok(x.wrapping_div(y))
                    }
                }
            }
        }
    }
}

fn eval_cond(c: &Cond, env: &BTreeMap<String, i64>, stmt_id: usize) -> Result<bool, Crash> {
    let a = eval_expr(&c.left, env, stmt_id)?;
    let b = eval_expr(&c.right, env, stmt_id)?;
    Ok(c.op.eval(a, b))
}

fn exec_block(
    block: &[Stmt],
    id: &mut usize,
    env: &mut BTreeMap<String, i64>,
    path: &mut Vec<usize>,
    return_stmt: &mut Option<usize>,
) -> Flow {
    for stmt in block {
        let stmt_id = *id;
        *id += 1;
        match stmt {
            Stmt::Assign { var, expr } => {
                path.push(stmt_id);
                match eval_expr(expr, env, stmt_id) {
                    Ok(v) => {
                        env.insert(var.clone(), v);
                    }
                    Err(c) => return Flow::Crashed(c),
                }
            }
            Stmt::If { cond, then_block, else_block } => {
                path.push(stmt_id);
                let then_start = *id;
                let then_count = count_block(then_block);
                let else_start = then_start + then_count;
                let else_count = count_block(else_block);
                *id = else_start + else_count;
                let taken = match eval_cond(cond, env, stmt_id) {
                    Ok(b) => b,
                    Err(c) => return Flow::Crashed(c),
                };
                let (sub, mut sub_id) = if taken {
                    (then_block, then_start)
                } else {
                    (else_block, else_start)
                };
                match exec_block(sub, &mut sub_id, env, path, return_stmt) {
                    Flow::Next => {}
                    other => return other,
                }
            }
            Stmt::While { cond, block } => {
                let body_start = *id;
                let body_count = count_block(block);
                *id = body_start + body_count;
                let mut iters = 0u32;
                loop {
                    path.push(stmt_id);
                    let taken = match eval_cond(cond, env, stmt_id) {
                        Ok(b) => b,
                        Err(c) => return Flow::Crashed(c),
                    };
                    if !taken {
                        break;
                    }
                    iters += 1;
                    if iters > LOOP_CAP {
                        return Flow::Crashed(Crash::IterationCap { stmt_id });
                    }
                    let mut sub_id = body_start;
                    match exec_block(block, &mut sub_id, env, path, return_stmt) {
                        Flow::Next => {}
                        other => return other,
                    }
                }
            }
            Stmt::Return(expr) => {
                path.push(stmt_id);
                *return_stmt = Some(stmt_id);
                return match eval_expr(expr, env, stmt_id) {
                    Ok(v) => Flow::Returned(v),
                    Err(c) => Flow::Crashed(c),
                };
            }
        }
    }
    Flow::Next
}
