use smallvec::SmallVec;
use thiserror::Error;

use super::{BinOp, Func, Node, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain violation in `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
    #[error("state vector has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Time,
    State(usize),
    Neg,
    Bin(BinOp),
    Call1(Func),
    Call2(Func),
}

/// Postfix form of a tree; operands are pushed in tree order.
#[derive(Debug, Clone)]
pub(crate) struct Program {
    code: Vec<Instr>,
}

impl Program {
    pub(crate) fn compile(root: &Node) -> Program {
        let mut code = Vec::new();
        emit(root, &mut code);
        Program { code }
    }

    /// Fast path. On failure the caller re-walks the tree to locate the
    /// offending sub-expression.
    pub(crate) fn run(&self, t: f64, x: &[f64]) -> Result<f64, ()> {
        let mut stack: SmallVec<[f64; 16]> = SmallVec::new();
        for ins in &self.code {
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Time => t,
                Instr::State(i) => x[i],
                Instr::Neg => -stack.pop().ok_or(())?,
                Instr::Bin(op) => {
                    let b = stack.pop().ok_or(())?;
                    let a = stack.pop().ok_or(())?;
                    binary(op, a, b).map_err(|_| ())?
                }
                Instr::Call1(f) => {
                    let a = stack.pop().ok_or(())?;
                    call(f, a, 0.0).map_err(|_| ())?
                }
                Instr::Call2(f) => {
                    let b = stack.pop().ok_or(())?;
                    let a = stack.pop().ok_or(())?;
                    call(f, a, b).map_err(|_| ())?
                }
            };
            stack.push(v);
        }
        stack.pop().ok_or(())
    }
}

fn emit(node: &Node, code: &mut Vec<Instr>) {
    match node {
        Node::Num(v) => code.push(Instr::Const(*v)),
        Node::Var(Var::Time) => code.push(Instr::Time),
        Node::Var(Var::State(i)) => code.push(Instr::State(*i)),
        Node::Neg(a) => {
            emit(a, code);
            code.push(Instr::Neg);
        }
        Node::Binary(op, a, b) => {
            emit(a, code);
            emit(b, code);
            code.push(Instr::Bin(*op));
        }
        Node::Call(f, args) => {
            for a in args {
                emit(a, code);
            }
            code.push(if args.len() == 1 {
                Instr::Call1(*f)
            } else {
                Instr::Call2(*f)
            });
        }
    }
}

fn finite(v: f64) -> Result<f64, &'static str> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err("non-finite result")
    }
}

fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, &'static str> {
    match op {
        BinOp::Add => finite(a + b),
        BinOp::Sub => finite(a - b),
        BinOp::Mul => finite(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err("division by zero")
            } else {
                finite(a / b)
            }
        }
        BinOp::Pow => finite(a.powf(b)),
    }
}

fn call(f: Func, a: f64, b: f64) -> Result<f64, &'static str> {
    match f {
        Func::Exp => finite(a.exp()),
        Func::Log => {
            if a <= 0.0 {
                Err("logarithm of a non-positive value")
            } else {
                Ok(a.ln())
            }
        }
        Func::Sqrt => {
            if a < 0.0 {
                Err("square root of a negative value")
            } else {
                Ok(a.sqrt())
            }
        }
        Func::Abs => Ok(a.abs()),
        Func::Min => Ok(if b < a { b } else { a }),
        Func::Max => Ok(if b > a { b } else { a }),
        Func::Pow => binary(BinOp::Pow, a, b),
    }
}

/// Tree walk that reports the innermost failing sub-expression.
pub(crate) fn diagnose(root: &Node, t: f64, x: &[f64]) -> EvalError {
    match walk(root, t, x) {
        Err(e) => e,
        Ok(_) => EvalError::Domain {
            expr: root.to_string(),
            reason: "malformed program",
        },
    }
}

fn walk(node: &Node, t: f64, x: &[f64]) -> Result<f64, EvalError> {
    let fail = |reason| EvalError::Domain {
        expr: node.to_string(),
        reason,
    };
    match node {
        Node::Num(v) => Ok(*v),
        Node::Var(Var::Time) => Ok(t),
        Node::Var(Var::State(i)) => Ok(x[*i]),
        Node::Neg(a) => Ok(-walk(a, t, x)?),
        Node::Binary(op, a, b) => {
            let (a, b) = (walk(a, t, x)?, walk(b, t, x)?);
            binary(*op, a, b).map_err(fail)
        }
        Node::Call(f, args) => {
            let a = walk(&args[0], t, x)?;
            let b = match args.get(1) {
                Some(n) => walk(n, t, x)?,
                None => 0.0,
            };
            call(*f, a, b).map_err(fail)
        }
    }
}
