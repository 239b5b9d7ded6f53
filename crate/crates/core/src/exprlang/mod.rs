//! A small arithmetic language for coefficient functions of `(t, x)`.
//!
//! Drift, volatility, profit rates and switching costs are all written as
//! expression strings over the time variable `t` and the state coordinates
//! `x1..xk`. The grammar is deliberately tiny:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := power (('*' | '/') power)*
//! power   := unary ('^' unary)*
//! unary   := '-' unary | primary
//! primary := number | 't' | 'x'<i> | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func    := exp | log | sqrt | abs | min | max | pow
//! ```
//!
//! Unary minus binds tighter than `^`, and every binary level is
//! left-associative, so `-x1^2` is `(-x1)^2` and `2^3^2` is `(2^3)^2`.
//! Numbers are decimal literals with an optional exponent (`1e-3`).
//!
//! Parsed expressions are compiled to a flat postfix program. Evaluation
//! follows the tree order exactly, without re-association, and reports
//! domain violations (log of a non-positive value, square root of a
//! negative value, division by zero, non-finite results) as errors.

mod eval;
mod lexer;
mod parser;

use std::fmt;

use thiserror::Error;

pub use eval::EvalError;

/// A variable reference inside an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Time,
    /// Zero-based state coordinate; printed as `x{i+1}`.
    State(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Exp | Func::Log | Func::Sqrt | Func::Abs => 1,
            Func::Min | Func::Max | Func::Pow => 2,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }
}

/// Abstract syntax tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Node::Num(_) => {}
            Node::Var(v) => f(*v),
            Node::Neg(a) => a.visit_vars(f),
            Node::Binary(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
        }
    }
}

impl fmt::Display for Node {
    /// Canonical form: every compound sub-expression is parenthesized, so the
    /// printed text re-parses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) if v.is_sign_negative() => write!(f, "(-{:?})", -v),
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(Var::Time) => f.write_str("t"),
            Node::Var(Var::State(i)) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{name}` at position {pos} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        pos: usize,
        expected: usize,
        found: usize,
    },
    #[error("state dimension must be positive")]
    ZeroDimension,
}

/// A parsed, validated and compiled expression.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    state_dim: usize,
    program: eval::Program,
    uses_time: bool,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.state_dim == other.state_dim && self.root == other.root
    }
}

impl Expr {
    /// Parses `source` for a state of dimension `state_dim`.
    pub fn parse(source: &str, state_dim: usize) -> Result<Expr, ParseError> {
        if state_dim == 0 {
            return Err(ParseError::ZeroDimension);
        }
        let root = parser::parse(source, state_dim)?;
        Ok(Self::build(root, state_dim))
    }

    /// Wraps an already-built tree, checking variable bounds.
    pub fn from_node(root: Node, state_dim: usize) -> Result<Expr, ParseError> {
        if state_dim == 0 {
            return Err(ParseError::ZeroDimension);
        }
        let mut bad = None;
        root.visit_vars(&mut |v| {
            if let Var::State(i) = v {
                if i >= state_dim && bad.is_none() {
                    bad = Some(i);
                }
            }
        });
        if let Some(i) = bad {
            return Err(ParseError::UnknownIdentifier {
                name: format!("x{}", i + 1),
                pos: 0,
            });
        }
        Ok(Self::build(root, state_dim))
    }

    /// Shorthand for a literal constant.
    pub fn constant(value: f64, state_dim: usize) -> Expr {
        Self::build(Node::Num(value), state_dim.max(1))
    }

    fn build(root: Node, state_dim: usize) -> Expr {
        let mut uses_time = false;
        root.visit_vars(&mut |v| uses_time |= v == Var::Time);
        let program = eval::Program::compile(&root);
        Expr {
            root,
            state_dim,
            program,
            uses_time,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// True when `t` appears anywhere in the expression.
    pub fn depends_on_time(&self) -> bool {
        self.uses_time
    }

    /// Returns the value if the expression is a bare literal.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    /// Evaluates at `(t, x)`. `x` must have the declared state dimension.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.state_dim {
            return Err(EvalError::Dimension {
                expected: self.state_dim,
                found: x.len(),
            });
        }
        self.program.run(t, x).map_err(|_| eval::diagnose(&self.root, t, x))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

/// Parses `source`; see [`Expr::parse`].
pub fn parse(source: &str, state_dim: usize) -> Result<Expr, ParseError> {
    Expr::parse(source, state_dim)
}

/// Evaluates `e` at `(t, x)`; see [`Expr::eval`].
pub fn eval(e: &Expr, t: f64, x: &[f64]) -> Result<f64, EvalError> {
    e.eval(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, k: usize, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        Expr::parse(src, k).unwrap().eval(t, x)
    }

    #[test]
    fn basic_examples() {
        assert_eq!(ev("x1 - 5", 1, 0.0, &[7.0]).unwrap(), 2.0);
        assert_eq!(ev("max(x1, 0) * exp(-t)", 1, 0.0, &[-3.0]).unwrap(), 0.0);
        assert_eq!(ev("2*t + x1", 1, 0.5, &[1.0]).unwrap(), 2.0);
        assert_eq!(ev("pow(x1, 2)", 1, 0.0, &[-3.0]).unwrap(), 9.0);
    }

    #[test]
    fn out_of_range_variable() {
        let err = Expr::parse("x2 + 1", 1).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                name: "x2".into(),
                pos: 0
            }
        );
        assert!(Expr::parse("x2 + 1", 2).is_ok());
        assert!(matches!(
            Expr::parse("x0", 3),
            Err(ParseError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn log_zero_is_domain_error() {
        let err = ev("log(x1)", 1, 0.0, &[0.0]).unwrap_err();
        match err {
            EvalError::Domain { expr, .. } => assert_eq!(expr, "log(x1)"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let err = ev("1 + sqrt(x1 - 2)", 1, 0.0, &[1.0]).unwrap_err();
        assert!(matches!(err, EvalError::Domain { ref expr, .. } if expr == "sqrt((x1 - 2.0))"));
        let err = ev("x1 / (t - 1)", 1, 1.0, &[1.0]).unwrap_err();
        assert!(matches!(err, EvalError::Domain { ref expr, .. } if expr == "(x1 / (t - 1.0))"));
        assert!(ev("exp(1000)", 1, 0.0, &[0.0]).is_err());
        assert!(ev("pow(-8, 0.5)", 1, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 1, 0.0, &[0.0]).unwrap(), 7.0);
        assert_eq!(ev("8 / 4 / 2", 1, 0.0, &[0.0]).unwrap(), 1.0);
        assert_eq!(ev("10 - 3 - 2", 1, 0.0, &[0.0]).unwrap(), 5.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 1, 0.0, &[0.0]).unwrap(), 64.0);
        assert_eq!(ev("-x1 ^ 2", 1, 0.0, &[3.0]).unwrap(), 9.0);
        assert_eq!(ev("2 * 3 ^ 2", 1, 0.0, &[0.0]).unwrap(), 18.0);
        assert_eq!(ev("-(1 - t)", 1, 1.0, &[0.0]).unwrap(), 0.0);
        assert_eq!(ev("1e-3 * 2E+3", 1, 0.0, &[0.0]).unwrap(), 2.0);
        assert_eq!(ev(".5 + 1.", 1, 0.0, &[0.0]).unwrap(), 1.5);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match Expr::parse("1 + * 2", 1) {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match Expr::parse("(x1 + 1", 1) {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Expr::parse("   ", 1), Err(ParseError::Empty)));
        assert!(matches!(Expr::parse("1 $ 2", 1), Err(ParseError::Syntax { pos: 2, .. })));
        assert!(matches!(Expr::parse("1e", 1), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("1e999", 1), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("exp + 1", 1), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("y", 1), Err(ParseError::UnknownIdentifier { .. })));
    }

    #[test]
    fn arity_mismatch() {
        assert!(matches!(
            Expr::parse("max(x1)", 1),
            Err(ParseError::Arity { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            Expr::parse("exp(1, 2)", 1),
            Err(ParseError::Arity { expected: 1, found: 2, .. })
        ));
    }

    #[test]
    fn canonical_printing() {
        let e = Expr::parse("x1-5", 1).unwrap();
        assert_eq!(e.to_string(), "(x1 - 5.0)");
        let e = Expr::parse("-max(x1,0)*exp(-t)", 1).unwrap();
        assert_eq!(e.to_string(), "((-max(x1, 0.0)) * exp((-t)))");
        assert!(e.depends_on_time());
        assert!(!Expr::parse("x1", 1).unwrap().depends_on_time());
        assert_eq!(Expr::parse("0.3", 1).unwrap().as_constant(), Some(0.3));
    }

    #[test]
    fn dimension_mismatch_on_eval() {
        let e = Expr::parse("x1", 1).unwrap();
        assert!(matches!(
            e.eval(0.0, &[1.0, 2.0]),
            Err(EvalError::Dimension { expected: 1, found: 2 })
        ));
    }
}
