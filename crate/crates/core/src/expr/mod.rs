//! Coefficient expressions.
//!
//! Market coefficients (`r`, `mu`, `sigma`, `F`) are plain infix expressions
//! over the time variable `t` and the factor coordinates `y1..ym` (`y` is an
//! alias for `y1` when `m = 1`). Expressions are parsed once, can be printed
//! back to text, differentiated symbolically, and compiled into a flat
//! [`Program`] for the hot loops of the solvers.

mod diff;
mod parser;
mod program;

use std::fmt;

pub use program::{Evaluator, Program};

/// Errors raised while parsing or evaluating an expression.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expression expects {expected} factor coordinate(s), got {found}")]
    Dimension { expected: usize, found: usize },
}

/// A variable of a coefficient expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// Zero-based factor coordinate; printed as `y{i+1}`.
    Y(usize),
}

impl Var {
    /// Parses `t`, `y1..ym` (and `y` when `dims == 1`).
    pub fn parse(name: &str, dims: usize) -> Option<Var> {
        match name {
            "t" => Some(Var::T),
            "y" if dims == 1 => Some(Var::Y(0)),
            _ => {
                let idx: usize = name.strip_prefix('y')?.parse().ok()?;
                if (1..=dims).contains(&idx) && !name[1..].starts_with('0') {
                    Some(Var::Y(idx - 1))
                } else {
                    None
                }
            }
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::Y(i) => write!(f, "y{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    /// Unchecked value; every domain violation comes out non-finite.
    #[inline]
    pub(crate) fn raw(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
            Func::Tanh => x.tanh(),
        }
    }

    pub(crate) fn apply(self, x: f64) -> Result<f64, ExprError> {
        let v = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => {
                if x <= 0.0 {
                    return Err(ExprError::Domain(format!("log of non-positive value {x}")));
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            Func::Abs => x.abs(),
            Func::Tanh => x.tanh(),
        };
        finite(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

impl BinOp {
    /// Unchecked value; every domain violation comes out non-finite.
    #[inline]
    pub(crate) fn raw(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => {
                if b.fract() == 0.0 && b.abs() <= 64.0 {
                    powi(a, b as i32)
                } else {
                    a.powf(b)
                }
            }
            BinOp::Min => a.min(b),
            BinOp::Max => a.max(b),
        }
    }

    pub(crate) fn apply(self, a: f64, b: f64) -> Result<f64, ExprError> {
        let v = match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if b == 0.0 {
                    return Err(ExprError::Domain("division by zero".into()));
                }
                a / b
            }
            BinOp::Pow => power(a, b)?,
            BinOp::Min => a.min(b),
            BinOp::Max => a.max(b),
        };
        finite(v)
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
            BinOp::Min | BinOp::Max => ATOM,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Min => "min",
            BinOp::Max => "max",
        }
    }
}

fn power(base: f64, exp: f64) -> Result<f64, ExprError> {
    if exp.fract() == 0.0 && exp.abs() <= 64.0 {
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::Domain("zero raised to a negative power".into()));
        }
        return Ok(powi(base, exp as i32));
    }
    if base < 0.0 {
        return Err(ExprError::Domain(format!(
            "negative base {base} with non-integer exponent {exp}"
        )));
    }
    if base == 0.0 && exp < 0.0 {
        return Err(ExprError::Domain("zero raised to a negative power".into()));
    }
    Ok(base.powf(exp))
}

/// Binary exponentiation; inlined so squaring costs one multiply.
#[inline]
fn powi(mut base: f64, n: i32) -> f64 {
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    loop {
        if e & 1 == 1 {
            acc *= base;
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base *= base;
    }
    if n < 0 {
        1.0 / acc
    } else {
        acc
    }
}

fn finite(v: f64) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain("non-finite intermediate result".into()))
    }
}

const ATOM: u8 = 5;
const NEG: u8 = 3;

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Unary(Func, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, t: f64, y: &[f64]) -> Result<f64, ExprError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var(Var::T) => Ok(t),
            Node::Var(Var::Y(i)) => Ok(y[*i]),
            Node::Neg(a) => Ok(-a.eval(t, y)?),
            Node::Unary(f, a) => f.apply(a.eval(t, y)?),
            Node::Binary(op, a, b) => op.apply(a.eval(t, y)?, b.eval(t, y)?),
        }
    }

    pub(crate) fn depends_on(&self, var: Var) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Unary(_, a) => a.depends_on(var),
            Node::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    fn max_factor_index(&self) -> Option<usize> {
        match self {
            Node::Const(_) | Node::Var(Var::T) => None,
            Node::Var(Var::Y(i)) => Some(*i),
            Node::Neg(a) | Node::Unary(_, a) => a.max_factor_index(),
            Node::Binary(_, a, b) => match (a.max_factor_index(), b.max_factor_index()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    fn map_vars(&self, f: &impl Fn(Var) -> Var) -> Node {
        match self {
            Node::Const(c) => Node::Const(*c),
            Node::Var(v) => Node::Var(f(*v)),
            Node::Neg(a) => Node::Neg(Box::new(a.map_vars(f))),
            Node::Unary(g, a) => Node::Unary(*g, Box::new(a.map_vars(f))),
            Node::Binary(op, a, b) => {
                Node::Binary(*op, Box::new(a.map_vars(f)), Box::new(b.map_vars(f)))
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => NEG,
            Node::Const(_) | Node::Var(_) | Node::Unary(..) => ATOM,
            Node::Neg(_) => NEG,
            Node::Binary(op, ..) => op.precedence(),
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` is the shortest representation that round-trips.
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "-{:?}", -c)
            }
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => {
                write!(f, "-")?;
                // The operand of a unary minus binds at least as tight as `^`,
                // so anything weaker needs parentheses.
                a.write_child(f, NEG + 1)
            }
            Node::Unary(func, a) => write!(f, "{}({a})", func.name()),
            Node::Binary(op @ (BinOp::Min | BinOp::Max), a, b) => {
                write!(f, "{}({a}, {b})", op.symbol())
            }
            Node::Binary(BinOp::Pow, a, b) => {
                a.write_child(f, ATOM)?;
                write!(f, "^")?;
                b.write_child(f, BinOp::Pow.precedence())
            }
            Node::Binary(op, a, b) => {
                let p = op.precedence();
                a.write_child(f, p)?;
                write!(f, " {} ", op.symbol())?;
                b.write_child(f, p + 1)
            }
        }
    }
}

/// A parsed coefficient expression over `(t, y1..ym)`.
///
/// Immutable after construction; evaluation is a pure function of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    root: Node,
    dims: usize,
}

impl CoefficientExpr {
    /// Parses `source` for a factor of dimension `dims`.
    pub fn parse(source: &str, dims: usize) -> Result<Self, ExprError> {
        let root = parser::parse(source, dims)?;
        Ok(CoefficientExpr { root, dims })
    }

    pub fn constant(value: f64, dims: usize) -> Self {
        CoefficientExpr {
            root: Node::Const(value),
            dims,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Evaluates the expression at `(t, y)`.
    pub fn evaluate(&self, t: f64, y: &[f64]) -> Result<f64, ExprError> {
        if y.len() != self.dims {
            return Err(ExprError::Dimension {
                expected: self.dims,
                found: y.len(),
            });
        }
        if !t.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(ExprError::Domain("non-finite argument".into()));
        }
        self.root.eval(t, y)
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn differentiate(&self, var: Var) -> CoefficientExpr {
        CoefficientExpr {
            root: diff::derivative(&self.root, var),
            dims: self.dims,
        }
    }

    /// True when the expression has no variables at all.
    pub fn is_constant(&self) -> bool {
        !self.root.depends_on(Var::T) && (0..self.dims).all(|i| !self.root.depends_on(Var::Y(i)))
    }

    pub fn depends_on(&self, var: Var) -> bool {
        self.root.depends_on(var)
    }

    /// Re-embeds a one-factor expression (written in `t`, `y`) as a function of
    /// coordinate `coord` of an `dims`-dimensional factor.
    pub fn embed_coordinate(&self, coord: usize, dims: usize) -> Result<Self, ExprError> {
        if let Some(max) = self.root.max_factor_index() {
            if max > 0 {
                return Err(ExprError::Dimension {
                    expected: 1,
                    found: max + 1,
                });
            }
        }
        if coord >= dims {
            return Err(ExprError::Dimension {
                expected: dims,
                found: coord + 1,
            });
        }
        let root = self.root.map_vars(&|v| match v {
            Var::T => Var::T,
            Var::Y(_) => Var::Y(coord),
        });
        Ok(CoefficientExpr { root, dims })
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
