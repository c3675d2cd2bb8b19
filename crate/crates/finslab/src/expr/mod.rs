//! Scalar expressions on charts of the tangent bundle.
//!
//! Expressions are immutable trees over the variables `x1..xn`, `y1..yn`,
//! hash-consed into a global store so that structurally equal subtrees share
//! one node. All partial derivatives used by the geometry and holonomy
//! modules are produced here by exact AST differentiation, memoized per
//! `(expression, variable)` pair.

mod parse;
mod print;

pub use parse::{parse_expr, ParseError};

use num_rational::Rational64;
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

/// Which block of chart variables a [`Var`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
}

/// A chart variable, `index` is zero-based (`x1` is `Var { axis: X, index: 0 }`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub axis: Axis,
    pub index: usize,
}

impl Var {
    pub fn x(index: usize) -> Self {
        Var { axis: Axis::X, index }
    }

    pub fn y(index: usize) -> Self {
        Var { axis: Axis::Y, index }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.axis {
            Axis::X => 'x',
            Axis::Y => 'y',
        };
        write!(f, "{}{}", c, self.index + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Node {
    Const(u64), // f64 bits, so the node is Eq + Hash
    Var(Var),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Rational64),
    Sqrt(Expr),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Log(Expr),
}

/// Handle to a hash-consed expression node. Copyable; structural equality
/// coincides with handle equality because construction interns every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(u32);

#[derive(Default)]
struct Store {
    nodes: Vec<Node>,
    index: HashMap<Node, u32>,
    deriv_memo: HashMap<(Expr, Var), Expr>,
}

static STORE: Lazy<Mutex<Store>> = Lazy::new(|| Mutex::new(Store::default()));

fn with_store<R>(f: impl FnOnce(&mut Store) -> R) -> R {
    let mut guard = STORE.lock().unwrap();
    f(&mut guard)
}

impl Store {
    fn intern(&mut self, node: Node) -> Expr {
        if let Some(&id) = self.index.get(&node) {
            return Expr(id);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.index.insert(node, id);
        Expr(id)
    }

    fn node(&self, e: Expr) -> Node {
        self.nodes[e.0 as usize]
    }

    fn constant(&mut self, v: f64) -> Expr {
        self.intern(Node::Const(v.to_bits()))
    }

    fn const_value(&self, e: Expr) -> Option<f64> {
        match self.node(e) {
            Node::Const(bits) => Some(f64::from_bits(bits)),
            _ => None,
        }
    }

    // Smart constructors: constant folding plus the identities
    // 0+e, e+0, e-0, 0-e, 0*e, 1*e, e*0, e*1, 0/e, e/1, e^0, e^1, -(-e).
    fn add(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => self.intern(Node::Add(a, b)),
        }
    }

    fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        if a == b {
            return self.constant(0.0);
        }
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.constant(x - y),
            (Some(x), _) if x == 0.0 => self.neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => self.intern(Node::Sub(a, b)),
        }
    }

    fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(x), _) if x == 0.0 => self.constant(0.0),
            (_, Some(y)) if y == 0.0 => self.constant(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => self.intern(Node::Mul(a, b)),
        }
    }

    fn div(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) if y != 0.0 => return self.constant(x / y),
            (Some(x), _) if x == 0.0 => return self.constant(0.0),
            (_, Some(y)) if y == 1.0 => return a,
            _ => {}
        }
        // cancel multiplicative factors shared by numerator and denominator
        // (inverse-metric entries produce ratios like x1*x3/(x1*x2*x3))
        let mut num = Vec::new();
        let mut den = Vec::new();
        self.mul_factors(a, &mut num);
        self.mul_factors(b, &mut den);
        let mut cancelled = false;
        let mut den_kept = Vec::with_capacity(den.len());
        for d in den {
            if let Some(pos) = num.iter().position(|n| *n == d && self.const_value(d).is_none()) {
                num.swap_remove(pos);
                cancelled = true;
            } else {
                den_kept.push(d);
            }
        }
        if !cancelled {
            return self.intern(Node::Div(a, b));
        }
        let one = self.constant(1.0);
        let num = num.into_iter().fold(one, |acc, f| self.mul(acc, f));
        let den = den_kept.into_iter().fold(one, |acc, f| self.mul(acc, f));
        self.div(num, den)
    }

    fn mul_factors(&self, e: Expr, out: &mut Vec<Expr>) {
        match self.node(e) {
            Node::Mul(a, b) => {
                self.mul_factors(a, out);
                self.mul_factors(b, out);
            }
            _ => out.push(e),
        }
    }

    fn neg(&mut self, a: Expr) -> Expr {
        match self.node(a) {
            Node::Const(bits) => self.constant(-f64::from_bits(bits)),
            Node::Neg(inner) => inner,
            _ => self.intern(Node::Neg(a)),
        }
    }

    fn pow(&mut self, a: Expr, r: Rational64) -> Expr {
        if r == Rational64::from_integer(0) {
            return self.constant(1.0);
        }
        if r == Rational64::from_integer(1) {
            return a;
        }
        if let Some(x) = self.const_value(a) {
            let v = pow_rational(x, r);
            if v.is_finite() {
                return self.constant(v);
            }
        }
        self.intern(Node::Pow(a, r))
    }

    fn sqrt(&mut self, a: Expr) -> Expr {
        match self.const_value(a) {
            Some(x) if x >= 0.0 => self.constant(x.sqrt()),
            _ => self.intern(Node::Sqrt(a)),
        }
    }

    fn unary(&mut self, make: fn(Expr) -> Node, eval: fn(f64) -> f64, a: Expr) -> Expr {
        match self.const_value(a) {
            Some(x) => {
                let v = eval(x);
                if v.is_finite() {
                    self.constant(v)
                } else {
                    self.intern(make(a))
                }
            }
            None => self.intern(make(a)),
        }
    }

    fn differentiate(&mut self, e: Expr, var: Var) -> Expr {
        if let Some(&d) = self.deriv_memo.get(&(e, var)) {
            return d;
        }
        let d = match self.node(e) {
            Node::Const(_) => self.constant(0.0),
            Node::Var(v) => {
                if v == var {
                    self.constant(1.0)
                } else {
                    self.constant(0.0)
                }
            }
            Node::Neg(a) => {
                let da = self.differentiate(a, var);
                self.neg(da)
            }
            Node::Add(a, b) => {
                let da = self.differentiate(a, var);
                let db = self.differentiate(b, var);
                self.add(da, db)
            }
            Node::Sub(a, b) => {
                let da = self.differentiate(a, var);
                let db = self.differentiate(b, var);
                self.sub(da, db)
            }
            Node::Mul(a, b) => {
                let da = self.differentiate(a, var);
                let db = self.differentiate(b, var);
                let t1 = self.mul(da, b);
                let t2 = self.mul(a, db);
                self.add(t1, t2)
            }
            Node::Div(a, b) => {
                // (a'b - ab') / b^2
                let da = self.differentiate(a, var);
                let db = self.differentiate(b, var);
                let t1 = self.mul(da, b);
                let t2 = self.mul(a, db);
                let num = self.sub(t1, t2);
                let b2 = self.pow(b, Rational64::from_integer(2));
                self.div(num, b2)
            }
            Node::Pow(a, r) => {
                // r * a^(r-1) * a'
                let da = self.differentiate(a, var);
                let coeff = self.constant(rational_to_f64(r));
                let p = self.pow(a, r - Rational64::from_integer(1));
                let t = self.mul(coeff, p);
                self.mul(t, da)
            }
            Node::Sqrt(a) => {
                // a' / (2 sqrt a)
                let da = self.differentiate(a, var);
                let s = self.sqrt(a);
                let two = self.constant(2.0);
                let den = self.mul(two, s);
                self.div(da, den)
            }
            Node::Sin(a) => {
                let da = self.differentiate(a, var);
                let c = self.unary(Node::Cos, f64::cos, a);
                self.mul(c, da)
            }
            Node::Cos(a) => {
                let da = self.differentiate(a, var);
                let s = self.unary(Node::Sin, f64::sin, a);
                let m = self.mul(s, da);
                self.neg(m)
            }
            Node::Exp(a) => {
                let da = self.differentiate(a, var);
                self.mul(e, da)
            }
            Node::Log(a) => {
                let da = self.differentiate(a, var);
                self.div(da, a)
            }
        };
        self.deriv_memo.insert((e, var), d);
        d
    }

    fn rebuild(&mut self, e: Expr, memo: &mut HashMap<Expr, Expr>) -> Expr {
        if let Some(&r) = memo.get(&e) {
            return r;
        }
        let r = match self.node(e) {
            Node::Const(_) | Node::Var(_) => e,
            Node::Neg(a) => {
                let a = self.rebuild(a, memo);
                self.neg(a)
            }
            Node::Add(a, b) => {
                let a = self.rebuild(a, memo);
                let b = self.rebuild(b, memo);
                self.add(a, b)
            }
            Node::Sub(a, b) => {
                let a = self.rebuild(a, memo);
                let b = self.rebuild(b, memo);
                self.sub(a, b)
            }
            Node::Mul(a, b) => {
                let a = self.rebuild(a, memo);
                let b = self.rebuild(b, memo);
                self.mul(a, b)
            }
            Node::Div(a, b) => {
                let a = self.rebuild(a, memo);
                let b = self.rebuild(b, memo);
                self.div(a, b)
            }
            Node::Pow(a, r) => {
                let a = self.rebuild(a, memo);
                self.pow(a, r)
            }
            Node::Sqrt(a) => {
                let a = self.rebuild(a, memo);
                self.sqrt(a)
            }
            Node::Sin(a) => {
                let a = self.rebuild(a, memo);
                self.unary(Node::Sin, f64::sin, a)
            }
            Node::Cos(a) => {
                let a = self.rebuild(a, memo);
                self.unary(Node::Cos, f64::cos, a)
            }
            Node::Exp(a) => {
                let a = self.rebuild(a, memo);
                self.unary(Node::Exp, f64::exp, a)
            }
            Node::Log(a) => {
                let a = self.rebuild(a, memo);
                self.unary(Node::Log, f64::ln, a)
            }
        };
        memo.insert(e, r);
        r
    }
}

fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn pow_rational(base: f64, r: Rational64) -> f64 {
    if *r.denom() == 1 {
        let n = *r.numer();
        if n.unsigned_abs() <= i32::MAX as u64 {
            return base.powi(n as i32);
        }
    }
    base.powf(rational_to_f64(r))
}

/// Evaluation failure, reported with the offending subtree.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("domain error (sqrt/log/pow of invalid argument) in `{0}`")]
    Domain(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("variable {0} out of range for point of dimension {1}")]
    VarOutOfRange(Var, usize),
}

/// Shared-cache evaluator for one `(x, y)` point. Evaluating several
/// expressions through one `Evaluator` visits every shared subtree once.
pub struct Evaluator<'a> {
    x: &'a [f64],
    y: &'a [f64],
    cache: HashMap<Expr, f64>,
}

enum EvalFault {
    DivisionByZero(Expr),
    Domain(Expr),
    NonFinite(Expr),
    VarOutOfRange(Var, usize),
}

impl<'a> Evaluator<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        Evaluator { x, y, cache: HashMap::new() }
    }

    pub fn eval(&mut self, e: Expr) -> Result<f64, EvalError> {
        // Faults carry the offending subtree; format it only after the store
        // lock is released (Display takes the lock).
        with_store(|s| self.eval_in(s, e)).map_err(|f| match f {
            EvalFault::DivisionByZero(e) => EvalError::DivisionByZero(e.to_string()),
            EvalFault::Domain(e) => EvalError::Domain(e.to_string()),
            EvalFault::NonFinite(e) => EvalError::NonFinite(e.to_string()),
            EvalFault::VarOutOfRange(v, n) => EvalError::VarOutOfRange(v, n),
        })
    }

    fn eval_in(&mut self, s: &Store, e: Expr) -> Result<f64, EvalFault> {
        if let Some(&v) = self.cache.get(&e) {
            return Ok(v);
        }
        let v = match s.node(e) {
            Node::Const(bits) => f64::from_bits(bits),
            Node::Var(v) => {
                let coords = match v.axis {
                    Axis::X => self.x,
                    Axis::Y => self.y,
                };
                *coords
                    .get(v.index)
                    .ok_or(EvalFault::VarOutOfRange(v, coords.len()))?
            }
            Node::Neg(a) => -self.eval_in(s, a)?,
            Node::Add(a, b) => self.eval_in(s, a)? + self.eval_in(s, b)?,
            Node::Sub(a, b) => self.eval_in(s, a)? - self.eval_in(s, b)?,
            Node::Mul(a, b) => self.eval_in(s, a)? * self.eval_in(s, b)?,
            Node::Div(a, b) => {
                let den = self.eval_in(s, b)?;
                if den == 0.0 {
                    return Err(EvalFault::DivisionByZero(e));
                }
                self.eval_in(s, a)? / den
            }
            Node::Pow(a, r) => {
                let base = self.eval_in(s, a)?;
                if base < 0.0 && *r.denom() != 1 {
                    return Err(EvalFault::Domain(e));
                }
                if base == 0.0 && *r.numer() < 0 {
                    return Err(EvalFault::DivisionByZero(e));
                }
                pow_rational(base, r)
            }
            Node::Sqrt(a) => {
                let v = self.eval_in(s, a)?;
                if v < 0.0 {
                    return Err(EvalFault::Domain(e));
                }
                v.sqrt()
            }
            Node::Sin(a) => self.eval_in(s, a)?.sin(),
            Node::Cos(a) => self.eval_in(s, a)?.cos(),
            Node::Exp(a) => self.eval_in(s, a)?.exp(),
            Node::Log(a) => {
                let v = self.eval_in(s, a)?;
                if v <= 0.0 {
                    return Err(EvalFault::Domain(e));
                }
                v.ln()
            }
        };
        if !v.is_finite() {
            return Err(EvalFault::NonFinite(e));
        }
        self.cache.insert(e, v);
        Ok(v)
    }
}

// One step of a compiled program; operands index earlier slots.
#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    VarX(u32),
    VarY(u32),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, Rational64),
    Sqrt(u32),
    Sin(u32),
    Cos(u32),
    Exp(u32),
    Log(u32),
}

/// A set of expressions compiled to a flat, topologically ordered op list.
/// Evaluation is a single array pass with no store lock — the fast path for
/// ODE right-hand sides that evaluate the same expressions at many points.
pub struct Program {
    ops: Vec<Op>,
    // source expr per slot, for error reporting only
    sources: Vec<Expr>,
    roots: Vec<u32>,
}

impl Program {
    pub fn compile(roots: &[Expr]) -> Program {
        with_store(|s| {
            let mut slot: HashMap<Expr, u32> = HashMap::new();
            let mut ops = Vec::new();
            let mut sources = Vec::new();
            // iterative post-order: (expr, children_done)
            let mut stack: Vec<(Expr, bool)> = roots.iter().rev().map(|e| (*e, false)).collect();
            while let Some((e, done)) = stack.pop() {
                if slot.contains_key(&e) {
                    continue;
                }
                let node = s.node(e);
                if !done {
                    stack.push((e, true));
                    match node {
                        Node::Const(_) | Node::Var(_) => {}
                        Node::Neg(a)
                        | Node::Pow(a, _)
                        | Node::Sqrt(a)
                        | Node::Sin(a)
                        | Node::Cos(a)
                        | Node::Exp(a)
                        | Node::Log(a) => stack.push((a, false)),
                        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                            stack.push((a, false));
                            stack.push((b, false));
                        }
                    }
                    continue;
                }
                let op = match node {
                    Node::Const(bits) => Op::Const(f64::from_bits(bits)),
                    Node::Var(v) => match v.axis {
                        Axis::X => Op::VarX(v.index as u32),
                        Axis::Y => Op::VarY(v.index as u32),
                    },
                    Node::Neg(a) => Op::Neg(slot[&a]),
                    Node::Add(a, b) => Op::Add(slot[&a], slot[&b]),
                    Node::Sub(a, b) => Op::Sub(slot[&a], slot[&b]),
                    Node::Mul(a, b) => Op::Mul(slot[&a], slot[&b]),
                    Node::Div(a, b) => Op::Div(slot[&a], slot[&b]),
                    Node::Pow(a, r) => Op::Pow(slot[&a], r),
                    Node::Sqrt(a) => Op::Sqrt(slot[&a]),
                    Node::Sin(a) => Op::Sin(slot[&a]),
                    Node::Cos(a) => Op::Cos(slot[&a]),
                    Node::Exp(a) => Op::Exp(slot[&a]),
                    Node::Log(a) => Op::Log(slot[&a]),
                };
                slot.insert(e, ops.len() as u32);
                ops.push(op);
                sources.push(e);
            }
            let roots = roots.iter().map(|e| slot[e]).collect();
            Program { ops, sources, roots }
        })
    }

    pub fn n_roots(&self) -> usize {
        self.roots.len()
    }

    /// Evaluate all roots into `out` (length `n_roots`), using `scratch` as
    /// a reusable slot buffer.
    pub fn eval_into(
        &self,
        x: &[f64],
        y: &[f64],
        scratch: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        scratch.clear();
        scratch.reserve(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = match *op {
                Op::Const(c) => c,
                Op::VarX(j) => *x.get(j as usize).ok_or(EvalError::VarOutOfRange(
                    Var::x(j as usize),
                    x.len(),
                ))?,
                Op::VarY(j) => *y.get(j as usize).ok_or(EvalError::VarOutOfRange(
                    Var::y(j as usize),
                    y.len(),
                ))?,
                Op::Neg(a) => -scratch[a as usize],
                Op::Add(a, b) => scratch[a as usize] + scratch[b as usize],
                Op::Sub(a, b) => scratch[a as usize] - scratch[b as usize],
                Op::Mul(a, b) => scratch[a as usize] * scratch[b as usize],
                Op::Div(a, b) => {
                    let den = scratch[b as usize];
                    if den == 0.0 {
                        return Err(EvalError::DivisionByZero(self.sources[i].to_string()));
                    }
                    scratch[a as usize] / den
                }
                Op::Pow(a, r) => {
                    let base = scratch[a as usize];
                    if base < 0.0 && *r.denom() != 1 {
                        return Err(EvalError::Domain(self.sources[i].to_string()));
                    }
                    if base == 0.0 && *r.numer() < 0 {
                        return Err(EvalError::DivisionByZero(self.sources[i].to_string()));
                    }
                    pow_rational(base, r)
                }
                Op::Sqrt(a) => {
                    let v = scratch[a as usize];
                    if v < 0.0 {
                        return Err(EvalError::Domain(self.sources[i].to_string()));
                    }
                    v.sqrt()
                }
                Op::Sin(a) => scratch[a as usize].sin(),
                Op::Cos(a) => scratch[a as usize].cos(),
                Op::Exp(a) => scratch[a as usize].exp(),
                Op::Log(a) => {
                    let v = scratch[a as usize];
                    if v <= 0.0 {
                        return Err(EvalError::Domain(self.sources[i].to_string()));
                    }
                    v.ln()
                }
            };
            if !v.is_finite() {
                return Err(EvalError::NonFinite(self.sources[i].to_string()));
            }
            scratch.push(v);
        }
        for (k, &r) in self.roots.iter().enumerate() {
            out[k] = scratch[r as usize];
        }
        Ok(())
    }
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        with_store(|s| s.constant(v))
    }

    pub fn var(v: Var) -> Expr {
        with_store(|s| s.intern(Node::Var(v)))
    }

    pub fn x(index: usize) -> Expr {
        Expr::var(Var::x(index))
    }

    pub fn y(index: usize) -> Expr {
        Expr::var(Var::y(index))
    }

    pub fn add(self, rhs: Expr) -> Expr {
        with_store(|s| s.add(self, rhs))
    }

    pub fn sub(self, rhs: Expr) -> Expr {
        with_store(|s| s.sub(self, rhs))
    }

    pub fn mul(self, rhs: Expr) -> Expr {
        with_store(|s| s.mul(self, rhs))
    }

    pub fn div(self, rhs: Expr) -> Expr {
        with_store(|s| s.div(self, rhs))
    }

    pub fn neg(self) -> Expr {
        with_store(|s| s.neg(self))
    }

    pub fn pow(self, r: Rational64) -> Expr {
        with_store(|s| s.pow(self, r))
    }

    pub fn powi(self, n: i64) -> Expr {
        self.pow(Rational64::from_integer(n))
    }

    pub fn sqrt(self) -> Expr {
        with_store(|s| s.sqrt(self))
    }

    pub fn sin(self) -> Expr {
        with_store(|s| s.unary(Node::Sin, f64::sin, self))
    }

    pub fn cos(self) -> Expr {
        with_store(|s| s.unary(Node::Cos, f64::cos, self))
    }

    pub fn exp(self) -> Expr {
        with_store(|s| s.unary(Node::Exp, f64::exp, self))
    }

    pub fn log(self) -> Expr {
        with_store(|s| s.unary(Node::Log, f64::ln, self))
    }

    /// Exact partial derivative, memoized on `(self, var)`.
    pub fn differentiate(self, var: Var) -> Expr {
        with_store(|s| s.differentiate(self, var))
    }

    /// Evaluate at a single point. For many expressions at one point prefer
    /// [`Evaluator`], which shares the subtree cache.
    pub fn evaluate(self, x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
        Evaluator::new(x, y).eval(self)
    }

    /// Bottom-up rebuild through the smart constructors: folds constants and
    /// applies the neutral-element identities.
    pub fn simplify_basic(self) -> Expr {
        with_store(|s| s.rebuild(self, &mut HashMap::new()))
    }

    /// True if the expression is the literal constant `v`.
    pub fn is_const(self, v: f64) -> bool {
        with_store(|s| s.const_value(self) == Some(v))
    }

    /// Number of distinct nodes in the DAG rooted at `self`.
    pub fn node_count(self) -> usize {
        fn walk(s: &Store, e: Expr, seen: &mut std::collections::HashSet<Expr>) {
            if !seen.insert(e) {
                return;
            }
            match s.node(e) {
                Node::Const(_) | Node::Var(_) => {}
                Node::Neg(a)
                | Node::Pow(a, _)
                | Node::Sqrt(a)
                | Node::Sin(a)
                | Node::Cos(a)
                | Node::Exp(a)
                | Node::Log(a) => walk(s, a, seen),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    walk(s, a, seen);
                    walk(s, b, seen);
                }
            }
        }
        with_store(|s| {
            let mut seen = std::collections::HashSet::new();
            walk(s, self, &mut seen);
            seen.len()
        })
    }

    /// Maximum variable index used on the given axis, if any.
    pub fn max_index(self, axis: Axis) -> Option<usize> {
        fn walk(s: &Store, e: Expr, axis: Axis, seen: &mut std::collections::HashSet<Expr>) -> Option<usize> {
            if !seen.insert(e) {
                return None;
            }
            match s.node(e) {
                Node::Const(_) => None,
                Node::Var(v) => (v.axis == axis).then_some(v.index),
                Node::Neg(a)
                | Node::Pow(a, _)
                | Node::Sqrt(a)
                | Node::Sin(a)
                | Node::Cos(a)
                | Node::Exp(a)
                | Node::Log(a) => walk(s, a, axis, seen),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    match (walk(s, a, axis, seen), walk(s, b, axis, seen)) {
                        (Some(i), Some(j)) => Some(i.max(j)),
                        (a, b) => a.or(b),
                    }
                }
            }
        }
        with_store(|s| walk(s, self, axis, &mut std::collections::HashSet::new()))
    }

    /// True if no variable on the given axis occurs in the expression.
    pub fn is_free_of(self, axis: Axis) -> bool {
        self.max_index(axis).is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_consing_shares_nodes() {
        let a = Expr::x(1).mul(Expr::y(0).powi(2));
        let b = Expr::x(1).mul(Expr::y(0).powi(2));
        assert_eq!(a, b);
    }

    #[test]
    fn power_rule() {
        // d/dy1 of x2*y1^2 = 2*x2*y1
        let e = Expr::x(1).mul(Expr::y(0).powi(2));
        let d = e.differentiate(Var::y(0));
        let x = [0.0, 3.0];
        let y = [1.5, 0.0];
        assert_eq!(d.evaluate(&x, &y).unwrap(), 2.0 * 3.0 * 1.5);
    }

    #[test]
    fn constant_derivative_is_zero() {
        let d = Expr::constant(7.5).differentiate(Var::x(0));
        assert!(d.is_const(0.0));
    }

    #[test]
    fn derivative_of_unused_var_simplifies_to_zero() {
        let e = Expr::x(0).mul(Expr::y(0));
        let d = e.differentiate(Var::x(1)).simplify_basic();
        assert!(d.is_const(0.0));
    }

    #[test]
    fn simplify_folds_constants() {
        let e = Expr::constant(2.0).mul(Expr::constant(3.0)).mul(Expr::y(0));
        // smart constructors already folded 2*3
        assert_eq!(e, Expr::constant(6.0).mul(Expr::y(0)));
        let z = Expr::constant(0.0).mul(Expr::x(0).sqrt());
        assert!(z.is_const(0.0));
    }

    #[test]
    fn division_by_zero_reported() {
        let e = Expr::constant(1.0).div(Expr::x(0));
        match e.evaluate(&[0.0], &[1.0]) {
            Err(EvalError::DivisionByZero(_)) => {}
            other => panic!("expected division by zero, got {other:?}"),
        }
    }

    #[test]
    fn example1_metric_value() {
        // F = sqrt(x2*x3*y1^2 + y2^2 + y3^2 + y4^2) at x=(.,1,2,.), y=(1,0,0,0)
        let f = parse_expr("sqrt(x2*x3*y1^2 + y2^2 + y3^2 + y4^2)", 4).unwrap();
        let v = f.evaluate(&[0.0, 1.0, 2.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fd_matches_exact_derivative() {
        // d/dx3 of Example 1's F^2 at x=(0,1,2,0), y=(1,0,0,0) is 1.0
        let f2 = parse_expr("x2*x3*y1^2 + y2^2 + y3^2 + y4^2", 4).unwrap();
        let d = f2.differentiate(Var::x(2));
        let x = [0.0, 1.0, 2.0, 0.0];
        let y = [1.0, 0.0, 0.0, 0.0];
        let exact = d.evaluate(&x, &y).unwrap();
        assert!((exact - 1.0).abs() < 1e-12);
        let h = 1e-5;
        let mut xp = x;
        let mut xm = x;
        xp[2] += h;
        xm[2] -= h;
        let fd = (f2.evaluate(&xp, &y).unwrap() - f2.evaluate(&xm, &y).unwrap()) / (2.0 * h);
        assert!((exact - fd).abs() < 1e-8);
    }

    #[test]
    fn rational_exponent_derivative() {
        // d/dy1 (y1^(1/4)) = 1/4 y1^(-3/4)
        let e = Expr::y(0).pow(Rational64::new(1, 4));
        let d = e.differentiate(Var::y(0));
        let v = d.evaluate(&[], &[16.0]).unwrap();
        assert!((v - 0.25 * 16f64.powf(-0.75)).abs() < 1e-14);
    }
}
