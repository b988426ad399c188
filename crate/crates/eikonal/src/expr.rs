//! Analytic-expression DSL: parsing and second-order forward-mode jets.
//!
//! Generating functions are supplied as text over up to three named
//! variables. Evaluation propagates (value, gradient, upper-triangular
//! Hessian) jets through the syntax tree, so first and second derivatives
//! are exact to machine precision rather than finite-difference estimates.

use std::fmt;
use thiserror::Error;

pub const MAX_VARS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Atan,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Atan => "atan",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "atan" => Func::Atan,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    /// Function call; `pos` is the byte offset of the function name, kept so
    /// domain errors can point at the offending node.
    Call(Func, Box<Node>, usize),
}

/// A parsed analytic function of named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    vars: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { pos: usize, name: String },
    #[error("arity mismatch for `{name}` at position {pos}: expected 1 argument")]
    Arity { pos: usize, name: String },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownIdentifier { pos, .. }
            | ParseError::UnknownFunction { pos, .. }
            | ParseError::Arity { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("domain error in {func} at byte {pos}: argument {arg}")]
    Domain { func: &'static str, pos: usize, arg: f64 },
    #[error("non-integer power of non-positive base {base}")]
    PowDomain { base: f64 },
    #[error("evaluation produced a non-finite value")]
    NonFinite,
    #[error("expected {expected} coordinates, got {got}")]
    PointLength { expected: usize, got: usize },
}

/// Second-order jet: value, gradient and symmetric Hessian of a scalar
/// function at a point. The Hessian is stored as the packed upper triangle
/// (00, 01, 02, 11, 12, 22), so symmetry holds exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub n: usize,
    pub value: f64,
    pub grad: [f64; MAX_VARS],
    hess: [f64; 6],
}

#[inline]
fn ut_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        (2, 2) => 5,
        _ => unreachable!("jet index out of range"),
    }
}

impl Jet2 {
    pub fn constant(n: usize, value: f64) -> Self {
        Jet2 { n, value, grad: [0.0; MAX_VARS], hess: [0.0; 6] }
    }

    pub fn variable(n: usize, index: usize, value: f64) -> Self {
        let mut grad = [0.0; MAX_VARS];
        grad[index] = 1.0;
        Jet2 { n, value, grad, hess: [0.0; 6] }
    }

    #[inline]
    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hess[ut_index(i, j)]
    }

    pub fn hess_matrix(&self) -> [[f64; MAX_VARS]; MAX_VARS] {
        let mut m = [[0.0; MAX_VARS]; MAX_VARS];
        for i in 0..self.n {
            for j in 0..self.n {
                m[i][j] = self.hess(i, j);
            }
        }
        m
    }

    fn add(&self, o: &Jet2) -> Jet2 {
        let mut out = *self;
        out.value += o.value;
        for i in 0..MAX_VARS {
            out.grad[i] += o.grad[i];
        }
        for i in 0..6 {
            out.hess[i] += o.hess[i];
        }
        out
    }

    fn sub(&self, o: &Jet2) -> Jet2 {
        let mut out = *self;
        out.value -= o.value;
        for i in 0..MAX_VARS {
            out.grad[i] -= o.grad[i];
        }
        for i in 0..6 {
            out.hess[i] -= o.hess[i];
        }
        out
    }

    fn neg(&self) -> Jet2 {
        let mut out = *self;
        out.value = -out.value;
        for i in 0..MAX_VARS {
            out.grad[i] = -out.grad[i];
        }
        for i in 0..6 {
            out.hess[i] = -out.hess[i];
        }
        out
    }

    fn mul(&self, o: &Jet2) -> Jet2 {
        let mut out = Jet2::constant(self.n, self.value * o.value);
        for i in 0..MAX_VARS {
            out.grad[i] = self.grad[i] * o.value + self.value * o.grad[i];
        }
        for i in 0..MAX_VARS {
            for j in i..MAX_VARS {
                out.hess[ut_index(i, j)] = self.hess(i, j) * o.value
                    + self.grad[i] * o.grad[j]
                    + self.grad[j] * o.grad[i]
                    + self.value * o.hess(i, j);
            }
        }
        out
    }

    /// Chain rule through a scalar map with derivatives `fp`, `fpp` at `self.value`.
    fn chain(&self, f: f64, fp: f64, fpp: f64) -> Jet2 {
        let mut out = Jet2::constant(self.n, f);
        for i in 0..MAX_VARS {
            out.grad[i] = fp * self.grad[i];
        }
        for i in 0..MAX_VARS {
            for j in i..MAX_VARS {
                out.hess[ut_index(i, j)] = fpp * self.grad[i] * self.grad[j] + fp * self.hess(i, j);
            }
        }
        out
    }

    fn recip(&self) -> Jet2 {
        let v = self.value;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    fn div(&self, o: &Jet2) -> Jet2 {
        self.mul(&o.recip())
    }

    fn powi(&self, n: i64) -> Jet2 {
        if n == 0 {
            return Jet2::constant(self.n, 1.0);
        }
        let mag = n.unsigned_abs();
        let mut acc = *self;
        for _ in 1..mag {
            acc = acc.mul(self);
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
}

/// Parse `text` into an [`Expression`] over exactly the declared variables.
pub fn parse(text: &str, variables: &[&str]) -> Result<Expression, ParseError> {
    assert!(variables.len() <= MAX_VARS, "at most {MAX_VARS} variables supported");
    let vars: Vec<String> = variables.iter().map(|s| s.to_string()).collect();
    let mut p = Parser { src: text.as_bytes(), pos: 0, vars: &vars };
    p.skip_ws();
    if p.pos >= p.src.len() {
        return Err(ParseError::Syntax { pos: 0, msg: "empty expression".into() });
    }
    let root = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(ParseError::Syntax {
            pos: p.pos,
            msg: format!("unexpected `{}`", p.src[p.pos] as char),
        });
    }
    Ok(Expression { root, vars })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'+' => BinOp::Add,
                b'-' => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'*' => BinOp::Mul,
                b'/' => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // right-associative; exponent may carry a unary minus
            let exp = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(ParseError::Syntax { pos: self.pos, msg: "unexpected end of input".into() }),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(ParseError::Syntax { pos: self.pos, msg: "expected `)`".into() });
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(ParseError::Syntax {
                pos: self.pos,
                msg: format!("unexpected `{}`", c as char),
            }),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `e` belonged to something else (or is malformed); back off
                self.pos = mark;
            }
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        s.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ParseError::Syntax { pos: start, msg: format!("bad number `{s}`") })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(&name)
                .ok_or(ParseError::UnknownFunction { pos: start, name: name.clone() })?;
            self.pos += 1; // consume '('
            let arg = self.expr()?;
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    Ok(Node::Call(func, Box::new(arg), start))
                }
                Some(b',') => Err(ParseError::Arity { pos: start, name }),
                _ => Err(ParseError::Syntax { pos: self.pos, msg: "expected `)`".into() }),
            }
        } else {
            match name.as_str() {
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                _ => {
                    if let Some(idx) = self.vars.iter().position(|v| v == &name) {
                        Ok(Node::Var(idx))
                    } else {
                        Err(ParseError::UnknownIdentifier { pos: start, name })
                    }
                }
            }
        }
    }
}

impl Expression {
    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Evaluate with exact first and second derivatives at `point`.
    pub fn eval_jet(&self, point: &[f64]) -> Result<Jet2, EvalError> {
        if point.len() != self.vars.len() {
            return Err(EvalError::PointLength { expected: self.vars.len(), got: point.len() });
        }
        let jet = eval_node(&self.root, point, self.vars.len())?;
        if !jet.value.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(jet)
    }

    /// Value only (still checked for domain errors).
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        Ok(self.eval_jet(point)?.value)
    }

    /// Render to text that parses back to an equivalent tree.
    pub fn render(&self) -> String {
        let mut s = String::new();
        render_node(&self.root, &self.vars, &mut s);
        s
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn render_node(node: &Node, vars: &[String], out: &mut String) {
    match node {
        Node::Num(v) => {
            out.push_str(&format!("{v:?}"));
        }
        Node::Var(i) => out.push_str(&vars[*i]),
        Node::Neg(inner) => {
            // outer parentheses keep the negation intact when it appears as
            // the base of a `^`, which binds tighter than unary minus
            out.push_str("(-(");
            render_node(inner, vars, out);
            out.push_str("))");
        }
        Node::Binary(op, a, b) => {
            out.push('(');
            render_node(a, vars, out);
            out.push_str(&format!(" {} ", op.symbol()));
            render_node(b, vars, out);
            out.push(')');
        }
        Node::Call(f, arg, _) => {
            out.push_str(f.name());
            out.push('(');
            render_node(arg, vars, out);
            out.push(')');
        }
    }
}

/// Treat `node` as a constant exponent if it folds to an integer.
fn const_int_exponent(node: &Node) -> Option<i64> {
    fn fold(node: &Node) -> Option<f64> {
        match node {
            Node::Num(v) => Some(*v),
            Node::Neg(inner) => fold(inner).map(|v| -v),
            _ => None,
        }
    }
    let v = fold(node)?;
    let rounded = v.round();
    if (v - rounded).abs() < 1e-12 && rounded.abs() <= 64.0 {
        Some(rounded as i64)
    } else {
        None
    }
}

fn eval_node(node: &Node, point: &[f64], n: usize) -> Result<Jet2, EvalError> {
    match node {
        Node::Num(v) => Ok(Jet2::constant(n, *v)),
        Node::Var(i) => Ok(Jet2::variable(n, *i, point[*i])),
        Node::Neg(inner) => Ok(eval_node(inner, point, n)?.neg()),
        Node::Binary(op, a, b) => {
            if *op == BinOp::Pow {
                if let Some(k) = const_int_exponent(b) {
                    let base = eval_node(a, point, n)?;
                    return Ok(base.powi(k));
                }
            }
            let ja = eval_node(a, point, n)?;
            let jb = eval_node(b, point, n)?;
            match op {
                BinOp::Add => Ok(ja.add(&jb)),
                BinOp::Sub => Ok(ja.sub(&jb)),
                BinOp::Mul => Ok(ja.mul(&jb)),
                BinOp::Div => {
                    if jb.value == 0.0 {
                        return Err(EvalError::NonFinite);
                    }
                    Ok(ja.div(&jb))
                }
                BinOp::Pow => {
                    // non-integer exponent requires positive base
                    if ja.value <= 0.0 {
                        return Err(EvalError::PowDomain { base: ja.value });
                    }
                    let ln = ja.chain(ja.value.ln(), 1.0 / ja.value, -1.0 / (ja.value * ja.value));
                    let prod = jb.mul(&ln);
                    let ev = prod.value.exp();
                    Ok(prod.chain(ev, ev, ev))
                }
            }
        }
        Node::Call(f, arg, pos) => {
            let j = eval_node(arg, point, n)?;
            let v = j.value;
            let out = match f {
                Func::Sin => j.chain(v.sin(), v.cos(), -v.sin()),
                Func::Cos => j.chain(v.cos(), -v.sin(), -v.cos()),
                Func::Tan => {
                    let t = v.tan();
                    let sec2 = 1.0 + t * t;
                    j.chain(t, sec2, 2.0 * t * sec2)
                }
                Func::Exp => {
                    let ev = v.exp();
                    j.chain(ev, ev, ev)
                }
                Func::Log => {
                    if v <= 0.0 {
                        return Err(EvalError::Domain { func: "log", pos: *pos, arg: v });
                    }
                    j.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(EvalError::Domain { func: "sqrt", pos: *pos, arg: v });
                    }
                    let sq = v.sqrt();
                    if sq == 0.0 {
                        return Err(EvalError::Domain { func: "sqrt", pos: *pos, arg: v });
                    }
                    j.chain(sq, 0.5 / sq, -0.25 / (sq * sq * sq))
                }
                Func::Sinh => j.chain(v.sinh(), v.cosh(), v.sinh()),
                Func::Cosh => j.chain(v.cosh(), v.sinh(), v.cosh()),
                Func::Atan => {
                    let d = 1.0 + v * v;
                    j.chain(v.atan(), 1.0 / d, -2.0 * v / (d * d))
                }
            };
            if !out.value.is_finite() {
                return Err(EvalError::NonFinite);
            }
            Ok(out)
        }
    }
}

/// Discrepancy between jet derivatives and central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct FdDiscrepancy {
    pub max_rel_gradient: f64,
    pub max_rel_hessian: f64,
}

impl FdDiscrepancy {
    pub fn max(&self) -> f64 {
        self.max_rel_gradient.max(self.max_rel_hessian)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Compare [`Expression::eval_jet`] derivatives against central differences
/// with step `h`. Returns the worst relative discrepancy per derivative order.
pub fn fd_check(expr: &Expression, point: &[f64], h: f64) -> Result<FdDiscrepancy, EvalError> {
    let n = expr.num_vars();
    let jet = expr.eval_jet(point)?;
    let f = |p: &[f64]| expr.eval(p);
    let mut max_g = 0.0f64;
    let mut max_h = 0.0f64;
    let mut buf = point.to_vec();
    for i in 0..n {
        buf.copy_from_slice(point);
        buf[i] = point[i] + h;
        let fp = f(&buf)?;
        buf[i] = point[i] - h;
        let fm = f(&buf)?;
        let fd = (fp - fm) / (2.0 * h);
        max_g = max_g.max(rel_err(jet.grad[i], fd));
        // diagonal second derivative
        let f0 = jet.value;
        let fd2 = (fp - 2.0 * f0 + fm) / (h * h);
        max_h = max_h.max(rel_err(jet.hess(i, i), fd2));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            buf.copy_from_slice(point);
            buf[i] = point[i] + h;
            buf[j] = point[j] + h;
            let fpp = f(&buf)?;
            buf[j] = point[j] - h;
            let fpm = f(&buf)?;
            buf[i] = point[i] - h;
            buf[j] = point[j] + h;
            let fmp = f(&buf)?;
            buf[j] = point[j] - h;
            let fmm = f(&buf)?;
            let fd = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            max_h = max_h.max(rel_err(jet.hess(i, j), fd));
        }
    }
    Ok(FdDiscrepancy { max_rel_gradient: max_g, max_rel_hessian: max_h })
}
