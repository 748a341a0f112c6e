//! Postfix feature expressions.
//!
//! A derived feature is a postfix token sequence over base columns and a
//! fixed operator roster, e.g. `f1 f2 *` or `f3 sin`. Several expressions are
//! written on one line separated by `", "`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Additive guard used by the logarithm, reciprocal and division operators.
pub const GUARD_EPS: f64 = 1e-8;
/// Upper clip applied to the exponent before `exp`.
pub const EXP_CLIP: f64 = 50.0;
/// Operator outputs are saturated to `[-VALUE_BOUND, VALUE_BOUND]`.
pub const VALUE_BOUND: f64 = 1e150;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("malformed expression `{expr}`: {reason}")]
    MalformedExpression { expr: String, reason: String },
    #[error("expression `{expr}` exceeds limits (depth {depth}/{max_depth}, tokens {tokens}/{max_tokens})")]
    LimitExceeded {
        expr: String,
        depth: usize,
        max_depth: usize,
        tokens: usize,
        max_tokens: usize,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{name}` has length {found}, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnaryOp {
    Square,
    Cube,
    SqrtAbs,
    LogAbs,
    ExpClip,
    Sin,
    Cos,
    Tanh,
    Recip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// `sign(0) = +1`.
#[inline]
fn guarded_denominator(x: f64) -> f64 {
    if x < 0.0 {
        -(x.abs() + GUARD_EPS)
    } else {
        x.abs() + GUARD_EPS
    }
}

#[inline]
pub(crate) fn saturate(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-VALUE_BOUND, VALUE_BOUND)
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 9] = [
        UnaryOp::Square,
        UnaryOp::Cube,
        UnaryOp::SqrtAbs,
        UnaryOp::LogAbs,
        UnaryOp::ExpClip,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tanh,
        UnaryOp::Recip,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Square => "square",
            UnaryOp::Cube => "cube",
            UnaryOp::SqrtAbs => "sqrt_abs",
            UnaryOp::LogAbs => "log_abs",
            UnaryOp::ExpClip => "exp_clip",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Recip => "recip",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Guarded scalar semantics; finite for every finite input.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        let y = match self {
            UnaryOp::Square => x * x,
            UnaryOp::Cube => x * x * x,
            UnaryOp::SqrtAbs => x.abs().sqrt(),
            UnaryOp::LogAbs => (x.abs() + GUARD_EPS).ln(),
            UnaryOp::ExpClip => x.min(EXP_CLIP).exp(),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Recip => 1.0 / guarded_denominator(x),
        };
        saturate(y)
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Mul)
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        let y = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / guarded_denominator(b),
        };
        saturate(y)
    }
}

/// Either kind of operator; used for rosters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Unary(UnaryOp),
    Binary(BinaryOp),
}

impl Operator {
    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Unary(op) => op.symbol(),
            Operator::Binary(op) => op.symbol(),
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Operator::Unary(_) => 1,
            Operator::Binary(_) => 2,
        }
    }
}

/// The operators available to the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSet {
    pub unary: Vec<UnaryOp>,
    pub binary: Vec<BinaryOp>,
}

impl Default for OperatorSet {
    fn default() -> Self {
        Self {
            unary: UnaryOp::ALL.to_vec(),
            binary: BinaryOp::ALL.to_vec(),
        }
    }
}

impl OperatorSet {
    pub fn operators(&self) -> Vec<Operator> {
        self.unary
            .iter()
            .map(|&u| Operator::Unary(u))
            .chain(self.binary.iter().map(|&b| Operator::Binary(b)))
            .collect()
    }

    pub fn symbols(&self) -> Vec<&'static str> {
        self.operators().into_iter().map(Operator::symbol).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Feature(String),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

impl Token {
    pub fn as_str(&self) -> &str {
        match self {
            Token::Feature(name) => name,
            Token::Unary(op) => op.symbol(),
            Token::Binary(op) => op.symbol(),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExprLimits {
    pub max_depth: usize,
    pub max_tokens: usize,
}

impl Default for ExprLimits {
    fn default() -> Self {
        Self {
            max_depth: 4,
            max_tokens: 25,
        }
    }
}

/// A derived feature: a validated postfix token sequence plus display name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureExpr {
    tokens: Vec<Token>,
    name: String,
}

/// Tree view of an expression, used for infix rendering and canonical keys.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode<'a> {
    Leaf(&'a str),
    Unary(UnaryOp, Box<ExprNode<'a>>),
    Binary(BinaryOp, Box<ExprNode<'a>>, Box<ExprNode<'a>>),
}

impl ExprNode<'_> {
    fn canonical(&self) -> String {
        match self {
            ExprNode::Leaf(name) => (*name).to_string(),
            ExprNode::Unary(op, x) => format!("{}({})", op.symbol(), x.canonical()),
            ExprNode::Binary(op, a, b) => {
                let (mut ka, mut kb) = (a.canonical(), b.canonical());
                if op.is_commutative() && kb < ka {
                    std::mem::swap(&mut ka, &mut kb);
                }
                format!("{}({},{})", op.symbol(), ka, kb)
            }
        }
    }

    fn infix(&self) -> String {
        match self {
            ExprNode::Leaf(name) => (*name).to_string(),
            ExprNode::Unary(UnaryOp::Square, x) => format!("({})^2", x.infix()),
            ExprNode::Unary(UnaryOp::Cube, x) => format!("({})^3", x.infix()),
            ExprNode::Unary(op, x) => format!("{}({})", op.symbol(), x.infix()),
            ExprNode::Binary(op, a, b) => format!("({} {} {})", a.infix(), op.symbol(), b.infix()),
        }
    }
}

/// Stack simulation: returns (depth, ok) where depth is max operator nesting.
fn check_stack(tokens: &[Token]) -> Result<usize, String> {
    let mut depths: Vec<usize> = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match tok {
            Token::Feature(_) => depths.push(0),
            Token::Unary(_) => {
                let d = depths.pop().ok_or("stack underflow")?;
                depths.push(d + 1);
            }
            Token::Binary(_) => {
                let b = depths.pop().ok_or("stack underflow")?;
                let a = depths.pop().ok_or("stack underflow")?;
                depths.push(a.max(b) + 1);
            }
        }
    }
    match depths.as_slice() {
        [d] => Ok(*d),
        [] => Err("empty expression".into()),
        rest => Err(format!("{} values left on the stack", rest.len())),
    }
}

fn render_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

impl FeatureExpr {
    /// Validates stack shape and size limits, then names the expression.
    pub fn new(tokens: Vec<Token>, limits: ExprLimits) -> Result<Self, ExprError> {
        let depth = check_stack(&tokens).map_err(|reason| ExprError::MalformedExpression {
            expr: render_tokens(&tokens),
            reason,
        })?;
        if depth > limits.max_depth || tokens.len() > limits.max_tokens {
            return Err(ExprError::LimitExceeded {
                expr: render_tokens(&tokens),
                depth,
                max_depth: limits.max_depth,
                tokens: tokens.len(),
                max_tokens: limits.max_tokens,
            });
        }
        let mut expr = Self {
            tokens,
            name: String::new(),
        };
        expr.name = match expr.tokens.as_slice() {
            [Token::Feature(name)] => name.clone(),
            _ => derived_name(&expr.canonical_key()),
        };
        Ok(expr)
    }

    /// A bare reference to one base column.
    pub fn column(name: impl Into<String>) -> Self {
        let name = name.into();
        Self {
            tokens: vec![Token::Feature(name.clone())],
            name,
        }
    }

    /// `op(x)`, inlining `x`'s tokens.
    pub fn unary(op: UnaryOp, x: &FeatureExpr, limits: ExprLimits) -> Result<Self, ExprError> {
        let mut tokens = x.tokens.clone();
        tokens.push(Token::Unary(op));
        Self::new(tokens, limits)
    }

    /// `a op b`, inlining both operands' tokens.
    pub fn binary(
        op: BinaryOp,
        a: &FeatureExpr,
        b: &FeatureExpr,
        limits: ExprLimits,
    ) -> Result<Self, ExprError> {
        let mut tokens = Vec::with_capacity(a.tokens.len() + b.tokens.len() + 1);
        tokens.extend_from_slice(&a.tokens);
        tokens.extend_from_slice(&b.tokens);
        tokens.push(Token::Binary(op));
        Self::new(tokens, limits)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// True when the expression is a single base-column reference.
    pub fn is_base(&self) -> bool {
        matches!(self.tokens.as_slice(), [Token::Feature(_)])
    }

    pub fn depth(&self) -> usize {
        check_stack(&self.tokens).unwrap_or(0)
    }

    /// Base columns referenced, in first-use order, deduplicated.
    pub fn columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.tokens {
            if let Token::Feature(n) = t {
                if !out.contains(&n.as_str()) {
                    out.push(n);
                }
            }
        }
        out
    }

    pub fn tree(&self) -> ExprNode<'_> {
        let mut stack: Vec<ExprNode<'_>> = Vec::new();
        for t in &self.tokens {
            match t {
                Token::Feature(name) => stack.push(ExprNode::Leaf(name)),
                Token::Unary(op) => {
                    let x = stack.pop().expect("validated expression");
                    stack.push(ExprNode::Unary(*op, Box::new(x)));
                }
                Token::Binary(op) => {
                    let b = stack.pop().expect("validated expression");
                    let a = stack.pop().expect("validated expression");
                    stack.push(ExprNode::Binary(*op, Box::new(a), Box::new(b)));
                }
            }
        }
        stack.pop().expect("validated expression")
    }

    pub fn render_postfix(&self) -> String {
        render_tokens(&self.tokens)
    }

    /// Fully parenthesized infix form, for display only.
    pub fn render_infix(&self) -> String {
        self.tree().infix()
    }

    /// Structural key; operands of `+` and `*` are ordered by their own keys.
    pub fn canonical_key(&self) -> String {
        self.tree().canonical()
    }

    /// Evaluates over `columns`, returning one value per row.
    pub fn evaluate<C: ColumnLookup + ?Sized>(&self, columns: &C) -> Result<Vec<f64>, ExprError> {
        let mut expected: Option<(usize, &str)> = None;
        for name in self.columns() {
            let col = columns
                .column(name)
                .ok_or_else(|| ExprError::MissingColumn(name.to_string()))?;
            match expected {
                None => expected = Some((col.len(), name)),
                Some((n, _)) if n != col.len() => {
                    return Err(ExprError::LengthMismatch {
                        name: name.to_string(),
                        expected: n,
                        found: col.len(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(n) = columns.row_count() {
            if let Some((len, name)) = expected {
                if len != n {
                    return Err(ExprError::LengthMismatch {
                        name: name.to_string(),
                        expected: n,
                        found: len,
                    });
                }
            }
        }

        let mut stack: Vec<Vec<f64>> = Vec::new();
        for t in &self.tokens {
            match t {
                Token::Feature(name) => {
                    stack.push(columns.column(name).expect("checked above").to_vec());
                }
                Token::Unary(op) => {
                    let x = stack.last_mut().expect("validated expression");
                    for v in x.iter_mut() {
                        *v = op.apply(*v);
                    }
                }
                Token::Binary(op) => {
                    let b = stack.pop().expect("validated expression");
                    let a = stack.last_mut().expect("validated expression");
                    for (va, vb) in a.iter_mut().zip(&b) {
                        *va = op.apply(*va, *vb);
                    }
                }
            }
        }
        Ok(stack.pop().expect("validated expression"))
    }
}

impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_postfix())
    }
}

/// `"g"` followed by the first 8 hex digits of SHA-256 of the canonical key.
pub fn derived_name(canonical_key: &str) -> String {
    let digest = Sha256::digest(canonical_key.as_bytes());
    let mut name = String::from("g");
    for byte in &digest[..4] {
        name.push_str(&format!("{byte:02x}"));
    }
    name
}

/// Name → column lookup used by [`FeatureExpr::evaluate`].
pub trait ColumnLookup {
    fn column(&self, name: &str) -> Option<&[f64]>;

    /// Row count the columns must agree with, when known.
    fn row_count(&self) -> Option<usize> {
        None
    }
}

impl ColumnLookup for HashMap<String, Vec<f64>> {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.get(name).map(Vec::as_slice)
    }
}

impl ColumnLookup for BTreeMap<String, Vec<f64>> {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.get(name).map(Vec::as_slice)
    }
}

impl ColumnLookup for [(&str, Vec<f64>)] {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| c.as_slice())
    }
}

fn parse_token(raw: &str, schema: &[&str]) -> Result<Token, ExprError> {
    if let Some(op) = BinaryOp::from_symbol(raw) {
        return Ok(Token::Binary(op));
    }
    if let Some(op) = UnaryOp::from_symbol(raw) {
        return Ok(Token::Unary(op));
    }
    if schema.contains(&raw) {
        return Ok(Token::Feature(raw.to_string()));
    }
    Err(ExprError::UnknownToken(raw.to_string()))
}

/// Parses one postfix expression (no commas).
pub fn parse_expr<S: AsRef<str>>(
    text: &str,
    schema: &[S],
    limits: ExprLimits,
) -> Result<FeatureExpr, ExprError> {
    let schema: Vec<&str> = schema.iter().map(AsRef::as_ref).collect();
    let tokens = text
        .split_whitespace()
        .map(|raw| parse_token(raw, &schema))
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.is_empty() {
        return Err(ExprError::MalformedExpression {
            expr: text.to_string(),
            reason: "empty expression".into(),
        });
    }
    FeatureExpr::new(tokens, limits)
}

/// Parses comma-separated postfix expressions against the given base schema.
///
/// Operator spellings take precedence over column names.
pub fn parse_postfix<S: AsRef<str>>(
    text: &str,
    schema: &[S],
    limits: ExprLimits,
) -> Result<Vec<FeatureExpr>, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::MalformedExpression {
            expr: text.to_string(),
            reason: "empty input".into(),
        });
    }
    text.split(',')
        .map(|part| parse_expr(part.trim(), schema, limits))
        .collect()
}

/// Renders expressions in the `", "`-separated postfix line format.
pub fn render_postfix_list<'a, I: IntoIterator<Item = &'a FeatureExpr>>(exprs: I) -> String {
    exprs
        .into_iter()
        .map(FeatureExpr::render_postfix)
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<String> {
        (1..=5).map(|i| format!("f{i}")).collect()
    }

    fn lim() -> ExprLimits {
        ExprLimits::default()
    }

    #[test]
    fn parses_three_expression_sequence() {
        let exprs = parse_postfix("f1 f2 *, f3 sin, f4 f5 -", &schema(), lim()).unwrap();
        assert_eq!(exprs.len(), 3);
        let f = |s: &str| Token::Feature(s.into());
        assert_eq!(
            exprs[0].tokens(),
            &[f("f1"), f("f2"), Token::Binary(BinaryOp::Mul)]
        );
        assert_eq!(exprs[1].tokens(), &[f("f3"), Token::Unary(UnaryOp::Sin)]);
        assert_eq!(
            exprs[2].tokens(),
            &[f("f4"), f("f5"), Token::Binary(BinaryOp::Sub)]
        );
        assert_eq!(exprs[0].render_postfix(), "f1 f2 *");
        assert_eq!(exprs[1].render_postfix(), "f3 sin");
    }

    #[test]
    fn single_column_expression() {
        let exprs = parse_postfix("f1", &schema(), lim()).unwrap();
        assert_eq!(exprs.len(), 1);
        assert!(exprs[0].is_base());
        assert_eq!(exprs[0].name(), "f1");
    }

    #[test]
    fn residual_and_underflow_are_malformed() {
        assert!(matches!(
            parse_postfix("f1 f2", &schema(), lim()),
            Err(ExprError::MalformedExpression { .. })
        ));
        assert!(matches!(
            parse_postfix("f1 +", &schema(), lim()),
            Err(ExprError::MalformedExpression { .. })
        ));
        assert!(matches!(
            parse_postfix("f1 f2 +,", &schema(), lim()),
            Err(ExprError::MalformedExpression { .. })
        ));
    }

    #[test]
    fn unknown_token() {
        assert_eq!(
            parse_postfix("f1 f9 +", &schema(), lim()).unwrap_err(),
            ExprError::UnknownToken("f9".into())
        );
        assert!(matches!(
            parse_postfix("f1 pow", &schema(), lim()),
            Err(ExprError::UnknownToken(_))
        ));
    }

    #[test]
    fn limits_enforced() {
        let deep = "f1 sin sin sin sin sin";
        assert!(matches!(
            parse_postfix(deep, &schema(), lim()),
            Err(ExprError::LimitExceeded { depth: 5, .. })
        ));
        assert!(parse_postfix("f1 sin sin sin sin", &schema(), lim()).is_ok());
        let long = std::iter::repeat_n("f1", 13)
            .collect::<Vec<_>>()
            .join(" ")
            + &" +".repeat(12);
        let tight = ExprLimits {
            max_depth: 20,
            max_tokens: 25,
        };
        assert!(parse_postfix(&long, &schema(), tight).is_ok());
        assert!(matches!(
            parse_postfix(&format!("{long} sin"), &schema(), tight),
            Err(ExprError::LimitExceeded { tokens: 26, .. })
        ));
    }

    #[test]
    fn infix_rendering() {
        let e = parse_postfix("f1 f2 *, f3 sin, f4 f5 - square", &schema(), lim()).unwrap();
        assert_eq!(e[0].render_infix(), "(f1 * f2)");
        assert_eq!(e[1].render_infix(), "sin(f3)");
        assert_eq!(e[2].render_infix(), "((f4 - f5))^2");
    }

    #[test]
    fn evaluate_basic() {
        let mut cols = HashMap::new();
        cols.insert("f1".to_string(), vec![1.0, 2.0]);
        cols.insert("f2".to_string(), vec![3.0, 4.0]);
        let e = parse_expr("f1 f2 +", &schema(), lim()).unwrap();
        assert_eq!(e.evaluate(&cols).unwrap(), vec![4.0, 6.0]);
        let id = parse_expr("f1", &schema(), lim()).unwrap();
        assert_eq!(id.evaluate(&cols).unwrap(), vec![1.0, 2.0]);
        let missing = parse_expr("f1 f3 +", &schema(), lim()).unwrap();
        assert_eq!(
            missing.evaluate(&cols).unwrap_err(),
            ExprError::MissingColumn("f3".into())
        );
        cols.insert("f3".to_string(), vec![1.0]);
        assert!(matches!(
            missing.evaluate(&cols),
            Err(ExprError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn guarded_division_by_hand() {
        // a / (sign(b) * (|b| + 1e-8)), sign(0) = +1
        let a = [1.0, -2.0, 3.0, 0.0, 5.0];
        let b = [0.0, 0.0, -1.0, 2.0, -0.5];
        let expected = [
            1.0 / 1e-8,
            -2.0 / 1e-8,
            3.0 / -(1.0 + 1e-8),
            0.0,
            5.0 / -(0.5 + 1e-8),
        ];
        let mut cols = HashMap::new();
        cols.insert("f1".to_string(), a.to_vec());
        cols.insert("f2".to_string(), b.to_vec());
        let e = parse_expr("f1 f2 /", &schema(), lim()).unwrap();
        let out = e.evaluate(&cols).unwrap();
        for (o, x) in out.iter().zip(expected) {
            assert!(o.is_finite());
            assert_eq!(*o, x);
        }
    }

    #[test]
    fn canonical_keys() {
        let k = |s: &str| parse_expr(s, &schema(), lim()).unwrap().canonical_key();
        assert_eq!(k("f2 f1 +"), k("f1 f2 +"));
        assert_eq!(k("f2 f1 *"), k("f1 f2 *"));
        assert_ne!(k("f1 f2 -"), k("f2 f1 -"));
        assert_ne!(k("f1 f2 /"), k("f2 f1 /"));
        assert_eq!(k("f3 sin f1 f2 + *"), k("f2 f1 + f3 sin *"));
    }

    #[test]
    fn names_are_stable_and_shared_by_equivalent_exprs() {
        let a = parse_expr("f1 f2 +", &schema(), lim()).unwrap();
        let b = parse_expr("f2 f1 +", &schema(), lim()).unwrap();
        assert_eq!(a.name(), b.name());
        assert!(a.name().starts_with('g'));
        assert_eq!(a.name().len(), 9);
        assert_eq!(a.name(), derived_name("+(f1,f2)"));
    }

    #[test]
    fn composition_inlines_tokens() {
        let s = schema();
        let new = parse_expr("f1 f2 *", &s, lim()).unwrap();
        let f3 = FeatureExpr::column("f3");
        let crossed = FeatureExpr::binary(BinaryOp::Add, &new, &f3, lim()).unwrap();
        assert_eq!(crossed.render_postfix(), "f1 f2 * f3 +");
        assert_eq!(crossed.depth(), 2);
    }
}
