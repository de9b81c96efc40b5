//! A small arithmetic expression language for coefficients `a_h(t)` and
//! initial data `u_h(x)`.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          // right associative
//! atom    := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than a leading unary minus, so `-t^2` is `-(t^2)`,
//! while `2^-1` is `2^(-1)`. The identifier `pi` is a constant; every other
//! bare identifier must be one of the variables allowed by the caller.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> Result<f64, EvalError> {
        match self {
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Exp => Ok(v.exp()),
            Func::Abs => Ok(v.abs()),
            Func::Log if v <= 0.0 => Err(EvalError::Domain(format!("log of non-positive value {v}"))),
            Func::Log => Ok(v.ln()),
            Func::Sqrt if v < 0.0 => Err(EvalError::Domain(format!("sqrt of negative value {v}"))),
            Func::Sqrt => Ok(v.sqrt()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Abstract syntax tree of a parsed expression. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Var(String),
    Neg(Box<Expression>),
    Call(Func, Box<Expression>),
    Binary(BinOp, Box<Expression>, Box<Expression>),
}

/// Variable bindings for [`Expression::evaluate`].
pub type Bindings<'a> = [(&'a str, f64)];

impl Expression {
    pub fn evaluate(&self, bindings: &Bindings<'_>) -> Result<f64, EvalError> {
        match self {
            Expression::Num(v) => Ok(*v),
            Expression::Var(name) => bindings
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expression::Neg(inner) => Ok(-inner.evaluate(bindings)?),
            Expression::Call(f, arg) => f.apply(arg.evaluate(bindings)?),
            Expression::Binary(op, lhs, rhs) => {
                let a = lhs.evaluate(bindings)?;
                let b = rhs.evaluate(bindings)?;
                binary(*op, a, b)
            }
        }
    }

    /// Evaluate with a single bound variable.
    pub fn eval_at(&self, var: &str, value: f64) -> Result<f64, EvalError> {
        self.evaluate(&[(var, value)])
    }

    /// Free variables, sorted and deduplicated.
    pub fn free_vars(&self) -> Vec<String> {
        fn walk(e: &Expression, out: &mut Vec<String>) {
            match e {
                Expression::Num(_) => {}
                Expression::Var(n) => out.push(n.clone()),
                Expression::Neg(a) | Expression::Call(_, a) => walk(a, out),
                Expression::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }
}

fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::Domain(format!("division by zero ({a}/0)")));
            }
            a / b
        }
        BinOp::Pow => {
            if a == 0.0 && b < 0.0 {
                return Err(EvalError::Domain(format!("0 raised to negative power {b}")));
            }
            if a < 0.0 && b.fract() != 0.0 {
                return Err(EvalError::Domain(format!("negative base {a} with non-integer exponent {b}")));
            }
            a.powf(b)
        }
    };
    if v.is_nan() {
        return Err(EvalError::Domain(format!("{a} {} {b} is not a number", op.symbol())));
    }
    Ok(v)
}

/// Fully parenthesised printing; reparsing yields a structurally equal tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Num(v) => write!(f, "{v:?}"),
            Expression::Var(n) => f.write_str(n),
            Expression::Neg(a) => write!(f, "(-{a})"),
            Expression::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expression::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((tok, start));
            i += c.len_utf8();
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    allowed: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Tok::Op(c)) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            let rhs = self.term()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            let rhs = self.unary()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expression::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression, ParseError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Expression::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expression::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.syntax("expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ParseError::UnknownIdentifier { name, offset });
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(&Tok::RParen) {
                        return self.syntax("expected `)` after function argument");
                    }
                    self.pos += 1;
                    Ok(Expression::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Expression::Num(std::f64::consts::PI))
                } else if self.allowed.contains(&name.as_str()) {
                    Ok(Expression::Var(name))
                } else {
                    Err(ParseError::UnknownIdentifier { name, offset })
                }
            }
            Some(_) => self.syntax("expected a number, variable, function or `(`"),
            None => self.syntax("unexpected end of input"),
        }
    }
}

/// Parse `source`, accepting only the identifiers in `allowed_vars` as variables.
pub fn parse(source: &str, allowed_vars: &[&str]) -> Result<Expression, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0, end: source.len(), allowed: allowed_vars };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(src: &str, t: f64) -> Result<f64, EvalError> {
        parse(src, &["t"]).unwrap().eval_at("t", t)
    }

    #[test]
    fn basic_examples() {
        assert_eq!(ev("3*t^2 - 1", 2.0).unwrap(), 11.0);
        assert_eq!(ev("sin(t)", 0.0).unwrap(), 0.0);
        assert_eq!(ev("1/(2-t)", 1.0).unwrap(), 1.0);
        assert_eq!(ev("exp(0)", 0.0).unwrap(), 1.0);
    }

    #[test]
    fn trailing_operator_reports_offset() {
        match parse("2*", &["t"]) {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(ev("sqrt(-1)", 0.0), Err(EvalError::Domain(_))));
        assert!(matches!(ev("log(t)", 0.0), Err(EvalError::Domain(_))));
        assert!(matches!(ev("1/t", 0.0), Err(EvalError::Domain(_))));
        assert!(matches!(ev("t^(-1)", 0.0), Err(EvalError::Domain(_))));
        assert!(matches!(ev("(-2)^0.5", 0.0), Err(EvalError::Domain(_))));
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1+2*3", 0.0).unwrap(), 7.0);
        assert_eq!(ev("-t^2", 3.0).unwrap(), -9.0);
        assert_eq!(ev("2^3^2", 0.0).unwrap(), 512.0);
        assert_eq!(ev("2^-1", 0.0).unwrap(), 0.5);
        assert_eq!(ev("8/4/2", 0.0).unwrap(), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0).unwrap(), -4.0);
        assert_eq!(ev("--t", 2.0).unwrap(), 2.0);
    }

    #[test]
    fn variables_are_checked() {
        assert_eq!(
            parse("x + 1", &["t"]),
            Err(ParseError::UnknownIdentifier { name: "x".into(), offset: 0 })
        );
        assert!(matches!(parse("tan(t)", &["t"]), Err(ParseError::UnknownIdentifier { .. })));
        assert_eq!(parse("cos(x)*pi", &["x"]).unwrap().free_vars(), vec!["x".to_string()]);
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(ev("1e-3*1e3", 0.0).unwrap(), 1.0);
        assert_eq!(ev("2.5E+1", 0.0).unwrap(), 25.0);
        assert!(parse("1..2", &[]).is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expression> {
        let leaf = prop_oneof![(0.0f64..100.0).prop_map(Expression::Num), Just(Expression::Var("t".into())),];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expression::Neg(Box::new(e))),
                (inner.clone(), 0usize..6).prop_map(|(e, i)| {
                    let f = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Sqrt, Func::Abs][i];
                    Expression::Call(f, Box::new(e))
                }),
                (inner.clone(), inner, 0usize..5).prop_map(|(a, b, i)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][i];
                    Expression::Binary(op, Box::new(a), Box::new(b))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse(&printed, &["t"]).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(parse(&reparsed.to_string(), &["t"]).unwrap(), reparsed);
        }
    }
}
