//! A tiny arithmetic expression language in one variable `x`.
//!
//! Grammar (usual precedence, `^` is right associative and binds tighter
//! than unary minus):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := ('-' | '+') unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'x' | 'pi' | 'e' | func '(' expr ')' | '(' expr ')'
//! func   := 'exp' | 'ln' | 'sin' | 'cos' | 'sqrt'
//! ```
//!
//! Expressions can be differentiated symbolically, which gives coefficient
//! derivatives without finite differences.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token '{tok}' at offset {pos}")]
    UnexpectedToken { tok: String, pos: usize },
    #[error("unknown identifier '{name}' at offset {pos}")]
    UnknownIdent { name: String, pos: usize },
    #[error("invalid number '{text}' at offset {pos}")]
    BadNumber { text: String, pos: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Sqrt => v.sqrt(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        Self::parse_in(src, "x")
    }

    /// Parses with a different name for the variable, e.g. `t` for inputs.
    pub fn parse_in(src: &str, var: &str) -> Result<Expr, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, var };
        let e = p.expr()?;
        match p.peek() {
            None => Ok(e),
            Some((tok, pos)) => Err(ParseError::UnexpectedToken {
                tok: tok.to_string(),
                pos: *pos,
            }),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var => x,
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => {
                let base = a.eval(x);
                match b.as_ref() {
                    Expr::Const(c) if c.fract() == 0.0 && c.abs() < 64.0 => base.powi(*c as i32),
                    _ => base.powf(b.eval(x)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Symbolic derivative with respect to `x`, lightly simplified.
    pub fn derivative(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var => Const(1.0),
            Neg(a) => neg(a.derivative()),
            Add(a, b) => add(a.derivative(), b.derivative()),
            Sub(a, b) => sub(a.derivative(), b.derivative()),
            Mul(a, b) => add(
                mul(a.derivative(), (**b).clone()),
                mul((**a).clone(), b.derivative()),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(), (**b).clone()),
                    mul((**a).clone(), b.derivative()),
                ),
                pow((**b).clone(), Const(2.0)),
            ),
            Pow(a, b) => match b.constant_value() {
                Some(c) => mul(
                    mul(Const(c), pow((**a).clone(), Const(c - 1.0))),
                    a.derivative(),
                ),
                None => {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    mul(
                        self.clone(),
                        add(
                            mul(b.derivative(), Call(Func::Ln, a.clone())),
                            div(mul((**b).clone(), a.derivative()), (**a).clone()),
                        ),
                    )
                }
            },
            Call(f, a) => {
                let inner = a.derivative();
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Ln => div(Const(1.0), (**a).clone()),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Sqrt => div(Const(0.5), self.clone()),
                };
                mul(outer, inner)
            }
        }
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), _) if *z == 0.0 => b,
        (_, Expr::Const(z)) if *z == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (_, Expr::Const(z)) if *z == 0.0 => a,
        (Expr::Const(z), _) if *z == 0.0 => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if *z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), _) if *o == 1.0 => b,
        (_, Expr::Const(o)) if *o == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
        (Expr::Const(z), _) if *z == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(o)) if *o == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Const(o)) if *o == 1.0 => a,
        (_, Expr::Const(z)) if *z == 0.0 => Expr::Const(1.0),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x.powf(*y)),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var => write!(f, "x"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Op(c) => write!(f, "{c}"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, ch) = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let end = if i < chars.len() { chars[i].0 } else { src.len() };
            let text = &src[pos..end];
            let v: f64 = text.parse().map_err(|_| ParseError::BadNumber {
                text: text.to_string(),
                pos: chars[start].0,
            })?;
            out.push((Token::Num(v), pos));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let end = if i < chars.len() { chars[i].0 } else { src.len() };
            out.push((Token::Ident(src[pos..end].to_string()), pos));
        } else {
            let tok = match ch {
                '+' | '-' | '*' | '/' | '^' => Token::Op(ch),
                '(' => Token::LParen,
                ')' => Token::RParen,
                _ => return Err(ParseError::UnexpectedChar { ch, pos }),
            };
            out.push((tok, pos));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    var: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<(Token, usize), ParseError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(ParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some((Token::Op(c), _)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek_op().filter(|c| *c == '+' || *c == '-') {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_op().filter(|c| *c == '*' || *c == '/') {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.next()?;
        match tok {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Token::Ident(name) => {
                let func = match name.as_str() {
                    v if v == self.var => return Ok(Expr::Var),
                    "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
                    "e" => return Ok(Expr::Const(std::f64::consts::E)),
                    "exp" => Func::Exp,
                    "ln" => Func::Ln,
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "sqrt" => Func::Sqrt,
                    _ => return Err(ParseError::UnknownIdent { name, pos }),
                };
                match self.next()? {
                    (Token::LParen, _) => {}
                    (t, p) => {
                        return Err(ParseError::UnexpectedToken {
                            tok: t.to_string(),
                            pos: p,
                        })
                    }
                }
                let arg = self.expr()?;
                self.expect_rparen()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            t => Err(ParseError::UnexpectedToken {
                tok: t.to_string(),
                pos,
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.next()? {
            (Token::RParen, _) => Ok(()),
            (t, p) => Err(ParseError::UnexpectedToken {
                tok: t.to_string(),
                pos: p,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x)
    }

    #[test]
    fn other_variable_names() {
        let e = Expr::parse_in("2*t + 1", "t").unwrap();
        assert_eq!(e.eval(3.0), 7.0);
        assert!(Expr::parse_in("x", "t").is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0), 512.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("(1 + x) / 2", 3.0), 2.0);
        assert_eq!(ev("1e-3 * 2E+2", 0.0), 0.2);
        assert!((ev("sqrt(1 + x^2)", 1.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((ev("exp(x) * cos(pi * x)", 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_position() {
        assert!(matches!(
            Expr::parse("1 + y"),
            Err(ParseError::UnknownIdent { pos: 4, .. })
        ));
        assert!(matches!(Expr::parse("1 +"), Err(ParseError::UnexpectedEnd)));
        assert!(matches!(
            Expr::parse("2 # 3"),
            Err(ParseError::UnexpectedChar { ch: '#', pos: 2 })
        ));
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let cases = [
            "1 + x^2",
            "exp(x/2) * sin(3*x)",
            "sqrt(2 + cos(x))",
            "(1 + x) / (2 + x^2)",
            "x ^ x",
            "ln(3 + x) - 1/(1+x^2)",
        ];
        for src in cases {
            let e = Expr::parse(src).unwrap();
            let d = e.derivative();
            let d2 = d.derivative();
            for &x in &[0.3, 0.55, 0.9] {
                let h = 1e-5;
                let fd = (e.eval(x + h) - e.eval(x - h)) / (2.0 * h);
                let fd2 = (d.eval(x + h) - d.eval(x - h)) / (2.0 * h);
                assert!((fd - d.eval(x)).abs() < 1e-8 * (1.0 + fd.abs()), "{src} at {x}");
                assert!((fd2 - d2.eval(x)).abs() < 1e-7 * (1.0 + fd2.abs()), "{src}'' at {x}");
            }
        }
    }
}
