//! Arithmetic expressions over the state, used for custom drifts and test
//! functions in configuration files.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numbers, the constants
//! `pi` and `e`, the variables `x` (first coordinate), `x1..xd` and `r`
//! (Euclidean norm), and the functions `sin cos tan exp ln log sqrt abs
//! tanh atan sign` (one argument) and `min max pow` (two arguments).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based coordinate.
    Var(usize),
    Norm,
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

const UNARY: [&str; 11] = [
    "sin", "cos", "tan", "exp", "ln", "log", "sqrt", "abs", "tanh", "atan", "sign",
];
const BINARY: [&str; 3] = ["min", "max", "pow"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad number `{text}` in expression")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Domain(format!("unexpected character `{c}` in expression")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(Error::Domain(format!("expected `{op}` in expression")))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat('+') {
                '+'
            } else if self.eat('-') {
                '-'
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                '*'
            } else if self.eat('/') {
                '/'
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    // Unary minus binds looser than `^`, so `-x^2` is `-(x^2)`.
    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    // Right associative.
    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                self.ident(name)
            }
            other => Err(Error::Domain(format!(
                "unexpected token {other:?} in expression"
            ))),
        }
    }

    fn ident(&mut self, name: String) -> Result<Expr> {
        match name.as_str() {
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            "e" => return Ok(Expr::Num(std::f64::consts::E)),
            "x" => return Ok(Expr::Var(0)),
            "r" => return Ok(Expr::Norm),
            _ => {}
        }
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx == 0 || idx > self.dim {
                return Err(Error::Domain(format!(
                    "variable `{name}` out of range for dimension {}",
                    self.dim
                )));
            }
            return Ok(Expr::Var(idx - 1));
        }
        let arity = if UNARY.contains(&name.as_str()) {
            1
        } else if BINARY.contains(&name.as_str()) {
            2
        } else {
            return Err(Error::Domain(format!("unknown name `{name}` in expression")));
        };
        self.expect('(')?;
        let mut args = vec![self.sum()?];
        while self.eat(',') {
            args.push(self.sum()?);
        }
        self.expect(')')?;
        if args.len() != arity {
            return Err(Error::Domain(format!(
                "`{name}` takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        Ok(Expr::Call(name, args))
    }
}

impl Expr {
    /// Parses an expression over states of dimension `dim`.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let mut p = Parser {
            toks: tokenize(src)?,
            pos: 0,
            dim,
        };
        if p.toks.is_empty() {
            return Err(Error::Domain("empty expression".into()));
        }
        let e = p.sum()?;
        if p.pos != p.toks.len() {
            return Err(Error::Domain(format!(
                "trailing input after position {} in expression",
                p.pos
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Expr::Neg(e) => -e.eval(x),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Expr::Call(name, args) => {
                let a = args[0].eval(x);
                match name.as_str() {
                    "sin" => a.sin(),
                    "cos" => a.cos(),
                    "tan" => a.tan(),
                    "exp" => a.exp(),
                    "ln" | "log" => a.ln(),
                    "sqrt" => a.sqrt(),
                    "abs" => a.abs(),
                    "tanh" => a.tanh(),
                    "atan" => a.atan(),
                    "sign" => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    "min" => a.min(args[1].eval(x)),
                    "max" => a.max(args[1].eval(x)),
                    _ => a.powf(args[1].eval(x)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> f64 {
        Expr::parse(src, x.len()).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[0.0]), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[0.0]), 512.0);
        assert_eq!(ev("-x^2", &[3.0]), -9.0);
        assert_eq!(ev("(1 - x) / 2", &[5.0]), -2.0);
        assert_eq!(ev("2e-1 * 10", &[0.0]), 2.0);
        assert_eq!(ev("10 - 2 - 3", &[0.0]), 5.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("-x * abs(x)^0.5", &[4.0]), -8.0);
        assert_eq!(ev("x1 + 2*x2", &[1.0, 3.0]), 7.0);
        assert_eq!(ev("r", &[3.0, 4.0]), 5.0);
        assert_eq!(ev("max(x, 0) + min(x, 0)", &[-2.0]), -2.0);
        assert_eq!(ev("pow(2, 10)", &[0.0]), 1024.0);
        assert!((ev("sin(pi/2) + ln(e)", &[0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(ev("sign(-3) + sign(0)", &[0.0]), -1.0);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in ["", "1 +", "foo(x)", "sin(1, 2)", "x3", "(1", "1 2", "2 $ 3", "x0"] {
            assert!(Expr::parse(bad, 2).is_err(), "{bad}");
        }
    }
}
