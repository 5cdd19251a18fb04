//! Arithmetic expressions over the coordinates `x1 … xn`.
//!
//! Grammar (usual precedence, `^` binds tightest and is right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'pi' | x<k> | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | sqrt | abs
//! ```

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Parsed expression; evaluation never allocates.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    max_var: usize,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    max_var: usize,
}

fn err<T>(src: &str, pos: usize, msg: &str) -> Result<T> {
    Err(Error::Config(format!("expression '{src}' at column {}: {msg}", pos + 1)))
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Option<char> {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
        trimmed.chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(c @ ('+' | '-')) => c,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(c @ ('*' | '/')) => c,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return err(self.src, self.pos, "unexpected end"),
        };
        if self.eat('(') {
            let e = self.expr()?;
            if !self.eat(')') {
                return err(self.src, self.pos, "expected ')'");
            }
            return Ok(e);
        }
        let rest = &self.src[start..];
        let c = rest.chars().next().unwrap();
        if c.is_ascii_digit() || c == '.' {
            let mut end = rest
                .find(|ch: char| !(ch.is_ascii_digit() || ch == '.'))
                .unwrap_or(rest.len());
            // exponent part
            let tail = &rest[end..];
            if tail.starts_with(['e', 'E']) {
                let sign = tail[1..].starts_with(['+', '-']) as usize;
                let digits = tail[1 + sign..].chars().take_while(|d| d.is_ascii_digit()).count();
                if digits > 0 {
                    end += 1 + sign + digits;
                }
            }
            return match rest[..end].parse::<f64>() {
                Ok(v) => {
                    self.pos = start + end;
                    Ok(Node::Num(v))
                }
                Err(_) => err(self.src, start, "malformed number"),
            };
        }
        if c.is_ascii_alphabetic() {
            let end = rest.find(|ch: char| !ch.is_ascii_alphanumeric()).unwrap_or(rest.len());
            let word = &rest[..end];
            self.pos = start + end;
            let func = match word {
                "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                "sin" => Func::Sin,
                "cos" => Func::Cos,
                "exp" => Func::Exp,
                "sqrt" => Func::Sqrt,
                "abs" => Func::Abs,
                w if w.starts_with('x') && w.len() > 1 => {
                    return match w[1..].parse::<usize>() {
                        Ok(k) if (1..=3).contains(&k) => {
                            self.max_var = self.max_var.max(k);
                            Ok(Node::Var(k - 1))
                        }
                        _ => err(self.src, start, "coordinates are x1, x2, x3"),
                    };
                }
                _ => return err(self.src, start, &format!("unknown name '{word}'")),
            };
            if !self.eat('(') {
                return err(self.src, self.pos, "expected '(' after function name");
            }
            let arg = self.expr()?;
            if !self.eat(')') {
                return err(self.src, self.pos, "expected ')'");
            }
            return Ok(Node::Call(func, Box::new(arg)));
        }
        err(self.src, start, &format!("unexpected '{c}'"))
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src, pos: 0, max_var: 0 };
        let root = p.expr()?;
        if p.peek().is_some() {
            return err(src, p.pos, "trailing input");
        }
        Ok(Expr { source: src.to_string(), root, max_var: p.max_var })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest coordinate index used (1-based; 0 for constants).
    pub fn max_var(&self) -> usize {
        self.max_var
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }
}

fn eval(node: &Node, x: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(k) => x[*k],
        Node::Neg(a) => -eval(a, x),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x), eval(b, x));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => {
                    // integer powers stay exact for negative bases
                    if b.fract() == 0.0 && b.abs() <= 64.0 {
                        a.powi(b as i32)
                    } else {
                        a.powf(b)
                    }
                }
            }
        }
        Node::Call(f, a) => {
            let v = eval(a, x);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Sqrt => v.sqrt(),
                Func::Abs => v.abs(),
            }
        }
    }
}
