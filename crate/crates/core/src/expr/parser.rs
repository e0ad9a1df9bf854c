//! Recursive-descent parser for coefficient expressions.
//!
//! Precedence, tightest first: `^` (right-associative), unary minus,
//! `*` `/`, `+` `-` (left-associative).

use super::{BinOp, ExprError, Func, Node, Var};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(u8),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer {
            src: src.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            let tok = lx.next()?;
            let done = tok.0 == Tok::End;
            out.push(tok);
            if done {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            b'0'..=b'9' | b'.' => return self.number(),
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos])
                    .expect("ascii identifier")
                    .to_string();
                return Ok((Tok::Ident(name), start));
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character {:?}", c as char),
                })
            }
        };
        self.pos += 1;
        Ok((tok, start))
    }

    fn number(&mut self) -> Result<(Tok, usize), ExprError> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ExprError::Syntax {
                offset: start,
                message: "malformed number".into(),
            });
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // Not an exponent; leave `e` for the identifier check below.
                self.pos = save;
            }
        }
        if self
            .src
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_' || *b == b'.')
        {
            return Err(ExprError::Syntax {
                offset: self.pos,
                message: "malformed number".into(),
            });
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("malformed number {text:?}"),
        })?;
        if !value.is_finite() {
            return Err(ExprError::Syntax {
                offset: start,
                message: format!("number {text:?} out of range"),
            });
        }
        Ok((Tok::Num(value), start))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dims: usize,
    depth: usize,
}

// Guards against stack exhaustion on adversarial input.
const MAX_DEPTH: usize = 256;

pub(super) fn parse(source: &str, dims: usize) -> Result<Node, ExprError> {
    if source.trim().is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks: Lexer::tokens(source)?,
        pos: 0,
        dims,
        depth: 0,
    };
    let node = p.expr()?;
    match p.peek() {
        Tok::End => Ok(node),
        tok => Err(p.error(format!("unexpected {}", describe(tok)))),
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Op(c) => format!("operator `{}`", *c as char),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::End => "end of input".into(),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if t.0 != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: String) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            message,
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply".into()));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op(b'+') => BinOp::Add,
                Tok::Op(b'-') => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op(b'*') => BinOp::Mul,
                Tok::Op(b'/') => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let node = match self.peek() {
            Tok::Op(b'-') => {
                self.bump();
                Node::Neg(Box::new(self.unary()?))
            }
            Tok::Op(b'+') => {
                self.bump();
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(node)
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek() == &Tok::Op(b'^') {
            self.bump();
            // Right-associative; the exponent may carry its own sign.
            let exp = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek() == &Tok::LParen {
                    self.bump();
                    return self.call(name, offset);
                }
                match name.as_str() {
                    "pi" => return Ok(Node::Const(std::f64::consts::PI)),
                    "e" => return Ok(Node::Const(std::f64::consts::E)),
                    _ => {}
                }
                Var::parse(&name, self.dims)
                    .map(Node::Var)
                    .ok_or(ExprError::UnknownIdentifier { name, offset })
            }
            other => Err(ExprError::Syntax {
                offset,
                message: format!("expected a value, found {}", describe(&other)),
            }),
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Node, ExprError> {
        let expected = if Func::from_name(&name).is_some() {
            1
        } else if name == "min" || name == "max" {
            2
        } else {
            return Err(ExprError::UnknownIdentifier { name, offset });
        };
        let mut args = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                args.push(self.expr()?);
                if self.peek() == &Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_rparen()?;
        if args.len() != expected {
            return Err(ExprError::Arity {
                name,
                expected,
                found: args.len(),
            });
        }
        let mut args = args.into_iter();
        let a = Box::new(args.next().expect("arity checked"));
        Ok(match Func::from_name(&name) {
            Some(f) => Node::Unary(f, a),
            None => {
                let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                Node::Binary(op, a, Box::new(args.next().expect("arity checked")))
            }
        })
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            tok => Err(self.error(format!("expected `)`, found {}", describe(tok)))),
        }
    }
}
