//! Infix expression parser.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := ("-" | "+") unary | power
//! power   := primary ("^" unary)?
//! primary := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! number  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
//! ident   := (letter | "_") (letter | digit | "_")*
//! ```
//!
//! Exponents must fold to a constant. Function names come from
//! [`CALL_ATOMS`]; `pow(a, p)` is the call form of `a^p`.

use thiserror::Error;

use super::expr::{BinaryAtom, Expr, UnaryAtom, CALL_ATOMS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown atom `{name}` at offset {offset}")]
    UnknownAtom { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::UnknownAtom { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if self.pos >= bytes.len() {
            return Ok((Tok::End, start));
        }
        let c = bytes[self.pos] as char;
        if c.is_ascii_digit() || c == '.' {
            let mut end = self.pos;
            while end < bytes.len() && ((bytes[end] as char).is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
                    while k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &self.src[start..end];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut end = self.pos;
            while end < bytes.len() && ((bytes[end] as char).is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        if "+-*/^(),".contains(c) {
            self.pos += 1;
            return Ok((Tok::Op(c), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
    is_var: &'a dyn Fn(&str) -> bool,
}

/// Parses `text`, resolving identifiers through `is_var`.
pub fn parse_with(text: &str, is_var: &dyn Fn(&str) -> bool) -> Result<Expr, ParseError> {
    let mut lexer = Lexer { src: text, pos: 0 };
    let (tok, at) = lexer.next()?;
    let mut p = Parser { lexer, tok, at, is_var };
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ParseError> {
        let (t, at) = self.lexer.next()?;
        self.tok = t;
        self.at = at;
        Ok(())
    }

    fn syntax(&self, message: &str) -> ParseError {
        let found = match &self.tok {
            Tok::End => "end of input".to_string(),
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
        };
        ParseError::Syntax {
            offset: self.at,
            message: format!("{message}, found {found}"),
        }
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.tok == Tok::Op(op) {
            self.bump()
        } else {
            Err(self.syntax(&format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.bump()?;
                    terms.push(self.term()?);
                }
                Tok::Op('-') => {
                    self.bump()?;
                    terms.push(Expr::neg(self.term()?));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::sum(terms) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.bump()?;
                    let rhs = self.unary()?;
                    acc = Expr::product(vec![acc, rhs]);
                }
                Tok::Op('/') => {
                    self.bump()?;
                    let rhs = self.unary()?;
                    acc = Expr::div(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.tok {
            Tok::Op('-') => {
                self.bump()?;
                Ok(Expr::neg(self.unary()?))
            }
            Tok::Op('+') => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.tok == Tok::Op('^') {
            self.bump()?;
            let at = self.at;
            let exponent = self.unary()?;
            let p = exponent.as_const().ok_or(ParseError::Syntax {
                offset: at,
                message: "exponent must be a numeric constant".into(),
            })?;
            return Ok(Expr::pow(base, p));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Op('(') => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.at;
                self.bump()?;
                if self.tok == Tok::Op('(') {
                    self.call(name, at)
                } else if (self.is_var)(&name) {
                    Ok(Expr::Var(name))
                } else {
                    Err(ParseError::UnknownIdentifier { name, offset: at })
                }
            }
            _ => Err(self.syntax("expected a number, identifier or `(`")),
        }
    }

    fn call(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        let arity = CALL_ATOMS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, a)| *a)
            .ok_or_else(|| ParseError::UnknownAtom { name: name.clone(), offset: at })?;
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while self.tok == Tok::Op(',') {
            self.bump()?;
            args.push(self.expr()?);
        }
        let close_at = self.at;
        self.expect(')')?;
        if args.len() != arity {
            return Err(ParseError::Syntax {
                offset: close_at,
                message: format!("`{name}` takes {arity} argument(s), got {}", args.len()),
            });
        }
        let mut args = args.into_iter();
        let a = args.next().unwrap();
        let e = match name.as_str() {
            "min" => Expr::binary(BinaryAtom::Min, a, args.next().unwrap()),
            "max" => Expr::binary(BinaryAtom::Max, a, args.next().unwrap()),
            "pow" => {
                let p = args.next().unwrap().as_const().ok_or(ParseError::Syntax {
                    offset: at,
                    message: "pow exponent must be a numeric constant".into(),
                })?;
                Expr::pow(a, p)
            }
            other => {
                let atom = UnaryAtom::ALL
                    .into_iter()
                    .find(|u| u.name() == other)
                    .expect("unary atoms mirror CALL_ATOMS");
                Expr::unary(atom, a)
            }
        };
        Ok(e)
    }
}
