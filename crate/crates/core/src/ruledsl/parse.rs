use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{builtins, types, Expr, Input, Op, Outputs, RuleProgram};
use crate::filters::StepOrder;

pub const MAX_SOURCE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown primitive or name `{0}`")]
    UnknownPrimitive(String),
    #[error("dimension error at node {node}: {detail}")]
    DimensionError { node: usize, detail: String },
    #[error("source is {0} bytes, limit is 65536")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Keyword(&'a str),
    Atom(&'a str),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let b = self.src.as_bytes();
        while self.pos < b.len() {
            match b[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b';' => {
                    while self.pos < b.len() && b[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn next(&mut self) -> Option<(usize, Tok<'a>)> {
        self.skip_ws();
        let b = self.src.as_bytes();
        if self.pos >= b.len() {
            return None;
        }
        let start = self.pos;
        match b[start] {
            b'(' => {
                self.pos += 1;
                Some((start, Tok::Open))
            }
            b')' => {
                self.pos += 1;
                Some((start, Tok::Close))
            }
            _ => {
                while self.pos < b.len() && !matches!(b[self.pos], b' ' | b'\t' | b'\n' | b'\r' | b'(' | b')' | b';')
                {
                    self.pos += 1;
                }
                let text = &self.src[start..self.pos];
                if let Some(k) = text.strip_prefix(':') {
                    Some((start, Tok::Keyword(k)))
                } else {
                    Some((start, Tok::Atom(text)))
                }
            }
        }
    }
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    at: usize,
    end: usize,
    names: Vec<String>,
}

fn syntax(position: usize, message: &str) -> ParseError {
    ParseError::SyntaxError { position, message: message.to_string() }
}

fn looks_numeric(s: &str) -> bool {
    let b = s.as_bytes();
    match b.first() {
        Some(c) if c.is_ascii_digit() || *c == b'.' => true,
        Some(b'-') | Some(b'+') => b.len() > 1 && (b[1].is_ascii_digit() || b[1] == b'.'),
        _ => false,
    }
}

const RESERVED: [&str; 4] = ["let", "out", "rule", "kf-canonical"];

fn valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok<'a>> {
        let t = self.toks.get(self.at).map(|(_, t)| t.clone());
        self.at += 1;
        t
    }

    fn expect_open(&mut self) -> Result<(), ParseError> {
        let p = self.pos();
        match self.bump() {
            Some(Tok::Open) => Ok(()),
            _ => Err(syntax(p, "expected `(`")),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        let p = self.pos();
        match self.bump() {
            Some(Tok::Close) => Ok(()),
            _ => Err(syntax(p, "expected `)`")),
        }
    }

    fn atom(&mut self, what: &str) -> Result<&'a str, ParseError> {
        let p = self.pos();
        match self.bump() {
            Some(Tok::Atom(a)) => Ok(a),
            _ => Err(ParseError::SyntaxError { position: p, message: alloc::format!("expected {what}") }),
        }
    }

    fn program(&mut self) -> Result<RuleProgram, ParseError> {
        self.expect_open()?;
        let p = self.pos();
        let head = self.atom("`rule`")?;
        if head == "kf-canonical" {
            self.expect_close()?;
            return Ok(builtins::canonical_kf_program());
        }
        if head != "rule" {
            return Err(syntax(p, "program must start with `rule`"));
        }
        let mut order = StepOrder::UpdatePredict;
        if let Some(Tok::Keyword(k)) = self.peek() {
            let kp = self.pos();
            if *k != "order" {
                return Err(syntax(kp, "unknown rule keyword"));
            }
            self.bump();
            let vp = self.pos();
            order = match self.atom("step order")? {
                "update-predict" => StepOrder::UpdatePredict,
                "predict-update" => StepOrder::PredictUpdate,
                _ => return Err(syntax(vp, "order must be update-predict or predict-update")),
            };
        }
        let mut bindings = Vec::new();
        loop {
            let open_pos = self.pos();
            self.expect_open()?;
            let hp = self.pos();
            match self.atom("`let` or `out`")? {
                "let" => {
                    let np = self.pos();
                    let name = self.atom("binding name")?;
                    if !valid_name(name)
                        || RESERVED.contains(&name)
                        || Input::from_name(name).is_some()
                        || Op::from_name(name).is_some()
                    {
                        return Err(syntax(np, "invalid binding name"));
                    }
                    if self.names.iter().any(|n| n == name) {
                        return Err(syntax(np, "name bound twice"));
                    }
                    let e = self.expr()?;
                    self.expect_close()?;
                    self.names.push(name.to_string());
                    bindings.push((name.to_string(), e));
                }
                "out" => {
                    let outputs = self.outputs(open_pos)?;
                    self.expect_close()?;
                    self.expect_close()?;
                    let ep = self.pos();
                    if self.at < self.toks.len() {
                        return Err(syntax(ep, "trailing input after program"));
                    }
                    return Ok(RuleProgram { order, bindings, outputs });
                }
                _ => return Err(syntax(hp, "expected `let` or `out`")),
            }
        }
    }

    fn outputs(&mut self, open_pos: usize) -> Result<Outputs, ParseError> {
        let mut slots: [Option<Expr>; 4] = [None, None, None, None];
        while let Some(Tok::Keyword(k)) = self.peek() {
            let kp = self.pos();
            let idx = match *k {
                "P-post" => 0,
                "P-pred" => 1,
                "x-post" => 2,
                "x-pred" => 3,
                _ => return Err(syntax(kp, "unknown output keyword")),
            };
            self.bump();
            if slots[idx].is_some() {
                return Err(syntax(kp, "output given twice"));
            }
            slots[idx] = Some(self.expr()?);
        }
        let [a, b, c, d] = slots;
        match (a, b, c, d) {
            (Some(p_post), Some(p_pred), Some(x_post), Some(x_pred)) => {
                Ok(Outputs { p_post, p_pred, x_post, x_pred })
            }
            _ => Err(syntax(open_pos, "out needs :P-post :P-pred :x-post :x-pred")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let p = self.pos();
        match self.bump() {
            None => Err(syntax(p, "unexpected end of input")),
            Some(Tok::Close) => Err(syntax(p, "unexpected `)`")),
            Some(Tok::Keyword(_)) => Err(syntax(p, "unexpected keyword")),
            Some(Tok::Atom(a)) => self.leaf(p, a),
            Some(Tok::Open) => {
                let op_pos = self.pos();
                let name = self.atom("operator")?;
                let op = Op::from_name(name).ok_or_else(|| ParseError::UnknownPrimitive(name.to_string()))?;
                let _ = op_pos;
                match op {
                    Op::Pow(_) => {
                        let base = self.expr()?;
                        let ep = self.pos();
                        let k = match self.atom("integer exponent")? {
                            "2" => 2,
                            "3" => 3,
                            "4" => 4,
                            _ => return Err(syntax(ep, "pow exponent must be 2, 3 or 4")),
                        };
                        self.expect_close()?;
                        Ok(Expr::Call(Op::Pow(k), alloc::vec![base]))
                    }
                    Op::Clip => {
                        let arg = self.expr()?;
                        let mut hi = None;
                        let mut lo = None;
                        while let Some(Tok::Keyword(k)) = self.peek() {
                            let kp = self.pos();
                            let which = *k;
                            self.bump();
                            let slot = match which {
                                "hi" => &mut hi,
                                "lo" => &mut lo,
                                _ => return Err(syntax(kp, "clip takes :hi and :lo")),
                            };
                            if slot.is_some() {
                                return Err(syntax(kp, "clip bound given twice"));
                            }
                            *slot = Some(self.expr()?);
                        }
                        let cp = self.pos();
                        self.expect_close()?;
                        match (hi, lo) {
                            (Some(h), Some(l)) => Ok(Expr::Call(Op::Clip, alloc::vec![arg, h, l])),
                            _ => Err(syntax(cp, "clip needs both :hi and :lo")),
                        }
                    }
                    _ => {
                        let mut args = Vec::new();
                        while !matches!(self.peek(), Some(Tok::Close) | None) {
                            args.push(self.expr()?);
                        }
                        let cp = self.pos();
                        self.expect_close()?;
                        let ok = match op.arity() {
                            super::Arity::Unary => args.len() == 1,
                            super::Arity::Binary => args.len() == 2,
                            super::Arity::Variadic => args.len() >= 2,
                            super::Arity::Clip => unreachable!(),
                        };
                        if !ok {
                            return Err(ParseError::SyntaxError {
                                position: cp,
                                message: alloc::format!("wrong number of operands for `{}`", op.name()),
                            });
                        }
                        Ok(Expr::Call(op, args))
                    }
                }
            }
        }
    }

    fn leaf(&mut self, p: usize, a: &str) -> Result<Expr, ParseError> {
        if looks_numeric(a) {
            return match a.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Expr::Const(v)),
                _ => Err(syntax(p, "malformed number")),
            };
        }
        if let Some(i) = Input::from_name(a) {
            return Ok(Expr::Input(i));
        }
        if self.names.iter().any(|n| n == a) {
            return Ok(Expr::Var(a.to_string()));
        }
        Err(ParseError::UnknownPrimitive(a.to_string()))
    }
}

/// Parses, resolves names and type-checks one program.
pub fn parse(text: &str) -> Result<RuleProgram, ParseError> {
    if text.len() > MAX_SOURCE_BYTES {
        return Err(ParseError::TooLarge(text.len()));
    }
    let mut lx = Lexer { src: text, pos: 0 };
    let mut toks = Vec::new();
    while let Some(t) = lx.next() {
        toks.push(t);
    }
    let mut p = Parser { toks, at: 0, end: text.len(), names: Vec::new() };
    let prog = p.program()?;
    types::typecheck(&prog).map_err(|v| ParseError::DimensionError { node: v.node, detail: v.rule })?;
    Ok(prog)
}
