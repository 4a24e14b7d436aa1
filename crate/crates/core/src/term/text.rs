//! Canonical text syntax.
//!
//! Output is always in functional notation (`f(a,B)`), with `[a,b|T]` for
//! lists, single-quoted atoms where needed and double-quoted strings.
//! Input additionally accepts a small fixed operator table so clause files
//! and addresses read naturally:
//!
//! | op                                   | priority | type |
//! |--------------------------------------|----------|------|
//! | `:-`                                 | 1200     | xfx  |
//! | `,`                                  | 1000     | xfy  |
//! | `=` `\=` `==` `\==` `<` `>` `=<` `>=` `=:=` `=\=` `?` `??` | 700 | xfx |
//! | `@`                                  | 200      | xfx  |
//! | `:`                                  | 100      | xfx  |
//!
//! Unnamed variables print as `_G<cell>` and read back as unnamed
//! variables shared within the term.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{Term, Var, CONS, NIL};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

impl ParseError {
    fn new(pos: usize, message: impl Into<String>) -> ParseError {
        ParseError { pos, message: message.into() }
    }
}

const UNNAMED_PREFIX: &str = "_G";

pub fn term_to_text(t: &Term) -> String {
    let mut out = String::new();
    write_term(&mut out, t);
    out
}

fn write_term(out: &mut String, t: &Term) {
    match t {
        Term::Atom(a) => write_atom(out, a),
        Term::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Term::Str(s) => write_quoted(out, s, '"'),
        Term::Var(v) => match v.name() {
            Some(n) => out.push_str(n),
            None => {
                let _ = write!(out, "{UNNAMED_PREFIX}{}", v.id().raw());
            }
        },
        Term::Compound(f, args) if &**f == CONS && args.len() == 2 => {
            out.push('[');
            write_term(out, &args[0]);
            let mut tail = &args[1];
            loop {
                match tail {
                    Term::Compound(g, xs) if &**g == CONS && xs.len() == 2 => {
                        out.push(',');
                        write_term(out, &xs[0]);
                        tail = &xs[1];
                    }
                    Term::Atom(a) if &**a == NIL => break,
                    other => {
                        out.push('|');
                        write_term(out, other);
                        break;
                    }
                }
            }
            out.push(']');
        }
        Term::Compound(f, args) => {
            // `[](...)` would not read back; a quoted functor always does.
            if is_plain_atom(f) {
                out.push_str(f);
            } else {
                write_quoted(out, f, '\'');
            }
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_term(out, a);
            }
            out.push(')');
        }
    }
}

fn is_plain_atom(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn write_atom(out: &mut String, a: &str) {
    if is_plain_atom(a) || a == NIL {
        out.push_str(a);
    } else {
        write_quoted(out, a, '\'');
    }
}

fn write_quoted(out: &mut String, s: &str, quote: char) {
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if c.is_control() => {
                let _ = write!(out, "\\x{:x}\\", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
}

/// Parses exactly one term, optionally followed by a terminating `.`.
pub fn parse_text(s: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(s)?;
    let t = p.parse(1200)?.0;
    if p.peek_is(&Tok::End) {
        p.advance();
    }
    match &p.peek().tok {
        Tok::Eof => Ok(t),
        _ => Err(ParseError::new(p.peek().start, "unexpected text after term")),
    }
}

/// Parses a sequence of `.`-terminated terms, e.g. a clause file. `%`
/// starts a comment running to the end of the line.
pub fn parse_clauses(s: &str) -> Result<Vec<Term>, ParseError> {
    let mut p = Parser::new(s)?;
    let mut out = Vec::new();
    while !p.peek_is(&Tok::Eof) {
        p.vars.clear();
        let t = p.parse(1200)?.0;
        if !p.peek_is(&Tok::End) {
            return Err(ParseError::new(p.peek().start, "expected '.' after clause"));
        }
        p.advance();
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    /// Unquoted atom: identifier or run of symbol characters.
    Name(String),
    Quoted(String),
    Var(String),
    Int(String),
    Str(String),
    Punct(char),
    End,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

const SYMBOL_CHARS: &str = "+-*/\\^<>=~:.?@#&$";

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes: Vec<(usize, char)> = src.char_indices().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let at = |i: usize| bytes.get(i).map(|&(_, c)| c);
    let pos = |i: usize| bytes.get(i).map_or(src.len(), |&(p, _)| p);
    while i < bytes.len() {
        let c = bytes[i].1;
        let start = pos(i);
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '%' {
            while i < bytes.len() && bytes[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        let tok = if c.is_ascii_digit() {
            while at(i).is_some_and(|c| c.is_ascii_digit()) {
                i += 1;
            }
            Tok::Int(src[start..pos(i)].to_string())
        } else if c.is_alphabetic() || c == '_' {
            let s = i;
            while at(i).is_some_and(|c| c.is_alphanumeric() || c == '_') {
                i += 1;
            }
            let word = src[pos(s)..pos(i)].to_string();
            if c.is_uppercase() || c == '_' {
                Tok::Var(word)
            } else {
                Tok::Name(word)
            }
        } else if c == '\'' || c == '"' {
            i += 1;
            let mut text = String::new();
            loop {
                match at(i) {
                    None => return Err(ParseError::new(start, "unterminated quoted text")),
                    Some('\\') => {
                        i += 1;
                        match at(i) {
                            Some('n') => text.push('\n'),
                            Some('t') => text.push('\t'),
                            Some('r') => text.push('\r'),
                            Some('\\') => text.push('\\'),
                            Some('\'') => text.push('\''),
                            Some('"') => text.push('"'),
                            Some('x') => {
                                let s = i + 1;
                                let mut j = s;
                                while at(j).is_some_and(|c| c.is_ascii_hexdigit()) {
                                    j += 1;
                                }
                                if at(j) != Some('\\') || j == s {
                                    return Err(ParseError::new(pos(i), "bad \\x escape"));
                                }
                                let code = u32::from_str_radix(&src[pos(s)..pos(j)], 16)
                                    .ok()
                                    .and_then(char::from_u32)
                                    .ok_or_else(|| ParseError::new(pos(i), "bad \\x escape"))?;
                                text.push(code);
                                i = j;
                            }
                            _ => return Err(ParseError::new(pos(i), "unknown escape")),
                        }
                        i += 1;
                    }
                    Some(q) if q == c => {
                        i += 1;
                        break;
                    }
                    Some(other) => {
                        text.push(other);
                        i += 1;
                    }
                }
            }
            if c == '\'' {
                Tok::Quoted(text)
            } else {
                Tok::Str(text)
            }
        } else if "()[],|".contains(c) {
            i += 1;
            Tok::Punct(c)
        } else if SYMBOL_CHARS.contains(c) {
            let s = i;
            while at(i).is_some_and(|c| SYMBOL_CHARS.contains(c)) {
                i += 1;
            }
            let run = &src[pos(s)..pos(i)];
            let terminates = at(i).is_none_or(|c| c.is_whitespace() || c == '%');
            if run == "." && terminates {
                Tok::End
            } else {
                Tok::Name(run.to_string())
            }
        } else {
            return Err(ParseError::new(start, format!("unexpected character {c:?}")));
        };
        toks.push(Token { tok, start, end: pos(i) });
    }
    toks.push(Token { tok: Tok::Eof, start: src.len(), end: src.len() });
    Ok(toks)
}

#[derive(Clone, Copy, PartialEq)]
enum Assoc {
    Xfx,
    Xfy,
}

fn infix_op(name: &str) -> Option<(u32, Assoc)> {
    Some(match name {
        ":-" => (1200, Assoc::Xfx),
        "," => (1000, Assoc::Xfy),
        "=" | "\\=" | "==" | "\\==" | "<" | ">" | "=<" | ">=" | "=:=" | "=\\=" | "?" | "??" => (700, Assoc::Xfx),
        "@" => (200, Assoc::Xfx),
        ":" => (100, Assoc::Xfx),
        _ => return None,
    })
}

struct Parser {
    toks: Vec<Token>,
    idx: usize,
    vars: HashMap<String, Var>,
}

impl Parser {
    fn new(src: &str) -> Result<Parser, ParseError> {
        Ok(Parser { toks: lex(src)?, idx: 0, vars: HashMap::new() })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.idx]
    }

    fn peek_is(&self, t: &Tok) -> bool {
        &self.peek().tok == t
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.idx].clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek_is(&Tok::Punct(c)) {
            self.advance();
            Ok(())
        } else {
            Err(ParseError::new(self.peek().start, format!("expected '{c}'")))
        }
    }

    /// The next token opens an argument list directly after `prev`.
    fn adjacent_paren(&self, prev: &Token) -> bool {
        self.peek_is(&Tok::Punct('(')) && self.peek().start == prev.end
    }

    fn var(&mut self, name: &str) -> Term {
        if name == "_" {
            return Term::var();
        }
        let unnamed = name
            .strip_prefix(UNNAMED_PREFIX)
            .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()));
        let v =
            self.vars.entry(name.to_string()).or_insert_with(|| if unnamed { Var::fresh() } else { Var::named(name) });
        Term::Var(v.clone())
    }

    fn int(&self, digits: &str, negative: bool, pos: usize) -> Result<Term, ParseError> {
        let text = if negative { format!("-{digits}") } else { digits.to_string() };
        text.parse::<i64>().map(Term::Int).map_err(|_| ParseError::new(pos, "integer out of 64-bit range"))
    }

    fn args(&mut self, close: char) -> Result<Vec<Term>, ParseError> {
        let mut args = vec![self.parse(999)?.0];
        while self.peek_is(&Tok::Punct(',')) {
            self.advance();
            args.push(self.parse(999)?.0);
        }
        self.expect(close)?;
        Ok(args)
    }

    fn primary(&mut self) -> Result<Term, ParseError> {
        let tok = self.advance();
        match &tok.tok {
            Tok::Int(d) => self.int(d, false, tok.start),
            Tok::Var(name) => Ok(self.var(name)),
            Tok::Str(s) => Ok(Term::string(s)),
            Tok::Punct('(') => {
                let t = self.parse(1200)?.0;
                self.expect(')')?;
                Ok(t)
            }
            Tok::Punct('[') => {
                if self.peek_is(&Tok::Punct(']')) {
                    self.advance();
                    return Ok(Term::nil());
                }
                let mut items = vec![self.parse(999)?.0];
                while self.peek_is(&Tok::Punct(',')) {
                    self.advance();
                    items.push(self.parse(999)?.0);
                }
                let tail = if self.peek_is(&Tok::Punct('|')) {
                    self.advance();
                    self.parse(999)?.0
                } else {
                    Term::nil()
                };
                self.expect(']')?;
                Ok(Term::list_with_tail(items, tail))
            }
            Tok::Name(name) | Tok::Quoted(name) => {
                let name = name.clone();
                if self.adjacent_paren(&tok) {
                    self.advance();
                    let args = self.args(')')?;
                    return Ok(Term::compound(&name, args));
                }
                if name == "-" && matches!(tok.tok, Tok::Name(_)) {
                    if let Tok::Int(d) = &self.peek().tok {
                        if self.peek().start == tok.end {
                            let d = d.clone();
                            self.advance();
                            return self.int(&d, true, tok.start);
                        }
                    }
                }
                Ok(Term::atom(&name))
            }
            Tok::End => Err(ParseError::new(tok.start, "unexpected end of clause")),
            Tok::Eof => Err(ParseError::new(tok.start, "unexpected end of input")),
            Tok::Punct(c) => Err(ParseError::new(tok.start, format!("unexpected '{c}'"))),
        }
    }

    fn parse(&mut self, max: u32) -> Result<(Term, u32), ParseError> {
        let mut left = self.primary()?;
        let mut left_prec = 0;
        loop {
            let op = match &self.peek().tok {
                Tok::Name(n) => n.clone(),
                Tok::Punct(',') => ",".to_string(),
                _ => break,
            };
            let Some((prec, assoc)) = infix_op(&op) else { break };
            if prec > max || left_prec > prec - 1 {
                break;
            }
            self.advance();
            let right_max = match assoc {
                Assoc::Xfx => prec - 1,
                Assoc::Xfy => prec,
            };
            let right = self.parse(right_max)?.0;
            left = Term::compound(&op, vec![left, right]);
            left_prec = prec;
        }
        Ok((left, left_prec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_round_trip() {
        let t = parse_text("point(1,2)").unwrap();
        assert_eq!(term_to_text(&t), "point(1,2)");
        assert_eq!(parse_text(&term_to_text(&t)).unwrap(), t);
    }

    #[test]
    fn list_sugar() {
        let t = parse_text("[a,b]").unwrap();
        assert_eq!(
            t,
            Term::compound(".", vec![Term::atom("a"), Term::compound(".", vec![Term::atom("b"), Term::nil()])])
        );
        assert_eq!(term_to_text(&t), "[a,b]");
        let open = parse_text("[a|T]").unwrap();
        assert_eq!(term_to_text(&open), "[a|T]");
    }

    #[test]
    fn repeated_named_variable_is_one_cell() {
        let t = parse_text("ok(f(X,X))").unwrap();
        let Term::Compound(ok, outer) = &t else { panic!("compound expected") };
        assert_eq!(&**ok, "ok");
        let Term::Compound(f, inner) = &outer[0] else { panic!("compound expected") };
        assert_eq!(&**f, "f");
        let (a, b) = (inner[0].as_var().unwrap(), inner[1].as_var().unwrap());
        assert_eq!(a, b);
        assert_eq!(a.name(), Some("X"));
    }

    #[test]
    fn anonymous_variables_are_distinct() {
        let t = parse_text("f(_,_)").unwrap();
        assert_ne!(t.args()[0], t.args()[1]);
        assert!(t.args()[0].as_var().unwrap().name().is_none());
    }

    #[test]
    fn unnamed_variables_round_trip_as_unnamed() {
        let x = Term::var();
        let t = Term::compound("f", vec![x.clone(), x]);
        let back = parse_text(&term_to_text(&t)).unwrap();
        assert!(back.is_variant(&t));
        assert!(back.args()[0].as_var().unwrap().name().is_none());
    }

    #[test]
    fn quoting() {
        for (src, text) in [
            ("'hello world'", "'hello world'"),
            ("'A'", "'A'"),
            ("'it''s'", ""),
            ("\"a\\\"b\"", "\"a\\\"b\""),
            ("'.'(a,[])", "[a]"),
            ("'='(a,b)", "'='(a,b)"),
        ] {
            match parse_text(src) {
                Ok(t) => assert_eq!(term_to_text(&t), text, "{src}"),
                Err(_) => assert!(text.is_empty(), "{src}"),
            }
        }
        assert_eq!(term_to_text(&Term::atom("")), "''");
        assert_eq!(term_to_text(&Term::string("\u{1}")), "\"\\x1\\\"");
        assert_eq!(parse_text("\"\\x1\\\"").unwrap(), Term::string("\u{1}"));
    }

    #[test]
    fn integers() {
        assert_eq!(parse_text("-5").unwrap(), Term::Int(-5));
        assert_eq!(parse_text("f(-9223372036854775808)").unwrap().args()[0], Term::Int(i64::MIN));
        let err = parse_text("9223372036854775808").unwrap_err();
        assert_eq!(err.pos, 0);
    }

    #[test]
    fn operators() {
        let c = parse_text("path(X,Y) :- edge(X,Z), path(Z,Y).").unwrap();
        assert!(c.is_functor(":-", 2));
        assert!(c.args()[1].is_functor(",", 2));
        let a = parse_text("t:p@h").unwrap();
        assert_eq!(term_to_text(&a), "'@'(':'(t,p),h)");
        let q = parse_text("edge(a,X) ?? query_thread:query_server@hostb").unwrap();
        assert!(q.is_functor("??", 2));
        assert!(q.args()[1].is_functor("@", 2));
        let cmp = parse_text("X =< 3").unwrap();
        assert!(cmp.is_functor("=<", 2));
    }

    #[test]
    fn clause_file() {
        let cs = parse_clauses("edge(a,b).\n% comment\nedge(b,c).\npath(X,Y) :- edge(X,Y).\n").unwrap();
        assert_eq!(cs.len(), 3);
        // variables are scoped per clause
        let err = parse_clauses("edge(a,b)").unwrap_err();
        assert!(err.message.contains("'.'"));
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_text("f(a,").unwrap_err();
        assert_eq!(e.pos, 4);
        let e = parse_text("f(a) g").unwrap_err();
        assert_eq!(e.pos, 5);
        assert!(parse_text("'abc").is_err());
        assert!(parse_text("f(a]").is_err());
    }

    #[test]
    fn odd_functors_read_back() {
        for f in ["[]", "{}", ".", "'"] {
            let t = Term::compound(f, vec![Term::atom("x")]);
            assert_eq!(parse_text(&term_to_text(&t)).unwrap(), t, "{f}");
        }
    }
}
