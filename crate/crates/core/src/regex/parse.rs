//! Recursive-descent parser for the regex surface syntax.
//!
//! ```text
//! disj    := concat ('|' concat)*
//! concat  := postfix ('/' postfix)*
//! postfix := atom '+'*
//! atom    := RELATION | '(' disj ')'
//! ```
//!
//! Relation tokens match `[A-Za-z0-9_.:-]+`. ASCII whitespace between
//! tokens is ignored.

use std::fmt;

use thiserror::Error;

use super::Regex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyExpression,
    UnbalancedParen,
    DanglingOperator(char),
    KleeneStar,
    UnexpectedChar(char),
    ExpectedRelation,
    TrailingInput,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::EmptyExpression => f.write_str("empty expression"),
            ParseErrorKind::UnbalancedParen => f.write_str("unbalanced parenthesis"),
            ParseErrorKind::DanglingOperator(c) => write!(f, "operator '{c}' is missing an operand"),
            ParseErrorKind::KleeneStar => f.write_str("Kleene star is not supported, use '+'"),
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::ExpectedRelation => f.write_str("expected a relation or '('"),
            ParseErrorKind::TrailingInput => f.write_str("unexpected trailing input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("regex syntax error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn is_rel_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b':' | b'-')
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, offset: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { offset, kind }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn disj(&mut self) -> Result<Regex<String>, ParseError> {
        let mut left = self.concat()?;
        while self.peek() == Some(b'|') {
            let op = self.pos;
            self.pos += 1;
            let right = self.operand(op, '|', Self::concat)?;
            left = Regex::disj(left, right);
        }
        Ok(left)
    }

    fn concat(&mut self) -> Result<Regex<String>, ParseError> {
        let mut left = self.postfix()?;
        while self.peek() == Some(b'/') {
            let op = self.pos;
            self.pos += 1;
            let right = self.operand(op, '/', Self::postfix)?;
            left = Regex::compose(left, right);
        }
        Ok(left)
    }

    /// Parses the right operand of a binary operator, reporting a missing
    /// operand at the operator's offset.
    fn operand(
        &mut self,
        op_offset: usize,
        op: char,
        next: fn(&mut Self) -> Result<Regex<String>, ParseError>,
    ) -> Result<Regex<String>, ParseError> {
        match self.peek() {
            None | Some(b'|') | Some(b'/') | Some(b')') | Some(b'+') => {
                Err(self.err(op_offset, ParseErrorKind::DanglingOperator(op)))
            }
            _ => next(self),
        }
    }

    fn postfix(&mut self) -> Result<Regex<String>, ParseError> {
        let mut inner = self.atom()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    inner = Regex::plus(inner);
                }
                Some(b'*') => return Err(self.err(self.pos, ParseErrorKind::KleeneStar)),
                _ => return Ok(inner),
            }
        }
    }

    fn atom(&mut self) -> Result<Regex<String>, ParseError> {
        match self.peek() {
            None => Err(self.err(self.pos, ParseErrorKind::ExpectedRelation)),
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                if self.peek() == Some(b')') {
                    return Err(self.err(self.pos, ParseErrorKind::EmptyExpression));
                }
                if self.peek().is_none() {
                    return Err(self.err(open, ParseErrorKind::UnbalancedParen));
                }
                let inner = self.disj()?;
                match self.peek() {
                    Some(b')') => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    None => Err(self.err(open, ParseErrorKind::UnbalancedParen)),
                    Some(c) => Err(self.err(self.pos, unexpected(c))),
                }
            }
            Some(b) if is_rel_byte(b) => {
                let start = self.pos;
                while self.pos < self.src.len() && is_rel_byte(self.src[self.pos]) {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.src[start..self.pos])
                    .expect("relation bytes are ASCII");
                Ok(Regex::Rel(tok.to_string()))
            }
            Some(b')') => Err(self.err(self.pos, ParseErrorKind::UnbalancedParen)),
            Some(c @ (b'|' | b'/' | b'+')) => {
                Err(self.err(self.pos, ParseErrorKind::DanglingOperator(c as char)))
            }
            Some(c) => Err(self.err(self.pos, unexpected(c))),
        }
    }
}

fn unexpected(c: u8) -> ParseErrorKind {
    match c {
        b'*' => ParseErrorKind::KleeneStar,
        b')' => ParseErrorKind::UnbalancedParen,
        c if c.is_ascii() => ParseErrorKind::UnexpectedChar(c as char),
        _ => ParseErrorKind::UnexpectedChar(char::REPLACEMENT_CHARACTER),
    }
}

/// Parses a regex over relation names.
pub fn parse(text: &str) -> Result<Regex<String>, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    if p.peek().is_none() {
        return Err(p.err(p.pos, ParseErrorKind::EmptyExpression));
    }
    let expr = p.disj()?;
    match p.peek() {
        None => Ok(expr),
        Some(b')') => Err(p.err(p.pos, ParseErrorKind::UnbalancedParen)),
        Some(c) if is_rel_byte(c) || c == b'(' => Err(p.err(p.pos, ParseErrorKind::TrailingInput)),
        Some(c) => Err(p.err(p.pos, unexpected(c))),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(s: &str) -> Regex<String> {
        Regex::rel(s.to_string())
    }

    #[test]
    fn composition() {
        assert_eq!(parse("r1/r2").unwrap(), Regex::compose(r("r1"), r("r2")));
    }

    #[test]
    fn parenthesised_disjunction() {
        assert_eq!(
            parse("r1/(r2|r3)").unwrap(),
            Regex::compose(r("r1"), Regex::disj(r("r2"), r("r3")))
        );
    }

    #[test]
    fn precedence_plus_then_compose_then_disj() {
        assert_eq!(
            parse("r1|r2/r3+").unwrap(),
            Regex::disj(r("r1"), Regex::compose(r("r2"), Regex::plus(r("r3"))))
        );
    }

    #[test]
    fn binary_operators_are_left_associative() {
        assert_eq!(
            parse("a/b/c").unwrap(),
            Regex::compose(Regex::compose(r("a"), r("b")), r("c"))
        );
        assert_eq!(parse("a|b|c").unwrap(), Regex::disj(Regex::disj(r("a"), r("b")), r("c")));
    }

    #[test]
    fn relation_token_charset_and_whitespace() {
        assert_eq!(
            parse(" /m/01:x.y-z_0 / b ").unwrap_err().kind,
            ParseErrorKind::DanglingOperator('/')
        );
        assert_eq!(
            parse("P31 / P279+").unwrap(),
            Regex::compose(r("P31"), Regex::plus(r("P279")))
        );
        assert_eq!(parse("a.b:c-d_e").unwrap(), r("a.b:c-d_e"));
    }

    #[test]
    fn error_offsets() {
        let cases: &[(&str, usize, ParseErrorKind)] = &[
            ("", 0, ParseErrorKind::EmptyExpression),
            ("   ", 3, ParseErrorKind::EmptyExpression),
            ("()", 1, ParseErrorKind::EmptyExpression),
            ("(r1", 0, ParseErrorKind::UnbalancedParen),
            ("r1)", 2, ParseErrorKind::UnbalancedParen),
            ("r1/", 2, ParseErrorKind::DanglingOperator('/')),
            ("r1|", 2, ParseErrorKind::DanglingOperator('|')),
            ("|r1", 0, ParseErrorKind::DanglingOperator('|')),
            ("r1*", 2, ParseErrorKind::KleeneStar),
            ("r1/r2?", 5, ParseErrorKind::UnexpectedChar('?')),
            ("r1 r2", 3, ParseErrorKind::TrailingInput),
            ("(r1/)", 3, ParseErrorKind::DanglingOperator('/')),
        ];
        for (text, offset, kind) in cases {
            let err = parse(text).unwrap_err();
            assert_eq!((err.offset, &err.kind), (*offset, kind), "input {text:?}");
        }
    }

    pub(crate) fn arb_regex(depth: u32) -> impl Strategy<Value = Regex<String>> {
        let leaf = prop::sample::select(vec!["r1", "r2", "r3", "p.x", "Q:9"])
            .prop_map(|s| Regex::Rel(s.to_string()));
        leaf.prop_recursive(depth, 64, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Regex::compose(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Regex::disj(a, b)),
                inner.prop_map(Regex::plus),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn print_parse_round_trip(expr in arb_regex(5)) {
            prop_assert!(expr.depth() <= 6);
            let printed = expr.to_string();
            prop_assert_eq!(parse(&printed).unwrap(), expr);
        }
    }
}
