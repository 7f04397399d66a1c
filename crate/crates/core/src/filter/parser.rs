use super::{check_comparison, CmpOp, Field, FilterAst, FilterError, Literal};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(CmpOp),
    LParen,
    RParen,
    And,
    Or,
    Not,
    True,
    False,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Op(op) => format!("operator {}", op.symbol()),
            Tok::LParen => "\"(\"".into(),
            Tok::RParen => "\")\"".into(),
            Tok::And => "AND".into(),
            Tok::Or => "OR".into(),
            Tok::Not => "NOT".into(),
            Tok::True => "true".into(),
            Tok::False => "false".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, expected: &[&'static str], found: String) -> FilterError {
    FilterError::Syntax {
        offset,
        expected: expected.to_vec(),
        found,
    }
}

fn lex(input: &str) -> Result<Vec<(Tok, usize)>, FilterError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'=' => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Op(CmpOp::Ne)
                } else {
                    return Err(syntax(i, &["!="], "\"!\"".into()));
                }
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                i += if eq { 2 } else { 1 };
                Tok::Op(match (c, eq) {
                    (b'<', false) => CmpOp::Lt,
                    (b'<', true) => CmpOp::Le,
                    (_, false) => CmpOp::Gt,
                    (_, true) => CmpOp::Ge,
                })
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(ch) = input[i..].chars().next() else {
                        return Err(syntax(i, &["\""], "end of input".into()));
                    };
                    i += ch.len_utf8();
                    match ch {
                        '"' => break,
                        '\\' => {
                            let Some(esc) = input[i..].chars().next() else {
                                return Err(syntax(i, &["escape"], "end of input".into()));
                            };
                            s.push(match esc {
                                '"' => '"',
                                '\\' => '\\',
                                'n' => '\n',
                                't' => '\t',
                                'r' => '\r',
                                other => {
                                    return Err(syntax(
                                        i,
                                        &["\\\"", "\\\\", "\\n", "\\t", "\\r"],
                                        format!("\\{other}"),
                                    ))
                                }
                            });
                            i += esc.len_utf8();
                        }
                        other => s.push(other),
                    }
                }
                Tok::Str(s)
            }
            b'-' | b'0'..=b'9' => {
                if c == b'-' {
                    i += 1;
                }
                let digits_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i == digits_start {
                    return Err(syntax(i, &["digit"], found_at(input, i)));
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(syntax(i, &["digit"], found_at(input, i)));
                    }
                }
                let n: f64 = input[start..i]
                    .parse()
                    .map_err(|_| syntax(start, &["number"], input[start..i].to_string()))?;
                Tok::Num(n)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &input[start..i];
                match word.to_ascii_lowercase().as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(word.to_string()),
                }
            }
            _ => {
                return Err(syntax(
                    i,
                    &["field", "NOT", "(", "operator", "literal"],
                    found_at(input, i),
                ))
            }
        };
        out.push((tok, start));
    }
    out.push((Tok::Eof, input.len()));
    Ok(out)
}

fn found_at(input: &str, i: usize) -> String {
    match input[i..].chars().next() {
        Some(c) => format!("{c:?}"),
        None => "end of input".into(),
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
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
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn or_expr(&mut self) -> Result<FilterAst, FilterError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = FilterAst::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<FilterAst, FilterError> {
        let mut lhs = self.not_expr()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = FilterAst::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<FilterAst, FilterError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(FilterAst::not(self.not_expr()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<FilterAst, FilterError> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::LParen => {
                let inner = self.or_expr()?;
                let (close, at) = self.bump();
                if close != Tok::RParen {
                    return Err(syntax(at, &[")", "AND", "OR"], close.describe()));
                }
                Ok(inner)
            }
            Tok::Ident(name) => {
                let field = Field::from_name(&name)
                    .ok_or(FilterError::UnknownField { offset, name })?;
                let (op_tok, op_at) = self.bump();
                let Tok::Op(op) = op_tok else {
                    return Err(syntax(
                        op_at,
                        &["=", "!=", "<", "<=", ">", ">="],
                        op_tok.describe(),
                    ));
                };
                let (lit_tok, lit_at) = self.bump();
                let value = match lit_tok {
                    Tok::Num(n) => Literal::Num(n),
                    Tok::Str(s) => Literal::Str(s),
                    Tok::True => Literal::Bool(true),
                    Tok::False => Literal::Bool(false),
                    other => {
                        return Err(syntax(
                            lit_at,
                            &["string", "number", "true", "false"],
                            other.describe(),
                        ))
                    }
                };
                check_comparison(field, op, &value, lit_at)?;
                Ok(FilterAst::Cmp { field, op, value })
            }
            other => Err(syntax(offset, &["field", "NOT", "("], other.describe())),
        }
    }
}

/// Parses and type-checks filter text.
pub fn parse(text: &str) -> Result<FilterAst, FilterError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let ast = p.or_expr()?;
    if *p.peek() != Tok::Eof {
        return Err(syntax(p.offset(), &["AND", "OR", "end of input"], p.peek().describe()));
    }
    Ok(ast)
}
