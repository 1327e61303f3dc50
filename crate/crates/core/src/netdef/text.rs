//! Hand-written recursive-descent parser for the text protobuf surface
//! syntax: `key: value` scalars, nested `key { ... }` messages, repeated
//! fields and `#` comments. Any input yields either a message tree or a
//! positioned error; the parser never panics.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    /// Bare identifier: enum token or boolean.
    Ident(String),
    Msg(Message),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Num(_) => "number",
            Value::Ident(_) => "identifier",
            Value::Msg(_) => "message",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub value: Value,
    pub line: u32,
    pub col: u32,
}

/// Ordered multimap of fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Message {
    pub fields: Vec<Field>,
}

impl Message {
    pub fn first(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn all<'m>(&'m self, name: &'m str) -> impl Iterator<Item = &'m Field> {
        self.fields.iter().filter(move |f| f.name == name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.first(name).is_some()
    }
}

const MAX_DEPTH: usize = 200;

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Colon,
    LBrace,
    RBrace,
    Eof,
}

struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

impl Lexer {
    fn new(text: &str) -> Self {
        Lexer { chars: text.chars().collect(), pos: 0, line: 1, col: 1 }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError { message: message.into(), line: self.line, col: self.col }
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn next_token(&mut self) -> Result<Spanned, ParseError> {
        self.skip_trivia();
        let (line, col) = (self.line, self.col);
        let tok = match self.peek() {
            None => Tok::Eof,
            Some(':') => {
                self.bump();
                Tok::Colon
            }
            Some('{') => {
                self.bump();
                Tok::LBrace
            }
            Some('}') => {
                self.bump();
                Tok::RBrace
            }
            Some('"') | Some('\'') => {
                let quote = self.bump().unwrap();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.err("unterminated string")),
                        Some('\n') => return Err(self.err("newline in string")),
                        Some('\\') => match self.bump() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(c) => s.push(c),
                            None => return Err(self.err("unterminated escape")),
                        },
                        Some(c) if c == quote => break,
                        Some(c) => s.push(c),
                    }
                }
                Tok::Str(s)
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_') {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Tok::Num(v),
                    _ => {
                        return Err(ParseError {
                            message: format!("malformed number '{}'", s),
                            line,
                            col,
                        })
                    }
                }
            }
            Some(c) if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Tok::Ident(s)
            }
            Some(c) => {
                return Err(ParseError {
                    message: format!("unexpected character '{}'", c.escape_default()),
                    line,
                    col,
                })
            }
        };
        Ok(Spanned { tok, line, col })
    }
}

struct Parser {
    lexer: Lexer,
    lookahead: Option<Spanned>,
}

impl Parser {
    fn peek(&mut self) -> Result<&Spanned, ParseError> {
        if self.lookahead.is_none() {
            self.lookahead = Some(self.lexer.next_token()?);
        }
        Ok(self.lookahead.as_ref().unwrap())
    }

    fn next(&mut self) -> Result<Spanned, ParseError> {
        match self.lookahead.take() {
            Some(t) => Ok(t),
            None => self.lexer.next_token(),
        }
    }

    fn parse_message(&mut self, depth: usize, top_level: bool) -> Result<Message, ParseError> {
        if depth > MAX_DEPTH {
            let t = self.peek()?;
            return Err(ParseError {
                message: "nesting too deep".into(),
                line: t.line,
                col: t.col,
            });
        }
        let mut msg = Message::default();
        loop {
            let t = self.peek()?;
            match &t.tok {
                Tok::Eof => {
                    if top_level {
                        return Ok(msg);
                    }
                    return Err(ParseError {
                        message: "unbalanced braces: unexpected end of input".into(),
                        line: t.line,
                        col: t.col,
                    });
                }
                Tok::RBrace => {
                    if top_level {
                        return Err(ParseError {
                            message: "unbalanced braces: unexpected '}'".into(),
                            line: t.line,
                            col: t.col,
                        });
                    }
                    return Ok(msg);
                }
                Tok::Ident(_) => {
                    let field = self.parse_field(depth)?;
                    msg.fields.push(field);
                }
                other => {
                    return Err(ParseError {
                        message: format!("expected field name, found {:?}", other),
                        line: t.line,
                        col: t.col,
                    })
                }
            }
        }
    }

    fn parse_field(&mut self, depth: usize) -> Result<Field, ParseError> {
        let name_tok = self.next()?;
        let name = match name_tok.tok {
            Tok::Ident(s) => s,
            _ => unreachable!("caller checked"),
        };
        let (line, col) = (name_tok.line, name_tok.col);

        let after = self.peek()?;
        let value = match &after.tok {
            Tok::LBrace => {
                self.next()?;
                let inner = self.parse_message(depth + 1, false)?;
                self.expect_rbrace()?;
                Value::Msg(inner)
            }
            Tok::Colon => {
                self.next()?;
                let val = self.next()?;
                match val.tok {
                    Tok::Str(s) => Value::Str(s),
                    Tok::Num(v) => Value::Num(v),
                    Tok::Ident(s) => Value::Ident(s),
                    Tok::LBrace => {
                        let inner = self.parse_message(depth + 1, false)?;
                        self.expect_rbrace()?;
                        Value::Msg(inner)
                    }
                    other => {
                        return Err(ParseError {
                            message: format!("expected value after ':', found {:?}", other),
                            line: val.line,
                            col: val.col,
                        })
                    }
                }
            }
            other => {
                return Err(ParseError {
                    message: format!("expected ':' or '{{' after '{}', found {:?}", name, other),
                    line: after.line,
                    col: after.col,
                })
            }
        };
        Ok(Field { name, value, line, col })
    }

    fn expect_rbrace(&mut self) -> Result<(), ParseError> {
        let t = self.next()?;
        match t.tok {
            Tok::RBrace => Ok(()),
            other => Err(ParseError {
                message: format!("expected '}}', found {:?}", other),
                line: t.line,
                col: t.col,
            }),
        }
    }
}

/// Parses a whole text-format document into a message tree.
pub fn parse_text(text: &str) -> Result<Message, ParseError> {
    let mut parser = Parser { lexer: Lexer::new(text), lookahead: None };
    parser.parse_message(0, true)
}
