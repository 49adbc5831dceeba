use super::ast::Span;
use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Let,
    In,
    Consume,
    Object,
    Method,
    Spawn,
    Send,
    Recv,
    Copy,
    Cast,
    Freeze,
    SelfKw,
    Imm,
    Iso,
    Local,
    Unsafe,
    Eq,
    Dot,
    Comma,
    Semi,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Let => "let",
            Tok::In => "in",
            Tok::Consume => "consume",
            Tok::Object => "object",
            Tok::Method => "method",
            Tok::Spawn => "spawn",
            Tok::Send => "send",
            Tok::Recv => "recv",
            Tok::Copy => "copy",
            Tok::Cast => "cast",
            Tok::Freeze => "freeze",
            Tok::SelfKw => "self",
            Tok::Imm => "imm",
            Tok::Iso => "iso",
            Tok::Local => "local",
            Tok::Unsafe => "unsafe",
            Tok::Eq => "=",
            Tok::Dot => ".",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Ident(_) | Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "let" => Tok::Let,
        "in" => Tok::In,
        "consume" => Tok::Consume,
        "object" => Tok::Object,
        "method" => Tok::Method,
        "spawn" => Tok::Spawn,
        "send" => Tok::Send,
        "recv" => Tok::Recv,
        "copy" => Tok::Copy,
        "cast" => Tok::Cast,
        "freeze" => Tok::Freeze,
        "self" => Tok::SelfKw,
        "imm" => Tok::Imm,
        "iso" => Tok::Iso,
        "local" => Tok::Local,
        "unsafe" => Tok::Unsafe,
        _ => return None,
    })
}

/// Splits source text into tokens. `//` starts a comment running to end of line.
pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let (mut line, mut col) = (1u32, 1u32);

    while let Some(&c) = chars.peek() {
        let span = Span::new(line, col);
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            chars.next();
            col += 1;
            continue;
        }
        if c == '/' {
            chars.next();
            col += 1;
            if chars.peek() == Some(&'/') {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
                continue;
            }
            return Err(ParseError::new(span, "unexpected character `/`"));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    word.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            let tok = keyword(&word).unwrap_or(Tok::Ident(word));
            out.push(Token { tok, span });
            continue;
        }
        let tok = match c {
            '=' => Tok::Eq,
            '.' => Tok::Dot,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            other => return Err(ParseError::new(span, format!("unexpected character `{other}`"))),
        };
        chars.next();
        col += 1;
        out.push(Token { tok, span });
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(line, col) });
    Ok(out)
}
