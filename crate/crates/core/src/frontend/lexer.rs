use super::SourceError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Num(f64),
    /// The symbols between `|` and `>`.
    Ket(String),
    /// `#name`, as in the version header.
    Header(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const SYMBOLS: [&str; 24] = [
    "||", "->", "<=", "(", ")", "[", "]", "{", "}", ".", "?", "!", ",", ";", ":", "=", "<", ">", "+", "-", "*", "/", "\\",
    "⊗",
];

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

pub fn lex(text: &str) -> Result<Vec<Token>, SourceError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let (tl, tc) = (line, col);
        let take_while = |from: usize, f: &dyn Fn(char) -> bool| {
            let mut j = from;
            while j < chars.len() && f(chars[j]) {
                j += 1;
            }
            j
        };
        let (tok, len) = if ident_start(c) {
            let j = take_while(i, &ident_char);
            (Tok::Ident(chars[i..j].iter().collect()), j - i)
        } else if c.is_ascii_digit() {
            let mut j = take_while(i, &|c| c.is_ascii_digit());
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                j = take_while(j + 1, &|c| c.is_ascii_digit());
            }
            let s: String = chars[i..j].iter().collect();
            let v = s.parse::<f64>().map_err(|_| SourceError::at(tl, tc, format!("bad number `{s}`")))?;
            (Tok::Num(v), j - i)
        } else if c == '#' || c == '%' {
            let j = take_while(i + 1, &ident_char);
            let body: String = chars[i + 1..j].iter().collect();
            if body.is_empty() {
                return Err(SourceError::at(tl, tc, format!("expected a name after `{c}`")));
            }
            if c == '#' && body.chars().all(|c| c.is_ascii_alphabetic()) {
                (Tok::Header(body), j - i)
            } else {
                (Tok::Ident(format!("{c}{body}")), j - i)
            }
        } else if c == '|' && chars.get(i + 1) != Some(&'|') {
            let j = take_while(i + 1, &|c| "01+-".contains(c));
            if j == i + 1 || chars.get(j) != Some(&'>') {
                return Err(SourceError::at(tl, tc, "expected a ket such as |0>, |+> or |01>, or `||`"));
            }
            (Tok::Ket(chars[i + 1..j].iter().collect()), j + 1 - i)
        } else {
            let sym = SYMBOLS.iter().find(|s| {
                let sc: Vec<char> = s.chars().collect();
                chars[i..].starts_with(&sc)
            });
            match sym {
                Some(s) => (Tok::Sym(s), s.chars().count()),
                None => return Err(SourceError::at(tl, tc, format!("unexpected character `{c}`"))),
            }
        };
        advance(&mut i, &mut line, &mut col, len);
        out.push(Token { tok, line: tl, col: tc });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(v) => write!(f, "`{v}`"),
            Tok::Ket(k) => write!(f, "`|{k}>`"),
            Tok::Header(h) => write!(f, "`#{h}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}
