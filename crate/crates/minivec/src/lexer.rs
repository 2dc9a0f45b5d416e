//! Hand-rolled lexer for MiniC.

use crate::diag::{Diagnostic, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tok {
    Ident,
    IntLit,
    FloatLit,
    KwVoid,
    KwI32,
    KwF32,
    KwIf,
    KwElse,
    KwFor,
    KwWhile,
    KwDo,
    KwReturn,
    KwExtern,
    KwBreak,
    KwContinue,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Shl,
    Shr,
    Amp,
    Pipe,
    Caret,
    Tilde,
    Bang,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    AmpAmp,
    PipePipe,
    Assign,
    PlusAssign,
    MinusAssign,
    StarAssign,
    SlashAssign,
    PercentAssign,
    ShlAssign,
    ShrAssign,
    AmpAssign,
    PipeAssign,
    CaretAssign,
    PlusPlus,
    MinusMinus,
    Eof,
}

impl Tok {
    pub fn describe(self) -> &'static str {
        match self {
            Tok::Ident => "identifier",
            Tok::IntLit => "integer literal",
            Tok::FloatLit => "float literal",
            Tok::KwVoid => "`void`",
            Tok::KwI32 => "`i32`",
            Tok::KwF32 => "`f32`",
            Tok::KwIf => "`if`",
            Tok::KwElse => "`else`",
            Tok::KwFor => "`for`",
            Tok::KwWhile => "`while`",
            Tok::KwDo => "`do`",
            Tok::KwReturn => "`return`",
            Tok::KwExtern => "`extern`",
            Tok::KwBreak => "`break`",
            Tok::KwContinue => "`continue`",
            Tok::LParen => "`(`",
            Tok::RParen => "`)`",
            Tok::LBrace => "`{`",
            Tok::RBrace => "`}`",
            Tok::LBracket => "`[`",
            Tok::RBracket => "`]`",
            Tok::Comma => "`,`",
            Tok::Semi => "`;`",
            Tok::Plus => "`+`",
            Tok::Minus => "`-`",
            Tok::Star => "`*`",
            Tok::Slash => "`/`",
            Tok::Percent => "`%`",
            Tok::Shl => "`<<`",
            Tok::Shr => "`>>`",
            Tok::Amp => "`&`",
            Tok::Pipe => "`|`",
            Tok::Caret => "`^`",
            Tok::Tilde => "`~`",
            Tok::Bang => "`!`",
            Tok::Lt => "`<`",
            Tok::Le => "`<=`",
            Tok::Gt => "`>`",
            Tok::Ge => "`>=`",
            Tok::EqEq => "`==`",
            Tok::Ne => "`!=`",
            Tok::AmpAmp => "`&&`",
            Tok::PipePipe => "`||`",
            Tok::Assign => "`=`",
            Tok::PlusAssign => "`+=`",
            Tok::MinusAssign => "`-=`",
            Tok::StarAssign => "`*=`",
            Tok::SlashAssign => "`/=`",
            Tok::PercentAssign => "`%=`",
            Tok::ShlAssign => "`<<=`",
            Tok::ShrAssign => "`>>=`",
            Tok::AmpAssign => "`&=`",
            Tok::PipeAssign => "`|=`",
            Tok::CaretAssign => "`^=`",
            Tok::PlusPlus => "`++`",
            Tok::MinusMinus => "`--`",
            Tok::Eof => "end of input",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub text: String,
    pub span: Span,
}

pub fn lex(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let chars: Vec<char> = source.chars().collect();
    let mut i = 0;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! push {
        ($tok:expr, $text:expr, $span:expr) => {
            out.push(Token {
                tok: $tok,
                text: $text,
                span: $span,
            })
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let span = Span::new(line, col);
        let advance = |i: &mut usize, col: &mut u32, n: usize| {
            *i += n;
            *col += n as u32;
        };

        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(&mut i, &mut col, 1),
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                i += 2;
                col += 2;
                loop {
                    if i + 1 >= chars.len() {
                        return Err(Diagnostic::syntax(span, "unterminated comment", vec![]));
                    }
                    if chars[i] == '*' && chars[i + 1] == '/' {
                        i += 2;
                        col += 2;
                        break;
                    }
                    if chars[i] == '\n' {
                        line += 1;
                        col = 1;
                        i += 1;
                    } else {
                        i += 1;
                        col += 1;
                    }
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                    col += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let tok = match text.as_str() {
                    "void" => Tok::KwVoid,
                    "i32" => Tok::KwI32,
                    "f32" => Tok::KwF32,
                    "if" => Tok::KwIf,
                    "else" => Tok::KwElse,
                    "for" => Tok::KwFor,
                    "while" => Tok::KwWhile,
                    "do" => Tok::KwDo,
                    "return" => Tok::KwReturn,
                    "extern" => Tok::KwExtern,
                    "break" => Tok::KwBreak,
                    "continue" => Tok::KwContinue,
                    _ => Tok::Ident,
                };
                push!(tok, text, span);
            }
            c if c.is_ascii_digit() => {
                let start = i;
                if c == '0' && matches!(chars.get(i + 1), Some('x') | Some('X')) {
                    i += 2;
                    col += 2;
                    while i < chars.len() && chars[i].is_ascii_hexdigit() {
                        i += 1;
                        col += 1;
                    }
                    push!(Tok::IntLit, chars[start..i].iter().collect(), span);
                } else {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                        col += 1;
                    }
                    let is_float = chars.get(i) == Some(&'.')
                        && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit());
                    if is_float {
                        i += 1;
                        col += 1;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                            col += 1;
                        }
                        push!(Tok::FloatLit, chars[start..i].iter().collect(), span);
                    } else {
                        push!(Tok::IntLit, chars[start..i].iter().collect(), span);
                    }
                }
            }
            _ => {
                // Longest-match punctuation.
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let table: &[(&str, Tok)] = &[
                    ("<<=", Tok::ShlAssign),
                    (">>=", Tok::ShrAssign),
                    ("<<", Tok::Shl),
                    (">>", Tok::Shr),
                    ("<=", Tok::Le),
                    (">=", Tok::Ge),
                    ("==", Tok::EqEq),
                    ("!=", Tok::Ne),
                    ("&&", Tok::AmpAmp),
                    ("||", Tok::PipePipe),
                    ("+=", Tok::PlusAssign),
                    ("-=", Tok::MinusAssign),
                    ("*=", Tok::StarAssign),
                    ("/=", Tok::SlashAssign),
                    ("%=", Tok::PercentAssign),
                    ("&=", Tok::AmpAssign),
                    ("|=", Tok::PipeAssign),
                    ("^=", Tok::CaretAssign),
                    ("++", Tok::PlusPlus),
                    ("--", Tok::MinusMinus),
                    ("(", Tok::LParen),
                    (")", Tok::RParen),
                    ("{", Tok::LBrace),
                    ("}", Tok::RBrace),
                    ("[", Tok::LBracket),
                    ("]", Tok::RBracket),
                    (",", Tok::Comma),
                    (";", Tok::Semi),
                    ("+", Tok::Plus),
                    ("-", Tok::Minus),
                    ("*", Tok::Star),
                    ("/", Tok::Slash),
                    ("%", Tok::Percent),
                    ("&", Tok::Amp),
                    ("|", Tok::Pipe),
                    ("^", Tok::Caret),
                    ("~", Tok::Tilde),
                    ("!", Tok::Bang),
                    ("<", Tok::Lt),
                    (">", Tok::Gt),
                    ("=", Tok::Assign),
                ];
                let hit = table.iter().find(|(s, _)| rest.starts_with(s));
                match hit {
                    Some((s, tok)) => {
                        push!(*tok, s.to_string(), span);
                        advance(&mut i, &mut col, s.len());
                    }
                    None => {
                        return Err(Diagnostic::syntax(
                            span,
                            format!("unexpected character `{c}`"),
                            vec![],
                        ));
                    }
                }
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        text: String::new(),
        span: Span::new(line, col),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_operators_longest_first() {
        let toks = lex("a <<= b << 2 <= 3").unwrap();
        let kinds: Vec<Tok> = toks.iter().map(|t| t.tok).collect();
        assert_eq!(
            kinds,
            vec![
                Tok::Ident,
                Tok::ShlAssign,
                Tok::Ident,
                Tok::Shl,
                Tok::IntLit,
                Tok::Le,
                Tok::IntLit,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn hex_literals_and_comments() {
        let toks = lex("0x11223344 // comment\n/* block\n */ 255").unwrap();
        assert_eq!(toks[0].text, "0x11223344");
        assert_eq!(toks[1].text, "255");
        assert_eq!(toks[1].span.line, 3);
    }
}
