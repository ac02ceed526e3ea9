//! Tolerant SQL lexing shared by the statement guard, the identifier
//! extractor and the rewrite pass. This is deliberately not a grammar: it
//! only separates strings, comments, quoted identifiers, words and
//! punctuation so that no dialect quirk can make it fail.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    QuotedIdent,
    Str,
    Number,
    Punct,
    Space,
    Comment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub start: usize,
}

impl<'a> Token<'a> {
    pub fn end(&self) -> usize {
        self.start + self.text.len()
    }

    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Space | TokenKind::Comment)
    }

    pub fn is_word(&self, word: &str) -> bool {
        self.kind == TokenKind::Word && self.text.eq_ignore_ascii_case(word)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == p
    }

    /// Identifier value of a word or quoted identifier.
    pub fn ident(&self) -> Option<String> {
        match self.kind {
            TokenKind::Word => Some(self.text.to_string()),
            TokenKind::QuotedIdent => Some(unquote_ident(self.text)),
            _ => None,
        }
    }
}

pub fn unquote_ident(text: &str) -> String {
    let mut chars = text.chars();
    let (open, close) = match chars.next() {
        Some('`') => ('`', '`'),
        Some('"') => ('"', '"'),
        Some('[') => ('[', ']'),
        _ => return text.to_string(),
    };
    let inner = &text[open.len_utf8()..text.len().saturating_sub(close.len_utf8()).max(open.len_utf8())];
    let doubled = format!("{close}{close}");
    inner.replace(&doubled, &close.to_string())
}

pub fn backtick(ident: &str) -> String {
    format!("`{}`", ident.replace('`', "``"))
}

/// String literal content with `''` escapes resolved.
pub fn unquote_str(text: &str) -> String {
    let inner = text
        .strip_prefix('\'')
        .map(|t| t.strip_suffix('\'').unwrap_or(t))
        .unwrap_or(text);
    inner.replace("''", "'")
}

pub fn tokenize(sql: &str) -> Vec<Token<'_>> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let c = bytes[i];
        let kind = if c.is_ascii_whitespace() {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            TokenKind::Space
        } else if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            TokenKind::Comment
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
            TokenKind::Comment
        } else if c == b'\'' {
            i = scan_quoted(bytes, i, b'\'');
            TokenKind::Str
        } else if c == b'`' || c == b'"' {
            i = scan_quoted(bytes, i, c);
            TokenKind::QuotedIdent
        } else if c == b'[' {
            while i < bytes.len() && bytes[i] != b']' {
                i += 1;
            }
            i = (i + 1).min(bytes.len());
            TokenKind::QuotedIdent
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            TokenKind::Number
        } else if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$' || bytes[i] >= 0x80)
            {
                i += 1;
            }
            TokenKind::Word
        } else {
            let two = sql.get(i..i + 2).unwrap_or("");
            i += if matches!(two, "<=" | ">=" | "<>" | "!=" | "||" | "::" | "==") {
                2
            } else {
                1
            };
            TokenKind::Punct
        };
        // keep slices on char boundaries for non-ascii words
        while !sql.is_char_boundary(i) {
            i += 1;
        }
        out.push(Token {
            kind,
            text: &sql[start..i],
            start,
        });
    }
    out
}

fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> usize {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

/// Tokens with whitespace and comments removed.
pub fn significant(sql: &str) -> Vec<Token<'_>> {
    tokenize(sql).into_iter().filter(|t| !t.is_trivia()).collect()
}

/// Reserved words and common built-ins that are never column references.
pub const KEYWORDS: &[&str] = &[
    "ALL", "AND", "ANY", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "COLLATE", "CROSS", "CURRENT_DATE",
    "CURRENT_TIME", "CURRENT_TIMESTAMP", "DATE", "DAY", "DESC", "DISTINCT", "ELSE", "END", "ESCAPE", "EXCEPT",
    "EXISTS", "EXPLAIN", "FALSE", "FETCH", "FIRST", "FOLLOWING", "FOR", "FROM", "FULL", "GLOB", "GROUP",
    "HAVING", "HOUR", "ILIKE", "IN", "INNER", "INTERSECT", "INTERVAL", "IS", "ISNULL", "JOIN", "LAST", "LEFT",
    "LIKE", "LIMIT", "MINUTE", "MONTH", "NATURAL", "NEXT", "NOT", "NOTNULL", "NULL", "NULLS", "OFFSET", "ON",
    "ONLY", "OR", "ORDER", "OUTER", "OVER", "PARTITION", "PRECEDING", "QUERY", "PLAN", "RANGE", "RECURSIVE",
    "REGEXP", "RIGHT", "ROW", "ROWS", "SECOND", "SELECT", "THEN", "TIES", "TRUE", "UNBOUNDED", "UNION",
    "USING", "VALUES", "WEEK", "WHEN", "WHERE", "WINDOW", "WITH", "YEAR", "INTEGER", "INT", "REAL", "TEXT",
    "VARCHAR", "CHAR", "FLOAT", "DOUBLE", "DECIMAL", "NUMERIC", "SIGNED", "UNSIGNED", "BOOLEAN", "TIMESTAMP",
    "DATETIME", "TIME", "CURRENT", "EXCLUDE", "OTHERS", "GROUPS", "FILTER", "WITHIN", "SEPARATOR",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

const MUTATING: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "REPLACE", "MERGE", "UPSERT", "DROP", "CREATE", "ALTER", "TRUNCATE", "ATTACH",
    "DETACH", "PRAGMA", "VACUUM", "REINDEX", "GRANT", "REVOKE", "CALL", "LOCK", "UNLOCK", "SET", "LOAD", "COPY",
    "INTO",
];

/// True for words that start or imply a state-changing statement.
pub fn is_mutating(word: &str) -> bool {
    MUTATING.iter().any(|m| m.eq_ignore_ascii_case(word))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StatementCheck {
    ReadOnly,
    Empty,
    MultipleStatements,
    NotReadOnly(String),
}

/// Statement-kind allowlist: a single SELECT (optionally behind WITH) or EXPLAIN.
pub fn check_read_only(sql: &str) -> StatementCheck {
    let toks = significant(sql);
    let mut body: &[Token] = &toks;
    while let Some(last) = body.last() {
        if last.is_punct(";") {
            body = &body[..body.len() - 1];
        } else {
            break;
        }
    }
    if body.is_empty() {
        return StatementCheck::Empty;
    }
    if body.iter().any(|t| t.is_punct(";")) {
        return StatementCheck::MultipleStatements;
    }
    let first = &body[0];
    let lead_ok = first.is_word("SELECT") || first.is_word("WITH") || first.is_word("EXPLAIN") || first.is_punct("(");
    if !lead_ok {
        return StatementCheck::NotReadOnly(first.text.to_ascii_uppercase());
    }
    let mutating = body.iter().enumerate().find(|(i, t)| {
        t.kind == TokenKind::Word
            && MUTATING.iter().any(|m| t.text.eq_ignore_ascii_case(m))
            && !body.get(i + 1).is_some_and(|n| n.is_punct("("))
    });
    if let Some((_, t)) = mutating {
        return StatementCheck::NotReadOnly(t.text.to_ascii_uppercase());
    }
    StatementCheck::ReadOnly
}

/// True when the outermost query carries an ORDER BY clause.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let toks = significant(sql);
    let mut depth = 0i32;
    for (i, t) in toks.iter().enumerate() {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
        } else if depth == 0 && t.is_word("ORDER") && toks.get(i + 1).is_some_and(|n| n.is_word("BY")) {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_strings_comments_and_quotes() {
        let toks = significant("SELECT `a b`, 'it''s' -- note\n FROM t /* x */ WHERE x >= 1.5e3");
        let kinds: Vec<_> = toks.iter().map(|t| (t.kind, t.text)).collect();
        assert_eq!(kinds[1], (TokenKind::QuotedIdent, "`a b`"));
        assert_eq!(kinds[3], (TokenKind::Str, "'it''s'"));
        assert_eq!(unquote_str(kinds[3].1), "it's");
        assert!(kinds.contains(&(TokenKind::Punct, ">=")));
        assert!(kinds.contains(&(TokenKind::Number, "1.5e3")));
        assert_eq!(toks[1].ident().unwrap(), "a b");
    }

    #[test]
    fn tokens_cover_input() {
        let sql = "SELECT \"x\"\"y\", [z] FROM t WHERE n = 'é' AND ü = 1";
        let joined: String = tokenize(sql).iter().map(|t| t.text).collect();
        assert_eq!(joined, sql);
    }

    #[test]
    fn allowlist() {
        assert_eq!(check_read_only("SELECT 1;"), StatementCheck::ReadOnly);
        assert_eq!(check_read_only("with x as (select 1) select * from x"), StatementCheck::ReadOnly);
        assert_eq!(check_read_only("DELETE FROM t"), StatementCheck::NotReadOnly("DELETE".into()));
        assert_eq!(
            check_read_only("WITH x AS (SELECT 1) DELETE FROM t"),
            StatementCheck::NotReadOnly("DELETE".into())
        );
        assert_eq!(check_read_only("SELECT 1; DROP TABLE t"), StatementCheck::MultipleStatements);
        assert_eq!(check_read_only("SELECT 'delete' AS `update`"), StatementCheck::ReadOnly);
        assert_eq!(check_read_only("SELECT replace(name, 'a', 'b') FROM t"), StatementCheck::ReadOnly);
        assert_eq!(check_read_only("  "), StatementCheck::Empty);
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_top_level_order_by("SELECT * FROM (SELECT a FROM t ORDER BY a) s"));
        assert!(!has_top_level_order_by("SELECT 'order by' FROM t"));
    }
}
