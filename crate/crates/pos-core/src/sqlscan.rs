//! A small SQL token scanner shared by sanitization, attribution, and
//! final-step detection. This is deliberately not a full parser: it only
//! understands tokens, quoting, comments, parenthesis depth, and the top-level
//! clause skeleton of a SELECT statement.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokKind {
    Word,
    Number,
    SingleQuoted,
    DoubleQuoted,
    Symbol,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    /// Lowercased text for words, raw content for quoted tokens, raw text
    /// otherwise.
    pub text: String,
    /// Byte range in the original SQL string.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_word(&self, w: &str) -> bool {
        self.kind == TokKind::Word && self.text == w
    }
}

/// Tokenizes SQL, skipping whitespace and comments (`--` to end of line and
/// `/* ... */`). Single-quoted strings keep their `''` escapes intact.
pub(crate) fn tokenize(sql: &str) -> Vec<Token> {
    let bytes = sql.as_bytes();
    let n = bytes.len();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < n {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '-' && i + 1 < n && bytes[i + 1] == b'-' {
            while i < n && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && i + 1 < n && bytes[i + 1] == b'*' {
            let mut j = i + 2;
            while j + 1 < n && !(bytes[j] == b'*' && bytes[j + 1] == b'/') {
                j += 1;
            }
            i = (j + 2).min(n);
            continue;
        }
        let start = i;
        if c == '\'' || c == '"' || c == '`' {
            let quote = bytes[i];
            let mut j = i + 1;
            let mut content = String::new();
            while j < n {
                if bytes[j] == quote {
                    if quote == b'\'' && j + 1 < n && bytes[j + 1] == b'\'' {
                        content.push('\'');
                        j += 2;
                        continue;
                    }
                    break;
                }
                content.push(bytes[j] as char);
                j += 1;
            }
            let end = (j + 1).min(n);
            let kind = if quote == b'\'' { TokKind::SingleQuoted } else { TokKind::DoubleQuoted };
            toks.push(Token { kind, text: content, start, end });
            i = end;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < n && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            toks.push(Token {
                kind: TokKind::Word,
                text: sql[i..j].to_lowercase(),
                start,
                end: j,
            });
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i + 1;
            while j < n
                && ((bytes[j] as char).is_ascii_alphanumeric()
                    || bytes[j] == b'.'
                    || bytes[j] == b'_')
            {
                j += 1;
            }
            toks.push(Token { kind: TokKind::Number, text: sql[i..j].to_string(), start, end: j });
            i = j;
            continue;
        }
        toks.push(Token { kind: TokKind::Symbol, text: c.to_string(), start, end: i + 1 });
        i += 1;
    }
    toks
}

/// Token index range, half-open.
pub(crate) type Range = (usize, usize);

/// The top-level clause skeleton of a single SELECT statement.
#[derive(Debug, Default)]
pub(crate) struct SelectShape {
    pub distinct: bool,
    /// Token ranges of the comma-separated select-list items.
    pub items: Vec<Range>,
    pub from: Option<Range>,
    pub where_: Option<Range>,
    pub group_by: Option<Range>,
    pub having: Option<Range>,
    pub order_by: Option<Range>,
    pub limit: Option<Range>,
    /// True when a top-level compound operator (UNION/INTERSECT/EXCEPT)
    /// follows the first SELECT.
    pub compound: bool,
}

const AGGREGATES: &[&str] = &["count", "sum", "avg", "min", "max", "total", "group_concat"];

fn clause_keyword(toks: &[Token], i: usize) -> Option<(&'static str, usize)> {
    let t = &toks[i];
    if t.kind != TokKind::Word {
        return None;
    }
    let two = |next: &str| i + 1 < toks.len() && toks[i + 1].is_word(next);
    match t.text.as_str() {
        "from" => Some(("from", i + 1)),
        "where" => Some(("where", i + 1)),
        "group" if two("by") => Some(("group", i + 2)),
        "having" => Some(("having", i + 1)),
        "order" if two("by") => Some(("order", i + 2)),
        "limit" => Some(("limit", i + 1)),
        "union" | "intersect" | "except" => Some(("compound", i + 1)),
        _ => None,
    }
}

/// Parses the clause skeleton of a SELECT statement. Returns None when the
/// tokens do not start with SELECT.
pub(crate) fn parse_select(toks: &[Token]) -> Option<SelectShape> {
    let mut shape = SelectShape::default();
    if toks.is_empty() || !toks[0].is_word("select") {
        return None;
    }
    let mut i = 1;
    if i < toks.len() && toks[i].is_word("distinct") {
        shape.distinct = true;
        i += 1;
    } else if i < toks.len() && toks[i].is_word("all") {
        i += 1;
    }

    let mut depth = 0usize;
    let mut item_start = i;
    let mut items_closed = false;
    let mut current: Option<&'static str> = None;
    let mut clause_start = 0usize;
    let close = |shape: &mut SelectShape, clause: Option<&'static str>, start, end| {
        let range = (start, end);
        match clause {
            Some("from") => shape.from = Some(range),
            Some("where") => shape.where_ = Some(range),
            Some("group") => shape.group_by = Some(range),
            Some("having") => shape.having = Some(range),
            Some("order") => shape.order_by = Some(range),
            Some("limit") => shape.limit = Some(range),
            _ => {}
        }
    };
    while i < toks.len() {
        let t = &toks[i];
        if t.kind == TokKind::Symbol {
            match t.text.as_str() {
                "(" => depth += 1,
                ")" => depth = depth.saturating_sub(1),
                ";" if depth == 0 => break,
                "," if depth == 0 && current.is_none() => {
                    shape.items.push((item_start, i));
                    item_start = i + 1;
                    i += 1;
                    continue;
                }
                _ => {}
            }
        }
        if depth == 0 {
            if let Some((clause, content_start)) = clause_keyword(toks, i) {
                if !items_closed {
                    if item_start < i {
                        shape.items.push((item_start, i));
                    }
                    items_closed = true;
                } else if current.is_some() {
                    close(&mut shape, current, clause_start, i);
                }
                if clause == "compound" {
                    shape.compound = true;
                    current = None;
                    break;
                }
                current = Some(clause);
                clause_start = content_start;
                i = content_start;
                continue;
            }
        }
        i += 1;
    }
    if !items_closed {
        if item_start < i {
            shape.items.push((item_start, i));
        }
    } else if current.is_some() {
        close(&mut shape, current, clause_start, i);
    }
    Some(shape)
}

/// True when the range contains a bare aggregate call (COUNT/SUM/AVG/MIN/MAX/
/// TOTAL/GROUP_CONCAT followed by an argument list). A call immediately
/// followed by OVER is a window function and does not count.
pub(crate) fn contains_aggregate(toks: &[Token], range: Range) -> bool {
    let (start, end) = range;
    let end = end.min(toks.len());
    let mut i = start;
    while i < end {
        let t = &toks[i];
        if t.kind == TokKind::Word
            && AGGREGATES.contains(&t.text.as_str())
            && i + 1 < end
            && toks[i + 1].text == "("
        {
            let mut depth = 0usize;
            let mut j = i + 1;
            while j < end {
                match toks[j].text.as_str() {
                    "(" if toks[j].kind == TokKind::Symbol => depth += 1,
                    ")" if toks[j].kind == TokKind::Symbol => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                j += 1;
            }
            let windowed = j + 1 < end && toks[j + 1].is_word("over");
            if !windowed {
                return true;
            }
            i = j + 1;
            continue;
        }
        i += 1;
    }
    false
}

const KEYWORDS: &[&str] = &[
    "select", "distinct", "all", "from", "where", "and", "or", "not", "in", "like", "glob",
    "between", "is", "null", "as", "on", "group", "by", "having", "order", "limit", "offset",
    "case", "when", "then", "else", "end", "asc", "desc", "cast", "join", "inner", "left",
    "right", "outer", "cross", "union", "intersect", "except", "exists", "true", "false",
    "collate", "nocase", "integer", "real", "text",
];

/// Collects column-name candidates in a token range: word and double-quoted
/// tokens that are not keywords, not function names (word followed by `(`),
/// and not alias names (word preceded by AS), lowered and filtered to the
/// known set.
pub(crate) fn collect_known_idents(
    toks: &[Token],
    range: Range,
    known: &std::collections::BTreeSet<String>,
    out: &mut std::collections::BTreeSet<String>,
) {
    let (start, end) = range;
    let end = end.min(toks.len());
    for i in start..end {
        let t = &toks[i];
        let candidate = match t.kind {
            TokKind::Word => {
                if KEYWORDS.contains(&t.text.as_str()) {
                    continue;
                }
                if i + 1 < toks.len() && toks[i + 1].kind == TokKind::Symbol && toks[i + 1].text == "(" {
                    continue; // function name
                }
                if i > 0 && toks[i - 1].is_word("as") {
                    continue; // alias
                }
                t.text.clone()
            }
            TokKind::DoubleQuoted => {
                if i > 0 && toks[i - 1].is_word("as") {
                    continue;
                }
                t.text.to_lowercase()
            }
            _ => continue,
        };
        if known.contains(&candidate) {
            out.insert(candidate);
        }
    }
}

/// True when the select-list item is exactly a bare `*`.
pub(crate) fn is_bare_star(toks: &[Token], item: Range) -> bool {
    item.1 - item.0 == 1 && toks[item.0].kind == TokKind::Symbol && toks[item.0].text == "*"
}

/// Byte slice of the original SQL covered by a token range.
pub(crate) fn slice<'a>(sql: &'a str, toks: &[Token], range: Range) -> &'a str {
    let (start, end) = range;
    if start >= end || start >= toks.len() {
        return "";
    }
    let end = end.min(toks.len());
    &sql[toks[start].start..toks[end - 1].end]
}
