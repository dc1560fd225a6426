//! Cached-first reordering of marked HTML elements.
//!
//! The scanner is deliberately small: it understands tags, attributes,
//! comments, void elements and raw-text elements, which is enough to find
//! the byte span of every element carrying the selector attribute. Only
//! those spans move; every other byte of the document is copied verbatim.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

fn default_selector() -> String {
    "data-content-id".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteSpec {
    /// Attribute whose value is the content id of an item.
    #[serde(default = "default_selector")]
    pub selector: String,
}

impl Default for RewriteSpec {
    fn default() -> Self {
        Self { selector: default_selector() }
    }
}

const VOID: &[&str] =
    &["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr"];
const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title"];

#[derive(Debug, Clone)]
struct Marked {
    start: usize,
    end: usize,
    content_id: String,
    /// Node id of the enclosing element (0 for the document root).
    parent: usize,
    /// Nearest enclosing marked element, if any.
    owner: Option<usize>,
}

struct Open {
    name: String,
    node: usize,
    marked: Option<usize>,
}

/// Stably move cached items ahead of uncached ones within each group of
/// marked siblings. Returns the input unchanged when nothing moves or the
/// body cannot be scanned.
pub fn rewrite_html<'a>(body: &'a [u8], spec: &RewriteSpec, is_cached: impl Fn(&str) -> bool) -> Cow<'a, [u8]> {
    let Ok(text) = std::str::from_utf8(body) else {
        return Cow::Borrowed(body);
    };
    let Some(marked) = scan(text, &spec.selector.to_ascii_lowercase()) else {
        return Cow::Borrowed(body);
    };
    if marked.is_empty() {
        return Cow::Borrowed(body);
    }
    let cached: Vec<bool> = marked.iter().map(|m| is_cached(&m.content_id)).collect();
    let mut out = String::with_capacity(text.len());
    emit(text, &marked, &cached, None, 0, text.len(), &mut out);
    if out.as_bytes() == body {
        Cow::Borrowed(body)
    } else {
        Cow::Owned(out.into_bytes())
    }
}

/// Content ids of marked elements in document order.
pub fn marked_ids(body: &[u8], spec: &RewriteSpec) -> Vec<String> {
    let Ok(text) = std::str::from_utf8(body) else {
        return Vec::new();
    };
    let mut marked = scan(text, &spec.selector.to_ascii_lowercase()).unwrap_or_default();
    marked.sort_by_key(|m| m.start);
    marked.into_iter().map(|m| m.content_id).collect()
}

fn emit(text: &str, marked: &[Marked], cached: &[bool], owner: Option<usize>, lo: usize, hi: usize, out: &mut String) {
    let mut children: Vec<usize> = (0..marked.len()).filter(|&i| marked[i].owner == owner).collect();
    children.sort_by_key(|&i| marked[i].start);

    // slot -> element placed in that slot
    let mut placement = vec![0usize; marked.len()];
    let mut parents: Vec<usize> = children.iter().map(|&i| marked[i].parent).collect();
    parents.sort_unstable();
    parents.dedup();
    for parent in parents {
        let group: Vec<usize> = children.iter().copied().filter(|&i| marked[i].parent == parent).collect();
        let order = group.iter().copied().filter(|&i| cached[i]).chain(group.iter().copied().filter(|&i| !cached[i]));
        for (slot, elem) in group.iter().zip(order) {
            placement[*slot] = elem;
        }
    }

    let mut pos = lo;
    for &slot in &children {
        out.push_str(&text[pos..marked[slot].start]);
        let elem = placement[slot];
        emit(text, marked, cached, Some(elem), marked[elem].start, marked[elem].end, out);
        pos = marked[slot].end;
    }
    out.push_str(&text[pos..hi]);
}

/// Locate marked elements. `None` means the markup around marked elements
/// is too irregular to move safely.
fn scan(text: &str, selector: &str) -> Option<Vec<Marked>> {
    let bytes = text.as_bytes();
    let mut stack: Vec<Open> = Vec::new();
    let mut marked: Vec<Marked> = Vec::new();
    let mut next_node = 1usize;
    let mut i = 0usize;

    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &text[i..];
        if rest.starts_with("<!--") {
            i += rest.find("-->").map_or(rest.len(), |e| e + 3);
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            i += rest.find('>').map_or(rest.len(), |e| e + 1);
            continue;
        }
        if let Some(after) = rest.strip_prefix("</") {
            let name_len = after.bytes().take_while(|b| b.is_ascii_alphanumeric() || *b == b'-').count();
            if name_len == 0 {
                i += 2;
                continue;
            }
            let name = after[..name_len].to_ascii_lowercase();
            let close_end = i + rest.find('>').map_or(rest.len(), |e| e + 1);
            let depth = stack.iter().rposition(|o| o.name == name)?;
            // elements closed implicitly must not be marked
            if stack[depth + 1..].iter().any(|o| o.marked.is_some()) {
                return None;
            }
            let open = stack.drain(depth..).next().expect("depth is in range");
            if let Some(m) = open.marked {
                marked[m].end = close_end;
            }
            i = close_end;
            continue;
        }
        let name_len = rest[1..].bytes().take_while(|b| b.is_ascii_alphanumeric() || *b == b'-').count();
        if name_len == 0 || !rest.as_bytes()[1].is_ascii_alphabetic() {
            i += 1;
            continue;
        }
        let name = rest[1..1 + name_len].to_ascii_lowercase();
        let (attrs, tag_len, self_closing) = parse_attributes(&rest[1 + name_len..])?;
        let tag_end = i + 1 + name_len + tag_len;

        let mark_value = attrs.iter().find(|(k, _)| k == selector).map(|(_, v)| v.clone());
        let parent = stack.last().map_or(0, |o| o.node);
        let owner = stack.iter().rev().find_map(|o| o.marked);
        let node = next_node;
        next_node += 1;

        let marked_idx = mark_value.map(|content_id| {
            marked.push(Marked { start: i, end: tag_end, content_id, parent, owner });
            marked.len() - 1
        });

        if self_closing || VOID.contains(&name.as_str()) {
            i = tag_end;
            continue;
        }
        if RAW_TEXT.contains(&name.as_str()) {
            let body = &text[tag_end..];
            let close = find_ci(body, &format!("</{name}"))?;
            let gt = body[close..].find('>')? + close + 1;
            if let Some(m) = marked_idx {
                marked[m].end = tag_end + gt;
            }
            i = tag_end + gt;
            continue;
        }
        stack.push(Open { name, node, marked: marked_idx });
        i = tag_end;
    }

    if stack.iter().any(|o| o.marked.is_some()) {
        return None;
    }
    Some(marked)
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    (0..=h.len().checked_sub(n.len())?).find(|&k| h[k..k + n.len()].eq_ignore_ascii_case(n))
}

/// Attributes, bytes consumed and whether the tag self-closes.
type ParsedAttributes = (Vec<(String, String)>, usize, bool);

/// Parse attributes up to and including the closing `>`. Returns the
/// attributes (lower-cased names, raw values), the number of bytes consumed
/// and whether the tag was self-closing.
fn parse_attributes(s: &str) -> Option<ParsedAttributes> {
    let b = s.as_bytes();
    let mut attrs = Vec::new();
    let mut i = 0;
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        match b.get(i)? {
            b'>' => return Some((attrs, i + 1, false)),
            b'/' if b.get(i + 1) == Some(&b'>') => return Some((attrs, i + 2, true)),
            b'/' => {
                i += 1;
                continue;
            }
            _ => {}
        }
        let start = i;
        while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        let name = s[start..i].to_ascii_lowercase();
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if b.get(i) == Some(&b'=') {
            i += 1;
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            match b.get(i)? {
                q @ (b'"' | b'\'') => {
                    let close = s[i + 1..].find(*q as char)? + i + 1;
                    value = s[i + 1..close].to_string();
                    i = close + 1;
                }
                _ => {
                    let vs = i;
                    while i < b.len() && !b[i].is_ascii_whitespace() && b[i] != b'>' {
                        i += 1;
                    }
                    value = s[vs..i].to_string();
                }
            }
        }
        if !name.is_empty() {
            attrs.push((name, value));
        }
    }
}
