//! Heading-based Markdown segmentation.
//!
//! Only ATX headings of depth 1 to 3 (`#`, `##`, `###` followed by a space at
//! the start of a line) open a section. Deeper headings stay in the body.

use serde::{Deserialize, Serialize};

pub const MAX_HEADING_DEPTH: usize = 3;

/// One heading-scoped section of a Markdown document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading_path: Vec<String>,
    /// Equals `heading_path.len()`; 0 for the preamble.
    pub level: usize,
    pub body: String,
}

/// Returns `(depth, title)` when `line` is a level 1–3 heading marker.
pub fn heading_marker(line: &str) -> Option<(usize, &str)> {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if hashes == 0 || hashes > MAX_HEADING_DEPTH {
        return None;
    }
    let rest = &line[hashes..];
    if rest.is_empty() {
        return None;
    }
    let rest = rest.strip_prefix(' ').or_else(|| rest.strip_prefix('\t'))?;
    Some((hashes, rest.trim()))
}

/// Splits Markdown into sections in document order.
///
/// Text before the first heading becomes a level-0 preamble when it is not
/// blank. Each heading opens a section whose path is the chain of enclosing
/// headings; a heading that skips levels (say `##` with no open `#`) nests
/// under whatever shallower headings are open, so `level` always equals
/// the path length.
pub fn parse_markdown(markdown: &str) -> Vec<Section> {
    // (marker depth, title)
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut sections = Vec::new();
    let mut current: Option<Section> = None;
    let mut body: Vec<&str> = Vec::new();

    let flush = |current: Option<Section>, body: &mut Vec<&str>, out: &mut Vec<Section>| {
        let text = body.join("\n").trim().to_string();
        body.clear();
        match current {
            Some(mut s) => {
                s.body = text;
                out.push(s);
            }
            None if !text.is_empty() => out.push(Section {
                heading_path: Vec::new(),
                level: 0,
                body: text,
            }),
            None => {}
        }
    };

    for line in markdown.lines() {
        if let Some((depth, title)) = heading_marker(line) {
            flush(current.take(), &mut body, &mut sections);
            while stack.last().is_some_and(|(d, _)| *d >= depth) {
                stack.pop();
            }
            stack.push((depth, title.to_string()));
            let heading_path: Vec<String> = stack.iter().map(|(_, t)| t.clone()).collect();
            current = Some(Section {
                level: heading_path.len(),
                heading_path,
                body: String::new(),
            });
        } else {
            body.push(line);
        }
    }
    flush(current, &mut body, &mut sections);
    sections
}

/// Renders sections back to Markdown, one `#` per path level.
pub fn render_sections(sections: &[Section]) -> String {
    let mut out = String::new();
    for s in sections {
        if let Some(title) = s.heading_path.last() {
            out.push_str(&"#".repeat(s.level));
            out.push(' ');
            out.push_str(title);
            out.push('\n');
        }
        if !s.body.is_empty() {
            out.push_str(&s.body);
            out.push('\n');
        }
    }
    out
}

/// Rewrites any level 1–3 heading line into plain text so a body can never
/// introduce a section boundary.
pub fn strip_heading_markers(text: &str) -> String {
    text.lines()
        .map(|line| match heading_marker(line) {
            Some((_, title)) => title,
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}
