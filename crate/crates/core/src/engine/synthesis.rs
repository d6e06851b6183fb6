//! Parsing of the coordinator's structured round synthesis.

use super::prompts::{QUESTIONS_HEADER, SYNTHESIS_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSynthesis {
    pub synthesis: String,
    pub follow_up_questions: Vec<String>,
}

impl ParsedSynthesis {
    /// Canonical rendering, as recorded in the synthesis event.
    pub fn render(&self) -> String {
        let mut out = format!("{SYNTHESIS_HEADER}\n{}\n\n{QUESTIONS_HEADER}\n", self.synthesis);
        if self.follow_up_questions.is_empty() {
            out.push_str("(none)\n");
        }
        out.push_str(&super::prompts::numbered(&self.follow_up_questions));
        out.trim_end().to_owned()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Header {
    Synthesis,
    Questions,
}

/// Recognizes a header line, tolerating Markdown emphasis, heading marks
/// and case. Returns the header and any text following it on the line.
fn header(line: &str) -> Option<(Header, &str)> {
    let trimmed = line.trim().trim_start_matches(['#', '*', '_', ' ']);
    let upper = trimmed.to_ascii_uppercase();
    let labels: [(&str, Header); 4] = [
        ("SYNTHESIS", Header::Synthesis),
        ("FOLLOW-UP QUESTIONS", Header::Questions),
        ("FOLLOW UP QUESTIONS", Header::Questions),
        ("FOLLOWUP QUESTIONS", Header::Questions),
    ];
    for (label, kind) in labels {
        if !upper.starts_with(label) {
            continue;
        }
        let rest = trimmed[label.len()..].trim_start_matches(['*', '_']);
        if rest.trim().is_empty() {
            return Some((kind, ""));
        }
        if let Some(after) = rest.strip_prefix(':') {
            return Some((kind, after.trim_start_matches(['*', '_']).trim()));
        }
    }
    None
}

/// Splits a list marker (`1.`, `1)`, `-`, `*`, `•`) from a line.
fn list_item(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return Some(rest.trim());
        }
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &t[digits..];
    rest.strip_prefix(['.', ')'])
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
        .map(str::trim)
}

fn is_none_marker(text: &str) -> bool {
    let t = text.trim().trim_matches(['(', ')', '.', '*', '_']).to_ascii_lowercase();
    t == "none" || t == "n/a"
}

/// Extracts synthesis text and follow-up questions. `None` when either
/// header is missing or the synthesis is empty.
pub fn parse_synthesis(text: &str) -> Option<ParsedSynthesis> {
    let mut section = None;
    let mut seen_synthesis = false;
    let mut seen_questions = false;
    let mut synthesis: Vec<&str> = Vec::new();
    let mut questions: Vec<String> = Vec::new();

    for line in text.lines() {
        if let Some((kind, rest)) = header(line) {
            section = Some(kind);
            match kind {
                Header::Synthesis => seen_synthesis = true,
                Header::Questions => seen_questions = true,
            }
            if rest.is_empty() {
                continue;
            }
            match kind {
                Header::Synthesis => synthesis.push(rest),
                Header::Questions if !is_none_marker(rest) => questions.push(list_item(rest).unwrap_or(rest).to_owned()),
                Header::Questions => {}
            }
            continue;
        }
        match section {
            Some(Header::Synthesis) => synthesis.push(line),
            Some(Header::Questions) => {
                if line.trim().is_empty() || is_none_marker(line) {
                    continue;
                }
                match list_item(line) {
                    Some(item) if !item.is_empty() => questions.push(item.to_owned()),
                    Some(_) => {}
                    None => match questions.last_mut() {
                        Some(last) => {
                            last.push(' ');
                            last.push_str(line.trim());
                        }
                        None => questions.push(line.trim().to_owned()),
                    },
                }
            }
            None => {}
        }
    }

    let synthesis = synthesis.join("\n").trim().to_owned();
    if !seen_synthesis || !seen_questions || synthesis.is_empty() {
        return None;
    }
    Some(ParsedSynthesis {
        synthesis,
        follow_up_questions: questions,
    })
}
