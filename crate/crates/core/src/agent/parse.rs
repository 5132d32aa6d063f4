//! Extraction of the standardized `ELEMENT / ACTION / VALUE` answer block.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{ActionDescription, AnswerLabel, ElementType, Operation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerFormat {
    /// `ELEMENT: <letter>`
    LetterChoice,
    /// `ELEMENT: <number>`
    NumberLabel,
    /// `ELEMENT`, `ELEMENT TYPE`, `ELEMENT TEXT`
    AttributeFields,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerField {
    Element,
    ElementType,
    ElementText,
    Action,
    Value,
}

impl AnswerField {
    fn key(self) -> &'static str {
        match self {
            AnswerField::Element => "ELEMENT",
            AnswerField::ElementType => "ELEMENT TYPE",
            AnswerField::ElementText => "ELEMENT TEXT",
            AnswerField::Action => "ACTION",
            AnswerField::Value => "VALUE",
        }
    }
}

impl fmt::Display for AnswerField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("could not parse {field} from answer")]
pub struct ParseError {
    pub field: AnswerField,
}

fn fail(field: AnswerField) -> ParseError {
    ParseError { field }
}

// Longer keys first so `ELEMENT TYPE:` is not read as `ELEMENT:`.
const KEYS: [AnswerField; 5] = [
    AnswerField::ElementType,
    AnswerField::ElementText,
    AnswerField::Element,
    AnswerField::Action,
    AnswerField::Value,
];

#[derive(Default)]
struct Fields {
    element: Option<String>,
    element_type: Option<String>,
    element_text: Option<String>,
    action: Option<String>,
    value: Option<String>,
}

impl Fields {
    fn slot(&mut self, f: AnswerField) -> &mut Option<String> {
        match f {
            AnswerField::Element => &mut self.element,
            AnswerField::ElementType => &mut self.element_type,
            AnswerField::ElementText => &mut self.element_text,
            AnswerField::Action => &mut self.action,
            AnswerField::Value => &mut self.value,
        }
    }
}

/// Drops list bullets, numbering, quote markers and heading hashes.
fn strip_line_prefix(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '*', '+', '>', '#', '•']).trim_start();
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 {
            let rest = &s[digits..];
            if let Some(r) = rest.strip_prefix(['.', ')']) {
                if r.starts_with(char::is_whitespace) {
                    s = r.trim_start();
                }
            }
        }
        if s == before {
            return s;
        }
    }
}

/// Matches `key` at the start of `s`, tolerating `*`/`_` emphasis around the
/// key and any whitespace before the colon. Returns the text after the colon.
fn match_key<'a>(s: &'a str, key: &str) -> Option<&'a str> {
    let mut chars = s.char_indices().peekable();
    let skip_emphasis = |it: &mut std::iter::Peekable<std::str::CharIndices<'a>>| {
        while matches!(it.peek(), Some((_, '*' | '_'))) {
            it.next();
        }
    };
    skip_emphasis(&mut chars);
    for kc in key.chars() {
        if kc == ' ' {
            let mut saw = false;
            while matches!(chars.peek(), Some((_, c)) if c.is_whitespace() || *c == '_') {
                chars.next();
                saw = true;
            }
            if !saw {
                return None;
            }
            continue;
        }
        match chars.next() {
            Some((_, c)) if c.to_ascii_uppercase() == kc => {}
            _ => return None,
        }
    }
    skip_emphasis(&mut chars);
    while matches!(chars.peek(), Some((_, c)) if c.is_whitespace()) {
        chars.next();
    }
    match chars.next() {
        Some((i, ':')) => Some(&s[i + 1..]),
        _ => None,
    }
}

fn clean_value(v: &str) -> String {
    let mut v = v.trim().trim_matches(['*', '`']).trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”')] {
        if v.len() >= 2 && v.starts_with(open) && v.ends_with(close) {
            v = &v[open.len_utf8()..v.len() - close.len_utf8()];
            break;
        }
    }
    v.trim().to_owned()
}

fn scan(text: &str) -> Fields {
    let mut fields = Fields::default();
    for line in text.lines() {
        let s = strip_line_prefix(line);
        for key in KEYS {
            if let Some(rest) = match_key(s, key.key()) {
                *fields.slot(key) = Some(clean_value(rest));
                break;
            }
        }
    }
    fields
}

fn is_none_word(v: &str) -> bool {
    let u = v.trim().trim_end_matches('.').to_ascii_uppercase();
    matches!(u.as_str(), "NONE" | "NA" | "N/A" | "NULL" | "")
}

fn parse_letter(v: &str) -> Option<AnswerLabel> {
    if is_none_word(v) || v.trim().to_ascii_uppercase().starts_with("NONE OF") {
        return Some(AnswerLabel::NotListed);
    }
    let tokens: Vec<&str> = v.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty()).collect();
    let first = tokens.first()?;
    if first.len() <= 3 && first.chars().all(|c| c.is_ascii_alphabetic()) && (first.len() == 1 || first.chars().all(|c| c.is_ascii_uppercase())) {
        return Some(AnswerLabel::Label(first.to_ascii_uppercase()));
    }
    // "Option B", "Choice AA": the first all-caps short token.
    tokens
        .iter()
        .find(|t| t.len() <= 3 && t.chars().all(|c| c.is_ascii_uppercase()))
        .map(|t| AnswerLabel::Label((*t).to_owned()))
}

fn parse_number(v: &str) -> Option<AnswerLabel> {
    if is_none_word(v) {
        return Some(AnswerLabel::NotListed);
    }
    let digits = v
        .split(|c: char| !c.is_ascii_digit())
        .find(|t| !t.is_empty())?;
    let n: u64 = digits.parse().ok()?;
    Some(AnswerLabel::Label(n.to_string()))
}

/// Operation and its direction/value for SCROLL, which may carry the
/// direction in the ACTION line itself.
fn parse_action(v: &str) -> Option<(Operation, Option<String>)> {
    let op: Operation = v.parse().ok().or_else(|| {
        let first = v.split_whitespace().next()?;
        let two: String = v.split_whitespace().take(2).collect::<Vec<_>>().join(" ");
        two.parse().ok().or_else(|| first.parse().ok())
    })?;
    let dir = (op == Operation::Scroll).then(|| {
        if v.to_ascii_uppercase().contains("UP") {
            "UP".to_owned()
        } else {
            "DOWN".to_owned()
        }
    });
    Some((op, dir))
}

/// Parses the last answer block in `text` for the given format.
pub fn parse_formatted_answer(text: &str, format: AnswerFormat) -> Result<ActionDescription, ParseError> {
    let fields = scan(text);
    let mut out = ActionDescription {
        raw_text: text.to_owned(),
        ..Default::default()
    };

    match format {
        AnswerFormat::LetterChoice | AnswerFormat::NumberLabel => {
            let el = fields.element.as_deref().ok_or(fail(AnswerField::Element))?;
            let label = match format {
                AnswerFormat::LetterChoice => parse_letter(el),
                _ => parse_number(el),
            };
            out.label = Some(label.ok_or(fail(AnswerField::Element))?);
            out.element_desc = el.to_owned();
        }
        AnswerFormat::AttributeFields => {
            let ty = fields.element_type.as_deref().ok_or(fail(AnswerField::ElementType))?;
            out.element_type = Some(ty.parse().map_err(|_| fail(AnswerField::ElementType))?);
            let txt = fields.element_text.as_deref().ok_or(fail(AnswerField::ElementText))?;
            out.element_text = Some(txt.to_owned());
            out.element_desc = fields.element.clone().unwrap_or_default();
        }
    }

    let action = fields.action.as_deref().ok_or(fail(AnswerField::Action))?;
    let (op, scroll_dir) = parse_action(action).ok_or(fail(AnswerField::Action))?;
    out.operation = Some(op);
    let value = fields.value.filter(|v| !is_none_word(v));
    out.value = match op {
        Operation::Type | Operation::Select => Some(value.ok_or(fail(AnswerField::Value))?),
        Operation::Scroll => Some(value.map(|v| v.to_ascii_uppercase()).filter(|v| v == "UP" || v == "DOWN").or(scroll_dir).unwrap_or_else(|| "DOWN".into())),
        _ => None,
    };
    Ok(out)
}

/// Renders an answer block in the standardized format; inverse of
/// [`parse_formatted_answer`] for well-formed inputs.
pub fn format_answer(element: &str, op: Operation, value: Option<&str>) -> String {
    format!("ELEMENT: {element}\nACTION: {op}\nVALUE: {}", value.unwrap_or("None"))
}

/// Attribute-format answer block.
pub fn format_attribute_answer(desc: &str, ty: ElementType, text: &str, op: Operation, value: Option<&str>) -> String {
    format!(
        "ELEMENT: {desc}\nELEMENT TYPE: {}\nELEMENT TEXT: {text}\nACTION: {op}\nVALUE: {}",
        ty.keyword(),
        value.unwrap_or("None")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(s: &str) -> Option<AnswerLabel> {
        Some(AnswerLabel::Label(s.into()))
    }

    #[test]
    fn basic_letter_answer() {
        let d = parse_formatted_answer("ELEMENT: C\nACTION: TYPE\nVALUE: 12/10/2023", AnswerFormat::LetterChoice).unwrap();
        assert_eq!(d.label, label("C"));
        assert_eq!(d.operation, Some(Operation::Type));
        assert_eq!(d.value.as_deref(), Some("12/10/2023"));
    }

    #[test]
    fn na_is_not_listed() {
        let d = parse_formatted_answer("ELEMENT: NA\nACTION: CLICK\nVALUE: None", AnswerFormat::NumberLabel).unwrap();
        assert_eq!(d.label, Some(AnswerLabel::NotListed));
        assert_eq!(d.value, None);
    }

    #[test]
    fn last_block_wins() {
        let t = "ELEMENT: A\nACTION: CLICK\nVALUE: None\n\nOn reflection:\nELEMENT: D\nACTION: CLICK\nVALUE: None";
        assert_eq!(parse_formatted_answer(t, AnswerFormat::LetterChoice).unwrap().label, label("D"));
    }

    #[test]
    fn markdown_decoration() {
        let t = "- **ELEMENT:** B\n* **Action**: select\n  1. VALUE: \"Large truck\"";
        let d = parse_formatted_answer(t, AnswerFormat::LetterChoice).unwrap();
        assert_eq!(d.label, label("B"));
        assert_eq!(d.operation, Some(Operation::Select));
        assert_eq!(d.value.as_deref(), Some("Large truck"));
    }

    #[test]
    fn element_type_line_is_not_element() {
        let t = "ELEMENT: the orange button at the top\nELEMENT TYPE: BUTTON\nELEMENT TEXT: Find Your Truck\nACTION: CLICK\nVALUE: None";
        let d = parse_formatted_answer(t, AnswerFormat::AttributeFields).unwrap();
        assert_eq!(d.element_type, Some(ElementType::Button));
        assert_eq!(d.element_text.as_deref(), Some("Find Your Truck"));
        assert_eq!(d.element_desc, "the orange button at the top");
    }

    #[test]
    fn missing_fields_named() {
        let e = parse_formatted_answer("ACTION: CLICK", AnswerFormat::LetterChoice).unwrap_err();
        assert_eq!(e.field, AnswerField::Element);
        let e = parse_formatted_answer("ELEMENT: A\nACTION: TYPE\nVALUE: None", AnswerFormat::LetterChoice).unwrap_err();
        assert_eq!(e.field, AnswerField::Value);
        let e = parse_formatted_answer("ELEMENT: x\nELEMENT TEXT: y\nACTION: CLICK", AnswerFormat::AttributeFields).unwrap_err();
        assert_eq!(e.field, AnswerField::ElementType);
        let e = parse_formatted_answer("ELEMENT: 3\nACTION: fly", AnswerFormat::NumberLabel).unwrap_err();
        assert_eq!(e.field, AnswerField::Action);
    }

    #[test]
    fn number_label_variants() {
        for (s, want) in [("[5]", "5"), ("05", "5"), ("Label 12", "12"), ("#7.", "7")] {
            let t = format!("ELEMENT: {s}\nACTION: CLICK\nVALUE: None");
            assert_eq!(parse_formatted_answer(&t, AnswerFormat::NumberLabel).unwrap().label, label(want), "{s}");
        }
    }

    #[test]
    fn letter_variants() {
        for (s, want) in [("b", "B"), ("B.", "B"), ("(C)", "C"), ("Option AA", "AA"), ("E. [button] Find", "E")] {
            let t = format!("ELEMENT: {s}\nACTION: CLICK\nVALUE: None");
            assert_eq!(parse_formatted_answer(&t, AnswerFormat::LetterChoice).unwrap().label, label(want), "{s}");
        }
    }

    #[test]
    fn click_value_dropped_and_scroll_direction() {
        let d = parse_formatted_answer("ELEMENT: A\nACTION: CLICK\nVALUE: something", AnswerFormat::LetterChoice).unwrap();
        assert_eq!(d.value, None);
        let d = parse_formatted_answer("ELEMENT: NA\nACTION: SCROLL UP\nVALUE: None", AnswerFormat::NumberLabel).unwrap();
        assert_eq!((d.operation, d.value.as_deref()), (Some(Operation::Scroll), Some("UP")));
    }

    #[test]
    fn format_parses_back() {
        let t = format_answer("AB", Operation::Select, Some("Queen"));
        let d = parse_formatted_answer(&t, AnswerFormat::LetterChoice).unwrap();
        assert_eq!((d.label, d.operation, d.value.as_deref()), (label("AB"), Some(Operation::Select), Some("Queen")));
    }
}
