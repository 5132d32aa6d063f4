//! HTML parsing, interactive-element extraction and the `[tag] text`
//! element representation used by ranking and grounding.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use ego_tree::{NodeId, NodeRef};
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::normalize_ws;

/// Attribute carrying a live-page bounding box, written by the browser drivers.
pub const BBOX_ATTR: &str = "data-wg-bbox";
/// Bounding-box attribute used by cached Mind2Web page dumps.
pub const DUMP_BBOX_ATTR: &str = "bounding_box_rect";

/// Attributes that participate in element identity. Mutable state such as
/// `value` or `checked` is excluded so typing into a field keeps its id.
const IDENTITY_ATTRS: &[&str] = &["id", "name", "type", "role", "href", "backend_node_id"];

const INTERACTIVE_TAGS: &[&str] = &["a", "button", "input", "select", "textarea", "option", "label"];
const INTERACTIVE_ROLES: &[&str] = &["button", "link", "tab", "checkbox", "menuitem", "combobox"];

/// Elements whose text never renders.
const TEXTLESS_TAGS: &[&str] = &["script", "style", "noscript", "template", "head", "title"];

/// Inline formatting tags that do not introduce a word boundary in text content.
const INLINE_TEXT_TAGS: &[&str] = &[
    "a", "abbr", "b", "code", "em", "font", "i", "mark", "small", "span", "strong", "sub", "sup", "u",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomError {
    #[error("document contains no element nodes")]
    EmptyDocument,
}

/// Opaque, parse-stable element identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Rectangle in CSS pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Parses `"x,y,w,h"` (comma or whitespace separated). Negative sizes are rejected.
    pub fn parse(s: &str) -> Option<Self> {
        let parts: Vec<f64> = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .ok()?;
        match parts.as_slice() {
            &[x, y, w, h] if w >= 0.0 && h >= 0.0 && [x, y, w, h].iter().all(|v| v.is_finite()) => {
                Some(Self { x, y, w, h })
            }
            _ => None,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_attr(&self) -> String {
        format!("{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    /// Position among all element nodes of the document.
    pub index: usize,
    pub tag: String,
    pub attributes: BTreeMap<String, String>,
    pub text_content: String,
    pub bbox: Option<BBox>,
    pub is_visible: bool,
    pub is_interactive: bool,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    pub fn role(&self) -> Option<&str> {
        self.attr("role")
    }

    /// `type` attribute of an `input`, lowercased, defaulting to `text`.
    pub fn input_type(&self) -> Option<String> {
        (self.tag == "input").then(|| self.attr("type").unwrap_or("text").trim().to_ascii_lowercase())
    }

    /// Visible text, falling back to `value`, `aria-label`, `placeholder`, `title`, `alt`.
    pub fn salient_text(&self) -> &str {
        if !self.text_content.is_empty() {
            return &self.text_content;
        }
        for key in ["value", "aria-label", "placeholder", "title", "alt"] {
            if let Some(v) = self.attr(key) {
                if !v.trim().is_empty() {
                    return v;
                }
            }
        }
        ""
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomSnapshot {
    pub document_source: String,
    pub elements: Vec<Element>,
    pub url: String,
    pub captured_at: DateTime<Utc>,
}

impl DomSnapshot {
    pub fn get(&self, id: &ElementId) -> Option<&Element> {
        self.elements.iter().find(|e| &e.id == id)
    }

    pub fn id_index(&self) -> HashMap<&ElementId, &Element> {
        self.elements.iter().map(|e| (&e.id, e)).collect()
    }

    /// Resolves either a native id or a `backend_node_id` value from a page dump.
    pub fn resolve(&self, raw: &str) -> Option<&Element> {
        self.elements
            .iter()
            .find(|e| e.id.as_str() == raw)
            .or_else(|| self.elements.iter().find(|e| e.attr("backend_node_id") == Some(raw)))
    }

    /// True if any element carries layout information.
    pub fn has_layout(&self) -> bool {
        self.elements.iter().any(|e| e.bbox.is_some())
    }
}

pub fn parse_document(html: &str, url: &str) -> Result<DomSnapshot, DomError> {
    parse_document_at(html, url, Utc::now())
}

/// Like [`parse_document`] with an explicit capture time.
pub fn parse_document_at(html: &str, url: &str, captured_at: DateTime<Utc>) -> Result<DomSnapshot, DomError> {
    if html.trim().is_empty() {
        return Err(DomError::EmptyDocument);
    }
    let doc = Html::parse_document(html);

    let mut texts: HashMap<NodeId, String> = HashMap::new();
    collect_text(doc.tree.root(), &mut texts);

    let mut raw = Vec::new();
    let mut hidden_depth: Vec<NodeId> = Vec::new();
    for node in doc.tree.root().descendants() {
        let Some(el) = node.value().as_element() else { continue };
        while let Some(last) = hidden_depth.last() {
            if node.ancestors().any(|a| a.id() == *last) {
                break;
            }
            hidden_depth.pop();
        }
        let tag = el.name().to_ascii_lowercase();
        let mut attributes = BTreeMap::new();
        let mut bbox = None;
        for (name, value) in el.attrs() {
            let name = name.to_ascii_lowercase();
            if name == BBOX_ATTR || name == DUMP_BBOX_ATTR {
                bbox = bbox.or_else(|| BBox::parse(value));
            } else if name != "data-wg-idx" {
                attributes.insert(name, value.to_owned());
            }
        }
        let hidden_here = TEXTLESS_TAGS.contains(&tag.as_str())
            || attributes.contains_key("hidden")
            || (tag == "input" && attributes.get("type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")))
            || attributes
                .get("style")
                .is_some_and(|s| s.replace(' ', "").to_ascii_lowercase().contains("display:none"));
        let statically_hidden = hidden_here || !hidden_depth.is_empty();
        if hidden_here {
            hidden_depth.push(node.id());
        }
        let text_content = if TEXTLESS_TAGS.contains(&tag.as_str()) {
            String::new()
        } else {
            normalize_ws(texts.get(&node.id()).map(String::as_str).unwrap_or(""))
        };
        raw.push((tag, attributes, text_content, bbox, statically_hidden));
    }

    let only_implied = raw.iter().all(|(tag, attrs, text, _, _)| {
        matches!(tag.as_str(), "html" | "head" | "body") && attrs.is_empty() && text.is_empty()
    });
    if raw.is_empty() || only_implied {
        return Err(DomError::EmptyDocument);
    }

    let has_layout = raw.iter().any(|r| r.3.is_some());
    let elements = raw
        .into_iter()
        .enumerate()
        .map(|(index, (tag, attributes, text_content, bbox, statically_hidden))| {
            let is_visible = if has_layout {
                bbox.is_some_and(|b| b.w > 0.0 && b.h > 0.0)
            } else {
                !statically_hidden
            };
            let is_interactive = is_interactive(&tag, &attributes);
            Element {
                id: element_id(index, &tag, &attributes),
                index,
                tag,
                attributes,
                text_content,
                bbox,
                is_visible,
                is_interactive,
            }
        })
        .collect();

    Ok(DomSnapshot {
        document_source: html.to_owned(),
        elements,
        url: url.to_owned(),
        captured_at,
    })
}

fn collect_text(node: NodeRef<'_, Node>, out: &mut HashMap<NodeId, String>) -> String {
    let mut buf = String::new();
    for child in node.children() {
        match child.value() {
            Node::Text(t) => buf.push_str(t),
            Node::Element(el) => {
                let tag = el.name().to_ascii_lowercase();
                let inner = collect_text(child, out);
                if TEXTLESS_TAGS.contains(&tag.as_str()) {
                    continue;
                }
                if INLINE_TEXT_TAGS.contains(&tag.as_str()) {
                    buf.push_str(&inner);
                } else {
                    buf.push(' ');
                    buf.push_str(&inner);
                    buf.push(' ');
                }
            }
            _ => {}
        }
    }
    out.insert(node.id(), buf.clone());
    buf
}

fn is_interactive(tag: &str, attributes: &BTreeMap<String, String>) -> bool {
    INTERACTIVE_TAGS.contains(&tag)
        || attributes
            .get("role")
            .is_some_and(|r| INTERACTIVE_ROLES.contains(&r.trim().to_ascii_lowercase().as_str()))
        || attributes.contains_key("onclick")
}

fn element_id(index: usize, tag: &str, attributes: &BTreeMap<String, String>) -> ElementId {
    let mut h = Sha256::new();
    h.update(index.to_le_bytes());
    h.update(tag.as_bytes());
    for key in IDENTITY_ATTRS {
        if let Some(v) = attributes.get(*key) {
            h.update([0u8]);
            h.update(key.as_bytes());
            h.update([1u8]);
            h.update(normalize_ws(v).as_bytes());
        }
    }
    let digest = h.finalize();
    ElementId(format!("e{}", hex16(&digest[..8])))
}

fn hex16(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Visible interactive elements in document order.
pub fn extract_interactive_elements(snapshot: &DomSnapshot) -> Vec<Element> {
    snapshot
        .elements
        .iter()
        .filter(|e| e.is_interactive && e.is_visible)
        .cloned()
        .collect()
}

pub const DEFAULT_REPR_LEN: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementRepr {
    pub element_id: ElementId,
    pub repr_text: String,
    pub truncated: bool,
}

/// Renders `[tag] salient text`, cut to at most `max_len` characters.
pub fn element_repr(element: &Element, max_len: usize) -> ElementRepr {
    debug_assert!(max_len >= 16, "max_len must be at least 16");
    let salient = normalize_ws(element.salient_text());
    let full = if salient.is_empty() {
        format!("[{}]", element.tag)
    } else {
        format!("[{}] {}", element.tag, salient)
    };
    let len = full.chars().count();
    let (repr_text, truncated) = if len > max_len {
        (full.chars().take(max_len).collect(), true)
    } else {
        (full, false)
    };
    ElementRepr {
        element_id: element.id.clone(),
        repr_text,
        truncated,
    }
}
