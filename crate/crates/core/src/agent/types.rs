use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dom::{element_repr, Element, ElementId, DEFAULT_REPR_LEN};
use crate::gateway::TranscriptId;
use crate::ranking::CandidateSet;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub website: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_url: Option<String>,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            instruction: instruction.into(),
            website: String::new(),
            domain: String::new(),
            start_url: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.instruction.trim().is_empty() {
            return Err(format!("task {}: instruction is empty", self.task_id));
        }
        Ok(())
    }
}

/// Append-only list of previous-action summaries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionHistory {
    entries: Vec<String>,
}

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<String>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, entry: impl Into<String>) {
        self.entries.push(entry.into());
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Click,
    Type,
    Select,
    PressEnter,
    Terminate,
    Scroll,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::Click,
        Operation::Type,
        Operation::Select,
        Operation::PressEnter,
        Operation::Terminate,
        Operation::Scroll,
    ];

    /// Upper-case keyword used in prompts and answers.
    pub fn keyword(self) -> &'static str {
        match self {
            Operation::Click => "CLICK",
            Operation::Type => "TYPE",
            Operation::Select => "SELECT",
            Operation::PressEnter => "PRESS ENTER",
            Operation::Terminate => "TERMINATE",
            Operation::Scroll => "SCROLL",
        }
    }

    pub fn requires_value(self) -> bool {
        matches!(self, Operation::Type | Operation::Select)
    }

    /// Whether the operation acts on a specific element.
    pub fn targets_element(self) -> bool {
        matches!(self, Operation::Click | Operation::Type | Operation::Select)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for Operation {
    type Err = String;

    /// Accepts the keywords case-insensitively plus a few common spellings
    /// (`PRESS_ENTER`, `ENTER`, `HOVER` as click).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        Ok(match squashed.as_str() {
            "CLICK" | "HOVER" => Operation::Click,
            "TYPE" => Operation::Type,
            "SELECT" => Operation::Select,
            "PRESSENTER" | "ENTER" => Operation::PressEnter,
            "TERMINATE" | "STOP" => Operation::Terminate,
            "SCROLL" | "SCROLLUP" | "SCROLLDOWN" => Operation::Scroll,
            _ => return Err(format!("unknown operation: {s:?}")),
        })
    }
}

/// Which operations a run may emit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationSpace {
    /// Click, Type and Select only; hover and press-enter fold into Click.
    #[default]
    Offline,
    Online,
}

impl OperationSpace {
    pub fn prompt_list(self) -> &'static str {
        match self {
            OperationSpace::Offline => "{CLICK, TYPE, SELECT}",
            OperationSpace::Online => "{CLICK, TYPE, SELECT, PRESS ENTER, TERMINATE}",
        }
    }

    /// Maps `op` into this space, or `None` when it has no counterpart.
    pub fn admit(self, op: Operation) -> Option<Operation> {
        match (self, op) {
            (OperationSpace::Online, op) => Some(op),
            (OperationSpace::Offline, Operation::PressEnter) => Some(Operation::Click),
            (OperationSpace::Offline, Operation::Terminate | Operation::Scroll) => None,
            (OperationSpace::Offline, op) => Some(op),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementType {
    #[serde(rename = "BUTTON")]
    Button,
    #[serde(rename = "TEXTBOX")]
    Textbox,
    #[serde(rename = "SELECTBOX")]
    Selectbox,
    #[serde(rename = "LINK")]
    Link,
}

impl ElementType {
    pub fn keyword(self) -> &'static str {
        match self {
            ElementType::Button => "BUTTON",
            ElementType::Textbox => "TEXTBOX",
            ElementType::Selectbox => "SELECTBOX",
            ElementType::Link => "LINK",
        }
    }
}

impl FromStr for ElementType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        Ok(match squashed.as_str() {
            "BUTTON" => ElementType::Button,
            "TEXTBOX" | "INPUT" | "TEXTFIELD" | "TEXTAREA" => ElementType::Textbox,
            "SELECTBOX" | "SELECT" | "DROPDOWN" | "COMBOBOX" => ElementType::Selectbox,
            "LINK" | "HYPERLINK" => ElementType::Link,
            _ => return Err(format!("unknown element type: {s:?}")),
        })
    }
}

/// The label a model picked in a choice or annotation answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerLabel {
    Label(String),
    /// "NA" / "None": the target is not among the options.
    NotListed,
}

/// The model's textual plan plus whatever a grounding parse extracted from it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDescription {
    pub raw_text: String,
    pub element_desc: String,
    pub label: Option<AnswerLabel>,
    pub element_type: Option<ElementType>,
    pub element_text: Option<String>,
    pub operation: Option<Operation>,
    pub value: Option<String>,
}

impl ActionDescription {
    pub fn from_raw(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundingStrategy {
    Attributes,
    Choices,
    Annotation,
    Oracle,
}

impl FromStr for GroundingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "attributes" | "attribute" | "textual" => Ok(GroundingStrategy::Attributes),
            "choices" | "choice" | "multichoice" => Ok(GroundingStrategy::Choices),
            "annotation" | "image" | "som" => Ok(GroundingStrategy::Annotation),
            "oracle" => Ok(GroundingStrategy::Oracle),
            other => Err(format!("unknown grounding strategy: {other:?}")),
        }
    }
}

impl fmt::Display for GroundingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroundingStrategy::Attributes => "attributes",
            GroundingStrategy::Choices => "choices",
            GroundingStrategy::Annotation => "annotation",
            GroundingStrategy::Oracle => "oracle",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedAction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<ElementId>,
    pub operation: Operation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub grounding_strategy: GroundingStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_notes: Option<String>,
}

impl GroundedAction {
    pub fn new(element_id: Option<ElementId>, operation: Operation, value: Option<String>, strategy: GroundingStrategy) -> Self {
        Self {
            element_id,
            operation,
            value,
            grounding_strategy: strategy,
            confidence_notes: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        check_triplet(self.element_id.as_ref(), self.operation, self.value.as_deref())
    }
}

/// Shared invariant check for grounded or human-submitted triplets.
pub fn check_triplet(element_id: Option<&ElementId>, op: Operation, value: Option<&str>) -> Result<(), String> {
    if op.requires_value() && value.is_none_or(|v| v.trim().is_empty()) {
        return Err(format!("{op} requires a value"));
    }
    if op == Operation::Click && value.is_some() {
        return Err("CLICK takes no value".into());
    }
    if op.targets_element() && element_id.is_none() {
        return Err(format!("{op} requires an element"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroundingFailure {
    NoneSelected,
    AttributeMatchNotFound,
    AmbiguousUnresolved,
    ParseFailure,
    MadeUpLabel,
}

impl fmt::Display for GroundingFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Result of one grounding attempt. Exactly one of action and failure is set,
/// which the `Result` enforces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingOutcome {
    pub result: Result<GroundedAction, GroundingFailure>,
    pub raw_grounding_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl GroundingOutcome {
    pub fn success(action: GroundedAction, raw: impl Into<String>) -> Self {
        Self {
            result: Ok(action),
            raw_grounding_text: raw.into(),
            detail: None,
        }
    }

    pub fn failed(failure: GroundingFailure, raw: impl Into<String>) -> Self {
        Self {
            result: Err(failure),
            raw_grounding_text: raw.into(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn action(&self) -> Option<&GroundedAction> {
        self.result.as_ref().ok()
    }

    pub fn failure(&self) -> Option<GroundingFailure> {
        self.result.as_ref().err().copied()
    }
}

/// Output of one policy step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub description: ActionDescription,
    pub outcome: GroundingOutcome,
    pub transcripts: Vec<TranscriptId>,
    /// Summary appended to the history, present only on success.
    pub history_entry: Option<String>,
    /// Candidates offered to choice or annotation grounding.
    pub candidates: Option<CandidateSet>,
}

/// `Element: [tag] text; Operation: OP; Value: v` summary used as history.
pub fn summarize_action(element: Option<&Element>, op: Operation, value: Option<&str>) -> String {
    let el = element.map_or_else(|| "None".to_owned(), |e| element_repr(e, DEFAULT_REPR_LEN).repr_text);
    format!("Element: {el}; Operation: {op}; Value: {}", value.unwrap_or("None"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operation_keywords_round_trip() {
        for op in Operation::ALL {
            assert_eq!(op.keyword().parse::<Operation>().unwrap(), op);
        }
        assert_eq!("press_enter".parse::<Operation>().unwrap(), Operation::PressEnter);
        assert_eq!("Hover".parse::<Operation>().unwrap(), Operation::Click);
        assert!("jump".parse::<Operation>().is_err());
    }

    #[test]
    fn offline_space_folds_enter_into_click() {
        assert_eq!(OperationSpace::Offline.admit(Operation::PressEnter), Some(Operation::Click));
        assert_eq!(OperationSpace::Offline.admit(Operation::Terminate), None);
        assert_eq!(OperationSpace::Online.admit(Operation::Terminate), Some(Operation::Terminate));
    }

    #[test]
    fn triplet_invariants() {
        let e = ElementId::from("e1");
        assert!(check_triplet(Some(&e), Operation::Type, None).is_err());
        assert!(check_triplet(Some(&e), Operation::Type, Some("  ")).is_err());
        assert!(check_triplet(Some(&e), Operation::Click, Some("x")).is_err());
        assert!(check_triplet(None, Operation::Click, None).is_err());
        assert!(check_triplet(None, Operation::Terminate, None).is_ok());
        assert!(check_triplet(Some(&e), Operation::Select, Some("Queen")).is_ok());
    }

    #[test]
    fn outcome_serializes_one_side() {
        let o = GroundingOutcome::failed(GroundingFailure::MadeUpLabel, "ELEMENT: 12");
        let v = serde_json::to_value(&o).unwrap();
        assert_eq!(v["result"]["Err"], "MadeUpLabel");
        assert!(v["result"].get("Ok").is_none());
    }
}
