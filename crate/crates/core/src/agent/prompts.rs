//! Prompt templates. The texts live in `templates/*.txt` and may be
//! overridden from a directory holding files with the same names.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::types::{ActionHistory, GroundingStrategy, OperationSpace, TaskSpec};
use crate::annotate::{LabelKind, LabelPosition};
use crate::dom::{element_repr, DEFAULT_REPR_LEN};
use crate::gateway::{Conversation, PngImage};
use crate::ranking::OptionGroup;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    System,
    Generation,
    Grounding,
    Disambiguation,
}

const BUILTIN: &[(&str, &str)] = &[
    ("system.txt", include_str!("../../templates/system.txt")),
    ("generation.txt", include_str!("../../templates/generation.txt")),
    ("grounding_choices.txt", include_str!("../../templates/grounding_choices.txt")),
    ("grounding_annotation.txt", include_str!("../../templates/grounding_annotation.txt")),
    ("grounding_attributes.txt", include_str!("../../templates/grounding_attributes.txt")),
    ("disambiguation_attributes.txt", include_str!("../../templates/disambiguation_attributes.txt")),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template missing: {0}")]
    TemplateMissing(String),
    #[error("screenshot is empty")]
    EmptyScreenshot,
}

/// File name for a (stage, strategy) key, if that combination has a template.
pub fn template_file(stage: Stage, strategy: GroundingStrategy) -> Option<&'static str> {
    use GroundingStrategy as G;
    Some(match (stage, strategy) {
        (Stage::System, _) => "system.txt",
        (Stage::Generation, _) => "generation.txt",
        (Stage::Grounding, G::Choices) => "grounding_choices.txt",
        (Stage::Grounding, G::Annotation) => "grounding_annotation.txt",
        (Stage::Grounding, G::Attributes) => "grounding_attributes.txt",
        (Stage::Disambiguation, G::Attributes) => "disambiguation_attributes.txt",
        _ => return None,
    })
}

#[derive(Clone, Debug)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            texts: BUILTIN.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect(),
        }
    }
}

impl Templates {
    /// Loads every template from `dir`; all files must be present.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut texts = BTreeMap::new();
        for (name, _) in BUILTIN {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|_| PromptError::TemplateMissing(path.display().to_string()))?;
            texts.insert((*name).to_owned(), text);
        }
        Ok(Self { texts })
    }

    pub fn get(&self, stage: Stage, strategy: GroundingStrategy) -> Result<&str, PromptError> {
        let file = template_file(stage, strategy).ok_or_else(|| PromptError::TemplateMissing(format!("{stage:?}/{strategy}")))?;
        self.texts
            .get(file)
            .map(|s| s.trim_end())
            .ok_or_else(|| PromptError::TemplateMissing(file.to_owned()))
    }

    pub fn system(&self) -> Result<&str, PromptError> {
        self.get(Stage::System, GroundingStrategy::Choices)
    }
}

pub fn render_history(history: &ActionHistory) -> String {
    if history.is_empty() {
        "None".to_owned()
    } else {
        history.entries().join("\n")
    }
}

/// Text of the generation turn. Identical for every grounding strategy.
pub fn generation_text(templates: &Templates, task: &TaskSpec, history: &ActionHistory) -> Result<String, PromptError> {
    let t = templates.get(Stage::Generation, GroundingStrategy::Choices)?;
    Ok(t.replace("{TASK}", task.instruction.trim()).replace("{PREVIOUS ACTIONS}", &render_history(history)))
}

pub fn build_generation_prompt(templates: &Templates, task: &TaskSpec, history: &ActionHistory, screenshot: &PngImage) -> Result<Conversation, PromptError> {
    if screenshot.bytes().is_empty() {
        return Err(PromptError::EmptyScreenshot);
    }
    let text = generation_text(templates, task, history)?;
    Ok(Conversation::new(templates.system()?).user(text, vec![screenshot.clone()]))
}

/// One line per option plus the none-option.
pub fn render_choices(group: &OptionGroup) -> String {
    let mut out = String::new();
    for (letter, c) in group.letters.iter().zip(&group.members) {
        out.push_str(&format!("{letter}. {}\n", element_repr(&c.element, DEFAULT_REPR_LEN).repr_text));
    }
    out.push_str(&format!("{}. None of the other options match the correct element", group.none_letter));
    out
}

pub fn choices_text(templates: &Templates, group: &OptionGroup, space: OperationSpace) -> Result<String, PromptError> {
    Ok(templates
        .get(Stage::Grounding, GroundingStrategy::Choices)?
        .replace("{CHOICES}", &render_choices(group))
        .replace("{NONE_LETTER}", &group.none_letter)
        .replace("{ACTIONS}", space.prompt_list()))
}

pub fn disambiguation_text(templates: &Templates, group: &OptionGroup, space: OperationSpace) -> Result<String, PromptError> {
    Ok(templates
        .get(Stage::Disambiguation, GroundingStrategy::Attributes)?
        .replace("{CHOICES}", &render_choices(group))
        .replace("{NONE_LETTER}", &group.none_letter)
        .replace("{ACTIONS}", space.prompt_list()))
}

pub fn annotation_text(templates: &Templates, kind: LabelKind, position: LabelPosition, space: OperationSpace) -> Result<String, PromptError> {
    let noun = match kind {
        LabelKind::Number => "number",
        LabelKind::SingleLetter | LabelKind::DoubleLetter => "uppercase letter label",
    };
    let pos = match position {
        LabelPosition::BottomLeft => "bottom left corner",
        LabelPosition::BottomCenter => "bottom center",
    };
    Ok(templates
        .get(Stage::Grounding, GroundingStrategy::Annotation)?
        .replace("{LABEL_NOUN}", noun)
        .replace("{LABEL_POSITION}", pos)
        .replace("{ACTIONS}", space.prompt_list()))
}

pub fn attributes_text(templates: &Templates, space: OperationSpace) -> Result<String, PromptError> {
    Ok(templates.get(Stage::Grounding, GroundingStrategy::Attributes)?.replace("{ACTIONS}", space.prompt_list()))
}
