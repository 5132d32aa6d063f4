//! The grounding strategies that turn an action description into a triplet.

use crate::annotate::{AnnotatedScreenshot, LabelKind, MarkupConfig};
use crate::dom::Element;
use crate::gateway::{Conversation, Gateway, GatewayError, PngImage, TranscriptId};
use crate::ranking::{group_candidates, Candidate, CandidateSet};
use crate::text::fold;

use super::parse::{parse_formatted_answer, AnswerFormat};
use super::prompts::{annotation_text, attributes_text, choices_text, disambiguation_text, PromptError, Templates};
use super::types::{ActionDescription, AnswerLabel, ElementType, GroundedAction, GroundingFailure, GroundingOutcome, GroundingStrategy, Operation, OperationSpace};

/// Maximum number of multi-choice rounds before the ranker breaks ties.
pub const MAX_CHOICE_ROUNDS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum GroundingError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// The generation exchange that every grounding turn continues from.
pub struct Dialogue<'a> {
    gateway: &'a Gateway,
    system: String,
    generation_text: String,
    generation_images: Vec<PngImage>,
    /// `None` when generation and grounding are sent as one merged turn.
    description: Option<String>,
    pub transcripts: Vec<TranscriptId>,
}

impl<'a> Dialogue<'a> {
    pub fn new(gateway: &'a Gateway, system: String, generation_text: String, generation_images: Vec<PngImage>, description: Option<String>) -> Self {
        Self {
            gateway,
            system,
            generation_text,
            generation_images,
            description,
            transcripts: Vec::new(),
        }
    }

    /// Conversation for a grounding turn preceded by `followups`
    /// (earlier grounding prompt/answer pairs).
    pub fn conversation(&self, followups: &[(String, String)], text: &str, images: Vec<PngImage>) -> Conversation {
        let mut conv = Conversation::new(self.system.clone());
        let mut pending: Vec<(String, Vec<PngImage>)> = Vec::new();
        match &self.description {
            Some(desc) => conv = conv.user(self.generation_text.clone(), self.generation_images.clone()).assistant(desc.clone()),
            None => pending.push((self.generation_text.clone(), self.generation_images.clone())),
        }
        for (q, a) in followups {
            pending.push((q.clone(), Vec::new()));
            let (t, imgs) = join(std::mem::take(&mut pending));
            conv = conv.user(t, imgs).assistant(a.clone());
        }
        pending.push((text.to_owned(), images));
        let (t, imgs) = join(pending);
        conv.user(t, imgs)
    }

    pub async fn ask(&mut self, followups: &[(String, String)], text: &str, images: Vec<PngImage>) -> Result<String, GatewayError> {
        let conv = self.conversation(followups, text, images);
        let done = self.gateway.complete(&conv).await?;
        self.transcripts.extend(done.transcript);
        Ok(done.text)
    }
}

fn join(parts: Vec<(String, Vec<PngImage>)>) -> (String, Vec<PngImage>) {
    let mut texts = Vec::new();
    let mut images = Vec::new();
    for (t, i) in parts {
        texts.push(t);
        images.extend(i);
    }
    (texts.join("\n\n"), images)
}

fn element_action(c: &Element, answer: &ActionDescription, strategy: GroundingStrategy) -> GroundedAction {
    GroundedAction::new(Some(c.id.clone()), answer.operation.unwrap_or(Operation::Click), answer.value.clone(), strategy)
}

/// Actions that need no element: TERMINATE and SCROLL always, PRESS ENTER
/// when the model did not name an element (it acts on the focused one).
fn elementless(answer: &ActionDescription, not_listed: bool, strategy: GroundingStrategy) -> Option<GroundedAction> {
    let op = answer.operation?;
    let ok = matches!(op, Operation::Terminate | Operation::Scroll) || (op == Operation::PressEnter && not_listed);
    ok.then(|| GroundedAction::new(None, op, answer.value.clone(), strategy))
}

/// True if `el` is of the kind named by `ty`.
pub fn type_matches(el: &Element, ty: ElementType) -> bool {
    let role = el.role().map(str::to_ascii_lowercase);
    let role = role.as_deref();
    match ty {
        ElementType::Button => {
            el.tag == "button"
                || (el.tag == "input" && matches!(el.input_type().as_deref(), Some("button" | "submit" | "reset" | "image")))
                || role == Some("button")
        }
        ElementType::Textbox => {
            el.tag == "textarea"
                || (el.tag == "input"
                    && matches!(
                        el.input_type().as_deref().unwrap_or("text"),
                        "text" | "search" | "email" | "tel" | "url" | "password" | "number" | "date" | "datetime-local" | "month" | "week" | "time"
                    ))
        }
        ElementType::Selectbox => el.tag == "select" || role == Some("combobox"),
        ElementType::Link => el.tag == "a" || role == Some("link"),
    }
}

/// Elements of type `ty` whose salient text equals `text` after folding;
/// if none, those whose text contains or is contained in it.
pub fn attribute_matches<'e>(elements: &'e [Element], ty: ElementType, text: &str) -> Vec<&'e Element> {
    let want = fold(text);
    if want.is_empty() {
        return Vec::new();
    }
    let typed: Vec<(&Element, String)> = elements.iter().filter(|e| type_matches(e, ty)).map(|e| (e, fold(e.salient_text()))).collect();
    let exact: Vec<&Element> = typed.iter().filter(|(_, t)| *t == want).map(|(e, _)| *e).collect();
    if !exact.is_empty() {
        return exact;
    }
    typed
        .iter()
        .filter(|(_, t)| !t.is_empty() && (t.contains(&want) || want.contains(t.as_str())))
        .map(|(e, _)| *e)
        .collect()
}

pub async fn ground_via_attributes(
    dialogue: &mut Dialogue<'_>,
    templates: &Templates,
    elements: &[Element],
    space: OperationSpace,
) -> Result<GroundingOutcome, GroundingError> {
    let prompt = attributes_text(templates, space)?;
    let raw = dialogue.ask(&[], &prompt, Vec::new()).await?;
    let answer = match parse_formatted_answer(&raw, AnswerFormat::AttributeFields) {
        Ok(a) => a,
        Err(e) => return Ok(GroundingOutcome::failed(GroundingFailure::ParseFailure, raw).with_detail(e.to_string())),
    };
    let text = answer.element_text.clone().unwrap_or_default();
    let none_text = matches!(fold(&text).as_str(), "" | "none" | "na" | "n/a");
    if let Some(a) = elementless(&answer, none_text, GroundingStrategy::Attributes) {
        return Ok(GroundingOutcome::success(a, raw));
    }
    let ty = answer.element_type.expect("parser guarantees element type");
    let matches = attribute_matches(elements, ty, &text);
    match matches.len() {
        0 => Ok(GroundingOutcome::failed(GroundingFailure::AttributeMatchNotFound, raw)),
        1 => Ok(GroundingOutcome::success(element_action(matches[0], &answer, GroundingStrategy::Attributes), raw)),
        n => {
            tracing::debug!(n, "attribute match is ambiguous; asking to disambiguate");
            let set = CandidateSet {
                candidates: matches.iter().map(|e| Candidate { element: (*e).clone(), score: 0.0 }).collect(),
                k: n,
                ..Default::default()
            };
            let group = group_candidates(&set, n).remove(0);
            let q = disambiguation_text(templates, &group, space)?;
            let raw2 = dialogue.ask(&[(prompt, raw.clone())], &q, Vec::new()).await?;
            let joined = format!("{raw}\n\n{raw2}");
            let pick = parse_formatted_answer(&raw2, AnswerFormat::LetterChoice).ok().and_then(|a| match &a.label {
                Some(AnswerLabel::Label(l)) => group.member(l).map(|c| element_action(&c.element, &a, GroundingStrategy::Attributes)),
                _ => None,
            });
            Ok(match pick {
                Some(action) => GroundingOutcome::success(action, joined),
                None => GroundingOutcome::failed(GroundingFailure::AmbiguousUnresolved, joined).with_detail(format!("{n} elements match")),
            })
        }
    }
}

pub async fn ground_via_choices(
    dialogue: &mut Dialogue<'_>,
    templates: &Templates,
    set: &CandidateSet,
    group_size: usize,
    space: OperationSpace,
) -> Result<GroundingOutcome, GroundingError> {
    let mut raws = Vec::new();
    if set.is_empty() {
        return Ok(GroundingOutcome::failed(GroundingFailure::NoneSelected, "").with_detail("empty candidate set"));
    }
    let mut round_set = set.clone();
    let mut enter_on_focus = None;
    for round in 1..=MAX_CHOICE_ROUNDS {
        let mut picks: Vec<(Candidate, ActionDescription)> = Vec::new();
        for group in group_candidates(&round_set, group_size) {
            let q = choices_text(templates, &group, space)?;
            let raw = dialogue.ask(&[], &q, Vec::new()).await?;
            raws.push(raw.clone());
            let answer = match parse_formatted_answer(&raw, AnswerFormat::LetterChoice) {
                Ok(a) => a,
                Err(e) => return Ok(GroundingOutcome::failed(GroundingFailure::ParseFailure, raws.join("\n\n")).with_detail(e.to_string())),
            };
            let picked = match answer.label.as_ref() {
                Some(AnswerLabel::Label(l)) if *l == group.none_letter => None,
                Some(AnswerLabel::Label(l)) => match group.member(l) {
                    Some(c) => Some(c.clone()),
                    None => {
                        return Ok(GroundingOutcome::failed(GroundingFailure::MadeUpLabel, raws.join("\n\n")).with_detail(format!("label {l} not offered")));
                    }
                },
                _ => None,
            };
            if let Some(a) = elementless(&answer, picked.is_none(), GroundingStrategy::Choices) {
                if a.operation != Operation::PressEnter {
                    return Ok(GroundingOutcome::success(a, raws.join("\n\n")));
                }
                enter_on_focus.get_or_insert(a);
            }
            if let Some(c) = picked {
                picks.push((c, answer));
            }
        }
        match picks.len() {
            0 => {
                let raw = raws.join("\n\n");
                return Ok(match enter_on_focus {
                    Some(a) => GroundingOutcome::success(a, raw),
                    None => GroundingOutcome::failed(GroundingFailure::NoneSelected, raw),
                });
            }
            1 => {
                let (c, a) = &picks[0];
                return Ok(GroundingOutcome::success(element_action(&c.element, a, GroundingStrategy::Choices), raws.join("\n\n")));
            }
            n if round == MAX_CHOICE_ROUNDS => {
                let (c, a) = picks
                    .iter()
                    .min_by(|x, y| y.0.score.total_cmp(&x.0.score).then(rank_of(set, &x.0).cmp(&rank_of(set, &y.0))))
                    .expect("non-empty");
                let mut action = element_action(&c.element, a, GroundingStrategy::Choices);
                action.confidence_notes = Some(format!("{n} picks after {round} rounds; ranker tie-break"));
                return Ok(GroundingOutcome::success(action, raws.join("\n\n")));
            }
            _ => {
                picks.sort_by_key(|(c, _)| rank_of(set, c));
                round_set = CandidateSet {
                    candidates: picks.into_iter().map(|(c, _)| c).collect(),
                    ..set.clone()
                };
            }
        }
    }
    unreachable!("the last round always returns")
}

fn rank_of(set: &CandidateSet, c: &Candidate) -> usize {
    set.position(&c.element.id).unwrap_or(usize::MAX)
}

pub async fn ground_via_annotation(
    dialogue: &mut Dialogue<'_>,
    templates: &Templates,
    annotated: &AnnotatedScreenshot,
    annotated_png: PngImage,
    markup: &MarkupConfig,
    space: OperationSpace,
) -> Result<GroundingOutcome, GroundingError> {
    let q = annotation_text(templates, markup.label_kind, markup.label_position, space)?;
    let raw = dialogue.ask(&[], &q, vec![annotated_png]).await?;
    let format = match markup.label_kind {
        LabelKind::Number => AnswerFormat::NumberLabel,
        LabelKind::SingleLetter | LabelKind::DoubleLetter => AnswerFormat::LetterChoice,
    };
    let answer = match parse_formatted_answer(&raw, format) {
        Ok(a) => a,
        Err(e) => return Ok(GroundingOutcome::failed(GroundingFailure::ParseFailure, raw).with_detail(e.to_string())),
    };
    let label = match &answer.label {
        Some(AnswerLabel::Label(l)) => Some(l.clone()),
        _ => None,
    };
    if let Some(a) = elementless(&answer, label.is_none(), GroundingStrategy::Annotation) {
        return Ok(GroundingOutcome::success(a, raw));
    }
    let Some(label) = label else {
        return Ok(GroundingOutcome::failed(GroundingFailure::NoneSelected, raw));
    };
    match annotated.marks.iter().find(|m| m.label == label) {
        Some(mark) => Ok(GroundingOutcome::success(
            GroundedAction::new(Some(mark.element_id.clone()), answer.operation.unwrap_or(Operation::Click), answer.value.clone(), GroundingStrategy::Annotation),
            raw,
        )),
        None => Ok(GroundingOutcome::failed(GroundingFailure::MadeUpLabel, raw).with_detail(format!("label {label} was not drawn"))),
    }
}
