//! Scripts that answer every prompt with the gold action, for checking the
//! pipeline end to end without a model.

use crate::agent::{
    annotation_text, attribute_matches, attributes_text, build_generation_prompt, choices_text, disambiguation_text, format_answer, format_attribute_answer,
    type_matches, ActionHistory, Agent, ElementType, GroundingStrategy, Operation,
};
use crate::annotate::{annotate, decode_png};
use crate::dom::extract_interactive_elements;
use crate::gateway::{PngImage, Script};
use crate::ranking::{choice_letter, group_candidates, Candidate, CandidateSet};

use super::dataset::OfflineTask;
use super::run::{gold_summary, prepare_step, OfflineError};

/// Builds a keyed script under which `agent` reproduces the gold action at
/// every step it can ground. Requires unmerged turns and one job.
pub fn gold_script(tasks: &[OfflineTask], agent: &Agent) -> Result<Script, OfflineError> {
    let cfg = &agent.config;
    if cfg.strategy == GroundingStrategy::Oracle {
        return Err(OfflineError::Unsupported("oracle grounding cannot be scripted".into()));
    }
    if agent.gateway().merge_turns() {
        return Err(OfflineError::Unsupported("gold scripts assume separate generation and grounding turns".into()));
    }
    let templates = agent.templates();
    let space = cfg.operation_space;
    let mut script = Script::default();
    for task in tasks {
        let mut history = ActionHistory::new();
        for step in &task.steps {
            let prepared = prepare_step(step, cfg.k)?;
            let Ok(p) = &prepared else {
                history.push(gold_summary(step, None));
                continue;
            };
            let op = step.gold_operation;
            let value = step.gold_value.as_deref();
            let set = agent.candidates(&task.task, &history, &p.obs);

            let mut annotated = None;
            if cfg.strategy == GroundingStrategy::Annotation {
                let img = decode_png(p.obs.screenshot.bytes()).map_err(|e| OfflineError::Agent(e.into()))?;
                if let Ok(a) = annotate(&img, &set, &cfg.markup) {
                    let png = PngImage::new(a.to_png().map_err(|e| OfflineError::Agent(e.into()))?);
                    annotated = Some((a, png));
                }
            }
            let gen_image = match (&annotated, cfg.annotated_in_generation) {
                (Some((_, png)), true) => png.clone(),
                _ => p.obs.screenshot.clone(),
            };
            let conv = build_generation_prompt(templates, &task.task, &history, &gen_image).map_err(|e| OfflineError::Agent(e.into()))?;
            let summary = gold_summary(step, Some(p));
            script.push_keyed(1, &conv.turns[0].text, &conv.turns[0].images, format!("The next action is: {summary}"));

            match cfg.strategy {
                GroundingStrategy::Choices => {
                    let best = set.candidates.iter().position(|c| p.gold.contains(&c.element.id));
                    for (gi, group) in group_candidates(&set, cfg.group_size).iter().enumerate() {
                        let letter = match best {
                            Some(b) if b / cfg.group_size == gi => group.letters[b % cfg.group_size].clone(),
                            _ => group.none_letter.clone(),
                        };
                        let q = choices_text(templates, group, space).map_err(|e| OfflineError::Agent(e.into()))?;
                        script.push_keyed(3, &q, &[], format_answer(&letter, op, value));
                    }
                }
                GroundingStrategy::Annotation => {
                    if let Some((a, png)) = &annotated {
                        let label = a
                            .marks
                            .iter()
                            .filter(|m| p.gold.contains(&m.element_id))
                            .min_by_key(|m| m.rank)
                            .map_or_else(|| "NA".to_owned(), |m| m.label.clone());
                        let q = annotation_text(templates, cfg.markup.label_kind, cfg.markup.label_position, space).map_err(|e| OfflineError::Agent(e.into()))?;
                        script.push_keyed(3, &q, std::slice::from_ref(png), format_answer(&label, op, value));
                    }
                }
                GroundingStrategy::Attributes => {
                    let elements = extract_interactive_elements(&p.obs.snapshot);
                    let Some(gold_el) = elements.iter().find(|e| p.gold.contains(&e.id)) else {
                        continue;
                    };
                    let ty = [ElementType::Button, ElementType::Textbox, ElementType::Selectbox, ElementType::Link]
                        .into_iter()
                        .find(|t| type_matches(gold_el, *t))
                        .unwrap_or(if op == Operation::Type { ElementType::Textbox } else { ElementType::Button });
                    let text = gold_el.salient_text().to_owned();
                    let q = attributes_text(templates, space).map_err(|e| OfflineError::Agent(e.into()))?;
                    let answer = format_attribute_answer("the target element", ty, &text, op, value);
                    script.push_keyed(3, &q, &[], answer);
                    let matches = attribute_matches(&elements, ty, &text);
                    if matches.len() > 1 {
                        let set = CandidateSet {
                            candidates: matches.iter().map(|e| Candidate { element: (*e).clone(), score: 0.0 }).collect(),
                            k: matches.len(),
                            ..Default::default()
                        };
                        let group = group_candidates(&set, matches.len()).remove(0);
                        let pos = matches.iter().position(|e| e.id == gold_el.id).unwrap_or(0);
                        let q2 = disambiguation_text(templates, &group, space).map_err(|e| OfflineError::Agent(e.into()))?;
                        script.push_keyed(5, &q2, &[], format_answer(&choice_letter(pos), op, value));
                    }
                }
                GroundingStrategy::Oracle => unreachable!("rejected above"),
            }
            history.push(summary);
        }
    }
    Ok(script)
}
