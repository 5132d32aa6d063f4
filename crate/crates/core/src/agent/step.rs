use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grounding::{ground_via_annotation, ground_via_attributes, ground_via_choices, Dialogue, GroundingError};
use super::oracle::{ground_via_oracle, OracleChannel, OracleError, DEFAULT_ORACLE_TIMEOUT};
use super::prompts::{build_generation_prompt, PromptError, Templates};
use super::types::{summarize_action, ActionDescription, ActionHistory, GroundingFailure, GroundingOutcome, GroundingStrategy, OperationSpace, StepOutput, TaskSpec};
use crate::annotate::{annotate, decode_png, AnnotateError, MarkupConfig};
use crate::dom::{extract_interactive_elements, DomSnapshot};
use crate::gateway::{Gateway, GatewayError, PngImage};
use crate::ranking::{rank_candidates, CandidateSet, LexicalRanker, Ranker, DEFAULT_GROUP_SIZE, DEFAULT_TOP_K};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("oracle grounding needs an attached oracle channel")]
    NoOracleChannel,
}

impl From<GroundingError> for AgentError {
    fn from(e: GroundingError) -> Self {
        match e {
            GroundingError::Prompt(p) => AgentError::Prompt(p),
            GroundingError::Gateway(g) => AgentError::Gateway(g),
        }
    }
}

/// What the agent sees at one step.
#[derive(Clone, Debug)]
pub struct Observation {
    pub snapshot: DomSnapshot,
    pub screenshot: PngImage,
    /// Precomputed candidates; ranked on the fly when absent.
    pub candidates: Option<CandidateSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub strategy: GroundingStrategy,
    pub operation_space: OperationSpace,
    pub k: usize,
    pub group_size: usize,
    pub markup: MarkupConfig,
    #[serde(with = "secs")]
    pub oracle_timeout: Duration,
    /// Also attach the annotated screenshot to the generation turn.
    pub annotated_in_generation: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            strategy: GroundingStrategy::Annotation,
            operation_space: OperationSpace::Offline,
            k: DEFAULT_TOP_K,
            group_size: DEFAULT_GROUP_SIZE,
            markup: MarkupConfig::default(),
            oracle_timeout: DEFAULT_ORACLE_TIMEOUT,
            annotated_in_generation: false,
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// The policy: generation turn, then the configured grounding strategy.
#[derive(Clone)]
pub struct Agent {
    pub config: AgentConfig,
    templates: Arc<Templates>,
    gateway: Gateway,
    ranker: Arc<dyn Ranker>,
    oracle: Option<Arc<dyn OracleChannel>>,
}

impl Agent {
    pub fn new(config: AgentConfig, gateway: Gateway) -> Self {
        Self {
            config,
            templates: Arc::new(Templates::default()),
            gateway,
            ranker: Arc::new(LexicalRanker),
            oracle: None,
        }
    }

    pub fn with_templates(mut self, templates: Arc<Templates>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_ranker(mut self, ranker: Arc<dyn Ranker>) -> Self {
        self.ranker = ranker;
        self
    }

    pub fn with_oracle(mut self, oracle: Arc<dyn OracleChannel>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// Candidate set for this observation: the precomputed one, or the top-k
    /// interactive elements from the ranker.
    pub fn candidates(&self, task: &TaskSpec, history: &ActionHistory, obs: &Observation) -> CandidateSet {
        match &obs.candidates {
            Some(set) => set.clone(),
            None => {
                let elements = extract_interactive_elements(&obs.snapshot);
                rank_candidates(self.ranker.as_ref(), &task.instruction, history.entries(), &elements, self.config.k)
            }
        }
    }

    /// One policy step. On success the action summary is appended to `history`.
    pub async fn step(&self, task: &TaskSpec, history: &mut ActionHistory, obs: &Observation) -> Result<StepOutput, AgentError> {
        let cfg = &self.config;
        let needs_set = matches!(cfg.strategy, GroundingStrategy::Choices | GroundingStrategy::Annotation);
        let set = needs_set.then(|| self.candidates(task, history, obs));

        let annotated = match (cfg.strategy, &set) {
            (GroundingStrategy::Annotation, Some(set)) => {
                let img = decode_png(obs.screenshot.bytes())?;
                match annotate(&img, set, &cfg.markup) {
                    Ok(a) => {
                        let png = PngImage::new(a.to_png()?);
                        Some((a, png))
                    }
                    Err(AnnotateError::NoDrawableCandidates) => None,
                    Err(e) => return Err(e.into()),
                }
            }
            _ => None,
        };

        let gen_image = match (&annotated, cfg.annotated_in_generation) {
            (Some((_, png)), true) => png.clone(),
            _ => obs.screenshot.clone(),
        };
        let conv = build_generation_prompt(&self.templates, task, history, &gen_image)?;
        let gen_turn = conv.turns[0].clone();

        let merged = self.gateway.merge_turns();
        let mut transcripts = Vec::new();
        let raw = if merged {
            String::new()
        } else {
            let done = self.gateway.complete(&conv).await?;
            transcripts.extend(done.transcript);
            done.text
        };
        let description = ActionDescription::from_raw(raw.clone());

        let outcome = if !merged && raw.trim().is_empty() {
            GroundingOutcome::failed(GroundingFailure::ParseFailure, "").with_detail("empty action description")
        } else {
            let mut dialogue = Dialogue::new(&self.gateway, conv.system.clone(), gen_turn.text, gen_turn.images, (!merged).then_some(raw));
            let out = match cfg.strategy {
                GroundingStrategy::Attributes => {
                    let elements = extract_interactive_elements(&obs.snapshot);
                    ground_via_attributes(&mut dialogue, &self.templates, &elements, cfg.operation_space).await?
                }
                GroundingStrategy::Choices => {
                    let set = set.as_ref().expect("computed above");
                    ground_via_choices(&mut dialogue, &self.templates, set, cfg.group_size, cfg.operation_space).await?
                }
                GroundingStrategy::Annotation => match &annotated {
                    Some((a, png)) => ground_via_annotation(&mut dialogue, &self.templates, a, png.clone(), &cfg.markup, cfg.operation_space).await?,
                    None => GroundingOutcome::failed(GroundingFailure::NoneSelected, "").with_detail("no drawable candidates"),
                },
                GroundingStrategy::Oracle => {
                    let channel = self.oracle.as_ref().ok_or(AgentError::NoOracleChannel)?;
                    ground_via_oracle(&description, channel.as_ref(), cfg.oracle_timeout).await?
                }
            };
            transcripts.extend(dialogue.transcripts);
            self.admit(out)
        };

        let history_entry = outcome.action().map(|a| {
            let el = a.element_id.as_ref().and_then(|id| obs.snapshot.get(id));
            summarize_action(el, a.operation, a.value.as_deref())
        });
        if let Some(entry) = &history_entry {
            history.push(entry.clone());
        }
        Ok(StepOutput {
            description,
            outcome,
            transcripts,
            history_entry,
            candidates: set,
        })
    }

    /// Maps the action into the configured operation space and enforces
    /// the triplet invariants.
    fn admit(&self, mut out: GroundingOutcome) -> GroundingOutcome {
        let Ok(action) = &mut out.result else { return out };
        let original = action.operation;
        match self.config.operation_space.admit(original) {
            Some(op) => {
                if op != original {
                    action.operation = op;
                    action.value = None;
                }
            }
            None => {
                return GroundingOutcome::failed(GroundingFailure::ParseFailure, out.raw_grounding_text).with_detail(format!("{original} is not allowed here"));
            }
        }
        if let Err(why) = action.validate() {
            return GroundingOutcome::failed(GroundingFailure::ParseFailure, out.raw_grounding_text).with_detail(why);
        }
        out
    }
}
