//! The policy: prompt construction, action generation and grounding.

mod grounding;
mod oracle;
mod parse;
mod prompts;
mod step;
mod types;

pub use grounding::{attribute_matches, ground_via_annotation, ground_via_attributes, ground_via_choices, type_matches, Dialogue, GroundingError, MAX_CHOICE_ROUNDS};
pub use oracle::{ground_via_oracle, oracle_pair, MpscOracle, OracleChannel, OracleError, OracleEvent, OracleHandle, OracleSubmission, DEFAULT_ORACLE_TIMEOUT};
pub use parse::{format_answer, format_attribute_answer, parse_formatted_answer, AnswerField, AnswerFormat, ParseError};
pub use prompts::{
    annotation_text, attributes_text, build_generation_prompt, choices_text, disambiguation_text, generation_text, render_choices, render_history, template_file,
    PromptError, Stage, Templates,
};
pub use step::{Agent, AgentConfig, AgentError, Observation};
pub use types::{
    check_triplet, summarize_action, ActionDescription, ActionHistory, AnswerLabel, ElementType, GroundedAction, GroundingFailure, GroundingOutcome, GroundingStrategy,
    Operation, OperationSpace, StepOutput, TaskSpec,
};
