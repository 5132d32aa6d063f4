//! Grounded web-agent core: DOM extraction, candidate ranking, set-of-mark
//! screenshot annotation, the model gateway, the step policy with its three
//! grounding strategies, and the offline evaluation harness.

pub mod agent;
pub mod annotate;
pub mod dom;
pub mod gateway;
pub mod offline;
pub mod ranking;
pub mod text;
