//! Human grounding: a person maps the model's plan to a concrete action.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, Mutex};

use super::types::{check_triplet, ActionDescription, GroundedAction, GroundingOutcome, GroundingStrategy, Operation};
use crate::dom::ElementId;

pub const DEFAULT_ORACLE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("no oracle action within {0:?}")]
    OracleTimeout(Duration),
    #[error("oracle channel closed")]
    OracleAbort,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSubmission {
    #[serde(default)]
    pub element_id: Option<ElementId>,
    pub operation: Operation,
    #[serde(default)]
    pub value: Option<String>,
}

impl OracleSubmission {
    pub fn validate(&self) -> Result<(), String> {
        check_triplet(self.element_id.as_ref(), self.operation, self.value.as_deref())
    }
}

/// Rendezvous with a human. `next` blocks until a submission arrives;
/// `reject` tells the human why the last one was refused.
#[async_trait]
pub trait OracleChannel: Send + Sync {
    async fn next(&self, desc: &ActionDescription) -> Result<OracleSubmission, OracleError>;
    async fn reject(&self, reason: String);
}

/// Validates submissions, re-prompting on invalid ones, until `timeout`.
pub async fn ground_via_oracle(desc: &ActionDescription, channel: &dyn OracleChannel, timeout: Duration) -> Result<GroundingOutcome, OracleError> {
    let wait = async {
        loop {
            let sub = channel.next(desc).await?;
            match sub.validate() {
                Ok(()) => {
                    let action = GroundedAction::new(sub.element_id, sub.operation, sub.value, GroundingStrategy::Oracle);
                    return Ok(GroundingOutcome::success(action, desc.raw_text.clone()));
                }
                Err(reason) => {
                    tracing::info!(%reason, "oracle submission rejected");
                    channel.reject(reason).await;
                }
            }
        }
    };
    tokio::time::timeout(timeout, wait).await.map_err(|_| OracleError::OracleTimeout(timeout))?
}

/// Request shown to the human side of an [`MpscOracle`].
#[derive(Clone, Debug)]
pub enum OracleEvent {
    Request(ActionDescription),
    Rejected(String),
}

/// In-process channel: the agent holds the [`MpscOracle`], the human side
/// holds the [`OracleHandle`].
pub struct MpscOracle {
    events: mpsc::UnboundedSender<OracleEvent>,
    submissions: Mutex<mpsc::Receiver<OracleSubmission>>,
}

pub struct OracleHandle {
    pub events: mpsc::UnboundedReceiver<OracleEvent>,
    pub submissions: mpsc::Sender<OracleSubmission>,
}

pub fn oracle_pair() -> (MpscOracle, OracleHandle) {
    let (etx, erx) = mpsc::unbounded_channel();
    let (stx, srx) = mpsc::channel(8);
    (
        MpscOracle {
            events: etx,
            submissions: Mutex::new(srx),
        },
        OracleHandle {
            events: erx,
            submissions: stx,
        },
    )
}

#[async_trait]
impl OracleChannel for MpscOracle {
    async fn next(&self, desc: &ActionDescription) -> Result<OracleSubmission, OracleError> {
        let _ = self.events.send(OracleEvent::Request(desc.clone()));
        self.submissions.lock().await.recv().await.ok_or(OracleError::OracleAbort)
    }

    async fn reject(&self, reason: String) {
        let _ = self.events.send(OracleEvent::Rejected(reason));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc() -> ActionDescription {
        ActionDescription::from_raw("click the Find Your Truck button")
    }

    #[tokio::test]
    async fn pass_through() {
        let (ch, handle) = oracle_pair();
        handle
            .submissions
            .send(OracleSubmission {
                element_id: Some("e7".into()),
                operation: Operation::Click,
                value: None,
            })
            .await
            .unwrap();
        let out = ground_via_oracle(&desc(), &ch, DEFAULT_ORACLE_TIMEOUT).await.unwrap();
        let a = out.action().unwrap();
        assert_eq!(a.element_id, Some("e7".into()));
        assert_eq!(a.grounding_strategy, GroundingStrategy::Oracle);
    }

    #[tokio::test]
    async fn closed_channel_aborts() {
        let (ch, handle) = oracle_pair();
        drop(handle);
        assert_eq!(ground_via_oracle(&desc(), &ch, DEFAULT_ORACLE_TIMEOUT).await.unwrap_err(), OracleError::OracleAbort);
    }

    #[tokio::test]
    async fn invalid_submission_reprompts() {
        let (ch, mut handle) = oracle_pair();
        let bad = OracleSubmission {
            element_id: Some("e2".into()),
            operation: Operation::Type,
            value: None,
        };
        let good = OracleSubmission {
            value: Some("SJD".into()),
            ..bad.clone()
        };
        handle.submissions.send(bad).await.unwrap();
        handle.submissions.send(good).await.unwrap();
        let out = ground_via_oracle(&desc(), &ch, DEFAULT_ORACLE_TIMEOUT).await.unwrap();
        assert_eq!(out.action().unwrap().value.as_deref(), Some("SJD"));
        assert!(matches!(handle.events.recv().await, Some(OracleEvent::Request(_))));
        assert!(matches!(handle.events.recv().await, Some(OracleEvent::Rejected(r)) if r.contains("requires a value")));
        assert!(matches!(handle.events.recv().await, Some(OracleEvent::Request(_))));
    }

    #[tokio::test(start_paused = true)]
    async fn times_out() {
        let (ch, _handle) = oracle_pair();
        let err = ground_via_oracle(&desc(), &ch, Duration::from_secs(5)).await.unwrap_err();
        assert_eq!(err, OracleError::OracleTimeout(Duration::from_secs(5)));
    }
}
