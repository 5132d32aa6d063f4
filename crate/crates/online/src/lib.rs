//! Online evaluation: drives a browser through the agent loop behind a
//! safety gate and exposes a loopback control API for human monitors.

pub mod api;
pub mod browser;
pub mod policy;
pub mod run;
pub mod session;
pub mod task;
pub mod trace;

pub use api::{router, serve, serve_dir, ClientGuard, Registry};
pub use browser::{Browser, BrowserError, BrowserFactory, LiteBrowser, LiteFactory, ScrollDirection, WebDriverBrowser, WebDriverFactory};
pub use policy::{BlockedPattern, PolicyMode, SafetyPolicy};
pub use run::{aborted, run_online, OnlineError, OnlineOptions, OnlineReport};
pub use session::{run_session, ControlOracle, DecisionKind, SessionConfig, SessionOutcome, SessionShared, SessionView};
pub use task::{load_tasks, OnlineTask, SuccessCheck};
pub use trace::{read_trace, replay, Decision, Replay, ReplayError, Status, TraceEvent, TraceRecord, Verdict};
