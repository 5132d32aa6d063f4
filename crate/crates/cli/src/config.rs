//! Settings resolution: flag, then `WEBGROUND_<KEY>` environment variable,
//! then the key=value config file, then the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use webground_core::agent::{Agent, AgentConfig, GroundingStrategy, OperationSpace, Templates};
use webground_core::annotate::{LabelKind, LabelPosition, MarkupConfig};
use webground_core::gateway::{backend_from_config, BackendConfig, BackendKind, Gateway, Script, TranscriptSink};
use webground_core::ranking::{DEFAULT_GROUP_SIZE, DEFAULT_TOP_K};
use webground_online::policy::{default_blocked_patterns, BlockedPattern, PolicyMode, SafetyPolicy};

use crate::UsageError;

pub const ENV_PREFIX: &str = "WEBGROUND_";

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "strategy",
    "markup",
    "ranker",
    "k",
    "group_size",
    "jobs",
    "backend",
    "endpoint_url",
    "model_name",
    "temperature",
    "max_output_tokens",
    "request_timeout_secs",
    "max_retries",
    "api_key_env",
    "merge_turns",
    "max_image_side",
    "max_concurrency",
    "requests_per_second",
    "script",
    "templates",
    "transcripts",
    "dataset",
    "out_dir",
    "tasks",
    "site",
    "auto_approve",
    "max_steps",
    "max_reproposals",
    "blocked_patterns",
    "overlay_selectors",
    "approval_timeout_secs",
    "verdict_timeout_secs",
    "api_addr",
    "ui_wait_secs",
    "browser",
    "webdriver_url",
    "viewport",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Flag,
    Env,
    File,
}

/// Parses a flat `key = value` file; `#` starts a comment line.
pub fn parse_config_file(text: &str, path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{}:{}", path.display(), n + 1);
        let (k, v) = line.split_once('=').ok_or_else(|| UsageError(format!("{}: expected key = value", at())))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(UsageError(format!("{}: unknown key {key:?}", at())));
        }
        if out.insert(key.clone(), v.trim().to_owned()).is_some() {
            return Err(UsageError(format!("{}: {key:?} set twice", at())));
        }
    }
    Ok(out)
}

pub struct Sources {
    file: BTreeMap<String, String>,
    env: Box<dyn Fn(&str) -> Option<String>>,
}

impl Sources {
    pub fn new(file: BTreeMap<String, String>, env: impl Fn(&str) -> Option<String> + 'static) -> Self {
        Self { file, env: Box::new(env) }
    }

    /// Reads the config file named by `--config` or `WEBGROUND_CONFIG`.
    pub fn load(config: Option<&Path>) -> Result<Self, UsageError> {
        let env = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let path = config.map(Path::to_path_buf).or_else(|| env(&format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| UsageError(format!("config file {}: {e}", p.display())))?;
                parse_config_file(&text, &p)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self::new(file, env))
    }

    pub fn raw(&self, key: &str, flag: Option<String>) -> Option<(String, Origin)> {
        if let Some(v) = flag {
            return Some((v, Origin::Flag));
        }
        if let Some(v) = (self.env)(&format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())) {
            return Some((v, Origin::Env));
        }
        self.file.get(key).map(|v| (v.clone(), Origin::File))
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<String>) -> Result<Option<T>, UsageError>
    where
        T::Err: Display,
    {
        match self.raw(key, flag) {
            None => Ok(None),
            Some((v, origin)) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("{key} ({origin:?}): {e}"))),
        }
    }

    pub fn or<T: FromStr>(&self, key: &str, flag: Option<String>, default: T) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    pub fn secs(&self, key: &str, flag: Option<String>, default: Duration) -> Result<Duration, UsageError> {
        match self.get::<f64>(key, flag)? {
            Some(s) if s.is_finite() && s >= 0.0 => Ok(Duration::from_secs_f64(s)),
            Some(s) => Err(UsageError(format!("{key}: {s} is not a duration in seconds"))),
            None => Ok(default),
        }
    }

    /// Comma-separated list.
    pub fn list(&self, key: &str, flag: Option<String>) -> Vec<String> {
        self.raw(key, flag)
            .map(|(v, _)| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect())
            .unwrap_or_default()
    }
}

/// `true`/`false`, `yes`/`no`, `1`/`0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flag(pub bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(Flag(true)),
            "false" | "no" | "0" | "off" => Ok(Flag(false)),
            other => Err(format!("not a boolean: {other:?}")),
        }
    }
}

/// `<label-kind>,<position>` in either order, e.g. `number,bottom-left`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Markup(pub LabelKind, pub LabelPosition);

impl FromStr for Markup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let d = MarkupConfig::default();
        let (mut kind, mut pos) = (d.label_kind, d.label_position);
        for part in s.split(',').map(|p| p.trim().to_ascii_lowercase().replace('_', "-")) {
            match part.as_str() {
                "number" | "numbers" => kind = LabelKind::Number,
                "single-letter" | "letter" | "letters" => kind = LabelKind::SingleLetter,
                "double-letter" => kind = LabelKind::DoubleLetter,
                "bottom-left" => pos = LabelPosition::BottomLeft,
                "bottom-center" => pos = LabelPosition::BottomCenter,
                "" => {}
                other => return Err(format!("unknown markup part {other:?}")),
            }
        }
        Ok(Markup(kind, pos))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    /// Built-in lexical ranker; imported rankings are ignored.
    #[default]
    Lexical,
    /// Rankings shipped with the dataset; every step must have one.
    Imported,
}

impl FromStr for RankerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lexical" => Ok(RankerKind::Lexical),
            "imported" => Ok(RankerKind::Imported),
            other => Err(format!("unknown ranker {other:?}")),
        }
    }
}

pub fn parse_backend_kind(s: &str) -> Result<BackendKind, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "scripted" => Ok(BackendKind::Scripted),
        "http-chat" | "http" => Ok(BackendKind::HttpChat),
        other => Err(format!("unknown backend {other:?}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Viewport(pub u32, pub u32);

impl FromStr for Viewport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("viewport {s:?} is not WxH"))?;
        let p = |v: &str| v.trim().parse::<u32>().ok().filter(|n| *n > 0).ok_or_else(|| format!("viewport {s:?} is not WxH"));
        Ok(Viewport(p(w)?, p(h)?))
    }
}

/// Flags shared by every command that drives the agent.
#[derive(clap::Args, Debug, Default, Clone)]
pub struct AgentArgs {
    /// key=value config file [env: WEBGROUND_CONFIG]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// attributes | choices | annotation | oracle
    #[arg(long)]
    pub strategy: Option<String>,
    /// Label kind and position, e.g. number,bottom-left
    #[arg(long)]
    pub markup: Option<String>,
    /// lexical | imported
    #[arg(long)]
    pub ranker: Option<String>,
    /// Candidates kept after ranking
    #[arg(long)]
    pub k: Option<String>,
    /// Options per multi-choice question
    #[arg(long)]
    pub group_size: Option<String>,
    /// Tasks run concurrently
    #[arg(long)]
    pub jobs: Option<String>,
    /// scripted | http-chat
    #[arg(long)]
    pub backend: Option<String>,
    /// Chat-completions URL for the http-chat backend
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the http-chat backend
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<String>,
    /// Script file for the scripted backend; `gold` derives one from the dataset
    #[arg(long)]
    pub script: Option<String>,
    /// Directory overriding the built-in prompt templates
    #[arg(long)]
    pub templates: Option<String>,
    /// JSON-lines file receiving every model exchange
    #[arg(long)]
    pub transcripts: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<String>,
}

/// Resolved agent and backend settings; echoed into report headers.
#[derive(Clone, Debug, Serialize)]
pub struct AgentSettings {
    pub strategy: GroundingStrategy,
    pub markup: MarkupConfig,
    pub ranker: RankerKind,
    pub k: usize,
    pub group_size: usize,
    pub jobs: usize,
    pub backend: BackendConfig,
    pub script: Option<String>,
    pub templates: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Where each explicitly set key came from.
    pub origins: BTreeMap<String, Origin>,
}

impl AgentSettings {
    pub fn resolve(src: &Sources, a: &AgentArgs, default_strategy: GroundingStrategy, default_out: &str) -> Result<Self, UsageError> {
        let mut origins = BTreeMap::new();
        let flags: [(&str, &Option<String>); 14] = [
            ("strategy", &a.strategy),
            ("markup", &a.markup),
            ("ranker", &a.ranker),
            ("k", &a.k),
            ("group_size", &a.group_size),
            ("jobs", &a.jobs),
            ("backend", &a.backend),
            ("endpoint_url", &a.endpoint),
            ("model_name", &a.model),
            ("temperature", &a.temperature),
            ("script", &a.script),
            ("templates", &a.templates),
            ("transcripts", &a.transcripts),
            ("out_dir", &a.out),
        ];
        for (key, flag) in flags {
            if let Some((_, o)) = src.raw(key, flag.clone()) {
                origins.insert(key.to_owned(), o);
            }
        }
        for key in ["max_output_tokens", "request_timeout_secs", "max_retries", "api_key_env", "merge_turns", "max_image_side", "max_concurrency", "requests_per_second"] {
            if let Some((_, o)) = src.raw(key, None) {
                origins.insert(key.to_owned(), o);
            }
        }

        let Markup(label_kind, label_position) = src.or("markup", a.markup.clone(), Markup(LabelKind::Number, LabelPosition::BottomLeft))?;
        let d = BackendConfig::default();
        let kind = match src.raw("backend", a.backend.clone()) {
            Some((v, _)) => parse_backend_kind(&v).map_err(|e| UsageError(format!("backend: {e}")))?,
            None => d.kind,
        };
        let backend = BackendConfig {
            kind,
            endpoint_url: src.or("endpoint_url", a.endpoint.clone(), d.endpoint_url.clone())?,
            model_name: src.or("model_name", a.model.clone(), d.model_name.clone())?,
            temperature: src.or("temperature", a.temperature.clone(), d.temperature)?,
            max_output_tokens: src.or("max_output_tokens", None, d.max_output_tokens)?,
            request_timeout: src.secs("request_timeout_secs", None, d.request_timeout)?,
            max_retries: src.or("max_retries", None, d.max_retries)?,
            api_key_env: src.or("api_key_env", None, d.api_key_env.clone())?,
            merge_turns: src.or("merge_turns", None, Flag(d.merge_turns))?.0,
            max_image_side: src.or("max_image_side", None, d.max_image_side)?,
            max_concurrency: src.or("max_concurrency", None, d.max_concurrency)?,
            requests_per_second: src.get("requests_per_second", None)?,
            ..d
        };
        backend.validate().map_err(|e| UsageError(e.to_string()))?;

        let positive = |key: &str, v: usize| if v == 0 { Err(UsageError(format!("{key} must be at least 1"))) } else { Ok(v) };
        Ok(Self {
            strategy: src.or("strategy", a.strategy.clone(), default_strategy)?,
            markup: MarkupConfig {
                label_kind,
                label_position,
                ..Default::default()
            },
            ranker: src.or("ranker", a.ranker.clone(), RankerKind::default())?,
            k: positive("k", src.or("k", a.k.clone(), DEFAULT_TOP_K)?)?,
            group_size: positive("group_size", src.or("group_size", a.group_size.clone(), DEFAULT_GROUP_SIZE)?)?,
            jobs: positive("jobs", src.or("jobs", a.jobs.clone(), 1)?)?,
            backend,
            script: src.get("script", a.script.clone())?,
            templates: src.get("templates", a.templates.clone())?,
            transcripts: src.get("transcripts", a.transcripts.clone())?,
            out_dir: src.or("out_dir", a.out.clone(), PathBuf::from(default_out))?,
            origins,
        })
    }
}

impl AgentSettings {
    /// Builds the gateway and agent. `script` overrides the configured script file.
    pub fn agent(&self, space: OperationSpace, script: Option<Script>) -> anyhow::Result<Agent> {
        let script = match (script, &self.script) {
            (Some(s), _) => Some(s),
            (None, Some(path)) if self.backend.kind == BackendKind::Scripted => {
                Some(Script::load(Path::new(path)).map_err(|e| UsageError(format!("script {path}: {e}")))?)
            }
            _ => None,
        };
        let backend = backend_from_config(&self.backend, script).map_err(|e| UsageError(e.to_string()))?;
        let mut gw = Gateway::new(backend).with_merge_turns(self.backend.merge_turns);
        if let Some(path) = &self.transcripts {
            gw = gw.with_sink(Arc::new(TranscriptSink::open(path)?));
        }
        let config = AgentConfig {
            strategy: self.strategy,
            operation_space: space,
            k: self.k,
            group_size: self.group_size,
            markup: self.markup,
            ..Default::default()
        };
        let mut agent = Agent::new(config, gw);
        if let Some(dir) = &self.templates {
            let t = Templates::from_dir(dir).map_err(|e| UsageError(format!("templates: {e}")))?;
            agent = agent.with_templates(Arc::new(t));
        }
        Ok(agent)
    }
}

/// Safety flags for online runs.
#[derive(clap::Args, Debug, Default, Clone)]
pub struct SafetyArgs {
    /// Approve every action that no blocked pattern matches
    #[arg(long)]
    pub auto_approve: bool,
    /// Extra blocked patterns, comma separated (`url:<glob>` or text)
    #[arg(long)]
    pub blocked: Option<String>,
    /// CSS selectors removed before each observation under auto-approve
    #[arg(long)]
    pub overlays: Option<String>,
    /// Seconds to wait for a human decision before denying
    #[arg(long)]
    pub approval_timeout: Option<String>,
}

pub fn resolve_policy(src: &Sources, a: &SafetyArgs) -> Result<SafetyPolicy, UsageError> {
    let auto = src.or("auto_approve", a.auto_approve.then(|| "true".to_owned()), Flag(false))?.0;
    let mut blocked_patterns = default_blocked_patterns();
    for p in src.list("blocked_patterns", a.blocked.clone()) {
        let pat: BlockedPattern = p.parse().map_err(|e| UsageError(format!("blocked_patterns: {e}")))?;
        if !blocked_patterns.contains(&pat) {
            blocked_patterns.push(pat);
        }
    }
    let d = SafetyPolicy::default();
    Ok(SafetyPolicy {
        mode: if auto { PolicyMode::AutoApprove } else { PolicyMode::HumanGate },
        blocked_patterns,
        overlay_selectors: src.list("overlay_selectors", a.overlays.clone()),
        approval_timeout: src.secs("approval_timeout_secs", a.approval_timeout.clone(), d.approval_timeout)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(file: &str, env: &[(&str, &str)]) -> Sources {
        let map = parse_config_file(file, Path::new("test.conf")).unwrap();
        let env: BTreeMap<String, String> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Sources::new(map, move |k| env.get(k).cloned())
    }

    #[test]
    fn precedence_is_flag_env_file_default() {
        let s = sources("strategy = attributes\nk = 7\n", &[("WEBGROUND_STRATEGY", "choices")]);
        let pick = |flag: Option<&str>| s.or("strategy", flag.map(str::to_owned), GroundingStrategy::Annotation).unwrap();
        assert_eq!(pick(Some("oracle")), GroundingStrategy::Oracle);
        assert_eq!(pick(None), GroundingStrategy::Choices);
        assert_eq!(s.or("k", None, 50usize).unwrap(), 7);
        assert_eq!(s.or("group_size", None, 17usize).unwrap(), 17);
        assert_eq!(s.raw("k", None).unwrap().1, Origin::File);
    }

    #[test]
    fn config_file_errors() {
        let p = Path::new("c");
        assert!(parse_config_file("# comment\n\nk=3", p).is_ok());
        assert!(parse_config_file("group-size = 3", p).unwrap().contains_key("group_size"));
        assert!(parse_config_file("colour = red", p).unwrap_err().0.contains("unknown key"));
        assert!(parse_config_file("k", p).unwrap_err().0.contains("key = value"));
        assert!(parse_config_file("k=1\nk=2", p).unwrap_err().0.contains("twice"));
    }

    #[test]
    fn bad_values_name_their_source() {
        let s = sources("k = lots", &[]);
        let e = s.or("k", None, 50usize).unwrap_err();
        assert!(e.0.starts_with("k (File)"), "{e}");
    }

    #[test]
    fn defaults_match_the_published_constants() {
        let s = sources("", &[]);
        let a = AgentSettings::resolve(&s, &AgentArgs::default(), GroundingStrategy::Annotation, "out").unwrap();
        assert_eq!((a.k, a.group_size, a.jobs), (50, 17, 1));
        assert_eq!(a.markup.label_kind, LabelKind::Number);
        assert_eq!(a.markup.label_position, LabelPosition::BottomLeft);
        assert!(a.origins.is_empty());
    }

    #[test]
    fn markup_and_viewport_parse() {
        assert_eq!("number,bottom-left".parse::<Markup>().unwrap(), Markup(LabelKind::Number, LabelPosition::BottomLeft));
        assert_eq!("bottom-center,letter".parse::<Markup>().unwrap(), Markup(LabelKind::SingleLetter, LabelPosition::BottomCenter));
        assert!("circle".parse::<Markup>().is_err());
        assert_eq!("1280x800".parse::<Viewport>().unwrap(), Viewport(1280, 800));
        assert!("1280".parse::<Viewport>().is_err());
        assert!("0x5".parse::<Viewport>().is_err());
    }

    #[test]
    fn policy_flags() {
        let s = sources("blocked_patterns = url:*/checkout*, delete account\n", &[]);
        let p = resolve_policy(&s, &SafetyArgs::default()).unwrap();
        assert_eq!(p.mode, PolicyMode::HumanGate);
        assert_eq!(p.blocked_patterns.len(), default_blocked_patterns().len() + 2);
        let p = resolve_policy(&s, &SafetyArgs { auto_approve: true, overlays: Some(".a, .b".into()), ..Default::default() }).unwrap();
        assert_eq!(p.mode, PolicyMode::AutoApprove);
        assert_eq!(p.overlay_selectors, [".a", ".b"]);
        assert!(resolve_policy(&sources("blocked_patterns = url:[", &[]), &SafetyArgs::default()).is_err());
    }
}
