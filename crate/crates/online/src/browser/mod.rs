//! Browser remote control. Elements are addressed by their position among
//! all element nodes of the serialized document, which is the same index
//! `parse_document` assigns.

mod lite;
mod webdriver;

pub use lite::LiteBrowser;
pub use webdriver::{WebDriverBrowser, WebDriverFactory};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use webground_core::gateway::PngImage;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BrowserError {
    #[error("browser unreachable: {0}")]
    BrowserUnreachable(String),
    #[error("navigation failed: {0}")]
    NavigationFailed(String),
    #[error("page crashed: {0}")]
    PageCrashed(String),
    #[error("element {0} is no longer on the page")]
    StaleElement(String),
    #[error("no option labelled {0:?}")]
    OptionNotFound(String),
    #[error("execution failed: {0}")]
    ExecutionFailed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl ScrollDirection {
    pub fn from_value(v: Option<&str>) -> Self {
        match v.map(|s| s.trim().to_ascii_uppercase()) {
            Some(s) if s == "UP" => ScrollDirection::Up,
            _ => ScrollDirection::Down,
        }
    }
}

#[async_trait]
pub trait Browser: Send {
    async fn navigate(&mut self, url: &str) -> Result<(), BrowserError>;
    async fn current_url(&mut self) -> Result<String, BrowserError>;
    async fn title(&mut self) -> Result<String, BrowserError>;
    /// Full document markup with `data-wg-bbox` on every rendered element,
    /// in viewport CSS pixels.
    async fn serialize_dom(&mut self) -> Result<String, BrowserError>;
    async fn screenshot(&mut self) -> Result<PngImage, BrowserError>;
    async fn click(&mut self, index: usize) -> Result<(), BrowserError>;
    /// Clears the field, then types `value`.
    async fn type_text(&mut self, index: usize, value: &str) -> Result<(), BrowserError>;
    async fn select_option(&mut self, index: usize, label: &str) -> Result<(), BrowserError>;
    /// Enter on `index` if given, else on the focused element.
    async fn press_enter(&mut self, index: Option<usize>) -> Result<(), BrowserError>;
    async fn scroll(&mut self, dir: ScrollDirection) -> Result<(), BrowserError>;
    /// Removes nodes matching any CSS selector; returns how many.
    async fn dismiss(&mut self, selectors: &[String]) -> Result<usize, BrowserError>;
    async fn close(&mut self) -> Result<(), BrowserError> {
        Ok(())
    }
}

#[async_trait]
pub trait BrowserFactory: Send + Sync {
    async fn open(&self, viewport: (u32, u32)) -> Result<Box<dyn Browser>, BrowserError>;
}

/// Opens in-process [`LiteBrowser`]s.
#[derive(Clone, Copy, Debug, Default)]
pub struct LiteFactory;

#[async_trait]
impl BrowserFactory for LiteFactory {
    async fn open(&self, viewport: (u32, u32)) -> Result<Box<dyn Browser>, BrowserError> {
        Ok(Box::new(LiteBrowser::new(viewport)))
    }
}
