//! W3C WebDriver client. Works against chromedriver, geckodriver or any
//! compliant remote end.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use reqwest::Method;
use serde_json::{json, Value};
use webground_core::gateway::PngImage;

use super::{Browser, BrowserError, BrowserFactory, ScrollDirection};

const ELEMENT_KEY: &str = "element-6066-11e4-a52f-4a4b4e47ed38";
const ENTER_KEY: &str = "\u{E007}";

/// Tags every element with its document-order index and viewport bbox, then
/// returns the markup. Live form state is copied into attributes so the
/// serialization reflects what the user sees.
const SERIALIZE_JS: &str = r#"
const all = document.getElementsByTagName('*');
for (let i = 0; i < all.length; i++) {
  const e = all[i];
  e.setAttribute('data-wg-idx', String(i));
  const r = e.getBoundingClientRect();
  const cs = window.getComputedStyle(e);
  if (r.width > 0 && r.height > 0 && cs.visibility !== 'hidden' && cs.display !== 'none') {
    e.setAttribute('data-wg-bbox', [r.x, r.y, r.width, r.height].map(v => Math.round(v)).join(','));
  } else {
    e.removeAttribute('data-wg-bbox');
  }
  if (e.tagName === 'INPUT') {
    if (e.type === 'checkbox' || e.type === 'radio') { e.checked ? e.setAttribute('checked', '') : e.removeAttribute('checked'); }
    else { e.setAttribute('value', e.value); }
  }
  if (e.tagName === 'OPTION') { e.selected ? e.setAttribute('selected', '') : e.removeAttribute('selected'); }
}
return '<!DOCTYPE html>' + document.documentElement.outerHTML;
"#;

const SELECT_JS: &str = r#"
const [sel, label] = arguments;
const norm = s => s.replace(/\s+/g, ' ').trim();
const opts = Array.from(sel.options || []);
const hit = opts.find(o => norm(o.label || o.text) === norm(label))
  || opts.find(o => norm(o.label || o.text).toLowerCase() === norm(label).toLowerCase());
if (!hit) return false;
sel.value = hit.value;
hit.selected = true;
sel.dispatchEvent(new Event('input', { bubbles: true }));
sel.dispatchEvent(new Event('change', { bubbles: true }));
return true;
"#;

const DISMISS_JS: &str = r#"
let n = 0;
for (const s of arguments[0]) {
  for (const e of Array.from(document.querySelectorAll(s))) { e.remove(); n++; }
}
return n;
"#;

const SCROLL_JS: &str = "window.scrollBy(0, arguments[0] * window.innerHeight);";

pub struct WebDriverBrowser {
    client: reqwest::Client,
    base: String,
}

impl WebDriverBrowser {
    /// Starts a new remote session sized to `viewport`.
    pub async fn connect(endpoint: &str, viewport: (u32, u32)) -> Result<Self, BrowserError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BrowserError::BrowserUnreachable(e.to_string()))?;
        let endpoint = endpoint.trim_end_matches('/').to_owned();
        let caps = json!({
            "capabilities": {
                "alwaysMatch": {
                    "goog:chromeOptions": {
                        "args": ["--headless=new", format!("--window-size={},{}", viewport.0, viewport.1), "--force-device-scale-factor=1"]
                    }
                }
            }
        });
        let value = send(&client, Method::POST, &format!("{endpoint}/session"), Some(caps)).await?;
        let id = value
            .get("sessionId")
            .and_then(Value::as_str)
            .ok_or_else(|| BrowserError::BrowserUnreachable("new session response lacks sessionId".into()))?;
        let browser = Self {
            base: format!("{endpoint}/session/{id}"),
            client,
        };
        browser
            .cmd(Method::POST, "/window/rect", json!({ "width": viewport.0, "height": viewport.1 }))
            .await?;
        Ok(browser)
    }

    async fn cmd(&self, method: Method, path: &str, body: Value) -> Result<Value, BrowserError> {
        let body = (method != Method::GET && method != Method::DELETE).then_some(body);
        send(&self.client, method, &format!("{}{path}", self.base), body).await
    }

    async fn script(&self, script: &str, args: Value) -> Result<Value, BrowserError> {
        self.cmd(Method::POST, "/execute/sync", json!({ "script": script, "args": args })).await
    }

    async fn element(&self, index: usize) -> Result<String, BrowserError> {
        let found = self
            .cmd(Method::POST, "/element", json!({ "using": "css selector", "value": format!("[data-wg-idx=\"{index}\"]") }))
            .await
            .map_err(|e| match e {
                BrowserError::StaleElement(_) => BrowserError::StaleElement(format!("#{index}")),
                other => other,
            })?;
        element_ref(&found).ok_or_else(|| BrowserError::ExecutionFailed("malformed element reference".into()))
    }
}

fn element_ref(v: &Value) -> Option<String> {
    v.get(ELEMENT_KEY).and_then(Value::as_str).map(str::to_owned)
}

async fn send(client: &reqwest::Client, method: Method, url: &str, body: Option<Value>) -> Result<Value, BrowserError> {
    let mut req = client.request(method, url);
    if let Some(b) = body {
        req = req.json(&b);
    }
    let resp = req.send().await.map_err(|e| BrowserError::BrowserUnreachable(e.to_string()))?;
    let status = resp.status();
    let parsed: Value = resp
        .json()
        .await
        .map_err(|e| BrowserError::ExecutionFailed(format!("status {status}: {e}")))?;
    let value = parsed.get("value").cloned().unwrap_or(Value::Null);
    if let Some(code) = value.get("error").and_then(Value::as_str) {
        let msg = value.get("message").and_then(Value::as_str).unwrap_or("").to_owned();
        return Err(match code {
            "no such element" | "stale element reference" => BrowserError::StaleElement(msg),
            "session not created" | "invalid session id" => BrowserError::BrowserUnreachable(format!("{code}: {msg}")),
            _ => BrowserError::ExecutionFailed(format!("{code}: {msg}")),
        });
    }
    if !status.is_success() {
        return Err(BrowserError::ExecutionFailed(format!("status {status}")));
    }
    Ok(value)
}

fn as_string(v: Value, what: &str) -> Result<String, BrowserError> {
    match v {
        Value::String(s) => Ok(s),
        other => Err(BrowserError::ExecutionFailed(format!("{what}: expected a string, got {other}"))),
    }
}

#[async_trait]
impl Browser for WebDriverBrowser {
    async fn navigate(&mut self, url: &str) -> Result<(), BrowserError> {
        match self.cmd(Method::POST, "/url", json!({ "url": url })).await {
            Ok(_) => Ok(()),
            Err(BrowserError::ExecutionFailed(why)) => Err(BrowserError::NavigationFailed(format!("{url}: {why}"))),
            Err(e) => Err(e),
        }
    }

    async fn current_url(&mut self) -> Result<String, BrowserError> {
        as_string(self.cmd(Method::GET, "/url", Value::Null).await?, "url")
    }

    async fn title(&mut self) -> Result<String, BrowserError> {
        as_string(self.cmd(Method::GET, "/title", Value::Null).await?, "title")
    }

    async fn serialize_dom(&mut self) -> Result<String, BrowserError> {
        as_string(self.script(SERIALIZE_JS, json!([])).await?, "serialization")
    }

    async fn screenshot(&mut self) -> Result<PngImage, BrowserError> {
        let b64 = as_string(self.cmd(Method::GET, "/screenshot", Value::Null).await?, "screenshot")?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64.trim())
            .map_err(|e| BrowserError::PageCrashed(format!("screenshot is not base64: {e}")))?;
        Ok(PngImage::new(bytes))
    }

    async fn click(&mut self, index: usize) -> Result<(), BrowserError> {
        let el = self.element(index).await?;
        self.cmd(Method::POST, &format!("/element/{el}/click"), json!({})).await.map(drop)
    }

    async fn type_text(&mut self, index: usize, value: &str) -> Result<(), BrowserError> {
        let el = self.element(index).await?;
        self.cmd(Method::POST, &format!("/element/{el}/clear"), json!({})).await?;
        self.cmd(Method::POST, &format!("/element/{el}/value"), json!({ "text": value })).await.map(drop)
    }

    async fn select_option(&mut self, index: usize, label: &str) -> Result<(), BrowserError> {
        let el = self.element(index).await?;
        match self.script(SELECT_JS, json!([{ ELEMENT_KEY: el }, label])).await? {
            Value::Bool(true) => Ok(()),
            _ => Err(BrowserError::OptionNotFound(label.to_owned())),
        }
    }

    async fn press_enter(&mut self, index: Option<usize>) -> Result<(), BrowserError> {
        let el = match index {
            Some(i) => self.element(i).await?,
            None => {
                let active = self.cmd(Method::GET, "/element/active", Value::Null).await?;
                element_ref(&active).ok_or_else(|| BrowserError::ExecutionFailed("no focused element".into()))?
            }
        };
        self.cmd(Method::POST, &format!("/element/{el}/value"), json!({ "text": ENTER_KEY })).await.map(drop)
    }

    async fn scroll(&mut self, dir: ScrollDirection) -> Result<(), BrowserError> {
        let sign = if dir == ScrollDirection::Down { 1 } else { -1 };
        self.script(SCROLL_JS, json!([sign])).await.map(drop)
    }

    async fn dismiss(&mut self, selectors: &[String]) -> Result<usize, BrowserError> {
        if selectors.is_empty() {
            return Ok(0);
        }
        let n = self.script(DISMISS_JS, json!([selectors])).await?;
        Ok(n.as_u64().unwrap_or(0) as usize)
    }

    async fn close(&mut self) -> Result<(), BrowserError> {
        self.cmd(Method::DELETE, "", Value::Null).await.map(drop)
    }
}

/// Opens one remote session per task against `endpoint`.
#[derive(Clone, Debug)]
pub struct WebDriverFactory {
    pub endpoint: String,
}

#[async_trait]
impl BrowserFactory for WebDriverFactory {
    async fn open(&self, viewport: (u32, u32)) -> Result<Box<dyn Browser>, BrowserError> {
        Ok(Box::new(WebDriverBrowser::connect(&self.endpoint, viewport).await?))
    }
}
