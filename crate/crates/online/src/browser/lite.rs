//! A small in-process browser for static sites: block/inline flow layout,
//! deterministic raster output, link navigation and GET form submission.
//! No scripts, no CSS beyond `display:none`.

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use async_trait::async_trait;
use image::{Rgb, RgbImage};
use reqwest::Url;
use scraper::{Html, Node as HtmlNode, Selector};
use webground_core::annotate::{encode_png, font, Rect};
use webground_core::dom::BBOX_ATTR;
use webground_core::gateway::PngImage;
use webground_core::text::normalize_ws;

use super::{Browser, BrowserError, ScrollDirection};

const CHAR_W: i32 = 8;
const LINE_H: i32 = 20;
const WIDGET_H: i32 = 24;
const GAP: i32 = 8;
const BODY_MARGIN: i32 = 8;

const HIDDEN_TAGS: &[&str] = &[
    "head", "script", "style", "title", "meta", "link", "base", "template", "noscript", "option", "optgroup", "datalist",
];
const BLOCK_TAGS: &[&str] = &[
    "html", "body", "div", "p", "form", "h1", "h2", "h3", "h4", "h5", "h6", "ul", "ol", "li", "section", "header",
    "footer", "nav", "main", "article", "aside", "fieldset", "table", "tr", "dl", "dt", "dd", "hr", "pre", "blockquote",
];
const VOID_TAGS: &[&str] = &["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr"];
const TEXT_INPUTS: &[&str] = &["text", "search", "email", "tel", "url", "number", "password", "date"];

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const LINK: Rgb<u8> = Rgb([0, 0, 238]);
const BORDER: Rgb<u8> = Rgb([118, 118, 118]);
const MUTED: Rgb<u8> = Rgb([117, 117, 117]);
const BUTTON_BG: Rgb<u8> = Rgb([239, 239, 239]);

#[derive(Clone, Debug)]
enum Kind {
    Document,
    Element { tag: String, attrs: Vec<(String, String)> },
    Text(String),
}

#[derive(Clone, Debug)]
struct Node {
    kind: Kind,
    parent: Option<usize>,
    children: Vec<usize>,
}

/// Mutable document tree; node 0 is the document.
#[derive(Clone, Debug)]
struct Dom {
    nodes: Vec<Node>,
}

impl Dom {
    fn parse(html: &str) -> Self {
        let doc = Html::parse_document(html);
        let mut dom = Dom {
            nodes: vec![Node { kind: Kind::Document, parent: None, children: vec![] }],
        };
        fn walk(dom: &mut Dom, parent: usize, node: ego_tree::NodeRef<'_, HtmlNode>) {
            for child in node.children() {
                let kind = match child.value() {
                    HtmlNode::Element(el) => Kind::Element {
                        tag: el.name().to_ascii_lowercase(),
                        attrs: el.attrs().map(|(k, v)| (k.to_ascii_lowercase(), v.to_owned())).collect(),
                    },
                    HtmlNode::Text(t) => Kind::Text(t.to_string()),
                    _ => continue,
                };
                let id = dom.push(parent, kind);
                if matches!(dom.nodes[id].kind, Kind::Element { .. }) {
                    walk(dom, id, child);
                }
            }
        }
        walk(&mut dom, 0, doc.tree.root());
        dom
    }

    fn push(&mut self, parent: usize, kind: Kind) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { kind, parent: Some(parent), children: vec![] });
        self.nodes[parent].children.push(id);
        id
    }

    fn tag(&self, i: usize) -> Option<&str> {
        match &self.nodes[i].kind {
            Kind::Element { tag, .. } => Some(tag),
            _ => None,
        }
    }

    fn attr(&self, i: usize, name: &str) -> Option<&str> {
        match &self.nodes[i].kind {
            Kind::Element { attrs, .. } => attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str()),
            _ => None,
        }
    }

    fn set_attr(&mut self, i: usize, name: &str, value: &str) {
        if let Kind::Element { attrs, .. } = &mut self.nodes[i].kind {
            match attrs.iter_mut().find(|(k, _)| k == name) {
                Some(slot) => slot.1 = value.to_owned(),
                None => attrs.push((name.to_owned(), value.to_owned())),
            }
        }
    }

    fn remove_attr(&mut self, i: usize, name: &str) {
        if let Kind::Element { attrs, .. } = &mut self.nodes[i].kind {
            attrs.retain(|(k, _)| k != name);
        }
    }

    fn detach(&mut self, i: usize) {
        if let Some(p) = self.nodes[i].parent.take() {
            self.nodes[p].children.retain(|&c| c != i);
        }
    }

    fn descendants(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.nodes[i].children.iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Attached element nodes in document order.
    fn elements(&self) -> Vec<usize> {
        self.descendants(0).into_iter().filter(|&n| self.tag(n).is_some()).collect()
    }

    fn ancestors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(i), move |&n| self.nodes[n].parent)
    }

    fn text(&self, i: usize) -> String {
        let raw: Vec<&str> = self
            .descendants(i)
            .into_iter()
            .filter_map(|n| match &self.nodes[n].kind {
                Kind::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect();
        normalize_ws(&raw.join(" "))
    }

    fn find_tag(&self, tag: &str) -> Option<usize> {
        self.elements().into_iter().find(|&n| self.tag(n) == Some(tag))
    }

    fn serialize(&self, boxes: &HashMap<usize, Rect>, scroll_y: i32) -> String {
        let mut out = String::from("<!DOCTYPE html>");
        for &c in &self.nodes[0].children {
            self.write(c, boxes, scroll_y, &mut out);
        }
        out
    }

    fn write(&self, i: usize, boxes: &HashMap<usize, Rect>, scroll_y: i32, out: &mut String) {
        match &self.nodes[i].kind {
            Kind::Document => {}
            Kind::Text(t) => {
                let raw = self.nodes[i].parent.and_then(|p| self.tag(p)).is_some_and(|t| t == "script" || t == "style");
                if raw {
                    out.push_str(t);
                } else {
                    escape_into(t, false, out);
                }
            }
            Kind::Element { tag, attrs } => {
                out.push('<');
                out.push_str(tag);
                for (k, v) in attrs.iter().filter(|(k, _)| k != BBOX_ATTR) {
                    out.push(' ');
                    out.push_str(k);
                    out.push_str("=\"");
                    escape_into(v, true, out);
                    out.push('"');
                }
                if let Some(r) = boxes.get(&i) {
                    out.push_str(&format!(" {BBOX_ATTR}=\"{},{},{},{}\"", r.x, r.y - scroll_y, r.w, r.h));
                }
                out.push('>');
                if VOID_TAGS.contains(&tag.as_str()) {
                    return;
                }
                for &c in &self.nodes[i].children {
                    self.write(c, boxes, scroll_y, out);
                }
                out.push_str("</");
                out.push_str(tag);
                out.push('>');
            }
        }
    }

    fn is_hidden(&self, i: usize) -> bool {
        let Some(tag) = self.tag(i) else { return false };
        HIDDEN_TAGS.contains(&tag)
            || self.attr(i, "hidden").is_some()
            || (tag == "input" && self.input_type(i) == "hidden")
            || self.attr(i, "style").is_some_and(|s| {
                let s = s.replace(' ', "").to_ascii_lowercase();
                s.contains("display:none") || s.contains("visibility:hidden")
            })
    }

    fn input_type(&self, i: usize) -> String {
        self.attr(i, "type").unwrap_or("text").trim().to_ascii_lowercase()
    }

    fn is_text_field(&self, i: usize) -> bool {
        match self.tag(i) {
            Some("textarea") => true,
            Some("input") => TEXT_INPUTS.contains(&self.input_type(i).as_str()),
            _ => false,
        }
    }

    fn options(&self, select: usize) -> Vec<usize> {
        self.descendants(select).into_iter().filter(|&n| self.tag(n) == Some("option")).collect()
    }

    fn option_label(&self, opt: usize) -> String {
        self.attr(opt, "label").map(normalize_ws).unwrap_or_else(|| self.text(opt))
    }

    fn selected_option(&self, select: usize) -> Option<usize> {
        let opts = self.options(select);
        opts.iter().copied().find(|&o| self.attr(o, "selected").is_some()).or_else(|| opts.first().copied())
    }

    fn field_value(&self, i: usize) -> String {
        match self.tag(i) {
            Some("textarea") => self.text(i),
            _ => self.attr(i, "value").unwrap_or("").to_owned(),
        }
    }

    fn form_of(&self, i: usize) -> Option<usize> {
        if let Some(id) = self.attr(i, "form") {
            return self.elements().into_iter().find(|&n| self.tag(n) == Some("form") && self.attr(n, "id") == Some(id));
        }
        self.ancestors(i).find(|&n| self.tag(n) == Some("form"))
    }
}

fn escape_into(s: &str, attr: bool, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' if !attr => out.push_str("&lt;"),
            '>' if !attr => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            c => out.push(c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Paint {
    Word { link: bool },
    TextField,
    Check { checked: bool },
    Button,
    Select,
}

#[derive(Debug, Default)]
struct Layout {
    boxes: HashMap<usize, Rect>,
    paints: Vec<(Rect, Paint, String)>,
    height: i32,
}

struct Flow {
    x0: i32,
    width: i32,
    x: i32,
    y: i32,
    line_h: i32,
}

impl Flow {
    fn newline(&mut self) {
        if self.x > self.x0 {
            self.y += self.line_h;
        }
        self.x = self.x0;
        self.line_h = LINE_H;
    }

    fn place(&mut self, w: i32, h: i32) -> Rect {
        if self.x > self.x0 && self.x + w > self.x0 + self.width {
            self.newline();
        }
        let r = Rect::new(self.x, self.y, w, h);
        self.x += w + GAP;
        self.line_h = self.line_h.max(h);
        r
    }
}

fn union(a: Option<Rect>, b: Rect) -> Rect {
    match a {
        None => b,
        Some(a) => {
            let (x, y) = (a.x.min(b.x), a.y.min(b.y));
            Rect::new(x, y, a.right().max(b.right()) - x, a.bottom().max(b.bottom()) - y)
        }
    }
}

fn text_w(s: &str) -> i32 {
    s.chars().count() as i32 * CHAR_W
}

fn layout(dom: &Dom, viewport_w: u32) -> Layout {
    let mut out = Layout::default();
    let mut flow = Flow {
        x0: 0,
        width: viewport_w as i32,
        x: 0,
        y: 0,
        line_h: LINE_H,
    };
    for &c in &dom.nodes[0].children {
        layout_node(dom, c, &mut flow, false, &mut out);
    }
    flow.newline();
    out.height = flow.y;
    out
}

fn layout_node(dom: &Dom, i: usize, flow: &mut Flow, in_link: bool, out: &mut Layout) -> Option<Rect> {
    let tag = match &dom.nodes[i].kind {
        Kind::Text(t) => {
            let mut acc = None;
            for word in t.split_whitespace() {
                let r = flow.place(text_w(word), LINE_H);
                out.paints.push((r, Paint::Word { link: in_link }, word.to_owned()));
                acc = Some(union(acc, r));
            }
            return acc;
        }
        Kind::Document => return None,
        Kind::Element { tag, .. } => tag.as_str(),
    };
    if dom.is_hidden(i) {
        return None;
    }
    if tag == "br" {
        flow.newline();
        return None;
    }
    if let Some((w, h, paint, label)) = widget(dom, i) {
        if w <= 0 || h <= 0 {
            return None;
        }
        let r = flow.place(w, h);
        out.paints.push((r, paint, label));
        for d in dom.descendants(i) {
            if dom.tag(d).is_some() && !dom.is_hidden(d) {
                out.boxes.insert(d, r);
            }
        }
        out.boxes.insert(i, r);
        return Some(r);
    }

    let block = BLOCK_TAGS.contains(&tag);
    let saved = (flow.x0, flow.width);
    if block {
        flow.newline();
        if tag == "body" {
            flow.x0 += BODY_MARGIN;
            flow.width -= 2 * BODY_MARGIN;
            flow.x = flow.x0;
            flow.y += BODY_MARGIN;
        } else if tag == "li" || tag == "dd" {
            flow.x0 += 2 * CHAR_W;
            flow.width -= 2 * CHAR_W;
            flow.x = flow.x0;
        }
    }
    let start_y = flow.y;
    let link = in_link || (tag == "a" && dom.attr(i, "href").is_some());
    let mut acc = None;
    for &c in &dom.nodes[i].children {
        if let Some(r) = layout_node(dom, c, flow, link, out) {
            acc = Some(union(acc, r));
        }
    }
    let rect = if block {
        flow.newline();
        let r = Rect::new(flow.x0, start_y, flow.width, flow.y - start_y);
        (flow.x0, flow.width) = saved;
        flow.x = flow.x0;
        if matches!(tag, "p" | "h1" | "h2" | "h3" | "form" | "ul" | "ol" | "table") {
            flow.y += GAP;
        }
        (r.h > 0).then_some(r)
    } else {
        acc
    };
    if let Some(r) = rect {
        out.boxes.insert(i, r);
    }
    rect
}

/// Size and paint of replaced/atomic elements.
fn widget(dom: &Dom, i: usize) -> Option<(i32, i32, Paint, String)> {
    match dom.tag(i)? {
        "input" => {
            let ty = dom.input_type(i);
            Some(match ty.as_str() {
                "checkbox" | "radio" => (16, 16, Paint::Check { checked: dom.attr(i, "checked").is_some() }, String::new()),
                "submit" | "button" | "reset" => {
                    let label = dom.attr(i, "value").map(normalize_ws).unwrap_or_else(|| if ty == "reset" { "Reset".into() } else { "Submit".into() });
                    (text_w(&label) + 2 * GAP, WIDGET_H, Paint::Button, label)
                }
                "image" => (WIDGET_H, WIDGET_H, Paint::Button, String::new()),
                "file" => (20 * CHAR_W, WIDGET_H, Paint::Button, "Choose file".into()),
                _ => {
                    let shown = dom.attr(i, "value").filter(|v| !v.is_empty()).or(dom.attr(i, "placeholder")).unwrap_or("");
                    (20 * CHAR_W + GAP, WIDGET_H, Paint::TextField, shown.to_owned())
                }
            })
        }
        "textarea" => Some((25 * CHAR_W, 2 * WIDGET_H, Paint::TextField, dom.text(i))),
        "button" => {
            let label = dom.text(i);
            Some((text_w(&label) + 2 * GAP, WIDGET_H, Paint::Button, label))
        }
        "select" => {
            let widest = dom.options(i).iter().map(|&o| text_w(&dom.option_label(o))).max().unwrap_or(0);
            let shown = dom.selected_option(i).map(|o| dom.option_label(o)).unwrap_or_default();
            Some((widest + 4 * CHAR_W, WIDGET_H, Paint::Select, shown))
        }
        "img" => {
            let dim = |k| dom.attr(i, k).and_then(|v| v.trim().trim_end_matches("px").parse::<i32>().ok()).unwrap_or(0);
            Some((dim("width"), dim("height"), Paint::Button, dom.attr(i, "alt").unwrap_or("").to_owned()))
        }
        _ => None,
    }
}

fn fill(img: &mut RgbImage, r: Rect, c: Rgb<u8>) {
    let bounds = Rect::new(0, 0, img.width() as i32, img.height() as i32);
    if let Some(r) = r.intersection(&bounds) {
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                img.put_pixel(x as u32, y as u32, c);
            }
        }
    }
}

fn border(img: &mut RgbImage, r: Rect, c: Rgb<u8>) {
    fill(img, Rect::new(r.x, r.y, r.w, 1), c);
    fill(img, Rect::new(r.x, r.bottom() - 1, r.w, 1), c);
    fill(img, Rect::new(r.x, r.y, 1, r.h), c);
    fill(img, Rect::new(r.right() - 1, r.y, 1, r.h), c);
}

fn paint(img: &mut RgbImage, r: Rect, kind: Paint, label: &str) {
    let ty = r.y + (r.h.min(WIDGET_H) - 8) / 2;
    match kind {
        Paint::Word { link } => {
            let c = if link { LINK } else { BLACK };
            font::draw_text(img, r.x, ty, label, c);
            if link {
                fill(img, Rect::new(r.x, ty + 9, r.w, 1), c);
            }
        }
        Paint::TextField => {
            fill(img, r, WHITE);
            border(img, r, BORDER);
            font::draw_text(img, r.x + 4, ty, label, BLACK);
        }
        Paint::Check { checked } => {
            border(img, r, BORDER);
            if checked {
                fill(img, Rect::new(r.x + 4, r.y + 4, r.w - 8, r.h - 8), BLACK);
            }
        }
        Paint::Button => {
            fill(img, r, BUTTON_BG);
            border(img, r, BORDER);
            font::draw_text(img, r.x + GAP, ty, label, BLACK);
        }
        Paint::Select => {
            fill(img, r, WHITE);
            border(img, r, BORDER);
            font::draw_text(img, r.x + 4, ty, label, BLACK);
            font::draw_text(img, r.right() - 2 * CHAR_W, ty, "v", MUTED);
        }
    }
}

#[derive(Debug)]
struct Page {
    url: Url,
    dom: Dom,
    scroll_y: i32,
    focus: Option<usize>,
}

/// Deterministic static-page browser. `file:` and `http(s):` URLs only.
pub struct LiteBrowser {
    viewport: (u32, u32),
    client: reqwest::Client,
    page: Option<Page>,
}

impl LiteBrowser {
    pub fn new(viewport: (u32, u32)) -> Self {
        Self {
            viewport: (viewport.0.max(1), viewport.1.max(1)),
            client: reqwest::Client::builder().timeout(Duration::from_secs(10)).build().expect("tls backend available"),
            page: None,
        }
    }

    fn page(&self) -> Result<&Page, BrowserError> {
        self.page.as_ref().ok_or_else(|| BrowserError::PageCrashed("no page loaded".into()))
    }

    fn page_mut(&mut self) -> Result<&mut Page, BrowserError> {
        self.page.as_mut().ok_or_else(|| BrowserError::PageCrashed("no page loaded".into()))
    }

    fn node(&self, index: usize) -> Result<usize, BrowserError> {
        self.page()?
            .dom
            .elements()
            .get(index)
            .copied()
            .ok_or_else(|| BrowserError::StaleElement(format!("#{index}")))
    }

    fn layout(&self) -> Result<Layout, BrowserError> {
        Ok(layout(&self.page()?.dom, self.viewport.0))
    }

    async fn load(&mut self, url: Url) -> Result<(), BrowserError> {
        let failed = |why: String| BrowserError::NavigationFailed(format!("{url}: {why}"));
        let html = match url.scheme() {
            "http" | "https" => {
                let resp = self.client.get(url.clone()).send().await.map_err(|e| failed(e.to_string()))?;
                if !resp.status().is_success() {
                    return Err(failed(format!("status {}", resp.status())));
                }
                resp.text().await.map_err(|e| failed(e.to_string()))?
            }
            "file" => {
                let path = url.to_file_path().map_err(|_| failed("not a local path".into()))?;
                tokio::fs::read_to_string(&path).await.map_err(|e| failed(e.to_string()))?
            }
            other => return Err(failed(format!("unsupported scheme {other}"))),
        };
        self.page = Some(Page {
            url,
            dom: Dom::parse(&html),
            scroll_y: 0,
            focus: None,
        });
        Ok(())
    }

    fn resolve(&self, href: &str) -> Result<Url, BrowserError> {
        let page = self.page()?;
        page.url.join(href.trim()).map_err(|e| BrowserError::NavigationFailed(format!("{href}: {e}")))
    }

    /// GET submission; POST forms are refused.
    fn submission(&self, form: usize, submitter: Option<usize>) -> Result<Url, BrowserError> {
        let page = self.page()?;
        let dom = &page.dom;
        if dom.attr(form, "method").is_some_and(|m| !m.eq_ignore_ascii_case("get")) {
            return Err(BrowserError::ExecutionFailed("only GET forms are supported".into()));
        }
        let mut url = match dom.attr(form, "action").filter(|a| !a.trim().is_empty()) {
            Some(a) => self.resolve(a)?,
            None => page.url.clone(),
        };
        let mut pairs = Vec::new();
        for n in dom.descendants(form) {
            let (Some(tag), Some(name)) = (dom.tag(n), dom.attr(n, "name")) else { continue };
            if name.is_empty() || dom.attr(n, "disabled").is_some() {
                continue;
            }
            let value = match tag {
                "input" => match dom.input_type(n).as_str() {
                    "checkbox" | "radio" if dom.attr(n, "checked").is_some() => Some(dom.attr(n, "value").unwrap_or("on").to_owned()),
                    "checkbox" | "radio" | "file" => None,
                    "submit" | "button" | "image" | "reset" => (Some(n) == submitter).then(|| dom.field_value(n)),
                    _ => Some(dom.field_value(n)),
                },
                "textarea" => Some(dom.field_value(n)),
                "select" => dom
                    .selected_option(n)
                    .map(|o| dom.attr(o, "value").map(str::to_owned).unwrap_or_else(|| dom.text(o))),
                "button" => (Some(n) == submitter).then(|| dom.field_value(n)),
                _ => None,
            };
            if let Some(v) = value {
                pairs.push((name.to_owned(), v));
            }
        }
        url.set_query(None);
        url.set_fragment(None);
        if !pairs.is_empty() {
            url.query_pairs_mut().extend_pairs(pairs);
        }
        Ok(url)
    }

    /// DOM side of a click: returns a URL to load, if any.
    fn activate(&mut self, node: usize) -> Result<Option<Url>, BrowserError> {
        let chain: Vec<usize> = self.page()?.dom.ancestors(node).collect();
        for n in chain {
            let dom = &self.page()?.dom;
            let Some(tag) = dom.tag(n) else { continue };
            if dom.attr(n, "disabled").is_some() {
                return Ok(None);
            }
            match tag {
                "a" => {
                    if let Some(href) = dom.attr(n, "href").map(str::to_owned) {
                        self.page_mut()?.focus = Some(n);
                        return self.resolve(&href).map(Some);
                    }
                }
                "button" => {
                    let ty = dom.attr(n, "type").unwrap_or("submit").to_ascii_lowercase();
                    self.page_mut()?.focus = Some(n);
                    return match (ty.as_str(), self.page()?.dom.form_of(n)) {
                        ("submit", Some(form)) => self.submission(form, Some(n)).map(Some),
                        _ => Ok(None),
                    };
                }
                "input" => {
                    let ty = dom.input_type(n);
                    let form = dom.form_of(n);
                    let page = self.page_mut()?;
                    page.focus = Some(n);
                    match ty.as_str() {
                        "submit" | "image" => {
                            return match form {
                                Some(f) => self.submission(f, Some(n)).map(Some),
                                None => Ok(None),
                            }
                        }
                        "checkbox" => {
                            if page.dom.attr(n, "checked").is_some() {
                                page.dom.remove_attr(n, "checked");
                            } else {
                                page.dom.set_attr(n, "checked", "");
                            }
                        }
                        "radio" => {
                            let name = page.dom.attr(n, "name").map(str::to_owned);
                            for other in page.dom.elements() {
                                if other != n && page.dom.input_type(other) == "radio" && page.dom.tag(other) == Some("input") && page.dom.attr(other, "name").map(str::to_owned) == name {
                                    page.dom.remove_attr(other, "checked");
                                }
                            }
                            page.dom.set_attr(n, "checked", "");
                        }
                        _ => {}
                    }
                    return Ok(None);
                }
                "select" | "textarea" => {
                    self.page_mut()?.focus = Some(n);
                    return Ok(None);
                }
                "label" => {
                    let target = match dom.attr(n, "for") {
                        Some(id) => dom.elements().into_iter().find(|&e| dom.attr(e, "id") == Some(id)),
                        None => dom.descendants(n).into_iter().find(|&d| matches!(dom.tag(d), Some("input" | "select" | "textarea"))),
                    };
                    return match target {
                        Some(t) if t != node => self.activate(t),
                        _ => Ok(None),
                    };
                }
                _ => {}
            }
        }
        Ok(None)
    }
}

#[async_trait]
impl Browser for LiteBrowser {
    async fn navigate(&mut self, url: &str) -> Result<(), BrowserError> {
        let parsed = Url::parse(url.trim()).map_err(|e| BrowserError::NavigationFailed(format!("{url}: {e}")))?;
        self.load(parsed).await
    }

    async fn current_url(&mut self) -> Result<String, BrowserError> {
        Ok(self.page.as_ref().map_or_else(|| "about:blank".to_owned(), |p| p.url.to_string()))
    }

    async fn title(&mut self) -> Result<String, BrowserError> {
        let dom = &self.page()?.dom;
        Ok(dom.find_tag("title").map(|t| dom.text(t)).unwrap_or_default())
    }

    async fn serialize_dom(&mut self) -> Result<String, BrowserError> {
        let l = self.layout()?;
        let page = self.page()?;
        Ok(page.dom.serialize(&l.boxes, page.scroll_y))
    }

    async fn screenshot(&mut self) -> Result<PngImage, BrowserError> {
        let l = self.layout()?;
        let scroll = self.page()?.scroll_y;
        let (w, h) = self.viewport;
        let mut img = RgbImage::from_pixel(w, h, WHITE);
        let view = Rect::new(0, 0, w as i32, h as i32);
        for (r, kind, label) in &l.paints {
            let r = Rect::new(r.x, r.y - scroll, r.w, r.h);
            if r.intersects(&view) {
                paint(&mut img, r, *kind, label);
            }
        }
        let png = encode_png(&img).map_err(|e| BrowserError::PageCrashed(e.to_string()))?;
        Ok(PngImage::new(png))
    }

    async fn click(&mut self, index: usize) -> Result<(), BrowserError> {
        let node = self.node(index)?;
        if let Some(url) = self.activate(node)? {
            self.load(url).await?;
        }
        Ok(())
    }

    async fn type_text(&mut self, index: usize, value: &str) -> Result<(), BrowserError> {
        let node = self.node(index)?;
        let page = self.page_mut()?;
        let dom = &mut page.dom;
        if !dom.is_text_field(node) {
            let tag = dom.tag(node).unwrap_or("?").to_owned();
            return Err(BrowserError::ExecutionFailed(format!("<{tag}> is not editable")));
        }
        if dom.attr(node, "disabled").is_some() || dom.attr(node, "readonly").is_some() {
            return Err(BrowserError::ExecutionFailed("field is read-only".into()));
        }
        if dom.tag(node) == Some("textarea") {
            for c in std::mem::take(&mut dom.nodes[node].children) {
                dom.nodes[c].parent = None;
            }
            dom.push(node, Kind::Text(value.to_owned()));
        } else {
            dom.set_attr(node, "value", value);
        }
        page.focus = Some(node);
        Ok(())
    }

    async fn select_option(&mut self, index: usize, label: &str) -> Result<(), BrowserError> {
        let node = self.node(index)?;
        let page = self.page_mut()?;
        let dom = &mut page.dom;
        if dom.tag(node) != Some("select") {
            let tag = dom.tag(node).unwrap_or("?").to_owned();
            return Err(BrowserError::ExecutionFailed(format!("<{tag}> is not a select")));
        }
        let want = normalize_ws(label);
        let opts = dom.options(node);
        let hit = opts
            .iter()
            .copied()
            .find(|&o| dom.option_label(o) == want)
            .or_else(|| opts.iter().copied().find(|&o| dom.option_label(o).eq_ignore_ascii_case(&want)))
            .ok_or_else(|| BrowserError::OptionNotFound(label.to_owned()))?;
        for o in opts {
            dom.remove_attr(o, "selected");
        }
        dom.set_attr(hit, "selected", "");
        page.focus = Some(node);
        Ok(())
    }

    async fn press_enter(&mut self, index: Option<usize>) -> Result<(), BrowserError> {
        if let Some(i) = index {
            let node = self.node(i)?;
            self.page_mut()?.focus = Some(node);
        }
        let Some(focus) = self.page()?.focus else { return Ok(()) };
        let dom = &self.page()?.dom;
        let next = match dom.tag(focus) {
            Some("input") if dom.is_text_field(focus) => match dom.form_of(focus) {
                Some(form) => Some(self.submission(form, None)?),
                None => None,
            },
            Some("a" | "button") => self.activate(focus)?,
            Some("input") if matches!(dom.input_type(focus).as_str(), "submit" | "image") => self.activate(focus)?,
            _ => None,
        };
        if let Some(url) = next {
            self.load(url).await?;
        }
        Ok(())
    }

    async fn scroll(&mut self, dir: ScrollDirection) -> Result<(), BrowserError> {
        let height = self.layout()?.height;
        let vh = self.viewport.1 as i32;
        let page = self.page_mut()?;
        let max = (height - vh).max(0);
        let delta = if dir == ScrollDirection::Down { vh } else { -vh };
        page.scroll_y = (page.scroll_y + delta).clamp(0, max);
        Ok(())
    }

    async fn dismiss(&mut self, selectors: &[String]) -> Result<usize, BrowserError> {
        if selectors.is_empty() || self.page.is_none() {
            return Ok(0);
        }
        let markup = self.page()?.dom.serialize(&HashMap::new(), 0);
        let doc = Html::parse_document(&markup);
        let order: HashMap<_, usize> = doc
            .tree
            .root()
            .descendants()
            .filter(|n| n.value().is_element())
            .enumerate()
            .map(|(i, n)| (n.id(), i))
            .collect();
        let mut hits = HashSet::new();
        for s in selectors {
            let sel = Selector::parse(s).map_err(|e| BrowserError::ExecutionFailed(format!("bad selector {s:?}: {e}")))?;
            hits.extend(doc.select(&sel).filter_map(|el| order.get(&el.id()).copied()));
        }
        let page = self.page_mut()?;
        let nodes = page.dom.elements();
        let targets: Vec<usize> = hits.iter().filter_map(|&i| nodes.get(i).copied()).collect();
        for &t in &targets {
            page.dom.detach(t);
        }
        if page.focus.is_some_and(|f| page.dom.ancestors(f).last() != Some(0)) {
            page.focus = None;
        }
        Ok(targets.len())
    }
}
