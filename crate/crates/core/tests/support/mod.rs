//! Generators, brute-force oracles and per-case checks shared by the property
//! tests and the acceptance report.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use webground_core::agent::*;
use webground_core::annotate::{annotate, encode_png, LabelKind, LabelPosition, MarkupConfig, Rect};
use webground_core::dom::{parse_document, BBox, Element, ElementId};
use webground_core::gateway::{Gateway, PngImage, Script, ScriptedBackend, TranscriptSink};
use webground_core::offline::{macro_aggregate, operation_f1, StepScore};
use webground_core::ranking::{choice_letter, choice_letters, group_candidates, Candidate, CandidateSet};

pub type CaseResult = Result<(), TestCaseError>;

/// Runs `check` on `cases` inputs from a fixed-seed generator; the error
/// carries the shrunk counterexample.
pub fn run_cases<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> CaseResult) -> Result<u32, String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, check).map(|()| cases).map_err(|e| e.to_string())
}

// operation F1

const VOCAB: &[&str] = &["new", "York", "york", "city", "SJD", "queen", "large", "truck", "click", "type"];

fn op_name(op: Operation) -> &'static str {
    match op {
        Operation::Click => "click",
        Operation::Type => "type",
        _ => "select",
    }
}

/// 2·|P∩G| / (|P|+|G|) as an exact fraction via pairwise matching.
pub fn brute_f1(p: &[String], g: &[String]) -> (u64, u64) {
    if p.is_empty() && g.is_empty() {
        return (1, 1);
    }
    let mut used = vec![false; g.len()];
    let mut common = 0;
    for t in p {
        if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *t) {
            used[j] = true;
            common += 1;
        }
    }
    (2 * common, (p.len() + g.len()) as u64)
}

fn tokens(op: Operation, value: &Option<String>) -> Vec<String> {
    let mut s = op_name(op).to_owned();
    if let Some(v) = value {
        s = format!("{s} {v}");
    }
    s.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

pub type OpValue = (Operation, Option<String>);

pub fn arb_op_value() -> impl Strategy<Value = OpValue> {
    (
        prop::sample::select(vec![Operation::Click, Operation::Type, Operation::Select]),
        prop::option::of(prop::collection::vec(prop::sample::select(VOCAB.to_vec()), 0..5).prop_map(|w| w.join(" "))),
    )
}

pub fn check_f1((po, pv): OpValue, (go, gv): OpValue) -> CaseResult {
    let got = operation_f1((Some(po), pv.as_deref()), (Some(go), gv.as_deref()));
    let (num, den) = brute_f1(&tokens(po, &pv), &tokens(go, &gv));
    prop_assert!((got - num as f64 / den as f64).abs() <= 1e-12, "f1 {} vs {}/{}", got, num, den);
    let swapped = operation_f1((Some(go), gv.as_deref()), (Some(po), pv.as_deref()));
    prop_assert_eq!(got, swapped);
    prop_assert!((0.0..=1.0).contains(&got));
    Ok(())
}

// grouping

pub fn element(i: usize, bbox: Option<BBox>) -> Element {
    Element {
        id: ElementId(format!("e{i}")),
        index: i,
        tag: "button".into(),
        attributes: BTreeMap::new(),
        text_content: format!("b{i}"),
        bbox,
        is_visible: true,
        is_interactive: true,
    }
}

pub fn set_of(elements: Vec<Element>) -> CandidateSet {
    let n = elements.len();
    CandidateSet {
        candidates: elements.into_iter().enumerate().map(|(i, element)| Candidate { element, score: (n - i) as f64 }).collect(),
        k: n.max(1),
        ..Default::default()
    }
}

/// Group sizes for `n` candidates in groups of `g`.
pub fn group_sizes(n: usize, g: usize) -> Vec<usize> {
    let set = set_of((0..n).map(|i| element(i, None)).collect());
    group_candidates(&set, g).iter().map(|gr| gr.members.len()).collect()
}

pub fn check_grouping(n: usize, g: usize) -> CaseResult {
    let set = set_of((0..n).map(|i| element(i, None)).collect());
    let groups = group_candidates(&set, g);
    let flat: Vec<&ElementId> = groups.iter().flat_map(|gr| gr.members.iter().map(|c| &c.element.id)).collect();
    let orig: Vec<&ElementId> = set.candidates.iter().map(|c| &c.element.id).collect();
    prop_assert_eq!(flat, orig);
    prop_assert_eq!(groups.len(), n.div_ceil(g));
    for (i, gr) in groups.iter().enumerate() {
        let expect = if i + 1 < groups.len() { g } else { n - g * i };
        prop_assert_eq!(gr.members.len(), expect);
        prop_assert_eq!(&gr.letters, &choice_letters(expect));
        prop_assert_eq!(&gr.none_letter, &choice_letter(expect));
    }
    Ok(())
}

// annotation geometry

pub type Layout = (u32, u32, Vec<(i32, i32, i32, i32)>, u64);

pub fn arb_layout() -> impl Strategy<Value = Layout> {
    (64u32..400, 64u32..300).prop_flat_map(|(w, h)| {
        let free = (-20i32..w as i32 + 20, -20i32..h as i32 + 20, 0i32..120, 0i32..80);
        // A pile of boxes at one spot forces collisions.
        let stacked = (0i32..w as i32, 0i32..h as i32, 1usize..20, 1i32..60, 1i32..40).prop_map(|(x, y, n, bw, bh)| vec![(x, y, bw, bh); n]);
        (
            Just(w),
            Just(h),
            (prop::collection::vec(free, 0..40), stacked).prop_map(|(mut a, b)| {
                a.extend(b);
                a.truncate(50);
                a
            }),
            any::<u64>(),
        )
    })
}

pub fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut s = seed | 1;
    RgbImage::from_fn(w, h, |_, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        Rgb([s as u8, (s >> 8) as u8, (s >> 16) as u8])
    })
}

pub fn check_annotation((w, h, boxes, seed): Layout, letters: bool) -> CaseResult {
    let img = noise(w, h, seed);
    let set = set_of(
        boxes
            .iter()
            .enumerate()
            .map(|(i, &(x, y, bw, bh))| element(i, Some(BBox::new(x as f64, y as f64, bw as f64, bh as f64))))
            .collect(),
    );
    let cfg = MarkupConfig {
        label_kind: if letters { LabelKind::SingleLetter } else { LabelKind::Number },
        label_position: if letters { LabelPosition::BottomCenter } else { LabelPosition::BottomLeft },
        ..Default::default()
    };
    let bounds = Rect::new(0, 0, w as i32, h as i32);
    let Ok(a) = annotate(&img, &set, &cfg) else {
        // Only legal when nothing intersects the image.
        prop_assert!(boxes.iter().all(|&(x, y, bw, bh)| Rect::new(x, y, bw, bh).intersection(&bounds).is_none()));
        return Ok(());
    };
    prop_assert_eq!(a.marks.len() + a.undrawn.len(), boxes.len());
    let clean: Vec<&Rect> = a.marks.iter().filter(|m| !m.collision).map(|m| &m.label_rect).collect();
    for (i, r) in clean.iter().enumerate() {
        for s in &clean[i + 1..] {
            prop_assert!(!r.intersects(s), "{:?} overlaps {:?}", r, s);
        }
    }
    for m in &a.marks {
        prop_assert!(bounds.contains_rect(&m.label_rect), "{:?} out of bounds", m.label_rect);
    }
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as i32, y as i32);
        let marked = a.marks.iter().any(|m| m.box_rect.contains_point(x, y) || m.label_rect.contains_point(x, y));
        if !marked {
            prop_assert_eq!(a.image.get_pixel(x as u32, y as u32), px);
        }
    }
    let again = annotate(&img, &set, &cfg).unwrap();
    prop_assert_eq!(a.to_png().unwrap(), again.to_png().unwrap());
    Ok(())
}

// answer parsing

fn arb_value() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 /.,:-]{0,24}[A-Za-z0-9]".prop_filter("not a none-word", |v| !matches!(v.to_ascii_uppercase().as_str(), "NONE" | "NA" | "NULL" | "N/A"))
}

pub fn arb_action() -> impl Strategy<Value = OpValue> {
    prop_oneof![
        Just((Operation::Click, None)),
        arb_value().prop_map(|v| (Operation::Type, Some(v))),
        arb_value().prop_map(|v| (Operation::Select, Some(v))),
    ]
}

pub fn check_round_trip(rank: usize, (op, value): OpValue, numbers: bool) -> CaseResult {
    let (label, format) = if numbers { (rank.to_string(), AnswerFormat::NumberLabel) } else { (choice_letter(rank), AnswerFormat::LetterChoice) };
    let text = format_answer(&label, op, value.as_deref());
    let d = parse_formatted_answer(&text, format).map_err(|e| TestCaseError::fail(format!("{text:?}: {e}")))?;
    prop_assert_eq!(d.label, Some(AnswerLabel::Label(label)));
    prop_assert_eq!(d.operation, Some(op));
    prop_assert_eq!(d.value, value);
    Ok(())
}

#[derive(serde::Deserialize)]
struct Messy {
    format: AnswerFormat,
    text: String,
    expect: Expect,
}

#[derive(serde::Deserialize)]
struct Expect {
    label: Option<String>,
    operation: Option<Operation>,
    value: Option<String>,
    error: Option<String>,
    element_type: Option<ElementType>,
    element_text: Option<String>,
}

/// Parses the hand-labeled corpus; returns (matched, total) and the first mismatch.
pub fn messy_corpus(path: &Path) -> (usize, usize, Option<String>) {
    let raw = std::fs::read_to_string(path).expect("messy corpus");
    let corpus: Vec<Messy> = serde_json::from_str(&raw).expect("messy corpus json");
    let mut matched = 0;
    let mut first_miss = None;
    for (i, m) in corpus.iter().enumerate() {
        let got = parse_formatted_answer(&m.text, m.format);
        let ok = match (&m.expect.error, &got) {
            (Some(field), Err(e)) => e.field.to_string() == *field,
            (None, Ok(d)) => {
                let label = d.label.clone().map(|l| match l {
                    AnswerLabel::Label(s) => s,
                    AnswerLabel::NotListed => "not-listed".into(),
                });
                label == m.expect.label
                    && d.operation == m.expect.operation
                    && d.value == m.expect.value
                    && d.element_type == m.expect.element_type
                    && d.element_text == m.expect.element_text
            }
            _ => false,
        };
        if ok {
            matched += 1;
        } else if first_miss.is_none() {
            first_miss = Some(format!("#{i}: got {got:?}"));
        }
    }
    (matched, corpus.len(), first_miss)
}

// metrics

pub fn arb_matrix() -> impl Strategy<Value = Vec<Vec<StepScore>>> {
    let step = (any::<bool>(), any::<bool>(), 0.0f64..=1.0).prop_map(|(el, op_ok, f1)| StepScore {
        element_correct: el,
        op_f1: if op_ok { 1.0 } else { f1 },
        step_success: el && op_ok,
        step_success_f1: el && op_ok,
    });
    prop::collection::vec(prop::collection::vec(step, 1..12), 1..10)
}

pub fn check_monotone(m: Vec<Vec<StepScore>>) -> CaseResult {
    let agg = macro_aggregate(&m);
    prop_assert!(agg.step_sr <= agg.ele_acc + 1e-12);
    prop_assert!(agg.sr1 >= agg.sr0);
    for v in [agg.ele_acc, agg.op_f1, agg.step_sr, agg.sr0, agg.sr1] {
        prop_assert!((0.0..=1.0).contains(&v));
    }
    for t in &m {
        let one = macro_aggregate(std::slice::from_ref(t));
        prop_assert!(one.step_sr <= one.ele_acc + 1e-12);
        prop_assert!(one.sr1 >= one.sr0);
    }
    Ok(())
}

// attribute matching

const WORDS: &[&str] = &["Schedule", "Book now", "Book", "Search", "Go", "Sign up", "Careers", "Large truck"];

#[derive(Clone, Debug)]
pub struct Node {
    markup: usize,
    word: usize,
    upper: bool,
    pad: bool,
}

/// (html, kind, text) for a generated node; kind is what the oracle believes
/// the node is.
fn render(i: usize, n: &Node) -> (String, Option<ElementType>, String) {
    let mut text = WORDS[n.word].to_owned();
    if n.upper {
        text = text.to_uppercase();
    }
    let shown = if n.pad { format!("  {}\n ", text.replace(' ', "   ")) } else { text.clone() };
    let (html, kind) = match n.markup {
        0 => (format!("<button id='n{i}'>{shown}</button>"), Some(ElementType::Button)),
        1 => (format!("<input id='n{i}' type='submit' value='{text}'>"), Some(ElementType::Button)),
        2 => (format!("<div id='n{i}' role='button'>{shown}</div>"), Some(ElementType::Button)),
        3 => (format!("<a id='n{i}' href='/x'>{shown}</a>"), Some(ElementType::Link)),
        4 => (format!("<span id='n{i}' role='link'>{shown}</span>"), Some(ElementType::Link)),
        5 => (format!("<input id='n{i}' type='text' placeholder='{text}'>"), Some(ElementType::Textbox)),
        6 => (format!("<textarea id='n{i}'>{shown}</textarea>"), Some(ElementType::Textbox)),
        7 => (format!("<select id='n{i}'><option>{text}</option></select>"), Some(ElementType::Selectbox)),
        8 => (format!("<input id='n{i}' type='checkbox' aria-label='{text}'>"), None),
        _ => (format!("<p id='n{i}'>{shown}</p>"), None),
    };
    (html, kind, text)
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn brute_matches(nodes: &[(Option<ElementType>, String)], ty: ElementType, text: &str) -> Vec<String> {
    let want = squash(text);
    let typed: Vec<(usize, String)> = nodes.iter().enumerate().filter(|(_, (k, _))| *k == Some(ty)).map(|(i, (_, t))| (i, squash(t))).collect();
    let mut hits: Vec<usize> = typed.iter().filter(|(_, t)| *t == want).map(|(i, _)| *i).collect();
    if hits.is_empty() {
        hits = typed.iter().filter(|(_, t)| !t.is_empty() && (t.contains(&want) || want.contains(t.as_str()))).map(|(i, _)| *i).collect();
    }
    hits.into_iter().map(|i| format!("n{i}")).collect()
}

pub type AttrCase = (Vec<Node>, ElementType, &'static str, bool);

pub fn arb_attr_case() -> impl Strategy<Value = AttrCase> {
    let node = (0usize..10, 0..WORDS.len(), any::<bool>(), any::<bool>()).prop_map(|(markup, word, upper, pad)| Node { markup, word, upper, pad });
    (
        prop::collection::vec(node, 1..30),
        prop::sample::select(vec![ElementType::Button, ElementType::Textbox, ElementType::Selectbox, ElementType::Link]),
        prop::sample::select(WORDS.to_vec()),
        any::<bool>(),
    )
}

pub fn check_attribute_matching((nodes, ty, query, shout): AttrCase) -> CaseResult {
    let rendered: Vec<_> = nodes.iter().enumerate().map(|(i, n)| render(i, n)).collect();
    let html: String = rendered.iter().map(|(h, _, _)| h.as_str()).collect();
    let snap = parse_document(&format!("<body>{html}</body>"), "u").unwrap();
    let query = if shout { query.to_uppercase() } else { query.to_owned() };
    let got: Vec<String> = attribute_matches(&snap.elements, ty, &query).iter().map(|e| e.attr("id").unwrap().to_owned()).collect();
    let oracle_nodes: Vec<(Option<ElementType>, String)> = rendered.into_iter().map(|(_, k, t)| (k, t)).collect();
    prop_assert_eq!(got, brute_matches(&oracle_nodes, ty, &query));
    Ok(())
}

pub const SCHEDULE_PAGE: &str = "<button id='a'>Schedule</button><div><button id='b'>Schedule</button></div><button id='c'> schedule </button><a href='/'>Schedule</a>";

/// Matches for "Schedule" on the three-button page: (heuristic, oracle).
pub fn schedule_matches() -> (usize, usize) {
    let snap = parse_document(SCHEDULE_PAGE, "u").unwrap();
    let nodes = vec![
        (Some(ElementType::Button), "Schedule".to_owned()),
        (Some(ElementType::Button), "Schedule".to_owned()),
        (Some(ElementType::Button), "schedule".to_owned()),
        (Some(ElementType::Link), "Schedule".to_owned()),
    ];
    (
        attribute_matches(&snap.elements, ElementType::Button, "Schedule").len(),
        brute_matches(&nodes, ElementType::Button, "Schedule").len(),
    )
}

/// Grounds "Schedule" on the three-button page; returns the number of model
/// turns in the grounding dialogue and the id attribute picked by answer B.
pub async fn schedule_disambiguation() -> Result<(usize, String), String> {
    let snap = parse_document(SCHEDULE_PAGE, "u").map_err(|e| e.to_string())?;
    let responses = [
        "I will click the Schedule button.".to_owned(),
        "ELEMENT: Schedule\nELEMENT TYPE: BUTTON\nELEMENT TEXT: Schedule\nACTION: CLICK\nVALUE: None".to_owned(),
        "ELEMENT: B\nACTION: CLICK\nVALUE: None".to_owned(),
    ];
    let sink = Arc::new(TranscriptSink::in_memory());
    let gw = Gateway::new(Arc::new(ScriptedBackend::new(Script::queue(responses)))).with_sink(sink);
    let agent = Agent::new(
        AgentConfig {
            strategy: GroundingStrategy::Attributes,
            ..Default::default()
        },
        gw,
    );
    let img = PngImage::new(encode_png(&RgbImage::from_pixel(64, 64, Rgb([255, 255, 255]))).map_err(|e| e.to_string())?);
    let obs = Observation {
        snapshot: snap.clone(),
        screenshot: img,
        candidates: None,
    };
    let out = agent.step(&TaskSpec::new("t", "Schedule a visit"), &mut ActionHistory::new(), &obs).await.map_err(|e| e.to_string())?;
    let id = out.outcome.action().and_then(|a| a.element_id.clone()).ok_or("no action")?;
    let picked = snap.get(&id).and_then(|e| e.attr("id")).unwrap_or_default().to_owned();
    Ok((out.transcripts.len(), picked))
}
