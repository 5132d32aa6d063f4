use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use webground_core::annotate::{annotate as draw, decode_png, AnnotateError, MarkupConfig};
use webground_core::dom::{element_repr, extract_interactive_elements, parse_document, BBox, Element, ElementId, DEFAULT_REPR_LEN};
use webground_core::ranking::{rank_candidates, Candidate, CandidateSet, LexicalRanker, DEFAULT_TOP_K};

use crate::config::{Markup, Viewport};
use crate::UsageError;

#[derive(clap::Args, Debug)]
pub struct AnnotateArgs {
    /// Screenshot PNG; a white canvas of --size is used when omitted
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// JSON array of {"id": ..., "bbox": [x, y, w, h]} in rank order
    #[arg(long)]
    pub candidates: PathBuf,
    /// Label kind and position, e.g. number,bottom-left
    #[arg(long, default_value = "number,bottom-left")]
    pub markup: Markup,
    /// Canvas size without --image, WxH
    #[arg(long, default_value = "1280x800")]
    pub size: Viewport,
    /// Directory receiving annotated.png and labels.json
    #[arg(long, default_value = "annotate-out")]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct BoxInput {
    id: String,
    bbox: Option<[f64; 4]>,
}

pub fn annotate(a: AnnotateArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.candidates).map_err(|e| UsageError(format!("{}: {e}", a.candidates.display())))?;
    let boxes: Vec<BoxInput> = serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", a.candidates.display())))?;
    let image = match &a.image {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
            decode_png(&bytes).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => RgbImage::from_pixel(a.size.0, a.size.1, Rgb([255, 255, 255])),
    };
    let candidates = boxes
        .into_iter()
        .enumerate()
        .map(|(i, b)| Candidate {
            element: Element {
                id: ElementId(b.id),
                index: i,
                tag: "div".into(),
                attributes: BTreeMap::new(),
                text_content: String::new(),
                bbox: b.bbox.map(|[x, y, w, h]| BBox::new(x, y, w, h)),
                is_visible: true,
                is_interactive: true,
            },
            score: 0.0,
        })
        .collect::<Vec<_>>();
    let set = CandidateSet {
        task_id: String::new(),
        step_index: 0,
        k: candidates.len(),
        candidates,
    };
    let config = MarkupConfig {
        label_kind: a.markup.0,
        label_position: a.markup.1,
        ..Default::default()
    };
    let shot = match draw(&image, &set, &config) {
        Ok(s) => s,
        Err(e @ AnnotateError::NoDrawableCandidates) => return Err(UsageError(e.to_string()).into()),
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("annotated.png"), shot.to_png()?)?;
    let labels = serde_json::to_string_pretty(&shot.label_map())?;
    std::fs::write(a.out.join("labels.json"), labels)?;
    if !shot.undrawn.is_empty() {
        eprintln!("{} candidate(s) had no drawable box", shot.undrawn.len());
    }
    println!("{}", a.out.join("annotated.png").display());
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct RankArgs {
    /// Page to rank
    #[arg(long)]
    pub html: PathBuf,
    /// Task instruction
    #[arg(long)]
    pub task: String,
    /// Previous action summaries, oldest first
    #[arg(long)]
    pub history: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
}

#[derive(Serialize)]
struct Ranked<'a> {
    rank: usize,
    id: &'a str,
    score: f64,
    repr: String,
}

pub fn rank(a: RankArgs) -> anyhow::Result<()> {
    let html = std::fs::read_to_string(&a.html).map_err(|e| UsageError(format!("{}: {e}", a.html.display())))?;
    let url = format!("file://{}", a.html.display());
    let snapshot = parse_document(&html, &url).map_err(|e| UsageError(format!("{}: {e}", a.html.display())))?;
    let elements = extract_interactive_elements(&snapshot);
    let set = rank_candidates(&LexicalRanker, &a.task, &a.history, &elements, a.k);
    let out: Vec<Ranked> = set
        .candidates
        .iter()
        .enumerate()
        .map(|(rank, c)| Ranked {
            rank,
            id: c.element.id.as_str(),
            score: c.score,
            repr: element_repr(&c.element, DEFAULT_REPR_LEN).repr_text,
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
