//! Set-of-mark screenshot annotation: a box per candidate plus a text label
//! placed so that labels do not overlap each other.

pub mod font;

use std::collections::BTreeMap;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::ElementId;
use crate::ranking::{choice_letter, CandidateSet};

/// Box stroke width in pixels.
pub const STROKE: i32 = 2;
/// Padding between label text and label edge.
pub const LABEL_PAD: i32 = 2;
/// Vertical nudge steps tried per anchor before giving up.
pub const MAX_NUDGES: i32 = 8;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no candidate has a drawable bounding box")]
    NoDrawableCandidates,
    #[error("image is empty")]
    EmptyImage,
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb8 {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb8 {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    fn px(self) -> Rgb<u8> {
        Rgb([self.r, self.g, self.b])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    #[default]
    Number,
    SingleLetter,
    DoubleLetter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPosition {
    #[default]
    BottomLeft,
    BottomCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkupConfig {
    pub label_kind: LabelKind,
    pub label_position: LabelPosition,
    pub box_color: Rgb8,
    pub label_fg: Rgb8,
    pub label_bg: Rgb8,
}

impl Default for MarkupConfig {
    fn default() -> Self {
        Self {
            label_kind: LabelKind::Number,
            label_position: LabelPosition::BottomLeft,
            box_color: Rgb8::new(255, 0, 0),
            label_fg: Rgb8::new(255, 255, 255),
            label_bg: Rgb8::new(0, 0, 0),
        }
    }
}

/// Integer pixel rectangle; `w` and `h` are non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    /// Positive-area overlap; rectangles that only share an edge do not intersect.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, x: i32, y: i32) -> bool {
        x >= self.x && y >= self.y && x < self.right() && y < self.bottom()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x = self.x.max(other.x);
        let y = self.y.max(other.y);
        let r = self.right().min(other.right());
        let b = self.bottom().min(other.bottom());
        (r > x && b > y).then(|| Rect::new(x, y, r - x, b - y))
    }

    fn translated(&self, dx: i32, dy: i32) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Moves the rectangle inside `bounds` without resizing it.
    fn clamped_into(&self, bounds: &Rect) -> Rect {
        let x = self.x.min(bounds.right() - self.w).max(bounds.x);
        let y = self.y.min(bounds.bottom() - self.h).max(bounds.y);
        Rect::new(x, y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub rect: Rect,
    /// No collision-free position was found; `rect` is the preferred anchor.
    pub collision: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Corner {
    BottomLeft,
    BottomCenter,
    BottomRight,
    TopLeft,
    TopRight,
}

fn anchor(b: &Rect, w: i32, h: i32, corner: Corner) -> Rect {
    let (x, y) = match corner {
        Corner::BottomLeft => (b.x, b.bottom()),
        Corner::BottomCenter => (b.x + (b.w - w) / 2, b.bottom()),
        Corner::BottomRight => (b.right() - w, b.bottom()),
        Corner::TopLeft => (b.x, b.y - h),
        Corner::TopRight => (b.right() - w, b.y - h),
    };
    Rect::new(x, y, w, h)
}

fn anchor_sequence(position: LabelPosition) -> Vec<Corner> {
    let preferred = match position {
        LabelPosition::BottomLeft => Corner::BottomLeft,
        LabelPosition::BottomCenter => Corner::BottomCenter,
    };
    let mut seq = vec![preferred];
    seq.extend(
        [Corner::BottomLeft, Corner::BottomRight, Corner::TopLeft, Corner::TopRight]
            .into_iter()
            .filter(|c| *c != preferred),
    );
    seq
}

/// Greedy label placement in rank order.
///
/// Each label tries the preferred anchor, the remaining corners, then the
/// same anchors nudged by ±k label heights along the box's vertical edges.
/// Every candidate is clamped inside `image_bounds`; the first one that does
/// not intersect an already placed label wins. When none fits the label goes
/// to the preferred anchor with `collision` set.
pub fn place_labels(box_rects: &[Rect], label_sizes: &[(i32, i32)], image_bounds: Rect, position: LabelPosition) -> Vec<Placement> {
    assert_eq!(box_rects.len(), label_sizes.len(), "one label size per box");
    let corners = anchor_sequence(position);
    let mut placed: Vec<Rect> = Vec::with_capacity(box_rects.len());
    let mut out = Vec::with_capacity(box_rects.len());

    for (b, &(w, h)) in box_rects.iter().zip(label_sizes) {
        let bases: Vec<Rect> = corners.iter().map(|c| anchor(b, w, h, *c)).collect();
        let preferred = bases[0].clamped_into(&image_bounds);
        let free = |r: &Rect| !placed.iter().any(|p| p.intersects(r));

        let mut tries = bases.iter().map(|r| r.clamped_into(&image_bounds)).collect::<Vec<_>>();
        for k in 1..=MAX_NUDGES {
            for base in &bases {
                for sign in [1, -1] {
                    tries.push(base.translated(0, sign * k * h).clamped_into(&image_bounds));
                }
            }
        }
        let placement = match tries.into_iter().find(|r| free(r)) {
            Some(rect) => Placement { rect, collision: false },
            None => Placement {
                rect: preferred,
                collision: true,
            },
        };
        placed.push(placement.rect);
        out.push(placement);
    }
    out
}

pub fn label_text(kind: LabelKind, rank: usize) -> String {
    match kind {
        LabelKind::Number => rank.to_string(),
        LabelKind::SingleLetter => choice_letter(rank),
        LabelKind::DoubleLetter => choice_letter(rank + 26),
    }
}

pub fn label_size(text: &str) -> (i32, i32) {
    (font::text_width(text) + 2 * LABEL_PAD, font::CELL_HEIGHT + 2 * LABEL_PAD)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mark {
    pub label: String,
    pub element_id: ElementId,
    pub rank: usize,
    pub box_rect: Rect,
    pub label_rect: Rect,
    pub collision: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedScreenshot {
    pub image: RgbImage,
    /// Drawn marks in rank order.
    pub marks: Vec<Mark>,
    /// Candidates that had no drawable box.
    pub undrawn: Vec<ElementId>,
}

impl AnnotatedScreenshot {
    pub fn label_map(&self) -> BTreeMap<String, ElementId> {
        self.marks.iter().map(|m| (m.label.clone(), m.element_id.clone())).collect()
    }

    pub fn label_rects(&self) -> BTreeMap<String, Rect> {
        self.marks.iter().map(|m| (m.label.clone(), m.label_rect)).collect()
    }

    pub fn lookup(&self, label: &str) -> Option<&ElementId> {
        self.marks.iter().find(|m| m.label == label).map(|m| &m.element_id)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, AnnotateError> {
        encode_png(&self.image)
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, AnnotateError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, AnnotateError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn annotate(image: &RgbImage, candidates: &CandidateSet, config: &MarkupConfig) -> Result<AnnotatedScreenshot, AnnotateError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(AnnotateError::EmptyImage);
    }
    let bounds = Rect::new(0, 0, image.width() as i32, image.height() as i32);

    let mut drawable = Vec::new();
    let mut undrawn = Vec::new();
    for (rank, cand) in candidates.candidates.iter().enumerate() {
        let clipped = cand.element.bbox.and_then(|b| {
            let r = Rect::new(b.x.round() as i32, b.y.round() as i32, b.w.round() as i32, b.h.round() as i32);
            r.intersection(&bounds)
        });
        match clipped {
            Some(r) => drawable.push((rank, cand.element.id.clone(), r)),
            None => undrawn.push(cand.element.id.clone()),
        }
    }
    if drawable.is_empty() {
        return Err(AnnotateError::NoDrawableCandidates);
    }

    let labels: Vec<String> = drawable.iter().map(|(rank, _, _)| label_text(config.label_kind, *rank)).collect();
    let sizes: Vec<(i32, i32)> = labels.iter().map(|l| label_size(l)).collect();
    let boxes: Vec<Rect> = drawable.iter().map(|(_, _, r)| *r).collect();
    let placements = place_labels(&boxes, &sizes, bounds, config.label_position);

    let mut out = image.clone();
    for r in &boxes {
        stroke_rect(&mut out, r, config.box_color.px());
    }
    for (label, p) in labels.iter().zip(&placements) {
        fill_rect(&mut out, &p.rect, config.label_bg.px());
        font::draw_text(&mut out, p.rect.x + LABEL_PAD, p.rect.y + LABEL_PAD, label, config.label_fg.px());
    }

    let marks = drawable
        .into_iter()
        .zip(labels)
        .zip(placements)
        .map(|(((rank, element_id, box_rect), label), p)| Mark {
            label,
            element_id,
            rank,
            box_rect,
            label_rect: p.rect,
            collision: p.collision,
        })
        .collect();
    Ok(AnnotatedScreenshot { image: out, marks, undrawn })
}

fn fill_rect(img: &mut RgbImage, r: &Rect, color: Rgb<u8>) {
    let bounds = Rect::new(0, 0, img.width() as i32, img.height() as i32);
    if let Some(r) = r.intersection(&bounds) {
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Strokes the inside edge of `r`.
fn stroke_rect(img: &mut RgbImage, r: &Rect, color: Rgb<u8>) {
    let (tw, th) = (STROKE.min(r.w), STROKE.min(r.h));
    fill_rect(img, &Rect::new(r.x, r.y, r.w, th), color);
    fill_rect(img, &Rect::new(r.x, r.bottom() - th, r.w, th), color);
    fill_rect(img, &Rect::new(r.x, r.y, tw, r.h), color);
    fill_rect(img, &Rect::new(r.right() - tw, r.y, tw, r.h), color);
}
