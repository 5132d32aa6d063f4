//! Step and task metrics with macro averaging over tasks.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::agent::Operation;
use crate::dom::ElementId;
use crate::text::fold;

pub fn element_accuracy(pred: Option<&ElementId>, gold: &[ElementId]) -> bool {
    pred.is_some_and(|p| gold.contains(p))
}

fn op_tokens(op: Option<Operation>, value: Option<&str>) -> Vec<String> {
    let mut s = op.map(|o| o.keyword().to_lowercase()).unwrap_or_default();
    if let Some(v) = value {
        s.push(' ');
        s.push_str(v);
    }
    s.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

/// Token-level F1 between `"op value"` strings (lowercased, whitespace split).
pub fn operation_f1(pred: (Option<Operation>, Option<&str>), gold: (Option<Operation>, Option<&str>)) -> f64 {
    let p = op_tokens(pred.0, pred.1);
    let g = op_tokens(gold.0, gold.1);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    2.0 * common as f64 / (p.len() + g.len()) as f64
}

fn norm_value(v: Option<&str>) -> Option<String> {
    v.map(fold).filter(|s| !s.is_empty())
}

/// Element correct, same operation and equal normalized values.
pub fn step_success(element_correct: bool, pred: (Option<Operation>, Option<&str>), gold: (Option<Operation>, Option<&str>)) -> bool {
    element_correct && pred.0.is_some() && pred.0 == gold.0 && norm_value(pred.1) == norm_value(gold.1)
}

pub fn task_success(step_successes: &[bool], tolerance: usize) -> bool {
    step_successes.iter().filter(|s| !**s).count() <= tolerance
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

pub fn difficulty_bucket(n_gold_actions: usize) -> Difficulty {
    match n_gold_actions {
        0..=4 => Difficulty::Easy,
        5..=9 => Difficulty::Medium,
        _ => Difficulty::Hard,
    }
}

/// The per-step numbers aggregation needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub element_correct: bool,
    pub op_f1: f64,
    pub step_success: bool,
    /// Alternative rule: element correct and operation F1 of exactly 1.
    pub step_success_f1: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub tasks: usize,
    pub steps: usize,
    pub ele_acc: f64,
    pub op_f1: f64,
    pub step_sr: f64,
    pub step_sr_f1: f64,
    pub sr0: f64,
    pub sr1: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn b(x: bool) -> f64 {
    if x {
        1.0
    } else {
        0.0
    }
}

/// Macro averages: per-task step means, then the mean over tasks.
/// Tasks without steps are ignored.
pub fn macro_aggregate(tasks: &[Vec<StepScore>]) -> Aggregates {
    let tasks: Vec<&Vec<StepScore>> = tasks.iter().filter(|t| !t.is_empty()).collect();
    let per_task = |f: &dyn Fn(&StepScore) -> f64| mean(tasks.iter().map(|t| mean(t.iter().map(f))));
    let successes = |t: &Vec<StepScore>| t.iter().map(|s| s.step_success).collect::<Vec<_>>();
    Aggregates {
        tasks: tasks.len(),
        steps: tasks.iter().map(|t| t.len()).sum(),
        ele_acc: per_task(&|s| b(s.element_correct)),
        op_f1: per_task(&|s| s.op_f1),
        step_sr: per_task(&|s| b(s.step_success)),
        step_sr_f1: per_task(&|s| b(s.step_success_f1)),
        sr0: mean(tasks.iter().map(|t| b(task_success(&successes(t), 0)))),
        sr1: mean(tasks.iter().map(|t| b(task_success(&successes(t), 1)))),
    }
}

pub fn difficulty_histogram(step_counts: impl IntoIterator<Item = usize>) -> BTreeMap<Difficulty, usize> {
    let mut h = BTreeMap::from([(Difficulty::Easy, 0), (Difficulty::Medium, 0), (Difficulty::Hard, 0)]);
    for n in step_counts {
        *h.entry(difficulty_bucket(n)).or_default() += 1;
    }
    h
}
