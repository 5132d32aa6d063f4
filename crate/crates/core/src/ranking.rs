//! Candidate ranking and multi-choice option grouping.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{element_repr, DomSnapshot, Element, ElementId, DEFAULT_REPR_LEN};
use crate::text::content_tokens;

/// Default number of candidates handed to grounding.
pub const DEFAULT_TOP_K: usize = 50;
/// Options per multi-choice question.
pub const DEFAULT_GROUP_SIZE: usize = 17;
/// Group size of the iterative-refinement baseline.
pub const REFINEMENT_GROUP_SIZE: usize = 5;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "i", "in", "is", "it", "me", "my", "of", "on",
    "or", "the", "to", "with", "your", "you",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankingError {
    #[error("unknown element id in ranking: {0}")]
    UnknownElementId(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub element: Element,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub task_id: String,
    pub step_index: usize,
    pub candidates: Vec<Candidate>,
    pub k: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, id: &ElementId) -> bool {
        self.candidates.iter().any(|c| &c.element.id == id)
    }

    pub fn position(&self, id: &ElementId) -> Option<usize> {
        self.candidates.iter().position(|c| &c.element.id == id)
    }

    pub fn with_context(mut self, task_id: impl Into<String>, step_index: usize) -> Self {
        self.task_id = task_id.into();
        self.step_index = step_index;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionGroup {
    pub members: Vec<Candidate>,
    pub letters: Vec<String>,
    pub none_letter: String,
}

impl OptionGroup {
    /// Member chosen by `letter`, if the letter belongs to this group.
    pub fn member(&self, letter: &str) -> Option<&Candidate> {
        self.letters.iter().position(|l| l == letter).map(|i| &self.members[i])
    }
}

/// Scores elements for a task. Implementations must be deterministic.
pub trait Ranker: Send + Sync {
    fn score(&self, task: &str, history: &[String], elements: &[Element]) -> Vec<f64>;
}

/// IDF-weighted token overlap between each element's `[tag] text` and the
/// task plus the most recent history entry.
#[derive(Clone, Copy, Debug, Default)]
pub struct LexicalRanker;

impl Ranker for LexicalRanker {
    fn score(&self, task: &str, history: &[String], elements: &[Element]) -> Vec<f64> {
        let docs: Vec<HashSet<String>> = elements
            .iter()
            .map(|e| content_tokens(&element_repr(e, DEFAULT_REPR_LEN).repr_text).into_iter().collect())
            .collect();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in &docs {
            for t in doc {
                *df.entry(t.as_str()).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut query: HashSet<String> = content_tokens(task).into_iter().collect();
        if let Some(last) = history.last() {
            query.extend(content_tokens(last));
        }
        query.retain(|t| !STOPWORDS.contains(&t.as_str()));

        docs.iter()
            .map(|doc| {
                query
                    .iter()
                    .filter(|t| doc.contains(*t))
                    .map(|t| {
                        let d = df.get(t.as_str()).copied().unwrap_or(0) as f64;
                        ((1.0 + n) / (1.0 + d)).ln() + 1.0
                    })
                    .sum()
            })
            .collect()
    }
}

/// True if `token` counts as content (not a stopword) for ranking purposes.
pub fn is_content_token(token: &str) -> bool {
    !STOPWORDS.contains(&token)
}

pub fn rank_candidates(ranker: &dyn Ranker, task: &str, history: &[String], elements: &[Element], k: usize) -> CandidateSet {
    assert!(k >= 1, "k must be at least 1");
    let mut seen = HashSet::new();
    let unique: Vec<Element> = elements.iter().filter(|e| seen.insert(e.id.clone())).cloned().collect();
    let scores = ranker.score(task, history, &unique);
    let mut scored: Vec<Candidate> = unique
        .into_iter()
        .zip(scores)
        .map(|(element, score)| Candidate { element, score })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.element.index.cmp(&b.element.index)));
    scored.truncate(k);
    CandidateSet {
        task_id: String::new(),
        step_index: 0,
        candidates: scored,
        k,
    }
}

/// Builds a candidate set from a precomputed ranking; scores are reciprocal ranks.
pub fn load_external_ranking(candidate_ids: &[String], snapshot: &DomSnapshot) -> Result<CandidateSet, RankingError> {
    let mut seen = HashSet::new();
    let mut candidates = Vec::with_capacity(candidate_ids.len());
    for raw in candidate_ids {
        let element = snapshot
            .resolve(raw)
            .ok_or_else(|| RankingError::UnknownElementId(raw.clone()))?;
        if !seen.insert(element.id.clone()) {
            continue;
        }
        let rank = candidates.len() + 1;
        candidates.push(Candidate {
            element: element.clone(),
            score: 1.0 / rank as f64,
        });
    }
    Ok(CandidateSet {
        task_id: String::new(),
        step_index: 0,
        k: candidates.len(),
        candidates,
    })
}

/// `A…Z, AA, AB, …`: bijective base-26 labels for the first `n` choices.
pub fn choice_letters(n: usize) -> Vec<String> {
    (0..n).map(choice_letter).collect()
}

pub fn choice_letter(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Splits the ranked candidates into contiguous groups of `group_size`.
pub fn group_candidates(set: &CandidateSet, group_size: usize) -> Vec<OptionGroup> {
    assert!(group_size >= 1, "group_size must be at least 1");
    set.candidates
        .chunks(group_size)
        .map(|chunk| {
            let mut letters = choice_letters(chunk.len() + 1);
            let none_letter = letters.pop().expect("non-empty");
            OptionGroup {
                members: chunk.to_vec(),
                letters,
                none_letter,
            }
        })
        .collect()
}
