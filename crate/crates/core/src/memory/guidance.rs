//! Behavioral guidance snippets and lexical relevance retrieval.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MemoryError;

pub const GUIDANCE_FILE: &str = "guidance.jsonl";
pub const DEFAULT_K: usize = 3;
pub const MIN_RELEVANCE: f64 = 0.05;

const STOPWORDS: [&str; 30] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "for", "with", "by",
    "from", "is", "are", "be", "it", "this", "that", "as", "into", "only", "not", "no", "do", "we",
    "you",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SnippetSource {
    Rule { rule_id: String },
    Correction { proposal_id: u64 },
    Note,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: u64,
    pub text: String,
    /// Lowercase, deduplicated keywords.
    pub topics: BTreeSet<String>,
    /// Monotonic creation index; larger is newer.
    pub created_at: u64,
    pub source: SnippetSource,
}

/// Lowercased alphanumeric tokens with stopwords removed.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Pluggable relevance measure. Embedding-backed scorers implement this; the
/// default is token Jaccard.
pub trait RelevanceScorer {
    /// Relevance in [0, 1].
    fn relevance(&self, query: &str, snippet: &Snippet) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardScorer;

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

impl RelevanceScorer for JaccardScorer {
    fn relevance(&self, query: &str, snippet: &Snippet) -> f64 {
        jaccard(&tokenize(query), &snippet.topics)
    }
}

#[derive(Debug, Default)]
pub struct GuidanceStore {
    snippets: Vec<Snippet>,
    path: Option<PathBuf>,
}

impl GuidanceStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: &Path) -> Result<Self, MemoryError> {
        let path = dir.join(GUIDANCE_FILE);
        let mut store = Self {
            snippets: Vec::new(),
            path: Some(path.clone()),
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        let complete = text.rfind('\n').map_or("", |i| &text[..=i]);
        for (n, line) in complete
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let s: Snippet =
                serde_json::from_str(line).map_err(|e| MemoryError::CorruptGuidance {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
            store.snippets.push(s);
        }
        Ok(store)
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn add(&mut self, text: &str, source: SnippetSource) -> Result<u64, MemoryError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(MemoryError::EmptySnippet);
        }
        let id = self.snippets.last().map_or(1, |s| s.id + 1);
        let snippet = Snippet {
            id,
            text: text.to_string(),
            topics: tokenize(text),
            created_at: id,
            source,
        };
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&snippet)?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.snippets.push(snippet);
        Ok(id)
    }

    pub fn retrieve(&self, task: &str, k: usize) -> Vec<&Snippet> {
        self.retrieve_with(&JaccardScorer, task, k)
    }

    /// Top-`k` snippets by relevance, newest first among equals; snippets
    /// under [`MIN_RELEVANCE`] are never returned.
    pub fn retrieve_with(
        &self,
        scorer: &dyn RelevanceScorer,
        task: &str,
        k: usize,
    ) -> Vec<&Snippet> {
        let mut scored: Vec<(f64, &Snippet)> = self
            .snippets
            .iter()
            .map(|s| (scorer.relevance(task, s), s))
            .filter(|(r, _)| *r >= MIN_RELEVANCE)
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.created_at.cmp(&a.1.created_at))
        });
        scored.into_iter().take(k).map(|(_, s)| s).collect()
    }
}

pub fn retrieve_guidance<'a>(store: &'a GuidanceStore, task: &str, k: usize) -> Vec<&'a Snippet> {
    store.retrieve(task, k.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_store_returns_nothing() {
        assert!(GuidanceStore::in_memory()
            .retrieve("anything", 3)
            .is_empty());
    }

    #[test]
    fn nested_response_guidance_ranks_first() {
        let mut g = GuidanceStore::in_memory();
        g.add(
            "Prefer small commits in the docs folder.",
            SnippetSource::Note,
        )
        .unwrap();
        g.add(
            "Use the nested object response. Preserve the existing response structure of the summary endpoint.",
            SnippetSource::Correction { proposal_id: 2 },
        )
        .unwrap();
        g.add("Run the linter before pushing.", SnippetSource::Note)
            .unwrap();
        let hits = g.retrieve(
            "extend the summary endpoint with an optional priority filter",
            3,
        );
        assert!(hits[0].text.starts_with("Use the nested object response"));
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn equal_scores_prefer_newer() {
        let mut g = GuidanceStore::in_memory();
        g.add("validation helpers", SnippetSource::Note).unwrap();
        g.add("validation routes", SnippetSource::Note).unwrap();
        let hits = g.retrieve("validation", 3);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].text, "validation routes");
    }

    #[test]
    fn identical_text_scores_one() {
        let mut g = GuidanceStore::in_memory();
        g.add("Keep handlers thin", SnippetSource::Note).unwrap();
        assert_eq!(
            JaccardScorer.relevance("keep handlers thin", &g.snippets()[0]),
            1.0
        );
    }

    #[test]
    fn topics_are_lowercase_and_deduplicated() {
        let t = tokenize("Use USE the API, the api!");
        assert_eq!(t.into_iter().collect::<Vec<_>>(), vec!["api", "use"]);
    }

    #[test]
    fn durable_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GuidanceStore::open(dir.path()).unwrap();
        g.add("reuse existing validation helpers", SnippetSource::Note)
            .unwrap();
        g.add("avoid new files", SnippetSource::Note).unwrap();
        let back = GuidanceStore::open(dir.path()).unwrap();
        assert_eq!(back.snippets(), g.snippets());
        let q = "add validation helpers for files";
        let a: Vec<u64> = g.retrieve(q, 3).iter().map(|s| s.id).collect();
        let b: Vec<u64> = back.retrieve(q, 3).iter().map(|s| s.id).collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn retrieval_respects_k_and_bounds(
            texts in prop::collection::vec("[a-z]{1,5}( [a-z]{1,5}){0,6}", 0..12),
            query in "[a-z]{1,5}( [a-z]{1,5}){0,6}",
            k in 1usize..5,
        ) {
            let mut g = GuidanceStore::in_memory();
            for t in &texts {
                let _ = g.add(t, SnippetSource::Note);
            }
            let before = g.snippets().to_vec();
            let hits = g.retrieve(&query, k);
            prop_assert!(hits.len() <= k);
            for s in g.snippets() {
                let r = JaccardScorer.relevance(&query, s);
                prop_assert!((0.0..=1.0).contains(&r));
            }
            prop_assert_eq!(g.snippets(), &before[..]);
        }
    }
}
