use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Chunk, IngestError};
use crate::provider::{TextProvider, TextRequest};

/// Chunks shorter than this are offered to the provider as merge candidates.
pub const DEFAULT_MIN_CHUNK_CHARS: usize = 200;

/// Groups of chunk ids to fuse, each group in document order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub groups: Vec<Vec<String>>,
}

impl MergePlan {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Checks the plan against `chunks`. A group must have at least two
    /// members from one document, no id may appear twice, and members must
    /// form a contiguous run in document order so merging conserves text
    /// order.
    pub fn validate(&self, chunks: &[Chunk]) -> Result<(), IngestError> {
        let position: HashMap<&str, usize> = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.as_str(), i))
            .collect();
        let mut seen = HashSet::new();
        for group in &self.groups {
            check_group(group, chunks, &position, &mut seen)?;
        }
        Ok(())
    }
}

fn check_group<'a>(
    group: &'a [String],
    chunks: &[Chunk],
    position: &HashMap<&str, usize>,
    seen: &mut HashSet<&'a str>,
) -> Result<(), IngestError> {
    if group.len() < 2 {
        return Err(IngestError::InvalidPlan(format!(
            "group {group:?} has fewer than two members"
        )));
    }
    let mut prev: Option<usize> = None;
    for id in group {
        let &pos = position
            .get(id.as_str())
            .ok_or_else(|| IngestError::InvalidPlan(format!("unknown chunk id {id:?}")))?;
        if !seen.insert(id.as_str()) {
            return Err(IngestError::InvalidPlan(format!(
                "chunk id {id:?} appears in more than one group"
            )));
        }
        if let Some(p) = prev {
            if pos != p + 1 {
                return Err(IngestError::InvalidPlan(format!(
                    "group {group:?} is not a contiguous run in document order"
                )));
            }
            if chunks[pos].doc_id != chunks[p].doc_id {
                return Err(IngestError::InvalidPlan(format!(
                    "group {group:?} spans more than one document"
                )));
            }
        }
        prev = Some(pos);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutcome {
    pub plan: MergePlan,
    pub warnings: Vec<String>,
}

fn merge_prompt(candidates: &[&Chunk]) -> String {
    let mut prompt = String::from(
        "The passages below are short fragments of one scientific article, in \
         document order. Propose which adjacent fragments should be merged because \
         they are too short to stand alone or continue the same topic.\n\
         Reply with one merge group per line, listing the fragment ids separated by \
         commas in document order. Reply with nothing if no merge is needed.\n\n",
    );
    for c in candidates {
        prompt.push_str(&format!(
            "[{}] section: {} ({} chars)\n{}\n\n",
            c.chunk_id,
            c.heading_path.join(" > "),
            c.char_count,
            c.text
        ));
    }
    prompt
}

fn parse_groups(reply: &str) -> Vec<Vec<String>> {
    reply
        .lines()
        .map(|line| {
            line.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
                .map(|t| t.trim_matches(|c: char| c == '[' || c == ']' || c == '"'))
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect()
}

/// Asks the provider how to merge short chunks of one document.
///
/// Only chunks with `char_count < min_chunk_chars` are offered. Each
/// suggested group is checked on its own; invalid groups are dropped with a
/// warning, never repaired. A provider failure yields an empty plan.
pub fn propose_merges(
    chunks: &[Chunk],
    text_llm: &dyn TextProvider,
    min_chunk_chars: usize,
) -> MergeOutcome {
    let candidates: Vec<&Chunk> = chunks
        .iter()
        .filter(|c| c.char_count < min_chunk_chars)
        .collect();
    let mut outcome = MergeOutcome::default();
    if candidates.len() < 2 {
        return outcome;
    }
    let reply = match text_llm.complete(&TextRequest::new(merge_prompt(&candidates))) {
        Ok(r) => r,
        Err(e) => {
            outcome
                .warnings
                .push(format!("merge proposal failed, ingesting unmerged: {e}"));
            return outcome;
        }
    };

    let candidate_ids: HashSet<&str> = candidates.iter().map(|c| c.chunk_id.as_str()).collect();
    let position: HashMap<&str, usize> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| (c.chunk_id.as_str(), i))
        .collect();
    let suggested = parse_groups(&reply);
    let mut accepted: Vec<Vec<String>> = Vec::new();
    for group in suggested {
        if let Some(bad) = group.iter().find(|id| !candidate_ids.contains(id.as_str())) {
            outcome
                .warnings
                .push(format!("dropped merge group {group:?}: {bad:?} is not a candidate"));
            continue;
        }
        let mut seen: HashSet<&str> = accepted.iter().flatten().map(String::as_str).collect();
        match check_group(&group, chunks, &position, &mut seen) {
            Ok(()) => accepted.push(group),
            Err(e) => outcome.warnings.push(format!("dropped merge group: {e}")),
        }
    }
    outcome.plan = MergePlan { groups: accepted };
    outcome
}

/// Fuses each group into its first member. Member texts are joined with a
/// blank line; the merged chunk keeps the first member's id and heading path.
pub fn apply_merges(chunks: &[Chunk], plan: &MergePlan) -> Result<Vec<Chunk>, IngestError> {
    plan.validate(chunks)?;
    if plan.is_empty() {
        return Ok(chunks.to_vec());
    }
    // first member id -> group, other members -> absorbed
    let mut heads: HashMap<&str, &[String]> = HashMap::new();
    let mut absorbed: HashSet<&str> = HashSet::new();
    for group in &plan.groups {
        heads.insert(group[0].as_str(), group.as_slice());
        absorbed.extend(group[1..].iter().map(String::as_str));
    }
    let by_id: HashMap<&str, &Chunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();

    let mut out = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        if absorbed.contains(chunk.chunk_id.as_str()) {
            continue;
        }
        match heads.get(chunk.chunk_id.as_str()) {
            Some(group) => {
                let text = group
                    .iter()
                    .map(|id| by_id[id.as_str()].text.as_str())
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let mut merged = chunk.clone();
                merged.set_text(text);
                out.push(merged);
            }
            None => out.push(chunk.clone()),
        }
    }
    Ok(out)
}
