//! Deterministic input perturbation for the typo condition and a
//! lexicon-substitution stand-in for the adversarial condition.
//! Paraphrase variants are produced externally and ingested from files.
//!
//! Tokens are whitespace-delimited. Typo edits swap one adjacent pair of
//! interior characters (never the first or last) in tokens of length 4
//! or more; exactly `ceil(rate * eligible)` distinct tokens are edited.
//! All randomness comes from a per-item stream derived from
//! `(seed, item_id)` (see [`crate::rng`]), so output is reproducible
//! across runs, platforms, and parallel schedules.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;
use crate::{Error, Result};

/// Which generator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Typo,
    LexiconSubstitution,
}

/// Generator kind, edit rate, seed, and (for substitution) the lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbKind,
    /// Fraction of eligible tokens to modify, in [0, 1].
    pub rate: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<BTreeMap<String, Vec<String>>>,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidParameter(format!(
                "perturbation rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        if self.kind == PerturbKind::LexiconSubstitution
            && self.lexicon.as_ref().is_none_or(BTreeMap::is_empty)
        {
            return Err(Error::Config(
                "lexicon_substitution requires a non-empty lexicon".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Transpose,
    Substitute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub token_index: usize,
    pub kind: EditKind,
}

/// One perturbed question with its edit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedItem {
    pub item_id: String,
    pub original_text: String,
    pub perturbed_text: String,
    pub edits: Vec<Edit>,
}

/// `ceil(rate * eligible)` with a small guard against binary rounding of
/// decimal rates (0.07 * 100 must select 7, not 8).
pub(crate) fn edit_count(rate: f64, eligible: usize) -> usize {
    if eligible == 0 || rate <= 0.0 {
        return 0;
    }
    let raw = rate * eligible as f64 - 1e-9;
    (raw.ceil().max(0.0) as usize).min(eligible)
}

enum Segment<'a> {
    Whitespace(&'a str),
    Token(&'a str),
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let is_ws = rest.chars().next().expect("non-empty").is_whitespace();
        let end = rest
            .find(|c: char| c.is_whitespace() != is_ws)
            .unwrap_or(rest.len());
        let (head, tail) = rest.split_at(end);
        out.push(if is_ws {
            Segment::Whitespace(head)
        } else {
            Segment::Token(head)
        });
        rest = tail;
    }
    out
}

/// Picks `k` distinct positions from `0..n` via partial Fisher-Yates,
/// returned in ascending order.
fn sample_without_replacement(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut picked: Vec<usize> = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

fn rebuild(
    item_id: &str,
    text: &str,
    replaced: BTreeMap<usize, String>,
    edits: Vec<Edit>,
) -> PerturbedItem {
    let mut out = String::with_capacity(text.len());
    let mut token_index = 0;
    for segment in segments(text) {
        match segment {
            Segment::Whitespace(ws) => out.push_str(ws),
            Segment::Token(token) => {
                match replaced.get(&token_index) {
                    Some(replacement) => out.push_str(replacement),
                    None => out.push_str(token),
                }
                token_index += 1;
            }
        }
    }
    PerturbedItem {
        item_id: item_id.to_string(),
        original_text: text.to_string(),
        perturbed_text: out,
        edits,
    }
}

/// Swaps one adjacent interior character pair in `ceil(rate * eligible)`
/// seeded-random tokens of length >= 4. Whitespace and token count are
/// preserved exactly; no eligible tokens means the identity.
pub fn perturb_typo(item_id: &str, text: &str, spec: &PerturbationSpec) -> Result<PerturbedItem> {
    spec.validate()?;
    if spec.kind != PerturbKind::Typo {
        return Err(Error::Config("spec.kind must be typo".into()));
    }
    let tokens: Vec<&str> = segments(text)
        .iter()
        .filter_map(|s| match s {
            Segment::Token(t) => Some(*t),
            Segment::Whitespace(_) => None,
        })
        .collect();
    let eligible: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.chars().count() >= 4)
        .map(|(i, _)| i)
        .collect();
    let k = edit_count(spec.rate, eligible.len());

    let mut rng = derive_rng(spec.seed, item_id, 0);
    let picked = sample_without_replacement(&mut rng, eligible.len(), k);

    let mut replaced = BTreeMap::new();
    let mut edits = Vec::with_capacity(k);
    for pos in picked {
        let token_index = eligible[pos];
        let mut chars: Vec<char> = tokens[token_index].chars().collect();
        // valid swap positions keep the first and last character in place
        let i = rng.random_range(1..=chars.len() - 3);
        chars.swap(i, i + 1);
        replaced.insert(token_index, chars.into_iter().collect());
        edits.push(Edit {
            token_index,
            kind: EditKind::Transpose,
        });
    }
    Ok(rebuild(item_id, text, replaced, edits))
}

/// Replaces `ceil(rate * eligible)` lexicon-matched tokens with a
/// seeded-random substitute. Matching is case-insensitive; the original
/// casing of the first letter is preserved.
pub fn perturb_lexicon(
    item_id: &str,
    text: &str,
    spec: &PerturbationSpec,
) -> Result<PerturbedItem> {
    spec.validate()?;
    if spec.kind != PerturbKind::LexiconSubstitution {
        return Err(Error::Config("spec.kind must be lexicon_substitution".into()));
    }
    let lexicon = spec.lexicon.as_ref().expect("validated non-empty");
    let tokens: Vec<&str> = segments(text)
        .iter()
        .filter_map(|s| match s {
            Segment::Token(t) => Some(*t),
            Segment::Whitespace(_) => None,
        })
        .collect();
    let eligible: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| lexicon.contains_key(&t.to_lowercase()))
        .map(|(i, _)| i)
        .collect();
    let k = edit_count(spec.rate, eligible.len());

    let mut rng = derive_rng(spec.seed, item_id, 0);
    let picked = sample_without_replacement(&mut rng, eligible.len(), k);

    let mut replaced = BTreeMap::new();
    let mut edits = Vec::with_capacity(k);
    for pos in picked {
        let token_index = eligible[pos];
        let token = tokens[token_index];
        let substitutes = &lexicon[&token.to_lowercase()];
        let choice = &substitutes[rng.random_range(0..substitutes.len())];
        let replacement = match_first_letter_case(token, choice);
        replaced.insert(token_index, replacement);
        edits.push(Edit {
            token_index,
            kind: EditKind::Substitute,
        });
    }
    Ok(rebuild(item_id, text, replaced, edits))
}

fn match_first_letter_case(original: &str, substitute: &str) -> String {
    let first_upper = original
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase());
    let mut chars = substitute.chars();
    match chars.next() {
        Some(c) if first_upper => c.to_uppercase().chain(chars).collect(),
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A question to perturb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub item_id: String,
    pub text: String,
}

/// An externally produced variant keyed to an original item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalVariant {
    pub item_id: String,
    pub perturbed_text: String,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Reads a question file (`{item_id, text}` per line, `#` comments
/// skipped).
pub fn read_questions(path: &Path) -> Result<Vec<Question>> {
    read_jsonl(path)
}

/// Reads a lexicon file (`{word, substitutes}` per line).
pub fn read_lexicon(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct LexiconEntry {
        word: String,
        substitutes: Vec<String>,
    }
    let entries: Vec<LexiconEntry> = read_jsonl(path)?;
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "lexicon file {} holds no entries",
            path.display()
        )));
    }
    Ok(entries
        .into_iter()
        .map(|e| (e.word.to_lowercase(), e.substitutes))
        .collect())
}

/// Joins externally produced variants to their originals by `item_id`.
/// Unknown and duplicate ids are errors.
pub fn ingest_external_variants(
    path: &Path,
    originals: &BTreeMap<String, String>,
) -> Result<Vec<PerturbedItem>> {
    let variants: Vec<ExternalVariant> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut items = Vec::with_capacity(variants.len());
    for v in variants {
        if !seen.insert(v.item_id.clone()) {
            return Err(Error::InvalidParameter(format!(
                "variant file repeats item_id {}",
                v.item_id
            )));
        }
        let original = originals.get(&v.item_id).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "variant references unknown item_id {}",
                v.item_id
            ))
        })?;
        items.push(PerturbedItem {
            item_id: v.item_id,
            original_text: original.clone(),
            perturbed_text: v.perturbed_text,
            edits: Vec::new(),
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn typo_spec(rate: f64, seed: u64) -> PerturbationSpec {
        PerturbationSpec {
            kind: PerturbKind::Typo,
            rate,
            seed,
            lexicon: None,
        }
    }

    fn sorted_chars(s: &str) -> Vec<char> {
        let mut v: Vec<char> = s.chars().collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn rate_zero_is_identity() {
        let item = perturb_typo("q1", "hello brave new world", &typo_spec(0.0, 7)).unwrap();
        assert_eq!(item.perturbed_text, item.original_text);
        assert!(item.edits.is_empty());
    }

    #[test]
    fn no_eligible_tokens_is_identity() {
        let item = perturb_typo("q1", "ab cd", &typo_spec(1.0, 7)).unwrap();
        assert_eq!(item.perturbed_text, "ab cd");
        assert!(item.edits.is_empty());
    }

    #[test]
    fn twenty_eligible_tokens_rate_five_percent_edits_one() {
        let text = (0..20)
            .map(|i| format!("token{i:02}"))
            .collect::<Vec<_>>()
            .join(" ");
        let item = perturb_typo("q1", &text, &typo_spec(0.05, 7)).unwrap();
        assert_eq!(item.edits.len(), 1);
        // the edited token is an adjacent transposition of the original
        let original: Vec<&str> = item.original_text.split(' ').collect();
        let perturbed: Vec<&str> = item.perturbed_text.split(' ').collect();
        let changed: Vec<usize> = (0..20).filter(|&i| original[i] != perturbed[i]).collect();
        assert!(changed.len() <= 1);
        for &i in &changed {
            assert_eq!(sorted_chars(original[i]), sorted_chars(perturbed[i]));
            let a: Vec<char> = original[i].chars().collect();
            let b: Vec<char> = perturbed[i].chars().collect();
            let diffs: Vec<usize> = (0..a.len()).filter(|&j| a[j] != b[j]).collect();
            assert_eq!(diffs.len(), 2);
            assert_eq!(diffs[1], diffs[0] + 1);
            assert_eq!(a[diffs[0]], b[diffs[1]]);
            assert_eq!(a[diffs[1]], b[diffs[0]]);
            // first and last characters untouched
            assert!(diffs[0] >= 1 && diffs[1] <= a.len() - 2);
        }
    }

    #[test]
    fn whitespace_preserved_exactly() {
        let text = "  leading   and\ttabbed words\n trailing  ";
        let item = perturb_typo("q1", text, &typo_spec(1.0, 3)).unwrap();
        let ws = |s: &str| -> Vec<(usize, char)> {
            s.chars()
                .enumerate()
                .filter(|(_, c)| c.is_whitespace())
                .collect()
        };
        assert_eq!(ws(text), ws(&item.perturbed_text));
    }

    #[test]
    fn deterministic_across_calls() {
        let text = "perturbation output must never depend on call order";
        let a = perturb_typo("item-9", text, &typo_spec(0.5, 123)).unwrap();
        let b = perturb_typo("item-9", text, &typo_spec(0.5, 123)).unwrap();
        assert_eq!(a, b);
        let c = perturb_typo("item-8", text, &typo_spec(0.5, 123)).unwrap();
        assert_ne!(a.perturbed_text, c.perturbed_text);
    }

    #[test]
    fn edit_count_ceil_rule() {
        assert_eq!(edit_count(0.05, 20), 1);
        assert_eq!(edit_count(0.05, 21), 2);
        assert_eq!(edit_count(0.07, 100), 7); // exact despite binary rounding
        assert_eq!(edit_count(0.1, 30), 3);
        assert_eq!(edit_count(1.0, 5), 5);
        assert_eq!(edit_count(0.0, 5), 0);
        assert_eq!(edit_count(0.5, 0), 0);
        assert_eq!(edit_count(0.01, 20), 1); // ceil guarantees one edit
    }

    fn lexicon_spec(rate: f64, seed: u64) -> PerturbationSpec {
        let mut lexicon = BTreeMap::new();
        lexicon.insert("big".to_string(), vec!["large".to_string()]);
        lexicon.insert("cat".to_string(), vec!["feline".to_string()]);
        PerturbationSpec {
            kind: PerturbKind::LexiconSubstitution,
            rate,
            seed,
            lexicon: Some(lexicon),
        }
    }

    #[test]
    fn lexicon_forced_substitution() {
        let item = perturb_lexicon("q1", "a big cat", &lexicon_spec(1.0, 7)).unwrap();
        assert_eq!(item.perturbed_text, "a large feline");
        assert_eq!(item.edits.len(), 2);
        assert!(item.edits.iter().all(|e| e.kind == EditKind::Substitute));
    }

    #[test]
    fn lexicon_preserves_first_letter_case() {
        let item = perturb_lexicon("q1", "Big ideas", &lexicon_spec(1.0, 7)).unwrap();
        assert_eq!(item.perturbed_text, "Large ideas");
    }

    #[test]
    fn lexicon_no_hits_is_identity() {
        let item = perturb_lexicon("q1", "nothing matches here", &lexicon_spec(1.0, 7)).unwrap();
        assert_eq!(item.perturbed_text, "nothing matches here");
        assert!(item.edits.is_empty());
    }

    #[test]
    fn lexicon_spec_requires_lexicon() {
        let spec = PerturbationSpec {
            kind: PerturbKind::LexiconSubstitution,
            rate: 0.5,
            seed: 1,
            lexicon: None,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn external_variants_join_and_reject_unknown_ids() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("variants.jsonl");
        let mut originals = BTreeMap::new();
        originals.insert("q1".to_string(), "first question".to_string());
        originals.insert("q2".to_string(), "second question".to_string());

        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"item_id":"q1","perturbed_text":"first question?"}}"#).unwrap();
        writeln!(f, r#"{{"item_id":"q2","perturbed_text":"2nd question"}}"#).unwrap();
        drop(f);
        let items = ingest_external_variants(&path, &originals).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].original_text, "first question");
        assert!(items[0].edits.is_empty());

        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"item_id":"missing","perturbed_text":"x"}}"#).unwrap();
        drop(f);
        let err = ingest_external_variants(&path, &originals).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");

        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"item_id":"q1","perturbed_text":"x"}}"#).unwrap();
        writeln!(f, r#"{{"item_id":"q1","perturbed_text":"y"}}"#).unwrap();
        drop(f);
        assert!(ingest_external_variants(&path, &originals).is_err());
    }
}
