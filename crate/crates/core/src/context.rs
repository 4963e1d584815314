//! Manipulation contexts: the item-context grid and free-text corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assessment::ContextSpec;
use crate::error::{Error, Result};
use crate::item_bank::{ItemBank, ResponseChoice, Trait, TraitScores};
use crate::stats::quantile;

/// Where a free-text context came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocSource {
    Reddit,
    SurveyDirected,
    SurveyUndirected,
    Other,
}

impl DocSource {
    pub fn is_survey(self) -> bool {
        matches!(self, DocSource::SurveyDirected | DocSource::SurveyUndirected)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocSource::Reddit => "reddit",
            DocSource::SurveyDirected => "survey_directed",
            DocSource::SurveyUndirected => "survey_undirected",
            DocSource::Other => "other",
        }
    }
}

impl fmt::Display for DocSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (context item, modifier) pair of a trait's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    #[serde(rename = "trait")]
    pub r#trait: Trait,
    pub context_item_id: u32,
    pub modifier: ResponseChoice,
    /// Expected behaviour rating: item polarity times modifier rating.
    pub r_cm: i32,
}

impl GridCell {
    pub fn context(&self) -> ContextSpec {
        ContextSpec::Item {
            item_id: self.context_item_id,
            modifier: self.modifier,
        }
    }
}

/// Every item of `t` as context once, under each of the five modifiers.
pub fn build_grid(bank: &ItemBank, t: Trait) -> Vec<GridCell> {
    bank.items_for(t)
        .flat_map(|item| {
            ResponseChoice::ALL.into_iter().map(move |modifier| GridCell {
                r#trait: t,
                context_item_id: item.id,
                modifier,
                r_cm: item.polarity.sign() * modifier.modifier_rating(),
            })
        })
        .collect()
}

/// Expected rating of an item context, if `spec` is one.
pub fn r_cm(bank: &ItemBank, spec: &ContextSpec) -> Result<Option<i32>> {
    match spec {
        ContextSpec::Item { item_id, modifier } => {
            let item = bank.item(*item_id)?;
            Ok(Some(item.polarity.sign() * modifier.modifier_rating()))
        }
        _ => Ok(None),
    }
}

/// A prepared free-text context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub source: DocSource,
    pub text: String,
    pub word_count: usize,
    /// Whitespace-token estimate; the backend owns the real tokenizer.
    pub token_estimate: usize,
    #[serde(default)]
    pub truncated: bool,
    /// Questionnaire scores of the author, for survey documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_scores: Option<TraitScores>,
}

impl CorpusDoc {
    pub fn new(doc_id: impl Into<String>, source: DocSource, text: &str) -> CorpusDoc {
        let text = normalize_text(text);
        let words = word_count(&text);
        CorpusDoc {
            doc_id: doc_id.into(),
            source,
            text,
            word_count: words,
            token_estimate: words,
            truncated: false,
            subject_scores: None,
        }
    }

    pub fn with_subject_scores(mut self, scores: TraitScores) -> CorpusDoc {
        self.subject_scores = Some(scores);
        self
    }

    pub fn context(&self) -> ContextSpec {
        ContextSpec::FreeText {
            doc_id: self.doc_id.clone(),
            source: self.source,
            text: self.text.clone(),
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Unifies line endings and trims the ends; nothing else is touched.
pub fn normalize_text(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n").trim().to_string()
}

/// A survey answer, given either as the Likert value or as the adverb.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum RawAnswer {
    Value(i32),
    Label(ResponseChoice),
}

#[derive(Debug, Deserialize)]
struct RawDoc {
    doc_id: String,
    source: DocSource,
    text: String,
    #[serde(default)]
    subject_responses: Option<BTreeMap<u32, RawAnswer>>,
}

/// Reads a corpus JSONL file (`doc_id`, `source`, `text`, optional `subject_responses`).
pub fn read_corpus(path: impl AsRef<Path>, bank: &ItemBank) -> Result<Vec<CorpusDoc>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file), &path.display().to_string(), bank)
}

pub fn parse_corpus(reader: impl BufRead, origin: &str, bank: &ItemBank) -> Result<Vec<CorpusDoc>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{origin}:{}", n + 1);
        let parse_err = |message: String| Error::Parse {
            origin: at.clone(),
            message,
        };
        let raw: RawDoc = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(raw.doc_id.clone()) {
            return Err(parse_err(format!("duplicate doc_id {:?}", raw.doc_id)));
        }
        let mut doc = CorpusDoc::new(raw.doc_id, raw.source, &raw.text);
        if doc.text.is_empty() {
            return Err(parse_err("empty text".into()));
        }
        match (raw.source.is_survey(), raw.subject_responses) {
            (true, Some(answers)) => {
                let mut responses = BTreeMap::new();
                for (id, answer) in answers {
                    let choice = match answer {
                        RawAnswer::Value(v) => ResponseChoice::from_value(v)
                            .ok_or_else(|| parse_err(format!("item {id}: response {v} outside 1..5")))?,
                        RawAnswer::Label(c) => c,
                    };
                    bank.item(id).map_err(|e| parse_err(e.to_string()))?;
                    responses.insert(id, choice);
                }
                let scores = bank.score_responses(&responses).map_err(|e| parse_err(e.to_string()))?;
                doc.subject_scores = Some(scores);
            }
            (true, None) => return Err(parse_err("survey document without subject_responses".into())),
            (false, Some(_)) => return Err(parse_err(format!("{} document carries subject_responses", raw.source))),
            (false, None) => {}
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Keeps the first `limit` whitespace tokens. Idempotent.
pub fn truncate(doc: &CorpusDoc, limit: usize) -> CorpusDoc {
    assert!(limit > 0, "truncation limit must be positive");
    if doc.token_estimate <= limit {
        return doc.clone();
    }
    // Cut the original text right after the limit-th token so spacing survives.
    let mut end = 0;
    let mut tokens = 0;
    let mut in_token = false;
    for (i, ch) in doc.text.char_indices() {
        if ch.is_whitespace() {
            if in_token {
                tokens += 1;
                in_token = false;
                if tokens == limit {
                    break;
                }
            }
        } else {
            in_token = true;
            end = i + ch.len_utf8();
        }
    }
    let text = doc.text[..end].to_string();
    let words = word_count(&text);
    CorpusDoc {
        text,
        word_count: words,
        token_estimate: words,
        truncated: true,
        ..doc.clone()
    }
}

/// Quantity the IQR fences are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IqrVariable {
    WordCount,
    SubjectScore(Trait),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    /// Tukey fences `[Q1 - k*IQR, Q3 + k*IQR]`.
    IqrOutlier {
        k: f64,
        variable: IqrVariable,
    },
    MinWords {
        threshold: usize,
    },
}

impl FilterSpec {
    pub fn iqr() -> FilterSpec {
        FilterSpec::IqrOutlier {
            k: 1.5,
            variable: IqrVariable::WordCount,
        }
    }

    pub fn min_words(threshold: usize) -> FilterSpec {
        FilterSpec::MinWords { threshold }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FilterSpec::MinWords { threshold: 0 } => Err(Error::Config("min-words threshold must be positive".into())),
            FilterSpec::IqrOutlier { k, .. } if !(k.is_finite() && *k >= 0.0) => {
                Err(Error::Config(format!("IQR multiplier must be non-negative, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSpec::MinWords { threshold } => write!(f, "min-words:{threshold}"),
            FilterSpec::IqrOutlier { k, variable } => {
                f.write_str("iqr")?;
                if let IqrVariable::SubjectScore(t) = variable {
                    write!(f, ":score:{t}")?;
                }
                if *k != 1.5 {
                    write!(f, ":k={k}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    /// `min-words:<n>`, `iqr`, `iqr:k=<k>`, `iqr:score:<trait>[:k=<k>]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown filter {s:?}"));
        let mut parts = s.trim().split(':');
        let spec = match parts.next() {
            Some("min-words") => {
                let n = parts.next().and_then(|n| n.parse().ok()).ok_or_else(bad)?;
                FilterSpec::MinWords { threshold: n }
            }
            Some("iqr") => {
                let mut k = 1.5;
                let mut variable = IqrVariable::WordCount;
                while let Some(p) = parts.next() {
                    if p == "score" {
                        let t = parts.next().and_then(Trait::from_code).ok_or_else(bad)?;
                        variable = IqrVariable::SubjectScore(t);
                    } else if let Some(v) = p.strip_prefix("k=") {
                        k = v.parse().map_err(|_| bad())?;
                    } else {
                        return Err(bad());
                    }
                }
                FilterSpec::IqrOutlier { k, variable }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn iqr_value(doc: &CorpusDoc, variable: IqrVariable) -> Option<f64> {
    match variable {
        IqrVariable::WordCount => Some(doc.word_count as f64),
        IqrVariable::SubjectScore(t) => doc.subject_scores.map(|s| f64::from(s.get(t))),
    }
}

/// Tukey fences of `values`.
pub fn tukey_fences(values: &[f64], k: f64) -> Option<(f64, f64)> {
    let q1 = quantile(values, 0.25)?;
    let q3 = quantile(values, 0.75)?;
    let iqr = q3 - q1;
    Some((q1 - k * iqr, q3 + k * iqr))
}

type Predicate = Box<dyn Fn(&CorpusDoc) -> bool + Sync>;

/// Drops documents failing any filter. Fences are computed once on the full
/// input, so the order of `filters` does not matter. Documents lacking the
/// fenced variable are dropped by that filter.
pub fn apply_filters(docs: &[CorpusDoc], filters: &[FilterSpec]) -> Result<Vec<CorpusDoc>> {
    let mut predicates: Vec<Predicate> = Vec::new();
    for filter in filters {
        filter.validate()?;
        match *filter {
            FilterSpec::MinWords { threshold } => {
                predicates.push(Box::new(move |d: &CorpusDoc| d.word_count >= threshold))
            }
            FilterSpec::IqrOutlier { k, variable } => {
                let values: Vec<f64> = docs.iter().filter_map(|d| iqr_value(d, variable)).collect();
                let Some((lo, hi)) = tukey_fences(&values, k) else {
                    predicates.push(Box::new(|_: &CorpusDoc| false));
                    continue;
                };
                predicates.push(Box::new(move |d: &CorpusDoc| {
                    iqr_value(d, variable).is_some_and(|v| v >= lo && v <= hi)
                }));
            }
        }
    }
    Ok(docs
        .par_iter()
        .filter(|d| predicates.iter().all(|p| p(d)))
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_with_words(id: &str, n: usize) -> CorpusDoc {
        let text = vec!["word"; n].join(" ");
        CorpusDoc::new(id, DocSource::Reddit, &text)
    }

    #[test]
    fn grid_shape_for_every_trait() {
        let bank = ItemBank::ipip50();
        for t in Trait::ALL {
            let grid = build_grid(&bank, t);
            assert_eq!(grid.len(), 50);
            assert_eq!(grid.iter().map(|c| c.r_cm.abs()).sum::<i32>(), 60);
            assert_eq!(grid.iter().filter(|c| c.r_cm == 0).count(), 10);
            assert!(grid.iter().all(|c| c.r#trait == t));
        }
    }

    #[test]
    fn grid_examples() {
        let bank = ItemBank::ipip50();
        let grid = build_grid(&bank, Trait::E);
        let cell = |id, m| {
            grid.iter()
                .find(|c| c.context_item_id == id && c.modifier == m)
                .unwrap()
                .r_cm
        };
        assert_eq!(cell(1, ResponseChoice::Never), -2);
        assert_eq!(cell(6, ResponseChoice::Always), -2);
        assert_eq!(cell(6, ResponseChoice::Rarely), 1);
        assert_eq!(cell(1, ResponseChoice::Sometimes), 0);
    }

    #[test]
    fn polarity_flip_negates_ratings() {
        let bank = ItemBank::ipip50();
        for item in bank.items() {
            for m in ResponseChoice::ALL {
                let r = item.polarity.sign() * m.modifier_rating();
                let flipped = item.polarity.flipped().sign() * m.modifier_rating();
                assert_eq!(r, -flipped);
            }
        }
    }

    #[test]
    fn truncation() {
        let short = doc_with_words("a", 40);
        assert_eq!(truncate(&short, 512), short);

        let long = doc_with_words("b", 2000);
        let cut = truncate(&long, 512);
        assert!(cut.truncated);
        assert_eq!(cut.token_estimate, 512);
        assert!(long.text.starts_with(&cut.text));
        assert_eq!(truncate(&cut, 512), cut);

        let one = truncate(&CorpusDoc::new("c", DocSource::Other, "first  second\nthird"), 1);
        assert_eq!(one.text, "first");
    }

    #[test]
    fn ingestion_normalizes_and_scores_subjects() {
        let bank = ItemBank::ipip50();
        let answers: BTreeMap<String, i32> = (1..=50).map(|i| (i.to_string(), 3)).collect();
        let survey = serde_json::json!({
            "doc_id": "s1", "source": "survey_directed",
            "text": "  I like people.\r\nMostly.  ", "subject_responses": answers,
        });
        let reddit = serde_json::json!({"doc_id": "r1", "source": "reddit", "text": "Hi THERE!"});
        let input = format!("{survey}\n\n{reddit}\n");
        let docs = parse_corpus(input.as_bytes(), "mem", &bank).unwrap();
        assert_eq!(docs[0].text, "I like people.\nMostly.");
        assert_eq!(docs[0].subject_scores.unwrap(), PerTrait([20; 5]));
        assert_eq!(docs[1].text, "Hi THERE!");
        assert_eq!(docs[1].word_count, 2);
        assert!(docs[1].subject_scores.is_none());

        let bad = r#"{"doc_id":"x","source":"survey_undirected","text":"t"}"#;
        assert!(parse_corpus(bad.as_bytes(), "mem", &bank).is_err());
        let dup = format!("{reddit}\n{reddit}\n");
        assert!(parse_corpus(dup.as_bytes(), "mem", &bank).is_err());
    }

    use crate::item_bank::PerTrait;

    #[test]
    fn min_words_filter() {
        let docs = vec![doc_with_words("sixty", 60), doc_with_words("eighty", 80)];
        let kept = apply_filters(&docs, &[FilterSpec::min_words(75)]).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].doc_id, "eighty");
        assert_eq!(apply_filters(&docs, &[]).unwrap(), docs);
    }

    #[test]
    fn iqr_filter_hand_computed() {
        let mut counts = vec![10usize];
        counts.extend(100..=110);
        counts.push(900);
        let docs: Vec<_> = counts.iter().map(|&n| doc_with_words(&n.to_string(), n)).collect();
        let values: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
        // 13 values: Q1 at rank 3 (102), Q3 at rank 9 (108), IQR 6.
        assert_eq!(tukey_fences(&values, 1.5), Some((93.0, 117.0)));
        let kept = apply_filters(&docs, &[FilterSpec::iqr()]).unwrap();
        let ids: Vec<_> = kept.iter().map(|d| d.word_count).collect();
        assert_eq!(ids, (100..=110).collect::<Vec<_>>());
    }

    #[test]
    fn filter_parsing() {
        assert_eq!("min-words:75".parse::<FilterSpec>().unwrap(), FilterSpec::min_words(75));
        assert_eq!("iqr".parse::<FilterSpec>().unwrap(), FilterSpec::iqr());
        assert_eq!(
            "iqr:score:ES:k=3".parse::<FilterSpec>().unwrap(),
            FilterSpec::IqrOutlier {
                k: 3.0,
                variable: IqrVariable::SubjectScore(Trait::ES)
            }
        );
        assert!("min-words:0".parse::<FilterSpec>().is_err());
        assert!("iqr:bogus".parse::<FilterSpec>().is_err());
        for s in ["min-words:100", "iqr", "iqr:score:E", "iqr:k=2"] {
            assert_eq!(s.parse::<FilterSpec>().unwrap().to_string(), s);
        }
    }

    proptest! {
        #[test]
        fn raising_min_words_never_adds(counts in prop::collection::vec(1usize..300, 0..40), a in 1usize..300, b in 1usize..300) {
            let docs: Vec<_> = counts.iter().enumerate().map(|(i, &n)| doc_with_words(&i.to_string(), n)).collect();
            let (lo, hi) = (a.min(b), a.max(b));
            let loose = apply_filters(&docs, &[FilterSpec::min_words(lo)]).unwrap();
            let strict = apply_filters(&docs, &[FilterSpec::min_words(hi)]).unwrap();
            prop_assert!(strict.iter().all(|d| loose.contains(d)));
        }

        #[test]
        fn filter_order_irrelevant(counts in prop::collection::vec(1usize..300, 0..40), t in 1usize..300) {
            let docs: Vec<_> = counts.iter().enumerate().map(|(i, &n)| doc_with_words(&i.to_string(), n)).collect();
            let ab = apply_filters(&docs, &[FilterSpec::iqr(), FilterSpec::min_words(t)]).unwrap();
            let ba = apply_filters(&docs, &[FilterSpec::min_words(t), FilterSpec::iqr()]).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn truncate_idempotent(n in 1usize..200, limit in 1usize..100) {
            let d = doc_with_words("d", n);
            let once = truncate(&d, limit);
            prop_assert!(once.token_estimate <= limit);
            prop_assert_eq!(truncate(&once, limit), once.clone());
        }
    }
}
