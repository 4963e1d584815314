//! Deterministic in-process scorers for desk-scale runs and tests.
//!
//! Mocks see only the request text, like a real backend. They split it into
//! context and stem, recognise the stem's item by the text after the slot, and
//! score the five alternatives:
//!
//! * `Uniform` gives every alternative the same score.
//! * `Lexicon` reads trait cues from the context. A cue found in a sentence
//!   that also contains one of the answer adverbs is scaled by that adverb's
//!   modifier rating, so "I am never the life of the party" pushes
//!   extroversion down. Each item then prefers the answer nearest
//!   `3 + bias + polarity * gain * push`.
//! * `Copycat` answers an item with the adverb it finds when the same sentence
//!   appears verbatim in the context, over a weakened lexicon background.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocol::{BackendInfo, ScoreRequest, ScoreResponse, PROTOCOL_VERSION};
use super::Backend;
use crate::error::{Error, Result};
use crate::item_bank::{ItemBank, PerTrait, Polarity, ResponseChoice, Trait, BLANK};
use crate::prompt::RenderMode;

pub const MOCK_MASK_TOKEN: &str = "[MASK]";
pub const MOCK_MAX_TOKENS: usize = 512;

const ITEM_CUE_STRENGTH: f64 = 1.0;
const FREE_TEXT_CUE_STRENGTH: f64 = 2.0;
const BIAS_SPAN: f64 = 0.75;
const ECHO_BONUS: f64 = 100.0;

/// Cue words for free-text contexts: (phrase, trait, direction).
const FREE_TEXT_CUES: &[(&str, Trait, Polarity)] = &[
    ("friendly", Trait::E, Polarity::Positive),
    ("outgoing", Trait::E, Polarity::Positive),
    ("talkative", Trait::E, Polarity::Positive),
    ("sociable", Trait::E, Polarity::Positive),
    ("extrovert", Trait::E, Polarity::Positive),
    ("extroverted", Trait::E, Polarity::Positive),
    ("energetic", Trait::E, Polarity::Positive),
    ("shy", Trait::E, Polarity::Negative),
    ("quiet", Trait::E, Polarity::Negative),
    ("reserved", Trait::E, Polarity::Negative),
    ("introvert", Trait::E, Polarity::Negative),
    ("introverted", Trait::E, Polarity::Negative),
    ("don't like people", Trait::E, Polarity::Negative),
    ("kind", Trait::A, Polarity::Positive),
    ("loyal", Trait::A, Polarity::Positive),
    ("caring", Trait::A, Polarity::Positive),
    ("polite", Trait::A, Polarity::Positive),
    ("helpful", Trait::A, Polarity::Positive),
    ("big heart", Trait::A, Polarity::Positive),
    ("rude", Trait::A, Polarity::Negative),
    ("selfish", Trait::A, Polarity::Negative),
    ("stubborn", Trait::A, Polarity::Negative),
    ("asshole", Trait::A, Polarity::Negative),
    ("organized", Trait::C, Polarity::Positive),
    ("reliable", Trait::C, Polarity::Positive),
    ("disciplined", Trait::C, Polarity::Positive),
    ("hard working", Trait::C, Polarity::Positive),
    ("punctual", Trait::C, Polarity::Positive),
    ("lazy", Trait::C, Polarity::Negative),
    ("messy", Trait::C, Polarity::Negative),
    ("disorganized", Trait::C, Polarity::Negative),
    ("procrastinate", Trait::C, Polarity::Negative),
    ("lack of motivation", Trait::C, Polarity::Negative),
    ("calm", Trait::ES, Polarity::Positive),
    ("relaxed", Trait::ES, Polarity::Positive),
    ("laid back", Trait::ES, Polarity::Positive),
    ("patient", Trait::ES, Polarity::Positive),
    ("anxious", Trait::ES, Polarity::Negative),
    ("anxiety", Trait::ES, Polarity::Negative),
    ("moody", Trait::ES, Polarity::Negative),
    ("stressed", Trait::ES, Polarity::Negative),
    ("nervous", Trait::ES, Polarity::Negative),
    ("irritable", Trait::ES, Polarity::Negative),
    ("curious", Trait::OE, Polarity::Positive),
    ("creative", Trait::OE, Polarity::Positive),
    ("imaginative", Trait::OE, Polarity::Positive),
    ("open minded", Trait::OE, Polarity::Positive),
    ("open-minded", Trait::OE, Polarity::Positive),
    ("artistic", Trait::OE, Polarity::Positive),
    ("conventional", Trait::OE, Polarity::Negative),
    ("boring", Trait::OE, Polarity::Negative),
];

/// One entry of a lexicon: finding `phrase` moves `trait` in `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub phrase: String,
    #[serde(rename = "trait")]
    pub r#trait: Trait,
    pub direction: Polarity,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    cues: Vec<Cue>,
}

impl Lexicon {
    pub fn new(cues: Vec<Cue>) -> Lexicon {
        let mut cues: Vec<Cue> = cues
            .into_iter()
            .map(|c| Cue {
                phrase: normalize(&c.phrase),
                ..c
            })
            .filter(|c| !c.phrase.is_empty())
            .collect();
        // Longest phrases claim text first so "seldom feel blue" beats "feel blue".
        cues.sort_by(|a, b| b.phrase.len().cmp(&a.phrase.len()).then(a.phrase.cmp(&b.phrase)));
        cues.dedup_by(|a, b| a.phrase == b.phrase);
        Lexicon { cues }
    }

    /// Item statements of `bank` plus the built-in free-text cue words.
    pub fn for_bank(bank: &ItemBank) -> Lexicon {
        let mut cues = Vec::new();
        for item in bank.items() {
            for template in [&item.first_person, &item.third_person] {
                if let Some((_, tail)) = template.split_once(BLANK) {
                    cues.push(Cue {
                        phrase: tail.to_string(),
                        r#trait: item.r#trait,
                        direction: item.polarity,
                        strength: ITEM_CUE_STRENGTH,
                    });
                }
            }
        }
        cues.extend(FREE_TEXT_CUES.iter().map(|(phrase, t, dir)| Cue {
            phrase: phrase.to_string(),
            r#trait: *t,
            direction: *dir,
            strength: FREE_TEXT_CUE_STRENGTH,
        }));
        Lexicon::new(cues)
    }

    pub fn cues(&self) -> &[Cue] {
        &self.cues
    }

    /// Net signed push per trait carried by `context`.
    pub fn push(&self, context: &str) -> PerTrait<f64> {
        let mut push = PerTrait([0.0; 5]);
        for sentence in context.split(['.', '!', '?', ';', '\n']) {
            let sentence = normalize(sentence);
            if sentence.is_empty() {
                continue;
            }
            let multiplier = sentence
                .split(|c: char| !is_word_char(c))
                .find_map(ResponseChoice::from_label)
                .map_or(1.0, |c| f64::from(c.modifier_rating()));
            let mut claimed: Vec<(usize, usize)> = Vec::new();
            for cue in &self.cues {
                for (start, end) in bounded_matches(&sentence, &cue.phrase) {
                    if claimed.iter().any(|&(s, e)| start < e && s < end) {
                        continue;
                    }
                    claimed.push((start, end));
                    let delta = f64::from(cue.direction.sign()) * cue.strength * multiplier;
                    push.set(cue.r#trait, push.get(cue.r#trait) + delta);
                }
            }
        }
        push
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Lowercase, curly apostrophes straightened, whitespace collapsed, edge punctuation trimmed.
fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
        .to_string()
}

/// Byte ranges where `phrase` occurs in `text` as whole words.
fn bounded_matches(text: &str, phrase: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(phrase) {
        let start = from + pos;
        let end = start + phrase.len();
        let before_ok = text[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = text[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push((start, end));
        }
        from = start + text[start..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockKind {
    Uniform,
    Copycat,
    Lexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScorerSpec {
    pub kind: MockKind,
    pub seed: u64,
    /// Answer shift per unit of cue push.
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Scale of the lexicon background under `Copycat`.
    #[serde(default = "default_copy_background")]
    pub copy_background: f64,
    /// Replaces the bank-derived lexicon when set.
    #[serde(default)]
    pub lexicon: Option<Lexicon>,
}

fn default_gain() -> f64 {
    1.0
}

fn default_copy_background() -> f64 {
    0.25
}

impl MockScorerSpec {
    pub fn new(kind: MockKind, seed: u64) -> Self {
        MockScorerSpec {
            kind,
            seed,
            gain: default_gain(),
            copy_background: default_copy_background(),
            lexicon: None,
        }
    }

    pub fn with_lexicon(mut self, lexicon: Lexicon) -> Self {
        self.lexicon = Some(lexicon);
        self
    }
}

impl fmt::Display for MockScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MockKind::Uniform => "uniform",
            MockKind::Copycat => "copycat",
            MockKind::Lexicon => "lexicon",
        };
        write!(f, "mock:{kind}:{}", self.seed)
    }
}

impl FromStr for MockScorerSpec {
    type Err = Error;

    /// `mock:<kind>[:<seed>]`, seed defaulting to 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        if parts.next() != Some("mock") {
            return Err(Error::Config(format!("not a mock backend: {s:?}")));
        }
        let kind = match parts.next().map(str::to_ascii_lowercase).as_deref() {
            Some("uniform") => MockKind::Uniform,
            Some("copycat") => MockKind::Copycat,
            Some("lexicon") => MockKind::Lexicon,
            other => {
                return Err(Error::Config(format!(
                    "unknown mock kind {other:?} (uniform, copycat, lexicon)"
                )))
            }
        };
        let seed = match parts.next() {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("bad mock seed {raw:?}")))?,
            None => 0,
        };
        Ok(MockScorerSpec::new(kind, seed))
    }
}

struct ParsedProbe {
    context: String,
    stem_prefix: String,
    stem_suffix: String,
    labels: Vec<String>,
    truncated: bool,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockScorerSpec,
    lexicon: Lexicon,
    /// Normalized text after the slot -> (trait, polarity).
    stems: HashMap<String, (Trait, Polarity)>,
}

impl MockBackend {
    pub fn new(spec: MockScorerSpec, bank: &ItemBank) -> MockBackend {
        let lexicon = spec.lexicon.clone().unwrap_or_else(|| Lexicon::for_bank(bank));
        let mut stems = HashMap::new();
        for item in bank.items() {
            for template in [&item.first_person, &item.third_person] {
                if let Some((_, tail)) = template.split_once(BLANK) {
                    stems.insert(normalize(tail), (item.r#trait, item.polarity));
                }
            }
        }
        MockBackend { spec, lexicon, stems }
    }

    pub fn spec(&self) -> &MockScorerSpec {
        &self.spec
    }

    fn model_id(&self) -> String {
        self.spec.to_string()
    }

    fn parse(&self, request: &ScoreRequest) -> Result<ParsedProbe> {
        let (prefix, suffix, labels) = match request.mode {
            RenderMode::MaskedSlot => {
                let text = request.text.as_deref().unwrap_or_default();
                let (prefix, suffix) = text
                    .split_once(MOCK_MASK_TOKEN)
                    .ok_or_else(|| Error::Rejected(format!("masked text lacks the {MOCK_MASK_TOKEN} token")))?;
                if suffix.contains(MOCK_MASK_TOKEN) {
                    return Err(Error::Rejected("masked text has more than one mask token".into()));
                }
                let labels = request.candidates.clone().unwrap_or_default();
                if labels.iter().any(|c| c.split_whitespace().count() != 1) {
                    return Err(Error::Rejected("masked candidates must be single tokens".into()));
                }
                (prefix.to_string(), suffix.to_string(), labels)
            }
            RenderMode::CandidateSentences => {
                let texts = request.texts.as_deref().unwrap_or_default();
                let (p, s) = common_affixes(texts);
                let labels = texts.iter().map(|t| t[p..t.len() - s].to_string()).collect();
                (
                    texts[0][..p].to_string(),
                    texts[0][texts[0].len() - s..].to_string(),
                    labels,
                )
            }
        };
        let boundary = sentence_boundary(&prefix);
        let (context, stem_prefix) = prefix.split_at(boundary);
        let mut context = context.trim().to_string();
        let stem_words = stem_prefix.split_whitespace().count() + suffix.split_whitespace().count() + 1;
        let budget = MOCK_MAX_TOKENS.saturating_sub(stem_words);
        let words: Vec<&str> = context.split_whitespace().collect();
        let truncated = words.len() > budget;
        if truncated {
            context = words[words.len() - budget..].join(" ");
        }
        Ok(ParsedProbe {
            context,
            stem_prefix: stem_prefix.to_string(),
            stem_suffix: suffix,
            labels,
            truncated,
        })
    }

    fn bias(&self, stem_key: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(self.spec.seed.to_le_bytes());
        h.update(stem_key.as_bytes());
        let digest = h.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        ChaCha8Rng::seed_from_u64(seed).gen_range(-BIAS_SPAN..=BIAS_SPAN)
    }

    fn lexicon_scores(&self, probe: &ParsedProbe, push_scale: f64) -> Vec<f64> {
        let key = normalize(&probe.stem_suffix);
        let mut target = 3.0 + self.bias(&key);
        if let Some(&(t, polarity)) = self.stems.get(&key) {
            let push = self.lexicon.push(&probe.context).get(t);
            target += f64::from(polarity.sign()) * self.spec.gain * push_scale * push;
        }
        let target = target.clamp(1.0, 5.0);
        probe
            .labels
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let value = ResponseChoice::from_label(label).map_or(i as i32 + 1, |c| c.value());
                -(f64::from(value) - target).powi(2)
            })
            .collect()
    }
}

/// Byte lengths of the longest common prefix and suffix, on char boundaries and non-overlapping.
fn common_affixes(texts: &[String]) -> (usize, usize) {
    let first = texts[0].as_str();
    let mut prefix = first.len();
    let mut suffix = first.len();
    for t in &texts[1..] {
        let p = first
            .char_indices()
            .zip(t.chars())
            .take_while(|((_, a), b)| a == b)
            .last()
            .map_or(0, |((i, c), _)| i + c.len_utf8());
        prefix = prefix.min(p);
        let s: usize = first
            .chars()
            .rev()
            .zip(t.chars().rev())
            .take_while(|(a, b)| a == b)
            .map(|(a, _)| a.len_utf8())
            .sum();
        suffix = suffix.min(s);
    }
    let shortest = texts.iter().map(String::len).min().unwrap_or(0);
    if prefix + suffix > shortest {
        suffix = shortest - prefix;
        while !first.is_char_boundary(first.len() - suffix) {
            suffix -= 1;
        }
    }
    (prefix, suffix)
}

/// Start of the final sentence in `prefix`: just past the last terminator + whitespace.
fn sentence_boundary(prefix: &str) -> usize {
    let mut boundary = 0;
    let mut chars = prefix.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        let terminator = matches!(c, '.' | '!' | '?');
        if c == '\n' {
            boundary = chars.peek().map_or(prefix.len(), |&(j, _)| j);
        } else if terminator {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    boundary = j + next.len_utf8();
                }
            }
        }
    }
    boundary
}

impl Backend for MockBackend {
    fn info(&self) -> Result<BackendInfo> {
        Ok(BackendInfo {
            model_id: self.model_id(),
            max_tokens: MOCK_MAX_TOKENS,
            mask_token: Some(MOCK_MASK_TOKEN.to_string()),
            protocol_version: Some(PROTOCOL_VERSION.to_string()),
        })
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        request.validate()?;
        let probe = self.parse(request)?;
        let log_scores = match self.spec.kind {
            MockKind::Uniform => vec![0.0; 5],
            MockKind::Lexicon => self.lexicon_scores(&probe, 1.0),
            MockKind::Copycat => {
                let mut scores = self.lexicon_scores(&probe, self.spec.copy_background);
                let context = format!(" {} ", normalize(&probe.context));
                for (score, label) in scores.iter_mut().zip(&probe.labels) {
                    let sentence = normalize(&format!("{}{}{}", probe.stem_prefix, label, probe.stem_suffix));
                    if !bounded_matches(&context, &sentence).is_empty() {
                        *score += ECHO_BONUS;
                    }
                }
                scores
            }
        };
        Ok(ScoreResponse {
            log_scores,
            truncated: probe.truncated,
            model_id: self.model_id(),
            protocol_version: Some(PROTOCOL_VERSION.to_string()),
        })
    }
}
