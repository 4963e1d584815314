//! Rendering of items, answer candidates and contexts into scorable text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assessment::ContextSpec;
use crate::error::{Error, Result};
use crate::item_bank::{Item, ItemBank, ResponseChoice, BLANK, NAME};

/// Abstract slot marker emitted in masked probes. The gateway swaps it for the
/// backend's real mask token.
pub const SLOT_MARKER: &str = "{MASK}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RenderMode {
    /// One stem with a single slot; the backend ranks the five fills.
    #[serde(rename = "masked")]
    MaskedSlot,
    /// Five complete sentences, one per answer choice.
    #[serde(rename = "sequence")]
    CandidateSentences,
}

impl RenderMode {
    pub fn wire_name(self) -> &'static str {
        match self {
            RenderMode::MaskedSlot => "masked",
            RenderMode::CandidateSentences => "sequence",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "masked" | "masked-slot" | "mask" => Ok(RenderMode::MaskedSlot),
            "sequence" | "candidate-sentences" | "causal" => Ok(RenderMode::CandidateSentences),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected masked or sequence)"
            ))),
        }
    }
}

/// Who the questionnaire is about.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Persona {
    #[default]
    FirstPerson,
    Named {
        name: String,
    },
}

impl Persona {
    pub fn named(name: impl Into<String>) -> Persona {
        Persona::Named { name: name.into() }
    }

    fn validated_name(&self) -> Result<Option<&str>> {
        match self {
            Persona::FirstPerson => Ok(None),
            Persona::Named { name } => {
                let name = name.trim();
                if name.is_empty() {
                    Err(Error::MissingName)
                } else {
                    Ok(Some(name))
                }
            }
        }
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Persona::FirstPerson => f.write_str("first"),
            Persona::Named { name } => write!(f, "name:{name}"),
        }
    }
}

impl FromStr for Persona {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("first") || s.eq_ignore_ascii_case("first-person") {
            return Ok(Persona::FirstPerson);
        }
        match s.split_once(':') {
            Some((kind, name)) if kind.eq_ignore_ascii_case("name") => {
                if name.trim().is_empty() {
                    Err(Error::MissingName)
                } else {
                    Ok(Persona::named(name.trim()))
                }
            }
            _ => Err(Error::Config(format!(
                "unknown persona {s:?} (expected first or name:<Name>)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProbeBody {
    Masked { stem: String },
    Sequence { candidates: Vec<String> },
}

/// A fully rendered question, ready to be turned into a score request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RenderedProbe {
    pub item_id: u32,
    pub mode: RenderMode,
    pub context_text: String,
    /// Stem or candidates without the context prefix.
    pub body: ProbeBody,
    separator: String,
}

impl RenderedProbe {
    pub fn choice_order(&self) -> [ResponseChoice; 5] {
        ResponseChoice::ALL
    }

    /// Scorable texts with the context prefixed: one stem, or five sentences.
    pub fn texts(&self) -> Vec<String> {
        match &self.body {
            ProbeBody::Masked { stem } => {
                vec![join_context(&self.context_text, stem, &self.separator)]
            }
            ProbeBody::Sequence { candidates } => candidates
                .iter()
                .map(|c| join_context(&self.context_text, c, &self.separator))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Text placed between the context and the stem.
    pub separator: String,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            separator: " ".to_string(),
        }
    }
}

/// Appends a period when the context lacks terminal punctuation, then joins.
pub fn join_context(context: &str, stem: &str, separator: &str) -> String {
    let context = context.trim_end();
    if context.is_empty() {
        return stem.to_string();
    }
    let last = context
        .trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}'])
        .chars()
        .last();
    let terminated = matches!(last, Some('.' | '!' | '?' | '\u{2026}'));
    let mut out = String::with_capacity(context.len() + stem.len() + 2);
    out.push_str(context);
    if !terminated {
        out.push('.');
    }
    out.push_str(separator);
    out.push_str(stem);
    out
}

/// Substitutes the persona and `fill` into the item's template.
pub fn fill_template(item: &Item, persona: &Persona, fill: &str) -> Result<String> {
    let malformed = |reason: &str| Error::MalformedTemplate {
        item_id: item.id,
        reason: reason.to_string(),
    };
    let filled = match persona.validated_name()? {
        None => {
            if item.first_person.matches(BLANK).count() != 1 {
                return Err(malformed("first-person template needs exactly one blank"));
            }
            item.first_person.replace(BLANK, fill)
        }
        Some(name) => {
            let t = &item.third_person;
            if t.matches(BLANK).count() != 1 || t.matches(NAME).count() != 1 {
                return Err(malformed("third-person template needs one blank and one name"));
            }
            // Blank first so a name can never inject a second slot.
            t.replace(BLANK, fill).replace(NAME, name)
        }
    };
    Ok(filled)
}

/// Renders probes against a bank. Pure: equal inputs give byte-identical output.
#[derive(Debug, Clone)]
pub struct Renderer<'a> {
    bank: &'a ItemBank,
    options: RenderOptions,
}

impl<'a> Renderer<'a> {
    pub fn new(bank: &'a ItemBank) -> Self {
        Renderer {
            bank,
            options: RenderOptions::default(),
        }
    }

    pub fn with_options(bank: &'a ItemBank, options: RenderOptions) -> Self {
        Renderer { bank, options }
    }

    pub fn render(
        &self,
        item: &Item,
        persona: &Persona,
        context: &ContextSpec,
        mode: RenderMode,
    ) -> Result<RenderedProbe> {
        let context_text = self.render_context(context, persona)?;
        let body = match mode {
            RenderMode::MaskedSlot => ProbeBody::Masked {
                stem: fill_template(item, persona, SLOT_MARKER)?,
            },
            RenderMode::CandidateSentences => ProbeBody::Sequence {
                candidates: ResponseChoice::ALL
                    .iter()
                    .map(|c| fill_template(item, persona, c.label()))
                    .collect::<Result<_>>()?,
            },
        };
        Ok(RenderedProbe {
            item_id: item.id,
            mode,
            context_text,
            body,
            separator: self.options.separator.clone(),
        })
    }

    /// Context text for `spec`; item contexts follow the persona's voice.
    pub fn render_context(&self, spec: &ContextSpec, persona: &Persona) -> Result<String> {
        match spec {
            ContextSpec::None => Ok(String::new()),
            ContextSpec::Item { item_id, modifier } => {
                let item = self.bank.item(*item_id)?;
                fill_template(item, persona, modifier.label())
            }
            ContextSpec::FreeText { text, .. } => Ok(text.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::DocSource;

    fn bank() -> ItemBank {
        ItemBank::ipip50()
    }

    #[test]
    fn item_one_candidate_sentences() {
        let bank = bank();
        let r = Renderer::new(&bank);
        let probe = r
            .render(
                bank.item(1).unwrap(),
                &Persona::FirstPerson,
                &ContextSpec::None,
                RenderMode::CandidateSentences,
            )
            .unwrap();
        assert_eq!(
            probe.texts(),
            [
                "I am never the life of the party.",
                "I am rarely the life of the party.",
                "I am sometimes the life of the party.",
                "I am often the life of the party.",
                "I am always the life of the party.",
            ]
        );
    }

    #[test]
    fn named_masked_probe() {
        let bank = bank();
        let r = Renderer::new(&bank);
        let probe = r
            .render(
                bank.item(25).unwrap(),
                &Persona::named("David"),
                &ContextSpec::None,
                RenderMode::MaskedSlot,
            )
            .unwrap();
        assert_eq!(probe.texts(), ["David {MASK} has excellent ideas."]);
    }

    #[test]
    fn item_context_prefixes_every_candidate() {
        let bank = bank();
        let r = Renderer::new(&bank);
        let ctx = ContextSpec::Item {
            item_id: 1,
            modifier: ResponseChoice::Always,
        };
        let probe = r
            .render(
                bank.item(1).unwrap(),
                &Persona::FirstPerson,
                &ctx,
                RenderMode::CandidateSentences,
            )
            .unwrap();
        assert_eq!(probe.context_text, "I am always the life of the party.");
        for (text, choice) in probe.texts().iter().zip(ResponseChoice::ALL) {
            assert_eq!(
                text,
                &format!("I am always the life of the party. I am {choice} the life of the party.")
            );
        }
    }

    #[test]
    fn render_context_cases() {
        let bank = bank();
        let r = Renderer::new(&bank);
        let never_prepared = ContextSpec::Item {
            item_id: 3,
            modifier: ResponseChoice::Never,
        };
        assert_eq!(
            r.render_context(&never_prepared, &Persona::FirstPerson).unwrap(),
            "I am never prepared."
        );
        assert_eq!(r.render_context(&ContextSpec::None, &Persona::FirstPerson).unwrap(), "");
        let doc = ContextSpec::FreeText {
            doc_id: "r1".into(),
            source: DocSource::Reddit,
            text: "Subdued until I really get to know someone.".into(),
        };
        assert_eq!(
            r.render_context(&doc, &Persona::FirstPerson).unwrap(),
            "Subdued until I really get to know someone."
        );
    }

    #[test]
    fn double_negatives_are_verbatim() {
        let bank = bank();
        let r = Renderer::new(&bank);
        let ctx = ContextSpec::Item {
            item_id: 36,
            modifier: ResponseChoice::Never,
        };
        assert_eq!(
            r.render_context(&ctx, &Persona::FirstPerson).unwrap(),
            "I never don't like to draw attention to myself."
        );
    }

    #[test]
    fn missing_name_is_rejected() {
        let bank = bank();
        let r = Renderer::new(&bank);
        let err = r
            .render(
                bank.item(1).unwrap(),
                &Persona::named("  "),
                &ContextSpec::None,
                RenderMode::MaskedSlot,
            )
            .unwrap_err();
        assert!(matches!(err, Error::MissingName));
    }

    #[test]
    fn malformed_template_is_rejected() {
        let mut item = bank().item(2).unwrap().clone();
        item.first_person = "I feel little concern for others.".into();
        let err = fill_template(&item, &Persona::FirstPerson, "never").unwrap_err();
        assert!(matches!(err, Error::MalformedTemplate { item_id: 2, .. }));
    }

    #[test]
    fn unterminated_context_gets_a_period() {
        assert_eq!(
            join_context("I love parties", "I am {MASK} shy.", " "),
            "I love parties. I am {MASK} shy."
        );
        assert_eq!(join_context("Really?  ", "X.", " "), "Really? X.");
        assert_eq!(join_context("", "X.", " "), "X.");
        assert_eq!(join_context("Fine.", "X.", "\n"), "Fine.\nX.");
    }

    #[test]
    fn candidates_differ_only_at_the_slot() {
        let bank = bank();
        let r = Renderer::new(&bank);
        for item in bank.items() {
            let probe = r
                .render(
                    item,
                    &Persona::named("Mary"),
                    &ContextSpec::None,
                    RenderMode::CandidateSentences,
                )
                .unwrap();
            let ProbeBody::Sequence { candidates } = &probe.body else {
                unreachable!()
            };
            let (prefix, suffix) = item
                .third_person
                .replace(NAME, "Mary")
                .split_once(BLANK)
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .unwrap();
            for (c, choice) in candidates.iter().zip(ResponseChoice::ALL) {
                assert_eq!(c, &format!("{prefix}{choice}{suffix}"));
            }
        }
    }

    #[test]
    fn persona_parsing() {
        assert_eq!("first".parse::<Persona>().unwrap(), Persona::FirstPerson);
        assert_eq!("name:David".parse::<Persona>().unwrap(), Persona::named("David"));
        assert!(matches!("name:".parse::<Persona>(), Err(Error::MissingName)));
        assert!("robot".parse::<Persona>().is_err());
    }
}
