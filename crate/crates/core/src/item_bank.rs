//! Questionnaire items, the IPIP scoring key and human population statistics.
//!
//! The bank is loaded from a TOML data file (see `data/ipip50.toml` for the
//! shipped default) and validated on load. Once built it is immutable and can
//! be shared freely between threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Placeholder for the answer slot in item templates.
pub const BLANK: &str = "{blank}";
/// Placeholder for the subject's name in third-person templates.
pub const NAME: &str = "{name}";

/// Lowest and highest score any trait may take.
pub const SCORE_RANGE: (i32, i32) = (0, 40);

const DEFAULT_BANK: &str = include_str!("../data/ipip50.toml");

/// One of the Big Five personality traits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trait {
    /// Extroversion.
    E,
    /// Agreeableness.
    A,
    /// Conscientiousness.
    C,
    /// Emotional stability.
    ES,
    /// Openness to experience.
    OE,
}

impl Trait {
    pub const ALL: [Trait; 5] = [Trait::E, Trait::A, Trait::C, Trait::ES, Trait::OE];

    pub fn code(self) -> &'static str {
        match self {
            Trait::E => "E",
            Trait::A => "A",
            Trait::C => "C",
            Trait::ES => "ES",
            Trait::OE => "OE",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::E => "extroversion",
            Trait::A => "agreeableness",
            Trait::C => "conscientiousness",
            Trait::ES => "emotional stability",
            Trait::OE => "openness to experience",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: &str) -> Option<Trait> {
        Trait::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(code.trim()))
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Whether agreeing with an item raises (+) or lowers (-) its trait score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i32 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl Serialize for Polarity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
        })
    }
}

impl<'de> Deserialize<'de> for Polarity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.as_str() {
            "+" | "+1" | "positive" => Ok(Polarity::Positive),
            "-" | "-1" | "negative" => Ok(Polarity::Negative),
            other => Err(de::Error::custom(format!(
                "polarity must be \"+\" or \"-\", got {other:?}"
            ))),
        }
    }
}

/// The five Likert answer choices, in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseChoice {
    Never,
    Rarely,
    Sometimes,
    Often,
    Always,
}

impl ResponseChoice {
    /// Fixed presentation order used for candidates and score vectors.
    pub const ALL: [ResponseChoice; 5] = [
        ResponseChoice::Never,
        ResponseChoice::Rarely,
        ResponseChoice::Sometimes,
        ResponseChoice::Often,
        ResponseChoice::Always,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ResponseChoice::Never => "never",
            ResponseChoice::Rarely => "rarely",
            ResponseChoice::Sometimes => "sometimes",
            ResponseChoice::Often => "often",
            ResponseChoice::Always => "always",
        }
    }

    /// Numeric Likert value, 1..=5.
    pub fn value(self) -> i32 {
        self as i32 + 1
    }

    /// Rating used when the choice acts as a context modifier, -2..=2.
    pub fn modifier_rating(self) -> i32 {
        self.value() - 3
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_value(value: i32) -> Option<ResponseChoice> {
        usize::try_from(value - 1).ok().and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn from_label(label: &str) -> Option<ResponseChoice> {
        let label = label.trim();
        Self::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(label))
    }
}

impl fmt::Display for ResponseChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A value per trait, serialized as a map keyed by trait code.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerTrait<T>(pub [T; 5]);

impl<T: Copy> PerTrait<T> {
    pub fn from_fn(mut f: impl FnMut(Trait) -> T) -> Self {
        PerTrait(Trait::ALL.map(&mut f))
    }

    pub fn get(&self, t: Trait) -> T {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: Trait, value: T) {
        self.0[t.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Trait, T)> + '_ {
        Trait::ALL.into_iter().map(move |t| (t, self.get(t)))
    }
}

impl<T: Serialize> Serialize for PerTrait<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(5))?;
        for (t, v) in Trait::ALL.iter().zip(self.0.iter()) {
            map.serialize_entry(t.code(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de> + Copy> Deserialize<'de> for PerTrait<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PerTraitVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Deserialize<'de> + Copy> Visitor<'de> for PerTraitVisitor<T> {
            type Value = PerTrait<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map with keys E, A, C, ES, OE")
            }

            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> std::result::Result<Self::Value, M::Error> {
                let mut slots: [Option<T>; 5] = [None; 5];
                while let Some(key) = map.next_key::<String>()? {
                    let t =
                        Trait::from_code(&key).ok_or_else(|| de::Error::custom(format!("unknown trait {key:?}")))?;
                    slots[t.index()] = Some(map.next_value()?);
                }
                let mut out = Vec::with_capacity(5);
                for (t, slot) in Trait::ALL.iter().zip(slots) {
                    out.push(slot.ok_or_else(|| de::Error::missing_field(t.code()))?);
                }
                Ok(PerTrait([out[0], out[1], out[2], out[3], out[4]]))
            }
        }

        d.deserialize_map(PerTraitVisitor(std::marker::PhantomData))
    }
}

/// Integer score per trait, each in `[0, 40]`.
pub type TraitScores = PerTrait<i32>;

/// One questionnaire statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: u32,
    #[serde(rename = "trait")]
    pub r#trait: Trait,
    pub polarity: Polarity,
    /// First-person sentence with exactly one `{blank}`.
    pub first_person: String,
    /// Third-person sentence with one `{name}` and one `{blank}`, verbs conjugated.
    pub third_person: String,
}

impl Item {
    /// Text following the blank in the first-person template.
    pub fn first_person_tail(&self) -> &str {
        self.first_person
            .split_once(BLANK)
            .map(|(_, tail)| tail)
            .unwrap_or_default()
    }
}

/// Scoring key for one trait.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitKey {
    pub base: i32,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

/// IPIP scoring key: `score = base + sum(positive) - sum(negative)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringTable {
    keys: [TraitKey; 5],
}

impl ScoringTable {
    pub fn key(&self, t: Trait) -> &TraitKey {
        &self.keys[t.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitStats {
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

/// How scores are mapped onto human population percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileModel {
    /// Normal distribution centred on the population median with the population SD.
    #[default]
    NormalAtMedian,
    /// Normal distribution centred on the population mean with the population SD.
    NormalAtMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationStats(PerTrait<TraitStats>);

impl PopulationStats {
    pub fn get(&self, t: Trait) -> TraitStats {
        self.0.get(t)
    }

    /// Percentile (0..=100) of `score` in the human distribution of `t`.
    pub fn percentile(&self, t: Trait, score: i32, model: PercentileModel) -> f64 {
        self.percentile_of(t, f64::from(score), model)
    }

    /// Same as [`percentile`](Self::percentile) for a real-valued score such as a battery mean.
    pub fn percentile_of(&self, t: Trait, score: f64, model: PercentileModel) -> f64 {
        let stats = self.get(t);
        let location = match model {
            PercentileModel::NormalAtMedian => stats.median,
            PercentileModel::NormalAtMean => stats.mean,
        };
        let dist = Normal::new(location, stats.sd).expect("sd validated positive on load");
        100.0 * dist.cdf(score)
    }

    pub fn percentiles(&self, scores: &TraitScores, model: PercentileModel) -> PerTrait<f64> {
        PerTrait::from_fn(|t| self.percentile(t, scores.get(t), model))
    }
}

/// Consistency checks applied on load, beyond the structural ones every bank gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankProfile {
    /// The 50-item IPIP key: 10 items per trait with fixed bases and polarity counts.
    Ipip50,
    /// Structural checks only.
    #[default]
    Custom,
}

/// (base, positive count, negative count) of the IPIP 50-item key.
const IPIP50_KEY: [(Trait, i32, usize, usize); 5] = [
    (Trait::E, 20, 5, 5),
    (Trait::A, 14, 6, 4),
    (Trait::C, 14, 6, 4),
    (Trait::ES, 38, 2, 8),
    (Trait::OE, 8, 7, 3),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBank {
    schema_version: u32,
    name: String,
    #[serde(default)]
    profile: BankProfile,
    items: Vec<Item>,
    scoring: BTreeMap<String, TraitKey>,
    population: BTreeMap<String, TraitStats>,
}

/// A validated questionnaire with its scoring key and population norms.
#[derive(Debug, Clone)]
pub struct ItemBank {
    name: String,
    profile: BankProfile,
    items: Vec<Item>,
    scoring: ScoringTable,
    population: PopulationStats,
}

impl ItemBank {
    /// The shipped 50-item bank.
    pub fn ipip50() -> ItemBank {
        Self::from_toml_str(DEFAULT_BANK, "ipip50.toml").expect("shipped item bank is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ItemBank> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<ItemBank> {
        let raw: RawBank = toml::from_str(text).map_err(|e| Error::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if raw.schema_version != 1 {
            return Err(Error::Parse {
                origin: origin.to_string(),
                message: format!("unsupported schema_version {}", raw.schema_version),
            });
        }
        Self::validate(raw)
    }

    fn validate(raw: RawBank) -> Result<ItemBank> {
        let invariant = |msg: String| Err(Error::Invariant(msg));

        let mut items = raw.items;
        if items.is_empty() {
            return invariant("bank has no items".into());
        }
        items.sort_by_key(|i| i.id);
        for pair in items.windows(2) {
            if pair[0].id == pair[1].id {
                return invariant(format!("duplicate item id {}", pair[0].id));
            }
        }
        let ids: BTreeSet<u32> = items.iter().map(|i| i.id).collect();
        let n = items.len() as u32;
        let missing: Vec<u32> = (1..=n).filter(|id| !ids.contains(id)).collect();
        if !missing.is_empty() {
            return invariant(format!("item ids must cover 1..={n}; missing {missing:?}"));
        }

        for item in &items {
            if item.first_person.matches(BLANK).count() != 1 {
                return invariant(format!(
                    "item {}: first-person template must contain exactly one {BLANK}",
                    item.id
                ));
            }
            if item.third_person.matches(BLANK).count() != 1 || item.third_person.matches(NAME).count() != 1 {
                return invariant(format!(
                    "item {}: third-person template must contain exactly one {BLANK} and one {NAME}",
                    item.id
                ));
            }
        }

        let mut keys = Vec::with_capacity(5);
        for t in Trait::ALL {
            let key = raw
                .scoring
                .iter()
                .find(|(code, _)| Trait::from_code(code) == Some(t))
                .map(|(_, k)| k.clone());
            let Some(key) = key else {
                return invariant(format!("scoring table has no entry for trait {t}"));
            };
            let trait_items: BTreeSet<u32> = items.iter().filter(|i| i.r#trait == t).map(|i| i.id).collect();
            if trait_items.is_empty() {
                return invariant(format!("trait {t} has no items"));
            }
            let pos: BTreeSet<u32> = key.positive.iter().copied().collect();
            let neg: BTreeSet<u32> = key.negative.iter().copied().collect();
            if pos.len() != key.positive.len() || neg.len() != key.negative.len() {
                return invariant(format!("scoring table for {t} lists an item twice"));
            }
            if !pos.is_disjoint(&neg) {
                return invariant(format!(
                    "scoring table for {t}: items {:?} are both positive and negative",
                    pos.intersection(&neg).collect::<Vec<_>>()
                ));
            }
            let union: BTreeSet<u32> = pos.union(&neg).copied().collect();
            if union != trait_items {
                return invariant(format!(
                    "scoring table for {t} does not partition the trait's items: key covers {union:?}, bank has {trait_items:?}"
                ));
            }
            for item in items.iter().filter(|i| i.r#trait == t) {
                let keyed = if pos.contains(&item.id) {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                if keyed != item.polarity {
                    return invariant(format!(
                        "item {} polarity disagrees with the scoring table for {t}",
                        item.id
                    ));
                }
            }
            let (np, nn) = (pos.len() as i32, neg.len() as i32);
            let lo = key.base + np - 5 * nn;
            let hi = key.base + 5 * np - nn;
            if lo < SCORE_RANGE.0 || hi > SCORE_RANGE.1 {
                return invariant(format!(
                    "trait {t} scores can range over [{lo}, {hi}], outside [{}, {}]",
                    SCORE_RANGE.0, SCORE_RANGE.1
                ));
            }
            keys.push(key);
        }

        let mut stats = Vec::with_capacity(5);
        for t in Trait::ALL {
            let s = raw
                .population
                .iter()
                .find(|(code, _)| Trait::from_code(code) == Some(t))
                .map(|(_, s)| *s);
            let Some(s) = s else {
                return invariant(format!("population stats missing trait {t}"));
            };
            if !(s.sd.is_finite() && s.sd > 0.0 && s.mean.is_finite() && s.median.is_finite()) {
                return invariant(format!("population stats for {t} need finite values and sd > 0"));
            }
            stats.push(s);
        }

        if raw.profile == BankProfile::Ipip50 {
            if items.len() != 50 {
                return invariant(format!("ipip50 profile expects 50 items, found {}", items.len()));
            }
            for (t, base, np, nn) in IPIP50_KEY {
                let key = &keys[t.index()];
                if key.positive.len() + key.negative.len() != 10 {
                    return invariant(format!(
                        "ipip50 profile expects 10 items for {t}, found {}",
                        key.positive.len() + key.negative.len()
                    ));
                }
                if key.positive.len() != np || key.negative.len() != nn {
                    return invariant(format!(
                        "IPIP scoring key mismatch for {t}: expected {np} positive / {nn} negative items, found {} / {}",
                        key.positive.len(),
                        key.negative.len()
                    ));
                }
                if key.base != base {
                    return invariant(format!(
                        "IPIP scoring key mismatch for {t}: expected base {base}, found {}",
                        key.base
                    ));
                }
            }
        }

        let keys: [TraitKey; 5] = keys.try_into().expect("five traits");
        Ok(ItemBank {
            name: raw.name,
            profile: raw.profile,
            items,
            scoring: ScoringTable { keys },
            population: PopulationStats(PerTrait([stats[0], stats[1], stats[2], stats[3], stats[4]])),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn profile(&self) -> BankProfile {
        self.profile
    }

    /// Items ordered by id.
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: u32) -> Result<&Item> {
        id.checked_sub(1)
            .and_then(|i| self.items.get(i as usize))
            .ok_or(Error::UnknownItem(id))
    }

    pub fn items_for(&self, t: Trait) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(move |i| i.r#trait == t)
    }

    pub fn scoring(&self) -> &ScoringTable {
        &self.scoring
    }

    pub fn population(&self) -> &PopulationStats {
        &self.population
    }

    /// Applies the scoring key to a complete set of responses.
    pub fn score_responses(&self, responses: &BTreeMap<u32, ResponseChoice>) -> Result<TraitScores> {
        let missing: Vec<u32> = self
            .items
            .iter()
            .map(|i| i.id)
            .filter(|id| !responses.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingItems(missing));
        }
        Ok(PerTrait::from_fn(|t| {
            let key = self.scoring.key(t);
            let sum = |ids: &[u32]| -> i32 { ids.iter().map(|id| responses[id].value()).sum() };
            key.base + sum(&key.positive) - sum(&key.negative)
        }))
    }
}

/// Given names used for the third-person persona battery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameList {
    pub male: Vec<String>,
    pub female: Vec<String>,
}

impl NameList {
    /// The shipped top-20 male and female names.
    pub fn default_us() -> NameList {
        toml::from_str(include_str!("../data/names.toml")).expect("shipped name list is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NameList> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            origin: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
