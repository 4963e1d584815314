//! Analyses over assessment records. Everything here is a pure function of
//! records and documents; nothing talks to a scorer.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::assessment::{AssessmentRecord, ContextKind, ContextSpec};
use crate::context::{apply_filters, r_cm, CorpusDoc, FilterSpec};
use crate::error::{Error, Result};
use crate::item_bank::{ItemBank, PerTrait, PercentileModel, ResponseChoice, Trait, TraitScores};

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(xs: &[f64]) -> Option<f64> {
    quantile(xs, 0.5)
}

/// Quantile by linear interpolation between order statistics (R type 7).
pub fn quantile(xs: &[f64], p: f64) -> Option<f64> {
    if xs.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Product-moment correlation. Undefined when either side has no variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples {
            what: "correlation".into(),
            needed: 2,
            have: xs.len(),
        });
    }
    let mx = mean(xs).unwrap_or_default();
    let my = mean(ys).unwrap_or_default();
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "zero variance over {} samples",
            xs.len()
        )));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of the t-test on a correlation coefficient.
pub fn correlation_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * df.sqrt() / (1.0 - r * r).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Half-width multiplier of a two-sided 95% t interval.
pub fn t_critical_95(n: usize) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?;
    Some(dist.inverse_cdf(0.975))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub scope: String,
    /// Absent when the correlation is undefined.
    pub rho: Option<f64>,
    pub n: usize,
    pub p_value: Option<f64>,
}

impl CorrelationReport {
    pub fn compute(scope: impl Into<String>, xs: &[f64], ys: &[f64]) -> CorrelationReport {
        let rho = pearson(xs, ys).ok();
        CorrelationReport {
            scope: scope.into(),
            rho,
            n: xs.len(),
            p_value: rho.and_then(|r| correlation_p_value(r, xs.len())),
        }
    }
}

/// Score shift of one trait under one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    #[serde(rename = "trait")]
    pub r#trait: Trait,
    pub context: String,
    pub context_kind: ContextKind,
    pub context_item_id: Option<u32>,
    pub modifier: Option<ResponseChoice>,
    pub doc_id: Option<String>,
    pub delta: i32,
    pub r_cm: Option<i32>,
}

fn check_base(record: &AssessmentRecord, base: &AssessmentRecord) -> Result<()> {
    if base.context != ContextSpec::None {
        return Err(Error::BaseMismatch(format!(
            "base record has context {}",
            base.context.label()
        )));
    }
    if !record.comparable_with(base) {
        return Err(Error::BaseMismatch(format!(
            "{} was run as {}/{}/{} but base is {}/{}/{}",
            record.context.label(),
            record.persona,
            record.mode,
            record.model_id,
            base.persona,
            base.mode,
            base.model_id
        )));
    }
    Ok(())
}

/// Δ against `base`. Item contexts yield one delta for the context item's trait;
/// other contexts yield one per trait.
pub fn deltas(bank: &ItemBank, records: &[AssessmentRecord], base: &AssessmentRecord) -> Result<Vec<DeltaRecord>> {
    let mut out = Vec::new();
    for record in records {
        check_base(record, base)?;
        let rating = r_cm(bank, &record.context)?;
        let traits: Vec<Trait> = match record.context.item_context() {
            Some((id, _)) => vec![bank.item(id)?.r#trait],
            None => Trait::ALL.to_vec(),
        };
        for t in traits {
            out.push(DeltaRecord {
                r#trait: t,
                context: record.context.label(),
                context_kind: record.context.kind(),
                context_item_id: record.context.item_context().map(|c| c.0),
                modifier: record.context.item_context().map(|c| c.1),
                doc_id: record.context.doc_id().map(str::to_string),
                delta: record.scores.get(t) - base.scores.get(t),
                r_cm: rating,
            });
        }
    }
    Ok(out)
}

fn rated(deltas: &[DeltaRecord]) -> impl Iterator<Item = (&DeltaRecord, i32)> {
    deltas.iter().filter_map(|d| d.r_cm.map(|r| (d, r)))
}

/// pearson(Δ, r_cm) over all item-context deltas, raw Δ pooled across traits.
pub fn pooled_correlation(deltas: &[DeltaRecord]) -> CorrelationReport {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rated(deltas).map(|(d, r)| (f64::from(d.delta), f64::from(r))).unzip();
    CorrelationReport::compute("all-traits", &xs, &ys)
}

pub fn per_trait_correlation(deltas: &[DeltaRecord]) -> Vec<CorrelationReport> {
    Trait::ALL
        .iter()
        .map(|&t| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rated(deltas)
                .filter(|(d, _)| d.r#trait == t)
                .map(|(d, r)| (f64::from(d.delta), f64::from(r)))
                .unzip();
            CorrelationReport::compute(format!("trait:{t}"), &xs, &ys)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRho {
    #[serde(rename = "trait")]
    pub r#trait: Trait,
    pub item_id: u32,
    pub rho: Option<f64>,
}

/// Counts of ρ values in equal-width bins over [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of_correlations(values: impl IntoIterator<Item = f64>, bins: usize) -> Histogram {
        let width = 2.0 / bins as f64;
        let edges = (0..=bins).map(|i| -1.0 + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v + 1.0) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerItemRho {
    pub items: Vec<ItemRho>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Items whose Δ did not vary across modifiers.
    pub undefined: usize,
    pub undefined_per_trait: PerTrait<usize>,
    pub histograms: Vec<(Trait, Histogram)>,
}

/// ρ over the five modifiers of each context item.
pub fn per_item_rho(deltas: &[DeltaRecord]) -> Result<PerItemRho> {
    let mut groups: BTreeMap<(u32, Trait), Vec<(i32, i32)>> = BTreeMap::new();
    for (d, r) in rated(deltas) {
        let id = d.context_item_id.expect("rated deltas come from item contexts");
        groups.entry((id, d.r#trait)).or_default().push((d.delta, r));
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no item-context deltas".into()));
    }
    let mut items = Vec::new();
    for ((item_id, t), pairs) in &groups {
        if pairs.len() < 5 {
            return Err(Error::InsufficientSamples {
                what: format!("context item {item_id}"),
                needed: 5,
                have: pairs.len(),
            });
        }
        let xs: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        items.push(ItemRho {
            r#trait: *t,
            item_id: *item_id,
            rho: pearson(&xs, &ys).ok(),
        });
    }
    let defined: Vec<f64> = items.iter().filter_map(|i| i.rho).collect();
    let histograms = Trait::ALL
        .iter()
        .map(|&t| {
            let values = items.iter().filter(|i| i.r#trait == t).filter_map(|i| i.rho);
            (t, Histogram::of_correlations(values, 10))
        })
        .collect();
    let undefined_per_trait = PerTrait::from_fn(|t| items.iter().filter(|i| i.r#trait == t && i.rho.is_none()).count());
    Ok(PerItemRho {
        undefined: items.len() - defined.len(),
        mean: mean(&defined),
        median: median(&defined),
        items,
        undefined_per_trait,
        histograms,
    })
}

/// Replaces the answer to the context item with the base answer and rescores.
pub fn copy_bias_adjust(
    bank: &ItemBank,
    record: &AssessmentRecord,
    base: &AssessmentRecord,
) -> Result<AssessmentRecord> {
    let (item_id, _) = record.context.item_context().ok_or(Error::NotItemContext)?;
    check_base(record, base)?;
    let base_answer = *base.responses.get(&item_id).ok_or(Error::MissingItems(vec![item_id]))?;
    let mut adjusted = record.clone();
    adjusted.responses.insert(item_id, base_answer);
    adjusted.rescore(bank)?;
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcmRow {
    pub r_cm: i32,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Δ summary per expected rating, with 95% t intervals on the mean.
pub fn rcm_summary(deltas: &[DeltaRecord]) -> Result<Vec<RcmRow>> {
    (-2..=2)
        .map(|level| {
            let xs: Vec<f64> = rated(deltas)
                .filter(|(_, r)| *r == level)
                .map(|(d, _)| f64::from(d.delta))
                .collect();
            summarize(level, &xs)
        })
        .collect()
}

fn summarize(level: i32, xs: &[f64]) -> Result<RcmRow> {
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples {
            what: format!("r_cm = {level}"),
            needed: 2,
            have: xs.len(),
        });
    }
    let m = mean(xs).unwrap_or_default();
    let sd = sample_sd(xs).unwrap_or_default();
    let half = t_critical_95(xs.len()).unwrap_or_default() * sd / (xs.len() as f64).sqrt();
    Ok(RcmRow {
        r_cm: level,
        n: xs.len(),
        mean: m,
        median: median(xs).unwrap_or_default(),
        sd,
        ci_low: m - half,
        ci_high: m + half,
    })
}

/// Mean with a 95% t interval, for arbitrary samples.
pub fn mean_ci(xs: &[f64]) -> Result<(f64, f64, f64)> {
    let row = summarize(0, xs)?;
    Ok((row.mean, row.ci_low, row.ci_high))
}

/// Scores of a model under a survey document next to its author's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPair {
    pub doc_id: String,
    pub model: TraitScores,
    pub subject: TraitScores,
}

/// Joins free-text records with their documents' subject scores.
pub fn survey_pairs(records: &[AssessmentRecord], docs: &[CorpusDoc]) -> Result<Vec<SurveyPair>> {
    let by_id: HashMap<&str, &CorpusDoc> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut pairs = Vec::new();
    for record in records {
        let Some(doc_id) = record.context.doc_id() else {
            continue;
        };
        let Some(doc) = by_id.get(doc_id) else {
            continue;
        };
        let subject = doc
            .subject_scores
            .ok_or_else(|| Error::Invariant(format!("document {doc_id:?} has no subject scores")))?;
        pairs.push(SurveyPair {
            doc_id: doc_id.to_string(),
            model: record.scores,
            subject,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyCorrelation {
    pub label: String,
    pub n_docs: usize,
    /// Over every (trait, subject) pair.
    pub pooled: CorrelationReport,
    pub per_trait: Vec<CorrelationReport>,
}

pub fn survey_correlation(label: impl Into<String>, pairs: &[SurveyPair]) -> Result<SurveyCorrelation> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no survey pairs after filtering".into()));
    }
    let column = |f: &dyn Fn(&SurveyPair) -> TraitScores, t: Trait| -> Vec<f64> {
        pairs.iter().map(|p| f64::from(f(p).get(t))).collect()
    };
    let mut all_model = Vec::new();
    let mut all_subject = Vec::new();
    let mut per_trait = Vec::new();
    for t in Trait::ALL {
        let m = column(&|p| p.model, t);
        let s = column(&|p| p.subject, t);
        per_trait.push(CorrelationReport::compute(format!("trait:{t}"), &m, &s));
        all_model.extend(m);
        all_subject.extend(s);
    }
    Ok(SurveyCorrelation {
        label: label.into(),
        n_docs: pairs.len(),
        pooled: CorrelationReport::compute("all-traits", &all_model, &all_subject),
        per_trait,
    })
}

/// One survey correlation per named filter configuration.
pub fn survey_correlation_table(
    records: &[AssessmentRecord],
    docs: &[CorpusDoc],
    configs: &[(String, Vec<FilterSpec>)],
) -> Result<Vec<SurveyCorrelation>> {
    configs
        .iter()
        .map(|(label, filters)| {
            let kept = apply_filters(docs, filters)?;
            let pairs = survey_pairs(records, &kept)?;
            survey_correlation(label.clone(), &pairs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeRow {
    pub context_kind: ContextKind,
    #[serde(rename = "trait")]
    pub r#trait: Trait,
    pub n: usize,
    pub base: Option<i32>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub base_percentile: Option<f64>,
    pub min_percentile: f64,
    pub median_percentile: f64,
    pub max_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub percentile_model: PercentileModel,
    pub rows: Vec<RangeRow>,
}

/// Min/median/max score per trait and context kind. Base records (no context)
/// supply the reference column and are not a group of their own.
pub fn range_report(bank: &ItemBank, records: &[AssessmentRecord], model: PercentileModel) -> Result<RangeReport> {
    let base = records.iter().find(|r| r.context == ContextSpec::None);
    let mut groups: BTreeMap<ContextKind, Vec<&AssessmentRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.context != ContextSpec::None) {
        groups.entry(r.context.kind()).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no context records to report ranges for".into()));
    }
    let pop = bank.population();
    let mut rows = Vec::new();
    for (kind, group) in groups {
        for t in Trait::ALL {
            let xs: Vec<f64> = group.iter().map(|r| f64::from(r.scores.get(t))).collect();
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let med = median(&xs).unwrap_or_default();
            let b = base.map(|r| r.scores.get(t));
            rows.push(RangeRow {
                context_kind: kind,
                r#trait: t,
                n: xs.len(),
                base: b,
                min,
                median: med,
                max,
                base_percentile: b.map(|s| pop.percentile(t, s, model)),
                min_percentile: pop.percentile_of(t, min, model),
                median_percentile: pop.percentile_of(t, med, model),
                max_percentile: pop.percentile_of(t, max, model),
            });
        }
    }
    Ok(RangeReport {
        percentile_model: model,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::{RunMeta, RECORD_SCHEMA_VERSION};
    use crate::context::DocSource;
    use crate::prompt::{Persona, RenderMode};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_hand_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&xs, &lin).unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pearson(&xs, &neg).unwrap(), -1.0, epsilon = 1e-9);
        // Deviations (-1,0,1) and (-1,1,0): sxy = 1, sxx = syy = 2.
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            epsilon = 1e-9
        );
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn medians_and_quantiles() {
        assert_eq!(median(&[10.0, 20.0, 30.0, 40.0]), Some(25.0));
        assert_eq!(median(&[30.0, 10.0, 20.0]), Some(20.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
        assert_eq!(median(&[]), None);
        assert_abs_diff_eq!(
            sample_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap(),
            2.138089935,
            epsilon = 1e-8
        );
    }

    #[test]
    fn p_values() {
        assert_eq!(correlation_p_value(1.0, 10), Some(0.0));
        assert_abs_diff_eq!(correlation_p_value(0.0, 10).unwrap(), 1.0, epsilon = 1e-12);
        // r = 0.5, n = 10: t = 0.5*sqrt(8)/sqrt(0.75) = 1.63299, two-sided p ≈ 0.1411.
        assert_abs_diff_eq!(correlation_p_value(0.5, 10).unwrap(), 0.1411, epsilon = 1e-3);
        assert_abs_diff_eq!(t_critical_95(10).unwrap(), 2.262157, epsilon = 1e-5);
    }

    fn record(context: ContextSpec, scores: [i32; 5], responses: BTreeMap<u32, ResponseChoice>) -> AssessmentRecord {
        AssessmentRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            context,
            persona: Persona::FirstPerson,
            mode: RenderMode::MaskedSlot,
            responses,
            scores: PerTrait(scores),
            percentiles: PerTrait([50.0; 5]),
            percentile_model: PercentileModel::NormalAtMedian,
            model_id: "m".into(),
            truncated: false,
            meta: RunMeta::default(),
        }
    }

    fn all(choice: ResponseChoice) -> BTreeMap<u32, ResponseChoice> {
        (1..=50).map(|i| (i, choice)).collect()
    }

    fn synthetic_grid(bank: &ItemBank, f: impl Fn(i32) -> i32) -> Vec<DeltaRecord> {
        Trait::ALL
            .iter()
            .flat_map(|&t| crate::context::build_grid(bank, t))
            .map(|c| DeltaRecord {
                r#trait: c.r#trait,
                context: c.context().label(),
                context_kind: ContextKind::Item,
                context_item_id: Some(c.context_item_id),
                modifier: Some(c.modifier),
                doc_id: None,
                delta: f(c.r_cm),
                r_cm: Some(c.r_cm),
            })
            .collect()
    }

    #[test]
    fn deltas_against_self_are_zero_and_mismatch_detected() {
        let bank = ItemBank::ipip50();
        let base = record(ContextSpec::None, [20, 16, 16, 32, 12], all(ResponseChoice::Never));
        let same = deltas(&bank, std::slice::from_ref(&base), &base).unwrap();
        assert_eq!(same.len(), 5);
        assert!(same.iter().all(|d| d.delta == 0 && d.r_cm.is_none()));

        let item = record(
            ContextSpec::item(6, ResponseChoice::Always),
            [22, 16, 16, 32, 12],
            all(ResponseChoice::Never),
        );
        let d = deltas(&bank, std::slice::from_ref(&item), &base).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].r#trait, d[0].delta, d[0].r_cm), (Trait::E, 2, Some(-2)));

        let mut other = item;
        other.mode = RenderMode::CandidateSentences;
        assert!(matches!(deltas(&bank, &[other], &base), Err(Error::BaseMismatch(_))));
    }

    #[test]
    fn per_item_rho_identity_and_negation() {
        let bank = ItemBank::ipip50();
        let up = per_item_rho(&synthetic_grid(&bank, |r| r)).unwrap();
        assert_eq!(up.items.len(), 50);
        assert_abs_diff_eq!(up.mean.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(up.median.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(up.undefined, 0);
        let down = per_item_rho(&synthetic_grid(&bank, |r| -r)).unwrap();
        assert!(down.items.iter().all(|i| (i.rho.unwrap() + 1.0).abs() < 1e-12));
        assert_eq!(down.histograms[0].1.counts[0], 10);
        let flat = per_item_rho(&synthetic_grid(&bank, |_| 3)).unwrap();
        assert_eq!((flat.undefined, flat.mean), (50, None));
        assert_eq!(flat.undefined_per_trait.get(Trait::A), 10);
    }

    #[test]
    fn rcm_summary_zero_deltas() {
        let bank = ItemBank::ipip50();
        let rows = rcm_summary(&synthetic_grid(&bank, |_| 0)).unwrap();
        assert_eq!(rows.len(), 5);
        for row in rows {
            assert_eq!(
                (row.mean, row.median, row.sd, row.ci_low, row.ci_high),
                (0.0, 0.0, 0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn rcm_summary_weighted_means_match_grand_mean() {
        let bank = ItemBank::ipip50();
        let d = synthetic_grid(&bank, |r| 3 * r + (r * r) % 3 - 1);
        let rows = rcm_summary(&d).unwrap();
        let n: usize = rows.iter().map(|r| r.n).sum();
        let weighted: f64 = rows.iter().map(|r| r.mean * r.n as f64).sum::<f64>() / n as f64;
        let grand = mean(&d.iter().map(|x| f64::from(x.delta)).collect::<Vec<_>>()).unwrap();
        assert_abs_diff_eq!(weighted, grand, epsilon = 1e-12);
    }

    #[test]
    fn rcm_summary_needs_two_per_level() {
        let bank = ItemBank::ipip50();
        let d: Vec<_> = synthetic_grid(&bank, |r| r)
            .into_iter()
            .filter(|d| d.r_cm != Some(2))
            .collect();
        assert!(matches!(rcm_summary(&d), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn copy_bias_adjustment() {
        let bank = ItemBank::ipip50();
        let base = record(ContextSpec::None, [0; 5], all(ResponseChoice::Sometimes));
        let mut rec = record(
            ContextSpec::item(1, ResponseChoice::Always),
            [0; 5],
            all(ResponseChoice::Sometimes),
        );
        rec.responses.insert(1, ResponseChoice::Always);
        rec.rescore(&bank).unwrap();
        assert_eq!(rec.scores.get(Trait::E), 22);
        let adj = copy_bias_adjust(&bank, &rec, &base).unwrap();
        assert_eq!(adj.responses[&1], ResponseChoice::Sometimes);
        assert_eq!(adj.scores.get(Trait::E), 20);
        assert_eq!(copy_bias_adjust(&bank, &adj, &base).unwrap(), adj);
        assert!(matches!(
            copy_bias_adjust(&bank, &base, &base),
            Err(Error::NotItemContext)
        ));
    }

    #[test]
    fn survey_correlations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut random = || PerTrait::from_fn(|_| rng.gen_range(0..=40));
        let same: Vec<SurveyPair> = (0..30)
            .map(|i| {
                let s = random();
                SurveyPair {
                    doc_id: i.to_string(),
                    model: s,
                    subject: s,
                }
            })
            .collect();
        assert_abs_diff_eq!(
            survey_correlation("same", &same).unwrap().pooled.rho.unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let null: Vec<SurveyPair> = (0..200)
            .map(|i| SurveyPair {
                doc_id: i.to_string(),
                model: random(),
                subject: random(),
            })
            .collect();
        let c = survey_correlation("null", &null).unwrap();
        assert!(c.pooled.rho.unwrap().abs() < 0.2);
        assert!(survey_correlation("empty", &[]).is_err());
    }

    #[test]
    fn survey_join_and_filter_table() {
        let docs: Vec<CorpusDoc> = (0..4)
            .map(|i| {
                CorpusDoc::new(format!("d{i}"), DocSource::SurveyDirected, &"w ".repeat(60 + 20 * i))
                    .with_subject_scores(PerTrait([10 + i as i32; 5]))
            })
            .collect();
        let records: Vec<_> = docs
            .iter()
            .map(|d| record(d.context(), d.subject_scores.unwrap().0, all(ResponseChoice::Never)))
            .collect();
        let configs = vec![
            ("all".to_string(), vec![]),
            ("c>=100".to_string(), vec![FilterSpec::min_words(100)]),
            ("c>=1000".to_string(), vec![FilterSpec::min_words(1000)]),
        ];
        assert!(survey_correlation_table(&records, &docs, &configs).is_err());
        let table = survey_correlation_table(&records, &docs, &configs[..2]).unwrap();
        assert_eq!((table[0].n_docs, table[1].n_docs), (4, 2));
        assert_abs_diff_eq!(table[1].pooled.rho.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn range_report_examples() {
        let bank = ItemBank::ipip50();
        let base = record(ContextSpec::None, [20; 5], all(ResponseChoice::Never));
        let reddit = |id: &str, e: i32| {
            let ctx = ContextSpec::FreeText {
                doc_id: id.into(),
                source: DocSource::Reddit,
                text: "t".into(),
            };
            record(ctx, [e, 1, 2, 3, 4], all(ResponseChoice::Never))
        };
        let one = range_report(&bank, &[base.clone(), reddit("a", 10)], PercentileModel::NormalAtMedian).unwrap();
        let e = &one.rows[0];
        assert_eq!((e.min, e.median, e.max, e.base), (10.0, 10.0, 10.0, Some(20)));

        let recs = vec![base.clone(), reddit("a", 30), reddit("b", 10), reddit("c", 20)];
        let three = range_report(&bank, &recs, PercentileModel::NormalAtMedian).unwrap();
        assert_eq!(
            (three.rows[0].min, three.rows[0].median, three.rows[0].max),
            (10.0, 20.0, 30.0)
        );
        assert_abs_diff_eq!(three.rows[0].median_percentile, 50.0, epsilon = 1e-9);
        assert!(range_report(&bank, &[base], PercentileModel::NormalAtMedian).is_err());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
            a in 0.1f64..10.0, b in -50.0f64..50.0,
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let up: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let down: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
                prop_assert!((pearson(&up, &ys).unwrap() - r).abs() < 1e-9);
                prop_assert!((pearson(&down, &ys).unwrap() + r).abs() < 1e-9);
                prop_assert!(r.abs() <= 1.0);
            }
        }

        #[test]
        fn median_between_extremes(xs in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let m = median(&xs).unwrap();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= m && m <= hi);
        }
    }
}
