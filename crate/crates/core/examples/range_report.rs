//! How far can contexts push each trait? Minimum, median and maximum scores
//! per kind of context, with population percentiles.
//!
//!     cargo run --release --example range_report

use persona_probe::stats::range_report;
use persona_probe::{
    build_grid, Assessor, ContextSpec, CorpusDoc, DocSource, Gateway, ItemBank, MockKind, MockScorerSpec,
    PercentileModel, Persona, RenderMode, Trait,
};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();
    let gateway = Gateway::mock(MockScorerSpec::new(MockKind::Lexicon, 11), &bank);
    let assessor = Assessor::new(&bank, &gateway);
    let mode = RenderMode::MaskedSlot;

    let mut contexts = vec![ContextSpec::None];
    contexts.extend(
        Trait::ALL
            .iter()
            .flat_map(|&t| build_grid(&bank, t))
            .map(|c| c.context()),
    );
    let posts = [
        "I am a shy and quiet person who is also very kind.",
        "Everyone says I am outgoing, energetic and creative.",
        "I am lazy, messy and anxious most days.",
        "I like trains.",
    ];
    contexts.extend(
        posts
            .iter()
            .enumerate()
            .map(|(i, p)| CorpusDoc::new(format!("post-{i}"), DocSource::Reddit, p).context()),
    );
    let records = assessor.run_battery(&contexts, &Persona::FirstPerson, mode)?.records;

    let report = range_report(&bank, &records, PercentileModel::NormalAtMedian)?;
    println!(
        "{:<7} {:<3} {:>4} {:>5} {:>5} {:>6} {:>5}   percentiles min/med/max",
        "kind", "tr", "n", "base", "min", "median", "max"
    );
    for row in &report.rows {
        println!(
            "{:<7} {:<3} {:>4} {:>5} {:>5} {:>6} {:>5}   {:>5.1} {:>5.1} {:>5.1}",
            row.context_kind.as_str(),
            row.r#trait.code(),
            row.n,
            row.base.map_or("-".into(), |b| b.to_string()),
            row.min,
            row.median,
            row.max,
            row.min_percentile,
            row.median_percentile,
            row.max_percentile,
        );
    }
    Ok(())
}
