//! Score a hand-filled questionnaire and place it in the human population.
//!
//!     cargo run --example score_questionnaire

use std::collections::BTreeMap;

use persona_probe::{ItemBank, PercentileModel, ResponseChoice, Trait};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();

    // A respondent who answers "often" to positively keyed items and "rarely"
    // to the rest, except for a few emotional-stability items.
    let mut responses = BTreeMap::new();
    for item in bank.items() {
        let choice = match (item.r#trait, item.polarity.sign()) {
            (Trait::ES, _) if item.id % 3 == 0 => ResponseChoice::Always,
            (_, 1) => ResponseChoice::Often,
            _ => ResponseChoice::Rarely,
        };
        responses.insert(item.id, choice);
    }

    let scores = bank.score_responses(&responses)?;
    println!(
        "{:<24} {:>5} {:>12} {:>12}",
        "trait", "score", "pct(median)", "pct(mean)"
    );
    for t in Trait::ALL {
        let s = scores.get(t);
        let pop = bank.population();
        println!(
            "{:<24} {:>5} {:>12.1} {:>12.1}",
            t.name(),
            s,
            pop.percentile(t, s, PercentileModel::NormalAtMedian),
            pop.percentile(t, s, PercentileModel::NormalAtMean),
        );
    }

    // Missing answers are reported by id rather than scored as zero.
    responses.remove(&7);
    responses.remove(&44);
    match bank.score_responses(&responses) {
        Err(e) => println!("\nincomplete sheet: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
