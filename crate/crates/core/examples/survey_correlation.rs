//! Do a model's answers under a self-description track the author's own
//! questionnaire? Synthetic respondents write short descriptions from their
//! scores; the model is assessed under each description.
//!
//!     cargo run --release --example survey_correlation [seed]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use persona_probe::stats::survey_correlation_table;
use persona_probe::{
    Assessor, ContextSpec, CorpusDoc, DocSource, FilterSpec, Gateway, ItemBank, MockKind, MockScorerSpec, Persona,
    RenderMode, ResponseChoice, Trait,
};

fn describe(t: Trait, score: i32) -> Option<&'static str> {
    let words = match t {
        Trait::E => ("outgoing", "shy"),
        Trait::A => ("kind", "selfish"),
        Trait::C => ("organized", "lazy"),
        Trait::ES => ("calm", "anxious"),
        Trait::OE => ("curious", "boring"),
    };
    match score {
        s if s >= 26 => Some(words.0),
        s if s <= 14 => Some(words.1),
        _ => None,
    }
}

fn main() -> persona_probe::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = ItemBank::ipip50();

    let mut docs = Vec::new();
    for i in 0..60 {
        // Each respondent leans one way per trait.
        let lean: Vec<i32> = (0..5).map(|_| rng.gen_range(-2..=2)).collect();
        let responses: BTreeMap<u32, ResponseChoice> = bank
            .items()
            .iter()
            .map(|item| {
                let v = 3 + item.polarity.sign() * lean[item.r#trait.index()] + rng.gen_range(-1..=1);
                (item.id, ResponseChoice::from_value(v.clamp(1, 5)).expect("clamped"))
            })
            .collect();
        let scores = bank.score_responses(&responses)?;
        let mut text = String::from("About me.");
        for t in Trait::ALL {
            if let Some(word) = describe(t, scores.get(t)) {
                text.push_str(&format!(" I would say I am {word}."));
            }
        }
        text.push_str(&" I like long walks.".repeat(rng.gen_range(0..40)));
        let source = if i % 2 == 0 {
            DocSource::SurveyDirected
        } else {
            DocSource::SurveyUndirected
        };
        docs.push(CorpusDoc::new(format!("subject-{i}"), source, &text).with_subject_scores(scores));
    }

    let gateway = Gateway::mock(MockScorerSpec::new(MockKind::Lexicon, seed), &bank);
    let assessor = Assessor::new(&bank, &gateway);
    let contexts: Vec<ContextSpec> = docs.iter().map(CorpusDoc::context).collect();
    let records = assessor
        .run_battery(&contexts, &Persona::FirstPerson, RenderMode::MaskedSlot)?
        .records;

    let configs = vec![
        ("all".to_string(), vec![]),
        ("no-outlier".to_string(), vec![FilterSpec::iqr()]),
        ("c>=75".to_string(), vec![FilterSpec::iqr(), FilterSpec::min_words(75)]),
        (
            "c>=100".to_string(),
            vec![FilterSpec::iqr(), FilterSpec::min_words(100)],
        ),
    ];
    for source in [DocSource::SurveyDirected, DocSource::SurveyUndirected] {
        let subset: Vec<CorpusDoc> = docs.iter().filter(|d| d.source == source).cloned().collect();
        println!("{source}");
        for row in survey_correlation_table(&records, &subset, &configs)? {
            let per_trait: Vec<String> = row
                .per_trait
                .iter()
                .map(|c| c.rho.map_or("  n/a".into(), |r| format!("{r:5.2}")))
                .collect();
            println!(
                "  {:<11} n={:>3}  pooled {:5.2}  per trait [{}]",
                row.label,
                row.n_docs,
                row.pooled.rho.unwrap_or(f64::NAN),
                per_trait.join(" ")
            );
        }
    }
    Ok(())
}
