//! Which phrases in free-text contexts move each trait? Assess under a
//! synthetic forum corpus, then regress score deltas on n-gram counts.
//!
//!     cargo run --release --example feature_attribution [seed]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use persona_probe::features::{attribute_all, NgramSpec, RegressionConfig};
use persona_probe::stats::deltas;
use persona_probe::{
    Assessor, ContextSpec, CorpusDoc, DocSource, Gateway, ItemBank, MockKind, MockScorerSpec, Persona, RenderMode,
};

const FILLER: &[&str] = &[
    "I moved to a new city last year",
    "work has been busy lately",
    "my sister visits on weekends",
    "we adopted a dog from the shelter",
    "I started cooking more at home",
    "the commute takes about an hour",
];

const TRAITS: &[&str] = &[
    "friendly",
    "shy",
    "quiet",
    "outgoing",
    "kind",
    "rude",
    "lazy",
    "organized",
    "anxious",
    "calm",
    "creative",
    "boring",
    "don't like people",
    "laid back",
];

fn main() -> persona_probe::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<CorpusDoc> = (0..150)
        .map(|i| {
            let mut sentences: Vec<String> = FILLER.choose_multiple(&mut rng, 2).map(|s| s.to_string()).collect();
            for _ in 0..rng.gen_range(1..=2) {
                let cue = TRAITS.choose(&mut rng).expect("non-empty");
                sentences.push(format!("people tell me I am {cue}"));
            }
            sentences.shuffle(&mut rng);
            CorpusDoc::new(format!("post-{i}"), DocSource::Reddit, &(sentences.join(". ") + "."))
        })
        .collect();

    let bank = ItemBank::ipip50();
    let gateway = Gateway::mock(MockScorerSpec::new(MockKind::Lexicon, seed), &bank);
    let assessor = Assessor::new(&bank, &gateway);
    let mode = RenderMode::CandidateSentences;
    let base = assessor.run_assessment(&ContextSpec::None, &Persona::FirstPerson, mode)?;
    let contexts: Vec<ContextSpec> = docs.iter().map(CorpusDoc::context).collect();
    let records = assessor.run_battery(&contexts, &Persona::FirstPerson, mode)?.records;
    let d = deltas(&bank, &records, &base)?;

    let spec = NgramSpec::default();
    for (t, report) in attribute_all(&docs, &d, &spec, &RegressionConfig::default(), 5) {
        match report {
            Ok(r) => println!("{}", r.to_text()),
            Err(e) => println!("{}: {e}\n", t.name()),
        }
    }
    Ok(())
}
