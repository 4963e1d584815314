//! Ask about named people instead of "I": forty common given names, split by
//! the gender the name list assigns them. The mock lexicon reads no cues
//! from a name, so with a mock backend the gaps are zero.
//!
//!     cargo run --release --example name_personas

use persona_probe::item_bank::NameList;
use persona_probe::stats::mean;
use persona_probe::{Assessor, ContextSpec, Gateway, ItemBank, MockKind, MockScorerSpec, Persona, RenderMode, Trait};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();
    let names = NameList::default_us();
    let gateway = Gateway::mock(MockScorerSpec::new(MockKind::Lexicon, 2), &bank);
    let assessor = Assessor::new(&bank, &gateway);

    for mode in [RenderMode::MaskedSlot, RenderMode::CandidateSentences] {
        let mut means = Vec::new();
        for list in [&names.male, &names.female] {
            let personas: Vec<Persona> = list.iter().map(Persona::named).collect();
            let records = assessor.run_personas(&personas, &ContextSpec::None, mode)?.records;
            let per_trait: Vec<f64> = Trait::ALL
                .iter()
                .map(|&t| {
                    let xs: Vec<f64> = records.iter().map(|r| f64::from(r.scores.get(t))).collect();
                    mean(&xs).unwrap_or(f64::NAN)
                })
                .collect();
            means.push(per_trait);
        }
        println!("{mode}: trait   male  female   diff");
        for (i, t) in Trait::ALL.iter().enumerate() {
            println!(
                "        {:<5} {:6.2} {:6.2} {:+6.2}",
                t.code(),
                means[0][i],
                means[1][i],
                means[0][i] - means[1][i]
            );
        }
    }
    Ok(())
}
