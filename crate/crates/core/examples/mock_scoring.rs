//! Look inside the mock scorers: raw log-scores for one probe, and the trait
//! push the lexicon reads from a context.
//!
//!     cargo run --example mock_scoring

use persona_probe::gateway::{select_choice, Backend, Lexicon, MockBackend};
use persona_probe::{
    ContextSpec, Gateway, ItemBank, MockKind, MockScorerSpec, Persona, RenderMode, Renderer, ResponseChoice,
};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();
    let renderer = Renderer::new(&bank);
    let item = bank.item(1)?;
    let contexts = [
        ContextSpec::None,
        ContextSpec::item(1, ResponseChoice::Always),
        ContextSpec::item(6, ResponseChoice::Always),
    ];

    for kind in [MockKind::Uniform, MockKind::Lexicon, MockKind::Copycat] {
        let gateway = Gateway::mock(MockScorerSpec::new(kind, 0), &bank);
        println!("== {}", gateway.model_id());
        for context in &contexts {
            let probe = renderer.render(item, &Persona::FirstPerson, context, RenderMode::MaskedSlot)?;
            let response = gateway.score_probe(&probe)?;
            let scores: Vec<String> = response.log_scores.iter().map(|s| format!("{s:8.3}")).collect();
            println!(
                "{:<18} [{}] -> {}",
                context.label(),
                scores.join(" "),
                select_choice(&response)
            );
        }
    }

    let lexicon = Lexicon::for_bank(&bank);
    println!("\nlexicon has {} cues", lexicon.cues().len());
    for text in [
        "I am always the life of the party.",
        "I never talk a lot. My friends call me shy.",
        "Honestly I procrastinate and I am messy, but I am calm.",
    ] {
        let push: Vec<String> = lexicon.push(text).iter().map(|(t, v)| format!("{t}={v:+.1}")).collect();
        println!("{text:<58} {}", push.join(" "));
    }

    let info = MockBackend::new(MockScorerSpec::new(MockKind::Lexicon, 0), &bank).info()?;
    println!("\nmock info: {}", serde_json::to_string(&info)?);
    Ok(())
}
