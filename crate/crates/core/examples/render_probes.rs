//! Show exactly what a scorer receives for one item under different contexts,
//! personas and render modes.
//!
//!     cargo run --example render_probes [item-id]

use persona_probe::context::DocSource;
use persona_probe::{ContextSpec, ItemBank, Persona, RenderMode, Renderer, ResponseChoice};

fn main() -> persona_probe::Result<()> {
    let id: u32 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let bank = ItemBank::ipip50();
    let item = bank.item(id)?;
    let renderer = Renderer::new(&bank);
    println!("item {id} ({}, {:?})", item.r#trait.name(), item.polarity);

    let contexts = [
        ContextSpec::None,
        ContextSpec::item(6, ResponseChoice::Always),
        ContextSpec::FreeText {
            doc_id: "demo".into(),
            source: DocSource::Reddit,
            text: "My friends say I am friendly but a little messy".into(),
        },
    ];
    let personas = [Persona::FirstPerson, Persona::named("Mary")];

    for context in &contexts {
        for persona in &personas {
            println!("\n-- context {} / persona {persona}", context.label());
            let masked = renderer.render(item, persona, context, RenderMode::MaskedSlot)?;
            println!("masked:   {}", masked.texts()[0]);
            let seq = renderer.render(item, persona, context, RenderMode::CandidateSentences)?;
            for (choice, text) in seq.choice_order().iter().zip(seq.texts()) {
                println!("{:<9} {text}", format!("{choice}:"));
            }
        }
    }
    Ok(())
}
