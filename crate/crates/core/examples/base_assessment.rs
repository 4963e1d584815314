//! Run the full questionnaire once with no context, against a mock or a
//! remote scorer.
//!
//!     cargo run --example base_assessment -- mock:lexicon:7
//!     cargo run --example base_assessment -- http://localhost:8000 sequence

use std::time::Duration;

use persona_probe::{Assessor, BackendSpec, ContextSpec, Gateway, GatewayConfig, ItemBank, Persona, RenderMode, Trait};

fn main() -> persona_probe::Result<()> {
    let mut args = std::env::args().skip(1);
    let backend: BackendSpec = args.next().as_deref().unwrap_or("mock:lexicon:7").parse()?;
    let bank = ItemBank::ipip50();
    let gateway = Gateway::new(
        backend.build(&bank, Duration::from_secs(60))?,
        &GatewayConfig::default(),
    )?;
    let mode: RenderMode = match args.next() {
        Some(m) => m.parse()?,
        None => gateway.native_mode(),
    };

    let record = Assessor::new(&bank, &gateway).run_assessment(&ContextSpec::None, &Persona::FirstPerson, mode)?;
    println!("model {} in {mode} mode", record.model_id);
    for t in Trait::ALL {
        println!(
            "{:<24} {:>3}  ({:.0}th percentile)",
            t.name(),
            record.scores.get(t),
            record.percentiles.get(t)
        );
    }
    let counts = record.responses.values().fold([0usize; 5], |mut acc, c| {
        acc[c.index()] += 1;
        acc
    });
    println!("answer counts never..always: {counts:?}");
    Ok(())
}
