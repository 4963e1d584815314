//! A scorer that copies the context sentence inflates the context effect.
//! Replacing the answer to the context item itself with the base answer
//! removes the echo.
//!
//!     cargo run --release --example copy_bias

use persona_probe::stats::{copy_bias_adjust, deltas, per_item_rho, pooled_correlation};
use persona_probe::{
    build_grid, Assessor, ContextSpec, Gateway, ItemBank, MockKind, MockScorerSpec, Persona, RenderMode, Trait,
};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();
    let gateway = Gateway::mock(MockScorerSpec::new(MockKind::Copycat, 1), &bank);
    let assessor = Assessor::new(&bank, &gateway);
    let mode = RenderMode::CandidateSentences;

    let base = assessor.run_assessment(&ContextSpec::None, &Persona::FirstPerson, mode)?;
    let contexts: Vec<ContextSpec> = Trait::ALL
        .iter()
        .flat_map(|&t| build_grid(&bank, t))
        .map(|c| c.context())
        .collect();
    let records = assessor.run_battery(&contexts, &Persona::FirstPerson, mode)?.records;
    let adjusted = records
        .iter()
        .map(|r| copy_bias_adjust(&bank, r, &base))
        .collect::<persona_probe::Result<Vec<_>>>()?;

    for (label, set) in [("unadjusted", &records), ("adjusted", &adjusted)] {
        let d = deltas(&bank, set, &base)?;
        let items = per_item_rho(&d)?;
        println!(
            "{label:<11} pooled {:.3}  item mean {:.3}  item median {:.3}",
            pooled_correlation(&d).rho.unwrap_or(f64::NAN),
            items.mean.unwrap_or(f64::NAN),
            items.median.unwrap_or(f64::NAN),
        );
    }

    let echo = records
        .iter()
        .find(|r| r.context == ContextSpec::item(1, persona_probe::ResponseChoice::Always));
    if let Some(r) = echo {
        let adj = copy_bias_adjust(&bank, r, &base)?;
        println!(
            "\nitem 1 under its own 'always' context: {} -> adjusted {} (base {})",
            r.responses[&1], adj.responses[&1], base.responses[&1]
        );
    }
    Ok(())
}
