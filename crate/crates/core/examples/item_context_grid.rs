//! Prefix every questionnaire item, under each adverb, to the whole
//! questionnaire and check that answers move the way the context says.
//!
//!     cargo run --release --example item_context_grid [seed]

use persona_probe::stats::{deltas, per_item_rho, per_trait_correlation, pooled_correlation, rcm_summary};
use persona_probe::{
    build_grid, Assessor, ContextSpec, Gateway, ItemBank, MockKind, MockScorerSpec, Persona, RenderMode, Trait,
};

fn main() -> persona_probe::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let bank = ItemBank::ipip50();
    let gateway = Gateway::mock(MockScorerSpec::new(MockKind::Lexicon, seed), &bank);
    let assessor = Assessor::new(&bank, &gateway);
    let mode = RenderMode::MaskedSlot;

    let base = assessor.run_assessment(&ContextSpec::None, &Persona::FirstPerson, mode)?;
    let contexts: Vec<ContextSpec> = Trait::ALL
        .iter()
        .flat_map(|&t| build_grid(&bank, t))
        .map(|cell| cell.context())
        .collect();
    let battery = assessor.run_battery(&contexts, &Persona::FirstPerson, mode)?;
    println!(
        "{} grid records, {} failures",
        battery.records.len(),
        battery.failures.len()
    );

    let d = deltas(&bank, &battery.records, &base)?;
    let pooled = pooled_correlation(&d);
    println!(
        "pooled rho(delta, r_cm) = {:.3} over {} cells",
        pooled.rho.unwrap_or(f64::NAN),
        pooled.n
    );
    for report in per_trait_correlation(&d) {
        println!("  {:<10} rho = {:.3}", report.scope, report.rho.unwrap_or(f64::NAN));
    }
    let items = per_item_rho(&d)?;
    println!(
        "per-item rho: mean {:.3}, median {:.3}, undefined {}",
        items.mean.unwrap_or(f64::NAN),
        items.median.unwrap_or(f64::NAN),
        items.undefined
    );

    println!("\nr_cm      n    mean  median     sd   95% CI");
    for row in rcm_summary(&d)? {
        println!(
            "{:>4} {:>6} {:>7.2} {:>7.2} {:>6.2}   [{:.2}, {:.2}]",
            row.r_cm, row.n, row.mean, row.median, row.sd, row.ci_low, row.ci_high
        );
    }
    Ok(())
}
