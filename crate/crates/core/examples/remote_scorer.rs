//! Talk to a scorer service over the v1 wire protocol, with a persistent
//! response cache so re-runs are free.
//!
//!     cargo run --example remote_scorer -- http://localhost:8000 [cache-dir]
//!
//! Without an endpoint the example prints the requests it would send.

use std::time::Duration;

use persona_probe::gateway::HttpBackend;
use persona_probe::{
    Assessor, ContextSpec, Gateway, GatewayConfig, ItemBank, Persona, RenderMode, Renderer, ResponseChoice,
};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();
    let mut args = std::env::args().skip(1);
    let Some(endpoint) = args.next() else {
        let renderer = Renderer::new(&bank);
        let context = ContextSpec::item(6, ResponseChoice::Always);
        let probe = renderer.render(
            bank.item(1)?,
            &Persona::FirstPerson,
            &context,
            RenderMode::CandidateSentences,
        )?;
        let request = persona_probe::gateway::ScoreRequest::sequence("example-1", probe.texts());
        println!("POST /v1/score\n{}", serde_json::to_string_pretty(&request)?);
        println!("\nexpected reply: {{\"log_scores\": [5 numbers], \"truncated\": false, \"model_id\": \"...\"}}");
        return Ok(());
    };
    let cache_dir = args.next().unwrap_or_else(|| "scores-cache".into());

    let config = GatewayConfig {
        cache_path: Some(format!("{cache_dir}/scores.jsonl").into()),
        ..GatewayConfig::default()
    };
    let backend = HttpBackend::new(endpoint, Duration::from_secs(config.timeout_secs))?;
    let gateway = Gateway::new(Box::new(backend), &config)?;
    println!("connected: {:?}", gateway.info());

    let record = Assessor::new(&bank, &gateway).run_assessment(
        &ContextSpec::None,
        &Persona::FirstPerson,
        gateway.native_mode(),
    )?;
    println!("scores {:?}", record.scores);
    if let Some(cache) = gateway.cache() {
        let (hits, misses) = cache.stats();
        println!("cache: {} entries, {hits} hits, {misses} misses", cache.len());
    }
    Ok(())
}
