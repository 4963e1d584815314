//! Ingest a small corpus, cut long documents to the token budget, and compare
//! filter configurations.
//!
//!     cargo run --example corpus_filters

use persona_probe::context::{parse_corpus, truncate, tukey_fences};
use persona_probe::{apply_filters, FilterSpec, ItemBank};

fn main() -> persona_probe::Result<()> {
    let bank = ItemBank::ipip50();
    let lengths = [12usize, 64, 80, 95, 101, 110, 120, 130, 2000];
    let mut jsonl = String::new();
    for (i, n) in lengths.iter().enumerate() {
        let text = format!(
            "I am quite curious. {}",
            "and also kind ".repeat(n.saturating_sub(4) / 3)
        );
        let answers: serde_json::Map<String, serde_json::Value> = (1..=50)
            .map(|id| (id.to_string(), serde_json::json!(1 + (id + i) % 5)))
            .collect();
        let line = serde_json::json!({
            "doc_id": format!("resp-{i}"),
            "source": "survey_directed",
            "text": format!("  {text}\r\n"),
            "subject_responses": answers,
        });
        jsonl.push_str(&line.to_string());
        jsonl.push('\n');
    }
    let docs = parse_corpus(jsonl.as_bytes(), "inline", &bank)?;
    let docs: Vec<_> = docs.iter().map(|d| truncate(d, 512)).collect();
    for d in &docs {
        println!("{:<8} words {:>4} truncated {}", d.doc_id, d.word_count, d.truncated);
    }

    let counts: Vec<f64> = docs.iter().map(|d| d.word_count as f64).collect();
    if let Some((lo, hi)) = tukey_fences(&counts, 1.5) {
        println!("\nword-count fences: [{lo:.1}, {hi:.1}]");
    }
    let configs: [(&str, Vec<FilterSpec>); 5] = [
        ("all", vec![]),
        ("no-outlier", vec![FilterSpec::iqr()]),
        ("c>=75", vec![FilterSpec::min_words(75)]),
        ("c>=100", vec![FilterSpec::min_words(100)]),
        (
            "no-outlier, c>=100",
            vec![FilterSpec::iqr(), FilterSpec::min_words(100)],
        ),
    ];
    for (label, filters) in configs {
        let kept = apply_filters(&docs, &filters)?;
        let ids: Vec<&str> = kept.iter().map(|d| d.doc_id.as_str()).collect();
        println!("{label:<20} {:>2} kept {ids:?}", kept.len());
    }
    Ok(())
}
