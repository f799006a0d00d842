//! Trained-summarizer quality against an extractive lead-k baseline.

use pictsum_core::corpus::{generate_synthetic, Split, SyntheticConfig};
use pictsum_core::rouge::rouge_n;
use pictsum_core::summarizer::{
    summarize, train_summarizer, SummarizerConfig, TrainingExample, Vocab,
};

#[test]
fn trained_summaries_beat_lead_k_baseline() {
    // Document/summary proportions mirror real news data (roughly 10:1
    // tokens), where extractive lead-k is a meaningful but beatable baseline.
    let cfg = SyntheticConfig {
        num_docs: 120,
        vocab_size: 120,
        sentences_per_doc: (14, 20),
        images_per_doc: (3, 5),
        feature_dim: 16,
        noise_level: 0.0,
        seed: 606,
    };
    let train = generate_synthetic(&cfg, Split::Train).unwrap();
    let valid =
        generate_synthetic(&SyntheticConfig { num_docs: 12, ..cfg.clone() }, Split::Valid)
            .unwrap();

    let vocab = Vocab::build(train.documents.iter().flat_map(|d| d.sentences.iter()));
    let sconfig = SummarizerConfig { epochs: 25, seed: 7, ..Default::default() };
    let examples = |set: &pictsum_core::corpus::DocumentSet| -> Vec<TrainingExample> {
        set.documents
            .iter()
            .map(|d| {
                TrainingExample::new(
                    &d.doc_id,
                    &d.sentences,
                    d.golden_captions.as_ref().unwrap(),
                    &d.golden_summary,
                    &vocab,
                    &sconfig,
                )
                .unwrap()
            })
            .collect()
    };
    let train_examples = examples(&train);
    let valid_examples = examples(&valid);
    let (model, _) =
        train_summarizer(vocab, &train_examples, &valid_examples, &sconfig).unwrap();

    // Lead-k extractive baseline at the typical golden-summary length.
    let mean_summary_sentences = (valid
        .documents
        .iter()
        .map(|d| d.golden_summary.len())
        .sum::<usize>() as f64
        / valid.len() as f64)
        .round()
        .max(1.0) as usize;

    let mut model_scores = Vec::new();
    let mut lead_scores = Vec::new();
    for (doc, ex) in valid.documents.iter().zip(&valid_examples) {
        let gold: Vec<String> =
            doc.golden_summary.iter().flat_map(|s| s.iter().cloned()).collect();

        let generated = summarize(&model, &ex.inputs, 5, true).unwrap();
        let cand: Vec<String> =
            generated.sentences.iter().flat_map(|s| s.iter().cloned()).collect();
        model_scores.push(rouge_n(&cand, &gold, 1).f1);

        let lead: Vec<String> = doc
            .sentences
            .iter()
            .take(mean_summary_sentences)
            .flat_map(|s| s.iter().cloned())
            .collect();
        lead_scores.push(rouge_n(&lead, &gold, 1).f1);
    }
    let model_mean = model_scores.iter().sum::<f64>() / model_scores.len() as f64;
    let lead_mean = lead_scores.iter().sum::<f64>() / lead_scores.len() as f64;
    assert!(
        model_mean > lead_mean,
        "trained ROUGE-1 F {model_mean:.3} must exceed lead-{mean_summary_sentences} baseline {lead_mean:.3}"
    );
}
