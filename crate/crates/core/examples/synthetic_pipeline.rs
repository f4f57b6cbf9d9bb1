//! Synthetic end-to-end run: generate phenotype traces, extract features,
//! train the stacking ensemble and print the held-out report.

use std::time::Instant;

use halluguard::classifier::{
    evaluate, stratified_split, train_stacking, LabeledDataset, StackingConfig,
};
use halluguard::features::{extract_corpus, schema_for_corpus, FeatureConfig};
use halluguard::ingest::standard_mixture;

fn main() {
    let t0 = Instant::now();
    let traces = standard_mixture([1200, 400, 400], 3, 50, 7).expect("valid specs");
    let schema = schema_for_corpus(&traces).expect("schema");
    let vectors = extract_corpus(&traces, &schema, &FeatureConfig::default()).expect("features");
    println!(
        "{} vectors × {} features in {:?}",
        vectors.len(),
        schema.len(),
        t0.elapsed()
    );
    let mut data = LabeledDataset::from_vectors(&vectors).expect("labeled");
    if std::env::args().any(|a| a == "--shuffle") {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut labels: Vec<_> = data.rows.iter().map(|r| r.label).collect();
        labels.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        for (r, l) in data.rows.iter_mut().zip(labels) {
            r.label = l;
        }
    }
    let (train, test) = stratified_split(&data, 0.8, 42).expect("split");
    let t1 = Instant::now();
    let mut config = StackingConfig::default();
    if std::env::args().any(|a| a == "--quick") {
        config.gbt.n_estimators = std::env::var("GBT_N")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(100);
        config.rf.n_trees = 5;
        config.cv_folds = 2;
    }
    let model = train_stacking(&train, &config).expect("train");
    println!("trained in {:?}", t1.elapsed());
    let report = evaluate(&model, &test, 0.5).expect("eval");
    print!("{}", report.to_table());
}
