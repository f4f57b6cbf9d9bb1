use halluguard::planner::{
    accuracy_by_bin, build_plan, majority_vote, percentile_bins, select_top_fraction,
    selection_size, Action, Provenance, RankedItem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bernoulli_items(n: usize, seed: u64) -> Vec<RankedItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p: f64 = rng.random();
            let correct = rng.random_bool(1.0 - p);
            RankedItem::new(format!("q{i:05}"), p).with_correct(correct)
        })
        .collect()
}

#[test]
fn accuracy_falls_with_hallucination_probability() {
    let items = bernoulli_items(10_000, 11);
    let table = accuracy_by_bin(&items, 10).unwrap();
    assert_eq!(table.len(), 10);
    assert!(table.iter().all(|b| b.count == 1000));
    for w in table.windows(2) {
        assert!(
            w[1].accuracy <= w[0].accuracy + 0.03,
            "bin {} accuracy {} after {}",
            w[1].bin,
            w[1].accuracy,
            w[0].accuracy
        );
    }
    // expected accuracy in bin b is about 1 - (b + 0.5)/10
    for b in &table {
        let expected = 1.0 - (b.bin as f64 + 0.5) / 10.0;
        assert!((b.accuracy - expected).abs() < 0.05, "{b:?}");
    }
}

#[test]
fn top_fraction_cardinality_is_ceiling() {
    for n in [1usize, 7, 10, 99, 1000, 10_000] {
        let items = bernoulli_items(n, n as u64);
        for f in [0.1, 0.25, 0.4, 1.0 / 3.0, 0.999, 1.0] {
            let k = select_top_fraction(&items, f).unwrap().len();
            assert_eq!(k, selection_size(n, f));
            let exact = f * n as f64;
            assert!(
                k as f64 >= exact - 1e-9 && (k as f64) < exact + 1.0,
                "n={n} f={f} k={k}"
            );
        }
    }
    assert!(select_top_fraction(&bernoulli_items(3, 1), 0.0).is_err());
    assert_eq!(selection_size(10, 0.4), 4);
    assert_eq!(selection_size(10_000, 0.4), 4000);
}

#[test]
fn selection_takes_the_riskiest_items() {
    let items = bernoulli_items(500, 5);
    let plan = build_plan(
        &items,
        0.4,
        Action::MajorityVote { samples: 12 },
        Provenance::default(),
    )
    .unwrap();
    assert_eq!(plan.selected.len(), 200);
    let cutoff = plan.entries[199].hallucination_probability;
    assert!(plan.entries[200..]
        .iter()
        .all(|e| e.hallucination_probability <= cutoff && e.action == Action::Accept));
    assert!(plan.entries[..200]
        .iter()
        .all(|e| e.action == Action::MajorityVote { samples: 12 }));
}

#[test]
fn bins_are_balanced_and_monotone() {
    let items = bernoulli_items(1003, 2);
    let bins = percentile_bins(&items, 10).unwrap();
    let mut counts = [0usize; 10];
    for &b in &bins {
        counts[b] += 1;
    }
    assert!(counts.iter().all(|&c| c == 100 || c == 101), "{counts:?}");
    let mut pairs: Vec<(f64, usize)> = items
        .iter()
        .zip(&bins)
        .map(|(i, &b)| (i.hallucination_probability, b))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn majority_vote_prefers_first_on_ties() {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(majority_vote(&v(&["B", "A", "A", "B", "C"])).unwrap(), "B");
    assert_eq!(majority_vote(&v(&["C", "A", "A"])).unwrap(), "A");
    assert!(majority_vote(&[]).is_err());
}
