use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use aspectsim::baseline::{
    build_pair_dataset, candidate_filter, filter_size_sweep, rank_by_probability, rank_seeds,
    train_pairwise, PairScorer, PairwiseConfig, PairwiseModel,
};
use aspectsim::evaluation::evaluate_method;
use aspectsim::ground_truth::{generate_pairs, GroundTruthConfig, RelevanceIndex};
use aspectsim::retrieval::{build_index, Query};
use aspectsim::synthetic::{generate, SyntheticConfig};
use aspectsim::AspectId;

struct Counting<'a> {
    inner: &'a PairwiseModel,
    calls: AtomicUsize,
}

impl PairScorer for Counting<'_> {
    fn aspects(&self) -> &[AspectId] {
        self.inner.aspects()
    }

    fn score_pair(&self, u: &[f32], v: &[f32]) -> Vec<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score_pair(u, v)
    }
}

fn fixture() -> (
    aspectsim::synthetic::SyntheticCorpus,
    PairwiseModel,
    Vec<RelevanceIndex>,
) {
    let synthetic = generate(&SyntheticConfig {
        docs: 200,
        dim: 16,
        labels_per_aspect: 6,
        noise: 0.5,
        ..Default::default()
    })
    .unwrap();
    let index = build_index(&synthetic.generic).unwrap();
    let gts: Vec<_> = synthetic
        .corpus
        .aspects()
        .iter()
        .map(|a| generate_pairs(&synthetic.corpus, a, &GroundTruthConfig::default()).unwrap())
        .collect();
    let relevance: Vec<RelevanceIndex> = gts.iter().map(|g| g.relevance.clone()).collect();
    let refs: Vec<&RelevanceIndex> = relevance.iter().collect();
    let data = build_pair_dataset(gts.iter().flat_map(|g| g.all_pairs()), &refs, &index, true);
    let (model, report) = train_pairwise(
        &data.features,
        &data.gold,
        synthetic.corpus.aspects(),
        &PairwiseConfig {
            epochs: 5,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.final_loss < report.initial_loss);
    (synthetic, model, relevance)
}

#[test]
fn each_seed_scores_exactly_n_candidates() {
    let (synthetic, model, _) = fixture();
    let index = build_index(&synthetic.generic).unwrap();
    let scorer = Counting {
        inner: &model,
        calls: AtomicUsize::new(0),
    };
    let seeds: Vec<&str> = index.ids().iter().take(7).map(String::as_str).collect();
    let task = AspectId::new("task");
    let ranked = rank_seeds(&scorer, &index, &seeds, &task, 25, 10).unwrap();
    assert_eq!(scorer.calls.load(Ordering::Relaxed), 7 * 25);
    for (seed, r) in &ranked {
        let candidates = candidate_filter(seed, &index, 25).unwrap();
        assert_eq!(
            candidates,
            index
                .knn(Query::Id(seed), 25)
                .unwrap()
                .ids()
                .collect::<Vec<_>>()
        );
        assert!(r.ids().all(|id| candidates.iter().any(|c| c == id)));
        assert!(r.hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(r.hits.len(), 10);
    }
}

#[test]
fn sweep_matches_per_filter_size_recomputation() {
    let (synthetic, model, relevance) = fixture();
    let index = build_index(&synthetic.generic).unwrap();
    let seeds: Vec<&str> = index.ids().iter().step_by(4).map(String::as_str).collect();
    let method = &relevance[1];
    let ns = [10, 50, 150];
    let curve = filter_size_sweep(&model, &seeds, &index, method, &ns, 10, 0).unwrap();
    assert_eq!(curve.len(), 3);
    for (n, row) in &curve {
        let mut results = BTreeMap::new();
        for seed in &seeds {
            let candidates = candidate_filter(seed, &index, *n).unwrap();
            let r = rank_by_probability(&model, &index, seed, &candidates, method.aspect(), 10)
                .unwrap();
            results.insert(seed.to_string(), r);
        }
        let expected = evaluate_method(&results, method, 10, 0).unwrap();
        assert_eq!(row.metrics, expected.metrics, "n={n}");
        assert_eq!(row.method, format!("pairwise(n={n})"));
    }
    assert!(filter_size_sweep(&model, &seeds, &index, method, &[200], 10, 0).is_err());
    assert!(filter_size_sweep(&model, &seeds, &index, method, &[0], 10, 0).is_err());
}

#[test]
fn dataset_labels_follow_relevance() {
    let (synthetic, _, relevance) = fixture();
    let index = build_index(&synthetic.generic).unwrap();
    let gt = generate_pairs(
        &synthetic.corpus,
        &AspectId::new("task"),
        &GroundTruthConfig::default(),
    )
    .unwrap();
    let refs: Vec<&RelevanceIndex> = relevance.iter().collect();
    let data = build_pair_dataset(gt.all_pairs(), &refs, &index, true);
    assert_eq!(
        data.features.len(),
        2 * (gt.positives.len() + gt.negatives.len())
    );
    for ((a, b), gold) in data.keys.iter().zip(&data.gold) {
        for (r, g) in relevance.iter().zip(gold) {
            assert_eq!(r.is_relevant(a, b), *g);
        }
        assert_eq!(gold[0], gt.is_relevant(a, b));
    }
    assert!(data.features.iter().all(|f| f.len() == 4 * 16));
}
