use loopeval::diversity::{self, assign_bins, flatten_mels, kmeans_fit, score_counts, DEFAULT_ALPHA};
use loopeval::dsp::MelSpectrogram;
use loopeval::synthloop::{self, Diversity};
use loopeval::{par, prep, Matrix};

const N: usize = 400;
const K: usize = 20;
const REFERENCE_SEED: u64 = 100;
const KMEANS_SEED: u64 = 0;

/// Frozen (ndb, jsd) for the high, low and collapsed sets.
const BASELINE: [(usize, f64); 3] = [
    (2, 0.01857093180518897),
    (15, 0.36726867589308265),
    (18, 0.8285353655857571),
];

fn render(diversity: Diversity, seed: u64) -> Matrix<f32> {
    let plan = synthloop::plan_set(N, diversity, seed);
    let mels: Vec<MelSpectrogram> = par::map(&plan, |(kit, pattern, noise)| {
        prep::render_fixed_mel(&synthloop::synth_bar(kit, pattern, *noise).unwrap()).unwrap()
    });
    flatten_mels(&mels.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn synthloop_sets_against_a_high_diversity_reference() {
    let reference = render(Diversity::High, REFERENCE_SEED);
    let model = kmeans_fit(&reference, K, KMEANS_SEED).unwrap();

    let same = score_counts(&model, &assign_bins(&model, &reference).unwrap(), DEFAULT_ALPHA).unwrap();
    assert_eq!((same.ndb, same.jsd), (0, 0.0));

    let mut scores = Vec::new();
    for (diversity, seed) in [(Diversity::High, 200), (Diversity::Low, 300), (Diversity::Collapsed, 400)] {
        let counts = assign_bins(&model, &render(diversity, seed)).unwrap();
        let r = score_counts(&model, &counts, DEFAULT_ALPHA).unwrap();
        println!("{diversity}: ndb {} ndb/K {} jsd {}", r.ndb, r.ndb_over_k, r.jsd);
        scores.push(r);
    }
    for (r, (ndb, jsd)) in scores.iter().zip(BASELINE) {
        assert_eq!(r.ndb, ndb);
        assert!((r.jsd - jsd).abs() < 1e-9, "{} vs {jsd}", r.jsd);
    }
    let (high, low, collapsed) = (&scores[0], &scores[1], &scores[2]);
    assert!(high.ndb_over_k < 0.2);
    assert!(collapsed.ndb_over_k > 0.5 && collapsed.jsd > 0.3);
    assert!(collapsed.jsd > low.jsd && low.jsd > high.jsd);
}

#[test]
fn clustering_is_independent_of_thread_count() {
    let reference = render(Diversity::High, 7);
    let fit = |threads| par::with_threads(threads, || kmeans_fit(&reference, 8, 3).unwrap());
    let one = fit(1);
    let many = fit(4);
    assert_eq!(one.reference_counts, many.reference_counts);
    assert_eq!(one.inertia_history, many.inertia_history);
    assert_eq!(one.centroids.as_slice(), many.centroids.as_slice());
    let picked = diversity::sample_indices(N, 50, 1);
    assert_eq!(picked, diversity::sample_indices(N, 50, 1));
}
