mod common;

use common::{bridge_rankings, brute_force_ap, random_matrix, rng};
use dstc_core::data::{generate_synthetic, SyntheticSpec};
use dstc_core::eval::{average_precision, evaluate, metric_grid, rank, retrieve, score, QueryResult, RetrievalReport};
use dstc_core::{ArchPreset, Direction, DstcModel, Error, Matrix, Metric, Split};
use proptest::prelude::*;

fn relevance_and_scores() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (1usize..=50).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            // a coarse grid forces plenty of ties
            prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 4.0), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ap_matches_brute_force((relevant, scores) in relevance_and_scores()) {
        let ours = rank(&scores).and_then(|r| average_precision(&r, &relevant));
        match brute_force_ap(&scores, &relevant) {
            Some(expected) => prop_assert!((ours.unwrap() - expected).abs() <= 1e-12),
            None => prop_assert!(matches!(ours, Err(Error::NoRelevant))),
        }
    }

    #[test]
    fn ap_in_unit_interval_and_one_iff_positives_first((relevant, scores) in relevance_and_scores()) {
        prop_assume!(relevant.contains(&true));
        let order = rank(&scores).unwrap();
        let ap = average_precision(&order, &relevant).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        let positives = relevant.iter().filter(|&&r| r).count();
        let front_loaded = order[..positives].iter().all(|&g| relevant[g]);
        prop_assert_eq!(ap == 1.0, front_loaded);
    }

    #[test]
    fn cosine_ranking_is_scale_invariant(seed in any::<u64>(), n in 2usize..30, which in 0usize..30, c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let q = random_matrix(&mut r, 1, 6);
        let g = random_matrix(&mut r, n, 6);
        let base = rank(&score(q.row(0), &g, Metric::Cosine).unwrap()).unwrap();
        let scaled_q: Vec<f64> = q.row(0).iter().map(|v| v * c).collect();
        prop_assert_eq!(&rank(&score(&scaled_q, &g, Metric::Cosine).unwrap()).unwrap(), &base);
        let mut g2 = g.clone();
        g2.row_mut(which % n).iter_mut().for_each(|v| *v *= c);
        let s1 = score(q.row(0), &g, Metric::Cosine).unwrap();
        let s2 = score(q.row(0), &g2, Metric::Cosine).unwrap();
        // scaling changes scores by rounding only
        prop_assert!(s1.iter().zip(&s2).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn metric_bridge(seed in any::<u64>(), n in 2usize..40, d in 2usize..10) {
        let mut r = rng(seed);
        let q = random_matrix(&mut r, 1, d);
        let g = random_matrix(&mut r, n, d);
        let (cos, euc) = bridge_rankings(q.row(0), &g);
        prop_assert_eq!(cos, euc);
    }

    #[test]
    fn balanced_classes_make_both_averages_equal(aps in prop::collection::vec(0.0f64..=1.0, 12), classes in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12])) {
        let queries = aps.iter().enumerate().map(|(i, &ap)| QueryResult {
            direction: Direction::XToY,
            index: i,
            class: i % classes,
            ap: Some(ap),
        }).collect();
        let r = RetrievalReport::from_queries(Direction::XToY, Metric::Cosine, queries, 12);
        prop_assert!((r.map - r.class_avg_map).abs() <= 1e-12);
    }
}

#[test]
fn hand_cases() {
    let ap = |flags: &[u8]| {
        let relevant: Vec<bool> = flags.iter().map(|&f| f == 1).collect();
        average_precision(&(0..flags.len()).collect::<Vec<_>>(), &relevant).unwrap()
    };
    assert!((ap(&[1, 0, 1, 0]) - 0.8333333333333334).abs() < 1e-12);
    assert_eq!(ap(&[1, 1, 0, 0]), 1.0);
}

#[test]
fn report_map_is_mean_of_query_aps() {
    let mut r = rng(3);
    let q = random_matrix(&mut r, 20, 4);
    let g = random_matrix(&mut r, 20, 4);
    let ids: Vec<(usize, usize)> = (0..20).map(|i| (i, i % 3)).collect();
    let labels: Vec<usize> = (0..20).map(|i| (i * 7) % 3).collect();
    let rep = retrieve(Direction::XToY, Metric::Euclidean, &q, &ids, &g, &labels).unwrap();
    let mean = rep.queries.iter().map(|q| q.ap.unwrap()).sum::<f64>() / 20.0;
    assert!((rep.map - mean).abs() <= 1e-12);
    assert!(rep.summary().contains("mAP"));
    assert_eq!(rep.to_csv().lines().count(), 21);
}

fn data(spread: f64) -> dstc_core::PairedDataset {
    generate_synthetic(&SyntheticSpec {
        classes: 4,
        n_per_class: 30,
        x_dim: 6,
        y_dim: 6,
        cluster_spread: spread,
        pair_noise: 0.0,
        seed: 2,
    })
    .unwrap()
}

#[test]
fn identity_model_on_degenerate_clusters() {
    // identical pair centroids are not generated, so retrieve within each modality
    let d = data(1e-4);
    let test = d.split_batch(Split::Test);
    let ids: Vec<(usize, usize)> = test.labels.iter().copied().enumerate().collect();
    let rep = retrieve(Direction::XToY, Metric::Euclidean, &test.x, &ids, &test.x, &test.labels).unwrap();
    assert!(rep.map >= 0.99, "{}", rep.map);
}

#[test]
fn gallery_is_the_full_opposite_split() {
    let d = data(0.1);
    let model = DstcModel::build(&ArchPreset::custom(6, 6, 4, 8, 5, 3), 4, 6, 6, 0).unwrap();
    let n_test = d.split_indices(Split::Test).len();
    for dir in [Direction::XToY, Direction::YToX] {
        let rep = evaluate(&model, &d, Split::Test, dir, Metric::Cosine).unwrap();
        assert_eq!(rep.gallery_size, n_test);
        assert_eq!(rep.queries.len(), n_test);
    }
    let both = evaluate(&model, &d, Split::Test, Direction::Both, Metric::Cosine).unwrap();
    let x = evaluate(&model, &d, Split::Test, Direction::XToY, Metric::Cosine).unwrap();
    let y = evaluate(&model, &d, Split::Test, Direction::YToX, Metric::Cosine).unwrap();
    assert!((both.map - 0.5 * (x.map + y.map)).abs() <= 1e-15);
}

#[test]
fn metric_grid_shape_and_cells() {
    let d = data(0.1);
    let a = DstcModel::build(&ArchPreset::custom(6, 6, 4, 8, 5, 3), 4, 6, 6, 0).unwrap();
    let b = DstcModel::build(&ArchPreset::custom(6, 6, 4, 8, 5, 3), 4, 6, 6, 1).unwrap();
    let grid = metric_grid(&[(Metric::Euclidean, &a), (Metric::Cosine, &b)], &d, Split::Val).unwrap();
    assert_eq!(grid.cells.len(), 2 * 2 * 3);
    let cell = grid.get(Metric::Cosine, Metric::Euclidean, Direction::YToX).unwrap();
    let direct = evaluate(&b, &d, Split::Val, Direction::YToX, Metric::Euclidean).unwrap();
    assert_eq!(cell.map, direct.map);
}

#[test]
fn evaluation_errors() {
    let d = data(0.1);
    let wrong = DstcModel::build(&ArchPreset::custom(5, 6, 4, 8, 5, 3), 4, 5, 6, 0).unwrap();
    assert!(matches!(
        evaluate(&wrong, &d, Split::Test, Direction::Both, Metric::Cosine),
        Err(Error::Shape(_))
    ));
    let zero_gallery = Matrix::zeros(2, 3);
    assert!(matches!(score(&[1.0, 0.0, 0.0], &zero_gallery, Metric::Cosine), Err(Error::ZeroNorm)));
}

#[test]
fn zero_norm_embeddings_are_counted_not_fatal() {
    let q = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
    let g = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.1]]).unwrap();
    let rep = retrieve(Direction::XToY, Metric::Cosine, &q, &[(0, 1), (1, 0)], &g, &[0, 1]).unwrap();
    assert_eq!(rep.zero_norm, 2);
    assert_eq!(rep.queries[0].ap, Some(1.0));
    // all-zero scores rank by index
    assert_eq!(rep.queries[1].ap, Some(1.0));
}
