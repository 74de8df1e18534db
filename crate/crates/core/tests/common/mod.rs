#![allow(dead_code)]

use dstc_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Precision at every cutoff, averaged over the cutoffs holding a relevant
/// item. Written without reference to the library routine.
pub fn brute_force_ap(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let n = scores.len();
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return None;
    }
    // position of item i: items that beat it, by score or by index on a tie
    let position = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let mut at = vec![0usize; n];
    for i in 0..n {
        at[position(i)] = i;
    }
    let mut total = 0.0;
    for k in 1..=n {
        if relevant[at[k - 1]] {
            let hits = (0..k).filter(|&p| relevant[at[p]]).count();
            total += hits as f64 / k as f64;
        }
    }
    Some(total / positives as f64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Rankings of one query by cosine score and by negative squared distance
/// between l2-normalized rows.
pub fn bridge_rankings(query: &[f64], gallery: &Matrix) -> (Vec<usize>, Vec<usize>) {
    use dstc_core::eval::{rank, score};
    use dstc_core::tensor::NORM_EPS;
    use dstc_core::Metric;
    let cos = rank(&score(query, gallery, Metric::Cosine).unwrap()).unwrap();
    let q = Matrix::row_vector(query).l2_normalize_rows(NORM_EPS);
    let g = gallery.l2_normalize_rows(NORM_EPS);
    let euc = rank(&score(q.row(0), &g, Metric::Euclidean).unwrap()).unwrap();
    (cos, euc)
}
