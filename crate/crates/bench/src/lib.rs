//! Fixtures shared by the kernel benchmarks.

use dstc_core::data::{generate_synthetic, SyntheticSpec};
use dstc_core::{ArchPreset, Batch, DstcModel, Matrix, PairedDataset, Split};

pub fn dense(rows: usize, cols: usize, salt: u64) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| {
        let h = (i as u64 * 31 + j as u64 * 17 + salt).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

pub fn dataset(classes: usize, n_per_class: usize, x_dim: usize, y_dim: usize) -> PairedDataset {
    generate_synthetic(&SyntheticSpec {
        classes,
        n_per_class,
        x_dim,
        y_dim,
        cluster_spread: 0.15,
        pair_noise: 0.0,
        seed: 7,
    })
    .expect("valid synthetic spec")
}

pub fn model_for(data: &PairedDataset) -> DstcModel {
    let preset = ArchPreset::compact(data.x_dim(), data.y_dim(), data.num_classes());
    DstcModel::build(&preset, data.num_classes(), data.x_dim(), data.y_dim(), 0).expect("valid preset")
}

pub fn train_batch(data: &PairedDataset, size: usize) -> Batch {
    let idx: Vec<usize> = data.split_indices(Split::Train).into_iter().take(size).collect();
    data.batch(&idx)
}
