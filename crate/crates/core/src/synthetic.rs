//! Deterministic synthetic tables for tests, demos and acceptance runs.
//!
//! Values are generated directly in `[0, 1]` and two anchor rows (all
//! zeros, all ones) pin every column's range, so min-max normalization
//! leaves the generated distributions untouched.

use rand::Rng;

use crate::data::DatasetTable;
use crate::grid::ValueGrid;
use crate::rng;

fn finish(name: &str, mut rows: Vec<Vec<f64>>, mut labels: Vec<usize>, classes: usize) -> DatasetTable {
    let f = rows[0].len();
    rows.push(vec![0.0; f]);
    labels.push(0);
    rows.push(vec![1.0; f]);
    labels.push(classes - 1);
    DatasetTable::new(
        name,
        (0..f).map(|j| format!("x{j}")).collect(),
        ValueGrid::from_rows(&rows).expect("rectangular by construction"),
        labels,
        (0..classes).map(|c| format!("c{c}")).collect(),
    )
    .expect("valid by construction")
}

/// Feature `j` is uniform on a disjoint band centred at `(j + 0.5) / F`;
/// labels carry no signal. Useful for alignment recovery only.
pub fn separated_features(per_class: usize, features: usize, classes: usize, seed: u64) -> DatasetTable {
    let mut r = rng::stream(seed, &[0x5e9]);
    let width = 0.8 / features as f64;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * classes {
        let row = (0..features)
            .map(|j| {
                let centre = (j as f64 + 0.5) / features as f64;
                centre + r.gen_range(-0.5..0.5) * width
            })
            .collect();
        rows.push(row);
        labels.push(i % classes);
    }
    finish("separated", rows, labels, classes)
}

/// Binary task whose features have distinct levels and whose class signal
/// points in a feature-specific direction.
///
/// Feature `j` sits near level `(j + 1) / (F + 1)` with uniform noise of
/// half-width `noise`; class 1 shifts it by `shift * sign_j`, where the
/// signs follow `+, +, -, +, +, -, ...`. A classifier that knows which
/// feature sits in which column separates the classes easily; one that
/// sees features in arbitrary columns only gets the net majority direction.
pub fn alignment_sensitive(per_class: usize, features: usize, noise: f64, shift: f64, seed: u64) -> DatasetTable {
    let mut r = rng::stream(seed, &[0xa11]);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 2 {
        let class = i % 2;
        let row = (0..features)
            .map(|j| {
                let level = (j as f64 + 1.0) / (features as f64 + 1.0);
                let sign = if j % 3 == 2 { -1.0 } else { 1.0 };
                let signal = if class == 1 { shift * sign } else { -shift * sign };
                (level + signal + r.gen_range(-noise..noise)).clamp(0.0, 1.0)
            })
            .collect();
        rows.push(row);
        labels.push(class);
    }
    finish("aligned-signal", rows, labels, 2)
}
