#![allow(dead_code)]

mod oracle;

pub use oracle::*;

use gctf::{DenseTensor, Index};
use proptest::prelude::*;

pub fn assert_close(got: &[f64], want: &[f64], rel: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        let scale = w.abs().max(g.abs()).max(1e-300);
        assert!(
            (g - w).abs() <= rel * scale,
            "got {g}, want {w} (rel tol {rel})"
        );
    }
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(g.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

/// A random tensor over the given labels/cardinalities with entries in (0, 2].
pub fn positive_tensor(layout: Vec<Index>) -> impl Strategy<Value = DenseTensor> {
    let n: usize = layout.iter().map(|i| i.cardinality).product();
    proptest::collection::vec(0.001f64..2.0, n)
        .prop_map(move |v| DenseTensor::new(layout.clone(), v).unwrap())
}

pub const LABELS: [&str; 5] = ["a", "b", "c", "d", "e"];
