//! Depth versus feature locality in fully connected ReLU networks.
//!
//! Synthetic k-local / k-global / Ising datasets, the exact infinite-width
//! NTK with its kernel-ridge classifier, finite-width MLP training by
//! minibatch SGD, learning-rate search by cross-validation, local-stability
//! curves, and an experiment harness that writes CSV rows and SVG plots.

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod ising;
pub mod mlp;
pub mod ntk;
pub mod rng;

pub use datasets::{Dataset, Label, LabelRule};
pub use error::{Error, Result};

/// 1-based index of the largest entry; ties (and NaNs) resolve to the
/// smallest index.
pub fn argmax_label(values: &[f64]) -> Label {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as Label + 1
}

#[cfg(test)]
mod tests {
    use super::argmax_label;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_label(&[0.0, 0.0]), 1);
        assert_eq!(argmax_label(&[0.0, 1.0, 1.0]), 2);
        assert_eq!(argmax_label(&[-1.0, -2.0]), 1);
    }
}
