//! The two similarity channels: feature combination followed by a
//! fully-connected head, and plain cosine similarity.

mod head;

pub use head::{sigmoid, Activation, Layer, SimilarityHead, CHECKPOINT_VERSION, DEFAULT_HIDDEN};

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Element-wise feature combinations fed to the FC head.
///
/// With `⊕` for concatenation:
/// - `Comb1`: `(x² − y²) ⊕ (x − y)²`, length 2D
/// - `Comb2`: `(x² − y²) ⊕ (x − y)² ⊕ (x · y)`, length 3D
///
/// Neither is symmetric in its arguments: swapping x and y negates the
/// first block. FC scores are therefore directed `(probe, gallery)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    Comb1,
    Comb2,
}

impl Combination {
    pub const ALL: [Combination; 2] = [Combination::Comb1, Combination::Comb2];

    pub fn blocks(self) -> usize {
        match self {
            Combination::Comb1 => 2,
            Combination::Comb2 => 3,
        }
    }

    pub fn output_dim(self, feature_dim: usize) -> usize {
        self.blocks() * feature_dim
    }

    pub fn name(self) -> &'static str {
        match self {
            Combination::Comb1 => "comb1",
            Combination::Comb2 => "comb2",
        }
    }
}

impl std::fmt::Display for Combination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Combination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comb1" => Ok(Combination::Comb1),
            "comb2" => Ok(Combination::Comb2),
            other => Err(Error::InvalidParam(format!(
                "unknown combination `{other}`"
            ))),
        }
    }
}

pub fn combine(kind: Combination, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims(x.len(), y.len())?;
    let d = x.len();
    let mut out = vec![0.0; kind.output_dim(d)];
    for i in 0..d {
        let (a, b) = (x[i], y[i]);
        out[i] = a * a - b * b;
        out[d + i] = (a - b) * (a - b);
        if kind == Combination::Comb2 {
            out[2 * d + i] = a * b;
        }
    }
    Ok(out)
}

/// `x·y / (‖x‖‖y‖)`; a zero-norm argument is an error.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

/// FC similarity of a directed pair: `head(combine(x, y))`.
pub fn fc_similarity(head: &SimilarityHead, x: &[f64], y: &[f64]) -> Result<f64> {
    head.forward(&combine(head.combination(), x, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn combine_hand_values() {
        let x = [2.0, 1.0];
        let y = [1.0, 1.0];
        assert_eq!(
            combine(Combination::Comb1, &x, &y).unwrap(),
            vec![3.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(
            combine(Combination::Comb2, &x, &y).unwrap(),
            vec![3.0, 0.0, 1.0, 0.0, 2.0, 1.0]
        );
        assert_eq!(combine(Combination::Comb1, &x, &x).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn combine_dimension_mismatch() {
        assert!(matches!(
            combine(Combination::Comb1, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_hand_values() {
        assert_eq!(
            cosine_similarity(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_invariants(
            (x, y) in (1usize..16).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d))),
            a in prop::num::f64::NORMAL.prop_filter("scale", |a| a.abs() > 1e-3 && a.abs() < 1e3),
            b in prop::num::f64::NORMAL.prop_filter("scale", |b| b.abs() > 1e-3 && b.abs() < 1e3),
        ) {
            let c = cosine_similarity(&x, &y).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            prop_assert_eq!(c, cosine_similarity(&y, &x).unwrap());
            let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
            let ys: Vec<f64> = y.iter().map(|v| b * v).collect();
            let scaled = cosine_similarity(&xs, &ys).unwrap();
            prop_assert!((scaled - (a * b).signum() * c).abs() < 1e-9);
        }

        #[test]
        fn swap_rule(
            (x, y) in (1usize..16).prop_flat_map(|d| (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            ))
        ) {
            let d = x.len();
            for kind in Combination::ALL {
                let fwd = combine(kind, &x, &y).unwrap();
                let rev = combine(kind, &y, &x).unwrap();
                for i in 0..d {
                    prop_assert_eq!(fwd[i], -rev[i]);
                }
                prop_assert_eq!(&fwd[d..], &rev[d..]);
            }
        }
    }
}
