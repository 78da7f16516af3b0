use serde::{Deserialize, Serialize};

use super::{FeatureMap, FeatureVector};

/// Spatial reduction of a C×H×W map to a C-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[serde(rename = "avg")]
    Average,
    Max,
}

impl Pooling {
    pub fn apply(self, map: &FeatureMap) -> FeatureVector {
        match self {
            Pooling::Average => average_pool(map),
            Pooling::Max => max_pool(map),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Average => "avg",
            Pooling::Max => "max",
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-channel mean over the H×W plane, accumulated in f64.
pub fn average_pool(map: &FeatureMap) -> FeatureVector {
    let values = (0..map.channels)
        .map(|c| {
            let plane = map.plane(c);
            let sum: f64 = plane.iter().map(|&v| f64::from(v)).sum();
            (sum / plane.len() as f64) as f32
        })
        .collect();
    FeatureVector {
        image_id: map.image_id.clone(),
        values,
    }
}

/// Per-channel maximum over the H×W plane.
pub fn max_pool(map: &FeatureMap) -> FeatureVector {
    let values = (0..map.channels)
        .map(|c| {
            map.plane(c)
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    FeatureVector {
        image_id: map.image_id.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(c: usize, h: usize, w: usize, values: Vec<f32>) -> FeatureMap {
        FeatureMap::new("m", c, h, w, values).unwrap()
    }

    #[test]
    fn constant_map() {
        let m = map(3, 2, 5, vec![3.0; 30]);
        assert_eq!(average_pool(&m).values, vec![3.0; 3]);
        assert_eq!(max_pool(&m).values, vec![3.0; 3]);
    }

    #[test]
    fn hand_values() {
        let m = map(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(average_pool(&m).values, vec![2.5]);
        assert_eq!(max_pool(&m).values, vec![4.0]);

        let m = map(2, 2, 2, vec![0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 5.0, 7.0]);
        assert_eq!(average_pool(&m).values, vec![0.0, 4.0]);
    }

    fn arb_map() -> impl Strategy<Value = FeatureMap> {
        (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(c, h, w)| {
            prop::collection::vec(-100.0f32..100.0, c * h * w)
                .prop_map(move |v| FeatureMap::new("m", c, h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn max_dominates_mean(m in arb_map()) {
            let avg = average_pool(&m);
            let max = max_pool(&m);
            for (a, b) in avg.values.iter().zip(&max.values) {
                prop_assert!(b >= a || (a - b).abs() <= 1e-4 * a.abs().max(1.0));
            }
        }

        #[test]
        fn spatial_permutation_invariance(m in arb_map(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = m.height * m.width;
            let mut shuffled = m.clone();
            for c in 0..m.channels {
                shuffled.values[c * n..(c + 1) * n].shuffle(&mut rng);
            }
            prop_assert_eq!(max_pool(&m), max_pool(&shuffled));
            let a = average_pool(&m);
            let b = average_pool(&shuffled);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-4);
            }
        }

        #[test]
        fn average_pool_is_linear(
            m1 in arb_map(),
            a in -3.0f32..3.0,
            b in -3.0f32..3.0,
            noise in prop::collection::vec(-100.0f32..100.0, 64),
        ) {
            let m2 = FeatureMap::new(
                "m", m1.channels, m1.height, m1.width,
                noise.iter().cycle().take(m1.values.len()).copied().collect(),
            ).unwrap();
            let mixed = FeatureMap::new(
                "m", m1.channels, m1.height, m1.width,
                m1.values.iter().zip(&m2.values).map(|(x, y)| a * x + b * y).collect(),
            ).unwrap();
            let lhs = average_pool(&mixed);
            let p1 = average_pool(&m1);
            let p2 = average_pool(&m2);
            for c in 0..m1.channels {
                let rhs = a * p1.values[c] + b * p2.values[c];
                prop_assert!((lhs.values[c] - rhs).abs() <= 1e-3, "{} vs {}", lhs.values[c], rhs);
            }
        }
    }
}
