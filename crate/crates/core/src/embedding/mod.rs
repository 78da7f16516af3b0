//! Per-image embeddings: pre-pooling feature maps, pooled feature vectors,
//! and the stores that hold them.
//!
//! Values are kept as `f32` (the stored precision). Anything that does
//! arithmetic on them widens to `f64` first via [`EmbeddingStore::vector_f64`].

mod format;
mod pooling;

use std::collections::BTreeMap;

pub use format::{
    decode_map_store, decode_store, encode_map_store, encode_store, read_any, read_map_store,
    read_store, write_map_store, write_store, AnyStore,
};
pub use format::{FORMAT_VERSION, KEMB_HEADER_LEN, KEMB_MAGIC, KMAP_HEADER_LEN, KMAP_MAGIC};
pub use pooling::{average_pool, max_pool, Pooling};

use crate::error::{check_dims, Error, Result};

/// Default embedding dimension for synthetic data.
pub const DEFAULT_DIM: usize = 64;

/// A C×H×W activation volume, stored channel-major (`c * H * W + h * W + w`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub image_id: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        image_id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidParam(format!(
                "feature map shape {channels}x{height}x{width} has a zero extent"
            )));
        }
        check_dims(channels * height * width, values.len())?;
        check_finite(&values)?;
        Ok(Self {
            image_id: image_id.into(),
            channels,
            height,
            width,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// The H×W plane of channel `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub image_id: String,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(image_id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParam("feature vector has dimension 0".into()));
        }
        check_finite(&values)?;
        Ok(Self {
            image_id: image_id.into(),
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!(
            "value {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Image id → vector map with a uniform dimension. Iteration is in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn from_vectors(
        dim: usize,
        vectors: impl IntoIterator<Item = FeatureVector>,
    ) -> Result<Self> {
        let mut store = Self::new(dim)?;
        for v in vectors {
            store.insert(v)?;
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Adds a vector; a second vector for the same image id is rejected.
    pub fn insert(&mut self, vector: FeatureVector) -> Result<()> {
        check_dims(self.dim, vector.dim())?;
        check_finite(&vector.values)?;
        if self.vectors.contains_key(&vector.image_id) {
            return Err(Error::Format(format!(
                "duplicate image id `{}`",
                vector.image_id
            )));
        }
        self.vectors.insert(vector.image_id, vector.values);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.vectors.get(image_id).map(Vec::as_slice)
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.vectors.contains_key(image_id)
    }

    /// Widened copy of one vector, or [`Error::UnknownImage`].
    pub fn vector_f64(&self, image_id: &str) -> Result<Vec<f64>> {
        self.get(image_id)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Sub-store holding only the listed ids.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut out = Self::new(self.dim)?;
        for id in ids {
            let values = self
                .get(id)
                .ok_or_else(|| Error::UnknownImage(id.to_string()))?
                .to_vec();
            out.insert(FeatureVector {
                image_id: id.to_string(),
                values,
            })?;
        }
        Ok(out)
    }

    /// Every vector multiplied by `factor` (at stored precision).
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let mut out = Self::new(self.dim)?;
        for (id, v) in self.iter() {
            out.insert(FeatureVector::new(
                id,
                v.iter().map(|x| x * factor).collect(),
            )?)?;
        }
        Ok(out)
    }
}

/// Image id → feature map with a uniform C×H×W shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStore {
    shape: (usize, usize, usize),
    maps: BTreeMap<String, FeatureMap>,
}

impl FeatureMapStore {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidParam(format!(
                "feature map shape {channels}x{height}x{width} has a zero extent"
            )));
        }
        Ok(Self {
            shape: (channels, height, width),
            maps: BTreeMap::new(),
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn insert(&mut self, map: FeatureMap) -> Result<()> {
        if map.shape() != self.shape {
            let (c, h, w) = self.shape;
            return Err(Error::DimensionMismatch {
                expected: c * h * w,
                actual: map.values.len(),
            });
        }
        if self.maps.contains_key(&map.image_id) {
            return Err(Error::Format(format!(
                "duplicate image id `{}`",
                map.image_id
            )));
        }
        self.maps.insert(map.image_id.clone(), map);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&FeatureMap> {
        self.maps.get(image_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureMap> {
        self.maps.values()
    }

    /// Reduces every map to a C-dimensional vector.
    pub fn pool(&self, pooling: Pooling) -> Result<EmbeddingStore> {
        let mut out = EmbeddingStore::new(self.shape.0)?;
        for map in self.maps.values() {
            out.insert(pooling.apply(map))?;
        }
        Ok(out)
    }

    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let (c, h, w) = self.shape;
        let mut out = Self::new(c, h, w)?;
        for id in ids {
            let map = self
                .get(id)
                .ok_or_else(|| Error::UnknownImage(id.to_string()))?
                .clone();
            out.insert(map)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_rejects_wrong_dim_and_duplicates() {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.insert(FeatureVector::new("a", vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert!(matches!(
            s.insert(FeatureVector::new("b", vec![1.0]).unwrap()),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
        assert!(s
            .insert(FeatureVector::new("a", vec![0.0, 0.0]).unwrap())
            .is_err());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            FeatureVector::new("a", vec![1.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(FeatureMap::new("m", 1, 1, 2, vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn zero_extent_map_rejected() {
        assert!(FeatureMap::new("m", 0, 1, 1, vec![]).is_err());
        assert!(FeatureMapStore::new(1, 0, 1).is_err());
    }

    #[test]
    fn subset_and_widen() {
        let s = EmbeddingStore::from_vectors(
            1,
            [
                FeatureVector::new("a", vec![0.5]).unwrap(),
                FeatureVector::new("b", vec![1.5]).unwrap(),
            ],
        )
        .unwrap();
        let sub = s.subset(["b"]).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.vector_f64("b").unwrap(), vec![1.5]);
        assert!(matches!(sub.vector_f64("a"), Err(Error::UnknownImage(_))));
    }
}
