//! Synthetic family-structured embeddings with a known generative model.
//!
//! Family centres are isotropic Gaussians of scale `family_spread`; each
//! identity centre adds `identity_spread` noise to its family centre, and
//! each image adds `image_noise` to its identity centre. All draws are
//! standard normals scaled afterwards, so two parameter sets that differ
//! only in spreads share the same underlying randomness for a given seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, FeatureMap, FeatureMapStore, FeatureVector, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, FamilyRecord, IdentityRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_families: usize,
    pub identities_per_family: usize,
    pub images_per_identity: usize,
    pub dim: usize,
    pub family_spread: f64,
    pub identity_spread: f64,
    pub image_noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_families: 20,
            identities_per_family: 3,
            images_per_identity: 3,
            dim: DEFAULT_DIM,
            family_spread: 1.0,
            identity_spread: 0.1,
            image_noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_families == 0 || self.images_per_identity == 0 || self.dim == 0 {
            return Err(Error::InvalidParam(
                "families, images per identity and dim must all be at least 1".into(),
            ));
        }
        if self.identities_per_family < 2 {
            return Err(Error::InvalidParam(
                "identities per family must be at least 2".into(),
            ));
        }
        for (name, v) in [
            ("family_spread", self.family_spread),
            ("identity_spread", self.identity_spread),
            ("image_noise", self.image_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Probe/gallery partition of identities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub probe_identities: Vec<String>,
    pub gallery_identities: Vec<String>,
}

impl Split {
    /// Image ids of the given identities, in manifest order.
    pub fn images<'a>(manifest: &'a DatasetManifest, identities: &'a [String]) -> Vec<&'a str> {
        manifest
            .identities()
            .filter(|(_, i)| identities.contains(&i.id))
            .flat_map(|(_, i)| i.images.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub store: EmbeddingStore,
    pub split: Split,
}

impl SynthDataset {
    pub fn probe_store(&self) -> Result<EmbeddingStore> {
        self.store
            .subset(Split::images(&self.manifest, &self.split.probe_identities))
    }

    pub fn gallery_store(&self) -> Result<EmbeddingStore> {
        self.store.subset(Split::images(
            &self.manifest,
            &self.split.gallery_identities,
        ))
    }
}

pub fn family_id(f: usize) -> String {
    format!("F{:04}", f + 1)
}

pub fn identity_id(f: usize, i: usize) -> String {
    format!("{}/MID{}", family_id(f), i + 1)
}

pub fn image_id(f: usize, i: usize, p: usize) -> String {
    format!("{}/P{:05}", identity_id(f, i), p + 1)
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws a dataset; one identity per family (chosen at random) is the probe.
pub fn generate(params: &SynthParams) -> Result<SynthDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let d = params.dim;
    let mut families = Vec::with_capacity(params.n_families);
    let mut vectors = Vec::new();

    for f in 0..params.n_families {
        let family_center = normal_vec(&mut rng, d, params.family_spread);
        let mut identities = Vec::with_capacity(params.identities_per_family);
        for i in 0..params.identities_per_family {
            let offset = normal_vec(&mut rng, d, params.identity_spread);
            let center: Vec<f64> = family_center
                .iter()
                .zip(&offset)
                .map(|(a, b)| a + b)
                .collect();
            let mut images = Vec::with_capacity(params.images_per_identity);
            for p in 0..params.images_per_identity {
                let noise = normal_vec(&mut rng, d, params.image_noise);
                let values = center
                    .iter()
                    .zip(&noise)
                    .map(|(c, n)| (c + n) as f32)
                    .collect();
                let id = image_id(f, i, p);
                vectors.push(FeatureVector::new(id.clone(), values)?);
                images.push(id);
            }
            identities.push(IdentityRecord {
                id: identity_id(f, i),
                images,
            });
        }
        families.push(FamilyRecord {
            id: family_id(f),
            identities,
        });
    }

    let mut probe_identities = Vec::new();
    let mut gallery_identities = Vec::new();
    for (f, family) in families.iter().enumerate() {
        let probe = rng.random_range(0..family.identities.len());
        for i in 0..family.identities.len() {
            if i == probe {
                probe_identities.push(identity_id(f, i));
            } else {
                gallery_identities.push(identity_id(f, i));
            }
        }
    }

    Ok(SynthDataset {
        manifest: DatasetManifest::new(families)?,
        store: EmbeddingStore::from_vectors(d, vectors)?,
        split: Split {
            probe_identities,
            gallery_identities,
        },
    })
}

/// Expands each vector into a `dim × height × width` map whose positions
/// are the vector plus independent `spatial_noise` Gaussians.
pub fn feature_maps(
    store: &EmbeddingStore,
    height: usize,
    width: usize,
    spatial_noise: f64,
    seed: u64,
) -> Result<FeatureMapStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FeatureMapStore::new(store.dim(), height, width)?;
    let plane = height * width;
    for (id, v) in store.iter() {
        let mut values = Vec::with_capacity(v.len() * plane);
        for &c in v {
            for _ in 0..plane {
                let z: f64 = rng.sample(StandardNormal);
                values.push((f64::from(c) + spatial_noise * z) as f32);
            }
        }
        out.insert(FeatureMap::new(id, store.dim(), height, width, values)?)?;
    }
    Ok(out)
}

/// Reassigns gallery identities to families at random, keeping every
/// family's gallery size. Probe identities stay put, so each probe keeps the
/// same number of relevant gallery identities but which ones is random.
pub fn shuffle_gallery_families(
    manifest: &DatasetManifest,
    gallery_identities: &[String],
    seed: u64,
) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<(usize, usize)> = Vec::new();
    let mut records: Vec<IdentityRecord> = Vec::new();
    for (fi, family) in manifest.families().iter().enumerate() {
        for (ii, identity) in family.identities.iter().enumerate() {
            if gallery_identities.contains(&identity.id) {
                slots.push((fi, ii));
                records.push(identity.clone());
            }
        }
    }
    records.shuffle(&mut rng);
    let mut families = manifest.families().to_vec();
    for ((fi, ii), record) in slots.into_iter().zip(records) {
        families[fi].identities[ii] = record;
    }
    DatasetManifest::new(families)
}
