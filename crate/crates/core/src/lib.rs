//! Kinship retrieval over face embeddings.
//!
//! Given per-image embeddings and a family → identity → image manifest, the
//! crate trains a fully-connected similarity head over combined feature
//! pairs, scores probe images against gallery images (FC head or cosine),
//! averages scores per identity pair, ranks gallery identities for each
//! probe identity, and evaluates the rankings with mAP and Rank@K.
//!
//! | module | role |
//! |---|---|
//! | [`manifest`] | dataset hierarchy, JSON persistence, same-family queries |
//! | [`embedding`] | feature maps/vectors, pooling, `KEMB`/`KMAP` files |
//! | [`pairing`] | seeded positive/negative pair sampling |
//! | [`similarity`] | feature combinations, FC head, cosine similarity |
//! | [`training`] | BCE/focal losses, backprop, gradient oracle, SGD |
//! | [`retrieval`] | score tables, identity merging, ranking |
//! | [`evaluation`] | AP, mAP, Rank@K, composite, ablation grid |
//! | [`synth`] | synthetic family-structured embeddings |
//! | [`cli`] | the `kinret` command line |
//!
//! The runnable programs under `examples/` walk through each stage.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod manifest;
pub mod pairing;
pub mod retrieval;
pub mod similarity;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
