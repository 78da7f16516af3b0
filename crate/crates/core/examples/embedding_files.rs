//! Writes and reads the binary embedding formats: pooled vectors (KEMB) and
//! spatial feature maps (KMAP), and shows average vs max pooling.
//!
//! cargo run --example embedding_files

use anyhow::Result;
use kinship_retrieval::embedding::{
    read_any, read_store, write_map_store, write_store, AnyStore, EmbeddingStore, FeatureMap,
    FeatureMapStore, FeatureVector, Pooling, KEMB_HEADER_LEN,
};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;

    let mut store = EmbeddingStore::new(4)?;
    store.insert(FeatureVector::new(
        "F0001/MID1/P1",
        vec![0.5, -1.0, 2.0, 0.0],
    )?)?;
    store.insert(FeatureVector::new(
        "F0001/MID2/P1",
        vec![0.25, 1.0, 1.5, -3.0],
    )?)?;
    let kemb = dir.path().join("vectors.kemb");
    write_store(&store, &kemb)?;
    let bytes = std::fs::metadata(&kemb)?.len();
    println!(
        "{} vectors, {bytes} bytes ({KEMB_HEADER_LEN}-byte header)",
        store.len()
    );
    assert_eq!(read_store(&kemb)?, store);

    // 2 channels on a 2 × 2 grid, channel-major
    let mut maps = FeatureMapStore::new(2, 2, 2)?;
    maps.insert(FeatureMap::new(
        "F0001/MID1/P1",
        2,
        2,
        2,
        vec![1.0, 2.0, 3.0, 6.0, -1.0, 0.0, 0.0, -3.0],
    )?)?;
    let kmap = dir.path().join("maps.kmap");
    write_map_store(&maps, &kmap)?;

    let AnyStore::Maps(loaded) = read_any(&kmap)? else {
        anyhow::bail!("expected feature maps");
    };
    for pooling in [Pooling::Average, Pooling::Max] {
        let pooled = loaded.pool(pooling)?;
        println!("{pooling:>4}: {:?}", pooled.get("F0001/MID1/P1").unwrap());
    }
    Ok(())
}
