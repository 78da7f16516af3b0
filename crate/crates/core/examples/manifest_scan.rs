//! Builds a manifest from a `<root>/<family>/<identity>/<image>` tree and
//! queries kinship between images.
//!
//! cargo run --example manifest_scan -- [dataset-root]

use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use kinship_retrieval::manifest::DatasetManifest;

fn demo_tree() -> Result<(tempfile::TempDir, PathBuf)> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("faces");
    for f in [
        "F0001/MID1/P00001_face0.jpg",
        "F0001/MID1/P00002_face0.jpg",
        "F0001/MID2/P00001_face1.jpg",
        "F0002/MID1/P00010_face0.png",
        "F0002/MID3/P00011_face2.jpg",
        "F0002/MID3/README.txt",
    ] {
        let path = root.join(f);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(path, b"")?;
    }
    Ok((dir, root))
}

fn main() -> Result<()> {
    let (_guard, root) = match std::env::args().nth(1) {
        Some(p) => (tempfile::tempdir()?, PathBuf::from(p)),
        None => demo_tree()?,
    };
    let manifest = DatasetManifest::scan(&root)?;
    println!("{}", manifest.to_json()?);

    let images: Vec<&str> = manifest.image_ids().collect();
    let (a, b, c) = (images[0], images[1], images[images.len() - 1]);
    println!("{a} ~ {b}: {}", manifest.same_family(a, b)?);
    println!("{a} ~ {c}: {}", manifest.same_family(a, c)?);
    println!("{c} belongs to {}", manifest.identity_of(c)?);
    Ok(())
}
