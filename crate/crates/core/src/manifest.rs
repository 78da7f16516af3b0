//! Family → identity → image hierarchy of a kinship dataset.
//!
//! The manifest is the single source of ground truth downstream: pair
//! labels, probe/gallery identity resolution and relevance judgments are
//! all derived from it.
//!
//! On disk it is JSON of the form
//!
//! ```json
//! {"families":[{"id":"F0001","identities":[{"id":"F0001/MID1","images":["F0001/MID1/P00001"]}]}]}
//! ```
//!
//! with every array sorted by id.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// File extensions counted as images during a directory scan.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub id: String,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub id: String,
    pub identities: Vec<IdentityRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    families: Vec<FamilyRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Location {
    family: usize,
    identity: usize,
}

/// Validated, sorted dataset manifest with id lookup indexes.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    families: Vec<FamilyRecord>,
    images: HashMap<String, Location>,
    identities: HashMap<String, Location>,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.families == other.families
    }
}

impl Eq for DatasetManifest {}

impl DatasetManifest {
    /// Builds a manifest, sorting every level by id and checking the
    /// structural invariants.
    pub fn new(mut families: Vec<FamilyRecord>) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::Manifest("no families found".into()));
        }
        for family in &mut families {
            for identity in &mut family.identities {
                identity.images.sort();
            }
            family.identities.sort_by(|a, b| a.id.cmp(&b.id));
        }
        families.sort_by(|a, b| a.id.cmp(&b.id));

        let small: Vec<&str> = families
            .iter()
            .filter(|f| f.identities.len() < 2)
            .map(|f| f.id.as_str())
            .collect();
        if !small.is_empty() {
            return Err(Error::Manifest(format!(
                "families with fewer than 2 identities: {}",
                small.join(", ")
            )));
        }
        let empty: Vec<&str> = families
            .iter()
            .flat_map(|f| &f.identities)
            .filter(|i| i.images.is_empty())
            .map(|i| i.id.as_str())
            .collect();
        if !empty.is_empty() {
            return Err(Error::Manifest(format!(
                "identities without images: {}",
                empty.join(", ")
            )));
        }

        let mut family_ids = BTreeSet::new();
        let mut images = HashMap::new();
        let mut identities = HashMap::new();
        for (fi, family) in families.iter().enumerate() {
            if !family_ids.insert(family.id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate family id `{}`",
                    family.id
                )));
            }
            for (ii, identity) in family.identities.iter().enumerate() {
                let loc = Location {
                    family: fi,
                    identity: ii,
                };
                if identities.insert(identity.id.clone(), loc).is_some() {
                    return Err(Error::Manifest(format!(
                        "duplicate identity id `{}`",
                        identity.id
                    )));
                }
                for image in &identity.images {
                    if images.insert(image.clone(), loc).is_some() {
                        return Err(Error::Manifest(format!("duplicate image id `{image}`")));
                    }
                }
            }
        }

        Ok(Self {
            families,
            images,
            identities,
        })
    }

    /// Scans a `root/<family>/<identity>/<image>.{jpg,jpeg,png}` tree.
    ///
    /// Identity ids are qualified as `family/identity` and image ids as
    /// `family/identity/stem`, so datasets that reuse identity or file names
    /// across families (e.g. `MID1`, `P00001`) still get unique ids.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::Manifest(format!(
                "dataset root `{}` does not exist or is not a directory",
                root.display()
            )));
        }
        let mut families = Vec::new();
        for family_dir in sorted_subdirs(root)? {
            let family_id = dir_name(&family_dir);
            let mut identities = Vec::new();
            for identity_dir in sorted_subdirs(&family_dir)? {
                let local = dir_name(&identity_dir);
                let identity_id = format!("{family_id}/{local}");
                let mut images = Vec::new();
                for entry in read_dir(&identity_dir)? {
                    if !entry.is_file() || !has_image_extension(&entry) {
                        continue;
                    }
                    if let Some(stem) = entry.file_stem().and_then(|s| s.to_str()) {
                        images.push(format!("{identity_id}/{stem}"));
                    }
                }
                identities.push(IdentityRecord {
                    id: identity_id,
                    images,
                });
            }
            families.push(FamilyRecord {
                id: family_id,
                identities,
            });
        }
        Self::new(families)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text)?;
        Self::new(file.families)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Borrowed<'a> {
            families: &'a [FamilyRecord],
        }
        Ok(serde_json::to_string_pretty(&Borrowed {
            families: &self.families,
        })?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn families(&self) -> &[FamilyRecord] {
        &self.families
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn identity_count(&self) -> usize {
        self.identities.len()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// All identities in manifest order.
    pub fn identities(&self) -> impl Iterator<Item = (&FamilyRecord, &IdentityRecord)> {
        self.families
            .iter()
            .flat_map(|f| f.identities.iter().map(move |i| (f, i)))
    }

    /// All image ids in manifest order.
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.identities()
            .flat_map(|(_, i)| i.images.iter().map(String::as_str))
    }

    pub fn contains_image(&self, image: &str) -> bool {
        self.images.contains_key(image)
    }

    pub fn identity_of(&self, image: &str) -> Result<&str> {
        let loc = self.image_location(image)?;
        Ok(&self.families[loc.family].identities[loc.identity].id)
    }

    pub fn family_of(&self, image: &str) -> Result<&str> {
        let loc = self.image_location(image)?;
        Ok(&self.families[loc.family].id)
    }

    pub fn family_of_identity(&self, identity: &str) -> Result<&str> {
        let loc = self
            .identities
            .get(identity)
            .ok_or_else(|| Error::UnknownIdentity(identity.to_string()))?;
        Ok(&self.families[loc.family].id)
    }

    pub fn identity(&self, identity: &str) -> Result<&IdentityRecord> {
        let loc = self
            .identities
            .get(identity)
            .ok_or_else(|| Error::UnknownIdentity(identity.to_string()))?;
        Ok(&self.families[loc.family].identities[loc.identity])
    }

    /// True iff both images belong to identities of the same family.
    pub fn same_family(&self, image_a: &str, image_b: &str) -> Result<bool> {
        let a = self.image_location(image_a)?;
        let b = self.image_location(image_b)?;
        Ok(a.family == b.family)
    }

    fn image_location(&self, image: &str) -> Result<Location> {
        self.images
            .get(image)
            .copied()
            .ok_or_else(|| Error::UnknownImage(image.to_string()))
    }
}

fn read_dir(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    Ok(read_dir(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            IMAGE_EXTENSIONS.contains(&e.as_str())
        })
        .unwrap_or(false)
}
