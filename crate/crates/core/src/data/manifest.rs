//! On-disk datasets: numbered PNGs plus a JSON manifest carrying the
//! generating spec and a SHA-256 per file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::image::Image;
use super::png_io::{encode_png, image_to_raw, load_image};
use super::synth::DatasetSpec;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub files: Vec<FileEntry>,
}

/// Writes `images` as `00000.png, 00001.png, …` and the manifest into `dir`.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, images: &[Image]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let width = images.len().to_string().len().max(5);
    let mut files = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = format!("{i:0width$}.png");
        let bytes = encode_png(&image_to_raw(img))?;
        fs::write(dir.join(&name), &bytes)?;
        files.push(FileEntry {
            name,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        files,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Image {
        path: path.clone(),
        message: format!("cannot read dataset manifest: {e}"),
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every image listed in the manifest of `dir`, verifying hashes.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Image>)> {
    let manifest = read_manifest(dir)?;
    let mut images = Vec::with_capacity(manifest.files.len());
    for entry in &manifest.files {
        let path = dir.join(&entry.name);
        let bytes = fs::read(&path)?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Image {
                path,
                message: "content hash does not match manifest".into(),
            });
        }
        images.push(load_image(&path)?);
    }
    Ok((manifest, images))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Family};

    #[test]
    fn dataset_round_trips_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            family: Family::DigitsGrid,
            count: 4,
            image_size: 16,
            channels: 1,
            seed: 1,
        };
        let images = generate_dataset(&spec).unwrap();
        let manifest = write_dataset(dir.path(), &spec, &images).unwrap();
        let (read, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(read, manifest);
        for (a, b) in images.iter().zip(&loaded) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1.0 / 255.0));
        }
        fs::write(dir.path().join(&manifest.files[0].name), b"junk").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
