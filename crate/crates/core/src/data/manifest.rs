//! Dataset discovery. A dataset root holds one directory per subset, each
//! with `real/` and `fake/` children of PGM or PNG files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{load_image, GrayImage};
use crate::error::{Error, Result};

pub const REAL_LABEL: u8 = 0;
pub const FAKE_LABEL: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub real_dir: PathBuf,
    pub fake_dir: PathBuf,
    pub real: Vec<PathBuf>,
    pub fake: Vec<PathBuf>,
    pub n_real: usize,
    pub n_fake: usize,
}

impl Subset {
    /// `(path, label)` pairs, reals first, each class in file-name order.
    pub fn samples(&self) -> Vec<(PathBuf, u8)> {
        self.real
            .iter()
            .map(|p| (p.clone(), REAL_LABEL))
            .chain(self.fake.iter().map(|p| (p.clone(), FAKE_LABEL)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.n_real + self.n_fake
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub subsets: Vec<Subset>,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn subset_at(name: String, dir: &Path) -> Result<Option<Subset>> {
    let (real_dir, fake_dir) = (dir.join("real"), dir.join("fake"));
    if !real_dir.is_dir() && !fake_dir.is_dir() {
        return Ok(None);
    }
    let real = image_files(&real_dir)?;
    let fake = image_files(&fake_dir)?;
    Ok(Some(Subset {
        name,
        n_real: real.len(),
        n_fake: fake.len(),
        real_dir,
        fake_dir,
        real,
        fake,
    }))
}

impl DatasetManifest {
    /// Discover subsets under `root`. A root that itself has `real/` or
    /// `fake/` is treated as a single subset named after the directory.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::Input(format!("dataset root {} is not a directory", root.display())));
        }
        let mut subsets = Vec::new();
        let own_name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| ".".into());
        if let Some(s) = subset_at(own_name, root)? {
            subsets.push(s);
        } else {
            let mut dirs: Vec<PathBuf> = fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            for d in dirs {
                let name = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
                if let Some(s) = subset_at(name, &d)? {
                    subsets.push(s);
                }
            }
        }
        let manifest = DatasetManifest {
            root: root.to_path_buf(),
            subsets,
        };
        if manifest.total() == 0 {
            return Err(Error::Input(format!("no images found under {}", root.display())));
        }
        Ok(manifest)
    }

    pub fn total(&self) -> usize {
        self.subsets.iter().map(Subset::len).sum()
    }

    /// All samples of all subsets in manifest order.
    pub fn samples(&self) -> Vec<(PathBuf, u8)> {
        self.subsets.iter().flat_map(Subset::samples).collect()
    }

    /// Decode every listed file. Fails on the first undecodable one.
    pub fn load_all(&self) -> Result<Vec<(GrayImage, u8)>> {
        self.samples()
            .into_iter()
            .map(|(p, l)| Ok((load_image(&p)?, l)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("manifest serialization: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Accept either a manifest JSON file or a dataset directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_file() {
            Self::read(path)
        } else {
            Self::scan(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::save_image;

    #[test]
    fn scan_finds_subsets_and_labels() {
        let tmp = tempfile::tempdir().unwrap();
        for (sub, class, n) in [("a", "real", 2), ("a", "fake", 1), ("b", "fake", 3), ("b", "real", 1)] {
            let d = tmp.path().join(sub).join(class);
            fs::create_dir_all(&d).unwrap();
            for i in 0..n {
                save_image(&GrayImage::filled(4, 4, i as u8), d.join(format!("{i}.pgm"))).unwrap();
            }
        }
        fs::write(tmp.path().join("a/real/notes.txt"), "x").unwrap();
        let m = DatasetManifest::scan(tmp.path()).unwrap();
        assert_eq!(m.subsets.len(), 2);
        assert_eq!((m.subsets[0].n_real, m.subsets[0].n_fake), (2, 1));
        let labels: Vec<u8> = m.subsets[1].samples().iter().map(|s| s.1).collect();
        assert_eq!(labels, vec![0, 1, 1, 1]);
        assert_eq!(m.load_all().unwrap().len(), 7);

        let path = tmp.path().join("m.json");
        m.write(&path).unwrap();
        assert_eq!(DatasetManifest::open(&path).unwrap(), m);
    }

    #[test]
    fn empty_root_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(DatasetManifest::scan(tmp.path()).is_err());
    }
}
