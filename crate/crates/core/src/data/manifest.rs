use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::{load_pair, SamplePair};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Optional manifest inside a dataset root; overrides directory scanning.
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::input(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        if [train, val, test].iter().any(|v| !(0.0..=1.0).contains(v))
            || (train + val + test - 1.0).abs() > 1e-9
        {
            return Err(Error::input(format!(
                "split ratios {train}/{val}/{test} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(r)
    }
}

/// `stem -> path` for every `*.png` directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

impl DatasetManifest {
    /// Reads `root/manifest.csv` when present, otherwise pairs
    /// `root/images/*.png` with `root/masks/*.png` by file stem.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = root.join(MANIFEST_FILE);
        if manifest.is_file() {
            return Self::read_csv(&manifest);
        }
        let images = list_pngs(&root.join("images"))?;
        let masks = list_pngs(&root.join("masks"))?;
        if let Some(stem) = images.keys().find(|s| !masks.contains_key(*s)) {
            return Err(Error::input(format!("image `{stem}` has no mask in {}", root.display())));
        }
        if let Some(stem) = masks.keys().find(|s| !images.contains_key(*s)) {
            return Err(Error::input(format!("mask `{stem}` has no image in {}", root.display())));
        }
        let entries = images
            .into_iter()
            .map(|(id, image)| ManifestEntry {
                mask: masks[&id].clone(),
                id,
                image,
                split: None,
            })
            .collect::<Vec<_>>();
        if entries.is_empty() {
            return Err(Error::input(format!("no PNG pairs under {}", root.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    /// `id,image,mask,split` with paths relative to the file's directory;
    /// an empty split leaves the entry unassigned.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["id", "image", "mask", "split"] {
            return Err(Error::input(format!(
                "{}: header must be id,image,mask,split",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for record in reader.records() {
            let r = record?;
            let id = r[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::input(format!("{}: duplicate id `{id}`", path.display())));
            }
            entries.push(ManifestEntry {
                id,
                image: root.join(&r[1]),
                mask: root.join(&r[2]),
                split: if r[3].is_empty() { None } else { Some(r[3].parse()?) },
            });
        }
        if entries.is_empty() {
            return Err(Error::input(format!("{}: manifest is empty", path.display())));
        }
        Ok(Self { root, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| e.id.as_str())
            .collect()
    }

    /// Loads the entries of `split` (all entries when `None`) in parallel,
    /// preserving manifest order.
    pub fn load(&self, split: Option<Split>, size: usize) -> Result<Vec<SamplePair>> {
        self.entries
            .par_iter()
            .filter(|e| split.is_none() || e.split == split)
            .map(|e| load_pair(&e.id, &e.image, &e.mask, size))
            .collect()
    }
}

fn share(n: usize, ratio: f64) -> usize {
    // The epsilon keeps products like 10 * 0.3 from flooring to 2.
    ((n as f64 * ratio) + 1e-9).floor() as usize
}

/// Split of each of `n` items from a seeded shuffle. The validation and
/// test shares are floored; training takes the remainder.
pub fn assign_splits(n: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    if n == 0 {
        return Err(Error::input("cannot split an empty dataset"));
    }
    let n_val = share(n, ratios.val);
    let n_test = share(n, ratios.test);
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut out = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_val {
            out[i] = Split::Val;
        } else if rank < n_val + n_test {
            out[i] = Split::Test;
        }
    }
    Ok(out)
}

/// Assigns every entry a split with [`assign_splits`]. Entries keep their
/// manifest order.
pub fn make_splits(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    let splits = assign_splits(manifest.len(), ratios, seed)?;
    let mut out = manifest.clone();
    for (e, s) in out.entries.iter_mut().zip(splits) {
        e.split = Some(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(n: usize) -> DatasetManifest {
        DatasetManifest {
            root: PathBuf::from("."),
            entries: (0..n)
                .map(|i| ManifestEntry {
                    id: format!("s{i:04}"),
                    image: PathBuf::from(format!("images/s{i:04}.png")),
                    mask: PathBuf::from(format!("masks/s{i:04}.png")),
                    split: None,
                })
                .collect(),
        }
    }

    fn counts(m: &DatasetManifest) -> [usize; 3] {
        [Split::Train, Split::Val, Split::Test].map(|s| m.ids(s).len())
    }

    #[test]
    fn floor_on_held_out_shares() {
        let m = make_splits(&fake(617), SplitRatios::new(0.8, 0.0, 0.2).unwrap(), 3).unwrap();
        assert_eq!(counts(&m), [494, 0, 123]);
        let m = make_splits(&fake(10), SplitRatios::new(0.4, 0.3, 0.3).unwrap(), 3).unwrap();
        assert_eq!(counts(&m), [4, 3, 3]);
    }

    #[test]
    fn all_train_and_deterministic() {
        let m = make_splits(&fake(5), SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!(counts(&m), [5, 0, 0]);
        let r = SplitRatios::new(0.6, 0.2, 0.2).unwrap();
        assert_eq!(make_splits(&fake(50), r, 9).unwrap(), make_splits(&fake(50), r, 9).unwrap());
        assert_ne!(make_splits(&fake(50), r, 9).unwrap(), make_splits(&fake(50), r, 10).unwrap());
    }

    #[test]
    fn rejects_bad_ratios_and_empty() {
        assert!(SplitRatios::new(0.5, 0.2, 0.2).is_err());
        assert!(SplitRatios::new(1.2, -0.2, 0.0).is_err());
        let r = SplitRatios::new(1.0, 0.0, 0.0).unwrap();
        assert!(make_splits(&fake(0), r, 0).is_err());
    }

    #[test]
    fn manifest_csv_overrides_scan() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            "id,image,mask,split\na,img/a.png,msk/a.png,train\nb,img/b.png,msk/b.png,\n",
        )
        .unwrap();
        let m = DatasetManifest::scan(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].split, Some(Split::Train));
        assert_eq!(m.entries[1].split, None);
        assert_eq!(m.entries[1].mask, dir.path().join("msk/b.png"));
    }

    #[test]
    fn scan_requires_matching_stems() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["images", "masks"] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
        }
        std::fs::write(dir.path().join("images/a.png"), b"").unwrap();
        let err = DatasetManifest::scan(dir.path()).unwrap_err().to_string();
        assert!(err.contains("`a` has no mask"), "{err}");
    }
}
