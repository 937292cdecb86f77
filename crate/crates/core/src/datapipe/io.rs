use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FoldAssignment, Label, Provenance, RoiImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Convert colour images by luminance instead of rejecting them.
    pub convert_color: bool,
    /// Accept a class directory that is missing or empty. Only augmentation
    /// makes sense on such a set.
    pub allow_empty_class: bool,
}

const EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads `root/benign/*` and `root/malignant/*`. Source ids are the paths
/// relative to `root` with `/` separators; records come sorted by id.
pub fn load_dataset(root: &Path, opts: LoadOptions) -> Result<Vec<RoiImage>> {
    let mut out = Vec::new();
    for label in Label::ALL {
        let dir = root.join(label.dir_name());
        if opts.allow_empty_class && !dir.is_dir() {
            continue;
        }
        let files = list_images(&dir)?;
        if files.is_empty() && !opts.allow_empty_class {
            return Err(Error::Dataset(format!("class {label} has no images")));
        }
        for path in files {
            let img = image::open(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            let gray = match img.color() {
                ColorType::L8 => img.into_luma8(),
                _ if opts.convert_color => img.to_luma8(),
                other => {
                    return Err(Error::Dataset(format!(
                        "{} is {other:?}, not 8-bit grayscale (enable colour conversion to accept it)",
                        path.display()
                    )))
                }
            };
            let (w, h) = gray.dimensions();
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.push(
                RoiImage::new(h as usize, w as usize, gray.into_raw(), label, id)
                    .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?,
            );
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("{} contains no images", root.display())));
    }
    out.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    Ok(out)
}

/// One line of the augmented-set manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_id: String,
    pub provenance: Provenance,
    pub label: Label,
    pub fold: Option<usize>,
    pub file_path: String,
}

fn file_stem(source_id: &str) -> String {
    let no_ext = match source_id.rsplit_once('.') {
        Some((stem, ext)) if !ext.contains('/') => stem,
        _ => source_id,
    };
    no_ext.replace(['/', '\\'], "_")
}

/// Writes every image as 8-bit PNG under `out/images/<label>/` plus
/// `out/manifest.csv`. Paths in the manifest are relative to `out`.
pub fn write_augmented_set(out: &Path, images: &[RoiImage], folds: Option<&FoldAssignment>) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::with_capacity(images.len());
    for label in Label::ALL {
        let dir = out.join("images").join(label.dir_name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for img in images {
        let rel = format!("images/{}/{}__{}.png", img.label, file_stem(&img.source_id), img.provenance);
        let path = out.join(&rel);
        let buf = GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone()).expect("pixel count checked at construction");
        buf.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        rows.push(ManifestRow {
            source_id: img.source_id.clone(),
            provenance: img.provenance,
            label: img.label,
            fold: folds.and_then(|f| f.fold_of(&img.source_id)),
            file_path: rel,
        });
    }
    let manifest = out.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::Runtime(format!("{}: {e}", manifest.display())))?;
    for row in &rows {
        w.serialize(row).map_err(|e| Error::Runtime(format!("{}: {e}", manifest.display())))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(rows)
}

/// Toy two-class set: benign images carry horizontal stripes, malignant
/// images vertical ones, with random period, phase, contrast and noise.
/// Useful wherever real ultrasound ROIs are not at hand.
pub fn synthetic_stripes(per_class: usize, side: usize, seed: u64) -> Vec<RoiImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for label in Label::ALL {
        for i in 0..per_class {
            let period = rng.random_range(3..=6) as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let contrast = rng.random_range(50.0..100.0);
            let base = rng.random_range(90.0..160.0);
            let mut px = Vec::with_capacity(side * side);
            for r in 0..side {
                for c in 0..side {
                    let t = if label == Label::Benign { r } else { c } as f64;
                    let v = base + contrast * (std::f64::consts::TAU * t / period + phase).sin() + rng.random_range(-20.0..20.0);
                    px.push(v.clamp(0.0, 255.0).round() as u8);
                }
            }
            out.push(RoiImage::new(side, side, px, label, format!("synthetic/{label}/{i:04}")).expect("side >= 2"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn write_gray(path: &Path, v: u8) {
        GrayImage::from_pixel(4, 3, image::Luma([v])).save(path).unwrap();
    }

    #[test]
    fn loads_by_directory_in_order() {
        let dir = tempfile::tempdir().unwrap();
        for d in ["benign", "malignant"] {
            std::fs::create_dir(dir.path().join(d)).unwrap();
        }
        for (i, name) in ["c.png", "a.png", "b.png"].iter().enumerate() {
            write_gray(&dir.path().join("benign").join(name), i as u8);
        }
        write_gray(&dir.path().join("malignant/z.png"), 9);
        write_gray(&dir.path().join("malignant/y.png"), 8);
        std::fs::write(dir.path().join("malignant/notes.txt"), "x").unwrap();
        let ds = load_dataset(dir.path(), LoadOptions::default()).unwrap();
        let ids: Vec<_> = ds.iter().map(|i| i.source_id.as_str()).collect();
        assert_eq!(ids, ["benign/a.png", "benign/b.png", "benign/c.png", "malignant/y.png", "malignant/z.png"]);
        assert_eq!(ds.iter().filter(|i| i.label == Label::Malignant).count(), 2);
        assert_eq!((ds[0].height, ds[0].width), (3, 4));
        assert_eq!(ds, load_dataset(dir.path(), LoadOptions::default()).unwrap());
    }

    #[test]
    fn rejects_empty_class_and_colour() {
        let dir = tempfile::tempdir().unwrap();
        for d in ["benign", "malignant"] {
            std::fs::create_dir(dir.path().join(d)).unwrap();
        }
        write_gray(&dir.path().join("benign/a.png"), 1);
        let err = load_dataset(dir.path(), LoadOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "dataset: class malignant has no images");
        let lenient = LoadOptions { allow_empty_class: true, ..Default::default() };
        assert_eq!(load_dataset(dir.path(), lenient).unwrap().len(), 1);
        RgbImage::from_pixel(3, 3, image::Rgb([255, 0, 0])).save(dir.path().join("malignant/r.png")).unwrap();
        assert!(matches!(load_dataset(dir.path(), LoadOptions::default()), Err(Error::Dataset(_))));
        let ds = load_dataset(dir.path(), LoadOptions { convert_color: true, ..Default::default() }).unwrap();
        assert!(ds[1].pixels.iter().all(|&p| p > 40 && p < 70));
        std::fs::write(dir.path().join("malignant/broken.png"), "not a png").unwrap();
        assert!(matches!(load_dataset(dir.path(), LoadOptions { convert_color: true, ..Default::default() }), Err(Error::Image { .. })));
    }

    #[test]
    fn augmented_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_stripes(3, 8, 1);
        let folds = crate::datapipe::stratified_folds(&ds, 3, 0).unwrap();
        let rows = write_augmented_set(dir.path(), &ds, Some(&folds)).unwrap();
        assert_eq!(rows.len(), 6);
        let back = image::open(dir.path().join(&rows[0].file_path)).unwrap().into_luma8();
        assert_eq!(back.into_raw(), ds[0].pixels);
        let text = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert!(text.starts_with("source_id,provenance,label,fold,file_path\n"));
        assert!(text.contains("synthetic/benign/0000,ORIGINAL,benign,"));
    }
}
