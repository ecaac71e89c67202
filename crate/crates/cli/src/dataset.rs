//! Class-folder datasets: one subdirectory per class, one image per file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{PipelineError, Result};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetItem {
    /// `class/stem`.
    pub id: String,
    pub path: PathBuf,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub items: Vec<DatasetItem>,
    pub class_names: Vec<String>,
}

impl DatasetIndex {
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.class_id).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_names.len()];
        for i in &self.items {
            c[i.class_id] += 1;
        }
        c
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["item_id", "class_id", "class_name", "path"])?;
        for i in &self.items {
            w.write_record([
                i.id.as_str(),
                &i.class_id.to_string(),
                &self.class_names[i.class_id],
                &i.path.to_string_lossy(),
            ])?;
        }
        w.flush().map_err(PipelineError::io(path))
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Indexes `root`, sorting classes by directory name and images by file name.
/// Every image header is decoded so unreadable files fail here.
pub fn ingest_dataset(root: &Path) -> Result<DatasetIndex> {
    let read = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v = fs::read_dir(p)
            .map_err(PipelineError::io(p))?
            .map(|e| e.map(|e| e.path()).map_err(PipelineError::io(p)))
            .collect::<Result<Vec<_>>>()?;
        v.sort();
        Ok(v)
    };
    let mut class_names = Vec::new();
    let mut items = Vec::new();
    for dir in read(root)?.into_iter().filter(|p| p.is_dir()) {
        let class = dir.file_name().unwrap().to_string_lossy().into_owned();
        let class_id = class_names.len();
        let mut stems = BTreeMap::new();
        for path in read(&dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            if let Some(prev) = stems.insert(stem.clone(), path.clone()) {
                return Err(PipelineError::Data(format!(
                    "class `{class}` has two images named `{stem}`: {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
            image::ImageReader::open(&path)
                .and_then(|r| r.with_guessed_format())
                .map_err(PipelineError::io(&path))?
                .into_dimensions()
                .map_err(|e| PipelineError::Data(format!("unreadable image {}: {e}", path.display())))?;
            items.push(DatasetItem { id: format!("{class}/{stem}"), path, class_id });
        }
        if stems.is_empty() {
            return Err(PipelineError::Data(format!("class `{class}` has no images")));
        }
        class_names.push(class);
    }
    if class_names.is_empty() {
        return Err(PipelineError::Data(format!("{} has no class directories", root.display())));
    }
    Ok(DatasetIndex { items, class_names })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(path: &Path) {
        image::RgbImage::from_pixel(4, 3, image::Rgb([10, 20, 30])).save(path).unwrap();
    }

    #[test]
    fn sorted_classes_and_items() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["zebra", "alpha", "mid"] {
            fs::create_dir(dir.path().join(class)).unwrap();
            for i in (0..10).rev() {
                png(&dir.path().join(class).join(format!("{class}_{i:02}.png")));
            }
        }
        fs::write(dir.path().join("alpha").join("notes.txt"), "x").unwrap();
        let idx = ingest_dataset(dir.path()).unwrap();
        assert_eq!(idx.items.len(), 30);
        assert_eq!(idx.class_names, ["alpha", "mid", "zebra"]);
        assert_eq!(idx.class_counts(), [10, 10, 10]);
        assert_eq!(idx.items[0].id, "alpha/alpha_00");
        assert_eq!(idx.items[29].id, "zebra/zebra_09");
        assert!(idx.labels().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn empty_class_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("full")).unwrap();
        png(&dir.path().join("full").join("a.png"));
        fs::create_dir(dir.path().join("hollow")).unwrap();
        let err = ingest_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("`hollow`"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn unreadable_and_duplicate_images_fail() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("c")).unwrap();
        fs::write(dir.path().join("c").join("broken.png"), b"not an image").unwrap();
        assert!(ingest_dataset(dir.path()).unwrap_err().to_string().contains("broken.png"));

        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("c")).unwrap();
        png(&dir.path().join("c").join("a.png"));
        png(&dir.path().join("c").join("a.bmp"));
        assert!(ingest_dataset(dir.path()).unwrap_err().to_string().contains("two images named `a`"));
    }
}
