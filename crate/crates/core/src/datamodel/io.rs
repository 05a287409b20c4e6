use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use log::warn;
use serde_json::Value;

use super::{BoundingBox, Dataset, ImageSample, SegmentationMask};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub num_seg_classes: usize,
    /// Inferred as `max class id + 1` when absent.
    pub num_det_classes: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            num_seg_classes: 2,
            num_det_classes: None,
        }
    }
}

/// Reads any supported image file as 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8())
}

/// Loads `root/images`, `root/masks` and a box annotation sidecar with binary masks.
pub fn load_dataset(root: &Path, annotation_file: &Path) -> Result<Dataset> {
    load_dataset_with(root, annotation_file, &LoadOptions::default())
}

pub fn load_dataset_with(
    root: &Path,
    annotation_file: &Path,
    opts: &LoadOptions,
) -> Result<Dataset> {
    let annotations = read_annotations(annotation_file)?;
    let image_dir = root.join("images");
    let mask_dir = root.join("masks");

    let mut image_paths: Vec<PathBuf> = fs::read_dir(&image_dir)
        .map_err(|e| Error::io(&image_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| has_extension(p, &IMAGE_EXTENSIONS))
        .collect();
    image_paths.sort();

    let mut samples = Vec::with_capacity(image_paths.len());
    let mut max_class = None;
    for path in image_paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Annotation {
                path: path.clone(),
                message: "non UTF-8 file name".into(),
            })?
            .to_string();
        let image = read_rgb(&path)?;
        let (w, h) = (image.width() as usize, image.height() as usize);

        let mask_path = find_mask(&mask_dir, &id).ok_or_else(|| Error::MissingMask(id.clone()))?;
        let mask = read_mask(&mask_path, w, h, opts.num_seg_classes)?;

        let mut boxes = Vec::new();
        for raw in annotations.get(&id).map(Vec::as_slice).unwrap_or_default() {
            let b = raw.clamped(w as f64, h as f64);
            if !b.is_valid() {
                warn!("{id}: skipping degenerate box {raw:?} after clamping to {w}x{h}");
                continue;
            }
            max_class = max_class.max(Some(b.class_id));
            boxes.push(b);
        }
        samples.push(ImageSample {
            id,
            image,
            boxes,
            mask,
        });
    }
    let num_det_classes = opts
        .num_det_classes
        .unwrap_or_else(|| max_class.map_or(1, |c| c + 1));
    Dataset::new(samples, num_det_classes, opts.num_seg_classes)
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn find_mask(mask_dir: &Path, id: &str) -> Option<PathBuf> {
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| mask_dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

fn read_mask(
    path: &Path,
    width: usize,
    height: usize,
    num_classes: usize,
) -> Result<SegmentationMask> {
    let gray = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_luma8();
    if gray.width() as usize != width || gray.height() as usize != height {
        return Err(Error::Shape(format!(
            "mask {} is {}x{}, image is {width}x{height}",
            path.display(),
            gray.width(),
            gray.height()
        )));
    }
    // Lossy masks carry compression noise around the edges.
    let lossy = !has_extension(path, &["png"]);
    let data: Vec<u8> = if num_classes == 2 {
        gray.as_raw()
            .iter()
            .map(|&v| u8::from(if lossy { v >= 128 } else { v != 0 }))
            .collect()
    } else {
        gray.into_raw()
    };
    SegmentationMask::new(width, height, data)
}

/// Accepts `{id: [[x1, y1, x2, y2, class], ...]}` and the Kvasir-SEG
/// `{id: {"bbox": [{"xmin": .., "ymin": .., "xmax": .., "ymax": ..}]}}` layout.
fn read_annotations(path: &Path) -> Result<BTreeMap<String, Vec<BoundingBox>>> {
    let bad = |message: String| Error::Annotation {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| bad("top level must be an object keyed by image id".into()))?;

    let mut out = BTreeMap::new();
    for (id, entry) in obj {
        let boxes = match entry {
            Value::Array(list) => list
                .iter()
                .map(|b| parse_array_box(b).ok_or_else(|| bad(format!("{id}: malformed box {b}"))))
                .collect::<Result<Vec<_>>>()?,
            Value::Object(o) => o
                .get("bbox")
                .and_then(Value::as_array)
                .ok_or_else(|| bad(format!("{id}: expected a `bbox` list")))?
                .iter()
                .map(|b| parse_object_box(b).ok_or_else(|| bad(format!("{id}: malformed box {b}"))))
                .collect::<Result<Vec<_>>>()?,
            other => return Err(bad(format!("{id}: unexpected value {other}"))),
        };
        out.insert(id.clone(), boxes);
    }
    Ok(out)
}

fn parse_array_box(v: &Value) -> Option<BoundingBox> {
    let a = v.as_array()?;
    if a.len() != 5 {
        return None;
    }
    let f = |i: usize| a[i].as_f64();
    let class = a[4].as_u64()? as usize;
    Some(BoundingBox::new(f(0)?, f(1)?, f(2)?, f(3)?, class))
}

fn parse_object_box(v: &Value) -> Option<BoundingBox> {
    let f = |k: &str| v.get(k).and_then(Value::as_f64);
    let class = v.get("class_id").and_then(Value::as_u64).unwrap_or(0) as usize;
    Some(BoundingBox::new(
        f("xmin")?,
        f("ymin")?,
        f("xmax")?,
        f("ymax")?,
        class,
    ))
}

/// Writes a dataset in the on-disk layout read by [`load_dataset`]:
/// PNG images and masks plus `annotations.json`.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let image_dir = root.join("images");
    let mask_dir = root.join("masks");
    for dir in [&image_dir, &mask_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut ann = serde_json::Map::new();
    for s in ds.samples() {
        let img_path = image_dir.join(format!("{}.png", s.id));
        s.image
            .save(&img_path)
            .map_err(|e| Error::image(&img_path, e))?;
        let scale = if ds.num_seg_classes() == 2 { 255 } else { 1 };
        let mask = GrayImage::from_raw(
            s.mask.width() as u32,
            s.mask.height() as u32,
            s.mask.data().iter().map(|&v| v * scale).collect(),
        )
        .expect("mask buffer matches its dimensions");
        let mask_path = mask_dir.join(format!("{}.png", s.id));
        mask.save(&mask_path)
            .map_err(|e| Error::image(&mask_path, e))?;
        let boxes: Vec<Value> = s
            .boxes
            .iter()
            .map(|b| serde_json::json!([b.x_min, b.y_min, b.x_max, b.y_max, b.class_id]))
            .collect();
        ann.insert(s.id.clone(), Value::Array(boxes));
    }
    let ann_path = root.join("annotations.json");
    let text = serde_json::to_string_pretty(&Value::Object(ann))
        .map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&ann_path, text).map_err(|e| Error::io(&ann_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb, RgbImage};

    fn write_fixture(root: &Path, ids: &[&str], ann: &str) {
        fs::create_dir_all(root.join("images")).unwrap();
        fs::create_dir_all(root.join("masks")).unwrap();
        for id in ids {
            RgbImage::from_pixel(100, 100, Rgb([10, 20, 30]))
                .save(root.join(format!("images/{id}.png")))
                .unwrap();
            let mut m = GrayImage::new(100, 100);
            m.put_pixel(5, 5, Luma([200]));
            m.put_pixel(6, 5, Luma([1]));
            m.save(root.join(format!("masks/{id}.png"))).unwrap();
        }
        fs::write(root.join("annotations.json"), ann).unwrap();
    }

    #[test]
    fn loads_clamps_and_keeps_empty_samples() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_fixture(
            root,
            &["a", "b"],
            r#"{"a": [[-5, 10, 50, 60, 0], [70, 10, 60, 20, 0]], "b": []}"#,
        );
        let ds = load_dataset(root, &root.join("annotations.json")).unwrap();
        assert_eq!(ds.len(), 2);
        let a = &ds.samples()[0];
        assert_eq!(a.boxes, vec![BoundingBox::new(0.0, 10.0, 50.0, 60.0, 0)]);
        assert!(ds.samples()[1].boxes.is_empty());
        assert!(a.mask.data().iter().all(|&v| v <= 1));
        assert_eq!(a.mask.get(5, 5), 1);
        assert_eq!(a.mask.get(6, 5), 1);
        assert_eq!(a.mask.data().iter().filter(|&&v| v == 1).count(), 2);
    }

    #[test]
    fn missing_mask_names_the_image() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_fixture(root, &["a"], r#"{"a": []}"#);
        RgbImage::new(8, 8)
            .save(root.join("images/orphan.png"))
            .unwrap();
        let err = load_dataset(root, &root.join("annotations.json")).unwrap_err();
        assert!(
            matches!(err, Error::MissingMask(ref id) if id == "orphan"),
            "{err}"
        );
    }

    #[test]
    fn accepts_kvasir_style_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_fixture(
            root,
            &["a"],
            r#"{"a": {"height": 100, "width": 100, "bbox": [{"label": "polyp", "xmin": 1, "ymin": 2, "xmax": 30, "ymax": 40}]}}"#,
        );
        let ds = load_dataset(root, &root.join("annotations.json")).unwrap();
        assert_eq!(
            ds.samples()[0].boxes,
            vec![BoundingBox::new(1.0, 2.0, 30.0, 40.0, 0)]
        );
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_fixture(
            root,
            &["x", "y", "z"],
            r#"{"x": [[1, 1, 9, 9, 0]], "y": [], "z": [[0, 0, 100, 100, 0]]}"#,
        );
        let a = load_dataset(root, &root.join("annotations.json")).unwrap();
        let b = load_dataset(root, &root.join("annotations.json")).unwrap();
        assert_eq!(a.ids(), b.ids());
        for (sa, sb) in a.samples().iter().zip(b.samples()) {
            assert_eq!(sa.boxes, sb.boxes);
            assert_eq!(sa.mask, sb.mask);
            assert_eq!(sa.image, sb.image);
        }
    }
}
