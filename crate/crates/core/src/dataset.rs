//! On-disk dataset layout.
//!
//! A dataset root holds `dataset.json`:
//!
//! ```json
//! {"images": [{"id": "img01", "image": "images/img01.png", "spacing_mm": 0.3,
//!              "annotations": [{"annotator_id": "A1", "mask": "a1/img01.png",
//!                               "centerline_udf": "a1/img01_cl.png"}]}]}
//! ```
//!
//! Every path is relative to the root. An annotation is given as a `mask`
//! or as `contours` (a JSON contour list). Distance fields are optional
//! quantized fields; a missing centerline field is derived from the
//! contour polylines when contours are present and by thinning otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{build_annotation, AnnotationSet};
use crate::distance::exact_edt;
use crate::error::{Error, Result};
use crate::metrics::AnnotationPair;
use crate::patches::{AnnotatedImage, Patch};
use crate::raster::io::{
    load_field, load_gray, load_mask, save_field, save_gray, save_mask, BitDepth,
};
use crate::raster::{ensure_same_dims, load_contours, rasterize_contours, Contour, GrayImage};

pub const INDEX_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contours: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centerline_udf: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_sdf: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm: Option<f64>,
    /// Set for patches: the image the window was cut from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[usize; 2]>,
    pub annotations: Vec<AnnotationEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub images: Vec<ImageEntry>,
}

impl DatasetIndex {
    pub fn load(root: impl AsRef<Path>) -> Result<DatasetIndex> {
        let path = root.as_ref().join(INDEX_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let path = root.as_ref().join(INDEX_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn load_annotation(
    root: &Path,
    entry: &AnnotationEntry,
    dims: (usize, usize),
) -> Result<AnnotationSet> {
    let contours: Option<Vec<Contour>> = entry
        .contours
        .as_ref()
        .map(|c| load_contours(root.join(c)))
        .transpose()?;
    let mask = match (&entry.mask, &contours) {
        (Some(m), _) => load_mask(root.join(m))?,
        (None, Some(c)) => rasterize_contours(c, dims.0, dims.1)?,
        (None, None) => {
            return Err(Error::param(
                "annotations",
                format!(
                    "annotation {} has neither mask nor contours",
                    entry.annotator_id
                ),
            ))
        }
    };
    ensure_same_dims(dims, mask.dims())?;
    let udf = match (&entry.centerline_udf, &contours) {
        (Some(p), _) => Some(load_field(root.join(p))?.0),
        (None, Some(c)) => {
            let lines: Vec<Contour> = c
                .iter()
                .map(|c| Contour::uniform(c.points().to_vec(), 0.5))
                .collect::<Result<_>>()?;
            Some(exact_edt(&rasterize_contours(&lines, dims.0, dims.1)?))
        }
        (None, None) => None,
    };
    match (udf, &entry.edge_sdf) {
        (Some(udf), Some(sdf)) => AnnotationSet::from_parts(
            &entry.annotator_id,
            mask,
            load_field(root.join(sdf))?.0,
            udf,
        ),
        (Some(udf), None) => AnnotationSet::with_centerline(&entry.annotator_id, mask, udf),
        (None, _) => Ok(build_annotation(mask, &entry.annotator_id)),
    }
}

fn load_entry(root: &Path, entry: &ImageEntry) -> Result<AnnotatedImage> {
    let mut image = load_gray(root.join(&entry.image))?;
    if let Some(s) = entry.spacing_mm {
        image = image.with_spacing(s)?;
    }
    let annotations = entry
        .annotations
        .iter()
        .map(|a| load_annotation(root, a, image.dims()))
        .collect::<Result<_>>()?;
    AnnotatedImage::new(&entry.id, image, annotations)
}

/// Loads every image of a dataset root with its annotations.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    let root = root.as_ref();
    DatasetIndex::load(root)?
        .images
        .iter()
        .map(|e| load_entry(root, e))
        .collect()
}

/// Loads a patch set written by [`write_patch_set`].
pub fn load_patch_set(root: impl AsRef<Path>) -> Result<Vec<Patch>> {
    let root = root.as_ref();
    let index = DatasetIndex::load(root)?;
    index
        .images
        .iter()
        .map(|e| {
            let img = load_entry(root, e)?;
            let (w, h) = img.image.dims();
            if w != h {
                return Err(Error::param(
                    "images",
                    format!("patch {} is {w}x{h}, not square", e.id),
                ));
            }
            let origin = e.origin.unwrap_or([0, 0]);
            Ok(Patch {
                patch_id: e.id.clone(),
                source_image_id: e.source_image_id.clone().unwrap_or_else(|| e.id.clone()),
                origin: (origin[0], origin[1]),
                size: w,
                image: img.image,
                annotations: img.annotations,
            })
        })
        .collect()
}

/// Pairs the annotations `a_id` and `b_id` of every image that has both.
pub fn annotation_pairs(images: &[AnnotatedImage], a_id: &str, b_id: &str) -> Vec<AnnotationPair> {
    images
        .iter()
        .filter_map(|img| {
            let find = |id: &str| {
                img.annotations
                    .iter()
                    .find(|a| a.annotator_id() == id)
                    .cloned()
            };
            Some(AnnotationPair {
                image_id: img.image_id.clone(),
                a: find(a_id)?,
                b: find(b_id)?,
            })
        })
        .collect()
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

fn write_entries<'a>(
    root: &Path,
    image_dir: &str,
    entries: impl Iterator<
        Item = (
            &'a str,
            &'a GrayImage,
            &'a [AnnotationSet],
            Option<(&'a str, (usize, usize))>,
        ),
    >,
) -> Result<DatasetIndex> {
    for dir in [image_dir, "annotations"] {
        let p: PathBuf = root.join(dir);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut index = DatasetIndex::default();
    for (id, img, anns, placement) in entries {
        let image = rel(&[image_dir, &format!("{id}.png")]);
        save_gray(img, root.join(&image), BitDepth::Sixteen)?;
        let mut annotations = Vec::new();
        for a in anns {
            let stem = format!("{id}_{}", a.annotator_id());
            let mask = rel(&["annotations", &format!("{stem}_mask.png")]);
            let udf = rel(&["annotations", &format!("{stem}_udf.png")]);
            let sdf = rel(&["annotations", &format!("{stem}_sdf.png")]);
            save_mask(a.mask(), root.join(&mask))?;
            let sentinel = a.sentinel();
            let udf_empty = a.centerline_udf().data().iter().all(|&v| v == sentinel);
            save_field(
                a.centerline_udf(),
                root.join(&udf),
                BitDepth::Sixteen,
                udf_empty.then_some(sentinel),
            )?;
            save_field(
                a.edge_sdf(),
                root.join(&sdf),
                BitDepth::Sixteen,
                a.mask().is_empty().then_some(sentinel),
            )?;
            annotations.push(AnnotationEntry {
                annotator_id: a.annotator_id().to_string(),
                mask: Some(mask),
                contours: None,
                centerline_udf: Some(udf),
                edge_sdf: Some(sdf),
            });
        }
        index.images.push(ImageEntry {
            id: id.to_string(),
            image,
            spacing_mm: (img.spacing() != 1.0).then_some(img.spacing()),
            source_image_id: placement.map(|(s, _)| s.to_string()),
            origin: placement.map(|(_, (x, y))| [x, y]),
            annotations,
        });
    }
    index.save(root)?;
    Ok(index)
}

/// Writes patches as a dataset root: 16-bit PNG images under `patches/`,
/// masks and quantized distance fields under `annotations/`, and the index.
/// Returns the written index.
pub fn write_patch_set(root: impl AsRef<Path>, patches: &[Patch]) -> Result<DatasetIndex> {
    write_entries(
        root.as_ref(),
        "patches",
        patches.iter().map(|p| {
            (
                p.patch_id.as_str(),
                &p.image,
                p.annotations.as_slice(),
                Some((p.source_image_id.as_str(), p.origin)),
            )
        }),
    )
}

/// Writes full images in the same layout, with images under `images/`.
pub fn write_dataset(root: impl AsRef<Path>, images: &[AnnotatedImage]) -> Result<DatasetIndex> {
    write_entries(
        root.as_ref(),
        "images",
        images.iter().map(|i| {
            (
                i.image_id.as_str(),
                &i.image,
                i.annotations.as_slice(),
                None,
            )
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::sample_patches;
    use crate::raster::BinaryMask;
    use crate::skeleton::centerline_pixels;

    fn source() -> AnnotatedImage {
        let image =
            GrayImage::from_fn(24, 20, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        let a = build_annotation(
            BinaryMask::from_fn(24, 20, |_, y| (9..12).contains(&y)).unwrap(),
            "A1",
        );
        let b = build_annotation(
            BinaryMask::from_fn(24, 20, |x, y| (10..12).contains(&y) && x < 16).unwrap(),
            "A2",
        );
        AnnotatedImage::new("src", image, vec![a, b]).unwrap()
    }

    #[test]
    fn patch_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let patches = sample_patches(&[source()], 4, 12, 3).unwrap();
        write_patch_set(dir.path(), &patches).unwrap();
        let back = load_patch_set(dir.path()).unwrap();
        assert_eq!(back.len(), patches.len());
        for (p, q) in patches.iter().zip(&back) {
            assert_eq!(p.patch_id, q.patch_id);
            assert_eq!(p.origin, q.origin);
            for (x, y) in p.image.data().iter().zip(q.image.data()) {
                assert!((x - y).abs() < 1e-4);
            }
            for (a, b) in p.annotations.iter().zip(&q.annotations) {
                assert_eq!(a.mask(), b.mask());
                let ca = centerline_pixels(a.centerline_udf(), 0.5).unwrap();
                let cb = centerline_pixels(b.centerline_udf(), 0.5).unwrap();
                assert_eq!(ca, cb);
            }
        }
    }

    #[test]
    fn contours_give_provided_centerlines() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("c.json"),
            r#"[{"points": [[1, 2], [8, 2]], "radii": [1.2, 1.2]}]"#,
        )
        .unwrap();
        save_gray(
            &GrayImage::filled(10, 5, 0.5).unwrap(),
            dir.path().join("i.png"),
            BitDepth::Eight,
        )
        .unwrap();
        let index = DatasetIndex {
            images: vec![ImageEntry {
                id: "i".into(),
                image: "i.png".into(),
                spacing_mm: Some(0.25),
                source_image_id: None,
                origin: None,
                annotations: vec![AnnotationEntry {
                    annotator_id: "A1".into(),
                    mask: None,
                    contours: Some("c.json".into()),
                    centerline_udf: None,
                    edge_sdf: None,
                }],
            }],
        };
        index.save(dir.path()).unwrap();
        let imgs = load_dataset(dir.path()).unwrap();
        assert_eq!(imgs[0].image.spacing(), 0.25);
        let a = &imgs[0].annotations[0];
        let cl = centerline_pixels(a.centerline_udf(), 0.5).unwrap();
        assert_eq!(
            cl.pixels(),
            (1..=8).map(|x| (x, 2)).collect::<Vec<_>>().as_slice()
        );
        assert!(a.mask().get(4, 1) && a.mask().get(4, 3) && !a.mask().get(4, 0));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![source()];
        let index = write_dataset(dir.path(), &imgs).unwrap();
        assert_eq!(index.images[0].image, "images/src.png");
        assert_eq!(index.images[0].origin, None);
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back[0].annotations[1].mask(), imgs[0].annotations[1].mask());
    }

    #[test]
    fn pairs_need_both_annotators() {
        let s = source();
        assert_eq!(
            annotation_pairs(std::slice::from_ref(&s), "A1", "A2").len(),
            1
        );
        assert!(annotation_pairs(&[s], "A1", "A3").is_empty());
    }
}
