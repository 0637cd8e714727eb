use crate::distance::{exact_edt, signed_edge_distance};
use crate::error::Result;
use crate::raster::{ensure_same_dims, no_feature_sentinel, BinaryMask, GrayImage};
use crate::skeleton::{centerline_pixels, thin, DEFAULT_TAU};

/// How an annotation's centerline field was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterlineSource {
    /// Supplied with the annotation (authoring-tool centerlines).
    Provided,
    /// Computed by thinning the binary mask.
    Derived,
}

/// One annotator's segmentation in three representations: binary mask,
/// signed distance to vessel edges, and unsigned distance to centerlines.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    annotator_id: String,
    mask: BinaryMask,
    edge_sdf: GrayImage,
    centerline_udf: GrayImage,
    centerline_source: CenterlineSource,
}

impl AnnotationSet {
    /// Assembles an annotation from precomputed rasters, e.g. as shipped in a
    /// dataset. All three must share dimensions.
    pub fn from_parts(
        annotator_id: impl Into<String>,
        mask: BinaryMask,
        edge_sdf: GrayImage,
        centerline_udf: GrayImage,
    ) -> Result<Self> {
        ensure_same_dims(mask.dims(), edge_sdf.dims())?;
        ensure_same_dims(mask.dims(), centerline_udf.dims())?;
        Ok(AnnotationSet {
            annotator_id: annotator_id.into(),
            mask,
            edge_sdf,
            centerline_udf,
            centerline_source: CenterlineSource::Provided,
        })
    }

    /// Provided centerline field with edge distances recomputed from the mask.
    pub fn with_centerline(
        annotator_id: impl Into<String>,
        mask: BinaryMask,
        centerline_udf: GrayImage,
    ) -> Result<Self> {
        let sdf = signed_edge_distance(&mask);
        AnnotationSet::from_parts(annotator_id, mask, sdf, centerline_udf)
    }

    pub fn annotator_id(&self) -> &str {
        &self.annotator_id
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn edge_sdf(&self) -> &GrayImage {
        &self.edge_sdf
    }

    pub fn centerline_udf(&self) -> &GrayImage {
        &self.centerline_udf
    }

    pub fn centerline_source(&self) -> CenterlineSource {
        self.centerline_source
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// Crops to a window and recomputes both distance fields inside it. The
    /// centerline pixels of the crop are those of the full annotation;
    /// distances are not copied because the nearest feature of a border
    /// pixel may lie outside the window.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<AnnotationSet> {
        let mask = self.mask.crop(x0, y0, width, height)?;
        let udf_crop = self.centerline_udf.crop(x0, y0, width, height)?;
        let centerline = centerline_pixels(&udf_crop, DEFAULT_TAU)?.to_mask();
        Ok(AnnotationSet {
            annotator_id: self.annotator_id.clone(),
            edge_sdf: signed_edge_distance(&mask).with_spacing_unchecked(self.edge_sdf.spacing()),
            centerline_udf: exact_edt(&centerline)
                .with_spacing_unchecked(self.centerline_udf.spacing()),
            mask,
            centerline_source: self.centerline_source,
        })
    }

    /// Rotates all three rasters clockwise by a multiple of 90 degrees.
    /// Distances between pixel centers are invariant under such rotations.
    pub fn rotate(&self, degrees: u32) -> Result<AnnotationSet> {
        Ok(AnnotationSet {
            annotator_id: self.annotator_id.clone(),
            mask: self.mask.rotate(degrees)?,
            edge_sdf: self.edge_sdf.rotate(degrees)?,
            centerline_udf: self.centerline_udf.rotate(degrees)?,
            centerline_source: self.centerline_source,
        })
    }

    /// The no-feature fill value for this annotation's grid.
    pub fn sentinel(&self) -> f64 {
        no_feature_sentinel(self.mask.width(), self.mask.height())
    }
}

/// Builds the three-representation annotation from a binary mask. The
/// centerline is the Zhang-Suen skeleton of the mask.
pub fn build_annotation(mask: BinaryMask, annotator_id: impl Into<String>) -> AnnotationSet {
    let edge_sdf = signed_edge_distance(&mask);
    let centerline_udf = exact_edt(&thin(&mask).to_mask());
    AnnotationSet {
        annotator_id: annotator_id.into(),
        mask,
        edge_sdf,
        centerline_udf,
        centerline_source: CenterlineSource::Derived,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel_annotation() {
        let m = BinaryMask::from_rows(&["000", "010", "000"]).unwrap();
        let a = build_annotation(m, "A1");
        assert_eq!(a.centerline_udf().get(1, 1), 0.0);
        assert_eq!(a.centerline_udf().get(0, 0), 2f64.sqrt());
        assert_eq!(a.centerline_source(), CenterlineSource::Derived);
    }

    #[test]
    fn empty_mask_fills_both_fields_with_sentinel() {
        let a = build_annotation(BinaryMask::empty(5, 4).unwrap(), "A2");
        assert!(a.edge_sdf().data().iter().all(|&v| v == 9.0));
        assert!(a.centerline_udf().data().iter().all(|&v| v == 9.0));
        assert_eq!(a.sentinel(), 9.0);
    }

    #[test]
    fn thin_line_is_all_centerline() {
        let m = BinaryMask::from_rows(&["00000000", "00111110", "00000000"]).unwrap();
        let a = build_annotation(m.clone(), "x");
        for (x, y) in m.foreground() {
            assert_eq!(a.centerline_udf().get(x, y), 0.0);
        }
    }

    #[test]
    fn from_parts_checks_dims() {
        let m = BinaryMask::empty(3, 3).unwrap();
        let g = GrayImage::filled(3, 2, 0.0).unwrap();
        assert!(AnnotationSet::from_parts("a", m, g.clone(), g).is_err());
    }

    proptest! {
        #[test]
        fn invariants_hold(w in 1usize..24, h in 1usize..24, seed in proptest::collection::vec(proptest::bool::weighted(0.35), 576)) {
            let mask = BinaryMask::new(w, h, seed[..w * h].to_vec()).unwrap();
            let a = build_annotation(mask.clone(), "r");
            prop_assert_eq!(a.edge_sdf().dims(), mask.dims());
            prop_assert_eq!(a.centerline_udf().dims(), mask.dims());
            for (i, &fg) in mask.bits().iter().enumerate() {
                prop_assert_eq!(a.edge_sdf().data()[i] < 0.0, fg);
            }
            prop_assert!(a.centerline_udf().data().iter().all(|&v| v >= 0.0));
            let has_zero = a.centerline_udf().data().contains(&0.0);
            prop_assert_eq!(has_zero, !mask.is_empty());
        }
    }
}
