//! Exact Euclidean distance transforms.
//!
//! The squared transform is computed separably: a column scan gives each
//! pixel's vertical distance to the nearest feature in its column, then a
//! per-row lower envelope of parabolas (Felzenszwalb & Huttenlocher) folds in
//! the horizontal direction. Squared distances are small integers, so the
//! result is exact; the final square root is the only rounding step.
//! Distances are measured between pixel centers.

use rayon::prelude::*;

use crate::error::Result;
use crate::raster::{no_feature_sentinel, BinaryMask, GrayImage};

/// A [`GrayImage`] holding per-pixel distances in pixels.
pub type DistanceField = GrayImage;

/// Marker for "no feature in this column" during the first pass.
const NONE: u64 = u64::MAX;

/// Exact squared Euclidean distance from every pixel to the nearest feature
/// pixel, or `None` when the mask has no features.
pub fn squared_edt(features: &BinaryMask) -> Option<Vec<u64>> {
    let (w, h) = features.dims();
    if features.is_empty() {
        return None;
    }
    let bits = features.bits();

    // Column pass, stored transposed so each column is contiguous.
    let mut cols = vec![NONE; w * h];
    cols.par_chunks_mut(h).enumerate().for_each(|(x, col)| {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if bits[y * w + x] {
                last = Some(y);
            }
            if let Some(l) = last {
                col[y] = (y - l) as u64;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if bits[y * w + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                let d = (n - y) as u64;
                if d < col[y] {
                    col[y] = d;
                }
            }
        }
    });

    // Row pass.
    let mut out = vec![0u64; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let f: Vec<u64> = (0..w)
            .map(|x| match cols[x * h + y] {
                NONE => NONE,
                g => g * g,
            })
            .collect();
        lower_envelope(&f, row);
    });
    Some(out)
}

/// One-dimensional squared distance transform of a sampled function `f`
/// (entries equal to [`NONE`] are absent). At least one entry must be
/// present; the caller guarantees this because every row of a nonempty mask
/// has some column with a feature.
fn lower_envelope(f: &[u64], out: &mut [u64]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let intersect = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] as f64 + qf * qf) - (f[p] as f64 + pf * pf)) / (2.0 * (qf - pf))
    };
    for (q, &fq) in f.iter().enumerate() {
        if fq == NONE {
            continue;
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
            continue;
        }
        let mut s = intersect(q, *v.last().unwrap());
        while s <= *z.last().unwrap() {
            v.pop();
            z.pop();
            if v.is_empty() {
                break;
            }
            s = intersect(q, *v.last().unwrap());
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        } else {
            v.push(q);
            z.push(s);
        }
    }
    debug_assert!(!v.is_empty());
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dx = q.abs_diff(p) as u64;
        *slot = dx * dx + f[p];
    }
}

/// Euclidean distance to the nearest feature pixel. An empty feature set
/// yields the no-feature sentinel everywhere.
pub fn exact_edt(features: &BinaryMask) -> DistanceField {
    let (w, h) = features.dims();
    let data = match squared_edt(features) {
        Some(sq) => sq.into_iter().map(|d| (d as f64).sqrt()).collect(),
        None => vec![no_feature_sentinel(w, h); w * h],
    };
    GrayImage::from_parts_unchecked(w, h, data)
}

/// Signed distance to vessel edges: positive outside the mask (distance to
/// the nearest foreground pixel), negative inside (minus the distance to the
/// nearest background pixel).
pub fn signed_edge_distance(mask: &BinaryMask) -> GrayImage {
    let outside = exact_edt(mask);
    let inside = exact_edt(&mask.complement());
    let data = mask
        .bits()
        .iter()
        .zip(outside.data().iter().zip(inside.data()))
        .map(|(&fg, (&o, &i))| if fg { -i } else { o })
        .collect();
    GrayImage::from_parts_unchecked(mask.width(), mask.height(), data)
}

/// Pixels whose centerline distance is strictly below `d`.
pub fn tube_mask(centerline_udf: &GrayImage, d: f64) -> Result<BinaryMask> {
    if d.is_nan() || d <= 0.0 {
        return Err(crate::Error::param(
            "d",
            format!("threshold {d} must be positive"),
        ));
    }
    BinaryMask::new(
        centerline_udf.width(),
        centerline_udf.height(),
        centerline_udf.data().iter().map(|&v| v < d).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_sq(mask: &BinaryMask) -> Option<Vec<u64>> {
        let feats: Vec<(usize, usize)> = mask.foreground().collect();
        if feats.is_empty() {
            return None;
        }
        let (w, h) = mask.dims();
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(
                    feats
                        .iter()
                        .map(|&(fx, fy)| {
                            let dx = x.abs_diff(fx) as u64;
                            let dy = y.abs_diff(fy) as u64;
                            dx * dx + dy * dy
                        })
                        .min()
                        .unwrap(),
                );
            }
        }
        Some(out)
    }

    fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..=max, 1..=max, 0.0f64..1.0).prop_flat_map(|(w, h, density)| {
            proptest::collection::vec(proptest::bool::weighted(density.max(0.01)), w * h)
                .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
        })
    }

    #[test]
    fn single_center_feature_3x3() {
        let m = BinaryMask::from_rows(&["000", "010", "000"]).unwrap();
        let d = exact_edt(&m);
        let s2 = 2f64.sqrt();
        assert_eq!(d.data(), &[s2, 1.0, s2, 1.0, 0.0, 1.0, s2, 1.0, s2]);
    }

    #[test]
    fn all_features_give_zeros() {
        let m = BinaryMask::from_fn(5, 4, |_, _| true).unwrap();
        assert!(exact_edt(&m).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_features_give_sentinel() {
        let m = BinaryMask::empty(7, 3).unwrap();
        assert!(exact_edt(&m).data().iter().all(|&v| v == 10.0));
        assert!(squared_edt(&m).is_none());
    }

    #[test]
    fn signed_distance_on_1x4() {
        let m = BinaryMask::from_rows(&["1100"]).unwrap();
        assert_eq!(signed_edge_distance(&m).data(), &[-2.0, -1.0, 1.0, 2.0]);
    }

    #[test]
    fn signed_distance_single_corner_pixel() {
        let m = BinaryMask::from_rows(&["10", "00"]).unwrap();
        let s = signed_edge_distance(&m);
        assert_eq!(s.data(), &[-1.0, 1.0, 1.0, 2f64.sqrt()]);
    }

    #[test]
    fn signed_distance_sentinel_sides() {
        let all = BinaryMask::from_fn(3, 2, |_, _| true).unwrap();
        assert!(signed_edge_distance(&all).data().iter().all(|&v| v == -5.0));
        let none = BinaryMask::empty(3, 2).unwrap();
        assert!(signed_edge_distance(&none).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn tube_around_single_pixel() {
        let m = BinaryMask::from_rows(&["00000", "00000", "00100", "00000", "00000"]).unwrap();
        let udf = exact_edt(&m);
        let tube = tube_mask(&udf, 1.5).unwrap();
        let expected =
            BinaryMask::from_rows(&["00000", "01110", "01110", "01110", "00000"]).unwrap();
        assert_eq!(tube, expected);
        assert_eq!(tube_mask(&udf, 0.5).unwrap(), m);
        assert!(tube_mask(&udf, 0.0).is_err());
        assert!(tube_mask(&udf, f64::NAN).is_err());
    }

    #[test]
    fn wide_and_tall_extremes() {
        let m = BinaryMask::from_fn(300, 1, |x, _| x == 299).unwrap();
        assert_eq!(exact_edt(&m).get(0, 0), 299.0);
        let m = BinaryMask::from_fn(1, 300, |_, y| y == 0).unwrap();
        assert_eq!(exact_edt(&m).get(0, 299), 299.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_brute_force(mask in mask_strategy(16)) {
            prop_assert_eq!(squared_edt(&mask), brute_force_sq(&mask));
        }
    }

    proptest! {
        #[test]
        fn adjacent_pixels_are_lipschitz(mask in mask_strategy(24)) {
            prop_assume!(!mask.is_empty());
            let d = exact_edt(&mask);
            let (w, h) = d.dims();
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        prop_assert!((d.get(x, y) - d.get(x + 1, y)).abs() <= 1.0 + 1e-12);
                    }
                    if y + 1 < h {
                        prop_assert!((d.get(x, y) - d.get(x, y + 1)).abs() <= 1.0 + 1e-12);
                    }
                    if x + 1 < w && y + 1 < h {
                        prop_assert!((d.get(x, y) - d.get(x + 1, y + 1)).abs() <= 2f64.sqrt() + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn signed_distance_sign_matches_mask(mask in mask_strategy(20)) {
            let s = signed_edge_distance(&mask);
            for (i, &fg) in mask.bits().iter().enumerate() {
                if fg { prop_assert!(s.data()[i] < 0.0) } else { prop_assert!(s.data()[i] > 0.0) }
            }
        }

        #[test]
        fn complement_negates(mask in mask_strategy(20)) {
            prop_assume!(!mask.is_empty() && mask.count() < mask.bits().len());
            let s = signed_edge_distance(&mask);
            let c = signed_edge_distance(&mask.complement());
            for (a, b) in s.data().iter().zip(c.data()) {
                prop_assert_eq!(*a, -*b);
            }
        }

        #[test]
        fn tubes_are_nested(mask in mask_strategy(20), mut ds in proptest::collection::vec(0.01f64..12.0, 2..8)) {
            let udf = exact_edt(&mask);
            ds.sort_by(f64::total_cmp);
            let tubes: Vec<BinaryMask> = ds.iter().map(|&d| tube_mask(&udf, d).unwrap()).collect();
            for pair in tubes.windows(2) {
                prop_assert!(pair[0].and_not(&pair[1]).unwrap().is_empty());
            }
        }
    }
}
