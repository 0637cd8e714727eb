use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// A vessel contour: a polyline with a radius at every vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    points: Vec<[f64; 2]>,
    radii: Vec<f64>,
}

impl Contour {
    pub fn new(points: Vec<[f64; 2]>, radii: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::param("points", "a contour needs at least 2 points"));
        }
        if radii.len() != points.len() {
            return Err(Error::param(
                "radii",
                format!("{} radii for {} points", radii.len(), points.len()),
            ));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("points", "non-finite coordinate"));
        }
        if let Some(r) = radii.iter().find(|r| !(r.is_finite() && **r >= 0.5)) {
            return Err(Error::param("radii", format!("radius {r} is below 0.5 px")));
        }
        Ok(Contour { points, radii })
    }

    /// Constant-radius contour.
    pub fn uniform(points: Vec<[f64; 2]>, radius: f64) -> Result<Self> {
        let radii = vec![radius; points.len()];
        Contour::new(points, radii)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

/// Reads a JSON list of `{"points": [[x, y], ...], "radii": [...]}`.
pub fn load_contours(path: impl AsRef<Path>) -> Result<Vec<Contour>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<Contour> = serde_json::from_slice(&bytes)?;
    // Re-validate; serde bypasses the constructor.
    raw.into_iter()
        .map(|c| Contour::new(c.points, c.radii))
        .collect()
}

/// Signed clearance of `p` from the tapered segment `a -> b`: the minimum
/// over `t` of `|p - lerp(a, b, t)| - lerp(ra, rb, t)`. The objective is
/// convex in `t`, so a bracketing search converges to the global minimum.
fn segment_clearance(p: [f64; 2], a: [f64; 2], b: [f64; 2], ra: f64, rb: f64) -> f64 {
    let f = |t: f64| {
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt() - (ra + t * (rb - ra))
    };
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return f(0.0).min(f(1.0));
    }
    if ra == rb {
        let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
        return f(t);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
}

/// Rasterizes contours: a pixel is foreground iff its center lies within the
/// linearly interpolated radius of some polyline segment. Points outside the
/// grid are clamped to it first.
pub fn rasterize_contours(contours: &[Contour], width: usize, height: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::empty(width, height)?;
    let clamp = |p: [f64; 2]| {
        [
            p[0].clamp(0.0, (width - 1) as f64),
            p[1].clamp(0.0, (height - 1) as f64),
        ]
    };
    for contour in contours {
        for (seg, rad) in contour.points.windows(2).zip(contour.radii.windows(2)) {
            let (a, b) = (clamp(seg[0]), clamp(seg[1]));
            let rmax = rad[0].max(rad[1]);
            let x_lo = (a[0].min(b[0]) - rmax).floor().max(0.0) as usize;
            let x_hi = ((a[0].max(b[0]) + rmax).ceil() as usize).min(width - 1);
            let y_lo = (a[1].min(b[1]) - rmax).floor().max(0.0) as usize;
            let y_hi = ((a[1].max(b[1]) + rmax).ceil() as usize).min(height - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    if !mask.get(x, y)
                        && segment_clearance([x as f64, y as f64], a, b, rad[0], rad[1]) <= 0.0
                    {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle for constant radius: closest point on each segment
    /// found by projection, checked at every pixel center.
    fn oracle(contours: &[Contour], width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            let p = [x as f64, y as f64];
            contours.iter().any(|c| {
                c.points().windows(2).any(|s| {
                    let r = c.radii()[0];
                    let (a, b) = (s[0], s[1]);
                    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                    let len2 = dx * dx + dy * dy;
                    let t = if len2 == 0.0 {
                        0.0
                    } else {
                        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
                    };
                    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
                    (p[0] - cx).powi(2) + (p[1] - cy).powi(2) <= r * r
                })
            })
        })
        .unwrap()
    }

    #[test]
    fn horizontal_segment_covers_one_row() {
        let c = Contour::uniform(vec![[1.0, 1.0], [5.0, 1.0]], 0.6).unwrap();
        let mask = rasterize_contours(&[c], 8, 4).unwrap();
        let expected =
            BinaryMask::from_rows(&["00000000", "01111100", "00000000", "00000000"]).unwrap();
        assert_eq!(mask, expected);
    }

    #[test]
    fn degenerate_contour_is_a_disc() {
        let c = Contour::uniform(vec![[3.0, 2.0], [3.0, 2.0]], 0.6).unwrap();
        let mask = rasterize_contours(&[c], 6, 5).unwrap();
        assert_eq!(mask.foreground().collect::<Vec<_>>(), vec![(3, 2)]);
    }

    #[test]
    fn empty_list_gives_empty_mask() {
        assert!(rasterize_contours(&[], 5, 5).unwrap().is_empty());
    }

    #[test]
    fn validates_contours() {
        assert!(Contour::uniform(vec![[0.0, 0.0]], 1.0).is_err());
        assert!(Contour::uniform(vec![[0.0, 0.0], [1.0, 1.0]], 0.4).is_err());
        assert!(Contour::new(vec![[0.0, 0.0], [1.0, 1.0]], vec![1.0]).is_err());
    }

    #[test]
    fn tapered_contour_grows_with_radius() {
        let c = Contour::new(vec![[2.0, 8.0], [28.0, 8.0]], vec![0.5, 4.0]).unwrap();
        let m = rasterize_contours(&[c], 32, 17).unwrap();
        let column_height = |x: usize| (0..17).filter(|&y| m.get(x, y)).count();
        assert_eq!(column_height(2), 1);
        assert!(column_height(26) >= 7);
        for x in 3..28 {
            assert!(column_height(x) >= column_height(x - 1));
        }
    }

    proptest::proptest! {
        #[test]
        fn agrees_with_brute_force(
            w in 1usize..=32, h in 1usize..=32,
            pts in proptest::collection::vec((0.0f64..32.0, 0.0f64..32.0), 2..6),
            r in 0.5f64..4.0,
        ) {
            let pts: Vec<[f64; 2]> = pts
                .into_iter()
                .map(|(x, y)| [x.min((w - 1) as f64), y.min((h - 1) as f64)])
                .collect();
            let c = Contour::uniform(pts, r).unwrap();
            let got = rasterize_contours(std::slice::from_ref(&c), w, h).unwrap();
            proptest::prop_assert_eq!(got, oracle(&[c], w, h));
        }
    }
}
