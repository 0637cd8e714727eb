//! Centerline pixel sets: Zhang-Suen thinning of binary masks and
//! thresholding of centerline-distance fields.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

/// Centerline pixels of an annotation, kept in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    width: usize,
    height: usize,
    pixels: Vec<(usize, usize)>,
}

impl Skeleton {
    pub fn from_mask(mask: &BinaryMask) -> Skeleton {
        Skeleton {
            width: mask.width(),
            height: mask.height(),
            pixels: mask.foreground().collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut m = BinaryMask::empty(self.width, self.height).expect("skeleton dims are valid");
        for &(x, y) in &self.pixels {
            m.set(x, y, true);
        }
        m
    }

    /// Sparse `x,y` CSV with a header row.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "x,y")?;
        for &(x, y) in &self.pixels {
            writeln!(out, "{x},{y}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Neighbors P2..P9 clockwise from north, as (dx, dy).
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn ring_values(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (slot, (dx, dy)) in n.iter_mut().zip(RING) {
        *slot = mask.get_signed(x as isize + dx, y as isize + dy);
    }
    n
}

/// Zhang-Suen deletion test for one sub-iteration. `first` selects the
/// south-east pass (P2·P4·P6 = 0, P4·P6·P8 = 0); otherwise the north-west
/// pass (P2·P4·P8 = 0, P2·P6·P8 = 0).
fn deletable(n: &[bool; 8], first: bool) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *n;
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Labels 8-connected components; returns per-pixel labels (0 = background)
/// and the component count.
pub(crate) fn label_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// One sub-iteration: mark all deletable pixels against the current state,
/// then delete them together. A component whose every pixel is marked keeps
/// its first pixel in row-major order, so thinning never erases a component
/// (plain Zhang-Suen erases 2x2 blocks entirely).
fn subiteration(mask: &mut BinaryMask, first: bool) -> bool {
    let (w, h) = mask.dims();
    let snapshot = mask.clone();
    let marks: Vec<bool> = (0..w * h)
        .into_par_iter()
        .map(|i| snapshot.bits()[i] && deletable(&ring_values(&snapshot, i % w, i / w), first))
        .collect();
    if !marks.iter().any(|&m| m) {
        return false;
    }
    let (labels, n) = label_components(&snapshot);
    let mut survivor = vec![None; n + 1];
    let mut all_marked = vec![true; n + 1];
    for i in 0..w * h {
        let l = labels[i] as usize;
        if l == 0 {
            continue;
        }
        if survivor[l].is_none() {
            survivor[l] = Some(i);
        }
        if !marks[i] {
            all_marked[l] = false;
        }
    }
    let mut changed = false;
    for i in 0..w * h {
        if marks[i] {
            let l = labels[i] as usize;
            if all_marked[l] && survivor[l] == Some(i) {
                continue;
            }
            mask.set(i % w, i / w, false);
            changed = true;
        }
    }
    changed
}

/// Zhang-Suen thinning to a one-pixel-wide skeleton.
pub fn thin(mask: &BinaryMask) -> Skeleton {
    let mut work = mask.clone();
    loop {
        let a = subiteration(&mut work, true);
        let b = subiteration(&mut work, false);
        if !a && !b {
            break;
        }
    }
    Skeleton::from_mask(&work)
}

/// Pixels whose centerline distance is strictly below `tau` (default 0.5,
/// which selects exactly the zero-distance pixels).
pub fn centerline_pixels(centerline_udf: &GrayImage, tau: f64) -> Result<Skeleton> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::param("tau", format!("{tau} must be positive")));
    }
    let w = centerline_udf.width();
    Ok(Skeleton {
        width: w,
        height: centerline_udf.height(),
        pixels: centerline_udf
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < tau)
            .map(|(i, _)| (i % w, i / w))
            .collect(),
    })
}

pub const DEFAULT_TAU: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::exact_edt;
    use proptest::prelude::*;

    #[test]
    fn thin_line_is_its_own_skeleton() {
        let m = BinaryMask::from_rows(&["0000000", "0111110", "0000000"]).unwrap();
        assert_eq!(thin(&m).to_mask(), m);
    }

    #[test]
    fn empty_mask_gives_empty_skeleton() {
        assert!(thin(&BinaryMask::empty(4, 4).unwrap()).is_empty());
    }

    #[test]
    fn two_by_two_block_keeps_one_pixel() {
        let m = BinaryMask::from_rows(&["0000", "0110", "0110", "0000"]).unwrap();
        let s = thin(&m);
        assert_eq!(s.pixels(), &[(1, 1)]);
    }

    #[test]
    fn filled_square_golden() {
        // A textbook Zhang-Suen run reduces a 5x5 block to its center.
        let m = BinaryMask::from_rows(&[
            "0000000", "0111110", "0111110", "0111110", "0111110", "0111110", "0000000",
        ])
        .unwrap();
        let s = thin(&m);
        assert_eq!(s.pixels(), &[(3, 3)]);
    }

    #[test]
    fn centerline_threshold_selects_neighbors() {
        let m = BinaryMask::from_rows(&["00000", "00000", "00100", "00000", "00000"]).unwrap();
        let udf = exact_edt(&m);
        assert_eq!(centerline_pixels(&udf, 0.5).unwrap().pixels(), &[(2, 2)]);
        let cross = centerline_pixels(&udf, 1.1).unwrap();
        assert_eq!(cross.pixels(), &[(2, 1), (1, 2), (2, 2), (3, 2), (2, 3)]);
        assert!(centerline_pixels(&udf, 0.0).is_err());
    }

    #[test]
    fn sentinel_field_has_no_centerline() {
        let udf = exact_edt(&BinaryMask::empty(6, 6).unwrap());
        assert!(centerline_pixels(&udf, DEFAULT_TAU).unwrap().is_empty());
    }

    #[test]
    fn csv_export() {
        let s = Skeleton::from_mask(&BinaryMask::from_rows(&["010", "001"]).unwrap());
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y\n1,0\n2,1\n");
    }

    fn blobby_mask() -> impl Strategy<Value = BinaryMask> {
        (
            3usize..=20,
            3usize..=20,
            proptest::collection::vec((0usize..20, 0usize..20, 0usize..4), 1..6),
        )
            .prop_map(|(w, h, discs)| {
                BinaryMask::from_fn(w, h, |x, y| {
                    discs.iter().any(|&(cx, cy, r)| {
                        let dx = x.abs_diff(cx % w);
                        let dy = y.abs_diff(cy % h);
                        dx * dx + dy * dy <= r * r
                    })
                })
                .unwrap()
            })
    }

    /// Sequential textbook Zhang-Suen on a dense grid, no component guard.
    fn textbook_zs(mask: &BinaryMask) -> BinaryMask {
        let (w, h) = mask.dims();
        let mut img: Vec<Vec<bool>> = (0..h)
            .map(|y| (0..w).map(|x| mask.get(x, y)).collect())
            .collect();
        let at = |img: &Vec<Vec<bool>>, x: isize, y: isize| {
            x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && img[y as usize][x as usize]
        };
        loop {
            let mut changed = false;
            for step in 0..2 {
                let mut marked = Vec::new();
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        if !at(&img, x, y) {
                            continue;
                        }
                        let p: Vec<bool> = [
                            (0, -1),
                            (1, -1),
                            (1, 0),
                            (1, 1),
                            (0, 1),
                            (-1, 1),
                            (-1, 0),
                            (-1, -1),
                        ]
                        .iter()
                        .map(|&(dx, dy)| at(&img, x + dx, y + dy))
                        .collect();
                        let b = p.iter().filter(|&&v| v).count();
                        let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                        let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                        let c = if step == 0 {
                            !(p2 && p4 && p6) && !(p4 && p6 && p8)
                        } else {
                            !(p2 && p4 && p8) && !(p2 && p6 && p8)
                        };
                        if (2..=6).contains(&b) && a == 1 && c {
                            marked.push((x as usize, y as usize));
                        }
                    }
                }
                changed |= !marked.is_empty();
                for (x, y) in marked {
                    img[y][x] = false;
                }
            }
            if !changed {
                break;
            }
        }
        BinaryMask::from_fn(w, h, |x, y| img[y][x]).unwrap()
    }

    proptest! {
        #[test]
        fn matches_textbook_when_no_component_vanishes(mask in blobby_mask()) {
            let reference = textbook_zs(&mask);
            if label_components(&reference).1 == label_components(&mask).1 {
                prop_assert_eq!(thin(&mask).to_mask(), reference);
            }
        }

        #[test]
        fn skeleton_is_subset_and_idempotent(mask in blobby_mask()) {
            let s = thin(&mask);
            prop_assert!(s.to_mask().and_not(&mask).unwrap().is_empty());
            prop_assert_eq!(thin(&s.to_mask()), s);
        }

        #[test]
        fn thinning_preserves_component_count(mask in blobby_mask()) {
            let s = thin(&mask);
            prop_assert_eq!(label_components(&s.to_mask()).1, label_components(&mask).1);
        }

        #[test]
        fn centerline_round_trip(bits in proptest::collection::vec(proptest::bool::weighted(0.2), 144)) {
            let set = BinaryMask::new(12, 12, bits).unwrap();
            let back = centerline_pixels(&exact_edt(&set), DEFAULT_TAU).unwrap();
            prop_assert_eq!(back.to_mask(), set);
        }
    }
}
