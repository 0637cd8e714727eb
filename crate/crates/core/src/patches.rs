//! Patch extraction, disagreement-region labeling and rating-set
//! construction.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::AnnotationSet;
use crate::distance::exact_edt;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, rotate_point, BinaryMask, GrayImage};
use crate::skeleton::label_components;

/// Patch edge length used for rating sets.
pub const DEFAULT_PATCH_SIZE: usize = 128;

/// The fixed rating question.
pub const RATING_QUESTION: &str = "Do you think this is a vessel?";

/// Margin added to minimal enclosing circles of components.
pub const CIRCLE_MARGIN_PX: f64 = 2.0;

/// A full-size image with one annotation per annotator.
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub image: GrayImage,
    pub annotations: Vec<AnnotationSet>,
}

impl AnnotatedImage {
    pub fn new(
        image_id: impl Into<String>,
        image: GrayImage,
        annotations: Vec<AnnotationSet>,
    ) -> Result<Self> {
        for a in &annotations {
            ensure_same_dims(image.dims(), a.dims())?;
        }
        Ok(AnnotatedImage {
            image_id: image_id.into(),
            image,
            annotations,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub patch_id: String,
    pub source_image_id: String,
    pub origin: (usize, usize),
    pub size: usize,
    pub image: GrayImage,
    pub annotations: Vec<AnnotationSet>,
}

/// Stable identifier of a patch window: the first 16 hex digits of
/// SHA-256 over `source|x|y|size`.
pub fn patch_id(source_image_id: &str, origin: (usize, usize), size: usize) -> String {
    hex_prefix(
        format!("{source_image_id}|{}|{}|{size}", origin.0, origin.1).as_bytes(),
        16,
    )
}

pub(crate) fn hex_prefix(bytes: &[u8], n: usize) -> String {
    let digest = Sha256::digest(bytes);
    let mut s: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    s.truncate(n);
    s
}

/// 64-bit seed derived from a label, for per-item sub-streams.
pub(crate) fn derived_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}|{label}").as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

/// Draws `n` distinct patch windows uniformly over all valid
/// (source, origin) pairs and cuts them out. Distance fields are recomputed
/// inside each window. Output follows draw order and is identical for
/// identical inputs and seed regardless of thread count.
pub fn sample_patches(
    sources: &[AnnotatedImage],
    n: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    if n == 0 {
        return Err(Error::param("n", "patch count must be positive"));
    }
    if size == 0 {
        return Err(Error::param("size", "patch size must be positive"));
    }
    if sources.is_empty() {
        return Err(Error::EmptyInput("source image list"));
    }
    // Valid origin counts per source.
    let mut counts = Vec::with_capacity(sources.len());
    for s in sources {
        let (w, h) = s.image.dims();
        if size > w.min(h) {
            return Err(Error::param(
                "size",
                format!("patch size {size} exceeds source {} ({w}x{h})", s.image_id),
            ));
        }
        counts.push(((w - size + 1) * (h - size + 1)) as u64);
    }
    let total: u64 = counts.iter().sum();
    if n as u64 > total {
        return Err(Error::param(
            "n",
            format!("{n} patches requested but only {total} distinct windows exist"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut draws = Vec::with_capacity(n);
    while draws.len() < n {
        let mut k = rng.gen_range(0..total);
        let mut src = 0;
        while k >= counts[src] {
            k -= counts[src];
            src += 1;
        }
        if !seen.insert((src, k)) {
            continue;
        }
        let span = (sources[src].image.width() - size + 1) as u64;
        draws.push((src, ((k % span) as usize, (k / span) as usize)));
    }

    draws
        .into_par_iter()
        .map(|(src, (x, y))| {
            let s = &sources[src];
            Ok(Patch {
                patch_id: patch_id(&s.image_id, (x, y), size),
                source_image_id: s.image_id.clone(),
                origin: (x, y),
                size,
                image: s.image.crop(x, y, size, size)?,
                annotations: s
                    .annotations
                    .iter()
                    .map(|a| a.crop(x, y, size, size))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "BOTH")]
    Both,
    #[serde(rename = "A1_ONLY")]
    A1Only,
    #[serde(rename = "A2_ONLY")]
    A2Only,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::None,
        Category::Both,
        Category::A1Only,
        Category::A2Only,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::None => "NONE",
            Category::Both => "BOTH",
            Category::A1Only => "A1_ONLY",
            Category::A2Only => "A2_ONLY",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.r * self.r * (1.0 + 1e-12) + 1e-9
    }

    /// The circle in the frame of an image rotated clockwise by `degrees`.
    pub fn rotated(&self, width: usize, height: usize, degrees: u32) -> Circle {
        let (cx, cy) = rotate_point(self.cx, self.cy, width, height, degrees);
        Circle { cx, cy, r: self.r }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementComponent {
    pub category: Category,
    pub pixels: Vec<(usize, usize)>,
    pub circle: Circle,
}

/// NONE-candidate sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoneSampling {
    /// Radius of NONE circles in pixels.
    pub radius: f64,
    /// Minimum distance from the circle center to any foreground pixel of
    /// either annotation.
    pub min_clearance: f64,
    /// How many NONE circles to draw per patch.
    pub samples: usize,
    pub seed: u64,
}

impl Default for NoneSampling {
    fn default() -> Self {
        NoneSampling {
            radius: 16.0,
            min_clearance: 8.0,
            samples: 2,
            seed: 0,
        }
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull vertices (monotone chain, exact integer arithmetic).
fn convex_hull(points: &[(usize, usize)]) -> Vec<(i64, i64)> {
    let mut pts: Vec<(i64, i64)> = points.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn circle_two(a: (f64, f64), b: (f64, f64)) -> Circle {
    let (cx, cy) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    Circle {
        cx,
        cy,
        r: ((a.0 - cx).powi(2) + (a.1 - cy).powi(2)).sqrt(),
    }
}

fn circle_three(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Circle {
    let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
    if d.abs() < 1e-12 {
        // Collinear: the widest pair spans the others.
        let cands = [circle_two(a, b), circle_two(a, c), circle_two(b, c)];
        return cands
            .into_iter()
            .max_by(|p, q| p.r.total_cmp(&q.r))
            .unwrap();
    }
    let sq = |p: (f64, f64)| p.0 * p.0 + p.1 * p.1;
    let cx = (sq(a) * (b.1 - c.1) + sq(b) * (c.1 - a.1) + sq(c) * (a.1 - b.1)) / d;
    let cy = (sq(a) * (c.0 - b.0) + sq(b) * (a.0 - c.0) + sq(c) * (b.0 - a.0)) / d;
    Circle {
        cx,
        cy,
        r: ((a.0 - cx).powi(2) + (a.1 - cy).powi(2)).sqrt(),
    }
}

/// Minimal circle enclosing the given pixel centers (Welzl's incremental
/// algorithm over the convex hull, in a fixed pseudo-random order).
pub fn minimal_enclosing_circle(pixels: &[(usize, usize)]) -> Option<Circle> {
    let hull = convex_hull(pixels);
    let mut pts: Vec<(f64, f64)> = hull.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    if pts.is_empty() {
        return None;
    }
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut c = Circle {
        cx: pts[0].0,
        cy: pts[0].1,
        r: 0.0,
    };
    for i in 1..pts.len() {
        if c.contains(pts[i].0, pts[i].1) {
            continue;
        }
        c = Circle {
            cx: pts[i].0,
            cy: pts[i].1,
            r: 0.0,
        };
        for j in 0..i {
            if c.contains(pts[j].0, pts[j].1) {
                continue;
            }
            c = circle_two(pts[i], pts[j]);
            for k in 0..j {
                if !c.contains(pts[k].0, pts[k].1) {
                    c = circle_three(pts[i], pts[j], pts[k]);
                }
            }
        }
    }
    Some(c)
}

fn components_of(mask: &BinaryMask, category: Category) -> Vec<DisagreementComponent> {
    let (labels, n) = label_components(mask);
    let w = mask.width();
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            groups[l as usize - 1].push((i % w, i / w));
        }
    }
    groups
        .into_iter()
        .map(|pixels| {
            let mut circle = minimal_enclosing_circle(&pixels).expect("components are nonempty");
            circle.r += CIRCLE_MARGIN_PX;
            DisagreementComponent {
                category,
                pixels,
                circle,
            }
        })
        .collect()
}

/// Labels the regions where two annotations agree or disagree.
///
/// BOTH, A1_ONLY and A2_ONLY are the 8-connected components of `a AND b`,
/// `a AND NOT b` and `b AND NOT a`. NONE candidates are circles of
/// `none.radius` drawn at seeded random centers where the circle lies inside
/// the patch and contains no foreground of either annotation.
pub fn disagreement_components(
    a: &AnnotationSet,
    b: &AnnotationSet,
    none: &NoneSampling,
) -> Result<Vec<DisagreementComponent>> {
    ensure_same_dims(a.dims(), b.dims())?;
    let (ma, mb) = (a.mask(), b.mask());
    let mut out = components_of(&ma.and(mb)?, Category::Both);
    out.extend(components_of(&ma.and_not(mb)?, Category::A1Only));
    out.extend(components_of(&mb.and_not(ma)?, Category::A2Only));

    if none.samples > 0 {
        let (w, h) = a.dims();
        let clearance = exact_edt(&ma.or(mb)?);
        let r = none.radius;
        let need = r.max(none.min_clearance);
        let lo = r.ceil() as usize;
        let mut centers = Vec::new();
        if w > 2 * lo && h > 2 * lo {
            for y in lo..h - lo {
                for x in lo..w - lo {
                    if clearance.get(x, y) > need {
                        centers.push((x, y));
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(none.seed);
        let k = none.samples.min(centers.len());
        for idx in rand::seq::index::sample(&mut rng, centers.len(), k).into_vec() {
            let (cx, cy) = centers[idx];
            let pixels = disc_pixels(cx, cy, r, w, h);
            out.push(DisagreementComponent {
                category: Category::None,
                pixels,
                circle: Circle {
                    cx: cx as f64,
                    cy: cy as f64,
                    r,
                },
            });
        }
    }
    Ok(out)
}

fn disc_pixels(cx: usize, cy: usize, r: f64, w: usize, h: usize) -> Vec<(usize, usize)> {
    let ri = r.floor() as usize;
    let mut px = Vec::new();
    for y in cy.saturating_sub(ri)..=(cy + ri).min(h - 1) {
        for x in cx.saturating_sub(ri)..=(cx + ri).min(w - 1) {
            let (dx, dy) = (x.abs_diff(cx) as f64, y.abs_diff(cy) as f64);
            if dx * dx + dy * dy <= r * r {
                px.push((x, y));
            }
        }
    }
    px
}

/// Items requested per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quotas {
    #[serde(rename = "NONE")]
    pub none: usize,
    #[serde(rename = "BOTH")]
    pub both: usize,
    #[serde(rename = "A1_ONLY")]
    pub a1_only: usize,
    #[serde(rename = "A2_ONLY")]
    pub a2_only: usize,
}

impl Default for Quotas {
    fn default() -> Self {
        Quotas {
            none: 10,
            both: 30,
            a1_only: 30,
            a2_only: 30,
        }
    }
}

impl Quotas {
    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::None => self.none,
            Category::Both => self.both,
            Category::A1Only => self.a1_only,
            Category::A2Only => self.a2_only,
        }
    }

    pub fn total(&self) -> usize {
        Category::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

/// Number of duplicated, rotated consistency probes in a default set.
pub const DEFAULT_DUPLICATES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingItem {
    pub item_id: String,
    pub patch_id: String,
    /// Name of the image shown for this item (`patches/<image_ref>.png`).
    pub image_ref: String,
    pub circle: Circle,
    pub question: String,
    pub category: Category,
    #[serde(default)]
    pub duplicate_of: Option<String>,
    pub rotation_deg: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSet {
    pub seed: u64,
    pub patch_size: usize,
    pub quotas: Quotas,
    pub n_duplicates: usize,
    pub items: Vec<RatingItem>,
}

/// File name of a serialized [`RatingSet`] inside a rating directory.
pub const RATING_SET_FILE: &str = "rating_set.json";

impl RatingSet {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<RatingSet> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn item(&self, item_id: &str) -> Option<&RatingItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn base_items(&self) -> impl Iterator<Item = &RatingItem> {
        self.items.iter().filter(|i| i.duplicate_of.is_none())
    }
}

/// Image ref of a rotated duplicate.
pub fn rotated_image_ref(patch_id: &str, degrees: u32) -> String {
    if degrees.is_multiple_of(360) {
        patch_id.to_string()
    } else {
        format!("{patch_id}-rot{}", degrees % 360)
    }
}

/// Selects one circled region per patch to meet the category quotas, then
/// re-issues `n_duplicates` randomly chosen items rotated by 90, 180 or 270
/// degrees. Patches need at least two annotations (A1 first, A2 second).
///
/// Categories are filled scarcest-first so that distinct-patch selection
/// does not starve a rare category.
pub fn build_rating_set(
    patches: &[Patch],
    quotas: Quotas,
    n_duplicates: usize,
    seed: u64,
) -> Result<RatingSet> {
    let mut sorted: Vec<&Patch> = patches
        .iter()
        .filter(|p| p.annotations.len() >= 2)
        .collect();
    sorted.sort_by(|a, b| a.patch_id.cmp(&b.patch_id));
    sorted.dedup_by(|a, b| a.patch_id == b.patch_id);
    let patch_size = sorted.first().map_or(DEFAULT_PATCH_SIZE, |p| p.size);

    let per_patch = sorted
        .par_iter()
        .map(|p| {
            let none = NoneSampling {
                seed: derived_seed(seed, &p.patch_id),
                ..NoneSampling::default()
            };
            let comps = disagreement_components(&p.annotations[0], &p.annotations[1], &none)?;
            Ok(comps
                .into_iter()
                .map(|c| (p.patch_id.clone(), c.category, c.circle))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut candidates: BTreeMap<Category, Vec<(String, Circle)>> = BTreeMap::new();
    for (pid, cat, circle) in per_patch.into_iter().flatten() {
        candidates.entry(cat).or_default().push((pid, circle));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Category::ALL.to_vec();
    order.sort_by_key(|c| {
        let patches: HashSet<&str> = candidates.get(c).map_or(HashSet::new(), |v| {
            v.iter().map(|(p, _)| p.as_str()).collect()
        });
        (patches.len(), *c)
    });
    let mut used: HashSet<String> = HashSet::new();
    let mut chosen: BTreeMap<Category, Vec<(String, Circle)>> = BTreeMap::new();
    let mut shortfall = Vec::new();
    for cat in order {
        let want = quotas.get(cat);
        let mut pool = candidates.get(&cat).cloned().unwrap_or_default();
        pool.shuffle(&mut rng);
        let mut picked = Vec::new();
        for (pid, circle) in pool {
            if picked.len() == want {
                break;
            }
            if used.insert(pid.clone()) {
                picked.push((pid, circle));
            }
        }
        if picked.len() < want {
            shortfall.push((cat.as_str().to_string(), want, picked.len()));
        }
        chosen.insert(cat, picked);
    }
    if !shortfall.is_empty() {
        shortfall.sort();
        return Err(Error::Shortfall(shortfall));
    }

    let mut items = Vec::with_capacity(quotas.total() + n_duplicates);
    for cat in Category::ALL {
        for (pid, circle) in chosen.remove(&cat).unwrap_or_default() {
            items.push(RatingItem {
                item_id: format!("item-{:03}", items.len()),
                image_ref: pid.clone(),
                patch_id: pid,
                circle,
                question: RATING_QUESTION.to_string(),
                category: cat,
                duplicate_of: None,
                rotation_deg: 0,
            });
        }
    }
    let n_base = items.len();
    if n_duplicates > n_base {
        return Err(Error::param(
            "n_duplicates",
            format!("{n_duplicates} duplicates requested from {n_base} base items"),
        ));
    }
    let mut dup_sources = rand::seq::index::sample(&mut rng, n_base, n_duplicates).into_vec();
    dup_sources.sort_unstable();
    for src in dup_sources {
        let deg = [90, 180, 270][rng.gen_range(0..3)];
        let base = items[src].clone();
        items.push(RatingItem {
            item_id: format!("item-{:03}", items.len()),
            image_ref: rotated_image_ref(&base.patch_id, deg),
            circle: base.circle.rotated(patch_size, patch_size, deg),
            duplicate_of: Some(base.item_id.clone()),
            rotation_deg: deg,
            ..base
        });
    }
    Ok(RatingSet {
        seed,
        patch_size,
        quotas,
        n_duplicates,
        items,
    })
}
