//! Seeded synthetic vessel images with two simulated annotators.
//!
//! Each image holds a few random-walk vessels with tapering radii, drawn
//! dark on a bright, lightly noisy background. Both annotators trace every
//! vessel with independent low-frequency centerline jitter and slightly
//! different radii; in addition each annotator misses some faint side
//! branches the other one traced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::AnnotationSet;
use crate::distance::exact_edt;
use crate::error::Result;
use crate::patches::{derived_seed, AnnotatedImage};
use crate::raster::{rasterize_contours, Contour, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Main vessels per image.
    pub vessels: usize,
    /// Peak centerline displacement of the annotators, pixels.
    pub jitter_px: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 256,
            height: 256,
            vessels: 4,
            jitter_px: 1.0,
        }
    }
}

/// A traced vessel: centerline points and radii.
#[derive(Debug, Clone)]
struct Vessel {
    points: Vec<[f64; 2]>,
    radii: Vec<f64>,
    faint: bool,
}

fn random_walk(
    rng: &mut ChaCha8Rng,
    start: [f64; 2],
    heading: f64,
    steps: usize,
    r0: f64,
    p: &SynthParams,
) -> Vessel {
    let (w, h) = (p.width as f64, p.height as f64);
    let mut pts = vec![start];
    let mut angle = heading;
    let mut turn = 0.0;
    for _ in 0..steps {
        turn = 0.8 * turn + rng.gen_range(-0.12..0.12);
        angle += turn;
        let last = *pts.last().expect("non-empty");
        let next = [last[0] + 2.0 * angle.cos(), last[1] + 2.0 * angle.sin()];
        if next[0] < 1.0 || next[1] < 1.0 || next[0] > w - 2.0 || next[1] > h - 2.0 {
            break;
        }
        pts.push(next);
    }
    if pts.len() < 2 {
        pts.push([start[0] + 1.0, start[1]]);
    }
    let n = pts.len();
    let radii = (0..n)
        .map(|i| (r0 * (1.0 - 0.4 * i as f64 / n as f64)).max(0.8))
        .collect();
    Vessel {
        points: pts,
        radii,
        faint: false,
    }
}

fn vessels(rng: &mut ChaCha8Rng, p: &SynthParams) -> Vec<Vessel> {
    let mut out = Vec::new();
    for _ in 0..p.vessels {
        let start = [
            rng.gen_range(0.1..0.9) * p.width as f64,
            rng.gen_range(0.1..0.9) * p.height as f64,
        ];
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let steps = rng.gen_range(20..(p.width.max(p.height) / 2).max(21));
        let r0 = rng.gen_range(1.5..3.5);
        let main = random_walk(rng, start, heading, steps, r0, p);
        // Faint side branch from the middle of the vessel.
        let anchor = main.points[main.points.len() / 2];
        let side = heading + if rng.gen_bool(0.5) { 1.2 } else { -1.2 };
        let branch_steps = rng.gen_range(8..20);
        let mut branch = random_walk(rng, anchor, side, branch_steps, 1.0, p);
        branch.faint = true;
        out.push(main);
        out.push(branch);
    }
    out
}

/// Traces a vessel with smooth perpendicular displacement and radius bias.
fn trace(rng: &mut ChaCha8Rng, v: &Vessel, jitter: f64) -> Result<Contour> {
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let freq = rng.gen_range(0.05..0.15);
    let amp = jitter * rng.gen_range(0.5..1.0);
    let scale = rng.gen_range(0.85..1.15);
    let n = v.points.len();
    let points = (0..n)
        .map(|i| {
            let (a, b) = (v.points[i.saturating_sub(1)], v.points[(i + 1).min(n - 1)]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = (dx * dx + dy * dy).sqrt().max(1e-9);
            let off = amp * (phase + freq * i as f64 * 2.0).sin();
            [
                v.points[i][0] - dy / len * off,
                v.points[i][1] + dx / len * off,
            ]
        })
        .collect();
    let radii = v.radii.iter().map(|r| (r * scale).max(0.5)).collect();
    Contour::new(points, radii)
}

fn render(vessels: &[Vessel], rng: &mut ChaCha8Rng, p: &SynthParams) -> Result<GrayImage> {
    let (w, h) = (p.width, p.height);
    let mut darkness = vec![0.0f64; w * h];
    for v in vessels {
        let contrast = if v.faint { 0.08 } else { 0.35 };
        let line = Contour::uniform(v.points.clone(), 0.5)?;
        let dist = exact_edt(&rasterize_contours(&[line], w, h)?);
        let r = v.radii.iter().sum::<f64>() / v.radii.len() as f64;
        for (d, &e) in darkness.iter_mut().zip(dist.data()) {
            let t = e / r;
            *d = d.max(contrast * (-t * t).exp());
        }
    }
    let data = darkness
        .iter()
        .map(|d| (0.85 - d + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(w, h, data)
}

/// One synthetic image with annotators `A1` and `A2`, together with the
/// contours each of them traced.
pub fn synthetic_image(
    id: &str,
    p: &SynthParams,
    seed: u64,
) -> Result<(AnnotatedImage, [Vec<Contour>; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, id));
    let vs = vessels(&mut rng, p);
    let image = render(&vs, &mut rng, p)?;
    let mut traced: [Vec<Contour>; 2] = [Vec::new(), Vec::new()];
    for v in &vs {
        // Faint branches are traced by only one annotator a third of the
        // time each, by both otherwise.
        let who = if v.faint { rng.gen_range(0..3) } else { 2 };
        for (k, t) in traced.iter_mut().enumerate() {
            if who == 2 || who == k {
                t.push(trace(&mut rng, v, p.jitter_px)?);
            }
        }
    }
    let mut annotations = Vec::new();
    for (k, contours) in traced.iter().enumerate() {
        let mask = rasterize_contours(contours, p.width, p.height)?;
        let lines: Vec<Contour> = contours
            .iter()
            .map(|c| Contour::uniform(c.points().to_vec(), 0.5))
            .collect::<Result<_>>()?;
        let udf = exact_edt(&rasterize_contours(&lines, p.width, p.height)?);
        annotations.push(AnnotationSet::with_centerline(
            format!("A{}", k + 1),
            mask,
            udf,
        )?);
    }
    Ok((AnnotatedImage::new(id, image, annotations)?, traced))
}

/// `n` synthetic images named `synth-000`, `synth-001`, ...
pub fn synthetic_dataset(n: usize, p: &SynthParams, seed: u64) -> Result<Vec<AnnotatedImage>> {
    (0..n)
        .map(|i| synthetic_image(&format!("synth-{i:03}"), p, seed).map(|(img, _)| img))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{cldice, modified_cldice};

    #[test]
    fn deterministic_and_plausible() {
        let p = SynthParams {
            width: 96,
            height: 96,
            ..SynthParams::default()
        };
        let (a, _) = synthetic_image("x", &p, 4).unwrap();
        let (b, _) = synthetic_image("x", &p, 4).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.annotations, b.annotations);
        let (c, _) = synthetic_image("y", &p, 4).unwrap();
        assert_ne!(a.image, c.image);
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (x, y) = (&a.annotations[0], &a.annotations[1]);
        assert!(!x.mask().is_empty() && !y.mask().is_empty());
        let s = cldice(x, y).unwrap().cldice;
        let m = modified_cldice(x, y, 3.0).unwrap().cldice;
        assert!(s > 0.5 && s < 1.0, "{s}");
        assert!(m >= s - 0.2, "{m} vs {s}");
    }
}
