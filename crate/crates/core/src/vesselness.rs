//! Multi-scale Hessian vesselness (Frangi, Sato) and scoring of filter
//! responses against annotator disagreement.
//!
//! Hessians are scale-normalized Gaussian second derivatives (`sigma^2`
//! factor) from separable, truncated kernels (radius `ceil(4 sigma)`) with
//! half-sample symmetric reflection at the borders. Derivative passes are
//! evaluated on pixel differences, so a constant image yields exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationSet;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, GrayImage};
use crate::stats::{pearson, rank_auc};

/// Smallest supported Gaussian scale in pixels.
pub const MIN_SIGMA: f64 = 0.5;

/// Width of the edge band (pixels from the nearest annotated vessel edge)
/// over which responses are correlated with edge distance.
pub const EDGE_BAND_PX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    BrightOnDark,
    DarkOnBright,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    sigmas: Vec<f64>,
    polarity: Polarity,
}

impl ScaleParams {
    pub fn new(sigmas: Vec<f64>, polarity: Polarity) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::param("sigmas", "at least one scale is required"));
        }
        if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= MIN_SIGMA)) {
            return Err(Error::param(
                "sigmas",
                format!("scale {s} is below {MIN_SIGMA}"),
            ));
        }
        if sigmas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("sigmas", "scales must be strictly increasing"));
        }
        Ok(ScaleParams { sigmas, polarity })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }
}

impl Default for ScaleParams {
    /// Scales 1..=5 px, dark vessels on a bright background (DSA).
    fn default() -> Self {
        ScaleParams {
            sigmas: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            polarity: Polarity::DarkOnBright,
        }
    }
}

/// Frangi sensitivities. `c` applies to Hessians of the image expressed in
/// 0..255 intensity units; images in `[0, 1]` are rescaled internally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrangiParams {
    pub beta: f64,
    pub c: f64,
}

impl Default for FrangiParams {
    fn default() -> Self {
        FrangiParams { beta: 0.5, c: 15.0 }
    }
}

impl FrangiParams {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param(
                "beta",
                format!("{} must be positive", self.beta),
            ));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::param("c", format!("{} must be positive", self.c)));
        }
        Ok(())
    }
}

/// Intensity factor mapping `[0, 1]` images to the 0..255 units that
/// [`FrangiParams::c`] is expressed in.
const FRANGI_INTENSITY_SCALE: f64 = 255.0;

/// Scale-normalized Hessian components.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub xx: GrayImage,
    pub xy: GrayImage,
    pub yy: GrayImage,
}

struct Kernels {
    radius: usize,
    smooth: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Kernels {
    fn new(sigma: f64) -> Kernels {
        let radius = (5.0 * sigma).ceil() as usize;
        let s2 = sigma * sigma;
        let offsets: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|i| i as f64)
            .collect();
        let mut smooth: Vec<f64> = offsets
            .iter()
            .map(|&t| (-t * t / (2.0 * s2)).exp())
            .collect();
        let total: f64 = smooth.iter().sum();
        smooth.iter_mut().for_each(|g| *g /= total);

        // First derivative: unit response to f(x) = x.
        let mut d1: Vec<f64> = offsets
            .iter()
            .zip(&smooth)
            .map(|(&t, &g)| t / s2 * g)
            .collect();
        let m1: f64 = offsets.iter().zip(&d1).map(|(&t, &w)| t * w).sum();
        d1.iter_mut().for_each(|w| *w /= m1);

        // Second derivative: zero response to constants. The second moment
        // is left as sampled; forcing it to 2 distorts non-polynomial signals.
        let mut d2: Vec<f64> = offsets
            .iter()
            .zip(&smooth)
            .map(|(&t, &g)| (t * t / (s2 * s2) - 1.0 / s2) * g)
            .collect();
        let m0: f64 = d2.iter().sum();
        d2.iter_mut().zip(&smooth).for_each(|(w, &g)| *w -= m0 * g);

        Kernels {
            radius,
            smooth,
            d1,
            d2,
        }
    }
}

/// Half-sample symmetric reflection of an index into `0..n`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

#[derive(Clone, Copy)]
enum Pass {
    /// Weighted sum of samples.
    Smooth,
    /// Even kernel summing to zero, applied to differences from the center.
    Even,
    /// Odd kernel applied to symmetric differences.
    Odd,
}

fn filter_line(src: &[f64], dst: &mut [f64], kernel: &[f64], radius: usize, pass: Pass) {
    let n = src.len();
    let r = radius as isize;
    for (x, out) in dst.iter_mut().enumerate() {
        let xi = x as isize;
        let at = |k: isize| src[reflect(xi + k, n)];
        *out = match pass {
            Pass::Smooth => (-r..=r).map(|k| kernel[(k + r) as usize] * at(k)).sum(),
            Pass::Even => {
                let c = src[x];
                (1..=r)
                    .map(|k| kernel[(k + r) as usize] * ((at(k) - c) + (at(-k) - c)))
                    .sum()
            }
            Pass::Odd => (1..=r)
                .map(|k| kernel[(k + r) as usize] * (at(k) - at(-k)))
                .sum(),
        };
    }
}

fn filter_rows(img: &[f64], w: usize, kernel: &[f64], radius: usize, pass: Pass) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    out.par_chunks_mut(w)
        .zip(img.par_chunks(w))
        .for_each(|(dst, src)| filter_line(src, dst, kernel, radius, pass));
    out
}

fn transpose(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = img[y * w + x];
        }
    }
    out
}

fn filter_cols(
    img: &[f64],
    w: usize,
    h: usize,
    kernel: &[f64],
    radius: usize,
    pass: Pass,
) -> Vec<f64> {
    let t = transpose(img, w, h);
    let f = filter_rows(&t, h, kernel, radius, pass);
    transpose(&f, h, w)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= MIN_SIGMA) {
        return Err(Error::param(
            "sigma",
            format!("{sigma} is below {MIN_SIGMA}"),
        ));
    }
    Ok(())
}

/// Separable Gaussian smoothing with the same kernels and boundary rule as
/// [`hessian_at_scale`].
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    check_sigma(sigma)?;
    let (w, h) = img.dims();
    let k = Kernels::new(sigma);
    let rows = filter_rows(img.data(), w, &k.smooth, k.radius, Pass::Smooth);
    let both = filter_cols(&rows, w, h, &k.smooth, k.radius, Pass::Smooth);
    Ok(GrayImage::from_parts_unchecked(w, h, both).with_spacing_unchecked(img.spacing()))
}

/// Gaussian second-derivative responses at one scale, multiplied by
/// `sigma^2`.
pub fn hessian_at_scale(img: &GrayImage, sigma: f64) -> Result<Hessian> {
    check_sigma(sigma)?;
    let (w, h) = img.dims();
    let k = Kernels::new(sigma);
    let data = img.data();
    let norm = sigma * sigma;

    let smooth_y = filter_cols(data, w, h, &k.smooth, k.radius, Pass::Smooth);
    let xx = filter_rows(&smooth_y, w, &k.d2, k.radius, Pass::Even);
    let smooth_x = filter_rows(data, w, &k.smooth, k.radius, Pass::Smooth);
    let yy = filter_cols(&smooth_x, w, h, &k.d2, k.radius, Pass::Even);
    let dx = filter_rows(data, w, &k.d1, k.radius, Pass::Odd);
    let xy = filter_cols(&dx, w, h, &k.d1, k.radius, Pass::Odd);

    let wrap = |v: Vec<f64>| {
        GrayImage::from_parts_unchecked(w, h, v.into_iter().map(|x| x * norm).collect())
            .with_spacing_unchecked(img.spacing())
    };
    Ok(Hessian {
        xx: wrap(xx),
        xy: wrap(xy),
        yy: wrap(yy),
    })
}

/// Eigenvalues of a symmetric 2x2 matrix ordered so that `|l1| <= |l2|`.
#[inline]
pub fn ordered_eigenvalues(xx: f64, xy: f64, yy: f64) -> (f64, f64) {
    let half_tr = 0.5 * (xx + yy);
    let half_diff = 0.5 * (xx - yy);
    let disc = (half_diff * half_diff + xy * xy).sqrt();
    let (a, b) = (half_tr + disc, half_tr - disc);
    if a.abs() <= b.abs() {
        (a, b)
    } else {
        (b, a)
    }
}

fn oriented(img: &GrayImage, polarity: Polarity) -> GrayImage {
    match polarity {
        Polarity::BrightOnDark => img.clone(),
        Polarity::DarkOnBright => GrayImage::from_parts_unchecked(
            img.width(),
            img.height(),
            img.data().iter().map(|v| -v).collect(),
        )
        .with_spacing_unchecked(img.spacing()),
    }
}

fn per_pixel(hess: &Hessian, f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    hess.xx
        .data()
        .par_iter()
        .zip(hess.xy.data().par_iter())
        .zip(hess.yy.data().par_iter())
        .map(|((&xx, &xy), &yy)| {
            let (l1, l2) = ordered_eigenvalues(xx, xy, yy);
            f(l1, l2)
        })
        .collect()
}

fn frangi_value(l1: f64, l2: f64, p: &FrangiParams) -> f64 {
    if l2 >= 0.0 {
        // l2 == 0 forces l1 == 0, where structureness vanishes anyway.
        return 0.0;
    }
    let (l1, l2) = (l1 * FRANGI_INTENSITY_SCALE, l2 * FRANGI_INTENSITY_SCALE);
    let rb = l1 / l2;
    let s2 = l1 * l1 + l2 * l2;
    (-(rb * rb) / (2.0 * p.beta * p.beta)).exp() * (1.0 - (-s2 / (2.0 * p.c * p.c)).exp())
}

/// Frangi vesselness at a single scale (after polarity normalization).
pub fn frangi_at_scale(
    img: &GrayImage,
    sigma: f64,
    polarity: Polarity,
    p: &FrangiParams,
) -> Result<GrayImage> {
    p.validate()?;
    let hess = hessian_at_scale(&oriented(img, polarity), sigma)?;
    let data = per_pixel(&hess, |l1, l2| frangi_value(l1, l2, p));
    Ok(
        GrayImage::from_parts_unchecked(img.width(), img.height(), data)
            .with_spacing_unchecked(img.spacing()),
    )
}

/// Sato line filter (2D): `max(0, -l2)` of the normalized Hessian at a
/// single scale.
pub fn sato_at_scale(img: &GrayImage, sigma: f64, polarity: Polarity) -> Result<GrayImage> {
    let hess = hessian_at_scale(&oriented(img, polarity), sigma)?;
    let data = per_pixel(&hess, |_, l2| (-l2).max(0.0));
    Ok(
        GrayImage::from_parts_unchecked(img.width(), img.height(), data)
            .with_spacing_unchecked(img.spacing()),
    )
}

fn max_over_scales(
    img: &GrayImage,
    scales: &ScaleParams,
    per_scale: impl Fn(f64) -> Result<GrayImage> + Sync,
) -> Result<GrayImage> {
    let maps = scales
        .sigmas()
        .par_iter()
        .map(|&s| per_scale(s))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![f64::NEG_INFINITY; img.data().len()];
    for m in &maps {
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a = a.max(v);
        }
    }
    Ok(
        GrayImage::from_parts_unchecked(img.width(), img.height(), acc)
            .with_spacing_unchecked(img.spacing()),
    )
}

/// Multi-scale Frangi vesselness; values in `[0, 1)`.
pub fn frangi(img: &GrayImage, scales: &ScaleParams, p: &FrangiParams) -> Result<GrayImage> {
    p.validate()?;
    max_over_scales(img, scales, |s| {
        frangi_at_scale(img, s, scales.polarity(), p)
    })
}

/// Multi-scale Sato line filter; non-negative.
pub fn sato(img: &GrayImage, scales: &ScaleParams) -> Result<GrayImage> {
    max_over_scales(img, scales, |s| sato_at_scale(img, s, scales.polarity()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Frangi,
    Sato,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Frangi => "frangi",
            FilterKind::Sato => "sato",
        })
    }
}

/// How well a filter response singles out pixels where two annotators
/// disagree.
///
/// `auc` ranks disagreement pixels (exactly one annotator marked them)
/// against background pixels (neither did). `pearson_r` correlates the
/// response with the negated distance to the nearest annotated edge over
/// pixels within [`EDGE_BAND_PX`] of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub auc: Option<f64>,
    pub pearson_r: Option<f64>,
    pub n_disagree_pixels: usize,
    pub n_agree_pixels: usize,
    pub n_background_pixels: usize,
}

impl DisagreementReport {
    pub const CSV_HEADER: &'static str = "patch_id,filter,auc,pearson_r,n_disagree,n_agree";

    pub fn csv_row(&self, patch_id: &str, filter: FilterKind) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{patch_id},{filter},{},{},{},{}",
            opt(self.auc),
            opt(self.pearson_r),
            self.n_disagree_pixels,
            self.n_agree_pixels
        )
    }
}

pub fn disagreement_score(
    response: &GrayImage,
    a: &AnnotationSet,
    b: &AnnotationSet,
) -> Result<DisagreementReport> {
    ensure_same_dims(response.dims(), a.dims())?;
    ensure_same_dims(a.dims(), b.dims())?;
    let (ma, mb) = (a.mask().bits(), b.mask().bits());
    let mut disagree = Vec::new();
    let mut background = Vec::new();
    let mut n_agree = 0;
    let mut band_resp = Vec::new();
    let mut band_dist = Vec::new();
    for (i, &r) in response.data().iter().enumerate() {
        match (ma[i], mb[i]) {
            (true, true) => n_agree += 1,
            (false, false) => background.push(r),
            _ => disagree.push(r),
        }
        let edge = a.edge_sdf().data()[i]
            .abs()
            .min(b.edge_sdf().data()[i].abs());
        if edge <= EDGE_BAND_PX {
            band_resp.push(r);
            band_dist.push(-edge);
        }
    }
    Ok(DisagreementReport {
        auc: rank_auc(&disagree, &background),
        pearson_r: pearson(&band_resp, &band_dist),
        n_disagree_pixels: disagree.len(),
        n_agree_pixels: n_agree,
        n_background_pixels: background.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::build_annotation;
    use crate::raster::BinaryMask;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn kernel_moments() {
        for sigma in [0.5, 1.0, 2.5] {
            let k = Kernels::new(sigma);
            let r = k.radius as isize;
            let m = |ker: &[f64], p: i32| -> f64 {
                (-r..=r)
                    .map(|i| ker[(i + r) as usize] * (i as f64).powi(p))
                    .sum()
            };
            assert!((m(&k.smooth, 0) - 1.0).abs() < 1e-14);
            assert!((m(&k.d1, 1) - 1.0).abs() < 1e-14);
            assert!(m(&k.d2, 0).abs() < 1e-14);
            if sigma >= 1.0 {
                assert!((m(&k.d2, 2) - 2.0).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn constant_image_has_zero_hessian() {
        let img = GrayImage::filled(19, 11, 0.37).unwrap();
        for sigma in [0.5, 1.0, 3.0, 7.0] {
            let hs = hessian_at_scale(&img, sigma).unwrap();
            for f in [&hs.xx, &hs.xy, &hs.yy] {
                assert!(f.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(hessian_at_scale(&img, 0.4).is_err());
    }

    #[test]
    fn ramp_has_zero_xx_in_interior() {
        let img = GrayImage::from_fn(40, 20, |x, _| x as f64 * 0.01).unwrap();
        let hs = hessian_at_scale(&img, 2.0).unwrap();
        let r = Kernels::new(2.0).radius;
        for y in 0..20 {
            for x in r..40 - r {
                assert!(hs.xx.get(x, y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvalue_ordering() {
        let (l1, l2) = ordered_eigenvalues(-3.0, 0.0, 1.0);
        assert_eq!((l1, l2), (1.0, -3.0));
        let (l1, l2) = ordered_eigenvalues(2.0, 1.0, 2.0);
        assert!((l1 - 1.0).abs() < 1e-15 && (l2 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn filters_vanish_on_constant_images() {
        let img = GrayImage::filled(25, 25, 0.8).unwrap();
        let s = ScaleParams::default();
        assert!(frangi(&img, &s, &FrangiParams::default())
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(sato(&img, &s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ranges_on_noise() {
        let img = noise(32, 32, 3);
        let s = ScaleParams::default();
        let f = frangi(&img, &s, &FrangiParams::default()).unwrap();
        assert!(f.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!(sato(&img, &s).unwrap().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn params_validation() {
        assert!(ScaleParams::new(vec![], Polarity::DarkOnBright).is_err());
        assert!(ScaleParams::new(vec![2.0, 1.0], Polarity::DarkOnBright).is_err());
        assert!(ScaleParams::new(vec![0.2], Polarity::DarkOnBright).is_err());
        let img = GrayImage::filled(4, 4, 0.0).unwrap();
        let bad = FrangiParams { beta: 0.0, c: 1.0 };
        assert!(frangi(&img, &ScaleParams::default(), &bad).is_err());
    }

    /// Bright Gaussian ridge along y on a zero background.
    fn gaussian_ridge(w: usize, h: usize, width: f64) -> GrayImage {
        let cx = (w / 2) as f64;
        GrayImage::from_fn(w, h, |x, y| {
            let dx = x as f64 - cx + 0.3 * (y as f64 / h as f64);
            0.8 * (-dx * dx / (2.0 * width * width)).exp()
        })
        .unwrap()
    }

    #[test]
    fn hessian_matches_finite_differences_of_blur() {
        // Sixth-order central differences.
        const D2: [f64; 7] = [
            1.0 / 90.0,
            -3.0 / 20.0,
            1.5,
            -49.0 / 18.0,
            1.5,
            -3.0 / 20.0,
            1.0 / 90.0,
        ];
        const D1: [f64; 7] = [
            -1.0 / 60.0,
            3.0 / 20.0,
            -0.75,
            0.0,
            0.75,
            -3.0 / 20.0,
            1.0 / 60.0,
        ];
        let img = gaussian_ridge(64, 48, 2.5);
        for sigma in [1.0, 2.0, 3.0] {
            let blur = gaussian_blur(&img, sigma).unwrap();
            let hs = hessian_at_scale(&img, sigma).unwrap();
            let s2 = sigma * sigma;
            let b = |x: usize, y: usize| blur.get(x, y);
            let (mut worst, mut scale) = (0.0f64, 0.0f64);
            for y in 16..32 {
                for x in 20..44 {
                    let fxx: f64 = (0..7).map(|i| D2[i] * b(x + i - 3, y)).sum::<f64>() * s2;
                    let fyy: f64 = (0..7).map(|i| D2[i] * b(x, y + i - 3)).sum::<f64>() * s2;
                    let fxy: f64 = (0..7)
                        .map(|j| {
                            D1[j] * (0..7).map(|i| D1[i] * b(x + i - 3, y + j - 3)).sum::<f64>()
                        })
                        .sum::<f64>()
                        * s2;
                    for (got, want) in [
                        (hs.xx.get(x, y), fxx),
                        (hs.yy.get(x, y), fyy),
                        (hs.xy.get(x, y), fxy),
                    ] {
                        worst = worst.max((got - want).abs());
                        scale = scale.max(want.abs());
                    }
                }
            }
            assert!(worst <= 1e-3 * scale, "sigma {sigma}: {worst} vs {scale}");
        }
    }

    #[test]
    fn ridge_response_peaks_near_its_half_width() {
        let grid = [1.0, 2.0, 3.0, 4.0, 5.0];
        for half in [1usize, 2, 3, 4] {
            // Dark bar of 2*half+1 pixels, low contrast to keep Frangi off saturation.
            let img = GrayImage::from_fn(
                80,
                40,
                |x, _| if x.abs_diff(40) <= half { 0.86 } else { 0.9 },
            )
            .unwrap();
            let at = |r: GrayImage| r.get(40, 20);
            let f: Vec<f64> = grid
                .iter()
                .map(|&s| {
                    at(
                        frangi_at_scale(&img, s, Polarity::DarkOnBright, &FrangiParams::default())
                            .unwrap(),
                    )
                })
                .collect();
            let st: Vec<f64> = grid
                .iter()
                .map(|&s| at(sato_at_scale(&img, s, Polarity::DarkOnBright).unwrap()))
                .collect();
            for resp in [f, st] {
                let best = (0..grid.len())
                    .max_by(|&i, &j| resp[i].total_cmp(&resp[j]))
                    .unwrap();
                assert!(
                    (grid[best] - half as f64).abs() <= 1.0 + 1e-9,
                    "half {half}: {resp:?}"
                );
            }
        }
    }

    #[test]
    fn polarity_and_offset() {
        let img = noise(24, 20, 9);
        let neg = img.map(|v| -v).unwrap();
        let s = ScaleParams::default();
        let bright = ScaleParams::new(s.sigmas().to_vec(), Polarity::BrightOnDark).unwrap();
        let p = FrangiParams::default();
        assert_eq!(
            frangi(&neg, &bright, &p).unwrap(),
            frangi(&img, &s, &p).unwrap()
        );
        assert_eq!(sato(&neg, &bright).unwrap(), sato(&img, &s).unwrap());
        let shifted = img.map(|v| v + 3.0).unwrap();
        let (a, b) = (sato(&img, &s).unwrap(), sato(&shifted, &s).unwrap());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn disagreement_auc_cases() {
        let a = build_annotation(
            BinaryMask::from_fn(16, 16, |x, y| y == 5 && x < 12).unwrap(),
            "A1",
        );
        let b = build_annotation(
            BinaryMask::from_fn(16, 16, |x, y| y == 5 && x < 6).unwrap(),
            "A2",
        );
        let xor = a.mask().xor(b.mask()).unwrap().to_image();
        let r = disagreement_score(&xor, &a, &b).unwrap();
        assert_eq!(r.auc, Some(1.0));
        assert_eq!((r.n_disagree_pixels, r.n_agree_pixels), (6, 6));
        let flat = GrayImage::filled(16, 16, 0.2).unwrap();
        let r = disagreement_score(&flat, &a, &b).unwrap();
        assert_eq!(r.auc, Some(0.5));
        assert_eq!(r.pearson_r, None);
        let same = disagreement_score(&flat, &a, &a).unwrap();
        assert_eq!(same.auc, None);
        assert_eq!(r.csv_row("p", FilterKind::Sato), "p,sato,0.5,,6,6");
    }
}
