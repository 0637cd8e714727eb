//! Centerline Dice (clDice) and its distance-thresholded variant.
//!
//! For a pair of annotations `a`, `b` with centerline pixel sets `S_a`,
//! `S_b`:
//!
//! * `tprec` is the fraction of `S_a` inside `b`'s region,
//! * `tsens` is the fraction of `S_b` inside `a`'s region,
//! * `cldice = 2·tprec·tsens / (tprec + tsens)`.
//!
//! The standard variant uses the binary masks as regions. The modified
//! variant replaces each mask by the tube of pixels closer than `d` to the
//! other annotator's centerline, read straight off the centerline-distance
//! field. Centerlines are always taken from the centerline-distance fields
//! at `tau = 0.5`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, CenterlineSource};
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, GrayImage};
use crate::skeleton::{centerline_pixels, Skeleton, DEFAULT_TAU};
use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Modified,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Modified => "modified",
        })
    }
}

/// Which region definition to score against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Standard,
    /// Distance threshold in pixels.
    Modified(f64),
}

/// Fraction of skeleton pixels inside a region. An empty skeleton scores
/// 1.0 (vacuously inside) and is reported through `total == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologicalScore {
    pub value: f64,
    pub hits: usize,
    pub total: usize,
}

impl TopologicalScore {
    fn from_counts(hits: usize, total: usize) -> Self {
        TopologicalScore {
            value: if total == 0 {
                1.0
            } else {
                hits as f64 / total as f64
            },
            hits,
            total,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.total == 0
    }
}

pub fn topological_score(skel: &Skeleton, region: &BinaryMask) -> Result<TopologicalScore> {
    ensure_same_dims(skel.dims(), region.dims())?;
    let hits = skel
        .pixels()
        .iter()
        .filter(|&&(x, y)| region.get(x, y))
        .count();
    Ok(TopologicalScore::from_counts(hits, skel.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClDiceResult {
    pub tprec: f64,
    pub tsens: f64,
    pub cldice: f64,
    pub variant: Variant,
    pub threshold_px: Option<f64>,
    pub skel_a_size: usize,
    pub skel_b_size: usize,
}

/// Harmonic combination with the pair-level empty-skeleton rules: both
/// empty scores 1, exactly one empty scores 0.
fn combine(tprec: &TopologicalScore, tsens: &TopologicalScore, metric: Metric) -> ClDiceResult {
    let (na, nb) = (tprec.total, tsens.total);
    let (p, s) = (tprec.value, tsens.value);
    let cldice = match (na == 0, nb == 0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            // 2ps/(p+s) on the raw counts: one rounding, symmetric in a and b.
            let (ha, hb) = (tprec.hits as u128, tsens.hits as u128);
            let den = ha * nb as u128 + hb * na as u128;
            if den == 0 {
                0.0
            } else {
                (2 * ha * hb) as f64 / den as f64
            }
        }
    };
    let (variant, threshold_px) = match metric {
        Metric::Standard => (Variant::Standard, None),
        Metric::Modified(d) => (Variant::Modified, Some(d)),
    };
    ClDiceResult {
        tprec: p,
        tsens: s,
        cldice,
        variant,
        threshold_px,
        skel_a_size: na,
        skel_b_size: nb,
    }
}

/// Centerlines of both annotations, extracted once and reused across
/// thresholds.
struct PairCenterlines<'a> {
    a: &'a AnnotationSet,
    b: &'a AnnotationSet,
    skel_a: Skeleton,
    skel_b: Skeleton,
}

impl<'a> PairCenterlines<'a> {
    fn new(a: &'a AnnotationSet, b: &'a AnnotationSet) -> Result<Self> {
        ensure_same_dims(a.dims(), b.dims())?;
        Ok(PairCenterlines {
            a,
            b,
            skel_a: centerline_pixels(a.centerline_udf(), DEFAULT_TAU)?,
            skel_b: centerline_pixels(b.centerline_udf(), DEFAULT_TAU)?,
        })
    }

    fn standard(&self) -> Result<ClDiceResult> {
        let tprec = topological_score(&self.skel_a, self.b.mask())?;
        let tsens = topological_score(&self.skel_b, self.a.mask())?;
        Ok(combine(&tprec, &tsens, Metric::Standard))
    }

    fn modified(&self, d: f64) -> Result<ClDiceResult> {
        check_threshold(d)?;
        let within = |skel: &Skeleton, field: &GrayImage| {
            let hits = skel
                .pixels()
                .iter()
                .filter(|&&(x, y)| field.get(x, y) < d)
                .count();
            TopologicalScore::from_counts(hits, skel.len())
        };
        let tprec = within(&self.skel_a, self.b.centerline_udf());
        let tsens = within(&self.skel_b, self.a.centerline_udf());
        Ok(combine(&tprec, &tsens, Metric::Modified(d)))
    }
}

fn check_threshold(d: f64) -> Result<()> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::param(
            "d",
            format!("distance threshold {d} must be positive"),
        ));
    }
    Ok(())
}

/// Standard clDice between two annotations, treating `b` as reference for
/// `tprec` and `a` as reference for `tsens`.
pub fn cldice(a: &AnnotationSet, b: &AnnotationSet) -> Result<ClDiceResult> {
    PairCenterlines::new(a, b)?.standard()
}

/// clDice with each mask replaced by the set of pixels closer than `d` to
/// the other annotator's centerline.
pub fn modified_cldice(a: &AnnotationSet, b: &AnnotationSet, d: f64) -> Result<ClDiceResult> {
    check_threshold(d)?;
    PairCenterlines::new(a, b)?.modified(d)
}

pub fn score(a: &AnnotationSet, b: &AnnotationSet, metric: Metric) -> Result<ClDiceResult> {
    match metric {
        Metric::Standard => cldice(a, b),
        Metric::Modified(d) => modified_cldice(a, b, d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub thresholds: Vec<f64>,
    pub results: Vec<ClDiceResult>,
}

impl SweepCurve {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "threshold,tprec,tsens,cldice")?;
        for (d, r) in self.thresholds.iter().zip(&self.results) {
            writeln!(out, "{d},{},{},{}", r.tprec, r.tsens, r.cldice)?;
        }
        Ok(())
    }
}

/// Evenly spaced thresholds `min, min + step, ..., <= max`, computed by
/// multiplication so that grid points do not drift.
pub fn threshold_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min > 0.0 && step > 0.0 && max >= min && max.is_finite()) {
        return Err(Error::param(
            "thresholds",
            format!("need 0 < min <= max and step > 0 (got {min}, {max}, {step})"),
        ));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

/// The default grid 0.5, 1.0, ..., 6.0 px.
pub fn default_thresholds() -> Vec<f64> {
    (1..=12).map(|i| i as f64 * 0.5).collect()
}

/// Modified clDice at each threshold. Thresholds must be positive and
/// strictly increasing.
pub fn threshold_sweep(
    a: &AnnotationSet,
    b: &AnnotationSet,
    thresholds: &[f64],
) -> Result<SweepCurve> {
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("threshold list"));
    }
    for &d in thresholds {
        check_threshold(d)?;
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("thresholds", "must be strictly increasing"));
    }
    let pair = PairCenterlines::new(a, b)?;
    let results = thresholds
        .iter()
        .map(|&d| pair.modified(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve {
        thresholds: thresholds.to_vec(),
        results,
    })
}

/// A pair of annotations of the same image.
#[derive(Debug, Clone)]
pub struct AnnotationPair {
    pub image_id: String,
    pub a: AnnotationSet,
    pub b: AnnotationSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub tprec: f64,
    pub tsens: f64,
    pub cldice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub image_id: String,
    pub result: ClDiceResult,
    pub derived_centerline: bool,
}

/// Per-pair scores with mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub metric: Metric,
    pub rows: Vec<PairRow>,
    pub mean: ScoreTriple,
    /// Sample (n - 1) deviation; reported as 0 when `n == 1`.
    pub std: ScoreTriple,
    pub n: usize,
}

impl PairSummary {
    pub fn single_sample(&self) -> bool {
        self.n == 1
    }

    /// One row per pair followed by `mean` and `std` summary rows.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "image_id,variant,threshold_px,tprec,tsens,cldice,skel_a_size,skel_b_size,flags"
        )?;
        let variant = match self.metric {
            Metric::Standard => Variant::Standard,
            Metric::Modified(_) => Variant::Modified,
        };
        let threshold = match self.metric {
            Metric::Standard => String::new(),
            Metric::Modified(d) => d.to_string(),
        };
        for row in &self.rows {
            let r = &row.result;
            let mut flags = Vec::new();
            if r.skel_a_size == 0 {
                flags.push("empty_skel_a");
            }
            if r.skel_b_size == 0 {
                flags.push("empty_skel_b");
            }
            if row.derived_centerline {
                flags.push("derived_centerline");
            }
            writeln!(
                out,
                "{},{variant},{threshold},{},{},{},{},{},{}",
                row.image_id,
                r.tprec,
                r.tsens,
                r.cldice,
                r.skel_a_size,
                r.skel_b_size,
                flags.join(";")
            )?;
        }
        let n_flag = format!("n={}", self.n);
        for (label, t) in [("mean", &self.mean), ("std", &self.std)] {
            writeln!(
                out,
                "{label},{variant},{threshold},{},{},{},,,{n_flag}",
                t.tprec, t.tsens, t.cldice
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Scores every pair (in parallel) and summarizes. Rows keep input order and
/// the aggregation is a compensated sum in that order, so results do not
/// depend on the worker count.
pub fn dataset_summary(pairs: &[AnnotationPair], metric: Metric) -> Result<PairSummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("annotation pair list"));
    }
    if let Metric::Modified(d) = metric {
        check_threshold(d)?;
    }
    let rows = pairs
        .par_iter()
        .map(|p| {
            Ok(PairRow {
                image_id: p.image_id.clone(),
                result: score(&p.a, &p.b, metric)?,
                derived_centerline: p.a.centerline_source() == CenterlineSource::Derived
                    || p.b.centerline_source() == CenterlineSource::Derived,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&ClDiceResult) -> f64| rows.iter().map(|r| f(&r.result)).collect::<Vec<_>>();
    let (tp, ts, cl) = (col(|r| r.tprec), col(|r| r.tsens), col(|r| r.cldice));
    let triple = |f: fn(&[f64]) -> Option<f64>| ScoreTriple {
        tprec: f(&tp).unwrap_or(0.0),
        tsens: f(&ts).unwrap_or(0.0),
        cldice: f(&cl).unwrap_or(0.0),
    };
    Ok(PairSummary {
        metric,
        mean: triple(mean),
        std: triple(sample_std),
        n: rows.len(),
        rows,
    })
}
