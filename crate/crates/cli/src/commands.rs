use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use rayon::prelude::*;
use serde_json::{json, Value};
use vessel_agreement::dataset::{
    annotation_pairs, load_dataset, load_patch_set, write_dataset, write_patch_set,
};
use vessel_agreement::metrics::ScoreTriple;
use vessel_agreement::patches::{rotated_image_ref, RATING_SET_FILE};
use vessel_agreement::raster::io::{
    load_field, load_gray, load_mask, save_field, save_gray, save_mask, BitDepth,
};
use vessel_agreement::rating::{export_agreement_csv, load_jsonl, write_consistency_csv};
use vessel_agreement::synthetic::{synthetic_dataset, SynthParams};
use vessel_agreement::vesselness::{disagreement_score, DisagreementReport, FilterKind};
use vessel_agreement::{
    agreement_table, build_annotation, build_rating_set, dataset_summary, exact_edt, frangi,
    intra_rater_consistency, sample_patches, sato, signed_edge_distance, thin, threshold_grid,
    threshold_sweep, AnnotationPair, AnnotationSet, GrayImage, Metric, Patch, RatingSet,
};
use vessel_agreement_service::store::RESPONSE_LOG;
use vessel_agreement_service::{serve, ServiceConfig, ADMIN_TOKEN_ENV};

use crate::config::PipelineConfig;
use crate::manifest::Recorder;
use crate::{Command, FilterChoice, Format, PairArgs};

/// A semantically invalid combination of otherwise well-formed flags.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Context {
    pub format: Format,
    pub show_config: bool,
}

fn threads() -> usize {
    rayon::current_num_threads()
}

/// Manifest parameters: the merged configuration plus command-specific
/// values.
fn params(cfg: &PipelineConfig, extra: Value) -> Value {
    let mut v = cfg.echo();
    if let (Some(o), Value::Object(e)) = (v.as_object_mut(), extra) {
        o.extend(e);
    }
    v
}

fn print_text(s: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(s.as_bytes())?;
    if !s.ends_with('\n') {
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    print_text(&serde_json::to_string_pretty(v)?)
}

/// Prints a report in the requested format. `csv` is the file contents.
fn report(
    ctx: &Context,
    text: &str,
    csv: &[u8],
    value: &impl serde::Serialize,
) -> anyhow::Result<()> {
    match ctx.format {
        Format::Text => print_text(text),
        Format::Csv => print_text(std::str::from_utf8(csv)?),
        Format::Json => print_json(value),
    }
}

fn apply_pair(cfg: &mut PipelineConfig, pair: &PairArgs) {
    if let Some(d) = &pair.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(ids) = &pair.annotators {
        cfg.annotators = [ids[0].clone(), ids[1].clone()];
    }
}

pub fn run(command: Command, mut cfg: PipelineConfig, ctx: &Context) -> anyhow::Result<()> {
    // Fold flags into the configuration first so `--show-config` sees them.
    match &command {
        Command::Cldice { pair, .. } => apply_pair(&mut cfg, pair),
        Command::CldiceSweep {
            pair,
            min,
            max,
            step,
        } => {
            apply_pair(&mut cfg, pair);
            cfg.thresholds.min = min.unwrap_or(cfg.thresholds.min);
            cfg.thresholds.max = max.unwrap_or(cfg.thresholds.max);
            cfg.thresholds.step = step.unwrap_or(cfg.thresholds.step);
        }
        Command::Vesselness {
            dataset, sigmas, ..
        } => {
            if dataset.is_some() {
                cfg.dataset = dataset.clone();
            }
            if let Some(s) = sigmas {
                cfg.sigmas = s.clone();
            }
        }
        Command::Patchgen {
            dataset,
            n,
            size,
            seed,
        } => {
            if dataset.is_some() {
                cfg.dataset = dataset.clone();
            }
            cfg.patch_count = n.unwrap_or(cfg.patch_count);
            cfg.patch_size = size.unwrap_or(cfg.patch_size);
            cfg.seed = seed.unwrap_or(cfg.seed);
        }
        Command::RateBuild {
            seed,
            duplicates,
            none,
            both,
            a1_only,
            a2_only,
            ..
        } => {
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.duplicates = duplicates.unwrap_or(cfg.duplicates);
            cfg.quotas.none = none.unwrap_or(cfg.quotas.none);
            cfg.quotas.both = both.unwrap_or(cfg.quotas.both);
            cfg.quotas.a1_only = a1_only.unwrap_or(cfg.quotas.a1_only);
            cfg.quotas.a2_only = a2_only.unwrap_or(cfg.quotas.a2_only);
        }
        Command::RateServe { addr, .. } => {
            if let Some(a) = addr {
                cfg.addr = a.clone();
            }
        }
        Command::RateAnalyze { reference, .. } => {
            cfg.reference = reference.unwrap_or(cfg.reference)
        }
        Command::Synth { seed, .. } => cfg.seed = seed.unwrap_or(cfg.seed),
        Command::Edt { .. } | Command::Skeleton { .. } => {}
    }
    if ctx.show_config {
        return print_json(&cfg);
    }
    match command {
        Command::Edt { mask, signed } => edt(&cfg, ctx, &mask, signed),
        Command::Skeleton { mask } => skeleton(&cfg, ctx, &mask),
        Command::Cldice { pair, d } => cldice(&cfg, ctx, &pair, d),
        Command::CldiceSweep { pair, .. } => sweep(&cfg, ctx, &pair),
        Command::Vesselness {
            image,
            a,
            b,
            filter,
            ..
        } => vesselness(&cfg, ctx, image.as_deref(), a.zip(b), filter),
        Command::Patchgen { .. } => patchgen(&cfg, ctx),
        Command::RateBuild { patches, .. } => rate_build(&cfg, ctx, &patches),
        Command::RateServe {
            rating_dir,
            log_dir,
            cors_origin,
            ..
        } => rate_serve(&cfg, rating_dir, log_dir, cors_origin),
        Command::RateAnalyze {
            rating_set, log, ..
        } => rate_analyze(&cfg, ctx, &rating_set, &log),
        Command::Synth {
            n,
            width,
            height,
            jitter,
            ..
        } => synth(
            &cfg,
            ctx,
            n,
            SynthParams {
                width,
                height,
                vessels: SynthParams::default().vessels,
                jitter_px: jitter,
            },
        ),
    }
}

fn edt(cfg: &PipelineConfig, ctx: &Context, mask_path: &Path, signed: bool) -> anyhow::Result<()> {
    let mut rec = Recorder::new("edt", &cfg.out)?;
    rec.input(mask_path);
    let mask = load_mask(mask_path)?;
    let (field, name, sentinel) = if signed {
        (signed_edge_distance(&mask), "sdf.png", None)
    } else {
        let f = exact_edt(&mask);
        let s = mask
            .is_empty()
            .then(|| vessel_agreement::no_feature_sentinel(mask.width(), mask.height()));
        (f, "edt.png", s)
    };
    let meta = save_field(&field, rec.output(name), BitDepth::Sixteen, sentinel)?;
    rec.output(vessel_agreement::raster::io::sidecar_path(Path::new(name)));
    let (lo, hi) = field.min_max();
    let summary = json!({ "width": mask.width(), "height": mask.height(), "min": lo, "max": hi, "quantization": meta });
    let text = format!(
        "{name}: {}x{} min={lo} max={hi}",
        mask.width(),
        mask.height()
    );
    report(
        ctx,
        &text,
        format!("min,max\n{lo},{hi}\n").as_bytes(),
        &summary,
    )?;
    rec.finish(0, &params(cfg, json!({ "signed": signed })), threads())
}

fn skeleton(cfg: &PipelineConfig, ctx: &Context, mask_path: &Path) -> anyhow::Result<()> {
    let mut rec = Recorder::new("skeleton", &cfg.out)?;
    rec.input(mask_path);
    let mask = load_mask(mask_path)?;
    let skel = thin(&mask);
    save_mask(&skel.to_mask(), rec.output("skeleton.png"))?;
    let mut csv = Vec::new();
    skel.write_csv(&mut csv)?;
    std::fs::write(rec.output("skeleton.csv"), &csv)?;
    let text = format!(
        "skeleton: {} of {} foreground pixels",
        skel.len(),
        mask.count()
    );
    report(
        ctx,
        &text,
        &csv,
        &json!({ "pixels": skel.pixels(), "mask_pixels": mask.count() }),
    )?;
    rec.finish(0, &params(cfg, json!({})), threads())
}

fn load_pair_annotation(
    rec: &mut Recorder,
    mask: &Path,
    udf: Option<&Path>,
    id: &str,
) -> anyhow::Result<AnnotationSet> {
    rec.input(mask);
    let m = load_mask(mask)?;
    Ok(match udf {
        Some(p) => {
            rec.input(p);
            let (field, _) = load_field(p)?;
            AnnotationSet::with_centerline(id, m, field)?
        }
        None => build_annotation(m, id),
    })
}

/// Either a single pair from `--a/--b` or every pair of a dataset.
fn pairs(
    cfg: &PipelineConfig,
    rec: &mut Recorder,
    pair: &PairArgs,
) -> anyhow::Result<Vec<AnnotationPair>> {
    let [ida, idb] = &cfg.annotators;
    match (&pair.a, &pair.b, &cfg.dataset) {
        (Some(a), Some(b), _) => Ok(vec![AnnotationPair {
            image_id: "pair".into(),
            a: load_pair_annotation(rec, a, pair.a_udf.as_deref(), ida)?,
            b: load_pair_annotation(rec, b, pair.b_udf.as_deref(), idb)?,
        }]),
        (None, None, Some(root)) => {
            rec.dataset_input(root)?;
            let images = load_dataset(root)?;
            let ps = annotation_pairs(&images, ida, idb);
            if ps.is_empty() {
                bail!(vessel_agreement::Error::EmptyInput(
                    "images annotated by both annotators"
                ));
            }
            Ok(ps)
        }
        _ => Err(usage("give --a and --b, or --dataset")),
    }
}

fn triple(t: &ScoreTriple) -> String {
    format!("tprec={} tsens={} cldice={}", t.tprec, t.tsens, t.cldice)
}

fn cldice(
    cfg: &PipelineConfig,
    ctx: &Context,
    pair: &PairArgs,
    d: Option<f64>,
) -> anyhow::Result<()> {
    let mut rec = Recorder::new("cldice", &cfg.out)?;
    let ps = pairs(cfg, &mut rec, pair)?;
    let metric = d.map_or(Metric::Standard, Metric::Modified);
    let summary = dataset_summary(&ps, metric)?;
    let mut csv = Vec::new();
    summary.write_csv(&mut csv)?;
    std::fs::write(rec.output("cldice.csv"), &csv)?;
    let text = if summary.single_sample() {
        triple(&summary.mean)
    } else {
        format!(
            "n={}\nmean {}\nstd  {}",
            summary.n,
            triple(&summary.mean),
            triple(&summary.std)
        )
    };
    report(ctx, &text, &csv, &summary)?;
    rec.finish(0, &params(cfg, json!({ "d": d })), threads())
}

fn sweep(cfg: &PipelineConfig, ctx: &Context, pair: &PairArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::new("cldice-sweep", &cfg.out)?;
    let grid = threshold_grid(cfg.thresholds.min, cfg.thresholds.max, cfg.thresholds.step)?;
    let ps = pairs(cfg, &mut rec, pair)?;
    let mut csv = Vec::new();
    let value = if ps.len() == 1 {
        let curve = threshold_sweep(&ps[0].a, &ps[0].b, &grid)?;
        curve.write_csv(&mut csv)?;
        serde_json::to_value(&curve)?
    } else {
        writeln!(csv, "threshold,tprec,tsens,cldice,cldice_std,n")?;
        let mut rows = Vec::new();
        for &d in &grid {
            let s = dataset_summary(&ps, Metric::Modified(d))?;
            writeln!(
                csv,
                "{d},{},{},{},{},{}",
                s.mean.tprec, s.mean.tsens, s.mean.cldice, s.std.cldice, s.n
            )?;
            rows.push(json!({ "threshold": d, "mean": s.mean, "std": s.std, "n": s.n }));
        }
        Value::Array(rows)
    };
    std::fs::write(rec.output("sweep.csv"), &csv)?;
    report(ctx, std::str::from_utf8(&csv)?, &csv, &value)?;
    rec.finish(0, &params(cfg, json!({})), threads())
}

fn filters(choice: FilterChoice) -> Vec<FilterKind> {
    match choice {
        FilterChoice::Frangi => vec![FilterKind::Frangi],
        FilterChoice::Sato => vec![FilterKind::Sato],
        FilterChoice::Both => vec![FilterKind::Frangi, FilterKind::Sato],
    }
}

fn respond(cfg: &PipelineConfig, img: &GrayImage, kind: FilterKind) -> anyhow::Result<GrayImage> {
    let scales = cfg.scales()?;
    Ok(match kind {
        FilterKind::Frangi => frangi(img, &scales, &cfg.frangi)?,
        FilterKind::Sato => sato(img, &scales)?,
    })
}

fn vesselness(
    cfg: &PipelineConfig,
    ctx: &Context,
    image: Option<&Path>,
    masks: Option<(PathBuf, PathBuf)>,
    choice: FilterChoice,
) -> anyhow::Result<()> {
    let mut rec = Recorder::new("vesselness", &cfg.out)?;
    let kinds = filters(choice);
    let mut rows: Vec<(String, FilterKind, DisagreementReport)> = Vec::new();
    match (image, &cfg.dataset) {
        (Some(path), _) => {
            rec.input(path);
            let img = load_gray(path)?;
            let pair = match &masks {
                Some((a, b)) => Some((
                    load_pair_annotation(&mut rec, a, None, &cfg.annotators[0])?,
                    load_pair_annotation(&mut rec, b, None, &cfg.annotators[1])?,
                )),
                None => None,
            };
            for &k in &kinds {
                let resp = respond(cfg, &img, k)?;
                let name = format!("{k}.png");
                save_field(&resp, rec.output(&name), BitDepth::Sixteen, None)?;
                rec.output(vessel_agreement::raster::io::sidecar_path(Path::new(&name)));
                if let Some((a, b)) = &pair {
                    rows.push(("image".into(), k, disagreement_score(&resp, a, b)?));
                }
            }
        }
        (None, Some(root)) => {
            rec.dataset_input(root)?;
            let images = load_dataset(root)?;
            let ps = annotation_pairs(&images, &cfg.annotators[0], &cfg.annotators[1]);
            if ps.is_empty() {
                bail!(vessel_agreement::Error::EmptyInput(
                    "images annotated by both annotators"
                ));
            }
            let by_id: std::collections::HashMap<&str, &GrayImage> = images
                .iter()
                .map(|i| (i.image_id.as_str(), &i.image))
                .collect();
            let per_image = ps
                .par_iter()
                .map(|p| {
                    let img = by_id[p.image_id.as_str()];
                    kinds
                        .iter()
                        .map(|&k| {
                            Ok((
                                p.image_id.clone(),
                                k,
                                disagreement_score(&respond(cfg, img, k)?, &p.a, &p.b)?,
                            ))
                        })
                        .collect::<anyhow::Result<Vec<_>>>()
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            rows = per_image.into_iter().flatten().collect();
        }
        (None, None) => return Err(usage("give --image or --dataset")),
    }
    let mut csv = Vec::new();
    writeln!(csv, "{}", DisagreementReport::CSV_HEADER)?;
    for (id, k, r) in &rows {
        writeln!(csv, "{}", r.csv_row(id, *k))?;
    }
    if !rows.is_empty() {
        std::fs::write(rec.output("vesselness_report.csv"), &csv)?;
    }
    let text = if rows.is_empty() {
        format!("wrote {} response image(s)", kinds.len())
    } else {
        String::from_utf8(csv.clone())?
    };
    let value: Vec<Value> = rows
        .iter()
        .map(|(id, k, r)| json!({ "id": id, "filter": k, "report": r }))
        .collect();
    report(ctx, &text, &csv, &value)?;
    rec.finish(0, &params(cfg, json!({ "filter": kinds })), threads())
}

fn patchgen(cfg: &PipelineConfig, ctx: &Context) -> anyhow::Result<()> {
    let root = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| usage("--dataset is required"))?;
    let mut rec = Recorder::new("patchgen", &cfg.out)?;
    rec.dataset_input(root)?;
    let images = load_dataset(root)?;
    let patches = sample_patches(&images, cfg.patch_count, cfg.patch_size, cfg.seed)?;
    write_patch_set(rec.out(), &patches)?;
    rec.output(vessel_agreement::dataset::INDEX_FILE);
    rec.output_tree("patches")?;
    rec.output_tree("annotations")?;
    let text = format!(
        "{} patches of {}px from {} images",
        patches.len(),
        cfg.patch_size,
        images.len()
    );
    let ids: Vec<&str> = patches.iter().map(|p| p.patch_id.as_str()).collect();
    let csv = format!("patch_id\n{}\n", ids.join("\n"));
    report(ctx, &text, csv.as_bytes(), &ids)?;
    rec.finish(cfg.seed, &params(cfg, json!({})), threads())
}

fn rate_build(cfg: &PipelineConfig, ctx: &Context, patch_root: &Path) -> anyhow::Result<()> {
    let mut rec = Recorder::new("rate-build", &cfg.out)?;
    rec.dataset_input(patch_root)?;
    let patches = load_patch_set(patch_root)?;
    let set = build_rating_set(&patches, cfg.quotas, cfg.duplicates, cfg.seed)?;
    let used: std::collections::BTreeSet<&str> =
        set.items.iter().map(|i| i.patch_id.as_str()).collect();
    let selected: Vec<Patch> = patches
        .into_iter()
        .filter(|p| used.contains(p.patch_id.as_str()))
        .collect();
    write_patch_set(rec.out(), &selected)?;
    for item in set.items.iter().filter(|i| i.rotation_deg % 360 != 0) {
        let p = selected
            .iter()
            .find(|p| p.patch_id == item.patch_id)
            .expect("rating items reference selected patches");
        let name = format!("{}.png", rotated_image_ref(&p.patch_id, item.rotation_deg));
        save_gray(
            &p.image.rotate(item.rotation_deg)?,
            rec.out().join("patches").join(name),
            BitDepth::Sixteen,
        )?;
    }
    set.save(rec.output(RATING_SET_FILE))?;
    rec.output(vessel_agreement::dataset::INDEX_FILE);
    rec.output_tree("patches")?;
    rec.output_tree("annotations")?;

    let mut counts = std::collections::BTreeMap::new();
    for i in set.base_items() {
        *counts.entry(i.category.as_str()).or_insert(0usize) += 1;
    }
    let mut csv = String::from("category,items\n");
    for (c, n) in &counts {
        csv.push_str(&format!("{c},{n}\n"));
    }
    let text = format!(
        "{} items ({} duplicates) from {} patches",
        set.items.len(),
        set.n_duplicates,
        selected.len()
    );
    report(ctx, &text, csv.as_bytes(), &set)?;
    rec.finish(cfg.seed, &params(cfg, json!({})), threads())
}

fn rate_serve(
    cfg: &PipelineConfig,
    rating_dir: PathBuf,
    log_dir: PathBuf,
    cors_origin: Option<String>,
) -> anyhow::Result<()> {
    let config = ServiceConfig {
        rating_dir,
        log_dir,
        admin_token: std::env::var(ADMIN_TOKEN_ENV)
            .ok()
            .filter(|t| !t.is_empty()),
        cors_origin,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.addr)
            .await
            .with_context(|| format!("binding {}", cfg.addr))?;
        let addr = listener.local_addr()?;
        print_text(&format!("listening on http://{addr}"))?;
        if config.admin_token.is_none() {
            log::warn!("{ADMIN_TOKEN_ENV} is unset; the export endpoint is disabled");
        }
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, &config, shutdown).await?;
        anyhow::Ok(())
    })
}

fn rate_analyze(
    cfg: &PipelineConfig,
    ctx: &Context,
    set_path: &Path,
    log: &Path,
) -> anyhow::Result<()> {
    let set_file = if set_path.is_dir() {
        set_path.join(RATING_SET_FILE)
    } else {
        set_path.to_path_buf()
    };
    let log_file = if log.is_dir() {
        log.join(RESPONSE_LOG)
    } else {
        log.to_path_buf()
    };
    let mut rec = Recorder::new("rate-analyze", &cfg.out)?;
    rec.input(&set_file);
    rec.input(&log_file);
    let set = RatingSet::load(&set_file)?;
    let responses = load_jsonl(&log_file)?;
    let table = agreement_table(&responses, &set.items, cfg.reference)?;
    export_agreement_csv(
        &table,
        rec.output(format!("agreement_{}.csv", cfg.reference.as_str())),
    )?;
    let consistency = intra_rater_consistency(&responses, &set.items);
    let mut ccsv = Vec::new();
    write_consistency_csv(&consistency, &mut ccsv)?;
    std::fs::write(rec.output("consistency.csv"), &ccsv)?;

    let tcsv = table.to_csv_string();
    let text = format!("{tcsv}\n{}", std::str::from_utf8(&ccsv)?);
    report(
        ctx,
        &text,
        tcsv.as_bytes(),
        &json!({ "agreement": table, "consistency": consistency }),
    )?;
    rec.finish(set.seed, &params(cfg, json!({})), threads())
}

fn synth(cfg: &PipelineConfig, ctx: &Context, n: usize, p: SynthParams) -> anyhow::Result<()> {
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let mut rec = Recorder::new("synth", &cfg.out)?;
    let images = synthetic_dataset(n, &p, cfg.seed)?;
    write_dataset(rec.out(), &images)?;
    rec.output(vessel_agreement::dataset::INDEX_FILE);
    rec.output_tree("images")?;
    rec.output_tree("annotations")?;
    let text = format!("{n} synthetic images of {}x{}", p.width, p.height);
    let ids: Vec<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
    report(
        ctx,
        &text,
        format!("image_id\n{}\n", ids.join("\n")).as_bytes(),
        &ids,
    )?;
    rec.finish(
        cfg.seed,
        &params(
            cfg,
            json!({ "n": n, "width": p.width, "height": p.height, "jitter_px": p.jitter_px }),
        ),
        threads(),
    )
}
