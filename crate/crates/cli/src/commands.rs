use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use protoseg_core::classifier::{classify_batch, render};
use protoseg_core::eval::format_report;
use protoseg_core::formats;
use protoseg_core::mask_agg::{aggregate_with, AggregateOptions};
use protoseg_core::protocol::{
    attach_labels, backward_transfer_report, label_regions, RegionLabel,
};
use protoseg_core::{
    compute_report, run_protocol, AggregatedMask, ClassId, ConfusionMatrix, LabelMap, Prediction,
    ProtocolConfig, PrototypeBank, RegionEmbedding, RegistrationParams, SegmentSample,
    TaskProtocol,
};
use rayon::prelude::*;

use crate::cli::*;
use crate::config::{DataPaths, PipelineConfig, SegmentSource};
use crate::fsio::{self, write_atomic};
use crate::palette;

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Aggregate(a) => aggregate(a),
        Command::Label(a) => label(a),
        Command::Prototypes(a) => prototypes(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Protocol(a) => protocol(a),
        Command::Render(a) => render_png(a),
    }
}

/// Reports every failure, then fails if there was any.
fn collect_all<T>(results: Vec<Result<T>>, what: &str) -> Result<Vec<T>> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {total} {what} failed");
    }
    Ok(ok)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("missing {what} {}", path.display());
    }
    Ok(())
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        bail!("--{name} must lie in (0, 1], got {v}");
    }
    Ok(())
}

fn file_name_safe(image_id: &str) -> Result<&str> {
    if image_id.is_empty() || image_id.contains(['/', '\\']) || image_id == "." || image_id == ".."
    {
        bail!("image id {image_id:?} cannot be used as a file name");
    }
    Ok(image_id)
}

fn aggregate(args: &AggregateArgs) -> Result<()> {
    check_unit_interval("tau-area", args.tau_area)?;
    if args.min_pixels == 0 {
        bail!("--min-pixels must be at least 1");
    }
    let opts = AggregateOptions {
        tau_area: args.tau_area,
        min_pixels: args.min_pixels,
    };
    let files = fsio::list_with_ext(&args.masks, "smsk")?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let results: Vec<Result<usize>> = files
        .par_iter()
        .map(|path| {
            let set = fsio::load_masks(path)?;
            let agg = aggregate_with(&set, &opts)
                .with_context(|| format!("aggregating {}", path.display()))?;
            let bytes = formats::encode_label_map(&agg.labels)?;
            write_atomic(&args.out.join(format!("{}.sagg", set.image_id)), &bytes)?;
            Ok(agg.region_count())
        })
        .collect();
    let regions = collect_all(results, "mask files")?;
    println!(
        "aggregated {} file(s), {} region(s)",
        regions.len(),
        regions.iter().sum::<usize>()
    );
    Ok(())
}

fn label(args: &LabelArgs) -> Result<()> {
    check_unit_interval("theta-overlap", args.theta_overlap)?;
    let files = fsio::list_with_ext(&args.agg, "sagg")?;
    let results: Vec<Result<Vec<RegionLabel>>> = files
        .par_iter()
        .map(|path| {
            let stem = fsio::stem(path)?;
            let gt_path = args.gt.join(format!("{stem}.sagg"));
            require_file(&gt_path, "ground-truth map")?;
            let agg = AggregatedMask {
                image_id: stem,
                labels: fsio::load_label_map(path)?,
            };
            let gt = fsio::load_label_map(&gt_path)?;
            label_regions(&agg, &gt, args.theta_overlap)
                .with_context(|| format!("labelling {}", path.display()))
        })
        .collect();
    let labels = collect_all(results, "region maps")?.concat();
    write_atomic(&args.out, formats::write_region_labels(&labels).as_bytes())?;
    let assigned = labels.iter().filter(|l| l.gt_class.is_some()).count();
    println!("{} region(s), {assigned} labelled", labels.len());
    Ok(())
}

fn prototypes(args: &PrototypesArgs) -> Result<()> {
    let (dim, mut embeddings) = fsio::load_embeddings(&args.embeddings)?;
    if let Some(path) = &args.labels {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let labels = formats::parse_region_labels(&text)
            .with_context(|| format!("invalid region labels {}", path.display()))?;
        attach_labels(&mut embeddings, &labels);
    }
    let mut bank = if args.append && args.bank.exists() {
        let bank = fsio::load_bank(&args.bank)?;
        if bank.dim() != dim {
            bail!(
                "{} has dimension {}, embeddings have {dim}",
                args.bank.display(),
                bank.dim()
            );
        }
        bank
    } else {
        PrototypeBank::new(dim)
    };
    let step = args
        .step
        .unwrap_or_else(|| bank.last_step().map_or(0, |s| s + 1));

    let wanted: BTreeSet<ClassId> = args.classes.iter().copied().map(ClassId).collect();
    let mut by_class: BTreeMap<ClassId, Vec<RegionEmbedding>> = BTreeMap::new();
    for e in embeddings {
        match e.gt_class {
            Some(c) if c.is_foreground() && (wanted.is_empty() || wanted.contains(&c)) => {
                by_class.entry(c).or_default().push(e)
            }
            _ => {}
        }
    }
    let missing: Vec<String> = wanted
        .iter()
        .filter(|c| !by_class.contains_key(c))
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() {
        bail!(
            "no labelled embeddings for class(es) {}",
            missing.join(", ")
        );
    }
    if by_class.is_empty() {
        bail!("no labelled embeddings in {}", args.embeddings.display());
    }

    let params = RegistrationParams {
        variance_threshold: args.variance_threshold,
        k: args.k,
        seed: args.seed,
    };
    for (class, group) in &by_class {
        let entry = bank
            .register_class(*class, "", group, &params, step)
            .with_context(|| format!("registering class {class}"))?;
        println!(
            "class {class}: {} embedding(s), variance {:.4}, {} prototype(s)",
            group.len(),
            entry.variance_score,
            entry.prototypes.len()
        );
    }
    write_atomic(&args.bank, &formats::encode_bank(&bank))
}

fn classify(args: &ClassifyArgs) -> Result<()> {
    let bank = fsio::load_bank(&args.bank)?;
    let (_, embeddings) = fsio::load_embeddings(&args.embeddings)?;
    let preds = classify_batch(&embeddings, &bank, args.tau_sim)
        .with_context(|| format!("classifying {}", args.embeddings.display()))?;
    write_atomic(&args.out, formats::write_predictions(&preds).as_bytes())?;

    if let (Some(agg_dir), Some(maps)) = (&args.agg, &args.maps) {
        let mut by_image: BTreeMap<&str, Vec<Prediction>> = BTreeMap::new();
        for p in &preds {
            by_image.entry(&p.image_id).or_default().push(p.clone());
        }
        fs::create_dir_all(maps).with_context(|| format!("creating {}", maps.display()))?;
        let results: Vec<Result<()>> = by_image
            .par_iter()
            .map(|(id, preds)| {
                let id = file_name_safe(id)?;
                let path = agg_dir.join(format!("{id}.sagg"));
                require_file(&path, "region map")?;
                let agg = AggregatedMask {
                    image_id: id.to_string(),
                    labels: fsio::load_label_map(&path)?,
                };
                let map = render(&agg, preds).with_context(|| format!("rendering {id}"))?;
                write_atomic(
                    &maps.join(format!("{id}.sagg")),
                    &formats::encode_label_map(&map.labels)?,
                )
            })
            .collect();
        collect_all(results, "images")?;
    }
    let bg = preds.iter().filter(|p| p.is_background()).count();
    println!("{} region(s), {bg} background", preds.len());
    Ok(())
}

/// Sparse `(gt, pred) -> count` over non-ignore pixels.
fn pixel_pairs(pred: &LabelMap, gt: &LabelMap) -> BTreeMap<(u16, u16), u64> {
    let mut counts = BTreeMap::new();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if !ClassId(g).is_ignore() {
            *counts.entry((g, p)).or_default() += 1;
        }
    }
    counts
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let files = fsio::list_with_ext(&args.pred, "sagg")?;
    if files.is_empty() {
        bail!("no .sagg files in {}", args.pred.display());
    }
    let results: Vec<Result<BTreeMap<(u16, u16), u64>>> = files
        .par_iter()
        .map(|path| {
            let stem = fsio::stem(path)?;
            let gt_path = args.gt.join(format!("{stem}.sagg"));
            require_file(&gt_path, "ground-truth map")?;
            let pred = fsio::load_label_map(path)?;
            let gt = fsio::load_label_map(&gt_path)?;
            if pred.shape() != gt.shape() {
                bail!(
                    "{}: shape {:?} does not match ground truth {:?}",
                    path.display(),
                    pred.shape(),
                    gt.shape()
                );
            }
            Ok(pixel_pairs(&pred, &gt))
        })
        .collect();
    let mut totals: BTreeMap<(u16, u16), u64> = BTreeMap::new();
    for counts in collect_all(results, "prediction files")? {
        for (k, v) in counts {
            *totals.entry(k).or_default() += v;
        }
    }
    let n = totals
        .keys()
        .map(|&(g, p)| g.max(p) as usize + 1)
        .max()
        .unwrap_or(0);
    let mut rows = vec![vec![0u64; n]; n];
    for (&(g, p), &v) in &totals {
        rows[g as usize][p as usize] = v;
    }
    let cm = ConfusionMatrix::from_rows(&rows)?;
    let report = compute_report(&cm, !args.exclude_bg)?;
    let text = format_report(&report, &BTreeMap::new());
    print!("{text}");
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

fn render_png(args: &RenderArgs) -> Result<()> {
    let map = fsio::load_label_map(&args.input)?;
    let png = palette::encode_png(&map)?;
    write_atomic(&args.out, &png)
}

struct ImageData {
    segments: AggregatedMask,
    gt: LabelMap,
    embeddings: Vec<RegionEmbedding>,
    dim: usize,
}

fn load_image(gt_path: &Path, paths: &DataPaths, opts: &AggregateOptions) -> Result<ImageData> {
    let stem = fsio::stem(gt_path)?;
    let gt = fsio::load_label_map(gt_path)?;
    let segments = match &paths.segments {
        SegmentSource::Masks(dir) => {
            let path = dir.join(format!("{stem}.smsk"));
            require_file(&path, "mask file")?;
            let set = fsio::load_masks(&path)?;
            aggregate_with(&set, opts).with_context(|| format!("aggregating {}", path.display()))?
        }
        SegmentSource::Aggregated(dir) => {
            let path = dir.join(format!("{stem}.sagg"));
            require_file(&path, "region map")?;
            AggregatedMask {
                image_id: stem.clone(),
                labels: fsio::load_label_map(&path)?,
            }
        }
    };
    if segments.labels.shape() != gt.shape() {
        bail!(
            "{stem}: segments are {:?} but ground truth {} is {:?}",
            segments.labels.shape(),
            gt_path.display(),
            gt.shape()
        );
    }
    let emb_path = paths.embeddings.join(format!("{stem}.semb"));
    require_file(&emb_path, "embeddings file")?;
    let (dim, embeddings) = fsio::load_embeddings(&emb_path)?;
    let n = segments.region_count();
    for (i, e) in embeddings.iter().enumerate() {
        if e.image_id != stem {
            bail!(
                "{}: record {i} belongs to image {:?}, expected {stem:?}",
                emb_path.display(),
                e.image_id
            );
        }
        if e.region_id == 0 || e.region_id as usize > n {
            bail!(
                "{}: record {i} refers to region {}, but the image has {n} region(s)",
                emb_path.display(),
                e.region_id
            );
        }
    }
    Ok(ImageData {
        segments,
        gt,
        embeddings,
        dim,
    })
}

fn load_set(paths: &DataPaths, opts: &AggregateOptions, what: &str) -> Result<Vec<ImageData>> {
    let gts = fsio::list_with_ext(&paths.gt, "sagg")?;
    if gts.is_empty() {
        bail!(
            "no {what} ground-truth maps (.sagg) in {}",
            paths.gt.display()
        );
    }
    let results = gts.par_iter().map(|g| load_image(g, paths, opts)).collect();
    let images = collect_all(results, &format!("{what} images"))?;
    let dim = images[0].dim;
    if let Some(im) = images.iter().find(|im| im.dim != dim) {
        bail!(
            "{what} embeddings of {} have dimension {}, others {dim}",
            im.segments.image_id,
            im.dim
        );
    }
    Ok(images)
}

fn protocol(args: &ProtocolArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    let protocol = TaskProtocol::with_order(&cfg.split, cfg.class_order.clone())
        .with_context(|| format!("split {:?}", cfg.split))?;
    let opts = cfg.aggregate_options();
    let train = load_set(&cfg.train, &opts, "training")?;
    let eval = match &cfg.eval {
        Some(paths) => Some(load_set(paths, &opts, "evaluation")?),
        None => None,
    };
    if let Some(e) = &eval {
        if e[0].dim != train[0].dim {
            bail!(
                "evaluation embeddings have dimension {}, training {}",
                e[0].dim,
                train[0].dim
            );
        }
    }

    let labelled: Vec<Result<(Vec<RegionLabel>, Vec<RegionEmbedding>)>> = train
        .par_iter()
        .map(|im| {
            let labels = label_regions(&im.segments, &im.gt, cfg.theta_overlap)?;
            let mut embeddings = im.embeddings.clone();
            attach_labels(&mut embeddings, &labels);
            Ok((labels, embeddings))
        })
        .collect();
    let (labels, train_embeddings): (Vec<_>, Vec<_>) = collect_all(labelled, "training images")?
        .into_iter()
        .unzip();
    let labels = labels.concat();
    let train_embeddings = train_embeddings.concat();

    let samples: Vec<SegmentSample> = eval
        .as_ref()
        .unwrap_or(&train)
        .iter()
        .map(|im| SegmentSample {
            segments: im.segments.clone(),
            gt: im.gt.clone(),
            embeddings: im.embeddings.clone(),
        })
        .collect();

    let pcfg = ProtocolConfig {
        tau_sim: cfg.tau_sim,
        registration: cfg.registration(),
        include_bg: cfg.include_bg,
        class_names: cfg.class_names.clone(),
    };
    let snapshots = run_protocol(&protocol, &train_embeddings, Some(&samples), &pcfg)
        .context("running the protocol")?;

    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(
        &out.join("region_labels.tsv"),
        formats::write_region_labels(&labels).as_bytes(),
    )?;
    let mut names = cfg.class_names.clone();
    names
        .entry(ClassId::BACKGROUND)
        .or_insert_with(|| "background".into());

    let mut summary = String::from("step\tclasses\tmiou\tmacro_precision\tmacro_recall\n");
    for s in &snapshots {
        let evaluation = s.evaluation.as_ref().expect("evaluation requested");
        let report = &evaluation.report;
        let classes: Vec<String> = s.classes.iter().map(ToString::to_string).collect();
        let prefix = out.join(format!("step_{:03}", s.step));
        write_atomic(&prefix.with_extension("spro"), &s.bank_bytes)?;
        let text = format!(
            "# step {} classes {}\n{}",
            s.step,
            classes.join(","),
            format_report(report, &names)
        );
        write_atomic(&with_suffix(&prefix, "_report.txt"), text.as_bytes())?;
        let preds = formats::write_predictions(&evaluation.predictions.concat());
        write_atomic(&with_suffix(&prefix, "_predictions.tsv"), preds.as_bytes())?;
        writeln!(
            summary,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            s.step,
            classes.join(","),
            report.miou,
            report.macro_precision,
            report.macro_recall
        )?;
    }
    write_atomic(&out.join("summary.tsv"), summary.as_bytes())?;
    if snapshots.len() >= 2 {
        let bt = backward_transfer_report(&snapshots)?;
        write_atomic(
            &out.join("backward_transfer.txt"),
            bt.to_text(&names).as_bytes(),
        )?;
    }
    print!("{summary}");
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    name.into()
}
