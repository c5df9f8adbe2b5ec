use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde_json::json;

use partfuse::embedding::{
    parse_trials, score_trials, ChannelMode, EmbeddingStore, ExternalProvider, ProviderMap, ProviderSpec, ScoreTable,
};
use partfuse::fusion::{train_llr, FusedScores, FusionModel, LlrConfig};
use partfuse::landmarks::{align, crop_strategy, extract_pixels_aligned, AlignmentTransform, CropConfig, LandmarkSet, PadPolicy};
use partfuse::metrics::det_to_csv;
use partfuse::protocol::{
    build_trials, parse_manifests, run_cross_dataset, run_kfold_accuracy, run_single_dataset_eer, run_ymu_matrix,
    write_manifests, DatasetManifest, FoldUnit, FusionTraining, ImpostorPolicy, ProtocolConfig, ProtocolError,
    TrialMode,
};
use partfuse::synth::{generate, ScenarioSpec};
use partfuse::{parse_region_list, RegionTag, Strategy};

use crate::args::*;
use crate::table;
use crate::CliError;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    Ok(fs::read(path).with_context(|| format!("cannot read {}", path.display()))?)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    let bytes = read(path)?;
    Ok(String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    Ok(fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?)
}

/// Writes to `path`, or to standard output when no path is given.
fn emit(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// A strategy name, `all`, or a comma-separated region list.
fn parse_regions(s: &str) -> Result<Vec<RegionTag>, CliError> {
    if s == "all" {
        return Ok(RegionTag::ALL.to_vec());
    }
    if let Ok(strategy) = Strategy::from_str(s) {
        return Ok(strategy.regions());
    }
    let regions = parse_region_list(s).map_err(|e| CliError::Usage(e.to_string()))?;
    if regions.is_empty() {
        return Err(CliError::Usage("no regions given".into()));
    }
    Ok(regions)
}

fn load_stores(paths: &[PathBuf]) -> Result<EmbeddingStore, CliError> {
    let mut iter = paths.iter();
    let first = iter.next().ok_or_else(|| CliError::Usage("no store given".into()))?;
    let mut store = EmbeddingStore::from_csv(&read(first)?).with_context(|| first.display().to_string())?;
    for p in iter {
        let other = EmbeddingStore::from_csv(&read(p)?).with_context(|| p.display().to_string())?;
        for rec in other.records() {
            store.insert(rec.clone()).with_context(|| p.display().to_string())?;
        }
    }
    Ok(store)
}

/// Manifests from several files; rows of one dataset may be spread across
/// files.
fn load_manifests(paths: &[PathBuf]) -> Result<Vec<DatasetManifest>, CliError> {
    let mut out: Vec<DatasetManifest> = Vec::new();
    for p in paths {
        let parsed = parse_manifests(&read(p)?).with_context(|| p.display().to_string())?;
        for m in parsed {
            match out.iter_mut().find(|o| o.dataset_id == m.dataset_id) {
                Some(o) => {
                    o.entries.extend(m.entries);
                    o.validate().with_context(|| p.display().to_string())?;
                }
                None => out.push(m),
            }
        }
    }
    Ok(out)
}

fn provider_map(path: Option<&Path>, store: &EmbeddingStore, regions: &[RegionTag]) -> Result<ProviderMap, CliError> {
    match path {
        Some(p) => {
            let text = read_text(p)?;
            Ok(ProviderMap::parse(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?)
        }
        None => ProviderMap::infer(store, regions).ok_or_else(|| {
            CliError::Usage(format!(
                "the store holds {} providers; pass --provider-map to choose one per region",
                store.providers().len()
            ))
        }),
    }
}

pub fn crop(a: CropArgs) -> Result<(), CliError> {
    let strategy = Strategy::from_str(&a.strategy).map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = CropConfig {
        margin: a.margin,
        resize_to: a.resize,
        hairline_override: a.hairline,
    };
    let policy = match a.pad {
        PadArg::Replicate => PadPolicy::Replicate,
        PadArg::Black => PadPolicy::Black,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&a.landmarks)
        .with_context(|| format!("cannot list {}", a.landmarks.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;

    let results: Vec<Result<Vec<serde_json::Value>, CliError>> = files
        .par_iter()
        .map(|file| {
            let ctx = || file.display().to_string();
            let lm = LandmarkSet::parse(&read(file)?).with_context(ctx)?;
            let image_path = ["png", "jpg", "jpeg"]
                .iter()
                .map(|ext| a.images.join(format!("{}.{ext}", lm.image_id)))
                .find(|p| p.exists())
                .ok_or_else(|| anyhow!("{}: no image named {}.png/.jpg/.jpeg in {}", ctx(), lm.image_id, a.images.display()))?;
            let img = image::open(&image_path)
                .with_context(|| image_path.display().to_string())?
                .to_rgb8();
            let (transform, placed) = if a.no_align {
                (AlignmentTransform::IDENTITY, lm.clone())
            } else {
                align(&lm).with_context(ctx)?
            };
            let crops = crop_strategy(&placed, strategy, &cfg).with_context(ctx)?;
            let mut index = Vec::new();
            for c in crops {
                let pixels = extract_pixels_aligned(&img, &c, &transform, policy).with_context(ctx)?;
                let name = format!("{}_{}.png", lm.image_id, c.tag);
                let out = a.out.join(&name);
                pixels.save(&out).with_context(|| format!("cannot write {}", out.display()))?;
                index.push(json!({
                    "subject_id": lm.subject_id,
                    "image_id": lm.image_id,
                    "file": name,
                    "crop": c,
                }));
            }
            Ok(index)
        })
        .collect();
    let mut index = Vec::new();
    for r in results {
        index.extend(r?);
    }
    log::info!("wrote {} crops from {} landmark files", index.len(), files.len());
    write(&a.out.join("crops.json"), &to_json(&index))
}

/// `<image_id>_<region>.png` back into its parts.
fn split_crop_name(name: &str) -> Option<(&str, RegionTag)> {
    let stem = name.strip_suffix(".png")?;
    RegionTag::ALL.iter().find_map(|&r| {
        stem.strip_suffix(r.as_str())
            .and_then(|s| s.strip_suffix('_'))
            .filter(|s| !s.is_empty())
            .map(|s| (s, r))
    })
}

pub fn import(a: ImportArgs) -> Result<(), CliError> {
    let channel_mode = ChannelMode::from_str(&a.channel_mode).map_err(CliError::Usage)?;
    if a.dim == 0 || a.input_side == 0 {
        return Err(CliError::Usage("--dim and --input-side must be positive".into()));
    }
    let spec = ProviderSpec {
        provider_id: a.provider_id.clone(),
        dim: a.dim,
        channel_mode,
        input_side: a.input_side,
    };
    let mut store = if a.store.exists() {
        EmbeddingStore::from_csv(&read(&a.store)?).with_context(|| a.store.display().to_string())?
    } else {
        EmbeddingStore::new()
    };

    let added = if let Some(input) = &a.input {
        store
            .import_embeddings(&read(input)?, &spec)
            .with_context(|| input.display().to_string())?
    } else {
        let cmd = a.provider_cmd.as_deref().expect("clap requires input or provider");
        let crops = a.crops.as_ref().expect("clap requires crops with provider");
        let manifest = load_manifests(std::slice::from_ref(a.manifest.as_ref().expect("clap requires manifest")))?;
        let subject_of: std::collections::BTreeMap<&str, &str> =
            manifest.iter().flat_map(|m| m.entries.iter()).map(|e| (e.image_id.as_str(), e.subject_id.as_str())).collect();
        let provider = ExternalProvider::new(cmd, spec).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut names: Vec<String> = fs::read_dir(crops)
            .with_context(|| format!("cannot list {}", crops.display()))?
            .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
            .filter(|n| split_crop_name(n).is_some())
            .collect();
        names.sort();
        let records = names
            .par_iter()
            .map(|name| {
                let (image_id, region) = split_crop_name(name).expect("filtered");
                let path = crops.join(name);
                let subject = subject_of
                    .get(image_id)
                    .ok_or_else(|| anyhow!("{}: image {image_id} is not in the manifest", path.display()))?;
                let img = image::open(&path).with_context(|| path.display().to_string())?;
                Ok(provider
                    .embed_record(subject, image_id, region, &img)
                    .with_context(|| path.display().to_string())?)
            })
            .collect::<Vec<Result<_, CliError>>>();
        let mut n = 0;
        for r in records {
            store.insert(r?)?;
            n += 1;
        }
        n
    };
    log::info!("imported {added} embeddings into {}", a.store.display());
    write(&a.store, &store.to_csv())
}

pub fn score(a: ScoreArgs) -> Result<(), CliError> {
    let regions = parse_regions(&a.regions)?;
    let store = load_stores(&a.store)?;
    let trials = parse_trials(&read(&a.trials)?).with_context(|| a.trials.display().to_string())?;
    let map = provider_map(a.provider_map.as_deref(), &store, &regions)?;
    let table = score_trials(&store, &trials, &regions, &map).with_context(|| a.trials.display().to_string())?;
    write(&a.out, &table.to_csv())
}

pub fn fuse_train(a: FuseTrainArgs) -> Result<(), CliError> {
    let table = ScoreTable::parse(&read(&a.scores)?).with_context(|| a.scores.display().to_string())?;
    let cfg = LlrConfig {
        l2: a.l2,
        max_iterations: a.max_iter,
        ..LlrConfig::default()
    };
    let model = train_llr(&table, &cfg, &a.dataset_id).with_context(|| a.scores.display().to_string())?;
    if !model.train_meta.converged && !a.allow_nonconverged {
        return Err(CliError::Numerical(format!(
            "fusion on {} did not converge in {} iterations; rerun with --allow-nonconverged to keep the model",
            a.scores.display(),
            model.train_meta.iterations
        )));
    }
    write(&a.out, &model.to_text())
}

pub fn fuse_apply(a: FuseApplyArgs) -> Result<(), CliError> {
    let model = FusionModel::from_text(&read_text(&a.model)?).with_context(|| a.model.display().to_string())?;
    let table = ScoreTable::parse(&read(&a.scores)?).with_context(|| a.scores.display().to_string())?;
    let selected = table.select(&model.region_order).ok_or_else(|| {
        anyhow!(
            "{}: score columns {:?} do not cover the model regions {:?}",
            a.scores.display(),
            table.regions.iter().map(|r| r.as_str()).collect::<Vec<_>>(),
            model.region_order.iter().map(|r| r.as_str()).collect::<Vec<_>>()
        )
    })?;
    write(&a.out, &model.apply_table(&selected)?.to_csv())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let fused = FusedScores::parse(&read(&a.fused)?).with_context(|| a.fused.display().to_string())?;
    let set = fused.score_set().with_context(|| a.fused.display().to_string())?;
    if let Some(t) = a.threshold {
        if t.is_nan() {
            return Err(CliError::Usage("--threshold must be a number".into()));
        }
    }
    let report = set.report(a.threshold);
    if let Some(det) = &a.det {
        write(det, &det_to_csv(&set.det_curve()))?;
    }
    let text = match a.format {
        Format::Json => to_json(&report),
        Format::Table => table::eval(&report),
    };
    emit(a.report.as_deref(), &text)
}

fn protocol_config(a: &ProtocolArgs, store: &EmbeddingStore) -> Result<ProtocolConfig, CliError> {
    let regions = match &a.regions {
        Some(s) => parse_regions(s)?,
        None => match &a.provider_map {
            Some(p) => provider_map(Some(p), store, &[])?.0.keys().copied().collect(),
            None => {
                let present: BTreeSet<RegionTag> = store.records().map(|r| r.region).collect();
                present.into_iter().collect()
            }
        },
    };
    if regions.is_empty() {
        return Err(CliError::Usage("no regions to evaluate".into()));
    }
    let map = provider_map(a.provider_map.as_deref(), store, &regions)?;
    if a.no_fusion && regions.len() != 1 {
        return Err(CliError::Usage(format!(
            "--no-fusion needs exactly one region, got {}",
            regions.len()
        )));
    }
    if a.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let mut cfg = ProtocolConfig::new(regions, map);
    cfg.fusion = !a.no_fusion && cfg.regions.len() > 1;
    cfg.llr.l2 = a.l2;
    cfg.training = match a.paper_mode {
        Some(PaperMode::WholeDataset) => FusionTraining::WholeDataset,
        None => FusionTraining::PerFold,
    };
    cfg.n_folds = a.folds;
    cfg.seed = a.seed;
    cfg.impostors = match a.impostors {
        Some(count) => ImpostorPolicy::Sample { count, seed: a.seed },
        None => ImpostorPolicy::All,
    };
    cfg.fold_unit = match a.fold_unit {
        FoldUnitArg::Subject => FoldUnit::Subject,
        FoldUnitArg::Trial => FoldUnit::Trial,
    };
    Ok(cfg)
}

fn select<'m>(manifests: &'m [DatasetManifest], ids: &[String]) -> Result<Vec<&'m DatasetManifest>, CliError> {
    if ids.is_empty() {
        return Ok(manifests.iter().collect());
    }
    ids.iter()
        .map(|id| {
            manifests
                .iter()
                .find(|m| &m.dataset_id == id)
                .ok_or_else(|| ProtocolError::UnknownDataset(id.clone()).into())
        })
        .collect()
}

fn check_converged(ok: bool, allow: bool) -> Result<(), CliError> {
    if ok || allow {
        if !ok {
            log::warn!("reporting results from fusion fits that did not converge");
        }
        Ok(())
    } else {
        Err(CliError::Numerical(
            "a fusion fit did not converge; rerun with --allow-nonconverged to report anyway".into(),
        ))
    }
}

pub fn protocol(a: ProtocolArgs) -> Result<(), CliError> {
    let manifests = load_manifests(&a.manifest)?;
    let store = load_stores(&a.store)?;
    let cfg = protocol_config(&a, &store)?;
    let text = match a.kind {
        ProtocolKind::Eer => {
            let mode = match a.mode {
                ModeArg::BeforeVsAfter => TrialMode::BeforeVsAfter,
                ModeArg::BeforeVsBefore => TrialMode::BeforeVsBefore,
                ModeArg::AfterVsAfter => TrialMode::AfterVsAfter,
            };
            let reports = select(&manifests, &a.source)?
                .into_iter()
                .map(|m| run_single_dataset_eer(m, &store, mode, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            check_converged(reports.iter().all(|r| r.result.models_converged), a.allow_nonconverged)?;
            match a.format {
                Format::Json => to_json(&reports),
                Format::Table => table::eer(&reports),
            }
        }
        ProtocolKind::Kfold => {
            let reports = select(&manifests, &a.source)?
                .into_iter()
                .map(|m| run_kfold_accuracy(m, &store, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            check_converged(reports.iter().all(|r| r.all_converged()), a.allow_nonconverged)?;
            match a.format {
                Format::Json => to_json(&reports),
                Format::Table => table::kfold(&reports),
            }
        }
        ProtocolKind::YmuMatrix => {
            let chosen: Vec<&DatasetManifest> = if a.source.is_empty() {
                manifests.iter().filter(|m| m.supports(TrialMode::BeforeVsBefore)).collect()
            } else {
                select(&manifests, &a.source)?
            };
            if chosen.is_empty() {
                return Err(anyhow!("no dataset in the manifest has two images per makeup state").into());
            }
            let reports = chosen
                .into_iter()
                .map(|m| run_ymu_matrix(m, &store, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            check_converged(
                reports.iter().all(|r| r.rows.iter().all(|x| x.result.models_converged)),
                a.allow_nonconverged,
            )?;
            match a.format {
                Format::Json => to_json(&reports),
                Format::Table => table::ymu(&reports),
            }
        }
        ProtocolKind::Cross => {
            let sources = select(&manifests, &a.source)?;
            let targets: Vec<&DatasetManifest> = manifests.iter().collect();
            let report = run_cross_dataset(&sources, &targets, &store, &cfg)?;
            check_converged(report.rows.iter().all(|r| r.model_converged), a.allow_nonconverged)?;
            match a.format {
                Format::Json => to_json(&report),
                Format::Table => table::cross(&report),
            }
        }
    };
    emit(a.report.as_deref(), &text)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(p), _) => ScenarioSpec::from_toml(&read_text(p)?).with_context(|| p.display().to_string())?,
        (None, Some(Preset::S1)) => ScenarioSpec::scenario_s1(a.seed.unwrap_or(42)),
        (None, Some(Preset::S2)) => ScenarioSpec::scenario_s2(a.seed.unwrap_or(42)),
        (None, None) => return Err(CliError::Usage("pass --spec or --preset".into())),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let d = generate(&spec)?;
    let trials = build_trials(&d.manifest, TrialMode::BeforeVsAfter, ImpostorPolicy::All)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    write(&a.out_dir.join("manifest.csv"), &write_manifests(std::slice::from_ref(&d.manifest)))?;
    write(&a.out_dir.join("embeddings.csv"), &d.store.to_csv())?;
    write(&a.out_dir.join("provider_map.txt"), &d.providers.to_text())?;
    write(&a.out_dir.join("trials.csv"), &partfuse::embedding::write_trials(&trials))?;
    write(&a.out_dir.join("scenario.toml"), &spec.to_toml())
}
