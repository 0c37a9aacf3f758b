use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use iriscap_core::capacity::{calibrate_threshold, compute_frr, evaluate};
use iriscap_core::dataset::{apply_quality_policy, build_plan, load_manifest, write_manifest};
use iriscap_core::encoder::{encode_all, FilterBank, NormalizedTexture};
use iriscap_core::engine::{resume, run_nn, EngineOptions, TemplateDir, TemplateFile};
use iriscap_core::synth::{generate_population, PopulationParams};
use iriscap_core::{
    CalibratedThreshold, DimensionTag, EnrollmentPlan, FeatureLevel, OperatingPoint, QualityMode,
    ResolutionMode, SampleRecord, ScoreStore, SystemConfig, TemplateGeometry,
};
use log::{info, warn};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn system(
    cfg: &ExperimentConfig,
    (dimension, resolution, quality): (DimensionTag, ResolutionMode, QualityMode),
    feature_level: FeatureLevel,
) -> SystemConfig {
    SystemConfig {
        dimension,
        resolution,
        quality,
        feature_level,
        // Stores do not depend on the operating point.
        operating_point: cfg.operating_points()[0],
        experiment_seed: cfg.experiment_seed,
    }
}

fn store_path(cfg: &ExperimentConfig, system: &SystemConfig) -> PathBuf {
    cfg.out_dir
        .join("stores")
        .join(format!("{}.store", system.store_key().label()))
}

/// Adds this command's entry to `run_manifest.json`, keeping the others.
fn record_manifest(cfg: &ExperimentConfig, command: &str, details: Value) -> Result<()> {
    let path = cfg.out_dir.join("run_manifest.json");
    let mut doc: Value = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_else(|_| json!({})),
        Err(_) => json!({}),
    };
    if !doc.is_object() {
        doc = json!({});
    }
    doc["tool"] = json!("iriscap");
    doc["version"] = json!(env!("CARGO_PKG_VERSION"));
    doc["core_version"] = json!(iriscap_core::VERSION);
    doc["commands"][command] = details;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(
        &path,
        serde_json::to_string_pretty(&doc).expect("json") + "\n",
    )?;
    Ok(())
}

fn grid_json(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(&cfg.grid).expect("grid serializes")
}

// ------------------------------------------------------------------ synth

pub fn synth(cfg: &ExperimentConfig) -> Result<()> {
    let dir = TemplateDir::new(cfg.template_dir());
    let mut manifest: Option<Vec<SampleRecord>> = None;
    let mut files = 0;
    for &dimension in &cfg.grid.dimensions {
        let params = PopulationParams {
            dimension,
            resolution: ResolutionMode::Multi,
            ..cfg.synth
        };
        let pop = generate_population(&params)?;
        fs::create_dir_all(cfg.template_dir().join(dimension.to_string()))?;
        for s in &pop.samples {
            let sid = &s.record.sample_id;
            s.template
                .save(dir.path(dimension, TemplateFile::Multi, sid))?;
            for f in 0..3 {
                s.template.resolution_slice(f)?.save(dir.path(
                    dimension,
                    TemplateFile::Filter(f),
                    sid,
                ))?;
            }
            files += 4;
        }
        let records = pop.records();
        match &manifest {
            Some(m) if *m != records => {
                return Err(CliError::Compute(
                    "synthetic manifests differ between dimensions".into(),
                ))
            }
            _ => manifest = Some(records),
        }
    }
    let records = manifest.unwrap_or_default();
    let path = cfg.out_dir.join("manifest.csv");
    write_manifest(&path, &records)?;
    info!(
        "synthesized {} identities ({} samples, {files} template files); manifest {}",
        cfg.synth.n_identities,
        records.len(),
        path.display()
    );
    record_manifest(
        cfg,
        "synth",
        json!({
            "synth": serde_json::to_value(cfg.synth).expect("params serialize"),
            "dimensions": serde_json::to_value(&cfg.grid.dimensions).expect("dims"),
            "samples": records.len(),
        }),
    )
}

// ------------------------------------------------------------------ encode

/// Occlusion map convention: `<stem>.mask.pgm` next to the texture, nonzero
/// where the iris is visible.
fn mask_path(texture: &Path) -> PathBuf {
    let stem = texture.file_stem().unwrap_or_default().to_string_lossy();
    texture.with_file_name(format!("{stem}.mask.pgm"))
}

pub fn encode(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = cfg.manifest_path();
    let records = read_manifest(&manifest)?;
    if records.is_empty() {
        warn!(
            "manifest {} lists no samples; nothing to encode",
            manifest.display()
        );
        return record_manifest(cfg, "encode", json!({ "samples": 0 }));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let bank = FilterBank::default();
    let dir = TemplateDir::new(cfg.template_dir());
    for &dimension in &cfg.grid.dimensions {
        fs::create_dir_all(cfg.template_dir().join(dimension.to_string()))?;
    }
    for record in &records {
        let texture_path = base.join(&record.path);
        let mask = mask_path(&texture_path);
        let texture =
            NormalizedTexture::from_pgm(&texture_path, mask.exists().then_some(mask.as_path()))
                .map_err(|e| CliError::Data(format!("{}: {e}", texture_path.display())))?;
        for &dimension in &cfg.grid.dimensions {
            let geometry = TemplateGeometry::extracted(dimension, ResolutionMode::Single);
            let (single, multi) = encode_all(
                &texture,
                &bank,
                &geometry,
                &record.identity_id,
                &record.sample_id,
            )?;
            for (f, t) in single.iter().enumerate() {
                t.save(dir.path(dimension, TemplateFile::Filter(f), &record.sample_id))?;
            }
            multi.save(dir.path(dimension, TemplateFile::Multi, &record.sample_id))?;
        }
    }
    info!(
        "encoded {} samples into {} templates",
        records.len(),
        records.len() * 4 * cfg.grid.dimensions.len()
    );
    record_manifest(
        cfg,
        "encode",
        json!({
            "samples": records.len(),
            "dimensions": serde_json::to_value(&cfg.grid.dimensions).expect("dims"),
        }),
    )
}

// ------------------------------------------------------------------ run

type Triple = (DimensionTag, ResolutionMode, QualityMode);

fn plans(cfg: &ExperimentConfig) -> Result<Vec<(Triple, EnrollmentPlan)>> {
    let records = read_manifest(&cfg.manifest_path())?;
    cfg.triples()
        .into_iter()
        .map(|triple| {
            let policy = cfg.quality_policy(triple.2)?;
            let plan = build_plan(&apply_quality_policy(&records, &policy));
            if plan.m() == 0 {
                return Err(CliError::Data(format!(
                    "no identities left for {} {} {}",
                    triple.0, triple.1, triple.2
                )));
            }
            Ok((triple, plan))
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, resume_existing: bool) -> Result<()> {
    // Validate every cell before any compute starts.
    let plans = plans(cfg)?;
    let templates = TemplateDir::new(cfg.template_dir());
    let options = EngineOptions {
        workers: cfg.engine.workers,
        chunk_size: cfg.engine.chunk_size,
        stop_after_chunks: None,
    };
    fs::create_dir_all(cfg.out_dir.join("stores"))?;
    let mut stores = Vec::new();
    for (triple, plan) in &plans {
        for level in cfg.feature_levels() {
            let system = system(cfg, *triple, level);
            let path = store_path(cfg, &system);
            let label = system.store_key().label();
            let store = if resume_existing && path.exists() {
                info!("resuming {label}");
                resume(&path, plan, &templates, &system, &options)?
            } else {
                info!("scoring {label}: {} identities", plan.m());
                run_nn(plan, &templates, &system, &options, &path)?
            };
            store.write_csv(path.with_extension("csv"))?;
            stores.push(
                json!({ "label": label, "identities": store.m(), "pairs": store.total_pairs() }),
            );
        }
    }
    info!("{} stores complete", stores.len());
    record_manifest(
        cfg,
        "run",
        json!({
            "experiment_seed": cfg.experiment_seed,
            "grid": grid_json(cfg),
            "chunk_size": cfg.engine.chunk_size,
            "stores": stores,
        }),
    )
}

// ------------------------------------------------------------------ calibrate / report

fn load_store(cfg: &ExperimentConfig, system: &SystemConfig) -> Result<ScoreStore> {
    let path = store_path(cfg, system);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "missing store {}; run `iriscap run` first",
            path.display()
        )));
    }
    Ok(ScoreStore::load_complete(path)?)
}

fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "missing manifest {}",
            path.display()
        )));
    }
    Ok(load_manifest(path)?)
}

/// Thresholds of one triple, calibrated at full features, tightest OP first.
fn thresholds(
    cfg: &ExperimentConfig,
    full: &ScoreStore,
) -> Result<Vec<(OperatingPoint, CalibratedThreshold)>> {
    let hds = full.imposter_hds();
    cfg.operating_points()
        .into_iter()
        .map(|op| Ok((op, calibrate_threshold(&hds, op.percent())?)))
        .collect()
}

pub fn calibrate(cfg: &ExperimentConfig) -> Result<()> {
    let path = cfg.out_dir.join("thresholds.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "dimension",
        "resolution",
        "quality",
        "op",
        "hd_threshold",
        "achieved_far",
        "imposter_pairs",
        "frr",
    ])?;
    for triple in cfg.triples() {
        let full = load_store(cfg, &system(cfg, triple, FeatureLevel::FULL))?;
        for (op, t) in thresholds(cfg, &full)? {
            let frr = compute_frr(&full.genuine_hds(), t.hd_threshold)?;
            w.write_record([
                triple.0.to_string(),
                triple.1.to_string(),
                triple.2.to_string(),
                op.to_string(),
                format!("{:.8}", t.hd_threshold),
                format!("{:.8}", t.achieved_far),
                full.imposter_hds().len().to_string(),
                format!("{:.8}", frr),
            ])?;
        }
    }
    w.flush()?;
    info!("thresholds written to {}", path.display());
    record_manifest(
        cfg,
        "calibrate",
        json!({ "experiment_seed": cfg.experiment_seed, "grid": grid_json(cfg) }),
    )
}

pub fn report(cfg: &ExperimentConfig) -> Result<()> {
    let results = cfg.out_dir.join("results.csv");
    let curves = cfg.out_dir.join("curves");
    fs::create_dir_all(&curves)?;
    let mut w = csv::Writer::from_path(&results)?;
    w.write_record([
        "dimension",
        "resolution",
        "quality",
        "feature_level",
        "op",
        "hd_threshold",
        "fa",
        "far",
        "cc",
        "pc",
        "nicf",
        "frr",
    ])?;
    let mut rows = 0;
    for triple in cfg.triples() {
        let levels = cfg.feature_levels();
        let stores = levels
            .iter()
            .map(|&l| load_store(cfg, &system(cfg, triple, l)))
            .collect::<Result<Vec<_>>>()?;
        let thresholds = thresholds(cfg, &stores[0])?;
        let mut by_label = BTreeMap::new();
        for (op, t) in &thresholds {
            for (level, store) in levels.iter().zip(&stores) {
                let (r, curve) = evaluate(store, t)?;
                w.write_record([
                    triple.0.to_string(),
                    triple.1.to_string(),
                    triple.2.to_string(),
                    level.to_string(),
                    op.to_string(),
                    format!("{:.8}", t.hd_threshold),
                    r.total_fa.to_string(),
                    format!("{:.8}", r.far),
                    r.cc.to_string(),
                    format!("{:.4}", r.pc),
                    r.nicf.to_string(),
                    format!("{:.8}", r.frr),
                ])?;
                rows += 1;
                let label = format!("{}_op{op}", system(cfg, triple, *level).store_key().label());
                by_label.insert(label, curve);
            }
        }
        for (label, curve) in by_label {
            let mut c = csv::Writer::from_path(curves.join(format!("{label}.csv")))?;
            c.write_record(["k", "cumulative_fa"])?;
            for p in curve {
                c.write_record([p.k.to_string(), p.cumulative_fa.to_string()])?;
            }
            c.flush()?;
        }
    }
    w.flush()?;
    info!("{rows} result rows written to {}", results.display());
    record_manifest(
        cfg,
        "report",
        json!({ "experiment_seed": cfg.experiment_seed, "grid": grid_json(cfg), "rows": rows }),
    )
}
