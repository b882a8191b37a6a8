use std::path::{Path, PathBuf};
use std::sync::Arc;

use featreg::data::Sidecar;
use featreg::evaluation::evaluate as eval_report;
use featreg::features::{
    commutativity_gap, filterbank_extractor, load_external, pca_project, ExternalFeatureSet, IdentityExtractor,
    UpscaledExtractor,
};
use featreg::harness::{
    alpha_grid, alpha_sweep, cardiac_phantom, make_synthetic_pair, random_smooth_field, rigid_sweep, run_benchmark,
    BenchmarkMethod, FeatureProvider, RegistrationCase,
};
use featreg::objective::DEFAULT_LAMBDA;
use featreg::resample::warp_segmentation;
use featreg::{
    register, DisplacementField, FeatureExtractor, FeatureSource, Image2D, Metric, ObjectiveSpec, OptimizerConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{require, ExtractorKind, RunConfig};
use crate::error::CliError;
use crate::io::{load_field, load_image, load_segmentation, spacing_of, spacing_sidecar, OutDir};

type Out = Result<Vec<PathBuf>, CliError>;

fn echo(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn builtin_extractor(cfg: &RunConfig) -> Result<Arc<dyn FeatureExtractor>, CliError> {
    let f = &cfg.features;
    let base: Arc<dyn FeatureExtractor> = match f.extractor {
        ExtractorKind::Identity => Arc::new(IdentityExtractor),
        ExtractorKind::Filterbank => Arc::new(
            filterbank_extractor(f.seed, f.channels, f.downsample).map_err(|e| CliError::config("features", e.to_string()))?,
        ),
        ExtractorKind::External => {
            return Err(CliError::config(
                "features.extractor",
                "this command re-encodes transformed images and needs a built-in extractor",
            ))
        }
    };
    if f.upscale == 1.0 {
        Ok(base)
    } else {
        let up = UpscaledExtractor::new(base, f.upscale).map_err(|e| CliError::config("features.upscale", e.to_string()))?;
        Ok(Arc::new(up))
    }
}

fn feature_set(cfg: &RunConfig) -> Result<ExternalFeatureSet, CliError> {
    let manifest = require(&cfg.inputs.feature_manifest, "inputs.feature_manifest")?;
    Ok(ExternalFeatureSet::from_manifest(manifest)?)
}

fn provider(cfg: &RunConfig) -> Result<FeatureProvider, CliError> {
    Ok(match cfg.features.extractor {
        ExtractorKind::External => FeatureProvider::External(Arc::new(feature_set(cfg)?)),
        _ => FeatureProvider::Builtin(builtin_extractor(cfg)?),
    })
}

pub fn default_objective() -> ObjectiveSpec {
    ObjectiveSpec::baseline(Metric::Mse, DEFAULT_LAMBDA)
}

pub fn default_alpha_template() -> ObjectiveSpec {
    ObjectiveSpec::combined(Metric::Ncc, Metric::FeatCos, 0.5, DEFAULT_LAMBDA)
}

fn objective(cfg: &RunConfig) -> Result<ObjectiveSpec, CliError> {
    let spec = cfg.objective.unwrap_or_else(default_objective);
    spec.validate().map_err(|e| CliError::config("objective", e.to_string()))?;
    Ok(spec)
}

fn optimizer(cfg: &RunConfig) -> Result<OptimizerConfig, CliError> {
    let opt = cfg.optimizer.unwrap_or_default();
    opt.validate().map_err(|e| CliError::config("optimizer", e.to_string()))?;
    Ok(opt)
}

pub fn register_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let fixed = load_image(require(&cfg.inputs.fixed, "inputs.fixed")?)?;
    let moving = load_image(require(&cfg.inputs.moving, "inputs.moving")?)?;
    let segs = match (&cfg.inputs.fixed_seg, &cfg.inputs.moving_seg) {
        (Some(f), Some(m)) => Some((load_segmentation(f)?, load_segmentation(m)?)),
        (None, None) => None,
        (Some(_), None) => return Err(CliError::config("inputs.moving_seg", "fixed_seg is set but moving_seg is not")),
        (None, Some(_)) => return Err(CliError::config("inputs.fixed_seg", "moving_seg is set but fixed_seg is not")),
    };
    let spec = objective(cfg)?;
    let opt = optimizer(cfg)?;
    cfg.objective = Some(spec);
    cfg.optimizer = Some(opt);

    let source = if !spec.uses_features() {
        None
    } else if cfg.features.extractor == ExtractorKind::External {
        let set = feature_set(cfg)?;
        Some(FeatureSource::Precomputed {
            fixed: load_external(&set, require(&cfg.inputs.fixed_feature_id, "inputs.fixed_feature_id")?)?,
            moving: load_external(&set, require(&cfg.inputs.moving_feature_id, "inputs.moving_feature_id")?)?,
        })
    } else {
        Some(FeatureSource::Extractor(builtin_extractor(cfg)?))
    };

    let r = register(&fixed, &moving, &spec, source, &opt)?;
    let (ny, nx) = r.lattice.shape();
    let (h, w) = fixed.shape();
    let mut files = vec![
        out.tensor("displacement.npy", &r.displacement.to_tensor(), Some(spacing_sidecar(fixed.spacing())))?,
        out.tensor(
            "lattice.npy",
            &featreg::data::Tensor::from_f64(vec![2, ny, nx], r.lattice.params()),
            Some(Sidecar {
                grid_shape: Some([h, w]),
                ..spacing_sidecar(fixed.spacing())
            }),
        )?,
    ];
    files.push(out.json(
        "result.json",
        &json!({
            "config": echo(cfg),
            "objective": r.config.objective,
            "optimizer": r.config.optimizer,
            "feature_source": r.config.feature_source,
            "elapsed_seconds": r.elapsed_seconds,
            "iterations": r.trajectory.len(),
            "final": r.trajectory.last(),
            "trajectory": r.trajectory,
        }),
    )?);

    if let Some((fixed_seg, moving_seg)) = segs {
        let warped = warp_segmentation(&moving_seg, &r.displacement)?;
        let report = eval_report(&warped, &fixed_seg, &r.displacement, fixed.spacing())?;
        files.push(out.tensor("warped_seg.npy", &warped.to_tensor(), None)?);
        files.push(out.json("eval.json", &json!({"config": echo(cfg), "report": report}))?);
        files.push(out.text(
            "eval.csv",
            &format!("{}\n{}\n", featreg::EvalReport::CSV_HEADER, report.csv_row()),
        )?);
    }
    Ok(files)
}

pub fn eval_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let fixed_path = require(&cfg.inputs.fixed_seg, "inputs.fixed_seg")?;
    let fixed_seg = load_segmentation(fixed_path)?;
    let moving_seg = load_segmentation(require(&cfg.inputs.moving_seg, "inputs.moving_seg")?)?;
    let (h, w) = fixed_seg.shape();
    let u = match &cfg.inputs.displacement {
        Some(p) => load_field(p)?,
        None => DisplacementField::zeros(h, w),
    };
    let warped = warp_segmentation(&moving_seg, &u)?;
    let report = eval_report(&warped, &fixed_seg, &u, spacing_of(fixed_path)?)?;
    Ok(vec![
        out.json("eval.json", &json!({"config": echo(cfg), "report": report}))?,
        out.text("eval.csv", &format!("{}\n{}\n", featreg::EvalReport::CSV_HEADER, report.csv_row()))?,
    ])
}

fn image_or_phantom(cfg: &RunConfig, size: usize) -> Result<Image2D, CliError> {
    match &cfg.inputs.image {
        Some(p) => load_image(p),
        None => Ok(cardiac_phantom(size, cfg.seed)?.0),
    }
}

pub fn sweep_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let img = image_or_phantom(cfg, cfg.sweep.phantom_size)?;
    if cfg.sweep.distances.is_empty() {
        return Err(CliError::config("sweep.distances", "at least one distance is required"));
    }
    let mut extractors: Vec<Arc<dyn FeatureExtractor>> = vec![Arc::new(IdentityExtractor)];
    if !(cfg.features.extractor == ExtractorKind::Identity && cfg.features.upscale == 1.0) {
        extractors.push(builtin_extractor(cfg)?);
    }
    let kind = cfg.sweep.kind;
    let curve = rigid_sweep(&img, &extractors, &cfg.sweep.distances, kind)?;
    let csv_name = format!("sweep_{kind}.csv");
    curve.write_csv(out.writer(&csv_name)?)?;
    let z = curve.zero_index();
    let series: Vec<Value> = curve
        .series
        .iter()
        .map(|s| {
            json!({
                "extractor": s.extractor,
                "distance": s.distance,
                "argmin": curve.parameters[s.argmin()],
                "strict_min_at_zero": s.strict_min_at(z),
                "values": s.values,
            })
        })
        .collect();
    let summary = json!({
        "config": echo(cfg),
        "kind": kind,
        "unit": kind.unit(),
        "parameters": curve.parameters,
        "series": series,
    });
    Ok(vec![out.file(&csv_name)?, out.json(&format!("sweep_{kind}.json"), &summary)?])
}

/// One entry of a case list as written by `synth`. Paths are relative to
/// the list's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseEntry {
    id: String,
    fixed: PathBuf,
    moving: PathBuf,
    fixed_seg: PathBuf,
    moving_seg: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_feature_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    moving_feature_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseList {
    #[serde(default)]
    config: Value,
    cases: Vec<CaseEntry>,
}

fn load_cases(path: &Path) -> Result<Vec<RegistrationCase>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let list: CaseList = serde_json::from_str(&text).map_err(|e| CliError::config("inputs.cases", e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    list.cases
        .into_par_iter()
        .map(|c| {
            let p = |q: &Path| base.join(q);
            let mut ground_truth = None;
            if let Some(g) = &c.ground_truth {
                ground_truth = Some(load_field(&p(g))?);
            }
            Ok(RegistrationCase {
                fixed: load_image(&p(&c.fixed))?,
                moving: load_image(&p(&c.moving))?,
                fixed_seg: load_segmentation(&p(&c.fixed_seg))?,
                moving_seg: load_segmentation(&p(&c.moving_seg))?,
                ground_truth,
                fixed_feature_id: c.fixed_feature_id,
                moving_feature_id: c.moving_feature_id,
                id: c.id,
            })
        })
        .collect()
}

fn cases(cfg: &RunConfig) -> Result<Vec<RegistrationCase>, CliError> {
    if let Some(p) = &cfg.inputs.cases {
        return load_cases(p);
    }
    let s = &cfg.synthetic;
    if s.count == 0 {
        return Err(CliError::config("synthetic.count", "need at least one case"));
    }
    (0..s.count as u64)
        .into_par_iter()
        .map(|i| {
            let pair = make_synthetic_pair(s.seed + i, s.size, s.max_disp)
                .map_err(|e| CliError::config("synthetic", e.to_string()))?;
            Ok(RegistrationCase::from_synthetic(pair))
        })
        .collect()
}

pub fn synth_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let s = cfg.synthetic.clone();
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for i in 0..s.count as u64 {
        let p = make_synthetic_pair(s.seed + i, s.size, s.max_disp)
            .map_err(|e| CliError::config("synthetic", e.to_string()))?;
        let id = format!("synthetic-{}", p.seed);
        let sc = || Some(spacing_sidecar(p.fixed.spacing()));
        let name = |f: &str| format!("{id}/{f}.npy");
        files.push(out.tensor(&name("fixed"), &p.fixed.to_tensor(), sc())?);
        files.push(out.tensor(&name("moving"), &p.moving.to_tensor(), sc())?);
        files.push(out.tensor(&name("fixed_seg"), &p.fixed_seg.to_tensor(), sc())?);
        files.push(out.tensor(&name("moving_seg"), &p.moving_seg.to_tensor(), sc())?);
        files.push(out.tensor(&name("u_gt"), &p.u_gt.to_tensor(), sc())?);
        entries.push(CaseEntry {
            fixed: name("fixed").into(),
            moving: name("moving").into(),
            fixed_seg: name("fixed_seg").into(),
            moving_seg: name("moving_seg").into(),
            ground_truth: Some(name("u_gt").into()),
            fixed_feature_id: None,
            moving_feature_id: None,
            id,
        });
    }
    files.push(out.json(
        "cases.json",
        &CaseList {
            config: echo(cfg),
            cases: entries,
        },
    )?);
    Ok(files)
}

pub fn alpha_sweep_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let template = cfg.objective.unwrap_or_else(default_alpha_template);
    if template.intensity_metric.is_none() || template.feature_metric.is_none() {
        return Err(CliError::config(
            "objective",
            "alpha sweep needs both intensity_metric and feature_metric",
        ));
    }
    let opt = optimizer(cfg)?;
    let grid = cfg.alpha.grid.clone().unwrap_or_else(alpha_grid);
    cfg.objective = Some(template);
    cfg.optimizer = Some(opt);
    cfg.alpha.grid = Some(grid.clone());
    let cs = cases(cfg)?;
    let table = alpha_sweep(&cs, &template, &grid, &provider(cfg)?, &opt)?;
    table.write_csv(out.writer("alpha_sweep.csv")?)?;
    Ok(vec![
        out.file("alpha_sweep.csv")?,
        out.json("alpha_sweep.json", &json!({"config": echo(cfg), "rows": table.rows}))?,
    ])
}

fn default_methods(lambda: f64) -> Vec<(String, ObjectiveSpec)> {
    vec![
        ("baseline-mse".into(), ObjectiveSpec::baseline(Metric::Mse, lambda)),
        ("baseline-ncc".into(), ObjectiveSpec::baseline(Metric::Ncc, lambda)),
        ("features-l1".into(), ObjectiveSpec::feature_only(Metric::FeatL1, lambda)),
        ("features-cos".into(), ObjectiveSpec::feature_only(Metric::FeatCos, lambda)),
        ("combined-ncc-cos".into(), ObjectiveSpec::combined(Metric::Ncc, Metric::FeatCos, 0.3, lambda)),
    ]
}

pub fn benchmark_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let opt = optimizer(cfg)?;
    cfg.optimizer = Some(opt);
    let methods: Vec<(String, ObjectiveSpec)> = if cfg.methods.is_empty() {
        default_methods(cfg.objective.map_or(DEFAULT_LAMBDA, |o| o.lambda))
    } else {
        cfg.methods.iter().map(|m| (m.name.clone(), m.objective)).collect()
    };
    for (i, (_, spec)) in methods.iter().enumerate() {
        spec.validate()
            .map_err(|e| CliError::config(&format!("methods[{i}].objective"), e.to_string()))?;
    }
    let cs = cases(cfg)?;
    let needs_features = methods.iter().any(|(_, s)| s.uses_features());
    let provider = if needs_features { provider(cfg)? } else { FeatureProvider::None };
    let methods: Vec<BenchmarkMethod> = methods
        .into_iter()
        .map(|(name, spec)| BenchmarkMethod {
            name,
            spec,
            provider: provider.clone(),
        })
        .collect();
    let report = run_benchmark(&cs, &methods, &opt)?;
    report.write_csv(out.writer("benchmark.csv")?)?;
    let names: Vec<Value> = methods.iter().map(|m| json!({"name": m.name, "objective": m.spec})).collect();
    Ok(vec![
        out.file("benchmark.csv")?,
        out.json(
            "benchmark.json",
            &json!({"config": echo(cfg), "methods": names, "rows": report.rows}),
        )?,
    ])
}

pub fn pca_viz_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let features = if cfg.features.extractor == ExtractorKind::External {
        let set = feature_set(cfg)?;
        load_external(&set, require(&cfg.inputs.fixed_feature_id, "inputs.fixed_feature_id")?)?
    } else {
        builtin_extractor(cfg)?.extract(&image_or_phantom(cfg, 64)?)?
    };
    let k = features.channels().min(3);
    let pca = pca_project(&features, k)?;
    let (_, h, w) = pca.scores.shape();
    let planes: Vec<&[f64]> = (0..k).map(|i| pca.scores.channel(i)).collect();
    let ratios: Vec<f64> = (0..k).map(|i| pca.explained_ratio(i)).collect();
    Ok(vec![
        out.png("pca.png", &planes, h, w)?,
        out.json(
            "pca.json",
            &json!({
                "config": echo(cfg),
                "source": features.source_tag(),
                "feature_shape": features.shape(),
                "components": k,
                "explained_variance": pca.explained_variance,
                "explained_ratio": ratios,
                "total_variance": pca.total_variance,
            }),
        )?,
    ])
}

pub fn commutativity_cmd(cfg: &mut RunConfig, out: &OutDir) -> Out {
    let img = image_or_phantom(cfg, cfg.synthetic.size)?;
    let (h, w) = img.shape();
    let u = match &cfg.inputs.displacement {
        Some(p) => load_field(p)?,
        None if h == w => random_smooth_field(h, cfg.seed, cfg.synthetic.max_disp)
            .map_err(|e| CliError::config("synthetic.max_disp", e.to_string()))?,
        None => {
            return Err(CliError::config(
                "inputs.displacement",
                "a displacement is required for non-square images",
            ))
        }
    };
    let g = builtin_extractor(cfg)?;
    let gap = commutativity_gap(&img, &u, g.as_ref())?;
    let (c, hf, wf) = gap.gap.shape();
    let mean_abs_map: Vec<f64> = (0..hf * wf)
        .map(|i| (0..c).map(|ch| gap.gap.channel(ch)[i].abs()).sum::<f64>() / c as f64)
        .collect();
    let max_abs = gap.gap.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(vec![
        out.tensor("gap.npy", &gap.gap.to_tensor(), Some(spacing_sidecar(gap.gap.spacing())))?,
        out.png("gap.png", &[&mean_abs_map], hf, wf)?,
        out.json(
            "commutativity.json",
            &json!({
                "config": echo(cfg),
                "extractor": g.name(),
                "gap_shape": [c, hf, wf],
                "mean_abs": gap.mean_abs,
                "max_abs": max_abs,
            }),
        )?,
    ])
}
