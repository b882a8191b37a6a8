//! Registration experiments over a set of cases: benchmark tables, the
//! α-sweep and extractor/upscaling ablations.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synthetic::{endpoint_error, SyntheticPair};
use super::sweep::csv_err;
use crate::data::{DisplacementField, Image2D, SegmentationMap};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, CLASSES};
use crate::features::{load_external, ExternalFeatureSet, FeatureExtractor, UpscaledExtractor};
use crate::objective::{FeatureSource, ObjectiveSpec, Variant};
use crate::optimizer::{register, OptimizerConfig, RegistrationResult};
use crate::resample::warp_segmentation;

/// One fixed/moving pair with labels and, for synthetic data, the true field.
#[derive(Debug, Clone)]
pub struct RegistrationCase {
    pub id: String,
    pub fixed: Image2D,
    pub moving: Image2D,
    pub fixed_seg: SegmentationMap,
    pub moving_seg: SegmentationMap,
    pub ground_truth: Option<DisplacementField>,
    /// Entry ids in an external feature set.
    pub fixed_feature_id: Option<String>,
    pub moving_feature_id: Option<String>,
}

impl RegistrationCase {
    pub fn from_synthetic(p: SyntheticPair) -> Self {
        Self {
            id: format!("synthetic-{}", p.seed),
            fixed: p.fixed,
            moving: p.moving,
            fixed_seg: p.fixed_seg,
            moving_seg: p.moving_seg,
            ground_truth: Some(p.u_gt),
            fixed_feature_id: None,
            moving_feature_id: None,
        }
    }

    /// Foreground of the fixed segmentation.
    pub fn foreground(&self) -> Vec<bool> {
        self.fixed_seg.data().iter().map(|&l| l != 0).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub enum FeatureProvider {
    #[default]
    None,
    Builtin(Arc<dyn FeatureExtractor>),
    External(Arc<ExternalFeatureSet>),
}

impl FeatureProvider {
    pub fn source_for(&self, case: &RegistrationCase) -> Result<Option<FeatureSource>> {
        Ok(match self {
            FeatureProvider::None => None,
            FeatureProvider::Builtin(g) => Some(FeatureSource::Extractor(g.clone())),
            FeatureProvider::External(set) => {
                let id = |v: &Option<String>, which: &str| {
                    v.clone().ok_or_else(|| {
                        Error::FeatureSet(format!("case '{}' has no {which} feature id", case.id))
                    })
                };
                Some(FeatureSource::Precomputed {
                    fixed: load_external(set, &id(&case.fixed_feature_id, "fixed")?)?,
                    moving: load_external(set, &id(&case.moving_feature_id, "moving")?)?,
                })
            }
        })
    }

    pub fn describe(&self) -> String {
        match self {
            FeatureProvider::None => "none".into(),
            FeatureProvider::Builtin(g) => g.name(),
            FeatureProvider::External(s) => format!("external:{}", s.extractor),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub id: String,
    pub result: RegistrationResult,
    pub warped_seg: SegmentationMap,
    pub report: EvalReport,
    /// Foreground endpoint error in pixels, when the true field is known.
    pub epe: Option<f64>,
}

/// Scores the moving segmentation warped by `u` against the fixed one.
pub fn score_case(case: &RegistrationCase, u: &DisplacementField) -> Result<(SegmentationMap, EvalReport, Option<f64>)> {
    let warped = warp_segmentation(&case.moving_seg, u)?;
    let report = evaluate(&warped, &case.fixed_seg, u, case.fixed.spacing())?;
    let epe = match &case.ground_truth {
        Some(gt) => Some(endpoint_error(u, gt, &case.foreground())?),
        None => None,
    };
    Ok((warped, report, epe))
}

pub fn run_case(
    case: &RegistrationCase,
    spec: &ObjectiveSpec,
    provider: &FeatureProvider,
    opt: &OptimizerConfig,
) -> Result<CaseOutcome> {
    let source = if spec.uses_features() {
        provider.source_for(case)?
    } else {
        None
    };
    let result = register(&case.fixed, &case.moving, spec, source, opt)?;
    let (warped_seg, report, epe) = score_case(case, &result.displacement)?;
    Ok(CaseOutcome {
        id: case.id.clone(),
        result,
        warped_seg,
        report,
        epe,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl MeanSd {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { mean, sd })
    }
}

fn cells(v: Option<MeanSd>) -> [String; 2] {
    match v {
        Some(m) => [m.mean.to_string(), m.sd.to_string()],
        None => [String::new(), String::new()],
    }
}

/// Aggregate of one method over all cases: mean and SD per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub n: usize,
    pub class_dice: Vec<(String, Option<MeanSd>)>,
    pub dice: Option<MeanSd>,
    pub hd95: Option<MeanSd>,
    pub sdlog_jdet: Option<MeanSd>,
    pub pct_neg_jdet: Option<MeanSd>,
    pub epe: Option<MeanSd>,
    /// `(case id, error)` for cases that failed.
    pub failures: Vec<(String, String)>,
}

impl SummaryRow {
    pub fn from_outcomes(name: &str, reports: &[(EvalReport, Option<f64>)], failures: Vec<(String, String)>) -> Self {
        let class_dice = CLASSES
            .iter()
            .map(|(l, n)| {
                let v: Vec<f64> = reports
                    .iter()
                    .filter_map(|(r, _)| r.classes.iter().find(|c| c.label == *l).map(|c| c.dice))
                    .collect();
                (n.to_string(), MeanSd::of(&v))
            })
            .collect();
        let collect = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
            MeanSd::of(&reports.iter().filter_map(|(r, _)| f(r)).collect::<Vec<_>>())
        };
        let epes: Vec<f64> = reports.iter().filter_map(|(_, e)| *e).collect();
        Self {
            name: name.to_string(),
            n: reports.len(),
            class_dice,
            dice: collect(&|r| Some(r.mean_dice)),
            hd95: collect(&|r| r.mean_hd95),
            sdlog_jdet: collect(&|r| Some(r.sdlog_jdet)),
            pct_neg_jdet: collect(&|r| Some(r.pct_neg_jdet)),
            epe: MeanSd::of(&epes),
            failures,
        }
    }

    const HEADER: [&'static str; 19] = [
        "name", "n", "failures", "dice_lv", "dice_lv_sd", "dice_myo", "dice_myo_sd", "dice_rv", "dice_rv_sd",
        "dice", "dice_sd", "hd95_mm", "hd95_mm_sd", "sdlogj", "sdlogj_sd", "pct_neg_jdet", "pct_neg_jdet_sd",
        "epe_px", "epe_px_sd",
    ];

    fn record(&self) -> Vec<String> {
        let mut r = vec![self.name.clone(), self.n.to_string(), self.failures.len().to_string()];
        for (_, v) in &self.class_dice {
            r.extend(cells(*v));
        }
        for v in [self.dice, self.hd95, self.sdlog_jdet, self.pct_neg_jdet, self.epe] {
            r.extend(cells(v));
        }
        r
    }
}

fn write_rows<W: Write>(out: W, lead: Option<&str>, rows: &[(String, &SummaryRow)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = Vec::new();
    if let Some(l) = lead {
        header.push(l);
    }
    header.extend(SummaryRow::HEADER);
    wtr.write_record(&header).map_err(csv_err)?;
    for (key, row) in rows {
        let mut rec = Vec::new();
        if lead.is_some() {
            rec.push(key.clone());
        }
        rec.extend(row.record());
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

/// Runs `spec` on every case in parallel; failures are kept per case.
pub fn run_all(
    cases: &[RegistrationCase],
    spec: &ObjectiveSpec,
    provider: &FeatureProvider,
    opt: &OptimizerConfig,
) -> Vec<(String, Result<CaseOutcome>)> {
    cases
        .par_iter()
        .map(|c| (c.id.clone(), run_case(c, spec, provider, opt)))
        .collect()
}

fn summarize(name: &str, runs: &[(String, Result<CaseOutcome>)]) -> SummaryRow {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in runs {
        match r {
            Ok(o) => reports.push((o.report.clone(), o.epe)),
            Err(e) => failures.push((id.clone(), e.to_string())),
        }
    }
    SummaryRow::from_outcomes(name, &reports, failures)
}

/// A named method for [`run_benchmark`].
#[derive(Debug, Clone)]
pub struct BenchmarkMethod {
    pub name: String,
    pub spec: ObjectiveSpec,
    pub provider: FeatureProvider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// The first row is `initial`: the identity transform.
    pub rows: Vec<SummaryRow>,
}

impl BenchmarkReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = self.rows.iter().map(|r| (String::new(), r)).collect();
        write_rows(out, None, &rows)
    }
}

pub fn run_benchmark(
    cases: &[RegistrationCase],
    methods: &[BenchmarkMethod],
    opt: &OptimizerConfig,
) -> Result<BenchmarkReport> {
    if cases.is_empty() {
        return Err(Error::invalid("benchmark needs at least one case"));
    }
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for c in cases {
        let (h, w) = c.fixed.shape();
        match score_case(c, &DisplacementField::zeros(h, w)) {
            Ok((_, r, e)) => reports.push((r, e)),
            Err(e) => failures.push((c.id.clone(), e.to_string())),
        }
    }
    let mut rows = vec![SummaryRow::from_outcomes("initial", &reports, failures)];
    for m in methods {
        rows.push(summarize(&m.name, &run_all(cases, &m.spec, &m.provider, opt)));
    }
    Ok(BenchmarkReport { rows })
}

/// The α grid `0.0, 0.1, ..., 1.0`.
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepTable {
    pub rows: Vec<(f64, SummaryRow)>,
}

impl AlphaSweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = self.rows.iter().map(|(a, r)| (a.to_string(), r)).collect();
        write_rows(out, Some("alpha"), &rows)
    }
}

fn same_run(a: &RegistrationResult, b: &RegistrationResult) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let traj = |r: &RegistrationResult| {
        r.trajectory
            .iter()
            .map(|t| {
                (
                    t.total.to_bits(),
                    t.terms.intensity.map(f64::to_bits),
                    t.terms.feature.map(f64::to_bits),
                    t.terms.regularizer.to_bits(),
                )
            })
            .collect::<Vec<_>>()
    };
    bits(a.lattice.params()) == bits(b.lattice.params()) && traj(a) == traj(b)
}

/// Checks that `combined` at an endpoint α reproduced `pure` bit for bit.
pub fn check_endpoint(combined: &RegistrationResult, pure: &RegistrationResult, what: &str) -> Result<()> {
    if same_run(combined, pure) {
        Ok(())
    } else {
        Err(Error::EndpointMismatch(what.to_string()))
    }
}

/// Runs the combined objective over `alphas` for every case. Wherever the
/// grid contains 0 or 1, the result is checked bitwise against a pure
/// baseline or feature-only run.
pub fn alpha_sweep(
    cases: &[RegistrationCase],
    template: &ObjectiveSpec,
    alphas: &[f64],
    provider: &FeatureProvider,
    opt: &OptimizerConfig,
) -> Result<AlphaSweepTable> {
    if template.intensity_metric.is_none() || template.feature_metric.is_none() {
        return Err(Error::InvalidObjective(
            "alpha sweep needs both intensity_metric and feature_metric".into(),
        ));
    }
    let spec_at = |alpha: f64| ObjectiveSpec {
        variant: Variant::Combined,
        alpha,
        ..*template
    };
    let baseline = ObjectiveSpec {
        variant: Variant::Baseline,
        ..*template
    };
    let feature_only = ObjectiveSpec {
        variant: Variant::FeatureOnly,
        ..*template
    };

    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let spec = spec_at(alpha);
        spec.validate()?;
        let runs = run_all(cases, &spec, provider, opt);
        let pure = if alpha == 0.0 {
            Some((baseline, "alpha = 0 vs baseline"))
        } else if alpha == 1.0 {
            Some((feature_only, "alpha = 1 vs feature-only"))
        } else {
            None
        };
        if let Some((pure_spec, what)) = pure {
            let reference = run_all(cases, &pure_spec, provider, opt);
            for ((id, a), (_, b)) in runs.iter().zip(&reference) {
                if let (Ok(a), Ok(b)) = (a, b) {
                    check_endpoint(&a.result, &b.result, &format!("{what} on {id}"))?;
                } else if a.is_ok() != b.is_ok() {
                    return Err(Error::EndpointMismatch(format!("{what} on {id}: only one run failed")));
                }
            }
        }
        rows.push((alpha, summarize(&format!("alpha={alpha}"), &runs)));
    }
    Ok(AlphaSweepTable { rows })
}

/// One arm of an extractor comparison.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub label: String,
    pub extractor: Arc<dyn FeatureExtractor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<SummaryRow>,
}

impl AblationTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = self.rows.iter().map(|r| (String::new(), r)).collect();
        write_rows(out, None, &rows)
    }
}

/// Same objective, different extractors.
pub fn compare_extractors(
    cases: &[RegistrationCase],
    spec: &ObjectiveSpec,
    arms: &[AblationArm],
    opt: &OptimizerConfig,
) -> Result<AblationTable> {
    if !spec.uses_features() {
        return Err(Error::InvalidObjective("extractor comparison needs a feature term".into()));
    }
    let rows = arms
        .iter()
        .map(|arm| {
            let provider = FeatureProvider::Builtin(arm.extractor.clone());
            summarize(&arm.label, &run_all(cases, spec, &provider, opt))
        })
        .collect();
    Ok(AblationTable { rows })
}

/// Upsamples images by each factor before feature extraction.
pub fn upscale_ablation(
    cases: &[RegistrationCase],
    spec: &ObjectiveSpec,
    extractor: Arc<dyn FeatureExtractor>,
    factors: &[f64],
    opt: &OptimizerConfig,
) -> Result<AblationTable> {
    let arms = factors
        .iter()
        .map(|&f| {
            Ok(AblationArm {
                label: format!("upscale={f}"),
                extractor: Arc::new(UpscaledExtractor::new(extractor.clone(), f)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compare_extractors(cases, spec, &arms, opt)
}
