//! Registration quality: Dice, HD95 (mm), fraction of folded pixels and the
//! spread of the log Jacobian determinant.

use serde::{Deserialize, Serialize};

use crate::bspline::jacobian_determinant;
use crate::data::{DisplacementField, SegmentationMap};
use crate::error::{Error, Result};

/// Determinants at or below this are left out of sdlogJ.
pub const LOG_JDET_EPS: f64 = 1e-6;

/// Default foreground classes, in label order.
pub const CLASSES: [(u32, &str); 3] = [(1, "LV"), (2, "Myo"), (3, "RV")];

fn check_shapes(a: &SegmentationMap, b: &SegmentationMap) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "segmentations are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Both masks empty counts as perfect agreement, exactly one empty as none.
pub fn dice(a: &SegmentationMap, b: &SegmentationMap, label: u32) -> Result<f64> {
    check_shapes(a, b)?;
    if !a.label_set().contains(&label) && !b.label_set().contains(&label) {
        return Err(Error::invalid(format!("label {label} is in neither label set")));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok(match (na, nb) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * both as f64 / (na + nb) as f64,
    })
}

/// Mask pixels with at least one 4-neighbour outside the mask. Pixels beyond
/// the image edge count as outside.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let at = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize]
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            if !(at(yi - 1, xi) && at(yi + 1, xi) && at(yi, xi - 1) && at(yi, xi + 1)) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Nearest-rank percentile of an ascending list: the value at rank
/// `ceil(p/100 * n)`.
fn nearest_rank(sorted: &[f64], p: usize) -> f64 {
    let rank = (p * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Squared physical distance from every point of `from` to its nearest point
/// in `to`, ascending.
fn directed_sq(from: &[(usize, usize)], to: &[(usize, usize)], w: usize, spacing: [f64; 2]) -> Vec<f64> {
    // rows of `to` per column, sorted, so each column contributes its nearest row
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); w];
    for &(y, x) in to {
        cols[x].push(y);
    }
    let occupied: Vec<usize> = (0..w).filter(|&x| !cols[x].is_empty()).collect();
    let [sy, sx] = spacing;
    let mut d: Vec<f64> = from
        .iter()
        .map(|&(y, x)| {
            occupied
                .iter()
                .map(|&c| {
                    let rows = &cols[c];
                    let k = rows.partition_point(|&r| r < y);
                    let mut dy = usize::MAX;
                    if k < rows.len() {
                        dy = rows[k] - y;
                    }
                    if k > 0 {
                        dy = dy.min(y - rows[k - 1]);
                    }
                    let ry = dy as f64 * sy;
                    let rx = x.abs_diff(c) as f64 * sx;
                    ry * ry + rx * rx
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Symmetric 95th-percentile boundary distance in mm.
pub fn hd95(a: &SegmentationMap, b: &SegmentationMap, label: u32, spacing: [f64; 2]) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.shape();
    let ba = boundary(&a.mask(label), h, w);
    let bb = boundary(&b.mask(label), h, w);
    let which = match (ba.is_empty(), bb.is_empty()) {
        (true, true) => Some("both masks are empty"),
        (true, false) => Some("first mask is empty"),
        (false, true) => Some("second mask is empty"),
        _ => None,
    };
    if let Some(reason) = which {
        return Err(Error::UndefinedHd95 {
            label,
            reason: reason.into(),
        });
    }
    let ab = nearest_rank(&directed_sq(&ba, &bb, w, spacing), 95);
    let ba_ = nearest_rank(&directed_sq(&bb, &ba, w, spacing), 95);
    Ok(ab.max(ba_).sqrt())
}

/// Fraction of pixels where `det(I + grad u) < 0`.
pub fn pct_neg_jdet(u: &DisplacementField) -> f64 {
    let j = jacobian_determinant(u);
    let neg = j.data().iter().filter(|&&d| d < 0.0).count();
    neg as f64 / j.data().len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdLogJdet {
    pub value: f64,
    /// Pixels with determinant at or below [`LOG_JDET_EPS`].
    pub excluded: usize,
}

/// Population standard deviation of `log det(I + grad u)`.
pub fn sdlog_jdet(u: &DisplacementField) -> Result<SdLogJdet> {
    let j = jacobian_determinant(u);
    let logs: Vec<f64> = j
        .data()
        .iter()
        .filter(|&&d| d > LOG_JDET_EPS)
        .map(|d| d.ln())
        .collect();
    let excluded = j.data().len() - logs.len();
    if logs.is_empty() {
        return Err(Error::Degenerate(
            "every Jacobian determinant is at or below 1e-6".into(),
        ));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    Ok(SdLogJdet {
        value: var.sqrt(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: u32,
    pub name: String,
    pub dice: f64,
    /// `None` when a mask is empty and HD95 is undefined.
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassScore>,
    pub mean_dice: f64,
    /// Mean over classes with a defined HD95.
    pub mean_hd95: Option<f64>,
    pub pct_neg_jdet: f64,
    pub sdlog_jdet: f64,
    pub sdlog_excluded: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "dice_lv,dice_myo,dice_rv,mean_dice,hd95_lv,hd95_myo,hd95_rv,mean_hd95,pct_neg_jdet,sdlog_jdet";

    /// One CSV row matching [`Self::CSV_HEADER`] for the default classes;
    /// undefined values are left empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let find = |l: u32| self.classes.iter().find(|c| c.label == l);
        let mut cells: Vec<String> = CLASSES
            .iter()
            .map(|(l, _)| opt(find(*l).map(|c| c.dice)))
            .collect();
        cells.push(self.mean_dice.to_string());
        cells.extend(CLASSES.iter().map(|(l, _)| opt(find(*l).and_then(|c| c.hd95))));
        cells.push(opt(self.mean_hd95));
        cells.push(self.pct_neg_jdet.to_string());
        cells.push(self.sdlog_jdet.to_string());
        cells.join(",")
    }
}

/// Scores `warped` (the moving segmentation after registration) against
/// `fixed` for the default classes, plus folding statistics of `u`.
pub fn evaluate(
    warped: &SegmentationMap,
    fixed: &SegmentationMap,
    u: &DisplacementField,
    spacing: [f64; 2],
) -> Result<EvalReport> {
    let mut classes = Vec::new();
    for (label, name) in CLASSES {
        if !warped.label_set().contains(&label) && !fixed.label_set().contains(&label) {
            continue;
        }
        let hd = match hd95(warped, fixed, label, spacing) {
            Ok(v) => Some(v),
            Err(Error::UndefinedHd95 { .. }) => None,
            Err(e) => return Err(e),
        };
        classes.push(ClassScore {
            label,
            name: name.to_string(),
            dice: dice(warped, fixed, label)?,
            hd95: hd,
        });
    }
    if classes.is_empty() {
        return Err(Error::invalid("no foreground classes in either segmentation"));
    }
    let mean_dice = classes.iter().map(|c| c.dice).sum::<f64>() / classes.len() as f64;
    let defined: Vec<f64> = classes.iter().filter_map(|c| c.hd95).collect();
    let mean_hd95 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let sd = sdlog_jdet(u)?;
    Ok(EvalReport {
        classes,
        mean_dice,
        mean_hd95,
        pct_neg_jdet: pct_neg_jdet(u),
        sdlog_jdet: sd.value,
        sdlog_excluded: sd.excluded,
    })
}
