//! Evaluation: per-frame MAE/RMSE, least-squares affine lifting of
//! affine-invariant predictions, and average-rank aggregation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{is_valid_depth, DepthMap};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::sparse::SparseMeasurement;

/// Metrics for one frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub mae: f64,
    pub rmse: f64,
    pub n_gt: usize,
}

/// MAE and RMSE over pixels valid in both maps.
pub fn frame_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<FrameEval> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::invalid(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        if is_valid_depth(p) && is_valid_depth(g) {
            let e = p - g;
            abs += e.abs();
            sq += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("prediction and ground truth share no valid pixel"));
    }
    Ok(FrameEval {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        n_gt: n,
    })
}

/// Domain in which an affine-invariant prediction is aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDomain {
    Metric,
    /// Prediction is affine in inverse depth; targets are `1 / depth`.
    #[default]
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub scale: f64,
    pub shift: f64,
    /// RMS of `scale·p + shift − t` in the fit domain.
    pub residual: f64,
    pub n_points: usize,
}

impl AffineFit {
    pub fn apply(&self, p: f64) -> f64 {
        self.scale * p + self.shift
    }
}

/// Ordinary least squares `t ≈ a·p + b` via the centered normal equations.
pub fn fit_affine(pairs: &[(f64, f64)]) -> Result<AffineFit> {
    if pairs.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 usable measurements, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let p_mean = pairs.iter().map(|x| x.0).sum::<f64>() / n;
    let t_mean = pairs.iter().map(|x| x.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(p, t) in pairs {
        sxx += (p - p_mean) * (p - p_mean);
        sxy += (p - p_mean) * (t - t_mean);
    }
    if pairs.iter().all(|x| x.0 == pairs[0].0) || !(sxx > 0.0) {
        return Err(Error::Fit("all predictions at the measurements are equal".into()));
    }
    let scale = sxy / sxx;
    let shift = t_mean - scale * p_mean;
    let residual = (pairs
        .iter()
        .map(|&(p, t)| (scale * p + shift - t).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(scale.is_finite() && shift.is_finite()) {
        return Err(Error::Fit("non-finite solution".into()));
    }
    Ok(AffineFit {
        scale,
        shift,
        residual,
        n_points: pairs.len(),
    })
}

/// `(prediction, target)` pairs in the fit domain. Non-finite prediction
/// pixels are unusable.
fn fit_pairs(
    pred: &Raster<f64>,
    measurements: &[SparseMeasurement],
    domain: FitDomain,
    out: &mut Vec<(f64, f64)>,
) {
    for m in measurements {
        if m.u >= pred.width || m.v >= pred.height || !(m.depth > 0.0) {
            continue;
        }
        let p = *pred.get(m.u, m.v);
        if !p.is_finite() {
            continue;
        }
        let t = match domain {
            FitDomain::Metric => m.depth,
            FitDomain::Inverse => 1.0 / m.depth,
        };
        out.push((p, t));
    }
}

/// Fits scale and shift mapping an affine-invariant prediction onto sparse metric measurements.
pub fn ls_affine_fit(
    pred: &Raster<f64>,
    measurements: &[SparseMeasurement],
    domain: FitDomain,
) -> Result<AffineFit> {
    let mut pairs = Vec::with_capacity(measurements.len());
    fit_pairs(pred, measurements, domain, &mut pairs);
    fit_affine(&pairs)
}

/// One fit over the measurements of several frames sharing an affine map.
pub fn ls_affine_fit_pooled(
    frames: &[(&Raster<f64>, &[SparseMeasurement])],
    domain: FitDomain,
) -> Result<AffineFit> {
    let mut pairs = Vec::new();
    for (pred, ms) in frames {
        fit_pairs(pred, ms, domain, &mut pairs);
    }
    fit_affine(&pairs)
}

/// Applies a fit to a whole prediction, yielding metric depth. Pixels mapping
/// to a nonpositive depth become invalid.
pub fn lift(pred: &Raster<f64>, fit: &AffineFit, domain: FitDomain) -> DepthMap {
    let values = pred
        .data
        .iter()
        .map(|&p| {
            if !p.is_finite() {
                return 0.0;
            }
            let y = fit.apply(p);
            let d = match domain {
                FitDomain::Metric => y,
                FitDomain::Inverse => 1.0 / y,
            };
            if is_valid_depth(d) {
                d
            } else {
                0.0
            }
        })
        .collect();
    DepthMap {
        width: pred.width,
        height: pred.height,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub mae: f64,
    pub rmse: f64,
    pub n_gt: usize,
}

/// Dataset-level evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub n_frames: usize,
    pub mae_mean: f64,
    pub rmse_mean: f64,
    pub frames: Vec<FrameRecord>,
}

/// Evaluates every `(prediction, ground truth)` pair and averages the
/// per-frame metrics with equal weight. Ground truth beyond `d_max` is ignored.
pub fn dataset_eval(
    dataset: &str,
    frames: &[(DepthMap, DepthMap)],
    d_max: Option<f64>,
) -> Result<DatasetSummary> {
    if frames.is_empty() {
        return Err(Error::invalid("dataset has no frames"));
    }
    let records = frames
        .par_iter()
        .enumerate()
        .map(|(index, (pred, gt))| {
            let gt = match d_max {
                Some(d) => gt.clipped(d),
                None => gt.clone(),
            };
            frame_metrics(pred, &gt)
                .map(|e| FrameRecord {
                    index,
                    mae: e.mae,
                    rmse: e.rmse,
                    n_gt: e.n_gt,
                })
                .map_err(|e| Error::Frame {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = records.len() as f64;
    Ok(DatasetSummary {
        dataset: dataset.to_owned(),
        n_frames: records.len(),
        mae_mean: records.iter().map(|r| r.mae).sum::<f64>() / n,
        rmse_mean: records.iter().map(|r| r.rmse).sum::<f64>() / n,
        frames: records,
    })
}

/// Methods ranked per column, best last.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub columns: Vec<String>,
    /// `values[m][c]`.
    pub values: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<f64>>,
    pub avg_rank: Vec<f64>,
}

/// Fractional ranks of one column: rank 1 is the best, exact ties share the
/// mean of the positions they occupy.
pub fn rank_column(values: &[f64], lower_is_better: bool) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if lower_is_better {
            o
        } else {
            o.reverse()
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean(i+1..=j+1)
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn rank_aggregate(
    methods: Vec<String>,
    columns: Vec<String>,
    values: Vec<Vec<f64>>,
    lower_is_better: bool,
) -> Result<RankTable> {
    if methods.is_empty() || columns.is_empty() {
        return Err(Error::invalid("rank table needs at least one method and one column"));
    }
    if values.len() != methods.len() || values.iter().any(|r| r.len() != columns.len()) {
        return Err(Error::invalid("value matrix does not match methods × columns"));
    }
    if values.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::invalid("value matrix contains NaN"));
    }
    let (n_m, n_c) = (methods.len(), columns.len());
    let mut ranks = vec![vec![0.0; n_c]; n_m];
    for c in 0..n_c {
        let col: Vec<f64> = values.iter().map(|r| r[c]).collect();
        for (m, r) in rank_column(&col, lower_is_better).into_iter().enumerate() {
            ranks[m][c] = r;
        }
    }
    let avg: Vec<f64> = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / n_c as f64)
        .collect();
    // worst first, best last; equal averages keep input order
    let mut order: Vec<usize> = (0..n_m).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]));
    Ok(RankTable {
        methods: order.iter().map(|&i| methods[i].clone()).collect(),
        columns,
        values: order.iter().map(|&i| values[i].clone()).collect(),
        ranks: order.iter().map(|&i| ranks[i].clone()).collect(),
        avg_rank: order.iter().map(|&i| avg[i]).collect(),
    })
}

/// `(methods, columns, values[method][column])` as read from a CSV.
pub type ValueTable = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

/// Parses `method,<column>,...` CSV into names and a value matrix.
pub fn parse_values_csv(text: &str) -> std::result::Result<ValueTable, (usize, String)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or((1, "empty file".to_string()))?;
    let columns: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_owned()).collect();
    let mut methods = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() + 1 {
            return Err((i + 1, format!("expected {} cells, found {}", columns.len() + 1, cells.len())));
        }
        methods.push(cells[0].to_owned());
        values.push(
            cells[1..]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|e| (i + 1, format!("bad value `{c}`: {e}"))))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        );
    }
    Ok((methods, columns, values))
}

pub fn read_values_csv(path: &Path) -> Result<ValueTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_values_csv(&text).map_err(|(line, message)| Error::Parse {
        path: path.into(),
        line,
        message,
    })
}

impl RankTable {
    /// CSV with the input values and a final `avg_rank` column (2 decimals).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for c in &self.columns {
            write!(s, ",{c}").unwrap();
        }
        s.push_str(",avg_rank\n");
        for (m, name) in self.methods.iter().enumerate() {
            s.push_str(name);
            for v in &self.values[m] {
                write!(s, ",{v}").unwrap();
            }
            writeln!(s, ",{:.2}", self.avg_rank[m]).unwrap();
        }
        s
    }
}
