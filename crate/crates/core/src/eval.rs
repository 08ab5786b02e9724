//! Overlap metric, summary statistics and paired significance tests.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::io::CaseBundle;
use crate::types::{Mask, Volume};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("masks are {a:?} and {b:?}")]
    DimMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("every slice has an empty ground-truth mask")]
    AllEmpty,
    #[error("cannot summarize an empty series")]
    EmptySeries,
    #[error("paired samples have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} non-zero paired differences; need at least 2")]
    TooFewPairs(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn of(pred: &Mask, gt: &Mask) -> Result<Self, EvalError> {
        if pred.dims() != gt.dims() {
            return Err(EvalError::DimMismatch {
                a: pred.dims(),
                b: gt.dims(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// `2TP / (2TP + FP + FN)`; two empty masks score 1.0.
pub fn dsc(pred: &Mask, gt: &Mask) -> Result<f64, EvalError> {
    Ok(Confusion::of(pred, gt)?.dsc())
}

/// Removes slices whose ground truth is empty and renumbers the rest
/// `1..=n'`; `original_indices` keeps the source positions.
pub fn drop_empty_slices(bundle: &CaseBundle) -> Result<CaseBundle, EvalError> {
    let keep: Vec<usize> = (0..bundle.len())
        .filter(|&i| !bundle.labels[i].is_empty())
        .collect();
    if keep.is_empty() {
        return Err(EvalError::AllEmpty);
    }
    let slices = keep
        .iter()
        .map(|&i| bundle.image.slices()[i].clone())
        .collect();
    let image = Volume::from_planes(bundle.image.id(), bundle.image.spacing(), slices)
        .expect("kept slices share dimensions");
    Ok(CaseBundle {
        image,
        labels: keep.iter().map(|&i| bundle.labels[i].clone()).collect(),
        region: bundle.region.clone(),
        original_indices: keep.iter().map(|&i| bundle.original_indices[i]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DscStats {
    pub per_slice: Vec<(usize, f64)>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 when n = 1.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Single-pass (Welford) mean and sample standard deviation.
pub fn aggregate(per_slice: &[(usize, f64)]) -> Result<DscStats, EvalError> {
    if per_slice.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &(_, x)) in per_slice.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        min = min.min(x);
        max = max.max(x);
    }
    let n = per_slice.len();
    let std = if n > 1 {
        (m2 / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DscStats {
        per_slice: per_slice.to_vec(),
        mean: mean.clamp(min, max),
        std,
        min,
        max,
        n,
    })
}

pub fn aggregate_values(values: &[f64]) -> Result<DscStats, EvalError> {
    let indexed: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (i + 1, v))
        .collect();
    aggregate(&indexed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestMethod {
    /// Wilcoxon signed-rank; exact for up to 20 non-zero differences,
    /// normal approximation above.
    #[default]
    Wilcoxon,
    WilcoxonExact,
    WilcoxonNormal,
    PairedT,
}

pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: String,
}

pub fn paired_test(a: &[f64], b: &[f64]) -> Result<PairedTestResult, EvalError> {
    paired_test_with(a, b, TestMethod::Wilcoxon)
}

pub fn paired_test_with(
    a: &[f64],
    b: &[f64],
    method: TestMethod,
) -> Result<PairedTestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    match method {
        TestMethod::PairedT => paired_t(&diffs),
        TestMethod::Wilcoxon => {
            let n = diffs.iter().filter(|&&d| d != 0.0).count();
            if n <= EXACT_LIMIT {
                wilcoxon(&diffs, true)
            } else {
                wilcoxon(&diffs, false)
            }
        }
        TestMethod::WilcoxonExact => wilcoxon(&diffs, true),
        TestMethod::WilcoxonNormal => wilcoxon(&diffs, false),
    }
}

/// Mid-ranks of `values` (1-based), plus the size of every tie group.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

fn wilcoxon(diffs: &[f64], exact: bool) -> Result<PairedTestResult, EvalError> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&magnitudes);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    let (p_value, method) = if exact {
        // Mid-ranks are multiples of 1/2: doubled ranks are integers and
        // the null distribution of 2*W+ is a subset-sum count.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max_sum + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let total_count = 2f64.powi(n as i32);
        let observed = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=observed].iter().sum();
        let upper: f64 = counts[observed..].iter().sum();
        let p = (2.0 * lower.min(upper) / total_count).min(1.0);
        (p, "wilcoxon-signed-rank-exact")
    } else {
        let mean = total / 2.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = (n * (n + 1) * (2 * n + 1)) as f64 / 24.0 - tie_term;
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            (2.0 * normal.sf(z)).min(1.0)
        };
        (p, "wilcoxon-signed-rank-normal")
    };
    Ok(PairedTestResult {
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        n_effective: n,
        method: method.to_string(),
    })
}

fn paired_t(diffs: &[f64]) -> Result<PairedTestResult, EvalError> {
    let n = diffs.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let stats = aggregate_values(diffs)?;
    let (statistic, p_value) = if stats.std == 0.0 {
        if stats.mean == 0.0 {
            return Err(EvalError::TooFewPairs(0));
        }
        (f64::INFINITY.copysign(stats.mean), 0.0)
    } else {
        let t = stats.mean / (stats.std / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof >= 1");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(PairedTestResult {
        statistic,
        p_value,
        n_effective: n,
        method: "paired-t".to_string(),
    })
}
