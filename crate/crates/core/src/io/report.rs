//! Run reports and their on-disk layout.
//!
//! `write_run_report` creates `<dir>/<run_id>/` holding `masks.nii.gz`,
//! `per_slice.csv` and `report.txt`. Every file is a pure function of the
//! report: fixed key order, `{:.6}` floats, LF line endings, no timestamps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::case::CaseBundle;
use super::nifti::{write_nifti, NiftiError};
use crate::cascade::{CascadeConfig, CascadeResult, Direction, InitialSupportSpec, Method};
use crate::eval::{aggregate, dsc, DscStats, EvalError};
use crate::types::{Mask, Spacing, Volume};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Fixed 6-decimal rendering used in every report file.
pub fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Keeps CSV fields and directory names free of separators.
pub fn sanitize(field: &str) -> String {
    let s: String = field
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceScore {
    pub index: usize,
    pub dsc: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub case: String,
    pub region: String,
    pub method: Method,
    pub backend: String,
    pub init_start: usize,
    pub init_count: usize,
    pub config: CascadeConfig,
    pub spacing: Spacing,
    /// One mask per slice: ground truth on the initial block, predictions
    /// elsewhere.
    pub masks: Vec<Mask>,
    pub scores: Vec<SliceScore>,
    pub stats: Option<DscStats>,
}

fn mean_of(scores: &[SliceScore], direction: Direction) -> Option<f64> {
    let vals: Vec<f64> = scores
        .iter()
        .filter(|s| s.direction == direction)
        .map(|s| s.dsc)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

impl RunReport {
    pub fn build(
        bundle: &CaseBundle,
        initial: &InitialSupportSpec,
        config: &CascadeConfig,
        method: Method,
        backend: &str,
        result: &CascadeResult,
    ) -> Result<Self, ReportError> {
        let mut masks = Vec::with_capacity(bundle.len());
        let mut scores = Vec::new();
        for index in 1..=bundle.len() {
            let gt = bundle.label(index).expect("one label per slice");
            match result.masks.get(&index) {
                Some(pred) => {
                    scores.push(SliceScore {
                        index,
                        dsc: dsc(pred, gt)?,
                        direction: result.direction_of[&index],
                    });
                    masks.push(pred.clone());
                }
                None => masks.push(gt.clone()),
            }
        }
        let series: Vec<(usize, f64)> = scores.iter().map(|s| (s.index, s.dsc)).collect();
        let stats = if series.is_empty() {
            None
        } else {
            Some(aggregate(&series)?)
        };
        Ok(Self {
            case: bundle.id().to_string(),
            region: bundle.region.clone(),
            method,
            backend: backend.to_string(),
            init_start: initial.start(),
            init_count: initial.len(),
            config: config.clone(),
            spacing: bundle.image.spacing(),
            masks,
            scores,
            stats,
        })
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}_{}_{}_m{}_s{}",
            sanitize(&self.case),
            sanitize(&self.region),
            self.method,
            self.config.capacity,
            self.init_start
        )
    }

    pub fn mean_dsc(&self) -> Option<f64> {
        self.stats.as_ref().map(|s| s.mean)
    }

    pub fn forward_mean(&self) -> Option<f64> {
        mean_of(&self.scores, Direction::Forward)
    }

    pub fn backward_mean(&self) -> Option<f64> {
        mean_of(&self.scores, Direction::Backward)
    }

    pub fn dsc_series(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.dsc).collect()
    }

    pub const CSV_HEADER: &'static str = "case,region,method,m,seed_start,slice,dsc";

    pub fn csv_rows(&self) -> Vec<String> {
        let (case, region) = (sanitize(&self.case), sanitize(&self.region));
        self.scores
            .iter()
            .map(|s| {
                format!(
                    "{case},{region},{},{},{},{},{}",
                    self.method,
                    self.config.capacity,
                    self.init_start,
                    s.index,
                    fmt6(s.dsc)
                )
            })
            .collect()
    }

    pub fn per_slice_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    /// TOML-compatible summary of the run configuration and statistics.
    pub fn summary_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "id = \"{}\"", self.run_id());
        let _ = writeln!(s, "case = \"{}\"", sanitize(&self.case));
        let _ = writeln!(s, "region = \"{}\"", sanitize(&self.region));
        let _ = writeln!(s, "method = \"{}\"", self.method);
        let _ = writeln!(s, "backend = \"{}\"", sanitize(&self.backend));
        let _ = writeln!(s, "slices = {}", self.masks.len());
        let _ = writeln!(s, "init_start = {}", self.init_start);
        let _ = writeln!(s, "init_count = {}", self.init_count);
        let _ = writeln!(s);
        let _ = writeln!(s, "[config]");
        let _ = writeln!(s, "capacity = {}", c.capacity);
        let _ = writeln!(s, "prob_threshold = {}", fmt6(c.prob_threshold as f64));
        let _ = writeln!(s, "augment = {}", c.augment);
        let _ = writeln!(s, "pin_initial = {}", c.pin_initial);
        let _ = writeln!(s, "faithful_loops = {}", c.faithful_loops);
        let _ = writeln!(s);
        let _ = writeln!(s, "[stats]");
        let _ = writeln!(s, "predicted = {}", self.scores.len());
        if let Some(st) = &self.stats {
            let _ = writeln!(s, "mean_dsc = {}", fmt6(st.mean));
            let _ = writeln!(s, "std_dsc = {}", fmt6(st.std));
            let _ = writeln!(s, "min_dsc = {}", fmt6(st.min));
            let _ = writeln!(s, "max_dsc = {}", fmt6(st.max));
        }
        if let Some(m) = self.forward_mean() {
            let _ = writeln!(s, "forward_mean_dsc = {}", fmt6(m));
        }
        if let Some(m) = self.backward_mean() {
            let _ = writeln!(s, "backward_mean_dsc = {}", fmt6(m));
        }
        s
    }

    pub fn mask_volume(&self) -> Volume {
        Volume::from_masks(self.case.clone(), self.spacing, &self.masks)
            .expect("masks share dimensions")
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Writes the report under `dir/<run_id>/` and returns that directory.
pub fn write_run_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<PathBuf, ReportError> {
    let root = dir.as_ref().join(report.run_id());
    fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
    write_nifti(&report.mask_volume(), root.join("masks.nii.gz"))?;
    write_file(&root.join("per_slice.csv"), &report.per_slice_csv())?;
    write_file(&root.join("report.txt"), &report.summary_text())?;
    Ok(root)
}
