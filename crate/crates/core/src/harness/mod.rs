//! Experiment drivers: baseline-vs-cascade comparison, support-size sweep
//! and initial-position sweep, plus synthetic phantoms.
//!
//! Every driver creates one backend per cell through a factory.
//! Output order never depends on scheduling.

mod phantom;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use phantom::{gen_phantom, DriftProfile, PhantomConfig, PhantomShape, Preset};

use crate::cascade::{self, CascadeConfig, CascadeError, InitialSupportSpec, Method};
use crate::eval::{aggregate_values, paired_test_with, EvalError, PairedTestResult, TestMethod};
use crate::io::{
    fmt6, io_err, sanitize, write_file, write_run_report, CaseBundle, ReportError, RunReport,
};
use crate::par::Exec;
use crate::segmenter::{BackendError, SegmenterBackend};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
    #[error("phantom shape leaves the image on slice {slice}")]
    ShapeOutOfBounds { slice: usize },
    #[error("sweep has no cells")]
    EmptySweep,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn run_cell<B, F>(
    bundle: &CaseBundle,
    initial: &InitialSupportSpec,
    method: Method,
    make_backend: &F,
    cfg: &CascadeConfig,
) -> Result<RunReport, HarnessError>
where
    B: SegmenterBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let mut backend =
        make_backend().map_err(|source| CascadeError::BackendFailure { index: 0, source })?;
    let result = cascade::run(method, bundle, initial, &mut backend, cfg)?;
    Ok(RunReport::build(
        bundle,
        initial,
        cfg,
        method,
        backend.id(),
        &result,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompareOutcome {
    Tested(PairedTestResult),
    /// Every paired difference is zero.
    Identical,
    /// Exactly one non-zero difference.
    TooFewPairs(usize),
    /// The initial block covers the whole volume.
    NoQuerySlices,
}

impl CompareOutcome {
    pub fn describe(&self) -> String {
        match self {
            CompareOutcome::Tested(t) => format!(
                "{}: statistic = {}, p = {}, n = {}",
                t.method,
                fmt6(t.statistic),
                fmt6(t.p_value),
                t.n_effective
            ),
            CompareOutcome::Identical => "identical: every paired difference is zero".into(),
            CompareOutcome::TooFewPairs(n) => format!("not tested: {n} non-zero paired difference"),
            CompareOutcome::NoQuerySlices => {
                "no query slices: the initial block covers the volume".into()
            }
        }
    }
}

fn classify(result: Result<PairedTestResult, EvalError>) -> Result<CompareOutcome, HarnessError> {
    match result {
        Ok(t) => Ok(CompareOutcome::Tested(t)),
        Err(EvalError::TooFewPairs(0)) => Ok(CompareOutcome::Identical),
        Err(EvalError::TooFewPairs(n)) => Ok(CompareOutcome::TooFewPairs(n)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub baseline: RunReport,
    pub ics: RunReport,
    pub outcome: CompareOutcome,
}

impl CompareReport {
    pub fn per_slice_csv(&self) -> String {
        let mut out = format!("{}\n", RunReport::CSV_HEADER);
        for row in self
            .baseline
            .csv_rows()
            .into_iter()
            .chain(self.ics.csv_rows())
        {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[compare]");
        let _ = writeln!(s, "case = \"{}\"", sanitize(&self.ics.case));
        let _ = writeln!(s, "region = \"{}\"", sanitize(&self.ics.region));
        let _ = writeln!(s, "capacity = {}", self.ics.config.capacity);
        let _ = writeln!(s, "init_start = {}", self.ics.init_start);
        let _ = writeln!(s, "init_count = {}", self.ics.init_count);
        for r in [&self.baseline, &self.ics] {
            if let Some(st) = &r.stats {
                let _ = writeln!(s, "{}_mean_dsc = {}", r.method, fmt6(st.mean));
                let _ = writeln!(s, "{}_std_dsc = {}", r.method, fmt6(st.std));
            }
        }
        let _ = writeln!(s, "test = \"{}\"", self.outcome.describe());
        if let CompareOutcome::Tested(t) = &self.outcome {
            let _ = writeln!(s, "p_value = {}", fmt6(t.p_value));
        }
        s
    }
}

/// Runs baseline and cascade from the same initial block and tests the
/// per-slice DSC difference (cascade minus baseline).
pub fn run_compare<B, F>(
    bundle: &CaseBundle,
    initial: &InitialSupportSpec,
    make_backend: F,
    cfg: &CascadeConfig,
    test: TestMethod,
    exec: Exec,
) -> Result<CompareReport, HarnessError>
where
    B: SegmenterBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let (baseline, ics) = exec.join(
        || run_cell(bundle, initial, Method::Baseline, &make_backend, cfg),
        || run_cell(bundle, initial, Method::Ics, &make_backend, cfg),
    );
    let (baseline, ics) = (baseline?, ics?);
    let outcome = if ics.scores.is_empty() {
        CompareOutcome::NoQuerySlices
    } else {
        classify(paired_test_with(
            &ics.dsc_series(),
            &baseline.dsc_series(),
            test,
        ))?
    };
    Ok(CompareReport {
        baseline,
        ics,
        outcome,
    })
}

/// Paired test over per-case mean DSC, one pair per comparison. Cases
/// without query slices are skipped.
pub fn case_level_test(
    reports: &[CompareReport],
    test: TestMethod,
) -> Result<CompareOutcome, HarnessError> {
    let (ics, base): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .filter_map(|r| Some((r.ics.mean_dsc()?, r.baseline.mean_dsc()?)))
        .unzip();
    if ics.is_empty() {
        return Ok(CompareOutcome::NoQuerySlices);
    }
    classify(paired_test_with(&ics, &base, test))
}

pub fn write_compare(
    report: &CompareReport,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    let mut paths = vec![
        write_run_report(&report.baseline, dir)?,
        write_run_report(&report.ics, dir)?,
    ];
    let summary = dir.join(format!(
        "{}_{}_compare_m{}_s{}.txt",
        sanitize(&report.ics.case),
        sanitize(&report.ics.region),
        report.ics.config.capacity,
        report.ics.init_start
    ));
    write_file(&summary, &report.summary_text())?;
    paths.push(summary);
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub method: Method,
    /// Initial block size.
    pub m: usize,
    pub start: usize,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

const NA: &str = "NA";

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_string(), fmt6)
}

impl SweepReport {
    /// Long-form rows across every cell, ready for box plots.
    pub fn per_slice_csv(&self) -> String {
        let mut out = format!("{}\n", RunReport::CSV_HEADER);
        for cell in &self.cells {
            for row in cell.report.csv_rows() {
                out.push_str(&row);
                out.push('\n');
            }
        }
        out
    }

    pub const SUMMARY_HEADER: &'static str =
        "case,region,method,m,seed_start,n,mean_dsc,std_dsc,forward_mean_dsc,backward_mean_dsc";

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for c in &self.cells {
            let r = &c.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                sanitize(&r.case),
                sanitize(&r.region),
                c.method,
                r.config.capacity,
                c.start,
                r.scores.len(),
                opt6(r.stats.as_ref().map(|s| s.mean)),
                opt6(r.stats.as_ref().map(|s| s.std)),
                opt6(r.forward_mean()),
                opt6(r.backward_mean()),
            );
        }
        out
    }

    pub fn cell(&self, method: Method, m: usize, start: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.m == m && c.start == start)
    }

    /// Mean of the per-cell mean DSC for every `(method, m)` pair, in sweep
    /// order.
    pub fn means_by_m(&self) -> Vec<(Method, usize, f64)> {
        let mut keys: Vec<(Method, usize)> = self.cells.iter().map(|c| (c.method, c.m)).collect();
        keys.dedup();
        keys.into_iter()
            .filter_map(|(method, m)| {
                let vals: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.method == method && c.m == m)
                    .filter_map(|c| c.report.mean_dsc())
                    .collect();
                let stats = aggregate_values(&vals).ok()?;
                Some((method, m, stats.mean))
            })
            .collect()
    }
}

fn dedup_methods(methods: &[Method]) -> Vec<Method> {
    let mut out: Vec<Method> = methods.to_vec();
    out.sort();
    out.dedup();
    out
}

fn run_cells<B, F>(
    bundle: &CaseBundle,
    plan: Vec<(Method, usize, usize, CascadeConfig)>,
    make_backend: &F,
    exec: Exec,
) -> Result<SweepReport, HarnessError>
where
    B: SegmenterBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let n = bundle.len();
    let results = exec.map(plan, |(method, m, start, cfg)| {
        let initial = InitialSupportSpec::block(start, m, n)?;
        let report = run_cell(bundle, &initial, method, make_backend, &cfg)?;
        Ok::<_, HarnessError>(SweepCell {
            method,
            m,
            start,
            report,
        })
    });
    Ok(SweepReport {
        cells: results.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Centred initial block of each size in `m_values`. The support capacity
/// of each cell equals its block size.
pub fn sweep_m<B, F>(
    bundle: &CaseBundle,
    m_values: &[usize],
    methods: &[Method],
    make_backend: F,
    cfg: &CascadeConfig,
    exec: Exec,
) -> Result<SweepReport, HarnessError>
where
    B: SegmenterBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let n = bundle.len();
    let mut ms = m_values.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let methods = dedup_methods(methods);
    if ms.is_empty() || methods.is_empty() {
        return Err(HarnessError::EmptySweep);
    }
    if let Some(&bad) = ms.iter().find(|&&m| m == 0 || m > n) {
        return Err(HarnessError::InvalidSweep(format!(
            "m = {bad} outside 1..={n}"
        )));
    }
    let mut plan = Vec::new();
    for &m in &ms {
        let start = InitialSupportSpec::centered(m, n)?.start();
        for &method in &methods {
            let cell_cfg = CascadeConfig {
                capacity: m,
                ..cfg.clone()
            };
            plan.push((method, m, start, cell_cfg));
        }
    }
    run_cells(bundle, plan, &make_backend, exec)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Positions {
    /// Every start from 1 to `n - m + 1`.
    All,
    List(Vec<usize>),
}

impl Positions {
    pub fn resolve(&self, m: usize, n: usize) -> Result<Vec<usize>, HarnessError> {
        if m == 0 || m > n {
            return Err(HarnessError::InvalidSweep(format!(
                "m = {m} outside 1..={n}"
            )));
        }
        let last = n - m + 1;
        let mut starts = match self {
            Positions::All => (1..=last).collect(),
            Positions::List(v) => v.clone(),
        };
        starts.sort_unstable();
        starts.dedup();
        if starts.is_empty() {
            return Err(HarnessError::EmptySweep);
        }
        if let Some(&bad) = starts.iter().find(|&&s| s == 0 || s > last) {
            return Err(HarnessError::InvalidSweep(format!(
                "start {bad} outside 1..={last}"
            )));
        }
        Ok(starts)
    }
}

impl std::str::FromStr for Positions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim() == "all" {
            return Ok(Positions::All);
        }
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad position {t:?}: {e}"))
            })
            .collect::<Result<_, _>>()
            .map(Positions::List)
    }
}

/// Fixed block size `m`, moved across the volume.
pub fn sweep_position<B, F>(
    bundle: &CaseBundle,
    m: usize,
    positions: &Positions,
    methods: &[Method],
    make_backend: F,
    cfg: &CascadeConfig,
    exec: Exec,
) -> Result<SweepReport, HarnessError>
where
    B: SegmenterBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let starts = positions.resolve(m, bundle.len())?;
    let methods = dedup_methods(methods);
    if methods.is_empty() {
        return Err(HarnessError::EmptySweep);
    }
    if m > cfg.capacity {
        return Err(HarnessError::InvalidSweep(format!(
            "m = {m} exceeds capacity {}",
            cfg.capacity
        )));
    }
    let mut plan = Vec::new();
    for &start in &starts {
        for &method in &methods {
            plan.push((method, m, start, cfg.clone()));
        }
    }
    run_cells(bundle, plan, &make_backend, exec)
}

/// Writes `<prefix>_per_slice.csv` and `<prefix>_summary.csv` into `dir`.
pub fn write_sweep(
    report: &SweepReport,
    dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let per_slice = dir.join(format!("{}_per_slice.csv", sanitize(prefix)));
    let summary = dir.join(format!("{}_summary.csv", sanitize(prefix)));
    write_file(&per_slice, &report.per_slice_csv())?;
    write_file(&summary, &report.summary_csv())?;
    Ok(vec![per_slice, summary])
}
