//! Seed management, parallel execution of independent realizations,
//! statistical aggregation, and result persistence.
//!
//! The contract: `(flow spec, parameters, seed)` fully determines a job's
//! result, results are bit-identical regardless of parallelism or completion
//! order, and failed jobs are recorded rather than dropped.

use crate::flow::FlowSpec;
use crate::homog::{
    travel_time_ladder, CompareRow, HomogConfig, ShapeConvergenceRow, TravelTimeSample,
};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Result tables open with this schema line.
pub const RESULTS_HEADER: &str = "# gfront-results v1";

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-job seed derived from the master seed and the job index; avoids
/// correlated streams without a counter-based generator.
pub fn derive_seed(master_seed: u64, job_index: u64) -> u64 {
    mix64(master_seed ^ mix64(job_index ^ 0x71ee2ac5c7e0d983))
}

/// One unit of ensemble work.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub job_id: u64,
    pub flow: FlowSpec,
    pub seed: u64,
    pub op: JobOp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum JobOp {
    /// Travel times to `dists[k] * e` from `(x0, t0)`, one corridor solve.
    TravelTime { x0: [f64; 2], t0: f64, e: [f64; 2], dists: Vec<f64>, homog: HomogConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum JobOutput {
    TravelTimes(Vec<TravelTimeSample>),
    ShapeDistances(Vec<ShapeConvergenceRow>),
    Compare(Vec<CompareRow>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub seed: u64,
    pub status: JobStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum JobStatus {
    Ok(JobOutput),
    Failed(String),
}

fn run_one(job: &Job) -> JobStatus {
    let run = || -> Result<JobOutput, String> {
        match &job.op {
            JobOp::TravelTime { x0, t0, e, dists, homog } => {
                let f = job.flow.realize(job.seed);
                let samples = travel_time_ladder(&f, *x0, *t0, *e, dists, job.seed, homog)
                    .map_err(|e| e.to_string())?;
                Ok(JobOutput::TravelTimes(samples))
            }
        }
    };
    match std::panic::catch_unwind(run) {
        Ok(Ok(out)) => JobStatus::Ok(out),
        Ok(Err(msg)) => JobStatus::Failed(msg),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into());
            JobStatus::Failed(format!("panic: {msg}"))
        }
    }
}

/// Duplicate seeds in a job list (reported, not rejected: duplicates produce
/// duplicate results by design and usually indicate a seeding bug upstream).
pub fn duplicate_seeds(jobs: &[Job]) -> Vec<u64> {
    let mut seen = std::collections::HashSet::new();
    let mut dups = Vec::new();
    for j in jobs {
        if !seen.insert(j.seed) {
            dups.push(j.seed);
        }
    }
    dups.sort_unstable();
    dups.dedup();
    dups
}

/// Run all jobs with the given parallelism. Output order follows the input
/// order, and each record is a pure function of its job, so tables are
/// identical for any thread count. Panicking workers mark their job failed;
/// the ensemble continues.
pub fn run_ensemble(jobs: &[Job], parallelism: usize) -> Vec<JobRecord> {
    for d in duplicate_seeds(jobs) {
        log::warn!("duplicate seed {d} across jobs: duplicate result rows will follow");
    }
    let exec = |job: &Job| JobRecord { job_id: job.job_id, seed: job.seed, status: run_one(job) };
    if parallelism <= 1 {
        jobs.iter().map(exec).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .expect("thread pool");
        pool.install(|| jobs.par_iter().map(exec).collect())
    }
}

/// Streaming moments of one keyed statistic; merging is associative and
/// commutative up to rounding (parallel Welford/Chan form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn empty() -> Self {
        Aggregate { count: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    pub fn of(value: f64) -> Self {
        Aggregate { count: 1, mean: value, m2: 0.0, min: value, max: value }
    }

    pub fn push(&mut self, value: f64) {
        *self = merge_aggregates(*self, Aggregate::of(value));
    }

    /// Sample variance (n - 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count as f64 - 1.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Numerically stable parallel merge of two aggregates over the same key.
pub fn merge_aggregates(a: Aggregate, b: Aggregate) -> Aggregate {
    if a.count == 0 {
        return b;
    }
    if b.count == 0 {
        return a;
    }
    let n = a.count + b.count;
    let (na, nb) = (a.count as f64, b.count as f64);
    let delta = b.mean - a.mean;
    let mean = a.mean + delta * nb / (na + nb);
    let m2 = a.m2 + b.m2 + delta * delta * na * nb / (na + nb);
    Aggregate { count: n, mean, m2, min: a.min.min(b.min), max: a.max.max(b.max) }
}

/// Documented travel-time CSV schema (stable column order).
pub const TRAVEL_TIME_COLUMNS: &str =
    "job_id,seed,x0x,x0y,t0,vx,vy,scale,tau_raw,tau_paper,flagged,status";

/// Render the result table of travel-time jobs. Failed jobs appear as rows
/// with empty numeric fields and the failure message in `status`.
pub fn travel_time_table(records: &[JobRecord]) -> String {
    let mut out = String::new();
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    out.push_str(TRAVEL_TIME_COLUMNS);
    out.push('\n');
    for rec in records {
        match &rec.status {
            JobStatus::Ok(JobOutput::TravelTimes(samples)) => {
                for s in samples {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},ok",
                        rec.job_id,
                        s.seed,
                        s.x0[0],
                        s.x0[1],
                        s.t0,
                        s.v[0],
                        s.v[1],
                        s.scale,
                        s.tau_raw,
                        s.tau_paper,
                        s.flagged
                    );
                }
            }
            JobStatus::Ok(_) => {
                let _ = writeln!(out, "{},{},,,,,,,,,,ok", rec.job_id, rec.seed);
            }
            JobStatus::Failed(msg) => {
                let safe = msg.replace([',', '\n'], ";");
                let _ = writeln!(out, "{},{},,,,,,,,,,failed: {safe}", rec.job_id, rec.seed);
            }
        }
    }
    out
}

pub fn write_table(path: &Path, table: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(table.as_bytes())
}
