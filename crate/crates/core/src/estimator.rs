//! Ideal-time estimates and the overhead of real runs relative to them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridsim::{run_stages, LinkMatrix, StagePlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Minutes,
}

impl TimeUnit {
    fn suffix(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "s",
            TimeUnit::Minutes => "min",
        }
    }
}

/// A duration tagged with its unit. Units are never converted implicitly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeValue {
    pub value: f64,
    pub unit: TimeUnit,
}

impl TimeValue {
    pub fn seconds(value: f64) -> Self {
        TimeValue {
            value,
            unit: TimeUnit::Seconds,
        }
    }

    pub fn minutes(value: f64) -> Self {
        TimeValue {
            value,
            unit: TimeUnit::Minutes,
        }
    }
}

impl fmt::Display for TimeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.suffix())
    }
}

/// Parses `"1050s"`, `"19.52 s"`, `"521min"` and similar.
impl FromStr for TimeValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_ascii_alphabetic())
            .ok_or_else(|| Error::validation(format!("time {s:?} needs a unit (s or min)")))?;
        let (num, unit) = s.split_at(split);
        let unit = match unit {
            "s" | "sec" | "seconds" => TimeUnit::Seconds,
            "min" | "minutes" => TimeUnit::Minutes,
            other => return Err(Error::validation(format!("unknown time unit {other:?}"))),
        };
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad time value {num:?}")))?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::validation(format!(
                "time must be finite and >= 0, got {value}"
            )));
        }
        Ok(TimeValue { value, unit })
    }
}

/// Share of a measured time not explained by the estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub task: String,
    pub measured: TimeValue,
    pub estimated: TimeValue,
    /// `100 * (measured - estimated) / measured`, unrounded.
    pub overhead_pct: f64,
    /// Same, rounded to one decimal for display.
    pub overhead_pct_rounded: f64,
    /// Set when the estimate is larger than the measurement, which makes
    /// the overhead negative. Diagnostic only.
    pub estimator_exceeds_measurement: bool,
}

impl fmt::Display for OverheadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: measured {}, estimated {}, overhead {:.1}%",
            self.task, self.measured, self.estimated, self.overhead_pct_rounded
        )?;
        if self.estimator_exceeds_measurement {
            f.write_str(" (estimator exceeds measurement)")?;
        }
        Ok(())
    }
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn overhead(task: &str, measured: TimeValue, estimated: TimeValue) -> Result<OverheadReport> {
    if measured.unit != estimated.unit {
        return Err(Error::validation(format!(
            "unit mismatch: measured {measured}, estimated {estimated}"
        )));
    }
    if !(measured.value > 0.0 && measured.value.is_finite()) {
        return Err(Error::validation(format!(
            "measured time must be positive, got {measured}"
        )));
    }
    if !(estimated.value >= 0.0 && estimated.value.is_finite()) {
        return Err(Error::validation(format!(
            "estimated time must be >= 0, got {estimated}"
        )));
    }
    let pct = 100.0 * (measured.value - estimated.value) / measured.value;
    Ok(OverheadReport {
        task: task.to_string(),
        measured,
        estimated,
        overhead_pct: pct,
        overhead_pct_rounded: round1(pct),
        estimator_exceeds_measurement: estimated.value > measured.value,
    })
}

/// How much faster `b` is than `a`, in percent of `a`.
pub fn relative_gain(a: f64, b: f64) -> Result<f64> {
    if a.is_nan() || a <= 0.0 {
        return Err(Error::validation(format!(
            "reference time must be positive, got {a}"
        )));
    }
    Ok(100.0 * (a - b) / a)
}

/// Slowest local clustering, plus the slowest transfer of sub-cluster
/// statistics to the aggregation site, plus the merge.
pub fn estimate_clustering(
    local_times: &[f64],
    merge_time: f64,
    payloads: &[u64],
    links: &LinkMatrix,
    aggregation_site: usize,
) -> Result<f64> {
    if local_times.is_empty() {
        return Err(Error::validation("at least one site is required"));
    }
    if payloads.len() != local_times.len() {
        return Err(Error::validation(format!(
            "{} payloads for {} sites",
            payloads.len(),
            local_times.len()
        )));
    }
    if aggregation_site >= local_times.len() {
        return Err(Error::validation(format!(
            "aggregation site {aggregation_site} out of range"
        )));
    }
    if local_times
        .iter()
        .chain([&merge_time])
        .any(|t| !(*t >= 0.0 && t.is_finite()))
    {
        return Err(Error::validation("times must be finite and >= 0"));
    }
    let local = local_times.iter().copied().fold(0.0, f64::max);
    let to = links.place(aggregation_site);
    let mut comm: f64 = 0.0;
    for (i, &bytes) in payloads.iter().enumerate() {
        if i != aggregation_site {
            comm = comm.max(links.comm_time(bytes, links.place(i), to)?);
        }
    }
    Ok(local + comm + merge_time)
}

/// Sum over stages of the slowest activity.
pub fn estimate_itemsets(plan: &StagePlan, links: &LinkMatrix) -> Result<f64> {
    Ok(run_stages(plan, links)?.makespan)
}

/// Measured and estimated times of the original grid experiments.
pub const REFERENCE_RUNS: [(&str, TimeValue, TimeValue); 3] = [
    (
        "V-Clustering",
        TimeValue {
            value: 1050.0,
            unit: TimeUnit::Seconds,
        },
        TimeValue {
            value: 19.52,
            unit: TimeUnit::Seconds,
        },
    ),
    (
        "GFM",
        TimeValue {
            value: 521.0,
            unit: TimeUnit::Minutes,
        },
        TimeValue {
            value: 424.0,
            unit: TimeUnit::Minutes,
        },
    ),
    (
        "FDM",
        TimeValue {
            value: 687.0,
            unit: TimeUnit::Minutes,
        },
        TimeValue {
            value: 518.0,
            unit: TimeUnit::Minutes,
        },
    ),
];

/// Overhead rows for [`REFERENCE_RUNS`].
pub fn reference_reports() -> Vec<OverheadReport> {
    REFERENCE_RUNS
        .iter()
        .map(|(task, m, e)| overhead(task, *m, *e).expect("preset rows are valid"))
        .collect()
}
