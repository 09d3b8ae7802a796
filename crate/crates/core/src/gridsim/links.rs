use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intra-site (same cluster, Gigabit Ethernet) bandwidth in Mb/s.
pub const INTRA_BANDWIDTH_MBPS: f64 = 941.0;
/// Intra-site latency in milliseconds.
pub const INTRA_LATENCY_MS: f64 = 0.07;

const TABLE2_SITES: [&str; 5] = ["Orsay", "Toulouse", "Rennes", "Nancy", "Sophia"];

/// Average inter-site bandwidth (Mb/s) and latency (ms), row = sender,
/// column = receiver. Measured values, asymmetric as published.
const TABLE2: [[(f64, f64); 5]; 5] = [
    [
        (0.0, 0.0),
        (16.15, 15.0),
        (57.73, 8.0),
        (90.77, 5.0),
        (17.63, 28.0),
    ],
    [
        (38.97, 15.0),
        (0.0, 0.0),
        (26.08, 19.0),
        (28.89, 17.0),
        (35.74, 14.0),
    ],
    [
        (66.33, 8.0),
        (12.71, 19.0),
        (0.0, 0.0),
        (44.63, 11.0),
        (26.96, 19.0),
    ],
    [
        (106.63, 5.0),
        (14.13, 17.0),
        (44.54, 11.0),
        (0.0, 0.0),
        (30.01, 17.0),
    ],
    [
        (21.45, 28.0),
        (17.41, 14.0),
        (26.93, 19.0),
        (30.14, 17.0),
        (0.0, 0.0),
    ],
];

#[derive(Deserialize)]
struct RawLinkMatrix {
    sites: Vec<String>,
    bandwidth_mbps: Vec<Vec<f64>>,
    latency_ms: Vec<Vec<f64>>,
    #[serde(default = "one")]
    overhead_factor: f64,
}

fn one() -> f64 {
    1.0
}

/// Point-to-point bandwidth and latency between grid sites. Diagonal
/// entries always hold the intra-site values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinkMatrix")]
pub struct LinkMatrix {
    sites: Vec<String>,
    bandwidth_mbps: Vec<Vec<f64>>,
    latency_ms: Vec<Vec<f64>>,
    /// Multiplier applied to payload bytes to account for framing; 1.0
    /// means raw payload only.
    overhead_factor: f64,
}

impl TryFrom<RawLinkMatrix> for LinkMatrix {
    type Error = Error;

    fn try_from(raw: RawLinkMatrix) -> Result<Self> {
        LinkMatrix::new(raw.sites, raw.bandwidth_mbps, raw.latency_ms)?
            .with_overhead_factor(raw.overhead_factor)
    }
}

impl LinkMatrix {
    pub fn new(
        sites: Vec<String>,
        mut bandwidth_mbps: Vec<Vec<f64>>,
        mut latency_ms: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(Error::validation("link matrix needs at least one site"));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&bandwidth_mbps) || !square(&latency_ms) {
            return Err(Error::validation(format!("link matrix must be {n}x{n}")));
        }
        for i in 0..n {
            bandwidth_mbps[i][i] = INTRA_BANDWIDTH_MBPS;
            latency_ms[i][i] = INTRA_LATENCY_MS;
            for j in 0..n {
                let (bw, lat) = (bandwidth_mbps[i][j], latency_ms[i][j]);
                if !(bw > 0.0 && bw.is_finite()) {
                    return Err(Error::validation(format!(
                        "bandwidth {}->{} must be positive, got {bw}",
                        sites[i], sites[j]
                    )));
                }
                if !(lat >= 0.0 && lat.is_finite()) {
                    return Err(Error::validation(format!(
                        "latency {}->{} must be nonnegative, got {lat}",
                        sites[i], sites[j]
                    )));
                }
            }
        }
        Ok(LinkMatrix {
            sites,
            bandwidth_mbps,
            latency_ms,
            overhead_factor: 1.0,
        })
    }

    pub fn with_overhead_factor(mut self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0 && factor.is_finite()) {
            return Err(Error::validation(format!(
                "overhead factor must be >= 1, got {factor}"
            )));
        }
        self.overhead_factor = factor;
        Ok(self)
    }

    /// Five Grid'5000 sites with the measured averages from the original
    /// experiments.
    pub fn table2() -> Self {
        let bw = TABLE2.iter().map(|r| r.iter().map(|e| e.0).collect()).collect();
        let lat = TABLE2.iter().map(|r| r.iter().map(|e| e.1).collect()).collect();
        LinkMatrix::new(TABLE2_SITES.iter().map(|s| s.to_string()).collect(), bw, lat)
            .expect("built-in table is valid")
    }

    /// Every pair of distinct sites shares the same link.
    pub fn uniform(n: usize, bandwidth_mbps: f64, latency_ms: f64) -> Result<Self> {
        LinkMatrix::new(
            (0..n).map(|i| format!("site{i}")).collect(),
            vec![vec![bandwidth_mbps; n]; n],
            vec![vec![latency_ms; n]; n],
        )
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn bandwidth_mbps(&self, from: usize, to: usize) -> f64 {
        self.bandwidth_mbps[from][to]
    }

    pub fn latency_ms(&self, from: usize, to: usize) -> f64 {
        self.latency_ms[from][to]
    }

    pub fn overhead_factor(&self) -> f64 {
        self.overhead_factor
    }

    pub fn index_of(&self, site: &str) -> Result<usize> {
        self.sites
            .iter()
            .position(|s| s == site)
            .ok_or_else(|| Error::validation(format!("unknown site {site:?}")))
    }

    /// Physical site hosting logical site `process` (round-robin placement).
    pub fn place(&self, process: usize) -> usize {
        process % self.sites.len()
    }

    /// `latency + bits / bandwidth`, in seconds.
    pub fn comm_time(&self, bytes: u64, from: usize, to: usize) -> Result<f64> {
        let n = self.len();
        if from >= n || to >= n {
            return Err(Error::validation(format!(
                "site index out of range ({from} -> {to}, {n} sites)"
            )));
        }
        let bits = bytes as f64 * self.overhead_factor * 8.0;
        Ok(self.latency_ms[from][to] / 1000.0 + bits / (self.bandwidth_mbps[from][to] * 1e6))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Transfer time of `bytes` between two named sites.
pub fn comm_time(bytes: u64, from: &str, to: &str, links: &LinkMatrix) -> Result<f64> {
    links.comm_time(bytes, links.index_of(from)?, links.index_of(to)?)
}
