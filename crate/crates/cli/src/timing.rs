use std::fmt::Write as _;
use std::time::Duration;

/// Mean and sample standard deviation of repeated reconstructions.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub method: String,
    pub k: Option<usize>,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
}

impl TimingRow {
    pub fn from_samples(method: impl Into<String>, k: Option<usize>, samples: &[Duration]) -> Self {
        let secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        let n = secs.len();
        let mean = if n > 0 {
            secs.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let std = if n > 1 {
            (secs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            method: method.into(),
            k,
            mean,
            std,
            repeats: n,
        }
    }
}

/// `method,k,mean_seconds,std_seconds,repeats`; `k` is empty for the full system.
pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("method,k,mean_seconds,std_seconds,repeats\n");
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{k},{:.6e},{:.6e},{}", r.method, r.mean, r.std, r.repeats);
    }
    out
}
