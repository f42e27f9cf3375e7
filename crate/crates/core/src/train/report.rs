//! Run reports: per-epoch metrics as diffable CSV, timing split into its own
//! file so result files are byte-identical across reruns, and a JSON summary.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_err: f64,
    pub val_err: Option<f64>,
    pub test_err: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub epochs: Vec<EpochRow>,
    pub best_epoch: usize,
    pub final_val_err: Option<f64>,
    pub final_test_err: Option<f64>,
    pub config_hash: String,
    pub init_desc: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl RunReport {
    /// Deterministic per-epoch metrics; wall time deliberately excluded.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_err,val_err,test_err\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{},{}\n",
                r.epoch,
                r.lr,
                r.train_loss,
                r.train_err,
                opt(r.val_err),
                opt(r.test_err)
            ));
        }
        out
    }

    /// Wall-clock seconds per epoch, kept in a separate file so the results
    /// CSV stays diffable.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{:.3}\n", r.epoch, r.seconds));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn final_metric(&self) -> Option<f64> {
        self.final_test_err
            .or(self.final_val_err)
            .or_else(|| self.epochs.last().map(|r| r.train_err))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    /// Final test error per completed run, in seed order.
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n-1); 0 for a single run.
    pub std: f64,
    pub best: f64,
    pub completed: usize,
    pub failed: Vec<String>,
}

impl AggregateReport {
    pub fn from_errors(seeds: Vec<u64>, errors: Vec<f64>, failed: Vec<String>) -> Self {
        let completed = errors.len();
        let mean = if completed > 0 {
            errors.iter().sum::<f64>() / completed as f64
        } else {
            f64::NAN
        };
        let std = if completed > 1 {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                / (completed as f64 - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
        AggregateReport {
            seeds,
            errors,
            mean,
            std,
            best,
            completed,
            failed,
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }
}

/// FNV-1a over the canonical JSON of a config, as a short reproducibility
/// fingerprint.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
