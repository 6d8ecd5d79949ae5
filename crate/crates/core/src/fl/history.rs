use std::fmt::Write as _;

use crate::nn::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// `round / E_S`
    pub equivalent_round: f64,
    pub accuracy: f64,
    /// Whether the server model was (re)built by aggregation this round.
    pub aggregated: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub round: usize,
    pub reason: String,
}

/// Per-round test accuracy of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub algorithm: String,
    pub records: Vec<RoundRecord>,
    pub divergence: Option<Divergence>,
    pub final_params: ParamVector,
}

impl TrainHistory {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// `round,equivalent_round,test_accuracy,aggregation_flag,wall_seconds`.
    ///
    /// Wall-clock time is written as 0 unless `with_timing` is set, so that repeated
    /// runs produce identical files.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out =
            String::from("round,equivalent_round,test_accuracy,aggregation_flag,wall_seconds\n");
        for r in &self.records {
            let secs = if with_timing { r.wall_seconds } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.round,
                r.equivalent_round,
                r.accuracy,
                u8::from(r.aggregated),
                secs
            );
        }
        out
    }

    /// Parses the accuracy column back out of [`TrainHistory::to_csv`] output.
    pub fn parse_accuracies(csv: &str) -> Option<Vec<f64>> {
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next()?.split(',').collect();
        let col = header.iter().position(|h| *h == "test_accuracy")?;
        lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').nth(col)?.parse().ok())
            .collect()
    }
}
