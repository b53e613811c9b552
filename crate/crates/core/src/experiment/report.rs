//! Report types, seed aggregation and the comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::metrics::{BinSpec, MetricsReport, N_BINS};

pub const REPORT_FORMAT: &str = "odflow-report-1";

/// Mean and sample standard deviation over seeds; `sd` is absent for a
/// single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Stat { mean, sd })
    }

    fn of_options(values: &[Option<f64>]) -> Option<Stat> {
        let all: Option<Vec<f64>> = values.iter().copied().collect();
        all.and_then(|v| Stat::of(&v))
    }

    fn cell(&self) -> String {
        match self.sd {
            Some(sd) => format!("{:.2} ± {:.2}", self.mean, sd),
            None => format!("{:.2}", self.mean),
        }
    }

    fn cell_ratio(&self) -> String {
        match self.sd {
            Some(sd) => format!("{:.3} ± {:.3}", self.mean, sd),
            None => format!("{:.3}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mae_total: Stat,
    pub mae_bins: [Option<Stat>; N_BINS],
    pub bin_mean_mae: Stat,
    pub mape_per_bin: [Option<Stat>; N_BINS],
    pub ssi: Stat,
    pub cpc: Stat,
    pub cpl: Stat,
}

impl MetricSummary {
    pub fn aggregate(runs: &[&MetricsReport]) -> Option<MetricSummary> {
        let pick = |f: &dyn Fn(&MetricsReport) -> f64| Stat::of(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
        let per_bin = |f: &dyn Fn(&MetricsReport, usize) -> Option<f64>| {
            std::array::from_fn(|b| Stat::of_options(&runs.iter().map(|r| f(r, b)).collect::<Vec<_>>()))
        };
        Some(MetricSummary {
            mae_total: pick(&|r| r.mae_total)?,
            mae_bins: per_bin(&|r, b| r.mae_bins[b]),
            bin_mean_mae: pick(&|r| r.bin_mean_mae)?,
            mape_per_bin: per_bin(&|r, b| r.mape_per_bin[b]),
            ssi: pick(&|r| r.ssi)?,
            cpc: pick(&|r| r.cpc)?,
            cpl: pick(&|r| r.cpl)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed_index: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub guard_reads: usize,
    pub diagnostics: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: ModelKind,
    pub runs: Vec<RunResult>,
    pub summary: Option<MetricSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_discarded: usize,
    pub n_val_interest: usize,
    pub n_test_interest: usize,
    pub test_bins: [usize; N_BINS],
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub seed: u64,
    pub n_seeds: usize,
    pub bins: BinSpec,
    pub split: SplitSummary,
    pub rows: Vec<ModelRow>,
}

impl ExperimentReport {
    pub fn row(&self, model: ModelKind) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Aligned text table: total MAE, per-bin MAE, bin-mean MAE, top-bin
    /// MAPE and the three overlap indices.
    pub fn table(&self) -> String {
        let mut header = vec!["Model".to_string(), "MAE".to_string()];
        header.extend((0..N_BINS).map(|b| format!("MAE {}", self.bins.label(b))));
        header.push("Bin-mean MAE".into());
        header.push(format!("MAPE {}", self.bins.label(N_BINS - 1)));
        header.extend(["SSI", "CPC", "CPL"].map(String::from));
        let mut rows = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.model.name().to_string()];
            match (&row.summary, &row.error) {
                (Some(s), None) => {
                    let opt = |v: &Option<Stat>| v.map_or("-".to_string(), |s| s.cell());
                    cells.push(s.mae_total.cell());
                    cells.extend(s.mae_bins.iter().map(opt));
                    cells.push(s.bin_mean_mae.cell());
                    cells.push(s.mape_per_bin[N_BINS - 1].map_or("-".to_string(), |m| m.cell()));
                    cells.extend([s.ssi, s.cpc, s.cpl].iter().map(Stat::cell_ratio));
                }
                (_, err) => cells.push(format!("error: {}", err.as_deref().unwrap_or("no runs"))),
            }
            rows.push(cells);
        }
        let n_cols = rows[0].len();
        let widths: Vec<usize> = (0..n_cols)
            .map(|c| rows.iter().filter(|r| r.len() == n_cols).map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let pad = widths.get(c).copied().unwrap_or(0).saturating_sub(v.chars().count());
                    if c == 0 {
                        format!("{v}{}", " ".repeat(pad))
                    } else {
                        format!("{}{v}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if k == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (n_cols - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        // sum of squares 5, n - 1 = 3
        assert!((s.sd.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).unwrap().sd, None);
        assert_eq!(Stat::of(&[]), None);
        assert_eq!(Stat::of_options(&[Some(1.0), None]), None);
    }

    #[test]
    fn cells_show_plus_minus_only_for_repeated_runs() {
        assert_eq!(Stat { mean: 12.549, sd: Some(0.5) }.cell(), "12.55 ± 0.50");
        assert_eq!(Stat { mean: 3.0, sd: None }.cell(), "3.00");
    }
}
