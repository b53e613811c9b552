//! Goodness-of-fit measures for predicted flows.
//!
//! Predictions are clipped at zero before any measure is computed. Bin
//! membership is always decided by the observed flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_BINS: usize = 4;

/// Right-open flow magnitude bins `[b0, b1), …, [b3, b4)`; observations at
/// or above the last boundary fall in a separately reported overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub boundaries: [f64; N_BINS + 1],
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            boundaries: [0.0, 10.0, 100.0, 1000.0, 10000.0],
        }
    }
}

impl BinSpec {
    pub fn new(boundaries: [f64; N_BINS + 1]) -> Result<Self> {
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!("bin boundaries {boundaries:?} must increase strictly")));
        }
        Ok(BinSpec { boundaries })
    }

    /// Bin index in `0..N_BINS`, `Some(N_BINS)` for overflow, `None` below
    /// the first boundary.
    pub fn bin_of(&self, y: f64) -> Option<usize> {
        if y < self.boundaries[0] {
            return None;
        }
        Some(self.boundaries[1..].iter().position(|&b| y < b).unwrap_or(N_BINS))
    }

    /// Like [`BinSpec::bin_of`] but folds overflow into the top bin.
    pub fn capped_bin_of(&self, y: f64) -> usize {
        self.bin_of(y).unwrap_or(0).min(N_BINS - 1)
    }

    pub fn label(&self, bin: usize) -> String {
        if bin >= N_BINS {
            return format!("[{}; inf)", self.boundaries[N_BINS]);
        }
        format!("[{}; {})", self.boundaries[bin], self.boundaries[bin + 1])
    }
}

fn check_lengths(y: &[f64], pred: &[f64]) -> Result<()> {
    if y.len() != pred.len() {
        return Err(Error::Length(y.len(), pred.len()));
    }
    Ok(())
}

/// Predictions clipped at zero and the number of entries that were negative.
pub fn clip_predictions(pred: &[f64]) -> (Vec<f64>, usize) {
    let clipped = pred.iter().filter(|&&p| p < 0.0).count();
    (pred.iter().map(|&p| p.max(0.0)).collect(), clipped)
}

pub fn mae(y: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(y, pred)?;
    if y.is_empty() {
        return Err(Error::Degenerate("MAE of an empty edge set".into()));
    }
    Ok(y.iter().zip(pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMae {
    pub per_bin: [Option<f64>; N_BINS],
    pub counts: [usize; N_BINS],
    pub overflow: Option<f64>,
    pub overflow_count: usize,
}

pub fn binned_mae(y: &[f64], pred: &[f64], bins: &BinSpec) -> Result<BinnedMae> {
    check_lengths(y, pred)?;
    let mut sums = [0.0; N_BINS + 1];
    let mut counts = [0usize; N_BINS + 1];
    for (&a, &b) in y.iter().zip(pred) {
        if let Some(bin) = bins.bin_of(a) {
            sums[bin] += (a - b).abs();
            counts[bin] += 1;
        }
    }
    let avg = |b: usize| (counts[b] > 0).then(|| sums[b] / counts[b] as f64);
    Ok(BinnedMae {
        per_bin: std::array::from_fn(avg),
        counts: std::array::from_fn(|b| counts[b]),
        overflow: avg(N_BINS),
        overflow_count: counts[N_BINS],
    })
}

/// Mean of the non-empty bin MAEs; `None` when every bin is empty.
pub fn bin_mean_mae(binned: &BinnedMae) -> Option<f64> {
    let present: Vec<f64> = binned.per_bin.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: Option<f64>,
    /// Observations with `y = 0`, excluded because the ratio is undefined.
    pub excluded_zero: usize,
}

/// `100 · mean(|y − ŷ| / y)` over the observations in `bin`.
pub fn mape(y: &[f64], pred: &[f64], bins: &BinSpec, bin: usize) -> Result<Mape> {
    check_lengths(y, pred)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for (&a, &b) in y.iter().zip(pred) {
        if bins.bin_of(a) != Some(bin) {
            continue;
        }
        if a == 0.0 {
            excluded += 1;
            continue;
        }
        sum += ((a - b) / a).abs();
        count += 1;
    }
    Ok(Mape {
        value: (count > 0).then(|| 100.0 * sum / count as f64),
        excluded_zero: excluded,
    })
}

/// Sorensen similarity averaged over edges; a `0/0` term counts as 1.
pub fn ssi(y: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(y, pred)?;
    if y.is_empty() {
        return Err(Error::Degenerate("SSI of an empty edge set".into()));
    }
    let total: f64 = y
        .iter()
        .zip(pred)
        .map(|(&a, &b)| {
            let b = b.max(0.0);
            let s = a + b;
            if s == 0.0 {
                1.0
            } else {
                2.0 * a.min(b) / s
            }
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Common part of commuters, and whether both totals were zero.
pub fn cpc(y: &[f64], pred: &[f64]) -> Result<(f64, bool)> {
    check_lengths(y, pred)?;
    let mut common = 0.0;
    let mut total = 0.0;
    for (&a, &b) in y.iter().zip(pred) {
        let b = b.max(0.0);
        common += a.min(b);
        total += a + b;
    }
    if total == 0.0 {
        return Ok((1.0, true));
    }
    Ok((2.0 * common / total, false))
}

/// Common part of links, and whether neither vector has a positive entry.
pub fn cpl(y: &[f64], pred: &[f64]) -> Result<(f64, bool)> {
    check_lengths(y, pred)?;
    let mut both = 0usize;
    let mut total = 0usize;
    for (&a, &b) in y.iter().zip(pred) {
        let (pa, pb) = (a > 0.0, b > 0.0);
        both += usize::from(pa && pb);
        total += usize::from(pa) + usize::from(pb);
    }
    if total == 0 {
        return Ok((1.0, true));
    }
    Ok((2.0 * both as f64 / total as f64, false))
}

/// Continuous power-law MLE `α = 1 + n / Σ ln(x / x_min)` over `x ≥ x_min`.
pub fn powerlaw_exponent(flows: &[f64], x_min: f64) -> Result<f64> {
    if !(x_min > 0.0) {
        return Err(Error::Degenerate(format!("x_min {x_min} must be positive")));
    }
    let tail: Vec<f64> = flows.iter().copied().filter(|&x| x >= x_min).collect();
    if tail.len() < 10 {
        return Err(Error::Degenerate(format!(
            "only {} observations at or above x_min = {x_min}; need 10",
            tail.len()
        )));
    }
    let log_sum: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    if !(log_sum > 0.0) {
        return Err(Error::Degenerate("all tail observations equal x_min".into()));
    }
    Ok(1.0 + tail.len() as f64 / log_sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_edges: usize,
    pub n_per_bin: [usize; N_BINS],
    pub n_overflow: usize,
    pub mae_total: f64,
    pub mae_bins: [Option<f64>; N_BINS],
    pub mae_overflow: Option<f64>,
    pub bin_mean_mae: f64,
    /// Some bins were empty and left out of the bin mean.
    pub bin_mean_partial: bool,
    pub mape_per_bin: [Option<f64>; N_BINS],
    pub mape_zero_excluded: usize,
    pub ssi: f64,
    pub cpc: f64,
    pub cpl: f64,
    pub vacuous_totals: bool,
    pub clipped_predictions: usize,
}

impl MetricsReport {
    pub fn compute(y: &[f64], pred: &[f64], bins: &BinSpec) -> Result<Self> {
        check_lengths(y, pred)?;
        let (pred, clipped) = clip_predictions(pred);
        let binned = binned_mae(y, &pred, bins)?;
        let bin_mean = bin_mean_mae(&binned)
            .ok_or_else(|| Error::Degenerate("no observation falls into any flow bin".into()))?;
        let mut mape_per_bin = [None; N_BINS];
        let mut excluded = 0;
        for (b, slot) in mape_per_bin.iter_mut().enumerate() {
            let m = mape(y, &pred, bins, b)?;
            *slot = m.value;
            excluded += m.excluded_zero;
        }
        let (cpc, vac_c) = cpc(y, &pred)?;
        let (cpl, vac_l) = cpl(y, &pred)?;
        Ok(MetricsReport {
            n_edges: y.len(),
            n_per_bin: binned.counts,
            n_overflow: binned.overflow_count,
            mae_total: mae(y, &pred)?,
            mae_bins: binned.per_bin,
            mae_overflow: binned.overflow,
            bin_mean_mae: bin_mean,
            bin_mean_partial: binned.per_bin.iter().any(Option::is_none),
            mape_per_bin,
            mape_zero_excluded: excluded,
            ssi: ssi(y, &pred)?,
            cpc,
            cpl,
            vacuous_totals: vac_c || vac_l,
            clipped_predictions: clipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_arithmetic_and_identity() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        let y = [0.0, 5.0, 50.0, 500.0, 5000.0];
        let r = MetricsReport::compute(&y, &y, &BinSpec::default()).unwrap();
        assert_eq!(r.mae_total, 0.0);
        assert_eq!(r.bin_mean_mae, 0.0);
        assert_eq!(r.mae_bins, [Some(0.0); 4]);
        assert_eq!((r.ssi, r.cpc, r.cpl), (1.0, 1.0, 1.0));
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn binning_is_right_open_with_overflow() {
        let b = BinSpec::default();
        assert_eq!(b.bin_of(0.0), Some(0));
        assert_eq!(b.bin_of(9.999), Some(0));
        assert_eq!(b.bin_of(10.0), Some(1));
        assert_eq!(b.bin_of(999.0), Some(2));
        assert_eq!(b.bin_of(1000.0), Some(3));
        assert_eq!(b.bin_of(10000.0), Some(4));
        assert_eq!(b.capped_bin_of(1e6), 3);
        assert!(BinSpec::new([0.0, 10.0, 10.0, 100.0, 1000.0]).is_err());
    }

    #[test]
    fn empty_bins_leave_the_mean() {
        let y = [1.0, 2.0, 50.0];
        let p = [2.0, 2.0, 40.0];
        let binned = binned_mae(&y, &p, &BinSpec::default()).unwrap();
        assert_eq!(binned.per_bin, [Some(0.5), Some(10.0), None, None]);
        assert_eq!(bin_mean_mae(&binned), Some(5.25));
        let r = MetricsReport::compute(&y, &p, &BinSpec::default()).unwrap();
        assert!(r.bin_mean_partial);
    }

    #[test]
    fn binned_mae_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let y: Vec<f64> = (0..200).map(|_| 10f64.powf(rng.random_range(-1.0..4.3))).collect();
        let p: Vec<f64> = (0..200).map(|_| 10f64.powf(rng.random_range(-1.0..4.3))).collect();
        let bins = BinSpec::default();
        let binned = binned_mae(&y, &p, &bins).unwrap();
        let edges = [0.0, 10.0, 100.0, 1000.0, 10000.0];
        let mut oracle = Vec::new();
        for b in 0..4 {
            let mut s = 0.0;
            let mut c = 0;
            for i in 0..200 {
                if y[i] >= edges[b] && y[i] < edges[b + 1] {
                    s += (y[i] - p[i]).abs();
                    c += 1;
                }
            }
            oracle.push(s / c as f64);
            assert!((binned.per_bin[b].unwrap() - s / c as f64).abs() < 1e-9);
        }
        let mean = oracle.iter().sum::<f64>() / 4.0;
        assert!((bin_mean_mae(&binned).unwrap() - mean).abs() < 1e-9);
        let total = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / 200.0;
        assert!((mae(&y, &p).unwrap() - total).abs() < 1e-9);
    }

    #[test]
    fn mape_cases() {
        let b = BinSpec::default();
        assert_eq!(mape(&[100.0], &[50.0], &b, 2).unwrap().value, Some(50.0));
        assert_eq!(mape(&[100.0], &[100.0], &b, 2).unwrap().value, Some(0.0));
        assert_eq!(mape(&[100.0], &[100.0], &b, 3).unwrap().value, None);
        let m = mape(&[0.0, 5.0], &[1.0, 4.0], &b, 0).unwrap();
        assert_eq!(m.excluded_zero, 1);
        assert!((m.value.unwrap() - 20.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..300).map(|_| rng.random_range(1000.0..9999.0)).collect();
        let p: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..12000.0)).collect();
        let mut s = 0.0;
        for i in 0..300 {
            s += ((y[i] - p[i]) / y[i]).abs();
        }
        let got = mape(&y, &p, &b, 3).unwrap().value.unwrap();
        assert!((got - 100.0 * s / 300.0).abs() < 1e-9);
    }

    #[test]
    fn ssi_cases() {
        assert_eq!(ssi(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(ssi(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
        assert_eq!(ssi(&[0.0], &[0.0]).unwrap(), 1.0);
        // negative predictions are clipped
        assert_eq!(ssi(&[0.0], &[-2.0]).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..50.0)).collect();
        let p: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..50.0)).collect();
        let mut s = 0.0;
        for i in 0..100 {
            s += 2.0 * y[i].min(p[i]) / (y[i] + p[i]);
        }
        assert!((ssi(&y, &p).unwrap() - s / 100.0).abs() < 1e-12);
    }

    #[test]
    fn cpc_cpl_cases() {
        let y = [1.0, 0.0, 7.0];
        assert_eq!(cpc(&y, &y).unwrap(), (1.0, false));
        assert_eq!(cpl(&y, &y).unwrap(), (1.0, false));
        let doubled: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert!((cpc(&y, &doubled).unwrap().0 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cpl(&y, &doubled).unwrap().0, 1.0);
        assert_eq!(cpc(&[0.0], &[0.0]).unwrap(), (1.0, true));
        assert_eq!(cpl(&[0.0], &[-1.0]).unwrap(), (1.0, true));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sparse = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..150)
                .map(|_| if rng.random_bool(0.6) { 0.0 } else { rng.random_range(0.1..30.0) })
                .collect()
        };
        let a = sparse(&mut rng);
        let b = sparse(&mut rng);
        let (mut common, mut total, mut both, mut links) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..150 {
            common += a[i].min(b[i]);
            total += a[i] + b[i];
            if a[i] > 0.0 && b[i] > 0.0 {
                both += 1.0;
            }
            links += f64::from(u8::from(a[i] > 0.0)) + f64::from(u8::from(b[i] > 0.0));
        }
        assert!((cpc(&a, &b).unwrap().0 - 2.0 * common / total).abs() < 1e-12);
        assert!((cpl(&a, &b).unwrap().0 - 2.0 * both / links).abs() < 1e-12);
    }

    #[test]
    fn powerlaw_recovers_pareto_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let alpha: f64 = 2.1;
        let x_min = 1.0;
        // inverse CDF of the continuous power law
        let sample: Vec<f64> = (0..10_000)
            .map(|_| x_min * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0)))
            .collect();
        let est = powerlaw_exponent(&sample, x_min).unwrap();
        assert!((2.05..=2.15).contains(&est), "{est}");
    }

    #[test]
    fn powerlaw_degenerate_tails() {
        assert!(powerlaw_exponent(&[5.0; 50], 5.0).is_err());
        assert!(powerlaw_exponent(&[5.0, 6.0, 7.0], 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn overlap_indices_bounded_symmetric(
            pairs in proptest::collection::vec((0.0f64..1e4, 0.0f64..1e4, proptest::bool::ANY, proptest::bool::ANY), 1..40),
            c in 0.01f64..100.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|&(a, _, za, _)| if za { 0.0 } else { a }).collect();
            let p: Vec<f64> = pairs.iter().map(|&(_, b, _, zb)| if zb { 0.0 } else { b }).collect();
            for v in [ssi(&y, &p).unwrap(), cpc(&y, &p).unwrap().0, cpl(&y, &p).unwrap().0] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((ssi(&y, &p).unwrap() - ssi(&p, &y).unwrap()).abs() < 1e-12);
            prop_assert!((cpc(&y, &p).unwrap().0 - cpc(&p, &y).unwrap().0).abs() < 1e-12);
            prop_assert_eq!(ssi(&y, &y).unwrap(), 1.0);
            prop_assert_eq!(cpc(&y, &y).unwrap().0, 1.0);
            prop_assert_eq!(cpl(&y, &y).unwrap().0, 1.0);
            if y.iter().any(|&v| v > 0.0) {
                let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
                let law = 2.0 * c.min(1.0) / (1.0 + c);
                prop_assert!((cpc(&y, &scaled).unwrap().0 - law).abs() < 1e-12);
            }
        }
    }
}
