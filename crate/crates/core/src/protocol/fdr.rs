//! False-discovery simulation over synthetic data, in plaintext.
//!
//! Each dataset has `attrs` columns of uniform integers in `[0, 100]` and
//! test `j` compares columns `j` and `j + 1` (wrapping when there are as
//! many tests as columns). Which tests are null is fixed by cutting the
//! column cycle into segments:
//!
//! * t and F: columns in one segment share a mean; neighbouring segments
//!   differ by `effect·σ`, so tests across a cut are non-null.
//! * Pearson: columns in one segment share a latent term with weight
//!   `effect`; different segments are independent, so tests across a cut
//!   are null.

use std::thread;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{p_value, SampleShape, TestKind};
use crate::ledger::{replay, AlphaParams, Decision};
use crate::pvalue::Sidedness;

/// Standard deviation of a uniform integer on `[0, 100]`.
pub const UNIFORM_0_100_SD: f64 = 29.154_759_474_226_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdrError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdrConfig {
    pub null_fractions: Vec<f64>,
    pub datasets: usize,
    pub attrs: usize,
    pub rows: usize,
    pub tests: usize,
    pub kinds: Vec<TestKind>,
    /// Level of the uncontrolled baseline.
    pub alpha: f64,
    /// α-investing `W(0)`, `β`, `γ`.
    pub w0: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Effect size for non-null tests, in standard deviations.
    pub effect: f64,
    pub seed: u64,
    /// Keep every p-value and wealth sequence in the report.
    pub keep_sequences: bool,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for FdrConfig {
    fn default() -> Self {
        Self {
            null_fractions: vec![0.25, 0.5, 0.75, 1.0],
            datasets: 100,
            attrs: 64,
            rows: 1000,
            tests: 64,
            kinds: vec![TestKind::TTest, TestKind::Pearson, TestKind::FTest],
            alpha: 0.05,
            w0: 0.05,
            beta: 0.5,
            gamma: 0.0125,
            effect: 0.5,
            seed: 0,
            keep_sequences: false,
            threads: 0,
        }
    }
}

impl FdrConfig {
    fn cyclic(&self) -> bool {
        self.tests == self.attrs
    }

    /// Number of non-null tests at `null_fraction`.
    pub fn non_nulls(&self, null_fraction: f64) -> usize {
        ((1.0 - null_fraction) * self.tests as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), FdrError> {
        let bad = |m: String| Err(FdrError::Config(m));
        if self.datasets == 0 || self.rows < 3 || self.attrs < 2 {
            return bad("need at least one dataset, two attributes and three rows".into());
        }
        if self.tests == 0 || self.tests > self.attrs {
            return bad(format!("tests must lie in 1..={}", self.attrs));
        }
        if self.kinds.is_empty() || self.kinds.contains(&TestKind::ChiSquared) {
            return bad("kinds must be a non-empty subset of TTEST, PEARSON, FTEST".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)".into());
        }
        AlphaParams::new(self.w0, self.beta, self.gamma).map_err(|e| FdrError::Config(e.to_string()))?;
        if !(self.effect.is_finite() && self.effect >= 0.0) {
            return bad("effect must be finite and nonnegative".into());
        }
        for &f in &self.null_fractions {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("null fraction {f} outside [0, 1]"));
            }
            // A cycle cannot be cut exactly once.
            if self.cyclic() {
                let non_null = self.non_nulls(f);
                if non_null == 1 || self.tests - non_null == 1 {
                    return bad(format!("null fraction {f} needs exactly one cut in a cycle"));
                }
            }
        }
        Ok(())
    }
}

/// One dataset's run of one test kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub p_values: Vec<f64>,
    pub is_null: Vec<bool>,
    /// `W(1..=tests)` under α-investing.
    pub wealth: Vec<f64>,
    pub fdp_uncontrolled: f64,
    pub fdp_investing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrRow {
    pub null_fraction: f64,
    pub kind: TestKind,
    pub mean_fdr_uncontrolled: f64,
    pub mean_fdr_investing: f64,
    /// Mean `W(j)` across datasets for `j = 0..=tests`.
    pub mean_wealth: Vec<f64>,
    pub min_wealth: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequences: Vec<Sequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrReport {
    pub config: FdrConfig,
    pub rows: Vec<FdrRow>,
}

impl FdrReport {
    /// Rows at one null fraction.
    pub fn at(&self, null_fraction: f64) -> impl Iterator<Item = &FdrRow> {
        self.rows.iter().filter(move |r| r.null_fraction == null_fraction)
    }

    /// Mean over test kinds of the per-kind mean FDR.
    pub fn pooled(&self, null_fraction: f64) -> (f64, f64) {
        let rows: Vec<&FdrRow> = self.at(null_fraction).collect();
        let k = rows.len().max(1) as f64;
        (
            rows.iter().map(|r| r.mean_fdr_uncontrolled).sum::<f64>() / k,
            rows.iter().map(|r| r.mean_fdr_investing).sum::<f64>() / k,
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("null_fraction  test     fdr_uncontrolled  fdr_alpha_investing  min_wealth\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<13.2}  {:<7}  {:<16.4}  {:<19.4}  {:.6}\n",
                r.null_fraction,
                r.kind.name(),
                r.mean_fdr_uncontrolled,
                r.mean_fdr_investing,
                r.min_wealth
            ));
        }
        out
    }
}

/// Segment index of every column given which tests cross a cut.
fn segments(cuts: &[bool], attrs: usize, cyclic: bool) -> Vec<usize> {
    let total = cuts.iter().filter(|c| **c).count();
    let mut seg = vec![0; attrs];
    let mut count = 0;
    for c in 1..attrs {
        if cuts.get(c - 1).copied().unwrap_or(false) {
            count += 1;
        }
        seg[c] = if cyclic && total > 0 { count % total } else { count };
    }
    seg
}

/// Mean level per segment such that neighbours always differ, including
/// across the wrap.
fn level(seg: usize, n_segments: usize, cyclic: bool) -> f64 {
    if cyclic && n_segments % 2 == 1 && seg == n_segments - 1 && n_segments > 1 {
        2.0
    } else {
        (seg % 2) as f64
    }
}

fn uniform_column(rng: &mut ChaCha20Rng, rows: usize) -> Vec<f64> {
    (0..rows).map(|_| rng.gen_range(0..=100u32) as f64).collect()
}

/// Generates one dataset and the null status of each test.
pub fn synthetic_dataset(
    config: &FdrConfig,
    kind: TestKind,
    null_fraction: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let cyclic = config.cyclic();
    let non_null = config.non_nulls(null_fraction);
    let mean_shift = kind != TestKind::Pearson;
    let n_cuts = if mean_shift { non_null } else { config.tests - non_null };
    let mut cuts = vec![false; config.tests];
    for i in sample(rng, config.tests, n_cuts) {
        cuts[i] = true;
    }
    let seg = segments(&cuts, config.attrs, cyclic);
    let n_segments = seg.iter().max().map(|m| m + 1).unwrap_or(1);
    let mut cols: Vec<Vec<f64>> = (0..config.attrs).map(|_| uniform_column(rng, config.rows)).collect();
    if mean_shift {
        let delta = config.effect * UNIFORM_0_100_SD;
        for (c, col) in cols.iter_mut().enumerate() {
            let shift = level(seg[c], n_segments, cyclic) * delta;
            col.iter_mut().for_each(|x| *x += shift);
        }
    } else {
        let latents: Vec<Vec<f64>> = (0..n_segments).map(|_| uniform_column(rng, config.rows)).collect();
        for (c, col) in cols.iter_mut().enumerate() {
            for (x, l) in col.iter_mut().zip(&latents[seg[c]]) {
                *x += config.effect * l;
            }
        }
    }
    let is_null = cuts.iter().map(|&cut| if mean_shift { !cut } else { cut }).collect();
    (cols, is_null)
}

fn mean_ss(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum())
}

/// Plaintext statistic with the same definitions as the circuits.
pub fn plaintext_statistic(kind: TestKind, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, ssx) = mean_ss(x);
    let (my, ssy) = mean_ss(y);
    match kind {
        TestKind::TTest => (mx - my) / ((ssx + ssy) / (2.0 * n - 2.0) * (2.0 / n)).sqrt(),
        TestKind::Pearson => {
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            sxy / (ssx * ssy).sqrt()
        }
        TestKind::FTest => {
            // two groups, within-group divisor n - k as in the circuit
            let k = 2.0;
            let m = (mx + my) / 2.0;
            let between = n * ((mx - m).powi(2) + (my - m).powi(2)) / (k - 1.0);
            between / ((ssx + ssy) / (n - k))
        }
        TestKind::ChiSquared => f64::NAN,
    }
}

fn fdp(decisions: impl Iterator<Item = (bool, bool)>) -> f64 {
    let (mut v, mut r) = (0usize, 0usize);
    for (rejected, null) in decisions {
        if rejected {
            r += 1;
            v += null as usize;
        }
    }
    if r == 0 {
        0.0
    } else {
        v as f64 / r as f64
    }
}

fn run_one(config: &FdrConfig, kind: TestKind, null_fraction: f64, seed: u64) -> Sequence {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (cols, is_null) = synthetic_dataset(config, kind, null_fraction, &mut rng);
    let shape = SampleShape { n: config.rows as u64, k: 2 };
    let p_values: Vec<f64> = (0..config.tests)
        .map(|j| {
            let (a, b) = (j % config.attrs, (j + 1) % config.attrs);
            let stat = plaintext_statistic(kind, &cols[a], &cols[b]);
            p_value(stat, kind, shape, Sidedness::TwoSided).unwrap_or(1.0)
        })
        .collect();
    let params = AlphaParams::new(config.w0, config.beta, config.gamma).expect("validated");
    let steps = replay(&params, &p_values).expect("wealth stays positive");
    let fdp_uncontrolled = fdp(p_values.iter().zip(&is_null).map(|(p, n)| (*p <= config.alpha, *n)));
    let fdp_investing = fdp(steps.iter().zip(&is_null).map(|(s, n)| (s.decision == Decision::Reject, *n)));
    let wealth = steps.iter().map(|s| s.next.wealth).collect();
    Sequence { p_values, is_null, wealth, fdp_uncontrolled, fdp_investing }
}

/// Seed of dataset `d` in cell `(fraction index, kind index)`.
fn dataset_seed(seed: u64, fi: usize, ki: usize, d: usize) -> u64 {
    let mut h = seed ^ 0x5354_4152_4644_5253;
    for v in [fi as u64, ki as u64, d as u64] {
        h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
    }
    h
}

pub fn fdr_sim(config: &FdrConfig) -> Result<FdrReport, FdrError> {
    config.validate()?;
    let threads = if config.threads == 0 {
        thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        config.threads
    };
    let mut rows = Vec::new();
    for (fi, &frac) in config.null_fractions.iter().enumerate() {
        for (ki, &kind) in config.kinds.iter().enumerate() {
            let idx: Vec<usize> = (0..config.datasets).collect();
            let chunk = config.datasets.div_ceil(threads);
            let seqs: Vec<Sequence> = thread::scope(|s| {
                let hs: Vec<_> = idx
                    .chunks(chunk)
                    .map(|ds| {
                        s.spawn(move || {
                            ds.iter()
                                .map(|&d| run_one(config, kind, frac, dataset_seed(config.seed, fi, ki, d)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                hs.into_iter().flat_map(|h| h.join().expect("simulation thread panicked")).collect()
            });
            let nd = seqs.len() as f64;
            let mut mean_wealth = vec![config.w0; config.tests + 1];
            for j in 0..config.tests {
                mean_wealth[j + 1] = seqs.iter().map(|s| s.wealth[j]).sum::<f64>() / nd;
            }
            let min_wealth = seqs.iter().flat_map(|s| s.wealth.iter().copied()).fold(config.w0, f64::min);
            rows.push(FdrRow {
                null_fraction: frac,
                kind,
                mean_fdr_uncontrolled: seqs.iter().map(|s| s.fdp_uncontrolled).sum::<f64>() / nd,
                mean_fdr_investing: seqs.iter().map(|s| s.fdp_investing).sum::<f64>() / nd,
                mean_wealth,
                min_wealth,
                sequences: if config.keep_sequences { seqs } else { Vec::new() },
            });
        }
    }
    Ok(FdrReport { config: config.clone(), rows })
}
