//! Synthetic mixture streams.
//!
//! Row `i` is generated from its own ChaCha8 stream (`seed`, stream id `i`),
//! so datasets are reproducible across platforms and rows can be produced
//! in any order or in parallel.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::StaticDataset;
use crate::error::{check_len, Error, Result};
use crate::model::{dot, logistic, validate_simplex, Observation, SIMPLEX_TOL};
use crate::par::{map_range, ExecMode};

/// Generator settings. `beta` holds one length-`p` vector per component;
/// with `intercept` on, `x[0]` is fixed at 1 and `p - 1` coordinates are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub x_range: (f64, f64),
    pub intercept: bool,
    pub seed: u64,
}

impl GenSpec {
    /// `x` uniform on `(-5, 5)` with an intercept.
    pub fn new(n: usize, alpha: Vec<f64>, beta: Vec<Vec<f64>>, seed: u64) -> Self {
        Self {
            n,
            alpha,
            beta,
            x_range: (-5.0, 5.0),
            intercept: true,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::Validation(
                "at least one component is required".into(),
            ));
        }
        check_len(self.k(), self.beta.len())?;
        validate_simplex(&self.alpha, SIMPLEX_TOL)?;
        let p = self.p();
        if p == 0 || (self.intercept && p < 1) {
            return Err(Error::Validation("p must be positive".into()));
        }
        for b in &self.beta {
            check_len(p, b.len())?;
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("coefficients must be finite".into()));
            }
        }
        let (lo, hi) = self.x_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!(
                "x range ({lo}, {hi}) needs low < high"
            )));
        }
        Ok(())
    }
}

/// A generated dataset with its hidden component labels (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub data: StaticDataset,
    pub labels: Vec<usize>,
}

fn draw_component(alpha: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, a) in alpha.iter().enumerate() {
        acc += a;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the cumulative sum: last component with mass.
    alpha.iter().rposition(|&a| a > 0.0).unwrap_or(0)
}

fn generate_row(spec: &GenSpec, row: usize) -> (Observation, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(row as u64);
    let z = draw_component(&spec.alpha, rng.gen::<f64>());
    let (lo, hi) = spec.x_range;
    let p = spec.p();
    let mut x = Vec::with_capacity(p);
    if spec.intercept {
        x.push(1.0);
    }
    while x.len() < p {
        x.push(rng.gen_range(lo..hi));
    }
    let y = u8::from(rng.gen::<f64>() < logistic(dot(&x, &spec.beta[z])));
    let obs = Observation::new(y, x, row as u64 + 1).expect("generated rows are valid");
    (obs, z)
}

/// Draws `spec.n` rows: component `z ~ Categorical(α)`, features uniform on
/// `x_range`, outcome `y ~ Bernoulli(sigmoid(x·β_z))`.
pub fn generate_mixture(spec: &GenSpec) -> Result<Generated> {
    generate_mixture_with(spec, ExecMode::default())
}

pub fn generate_mixture_with(spec: &GenSpec, mode: ExecMode) -> Result<Generated> {
    spec.validate()?;
    let (rows, labels) = map_range(mode, spec.n, |i| generate_row(spec, i))
        .into_iter()
        .unzip();
    Ok(Generated {
        data: StaticDataset::new(rows)?,
        labels,
    })
}

/// Writes a `y,x1,x2,...` CSV. With `intercept` set the leading constant
/// column is left out, so reading the file back with an intercept restores
/// the original feature vectors.
pub fn write_csv<W: Write>(data: &StaticDataset, intercept: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let skip = usize::from(intercept);
    let p = data.p().unwrap_or(0).saturating_sub(skip);
    let mut header = vec!["y".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in data.rows() {
        let mut rec = vec![r.y().to_string()];
        rec.extend(r.x().iter().skip(skip).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the hidden labels as a one-column CSV `z` with 1-based components.
pub fn write_labels_csv<W: Write>(labels: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z"])?;
    for z in labels {
        w.write_record([(z + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}
