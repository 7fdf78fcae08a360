//! Numerical primitives shared by every estimator: the logistic link, the
//! Bernoulli component density, the mixture point log-likelihood and random
//! model initialization.
//!
//! All densities are evaluated in log space. The linear predictor is clamped
//! to `[-LINEAR_CLAMP, LINEAR_CLAMP]` so that component probabilities stay
//! strictly inside `(0, 1)` and every log term is finite.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Bound applied to the linear predictor before exponentiation.
pub const LINEAR_CLAMP: f64 = 35.0;

/// Tolerance used when validating that mixing weights lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// One row of a stream: binary outcome plus feature vector.
///
/// When an intercept is modelled, `x[0]` is the literal constant `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    y: u8,
    x: Vec<f64>,
    t_index: u64,
}

impl Observation {
    pub fn new(y: u8, x: Vec<f64>, t_index: u64) -> Result<Self> {
        if y > 1 {
            return Err(Error::Domain(format!("outcome must be 0 or 1, got {y}")));
        }
        if x.is_empty() {
            return Err(Error::Domain("feature vector must be non-empty".into()));
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("feature {bad} is not finite")));
        }
        Ok(Self { y, x, t_index })
    }

    pub fn y(&self) -> u8 {
        self.y
    }

    /// The outcome as a float, for arithmetic.
    pub fn y_f64(&self) -> f64 {
        f64::from(self.y)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t_index(&self) -> u64 {
        self.t_index
    }

    pub fn p(&self) -> usize {
        self.x.len()
    }

    /// Replaces the feature vector, keeping outcome and arrival ordinal.
    pub(crate) fn with_x(&self, x: Vec<f64>) -> Self {
        Self {
            y: self.y,
            x,
            t_index: self.t_index,
        }
    }
}

/// Mixing probabilities plus one coefficient vector per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    alpha: Vec<f64>,
    beta: Vec<Vec<f64>>,
}

impl MixtureState {
    pub fn new(alpha: Vec<f64>, beta: Vec<Vec<f64>>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Validation(
                "mixture needs at least one component".into(),
            ));
        }
        check_len(alpha.len(), beta.len())?;
        validate_simplex(&alpha, SIMPLEX_TOL)?;
        let p = beta[0].len();
        if p == 0 {
            return Err(Error::Validation(
                "coefficient vectors must be non-empty".into(),
            ));
        }
        for b in &beta {
            check_len(p, b.len())?;
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("coefficients must be finite".into()));
            }
        }
        Ok(Self { alpha, beta })
    }

    /// Builds a state without validation; used on hot paths where the
    /// caller already maintains the invariants.
    pub(crate) fn from_parts(alpha: Vec<f64>, beta: Vec<Vec<f64>>) -> Self {
        Self { alpha, beta }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.beta[0].len()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<Vec<f64>>) {
        (&mut self.alpha, &mut self.beta)
    }

    /// Euclidean norm of all coefficients followed by all mixing weights.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .beta
            .iter()
            .flatten()
            .chain(self.alpha.iter())
            .map(|v| v * v)
            .sum();
        sq.sqrt()
    }

    /// Reorders components so that new component `i` is old component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_len(self.k(), perm.len())?;
        let mut seen = vec![false; self.k()];
        for &i in perm {
            if i >= self.k() || seen[i] {
                return Err(Error::Validation(format!("{perm:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Self {
            alpha: perm.iter().map(|&i| self.alpha[i]).collect(),
            beta: perm.iter().map(|&i| self.beta[i].clone()).collect(),
        })
    }

    /// Component order used for reporting: descending alpha, ties broken by
    /// lexicographic comparison of the coefficient vectors.
    pub fn display_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| {
            self.alpha[b]
                .total_cmp(&self.alpha[a])
                .then_with(|| lexicographic(&self.beta[a], &self.beta[b]))
        });
        idx
    }

    /// Copy of the state with components in [`display_order`](Self::display_order).
    pub fn sorted(&self) -> Self {
        self.permuted(&self.display_order())
            .expect("display order is a permutation")
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

pub(crate) fn validate_simplex(alpha: &[f64], tol: f64) -> Result<()> {
    if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Validation(format!(
            "mixing weights must lie in [0, 1]: {alpha:?}"
        )));
    }
    let total = canonical_sum(alpha);
    if (total - 1.0).abs() > tol {
        return Err(Error::Validation(format!(
            "mixing weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Sum whose result does not depend on the order of the inputs: terms are
/// added in descending order.
pub(crate) fn canonical_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().sum()
}

/// Normalizes log-weights into probabilities.
///
/// Returns `(log Σ exp w, exp(w - max) / Σ)`. Both outputs are invariant
/// (bitwise) under permutation of the inputs.
pub(crate) fn normalize_log_weights(log_weights: &[f64]) -> (f64, Vec<f64>) {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, vec![f64::NAN; log_weights.len()]);
    }
    let scaled: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total = canonical_sum(&scaled);
    let probs = scaled.iter().map(|s| s / total).collect();
    (max + total.ln(), probs)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn clamp_linear(u: f64) -> f64 {
    u.clamp(-LINEAR_CLAMP, LINEAR_CLAMP)
}

/// Logistic function on an already-finite argument.
#[inline]
pub(crate) fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-clamp_linear(u)).exp())
}

/// The logistic link `1 / (1 + e^{-u})` with the argument clamped to `|u| <= 35`.
pub fn sigmoid(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("sigmoid argument {u} is not finite")));
    }
    Ok(logistic(u))
}

#[inline]
pub(crate) fn log_density_unchecked(x: &[f64], y: u8, beta: &[f64]) -> f64 {
    let u = clamp_linear(dot(x, beta));
    if y == 1 {
        -(-u).exp().ln_1p()
    } else {
        -u.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of `obs` under a single logistic regression.
pub fn log_component_density(obs: &Observation, beta: &[f64]) -> Result<f64> {
    check_len(obs.p(), beta.len())?;
    Ok(log_density_unchecked(obs.x(), obs.y(), beta))
}

/// Log-density of `obs` under each component, without the mixing weight.
pub fn component_log_densities(state: &MixtureState, obs: &Observation) -> Result<Vec<f64>> {
    check_len(state.p(), obs.p())?;
    Ok(state
        .beta()
        .iter()
        .map(|b| log_density_unchecked(obs.x(), obs.y(), b))
        .collect())
}

pub(crate) fn log_weights(alpha: &[f64], component_ll: &[f64]) -> Vec<f64> {
    alpha
        .iter()
        .zip(component_ll)
        .map(|(a, l)| a.ln() + l)
        .collect()
}

/// `log Σ_k α_k f_k(obs)`, evaluated with log-sum-exp.
pub fn mixture_point_loglik(state: &MixtureState, obs: &Observation) -> Result<f64> {
    let ll = component_log_densities(state, obs)?;
    Ok(normalize_log_weights(&log_weights(state.alpha(), &ll)).0)
}

/// How the initial mixing weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlphaInit {
    Uniform,
    Explicit(Vec<f64>),
}

/// Parameters for [`init_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub k: usize,
    pub p: usize,
    pub alpha: AlphaInit,
    pub beta_range: (f64, f64),
    pub seed: u64,
}

impl InitSpec {
    /// Uniform weights and coefficients drawn from `(-1, 1)`.
    pub fn new(k: usize, p: usize, seed: u64) -> Self {
        Self {
            k,
            p,
            alpha: AlphaInit::Uniform,
            beta_range: (-1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 {
            return Err(Error::Validation("k and p must be positive".into()));
        }
        let (lo, hi) = self.beta_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!(
                "coefficient range ({lo}, {hi}) needs finite low < high"
            )));
        }
        if let AlphaInit::Explicit(a) = &self.alpha {
            check_len(self.k, a.len())?;
            validate_simplex(a, SIMPLEX_TOL)?;
        }
        Ok(())
    }
}

/// Draws a starting state. Identical specs produce bitwise identical states.
pub fn init_model(spec: &InitSpec) -> Result<MixtureState> {
    spec.validate()?;
    let alpha = match &spec.alpha {
        AlphaInit::Uniform => vec![1.0 / spec.k as f64; spec.k],
        AlphaInit::Explicit(a) => a.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.beta_range;
    let beta = (0..spec.k)
        .map(|_| (0..spec.p).map(|_| rng.gen_range(lo..hi)).collect())
        .collect();
    Ok(MixtureState::from_parts(alpha, beta))
}
