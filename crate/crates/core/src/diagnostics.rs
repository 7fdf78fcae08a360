//! Streaming convergence and model-selection statistics.
//!
//! Every windowed quantity uses the same update: a streaming mean whose
//! denominator is `min(t, m)`. Up to `t = m` this is the exact running mean;
//! afterwards older points decay geometrically at rate `1 - 1/m`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    component_log_densities, log_weights, normalize_log_weights, MixtureState, Observation,
};

/// Default window length `m`.
pub const DEFAULT_WINDOW: u64 = 1000;

/// Mixing weights below this raise [`DiagnosticsWindow::low_alpha_warning`].
pub const LOW_ALPHA: f64 = 1e-4;

/// Distinct values tracked per feature before the counter saturates.
pub const UNIQUE_CAP: usize = 10_000;

/// Windowed streaming statistics owned by one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsWindow {
    window: u64,
    delta_norm_bar: f64,
    ll_bar: f64,
    max_ll_bar: f64,
    prev_norm: f64,
    t_seen: u64,
    low_alpha_warning: bool,
    unique: UniqueTracker,
}

impl Default for DiagnosticsWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW).expect("default window is positive")
    }
}

fn streaming_mean(current: f64, value: f64, t: u64, window: u64) -> f64 {
    current + (value - current) / t.min(window) as f64
}

fn check_t(t: u64) -> Result<()> {
    if t == 0 {
        Err(Error::Domain("diagnostics are defined for t >= 1".into()))
    } else {
        Ok(())
    }
}

impl DiagnosticsWindow {
    pub fn new(window: u64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Validation("window length must be at least 1".into()));
        }
        Ok(Self {
            window,
            delta_norm_bar: 0.0,
            ll_bar: 0.0,
            max_ll_bar: 0.0,
            prev_norm: 0.0,
            t_seen: 0,
            low_alpha_warning: false,
            unique: UniqueTracker::default(),
        })
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn delta_norm_bar(&self) -> f64 {
        self.delta_norm_bar
    }

    pub fn ll_bar(&self) -> f64 {
        self.ll_bar
    }

    pub fn max_ll_bar(&self) -> f64 {
        self.max_ll_bar
    }

    pub fn prev_norm(&self) -> f64 {
        self.prev_norm
    }

    pub fn t_seen(&self) -> u64 {
        self.t_seen
    }

    pub fn low_alpha_warning(&self) -> bool {
        self.low_alpha_warning
    }

    pub fn unique(&self) -> &UniqueTracker {
        &self.unique
    }

    /// `min(t, m)`.
    pub fn effective_window(&self, t: u64) -> u64 {
        t.min(self.window)
    }

    /// Folds the parameter norm after step `t` into the windowed mean of
    /// absolute norm changes. The change at `t = 1` counts as zero.
    pub fn update_norm_delta(&mut self, new_norm: f64, t: u64) -> Result<()> {
        check_t(t)?;
        if !(new_norm.is_finite() && new_norm >= 0.0) {
            return Err(Error::Domain(format!(
                "norm must be nonnegative, got {new_norm}"
            )));
        }
        let change = if t == 1 {
            0.0
        } else {
            (new_norm - self.prev_norm).abs()
        };
        self.delta_norm_bar = streaming_mean(self.delta_norm_bar, change, t, self.window);
        self.prev_norm = new_norm;
        self.t_seen = t;
        Ok(())
    }

    /// Folds the log-likelihood of the point arriving at `t`.
    pub fn update_stream_loglik(&mut self, ll_point: f64, t: u64) -> Result<()> {
        check_t(t)?;
        check_loglik(ll_point)?;
        self.ll_bar = streaming_mean(self.ll_bar, ll_point, t, self.window);
        self.t_seen = t;
        Ok(())
    }

    pub(crate) fn fold_max_assign(&mut self, ll_point: f64, t: u64) -> Result<()> {
        check_t(t)?;
        check_loglik(ll_point)?;
        self.max_ll_bar = streaming_mean(self.max_ll_bar, ll_point, t, self.window);
        self.t_seen = t;
        Ok(())
    }

    /// Folds the log-likelihood of `obs` under its most probable component.
    pub fn update_max_assign_loglik(
        &mut self,
        state: &MixtureState,
        obs: &Observation,
        t: u64,
    ) -> Result<()> {
        let ll = component_log_densities(state, obs)?;
        let (_, z) = normalize_log_weights(&log_weights(state.alpha(), &ll));
        let best = argmax(&z)?;
        self.fold_max_assign(ll[best], t)
    }

    pub fn update_low_alpha(&mut self, alpha: &[f64]) {
        self.low_alpha_warning = alpha.iter().any(|&a| a < LOW_ALPHA);
    }

    pub fn track_unique(&mut self, obs: &Observation) {
        self.unique.observe(obs.x());
    }

    /// Streaming AIC: `2 k - 2 l̄ min(t, m)`.
    pub fn saic(&self, nparams: usize, t: u64) -> Result<f64> {
        let w = self.defined_window(t)?;
        Ok(2.0 * nparams as f64 - 2.0 * self.ll_bar * w)
    }

    /// Streaming BIC: `k ln(min(t, m)) - 2 l̄ min(t, m)`.
    pub fn sbic(&self, nparams: usize, t: u64) -> Result<f64> {
        let w = self.defined_window(t)?;
        Ok(nparams as f64 * w.ln() - 2.0 * self.ll_bar * w)
    }

    fn defined_window(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain(
                "information criteria need at least one observation".into(),
            ));
        }
        Ok(self.effective_window(t) as f64)
    }

    #[cfg(test)]
    pub(crate) fn set_ll_bar(&mut self, v: f64) {
        self.ll_bar = v;
    }
}

fn check_loglik(ll: f64) -> Result<()> {
    if !ll.is_finite() || ll > 0.0 {
        return Err(Error::Domain(format!(
            "point log-likelihood must be finite and nonpositive, got {ll}"
        )));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            return Err(Error::Invariant("responsibility is NaN".into()));
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::Invariant("no components".into()))
}

/// Free parameters of a `k`-component mixture with `p` coefficients each.
pub fn nparams(k: usize, p: usize) -> usize {
    k * p + k - 1
}

/// Components identifiable from one predictor with `q` distinct values:
/// `floor(sqrt(q + 2) - 1)`.
pub fn identifiability_bound_continuous(q: usize) -> usize {
    let b = ((q as f64 + 2.0).sqrt() - 1.0).floor();
    if b <= 0.0 {
        0
    } else {
        b as usize
    }
}

/// Components identifiable from Binomial groups of `m_group` trials:
/// `floor((m + 1) / 2)`.
pub fn identifiability_bound_grouped(m_group: usize) -> usize {
    m_group.div_ceil(2)
}

/// Number of distinct values seen for a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistinctCount {
    Exact(usize),
    /// At least this many distinct values.
    Saturated(usize),
}

/// An upper bound on the number of identifiable components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentBound {
    Exact(usize),
    AtLeast(usize),
}

impl ComponentBound {
    pub fn value(&self) -> usize {
        match *self {
            Self::Exact(v) | Self::AtLeast(v) => v,
        }
    }
}

impl fmt::Display for ComponentBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exact(v) => write!(f, "{v}"),
            Self::AtLeast(v) => write!(f, ">= {v}"),
        }
    }
}

/// Advisor output: the feature that limits identifiability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentifiabilityAdvice {
    pub feature: usize,
    pub distinct: DistinctCount,
    pub bound: ComponentBound,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct DistinctCounter {
    values: BTreeSet<u64>,
    saturated: bool,
}

impl DistinctCounter {
    fn insert(&mut self, v: f64) {
        if self.saturated {
            return;
        }
        // +0 and -0 are the same predictor value.
        let v = if v == 0.0 { 0.0 } else { v };
        self.values.insert(v.to_bits());
        if self.values.len() >= UNIQUE_CAP {
            self.saturated = true;
        }
    }

    fn count(&self) -> DistinctCount {
        if self.saturated {
            DistinctCount::Saturated(UNIQUE_CAP)
        } else {
            DistinctCount::Exact(self.values.len())
        }
    }
}

/// Bounded per-feature distinct-value counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UniqueTracker {
    features: Vec<DistinctCounter>,
}

impl UniqueTracker {
    pub fn observe(&mut self, x: &[f64]) {
        if self.features.len() < x.len() {
            self.features.resize_with(x.len(), DistinctCounter::default);
        }
        for (c, &v) in self.features.iter_mut().zip(x) {
            c.insert(v);
        }
    }

    pub fn distinct(&self, feature: usize) -> Option<DistinctCount> {
        self.features.get(feature).map(DistinctCounter::count)
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Tightest bound over all features except the intercept column (index 0
    /// when `intercept` is set). A single component is always admissible, so
    /// the reported bound is at least 1.
    pub fn advise(&self, intercept: bool) -> Option<IdentifiabilityAdvice> {
        let skip = usize::from(intercept);
        self.features
            .iter()
            .enumerate()
            .skip(skip)
            .map(|(feature, c)| {
                let distinct = c.count();
                let bound = match distinct {
                    DistinctCount::Exact(q) => {
                        ComponentBound::Exact(identifiability_bound_continuous(q).max(1))
                    }
                    DistinctCount::Saturated(cap) => {
                        ComponentBound::AtLeast(identifiability_bound_continuous(cap))
                    }
                };
                IdentifiabilityAdvice {
                    feature,
                    distinct,
                    bound,
                }
            })
            .min_by_key(|a| {
                (
                    a.bound.value(),
                    matches!(a.bound, ComponentBound::AtLeast(_)),
                )
            })
    }
}
