//! Offline, multi-pass EM used to check the online estimator.
//!
//! Two estimators live here: the two-coin Binomial EM and full batch EM for a
//! mixture of logistic regressions whose M-step solves each weighted logistic
//! regression by damped Newton (IRLS) iterations.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::fit::e_step;
use crate::model::{
    dot, init_model, log_density_unchecked, logistic, mixture_point_loglik, InitSpec, MixtureState,
    Observation,
};
use crate::par::{map_range, map_slice, ExecMode};

/// Coefficient magnitude above which a weighted fit is flagged as separated.
pub const SEPARATION_LIMIT: f64 = 30.0;

/// Components whose total responsibility falls below this are degenerate.
pub const COLLAPSE_MASS: f64 = 1e-8;

/// `C(n, h) θ^h (1-θ)^(n-h)`.
pub fn binomial_pmf(h: u32, n: u32, theta: f64) -> f64 {
    let h_small = h.min(n - h);
    let choose: f64 = (0..h_small)
        .map(|i| f64::from(n - i) / f64::from(i + 1))
        .product();
    choose * theta.powi(h as i32) * (1.0 - theta).powi((n - h) as i32)
}

/// Heads observed in each batch of `n_tosses` tosses of one unknown coin.
#[derive(Debug, Clone, PartialEq)]
pub struct CoinData {
    heads: Vec<u32>,
    n_tosses: u32,
}

impl CoinData {
    pub fn new(heads: Vec<u32>, n_tosses: u32) -> Result<Self> {
        if let Some(h) = heads.iter().find(|&&h| h > n_tosses) {
            return Err(Error::Validation(format!(
                "{h} heads exceeds {n_tosses} tosses"
            )));
        }
        Ok(Self { heads, n_tosses })
    }

    pub fn heads(&self) -> &[u32] {
        &self.heads
    }

    pub fn n_tosses(&self) -> u32 {
        self.n_tosses
    }
}

/// One EM iteration of the two-coin problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CoinIteration {
    /// Probability that each batch came from coin A, under the parameters
    /// entering this iteration.
    pub resp_a: Vec<f64>,
    pub theta_a: f64,
    pub theta_b: f64,
}

/// Two-coin EM from `theta0 = (θ_A, θ_B)`; one record per iteration.
pub fn em_two_coins(
    data: &CoinData,
    theta0: (f64, f64),
    iterations: usize,
) -> Result<Vec<CoinIteration>> {
    let unit = |t: f64| t > 0.0 && t < 1.0;
    if !(unit(theta0.0) && unit(theta0.1)) {
        return Err(Error::Domain(format!(
            "coin biases {theta0:?} must lie in (0, 1)"
        )));
    }
    let n = f64::from(data.n_tosses);
    let (mut ta, mut tb) = theta0;
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let resp_a: Vec<f64> = data
            .heads
            .iter()
            .map(|&h| {
                let fa = binomial_pmf(h, data.n_tosses, ta);
                let fb = binomial_pmf(h, data.n_tosses, tb);
                fa / (fa + fb)
            })
            .collect();
        let (mut heads_a, mut tosses_a, mut heads_b, mut tosses_b) = (0.0, 0.0, 0.0, 0.0);
        for (&h, &r) in data.heads.iter().zip(&resp_a) {
            heads_a += r * f64::from(h);
            tosses_a += r * n;
            heads_b += (1.0 - r) * f64::from(h);
            tosses_b += (1.0 - r) * n;
        }
        ta = heads_a / tosses_a;
        tb = heads_b / tosses_b;
        out.push(CoinIteration {
            resp_a,
            theta_a: ta,
            theta_b: tb,
        });
    }
    Ok(out)
}

/// A static collection of observations sharing one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StaticDataset {
    rows: Vec<Observation>,
}

impl StaticDataset {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let p = first.p();
            for r in &rows {
                if r.p() != p {
                    return Err(Error::StreamShape {
                        position: r.t_index(),
                        expected: p,
                        got: r.p(),
                    });
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// `None` for an empty dataset.
    pub fn p(&self) -> Option<usize> {
        self.rows.first().map(Observation::p)
    }

    pub fn into_rows(self) -> Vec<Observation> {
        self.rows
    }
}

/// `Σ_i log Σ_k α_k f_k(row_i)`.
pub fn full_loglik(state: &MixtureState, data: &StaticDataset) -> Result<f64> {
    data.rows
        .iter()
        .map(|r| mixture_point_loglik(state, r))
        .sum()
}

fn full_loglik_with(mode: ExecMode, state: &MixtureState, data: &StaticDataset) -> Result<f64> {
    let terms = map_slice(mode, &data.rows, |r| mixture_point_loglik(state, r));
    // Summed in row order so the result does not depend on the mode.
    terms.into_iter().sum()
}

/// Result of a weighted logistic regression fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFit {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Some coefficient exceeded [`SEPARATION_LIMIT`]; iteration stopped there.
    pub separation_suspect: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

fn weighted_objective(rows: &[Observation], weights: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(r, &w)| w * log_density_unchecked(r.x(), r.y(), beta))
        .sum()
}

/// Maximizes `Σ_i w_i log f(row_i; β)` by Newton steps with step halving.
pub fn weighted_logistic_ml(
    data: &StaticDataset,
    weights: &[f64],
    beta0: &[f64],
    options: IrlsOptions,
) -> Result<WeightedFit> {
    check_len(data.n(), weights.len())?;
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Domain("weights must lie in [0, 1]".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Domain("all weights are zero".into()));
    }
    let p = beta0.len();
    check_len(data.p().unwrap_or(p), p)?;

    let rows = data.rows();
    let mut beta = beta0.to_vec();
    let mut objective = weighted_objective(rows, weights, &beta);
    let mut fit = WeightedFit {
        beta: beta.clone(),
        iterations: 0,
        converged: false,
        separation_suspect: false,
    };

    for iter in 1..=options.max_iter {
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for (r, &w) in rows.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let prob = logistic(dot(r.x(), &beta));
            let resid = w * (r.y_f64() - prob);
            let curv = w * prob * (1.0 - prob);
            for i in 0..p {
                grad[i] += resid * r.x()[i];
                for j in 0..=i {
                    info[(i, j)] += curv * r.x()[i] * r.x()[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                info[(j, i)] = info[(i, j)];
            }
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => info
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Domain("weighted information matrix is singular".into()))?,
        };

        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_obj;
        loop {
            candidate = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            cand_obj = weighted_objective(rows, weights, &candidate);
            if cand_obj >= objective || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        if cand_obj < objective {
            // No ascent direction left at machine precision.
            fit.converged = true;
            break;
        }
        let max_change = step.iter().map(|s| (scale * s).abs()).fold(0.0, f64::max);
        beta = candidate;
        objective = cand_obj;
        fit.beta = beta.clone();
        fit.iterations = iter;
        if beta.iter().any(|b| b.abs() > SEPARATION_LIMIT) {
            fit.separation_suspect = true;
            break;
        }
        if max_change < options.tol {
            fit.converged = true;
            break;
        }
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEmOptions {
    pub iterations: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub irls: IrlsOptions,
    pub mode: ExecMode,
}

impl Default for BatchEmOptions {
    fn default() -> Self {
        Self {
            iterations: 100,
            tol: 1e-8,
            irls: IrlsOptions::default(),
            mode: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchFit {
    pub state: MixtureState,
    /// Full-data log-likelihood at the start and after each iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Components whose last M-step was flagged as separated.
    pub separation_suspect: Vec<bool>,
}

/// Batch EM for a `k`-component mixture of logistic regressions.
pub fn batch_em_fmlr(
    data: &StaticDataset,
    k: usize,
    init: &InitSpec,
    options: BatchEmOptions,
) -> Result<BatchFit> {
    if init.k != k {
        return Err(Error::Validation(format!(
            "init has {} components, expected {k}",
            init.k
        )));
    }
    if data.n() < k {
        return Err(Error::Validation(format!(
            "{} rows cannot support {k} components",
            data.n()
        )));
    }
    let mut state = init_model(init)?;
    check_len(state.p(), data.p().unwrap_or(state.p()))?;
    let n = data.n() as f64;
    let mode = options.mode;

    let mut trace = vec![full_loglik_with(mode, &state, data)?];
    let mut separation = vec![false; k];
    let mut converged = false;

    for _ in 0..options.iterations {
        let resp: Vec<Vec<f64>> = map_slice(mode, data.rows(), |r| e_step(&state, r))
            .into_iter()
            .collect::<Result<_>>()?;
        let weights: Vec<Vec<f64>> = (0..k)
            .map(|c| resp.iter().map(|z| z[c]).collect())
            .collect();
        for (component, w) in weights.iter().enumerate() {
            let mass: f64 = w.iter().sum();
            if mass < COLLAPSE_MASS {
                return Err(Error::DegenerateFit { component, mass });
            }
        }
        let fits = map_range(mode, k, |c| {
            weighted_logistic_ml(data, &weights[c], &state.beta()[c], options.irls)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let alpha: Vec<f64> = weights.iter().map(|w| w.iter().sum::<f64>() / n).collect();
        let total: f64 = alpha.iter().sum();
        let alpha = alpha.iter().map(|a| a / total).collect();
        separation = fits.iter().map(|f| f.separation_suspect).collect();
        state = MixtureState::from_parts(alpha, fits.into_iter().map(|f| f.beta).collect());

        let ll = full_loglik_with(mode, &state, data)?;
        let gain = ll - trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        trace.push(ll);
        if gain.abs() < options.tol {
            converged = true;
            break;
        }
    }
    Ok(BatchFit {
        state,
        loglik_trace: trace,
        converged,
        separation_suspect: separation,
    })
}
