//! Stochastic gradient ascent for a single logistic regression.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{dot, logistic, Observation};

/// Learn-rate rule `γ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnRateSchedule {
    /// Constant rate; acts as a smooth moving window over the stream.
    Fixed { gamma0: f64 },
    /// `gamma0 * t^(-exponent)` with exponent in `[0.5, 1]`.
    Decaying { gamma0: f64, exponent: f64 },
}

impl Default for LearnRateSchedule {
    /// `t^(-1/2)`.
    fn default() -> Self {
        Self::Decaying {
            gamma0: 1.0,
            exponent: 0.5,
        }
    }
}

impl LearnRateSchedule {
    pub fn fixed(gamma0: f64) -> Result<Self> {
        let s = Self::Fixed { gamma0 };
        s.validate()?;
        Ok(s)
    }

    pub fn decaying(gamma0: f64, exponent: f64) -> Result<Self> {
        let s = Self::Decaying { gamma0, exponent };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let gamma0 = match *self {
            Self::Fixed { gamma0 } => gamma0,
            Self::Decaying { gamma0, exponent } => {
                // 0.5 itself is admitted: it is the package default t^(-1/2).
                if !(0.5..=1.0).contains(&exponent) {
                    return Err(Error::Validation(format!(
                        "decay exponent {exponent} outside [0.5, 1]"
                    )));
                }
                gamma0
            }
        };
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            return Err(Error::Validation(format!(
                "gamma0 must be positive, got {gamma0}"
            )));
        }
        Ok(())
    }

    /// Rate for the `t`-th observation (1-based).
    pub fn rate_at(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain("learn rate is defined for t >= 1".into()));
        }
        Ok(match *self {
            Self::Fixed { gamma0 } => gamma0,
            Self::Decaying { gamma0, exponent } => gamma0 * (t as f64).powf(-exponent),
        })
    }
}

/// Gradient of the Bernoulli log-likelihood: `(y - p(x)) x`.
pub fn loglik_gradient(beta: &[f64], obs: &Observation) -> Result<Vec<f64>> {
    check_len(beta.len(), obs.p())?;
    let resid = obs.y_f64() - logistic(dot(obs.x(), beta));
    Ok(obs.x().iter().map(|x| resid * x).collect())
}

/// In-place weighted step `β += γ w (y - p(x)) x`.
#[inline]
pub(crate) fn sgd_step_in_place(beta: &mut [f64], obs: &Observation, gamma: f64, weight: f64) {
    let scale = gamma * weight * (obs.y_f64() - logistic(dot(obs.x(), beta)));
    for (b, x) in beta.iter_mut().zip(obs.x()) {
        *b += scale * x;
    }
}

/// One weighted SGD step; `weight = 1` is plain SGD.
pub fn sgd_step(beta: &[f64], obs: &Observation, gamma: f64, weight: f64) -> Result<Vec<f64>> {
    check_len(beta.len(), obs.p())?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!(
            "learn rate must be positive, got {gamma}"
        )));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Domain(format!("weight {weight} outside [0, 1]")));
    }
    let mut next = beta.to_vec();
    sgd_step_in_place(&mut next, obs, gamma, weight);
    Ok(next)
}

/// Streams `data` through plain SGD from `beta0`, returning the coefficients
/// after every observation.
pub fn sgd_trajectory(
    beta0: &[f64],
    data: &[Observation],
    schedule: &LearnRateSchedule,
) -> Result<Vec<Vec<f64>>> {
    let mut beta = beta0.to_vec();
    let mut out = Vec::with_capacity(data.len());
    for (i, obs) in data.iter().enumerate() {
        beta = sgd_step(&beta, obs, schedule.rate_at(i as u64 + 1)?, 1.0)?;
        out.push(beta.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_component_density;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(y: u8, x: &[f64]) -> Observation {
        Observation::new(y, x.to_vec(), 1).unwrap()
    }

    #[test]
    fn rates() {
        let fixed = LearnRateSchedule::fixed(0.1).unwrap();
        assert_eq!(fixed.rate_at(999).unwrap(), 0.1);
        let sqrt = LearnRateSchedule::decaying(1.0, 0.5).unwrap();
        assert_eq!(sqrt.rate_at(4).unwrap(), 0.5);
        let inv = LearnRateSchedule::decaying(1.0, 1.0).unwrap();
        assert!((inv.rate_at(10).unwrap() - 0.1).abs() < 1e-16);
        assert!(fixed.rate_at(0).is_err());
        assert!(LearnRateSchedule::fixed(0.0).is_err());
        assert!(LearnRateSchedule::decaying(1.0, 1.5).is_err());
        assert_eq!(LearnRateSchedule::default(), sqrt);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(
            loglik_gradient(&[0.0, 0.0], &obs(1, &[1.0, 2.0])).unwrap(),
            vec![0.5, 1.0]
        );
        let x = [1.0, 3.4];
        let g = loglik_gradient(&[0.0, 35.0 / 3.4], &obs(0, &x)).unwrap();
        for (gi, xi) in g.iter().zip(x) {
            assert!((gi + xi).abs() <= 1e-12 * xi.abs());
        }
        assert!(loglik_gradient(&[0.0], &obs(0, &x)).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..200 {
            let beta: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let o = obs(rng.gen_range(0..2), &x);
            let g = loglik_gradient(&beta, &o).unwrap();
            for j in 0..3 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (log_component_density(&o, &up).unwrap()
                    - log_component_density(&o, &dn).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn step_examples() {
        let o = obs(1, &[1.0, 2.0]);
        let beta = [0.3, -1.7];
        let same = sgd_step(&beta, &o, 0.4, 0.0).unwrap();
        assert_eq!(same[0].to_bits(), beta[0].to_bits());
        assert_eq!(same[1].to_bits(), beta[1].to_bits());
        let next = sgd_step(&[0.0, 0.0], &o, 0.1, 1.0).unwrap();
        assert!((next[0] - 0.05).abs() < 1e-17 && (next[1] - 0.10).abs() < 1e-17);
        assert!(sgd_step(&beta, &o, -1.0, 1.0).is_err());
        assert!(sgd_step(&beta, &o, 0.1, 1.5).is_err());
    }

    #[test]
    fn two_steps_match_hand_arithmetic() {
        // Toy rows: (y=1, x=(1, 2)), (y=0, x=(1, -1)), (y=1, x=(1, 0.5)).
        let rows = [
            obs(1, &[1.0, 2.0]),
            obs(0, &[1.0, -1.0]),
            obs(1, &[1.0, 0.5]),
        ];
        let gamma = 0.1;
        let traj = sgd_trajectory(
            &[0.0, 0.0],
            &rows[..2],
            &LearnRateSchedule::fixed(gamma).unwrap(),
        )
        .unwrap();
        // Step 1 from zero: p = 1/2, beta = 0.1 * 0.5 * (1, 2) = (0.05, 0.1).
        let b1 = [0.05, 0.1];
        // Step 2: u = 0.05 - 0.1 = -0.05, p = 1/(1+e^{0.05}).
        let p = 1.0 / (1.0 + 0.05f64.exp());
        let b2 = [0.05 + gamma * (0.0 - p) * 1.0, 0.1 - gamma * (0.0 - p)];
        for j in 0..2 {
            assert!((traj[0][j] - b1[j]).abs() <= 1e-14);
            assert!((traj[1][j] - b2[j]).abs() <= 1e-14);
        }
    }

    #[test]
    fn step_is_linear_in_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let beta: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x = [1.0, rng.gen_range(-5.0..5.0)];
            let o = obs(rng.gen_range(0..2), &x);
            let w: f64 = rng.gen();
            let full = sgd_step(&beta, &o, 0.3, 1.0).unwrap();
            let part = sgd_step(&beta, &o, 0.3, w).unwrap();
            for j in 0..2 {
                let lhs = part[j] - beta[j];
                let rhs = w * (full[j] - beta[j]);
                assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * beta[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn holdout_likelihood_rises_on_separable_data() {
        // 1-D separable data: y = 1 iff x > 0.
        let xs: Vec<f64> = (1..=20).map(|i| (i as f64 - 10.5) / 4.0).collect();
        let data: Vec<Observation> = xs.iter().map(|&x| obs(u8::from(x > 0.0), &[x])).collect();
        let holdout: Vec<Observation> = [-2.2, -0.7, 0.4, 1.9]
            .iter()
            .map(|&x: &f64| obs(u8::from(x > 0.0), &[x]))
            .collect();
        let ll = |b: &[f64]| -> f64 {
            holdout
                .iter()
                .map(|o| log_component_density(o, b).unwrap())
                .sum()
        };
        let schedule = LearnRateSchedule::default();
        let mut beta = vec![0.0];
        let mut t = 0u64;
        let mut prev = ll(&beta);
        for _epoch in 0..30 {
            for o in &data {
                t += 1;
                beta = sgd_step(&beta, o, schedule.rate_at(t).unwrap(), 1.0).unwrap();
            }
            let cur = ll(&beta);
            assert!(cur >= prev - 1e-8, "{cur} < {prev}");
            prev = cur;
        }
    }
}
