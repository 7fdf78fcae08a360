//! Online EM for a finite mixture of logistic regressions.
//!
//! Each arriving observation triggers one E-step (posterior component
//! responsibilities under the current parameters) and one M-step (a
//! responsibility-weighted SGD step per component and a running average of
//! the responsibilities for the mixing weights).

use serde::{Deserialize, Serialize};

use crate::diagnostics::{argmax, nparams, DiagnosticsWindow, IdentifiabilityAdvice};
use crate::error::{check_len, Error, Result};
use crate::model::{
    canonical_sum, component_log_densities, log_weights, normalize_log_weights, MixtureState,
    Observation,
};
use crate::sgd::{sgd_step_in_place, LearnRateSchedule};

/// Drift in `Σ α` beyond which the weights are renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-12;

/// Below this windowed norm change a fit is reported as settled.
pub const CONVERGENCE_NOTE: f64 = 1e-3;

/// Posterior responsibilities of each component for `obs`.
pub fn e_step(model: &MixtureState, obs: &Observation) -> Result<Vec<f64>> {
    let ll = component_log_densities(model, obs)?;
    responsibilities(model, &ll).map(|(_, z)| z)
}

fn responsibilities(model: &MixtureState, component_ll: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (lse, z) = normalize_log_weights(&log_weights(model.alpha(), component_ll));
    if !lse.is_finite() {
        return Err(Error::Invariant("all mixing weights are zero".into()));
    }
    Ok((lse, z))
}

fn m_step_in_place(model: &mut MixtureState, obs: &Observation, z: &[f64], t: u64, gamma: f64) {
    let (alpha, beta) = model.parts_mut();
    for (b, &w) in beta.iter_mut().zip(z) {
        sgd_step_in_place(b, obs, gamma, w);
    }
    let t = t as f64;
    for (a, &w) in alpha.iter_mut().zip(z) {
        *a += (w - *a) / t;
    }
    let total = canonical_sum(alpha);
    if (total - 1.0).abs() > RENORMALIZE_TOL {
        for a in alpha.iter_mut() {
            *a /= total;
        }
    }
}

/// M-step for observation `t`: every `β_k` takes an SGD step weighted by
/// `z_k`, then `α_k ← α_k + (z_k − α_k)/t`.
pub fn m_step(
    model: &MixtureState,
    obs: &Observation,
    z: &[f64],
    t: u64,
    schedule: &LearnRateSchedule,
) -> Result<MixtureState> {
    check_len(model.p(), obs.p())?;
    check_len(model.k(), z.len())?;
    if z.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Domain("responsibilities must lie in [0, 1]".into()));
    }
    let gamma = schedule.rate_at(t)?;
    let mut next = model.clone();
    m_step_in_place(&mut next, obs, z, t, gamma);
    Ok(next)
}

/// A parameter snapshot with the diagnostics current at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub model: MixtureState,
    pub ll_bar: f64,
    pub max_ll_bar: f64,
    pub delta_norm: f64,
    pub saic: f64,
    pub sbic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub interval: u64,
    pub rows: Vec<TraceRow>,
}

/// Everything needed to continue an online fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    model: MixtureState,
    t: u64,
    schedule: LearnRateSchedule,
    diag: DiagnosticsWindow,
    trace: Option<Trace>,
}

impl FitState {
    /// A fresh fit at `t = 0`. `trace_interval` enables snapshots every that
    /// many observations.
    pub fn new(
        model: MixtureState,
        schedule: LearnRateSchedule,
        window: u64,
        trace_interval: Option<u64>,
    ) -> Result<Self> {
        let trace = match trace_interval {
            Some(0) => return Err(Error::Validation("trace interval must be positive".into())),
            Some(interval) => Some(Trace {
                interval,
                rows: Vec::new(),
            }),
            None => None,
        };
        Self::from_parts(model, 0, schedule, DiagnosticsWindow::new(window)?, trace)
    }

    /// Reassembles a fit, e.g. from a checkpoint.
    pub fn from_parts(
        model: MixtureState,
        t: u64,
        schedule: LearnRateSchedule,
        diag: DiagnosticsWindow,
        trace: Option<Trace>,
    ) -> Result<Self> {
        schedule.validate()?;
        let model = MixtureState::new(model.alpha().to_vec(), model.beta().to_vec())?;
        if diag.t_seen() != t {
            return Err(Error::Validation(format!(
                "diagnostics have seen {} observations but t = {t}",
                diag.t_seen()
            )));
        }
        if matches!(&trace, Some(tr) if tr.interval == 0) {
            return Err(Error::Validation("trace interval must be positive".into()));
        }
        Ok(Self {
            model,
            t,
            schedule,
            diag,
            trace,
        })
    }

    pub fn model(&self) -> &MixtureState {
        &self.model
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn schedule(&self) -> &LearnRateSchedule {
        &self.schedule
    }

    pub fn diagnostics(&self) -> &DiagnosticsWindow {
        &self.diag
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn k(&self) -> usize {
        self.model.k()
    }

    pub fn p(&self) -> usize {
        self.model.p()
    }

    pub fn nparams(&self) -> usize {
        nparams(self.k(), self.p())
    }

    /// `None` before the first observation.
    pub fn saic(&self) -> Option<f64> {
        self.diag.saic(self.nparams(), self.t).ok()
    }

    pub fn sbic(&self) -> Option<f64> {
        self.diag.sbic(self.nparams(), self.t).ok()
    }

    /// Processes one observation. On error the state is left untouched.
    pub fn add_observation(&mut self, obs: &Observation) -> Result<()> {
        if obs.p() != self.p() {
            return Err(Error::StreamShape {
                position: obs.t_index(),
                expected: self.p(),
                got: obs.p(),
            });
        }
        let t = self.t + 1;
        let gamma = self.schedule.rate_at(t)?;

        // Diagnostics use the parameters as they stood when the point arrived.
        let component_ll = component_log_densities(&self.model, obs)?;
        let (point_ll, z) = responsibilities(&self.model, &component_ll)?;
        let best = argmax(&z)?;
        // Σα may exceed 1 by up to the renormalization tolerance.
        let point_ll = point_ll.min(0.0);
        let max_ll = component_ll[best];

        m_step_in_place(&mut self.model, obs, &z, t, gamma);
        self.t = t;

        let fold = |r: Result<()>| r.expect("validated diagnostic input");
        fold(self.diag.update_stream_loglik(point_ll, t));
        fold(self.diag.fold_max_assign(max_ll, t));
        fold(self.diag.update_norm_delta(self.model.norm(), t));
        self.diag.update_low_alpha(self.model.alpha());
        self.diag.track_unique(obs);

        if let Some(trace) = &self.trace {
            if t.is_multiple_of(trace.interval) {
                let row = self.trace_row();
                self.trace.as_mut().expect("trace present").rows.push(row);
            }
        }
        Ok(())
    }

    fn trace_row(&self) -> TraceRow {
        TraceRow {
            t: self.t,
            model: self.model.clone(),
            ll_bar: self.diag.ll_bar(),
            max_ll_bar: self.diag.max_ll_bar(),
            delta_norm: self.diag.delta_norm_bar(),
            saic: self.saic().unwrap_or(f64::NAN),
            sbic: self.sbic().unwrap_or(f64::NAN),
        }
    }

    pub fn add_observations<'a, I>(&mut self, stream: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        stream.into_iter().try_for_each(|o| self.add_observation(o))
    }

    /// Reporting view with components sorted for display.
    pub fn summary(&self, intercept: bool) -> FitSummary {
        FitSummary {
            k: self.k(),
            p: self.p(),
            t: self.t,
            model: self.model.sorted(),
            ll_bar: self.diag.ll_bar(),
            max_ll_bar: self.diag.max_ll_bar(),
            saic: self.saic(),
            sbic: self.sbic(),
            delta_norm_bar: self.diag.delta_norm_bar(),
            settled: self.t > 0 && self.diag.delta_norm_bar() < CONVERGENCE_NOTE,
            low_alpha_warning: self.diag.low_alpha_warning(),
            identifiability: self.diag.unique().advise(intercept),
        }
    }
}

/// Snapshot of a fit prepared for display.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub k: usize,
    pub p: usize,
    pub t: u64,
    /// Components in display order (descending alpha).
    pub model: MixtureState,
    pub ll_bar: f64,
    pub max_ll_bar: f64,
    pub saic: Option<f64>,
    pub sbic: Option<f64>,
    pub delta_norm_bar: f64,
    /// The windowed norm change fell below [`CONVERGENCE_NOTE`].
    pub settled: bool,
    pub low_alpha_warning: bool,
    pub identifiability: Option<IdentifiabilityAdvice>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, mixture_point_loglik, InitSpec};
    use crate::sgd::sgd_trajectory;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(y: u8, x: &[f64], t: u64) -> Observation {
        Observation::new(y, x.to_vec(), t).unwrap()
    }

    fn random_stream(n: usize, p: usize, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut x = vec![1.0];
                x.extend((1..p).map(|_| rng.gen_range(-5.0..5.0)));
                obs(rng.gen_range(0..2), &x, i as u64 + 1)
            })
            .collect()
    }

    #[test]
    fn e_step_examples() {
        let o = obs(1, &[1.0, 0.3], 1);
        let one = MixtureState::new(vec![1.0], vec![vec![0.2, 0.1]]).unwrap();
        assert_eq!(e_step(&one, &o).unwrap(), vec![1.0]);
        let twins =
            MixtureState::new(vec![0.5, 0.5], vec![vec![0.2, 0.1], vec![0.2, 0.1]]).unwrap();
        assert_eq!(e_step(&twins, &o).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn e_step_reproduces_coin_batch_one() {
        // Batch 1 of the coin data: 3 heads in 10 tosses under θ = (0.4, 0.5).
        let fa = crate::batch::binomial_pmf(3, 10, 0.4);
        let fb = crate::batch::binomial_pmf(3, 10, 0.5);
        // One success with equal weights: component B has intercept 0 (f = 1/2)
        // and component A an intercept giving f_A / f_B = fa / fb.
        let target = 0.5 * fa / fb;
        let intercept = (target / (1.0 - target)).ln();
        let m = MixtureState::new(vec![0.5, 0.5], vec![vec![intercept], vec![0.0]]).unwrap();
        let z = e_step(&m, &obs(1, &[1.0], 1)).unwrap();
        assert!((z[0] - 0.65).abs() <= 0.005, "{z:?}");
        assert!((z[1] - 0.35).abs() <= 0.005);
    }

    #[test]
    fn m_step_examples() {
        let m = MixtureState::new(vec![0.5, 0.5], vec![vec![0.1, -0.2], vec![0.3, 0.4]]).unwrap();
        let o = obs(1, &[1.0, 2.0], 1);
        let schedule = LearnRateSchedule::fixed(0.1).unwrap();
        let z = e_step(&m, &o).unwrap();
        let next = m_step(&m, &o, &z, 1, &schedule).unwrap();
        assert_eq!(next.alpha(), z.as_slice());

        let frozen = m_step(&m, &o, &[1.0, 0.0], 3, &schedule).unwrap();
        assert_eq!(frozen.beta()[1], m.beta()[1]);

        assert!(m_step(&m, &o, &[0.5, 0.5], 0, &schedule).is_err());
        assert!(m_step(&m, &o, &[0.5], 1, &schedule).is_err());
    }

    #[test]
    fn two_step_alpha_is_mean_of_responsibilities() {
        let m0 = MixtureState::new(vec![0.4, 0.6], vec![vec![1.0, -1.0], vec![-0.5, 2.0]]).unwrap();
        let schedule = LearnRateSchedule::fixed(0.1).unwrap();
        let o1 = obs(1, &[1.0, 1.5], 1);
        let o2 = obs(0, &[1.0, -0.5], 2);
        let z1 = e_step(&m0, &o1).unwrap();
        let m1 = m_step(&m0, &o1, &z1, 1, &schedule).unwrap();
        let z2 = e_step(&m1, &o2).unwrap();
        let m2 = m_step(&m1, &o2, &z2, 2, &schedule).unwrap();
        for k in 0..2 {
            assert!((m2.alpha()[k] - (z1[k] + z2[k]) / 2.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn add_observation_rejects_wrong_dimension() {
        let model = init_model(&InitSpec::new(2, 2, 1)).unwrap();
        let mut fit = FitState::new(model, LearnRateSchedule::default(), 100, None).unwrap();
        fit.add_observation(&obs(1, &[1.0, 0.5], 1)).unwrap();
        let before = fit.clone();
        let err = fit
            .add_observation(&obs(1, &[1.0, 0.5, 2.0], 17))
            .unwrap_err();
        assert!(err.to_string().contains("17"), "{err}");
        assert_eq!(fit, before);
    }

    #[test]
    fn single_component_matches_plain_sgd() {
        let data = random_stream(2000, 1, 5);
        let schedule = LearnRateSchedule::fixed(0.1).unwrap();
        let mut fit = FitState::new(
            MixtureState::new(vec![1.0], vec![vec![0.3]]).unwrap(),
            schedule,
            100,
            None,
        )
        .unwrap();
        let plain = sgd_trajectory(&[0.3], &data, &schedule).unwrap();
        for (o, expected) in data.iter().zip(&plain) {
            fit.add_observation(o).unwrap();
            assert_eq!(fit.model().beta()[0][0].to_bits(), expected[0].to_bits());
        }
    }

    #[test]
    fn trace_snapshots_on_interval() {
        let data = random_stream(1050, 2, 9);
        let model = init_model(&InitSpec::new(2, 2, 3)).unwrap();
        let mut fit = FitState::new(model, LearnRateSchedule::default(), 1000, Some(100)).unwrap();
        fit.add_observations(&data).unwrap();
        let trace = fit.trace().unwrap();
        assert_eq!(trace.rows.len(), 10);
        assert_eq!(trace.rows[3].t, 400);
        assert!(FitState::new(
            init_model(&InitSpec::new(1, 1, 0)).unwrap(),
            LearnRateSchedule::default(),
            10,
            Some(0)
        )
        .is_err());
    }

    #[test]
    fn stream_loglik_uses_pre_update_parameters() {
        let model = init_model(&InitSpec::new(2, 2, 11)).unwrap();
        let mut fit =
            FitState::new(model.clone(), LearnRateSchedule::default(), 1000, None).unwrap();
        let o = obs(1, &[1.0, 2.0], 1);
        fit.add_observation(&o).unwrap();
        assert_eq!(
            fit.diagnostics().ll_bar(),
            mixture_point_loglik(&model, &o).unwrap()
        );
    }

    #[test]
    fn summary_sorts_and_notes() {
        let model =
            MixtureState::new(vec![0.2, 0.8], vec![vec![1.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let fit = FitState::new(model, LearnRateSchedule::default(), 10, None).unwrap();
        let s = fit.summary(true);
        assert_eq!(s.model.alpha(), &[0.8, 0.2]);
        assert!(!s.settled);
        assert!(s.saic.is_none());
    }

    fn arb_fit() -> impl Strategy<Value = (MixtureState, u64)> {
        (1usize..5, any::<u64>()).prop_map(|(k, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut alpha: Vec<f64> = raw.iter().map(|a| a / total).collect();
            let rest: f64 = alpha[1..].iter().sum();
            alpha[0] = 1.0 - rest;
            let beta = (0..k)
                .map(|_| (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            (MixtureState::new(alpha, beta).unwrap(), seed)
        })
    }

    proptest! {
        #[test]
        fn responsibilities_sum_to_one((m, seed) in arb_fit()) {
            for o in random_stream(20, 2, seed) {
                let z = e_step(&m, &o).unwrap();
                prop_assert!((z.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(z.iter().all(|w| (0.0..=1.0).contains(w)));
            }
        }

        #[test]
        fn simplex_holds_along_the_stream((m, seed) in arb_fit()) {
            let mut fit = FitState::new(m, LearnRateSchedule::fixed(0.5).unwrap(), 50, None).unwrap();
            for o in random_stream(300, 2, seed ^ 0xabc) {
                fit.add_observation(&o).unwrap();
                let a = fit.model().alpha();
                prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                prop_assert!(a.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn updates_are_deterministic((m, seed) in arb_fit()) {
            let data = random_stream(100, 2, seed);
            let mut a = FitState::new(m.clone(), LearnRateSchedule::default(), 30, Some(7)).unwrap();
            let mut b = a.clone();
            a.add_observations(&data).unwrap();
            b.add_observations(&data).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
