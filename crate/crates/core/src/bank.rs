//! Several independent fits fed from one stream in lockstep.

use crate::error::{Error, Result};
use crate::fit::FitState;
use crate::model::Observation;
use crate::par::{try_for_each_mut, ExecMode};

/// One line of a model comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub k: usize,
    pub p: usize,
    pub ll: f64,
    pub maxll: f64,
    pub saic: Option<f64>,
    pub sbic: Option<f64>,
    pub dnorm: f64,
    pub n: u64,
}

/// An ordered set of fits that always share dimension and observation count.
///
/// Members are updated independently; in [`ExecMode::Parallel`] the update
/// of each member runs on its own task, but every member consumes the same
/// observations in the same order and the bank only returns once all members
/// are at the same `t`.
#[derive(Debug, Clone, Default)]
pub struct ModelBank {
    names: Vec<String>,
    fits: Vec<FitState>,
    mode: ExecMode,
}

impl ModelBank {
    pub fn new(mode: ExecMode) -> Self {
        Self {
            names: Vec::new(),
            fits: Vec::new(),
            mode,
        }
    }

    pub fn add_model(&mut self, name: impl Into<String>, fit: FitState) -> Result<()> {
        if let Some(first) = self.fits.first() {
            if fit.p() != first.p() {
                return Err(Error::Validation(format!(
                    "model has p = {}, bank has p = {}",
                    fit.p(),
                    first.p()
                )));
            }
            if fit.t() != first.t() {
                return Err(Error::Validation(format!(
                    "model has seen {} observations, bank has seen {}",
                    fit.t(),
                    first.t()
                )));
            }
        }
        self.names.push(name.into());
        self.fits.push(fit);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn p(&self) -> Option<usize> {
        self.fits.first().map(FitState::p)
    }

    /// Shared observation count.
    pub fn t(&self) -> u64 {
        self.fits.first().map_or(0, FitState::t)
    }

    pub fn fits(&self) -> &[FitState] {
        &self.fits
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        match self.p() {
            Some(p) if p != obs.p() => Err(Error::StreamShape {
                position: obs.t_index(),
                expected: p,
                got: obs.p(),
            }),
            _ => Ok(()),
        }
    }

    /// Feeds one observation to every member.
    pub fn add_observation(&mut self, obs: &Observation) -> Result<()> {
        self.check(obs)?;
        try_for_each_mut(self.mode, &mut self.fits, |fit| fit.add_observation(obs))
    }

    /// Feeds a block of observations. Each member walks the block in order,
    /// members proceed concurrently, and the call returns once every member
    /// has consumed the block. Equivalent to calling
    /// [`add_observation`](Self::add_observation) per row.
    ///
    /// On a dimension mismatch the rows before it are applied and the error
    /// is returned.
    pub fn add_batch(&mut self, batch: &[Observation]) -> Result<()> {
        let bad = batch.iter().position(|o| self.check(o).is_err());
        let valid = &batch[..bad.unwrap_or(batch.len())];
        try_for_each_mut(self.mode, &mut self.fits, |fit| fit.add_observations(valid))?;
        match bad {
            Some(i) => self.check(&batch[i]),
            None => Ok(()),
        }
    }

    pub fn compare_rows(&self) -> Vec<CompareRow> {
        self.names
            .iter()
            .zip(&self.fits)
            .map(|(name, fit)| {
                let diag = fit.diagnostics();
                CompareRow {
                    name: name.clone(),
                    k: fit.k(),
                    p: fit.p(),
                    ll: diag.ll_bar(),
                    maxll: diag.max_ll_bar(),
                    saic: fit.saic(),
                    sbic: fit.sbic(),
                    dnorm: diag.delta_norm_bar(),
                    n: fit.t(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, InitSpec};
    use crate::sgd::LearnRateSchedule;

    fn fit(k: usize, p: usize, seed: u64) -> FitState {
        FitState::new(
            init_model(&InitSpec::new(k, p, seed)).unwrap(),
            LearnRateSchedule::default(),
            100,
            None,
        )
        .unwrap()
    }

    fn rows(n: u64) -> Vec<Observation> {
        (1..=n)
            .map(|t| Observation::new((t % 2) as u8, vec![1.0, (t as f64).sin() * 4.0], t).unwrap())
            .collect()
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let mut bank = ModelBank::new(ExecMode::Sequential);
        bank.add_model("M1", fit(1, 2, 1)).unwrap();
        assert!(bank.add_model("M2", fit(2, 3, 1)).is_err());
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn lockstep_and_mode_equivalence() {
        let data = rows(500);
        let mut seq = ModelBank::new(ExecMode::Sequential);
        let mut par = ModelBank::new(ExecMode::Parallel);
        let mut batched = ModelBank::new(ExecMode::Parallel);
        for (i, k) in [1, 2, 3].into_iter().enumerate() {
            for b in [&mut seq, &mut par, &mut batched] {
                b.add_model(format!("M{}", i + 1), fit(k, 2, i as u64))
                    .unwrap();
            }
        }
        for o in &data {
            seq.add_observation(o).unwrap();
            par.add_observation(o).unwrap();
            assert!(seq.fits().iter().all(|f| f.t() == o.t_index()));
        }
        for chunk in data.chunks(64) {
            batched.add_batch(chunk).unwrap();
        }
        assert_eq!(seq.fits(), par.fits());
        assert_eq!(seq.fits(), batched.fits());
        let table = seq.compare_rows();
        assert_eq!(table.len(), 3);
        assert_eq!(table[0].ll, table[0].maxll);
        assert!(table.iter().all(|r| r.n == 500));
    }

    #[test]
    fn batch_stops_at_bad_row() {
        let mut bank = ModelBank::new(ExecMode::Parallel);
        bank.add_model("a", fit(2, 2, 3)).unwrap();
        bank.add_model("b", fit(1, 2, 4)).unwrap();
        let mut data = rows(10);
        data[6] = Observation::new(1, vec![1.0], 7).unwrap();
        let err = bank.add_batch(&data).unwrap_err();
        assert!(matches!(err, Error::StreamShape { position: 7, .. }));
        assert_eq!(bank.t(), 6);
        assert!(bank.fits().iter().all(|f| f.t() == 6));
    }
}
