//! Online estimation of finite mixtures of logistic regression models.
//!
//! Observations are processed one at a time: each arrival updates the
//! posterior component responsibilities, takes a responsibility-weighted
//! SGD step per component and refreshes a running average of the mixing
//! weights. Streaming diagnostics (windowed log-likelihood, parameter-norm
//! change, sAIC/sBIC) support comparing models with different numbers of
//! components fit side by side on the same stream.
//!
//! ```
//! use ofmlr::{FitState, GenSpec, InitSpec, LearnRateSchedule, generate_mixture, init_model};
//!
//! let spec = GenSpec::new(2_000, vec![0.3, 0.7], vec![vec![3.0, -2.5], vec![-2.0, 5.0]], 1);
//! let data = generate_mixture(&spec).unwrap();
//! let start = init_model(&InitSpec::new(2, 2, 7)).unwrap();
//! let mut fit = FitState::new(start, LearnRateSchedule::fixed(0.1).unwrap(), 1000, None).unwrap();
//! fit.add_observations(data.data.rows()).unwrap();
//! assert_eq!(fit.t(), 2_000);
//! ```

pub mod bank;
pub mod batch;
pub mod datagen;
pub mod diagnostics;
mod error;
pub mod fit;
pub mod model;
pub mod par;
pub mod sgd;
pub mod stream_io;

pub use bank::{CompareRow, ModelBank};
pub use batch::{batch_em_fmlr, em_two_coins, full_loglik, weighted_logistic_ml, StaticDataset};
pub use datagen::{generate_mixture, generate_mixture_with, GenSpec, Generated};
pub use diagnostics::DiagnosticsWindow;
pub use error::{Error, Result};
pub use fit::{e_step, m_step, FitState, FitSummary};
pub use model::{init_model, sigmoid, InitSpec, MixtureState, Observation};
pub use par::ExecMode;
pub use sgd::LearnRateSchedule;
