//! Parsing of `--model` specs for `compare`.

use crate::{parse_list, CliError};

/// One model of a comparison, e.g. `k=2,gamma=0.1,seed=3,name=two`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSpec {
    pub k: usize,
    pub p: Option<usize>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub decay: Option<f64>,
    pub gamma0: Option<f64>,
    pub window: Option<u64>,
    pub name: Option<String>,
}

fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("model spec: {key}='{v}' is not a valid integer")))
}

fn real(key: &str, v: &str) -> Result<f64, CliError> {
    match parse_list(v, "model spec")?.as_slice() {
        [x] => Ok(*x),
        _ => Err(CliError::Usage(format!(
            "model spec: {key} takes one number"
        ))),
    }
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut spec = Self::default();
        let mut k = None;
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("model spec: expected key=value, got '{part}'"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "k" => k = Some(int::<usize>(key, value)?),
                "p" => spec.p = Some(int(key, value)?),
                "seed" => spec.seed = Some(int(key, value)?),
                "gamma" => spec.gamma = Some(real(key, value)?),
                "decay" => spec.decay = Some(real(key, value)?),
                "gamma0" => spec.gamma0 = Some(real(key, value)?),
                "window" => spec.window = Some(int(key, value)?),
                "name" => spec.name = Some(value.to_string()),
                other => {
                    return Err(CliError::Usage(format!(
                        "model spec: unknown key '{other}'"
                    )))
                }
            }
        }
        spec.k = k.ok_or_else(|| CliError::Usage(format!("model spec '{text}' has no k")))?;
        if spec.gamma.is_some() && (spec.decay.is_some() || spec.gamma0.is_some()) {
            return Err(CliError::Usage(
                "model spec: gamma excludes decay and gamma0".into(),
            ));
        }
        if spec.gamma0.is_some() && spec.decay.is_none() {
            return Err(CliError::Usage("model spec: gamma0 needs decay".into()));
        }
        Ok(spec)
    }
}
