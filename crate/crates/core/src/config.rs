//! TOML run configuration.
//!
//! ```toml
//! k = 3
//! seed = 0
//! chains = 1
//! n_iter = 3000
//! burn_in = 1000
//! thin = 2
//! init = "lda"          # or "random"
//! lda_sweeps = 200
//! fix_mu = false
//! standardize_indegree = false
//! pg_normal_above = 50  # omit for exact Polya-Gamma draws
//! text_export = false
//! tau_block = true      # marginal tau move on top of the conjugate draw
//! eta_shift = true      # offset move along the eta / intercept ridge
//!
//! [hyper]
//! beta = 0.1            # scalar or a length-V list
//! mu0 = 0.0             # scalar or a length-K list
//! sigma0 = 10.0         # scalar s means s * I, or a K x K list of rows
//! sigma = 1.0
//! mu_tau = 0.0          # scalar or a length-3 list
//! sigma_tau = 4.0       # scalar or a 3 x 3 list of rows
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PctmError, Result};
use crate::gibbs::{ChainSettings, SamplerOptions};
use crate::init::{InitMode, InitOptions};
use crate::rng::PgMethod;
use crate::state::Hyperparameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl VectorSpec {
    fn resolve(&self, len: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            VectorSpec::Scalar(s) => Ok(vec![*s; len]),
            VectorSpec::Vector(v) if v.len() == len => Ok(v.clone()),
            VectorSpec::Vector(v) => Err(PctmError::Config(format!(
                "{name} has {} entries, expected {len}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn resolve(&self, n: usize, name: &str) -> Result<Vec<Vec<f64>>> {
        match self {
            MatrixSpec::Scalar(s) => Ok((0..n)
                .map(|r| (0..n).map(|c| if r == c { *s } else { 0.0 }).collect())
                .collect()),
            MatrixSpec::Matrix(m) if m.len() == n && m.iter().all(|r| r.len() == n) => Ok(m.clone()),
            MatrixSpec::Matrix(_) => Err(PctmError::Config(format!("{name} must be {n}x{n}"))),
        }
    }
}

/// Hyperparameter overrides; missing entries take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<VectorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<VectorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<MatrixSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<MatrixSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_tau: Option<VectorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_tau: Option<MatrixSpec>,
}

impl HyperConfig {
    pub fn resolve(&self, k: usize, vocab_size: usize) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::defaults(k, vocab_size);
        if let Some(b) = &self.beta {
            h.beta = b.resolve(vocab_size, "beta")?;
        }
        if let Some(m) = &self.mu0 {
            h.mu0 = m.resolve(k, "mu0")?;
        }
        if let Some(s) = &self.sigma0 {
            h.sigma0 = s.resolve(k, "sigma0")?;
        }
        if let Some(s) = &self.sigma {
            h.sigma = s.resolve(k, "sigma")?;
        }
        if let Some(m) = &self.mu_tau {
            let v = m.resolve(3, "mu_tau")?;
            h.mu_tau = [v[0], v[1], v[2]];
        }
        if let Some(s) = &self.sigma_tau {
            let m = s.resolve(3, "sigma_tau")?;
            for (r, row) in m.iter().enumerate() {
                h.sigma_tau[r].copy_from_slice(row);
            }
        }
        h.validate(vocab_size)?;
        Ok(h)
    }
}

fn default_n_iter() -> usize {
    3000
}
fn default_burn_in() -> usize {
    1000
}
fn default_thin() -> usize {
    2
}
fn default_init() -> InitMode {
    InitMode::Lda
}
fn default_lda_sweeps() -> usize {
    200
}
fn default_chains() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_init")]
    pub init: InitMode,
    #[serde(default = "default_lda_sweeps")]
    pub lda_sweeps: usize,
    /// Defaults to 50 / K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lda_alpha: Option<f64>,
    #[serde(default)]
    pub fix_mu: bool,
    #[serde(default)]
    pub standardize_indegree: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pg_normal_above: Option<u32>,
    #[serde(default)]
    pub text_export: bool,
    /// Marginal Metropolis-Hastings move on tau each sweep.
    #[serde(default = "default_true")]
    pub tau_block: bool,
    /// Offset move along the eta / tau intercept ridge each sweep.
    #[serde(default = "default_true")]
    pub eta_shift: bool,
    #[serde(default)]
    pub hyper: HyperConfig,
}

impl FitConfig {
    pub fn with_k(k: usize) -> Self {
        FitConfig {
            k,
            seed: 0,
            chains: default_chains(),
            n_iter: default_n_iter(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            init: default_init(),
            lda_sweeps: default_lda_sweeps(),
            lda_alpha: None,
            fix_mu: false,
            standardize_indegree: false,
            pg_normal_above: None,
            text_export: false,
            tau_block: true,
            eta_shift: true,
            hyper: HyperConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PctmError::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PctmError::io(path, e))?;
        FitConfig::parse(&text)
    }

    /// Checks everything that does not need the corpus.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(PctmError::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.chains == 0 {
            return Err(PctmError::Config("chains must be at least 1".into()));
        }
        self.chain_settings().validate()?;
        if let Some(a) = self.lda_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(PctmError::Config(format!("lda_alpha must be positive, got {a}")));
            }
        }
        if self.pg_normal_above == Some(0) {
            return Err(PctmError::Config("pg_normal_above must be positive".into()));
        }
        Ok(())
    }

    pub fn chain_settings(&self) -> ChainSettings {
        ChainSettings {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thin: self.thin,
        }
    }

    pub fn sampler_options(&self) -> SamplerOptions {
        SamplerOptions {
            fix_mu: self.fix_mu,
            pg_method: match self.pg_normal_above {
                Some(t) => PgMethod::NormalAbove(t),
                None => PgMethod::Exact,
            },
            standardize_indegree: self.standardize_indegree,
            tau_block: self.tau_block,
            eta_shift: self.eta_shift,
        }
    }

    pub fn init_options(&self) -> InitOptions {
        let mut o = InitOptions::new(self.init, self.k);
        o.lda_sweeps = self.lda_sweeps;
        if let Some(a) = self.lda_alpha {
            o.lda_alpha = a;
        }
        o
    }
}
