//! Starting values: a text-only topic warm start, a density-calibrated
//! propensity intercept, simulated propensities and a least-squares `tau`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{PctmError, Result};
use crate::gibbs::{lambda_tilt, tau_normal_equations, Model};
use crate::rng::{sample_categorical, sample_polya_gamma_with, sample_truncated_normal, RngStream};
use crate::state::LatentState;

/// Intercept used when the corpus has no citations.
pub const NO_CITATION_INTERCEPT: f64 = -3.0;

/// Floor applied to the reference topic's share before taking log ratios.
pub const THETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Lda,
    Random,
}

impl InitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitMode::Lda => "lda",
            InitMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub mode: InitMode,
    pub lda_sweeps: usize,
    /// Symmetric document-topic concentration of the warm-start LDA.
    pub lda_alpha: f64,
}

impl InitOptions {
    pub fn new(mode: InitMode, k: usize) -> Self {
        InitOptions {
            mode,
            lda_sweeps: 200,
            lda_alpha: 50.0 / k as f64,
        }
    }
}

/// Starting values for every sampled quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct InitBundle {
    pub z: Vec<usize>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub d_star: Vec<f64>,
    pub tau: [f64; 3],
    pub mu: Vec<f64>,
}

/// `1/2 log(edges / dyads)`, or `None` when there is nothing to calibrate on.
pub fn initial_tau_intercept(n_edges: usize, n_dyads: usize) -> Option<f64> {
    if n_edges == 0 || n_dyads == 0 {
        None
    } else {
        Some(0.5 * (n_edges as f64 / n_dyads as f64).ln())
    }
}

/// Log ratios against the last topic, `log(theta_k / theta_K)`.
pub fn eta_from_theta(theta: &[f64]) -> Vec<f64> {
    let last = theta[theta.len() - 1].max(THETA_FLOOR);
    theta.iter().map(|&t| (t.max(THETA_FLOOR) / last).ln()).collect()
}

/// Minimum-norm solution of the normal equations `X'X b = X'y`.
pub fn least_squares(xtx: &Matrix3<f64>, xty: &Vector3<f64>) -> Result<[f64; 3]> {
    let svd = xtx.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    let b = svd
        .solve(xty, tol)
        .map_err(|e| PctmError::Numerical(format!("least squares failed: {e}")))?;
    Ok([b[0], b[1], b[2]])
}

/// Document-topic proportions from a collapsed-Gibbs LDA over whole
/// documents. Returns N x K, row-major.
pub fn lda_theta(
    corpus: &Corpus,
    k: usize,
    beta: &[f64],
    alpha: f64,
    sweeps: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(PctmError::Domain(format!("LDA alpha must be positive, got {alpha}")));
    }
    let n = corpus.n_docs();
    let v = corpus.vocab_size();
    let beta_sum: f64 = beta.iter().sum();
    let tokens: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            corpus
                .doc_word_counts(i)
                .into_iter()
                .flat_map(|(t, c)| std::iter::repeat_n(t as u32, c as usize))
                .collect()
        })
        .collect();
    let mut n_dk = vec![0u32; n * k];
    let mut n_kv = vec![0u32; k * v];
    let mut n_k = vec![0u64; k];
    let mut assign: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (i, toks) in tokens.iter().enumerate() {
        let mut a = Vec::with_capacity(toks.len());
        for &t in toks {
            let z = rng.below(k);
            n_dk[i * k + z] += 1;
            n_kv[z * v + t as usize] += 1;
            n_k[z] += 1;
            a.push(z);
        }
        assign.push(a);
    }
    let mut w = vec![0.0; k];
    for _ in 0..sweeps {
        for (i, toks) in tokens.iter().enumerate() {
            for (slot, &t) in toks.iter().enumerate() {
                let t = t as usize;
                let old = assign[i][slot];
                n_dk[i * k + old] -= 1;
                n_kv[old * v + t] -= 1;
                n_k[old] -= 1;
                for (kk, wk) in w.iter_mut().enumerate() {
                    *wk = (n_dk[i * k + kk] as f64 + alpha) * (n_kv[kk * v + t] as f64 + beta[t])
                        / (n_k[kk] as f64 + beta_sum);
                }
                let z = sample_categorical(rng, &w, false)?;
                n_dk[i * k + z] += 1;
                n_kv[z * v + t] += 1;
                n_k[z] += 1;
                assign[i][slot] = z;
            }
        }
    }
    let mut theta = vec![0.0; n * k];
    for i in 0..n {
        let denom = tokens[i].len() as f64 + k as f64 * alpha;
        for kk in 0..k {
            theta[i * k + kk] = (n_dk[i * k + kk] as f64 + alpha) / denom;
        }
    }
    Ok(theta)
}

/// Builds starting values for a chain.
pub fn warm_start(model: &Model, opts: &InitOptions, rng: &mut RngStream) -> Result<InitBundle> {
    let corpus = model.corpus;
    let k = model.k();
    let n = corpus.n_docs();
    let g_total = corpus.n_paragraphs();

    let mut z = Vec::with_capacity(g_total);
    let mut eta = vec![0.0; n * k];
    match opts.mode {
        InitMode::Lda => {
            let theta = lda_theta(corpus, k, &model.hyper.beta, opts.lda_alpha, opts.lda_sweeps, rng)?;
            for i in 0..n {
                let row = &theta[i * k..(i + 1) * k];
                for _ in corpus.paragraph_range(i) {
                    z.push(sample_categorical(rng, row, false)?);
                }
                eta[i * k..(i + 1) * k].copy_from_slice(&eta_from_theta(row));
            }
        }
        InitMode::Random => {
            for _ in 0..g_total {
                z.push(rng.below(k));
            }
            for e in eta.iter_mut() {
                *e = rng.std_normal();
            }
        }
    }

    let mu = if model.options.fix_mu || n == 0 {
        model.hyper.mu0.clone()
    } else {
        (0..k)
            .map(|kk| (0..n).map(|i| eta[i * k + kk]).sum::<f64>() / n as f64)
            .collect()
    };

    let t0 = match initial_tau_intercept(corpus.citations().len(), corpus.n_dyads()) {
        Some(t) => t,
        None => {
            log::warn!("no citations to calibrate the propensity intercept; starting it at {NO_CITATION_INTERCEPT}");
            NO_CITATION_INTERCEPT
        }
    };
    let guess = [t0, rng.uniform(), rng.uniform()];

    let mut d_star = vec![0.0; corpus.n_dyads()];
    for (g, &topic) in z.iter().enumerate() {
        let i = corpus.doc_of(g);
        let r = corpus.dyad_range(g);
        for j in 0..i {
            let mean = guess[0] + guess[1] * model.kappa.get(j, i) + guess[2] * eta[j * k + topic];
            d_star[r.start + j] = if corpus.is_cited(g, j) {
                sample_truncated_normal(rng, mean, 1.0, 0.0, f64::INFINITY)?
            } else {
                sample_truncated_normal(rng, mean, 1.0, f64::NEG_INFINITY, 0.0)?
            };
        }
    }

    let mut state = LatentState {
        k,
        z,
        eta,
        lambda: vec![0.0; n * k],
        d_star,
        tau: guess,
        mu,
    };
    state.tau = if corpus.n_dyads() == 0 {
        model.hyper.mu_tau
    } else {
        let (xtx, xty) = tau_normal_equations(model, &state);
        least_squares(&xtx, &xty)?
    };

    for i in 0..n {
        let len = corpus.doc_len(i);
        if len == 0 {
            continue;
        }
        for kk in 0..k {
            let rho = lambda_tilt(state.eta_row(i), kk);
            state.lambda[i * k + kk] = sample_polya_gamma_with(rng, len as f64, rho, model.options.pg_method)?;
        }
    }

    Ok(InitBundle {
        z: state.z,
        eta: state.eta,
        lambda: state.lambda,
        d_star: state.d_star,
        tau: state.tau,
        mu: state.mu,
    })
}
