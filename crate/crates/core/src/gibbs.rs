//! Conditional updates of the collapsed sampler and the sweep driver.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{PctmError, Result};
use crate::init::InitBundle;
use crate::math::{lgamma, ln_rising, log_norm_cdf, log_norm_pdf, log_sum_exp, log_sum_exp_except};
use crate::rng::{
    cholesky, sample_categorical, sample_mvn, sample_polya_gamma_with, sample_truncated_normal, PgMethod,
    RngStream,
};
use crate::state::{new_state, Hyperparameters, LatentState, SufficientStats};
use crate::store::{SampleStore, StoreHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Keep `mu` at `mu0` instead of resampling it.
    pub fix_mu: bool,
    pub pg_method: PgMethod,
    /// Center and scale the indegree covariate over all feasible dyads.
    pub standardize_indegree: bool,
    /// Add a Metropolis-Hastings move on tau with `D*` integrated out,
    /// followed by the usual `D*` refresh. Leaves the posterior unchanged.
    #[serde(default = "yes")]
    pub tau_block: bool,
    /// Redraw the common offset of eta (and mu), compensated in the tau
    /// intercept, which leaves the likelihood unchanged.
    #[serde(default = "yes")]
    pub eta_shift: bool,
}

fn yes() -> bool {
    true
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            fix_mu: false,
            pg_method: PgMethod::Exact,
            standardize_indegree: false,
            tau_block: true,
            eta_shift: true,
        }
    }
}

/// The indegree covariate `(kappa_j^(i) - shift) / scale`, tabulated for
/// every `j < i <= N`.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaCovariate {
    shift: f64,
    scale: f64,
    rows: Vec<Vec<f64>>,
}

impl KappaCovariate {
    pub fn with_transform(corpus: &Corpus, shift: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
            return Err(PctmError::Domain(format!("indegree transform shift {shift}, scale {scale}")));
        }
        let table = corpus.indegree_table();
        let rows = (0..=corpus.n_docs())
            .map(|i| table.row(i).iter().map(|&c| (c as f64 - shift) / scale).collect())
            .collect();
        Ok(KappaCovariate { shift, scale, rows })
    }

    pub fn raw(corpus: &Corpus) -> Self {
        KappaCovariate::with_transform(corpus, 0.0, 1.0).expect("identity transform is valid")
    }

    /// Mean zero, unit variance over feasible dyads (scale 1 when constant).
    pub fn standardized(corpus: &Corpus) -> Self {
        let table = corpus.indegree_table();
        let (mut n, mut s, mut ss) = (0.0, 0.0, 0.0);
        for i in 0..corpus.n_docs() {
            let w = corpus.doc_len(i) as f64;
            for &c in table.row(i) {
                n += w;
                s += w * c as f64;
                ss += w * (c as f64) * (c as f64);
            }
        }
        if n == 0.0 {
            return KappaCovariate::raw(corpus);
        }
        let mean = s / n;
        let var = (ss / n - mean * mean).max(0.0);
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        KappaCovariate::with_transform(corpus, mean, scale).expect("finite moments")
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Covariate for cited document `j` as seen by citing document `i`.
    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Corpus, hyperparameters and the matrix inverses every sweep reuses.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub corpus: &'a Corpus,
    pub hyper: Hyperparameters,
    pub options: SamplerOptions,
    pub kappa: KappaCovariate,
    /// `Lambda = Sigma^-1`
    precision: DMatrix<f64>,
    sigma0_inv: DMatrix<f64>,
    sigma_tau_inv: Matrix3<f64>,
    beta_sum: f64,
}

fn spd_inverse(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    cholesky(m).map_err(|_| PctmError::NotSpd(name.to_string()))?;
    let inv = m
        .clone()
        .cholesky()
        .ok_or_else(|| PctmError::NotSpd(name.to_string()))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

impl<'a> Model<'a> {
    pub fn new(corpus: &'a Corpus, hyper: Hyperparameters, options: SamplerOptions) -> Result<Self> {
        let kappa = if options.standardize_indegree {
            KappaCovariate::standardized(corpus)
        } else {
            KappaCovariate::raw(corpus)
        };
        Model::with_kappa(corpus, hyper, options, kappa)
    }

    pub fn with_kappa(
        corpus: &'a Corpus,
        hyper: Hyperparameters,
        options: SamplerOptions,
        kappa: KappaCovariate,
    ) -> Result<Self> {
        hyper.validate(corpus.vocab_size())?;
        let precision = spd_inverse(&hyper.sigma_matrix(), "sigma")?;
        let sigma0_inv = spd_inverse(&hyper.sigma0_matrix(), "sigma0")?;
        let st = spd_inverse(&hyper.sigma_tau_matrix(), "sigma_tau")?;
        let sigma_tau_inv = Matrix3::from_fn(|r, c| st[(r, c)]);
        let beta_sum = hyper.beta.iter().sum();
        Ok(Model {
            corpus,
            hyper,
            options,
            kappa,
            precision,
            sigma0_inv,
            sigma_tau_inv,
            beta_sum,
        })
    }

    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `x_ipj = [1, kappa_j^(i), eta_{j, z}]`
    #[inline]
    pub fn covariates(&self, state: &LatentState, i: usize, j: usize, topic: usize) -> [f64; 3] {
        [1.0, self.kappa.get(j, i), state.eta_at(j, topic)]
    }
}

/// Unnormalized log conditional of each topic for paragraph `g`. The counts
/// in `stats` must already exclude the paragraph.
pub fn z_log_weights(model: &Model, state: &LatentState, stats: &SufficientStats, g: usize, out: &mut [f64]) {
    let corpus = model.corpus;
    let i = corpus.doc_of(g);
    let para = &corpus.document(i).paragraphs[g - corpus.paragraph_range(i).start];
    let beta = &model.hyper.beta;
    let [t0, t1, t2] = state.tau;
    let ds = &state.d_star[corpus.dyad_range(g)];
    let kap = model.kappa.row(i);
    for (k, w) in out.iter_mut().enumerate() {
        let mut lw = state.eta_at(i, k);
        for (v, c) in para.entries() {
            lw += ln_rising(beta[v] + stats.topic_word(k, v) as f64, c);
        }
        lw -= ln_rising(model.beta_sum + stats.topic_total(k) as f64, para.n_words());
        if t2 != 0.0 {
            let mut cite = 0.0;
            for (j, &d) in ds.iter().enumerate() {
                let e = state.eta_at(j, k);
                let a = t0 + t1 * kap[j] - d;
                cite += t2 * e * (t2 * e + 2.0 * a);
            }
            lw -= 0.5 * cite;
        }
        *w = lw;
    }
}

/// Resamples the topic of paragraph `(i, p)`.
pub fn update_z_paragraph(
    model: &Model,
    state: &mut LatentState,
    stats: &mut SufficientStats,
    i: usize,
    p: usize,
    rng: &mut RngStream,
) -> Result<usize> {
    let mut w = vec![0.0; model.k()];
    update_z_global(model, state, stats, model.corpus.global_index(i, p), rng, &mut w)
}

fn update_z_global(
    model: &Model,
    state: &mut LatentState,
    stats: &mut SufficientStats,
    g: usize,
    rng: &mut RngStream,
    scratch: &mut [f64],
) -> Result<usize> {
    let corpus = model.corpus;
    let i = corpus.doc_of(g);
    let para = &corpus.document(i).paragraphs[g - corpus.paragraph_range(i).start];
    stats.remove(i, para, state.z[g])?;
    z_log_weights(model, state, stats, g, scratch);
    let k = sample_categorical(rng, scratch, true)?;
    stats.add(i, para, k);
    state.z[g] = k;
    Ok(k)
}

/// `rho_ik = eta_ik - log sum_{l != k} exp(eta_il)`
pub fn lambda_tilt(eta_row: &[f64], k: usize) -> f64 {
    eta_row[k] - log_sum_exp_except(eta_row, k)
}

/// Draws `lambda_ik ~ PG(N_i, rho_ik)`; zero for a document without paragraphs.
pub fn update_lambda(model: &Model, state: &mut LatentState, i: usize, k: usize, rng: &mut RngStream) -> Result<f64> {
    let n = model.corpus.doc_len(i);
    let l = if n == 0 {
        0.0
    } else {
        let rho = lambda_tilt(state.eta_row(i), k);
        sample_polya_gamma_with(rng, n as f64, rho, model.options.pg_method)?
    };
    state.lambda[i * state.k + k] = l;
    Ok(l)
}

/// Citation evidence about each `eta_ik` from later paragraphs of topic `k`:
/// the number of such dyads and the summed residuals
/// `D*_spi - tau0 - tau1 kappa_i^(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationSums {
    k: usize,
    count: Vec<f64>,
    resid: Vec<f64>,
}

impl CitationSums {
    pub fn count(&self, i: usize, k: usize) -> f64 {
        self.count[i * self.k + k]
    }

    pub fn resid(&self, i: usize, k: usize) -> f64 {
        self.resid[i * self.k + k]
    }
}

pub fn citation_sums(model: &Model, state: &LatentState, stats: &SufficientStats) -> CitationSums {
    let corpus = model.corpus;
    let (n, k) = (corpus.n_docs(), state.k);
    let mut count = vec![0.0; n * k];
    let mut later = vec![0.0; k];
    for i in (0..n).rev() {
        count[i * k..(i + 1) * k].copy_from_slice(&later);
        for (l, &c) in later.iter_mut().zip(stats.doc_topic_row(i)) {
            *l += c as f64;
        }
    }
    let mut resid = vec![0.0; n * k];
    let [t0, t1, _] = state.tau;
    for g in 0..corpus.n_paragraphs() {
        let s = corpus.doc_of(g);
        let topic = state.z[g];
        let kap = model.kappa.row(s);
        for (j, &d) in state.d_star[corpus.dyad_range(g)].iter().enumerate() {
            resid[j * k + topic] += d - t0 - t1 * kap[j];
        }
    }
    CitationSums { k, count, resid }
}

/// Mean and variance of the Gaussian conditional of `eta_ik` given the
/// current `lambda_ik`.
pub fn eta_conditional(
    model: &Model,
    state: &LatentState,
    stats: &SufficientStats,
    sums: &CitationSums,
    i: usize,
    k: usize,
) -> (f64, f64) {
    let lam = &model.precision;
    let t2 = state.tau[2];
    let row = state.eta_row(i);
    let mut prec = lam[(k, k)] + t2 * t2 * sums.count(i, k);
    let mut lin = t2 * sums.resid(i, k) + lam[(k, k)] * state.mu[k];
    for l in 0..state.k {
        if l != k {
            lin -= lam[(k, l)] * (row[l] - state.mu[l]);
        }
    }
    let n = model.corpus.doc_len(i);
    if n > 0 {
        let lambda = state.lambda_at(i, k);
        prec += lambda;
        lin += stats.doc_topic(i, k) as f64 - n as f64 / 2.0 + lambda * log_sum_exp_except(row, k);
    }
    let var = 1.0 / prec;
    (lin * var, var)
}

/// Draws `eta_ik` from its conditional; `lambda_ik` should be fresh.
pub fn update_eta_entry(
    model: &Model,
    state: &mut LatentState,
    stats: &SufficientStats,
    sums: &CitationSums,
    i: usize,
    k: usize,
    rng: &mut RngStream,
) -> f64 {
    let (m, v) = eta_conditional(model, state, stats, sums, i, k);
    let e = rng.normal(m, v.sqrt());
    state.eta[i * state.k + k] = e;
    e
}

/// Draws `D*` for dyad `(g, j)` on the side of zero its citation dictates.
pub fn update_d_star(model: &Model, state: &mut LatentState, g: usize, j: usize, rng: &mut RngStream) -> Result<f64> {
    let corpus = model.corpus;
    let i = corpus.doc_of(g);
    let x = model.covariates(state, i, j, state.z[g]);
    let mean = state.tau[0] + state.tau[1] * x[1] + state.tau[2] * x[2];
    let d = if corpus.is_cited(g, j) {
        sample_truncated_normal(rng, mean, 1.0, 0.0, f64::INFINITY)?
    } else {
        sample_truncated_normal(rng, mean, 1.0, f64::NEG_INFINITY, 0.0)?
    };
    state.d_star[corpus.dyad_range(g).start + j] = d;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3 {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Conjugate posterior of regression coefficients under a Gaussian prior and
/// unit-variance Gaussian errors, from the normal-equation sums.
pub fn ridge_posterior(
    xtx: &Matrix3<f64>,
    xty: &Vector3<f64>,
    prior_prec: &Matrix3<f64>,
    prior_mean: &Vector3<f64>,
) -> Result<Gaussian3> {
    let prec = xtx + prior_prec;
    let chol = prec
        .cholesky()
        .ok_or_else(|| PctmError::NotSpd("tau posterior precision".into()))?;
    let mean = chol.solve(&(xty + prior_prec * prior_mean));
    let cov = chol.inverse();
    Ok(Gaussian3 {
        mean,
        cov: (cov + cov.transpose()) * 0.5,
    })
}

/// `X'X` and `X'D*` over all feasible dyads.
pub fn tau_normal_equations(model: &Model, state: &LatentState) -> (Matrix3<f64>, Vector3<f64>) {
    let corpus = model.corpus;
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for g in 0..corpus.n_paragraphs() {
        let i = corpus.doc_of(g);
        let topic = state.z[g];
        let kap = model.kappa.row(i);
        for (j, &d) in state.d_star[corpus.dyad_range(g)].iter().enumerate() {
            let x = Vector3::new(1.0, kap[j], state.eta_at(j, topic));
            xtx += x * x.transpose();
            xty += x * d;
        }
    }
    (xtx, xty)
}

pub fn tau_posterior(model: &Model, state: &LatentState) -> Result<Gaussian3> {
    let (xtx, xty) = tau_normal_equations(model, state);
    ridge_posterior(&xtx, &xty, &model.sigma_tau_inv, &Vector3::from(model.hyper.mu_tau))
}

pub fn update_tau(model: &Model, state: &mut LatentState, rng: &mut RngStream) -> Result<[f64; 3]> {
    let post = tau_posterior(model, state)?;
    let cov = DMatrix::from_fn(3, 3, |r, c| post.cov[(r, c)]);
    let draw = sample_mvn(rng, post.mean.as_slice(), &cov)?;
    state.tau = [draw[0], draw[1], draw[2]];
    Ok(state.tau)
}

/// Log density of tau given Z and eta with every `D*` integrated out (up to a
/// constant), with its gradient and Hessian.
pub fn tau_marginal(model: &Model, state: &LatentState, tau: &Vector3<f64>) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let corpus = model.corpus;
    let dev = tau - Vector3::from(model.hyper.mu_tau);
    let prec = &model.sigma_tau_inv;
    let mut lp = -0.5 * dev.dot(&(prec * dev));
    let mut grad = -(prec * dev);
    let mut hess = -prec;
    for g in 0..corpus.n_paragraphs() {
        let i = corpus.doc_of(g);
        let topic = state.z[g];
        let kap = model.kappa.row(i);
        for (j, &kj) in kap[..i].iter().enumerate() {
            let x = Vector3::new(1.0, kj, state.eta_at(j, topic));
            let m = tau.dot(&x);
            // derivative of log Phi(+-m) is +-r, second derivative -r(r +- m)
            let (l, r, w) = if corpus.is_cited(g, j) {
                let l = log_norm_cdf(m);
                let r = (log_norm_pdf(m) - l).exp();
                (l, r, r * (r + m))
            } else {
                let l = log_norm_cdf(-m);
                let r = (log_norm_pdf(m) - l).exp();
                (l, -r, r * (r - m))
            };
            lp += l;
            grad += x * r;
            hess -= x * x.transpose() * w;
        }
    }
    (lp, grad, hess)
}

/// Mode of [`tau_marginal`] by damped Newton from `start`, with the negative
/// Hessian there.
pub fn tau_marginal_mode(model: &Model, state: &LatentState, start: Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let mut tau = start;
    let (mut lp, mut grad, mut hess) = tau_marginal(model, state, &tau);
    for _ in 0..100 {
        let neg = -hess;
        let chol = neg
            .cholesky()
            .ok_or_else(|| PctmError::NotSpd("tau marginal Hessian".into()))?;
        let mut step = chol.solve(&grad);
        let mut moved = false;
        for _ in 0..60 {
            let cand = tau + step;
            let (l, g, h) = tau_marginal(model, state, &cand);
            if l.is_finite() && l >= lp - 1e-12 * lp.abs().max(1.0) {
                tau = cand;
                lp = l;
                grad = g;
                hess = h;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || step.norm() < 1e-9 * (1.0 + tau.norm()) {
            break;
        }
    }
    if !lp.is_finite() {
        return Err(PctmError::Numerical("tau marginal mode is not finite".into()));
    }
    Ok((tau, -hess))
}

/// Independence Metropolis-Hastings draw of tau from its `D*`-marginal
/// conditional, proposing from the Laplace approximation with its
/// covariance inflated by `TAU_BLOCK_INFLATE`. The caller must redraw every
/// `D*` afterwards. Returns whether the proposal was accepted.
pub fn update_tau_block(model: &Model, state: &mut LatentState, rng: &mut RngStream) -> Result<bool> {
    let current = Vector3::from(state.tau);
    let (mode, info) = tau_marginal_mode(model, state, current)?;
    let prop_prec = info / (TAU_BLOCK_INFLATE * TAU_BLOCK_INFLATE);
    let chol = prop_prec
        .cholesky()
        .ok_or_else(|| PctmError::NotSpd("tau proposal precision".into()))?;
    // x = mode + L^-T z has precision L L^T
    let z = Vector3::new(rng.std_normal(), rng.std_normal(), rng.std_normal());
    let l_t = chol.l().transpose();
    let offset = l_t
        .solve_upper_triangular(&z)
        .ok_or_else(|| PctmError::Numerical("tau proposal solve".into()))?;
    let proposal = mode + offset;
    let log_q = |t: &Vector3<f64>| {
        let d = t - mode;
        -0.5 * d.dot(&(prop_prec * d))
    };
    let (lp_cur, _, _) = tau_marginal(model, state, &current);
    let (lp_prop, _, _) = tau_marginal(model, state, &proposal);
    let log_ratio = lp_prop - lp_cur + log_q(&current) - log_q(&proposal);
    let accept = log_ratio.is_finite() && rng.uniform_open().ln() < log_ratio;
    if accept {
        state.tau = [proposal[0], proposal[1], proposal[2]];
    }
    Ok(accept)
}

const TAU_BLOCK_INFLATE: f64 = 1.2;

/// Conditional of the offset `c` in the move `eta += c`, `mu += c` (unless
/// mu is fixed), `tau0 -= tau2 c`, as `(mean, variance)`. Word and citation
/// terms do not depend on `c`, so only the priors contribute.
pub fn eta_shift_conditional(model: &Model, state: &LatentState) -> (f64, f64) {
    let k = state.k;
    let ones = nalgebra::DVector::from_element(k, 1.0);
    let (mut a, mut b) = if model.options.fix_mu {
        let lam1 = model.precision() * &ones;
        let n = model.corpus.n_docs();
        let mut b = 0.0;
        for i in 0..n {
            for (l, (&e, &m)) in state.eta_row(i).iter().zip(&state.mu).enumerate() {
                b -= lam1[l] * (e - m);
            }
        }
        (n as f64 * ones.dot(&lam1), b)
    } else {
        let p1 = &model.sigma0_inv * &ones;
        let b: f64 = (0..k).map(|l| -p1[l] * (state.mu[l] - model.hyper.mu0[l])).sum();
        (ones.dot(&p1), b)
    };
    let v = Vector3::new(-state.tau[2], 0.0, 0.0);
    let pv = model.sigma_tau_inv * v;
    a += v.dot(&pv);
    b -= pv.dot(&(Vector3::from(state.tau) - Vector3::from(model.hyper.mu_tau)));
    (b / a, 1.0 / a)
}

pub fn update_eta_shift(model: &Model, state: &mut LatentState, rng: &mut RngStream) -> f64 {
    let (m, v) = eta_shift_conditional(model, state);
    let c = rng.normal(m, v.sqrt());
    for e in state.eta.iter_mut() {
        *e += c;
    }
    if !model.options.fix_mu {
        for m in state.mu.iter_mut() {
            *m += c;
        }
    }
    state.tau[0] -= state.tau[2] * c;
    c
}

/// `V* = (Sigma0^-1 + N Lambda)^-1`, `m* = V* (Sigma0^-1 mu0 + Lambda sum_i eta_i)`.
pub fn mu_posterior(model: &Model, state: &LatentState) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let k = state.k;
    let n = model.corpus.n_docs();
    let mut sum = nalgebra::DVector::zeros(k);
    for i in 0..n {
        for (s, &e) in sum.iter_mut().zip(state.eta_row(i)) {
            *s += e;
        }
    }
    let mu0 = nalgebra::DVector::from_column_slice(&model.hyper.mu0);
    let prec = &model.sigma0_inv + &model.precision * n as f64;
    let chol = prec
        .clone()
        .cholesky()
        .ok_or_else(|| PctmError::NotSpd("mu posterior precision".into()))?;
    let mean = chol.solve(&(&model.sigma0_inv * mu0 + &model.precision * sum));
    let cov = chol.inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean.iter().copied().collect(), cov))
}

pub fn update_mu(model: &Model, state: &mut LatentState, rng: &mut RngStream) -> Result<()> {
    let (mean, cov) = mu_posterior(model, state)?;
    state.mu = sample_mvn(rng, &mean, &cov)?;
    Ok(())
}

/// Posterior-mean topic-word distributions `(beta_v + C_k^v) / sum_l (beta_l + C_k^l)`, K x V.
pub fn recover_psi(stats: &SufficientStats, hyper: &Hyperparameters) -> Vec<Vec<f64>> {
    let beta_sum: f64 = hyper.beta.iter().sum();
    (0..stats.k())
        .map(|k| {
            let denom = beta_sum + stats.topic_total(k) as f64;
            stats
                .topic_word_row(k)
                .iter()
                .zip(&hyper.beta)
                .map(|(&c, &b)| (b + c as f64) / denom)
                .collect()
        })
        .collect()
}

/// Collapsed log joint up to an additive constant.
pub fn log_joint(model: &Model, state: &LatentState, stats: &SufficientStats) -> f64 {
    let corpus = model.corpus;
    let beta = &model.hyper.beta;
    let k = state.k;
    let mut lp = 0.0;
    for t in 0..k {
        lp += lgamma(model.beta_sum) - lgamma(model.beta_sum + stats.topic_total(t) as f64);
        for (v, &c) in stats.topic_word_row(t).iter().enumerate() {
            if c > 0 {
                lp += lgamma(beta[v] + c as f64) - lgamma(beta[v]);
            }
        }
    }
    let lam = &model.precision;
    for i in 0..corpus.n_docs() {
        let row = state.eta_row(i);
        let lse = log_sum_exp(row);
        for (t, &e) in row.iter().enumerate() {
            lp += stats.doc_topic(i, t) as f64 * (e - lse);
        }
        let dev: Vec<f64> = row.iter().zip(&state.mu).map(|(e, m)| e - m).collect();
        lp -= 0.5 * quad_form(lam, &dev);
    }
    let [t0, t1, t2] = state.tau;
    for g in 0..corpus.n_paragraphs() {
        let i = corpus.doc_of(g);
        let topic = state.z[g];
        let kap = model.kappa.row(i);
        for (j, &d) in state.d_star[corpus.dyad_range(g)].iter().enumerate() {
            let r = d - t0 - t1 * kap[j] - t2 * state.eta_at(j, topic);
            lp -= 0.5 * r * r;
        }
    }
    let st = DMatrix::from_fn(3, 3, |r, c| model.sigma_tau_inv[(r, c)]);
    let dt: Vec<f64> = state.tau.iter().zip(&model.hyper.mu_tau).map(|(a, b)| a - b).collect();
    lp -= 0.5 * quad_form(&st, &dt);
    let dm: Vec<f64> = state.mu.iter().zip(&model.hyper.mu0).map(|(a, b)| a - b).collect();
    lp -= 0.5 * quad_form(&model.sigma0_inv, &dm);
    lp
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (r, &xr) in x.iter().enumerate() {
        for (c, &xc) in x.iter().enumerate() {
            s += xr * m[(r, c)] * xc;
        }
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseSeconds {
    pub z: f64,
    pub eta: f64,
    pub d_star: f64,
    pub tau_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub iteration: usize,
    pub log_joint: f64,
    pub topic_occupancy: Vec<u64>,
    /// Outcome of the marginal tau move, when enabled.
    pub tau_block_accepted: Option<bool>,
    pub seconds: PhaseSeconds,
}

/// One full scan: Z, then (lambda, eta) per entry, then the optional marginal
/// tau move, D*, tau, mu and the optional eta offset move.
pub fn sweep(
    model: &Model,
    state: &mut LatentState,
    stats: &mut SufficientStats,
    rng: &mut RngStream,
    iteration: usize,
) -> Result<SweepReport> {
    let corpus = model.corpus;
    let mut seconds = PhaseSeconds::default();
    let mut scratch = vec![0.0; state.k];

    let t = Instant::now();
    for g in 0..corpus.n_paragraphs() {
        update_z_global(model, state, stats, g, rng, &mut scratch)?;
    }
    seconds.z = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let sums = citation_sums(model, state, stats);
    for i in 0..corpus.n_docs() {
        for k in 0..state.k {
            update_lambda(model, state, i, k, rng)?;
            update_eta_entry(model, state, stats, &sums, i, k, rng);
        }
    }
    seconds.eta = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let tau_block_accepted = if model.options.tau_block {
        Some(update_tau_block(model, state, rng)?)
    } else {
        None
    };
    for g in 0..corpus.n_paragraphs() {
        for j in 0..corpus.doc_of(g) {
            update_d_star(model, state, g, j, rng)?;
        }
    }
    seconds.d_star = t.elapsed().as_secs_f64();

    let t = Instant::now();
    update_tau(model, state, rng)?;
    if !model.options.fix_mu {
        update_mu(model, state, rng)?;
    }
    if model.options.eta_shift {
        update_eta_shift(model, state, rng);
    }
    seconds.tau_mu = t.elapsed().as_secs_f64();

    let lj = log_joint(model, state, stats);
    if !lj.is_finite() {
        return Err(PctmError::Numerical(format!("log joint is {lj} after sweep {iteration}")));
    }
    Ok(SweepReport {
        iteration,
        log_joint: lj,
        topic_occupancy: stats.occupancy(),
        tau_block_accepted,
        seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(PctmError::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(PctmError::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether sweep `t` (1-based) is retained.
    pub fn keeps(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Runs one chain from `init`, retaining thinned post-burn-in draws.
pub fn run_chain(
    model: &Model,
    init: &InitBundle,
    settings: ChainSettings,
    header: StoreHeader,
    rng: &mut RngStream,
    on_report: &mut dyn FnMut(&SweepReport),
) -> Result<SampleStore> {
    settings.validate()?;
    let (mut state, mut stats) = new_state(model.corpus, &model.hyper, init)?;
    if model.options.fix_mu {
        state.mu = model.hyper.mu0.clone();
    }
    let mut store = SampleStore::new(header);
    for t in 1..=settings.n_iter {
        let report = sweep(model, &mut state, &mut stats, rng, t)?;
        store.log_joint.push(report.log_joint);
        if settings.keeps(t) {
            store.push_draw(t, &state);
        }
        on_report(&report);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CitationSet, Document, Paragraph, Vocabulary};
    use crate::math::{log_norm_cdf, softmax};

    /// Doc 0: one paragraph; doc 1: two paragraphs, the first citing doc 0.
    fn toy_corpus() -> Corpus {
        let docs = vec![
            Document {
                paragraphs: vec![Paragraph::from_counts([(0, 2), (1, 1)])],
            },
            Document {
                paragraphs: vec![
                    Paragraph::from_counts([(0, 1), (3, 2)]),
                    Paragraph::from_counts([(2, 3), (1, 1)]),
                ],
            },
        ];
        Corpus::new(
            Vocabulary::numbered(4).unwrap(),
            vec!["a".into(), "b".into()],
            docs,
            CitationSet::from_triples([(1, 0, 0)]).unwrap(),
        )
        .unwrap()
    }

    fn toy_hyper(k: usize) -> Hyperparameters {
        let mut h = Hyperparameters::defaults(k, 4);
        h.beta = vec![0.3, 0.7, 0.2, 0.45];
        h.mu0 = (0..k).map(|t| 0.2 * t as f64 - 0.1).collect();
        for r in 0..k {
            for c in 0..k {
                h.sigma[r][c] = if r == c { 1.3 } else { 0.4 };
                h.sigma0[r][c] = if r == c { 2.0 } else { 0.3 };
            }
        }
        h.mu_tau = [-1.0, 0.2, 0.5];
        h.sigma_tau = [[2.0, 0.1, 0.0], [0.1, 1.5, 0.2], [0.0, 0.2, 3.0]];
        h
    }

    fn toy_state(corpus: &Corpus, k: usize, z: Vec<usize>, rng: &mut RngStream) -> LatentState {
        let n = corpus.n_docs();
        LatentState {
            k,
            z,
            eta: (0..n * k).map(|_| rng.normal(0.0, 1.0)).collect(),
            lambda: (0..n * k).map(|_| 0.5 + rng.uniform()).collect(),
            d_star: (0..corpus.n_dyads())
                .map(|d| {
                    let (g, j) = corpus.locate_dyad(d);
                    let x = rng.exp1();
                    if corpus.is_cited(g, j) {
                        x
                    } else {
                        -x
                    }
                })
                .collect(),
            tau: [-0.7, 0.4, 0.9],
            mu: (0..k).map(|_| rng.normal(0.0, 0.5)).collect(),
        }
    }

    /// Unnormalized collapsed joint from scratch: Dirichlet-multinomial
    /// words, topic draws from softmax(eta), and D* densities.
    fn brute_joint(model: &Model, state: &LatentState) -> f64 {
        let corpus = model.corpus;
        let k = state.k;
        let beta = &model.hyper.beta;
        let bsum: f64 = beta.iter().sum();
        let mut c = vec![vec![0.0; corpus.vocab_size()]; k];
        for g in 0..corpus.n_paragraphs() {
            let i = corpus.doc_of(g);
            let p = g - corpus.paragraph_range(i).start;
            for (v, n) in corpus.paragraph(i, p).entries() {
                c[state.z[g]][v] += n as f64;
            }
        }
        let mut lp = 0.0;
        for row in &c {
            let tot: f64 = row.iter().sum();
            lp += lgamma(bsum) - lgamma(bsum + tot);
            for (v, &x) in row.iter().enumerate() {
                lp += lgamma(beta[v] + x) - lgamma(beta[v]);
            }
        }
        for g in 0..corpus.n_paragraphs() {
            let i = corpus.doc_of(g);
            lp += softmax(state.eta_row(i))[state.z[g]].ln();
            for j in 0..i {
                let x = model.covariates(state, i, j, state.z[g]);
                let m = state.tau[0] * x[0] + state.tau[1] * x[1] + state.tau[2] * x[2];
                let d = state.d_star[corpus.dyad_range(g).start + j];
                lp += -0.5 * (d - m) * (d - m);
            }
        }
        lp
    }

    fn pmf_from_weights(lw: &[f64]) -> Vec<f64> {
        let lse = log_sum_exp(lw);
        lw.iter().map(|w| (w - lse).exp()).collect()
    }

    #[test]
    fn z_pmf_matches_brute_force_joint() {
        let corpus = toy_corpus();
        let model = Model::new(&corpus, toy_hyper(2), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(3);
        for _ in 0..20 {
            let z0: Vec<usize> = (0..3).map(|_| rng.below(2)).collect();
            let state = toy_state(&corpus, 2, z0.clone(), &mut rng);
            for g in 0..3 {
                let mut others = z0.clone();
                let brute: Vec<f64> = (0..2)
                    .map(|t| {
                        others[g] = t;
                        let mut s = state.clone();
                        s.z = others.clone();
                        brute_joint(&model, &s)
                    })
                    .collect();
                let mut stats = SufficientStats::from_assignments(&corpus, &z0, 2).unwrap();
                let i = corpus.doc_of(g);
                let p = g - corpus.paragraph_range(i).start;
                stats.remove(i, corpus.paragraph(i, p), z0[g]).unwrap();
                let mut lw = vec![0.0; 2];
                z_log_weights(&model, &state, &stats, g, &mut lw);
                for (a, b) in pmf_from_weights(&lw).iter().zip(pmf_from_weights(&brute)) {
                    assert!((a - b).abs() <= 1e-10 * b.max(1e-300), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn z_weights_follow_topic_relabeling() {
        let corpus = toy_corpus();
        let k = 3;
        let hyper = Hyperparameters::defaults(k, 4);
        let model = Model::new(&corpus, hyper, SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(12);
        let z = vec![0, 2, 1];
        let state = toy_state(&corpus, k, z.clone(), &mut rng);
        let perm = [2, 0, 1];
        let inv = crate::assign::invert(&perm);
        let mut permuted = state.clone();
        permuted.z = z.iter().map(|&t| inv[t]).collect();
        for i in 0..corpus.n_docs() {
            for t in 0..k {
                permuted.eta[i * k + t] = state.eta[i * k + perm[t]];
            }
        }
        let g = 1;
        let mut s1 = SufficientStats::from_assignments(&corpus, &state.z, k).unwrap();
        let mut s2 = SufficientStats::from_assignments(&corpus, &permuted.z, k).unwrap();
        s1.remove(1, corpus.paragraph(1, 0), state.z[g]).unwrap();
        s2.remove(1, corpus.paragraph(1, 0), permuted.z[g]).unwrap();
        let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
        z_log_weights(&model, &state, &s1, g, &mut a);
        z_log_weights(&model, &permuted, &s2, g, &mut b);
        for t in 0..k {
            assert!((b[t] - a[perm[t]]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tau2_cuts_the_citation_link() {
        let corpus = toy_corpus();
        let model = Model::new(&corpus, toy_hyper(2), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(5);
        let mut state = toy_state(&corpus, 2, vec![0, 1, 1], &mut rng);
        state.tau[2] = 0.0;
        let stats = SufficientStats::from_assignments(&corpus, &state.z, 2).unwrap();
        let mut other = state.clone();
        other.d_star = other.d_star.iter().map(|d| d * 7.0).collect();
        let (mut a, mut b) = (vec![0.0; 2], vec![0.0; 2]);
        let mut st = stats.clone();
        st.remove(1, corpus.paragraph(1, 0), 1).unwrap();
        z_log_weights(&model, &state, &st, 1, &mut a);
        z_log_weights(&model, &other, &st, 1, &mut b);
        assert_eq!(a, b);
        let s1 = citation_sums(&model, &state, &stats);
        let s2 = citation_sums(&model, &other, &stats);
        for k in 0..2 {
            assert_eq!(
                eta_conditional(&model, &state, &stats, &s1, 0, k),
                eta_conditional(&model, &other, &stats, &s2, 0, k)
            );
        }
    }

    #[test]
    fn tau_posterior_is_the_ridge_solution() {
        let corpus = toy_corpus();
        let model = Model::new(&corpus, toy_hyper(2), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(21);
        let state = toy_state(&corpus, 2, vec![1, 0, 1], &mut rng);
        let post = tau_posterior(&model, &state).unwrap();
        let rows = corpus.n_dyads();
        let x = DMatrix::from_fn(rows, 3, |d, c| {
            let (g, j) = corpus.locate_dyad(d);
            model.covariates(&state, corpus.doc_of(g), j, state.z[g])[c]
        });
        let y = nalgebra::DVector::from_column_slice(&state.d_star);
        let s_inv = DMatrix::from_fn(3, 3, |r, c| model.hyper.sigma_tau[r][c]).try_inverse().unwrap();
        let m0 = nalgebra::DVector::from_column_slice(&model.hyper.mu_tau);
        let cov = (x.transpose() * &x + &s_inv).try_inverse().unwrap();
        let mean = &cov * (x.transpose() * &y + &s_inv * m0);
        for r in 0..3 {
            assert!((post.mean[r] - mean[r]).abs() < 1e-10);
            for c in 0..3 {
                assert!((post.cov[(r, c)] - cov[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flat_prior_limit_is_least_squares() {
        let mut rng = RngStream::new(8);
        let rows: Vec<[f64; 3]> = (0..25).map(|_| [1.0, rng.normal(2.0, 1.0), rng.normal(0.0, 1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| -1.0 + 0.5 * r[1] - 0.3 * r[2] + rng.normal(0.0, 0.2)).collect();
        let mut xtx = Matrix3::zeros();
        let mut xty = Vector3::zeros();
        for (r, &yy) in rows.iter().zip(&y) {
            let v = Vector3::from(*r);
            xtx += v * v.transpose();
            xty += v * yy;
        }
        let post = ridge_posterior(&xtx, &xty, &Matrix3::zeros(), &Vector3::new(9.0, 9.0, 9.0)).unwrap();
        let x = DMatrix::from_fn(25, 3, |i, c| rows[i][c]);
        let ols = x.clone().svd(true, true).solve(&nalgebra::DVector::from_column_slice(&y), 1e-14).unwrap();
        for r in 0..3 {
            assert!((post.mean[r] - ols[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn mu_posterior_matches_closed_form() {
        let corpus = toy_corpus();
        let model = Model::new(&corpus, toy_hyper(3), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(30);
        let state = toy_state(&corpus, 3, vec![0, 1, 2], &mut rng);
        let (mean, cov) = mu_posterior(&model, &state).unwrap();
        let h = &model.hyper;
        let lam = h.sigma_matrix().try_inverse().unwrap();
        let s0 = h.sigma0_matrix().try_inverse().unwrap();
        let v = (&s0 + &lam * 2.0).try_inverse().unwrap();
        let sum = nalgebra::DVector::from_fn(3, |t, _| state.eta[t] + state.eta[3 + t]);
        let m = &v * (&s0 * nalgebra::DVector::from_column_slice(&h.mu0) + &lam * sum);
        for r in 0..3 {
            assert!((mean[r] - m[r]).abs() < 1e-10);
            for c in 0..3 {
                assert!((cov[(r, c)] - v[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn psi_is_the_dirichlet_mean() {
        let docs = vec![Document {
            paragraphs: vec![Paragraph::from_counts([(0, 2), (2, 1)])],
        }];
        let corpus = Corpus::new(Vocabulary::numbered(3).unwrap(), vec!["d".into()], docs, CitationSet::new()).unwrap();
        let mut h = Hyperparameters::defaults(2, 3);
        h.beta = vec![0.5, 0.25, 1.0];
        let stats = SufficientStats::from_assignments(&corpus, &[1], 2).unwrap();
        let psi = recover_psi(&stats, &h);
        assert_eq!(psi[0], vec![0.5 / 1.75, 0.25 / 1.75, 1.0 / 1.75]);
        assert_eq!(psi[1], vec![2.5 / 4.75, 0.25 / 4.75, 2.0 / 4.75]);
    }

    /// Long (lambda, eta_0k) Gibbs run against the marginal conditional of
    /// eta_0k evaluated on a grid.
    #[test]
    fn eta_update_targets_its_conditional() {
        let corpus = toy_corpus();
        let k = 2;
        let model = Model::new(&corpus, toy_hyper(k), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(77);
        let mut state = toy_state(&corpus, k, vec![1, 1, 0], &mut rng);
        let stats = SufficientStats::from_assignments(&corpus, &state.z, k).unwrap();
        let sums = citation_sums(&model, &state, &stats);
        let (i, t) = (0, 1);
        let lam = model.precision().clone();
        let log_target = |e: f64, st: &LatentState| {
            let mut row = st.eta_row(i).to_vec();
            row[t] = e;
            let dev: Vec<f64> = row.iter().zip(&st.mu).map(|(a, b)| a - b).collect();
            let mut lp = -0.5 * quad_form(&lam, &dev);
            let lse = log_sum_exp(&row);
            for l in 0..k {
                lp += stats.doc_topic(i, l) as f64 * (row[l] - lse);
            }
            for g in 0..corpus.n_paragraphs() {
                if corpus.doc_of(g) > i && st.z[g] == t {
                    let x = model.covariates(st, corpus.doc_of(g), i, t);
                    let m = st.tau[0] + st.tau[1] * x[1] + st.tau[2] * e;
                    let d = st.d_star[corpus.dyad_range(g).start + i];
                    lp -= 0.5 * (d - m) * (d - m);
                }
            }
            lp
        };
        let (lo, hi, bins) = (-6.0, 6.0, 60);
        let width = (hi - lo) / bins as f64;
        let fine = 40;
        let mut expected = vec![0.0; bins];
        for (b, e) in expected.iter_mut().enumerate() {
            for f in 0..fine {
                let x = lo + width * (b as f64 + (f as f64 + 0.5) / fine as f64);
                *e += log_target(x, &state).exp();
            }
        }
        let total: f64 = expected.iter().sum();
        expected.iter_mut().for_each(|e| *e /= total);

        let n = 200_000;
        let mut hist = vec![0.0; bins];
        for _ in 0..n {
            update_lambda(&model, &mut state, i, t, &mut rng).unwrap();
            let e = update_eta_entry(&model, &mut state, &stats, &sums, i, t, &mut rng);
            let b = ((e - lo) / width).floor();
            if b >= 0.0 && (b as usize) < bins {
                hist[b as usize] += 1.0 / n as f64;
            }
        }
        let tv: f64 = 0.5 * hist.iter().zip(&expected).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn tau_marginal_derivatives_match_finite_differences() {
        let corpus = toy_corpus();
        let model = Model::new(&corpus, toy_hyper(2), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(4);
        let state = toy_state(&corpus, 2, vec![0, 1, 0], &mut rng);
        let tau = Vector3::new(-0.4, 0.3, 1.2);
        let (_, g, h) = tau_marginal(&model, &state, &tau);
        let eps = 1e-5;
        for d in 0..3 {
            let mut up = tau;
            let mut dn = tau;
            up[d] += eps;
            dn[d] -= eps;
            let (lu, gu, _) = tau_marginal(&model, &state, &up);
            let (ld, gd, _) = tau_marginal(&model, &state, &dn);
            assert!(((lu - ld) / (2.0 * eps) - g[d]).abs() < 1e-6);
            for r in 0..3 {
                assert!(((gu[r] - gd[r]) / (2.0 * eps) - h[(r, d)]).abs() < 1e-6);
            }
        }
        // likelihood part is the probit log-likelihood of the citations
        let mut flat = state.clone();
        flat.tau = [0.0; 3];
        let (lp, _, _) = tau_marginal(&model, &flat, &Vector3::new(0.5, 0.0, 0.0));
        let dev = Vector3::new(0.5, 0.0, 0.0) - Vector3::from(model.hyper.mu_tau);
        let prior = -0.5 * dev.dot(&(model.sigma_tau_inv * dev));
        let lik = log_norm_cdf(0.5) + log_norm_cdf(-0.5);
        assert!((lp - prior - lik).abs() < 1e-12);
    }

    /// With Z and eta held fixed, the chain on (D*, tau) with and without the
    /// marginal move must target the same tau posterior; checked against
    /// importance sampling from the prior.
    #[test]
    fn marginal_tau_move_preserves_the_posterior() {
        let docs: Vec<Document> = (0..6)
            .map(|_| Document {
                paragraphs: vec![Paragraph::from_counts([(0, 1)]), Paragraph::from_counts([(1, 1)])],
            })
            .collect();
        let cites = CitationSet::from_triples([(1, 0, 0), (2, 1, 0), (3, 0, 1), (3, 1, 0), (4, 0, 3), (5, 1, 0), (5, 0, 2)]).unwrap();
        let corpus = Corpus::new(
            Vocabulary::numbered(2).unwrap(),
            (0..6).map(|i| format!("d{i}")).collect(),
            docs,
            cites,
        )
        .unwrap();
        let mut hyper = Hyperparameters::defaults(2, 2);
        hyper.mu_tau = [-1.0, 0.0, 0.5];
        hyper.sigma_tau = [[1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]];
        let mut rng = RngStream::new(2024);
        let z: Vec<usize> = (0..corpus.n_paragraphs()).map(|g| g % 2).collect();
        let base = toy_state(&corpus, 2, z, &mut rng);

        // importance sampling from the prior
        let model = Model::new(&corpus, hyper.clone(), SamplerOptions::default()).unwrap();
        let chol = cholesky(&hyper.sigma_tau_matrix()).unwrap();
        let mut num = Vector3::zeros();
        let mut den = 0.0;
        let prior = Vector3::from(hyper.mu_tau);
        let loglik = |t: &Vector3<f64>| {
            let (lp, _, _) = tau_marginal(&model, &base, t);
            let dev = t - prior;
            lp + 0.5 * dev.dot(&(model.sigma_tau_inv * dev))
        };
        for _ in 0..400_000 {
            let draw = sample_mvn_chol_local(&mut rng, &prior, &chol);
            let w = loglik(&draw).exp();
            num += draw * w;
            den += w;
        }
        let oracle = num / den;

        for block in [false, true] {
            let mut opts = SamplerOptions::default();
            opts.tau_block = block;
            let model = Model::new(&corpus, hyper.clone(), opts).unwrap();
            let mut state = base.clone();
            let mut acc = Vector3::zeros();
            let n = 60_000;
            for t in 0..n + 1000 {
                if block {
                    update_tau_block(&model, &mut state, &mut rng).unwrap();
                }
                for g in 0..corpus.n_paragraphs() {
                    for j in 0..corpus.doc_of(g) {
                        update_d_star(&model, &mut state, g, j, &mut rng).unwrap();
                    }
                }
                update_tau(&model, &mut state, &mut rng).unwrap();
                if t >= 1000 {
                    acc += Vector3::from(state.tau);
                }
            }
            let mean = acc / n as f64;
            for d in 0..3 {
                assert!((mean[d] - oracle[d]).abs() < 0.03, "block {block}: {mean:?} vs {oracle:?}");
            }
        }
    }

    fn sample_mvn_chol_local(rng: &mut RngStream, mean: &Vector3<f64>, chol: &DMatrix<f64>) -> Vector3<f64> {
        let z = Vector3::new(rng.std_normal(), rng.std_normal(), rng.std_normal());
        let mut out = *mean;
        for r in 0..3 {
            for c in 0..=r {
                out[r] += chol[(r, c)] * z[c];
            }
        }
        out
    }

    #[test]
    fn shift_conditional_matches_log_joint() {
        let corpus = toy_corpus();
        for fix_mu in [false, true] {
            let mut opts = SamplerOptions::default();
            opts.fix_mu = fix_mu;
            let model = Model::new(&corpus, toy_hyper(3), opts).unwrap();
            let mut rng = RngStream::new(15);
            let state = toy_state(&corpus, 3, vec![2, 0, 1], &mut rng);
            let stats = SufficientStats::from_assignments(&corpus, &state.z, 3).unwrap();
            let (m, v) = eta_shift_conditional(&model, &state);
            let base = log_joint(&model, &state, &stats);
            let shifted = |c: f64| {
                let mut s = state.clone();
                s.eta.iter_mut().for_each(|e| *e += c);
                if !fix_mu {
                    s.mu.iter_mut().for_each(|x| *x += c);
                }
                s.tau[0] -= s.tau[2] * c;
                log_joint(&model, &s, &stats) - base
            };
            for c in [-1.5, -0.3, 0.4, 2.0] {
                let quad = -0.5 * ((c - m) * (c - m) - m * m) / v;
                assert!((shifted(c) - quad).abs() < 1e-9 * (1.0 + quad.abs()), "fix_mu {fix_mu}, c {c}");
            }
        }
    }

    #[test]
    fn sweeps_keep_counts_consistent() {
        let corpus = toy_corpus();
        let model = Model::new(&corpus, toy_hyper(2), SamplerOptions::default()).unwrap();
        let mut rng = RngStream::new(1);
        let mut state = toy_state(&corpus, 2, vec![0, 1, 0], &mut rng);
        let mut stats = SufficientStats::from_assignments(&corpus, &state.z, 2).unwrap();
        for t in 1..=200 {
            let r = sweep(&model, &mut state, &mut stats, &mut rng, t).unwrap();
            assert!(r.log_joint.is_finite());
            assert_eq!(stats, SufficientStats::from_assignments(&corpus, &state.z, 2).unwrap());
            crate::state::check_d_star_signs(&corpus, &state.d_star).unwrap();
        }
    }
}
