//! Trace summaries: moments, quantiles, effective sample size and split R-hat.

use serde::Serialize;

use crate::assign::max_weight_assignment;
use crate::corpus::Corpus;
use crate::error::{PctmError, Result};
use crate::gibbs::recover_psi;
use crate::math::softmax;
use crate::state::SufficientStats;
use crate::store::SampleStore;

/// `theta = softmax(eta)`
pub fn theta_from_eta(eta: &[f64]) -> Vec<f64> {
    softmax(eta)
}

/// Sample quantile with linear interpolation between order statistics
/// (the common "type 7" definition).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let h = (s.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Autocovariance at lags `0..n` (biased, divided by n).
fn autocov(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    (0..n)
        .map(|lag| d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Effective sample size over equal-length chains, truncating the summed
/// autocorrelations by Geyer's initial monotone sequence. Never exceeds the
/// number of draws.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let total = (m * n) as f64;
    if n < 4 {
        return total;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocov(c)).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if !(var_plus > 0.0) {
        return total;
    }
    let rho = |t: usize| 1.0 - (w - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    // pairs Gamma_k = rho(2k) + rho(2k+1), kept while positive and made monotone
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev {
            pair = prev;
        }
        sum_pairs += pair;
        prev = pair;
        t += 2;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let ess = total / tau.max(1e-12);
    ess.min(total)
}

/// Split R-hat: every chain is halved and the halves compared.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains.iter().map(Vec::len).min()?;
    let half = n / 2;
    if half < 2 {
        return None;
    }
    let mut parts: Vec<&[f64]> = Vec::new();
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..n]);
    }
    let nf = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    let b = nf * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { Some(1.0) } else { Some(f64::INFINITY) };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Some((var_plus / w).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
    pub rhat: Option<f64>,
}

/// Summary of one scalar parameter traced over one or more chains.
pub fn summarize_trace(name: &str, chains: &[Vec<f64>]) -> Result<TraceSummary> {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    if all.len() < 2 {
        return Err(PctmError::Domain(format!("{name}: at least two draws are needed, found {}", all.len())));
    }
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let m = mean(&all);
    let sd = if sorted[0] == sorted[sorted.len() - 1] {
        0.0
    } else {
        variance(&all).sqrt()
    };
    Ok(TraceSummary {
        name: name.to_string(),
        mean: if sd == 0.0 { sorted[0] } else { m },
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
        ess: effective_sample_size(chains),
        rhat: split_rhat(chains),
    })
}

/// Which scalar traces to extract from a store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamSelector {
    Tau,
    Mu,
    LogJoint,
    Eta(usize, usize),
    Theta(usize, usize),
}

impl std::str::FromStr for ParamSelector {
    type Err = PctmError;

    /// `tau`, `mu`, `log_joint`, `eta:i:k` or `theta:i:k`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || PctmError::Config(format!("unknown parameter {s:?}; use tau, mu, log_joint, eta:I:K or theta:I:K"));
        match parts.as_slice() {
            ["tau"] => Ok(ParamSelector::Tau),
            ["mu"] => Ok(ParamSelector::Mu),
            ["log_joint"] => Ok(ParamSelector::LogJoint),
            [kind @ ("eta" | "theta"), i, k] => {
                let i = i.parse().map_err(|_| bad())?;
                let k = k.parse().map_err(|_| bad())?;
                Ok(if *kind == "eta" {
                    ParamSelector::Eta(i, k)
                } else {
                    ParamSelector::Theta(i, k)
                })
            }
            _ => Err(bad()),
        }
    }
}

/// A named scalar trace: sweep numbers and values.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub name: String,
    pub iterations: Vec<usize>,
    pub values: Vec<f64>,
}

/// Extracts traces. `perm[k]` is the store's label standing for reported
/// topic `k` (identity when `None`).
pub fn extract_traces(store: &SampleStore, sel: &ParamSelector, perm: Option<&[usize]>) -> Result<Vec<Trace>> {
    let k = store.k();
    let n = store.header.n_docs;
    let identity: Vec<usize> = (0..k).collect();
    let perm = perm.unwrap_or(&identity);
    let its = store.iterations.clone();
    let check = |i: usize, t: usize| -> Result<()> {
        if i >= n || t >= k {
            Err(PctmError::IndexOutOfRange(format!("({i}, {t}) outside {n} documents x {k} topics")))
        } else {
            Ok(())
        }
    };
    Ok(match *sel {
        ParamSelector::Tau => (0..3)
            .map(|d| Trace {
                name: format!("tau{d}"),
                iterations: its.clone(),
                values: store.tau.iter().map(|t| t[d]).collect(),
            })
            .collect(),
        ParamSelector::Mu => (0..k)
            .map(|t| Trace {
                name: format!("mu{t}"),
                iterations: its.clone(),
                values: store.mu.iter().map(|m| m[perm[t]]).collect(),
            })
            .collect(),
        ParamSelector::LogJoint => vec![Trace {
            name: "log_joint".into(),
            iterations: (1..=store.log_joint.len()).collect(),
            values: store.log_joint.clone(),
        }],
        ParamSelector::Eta(i, t) => {
            check(i, t)?;
            vec![Trace {
                name: format!("eta_{i}_{t}"),
                iterations: its,
                values: store.eta.iter().map(|e| e[i * k + perm[t]]).collect(),
            }]
        }
        ParamSelector::Theta(i, t) => {
            check(i, t)?;
            vec![Trace {
                name: format!("theta_{i}_{t}"),
                iterations: its,
                values: store
                    .eta
                    .iter()
                    .map(|e| theta_from_eta(&e[i * k..(i + 1) * k])[perm[t]])
                    .collect(),
            }]
        }
    })
}

/// Posterior-mean topic-word distributions of a chain, averaged over draws.
pub fn mean_psi(corpus: &Corpus, store: &SampleStore) -> Result<Vec<Vec<f64>>> {
    let k = store.k();
    let v = corpus.vocab_size();
    let mut acc = vec![vec![0.0; v]; k];
    for draw in &store.z {
        let z: Vec<usize> = draw.iter().map(|&t| t as usize).collect();
        let stats = SufficientStats::from_assignments(corpus, &z, k)?;
        for (a, row) in acc.iter_mut().zip(recover_psi(&stats, &store.header.hyper)) {
            for (x, y) in a.iter_mut().zip(row) {
                *x += y;
            }
        }
    }
    let nd = store.n_draws().max(1) as f64;
    for row in &mut acc {
        row.iter_mut().for_each(|x| *x /= nd);
    }
    Ok(acc)
}

/// Matches the topics of `other` to those of `reference` by minimal total L1
/// distance between topic-word rows. `out[k]` is `other`'s label for
/// reference topic `k`.
pub fn align_topics(reference: &[Vec<f64>], other: &[Vec<f64>]) -> Vec<usize> {
    let w: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| {
            other
                .iter()
                .map(|o| -r.iter().zip(o).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .collect()
        })
        .collect();
    max_weight_assignment(&w)
}
