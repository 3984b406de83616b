//! Synthetic corpora drawn from the generative model, and recovery checks
//! of a fit against the planted truth.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Poisson, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::assign::max_weight_assignment;
use crate::config::{HyperConfig, MatrixSpec, VectorSpec};
use crate::corpus::{CitationSet, Corpus, Document, IndegreeTable, Paragraph, Vocabulary};
use crate::diagnostics::quantile;
use crate::error::{PctmError, Result};
use crate::math::{argmax, softmax};
use crate::rng::{sample_categorical, sample_dirichlet, sample_mvn, RngStream};
use crate::store::SampleStore;

fn default_n_docs() -> usize {
    40
}
fn default_mean_paragraphs() -> f64 {
    15.0
}
fn default_vocab_size() -> usize {
    300
}
fn default_mean_words() -> f64 {
    40.0
}
fn default_k() -> usize {
    3
}
fn default_tau() -> [f64; 3] {
    [-2.5, 0.3, 1.0]
}
fn default_seed() -> u64 {
    1
}
fn default_hyper() -> HyperConfig {
    HyperConfig {
        beta: Some(VectorSpec::Scalar(0.1)),
        sigma: Some(MatrixSpec::Scalar(1.0)),
        ..HyperConfig::default()
    }
}

/// Size, hyperparameters and true `tau` of a synthetic corpus. Paragraph and
/// word counts are Poisson with the given means, floored at one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_n_docs")]
    pub n_docs: usize,
    #[serde(default = "default_mean_paragraphs")]
    pub mean_paragraphs: f64,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_mean_words")]
    pub mean_words: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: [f64; 3],
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_hyper")]
    pub hyper: HyperConfig,
}

impl Default for SimulationSpec {
    /// The desk-scale design: N = 40, about 15 paragraphs of about 40 words,
    /// V = 300, K = 3, tau = (-2.5, 0.3, 1.0), Sigma = I, beta = 0.1.
    fn default() -> Self {
        SimulationSpec {
            n_docs: default_n_docs(),
            mean_paragraphs: default_mean_paragraphs(),
            vocab_size: default_vocab_size(),
            mean_words: default_mean_words(),
            k: default_k(),
            tau: default_tau(),
            seed: default_seed(),
            hyper: default_hyper(),
        }
    }
}

impl SimulationSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PctmError::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PctmError::io(path, e))?;
        SimulationSpec::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_docs == 0 || self.vocab_size == 0 {
            return Err(PctmError::Config("n_docs and vocab_size must be positive".into()));
        }
        if !(self.mean_paragraphs > 0.0 && self.mean_words > 0.0)
            || !self.mean_paragraphs.is_finite()
            || !self.mean_words.is_finite()
        {
            return Err(PctmError::Config("mean_paragraphs and mean_words must be positive".into()));
        }
        if self.tau.iter().any(|t| !t.is_finite()) {
            return Err(PctmError::Config("true tau must be finite".into()));
        }
        self.hyper.resolve(self.k, self.vocab_size)?;
        Ok(())
    }
}

/// Planted values behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub k: usize,
    /// Topic of each paragraph by global index.
    pub z: Vec<usize>,
    /// N x K, row-major.
    pub eta: Vec<f64>,
    /// K rows over the vocabulary.
    pub psi: Vec<Vec<f64>>,
    pub tau: [f64; 3],
    pub mu: Vec<f64>,
}

impl Truth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PctmError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PctmError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

fn poisson_at_least_one(rng: &mut RngStream, mean: f64) -> Result<usize> {
    let d = Poisson::new(mean).map_err(|e| PctmError::Domain(format!("Poisson mean {mean}: {e}")))?;
    Ok((d.sample(rng) as usize).max(1))
}

/// Draws a corpus and its truth from the generative process: `mu`, then
/// `eta_i`, `Psi_k`, topics and words, then citations document by document
/// with indegrees taken from the citations generated so far.
pub fn generate(spec: &SimulationSpec) -> Result<(Corpus, Truth)> {
    spec.validate()?;
    let hyper = spec.hyper.resolve(spec.k, spec.vocab_size)?;
    let (n, k, v) = (spec.n_docs, spec.k, spec.vocab_size);
    let mut rng = RngStream::new(spec.seed);

    let to_dm = |m: &Vec<Vec<f64>>| DMatrix::from_fn(k, k, |r, c| m[r][c]);
    let mu = sample_mvn(&mut rng, &hyper.mu0, &to_dm(&hyper.sigma0))?;
    let sigma = to_dm(&hyper.sigma);
    let mut eta = Vec::with_capacity(n * k);
    for _ in 0..n {
        eta.extend(sample_mvn(&mut rng, &mu, &sigma)?);
    }
    let psi: Vec<Vec<f64>> = (0..k)
        .map(|_| sample_dirichlet(&mut rng, &hyper.beta))
        .collect::<Result<_>>()?;
    let samplers: Vec<WeightedIndex<f64>> = psi
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| PctmError::Numerical(format!("topic-word weights: {e}"))))
        .collect::<Result<_>>()?;

    let mut documents = Vec::with_capacity(n);
    let mut z = Vec::new();
    for i in 0..n {
        let theta = softmax(&eta[i * k..(i + 1) * k]);
        let n_para = poisson_at_least_one(&mut rng, spec.mean_paragraphs)?;
        let mut paragraphs = Vec::with_capacity(n_para);
        for _ in 0..n_para {
            let topic = sample_categorical(&mut rng, &theta, false)?;
            let n_words = poisson_at_least_one(&mut rng, spec.mean_words)?;
            let mut counts = std::collections::BTreeMap::new();
            for _ in 0..n_words {
                let w = samplers[topic].sample(&mut rng) as u32;
                *counts.entry(w).or_insert(0u32) += 1;
            }
            paragraphs.push(Paragraph::from_counts(counts));
            z.push(topic);
        }
        documents.push(Document { paragraphs });
    }

    let [t0, t1, t2] = spec.tau;
    let mut citations = CitationSet::new();
    let mut indegree = vec![0u32; n];
    let mut g = 0;
    for (i, doc) in documents.iter().enumerate() {
        // kappa^(i) counts citations from documents before i only
        let kappa = indegree.clone();
        for p in 0..doc.n_paragraphs() {
            let topic = z[g];
            for j in 0..i {
                let mean = t0 + t1 * kappa[j] as f64 + t2 * eta[j * k + topic];
                if rng.normal(mean, 1.0) >= 0.0 {
                    citations.insert(crate::corpus::Citation::new(i, p, j))?;
                    indegree[j] += 1;
                }
            }
            g += 1;
        }
    }
    debug_assert_eq!(IndegreeTable::build(n, &citations).row(n), &indegree[..]);

    let corpus = Corpus::new(
        Vocabulary::numbered(v)?,
        (0..n).map(|i| format!("doc{i}")).collect(),
        documents,
        citations,
    )?;
    Ok((
        corpus,
        Truth {
            k,
            z,
            eta,
            psi,
            tau: spec.tau,
            mu,
        },
    ))
}

/// `counts[true][estimated]`
pub fn confusion_matrix(truth: &[usize], estimate: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for (&t, &e) in truth.iter().zip(estimate) {
        m[t][e] += 1;
    }
    m
}

/// Estimated label assigned to each true topic so that the matched counts
/// are maximal.
pub fn best_alignment(confusion: &[Vec<u64>]) -> Vec<usize> {
    let w: Vec<Vec<f64>> = confusion
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    max_weight_assignment(&w)
}

/// Reorders the columns so column `t` holds the estimated label matched to `t`.
pub fn align_columns(confusion: &[Vec<u64>], perm: &[usize]) -> Vec<Vec<u64>> {
    confusion
        .iter()
        .map(|r| perm.iter().map(|&e| r[e]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub k: usize,
    /// Estimated label matched to each true topic.
    pub permutation: Vec<usize>,
    /// Paragraph counts, rows true topics, columns aligned estimates.
    pub confusion: Vec<Vec<u64>>,
    pub topic_accuracy: f64,
    /// Central 95% posterior interval of each coefficient.
    pub tau_intervals: [[f64; 2]; 3],
    pub tau_coverage: [bool; 3],
    /// Documents by true modal topic (rows) and aligned posterior modal topic.
    pub theta_mode_confusion: Vec<Vec<u64>>,
    pub theta_mode_accuracy: f64,
}

/// Compares a chain's draws against the truth, up to relabeling of topics.
pub fn evaluate_recovery(truth: &Truth, store: &SampleStore) -> Result<RecoveryReport> {
    let k = truth.k;
    if store.k() != k {
        return Err(PctmError::Dimension(format!("truth has K = {k}, samples have K = {}", store.k())));
    }
    if store.header.n_paragraphs != truth.z.len() || store.header.n_docs * k != truth.eta.len() {
        return Err(PctmError::Dimension("truth and samples describe different corpora".into()));
    }
    if store.n_draws() == 0 {
        return Err(PctmError::Domain("sample store holds no draws".into()));
    }
    let modal = store.modal_topics();
    let raw = confusion_matrix(&truth.z, &modal, k);
    let perm = best_alignment(&raw);
    let confusion = align_columns(&raw, &perm);
    let diag: u64 = (0..k).map(|t| confusion[t][t]).sum();
    let topic_accuracy = if truth.z.is_empty() {
        1.0
    } else {
        diag as f64 / truth.z.len() as f64
    };

    let mut tau_intervals = [[0.0; 2]; 3];
    let mut tau_coverage = [false; 3];
    for d in 0..3 {
        let trace: Vec<f64> = store.tau.iter().map(|t| t[d]).collect();
        let lo = quantile(&trace, 0.025);
        let hi = quantile(&trace, 0.975);
        tau_intervals[d] = [lo, hi];
        tau_coverage[d] = lo <= truth.tau[d] && truth.tau[d] <= hi;
    }

    let n = store.header.n_docs;
    let theta = store.mean_theta();
    let true_modes: Vec<usize> = (0..n).map(|i| argmax(&truth.eta[i * k..(i + 1) * k])).collect();
    let est_modes: Vec<usize> = (0..n).map(|i| argmax(&theta[i * k..(i + 1) * k])).collect();
    let theta_mode_confusion = align_columns(&confusion_matrix(&true_modes, &est_modes, k), &perm);
    let tdiag: u64 = (0..k).map(|t| theta_mode_confusion[t][t]).sum();
    let theta_mode_accuracy = if n == 0 { 1.0 } else { tdiag as f64 / n as f64 };

    Ok(RecoveryReport {
        k,
        permutation: perm,
        confusion,
        topic_accuracy,
        tau_intervals,
        tau_coverage,
        theta_mode_confusion,
        theta_mode_accuracy,
    })
}
