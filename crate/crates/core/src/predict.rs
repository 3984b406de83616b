//! Posterior predictive probability of held-out paragraphs and topic
//! prediction for paragraphs of documents outside the fitted corpus.
//!
//! A held-out file uses the corpus line formats, mixed freely:
//! `doc<TAB>para<TAB>term<TAB>count` for words and `doc<TAB>para<TAB>cited_doc`
//! for citations. `doc` is the host document's position in the fitted order;
//! any value `>= N` denotes a document written after the whole corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{content_lines, parse_fields, Corpus, Paragraph};
use crate::diagnostics::mean_psi;
use crate::error::{PctmError, Result};
use crate::gibbs::{recover_psi, KappaCovariate};
use crate::math::{argmax, log_norm_cdf, log_sum_exp};
use crate::state::SufficientStats;
use crate::store::SampleStore;

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutParagraph {
    pub host_doc: usize,
    /// Label carried through to the output; not used in scoring.
    pub paragraph: usize,
    pub words: Paragraph,
    pub cited: BTreeSet<usize>,
}

impl HeldOutParagraph {
    pub fn new(host_doc: usize, paragraph: usize, words: Paragraph, cited: impl IntoIterator<Item = usize>) -> Result<Self> {
        let cited: BTreeSet<usize> = cited.into_iter().collect();
        if let Some(&j) = cited.iter().find(|&&j| j >= host_doc) {
            return Err(PctmError::TemporalViolation {
                citing_doc: host_doc,
                paragraph,
                cited_doc: j,
            });
        }
        Ok(HeldOutParagraph {
            host_doc,
            paragraph,
            words,
            cited,
        })
    }
}

/// Normalized topic probabilities of one paragraph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicPosterior {
    pub probs: Vec<f64>,
}

impl TopicPosterior {
    pub fn modal(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Document-prevalence term for a document with no fitted `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Prevalence {
    /// `softmax(mu)`.
    #[default]
    Prior,
    /// `1 / K`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    /// Posterior means of eta, tau, mu and Psi.
    #[default]
    Point,
    /// Average of the predictive over every retained draw.
    Mc,
}

/// One set of parameter values to predict from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFit {
    pub k: usize,
    /// N x K, row-major.
    pub eta: Vec<f64>,
    /// K rows of `log Psi`.
    pub log_psi: Vec<Vec<f64>>,
    pub tau: [f64; 3],
    pub mu: Vec<f64>,
}

impl PointFit {
    pub fn new(eta: Vec<f64>, psi: &[Vec<f64>], tau: [f64; 3], mu: Vec<f64>) -> Result<Self> {
        let k = psi.len();
        if k == 0 || mu.len() != k || !eta.len().is_multiple_of(k) {
            return Err(PctmError::Dimension(format!(
                "point fit with {k} topics, {} mu entries, {} eta entries",
                mu.len(),
                eta.len()
            )));
        }
        Ok(PointFit {
            k,
            eta,
            log_psi: psi.iter().map(|row| row.iter().map(|p| p.ln()).collect()).collect(),
            tau,
            mu,
        })
    }

    /// Posterior means over all retained draws of the given stores.
    pub fn posterior_mean(corpus: &Corpus, stores: &[SampleStore]) -> Result<Self> {
        let first = stores.first().ok_or_else(|| PctmError::Domain("no sample stores".into()))?;
        let total: usize = stores.iter().map(|s| s.n_draws()).sum();
        if total == 0 {
            return Err(PctmError::Domain("sample stores hold no draws".into()));
        }
        let k = first.k();
        let w = |s: &SampleStore| s.n_draws() as f64 / total as f64;
        let mut eta = vec![0.0; first.header.n_docs * k];
        let mut mu = vec![0.0; k];
        let mut tau = [0.0; 3];
        let mut psi = vec![vec![0.0; corpus.vocab_size()]; k];
        for s in stores {
            let ws = w(s);
            for (a, b) in eta.iter_mut().zip(s.mean_eta()) {
                *a += ws * b;
            }
            for (a, b) in mu.iter_mut().zip(s.mean_mu()) {
                *a += ws * b;
            }
            for (a, b) in tau.iter_mut().zip(s.mean_tau()) {
                *a += ws * b;
            }
            for (row, src) in psi.iter_mut().zip(mean_psi(corpus, s)?) {
                for (a, b) in row.iter_mut().zip(src) {
                    *a += ws * b;
                }
            }
        }
        PointFit::new(eta, &psi, tau, mu)
    }

    /// Parameter values of retained draw `d` of `store`.
    pub fn from_draw(corpus: &Corpus, store: &SampleStore, d: usize) -> Result<Self> {
        let z: Vec<usize> = store.z[d].iter().map(|&t| t as usize).collect();
        let stats = SufficientStats::from_assignments(corpus, &z, store.k())?;
        let psi = recover_psi(&stats, &store.header.hyper);
        PointFit::new(store.eta[d].clone(), &psi, store.tau[d], store.mu[d].clone())
    }
}

/// Per-topic share of paragraphs whose modal topic is that topic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewDocumentPrediction {
    pub posteriors: Vec<TopicPosterior>,
    pub fractions: Vec<f64>,
}

/// Scores paragraphs against one or more parameter sets; the predictive
/// is the average over them.
#[derive(Debug, Clone)]
pub struct Predictor {
    n_docs: usize,
    vocab_size: usize,
    kappa: KappaCovariate,
    fits: Vec<PointFit>,
}

impl Predictor {
    pub fn new(corpus: &Corpus, kappa: KappaCovariate, fits: Vec<PointFit>) -> Result<Self> {
        let k = fits.first().map(|f| f.k).ok_or_else(|| PctmError::Domain("no parameter sets".into()))?;
        for f in &fits {
            if f.k != k || f.eta.len() != corpus.n_docs() * k || f.log_psi.iter().any(|r| r.len() != corpus.vocab_size()) {
                return Err(PctmError::Dimension("parameter set does not match the corpus".into()));
            }
        }
        Ok(Predictor {
            n_docs: corpus.n_docs(),
            vocab_size: corpus.vocab_size(),
            kappa,
            fits,
        })
    }

    /// Point or Monte Carlo predictor over the retained draws of `stores`,
    /// whose topic labels must already agree.
    pub fn from_stores(corpus: &Corpus, stores: &[SampleStore], mode: PredictMode) -> Result<Self> {
        let first = stores.first().ok_or_else(|| PctmError::Domain("no sample stores".into()))?;
        let kappa = KappaCovariate::with_transform(corpus, first.header.kappa_shift, first.header.kappa_scale)?;
        let fits = match mode {
            PredictMode::Point => vec![PointFit::posterior_mean(corpus, stores)?],
            PredictMode::Mc => {
                let mut fits = Vec::new();
                for s in stores {
                    for d in 0..s.n_draws() {
                        fits.push(PointFit::from_draw(corpus, s, d)?);
                    }
                }
                fits
            }
        };
        Predictor::new(corpus, kappa, fits)
    }

    pub fn k(&self) -> usize {
        self.fits[0].k
    }

    /// Log joint of the paragraph with each topic under one parameter set.
    fn joint_terms(&self, fit: &PointFit, para: &HeldOutParagraph, prevalence: Prevalence) -> Vec<f64> {
        let k = fit.k;
        let i = para.host_doc;
        let row = i.min(self.n_docs);
        let prior: Vec<f64> = if i < self.n_docs {
            let e = &fit.eta[i * k..(i + 1) * k];
            let lse = log_sum_exp(e);
            e.iter().map(|&x| x - lse).collect()
        } else {
            match prevalence {
                Prevalence::Prior => {
                    let lse = log_sum_exp(&fit.mu);
                    fit.mu.iter().map(|&x| x - lse).collect()
                }
                Prevalence::Uniform => vec![-(k as f64).ln(); k],
            }
        };
        let kap = self.kappa.row(row);
        (0..k)
            .map(|t| {
                let words: f64 = para
                    .words
                    .entries()
                    .map(|(v, c)| c as f64 * fit.log_psi[t][v])
                    .sum();
                let mut cites = 0.0;
                for (j, &kj) in kap[..row].iter().enumerate() {
                    let m = fit.tau[0] + fit.tau[1] * kj + fit.tau[2] * fit.eta[j * k + t];
                    cites += if para.cited.contains(&j) {
                        log_norm_cdf(m)
                    } else {
                        log_norm_cdf(-m)
                    };
                }
                prior[t] + words + cites
            })
            .collect()
    }

    fn check(&self, para: &HeldOutParagraph) -> Result<()> {
        let limit = para.host_doc.min(self.n_docs);
        if let Some(&j) = para.cited.iter().find(|&&j| j >= limit) {
            return Err(PctmError::IndexOutOfRange(format!(
                "paragraph ({}, {}) cites document {j}, outside the fitted documents before it",
                para.host_doc, para.paragraph
            )));
        }
        if let Some(&v) = para.words.terms().iter().find(|&&v| v as usize >= self.vocab_size) {
            return Err(PctmError::IndexOutOfRange(format!(
                "paragraph ({}, {}) uses term {v}, vocabulary has {}",
                para.host_doc, para.paragraph, self.vocab_size
            )));
        }
        Ok(())
    }

    /// Log predictive probability of the paragraph's words and citations
    /// and its topic posterior. Documents past the corpus use `prevalence`.
    pub fn score(&self, para: &HeldOutParagraph, prevalence: Prevalence) -> Result<(f64, TopicPosterior)> {
        self.check(para)?;
        let k = self.k();
        let per_fit: Vec<Vec<f64>> = self.fits.iter().map(|f| self.joint_terms(f, para, prevalence)).collect();
        let by_topic: Vec<f64> = (0..k)
            .map(|t| log_sum_exp(&per_fit.iter().map(|r| r[t]).collect::<Vec<_>>()))
            .collect();
        let total = log_sum_exp(&by_topic);
        if !total.is_finite() {
            return Err(PctmError::Numerical(format!(
                "predictive of paragraph ({}, {}) is {total}",
                para.host_doc, para.paragraph
            )));
        }
        let probs = by_topic.iter().map(|&b| (b - total).exp()).collect();
        Ok((total - (self.fits.len() as f64).ln(), TopicPosterior { probs }))
    }

    /// Predictive of a paragraph of a fitted document.
    pub fn predictive_log_prob(&self, para: &HeldOutParagraph) -> Result<(f64, TopicPosterior)> {
        self.score(para, Prevalence::Prior)
    }

    /// Topic posteriors of the paragraphs of a document after the corpus.
    pub fn predict_new_document(&self, paragraphs: &[HeldOutParagraph], prevalence: Prevalence) -> Result<NewDocumentPrediction> {
        let k = self.k();
        let mut posteriors = Vec::with_capacity(paragraphs.len());
        let mut counts = vec![0usize; k];
        for p in paragraphs {
            if p.host_doc < self.n_docs {
                return Err(PctmError::Domain(format!(
                    "document {} is part of the fitted corpus, not a new document",
                    p.host_doc
                )));
            }
            let (_, post) = self.score(p, prevalence)?;
            counts[post.modal()] += 1;
            posteriors.push(post);
        }
        let n = paragraphs.len().max(1) as f64;
        Ok(NewDocumentPrediction {
            posteriors,
            fractions: counts.iter().map(|&c| c as f64 / n).collect(),
        })
    }
}

/// Reads held-out paragraphs, ordered by `(doc, para)`.
pub fn parse_heldout(path: &Path, text: &str) -> Result<Vec<HeldOutParagraph>> {
    let mut words: BTreeMap<(usize, usize), Vec<(u32, u32)>> = BTreeMap::new();
    let mut cites: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (lineno, line) in content_lines(text) {
        match line.split('\t').count() {
            4 => {
                let [i, p, v, c] = parse_fields::<4>(path, lineno, line)?;
                let bad = |msg: &str| PctmError::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: msg.into(),
                };
                if c == 0 {
                    return Err(bad("count must be positive"));
                }
                let v = u32::try_from(v).map_err(|_| bad("term index overflows u32"))?;
                let c = u32::try_from(c).map_err(|_| bad("count overflows u32"))?;
                words.entry((i, p)).or_default().push((v, c));
            }
            3 => {
                let [i, p, j] = parse_fields::<3>(path, lineno, line)?;
                cites.entry((i, p)).or_default().push(j);
                words.entry((i, p)).or_default();
            }
            n => {
                return Err(PctmError::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("expected 3 or 4 tab-separated fields, found {n}"),
                })
            }
        }
    }
    words
        .into_iter()
        .map(|((i, p), w)| {
            let c = cites.remove(&(i, p)).unwrap_or_default();
            HeldOutParagraph::new(i, p, Paragraph::from_counts(w), c)
        })
        .collect()
}

pub fn load_heldout(path: &Path) -> Result<Vec<HeldOutParagraph>> {
    let text = std::fs::read_to_string(path).map_err(|e| PctmError::io(path, e))?;
    parse_heldout(path, &text)
}
