//! Hyperparameters, latent variables and the count caches the sampler reads.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Paragraph};
use crate::error::{PctmError, Result};
use crate::init::InitBundle;
use crate::rng::cholesky;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub k: usize,
    /// Dirichlet concentration over the vocabulary, length V.
    pub beta: Vec<f64>,
    pub mu0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    /// Prevalence covariance, fixed.
    pub sigma: Vec<Vec<f64>>,
    pub mu_tau: [f64; 3],
    pub sigma_tau: [[f64; 3]; 3],
}

fn scaled_identity(k: usize, s: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|r| (0..k).map(|c| if r == c { s } else { 0.0 }).collect())
        .collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |r, c| rows[r][c])
}

impl Hyperparameters {
    /// beta = 0.1, mu0 = 0, Sigma0 = 10 I, Sigma = I, mu_tau = 0, Sigma_tau = 4 I.
    pub fn defaults(k: usize, vocab_size: usize) -> Self {
        Hyperparameters {
            k,
            beta: vec![0.1; vocab_size],
            mu0: vec![0.0; k],
            sigma0: scaled_identity(k, 10.0),
            sigma: scaled_identity(k, 1.0),
            mu_tau: [0.0; 3],
            sigma_tau: [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma)
    }

    pub fn sigma0_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.sigma0)
    }

    pub fn sigma_tau_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |r, c| self.sigma_tau[r][c])
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let k = self.k;
        if k < 2 {
            return Err(PctmError::Config(format!("K must be at least 2, got {k}")));
        }
        if self.beta.len() != vocab_size {
            return Err(PctmError::Dimension(format!(
                "beta has length {} but the vocabulary has {vocab_size} terms",
                self.beta.len()
            )));
        }
        if let Some(b) = self.beta.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(PctmError::Domain(format!("beta entries must be positive and finite, found {b}")));
        }
        if self.mu0.len() != k {
            return Err(PctmError::Dimension(format!("mu0 has length {} for K = {k}", self.mu0.len())));
        }
        for (name, m) in [("sigma0", &self.sigma0), ("sigma", &self.sigma)] {
            if m.len() != k || m.iter().any(|r| r.len() != k) {
                return Err(PctmError::Dimension(format!("{name} must be {k}x{k}")));
            }
            cholesky(&to_matrix(m)).map_err(|_| PctmError::NotSpd(name.to_string()))?;
        }
        cholesky(&self.sigma_tau_matrix()).map_err(|_| PctmError::NotSpd("sigma_tau".to_string()))?;
        let finite = self.mu0.iter().chain(self.mu_tau.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(PctmError::Domain("mu0 and mu_tau must be finite".into()));
        }
        Ok(())
    }
}

/// Every sampled quantity of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub k: usize,
    /// Topic of each paragraph, by global paragraph index.
    pub z: Vec<usize>,
    /// N x K, row-major.
    pub eta: Vec<f64>,
    /// N x K, row-major. Zero for documents without paragraphs.
    pub lambda: Vec<f64>,
    /// Latent propensities laid out by `Corpus::dyad_range`.
    pub d_star: Vec<f64>,
    pub tau: [f64; 3],
    pub mu: Vec<f64>,
}

impl LatentState {
    pub fn eta_row(&self, i: usize) -> &[f64] {
        &self.eta[i * self.k..(i + 1) * self.k]
    }

    pub fn eta_at(&self, i: usize, k: usize) -> f64 {
        self.eta[i * self.k + k]
    }

    pub fn lambda_at(&self, i: usize, k: usize) -> f64 {
        self.lambda[i * self.k + k]
    }
}

/// Counts derived from `Z`: topic-word, topic totals, and document-topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SufficientStats {
    k: usize,
    v: usize,
    topic_word: Vec<u32>,
    topic_total: Vec<u64>,
    doc_topic: Vec<u32>,
}

impl SufficientStats {
    pub fn zeros(k: usize, v: usize, n_docs: usize) -> Self {
        SufficientStats {
            k,
            v,
            topic_word: vec![0; k * v],
            topic_total: vec![0; k],
            doc_topic: vec![0; n_docs * k],
        }
    }

    /// Counts rebuilt from scratch.
    pub fn from_assignments(corpus: &Corpus, z: &[usize], k: usize) -> Result<Self> {
        if z.len() != corpus.n_paragraphs() {
            return Err(PctmError::Dimension(format!(
                "{} topic assignments for {} paragraphs",
                z.len(),
                corpus.n_paragraphs()
            )));
        }
        let mut s = SufficientStats::zeros(k, corpus.vocab_size(), corpus.n_docs());
        for (g, (i, p)) in corpus.paragraph_keys().enumerate() {
            let t = z[g];
            if t >= k {
                return Err(PctmError::IndexOutOfRange(format!("paragraph ({i}, {p}) has topic {t} >= K = {k}")));
            }
            s.add(i, corpus.paragraph(i, p), t);
        }
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    /// `C_k^v`
    pub fn topic_word(&self, k: usize, v: usize) -> u32 {
        self.topic_word[k * self.v + v]
    }

    pub fn topic_word_row(&self, k: usize) -> &[u32] {
        &self.topic_word[k * self.v..(k + 1) * self.v]
    }

    /// `C_k`
    pub fn topic_total(&self, k: usize) -> u64 {
        self.topic_total[k]
    }

    /// `t_ik`
    pub fn doc_topic(&self, i: usize, k: usize) -> u32 {
        self.doc_topic[i * self.k + k]
    }

    pub fn doc_topic_row(&self, i: usize) -> &[u32] {
        &self.doc_topic[i * self.k..(i + 1) * self.k]
    }

    /// Paragraphs per topic over the whole corpus.
    pub fn occupancy(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.k];
        for row in self.doc_topic.chunks(self.k) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c as u64;
            }
        }
        out
    }

    pub fn add(&mut self, i: usize, para: &Paragraph, k: usize) {
        let base = k * self.v;
        for (t, c) in para.entries() {
            self.topic_word[base + t] += c;
        }
        self.topic_total[k] += para.n_words() as u64;
        self.doc_topic[i * self.k + k] += 1;
    }

    /// Fails if a count would go negative.
    pub fn remove(&mut self, i: usize, para: &Paragraph, k: usize) -> Result<()> {
        let base = k * self.v;
        let slot = i * self.k + k;
        let words_ok = para.entries().all(|(t, c)| self.topic_word[base + t] >= c);
        if !words_ok || self.topic_total[k] < para.n_words() as u64 || self.doc_topic[slot] == 0 {
            return Err(PctmError::Corruption(format!(
                "removing a paragraph of document {i} from topic {k} would make a count negative"
            )));
        }
        for (t, c) in para.entries() {
            self.topic_word[base + t] -= c;
        }
        self.topic_total[k] -= para.n_words() as u64;
        self.doc_topic[slot] -= 1;
        Ok(())
    }

    /// Compares against a scratch recount of `z`.
    pub fn verify(&self, corpus: &Corpus, z: &[usize]) -> Result<()> {
        let fresh = SufficientStats::from_assignments(corpus, z, self.k)?;
        if fresh.topic_word != self.topic_word {
            return Err(PctmError::Inconsistent("topic-word counts differ from a recount".into()));
        }
        if fresh.topic_total != self.topic_total {
            return Err(PctmError::Inconsistent("topic totals differ from a recount".into()));
        }
        if fresh.doc_topic != self.doc_topic {
            return Err(PctmError::Inconsistent("document-topic counts differ from a recount".into()));
        }
        Ok(())
    }
}

/// Moves paragraph `(i, p)` to topic `new_k`, updating the counts.
pub fn apply_topic_change(
    corpus: &Corpus,
    state: &mut LatentState,
    stats: &mut SufficientStats,
    i: usize,
    p: usize,
    new_k: usize,
) -> Result<()> {
    if new_k >= state.k {
        return Err(PctmError::IndexOutOfRange(format!("topic {new_k} >= K = {}", state.k)));
    }
    let g = corpus.global_index(i, p);
    let old = state.z[g];
    if old == new_k {
        return Ok(());
    }
    let para = corpus.paragraph(i, p);
    stats.remove(i, para, old)?;
    stats.add(i, para, new_k);
    state.z[g] = new_k;
    Ok(())
}

/// Checks that every stored propensity sits on the side of zero its citation
/// indicator demands (`>= 0` iff cited).
pub fn check_d_star_signs(corpus: &Corpus, d_star: &[f64]) -> Result<()> {
    if d_star.len() != corpus.n_dyads() {
        return Err(PctmError::Dimension(format!(
            "{} latent propensities for {} feasible dyads",
            d_star.len(),
            corpus.n_dyads()
        )));
    }
    for g in 0..corpus.n_paragraphs() {
        let r = corpus.dyad_range(g);
        for (j, &d) in d_star[r].iter().enumerate() {
            let cited = corpus.is_cited(g, j);
            if !d.is_finite() || (d >= 0.0) != cited {
                let i = corpus.doc_of(g);
                let p = g - corpus.paragraph_range(i).start;
                return Err(PctmError::Inconsistent(format!(
                    "latent propensity {d} for dyad ({i}, {p}, {j}) disagrees with the observed citation {}",
                    cited as u8
                )));
            }
        }
    }
    Ok(())
}

/// Builds a validated state and its count caches from starting values.
pub fn new_state(
    corpus: &Corpus,
    hyper: &Hyperparameters,
    init: &InitBundle,
) -> Result<(LatentState, SufficientStats)> {
    hyper.validate(corpus.vocab_size())?;
    let k = hyper.k;
    let n = corpus.n_docs();
    let dims = [
        ("eta", init.eta.len(), n * k),
        ("lambda", init.lambda.len(), n * k),
        ("mu", init.mu.len(), k),
    ];
    for (name, got, want) in dims {
        if got != want {
            return Err(PctmError::Dimension(format!("{name} has {got} entries, expected {want}")));
        }
    }
    let finite = init
        .eta
        .iter()
        .chain(&init.lambda)
        .chain(&init.mu)
        .chain(&init.tau)
        .all(|x| x.is_finite());
    if !finite {
        return Err(PctmError::Domain("starting values must be finite".into()));
    }
    for i in 0..n {
        let empty = corpus.doc_len(i) == 0;
        for kk in 0..k {
            let l = init.lambda[i * k + kk];
            if (empty && l != 0.0) || (!empty && l <= 0.0) {
                return Err(PctmError::Domain(format!(
                    "lambda[{i}, {kk}] = {l} must be positive (zero for documents without paragraphs)"
                )));
            }
        }
    }
    check_d_star_signs(corpus, &init.d_star)?;
    let stats = SufficientStats::from_assignments(corpus, &init.z, k)?;
    let state = LatentState {
        k,
        z: init.z.clone(),
        eta: init.eta.clone(),
        lambda: init.lambda.clone(),
        d_star: init.d_star.clone(),
        tau: init.tau,
        mu: init.mu.clone(),
    };
    Ok((state, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CitationSet, Document, Vocabulary};
    use proptest::prelude::*;

    fn toy() -> Corpus {
        let docs = vec![
            Document {
                paragraphs: vec![
                    Paragraph::from_counts([(0, 2), (3, 1)]),
                    Paragraph::from_counts([(1, 1)]),
                ],
            },
            Document {
                paragraphs: vec![Paragraph::from_counts([(2, 4), (0, 1)]), Paragraph::empty()],
            },
            Document {
                paragraphs: vec![Paragraph::from_counts([(3, 2)])],
            },
        ];
        let cites = CitationSet::from_triples([(1, 0, 0), (2, 0, 1)]).unwrap();
        Corpus::new(
            Vocabulary::numbered(4).unwrap(),
            vec!["a".into(), "b".into(), "c".into()],
            docs,
            cites,
        )
        .unwrap()
    }

    fn bundle(c: &Corpus, k: usize) -> InitBundle {
        let z = (0..c.n_paragraphs()).map(|g| g % k).collect();
        let d_star = (0..c.n_paragraphs())
            .flat_map(|g| {
                let r = c.dyad_range(g).len();
                (0..r).map(move |j| if c.is_cited(g, j) { 0.5 } else { -0.5 }).collect::<Vec<_>>()
            })
            .collect();
        InitBundle {
            z,
            eta: vec![0.0; c.n_docs() * k],
            lambda: vec![1.0; c.n_docs() * k],
            d_star,
            tau: [-1.0, 0.1, 0.5],
            mu: vec![0.0; k],
        }
    }

    #[test]
    fn new_state_is_consistent() {
        let c = toy();
        let h = Hyperparameters::defaults(2, 4);
        let (s, st) = new_state(&c, &h, &bundle(&c, 2)).unwrap();
        st.verify(&c, &s.z).unwrap();
        for i in 0..c.n_docs() {
            assert_eq!(st.doc_topic_row(i).iter().sum::<u32>() as usize, c.doc_len(i));
        }
    }

    #[test]
    fn flipped_assignment_is_detected() {
        let c = toy();
        let h = Hyperparameters::defaults(2, 4);
        let (mut s, st) = new_state(&c, &h, &bundle(&c, 2)).unwrap();
        s.z[0] = 1 - s.z[0];
        assert!(matches!(st.verify(&c, &s.z), Err(PctmError::Inconsistent(_))));
    }

    #[test]
    fn wrong_sign_propensity_is_rejected() {
        let c = toy();
        let h = Hyperparameters::defaults(2, 4);
        let mut b = bundle(&c, 2);
        let g = c.global_index(1, 0);
        b.d_star[c.dyad_range(g).start] = -0.1;
        assert!(matches!(new_state(&c, &h, &b), Err(PctmError::Inconsistent(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let c = toy();
        let h = Hyperparameters::defaults(2, 4);
        let mut b = bundle(&c, 2);
        b.eta.pop();
        assert!(matches!(new_state(&c, &h, &b), Err(PctmError::Dimension(_))));
    }

    #[test]
    fn topic_change_moves_exact_counts() {
        let c = toy();
        let h = Hyperparameters::defaults(2, 4);
        let mut b = bundle(&c, 2);
        b.z = vec![0; c.n_paragraphs()];
        let (mut s, mut st) = new_state(&c, &h, &b).unwrap();
        let before = st.clone();
        apply_topic_change(&c, &mut s, &mut st, 0, 0, 1).unwrap();
        assert_eq!(st.topic_word(0, 0), before.topic_word(0, 0) - 2);
        assert_eq!(st.topic_word(1, 0), before.topic_word(1, 0) + 2);
        assert_eq!(st.topic_word(0, 3), before.topic_word(0, 3) - 1);
        assert_eq!(st.topic_word(1, 3), before.topic_word(1, 3) + 1);
        apply_topic_change(&c, &mut s, &mut st, 0, 0, 0).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn underflow_is_corruption() {
        let c = toy();
        let mut st = SufficientStats::zeros(2, 4, 3);
        assert!(matches!(st.remove(0, c.paragraph(0, 0), 0), Err(PctmError::Corruption(_))));
    }

    #[test]
    fn large_corpus_dimensions_allocate() {
        let h = Hyperparameters::defaults(7, 5838);
        h.validate(5838).unwrap();
        let st = SufficientStats::zeros(7, 5838, 106);
        assert_eq!(st.topic_word.len(), 7 * 5838);
    }

    #[test]
    fn non_spd_sigma_is_rejected() {
        let mut h = Hyperparameters::defaults(2, 4);
        h.sigma = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(h.validate(4), Err(PctmError::NotSpd(_))));
    }

    proptest! {
        #[test]
        fn random_changes_match_recount(moves in proptest::collection::vec((0usize..5, 0usize..3), 1..200)) {
            let c = toy();
            let h = Hyperparameters::defaults(3, 4);
            let (mut s, mut st) = new_state(&c, &h, &bundle(&c, 3)).unwrap();
            let keys: Vec<_> = c.paragraph_keys().collect();
            for (g, k) in moves {
                let (i, p) = keys[g];
                apply_topic_change(&c, &mut s, &mut st, i, p, k).unwrap();
            }
            prop_assert!(st.verify(&c, &s.z).is_ok());
        }
    }
}
