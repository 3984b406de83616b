//! Topic-specific citation subnetworks, hub/authority relevance scores and
//! log-odds effects of the citation covariates.
//!
//! Relevance follows the authority/hub recursion on the document-level
//! citation counts `A[a][b]` (citations from `a` to `b`): the inward score of
//! a document is proportional to the outward scores of its citers, the
//! outward score to the inward scores of what it cites. Both vectors are
//! L1-normalized after every step, so scaling `A` changes nothing.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::{Citation, Corpus};
use crate::diagnostics::quantile;
use crate::error::{PctmError, Result};
use crate::gibbs::KappaCovariate;
use crate::math::log_norm_cdf;
use crate::rng::RngStream;

pub const SCORE_TOLERANCE: f64 = 1e-10;
pub const MAX_POWER_ITERATIONS: usize = 100_000;
/// Scores are rounded to this grid before ranking.
const RANK_GRID: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicSubnetwork {
    pub topic: usize,
    pub nodes: BTreeSet<usize>,
    pub edges: Vec<Citation>,
}

/// Citations whose citing paragraph has modal topic `k`, with their endpoints.
pub fn extract_subnetwork(corpus: &Corpus, modal: &[usize], k: usize, n_topics: usize) -> Result<TopicSubnetwork> {
    if k >= n_topics {
        return Err(PctmError::IndexOutOfRange(format!("topic {k} with {n_topics} topics")));
    }
    if modal.len() != corpus.n_paragraphs() {
        return Err(PctmError::Dimension(format!(
            "{} modal topics for {} paragraphs",
            modal.len(),
            corpus.n_paragraphs()
        )));
    }
    let mut nodes = BTreeSet::new();
    let mut edges = Vec::new();
    for c in corpus.citations().iter() {
        if modal[corpus.global_index(c.citing_doc, c.paragraph)] == k {
            nodes.insert(c.citing_doc);
            nodes.insert(c.cited_doc);
            edges.push(*c);
        }
    }
    Ok(TopicSubnetwork { topic: k, nodes, edges })
}

/// Weighted document-level digraph over an explicit node list.
#[derive(Debug, Clone, PartialEq)]
pub struct DocGraph {
    pub nodes: Vec<usize>,
    /// `(from, to, weight)` in node positions.
    pub arcs: Vec<(usize, usize, f64)>,
}

impl DocGraph {
    /// Aggregates citation triples per document pair over the given nodes.
    pub fn from_citations<'a>(nodes: impl IntoIterator<Item = usize>, edges: impl IntoIterator<Item = &'a Citation>) -> Result<Self> {
        let nodes: Vec<usize> = nodes.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let pos: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(p, &d)| (d, p)).collect();
        let mut w: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for c in edges {
            let (Some(&a), Some(&b)) = (pos.get(&c.citing_doc), pos.get(&c.cited_doc)) else {
                return Err(PctmError::IndexOutOfRange(format!(
                    "edge ({}, {}, {}) has an endpoint outside the node set",
                    c.citing_doc, c.paragraph, c.cited_doc
                )));
            };
            *w.entry((a, b)).or_insert(0.0) += 1.0;
        }
        Ok(DocGraph {
            nodes,
            arcs: w.into_iter().map(|((a, b), x)| (a, b, x)).collect(),
        })
    }

    pub fn from_subnetwork(net: &TopicSubnetwork) -> Result<Self> {
        DocGraph::from_citations(net.nodes.iter().copied(), &net.edges)
    }

    /// Every document of the corpus and every citation.
    pub fn full(corpus: &Corpus) -> Self {
        DocGraph::from_citations(0..corpus.n_docs(), corpus.citations().iter()).expect("corpus edges lie within the corpus")
    }

    /// Dense adjacency built from arcs; arcs on the same pair add up.
    pub fn from_dense(nodes: Vec<usize>, adj: &[Vec<f64>]) -> Result<Self> {
        if adj.len() != nodes.len() || adj.iter().any(|r| r.len() != nodes.len()) {
            return Err(PctmError::Dimension("adjacency must be square over the nodes".into()));
        }
        let mut arcs = Vec::new();
        for (a, row) in adj.iter().enumerate() {
            for (b, &x) in row.iter().enumerate() {
                if !(x >= 0.0 && x.is_finite()) {
                    return Err(PctmError::Domain(format!("adjacency weight {x}")));
                }
                if x > 0.0 {
                    arcs.push((a, b, x));
                }
            }
        }
        Ok(DocGraph { nodes, arcs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelevanceScores {
    pub nodes: Vec<usize>,
    pub inward: Vec<f64>,
    pub outward: Vec<f64>,
    /// 1-based, descending; ties go to the smaller document index.
    pub inward_rank: Vec<usize>,
    pub outward_rank: Vec<usize>,
    pub iterations: usize,
}

fn l1_normalize(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn ranks(nodes: &[usize], scores: &[f64]) -> Vec<usize> {
    let grid: Vec<f64> = scores.iter().map(|&s| (s / RANK_GRID).round()).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(nodes[a].cmp(&nodes[b])));
    let mut out = vec![0; scores.len()];
    for (r, &p) in order.iter().enumerate() {
        out[p] = r + 1;
    }
    out
}

/// Power iteration from uniform vectors until both score vectors move less
/// than `SCORE_TOLERANCE` in L1.
pub fn relevance_scores(graph: &DocGraph) -> Result<RelevanceScores> {
    let n = graph.nodes.len();
    if n == 0 || graph.arcs.is_empty() {
        return Err(PctmError::Domain("relevance scores need a network with at least one citation".into()));
    }
    let mut inward = vec![1.0 / n as f64; n];
    let mut outward = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_POWER_ITERATIONS {
        let mut new_in = vec![0.0; n];
        for &(a, b, w) in &graph.arcs {
            new_in[b] += w * outward[a];
        }
        l1_normalize(&mut new_in);
        let mut new_out = vec![0.0; n];
        for &(a, b, w) in &graph.arcs {
            new_out[a] += w * new_in[b];
        }
        l1_normalize(&mut new_out);
        residual = l1_diff(&new_in, &inward) + l1_diff(&new_out, &outward);
        inward = new_in;
        outward = new_out;
        if residual < SCORE_TOLERANCE {
            return Ok(RelevanceScores {
                inward_rank: ranks(&graph.nodes, &inward),
                outward_rank: ranks(&graph.nodes, &outward),
                nodes: graph.nodes.clone(),
                inward,
                outward,
                iterations: it,
            });
        }
    }
    Err(PctmError::Numerical(format!(
        "relevance scores did not converge in {MAX_POWER_ITERATIONS} iterations, residual {residual:e}"
    )))
}

/// Which covariate a log-odds comparison moves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Increment {
    /// Raw indegree `+d`, mapped through the fit's indegree scaling.
    Indegree(f64),
    /// Topic prevalence of the cited document `+delta`.
    Eta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogOddsSummary {
    pub n: usize,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// `log(Phi(u) / (1 - Phi(u)))` without forming either probability.
pub fn probit_log_odds(u: f64) -> f64 {
    log_norm_cdf(u) - log_norm_cdf(-u)
}

/// Change in citation log odds from the increment, for one covariate row
/// `x = [1, kappa, eta]` on the fitted scale.
pub fn dyad_log_odds_delta(tau: [f64; 3], x: [f64; 3], inc: Increment, kappa_scale: f64) -> f64 {
    let mut x2 = x;
    match inc {
        Increment::Indegree(d) => x2[1] += d / kappa_scale,
        Increment::Eta(d) => x2[2] += d,
    }
    let lin = |v: [f64; 3]| tau[0] * v[0] + tau[1] * v[1] + tau[2] * v[2];
    probit_log_odds(lin(x2)) - probit_log_odds(lin(x))
}

/// Log-odds changes over `m` feasible dyads drawn uniformly with
/// replacement, other covariates at their observed values. `eta` is N x K
/// and `modal` gives each citing paragraph's topic.
#[allow(clippy::too_many_arguments)]
pub fn log_odds_delta(
    corpus: &Corpus,
    kappa: &KappaCovariate,
    eta: &[f64],
    modal: &[usize],
    tau: [f64; 3],
    m: usize,
    inc: Increment,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, LogOddsSummary)> {
    let n_dyads = corpus.n_dyads();
    if n_dyads == 0 || m == 0 {
        return Err(PctmError::Domain("log-odds summary needs at least one feasible dyad and m > 0".into()));
    }
    if modal.len() != corpus.n_paragraphs() || corpus.n_docs() == 0 || !eta.len().is_multiple_of(corpus.n_docs()) {
        return Err(PctmError::Dimension("topic estimates do not match the corpus".into()));
    }
    let k = eta.len() / corpus.n_docs();
    let deltas: Vec<f64> = (0..m)
        .map(|_| {
            let (g, j) = corpus.locate_dyad(rng.below(n_dyads));
            let i = corpus.doc_of(g);
            let x = [1.0, kappa.get(j, i), eta[j * k + modal[g]]];
            dyad_log_odds_delta(tau, x, inc, kappa.scale())
        })
        .collect();
    let mean = deltas.iter().sum::<f64>() / m as f64;
    let summary = LogOddsSummary {
        n: m,
        mean,
        q025: quantile(&deltas, 0.025),
        q975: quantile(&deltas, 0.975),
    };
    Ok((deltas, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CitationSet, Document, Paragraph, Vocabulary};
    use crate::math::norm_cdf;

    fn corpus_with(n_docs: usize, paras: usize, triples: &[(usize, usize, usize)]) -> Corpus {
        let docs = (0..n_docs)
            .map(|_| Document {
                paragraphs: (0..paras).map(|_| Paragraph::from_counts([(0, 1)])).collect(),
            })
            .collect();
        Corpus::new(
            Vocabulary::numbered(1).unwrap(),
            (0..n_docs).map(|i| format!("d{i}")).collect(),
            docs,
            CitationSet::from_triples(triples.iter().copied()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_edge_subnetwork() {
        let corpus = corpus_with(3, 1, &[(2, 0, 1)]);
        let modal = vec![0, 0, 3];
        let net = extract_subnetwork(&corpus, &modal, 3, 4).unwrap();
        assert_eq!(net.nodes, BTreeSet::from([1, 2]));
        assert_eq!(net.edges, vec![Citation::new(2, 0, 1)]);
        assert!(extract_subnetwork(&corpus, &modal, 4, 4).is_err());
    }

    #[test]
    fn uniform_labels_put_everything_in_one_topic() {
        let corpus = corpus_with(4, 2, &[(1, 0, 0), (2, 1, 0), (3, 0, 2), (3, 1, 1)]);
        let modal = vec![0; corpus.n_paragraphs()];
        let all = extract_subnetwork(&corpus, &modal, 0, 2).unwrap();
        assert_eq!(all.edges.len(), 4);
        assert_eq!(all.nodes, BTreeSet::from([0, 1, 2, 3]));
        let none = extract_subnetwork(&corpus, &modal, 1, 2).unwrap();
        assert!(none.edges.is_empty() && none.nodes.is_empty());
    }

    #[test]
    fn two_node_edge() {
        let g = DocGraph::from_dense(vec![0, 1], &[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let s = relevance_scores(&g).unwrap();
        assert_eq!(s.inward, vec![0.0, 1.0]);
        assert_eq!(s.outward, vec![1.0, 0.0]);
        assert_eq!(s.inward_rank, vec![2, 1]);
        assert_eq!(s.outward_rank, vec![1, 2]);
    }

    #[test]
    fn four_cycle_is_flat() {
        let mut adj = vec![vec![0.0; 4]; 4];
        for a in 0..4 {
            adj[a][(a + 1) % 4] = 1.0;
        }
        let s = relevance_scores(&DocGraph::from_dense(vec![0, 1, 2, 3], &adj).unwrap()).unwrap();
        for p in 0..4 {
            assert_eq!(s.inward[p], 0.25);
            assert_eq!(s.outward[p], 0.25);
        }
        assert_eq!(s.inward_rank, vec![1, 2, 3, 4]);
    }

    #[test]
    fn isolated_nodes_rank_last() {
        let corpus = corpus_with(4, 1, &[(2, 0, 1)]);
        let s = relevance_scores(&DocGraph::full(&corpus)).unwrap();
        assert_eq!(s.inward, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.inward_rank, vec![2, 1, 3, 4]);
        assert_eq!(s.outward_rank, vec![2, 3, 1, 4]);
    }

    #[test]
    fn empty_network_is_an_error() {
        let g = DocGraph::from_dense(vec![0, 1], &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
        assert!(matches!(relevance_scores(&g), Err(PctmError::Domain(_))));
    }

    #[test]
    fn log_odds_oracle() {
        let tau = [-2.0, 0.1, 1.0];
        let x = [1.0, 4.0, 0.3];
        let got = dyad_log_odds_delta(tau, x, Increment::Indegree(3.0), 1.0);
        let u0 = -2.0 + 0.4 + 0.3;
        let u1 = -2.0 + 0.7 + 0.3;
        let lo = |u: f64| (norm_cdf(u) / (1.0 - norm_cdf(u))).ln();
        assert!((got - (lo(u1) - lo(u0))).abs() < 1e-12);
    }

    #[test]
    fn flat_or_dead_coefficients_give_zero() {
        let corpus = corpus_with(5, 2, &[(1, 0, 0), (3, 1, 2), (4, 0, 0)]);
        let kappa = KappaCovariate::raw(&corpus);
        let eta: Vec<f64> = (0..10).map(|x| x as f64 * 0.3 - 1.0).collect();
        let modal: Vec<usize> = (0..10).map(|g| g % 2).collect();
        let mut rng = RngStream::new(1);
        for (tau, inc) in [
            ([0.0, 0.0, 0.0], Increment::Indegree(2.0)),
            ([0.0, 0.0, 0.0], Increment::Eta(0.5)),
            ([-1.0, 0.2, 0.0], Increment::Eta(0.5)),
            ([-1.0, 0.2, 0.7], Increment::Eta(0.0)),
            ([-1.0, 0.2, 0.7], Increment::Indegree(0.0)),
        ] {
            let (d, s) = log_odds_delta(&corpus, &kappa, &eta, &modal, tau, 200, inc, &mut rng).unwrap();
            assert!(d.iter().all(|&x| x == 0.0));
            assert_eq!((s.mean, s.q025, s.q975), (0.0, 0.0, 0.0));
        }
        let (d, _) = log_odds_delta(&corpus, &kappa, &eta, &modal, [-1.0, 0.2, 0.7], 50, Increment::Eta(0.5), &mut rng).unwrap();
        assert!(d.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn locate_dyad_walks_every_dyad_in_order() {
        let corpus = corpus_with(4, 2, &[]);
        let mut expected = Vec::new();
        for g in 0..corpus.n_paragraphs() {
            for j in 0..corpus.doc_of(g) {
                expected.push((g, j));
            }
        }
        let got: Vec<_> = (0..corpus.n_dyads()).map(|d| corpus.locate_dyad(d)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn log_odds_is_stable_in_the_tails() {
        assert!((probit_log_odds(40.0) - (-log_norm_cdf(-40.0))).abs() < 1e-9);
        assert!(probit_log_odds(-40.0).is_finite());
        assert_eq!(probit_log_odds(0.0), 0.0);
    }
}
