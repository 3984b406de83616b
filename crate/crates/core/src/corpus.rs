//! Input data model: vocabulary, temporally ordered documents split into
//! paragraphs, and the paragraph-to-document citation relation.
//!
//! Four plain-text files make up a corpus on disk:
//!
//! | file                   | line format                                   |
//! |------------------------|-----------------------------------------------|
//! | `paragraph_counts.tsv` | `doc<TAB>para<TAB>term<TAB>count` (count > 0)  |
//! | `citations.tsv`        | `doc<TAB>para<TAB>cited_doc`                  |
//! | `vocab.txt`            | one term per line, line number = term index   |
//! | `order.txt`            | one document id per line, line number = index |
//!
//! All indices are 0-based. The order file is authoritative for time: a
//! document may only cite documents on earlier lines.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{PctmError, Result};

pub const COUNTS_FILE: &str = "paragraph_counts.tsv";
pub const CITATIONS_FILE: &str = "citations.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const ORDER_FILE: &str = "order.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        if terms.is_empty() {
            return Err(PctmError::Domain("vocabulary must contain at least one term".into()));
        }
        let mut seen = HashMap::with_capacity(terms.len());
        for (idx, t) in terms.iter().enumerate() {
            if let Some(prev) = seen.insert(t.as_str(), idx) {
                return Err(PctmError::Domain(format!(
                    "duplicate term {t:?} at indices {prev} and {idx}"
                )));
            }
        }
        Ok(Vocabulary { terms })
    }

    /// Synthetic vocabulary `w0, w1, ...` of the given size.
    pub fn numbered(size: usize) -> Result<Self> {
        Self::new((0..size).map(|v| format!("w{v}")).collect())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, v: usize) -> Option<&str> {
        self.terms.get(v).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Sparse word counts of one paragraph, sorted by term index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Paragraph {
    terms: Vec<u32>,
    counts: Vec<u32>,
    n_words: u32,
}

impl Paragraph {
    /// Builds a paragraph from `(term, count)` pairs. Zero counts are dropped
    /// and repeated terms are merged.
    pub fn from_counts<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> Self {
        let mut merged: BTreeMap<u32, u32> = BTreeMap::new();
        for (t, c) in pairs {
            if c > 0 {
                *merged.entry(t).or_insert(0) += c;
            }
        }
        let n_words = merged.values().sum();
        let (terms, counts) = merged.into_iter().unzip();
        Paragraph {
            terms,
            counts,
            n_words,
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn terms(&self) -> &[u32] {
        &self.terms
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Iterator over `(term, count)` pairs.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.terms
            .iter()
            .zip(&self.counts)
            .map(|(&t, &c)| (t as usize, c))
    }

    /// Total token count.
    pub fn n_words(&self) -> u32 {
        self.n_words
    }

    pub fn n_unique(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_words == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub paragraphs: Vec<Paragraph>,
}

impl Document {
    pub fn n_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }
}

/// A single observed citation `D_ipj = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct Citation {
    pub citing_doc: usize,
    pub paragraph: usize,
    pub cited_doc: usize,
}

impl Citation {
    pub fn new(citing_doc: usize, paragraph: usize, cited_doc: usize) -> Self {
        Citation {
            citing_doc,
            paragraph,
            cited_doc,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationSet {
    edges: BTreeSet<Citation>,
}

impl CitationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an edge, rejecting citations that do not point backward in
    /// time. Returns `false` if the edge was already present.
    pub fn insert(&mut self, c: Citation) -> Result<bool> {
        if c.cited_doc >= c.citing_doc {
            return Err(PctmError::TemporalViolation {
                citing_doc: c.citing_doc,
                paragraph: c.paragraph,
                cited_doc: c.cited_doc,
            });
        }
        Ok(self.edges.insert(c))
    }

    pub fn from_triples<I: IntoIterator<Item = (usize, usize, usize)>>(triples: I) -> Result<Self> {
        let mut set = Self::new();
        for (i, p, j) in triples {
            set.insert(Citation::new(i, p, j))?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, c: &Citation) -> bool {
        self.edges.contains(c)
    }

    /// Edges in `(citing_doc, paragraph, cited_doc)` order.
    pub fn iter(&self) -> impl Iterator<Item = &Citation> + '_ {
        self.edges.iter()
    }
}

/// Cumulative indegree table: `kappa(j, i)` is the number of citation edges
/// `(s, p, j)` with `s < i`, stored as a lower-triangular array of rows, one
/// row per citing time `i` in `0..=N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndegreeTable {
    n_docs: usize,
    table: Vec<u32>,
}

impl IndegreeTable {
    pub fn build(n_docs: usize, citations: &CitationSet) -> Self {
        let mut table = Vec::with_capacity(Self::row_offset(n_docs + 1));
        let mut running = vec![0u32; n_docs];
        let mut edges = citations.iter().peekable();
        for i in 0..=n_docs {
            table.extend_from_slice(&running[..i]);
            // edges are sorted by citing document
            while let Some(c) = edges.next_if(|c| c.citing_doc == i) {
                running[c.cited_doc] += 1;
            }
        }
        IndegreeTable { n_docs, table }
    }

    fn row_offset(i: usize) -> usize {
        i * i.saturating_sub(1) / 2
    }

    /// `kappa_j^{(i)}` for every `j < i`. `i == N` gives indegrees at the end
    /// of the corpus.
    pub fn row(&self, i: usize) -> &[u32] {
        let start = Self::row_offset(i);
        &self.table[start..start + i]
    }

    pub fn get(&self, j: usize, i: usize) -> Result<u32> {
        if j >= i {
            return Err(PctmError::IndexOutOfRange(format!(
                "indegree of document {j} at time {i} requires j < i"
            )));
        }
        if i > self.n_docs {
            return Err(PctmError::IndexOutOfRange(format!(
                "indegree time {i} exceeds corpus size {}",
                self.n_docs
            )));
        }
        Ok(self.row(i)[j])
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    vocabulary: Vocabulary,
    doc_ids: Vec<String>,
    documents: Vec<Document>,
    citations: CitationSet,
    para_offsets: Vec<usize>,
    para_doc: Vec<u32>,
    dyad_offsets: Vec<usize>,
    cited_by_paragraph: Vec<Vec<u32>>,
    indegree: IndegreeTable,
}

impl Corpus {
    /// Validates and assembles a corpus.
    pub fn new(
        vocabulary: Vocabulary,
        doc_ids: Vec<String>,
        documents: Vec<Document>,
        citations: CitationSet,
    ) -> Result<Self> {
        if doc_ids.len() != documents.len() {
            return Err(PctmError::Dimension(format!(
                "{} document ids for {} documents",
                doc_ids.len(),
                documents.len()
            )));
        }
        let v = vocabulary.len();
        for (i, d) in documents.iter().enumerate() {
            for (p, para) in d.paragraphs.iter().enumerate() {
                if let Some(&t) = para.terms().iter().find(|&&t| t as usize >= v) {
                    return Err(PctmError::IndexOutOfRange(format!(
                        "paragraph ({i}, {p}) uses term {t} but vocabulary has {v} terms"
                    )));
                }
            }
        }
        let mut para_offsets = Vec::with_capacity(documents.len() + 1);
        let mut total = 0;
        for d in &documents {
            para_offsets.push(total);
            total += d.n_paragraphs();
        }
        para_offsets.push(total);

        let mut cited_by_paragraph = vec![Vec::new(); total];
        for c in citations.iter() {
            if c.cited_doc >= c.citing_doc {
                return Err(PctmError::TemporalViolation {
                    citing_doc: c.citing_doc,
                    paragraph: c.paragraph,
                    cited_doc: c.cited_doc,
                });
            }
            if c.citing_doc >= documents.len() || c.paragraph >= documents[c.citing_doc].n_paragraphs() {
                return Err(PctmError::IndexOutOfRange(format!(
                    "citation ({}, {}, {}) refers to a missing paragraph",
                    c.citing_doc, c.paragraph, c.cited_doc
                )));
            }
            cited_by_paragraph[para_offsets[c.citing_doc] + c.paragraph].push(c.cited_doc as u32);
        }
        let indegree = IndegreeTable::build(documents.len(), &citations);
        let mut para_doc = Vec::with_capacity(total);
        let mut dyad_offsets = Vec::with_capacity(total + 1);
        let mut n_dyads = 0;
        for (i, d) in documents.iter().enumerate() {
            for _ in 0..d.n_paragraphs() {
                para_doc.push(i as u32);
                dyad_offsets.push(n_dyads);
                n_dyads += i;
            }
        }
        dyad_offsets.push(n_dyads);
        Ok(Corpus {
            vocabulary,
            doc_ids,
            documents,
            citations,
            para_offsets,
            para_doc,
            dyad_offsets,
            cited_by_paragraph,
            indegree,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, i: usize) -> &Document {
        &self.documents[i]
    }

    pub fn paragraph(&self, i: usize, p: usize) -> &Paragraph {
        &self.documents[i].paragraphs[p]
    }

    pub fn citations(&self) -> &CitationSet {
        &self.citations
    }

    /// V
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// N
    pub fn n_docs(&self) -> usize {
        self.documents.len()
    }

    /// G
    pub fn n_paragraphs(&self) -> usize {
        *self.para_offsets.last().unwrap_or(&0)
    }

    /// N_i
    pub fn doc_len(&self, i: usize) -> usize {
        self.documents[i].n_paragraphs()
    }

    /// Global 0-based paragraph index of `(i, p)`.
    pub fn global_index(&self, i: usize, p: usize) -> usize {
        self.para_offsets[i] + p
    }

    /// Global index range of document `i`'s paragraphs.
    pub fn paragraph_range(&self, i: usize) -> std::ops::Range<usize> {
        self.para_offsets[i]..self.para_offsets[i + 1]
    }

    /// `(doc, paragraph)` pairs in temporal order.
    pub fn paragraph_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.documents
            .iter()
            .enumerate()
            .flat_map(|(i, d)| (0..d.n_paragraphs()).map(move |p| (i, p)))
    }

    /// Sorted list of documents cited by the paragraph with global index `g`.
    pub fn cited_by(&self, g: usize) -> &[u32] {
        &self.cited_by_paragraph[g]
    }

    pub fn is_cited(&self, g: usize, j: usize) -> bool {
        self.cited_by_paragraph[g].binary_search(&(j as u32)).is_ok()
    }

    pub fn indegree_table(&self) -> &IndegreeTable {
        &self.indegree
    }

    /// `kappa_j^{(i)}`: citations received by `j` from documents earlier than `i`.
    pub fn indegree(&self, j: usize, i: usize) -> Result<u32> {
        self.indegree.get(j, i)
    }

    /// Document owning global paragraph `g`.
    pub fn doc_of(&self, g: usize) -> usize {
        self.para_doc[g] as usize
    }

    /// Number of feasible dyads `sum_i N_i * i` (0-based `i` counts earlier documents).
    pub fn n_dyads(&self) -> usize {
        *self.dyad_offsets.last().unwrap_or(&0)
    }

    /// Flat index range of the dyads `(g, j)`, `j < doc_of(g)`, of paragraph `g`.
    /// Entry `j` of the range is the dyad with cited document `j`.
    pub fn dyad_range(&self, g: usize) -> std::ops::Range<usize> {
        self.dyad_offsets[g]..self.dyad_offsets[g + 1]
    }

    /// `(g, j)` of flat dyad index `idx`.
    pub fn locate_dyad(&self, idx: usize) -> (usize, usize) {
        assert!(idx < self.n_dyads(), "dyad index {idx} out of range");
        let g = self.dyad_offsets.partition_point(|&o| o <= idx) - 1;
        (g, idx - self.dyad_offsets[g])
    }

    /// Observed citations over feasible dyads.
    pub fn citation_density(&self) -> f64 {
        let dyads = self.n_dyads();
        if dyads == 0 {
            0.0
        } else {
            self.citations.len() as f64 / dyads as f64
        }
    }

    /// Total token count per document, summed over paragraphs.
    pub fn doc_word_counts(&self, i: usize) -> BTreeMap<usize, u32> {
        let mut out = BTreeMap::new();
        for para in &self.documents[i].paragraphs {
            for (t, c) in para.entries() {
                *out.entry(t).or_insert(0) += c;
            }
        }
        out
    }
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PctmError::io(path, e))
}

pub(crate) fn parse_fields<const N: usize>(path: &Path, lineno: usize, line: &str) -> Result<[usize; N]> {
    let mut out = [0usize; N];
    let mut fields = line.split('\t');
    for (slot, out_ref) in out.iter_mut().enumerate() {
        let f = fields.next().ok_or_else(|| PctmError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("expected {N} tab-separated fields, found {slot}"),
        })?;
        *out_ref = f.trim().parse().map_err(|_| PctmError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("field {} is not a nonnegative integer: {f:?}", slot + 1),
        })?;
    }
    if fields.next().is_some() {
        return Err(PctmError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("expected {N} tab-separated fields, found more"),
        });
    }
    Ok(out)
}

pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses word-count triples into `(doc, para) -> [(term, count)]`.
pub(crate) fn parse_counts(path: &Path, text: &str) -> Result<BTreeMap<(usize, usize), Vec<(u32, u32)>>> {
    let mut out: BTreeMap<(usize, usize), Vec<(u32, u32)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in content_lines(text) {
        let [i, p, t, c] = parse_fields::<4>(path, lineno, line)?;
        if c == 0 {
            return Err(PctmError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "count must be positive".into(),
            });
        }
        if !seen.insert((i, p, t)) {
            return Err(PctmError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("duplicate entry for paragraph ({i}, {p}) term {t}"),
            });
        }
        let t = u32::try_from(t).map_err(|_| PctmError::IndexOutOfRange(format!("term index {t}")))?;
        let c = u32::try_from(c).map_err(|_| PctmError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: "count overflows u32".into(),
        })?;
        out.entry((i, p)).or_default().push((t, c));
    }
    Ok(out)
}

pub(crate) fn parse_citations(path: &Path, text: &str) -> Result<Vec<(usize, Citation)>> {
    content_lines(text)
        .map(|(lineno, line)| {
            let [i, p, j] = parse_fields::<3>(path, lineno, line)?;
            Ok((lineno, Citation::new(i, p, j)))
        })
        .collect()
}

/// Loads and validates a corpus from its four input files.
pub fn load_corpus(
    paragraph_counts_path: &Path,
    citations_path: &Path,
    vocab_path: &Path,
    order_path: &Path,
) -> Result<Corpus> {
    let vocab_text = read_lines(vocab_path)?;
    let terms: Vec<String> = vocab_text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect();
    let vocabulary = Vocabulary::new(terms).map_err(|e| PctmError::Parse {
        path: vocab_path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;

    let order_text = read_lines(order_path)?;
    let doc_ids: Vec<String> = order_text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect();
    {
        let mut seen = HashMap::new();
        for (n, id) in doc_ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.as_str(), n) {
                return Err(PctmError::Parse {
                    path: order_path.to_path_buf(),
                    line: n + 1,
                    msg: format!("document id {id:?} repeats line {}", prev + 1),
                });
            }
        }
    }
    let n_docs = doc_ids.len();
    let v = vocabulary.len();

    let counts_path = paragraph_counts_path;
    let counts = parse_counts(counts_path, &read_lines(counts_path)?)?;
    let cites = parse_citations(citations_path, &read_lines(citations_path)?)?;

    let mut n_paras = vec![0usize; n_docs];
    for (&(i, p), entries) in &counts {
        if i >= n_docs {
            return Err(PctmError::IndexOutOfRange(format!(
                "{}: document index {i} but order file lists {n_docs} documents",
                counts_path.display()
            )));
        }
        if let Some(&(t, _)) = entries.iter().find(|(t, _)| *t as usize >= v) {
            return Err(PctmError::IndexOutOfRange(format!(
                "{}: term index {t} but vocabulary has {v} terms",
                counts_path.display()
            )));
        }
        n_paras[i] = n_paras[i].max(p + 1);
    }

    let mut citations = CitationSet::new();
    for (lineno, c) in cites {
        if c.citing_doc >= n_docs || c.cited_doc >= n_docs {
            return Err(PctmError::IndexOutOfRange(format!(
                "{}:{lineno}: citation ({}, {}, {}) but order file lists {n_docs} documents",
                citations_path.display(),
                c.citing_doc,
                c.paragraph,
                c.cited_doc
            )));
        }
        if !citations.insert(c)? {
            log::debug!(
                "collapsed repeated citation ({}, {}, {})",
                c.citing_doc,
                c.paragraph,
                c.cited_doc
            );
        }
        n_paras[c.citing_doc] = n_paras[c.citing_doc].max(c.paragraph + 1);
    }

    let mut documents: Vec<Document> = n_paras
        .iter()
        .map(|&np| Document {
            paragraphs: vec![Paragraph::empty(); np],
        })
        .collect();
    for ((i, p), entries) in counts {
        documents[i].paragraphs[p] = Paragraph::from_counts(entries);
    }

    Corpus::new(vocabulary, doc_ids, documents, citations)
}

/// Loads `paragraph_counts.tsv`, `citations.tsv`, `vocab.txt` and `order.txt`
/// from a directory.
pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    load_corpus(
        &dir.join(COUNTS_FILE),
        &dir.join(CITATIONS_FILE),
        &dir.join(VOCAB_FILE),
        &dir.join(ORDER_FILE),
    )
}

/// The four corpus files rendered as text, in canonical (sorted) order.
pub fn render_corpus(corpus: &Corpus) -> [(&'static str, String); 4] {
    let mut counts = String::new();
    for (i, d) in corpus.documents().iter().enumerate() {
        for (p, para) in d.paragraphs.iter().enumerate() {
            for (t, c) in para.entries() {
                let _ = writeln!(counts, "{i}\t{p}\t{t}\t{c}");
            }
        }
    }
    let mut cites = String::new();
    for c in corpus.citations().iter() {
        let _ = writeln!(cites, "{}\t{}\t{}", c.citing_doc, c.paragraph, c.cited_doc);
    }
    let mut vocab = String::new();
    for t in corpus.vocabulary().terms() {
        vocab.push_str(t);
        vocab.push('\n');
    }
    let mut order = String::new();
    for id in corpus.doc_ids() {
        order.push_str(id);
        order.push('\n');
    }
    [
        (COUNTS_FILE, counts),
        (CITATIONS_FILE, cites),
        (VOCAB_FILE, vocab),
        (ORDER_FILE, order),
    ]
}

/// Writes the corpus in the loader's formats. Returns the written paths.
pub fn write_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| PctmError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, text) in render_corpus(corpus) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| PctmError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
