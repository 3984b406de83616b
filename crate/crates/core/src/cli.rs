//! Command-line front end.
//!
//! Every subcommand writes its results under `--out` together with a
//! `manifest.json` holding the resolved settings and SHA-256 hashes of the
//! inputs it read and the files it wrote. Failures print one JSON line on
//! stderr and exit with 2 (usage or configuration), 3 (data) or 4
//! (numerical).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::FitConfig;
use crate::corpus::{load_corpus_dir, write_corpus_dir, Corpus, CITATIONS_FILE, COUNTS_FILE, ORDER_FILE, VOCAB_FILE};
use crate::diagnostics::{align_topics, extract_traces, mean_psi, summarize_trace, ParamSelector, TraceSummary};
use crate::error::PctmError;
use crate::gibbs::{run_chain, KappaCovariate, Model};
use crate::init::{warm_start, InitMode};
use crate::network::{extract_subnetwork, log_odds_delta, relevance_scores, DocGraph, Increment, RelevanceScores};
use crate::predict::{load_heldout, HeldOutParagraph, PredictMode, Predictor, Prevalence};
use crate::rng::{split_seed, RngStream};
use crate::simulate::{evaluate_recovery, generate, SimulationSpec, Truth};
use crate::state::Hyperparameters;
use crate::store::{SampleStore, StoreHeader, HEADER_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_DIR: &str = "corpus";
pub const TRUTH_FILE: &str = "truth.json";
const PROGRESS_EVERY: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "pctm", version, about = "Paragraph-citation topic model: fit, simulate, predict and analyze")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Gibbs sampler on a corpus.
    Fit(FitArgs),
    /// Draw a synthetic corpus and its ground truth.
    Simulate(SimulateArgs),
    /// Compare fitted samples with a simulation's truth.
    Evaluate(EvaluateArgs),
    /// Score held-out paragraphs.
    Predict(PredictArgs),
    /// Topic subnetworks, relevance scores and log-odds effects.
    Analyze(AnalyzeArgs),
    /// Trace summaries of one parameter.
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// TOML run configuration; `--k` suffices without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitMode>,
    /// Keep mu at its prior mean.
    #[arg(long)]
    pub fix_mu: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation spec; the desk-scale defaults without one.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub heldout: PathBuf,
    #[arg(long, value_enum, default_value = "point")]
    pub mode: PredictMode,
    /// Prevalence term for documents after the corpus.
    #[arg(long, value_enum, default_value = "prior")]
    pub prevalence: Prevalence,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Defaults to the corpus copy inside the samples directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// A topic index or `all`.
    #[arg(long, default_value = "all")]
    pub topic: String,
    /// Dyads drawn for the log-odds summaries.
    #[arg(long, default_value_t = 10_000)]
    pub dyads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// `tau`, `mu`, `log_joint`, `eta:I:K` or `theta:I:K`.
    #[arg(long)]
    pub param: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Model(PctmError),
}

impl From<PctmError> for CliError {
    fn from(e: PctmError) -> Self {
        CliError::Model(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(e) => match e {
                PctmError::Config(_) => 2,
                PctmError::Numerical(_) | PctmError::NotSpd(_) => 4,
                _ => 3,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "data",
            _ => "numerical",
        }
    }

    /// The single-line JSON error report.
    pub fn to_json_line(&self) -> String {
        let message = match self {
            CliError::Usage(m) => m.clone(),
            CliError::Model(e) => e.to_string(),
        };
        json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": message.replace('\n', " ").trim().to_string(),
        })
        .to_string()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string());
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            err.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Analyze(a) => analyze(a),
        Command::Diag(a) => diag(a),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| PctmError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn write_file(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PctmError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| PctmError::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Writes `manifest.json` into `out`. Output paths are recorded relative
/// to `out`, so the manifest does not depend on where the run was written.
fn write_manifest(
    out: &Path,
    command: &str,
    settings: Value,
    inputs: BTreeMap<String, String>,
    written: &[PathBuf],
) -> CliResult<()> {
    let mut outputs = BTreeMap::new();
    for p in written {
        let rel = p.strip_prefix(out).unwrap_or(p);
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        outputs.insert(key, hash_file(p)?);
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
        "inputs": inputs,
        "outputs": outputs,
    });
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, to_json(&manifest)).map_err(|e| PctmError::io(&path, e))?;
    Ok(())
}

fn corpus_input_hashes(dir: &Path, prefix: &str, inputs: &mut BTreeMap<String, String>) -> CliResult<()> {
    for name in [COUNTS_FILE, CITATIONS_FILE, VOCAB_FILE, ORDER_FILE] {
        inputs.insert(format!("{prefix}/{name}"), hash_file(&dir.join(name))?);
    }
    Ok(())
}

fn resolve_fit_config(a: &FitArgs) -> CliResult<FitConfig> {
    let mut cfg = match &a.config {
        Some(p) => FitConfig::load(p)?,
        None => FitConfig::with_k(a.k.ok_or_else(|| CliError::Usage("fit needs --config or --k".into()))?),
    };
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(c) = a.chains {
        cfg.chains = c;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.init {
        cfg.init = m;
    }
    if a.fix_mu {
        cfg.fix_mu = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs chain `chain` of a fit. The chain's stream is
/// `split_seed(cfg.seed, chain)`; its child 0 drives the warm start and
/// child 1 the sweeps.
pub fn fit_chain(
    corpus: &Corpus,
    cfg: &FitConfig,
    hyper: &Hyperparameters,
    chain: usize,
    on_report: &mut dyn FnMut(&crate::gibbs::SweepReport),
) -> crate::Result<SampleStore> {
    let options = cfg.sampler_options();
    let model = Model::new(corpus, hyper.clone(), options)?;
    let seed = split_seed(cfg.seed, chain as u64);
    let root = RngStream::new(seed);
    let init = warm_start(&model, &cfg.init_options(), &mut root.child(0))?;
    let header = StoreHeader {
        n_docs: corpus.n_docs(),
        n_paragraphs: corpus.n_paragraphs(),
        vocab_size: corpus.vocab_size(),
        k: cfg.k,
        chain,
        seed,
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        init: cfg.init.as_str().into(),
        options,
        kappa_shift: model.kappa.shift(),
        kappa_scale: model.kappa.scale(),
        hyper: hyper.clone(),
    };
    run_chain(&model, &init, cfg.chain_settings(), header, &mut root.child(1), on_report)
}

pub fn chain_dir(out: &Path, chain: usize) -> PathBuf {
    out.join(format!("chain_{chain}"))
}

fn fit(a: &FitArgs) -> CliResult<()> {
    let cfg = resolve_fit_config(a)?;
    let corpus = load_corpus_dir(&a.corpus)?;
    let hyper = cfg.hyper.resolve(cfg.k, corpus.vocab_size())?;

    let results: Vec<crate::Result<SampleStore>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| {
                let (corpus, cfg, hyper) = (&corpus, &cfg, &hyper);
                s.spawn(move || {
                    fit_chain(corpus, cfg, hyper, c, &mut |r| {
                        if r.iteration % PROGRESS_EVERY == 0 {
                            log::info!("{}", json!({"chain": c, "report": r}));
                        }
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain worker panicked"))
            .collect()
    });

    let mut written = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        written.extend(r?.write(&chain_dir(&a.out, c), cfg.text_export)?);
    }
    written.extend(write_corpus_dir(&corpus, &a.out.join(CORPUS_DIR))?);

    let mut inputs = BTreeMap::new();
    corpus_input_hashes(&a.corpus, "corpus", &mut inputs)?;
    if let Some(p) = &a.config {
        inputs.insert("config".into(), hash_file(p)?);
    }
    let settings = json!({ "config": cfg, "hyper": hyper });
    write_manifest(&a.out, "fit", settings, inputs, &written)
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => SimulationSpec::load(p)?,
        None => SimulationSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let (corpus, truth) = generate(&spec)?;
    let mut written = write_corpus_dir(&corpus, &a.out.join(CORPUS_DIR))?;
    write_file(&a.out.join(TRUTH_FILE), &to_json(&truth), &mut written)?;
    let mut inputs = BTreeMap::new();
    if let Some(p) = &a.spec {
        inputs.insert("spec".into(), hash_file(p)?);
    }
    log::info!(
        "simulated {} documents, {} paragraphs, {} citations, density {:.4}",
        corpus.n_docs(),
        corpus.n_paragraphs(),
        corpus.citations().len(),
        corpus.citation_density()
    );
    write_manifest(&a.out, "simulate", json!({ "spec": spec }), inputs, &written)
}

/// A fit directory: the corpus copy and every chain, relabeled so that all
/// chains share chain 0's topic labels.
pub struct FittedRun {
    pub corpus: Corpus,
    pub stores: Vec<SampleStore>,
    /// `perms[c][k]` is chain `c`'s original label for topic `k`.
    pub perms: Vec<Vec<usize>>,
    pub inputs: BTreeMap<String, String>,
}

fn chain_dirs(samples: &Path) -> CliResult<Vec<PathBuf>> {
    if samples.join(HEADER_FILE).exists() {
        return Ok(vec![samples.to_path_buf()]);
    }
    let entries = fs::read_dir(samples).map_err(|e| PctmError::io(samples, e))?;
    let mut found = Vec::new();
    for e in entries {
        let e = e.map_err(|e| PctmError::io(samples, e))?;
        let name = e.file_name().to_string_lossy().to_string();
        if let Some(c) = name.strip_prefix("chain_").and_then(|n| n.parse::<usize>().ok()) {
            found.push((c, e.path()));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(PctmError::Domain(format!("no sample stores under {}", samples.display())).into());
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn load_run(samples: &Path, corpus_dir: Option<&Path>) -> CliResult<FittedRun> {
    let dirs = chain_dirs(samples)?;
    let corpus_dir = match corpus_dir {
        Some(d) => d.to_path_buf(),
        None if samples.join(CORPUS_DIR).is_dir() => samples.join(CORPUS_DIR),
        None => samples
            .parent()
            .map(|p| p.join(CORPUS_DIR))
            .filter(|p| p.is_dir())
            .ok_or_else(|| CliError::Usage(format!("no corpus found next to {}; pass --corpus", samples.display())))?,
    };
    let corpus = load_corpus_dir(&corpus_dir)?;
    let mut inputs = BTreeMap::new();
    corpus_input_hashes(&corpus_dir, "corpus", &mut inputs)?;
    let mut stores = Vec::new();
    for d in &dirs {
        let s = SampleStore::read(d)?;
        let h = &s.header;
        if h.n_docs != corpus.n_docs() || h.n_paragraphs != corpus.n_paragraphs() || h.vocab_size != corpus.vocab_size() {
            return Err(PctmError::Dimension(format!("samples in {} do not match the corpus", d.display())).into());
        }
        let name = d.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        for f in fs::read_dir(d).map_err(|e| PctmError::io(d, e))? {
            let f = f.map_err(|e| PctmError::io(d, e))?.path();
            inputs.insert(format!("samples/{name}/{}", f.file_name().unwrap_or_default().to_string_lossy()), hash_file(&f)?);
        }
        stores.push(s);
    }
    let k = stores[0].k();
    if stores.iter().any(|s| s.k() != k) {
        return Err(PctmError::Dimension("chains disagree on K".into()).into());
    }
    let mut perms = vec![(0..k).collect::<Vec<_>>()];
    if stores.len() > 1 {
        let reference = mean_psi(&corpus, &stores[0])?;
        for s in stores.iter_mut().skip(1) {
            let perm = align_topics(&reference, &mean_psi(&corpus, s)?);
            s.relabel(&perm);
            perms.push(perm);
        }
    }
    Ok(FittedRun {
        corpus,
        stores,
        perms,
        inputs,
    })
}

fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let truth = Truth::load(&a.truth)?;
    let run = load_run(&a.samples, None)?;
    let mut reports = Vec::new();
    for (c, s) in run.stores.iter().enumerate() {
        let r = evaluate_recovery(&truth, s)?;
        log::info!(
            "chain {c}: topic accuracy {:.3}, theta mode accuracy {:.3}, tau coverage {:?}",
            r.topic_accuracy,
            r.theta_mode_accuracy,
            r.tau_coverage
        );
        reports.push(json!({ "chain": c, "recovery": r }));
    }
    let mut written = Vec::new();
    write_file(&a.out.join("recovery.json"), &to_json(&json!({ "truth_tau": truth.tau, "chains": reports })), &mut written)?;
    let mut inputs = run.inputs;
    inputs.insert("truth".into(), hash_file(&a.truth)?);
    write_manifest(&a.out, "evaluate", json!({}), inputs, &written)
}

fn csv_header(first: &[&str], k: usize, prefix: &str) -> String {
    let mut h = first.join(",");
    for t in 0..k {
        let _ = write!(h, ",{prefix}{t}");
    }
    h.push('\n');
    h
}

fn predict(a: &PredictArgs) -> CliResult<()> {
    let run = load_run(&a.samples, None)?;
    let paras = load_heldout(&a.heldout)?;
    let predictor = Predictor::from_stores(&run.corpus, &run.stores, a.mode)?;
    let k = predictor.k();
    let n = run.corpus.n_docs();

    let mut table = csv_header(&["doc", "paragraph", "log_predictive"], k, "topic_");
    let mut new_docs: BTreeMap<usize, Vec<HeldOutParagraph>> = BTreeMap::new();
    for p in &paras {
        let (lp, post) = predictor.score(p, a.prevalence)?;
        let _ = write!(table, "{},{},{}", p.host_doc, p.paragraph, lp);
        for q in &post.probs {
            let _ = write!(table, ",{q}");
        }
        table.push('\n');
        if p.host_doc >= n {
            new_docs.entry(p.host_doc).or_default().push(p.clone());
        }
    }
    let mut written = Vec::new();
    write_file(&a.out.join("predictions.csv"), &table, &mut written)?;

    if !new_docs.is_empty() {
        let mut fractions = csv_header(&["doc", "paragraphs"], k, "share_topic_");
        let mut report = String::new();
        for (doc, ps) in &new_docs {
            let pred = predictor.predict_new_document(ps, a.prevalence)?;
            let _ = write!(fractions, "{doc},{}", ps.len());
            for f in &pred.fractions {
                let _ = write!(fractions, ",{f}");
            }
            fractions.push('\n');
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&x, &y| pred.fractions[y].total_cmp(&pred.fractions[x]).then(x.cmp(&y)));
            let parts: Vec<String> = order
                .iter()
                .filter(|&&t| pred.fractions[t] > 0.0)
                .map(|&t| format!("{:.0}% topic {t}", 100.0 * pred.fractions[t]))
                .collect();
            let _ = writeln!(report, "document {doc} ({} paragraphs): {}", ps.len(), parts.join(" / "));
        }
        write_file(&a.out.join("new_documents.csv"), &fractions, &mut written)?;
        write_file(&a.out.join("new_documents.txt"), &report, &mut written)?;
    }
    let mut inputs = run.inputs;
    inputs.insert("heldout".into(), hash_file(&a.heldout)?);
    write_manifest(&a.out, "predict", json!({ "mode": a.mode, "prevalence": a.prevalence }), inputs, &written)
}

/// Most frequent topic of each paragraph over the draws of every chain.
pub fn pooled_modal_topics(stores: &[SampleStore]) -> Vec<usize> {
    let k = stores[0].k();
    let g = stores[0].header.n_paragraphs;
    let mut counts = vec![0u64; g * k];
    for s in stores {
        for draw in &s.z {
            for (p, &t) in draw.iter().enumerate() {
                counts[p * k + t as usize] += 1;
            }
        }
    }
    counts
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (t, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = t;
                }
            }
            best
        })
        .collect()
}

fn scores_csv(s: &RelevanceScores) -> String {
    let mut out = String::from("doc,inward,outward,inward_rank,outward_rank\n");
    for (p, d) in s.nodes.iter().enumerate() {
        let _ = writeln!(out, "{d},{},{},{},{}", s.inward[p], s.outward[p], s.inward_rank[p], s.outward_rank[p]);
    }
    out
}

fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let run = load_run(&a.samples, a.corpus.as_deref())?;
    let corpus = &run.corpus;
    let k = run.stores[0].k();
    let topics: Vec<usize> = if a.topic == "all" {
        (0..k).collect()
    } else {
        let t: usize = a
            .topic
            .parse()
            .map_err(|_| CliError::Usage(format!("--topic must be a topic index or all, got {:?}", a.topic)))?;
        if t >= k {
            return Err(PctmError::IndexOutOfRange(format!("topic {t} with {k} topics")).into());
        }
        vec![t]
    };
    let modal = pooled_modal_topics(&run.stores);
    let mut written = Vec::new();
    for &t in &topics {
        let net = extract_subnetwork(corpus, &modal, t, k)?;
        let mut edges = String::from("citing_doc,paragraph,cited_doc,topic\n");
        for e in &net.edges {
            let _ = writeln!(edges, "{},{},{},{t}", e.citing_doc, e.paragraph, e.cited_doc);
        }
        write_file(&a.out.join(format!("edges_topic_{t}.csv")), &edges, &mut written)?;
        if net.edges.is_empty() {
            log::warn!("topic {t} has no citations; no relevance scores written");
            continue;
        }
        let scores = relevance_scores(&DocGraph::from_subnetwork(&net)?)?;
        write_file(&a.out.join(format!("scores_topic_{t}.csv")), &scores_csv(&scores), &mut written)?;
    }
    if !corpus.citations().is_empty() {
        let scores = relevance_scores(&DocGraph::full(corpus))?;
        write_file(&a.out.join("scores_full.csv"), &scores_csv(&scores), &mut written)?;
    }

    if corpus.n_dyads() > 0 && a.dyads > 0 {
        let first = &run.stores[0].header;
        let kappa = KappaCovariate::with_transform(corpus, first.kappa_shift, first.kappa_scale)?;
        let point = crate::predict::PointFit::posterior_mean(corpus, &run.stores)?;
        let mut summaries = Vec::new();
        for (label, inc) in [
            ("indegree+1", Increment::Indegree(1.0)),
            ("indegree+10", Increment::Indegree(10.0)),
            ("eta+1", Increment::Eta(1.0)),
        ] {
            let mut rng = RngStream::new(a.seed);
            let (_, s) = log_odds_delta(corpus, &kappa, &point.eta, &modal, point.tau, a.dyads, inc, &mut rng)?;
            summaries.push(json!({ "increment": label, "summary": s }));
        }
        write_file(&a.out.join("log_odds.json"), &to_json(&json!({ "tau": point.tau, "deltas": summaries })), &mut written)?;
    }
    let settings = json!({ "topic": a.topic, "dyads": a.dyads, "seed": a.seed });
    write_manifest(&a.out, "analyze", settings, run.inputs, &written)
}

fn diag(a: &DiagArgs) -> CliResult<()> {
    let sel: ParamSelector = a.param.parse()?;
    let run = load_run(&a.samples, None)?;
    let mut by_name: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut names = Vec::new();
    let mut trace_csv = String::from("chain,iteration,name,value\n");
    for (c, s) in run.stores.iter().enumerate() {
        for tr in extract_traces(s, &sel, None)? {
            for (it, v) in tr.iterations.iter().zip(&tr.values) {
                let _ = writeln!(trace_csv, "{c},{it},{},{v}", tr.name);
            }
            // the log joint is recorded from sweep 1; summarize after burn-in
            let kept: Vec<f64> = tr
                .iterations
                .iter()
                .zip(&tr.values)
                .filter(|(&it, _)| sel != ParamSelector::LogJoint || it > s.header.burn_in)
                .map(|(_, &v)| v)
                .collect();
            if !by_name.contains_key(&tr.name) {
                names.push(tr.name.clone());
            }
            by_name.entry(tr.name).or_default().push(kept);
        }
    }
    let summaries: Vec<TraceSummary> = names
        .iter()
        .map(|n| summarize_trace(n, &by_name[n]))
        .collect::<crate::Result<_>>()?;
    let mut table = String::from("name,mean,sd,q025,q50,q975,ess,rhat\n");
    for s in &summaries {
        let rhat = s.rhat.map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(table, "{},{},{},{},{},{},{},{rhat}", s.name, s.mean, s.sd, s.q025, s.q50, s.q975, s.ess);
    }
    let mut written = Vec::new();
    write_file(&a.out.join("summary.csv"), &table, &mut written)?;
    write_file(&a.out.join("trace.csv"), &trace_csv, &mut written)?;
    write_manifest(&a.out, "diag", json!({ "param": a.param }), run.inputs, &written)
}
