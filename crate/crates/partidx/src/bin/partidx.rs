//! Pipeline front end. Each subcommand runs one stage and persists its
//! artifact atomically; tables go to standard output as CSV, everything else
//! (config echo, progress, errors) to standard error.
//!
//! Exit codes: 0 success, 2 usage, 3 missing input file, 4 malformed input
//! file, 1 anything else.

use std::collections::HashMap;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use partidx::io::{load_ground_truth, load_points, save_ivecs, sniff_format};
use partidx::index::rerank;
use partidx::{
    build_hyperplane_index, build_index, build_kmeans_index, build_knn_graph, build_lsh_index,
    cut_stats, make_soft_labels, normalize_rows, partition_graph, sweep, train, verify_theorem,
    write_csv, AnyIndex, BuildParams, ClassifierKind, Eta, KnnGraph, LevelKind, LevelSpec,
    MlpConfig, Partition, PointSet, QuerySet, SoftLabelSet, SplitRule, SweepOptions,
};

#[derive(Parser)]
#[command(name = "partidx", version, about = "Learned space partitions for nearest-neighbor search")]
struct Cli {
    /// Flat key=value config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker-count cap (stages currently run sequentially)
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the exact k-NN graph of a dataset
    BuildGraph {
        /// Input points (.fvecs, or .phv/.raw for the tagged format)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Neighbors per point
        #[arg(long)]
        k: Option<usize>,
        /// Normalize rows to unit length and use the cosine metric
        #[arg(long)]
        normalize: bool,
        /// Output graph file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut a k-NN graph into balanced bins
    Partition {
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Number of bins
        #[arg(long)]
        bins: Option<usize>,
        /// Balance slack as a decimal, e.g. 0.05
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Local-search iteration cap
        #[arg(long)]
        refine_iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a routing classifier on a partition
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        partition: Option<PathBuf>,
        /// regression | mlp
        #[arg(long)]
        model_kind: Option<String>,
        /// Soft-label neighborhood size (mlp only; regression is one-hot)
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
        #[arg(long)]
        decay_interval: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a full multi-level partition index
    BuildIndex {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
        /// Graph degree for the per-node k-NN graphs
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated level specs, e.g. 16:mlp or 16:mlp,256:kmeans
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        refine_iters: Option<usize>,
        /// Root-level network width/depth
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        /// Network width/depth below the root
        #[arg(long)]
        lower_blocks: Option<usize>,
        #[arg(long)]
        lower_hidden: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
        #[arg(long)]
        decay_interval: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer k-NN queries through an index
    Query {
        #[arg(long)]
        index: Option<PathBuf>,
        /// The indexed dataset, for exact re-ranking
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// One probe setting; commas separate levels for a multi-level tree
        #[arg(long)]
        probes: Option<String>,
        /// Output neighbor ids (.ivecs); short rows are padded with -1
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep probe settings and print the accuracy/candidates table
    Eval {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Ground truth (.ivecs)
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Normalize query rows (match an index built with --normalize)
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        k: Option<usize>,
        /// Probe settings: semicolons separate settings, commas separate
        /// tree levels; for single-level structures commas separate settings
        #[arg(long)]
        probes: Option<String>,
        /// Method label for the CSV (defaults to the index kind)
        #[arg(long)]
        method: Option<String>,
        /// Treat query i as dataset point i and drop self-matches
        #[arg(long)]
        exclude_self: bool,
        /// Measure wall-clock per query (breaks byte-reproducibility)
        #[arg(long)]
        timing: bool,
    },
    /// Build a comparison structure: kmeans, a hyperplane tree, or LSH
    Baseline {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
        /// kmeans | pca-tree | rp-tree | 2means-tree | reg-tree | lsh
        #[arg(long)]
        method: Option<String>,
        /// Bins (kmeans)
        #[arg(long)]
        bins: Option<usize>,
        /// Tree depth (hyperplane trees)
        #[arg(long)]
        depth: Option<usize>,
        /// Hash bits (lsh); bins = 2^bits
        #[arg(long)]
        bits: Option<usize>,
        /// Lloyd iteration cap (kmeans)
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify the sparse-cut guarantee on a dataset and print the cut
    SpectralCheck {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        k: Option<usize>,
    },
}

struct CliError {
    code: i32,
    msg: String,
}

fn usage(msg: String) -> CliError {
    CliError { code: 2, msg }
}

impl From<partidx::Error> for CliError {
    fn from(e: partidx::Error) -> CliError {
        let code = if e.is_format_violation() {
            4
        } else if matches!(&e, partidx::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound)
        {
            3
        } else {
            1
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError {
            code: if e.kind() == std::io::ErrorKind::NotFound { 3 } else { 1 },
            msg: format!("i/o: {}", e),
        }
    }
}

/// Merges command line over config file over defaults, recording every
/// effective value. The echo is itself valid config-file syntax, so a run
/// can be replayed from its own standard-error output.
struct Settings {
    file: HashMap<String, String>,
    echo: Vec<(String, String)>,
}

impl Settings {
    fn load(config: Option<&Path>) -> Result<Settings, CliError> {
        let mut file = HashMap::new();
        if let Some(path) = config {
            if !path.exists() {
                return Err(CliError {
                    code: 3,
                    msg: format!("{}: no such config file", path.display()),
                });
            }
            for (lineno, line) in std::fs::read_to_string(path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    usage(format!(
                        "{}:{}: expected key=value, got {:?}",
                        path.display(),
                        lineno + 1,
                        line
                    ))
                })?;
                file.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings {
            file,
            echo: Vec::new(),
        })
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config {}={:?}: {}", key, raw, e))),
        }
    }

    /// CLI value > config file > default.
    fn get<T: FromStr + Display>(
        &mut self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match cli {
            Some(v) => v,
            None => self.lookup(key)?.unwrap_or(default),
        };
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Like get, but with no default: missing everywhere is a usage error.
    fn require<T: FromStr + Display>(&mut self, key: &str, cli: Option<T>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match cli {
            Some(v) => v,
            None => self
                .lookup(key)?
                .ok_or_else(|| usage(format!("missing required parameter --{}", key)))?,
        };
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn path(&mut self, key: &str, cli: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let v = match cli {
            Some(v) => v,
            None => self
                .lookup::<String>(key)?
                .map(PathBuf::from)
                .ok_or_else(|| usage(format!("missing required parameter --{}", key)))?,
        };
        self.echo.push((key.to_string(), v.display().to_string()));
        Ok(v)
    }

    /// Boolean flag: presence on the command line wins, else the file value.
    fn flag(&mut self, key: &str, cli: bool) -> Result<bool, CliError> {
        let v = if cli { true } else { self.lookup(key)?.unwrap_or(false) };
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn emit(&self, command: &str) {
        eprintln!("# command: {}", command);
        for (k, v) in &self.echo {
            eprintln!("{}={}", k, v);
        }
    }
}

/// Missing-input check with the path in the message.
fn need(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError {
            code: 3,
            msg: format!("{}: no such file", path.display()),
        })
    }
}

fn load_dataset(path: &Path, normalize: bool) -> Result<PointSet, CliError> {
    need(path)?;
    let ps = load_points(path, sniff_format(path))?;
    Ok(if normalize { normalize_rows(&ps)? } else { ps })
}

fn load_queries(path: &Path, normalize: bool) -> Result<QuerySet, CliError> {
    let ps = load_dataset(path, normalize)?;
    Ok(QuerySet::new(ps.data().to_vec(), ps.d(), ps.metric())?)
}

fn parse_eta(s: &str) -> Result<Eta, CliError> {
    Eta::parse_decimal(s).map_err(|e| usage(e.to_string()))
}

fn parse_level_kind(s: &str) -> Result<LevelKind, CliError> {
    match s {
        "regression" => Ok(LevelKind::Regression),
        "mlp" => Ok(LevelKind::Mlp),
        "kmeans" => Ok(LevelKind::KMeans),
        _ => Err(usage(format!(
            "unknown level kind {:?} (expected regression, mlp, or kmeans)",
            s
        ))),
    }
}

/// "16:mlp,256:kmeans" → level specs.
fn parse_levels(s: &str) -> Result<Vec<LevelSpec>, CliError> {
    s.split(',')
        .map(|part| {
            let (m, kind) = part
                .split_once(':')
                .ok_or_else(|| usage(format!("level spec {:?} is not bins:kind", part)))?;
            Ok(LevelSpec {
                m: m.parse()
                    .map_err(|e| usage(format!("level spec {:?}: {}", part, e)))?,
                kind: parse_level_kind(kind)?,
            })
        })
        .collect()
}

fn parse_counts(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| usage(format!("probe count {:?}: {}", v, e)))
        })
        .collect()
}

/// Probe settings for an index: semicolons separate settings and commas
/// separate levels; when the structure has a single level, commas separate
/// settings instead.
fn parse_probes(idx: &AnyIndex, s: &str) -> Result<Vec<Vec<usize>>, CliError> {
    let nlevels = match idx {
        AnyIndex::Tree(t) => t.levels().len(),
        _ => 1,
    };
    let settings: Vec<Vec<usize>> = if s.contains(';') {
        s.split(';').map(parse_counts).collect::<Result<_, _>>()?
    } else if nlevels == 1 {
        parse_counts(s)?.into_iter().map(|b| vec![b]).collect()
    } else {
        vec![parse_counts(s)?]
    };
    for setting in &settings {
        if setting.len() != nlevels {
            return Err(usage(format!(
                "probe setting {:?} has {} levels, index has {}",
                setting,
                setting.len(),
                nlevels
            )));
        }
    }
    Ok(settings)
}

fn method_label(idx: &AnyIndex) -> &'static str {
    match idx {
        AnyIndex::Tree(_) => "partition-tree",
        AnyIndex::KMeans(_) => "kmeans",
        AnyIndex::HTree(h) => match h.tree.rule() {
            Some(SplitRule::Pca) => "pca-tree",
            Some(SplitRule::Rp) => "rp-tree",
            Some(SplitRule::TwoMeans) => "2means-tree",
            Some(SplitRule::Regression) => "reg-tree",
            None => "hyperplane-tree",
        },
        AnyIndex::Lsh(_) => "lsh",
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.msg);
        std::process::exit(e.code);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut st = Settings::load(cli.config.as_deref())?;
    let workers = st.get("workers", cli.workers, 1usize)?;
    if workers == 0 {
        return Err(usage("--workers must be >= 1".into()));
    }
    match cli.cmd {
        Cmd::BuildGraph { data, k, normalize, out } => {
            let data = st.path("data", data)?;
            let k = st.get("k", k, 10usize)?;
            let normalize = st.flag("normalize", normalize)?;
            let out = st.path("out", out)?;
            st.emit("build-graph");
            let ps = load_dataset(&data, normalize)?;
            let g = build_knn_graph(&ps, k)?;
            g.save(&out)?;
            eprintln!("wrote {} (n={}, k={})", out.display(), g.n(), g.k());
        }
        Cmd::Partition { graph, bins, eta, seed, refine_iters, out } => {
            let graph = st.path("graph", graph)?;
            let bins = st.get("bins", bins, 16usize)?;
            let eta = parse_eta(&st.get("eta", eta, "0.05".to_string())?)?;
            let seed = st.get("seed", seed, 42u64)?;
            let refine_iters = st.get("refine_iters", refine_iters, 2000usize)?;
            let out = st.path("out", out)?;
            st.emit("partition");
            need(&graph)?;
            let g = KnnGraph::load(&graph)?;
            let part = partition_graph(&g, bins, eta, seed, refine_iters)?;
            let stats = cut_stats(&g, &part);
            part.save(&out)?;
            eprintln!(
                "wrote {} (n={}, bins={}, cut_fraction={})",
                out.display(),
                part.n(),
                part.m(),
                stats.cut_fraction_directed
            );
        }
        Cmd::Train {
            data, normalize, graph, partition, model_kind, s,
            blocks, hidden, dropout, epochs, lr, decay, decay_interval, batch_size, seed, out,
        } => {
            let data = st.path("data", data)?;
            let normalize = st.flag("normalize", normalize)?;
            let graph = st.path("graph", graph)?;
            let partition = st.path("partition", partition)?;
            let kind_name = st.get("model_kind", model_kind, "mlp".to_string())?;
            let kind = match kind_name.as_str() {
                "regression" => ClassifierKind::SoftmaxRegression,
                "mlp" => ClassifierKind::Mlp,
                other => return Err(usage(format!("unknown model kind {:?}", other))),
            };
            let s_val = st.get("s", s, 15usize)?;
            let defaults = MlpConfig::top_level();
            let cfg = MlpConfig {
                blocks: st.get("blocks", blocks, defaults.blocks)?,
                hidden: st.get("hidden", hidden, defaults.hidden)?,
                dropout: st.get("dropout", dropout, defaults.dropout)?,
                epochs: st.get("epochs", epochs, defaults.epochs)?,
                base_lr: st.get("lr", lr, defaults.base_lr)?,
                decay: st.get("decay", decay, defaults.decay)?,
                decay_interval: st.get("decay_interval", decay_interval, defaults.decay_interval)?,
                batch_size: st.get("batch_size", batch_size, defaults.batch_size)?,
                seed: st.get("seed", seed, 42u64)?,
            };
            let out = st.path("out", out)?;
            st.emit("train");
            let ps = load_dataset(&data, normalize)?;
            need(&graph)?;
            let g = KnnGraph::load(&graph)?;
            need(&partition)?;
            let part = Partition::load(&partition)?;
            let labels = match kind {
                ClassifierKind::SoftmaxRegression => {
                    if s_val != 1 {
                        log::warn!("regression ignores S={} and uses one-hot labels", s_val);
                    }
                    SoftLabelSet::one_hot(&part)
                }
                ClassifierKind::Mlp => make_soft_labels(&g, &part, s_val)?,
            };
            let model = train(&ps, &labels, kind, &cfg)?;
            model.save(&out)?;
            eprintln!("wrote {} (d={}, bins={})", out.display(), model.d(), model.m());
        }
        Cmd::BuildIndex {
            data, normalize, k, levels, eta, s, seed, refine_iters,
            blocks, hidden, lower_blocks, lower_hidden,
            dropout, epochs, lr, decay, decay_interval, batch_size, out,
        } => {
            let data = st.path("data", data)?;
            let normalize = st.flag("normalize", normalize)?;
            let k = st.get("k", k, 10usize)?;
            let levels = parse_levels(&st.get("levels", levels, "16:mlp".to_string())?)?;
            let eta = parse_eta(&st.get("eta", eta, "0.05".to_string())?)?;
            let s = st.get("s", s, 15usize)?;
            let seed = st.get("seed", seed, 42u64)?;
            let refine_iters = st.get("refine_iters", refine_iters, 2000usize)?;
            let top_defaults = MlpConfig::top_level();
            let lower_defaults = MlpConfig::second_level();
            let shared = |st: &mut Settings| -> Result<MlpConfig, CliError> {
                Ok(MlpConfig {
                    dropout: st.get("dropout", dropout, top_defaults.dropout)?,
                    epochs: st.get("epochs", epochs, top_defaults.epochs)?,
                    base_lr: st.get("lr", lr, top_defaults.base_lr)?,
                    decay: st.get("decay", decay, top_defaults.decay)?,
                    decay_interval: st
                        .get("decay_interval", decay_interval, top_defaults.decay_interval)?,
                    batch_size: st.get("batch_size", batch_size, top_defaults.batch_size)?,
                    seed,
                    ..top_defaults.clone()
                })
            };
            let mut top_cfg = MlpConfig {
                blocks: st.get("blocks", blocks, top_defaults.blocks)?,
                hidden: st.get("hidden", hidden, top_defaults.hidden)?,
                ..top_defaults.clone()
            };
            let mut lower_cfg = MlpConfig {
                blocks: st.get("lower_blocks", lower_blocks, lower_defaults.blocks)?,
                hidden: st.get("lower_hidden", lower_hidden, lower_defaults.hidden)?,
                ..lower_defaults.clone()
            };
            let opt = shared(&mut st)?;
            top_cfg = MlpConfig { blocks: top_cfg.blocks, hidden: top_cfg.hidden, ..opt.clone() };
            lower_cfg = MlpConfig { blocks: lower_cfg.blocks, hidden: lower_cfg.hidden, ..opt };
            let out = st.path("out", out)?;
            st.emit("build-index");
            let ps = load_dataset(&data, normalize)?;
            let params = BuildParams {
                k,
                levels,
                eta,
                s,
                seed,
                refine_iters,
                top_cfg,
                lower_cfg,
            };
            let tree = build_index(&ps, &params)?;
            let idx = AnyIndex::Tree(tree);
            idx.save(&out)?;
            eprintln!("wrote {} (n={})", out.display(), idx.n());
        }
        Cmd::Query { index, data, normalize, queries, k, probes, out } => {
            let index = st.path("index", index)?;
            let data = st.path("data", data)?;
            let normalize = st.flag("normalize", normalize)?;
            let queries = st.path("queries", queries)?;
            let k = st.get("k", k, 10usize)?;
            let probes_raw = st.get("probes", probes, "1".to_string())?;
            let out = st.path("out", out)?;
            st.emit("query");
            need(&index)?;
            let idx = AnyIndex::load(&index)?;
            let ps = load_dataset(&data, normalize)?;
            let qs = load_queries(&queries, normalize)?;
            let settings = parse_probes(&idx, &probes_raw)?;
            let [setting] = settings.as_slice() else {
                return Err(usage("query takes exactly one probe setting".into()));
            };
            let mut rows = Vec::with_capacity(qs.n() * k);
            let mut short = 0usize;
            for q in 0..qs.n() {
                let res = idx.probe(qs.row(q), setting)?;
                let ids = rerank(&ps, qs.row(q), &res.candidates, k);
                if ids.len() < k {
                    short += 1;
                }
                rows.extend(ids.iter().map(|&p| p as i32));
                rows.extend(std::iter::repeat(-1).take(k - ids.len()));
            }
            save_ivecs(&out, &rows, k)?;
            eprintln!("wrote {} (nq={}, short={})", out.display(), qs.n(), short);
        }
        Cmd::Eval { index, queries, gt, normalize, k, probes, method, exclude_self, timing } => {
            let index = st.path("index", index)?;
            let queries = st.path("queries", queries)?;
            let gt_path = st.path("gt", gt)?;
            let normalize = st.flag("normalize", normalize)?;
            let k = st.get("k", k, 10usize)?;
            let probes_raw = st.get("probes", probes, "1,2,4,8".to_string())?;
            let exclude_self = st.flag("exclude_self", exclude_self)?;
            let timing = st.flag("timing", timing)?;
            need(&index)?;
            let idx = AnyIndex::load(&index)?;
            let method = st.get("method", method, method_label(&idx).to_string())?;
            st.emit("eval");
            let qs = load_queries(&queries, normalize)?;
            need(&gt_path)?;
            let gt = load_ground_truth(&gt_path, idx.n())?;
            let settings = parse_probes(&idx, &probes_raw)?;
            let opts = SweepOptions {
                exclude_self,
                measure_time: timing,
            };
            let records = sweep(&idx, &method, &qs, &gt, k, &settings, &opts)?;
            let mut stdout = std::io::stdout().lock();
            write_csv(&mut stdout, &records)?;
            stdout.flush()?;
        }
        Cmd::Baseline { data, normalize, method, bins, depth, bits, iters, seed, out } => {
            let data = st.path("data", data)?;
            let normalize = st.flag("normalize", normalize)?;
            let method = st.require("method", method)?;
            let seed = st.get("seed", seed, 42u64)?;
            let rule = match method.as_str() {
                "pca-tree" => Some(SplitRule::Pca),
                "rp-tree" => Some(SplitRule::Rp),
                "2means-tree" => Some(SplitRule::TwoMeans),
                "reg-tree" => Some(SplitRule::Regression),
                "kmeans" | "lsh" => None,
                other => return Err(usage(format!("unknown baseline method {:?}", other))),
            };
            enum Params {
                KMeans { bins: usize, iters: usize },
                Tree { rule: SplitRule, depth: usize },
                Lsh { bits: usize },
            }
            let params = match (method.as_str(), rule) {
                ("kmeans", _) => Params::KMeans {
                    bins: st.get("bins", bins, 16usize)?,
                    iters: st.get("iters", iters, 25usize)?,
                },
                ("lsh", _) => Params::Lsh {
                    bits: st.get("bits", bits, 8usize)?,
                },
                (_, Some(rule)) => Params::Tree {
                    rule,
                    depth: st.get("depth", depth, 4usize)?,
                },
                _ => unreachable!(),
            };
            let out = st.path("out", out)?;
            st.emit("baseline");
            let ps = load_dataset(&data, normalize)?;
            let idx = match params {
                Params::KMeans { bins, iters } => {
                    AnyIndex::KMeans(build_kmeans_index(&ps, bins, seed, iters)?)
                }
                Params::Tree { rule, depth } => {
                    AnyIndex::HTree(build_hyperplane_index(&ps, depth, rule, seed)?)
                }
                Params::Lsh { bits } => AnyIndex::Lsh(build_lsh_index(&ps, bits, seed)?),
            };
            idx.save(&out)?;
            eprintln!("wrote {} ({}, n={})", out.display(), method_label(&idx), idx.n());
        }
        Cmd::SpectralCheck { data, normalize, k } => {
            let data = st.path("data", data)?;
            let normalize = st.flag("normalize", normalize)?;
            let k = st.get("k", k, 10usize)?;
            st.emit("spectral-check");
            let ps = load_dataset(&data, normalize)?;
            let g = build_knn_graph(&ps, k)?;
            let res = verify_theorem(&ps, &g)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "coordinate,threshold,lhs,bound,p1_size,p2_size")?;
            writeln!(
                stdout,
                "{},{},{},{},{},{}",
                res.coordinate,
                res.threshold + res.offset,
                res.lhs,
                res.bound,
                res.p1.len(),
                res.p2.len()
            )?;
            stdout.flush()?;
        }
    }
    Ok(())
}
