//! Command-line pipeline: `ingest`, `build-graph`, `featurize`, `run`,
//! `ablate`, `analyze` and `export`, driven by one JSON config file.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data validation error,
//! 4 numerical failure. Progress is logged to stderr as JSON lines.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    export_plot_data, pca_top2, section_pair_stats, section_vectors, welch_t_test, write_json, write_pca_csv,
    write_section_pairs_csv, write_top_unigrams_csv, AnalysisError, PairRanking,
};
use crate::experiments::{
    grid_search, permutation_test, run_repeated, split_edges, train, AggregateResult, DimGrid, ExperimentError,
    TrainConfig, TrainData, TrainReport,
};
use crate::features::{
    annotations_from_records, edge_matrix, featurize, AnnotationRecord, Annotations, CorpusTag, FeatureError,
    FeatureRecord, FeatureSet, VocabConfig, Vocabulary,
};
use crate::graph::{build_graph, graph_stats, Conflict, DyadGraph, GraphError, GraphFile, Label};
use crate::ingest::{
    harvest_category_tree, ingest, load_corpus_dir, read_xml_export, CategoryIndex, EntityRecord,
    InfoboxMilitaryConflict, IngestError, SectionedArticle,
};
use crate::manifest::{sha256_hex, RunManifest};
use crate::models::{predict, preflight, ModelConfig, ModelError, ModelInputs, ModelManifest, Variant};
use crate::par::{effective_threads, with_threads, Execution};
use crate::synthetic::{content_benchmark, structural_benchmark, ContentConfig, StructuralConfig};
use crate::tensor::{write_checkpoint, Matrix, Parameters, TensorError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "dyadgraph",
    version,
    about = "Signed dyad graphs from conflict articles and edge classifiers"
)]
pub struct Cli {
    /// JSON config with sections ingest, features, model, train, analyze.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract conflicts, entities and sections from a corpus directory or
    /// XML export.
    Ingest { corpus: Option<PathBuf> },
    /// Aggregate dyads of the ingested conflicts into graph.json.
    BuildGraph {
        #[arg(long)]
        conflicts: Option<PathBuf>,
    },
    /// Compute tf-idf vectors for entity and conflict articles.
    Featurize,
    /// Train and evaluate the configured variants.
    Run {
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Train and evaluate the ablation variants.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Section-pair distances, t-test, PCA and top unigrams.
    Analyze,
    /// Train one model and write its checkpoint and per-edge predictions.
    Export {
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ingest: IngestSection,
    pub features: FeaturesSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub analyze: AnalyzeSection,
}

/// Planted graph used instead of the pipeline outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticSource {
    Structural(StructuralConfig),
    Content(ContentConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub corpus_dir: Option<PathBuf>,
    pub xml_export: Option<PathBuf>,
    pub category_index: Option<PathBuf>,
    pub category_root: Option<String>,
    /// Unlimited when absent.
    pub category_depth: Option<usize>,
    pub synthetic: Option<SyntheticSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub vocab: VocabConfig,
    /// `annotations.jsonl` with tagged tokens per section.
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variants: Vec<String>,
    pub ablation_variants: Vec<String>,
    pub export_variant: String,
    pub node_encoder_dims: Vec<usize>,
    pub edge_encoder_dims: Vec<usize>,
    pub classifier_dims: Vec<usize>,
    pub gin_steps: usize,
    pub learn_eps: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            ablation_variants: ["D1", "S2", "S3", "S4"].map(String::from).to_vec(),
            export_variant: "C".into(),
            node_encoder_dims: m.node_encoder_dims,
            edge_encoder_dims: m.edge_encoder_dims,
            classifier_dims: m.classifier_dims,
            gin_steps: m.gin_steps,
            learn_eps: m.learn_eps,
        }
    }
}

impl ModelSection {
    fn config(&self, variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            variant,
            node_encoder_dims: self.node_encoder_dims.clone(),
            edge_encoder_dims: self.edge_encoder_dims.clone(),
            classifier_dims: self.classifier_dims.clone(),
            gin_steps: self.gin_steps,
            seed,
            learn_eps: self.learn_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub seed: u64,
    pub runs: usize,
    /// Pairs `[a, b]` compared with the paired permutation test.
    pub comparisons: Vec<[String; 2]>,
    pub permutation_resamples: usize,
    /// When present, final widths are chosen per variant by grid search.
    pub grid: Option<DimGrid>,
    pub grid_runs: usize,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 10,
            comparisons: vec![["S".into(), "D".into()]],
            permutation_resamples: 10_000,
            grid: None,
            grid_runs: 3,
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub top_n: usize,
    pub plot_k: usize,
    pub ranking: PairRanking,
    pub top_unigrams: usize,
    /// Entities to project; every entity with an article when absent.
    pub pca_entities: Option<Vec<String>>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            top_n: 1000,
            plot_k: 250,
            ranking: PairRanking::PerClass,
            top_unigrams: 10,
            pca_entities: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::Config(_) | ModelError::UnknownVariant(_) => CliError::usage(e.to_string()),
            ModelError::Tensor(TensorError::NonFinite(_)) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model(m) => m.into(),
            ExperimentError::NonFiniteLoss { .. } | ExperimentError::Tensor(TensorError::NonFinite(_)) => {
                CliError::numeric(e.to_string())
            }
            ExperimentError::Config(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::data(e.to_string())
    }
}

/// One JSON object per line on stderr.
fn log(event: &str, fields: Value) {
    let mut obj = serde_json::Map::new();
    obj.insert("event".into(), Value::String(event.into()));
    if let Value::Object(map) = fields {
        obj.extend(map);
    }
    eprintln!("{}", Value::Object(obj));
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_error(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(f);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let lines = items
        .iter()
        .map(|i| serde_json::to_string(i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_error(path, e))?;
    write_lines(path, lines)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&raw).map_err(|e| io_error(path, e))
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json(path, value).map_err(|e| io_error(path, e))
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>, CliError> {
    if names.is_empty() {
        return Err(CliError::usage("no variants requested"));
    }
    let mut out: Vec<Variant> = Vec::new();
    for n in names {
        let v: Variant = n.parse().map_err(|e: ModelError| CliError::usage(e.to_string()))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

struct Context {
    config: Config,
    config_sha256: String,
    seed: u64,
    out_dir: PathBuf,
    threads: usize,
    exec: Execution,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::start(
            command,
            self.config_sha256.clone(),
            self.seed,
            effective_threads(self.threads),
            self.exec.is_parallel(),
        )
    }

    fn finish(&self, mut m: RunManifest, inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
        RunManifest::add_files(&mut m.inputs, inputs).map_err(|e| CliError::data(e.to_string()))?;
        RunManifest::add_files(&mut m.outputs, outputs).map_err(|e| CliError::data(e.to_string()))?;
        m.finish(&self.out_dir).map_err(|e| io_error(&self.out_dir, e))
    }
}

fn load_config(path: Option<&Path>) -> Result<(Config, String), CliError> {
    match path {
        Some(p) => {
            let raw = std::fs::read(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            let cfg: Config =
                serde_json::from_slice(&raw).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            Ok((cfg, sha256_hex(&raw)))
        }
        None => {
            let cfg = Config::default();
            let canonical = serde_json::to_vec(&cfg).expect("config serializes");
            Ok((cfg, sha256_hex(&canonical)))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log("error", json!({ "code": e.code, "message": e.message }));
            e.code
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let (config, config_sha256) = load_config(cli.config.as_deref())?;
    let ctx = Context {
        seed: cli.seed.unwrap_or(config.train.seed),
        config,
        config_sha256,
        out_dir: cli.out_dir.clone(),
        threads: cli.threads,
        exec: if cli.threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    with_threads(cli.threads, move || {
        // Variant names are checked before anything is written.
        match &cli.command {
            Command::Run { variants } => {
                parse_variants(variants.as_ref().unwrap_or(&ctx.config.model.variants))?;
            }
            Command::Ablate { variants } => {
                parse_variants(variants.as_ref().unwrap_or(&ctx.config.model.ablation_variants))?;
            }
            Command::Export { variant } => {
                parse_variants(&[variant.clone().unwrap_or(ctx.config.model.export_variant.clone())])?;
            }
            _ => {}
        }
        std::fs::create_dir_all(&ctx.out_dir)
            .map_err(|e| CliError::usage(format!("{}: {e}", ctx.out_dir.display())))?;
        match cli.command {
            Command::Ingest { corpus } => cmd_ingest(&ctx, corpus),
            Command::BuildGraph { conflicts } => cmd_build_graph(&ctx, conflicts),
            Command::Featurize => cmd_featurize(&ctx),
            Command::Run { variants } => {
                let names = variants.unwrap_or(ctx.config.model.variants.clone());
                cmd_run(&ctx, &names, "run", "results.csv", "report.json", "aggregate.json")
            }
            Command::Ablate { variants } => {
                let names = variants.unwrap_or(ctx.config.model.ablation_variants.clone());
                cmd_run(
                    &ctx,
                    &names,
                    "ablate",
                    "ablation.csv",
                    "ablation_report.json",
                    "ablation_aggregate.json",
                )
            }
            Command::Analyze => cmd_analyze(&ctx),
            Command::Export { variant } => {
                cmd_export(&ctx, &variant.unwrap_or(ctx.config.model.export_variant.clone()))
            }
        }
    })
}

fn cmd_ingest(ctx: &Context, corpus: Option<PathBuf>) -> Result<(), CliError> {
    let manifest = ctx.manifest("ingest");
    let ing = &ctx.config.ingest;
    let source = corpus
        .or_else(|| ing.corpus_dir.clone())
        .or_else(|| ing.xml_export.clone())
        .ok_or_else(|| CliError::usage("no corpus given (argument, ingest.corpus_dir or ingest.xml_export)"))?;
    let loaded = if source.is_file() {
        let f = File::open(&source).map_err(|e| CliError::usage(format!("{}: {e}", source.display())))?;
        read_xml_export(BufReader::new(f))
    } else {
        load_corpus_dir(&source)
    };
    let corpus = loaded.map_err(|e| match e {
        IngestError::Io { .. } | IngestError::Index(_) => CliError::usage(e.to_string()),
        other => CliError::data(other.to_string()),
    })?;
    let restrict = match (&ing.category_index, &ing.category_root) {
        (Some(index), Some(root)) => {
            let idx: CategoryIndex = read_json(index)?;
            let depth = ing.category_depth.unwrap_or(usize::MAX);
            Some(harvest_category_tree(&idx, root, depth).map_err(|e| CliError::data(e.to_string()))?)
        }
        _ => None,
    };
    let out = ingest(&corpus, restrict.as_ref(), ctx.exec);
    for issue in &out.issues {
        log(
            "ingest_issue",
            json!({ "article": issue.article, "error": issue.error }),
        );
    }
    let paths = [
        ctx.path("conflicts.jsonl"),
        ctx.path("entities.jsonl"),
        ctx.path("sections.jsonl"),
        ctx.path("issues.jsonl"),
    ];
    write_jsonl(&paths[0], &out.conflicts)?;
    write_jsonl(&paths[1], &out.entities)?;
    write_jsonl(&paths[2], &out.sections)?;
    write_jsonl(&paths[3], &out.issues)?;
    println!(
        "{}",
        json!({ "conflicts": out.conflicts.len(), "entities": out.entities.len(), "issues": out.issues.len() })
    );
    let index = source.join("index.json");
    let inputs: Vec<&Path> = vec![if source.is_file() {
        source.as_path()
    } else {
        index.as_path()
    }];
    ctx.finish(
        manifest,
        &inputs,
        &paths.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
    )
}

fn cmd_build_graph(ctx: &Context, conflicts_path: Option<PathBuf>) -> Result<(), CliError> {
    let manifest = ctx.manifest("build-graph");
    let input = conflicts_path.unwrap_or_else(|| ctx.path("conflicts.jsonl"));
    let records: Vec<InfoboxMilitaryConflict> = read_jsonl(&input)?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.conflict_id) {
            return Err(GraphError::DuplicateConflict(r.conflict_id.to_string()).into());
        }
    }
    let mut valid = Vec::new();
    for r in &records {
        let c = Conflict::from_infobox(r);
        match c.validate() {
            Ok(()) => valid.push(c),
            Err(e) => log(
                "conflict_skipped",
                json!({ "conflict_id": c.conflict_id, "title": r.conflict_title, "error": e.to_string() }),
            ),
        }
    }
    let graph = build_graph(&valid)?;
    let stats = graph_stats(&graph);
    let graph_path = ctx.path("graph.json");
    let stats_path = ctx.path("graph_stats.json");
    write_pretty(&graph_path, &graph.to_file())?;
    write_pretty(&stats_path, &stats)?;
    println!(
        "{}",
        json!({
            "conflicts_used": valid.len(),
            "conflicts_skipped": records.len() - valid.len(),
            "nodes": stats.node_count,
            "edges": stats.edge_count,
            "ally_fraction": stats.ally_fraction,
        })
    );
    ctx.finish(manifest, &[&input], &[&graph_path, &stats_path])
}

fn cmd_featurize(ctx: &Context) -> Result<(), CliError> {
    let manifest = ctx.manifest("featurize");
    let sections_path = ctx.path("sections.jsonl");
    let conflicts_path = ctx.path("conflicts.jsonl");
    let entities_path = ctx.path("entities.jsonl");
    let articles: Vec<SectionedArticle> = read_jsonl(&sections_path)?;
    let conflicts: Vec<InfoboxMilitaryConflict> = read_jsonl(&conflicts_path)?;
    let entities: Vec<EntityRecord> = read_jsonl(&entities_path)?;
    let annotations: Annotations = match &ctx.config.features.annotations {
        Some(p) => annotations_from_records(read_jsonl::<AnnotationRecord>(p)?),
        None => Annotations::new(),
    };
    let entity_titles: BTreeSet<String> = entities.iter().filter_map(|e| e.title.clone()).collect();
    let conflict_titles: BTreeSet<String> = conflicts.iter().map(|c| c.conflict_title.clone()).collect();
    let fs = featurize(
        &articles,
        &entity_titles,
        &conflict_titles,
        &annotations,
        &ctx.config.features.vocab,
        ctx.exec,
    )?;
    let features_path = ctx.path("features.jsonl");
    let ev = ctx.path("vocab.entity.json");
    let cv = ctx.path("vocab.conflict.json");
    write_lines(&features_path, fs.records.iter().map(FeatureRecord::to_json_line))?;
    write_pretty(&ev, &fs.entity_vocab)?;
    write_pretty(&cv, &fs.conflict_vocab)?;
    println!(
        "{}",
        json!({
            "records": fs.records.len(),
            "entity_terms": fs.entity_vocab.len(),
            "conflict_terms": fs.conflict_vocab.len(),
        })
    );
    let mut inputs: Vec<&Path> = vec![&sections_path, &conflicts_path, &entities_path];
    if let Some(p) = &ctx.config.features.annotations {
        inputs.push(p);
    }
    ctx.finish(manifest, &inputs, &[&features_path, &ev, &cv])
}

fn load_feature_set(ctx: &Context) -> Result<Option<FeatureSet>, CliError> {
    let path = ctx.path("features.jsonl");
    if !path.exists() {
        return Ok(None);
    }
    let f = File::open(&path).map_err(|e| io_error(&path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io_error(&path, e))?;
        if !line.trim().is_empty() {
            records.push(FeatureRecord::from_json_line(&line)?);
        }
    }
    let entity_vocab: Vocabulary = read_json(&ctx.path("vocab.entity.json"))?;
    let conflict_vocab: Vocabulary = read_json(&ctx.path("vocab.conflict.json"))?;
    Ok(Some(FeatureSet {
        entity_vocab,
        conflict_vocab,
        records,
    }))
}

struct Dataset {
    graph: DyadGraph,
    node_x: Matrix,
    edge_x: Matrix,
    inputs: Vec<PathBuf>,
}

fn load_dataset(ctx: &Context) -> Result<Dataset, CliError> {
    if let Some(source) = &ctx.config.ingest.synthetic {
        let g = match source {
            SyntheticSource::Structural(c) => structural_benchmark(c),
            SyntheticSource::Content(c) => content_benchmark(c),
        };
        log(
            "synthetic_data",
            json!({ "nodes": g.graph.node_count(), "edges": g.graph.edge_count() }),
        );
        return Ok(Dataset {
            graph: g.graph,
            node_x: g.node_x,
            edge_x: g.edge_x,
            inputs: Vec::new(),
        });
    }
    let graph_path = ctx.path("graph.json");
    if !graph_path.exists() {
        return Err(CliError::usage(format!(
            "{} not found; run build-graph first",
            graph_path.display()
        )));
    }
    let file: GraphFile = read_json(&graph_path)?;
    let graph = DyadGraph::from_file(file)?;
    let mut inputs = vec![graph_path];
    let (node_x, edge_x) = match load_feature_set(ctx)? {
        Some(fs) => {
            let conflicts_path = ctx.path("conflicts.jsonl");
            let conflicts: Vec<InfoboxMilitaryConflict> = read_jsonl(&conflicts_path)?;
            let node_x = fs.node_matrix(&graph);
            let cv = fs.conflict_vectors(&conflicts);
            let edge_x = edge_matrix(&graph, &cv, fs.conflict_vocab.len())?;
            inputs.push(ctx.path("features.jsonl"));
            inputs.push(conflicts_path);
            (node_x, edge_x)
        }
        None => (Matrix::zeros(0, 0), Matrix::zeros(0, 0)),
    };
    Ok(Dataset {
        graph,
        node_x,
        edge_x,
        inputs,
    })
}

impl Dataset {
    fn train_data(&self) -> TrainData<'_> {
        TrainData {
            graph: &self.graph,
            node_x: &self.node_x,
            edge_x: &self.edge_x,
        }
    }

    fn inputs(&self) -> ModelInputs<'_> {
        ModelInputs {
            graph: &self.graph,
            node_x: &self.node_x,
            edge_x: &self.edge_x,
            observed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Variant,
    pub b: Variant,
    pub mean_f1_a: f64,
    pub mean_f1_b: f64,
    /// One p-value per paired run.
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantReport {
    pub config: ModelConfig,
    pub runs: Vec<TrainReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateFile {
    pub results: Vec<AggregateResult>,
    pub comparisons: Vec<Comparison>,
}

fn cmd_run(
    ctx: &Context,
    names: &[String],
    command: &str,
    table_name: &str,
    report_name: &str,
    aggregate_name: &str,
) -> Result<(), CliError> {
    let manifest = ctx.manifest(command);
    let variants = parse_variants(names)?;
    let ts = &ctx.config.train;
    let mut comparisons = Vec::new();
    for [a, b] in &ts.comparisons {
        let pair = parse_variants(&[a.clone(), b.clone()])?;
        if pair.len() == 2 && variants.contains(&pair[0]) && variants.contains(&pair[1]) {
            comparisons.push((pair[0], pair[1]));
        }
    }
    let data = load_dataset(ctx)?;
    split_edges(data.graph.edge_count(), ts.config.fractions, ctx.seed)?;
    for &v in &variants {
        preflight(&ctx.config.model.config(v, ctx.seed), &data.inputs())?;
    }
    let td = data.train_data();
    let mut results = Vec::new();
    let mut reports: BTreeMap<Variant, VariantReport> = BTreeMap::new();
    for &v in &variants {
        let mut config = ctx.config.model.config(v, ctx.seed);
        if let (Some(grid), true) = (&ts.grid, v != Variant::Maj) {
            let (points, best) = grid_search(
                &grid.configs(&config),
                &ts.config,
                &td,
                ts.grid_runs,
                ctx.seed,
                ctx.exec,
            )?;
            log(
                "grid_search",
                json!({ "variant": v.name(), "points": points.len(), "best": [best.node_encoder_dims, best.edge_encoder_dims, best.classifier_dims] }),
            );
            config = best;
        }
        let (agg, runs) = run_repeated(&config, &ts.config, &td, ts.runs, ctx.seed, ctx.exec)?;
        log(
            "variant_done",
            json!({ "variant": v.name(), "f1_mean": agg.mean, "f1_sd": agg.sd, "runs": runs.len() }),
        );
        results.push(agg);
        reports.insert(v, VariantReport { config, runs });
    }
    let mut comparison_out = Vec::new();
    for (a, b) in comparisons {
        let (ra, rb) = (&reports[&a].runs, &reports[&b].runs);
        let mut p_values = Vec::new();
        for (i, (x, y)) in ra.iter().zip(rb).enumerate() {
            let split = split_edges(data.graph.edge_count(), ts.config.fractions, x.seed)?;
            let gold: Vec<Label> = split.test.iter().map(|&e| data.graph.edge(e).label).collect();
            p_values.push(permutation_test(
                &x.test_predictions,
                &y.test_predictions,
                &gold,
                ts.permutation_resamples,
                ctx.seed.wrapping_add(i as u64),
                ts.config.f1_average,
                ctx.exec,
            ));
        }
        let mean = |r: &[TrainReport]| r.iter().map(|t| t.test_f1).sum::<f64>() / r.len() as f64;
        log(
            "comparison",
            json!({ "a": a.name(), "b": b.name(), "p_values": p_values }),
        );
        comparison_out.push(Comparison {
            a,
            b,
            mean_f1_a: mean(ra),
            mean_f1_b: mean(rb),
            p_values,
        });
    }
    let table = ctx.path(table_name);
    let mut lines = vec!["variant,f1_mean,f1_sd,runs".to_string()];
    lines.extend(
        results
            .iter()
            .map(|r| format!("{},{},{},{}", r.variant, r.mean, r.sd, r.f1.len())),
    );
    write_lines(&table, lines)?;
    let report = ctx.path(report_name);
    write_pretty(&report, &reports.values().collect::<Vec<_>>())?;
    let aggregate = ctx.path(aggregate_name);
    write_pretty(
        &aggregate,
        &AggregateFile {
            results,
            comparisons: comparison_out,
        },
    )?;
    let inputs: Vec<&Path> = data.inputs.iter().map(PathBuf::as_path).collect();
    ctx.finish(manifest, &inputs, &[&table, &report, &aggregate])
}

fn cmd_analyze(ctx: &Context) -> Result<(), CliError> {
    let manifest = ctx.manifest("analyze");
    let an = &ctx.config.analyze;
    let graph_path = ctx.path("graph.json");
    let graph = DyadGraph::from_file(read_json(&graph_path)?)?;
    let fs = load_feature_set(ctx)?.ok_or_else(|| CliError::usage("features.jsonl not found; run featurize first"))?;
    let sections = section_vectors(&fs);
    let report = section_pair_stats(&graph, &sections, an.top_n, an.ranking, ctx.exec);
    log(
        "section_pairs",
        json!({ "pairs": report.pairs.len(), "skipped_zero_vectors": report.skipped_zero }),
    );
    let pairs_path = ctx.path("section_pairs.csv");
    let plot_path = ctx.path("section_pairs_plot.csv");
    write_section_pairs_csv(&pairs_path, &report.pairs)?;
    write_section_pairs_csv(&plot_path, &export_plot_data(&report.pairs, an.plot_k))?;

    let means = |rel: Label| -> Vec<f64> {
        report
            .pairs
            .iter()
            .filter(|p| p.relation == rel)
            .map(|p| p.mean_distance)
            .collect()
    };
    let (ally, enemy) = (means(Label::Allies), means(Label::Enemies));
    let welch = match welch_t_test(&ally, &enemy) {
        Ok(w) => Some(w),
        Err(e) => {
            log("welch_skipped", json!({ "reason": e.to_string() }));
            None
        }
    };
    let avg = |xs: &[f64]| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };

    let articles = fs.article_vectors(CorpusTag::Entity);
    let names: Vec<String> = match &an.pca_entities {
        Some(list) => list
            .iter()
            .filter(|n| articles.contains_key(n.as_str()))
            .cloned()
            .collect(),
        None => graph
            .nodes()
            .iter()
            .map(|n| n.0.clone())
            .filter(|n| articles.contains_key(n.as_str()))
            .collect(),
    };
    let vectors: Vec<Vec<f64>> = names.iter().map(|n| articles[n.as_str()].to_vec()).collect();
    let pca_path = ctx.path("pca.csv");
    let explained = match pca_top2(&names, &vectors) {
        Ok(p) => {
            write_pca_csv(&pca_path, &p.projections)?;
            Some(p.explained_variance)
        }
        Err(e) => {
            log("pca_skipped", json!({ "reason": e.to_string() }));
            None
        }
    };

    let mut rows = Vec::new();
    for (vocab, tag) in [
        (&fs.entity_vocab, CorpusTag::Entity),
        (&fs.conflict_vocab, CorpusTag::Conflict),
    ] {
        for (doc, values) in fs.article_vectors(tag) {
            let mut ranked: Vec<(String, f64)> = vocab
                .terms
                .iter()
                .zip(values)
                .filter(|(_, w)| **w > 0.0)
                .map(|(t, w)| (t.clone(), *w))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            ranked.truncate(an.top_unigrams);
            rows.push((doc.to_string(), ranked));
        }
    }
    let unigram_path = ctx.path("top_unigrams.csv");
    write_top_unigrams_csv(&unigram_path, &rows)?;
    let summary_path = ctx.path("analysis.json");
    write_pretty(
        &summary_path,
        &json!({
            "skipped_zero_vectors": report.skipped_zero,
            "ally_pair_mean_distance": avg(&ally),
            "enemy_pair_mean_distance": avg(&enemy),
            "welch": welch,
            "pca_explained_variance": explained,
        }),
    )?;
    let fp = ctx.path("features.jsonl");
    ctx.finish(
        manifest,
        &[&graph_path, &fp],
        &[&pairs_path, &plot_path, &pca_path, &unigram_path, &summary_path],
    )
}

fn cmd_export(ctx: &Context, variant: &str) -> Result<(), CliError> {
    let manifest = ctx.manifest("export");
    let variant = parse_variants(&[variant.to_string()])?[0];
    let data = load_dataset(ctx)?;
    let config = ctx.config.model.config(variant, ctx.seed);
    preflight(&config, &data.inputs())?;
    let split = split_edges(data.graph.edge_count(), ctx.config.train.config.fractions, ctx.seed)?;
    let (report, params) = train(&config, &ctx.config.train.config, &data.train_data(), &split, ctx.exec)?;
    log(
        "export_trained",
        json!({ "variant": variant.name(), "test_f1": report.test_f1 }),
    );
    let all: Vec<usize> = (0..data.graph.edge_count()).collect();
    let observed = split.observed_mask(data.graph.edge_count());
    let probs = match &params {
        Some(p) => {
            let inputs = ModelInputs {
                observed: Some(&observed),
                ..data.inputs()
            };
            predict(p, &inputs, &all, ctx.exec)?
        }
        None => vec![1.0; all.len()],
    };
    let mut outputs = Vec::new();
    if let Some(p) = &params {
        let ckpt = ctx.path("model.ckpt");
        let f = File::create(&ckpt).map_err(|e| io_error(&ckpt, e))?;
        write_checkpoint(BufWriter::new(f), &p.named_tensors()).map_err(|e| io_error(&ckpt, e))?;
        outputs.push(ckpt);
    }
    let model_json = ctx.path("model.json");
    let ckpt_name = params.as_ref().map(|_| "model.ckpt".to_string());
    write_pretty(&model_json, &ModelManifest::new(&config, ckpt_name))?;
    outputs.push(model_json);
    let mut role = vec!["train"; all.len()];
    for &e in &split.validation {
        role[e] = "validation";
    }
    for &e in &split.test {
        role[e] = "test";
    }
    let label = |l: Label| if l.is_allies() { "ALLIES" } else { "ENEMIES" };
    let mut lines = vec!["edge,u,v,split,gold,probability,predicted".to_string()];
    for (e, p) in probs.iter().enumerate() {
        let edge = data.graph.edge(e);
        let pred = if *p >= ctx.config.train.config.threshold {
            Label::Allies
        } else {
            Label::Enemies
        };
        lines.push(format!(
            "{e},{},{},{},{},{p},{}",
            csv_field(&data.graph.nodes()[edge.u].0),
            csv_field(&data.graph.nodes()[edge.v].0),
            role[e],
            label(edge.label),
            label(pred)
        ));
    }
    let preds = ctx.path("predictions.csv");
    write_lines(&preds, lines)?;
    outputs.push(preds);
    let inputs: Vec<&Path> = data.inputs.iter().map(PathBuf::as_path).collect();
    ctx.finish(
        manifest,
        &inputs,
        &outputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Used by the acceptance suite and tests to check a parsed config without
/// running it.
pub fn parse_config(raw: &str) -> Result<Config, CliError> {
    serde_json::from_str(raw).map_err(|e| CliError::usage(e.to_string()))
}
