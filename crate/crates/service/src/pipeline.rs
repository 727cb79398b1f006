//! Staged pipeline: ingest, pool, pairs, folds, train, specialize, retrieve,
//! baseline, evaluate, overlap, serve.
//!
//! Every stage reads its inputs from the run directory and writes its outputs
//! there. The manifest records content hashes, so a rerun skips a stage whose
//! parameters, inputs and outputs are unchanged and recomputes everything
//! downstream of a change.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aspectsim::baseline::{
    build_pair_dataset, filter_size_sweep, rank_seeds, train_pairwise, PairScorer, PairwiseModel,
};
use aspectsim::corpus::ingest_path;
use aspectsim::embedding::{average_token_embeddings, load_embeddings, TokenVectorTable};
use aspectsim::evaluation::{
    classification_report, evaluate_method, overlap, MetricsReport, OverlapReport,
};
use aspectsim::ground_truth::{
    generate_pairs, make_folds, read_pairs, split_pairs, write_pairs, GroundTruthConfig,
    PairSample, RelevanceIndex,
};
use aspectsim::retrieval::{build_index, read_results, write_results};
use aspectsim::specializer::{apply_specializer, train_specializer, SpecializerConfig};
use aspectsim::{
    AspectId, Corpus, EmbeddingMatrix, FoldAssignment, LossKind, RetrievalResult, SpecializerModel,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::info;

use crate::config::PipelineConfig;
use crate::manifest::{file_sha256, sha256_hex, Manifest, StageRecord, StageStatus};
use crate::PipelineError;

pub const STAGES: [&str; 11] = [
    "ingest",
    "pool",
    "pairs",
    "folds",
    "train",
    "specialize",
    "retrieve",
    "baseline",
    "evaluate",
    "overlap",
    "serve",
];

pub const CORPUS: &str = "corpus/corpus.jsonl";
pub const GENERIC_VECTORS: &str = "vectors/generic.aemb";
pub const FOLDS: &str = "folds.tsv";
pub const METRICS_CSV: &str = "reports/metrics.csv";
pub const METRICS_JSON: &str = "reports/metrics.json";
pub const METRICS_TABLE: &str = "reports/metrics.txt";
pub const OVERLAP_CSV: &str = "reports/overlap.csv";
pub const BASELINE_SWEEP: &str = "reports/baseline_sweep.csv";
pub const SERVE_FILE: &str = "serve.json";

pub fn pairs_path(aspect: &AspectId) -> String {
    format!("pairs/{aspect}.tsv")
}

pub fn model_path(aspect: &AspectId, loss: LossKind, fold: usize) -> String {
    format!("models/{aspect}.{loss}.fold{fold}.aspm")
}

pub fn specialized_path(aspect: &AspectId, loss: LossKind, fold: usize) -> String {
    format!("vectors/{aspect}.{loss}.fold{fold}.aemb")
}

pub fn generic_results_path(fold: usize) -> String {
    format!("results/generic.fold{fold}.tsv")
}

pub fn specialized_results_path(aspect: &AspectId, loss: LossKind, fold: usize) -> String {
    format!("results/{aspect}.{loss}.fold{fold}.tsv")
}

pub fn pairwise_model_path(fold: usize) -> String {
    format!("models/pairwise.fold{fold}.apwm")
}

pub fn pairwise_results_path(aspect: &AspectId, fold: usize) -> String {
    format!("results/pairwise.{aspect}.fold{fold}.tsv")
}

pub fn classification_path(fold: usize) -> String {
    format!("reports/classification.fold{fold}.txt")
}

pub const PAIRWISE_TAG: &str = "pairwise";

/// Method tag of a specialized space.
pub fn specialized_tag(generic: &str, loss: LossKind) -> String {
    format!("{generic}+{loss}")
}

/// What the service loads from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServePlan {
    pub corpus: String,
    pub generic: ServeSpace,
    /// Models are those of the first evaluated fold.
    pub fold: usize,
    /// In configured order.
    pub aspects: Vec<AspectSpaces>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeSpace {
    pub method: String,
    pub vectors: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectSpaces {
    pub aspect: AspectId,
    /// Method with the best mean MAP at the table cut-off.
    pub default: String,
    pub spaces: Vec<ServeSpace>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub reused: Vec<String>,
}

struct StageOutput {
    outputs: Vec<String>,
    summary: Value,
}

impl StageOutput {
    fn new(outputs: Vec<String>, summary: Value) -> Self {
        StageOutput { outputs, summary }
    }
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    run_dir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn create(&self, rel: &str) -> Result<BufWriter<File>, PipelineError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    }

    fn open(&self, rel: &str) -> Result<BufReader<File>, PipelineError> {
        Ok(BufReader::new(File::open(self.path(rel))?))
    }

    fn corpus(&self) -> Result<Corpus, PipelineError> {
        Ok(ingest_path(self.path(CORPUS), &self.config.aspects)?)
    }

    fn generic(&self) -> Result<EmbeddingMatrix, PipelineError> {
        let (m, _) = load_embeddings(
            self.path(GENERIC_VECTORS),
            &self.config.generic.method,
            None,
        )?;
        Ok(m)
    }

    fn folds(&self) -> Result<FoldAssignment, PipelineError> {
        Ok(FoldAssignment::read_tsv(self.open(FOLDS)?)?)
    }

    fn pairs(&self, aspect: &AspectId) -> Result<Vec<PairSample>, PipelineError> {
        Ok(read_pairs(self.open(&pairs_path(aspect))?)?)
    }

    fn relevance(
        &self,
        corpus: &Corpus,
        aspect: &AspectId,
    ) -> Result<RelevanceIndex, PipelineError> {
        Ok(RelevanceIndex::build(
            corpus,
            aspect,
            self.config.max_label_size,
        )?)
    }

    fn results(
        &self,
        rel: &str,
        method: &str,
        aspect: Option<&AspectId>,
    ) -> Result<BTreeMap<String, RetrievalResult>, PipelineError> {
        Ok(read_results(
            self.open(rel)?,
            method,
            aspect.cloned(),
            self.config.depth(),
        )?)
    }

    fn write_results(
        &self,
        rel: &str,
        results: &BTreeMap<String, RetrievalResult>,
    ) -> Result<(), PipelineError> {
        let mut out = self.create(rel)?;
        write_results(&mut out, results.values())?;
        out.flush()?;
        Ok(())
    }

    fn specializer_config(&self, loss: LossKind) -> SpecializerConfig {
        SpecializerConfig {
            loss_kind: loss,
            seed: self.config.seed,
            ..self.config.specializer.clone()
        }
    }

    fn seeds(&self, folds: &FoldAssignment, fold: usize, vectors: &EmbeddingMatrix) -> Vec<String> {
        folds
            .test_ids(fold)
            .into_iter()
            .filter(|id| vectors.position(id).is_some())
            .map(String::from)
            .collect()
    }

    fn depth(&self, vectors: &EmbeddingMatrix) -> usize {
        self.config
            .depth()
            .min(vectors.len().saturating_sub(1))
            .max(1)
    }
}

/// The config with external paths reduced to file names, hashed.
fn config_hash(config: &PipelineConfig) -> String {
    fn name(p: &Path) -> PathBuf {
        PathBuf::from(p.file_name().unwrap_or_default())
    }
    let mut c = config.clone();
    c.corpus = name(&c.corpus);
    c.generic.tokens = c.generic.tokens.as_deref().map(name);
    c.generic.vectors = c.generic.vectors.as_deref().map(name);
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

/// Runs (or resumes) the pipeline in `run_dir`. With `force` every stage is
/// recomputed.
pub fn run_pipeline(
    config: &PipelineConfig,
    run_dir: &Path,
    force: bool,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(run_dir)?;
    let previous = if force {
        None
    } else {
        Manifest::load(run_dir)?
    };
    let mut runner = Runner {
        ctx: Ctx { config, run_dir },
        manifest: Manifest::new(config_hash(config), config.seed),
        previous,
        summary: RunSummary::default(),
    };
    runner.run_all()?;
    Ok(runner.summary)
}

struct Runner<'a> {
    ctx: Ctx<'a>,
    manifest: Manifest,
    previous: Option<Manifest>,
    summary: RunSummary,
}

type StageFn = fn(&Ctx) -> Result<StageOutput, PipelineError>;

impl Runner<'_> {
    fn run_all(&mut self) -> Result<(), PipelineError> {
        let config = self.ctx.config;
        let external = |label: &str, path: &Path| (format!("input:{label}"), path.to_path_buf());
        let mut pool_inputs = Vec::new();
        if let Some(tokens) = &config.generic.tokens {
            pool_inputs.push(external("tokens", tokens));
        }
        if let Some(vectors) = &config.generic.vectors {
            pool_inputs.push(external("vectors", vectors));
        }
        let corpus_input = vec![external("corpus", &config.corpus)];
        self.stage(
            "ingest",
            json!({ "aspects": config.aspects }),
            corpus_input,
            &[],
            ingest,
        )?;
        self.stage(
            "pool",
            json!({ "method": config.generic.method }),
            pool_inputs,
            &["ingest"],
            pool,
        )?;
        let gt = json!({ "max_label_size": config.max_label_size, "neg_ratio": config.neg_ratio, "seed": config.seed });
        self.stage("pairs", gt, vec![], &["ingest"], pairs)?;
        let fold_params = json!({ "folds": config.folds, "seed": config.seed });
        self.stage("folds", fold_params, vec![], &["ingest"], folds)?;
        let train_params = json!({
            "specializer": config.specializer,
            "losses": config.losses,
            "eval_folds": config.test_folds(),
            "seed": config.seed,
        });
        self.stage(
            "train",
            train_params,
            vec![],
            &["pool", "pairs", "folds"],
            train,
        )?;
        self.stage(
            "specialize",
            json!({}),
            vec![],
            &["pool", "train"],
            specialize,
        )?;
        let depth = json!({ "depth": config.depth() });
        self.stage(
            "retrieve",
            depth,
            vec![],
            &["pool", "folds", "specialize"],
            retrieve,
        )?;
        let baseline_params = json!({
            "baseline": config.baseline,
            "seed": config.seed,
            "eval_folds": config.test_folds(),
            "depth": config.depth(),
            "table_k": config.table_k,
            "max_label_size": config.max_label_size,
        });
        self.stage(
            "baseline",
            baseline_params,
            vec![],
            &["ingest", "pool", "pairs", "folds"],
            baseline,
        )?;
        let eval_params = json!({ "ks": config.ks, "table_k": config.table_k, "max_label_size": config.max_label_size });
        self.stage(
            "evaluate",
            eval_params,
            vec![],
            &["ingest", "retrieve", "baseline"],
            evaluate,
        )?;
        self.stage(
            "overlap",
            json!({ "k": config.overlap_k }),
            vec![],
            &["retrieve"],
            overlap_stage,
        )?;
        let serve_params = json!({ "table_k": config.table_k });
        self.stage(
            "serve",
            serve_params,
            vec![],
            &["ingest", "pool", "specialize", "evaluate"],
            serve_plan,
        )?;
        self.manifest.complete = true;
        self.manifest.save(self.ctx.run_dir)
    }

    /// Inputs of a stage: its external files plus every output of the stages
    /// it depends on.
    fn input_hashes(
        &self,
        external: &[(String, PathBuf)],
        deps: &[&str],
    ) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut inputs = BTreeMap::new();
        for (label, path) in external {
            inputs.insert(label.clone(), file_sha256(path)?);
        }
        for dep in deps {
            let record = self.manifest.stage(dep).expect("dependencies run first");
            for (path, hash) in &record.outputs {
                inputs.insert(path.clone(), hash.clone());
            }
        }
        Ok(inputs)
    }

    fn reusable(
        &self,
        name: &str,
        params: &str,
        inputs: &BTreeMap<String, String>,
    ) -> Option<StageRecord> {
        let old = self.previous.as_ref()?.stage(name)?;
        if old.status != StageStatus::Completed
            || old.params_sha256 != params
            || &old.inputs != inputs
        {
            return None;
        }
        let intact = old
            .outputs
            .iter()
            .all(|(rel, hash)| file_sha256(&self.ctx.path(rel)).is_ok_and(|h| &h == hash));
        intact.then(|| old.clone())
    }

    fn stage(
        &mut self,
        name: &str,
        params: Value,
        external: Vec<(String, PathBuf)>,
        deps: &[&str],
        body: StageFn,
    ) -> Result<(), PipelineError> {
        let params = sha256_hex(params.to_string().as_bytes());
        let inputs = match self.input_hashes(&external, deps) {
            Ok(inputs) => {
                if let Some(record) = self.reusable(name, &params, &inputs) {
                    info!(stage = name, "unchanged, reusing outputs");
                    self.manifest.record(record);
                    self.summary.reused.push(name.to_string());
                    return Ok(());
                }
                Ok(inputs)
            }
            Err(e) => Err(e),
        };
        info!(stage = name, "running");
        let result = inputs.and_then(|inputs| {
            let out = body(&self.ctx)?;
            Ok((inputs, self.hash_outputs(out)?))
        });
        match result {
            Ok((inputs, (outputs, summary))) => {
                self.manifest.record(StageRecord {
                    name: name.to_string(),
                    status: StageStatus::Completed,
                    params_sha256: params,
                    inputs,
                    outputs,
                    summary,
                    error: None,
                });
                self.manifest.save(self.ctx.run_dir)?;
                self.summary.executed.push(name.to_string());
                Ok(())
            }
            Err(e) => {
                self.manifest.record(StageRecord {
                    name: name.to_string(),
                    status: StageStatus::Failed,
                    params_sha256: params,
                    inputs: BTreeMap::new(),
                    outputs: BTreeMap::new(),
                    summary: Value::Null,
                    error: Some(e.to_string()),
                });
                self.manifest.save(self.ctx.run_dir)?;
                Err(PipelineError::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn hash_outputs(
        &self,
        out: StageOutput,
    ) -> Result<(BTreeMap<String, String>, Value), PipelineError> {
        let mut hashes = BTreeMap::new();
        for rel in out.outputs {
            let hash = file_sha256(&self.ctx.path(&rel))?;
            hashes.insert(rel, hash);
        }
        Ok((hashes, out.summary))
    }
}

fn ingest(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let corpus = ingest_path(&ctx.config.corpus, &ctx.config.aspects)?;
    let target = ctx.path(CORPUS);
    std::fs::create_dir_all(target.parent().expect("corpus dir"))?;
    let written = corpus.save(&target)?;
    let outputs = written
        .iter()
        .map(|p| relative(ctx.run_dir, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stats = serde_json::Map::new();
    for aspect in corpus.aspects() {
        stats.insert(
            aspect.to_string(),
            serde_json::to_value(corpus.label_stats(aspect)?).expect("stats"),
        );
    }
    Ok(StageOutput::new(
        outputs,
        json!({ "papers": corpus.len(), "labels": stats }),
    ))
}

fn relative(base: &Path, path: &Path) -> Result<String, PipelineError> {
    let rel = path.strip_prefix(base).map_err(|_| {
        PipelineError::Manifest(format!("{} is outside the run directory", path.display()))
    })?;
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

fn pool(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let corpus = ctx.corpus()?;
    let method = &ctx.config.generic.method;
    let (matrix, summary) = if let Some(tokens) = &ctx.config.generic.tokens {
        let table = TokenVectorTable::load(tokens)?;
        let pooled = average_token_embeddings(&corpus, &table)?;
        let summary =
            json!({ "rows": pooled.matrix.len(), "without_known_tokens": pooled.omitted.len() });
        (pooled.matrix, summary)
    } else {
        let source = ctx
            .config
            .generic
            .vectors
            .as_ref()
            .expect("validated source");
        let ids: BTreeSet<String> = corpus.papers().iter().map(|p| p.paper_id.clone()).collect();
        let (loaded, coverage) = load_embeddings(source, method, Some(&ids))?;
        let coverage = coverage.expect("coverage requested");
        // Keep corpus order and drop vectors of unknown papers.
        let mut matrix = EmbeddingMatrix::new(method.clone(), loaded.dim())?;
        for paper in corpus.papers() {
            if let Some(row) = loaded.get(&paper.paper_id) {
                matrix.push(paper.paper_id.clone(), row)?;
            }
        }
        let summary = json!({
            "rows": matrix.len(),
            "missing": coverage.missing.len(),
            "extra": coverage.extra.len(),
        });
        (matrix, summary)
    };
    if matrix.is_empty() {
        return Err(PipelineError::Config(
            "no paper has a generic vector".into(),
        ));
    }
    let mut out = ctx.create(GENERIC_VECTORS)?;
    matrix
        .with_method_tag(method.clone())
        .write_binary(&mut out)?;
    out.flush()?;
    Ok(StageOutput::new(vec![GENERIC_VECTORS.into()], summary))
}

fn pairs(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let corpus = ctx.corpus()?;
    let config = GroundTruthConfig {
        max_label_size: ctx.config.max_label_size,
        neg_ratio: ctx.config.neg_ratio,
        rng_seed: ctx.config.seed,
    };
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    for aspect in &ctx.config.aspects {
        let gt = generate_pairs(&corpus, aspect, &config)?;
        let rel = pairs_path(aspect);
        let mut out = ctx.create(&rel)?;
        write_pairs(&mut out, gt.all_pairs())?;
        out.flush()?;
        summary.insert(
            aspect.to_string(),
            json!({ "positives": gt.positives.len(), "negatives": gt.negatives.len() }),
        );
        outputs.push(rel);
    }
    Ok(StageOutput::new(outputs, Value::Object(summary)))
}

fn folds(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let corpus = ctx.corpus()?;
    let folds = make_folds(
        corpus.papers().iter().map(|p| p.paper_id.clone()),
        ctx.config.folds,
        ctx.config.seed,
    )?;
    let mut out = ctx.create(FOLDS)?;
    folds.write_tsv(&mut out)?;
    out.flush()?;
    Ok(StageOutput::new(
        vec![FOLDS.into()],
        json!({ "folds": ctx.config.folds, "papers": folds.len() }),
    ))
}

fn train(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let generic = ctx.generic()?;
    let folds = ctx.folds()?;
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for aspect in &ctx.config.aspects {
        let pairs = ctx.pairs(aspect)?;
        for &fold in &ctx.config.test_folds() {
            let split = split_pairs(&pairs, &folds, fold)?;
            for &loss in &ctx.config.losses {
                let (model, report) =
                    train_specializer(&generic, &split.train, &ctx.specializer_config(loss))?;
                let rel = model_path(aspect, loss, fold);
                let mut out = ctx.create(&rel)?;
                model.write(&mut out)?;
                out.flush()?;
                info!(%aspect, %loss, fold, initial = report.initial_loss, fin = report.final_loss, "trained");
                summary.push(json!({
                    "aspect": aspect,
                    "loss": loss,
                    "fold": fold,
                    "train_pairs": split.train.len(),
                    "dropped_pairs": split.dropped,
                    "initial_loss": report.initial_loss,
                    "final_loss": report.final_loss,
                    "steps": report.steps,
                }));
                outputs.push(rel);
            }
        }
    }
    Ok(StageOutput::new(outputs, Value::Array(summary)))
}

fn specialize(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let generic = ctx.generic()?;
    let mut outputs = Vec::new();
    for aspect in &ctx.config.aspects {
        for &fold in &ctx.config.test_folds() {
            for &loss in &ctx.config.losses {
                let model = SpecializerModel::load(&ctx.path(&model_path(aspect, loss, fold)))?;
                let specialized = apply_specializer(&model, &generic)?;
                let rel = specialized_path(aspect, loss, fold);
                let mut out = ctx.create(&rel)?;
                specialized.write_binary(&mut out)?;
                out.flush()?;
                outputs.push(rel);
            }
        }
    }
    Ok(StageOutput::new(outputs, Value::Null))
}

fn retrieve(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let generic = ctx.generic()?;
    let folds = ctx.folds()?;
    let depth = ctx.depth(&generic);
    let generic_index = build_index(&generic)?;
    let mut outputs = Vec::new();
    for &fold in &ctx.config.test_folds() {
        let seeds = ctx.seeds(&folds, fold, &generic);
        let results = generic_index.batch_knn(seeds.iter().map(String::as_str), depth)?;
        let rel = generic_results_path(fold);
        ctx.write_results(&rel, &results)?;
        outputs.push(rel);
        for aspect in &ctx.config.aspects {
            for &loss in &ctx.config.losses {
                let (vectors, _) =
                    load_embeddings(ctx.path(&specialized_path(aspect, loss, fold)), "s", None)?;
                let index = build_index(&vectors)?;
                let results = index.batch_knn(seeds.iter().map(String::as_str), depth)?;
                let rel = specialized_results_path(aspect, loss, fold);
                ctx.write_results(&rel, &results)?;
                outputs.push(rel);
            }
        }
    }
    Ok(StageOutput::new(outputs, json!({ "depth": depth })))
}

fn baseline(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let settings = &ctx.config.baseline;
    if !settings.enabled {
        return Ok(StageOutput::new(vec![], json!({ "enabled": false })));
    }
    let corpus = ctx.corpus()?;
    let generic = ctx.generic()?;
    let index = build_index(&generic)?;
    let folds = ctx.folds()?;
    let aspects = &ctx.config.aspects;
    let relevance: Vec<RelevanceIndex> = aspects
        .iter()
        .map(|a| ctx.relevance(&corpus, a))
        .collect::<Result<_, _>>()?;
    let relevance_refs: Vec<&RelevanceIndex> = relevance.iter().collect();
    let pairs: Vec<Vec<PairSample>> = aspects
        .iter()
        .map(|a| ctx.pairs(a))
        .collect::<Result<_, _>>()?;
    let depth = ctx.depth(&generic);
    let filter_n = settings.filter_n.min(generic.len() - 1);
    let sweep_ns: Vec<usize> = settings
        .sweep_ns
        .iter()
        .copied()
        .filter(|&n| n > 0 && n < generic.len())
        .collect();

    let mut outputs = Vec::new();
    let mut sweep_csv =
        String::from("method,aspect,fold,n,k,precision,recall,mrr,map,seeds,skipped\n");
    let mut summary = Vec::new();
    for &fold in &ctx.config.test_folds() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for p in &pairs {
            let split = split_pairs(p, &folds, fold)?;
            train.extend(split.train);
            test.extend(split.test);
        }
        let data = build_pair_dataset(&train, &relevance_refs, &index, true);
        let config = aspectsim::baseline::PairwiseConfig {
            seed: ctx.config.seed,
            ..settings.pairwise.clone()
        };
        let (model, report) = train_pairwise(&data.features, &data.gold, aspects, &config)?;
        let rel = pairwise_model_path(fold);
        let mut out = ctx.create(&rel)?;
        model.write(&mut out)?;
        out.flush()?;
        outputs.push(rel);

        let seeds = ctx.seeds(&folds, fold, &generic);
        let seed_refs: Vec<&str> = seeds.iter().map(String::as_str).collect();
        for (aspect, rel_index) in aspects.iter().zip(&relevance) {
            let mut results = rank_seeds(&model, &index, &seed_refs, aspect, filter_n, depth)?;
            for r in results.values_mut() {
                r.method_tag = PAIRWISE_TAG.into();
            }
            let rel = pairwise_results_path(aspect, fold);
            ctx.write_results(&rel, &results)?;
            outputs.push(rel);
            for (n, row) in filter_size_sweep(
                &model,
                &seed_refs,
                &index,
                rel_index,
                &sweep_ns,
                ctx.config.table_k,
                fold,
            )? {
                let m = row.metrics;
                sweep_csv.push_str(&format!(
                    "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                    PAIRWISE_TAG,
                    aspect,
                    fold,
                    n,
                    row.k,
                    m.precision,
                    m.recall,
                    m.mrr,
                    m.map,
                    row.seeds,
                    row.skipped
                ));
            }
        }

        let test_data = build_pair_dataset(&test, &relevance_refs, &index, false);
        let mut predictions = BTreeMap::new();
        let mut gold = BTreeMap::new();
        for ((key, feature), g) in test_data
            .keys
            .iter()
            .zip(&test_data.features)
            .zip(&test_data.gold)
        {
            predictions.insert(key.clone(), model.decide(feature)?);
            gold.insert(key.clone(), g.clone());
        }
        if !gold.is_empty() {
            let report = classification_report(model.aspects(), &predictions, &gold)?;
            let rel = classification_path(fold);
            let mut out = ctx.create(&rel)?;
            write!(out, "{report}")?;
            out.flush()?;
            outputs.push(rel);
        }
        summary.push(json!({
            "fold": fold,
            "train_examples": report.examples,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "test_pairs": gold.len(),
        }));
    }
    let mut out = ctx.create(BASELINE_SWEEP)?;
    out.write_all(sweep_csv.as_bytes())?;
    out.flush()?;
    outputs.push(BASELINE_SWEEP.into());
    Ok(StageOutput::new(outputs, Value::Array(summary)))
}

/// `(method tag, results file)` pairs evaluated for an aspect and fold.
fn methods_for(ctx: &Ctx, aspect: &AspectId, fold: usize) -> Vec<(String, String)> {
    let generic = &ctx.config.generic.method;
    let mut methods = vec![(generic.clone(), generic_results_path(fold))];
    for &loss in &ctx.config.losses {
        methods.push((
            specialized_tag(generic, loss),
            specialized_results_path(aspect, loss, fold),
        ));
    }
    if ctx.config.baseline.enabled {
        methods.push((PAIRWISE_TAG.into(), pairwise_results_path(aspect, fold)));
    }
    methods
}

fn evaluate(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let corpus = ctx.corpus()?;
    let mut report = MetricsReport::default();
    for aspect in &ctx.config.aspects {
        let relevance = ctx.relevance(&corpus, aspect)?;
        for &fold in &ctx.config.test_folds() {
            for (method, rel) in methods_for(ctx, aspect, fold) {
                let results = ctx.results(&rel, &method, Some(aspect))?;
                if results.is_empty() {
                    continue;
                }
                for &k in &ctx.config.ks {
                    report.push(evaluate_method(&results, &relevance, k, fold)?);
                }
            }
        }
    }
    let mut csv = ctx.create(METRICS_CSV)?;
    report.write_csv(&mut csv)?;
    csv.flush()?;
    let mut table = ctx.create(METRICS_TABLE)?;
    table.write_all(report.table(ctx.config.table_k).as_bytes())?;
    table.flush()?;
    let mut js = ctx.create(METRICS_JSON)?;
    serde_json::to_writer_pretty(&mut js, &report).map_err(std::io::Error::from)?;
    js.write_all(b"\n")?;
    js.flush()?;
    Ok(StageOutput::new(
        vec![
            METRICS_CSV.into(),
            METRICS_TABLE.into(),
            METRICS_JSON.into(),
        ],
        json!({ "rows": report.rows.len() }),
    ))
}

/// Results of all evaluated folds merged per method (fold seeds are disjoint).
fn merged_results(
    ctx: &Ctx,
    rels: &[String],
    method: &str,
) -> Result<BTreeMap<String, RetrievalResult>, PipelineError> {
    let mut merged = BTreeMap::new();
    for rel in rels {
        merged.extend(ctx.results(rel, method, None)?);
    }
    Ok(merged)
}

fn overlap_stage(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let generic_tag = &ctx.config.generic.method;
    let folds = ctx.config.test_folds();
    let generic_rels: Vec<String> = folds.iter().map(|&f| generic_results_path(f)).collect();
    let generic = merged_results(ctx, &generic_rels, generic_tag)?;
    let k = ctx
        .config
        .overlap_k
        .min(generic.values().map(|r| r.hits.len()).min().unwrap_or(0));
    let mut report = OverlapReport::default();
    if k > 0 {
        let mut specialized: BTreeMap<(AspectId, LossKind), BTreeMap<String, RetrievalResult>> =
            BTreeMap::new();
        for aspect in &ctx.config.aspects {
            for &loss in &ctx.config.losses {
                let rels: Vec<String> = folds
                    .iter()
                    .map(|&f| specialized_results_path(aspect, loss, f))
                    .collect();
                let results = merged_results(ctx, &rels, &specialized_tag(generic_tag, loss))?;
                report.push(aspect.as_str(), overlap(&generic, &results, k)?);
                specialized.insert((aspect.clone(), loss), results);
            }
        }
        // Cross-aspect agreement of the same objective.
        for &loss in &ctx.config.losses {
            let aspects = &ctx.config.aspects;
            for (i, a) in aspects.iter().enumerate() {
                for b in &aspects[i + 1..] {
                    let mut entry = overlap(
                        &specialized[&(a.clone(), loss)],
                        &specialized[&(b.clone(), loss)],
                        k,
                    )?;
                    entry.method_a = format!("{a}:{}", entry.method_a);
                    entry.method_b = format!("{b}:{}", entry.method_b);
                    report.push(format!("{a}-{b}"), entry);
                }
            }
        }
    }
    let mut out = ctx.create(OVERLAP_CSV)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    let means: Vec<Value> = report
        .entries
        .iter()
        .map(|(g, e)| json!({ "group": g, "a": e.method_a, "b": e.method_b, "overlap": e.mean }))
        .collect();
    Ok(StageOutput::new(
        vec![OVERLAP_CSV.into()],
        json!({ "k": k, "entries": means }),
    ))
}

fn serve_plan(ctx: &Ctx) -> Result<StageOutput, PipelineError> {
    let text = std::fs::read_to_string(ctx.path(METRICS_JSON))?;
    let report: MetricsReport = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Manifest(format!("{METRICS_JSON}: {e}")))?;
    let aggregates = report.aggregates();
    let generic_tag = &ctx.config.generic.method;
    let fold = ctx.config.test_folds()[0];
    let mut aspects = Vec::new();
    for aspect in &ctx.config.aspects {
        let spaces: Vec<ServeSpace> = ctx
            .config
            .losses
            .iter()
            .map(|&loss| ServeSpace {
                method: specialized_tag(generic_tag, loss),
                vectors: specialized_path(aspect, loss, fold),
            })
            .collect();
        let best = spaces
            .iter()
            .map(|s| {
                let map = aggregates
                    .iter()
                    .find(|a| {
                        &a.aspect == aspect && a.method == s.method && a.k == ctx.config.table_k
                    })
                    .map_or(f64::NEG_INFINITY, |a| a.mean.map);
                (map, &s.method)
            })
            .fold(None, |best: Option<(f64, &String)>, (map, m)| match best {
                Some((b, _)) if b >= map => best,
                _ => Some((map, m)),
            })
            .map(|(_, m)| m.clone())
            .expect("at least one loss");
        aspects.push(AspectSpaces {
            aspect: aspect.clone(),
            default: best,
            spaces,
        });
    }
    let plan = ServePlan {
        corpus: CORPUS.into(),
        generic: ServeSpace {
            method: generic_tag.clone(),
            vectors: GENERIC_VECTORS.into(),
        },
        fold,
        aspects,
    };
    let mut out = ctx.create(SERVE_FILE)?;
    serde_json::to_writer_pretty(&mut out, &plan).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(StageOutput::new(vec![SERVE_FILE.into()], Value::Null))
}

pub fn load_serve_plan(run_dir: &Path) -> Result<ServePlan, PipelineError> {
    let text = std::fs::read_to_string(run_dir.join(SERVE_FILE))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(format!("{SERVE_FILE}: {e}")))
}

/// Pairwise model of a run, for the `baseline` CLI.
pub fn load_pairwise(path: &Path) -> Result<PairwiseModel, PipelineError> {
    Ok(PairwiseModel::load(path)?)
}
