use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aspectsim::baseline::{
    build_pair_dataset, filter_size_sweep, rank_seeds, train_pairwise, PairwiseConfig,
    PairwiseModel,
};
use aspectsim::corpus::{ingest_path, DEFAULT_MAX_LABEL_SIZE};
use aspectsim::embedding::{average_token_embeddings, load_embeddings, TokenVectorTable};
use aspectsim::evaluation::{evaluate_method, overlap, MetricsReport};
use aspectsim::ground_truth::{
    generate_pairs, make_folds, read_pairs, split_pairs, write_pairs, GroundTruthConfig,
    RelevanceIndex,
};
use aspectsim::retrieval::{build_index, read_results, write_results};
use aspectsim::specializer::{apply_specializer, train_specializer, SpecializerConfig};
use aspectsim::synthetic::SyntheticConfig;
use aspectsim::{AspectId, FoldAssignment, LossKind, SpecializerModel};
use aspectsim_service::api::{router, AppState};
use aspectsim_service::config::PipelineConfig;
use aspectsim_service::fixture::{synthetic_pipeline, write_fixture};
use aspectsim_service::pipeline::run_pipeline;
use aspectsim_service::snapshot::Snapshot;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Aspect-specific paper similarity: pipeline stages, evaluation and serving.
#[derive(Parser)]
#[command(name = "aspectsim", version)]
struct Cli {
    /// Seed for every random choice (default 0). For `pipeline` it
    /// overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus, word vectors and a pipeline config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        docs: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
    },
    /// Run all stages from a config, resuming unchanged ones.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Recompute every stage.
        #[arg(long)]
        force: bool,
    },
    /// Normalize a corpus and write label vocabularies next to it.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        aspects: AspectArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average word vectors over title and abstract.
    Pool {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[command(flatten)]
        aspects: AspectArgs,
        /// Output vectors (AEMB binary).
        #[arg(long)]
        out: PathBuf,
    },
    /// Positive and negative pairs for one aspect.
    Pairs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        aspect: String,
        #[arg(long, default_value_t = DEFAULT_MAX_LABEL_SIZE)]
        max_label_size: usize,
        #[arg(long, default_value_t = 0.5)]
        neg_ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign papers to cross-validation folds.
    Folds {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a specializer on the training pairs of one fold.
    Train {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, default_value = "mnrl")]
        loss: LossKind,
        /// Hidden layer widths, comma separated (default: twice the input).
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map vectors through a trained specializer.
    Specialize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact k-NN lists for the seeds (all papers, or one fold's test papers).
    Index {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long, default_value = "vectors")]
        method: String,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, requires = "fold")]
        folds: Option<PathBuf>,
        #[arg(long, requires = "folds")]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// P/R/MRR/MAP at each cut-off for one results file.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        aspect: String,
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "method")]
        method: String,
        /// Depth the results were produced with.
        #[arg(long, default_value_t = 50)]
        depth: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_MAX_LABEL_SIZE)]
        max_label_size: usize,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Mean top-k overlap between two results files.
    Overlap {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
    },
    /// Pairwise classification baseline.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Serve a finished run over HTTP.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Static files mounted under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Train on the training pairs of all aspects for one fold.
    Train {
        #[command(flatten)]
        data: BaselineData,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the fold's test papers for one aspect.
    Rank {
        #[command(flatten)]
        data: BaselineData,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        aspect: String,
        #[arg(long, default_value_t = aspectsim::baseline::DEFAULT_FILTER_N)]
        filter_n: usize,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAP@k as a function of the candidate filter size.
    Sweep {
        #[command(flatten)]
        data: BaselineData,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        aspect: String,
        #[arg(long, value_delimiter = ',', default_value = "10,50,100,200,300")]
        filter_n: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Args)]
struct AspectArgs {
    /// Comma separated aspect names.
    #[arg(long, default_value = "task,method,dataset")]
    aspects: String,
}

impl AspectArgs {
    fn parse(&self) -> Result<Vec<AspectId>> {
        Ok(AspectId::parse_list(&self.aspects)?)
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    folds: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

#[derive(Args)]
struct BaselineData {
    #[arg(long)]
    corpus: PathBuf,
    /// Generic vectors.
    #[arg(long)]
    vectors: PathBuf,
    /// Pair files, one per aspect, comma separated.
    #[arg(long, value_delimiter = ',')]
    pairs: Vec<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    aspects: AspectArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_LABEL_SIZE)]
    max_label_size: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_folds(args: &SplitArgs) -> Result<FoldAssignment> {
    let folds = FoldAssignment::read_tsv(open(&args.folds)?)?;
    if args.fold >= folds.n_folds {
        bail!(
            "fold {} out of range for {} folds",
            args.fold,
            folds.n_folds
        );
    }
    Ok(folds)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth { out, docs, dim } => {
            let synthetic = SyntheticConfig {
                docs,
                dim,
                seed,
                ..SyntheticConfig::default()
            };
            let paths = write_fixture(&out, &synthetic, &synthetic_pipeline(seed))?;
            println!("{}", paths.config.display());
        }
        Command::Pipeline { config, out, force } => {
            let mut config = PipelineConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let summary = run_pipeline(&config, &out, force)?;
            println!("ran: {}", summary.executed.join(" "));
            println!("reused: {}", summary.reused.join(" "));
            let table = out.join(aspectsim_service::pipeline::METRICS_TABLE);
            if let Ok(text) = std::fs::read_to_string(table) {
                print!("{text}");
            }
        }
        Command::Ingest {
            corpus,
            aspects,
            out,
        } => {
            let corpus = ingest_path(&corpus, &aspects.parse()?)?;
            for path in corpus.save(&out)? {
                println!("{}", path.display());
            }
        }
        Command::Pool {
            corpus,
            tokens,
            aspects,
            out,
        } => {
            let corpus = ingest_path(&corpus, &aspects.parse()?)?;
            let table = TokenVectorTable::load(&tokens)?;
            let pooled = average_token_embeddings(&corpus, &table)?;
            pooled.matrix.save_binary(&out)?;
            eprintln!(
                "{} vectors, {} papers without known tokens",
                pooled.matrix.len(),
                pooled.omitted.len()
            );
        }
        Command::Pairs {
            corpus,
            aspect,
            max_label_size,
            neg_ratio,
            out,
        } => {
            let aspect = AspectId::new(aspect);
            let corpus = ingest_path(&corpus, std::slice::from_ref(&aspect))?;
            let gt = generate_pairs(
                &corpus,
                &aspect,
                &GroundTruthConfig {
                    max_label_size,
                    neg_ratio,
                    rng_seed: seed,
                },
            )?;
            let mut w = create(&out)?;
            write_pairs(&mut w, gt.all_pairs())?;
            w.flush()?;
            eprintln!(
                "{} positive, {} negative pairs",
                gt.positives.len(),
                gt.negatives.len()
            );
        }
        Command::Folds { corpus, folds, out } => {
            let corpus = ingest_path(&corpus, &[])?;
            let assignment = make_folds(
                corpus.papers().iter().map(|p| p.paper_id.as_str()),
                folds,
                seed,
            )?;
            let mut w = create(&out)?;
            assignment.write_tsv(&mut w)?;
            w.flush()?;
        }
        Command::Train {
            vectors,
            pairs,
            split,
            loss,
            hidden,
            epochs,
            lr,
            lambda,
            out,
        } => {
            let (generic, _) = load_embeddings(&vectors, "generic", None)?;
            let folds = read_folds(&split)?;
            let pairs = read_pairs(open(&pairs)?)?;
            let train = split_pairs(&pairs, &folds, split.fold)?;
            let defaults = SpecializerConfig::default();
            let config = SpecializerConfig {
                loss_kind: loss,
                hidden_widths: hidden,
                epochs: epochs.unwrap_or(defaults.epochs),
                learning_rate: lr.unwrap_or(defaults.learning_rate),
                lambda: lambda.unwrap_or(defaults.lambda),
                seed,
                ..defaults
            };
            let (model, report) = train_specializer(&generic, &train.train, &config)?;
            model.save(&out)?;
            eprintln!(
                "{} pairs ({} dropped), loss {:.4} -> {:.4} in {:.1?}",
                train.train.len(),
                train.dropped,
                report.initial_loss,
                report.final_loss,
                report.wall_time
            );
        }
        Command::Specialize {
            model,
            vectors,
            out,
        } => {
            let model = SpecializerModel::load(&model)?;
            let (generic, _) = load_embeddings(&vectors, "generic", None)?;
            apply_specializer(&model, &generic)?.save_binary(&out)?;
        }
        Command::Index {
            vectors,
            method,
            k,
            folds,
            fold,
            out,
        } => {
            let (m, _) = load_embeddings(&vectors, &method, None)?;
            let index = build_index(&m)?;
            let seeds: Vec<String> = match (folds, fold) {
                (Some(path), Some(fold)) => {
                    let folds = read_folds(&SplitArgs { folds: path, fold })?;
                    folds
                        .test_ids(fold)
                        .into_iter()
                        .filter(|id| index.contains(id))
                        .map(String::from)
                        .collect()
                }
                _ => index.ids().to_vec(),
            };
            let results = index.batch_knn(seeds.iter().map(String::as_str), k)?;
            let mut w = create(&out)?;
            write_results(&mut w, results.values())?;
            w.flush()?;
        }
        Command::Eval {
            corpus,
            aspect,
            results,
            method,
            depth,
            ks,
            max_label_size,
            fold,
        } => {
            let aspect = AspectId::new(aspect);
            let corpus = ingest_path(&corpus, std::slice::from_ref(&aspect))?;
            let relevance = RelevanceIndex::build(&corpus, &aspect, max_label_size)?;
            let results = read_results(open(&results)?, &method, Some(aspect), depth)?;
            let mut report = MetricsReport::default();
            for k in ks {
                report.push(evaluate_method(&results, &relevance, k, fold)?);
            }
            report.write_csv(std::io::stdout().lock())?;
        }
        Command::Overlap { a, b, k } => {
            let ra = read_results(open(&a)?, "a", None, k)?;
            let rb = read_results(open(&b)?, "b", None, k)?;
            let entry = overlap(&ra, &rb, k)?;
            println!("{:.6}", entry.mean);
        }
        Command::Baseline(command) => baseline(command, seed)?,
        Command::Serve { run, addr, ui } => {
            let snapshot =
                Snapshot::load(&run).with_context(|| format!("loading run {}", run.display()))?;
            let app = router(AppState::new(snapshot), ui);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
    }
    Ok(())
}

struct BaselineInputs {
    aspects: Vec<AspectId>,
    index: aspectsim::SimilarityIndex,
    relevance: Vec<RelevanceIndex>,
    folds: FoldAssignment,
    fold: usize,
}

impl BaselineInputs {
    fn load(data: &BaselineData) -> Result<Self> {
        let aspects = data.aspects.parse()?;
        let corpus = ingest_path(&data.corpus, &aspects)?;
        let (generic, _) = load_embeddings(&data.vectors, "generic", None)?;
        let relevance = aspects
            .iter()
            .map(|a| RelevanceIndex::build(&corpus, a, data.max_label_size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BaselineInputs {
            aspects,
            index: build_index(&generic)?,
            relevance,
            folds: read_folds(&data.split)?,
            fold: data.split.fold,
        })
    }

    fn seeds(&self) -> Vec<&str> {
        self.folds
            .test_ids(self.fold)
            .into_iter()
            .filter(|id| self.index.contains(id))
            .collect()
    }

    fn relevance(&self, aspect: &str) -> Result<&RelevanceIndex> {
        self.relevance
            .iter()
            .find(|r| r.aspect().as_str() == aspect)
            .with_context(|| format!("aspect `{aspect}` is not loaded"))
    }
}

fn baseline(command: BaselineCommand, seed: u64) -> Result<()> {
    match command {
        BaselineCommand::Train { data, epochs, out } => {
            let inputs = BaselineInputs::load(&data)?;
            if data.pairs.is_empty() {
                bail!("--pairs is required");
            }
            let mut train = Vec::new();
            for path in &data.pairs {
                let pairs = read_pairs(open(path)?)?;
                train.extend(split_pairs(&pairs, &inputs.folds, inputs.fold)?.train);
            }
            let refs: Vec<&RelevanceIndex> = inputs.relevance.iter().collect();
            let dataset = build_pair_dataset(&train, &refs, &inputs.index, true);
            let defaults = PairwiseConfig::default();
            let config = PairwiseConfig {
                epochs: epochs.unwrap_or(defaults.epochs),
                seed,
                ..defaults
            };
            let (model, report) =
                train_pairwise(&dataset.features, &dataset.gold, &inputs.aspects, &config)?;
            model.save(&out)?;
            eprintln!(
                "{} examples, loss {:.4} -> {:.4}",
                report.examples, report.initial_loss, report.final_loss
            );
        }
        BaselineCommand::Rank {
            data,
            model,
            aspect,
            filter_n,
            k,
            out,
        } => {
            let inputs = BaselineInputs::load(&data)?;
            let model = PairwiseModel::load(&model)?;
            let results = rank_seeds(
                &model,
                &inputs.index,
                &inputs.seeds(),
                &AspectId::new(aspect),
                filter_n,
                k,
            )?;
            let mut w = create(&out)?;
            write_results(&mut w, results.values())?;
            w.flush()?;
        }
        BaselineCommand::Sweep {
            data,
            model,
            aspect,
            filter_n,
            k,
        } => {
            let inputs = BaselineInputs::load(&data)?;
            let model = PairwiseModel::load(&model)?;
            let relevance = inputs.relevance(&aspect)?;
            let rows = filter_size_sweep(
                &model,
                &inputs.seeds(),
                &inputs.index,
                relevance,
                &filter_n,
                k,
                inputs.fold,
            )?;
            let by_n: BTreeMap<usize, f64> =
                rows.iter().map(|(n, r)| (*n, r.metrics.map)).collect();
            println!("n,map@{k}");
            for (n, map) in by_n {
                println!("{n},{map:.6}");
            }
        }
    }
    Ok(())
}
