use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use muse_core::agent_service::{serve, Agent, SessionService};
use muse_core::cf_trainer::{chronological_split, read_interactions, BprConfig, BprData};
use muse_core::data::{embed_catalog, DataBundle, DataLayout};
use muse_core::eval::{run_eval, Bm25OnlyBackend, EvalBackend, EvalReport, ToolsBackend};
use muse_core::fixtures::{generate_fixture_suite, read_conversations, stub_provider, FixtureSizes};
use muse_core::planner::{AuditLog, HttpChatProvider, LlmPlanner, LlmResponder, Planner, RulePlanner};
use muse_core::semantic_id::RvqConfig;
use muse_core::sparse_index::{Bm25Index, CorpusType};
use muse_core::vector_store::{EmbeddingProvider, EmbeddingTable, HttpEmbeddingProvider, SpaceId};
use muse_core::{train_bpr, Catalog, ToolEnv};

#[derive(Parser)]
#[command(name = "muse", version, about = "Tool-calling music recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic data directory with eval conversations.
    Fixtures(FixturesArgs),
    /// Import a catalog, interactions and precomputed embeddings.
    Ingest(IngestArgs),
    /// Build BM25 snapshots for every text corpus.
    Index(DataArg),
    /// Train collaborative-filtering vectors from interactions.
    TrainBpr(TrainBprArgs),
    /// Train residual quantizers and encode semantic IDs.
    TrainRvq(TrainRvqArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
    /// Replay conversations offline and report Hit@K.
    Eval(EvalArgs),
}

#[derive(Args)]
struct DataArg {
    /// Data directory.
    #[arg(long, default_value = "data")]
    data: PathBuf,
}

#[derive(Args)]
struct ProviderArgs {
    /// Remote text encoder; the offline hashing encoder when absent.
    #[arg(long)]
    provider_url: Option<String>,
}

impl ProviderArgs {
    fn build(&self) -> Arc<dyn EmbeddingProvider> {
        let text = [SpaceId::TEXT_METADATA, SpaceId::TEXT_LYRICS, SpaceId::TEXT_ATTRIBUTES];
        match &self.provider_url {
            Some(url) => Arc::new(HttpEmbeddingProvider::new(url.clone(), text)),
            None => Arc::new(stub_provider()),
        }
    }
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    tracks: Option<usize>,
    #[arg(long)]
    artists: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    conversations: Option<usize>,
    #[arg(long)]
    turns: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArg,
    /// Catalog as JSON lines, one track per line.
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    interactions: Option<PathBuf>,
    /// Precomputed table as SPACE=FILE, e.g. audio:audio=audio.jsonl.
    #[arg(long = "embedding", value_parser = parse_embedding_arg)]
    embeddings: Vec<(SpaceId, PathBuf)>,
    /// Encode the text spaces that have no precomputed table.
    #[arg(long)]
    embed_text: bool,
    #[command(flatten)]
    provider: ProviderArgs,
}

fn parse_embedding_arg(s: &str) -> Result<(SpaceId, PathBuf), String> {
    let (space, path) = s.split_once('=').ok_or("expected SPACE=FILE")?;
    Ok((space.parse()?, PathBuf::from(path)))
}

#[derive(Args)]
struct TrainBprArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.002)]
    reg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on the earliest fraction of events only.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainRvqArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    kmeans_iters: Option<usize>,
    /// Discard existing quantizers first.
    #[arg(long)]
    retrain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerKind {
    Rules,
    Llm,
}

#[derive(Args)]
struct PlannerArgs {
    #[arg(long, value_enum, default_value = "rules")]
    planner: PlannerKind,
    /// Chat-completions endpoint for the llm planner.
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long, env = "MUSE_LLM_TOKEN", hide_env_values = true)]
    llm_token: Option<String>,
    /// Append every prompt and reply to this JSONL file.
    #[arg(long)]
    audit: Option<PathBuf>,
}

impl PlannerArgs {
    fn chat(&self) -> Result<HttpChatProvider> {
        let url = self.llm_url.clone().context("--planner llm needs --llm-url")?;
        Ok(HttpChatProvider::new(url, self.llm_token.clone()))
    }

    fn build(&self) -> Result<Arc<dyn Planner>> {
        Ok(match self.planner {
            PlannerKind::Rules => Arc::new(RulePlanner),
            PlannerKind::Llm => {
                let mut planner = LlmPlanner::new(Box::new(self.chat()?));
                if let Some(path) = &self.audit {
                    planner = planner.with_audit(AuditLog::open(path).with_context(|| path.display().to_string())?);
                }
                Arc::new(planner)
            }
        })
    }
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[command(flatten)]
    planner: PlannerArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Session journal directory; sessions live in memory only when absent.
    #[arg(long)]
    sessions: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendKind {
    Tools,
    Bm25,
    Both,
}

#[derive(Args)]
struct EvalArgs {
    /// Data directory with conversations.jsonl. Without it a suite is
    /// generated in memory from --seed.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    backend: BackendKind,
    #[arg(long, value_delimiter = ',', default_value = "1,10,20")]
    k: Vec<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[command(flatten)]
    planner: PlannerArgs,
    #[command(flatten)]
    provider: ProviderArgs,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Fixtures(a) => fixtures(a),
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(a),
        Command::TrainBpr(a) => train_bpr_cmd(a),
        Command::TrainRvq(a) => train_rvq_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Eval(a) => eval(a),
    }
}

fn load(dir: &Path) -> Result<DataBundle> {
    DataBundle::load(dir).with_context(|| format!("loading {}", dir.display()))
}

fn fixtures(a: FixturesArgs) -> Result<()> {
    let d = FixtureSizes::default();
    let sizes = FixtureSizes {
        tracks: a.tracks.unwrap_or(d.tracks),
        artists: a.artists.unwrap_or(d.artists),
        users: a.users.unwrap_or(d.users),
        conversations: a.conversations.unwrap_or(d.conversations),
        turns: a.turns.unwrap_or(d.turns),
    };
    let suite = generate_fixture_suite(a.seed, &sizes);
    suite.save(&a.out)?;
    println!(
        "wrote {} tracks, {} interactions, {} conversations to {}",
        suite.bundle.catalog.len(),
        suite.bundle.interactions.len(),
        suite.conversations.len(),
        a.out.display()
    );
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let file = File::open(&a.catalog).with_context(|| a.catalog.display().to_string())?;
    let catalog = Catalog::ingest(BufReader::new(file)).with_context(|| a.catalog.display().to_string())?;
    let mut bundle = DataBundle::new(catalog);
    if let Some(path) = &a.interactions {
        let file = File::open(path).with_context(|| path.display().to_string())?;
        bundle.interactions = read_interactions(BufReader::new(file)).with_context(|| path.display().to_string())?;
    }
    for (space, path) in &a.embeddings {
        let file = File::open(path).with_context(|| path.display().to_string())?;
        let table = EmbeddingTable::load(BufReader::new(file), *space).with_context(|| path.display().to_string())?;
        let missing = bundle.catalog.track_ids().filter(|id| !table.contains(id)).count();
        if missing > 0 {
            log::warn!("{space}: {missing} catalog tracks have no vector");
        }
        bundle.tables.insert(*space, table);
    }
    if a.embed_text {
        let provider = a.provider.build();
        for space in [SpaceId::TEXT_METADATA, SpaceId::TEXT_LYRICS, SpaceId::TEXT_ATTRIBUTES] {
            if !bundle.tables.contains_key(&space) {
                bundle.tables.insert(space, embed_catalog(&bundle.catalog, provider.as_ref(), space)?);
            }
        }
    }
    bundle.save(&a.data.data)?;
    println!(
        "ingested {} tracks, {} interactions, {} embedding tables into {}",
        bundle.catalog.len(),
        bundle.interactions.len(),
        bundle.tables.len(),
        a.data.data.display()
    );
    Ok(())
}

fn index(a: DataArg) -> Result<()> {
    let mut bundle = load(&a.data)?;
    bundle.bm25 = CorpusType::ALL
        .into_iter()
        .map(|corpus| Bm25Index::build(&bundle.catalog, corpus))
        .collect::<Result<_, _>>()?;
    bundle.save(&a.data)?;
    for index in &bundle.bm25 {
        println!("{}: {} documents, {} terms", index.corpus(), index.doc_count(), index.term_count());
    }
    Ok(())
}

fn train_bpr_cmd(a: TrainBprArgs) -> Result<()> {
    let mut bundle = load(&a.data.data)?;
    if bundle.interactions.is_empty() {
        bail!("{} has no interactions", DataLayout::new(&a.data.data).interactions().display());
    }
    let events = match a.train_fraction {
        Some(f) => chronological_split(&bundle.interactions, f)?.train,
        None => bundle.interactions.clone(),
    };
    let items: Vec<String> = bundle.catalog.track_ids().map(str::to_string).collect();
    let data = BprData::from_interactions(&events, &items)?;
    let config = BprConfig {
        dimension: a.dim,
        learning_rate: a.lr,
        regularization: a.reg,
        epochs: a.epochs,
        rng_seed: a.seed,
        ..BprConfig::default()
    };
    let (model, report) = train_bpr(&data, &config)?;
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.6}", e + 1);
    }
    let tables = model.into_tables()?;
    println!("{} users, {} items, dimension {}", tables.users.len(), tables.items.len(), a.dim);
    bundle.tables.insert(SpaceId::CF, tables.items);
    bundle.cf_users = Some(tables.users);
    // Codes derived from the old cf table are stale now.
    bundle.rvq.remove(&muse_core::SidModality::CfItem);
    bundle.encode_semantic_ids()?;
    bundle.save(&a.data.data)?;
    Ok(())
}

fn train_rvq_cmd(a: TrainRvqArgs) -> Result<()> {
    let mut bundle = load(&a.data.data)?;
    if a.retrain {
        bundle.rvq.clear();
    }
    let mut config = RvqConfig { rng_seed: a.seed, ..RvqConfig::default() };
    if let Some(iters) = a.kmeans_iters {
        config.kmeans_iters = iters;
    }
    let reports = bundle.train_semantic_ids(&config)?;
    for (modality, r) in &reports {
        let mse: Vec<String> = r.layer_mse.iter().map(|x| format!("{x:.4}")).collect();
        let util: Vec<String> = r.utilization.iter().map(|x| format!("{x:.2}")).collect();
        println!("{modality:<11} mse [{}]  utilization [{}]", mse.join(", "), util.join(", "));
    }
    if reports.is_empty() {
        println!("nothing to train; pass --retrain to replace existing quantizers");
    }
    println!("{} semantic IDs", bundle.semantic_ids.len());
    bundle.save(&a.data.data)?;
    Ok(())
}

fn build_env(dir: &Path, provider: &ProviderArgs) -> Result<Arc<ToolEnv>> {
    let bundle = load(dir)?;
    Ok(Arc::new(bundle.build_env(provider.build())?))
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let env = build_env(&a.data.data, &a.provider)?;
    let mut agent = Agent::new(env, a.planner.build()?);
    if matches!(a.planner.planner, PlannerKind::Llm) {
        agent = agent.with_responder(Arc::new(LlmResponder::new(Box::new(a.planner.chat()?))));
    }
    let service = match &a.sessions {
        Some(dir) => SessionService::open(agent, dir)?,
        None => SessionService::new(agent),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(serve(Arc::new(service), a.addr))?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (env, conversations) = match &a.data {
        Some(dir) => {
            let path = DataLayout::new(dir).conversations();
            let file = File::open(&path).with_context(|| path.display().to_string())?;
            let conversations = read_conversations(BufReader::new(file)).map_err(anyhow::Error::msg)?;
            (build_env(dir, &a.provider)?, conversations)
        }
        None => {
            let suite = generate_fixture_suite(a.seed, &FixtureSizes::default());
            let env = Arc::new(suite.bundle.build_env(a.provider.build())?);
            (env, suite.conversations)
        }
    };
    let mut backends: Vec<Box<dyn EvalBackend>> = Vec::new();
    if a.backend != BackendKind::Bm25 {
        let name = match a.planner.planner {
            PlannerKind::Rules => "planner_tools",
            PlannerKind::Llm => "llm_tools",
        };
        backends.push(Box::new(ToolsBackend::new(env.clone(), a.planner.build()?, name)));
    }
    if a.backend != BackendKind::Tools {
        backends.push(Box::new(Bm25OnlyBackend::new(env.clone())));
    }
    let reports: Vec<EvalReport> = backends
        .iter()
        .map(|b| run_eval(&conversations, b.as_ref(), &env, &a.k, a.threads))
        .collect::<Result<_, _>>()?;
    for r in &reports {
        println!("{}", r.to_table());
    }
    if let Some(path) = &a.json {
        let doc = serde_json::to_string_pretty(&reports)?;
        std::fs::write(path, doc + "\n").with_context(|| path.display().to_string())?;
    }
    Ok(())
}
