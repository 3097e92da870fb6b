//! `ippo` command line. Exit codes: 0 success, 1 usage error, 2 protocol or
//! domain error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ippo_core::agent::{anonymise, publish, AnonymisedDataset, DpParams, Publication};
use ippo_core::bdg::{
    analyze, fetch_datasets, purchase_listings, purchased_content, refund_expired, render_labels_text, Analysis,
    BdgConfig,
};
use ippo_core::canonical;
use ippo_core::ledger::{LedgerClient, DEFAULT_ESCROW_DEADLINE};
use ippo_core::simnet::{run_scenario_with, LocalBackends, ScenarioConfig, ScenarioRun};
use ippo_core::storage::{BlobStore, RemovalAuth, StorageCluster, DEFAULT_REPLICATION};
use ippo_core::trace::{generate_synthetic, parse_trace, serialize_trace, Device, GeneratorConfig};
use ippo_core::Keypair;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::client::{HttpLedger, HttpStorage};
use crate::config::{KeyFile, ServeConfig};
use crate::server::{LedgerService, NodeServer, Service, StorageService};
use crate::wire::WireBackends;

#[derive(Parser)]
#[command(name = "ippo", version, about = "IPPO testbed: agents, data marketplace nodes and the Big Data Grinder")]
struct Cli {
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a keypair file.
    Keygen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic trace with planted trackers.
    Gen {
        /// Generator config (JSON); the desk-scale population when absent.
        #[arg(long, env = "IPPO_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground truth here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Anonymise a trace under a fresh pseudonym.
    Anonymise {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "desktop")]
        device: DeviceArg,
        #[arg(long)]
        out: PathBuf,
        /// Where to keep the pseudonym key.
        #[arg(long)]
        key_out: PathBuf,
    },
    /// Encrypt, store and announce a dataset.
    Publish {
        #[arg(long)]
        dataset: PathBuf,
        /// Pseudonym key written by `anonymise`.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        price: u64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[command(flatten)]
        nodes: Nodes,
        #[arg(long)]
        seed: u64,
        /// Seller-side record with the key; keep it private.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reveal the key of a published dataset.
    Reveal {
        #[arg(long)]
        publication: PathBuf,
        #[arg(long)]
        ledger: String,
    },
    /// Delete a published dataset from storage.
    Remove {
        #[arg(long)]
        publication: PathBuf,
        #[arg(long = "storage", required = true)]
        storage: Vec<String>,
    },
    /// Buy listings in announce order within a budget.
    Buy {
        #[arg(long)]
        ledger: String,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        budget: u64,
        /// Escrow deadline in blocks from the current height.
        #[arg(long, default_value_t = DEFAULT_ESCROW_DEADLINE)]
        deadline: u64,
    },
    /// Refund escrows whose deadline has passed.
    Refund {
        #[arg(long)]
        ledger: String,
        #[arg(long)]
        key: PathBuf,
    },
    /// Detect trackers and write labels, factors and the rule-set.
    Analyze {
        /// Analysis config (JSON); defaults when absent.
        #[arg(long, env = "IPPO_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Local dataset files; otherwise purchased datasets are fetched.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        ledger: Option<String>,
        #[arg(long = "storage")]
        storage: Vec<String>,
        /// Buyer key, needed when fetching.
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render Privacy Labels from an analysis.
    Label {
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: LabelFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the filter rule-set from an analysis.
    Ruleset {
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a ledger or storage node.
    Serve {
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long, env = "IPPO_CONFIG")]
        config: PathBuf,
    },
    /// Simulated end-to-end scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    Run {
        #[arg(long, env = "IPPO_CONFIG")]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Report, labels and rule-set go here; the report is printed when absent.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Drive every node over HTTP on loopback.
        #[arg(long)]
        wire: bool,
    },
}

#[derive(Args)]
struct Nodes {
    #[arg(long)]
    ledger: String,
    #[arg(long = "storage", required = true)]
    storage: Vec<String>,
    #[arg(long)]
    replication: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeviceArg {
    Desktop,
    Mobile,
    MiddleboxAggregate,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelFormat {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Ledger,
    Storage,
}

type CmdResult = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut bytes = canonical::to_vec(value);
    bytes.push(b'\n');
    write(path, bytes)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    serde_json::from_slice(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_key(path: &Path) -> Result<Keypair, String> {
    KeyFile::load(path).map_err(err)
}

fn cluster(urls: &[String], replication: Option<usize>) -> Result<StorageCluster<HttpStorage>, String> {
    let r = replication.unwrap_or(DEFAULT_REPLICATION.min(urls.len()));
    StorageCluster::new(urls.iter().map(|u| HttpStorage::new(u)).collect(), r).map_err(err)
}

fn bdg_config(path: Option<&Path>) -> Result<BdgConfig, String> {
    match path {
        Some(p) => BdgConfig::from_json(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(BdgConfig::default()),
    }
}

/// Writes analysis.json, labels.json, labels.txt, factors.json and
/// ruleset.txt into `dir`.
pub fn write_analysis(dir: &Path, analysis: Option<&Analysis>) -> CmdResult {
    let empty = Vec::new();
    let labels = analysis.map_or(&empty, |a| &a.labels);
    if let Some(a) = analysis {
        write_json(&dir.join("analysis.json"), a)?;
    }
    write_json(&dir.join("labels.json"), labels)?;
    write(&dir.join("labels.txt"), render_labels_text(labels))?;
    write_json(&dir.join("factors.json"), &analysis.map_or(Vec::new(), |a| a.factors.clone()))?;
    write(&dir.join("ruleset.txt"), analysis.map(|a| a.ruleset.clone()).unwrap_or_default().render())
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Keygen { seed, out } => {
            let key = Keypair::generate(&mut ChaCha8Rng::seed_from_u64(seed));
            write_json(&out, &KeyFile::new(key.clone()))?;
            println!("{}", key.public());
            Ok(())
        }
        Command::Gen { config, seed, out, truth } => {
            let config = match config {
                Some(p) => parse_json::<GeneratorConfig>(&p)?,
                None => GeneratorConfig::desk_scale(5, 10),
            };
            let (trace, ground_truth) = generate_synthetic(&config, seed).map_err(err)?;
            write(&out, serialize_trace(&trace))?;
            if let Some(path) = truth {
                write_json(&path, &ground_truth)?;
            }
            Ok(())
        }
        Command::Anonymise { trace, seed, device, out, key_out } => {
            let mut parsed = parse_trace(&read(&trace)?).map_err(|e| format!("{}: {e}", trace.display()))?;
            parsed.device = match device {
                DeviceArg::Desktop => Device::Desktop,
                DeviceArg::Mobile => Device::Mobile,
                DeviceArg::MiddleboxAggregate => Device::MiddleboxAggregate,
            };
            let (dataset, pseudonym) = anonymise(&parsed, &mut ChaCha8Rng::seed_from_u64(seed));
            write(&out, dataset.to_canonical_bytes())?;
            write_json(&key_out, &KeyFile::new(pseudonym))?;
            println!("{}", dataset.pseudonym_pubkey);
            Ok(())
        }
        Command::Publish { dataset, key, price, epsilon, nodes, seed, out } => {
            let dataset = AnonymisedDataset::from_bytes(&read(&dataset)?).map_err(err)?;
            let pseudonym = load_key(&key)?;
            if pseudonym.public() != dataset.pseudonym_pubkey {
                return Err("key does not belong to the dataset's pseudonym".into());
            }
            let params = DpParams::new(epsilon).map_err(err)?;
            let mut storage = cluster(&nodes.storage, nodes.replication)?;
            let mut ledger = HttpLedger::new(&nodes.ledger);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let publication =
                publish(&dataset, &pseudonym, price, &params, &mut storage, &mut ledger, &mut rng).map_err(err)?;
            write_json(&out, &publication)?;
            println!("{}", publication.content_id);
            Ok(())
        }
        Command::Reveal { publication, ledger } => {
            let publication: Publication = parse_json(&publication)?;
            let txid = HttpLedger::new(&ledger).submit(publication.reveal_tx()).map_err(err)?;
            println!("{txid}");
            Ok(())
        }
        Command::Remove { publication, storage } => {
            let publication: Publication = parse_json(&publication)?;
            let auth = RemovalAuth::sign(&publication.content_id, &publication.pseudonym);
            for url in storage {
                HttpStorage::new(&url).delete_blob(&publication.content_id, &auth).map_err(|e| format!("{url}: {e}"))?;
            }
            Ok(())
        }
        Command::Buy { ledger, key, budget, deadline } => {
            let buyer = load_key(&key)?;
            let mut ledger = HttpLedger::new(&ledger);
            let (purchases, exhausted) = purchase_listings(&mut ledger, &buyer, budget, deadline).map_err(err)?;
            println!("{}", canonical::to_string(&serde_json::json!({"purchases": purchases, "budget_exhausted": exhausted})));
            Ok(())
        }
        Command::Refund { ledger, key } => {
            let buyer = load_key(&key)?;
            let refunded = refund_expired(&mut HttpLedger::new(&ledger), &buyer).map_err(err)?;
            println!("{}", canonical::to_string(&refunded));
            Ok(())
        }
        Command::Analyze { config, seed, datasets, ledger, storage, key, out_dir } => {
            let config = bdg_config(config.as_deref())?;
            let mut loaded = Vec::new();
            for path in &datasets {
                loaded.push(AnonymisedDataset::from_bytes(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?);
            }
            if let Some(url) = ledger {
                let key = key.ok_or("--key is required with --ledger")?;
                if storage.is_empty() {
                    return Err("--storage is required with --ledger".into());
                }
                let ledger = HttpLedger::new(&url);
                let ids = purchased_content(&ledger, &load_key(&key)?.public()).map_err(err)?;
                let retrieval = fetch_datasets(&ledger, &cluster(&storage, Some(1))?, &ids).map_err(err)?;
                write_json(&out_dir.join("disputes.json"), &retrieval.disputes)?;
                write_json(&out_dir.join("pending.json"), &retrieval.pending)?;
                loaded.extend(retrieval.datasets.into_iter().map(|(_, d)| d));
            } else if datasets.is_empty() {
                return Err("nothing to analyze: pass --dataset or --ledger".into());
            }
            let analysis = analyze(&loaded, &config, seed).map_err(err)?;
            write_analysis(&out_dir, Some(&analysis))?;
            println!("{} trackers in {} datasets", analysis.ruleset.rules.len(), loaded.len());
            Ok(())
        }
        Command::Label { analysis, format, out } => {
            let analysis: Analysis = parse_json(&analysis)?;
            match format {
                LabelFormat::Json => write_json(&out, &analysis.labels),
                LabelFormat::Text => write(&out, render_labels_text(&analysis.labels)),
            }
        }
        Command::Ruleset { analysis, out } => {
            let analysis: Analysis = parse_json(&analysis)?;
            write(&out, analysis.ruleset.render())
        }
        Command::Serve { role, config } => serve(role, &config),
        Command::Scenario { action: ScenarioAction::Run { config, seed, out_dir, wire } } => {
            let config = ScenarioConfig::from_json(&read(&config)?).map_err(err)?;
            let run = run_scenario_cli(&config, seed, wire)?;
            match out_dir {
                Some(dir) => {
                    write_json(&dir.join("report.json"), &run.report)?;
                    write_analysis(&dir, run.analysis.as_ref())?;
                    println!("{}", dir.join("report.json").display());
                }
                None => println!("{}", canonical::to_string(&run.report)),
            }
            if run.report.completed {
                Ok(())
            } else {
                Err(format!("scenario did not complete within {} ticks", config.max_ticks))
            }
        }
    }
}

/// Runs a scenario in-process or over loopback HTTP.
pub fn run_scenario_cli(config: &ScenarioConfig, seed: u64, wire: bool) -> Result<ScenarioRun, String> {
    if wire {
        let mut backends = WireBackends::new();
        let run = run_scenario_with(config, seed, &mut backends);
        backends.shutdown();
        run.map_err(err)
    } else {
        run_scenario_with(config, seed, &mut LocalBackends).map_err(err)
    }
}

fn serve(role: Role, path: &Path) -> CmdResult {
    let config = ServeConfig::load(path).map_err(err)?;
    let service: Box<dyn Service> = match role {
        Role::Ledger => {
            let genesis = config.genesis_chain().map_err(err)?;
            let key = config.validator().map_err(err)?;
            Box::new(LedgerService::new(genesis, key, config.state_dir.as_deref(), &config.peers).map_err(err)?)
        }
        Role::Storage => Box::new(StorageService::new(config.state_dir.as_deref(), config.ledger_url.as_deref()).map_err(err)?),
    };
    let interval = match role {
        Role::Ledger => config.block_interval_ms.map(Duration::from_millis),
        Role::Storage => None,
    };
    let server = NodeServer::start(&config.listen, service, &config.peers, interval).map_err(err)?;
    println!("{}", server.url());
    server.wait();
    Ok(())
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new().parse_filters(level).format_timestamp(None).try_init();
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(&cli.log_level);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(message) => {
            eprintln!("error: {message}");
            2
        }
    }
}

