//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Oracles are computed here from first principles or from the generator's
//! ground truth, never from the code under test.

#[path = "../../core/tests/support/fuzz.rs"]
mod fuzz;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use ippo_core::agent::{anonymise, laplace_sample, uniform_open, DpParams};
use ippo_core::bdg::{compute_features, compute_metrics_for_visits, counterfactual_diff, detect, BdgConfig, EnergyModel, Method};
use ippo_core::ledger::{validate_chain, Block, Chain, EscrowState, LedgerClient, Transaction, ValidatorBackend};
use ippo_core::simnet::{inject_fault, run_scenario_with, Backends, Fault, ScenarioConfig, ScenarioRun, SimError};
use ippo_core::storage::{BlobStore, StorageCluster, StorageClient, StorageError, StorageNode};
use ippo_core::trace::{counterfactual_pair, generate_synthetic, GeneratorConfig};
use ippo_core::{sha256, Keypair, PublicKey};
use ippo_node::cli::{run_scenario_cli, write_analysis};
use ippo_node::client::HttpLedger;
use ippo_node::wire::WireBackends;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Wire backends that remember where each validator lives so the finished
/// chain can be audited over HTTP.
#[derive(Default)]
struct Audited {
    inner: WireBackends,
    ledger_urls: Vec<String>,
    validators: Vec<PublicKey>,
}

impl Backends for Audited {
    fn ledger(&mut self, index: usize, chain: Chain, key: Keypair) -> Result<Box<dyn ValidatorBackend>, SimError> {
        self.validators = chain.validators().to_vec();
        let backend = self.inner.ledger(index, chain, key)?;
        self.ledger_urls.push(self.inner.urls().last().cloned().expect("server just started"));
        Ok(backend)
    }

    fn storage(&mut self, index: usize) -> Result<Box<dyn BlobStore>, SimError> {
        self.inner.storage(index)
    }
}

struct AuditedRun {
    run: ScenarioRun,
    /// Each validator's chain at the end of the run.
    chains: Vec<Vec<Block>>,
    validators: Vec<PublicKey>,
}

fn audited_run(config: &ScenarioConfig, seed: u64) -> Result<AuditedRun, String> {
    let mut backends = Audited::default();
    let run = run_scenario_with(config, seed, &mut backends).map_err(|e| e.to_string());
    let chains: Result<Vec<_>, _> =
        backends.ledger_urls.iter().map(|u| HttpLedger::new(u).blocks_from(0).map_err(|e| e.to_string())).collect();
    let validators = backends.validators.clone();
    backends.inner.shutdown();
    Ok(AuditedRun { run: run?, chains: chains?, validators })
}

/// Conservation and fair exchange after every block of every validator.
fn audit_chains(audited: &AuditedRun) -> Result<u64, String> {
    let mut checked = 0;
    for blocks in &audited.chains {
        for k in 0..blocks.len() {
            let prefix = &blocks[..=k];
            let state = validate_chain(prefix, &audited.validators).map_err(|e| e.to_string())?;
            fuzz::conservation(prefix, &state).map_err(|e| format!("block {k}: {e}"))?;
            fuzz::fair_exchange(prefix, &state).map_err(|e| format!("block {k}: {e}"))?;
            checked += 1;
        }
    }
    Ok(checked)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut stats = fuzz::FuzzStats::default();
    for seed in 0..1000 {
        let s = fuzz::run_sequence(seed, 50).map_err(|e| format!("seed {seed}: {e}"))?;
        stats.blocks += s.blocks;
        stats.included += s.included;
        stats.settled += s.settled;
        stats.refunded += s.refunded;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(stats.settled > 0 && stats.refunded > 0, "fuzz never reached both terminal states: {stats:?}");
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "1000 sequences, {} blocks, {} txs, {} settled, {} refunded, {secs:.1} s",
        stats.blocks, stats.included, stats.settled, stats.refunded
    ))
}

fn criterion_2() -> Outcome {
    // the fuzz half runs inside criterion 1; here every block of scenarios
    // with and without faults
    let mut blocks = 0;
    let base = ScenarioConfig { num_agents: 2, datasets_per_agent: 2, drop_probability: 0.1, ..ScenarioConfig::default() };
    let configs = [
        base.clone(),
        inject_fault(base.clone(), Fault::SellerNeverReveals { agent: Some(0) }),
        inject_fault(base.clone(), Fault::CorruptCiphertext { agent: 1, dataset: 0 }),
        ScenarioConfig { buyer_budget: 25, ..base },
    ];
    for (i, config) in configs.iter().enumerate() {
        let audited = audited_run(config, 40 + i as u64)?;
        ensure!(audited.run.report.completed, "scenario {i} did not complete");
        blocks += audit_chains(&audited).map_err(|e| format!("scenario {i}: {e}"))?;
    }
    Ok(format!("{} scenarios, {blocks} block states audited", configs.len()))
}

fn criterion_3() -> Outcome {
    let mut checked = 0;
    for (agents, datasets, seed) in [(1, 1, 1), (3, 2, 2)] {
        let config = inject_fault(
            ScenarioConfig { num_agents: agents, datasets_per_agent: datasets, ..ScenarioConfig::default() },
            Fault::SellerNeverReveals { agent: None },
        );
        let audited = audited_run(&config, seed)?;
        let report = &audited.run.report;
        ensure!(report.completed, "scenario did not complete");
        ensure!(
            report.buyer_final_balance == report.buyer_initial_balance,
            "buyer ended with {} of {}",
            report.buyer_final_balance,
            report.buyer_initial_balance
        );
        ensure!(report.escrows.len() == agents * datasets, "{} escrows", report.escrows.len());
        // independent reading of the chain: every purchase is refunded by
        // block deadline + 1
        let blocks = &audited.chains[0];
        for (k, block) in blocks.iter().enumerate() {
            for tx in &block.txs {
                if let Transaction::Purchase { content_id, buyer_pubkey, deadline_height, .. } = tx {
                    let refunded_at = blocks.iter().find(|b| {
                        b.txs.iter().any(|t| matches!(t, Transaction::Refund { content_id: c, buyer_pubkey: p, .. } if c == content_id && p == buyer_pubkey))
                    });
                    let at = refunded_at.map(|b| b.height).ok_or(format!("purchase in block {k} never refunded"))?;
                    ensure!(at <= deadline_height + 1, "refund at {at}, deadline {deadline_height}");
                    checked += 1;
                }
            }
        }
        for e in &report.escrows {
            ensure!(e.state == Some(EscrowState::Refunded), "escrow {} is {:?}", e.content_id, e.state);
        }
    }
    Ok(format!("{checked} escrows refunded by deadline+1, buyer balance restored exactly"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let params = DpParams::new(1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let xs: Vec<f64> = (0..10_000).map(|_| laplace_sample(params.scale(), uniform_open(&mut rng)).unwrap()).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let secs = start.elapsed().as_secs_f64();
    ensure!((-0.05..=0.05).contains(&mean), "mean {mean}");
    ensure!((1.8..=2.2).contains(&var), "variance {var}");
    ensure!(secs < 1.0, "took {secs} s");
    Ok(format!("mean {mean:.4}, variance {var:.4}, {:.0} ms", secs * 1000.0))
}

fn criterion_5() -> Outcome {
    let generator = GeneratorConfig::desk_scale(5, 10);
    ensure!(generator.first_parties == 20, "generator has {} first parties", generator.first_parties);
    for method in [Method::Score, Method::Cluster] {
        let config = BdgConfig { method, ..BdgConfig::default() };
        for seed in 0..20 {
            let (trace, truth) = generate_synthetic(&generator, seed).map_err(|e| e.to_string())?;
            let (dataset, _) = anonymise(&trace, &mut ChaCha8Rng::seed_from_u64(seed));
            let report = detect(&compute_features(&[dataset]), &config, seed).map_err(|e| e.to_string())?;
            let found = report.tracker_domains();
            let tp = found.intersection(&truth.tracker_domains).count();
            ensure!(
                tp == found.len() && tp == truth.tracker_domains.len(),
                "{method:?} seed {seed}: found {found:?}, truth {:?}",
                truth.tracker_domains
            );
        }
    }
    Ok("precision = recall = 1.0 for score and cluster over 20 seeds".into())
}

fn criterion_6() -> Outcome {
    let energy = EnergyModel::default();
    let generator = GeneratorConfig::desk_scale(5, 10);
    for seed in 0..10 {
        let (trace, truth) = generate_synthetic(&generator, seed).map_err(|e| e.to_string())?;
        let (dataset, _) = anonymise(&trace, &mut ChaCha8Rng::seed_from_u64(seed));
        for (name, visits) in [("trace", &trace.visits), ("dataset", &dataset.visits)] {
            for (i, visit) in visits.iter().enumerate() {
                let m = compute_metrics_for_visits(std::slice::from_ref(visit), &truth.tracker_domains, &energy);
                let want = truth.per_visit_tracking[&i];
                let got = (m[0].tracker_contacts, m[0].tracking_bytes, m[0].tracking_time_ms);
                ensure!(got == (want.contacts, want.bytes, want.time_ms), "seed {seed} {name} visit {i}: {got:?} vs {want:?}");
            }
            let all = compute_metrics_for_visits(visits.iter(), &truth.tracker_domains, &energy);
            let sum = all.iter().fold((0, 0, 0), |a, m| (a.0 + m.tracker_contacts, a.1 + m.tracking_bytes, a.2 + m.tracking_time_ms));
            let t = truth.totals();
            ensure!(sum == (t.contacts, t.bytes, t.time_ms), "seed {seed} {name} totals {sum:?} vs {t:?}");
        }
        let (with, without, truth) = counterfactual_pair(&generator, seed).map_err(|e| e.to_string())?;
        let delta = counterfactual_diff(&with, &without).map_err(|e| e.to_string())?;
        let t = truth.totals();
        ensure!(
            (delta.delta_bytes, delta.delta_time_ms, delta.delta_requests) == (t.bytes as i64, t.time_ms as i64, t.contacts as i64),
            "seed {seed}: counterfactual {delta:?} vs {t:?}"
        );
    }
    Ok("per-visit, total and counterfactual costs equal ground truth on 10 seeds".into())
}

/// Every leaf string of a JSON value, skipping the variant tag.
fn leaf_strings(value: &serde_json::Value, key: &str, out: &mut BTreeSet<String>) {
    match value {
        serde_json::Value::String(s) if key != "type" => {
            out.insert(s.clone());
        }
        serde_json::Value::Array(items) => items.iter().for_each(|v| leaf_strings(v, key, out)),
        serde_json::Value::Object(map) => map.iter().for_each(|(k, v)| leaf_strings(v, k, out)),
        _ => {}
    }
}

fn criterion_7() -> Outcome {
    let config = ScenarioConfig { num_agents: 1, datasets_per_agent: 10, ..ScenarioConfig::default() };
    let audited = audited_run(&config, 77)?;
    let announces: Vec<&Transaction> = audited.chains[0]
        .iter()
        .flat_map(|b| &b.txs)
        .filter(|tx| matches!(tx, Transaction::Announce { .. }))
        .collect();
    ensure!(announces.len() == 10, "{} announcements on chain", announces.len());
    let values: Vec<BTreeSet<String>> = announces
        .iter()
        .map(|tx| {
            let mut out = BTreeSet::new();
            leaf_strings(&serde_json::to_value(tx).unwrap(), "", &mut out);
            out
        })
        .collect();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let shared: Vec<_> = values[i].intersection(&values[j]).collect();
            ensure!(shared.is_empty(), "announcements {i} and {j} share {shared:?}");
        }
    }
    Ok(format!("10 announcements, {} identifier values each, pairwise disjoint", values[0].len()))
}

fn criterion_8() -> Outcome {
    let config = ScenarioConfig { num_agents: 3, datasets_per_agent: 2, drop_probability: 0.1, ..ScenarioConfig::default() };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, wire) in [("first", false), ("second", false), ("wire", true)] {
        let run = run_scenario_cli(&config, 8, wire)?;
        let out = dir.path().join(name);
        fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        fs::write(out.join("report.json"), run.report.to_canonical_bytes()).map_err(|e| e.to_string())?;
        write_analysis(&out, run.analysis.as_ref())?;
    }
    let files = ["report.json", "labels.json", "labels.txt", "ruleset.txt", "factors.json", "analysis.json"];
    for file in files {
        let a = fs::read(dir.path().join("first").join(file)).map_err(|e| format!("{file}: {e}"))?;
        for other in ["second", "wire"] {
            let b = fs::read(dir.path().join(other).join(file)).map_err(|e| format!("{file}: {e}"))?;
            ensure!(a == b, "{file} differs between first and {other} run");
        }
    }
    Ok(format!("{} artifacts byte-identical over two in-process runs and the wire run", files.len()))
}

fn criterion_9() -> Outcome {
    let blob: Vec<u8> = (0..4096u32).map(|i| (i * 7 % 251) as u8).collect();
    let mut cluster = StorageCluster::new(vec![StorageNode::new(), StorageNode::new()], 2).map_err(|e| e.to_string())?;
    let id = cluster.put(&blob).map_err(|e| e.to_string())?;
    ensure!(id == sha256(&blob), "id is not the SHA-256 of the bytes");
    ensure!(cluster.get(&id).map_err(|e| e.to_string())? == blob, "round trip changed the bytes");
    let bytes_before: Vec<usize> = cluster.nodes().iter().map(StorageNode::stored_bytes).collect();
    ensure!(cluster.put(&blob).map_err(|e| e.to_string())? == id, "second put returned another id");
    let bytes_after: Vec<usize> = cluster.nodes().iter().map(StorageNode::stored_bytes).collect();
    ensure!(bytes_before == bytes_after && bytes_after == vec![blob.len(); 2], "put is not idempotent: {bytes_after:?}");
    for bad in 0..2 {
        let mut c = cluster.clone();
        c.node_mut(bad).corrupt(&id);
        ensure!(c.get(&id).map_err(|e| e.to_string())? == blob, "corrupt replica {bad} was served");
    }
    let mut both = cluster.clone();
    both.node_mut(0).corrupt(&id);
    both.node_mut(1).corrupt(&id);
    ensure!(both.get(&id) == Err(StorageError::DigestMismatch { id }), "corrupt read not rejected: {:?}", both.get(&id).map(|b| b.len()));
    let mut down = cluster.clone();
    down.set_up(0, false);
    ensure!(down.get(&id).map_err(|e| e.to_string())? == blob, "replica not served with node 0 down");
    Ok("round trip, idempotent put, 1-of-2 corruption, mismatch rejection, node down".into())
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let config = ScenarioConfig {
        num_agents: 3,
        datasets_per_agent: 2,
        validators: 2,
        storage_nodes: 2,
        ..ScenarioConfig::default()
    };
    let audited = audited_run(&config, 10)?;
    let secs = start.elapsed().as_secs_f64();
    let report = &audited.run.report;
    ensure!(report.completed, "did not complete");
    ensure!(report.listings_published == 6 && report.purchases == 6, "{} listed, {} bought", report.listings_published, report.purchases);
    ensure!(report.escrows.iter().all(|e| e.state == Some(EscrowState::Settled)), "not every escrow settled");
    ensure!(report.analyzed.len() == 6, "{} datasets analyzed", report.analyzed.len());
    ensure!(report.protocol_errors.is_empty() && report.invariant_violations.is_empty(), "errors: {:?} {:?}", report.protocol_errors, report.invariant_violations);
    let analysis = audited.run.analysis.as_ref().ok_or("no analysis")?;
    ensure!(analysis.labels.len() == 20, "{} labels", analysis.labels.len());
    let rules: BTreeSet<String> = analysis.ruleset.domains().map(String::from).collect();
    let expected: BTreeSet<String> = (1..=5).map(|i| format!("t{i}.example")).collect();
    ensure!(rules == expected, "rule-set {rules:?}");
    let heights: BTreeMap<usize, u64> = audited.chains.iter().map(|c| c.len() as u64 - 1).enumerate().collect();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("6 datasets sold and analyzed, 20 labels, 5 rules, validator heights {heights:?}, {secs:.1} s"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fair-exchange safety under fuzz", criterion_1),
        ("token conservation after every block", criterion_2),
        ("refund liveness when sellers never reveal", criterion_3),
        ("Laplace noise moments", criterion_4),
        ("tracker detection at desk scale", criterion_5),
        ("metric oracle exactness", criterion_6),
        ("announcement unlinkability", criterion_7),
        ("scenario determinism", criterion_8),
        ("content addressing", criterion_9),
        ("end-to-end demo", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("{label:<56} PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("{label:<56} FAIL  {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
