use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parafed::checks::{gradcheck, reduction_check, selection_check};
use parafed::config::ExperimentConfig;
use parafed::corpus::vocab_names;
use parafed::experiment::{build_corpus, build_fixture, effective_query_config, mode_layout, run_experiment, Mode};
use parafed::overhead::bench_overhead;
use parafed::report::{read_silos, write_corpus, write_csv, write_json, write_silos};
use parafed::{Error, Result};
use parafed_core::federation::{Ledger, Server};
use parafed_core::toylm::ToyLM;

#[derive(Parser)]
#[command(name = "parafed", version, about = "Federated parametric retrieval simulator")]
struct Cli {
    /// Key-value config file; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus, queries and vocabulary.
    GenCorpus,
    /// Build every silo offline and snapshot it.
    Offline {
        #[arg(long, default_value = "full")]
        mode: String,
    },
    /// Answer one query against snapshots written by `offline`.
    Query {
        /// Comma-separated token ids.
        #[arg(long)]
        tokens: String,
        #[arg(long, default_value = "full")]
        mode: String,
    },
    /// Full experiment; `all` runs every mode.
    Run {
        #[arg(long, default_value = "all")]
        mode: String,
    },
    /// Storage over caps and per-query bytes over retrieval depth.
    BenchOverhead {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16])]
        caps: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 5, 8, 10])]
        ks: Vec<usize>,
    },
    /// Greedy selection against the exhaustive optimum.
    SelectionCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
    /// CLIQUE reduction identity over small graphs.
    ReductionCheck {
        #[arg(long, default_value_t = 6)]
        vertices: usize,
        /// Random graphs instead of full enumeration.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Mask-logit gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        fixtures: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_tokens(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("bad token id {t:?}"))))
        .collect()
}

fn modes(arg: &str) -> Result<Vec<Mode>> {
    if arg == "all" {
        Ok(Mode::ALL.to_vec())
    } else {
        Ok(vec![arg.parse()?])
    }
}

fn silo_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join(format!("silos_{mode}"))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out_dir;
    match &cli.command {
        Command::GenCorpus => {
            let corpus = build_corpus(&cfg)?;
            write_corpus(out, &corpus)?;
            write_json(&out.join("vocab.json"), &vocab_names(cfg.num_topics, cfg.facts_per_topic, cfg.vocab_size))?;
            println!("{} documents, {} queries -> {}", corpus.documents.len(), corpus.queries.len(), out.display());
        }
        Command::Offline { mode } => {
            let mode: Mode = mode.parse()?;
            let (cap, masks) = mode_layout(&cfg, mode);
            let fixture = build_fixture(&cfg, cap, masks)?;
            let dir = silo_dir(out, mode);
            write_silos(&dir, &fixture.silos)?;
            write_json(&dir.join("storage.json"), &fixture.storage())?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| Error::Io { path: dir.join("config.toml"), source: e })?;
            println!("{} silos -> {}", fixture.silos.len(), dir.display());
        }
        Command::Query { tokens, mode } => {
            let mode: Mode = mode.parse()?;
            if !matches!(mode, Mode::Full | Mode::PerDocLocal) {
                return Err(Error::Config(format!("query supports full and per_doc_local, not {mode}")));
            }
            let silos = read_silos(&silo_dir(out, mode))?;
            let model = ToyLM::new(cfg.model_config())?;
            let query = parse_tokens(tokens)?;
            let outcome = Server::default().run_query(&model, &silos, &query, &effective_query_config(&cfg, mode), &mut Ledger::default())?;
            let selected: Vec<_> = outcome.selected.iter().map(|c| (c.silo_id, c.doc_id, c.score)).collect();
            let body = serde_json::json!({ "answer": outcome.answer, "selected": selected, "comm": outcome.comm });
            println!("{}", serde_json::to_string_pretty(&body).expect("json value serializes"));
        }
        Command::Run { mode } => {
            for mode in modes(mode)? {
                let report = run_experiment(&cfg, mode)?;
                let (csv, json) = report.write(out)?;
                let s = &report.summary;
                println!(
                    "{mode}: f1 {:.4} em {:.4} bytes/query {:.0} -> {} {}",
                    s.mean_token_f1,
                    s.mean_exact_match,
                    s.mean_comm_bytes,
                    csv.display(),
                    json.display()
                );
            }
        }
        Command::BenchOverhead { caps, ks } => {
            let report = bench_overhead(&cfg, caps, ks)?;
            write_csv(&out.join("overhead_storage.csv"), &report.storage)?;
            write_csv(&out.join("overhead_comm.csv"), &report.comm)?;
            write_json(&out.join("overhead.json"), &report)?;
            for r in &report.storage {
                println!("cap {:>3}: adapters {:>4} adapter ratio {:.4} mask ratio {:.4}", r.cap, r.num_adapters, r.adapter_ratio, r.mask_ratio);
            }
            for r in &report.comm {
                println!("k {:>3}: full {:>9.1} B naive {:>9.1} B ratio {:.4}", r.k, r.full_bytes, r.naive_bytes, r.ratio);
            }
        }
        Command::SelectionCheck { instances } => {
            let check = selection_check(*instances, cfg.seed)?;
            write_csv(&out.join("selection.csv"), &check.rows)?;
            let summary = serde_json::json!({
                "instances_per_lambda": instances,
                "mean_ratio": check.mean_ratio,
                "lambda0_mismatches": check.lambda0_mismatches,
                "threshold_violations": check.threshold_violations,
            });
            write_json(&out.join("selection_summary.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("json value serializes"));
            if !check.ok() {
                return Err(Error::Invariant("greedy selection disagreed with the oracle".into()));
            }
        }
        Command::ReductionCheck { vertices, sample } => {
            let check = reduction_check(*vertices, *sample, cfg.seed)?;
            write_json(&out.join("reduction.json"), &check)?;
            println!("{} graphs, {} instances, {} mismatches", check.graphs, check.instances, check.mismatches);
            if check.mismatches > 0 {
                return Err(Error::Invariant(format!("{} reduction mismatches", check.mismatches)));
            }
        }
        Command::Gradcheck { fixtures, step, tolerance } => {
            let rows = gradcheck(*fixtures, *step, cfg.seed)?;
            write_csv(&out.join("gradcheck.csv"), &rows)?;
            let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
            println!("{} fixtures, worst relative error {worst:.3e}", rows.len());
            if !(worst <= *tolerance) {
                return Err(Error::Invariant(format!("gradient error {worst:.3e} exceeds {tolerance:.1e}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
