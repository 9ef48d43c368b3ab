use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;

use sponsored_ctr::auction::{rank_slate, squash_score, Candidate, SquashConfig};
use sponsored_ctr::bucketfeat::build_history_table;
use sponsored_ctr::data::{read_logs, write_logs, Dataset};
use sponsored_ctr::learner::CtrModel;
use sponsored_ctr::pipeline::{
    predict_logs, prepare, run_ablation, run_method, train_configured, Method, PipelineConfig,
};
use sponsored_ctr::simgen::{generate_logs, GroundTruth};
use sponsored_ctr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sponsored-ctr", version, about = "Sponsored-product CTR training toolkit")]
struct Cli {
    /// JSON pipeline configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the simulator and label-aggregation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate position-biased logs and their ground truth.
    Simulate,
    /// Build the history feature table as of a day.
    Features {
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        as_of_day: u32,
    },
    /// Train one model with the configuration's own switches.
    Train {
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score every record of a log file with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Rank a JSON array of candidates by pCTR^c * CPC.
    Rank {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        slate_size: Option<usize>,
    },
    /// Run one ablation method and report offline and slate metrics.
    Evaluate {
        #[arg(long)]
        method: String,
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Simulate, then run raw, abdeb, abmul and prac on the same data.
    Ablation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf)> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.sim.seed = seed;
        config.multitask.config.seed = seed;
    }
    config.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn inputs(
    config: &PipelineConfig,
    out: &Path,
    logs: &Option<PathBuf>,
    truth: &Option<PathBuf>,
) -> Result<(Dataset, GroundTruth)> {
    let logs_path = logs.clone().unwrap_or_else(|| out.join("logs.jsonl"));
    let truth_path = truth.clone().unwrap_or_else(|| out.join("truth.json"));
    Ok((read_logs(&logs_path, config.sim.layout)?, GroundTruth::load(&truth_path)?))
}

fn simulate(config: &PipelineConfig, out: &Path) -> Result<(Dataset, GroundTruth)> {
    let (logs, truth) = generate_logs(&config.sim)?;
    create_dir(out)?;
    write_logs(&logs, out.join("logs.jsonl"))?;
    truth.save(out.join("truth.json"))?;
    Ok((logs, truth))
}

#[derive(Serialize)]
struct Prediction<'a> {
    query_id: &'a str,
    item_id: &'a str,
    day: u32,
    position: u32,
    pctr: f64,
}

fn run(cli: Cli) -> Result<()> {
    let (config, out) = load_config(&cli)?;
    match &cli.command {
        Command::Simulate => {
            let (logs, _) = simulate(&config, &out)?;
            let clicks = logs.records.iter().filter(|r| r.clicked()).count();
            let convs = logs.records.iter().filter(|r| r.converted()).count();
            println!("records      {}", logs.len());
            println!("clicks       {clicks}");
            println!("conversions  {convs}");
            println!("wrote {} and {}", out.join("logs.jsonl").display(), out.join("truth.json").display());
        }
        Command::Features { logs, as_of_day } => {
            let path = logs.clone().unwrap_or_else(|| out.join("logs.jsonl"));
            let data = read_logs(&path, config.sim.layout)?;
            let table = build_history_table(&data, *as_of_day, config.window_days, config.history_alpha, None)?;
            create_dir(&out)?;
            let dest = out.join(format!("history_day{as_of_day}.json"));
            table.save(&dest)?;
            println!("as_of_day    {as_of_day}");
            println!("window_days  {}", table.window_days);
            println!("prior        {:.6}", table.prior);
            println!("entries      {}", table.len());
            println!("wrote {}", dest.display());
        }
        Command::Train { logs, truth } => {
            let (data, truth) = inputs(&config, &out, logs, truth)?;
            let prepared = prepare(&config, &data, &truth)?;
            let model = train_configured(&config, &prepared)?;
            let dest = out.join("models").join("model.json");
            write_json(&dest, &model)?;
            println!("debias       {}", config.debias.enabled);
            println!("multitask    {:?} a={}", config.multitask.config.mode, config.multitask.config.a);
            println!("intercept    {:.6}", model.intercept);
            for (j, c) in model.coefficients.iter().enumerate() {
                println!("theta[{j:2}]    {c:.6}");
            }
            println!("wrote {}", dest.display());
        }
        Command::Predict { model, logs } => {
            let path = logs.clone().unwrap_or_else(|| out.join("logs.jsonl"));
            let data = read_logs(&path, config.sim.layout)?;
            let model = CtrModel::load(model)?;
            let scores = predict_logs(&config, &data, &model)?;
            let mut text = String::new();
            for (r, &pctr) in data.records.iter().zip(&scores) {
                let line = Prediction {
                    query_id: &r.query_id,
                    item_id: &r.item_id,
                    day: r.day,
                    position: r.position,
                    pctr,
                };
                text.push_str(&serde_json::to_string(&line)?);
                text.push('\n');
            }
            create_dir(&out)?;
            let dest = out.join("predictions.jsonl");
            write_text(&dest, &text)?;
            let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
            println!("records      {}", scores.len());
            println!("mean pctr    {mean:.6}");
            println!("wrote {}", dest.display());
        }
        Command::Rank { candidates, c, slate_size } => {
            let text = fs::read_to_string(candidates).map_err(|e| Error::io(candidates, e))?;
            let cands: Vec<Candidate> = serde_json::from_str(&text)?;
            let squash = SquashConfig { c: c.unwrap_or(config.squash.c) };
            squash.validate()?;
            let size = slate_size.unwrap_or(cands.len());
            let slate = rank_slate(&cands, &squash, size)?;
            write_json(&out.join("slate.json"), &slate)?;
            println!("{:<6}{:<16}{:>10}{:>10}{:>12}", "rank", "item_id", "pctr", "cpc", "score");
            for (k, cand) in slate.iter().enumerate() {
                println!(
                    "{:<6}{:<16}{:>10.4}{:>10.4}{:>12.6}",
                    k + 1,
                    cand.item_id,
                    cand.pctr,
                    cand.cpc,
                    squash_score(cand, &squash)
                );
            }
        }
        Command::Evaluate { method, logs, truth } => {
            let method = Method::from_str(method)?;
            let (data, truth) = inputs(&config, &out, logs, truth)?;
            let prepared = prepare(&config, &data, &truth)?;
            let (model, report) = run_method(method, &config, &prepared)?;
            write_json(&out.join("models").join(format!("{method}.json")), &model)?;
            write_json(&out.join("reports").join(format!("{method}.json")), &report)?;
            let o = &report.offline;
            println!("method       {method}");
            println!("ctr_auroc    {:.6}", o.ctr_auroc);
            println!("ctr_auprc    {:.6}", o.ctr_auprc);
            println!("ctcvr_auroc  {:.6}", o.ctcvr_auroc);
            println!("ctcvr_auprc  {:.6}", o.ctcvr_auprc);
            println!("logloss      {:.6}", o.logloss);
            println!("eCTR         {:.6}", report.online.ectr);
            println!("eCPMV        {:.4}", report.online.ecpmv);
            match report.online.roas {
                Some(v) => println!("ROAS         {v:.6}"),
                None => println!("ROAS         -"),
            }
            println!("c            {}", report.selection.c);
        }
        Command::Ablation => {
            let (data, truth) = simulate(&config, &out)?;
            let prepared = prepare(&config, &data, &truth)?;
            let (models, table) = run_ablation(&config, &prepared)?;
            for (model, row) in models.iter().zip(&table.rows) {
                write_json(&out.join("models").join(format!("{}.json", row.method)), model)?;
            }
            write_json(&out.join("ablation.json"), &table)?;
            let text = table.render();
            write_text(&out.join("ablation.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}
