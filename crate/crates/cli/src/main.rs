use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use styled2t::checkpoint;
use styled2t::config;
use styled2t::corpus::{
    extract_plan, generate_synthetic_corpus, read_jsonl, tokenize, triplet_to_json, write_jsonl, GeneratorConfig, Triplet,
};
use styled2t::evaluation;
use styled2t::logic_graph::build_graphs;
use styled2t::training::{self, encode_corpus, TrainConfig};
use styled2t::Error;

const SEED_ENV: &str = "STYLED2T_SEED";

#[derive(Parser)]
#[command(name = "styled2t", version, about = "Stylized data-to-text generation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-style corpus as JSONL.
    GenData(GenData),
    /// Build per-instance logic graphs from corpus mention order.
    BuildGraphs(BuildGraphs),
    /// Train a model and write a checkpoint directory.
    Train(Train),
    /// Predict pair orderings with a trained planner.
    Plan(PlanCmd),
    /// Generate stylized texts for data instances.
    Infer(Infer),
    /// Score candidate pseudo texts with the confidence gate.
    Gate(GateCmd),
    /// Generate every style for a test split and report metrics.
    Evaluate(Evaluate),
    /// Print per-style counts, average pairs and average lengths.
    Stats(Stats),
}

#[derive(Args)]
struct GenData {
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
    /// Random seed (falls back to STYLED2T_SEED, then 7).
    #[arg(long)]
    seed: Option<u64>,
    /// Triplets per style, e.g. `1000,1000`.
    #[arg(long, value_delimiter = ',', default_value = "1000,1000")]
    per_style: Vec<usize>,
    /// Fewest pairs per instance.
    #[arg(long, default_value_t = 3)]
    min_pairs: usize,
    /// Most pairs per instance.
    #[arg(long, default_value_t = 5)]
    max_pairs: usize,
    /// Attributes in play (at most 12).
    #[arg(long, default_value_t = 12)]
    attribute_pool: usize,
    /// Probability of swapping adjacent mentions.
    #[arg(long, default_value_t = 0.15)]
    swap_prob: f64,
    /// Probability of a random sentence template.
    #[arg(long, default_value_t = 0.25)]
    template_noise: f64,
    /// Move this many triplets per style to a test file.
    #[arg(long, requires = "test_out")]
    holdout: Option<usize>,
    /// Test split output when `--holdout` is set.
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildGraphs {
    /// Instances to build graphs for.
    #[arg(long)]
    data: PathBuf,
    /// Corpus whose targets supply mention statistics (defaults to --data).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output JSONL, one graph per instance.
    #[arg(long)]
    out: PathBuf,
    /// Also write one Graphviz file per instance into this directory.
    #[arg(long)]
    dot_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Train {
    /// Training JSONL.
    #[arg(long, required_unless_present = "list_keys")]
    data: Option<PathBuf>,
    /// Checkpoint directory (also receives metrics.jsonl).
    #[arg(long, required_unless_present = "list_keys")]
    out: Option<PathBuf>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set no_pseudo=true`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Random seed (falls back to the config file, then STYLED2T_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Print the accepted config keys and exit.
    #[arg(long)]
    list_keys: bool,
}

#[derive(Args)]
struct PlanCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Instances as JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Output JSONL with predicted plans.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Infer {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Instances as JSONL; `target` may be absent.
    #[arg(long)]
    data: PathBuf,
    /// Output JSONL with generated `target`.
    #[arg(long)]
    out: PathBuf,
    /// Desired style id; its reference is drawn from the training corpus.
    #[arg(long)]
    style: Option<usize>,
    /// Explicit reference text used for every instance.
    #[arg(long)]
    reference: Option<String>,
    /// Greedy decoding limit.
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// Seed for drawing references (falls back to STYLED2T_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GateCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Candidates as triplets: `target` is Y', `style_ref` is X', `style`
    /// is X''s label.
    #[arg(long)]
    candidates: PathBuf,
    /// Output JSONL of verdicts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test JSONL.
    #[arg(long)]
    test: PathBuf,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Greedy decoding limit.
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// Seed for reference selection (falls back to STYLED2T_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Stats {
    #[arg(long)]
    data: PathBuf,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigInvalid(_) => Failure::Usage(e.to_string()),
            Error::Io { .. } | Error::Checkpoint(_) => Failure::Data(e.to_string()),
            _ if e.is_data_error() => Failure::Data(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn seed_or_env(flag: Option<u64>, default: u64) -> Result<u64, Failure> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(default),
    })
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) -> Outcome {
    let mut s = String::new();
    for l in lines {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    write_file(path, &s)
}

fn gen_data(a: GenData) -> Outcome {
    let cfg = GeneratorConfig {
        per_style: a.per_style,
        attribute_pool: a.attribute_pool,
        min_pairs: a.min_pairs,
        max_pairs: a.max_pairs,
        swap_prob: a.swap_prob,
        template_noise: a.template_noise,
        seed: seed_or_env(a.seed, 7)?,
    };
    let all = generate_synthetic_corpus(&cfg)?;
    match (a.holdout, a.test_out) {
        (Some(n), Some(test_out)) => {
            if cfg.per_style.iter().any(|&c| c <= n) {
                return Err(Failure::Usage("--holdout must be smaller than every per-style count".into()));
            }
            let (train, test) = styled2t::corpus::synthetic::hold_out(all, n);
            write_jsonl(&a.out, &train)?;
            write_jsonl(&test_out, &test)?;
        }
        _ => write_jsonl(&a.out, &all)?,
    }
    Ok(())
}

fn graphs(a: BuildGraphs) -> Outcome {
    let data = read_jsonl(&a.data)?;
    let corpus = match &a.corpus {
        Some(p) => read_jsonl(p)?,
        None => data.clone(),
    };
    let texts: Vec<Vec<String>> = corpus.iter().filter_map(|t| t.target.clone()).collect();
    let instances: Vec<&[_]> = data.iter().map(|t| t.data.as_slice()).collect();
    let gs = build_graphs(&instances, &texts);
    let lines: Vec<_> = gs.iter().zip(&data).map(|(g, t)| g.to_json(&t.data)).collect();
    write_lines(&a.out, &lines)?;
    if let Some(dir) = a.dot_dir {
        fs::create_dir_all(&dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
        for (i, (g, t)) in gs.iter().zip(&data).enumerate() {
            write_file(&dir.join(format!("graph_{i:05}.dot")), &g.to_dot(&t.data))?;
        }
    }
    Ok(())
}

fn train(a: Train) -> Outcome {
    if a.list_keys {
        for (k, d) in config::KEYS {
            println!("{k:<22} {d}");
        }
        return Ok(());
    }
    let mut cfg = TrainConfig::default();
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
        config::apply_text(&mut cfg, &text)?;
    }
    for o in &a.overrides {
        config::apply_override(&mut cfg, o)?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (Some(data), Some(out)) = (&a.data, &a.out) else {
        return Err(Failure::Usage("--data and --out are required".into()));
    };
    let corpus = read_jsonl(data)?;
    let trained = training::train(&corpus, &cfg, Some(out))?;
    if let Some(last) = trained.metrics.last() {
        eprintln!(
            "trained {} steps; last L_gen {:.4}, total {:.4}, tau_rate {:.3}",
            last.step, last.losses.l_gen, last.losses.total, last.tau_rate
        );
    }
    Ok(())
}

fn plan(a: PlanCmd) -> Outcome {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let data = read_jsonl(&a.data)?;
    let enc = encode_corpus(&ckpt.model, &data, &ckpt.corpus)?;
    let mut lines = Vec::with_capacity(data.len());
    for (t, e) in data.iter().zip(&enc) {
        let p = ckpt.model.predict_plan(e)?;
        let gold = t.target.as_ref().and_then(|_| extract_plan(t).ok()).map(|p| p.order);
        lines.push(json!({
            "pairs": t.data.iter().map(|p| format!("{}={}", p.attribute.join(" "), p.value.join(" "))).collect::<Vec<_>>(),
            "plan": p.order,
            "gold_plan": gold,
        }));
    }
    write_lines(&a.out, &lines)
}

fn infer(a: Infer) -> Outcome {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let n_s = ckpt.model.config.num_styles;
    if matches!(a.style, Some(s) if s >= n_s) {
        return Err(Failure::Usage(format!("--style must be below {n_s}")));
    }
    let mut data = read_jsonl(&a.data)?;
    let seed = seed_or_env(a.seed, ckpt.config.seed)?;
    let explicit = a.reference.as_deref().map(tokenize);
    if matches!(&explicit, Some(r) if r.is_empty()) {
        return Err(Failure::Data(Error::EmptyReference.to_string()));
    }
    // the chosen reference and style replace each instance's own
    let mut pick = styled2t::evaluation::ReferencePicker::new(&ckpt.corpus, n_s, seed);
    for t in &mut data {
        match (&explicit, a.style) {
            (Some(r), s) => {
                t.style_ref = r.clone();
                t.style = s.unwrap_or_else(|| ckpt.gate.classifier.predict(r));
            }
            (None, Some(s)) => {
                t.style_ref = pick.draw(s)?;
                t.style = s;
            }
            (None, None) => {}
        }
        t.target = None;
    }
    let enc = encode_corpus(&ckpt.model, &data, &ckpt.corpus)?;
    let mut lines = Vec::with_capacity(data.len());
    for (t, e) in data.iter_mut().zip(&enc) {
        let g = ckpt.model.generate(e, &e.reference, e.style, a.max_len)?;
        t.target = Some(ckpt.model.vocab.decode(&g.decoded.tokens));
        let mut v = triplet_to_json(t);
        v["plan"] = json!(g.plan.order);
        v["truncated"] = json!(g.decoded.truncated);
        lines.push(v);
    }
    write_lines(&a.out, &lines)
}

fn gate(a: GateCmd) -> Outcome {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let cands = read_jsonl(&a.candidates)?;
    let mut lines = Vec::with_capacity(cands.len());
    for c in &cands {
        let y = c.target.as_deref().ok_or(Error::MissingTarget)?;
        let v = ckpt.gate.assign_confidence(y, &c.style_ref, Some(c.style), &c.data);
        lines.push(serde_json::to_value(&v).expect("verdict serializes"));
    }
    write_lines(&a.out, &lines)
}

fn evaluate(a: Evaluate) -> Outcome {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let test = read_jsonl(&a.test)?;
    let seed = seed_or_env(a.seed, ckpt.config.seed)?;
    let report = evaluation::evaluate(&ckpt, &test, seed, a.max_len)?;
    let p = &report.percent;
    eprintln!(
        "style accuracy {:.2}  coverage {:.2}  ROUGE-L {:.2}  BLEU-4 {:.2}",
        p.style_accuracy, p.coverage, p.rouge_l, p.bleu_4
    );
    write_file(&a.out, &serde_json::to_string_pretty(&report).expect("report serializes"))
}

fn stats(a: Stats) -> Outcome {
    let data = read_jsonl(&a.data)?;
    let n_s = data.iter().map(|t| t.style + 1).max().unwrap_or(0);
    let row = |ts: &[&Triplet]| {
        let n = ts.len().max(1) as f64;
        let pairs = ts.iter().map(|t| t.num_pairs()).sum::<usize>() as f64 / n;
        let len = ts.iter().map(|t| t.target.as_ref().map_or(0, Vec::len)).sum::<usize>() as f64 / n;
        (ts.len(), pairs, len)
    };
    let mut rows = Vec::new();
    for s in 0..n_s {
        let ts: Vec<&Triplet> = data.iter().filter(|t| t.style == s).collect();
        rows.push((format!("style {s}"), row(&ts)));
    }
    let all: Vec<&Triplet> = data.iter().collect();
    rows.push(("total".to_string(), row(&all)));
    let mut out = std::io::stdout().lock();
    let w = |e: std::io::Error| Failure::Runtime(format!("stdout: {e}"));
    if a.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(name, (n, p, l))| json!({"split": name, "samples": n, "avg_attr_val": p, "avg_len": l}))
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json")).map_err(w)?;
    } else {
        writeln!(out, "{:<10} {:>10} {:>15} {:>10}", "Style", "#Samples", "#Avg Attr-val", "#Avg Len").map_err(w)?;
        for (name, (n, p, l)) in &rows {
            writeln!(out, "{name:<10} {n:>10} {p:>15.2} {l:>10.2}").map_err(w)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::BuildGraphs(a) => graphs(a),
        Command::Train(a) => train(a),
        Command::Plan(a) => plan(a),
        Command::Infer(a) => infer(a),
        Command::Gate(a) => gate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, code, msg) = match f {
                Failure::Usage(m) => ("usage", 1, m),
                Failure::Data(m) => ("data", 2, m),
                Failure::Runtime(m) => ("runtime", 3, m),
            };
            eprintln!("styled2t: error[{kind}]: {msg}");
            ExitCode::from(code)
        }
    }
}
