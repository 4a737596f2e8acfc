//! The `bnne` toolchain: convert, run, verify and cost.
//!
//! Each subcommand is a plain function so tests can drive it without a
//! subprocess. Errors map to exit code 2; a verification mismatch is exit 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bnne_core::convert::convert;
use bnne_core::costmodel::{compare, GeConfig};
use bnne_core::format::{read_model, read_tensor, write_model, write_tensor, RawTensor};
use bnne_core::graph::{execute, validate, ExecOptions, NetworkGraph};
use bnne_core::oracle::{equivalence_campaign, verify_model, CampaignBounds};
use bnne_core::{Model, QuantTensor};
use clap::{Args, Parser, Subcommand};

/// Environment variable capping the worker count; 0 means one per core.
pub const THREADS_ENV: &str = "BNNE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "bnne", version, about = "Binary-weight inference engine emulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Binarize and fold a real-valued model into a .bnne container.
    Convert(ConvertArgs),
    /// Run a container on raw input tensors.
    Run(RunArgs),
    /// Check the engine against the reference implementation.
    Verify(VerifyArgs),
    /// Report modeled hardware cost and MAC counts.
    Cost(CostArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ConvertArgs {
    /// Graph description (JSON).
    #[arg(long)]
    pub graph: PathBuf,
    /// Little-endian f32 parameters in graph node order.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input tensor file, or NAME=FILE when the graph has several inputs.
    #[arg(long, required = true)]
    pub input: Vec<String>,
    /// Output tensor file, or NAME=FILE when the graph has several outputs.
    #[arg(long, short, required = true)]
    pub output: Vec<String>,
    /// Write the execution trace (JSON) here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Worker count; overrides BNNE_THREADS. 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// Check this container's layers on random inputs.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    pub model: Option<PathBuf>,
    /// Run the randomized single-layer campaign instead.
    #[arg(long)]
    pub builtin: bool,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save the full report (JSON) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CostArgs {
    /// Add a per-layer breakdown for this container.
    #[arg(long, conflicts_with = "graph")]
    pub model: Option<PathBuf>,
    /// Add a per-layer breakdown for this graph description.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub lanes: u64,
    /// Bit widths: `8`, `1..16`, `1..=16` or `1,2,4,8`.
    #[arg(long, default_value = "8")]
    pub bits: String,
    /// GE weights and architecture selection (JSON).
    #[arg(long)]
    pub ge_config: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Result of a successful command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// Text for stdout.
    pub text: String,
    /// False when a verification found a mismatch.
    pub passed: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, passed: true }
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Convert(a) => cmd_convert(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Cost(a) => cmd_cost(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn load_graph(path: &Path) -> Result<NetworkGraph> {
    let text = String::from_utf8(read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))?;
    NetworkGraph::from_json(&text).with_context(|| format!("parsing graph {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<Model> {
    read_model(&read(path)?).with_context(|| format!("loading model {}", path.display()))
}

/// Decodes a little-endian f32 blob.
pub fn parse_blob(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        bail!("weight blob length {} is not a multiple of 4", bytes.len());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<Outcome> {
    let graph = load_graph(&args.graph)?;
    let blob = parse_blob(&read(&args.weights)?)?;
    let model = convert(&graph, &blob).context("converting model")?;
    let bytes = write_model(&model)?;
    // the container must load back and re-derive every folded bias
    read_model(&bytes)?.check_folding().context("converter self-check")?;
    write(&args.output, &bytes)?;
    let layers = model.params().values().filter(|p| p.weights.is_some()).count();
    Ok(Outcome::ok(format!(
        "wrote {} ({} bytes, {} weight layers, {} parameters)\n",
        args.output.display(),
        bytes.len(),
        layers,
        blob.len()
    )))
}

/// Worker count from the flag, then the environment, then one per core.
pub fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v} is not a worker count")),
        Err(_) => Ok(0),
    }
}

fn bind<'a>(specs: &'a [String], names: &[&str], what: &str) -> Result<BTreeMap<String, &'a str>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), p),
            None if names.len() == 1 && specs.len() == 1 => (names[0].to_string(), spec.as_str()),
            None => bail!("graph has {} {what}s; give each as NAME=FILE", names.len()),
        };
        if !names.contains(&name.as_str()) {
            bail!("graph has no {what} named `{name}`");
        }
        if out.insert(name.clone(), path).is_some() {
            bail!("{what} `{name}` given twice");
        }
    }
    if let Some(missing) = names.iter().find(|n| !out.contains_key(**n)) {
        bail!("no file given for {what} `{missing}`");
    }
    Ok(out)
}

pub fn cmd_run(args: &RunArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let g = model.graph().graph();
    let input_names: Vec<&str> = g.inputs.iter().map(|i| i.name.as_str()).collect();
    let output_names: Vec<&str> = g.outputs.iter().map(|o| o.name.as_str()).collect();
    let mut inputs: BTreeMap<String, QuantTensor> = BTreeMap::new();
    for (name, path) in bind(&args.input, &input_names, "input")? {
        let raw = read_tensor(&read(Path::new(path))?).with_context(|| format!("reading tensor {path}"))?;
        let RawTensor::Quant(t) = raw else {
            bail!("input `{name}` holds accumulator values, expected activations");
        };
        inputs.insert(name, t);
    }
    let outputs = bind(&args.output, &output_names, "output")?;

    let opts = ExecOptions {
        threads: thread_count(args.threads)?,
        keep_intermediates: false,
    };
    let run = execute(&model, &inputs, &opts).context("executing model")?;
    let mut text = String::new();
    for (name, path) in outputs {
        let value = &run.outputs[&name];
        write(Path::new(path), &write_tensor(&RawTensor::from_value(value)?)?)?;
        text.push_str(&format!("{name}: {} -> {path}\n", value.dims()));
    }
    if let Some(path) = &args.trace {
        write(path, serde_json::to_string_pretty(&run.trace)?.as_bytes())?;
    }
    text.push_str(&format!(
        "{} nodes, {} MACs, {} worker(s)\n",
        run.trace.nodes.len(),
        run.trace.total_macs,
        run.trace.threads
    ));
    Ok(Outcome::ok(text))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<Outcome> {
    let (passed, json, text) = match &args.model {
        Some(path) => {
            let model = load_model(path)?;
            let r = verify_model(&model, args.seed, args.trials)?;
            let mut text = format!(
                "verified {} trial(s), {} node evaluations, max |diff| {}\n",
                r.trials, r.nodes_checked, r.max_abs_diff
            );
            if let Some(f) = &r.failure {
                text.push_str(&format!(
                    "MISMATCH in layer `{}` ({}), trial {}, seed {}: {}\n",
                    f.node, f.kind, f.trial, f.seed, f.detail
                ));
            }
            (r.passed(), serde_json::to_string_pretty(&r)?, text)
        }
        None => {
            let r = equivalence_campaign(args.seed, args.trials, &CampaignBounds::default());
            let mut text = format!(
                "campaign seed {}: {} trial(s), max |diff| {}, {} mismatch(es)\n",
                r.seed,
                r.trials,
                r.max_abs_diff,
                r.mismatches.len()
            );
            for (case, n) in &r.cases {
                text.push_str(&format!("  {case:<18} {n}\n"));
            }
            for m in &r.mismatches {
                text.push_str(&format!(
                    "MISMATCH {} trial {} seed {} layer `{}`: {}\n",
                    m.kind, m.trial, m.seed, m.node, m.detail
                ));
            }
            (r.passed(), serde_json::to_string_pretty(&r)?, text)
        }
    };
    if let Some(path) = &args.report {
        write(path, json.as_bytes())?;
    }
    Ok(Outcome { text, passed })
}

/// Parses `8`, `1..16`, `1..=16` or `1,2,8` (ranges are inclusive).
pub fn parse_bits(spec: &str) -> Result<Vec<u8>> {
    let spec = spec.trim();
    let bits: Vec<u8> = if let Some((a, b)) = spec.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (lo, hi): (u8, u8) = (a.trim().parse()?, b.trim().parse()?);
        if lo > hi {
            bail!("empty bit range {spec}");
        }
        (lo..=hi).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<u8>().map_err(|e| anyhow!("bad bit width `{s}`: {e}")))
            .collect::<Result<_>>()?
    };
    if let Some(b) = bits.iter().find(|&&b| b == 0 || b > bnne_core::tensor::MAX_BITS) {
        bail!("bit width {b} outside 1..={}", bnne_core::tensor::MAX_BITS);
    }
    Ok(bits)
}

pub fn cmd_cost(args: &CostArgs) -> Result<Outcome> {
    let bits = parse_bits(&args.bits)?;
    let ge = match &args.ge_config {
        Some(p) => {
            let text = String::from_utf8(read(p)?)?;
            GeConfig::from_json(&text).with_context(|| format!("GE config {}", p.display()))?
        }
        None => GeConfig::default(),
    };
    let graph = match (&args.model, &args.graph) {
        (Some(m), _) => Some(load_model(m)?.graph().clone()),
        (None, Some(g)) => Some(validate(&load_graph(g)?)?),
        (None, None) => None,
    };
    let report = compare(args.lanes, &bits, &ge, graph.as_ref())?;
    Ok(Outcome::ok(if args.json {
        report.to_json() + "\n"
    } else {
        report.to_text()
    }))
}
