use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dynvox::iou::{iou3d, iou3d_grad};
use dynvox::losses::{evaluate_records, LossEvalInput};
use dynvox::pipeline::{bench, read_kitti_bin, run_forward, synth_scene, BenchConfig, ModelWeights, PipelineConfig};
use dynvox::verification::{run_suite, SuiteConfig};
use dynvox::{OrientedBox, PointCloud};

#[derive(Parser)]
#[command(
    name = "dynvox",
    version,
    about = "Point-cloud detection kernels: forward pass, benchmarks and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the detector on a KITTI scan or a synthetic scene.
    Forward {
        /// KITTI `.bin` path, or `synthetic:<points>[:<boxes>]`.
        #[arg(long)]
        input: String,
        /// TOML configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Weight blob; without it weights are seeded-random.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        deterministic: Option<bool>,
        /// Write proposals and report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print only the timing report.
        #[arg(long)]
        report_only: bool,
    },
    /// Write seeded-random weights shaped for a configuration.
    InitWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time downsampling and voxelization over a size sweep.
    Bench {
        /// Comma-separated ascending point counts.
        #[arg(long, value_delimiter = ',', default_value = "10000,31623,100000,316228,1000000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 3D IoU for box pairs, one pair of 7-tuples per line.
    Iou {
        /// Input file; standard input when omitted or `-`.
        input: Option<PathBuf>,
        /// Append the 14-entry loss gradient and a smoothness flag.
        #[arg(long)]
        grad: bool,
    },
    /// Evaluate stage losses from a JSON assignment file.
    EvalLosses { file: PathBuf },
    /// Run every oracle comparison and print a pass/fail summary.
    Verify {
        /// Use the full acceptance sample sizes.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_input(source: &str, seed: u64) -> Result<PointCloud> {
    if let Some(rest) = source.strip_prefix("synthetic:") {
        let mut parts = rest.split(':');
        let n: usize = parts
            .next()
            .unwrap_or_default()
            .parse()
            .context("synthetic point count")?;
        let boxes: usize = match parts.next() {
            Some(b) => b.parse().context("synthetic box count")?,
            None => 10,
        };
        return Ok(synth_scene(n, boxes, seed).0);
    }
    Ok(read_kitti_bin(Path::new(source))?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn parse_pair(line: &str) -> Result<Option<(OrientedBox, OrientedBox)>> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let vals = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != 14 {
        bail!("expected 14 values, got {}", vals.len());
    }
    let p = OrientedBox::from_params(std::array::from_fn(|i| vals[i]))?;
    let g = OrientedBox::from_params(std::array::from_fn(|i| vals[7 + i]))?;
    Ok(Some((p, g)))
}

fn iou_stream(input: Option<&Path>, grad: bool) -> Result<()> {
    let reader: Box<dyn BufRead> = match input {
        Some(p) if p != Path::new("-") => Box::new(BufReader::new(
            std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        _ => Box::new(std::io::stdin().lock()),
    };
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    write!(out, "iou,loss")?;
    if grad {
        write!(out, ",smooth")?;
        for side in ["p", "g"] {
            for name in ["x", "y", "z", "w", "l", "h", "r"] {
                write!(out, ",d_{name}_{side}")?;
            }
        }
    }
    writeln!(out)?;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let Some((p, g)) = parse_pair(&line).with_context(|| format!("line {}", n + 1))? else {
            continue;
        };
        if grad {
            let r = iou3d_grad(&p, &g);
            write!(out, "{},{},{}", r.iou3d, r.loss, r.smooth)?;
            for v in r.grad {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        } else {
            let r = iou3d(&p, &g);
            writeln!(out, "{},{}", r.iou3d, r.loss)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Forward {
            input,
            config,
            weights,
            seed,
            threads,
            deterministic,
            out,
            report_only,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.threads = threads.unwrap_or(cfg.threads);
            cfg.deterministic = deterministic.unwrap_or(cfg.deterministic);
            cfg.validate()?;
            let model = match &weights {
                Some(p) => ModelWeights::load(p, &cfg).with_context(|| format!("loading weights {}", p.display()))?,
                None => ModelWeights::init(&cfg, cfg.seed),
            };
            let cloud = load_input(&input, cfg.seed)?;
            let result = run_forward(&cloud, &cfg, &model)?;
            let text = if report_only {
                serde_json::to_string_pretty(&result.report)?
            } else {
                serde_json::to_string_pretty(&result)?
            };
            emit(&text, out.as_deref())?;
        }
        Command::InitWeights { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            ModelWeights::init(&cfg, seed).save(&out)?;
        }
        Command::Bench {
            sizes,
            repeats,
            threads,
            out,
        } => {
            let cfg = BenchConfig {
                threads,
                ..Default::default()
            };
            let table = bench(&cfg, &sizes, repeats)?;
            emit(&serde_json::to_string_pretty(&table)?, out.as_deref())?;
        }
        Command::Iou { input, grad } => iou_stream(input.as_deref(), grad)?,
        Command::EvalLosses { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let input: LossEvalInput = serde_json::from_str(&text).context("parsing assignment file")?;
            println!("{}", serde_json::to_string_pretty(&evaluate_records(&input)?)?);
        }
        Command::Verify { full, seed } => {
            let mut cfg = SuiteConfig {
                seed,
                ..Default::default()
            };
            if full {
                cfg.iou_pairs = 1000;
                cfg.polygon_pairs = 10_000;
                cfg.neighbor_instances = 200;
            }
            let results = run_suite(&cfg);
            for r in &results {
                println!("{}  {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
