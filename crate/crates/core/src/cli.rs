//! Command-line front end. Every subcommand reads and writes files in the
//! crate's formats; failures are reported as one JSON object on stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::aggregate::{aggregate, AggregationInput};
use crate::error::{Error, Result};
use crate::flow::{bilinear_warp, correlation, CorrConfig, FlowMap};
use crate::gradcheck::{run_suite, DEFAULT_SEEDS};
use crate::harness::report::{curve_csv, curve_svg, summary_csv};
use crate::harness::{generate_synthetic, train_iff, SynthSpec, TrainConfig, TrainingReport};
use crate::iff::{IffConfig, IffModule, Variant};
use crate::io::{read_checkpoint, read_ftz, write_checkpoint, write_ftz};
use crate::seqnms::{seqnms, Detection, RescoreOp, SeqNmsConfig, SeqNmsVariant};
use crate::trl::{trl_forward, TrlConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "featflow", version, about = "Feature-flow estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Warp a feature map by a flow field (bilinear, zero padding).
    Warp {
        #[arg(long)]
        feature: PathBuf,
        /// Two-channel flow (dx, dy).
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation volume between two feature maps.
    Corr {
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        neighbor: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_displacement: usize,
        #[arg(long, default_value_t = 2)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Create a flow module checkpoint with seeded initial weights.
    IffInit {
        #[arg(long, value_enum, default_value_t = VariantArg::Advanced)]
        variant: VariantArg,
        #[arg(long, value_enum, default_value_t = SizeArg::Toy)]
        size: SizeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict flow for a (current, neighbor) feature pair.
    IffForward {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        neighbor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a checkpoint on a synthetic sequence with the residual loss.
    IffTrain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// SynthSpec key=value file; defaults to a (2, 0) shift of blobs.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        temporal_radius: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        trl: TrlArgs,
        /// Trained checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Training report (JSON), input to `report`.
        #[arg(long)]
        log: PathBuf,
    },
    /// Residual loss of a feature pair under a flow; prints the scalar.
    Trl {
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        neighbor: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[command(flatten)]
        trl: TrlArgs,
    },
    /// Cosine-softmax aggregation of the current frame and warped neighbors.
    Aggregate {
        #[arg(long)]
        current: PathBuf,
        /// Already-warped neighbor features; repeat for several.
        #[arg(long = "neighbor")]
        neighbors: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequence-level rescoring of per-frame detections (JSON in/out).
    Seqnms {
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SeqVariantArg::Plus)]
        variant: SeqVariantArg,
        #[arg(long, default_value_t = 0.5)]
        link_iou: f64,
        #[arg(long, default_value_t = 0.3)]
        nms_iou: f64,
        /// Rescoring for the original variant.
        #[arg(long, value_enum, default_value_t = RescoreArg::Mean)]
        rescore: RescoreArg,
    },
    /// Finite-difference check of every backward pass; exit 0 iff all pass.
    Gradcheck {
        /// Override the per-check tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
    },
    /// Generate a synthetic sequence: frames and ground-truth flows as FTZ.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Training curve and endpoint-error summary as CSV and SVG.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Basic,
    Advanced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SizeArg {
    Toy,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SeqVariantArg {
    Plus,
    Original,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RescoreArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, Args)]
struct TrlArgs {
    #[arg(long, default_value_t = 0.65)]
    trl_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    trl_delta: f64,
}

impl TrlArgs {
    fn config(&self) -> Result<TrlConfig> {
        let cfg = TrlConfig {
            lambda: self.trl_lambda,
            smooth_l1_delta: self.trl_delta,
            ..TrlConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Usage(String),
    Invalid { kind: &'static str, message: String },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => Failure::Usage(io.to_string()),
            other => Failure::Invalid {
                kind: other.kind(),
                message: other.to_string(),
            },
        }
    }
}

fn io_context(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| match e {
        Error::Io(io) => Failure::Usage(format!("{}: {io}", path.display())),
        other => Failure::from(other),
    }
}

fn load(path: &Path) -> Result<crate::tensor::Tensor, Failure> {
    read_ftz(path).map_err(io_context(path))
}

fn load_spec(path: Option<&Path>) -> Result<SynthSpec, Failure> {
    match path {
        None => Ok(SynthSpec::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            Ok(SynthSpec::parse_kv(&text)?)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return EXIT_USAGE;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(message)) => {
            eprintln!("{}", json!({"error": "usage", "message": message}));
            EXIT_USAGE
        }
        Err(Failure::Invalid { kind, message }) => {
            eprintln!("{}", json!({"error": kind, "message": message}));
            EXIT_INVALID
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Warp { feature, flow, out } => {
            let feature = load(&feature)?;
            let flow = FlowMap::from_tensor(load(&flow)?)?;
            write_ftz(&out, &bilinear_warp(&feature, &flow)?).map_err(io_context(&out))
        }
        Command::Corr {
            current,
            neighbor,
            max_displacement,
            stride,
            out,
        } => {
            let cfg = CorrConfig::new(max_displacement, stride)?;
            let vol = correlation(&load(&current)?, &load(&neighbor)?, &cfg)?;
            write_ftz(&out, &vol).map_err(io_context(&out))
        }
        Command::IffInit {
            variant,
            size,
            seed,
            out,
        } => {
            let variant = match variant {
                VariantArg::Basic => Variant::Basic,
                VariantArg::Advanced => Variant::Advanced,
            };
            let config = match size {
                SizeArg::Toy => IffConfig::toy(variant),
                SizeArg::Full => IffConfig::full(variant),
            };
            let module = IffModule::build(config, seed)?;
            write_checkpoint(&out, &module).map_err(io_context(&out))
        }
        Command::IffForward {
            checkpoint,
            current,
            neighbor,
            out,
        } => {
            let module = read_checkpoint(&checkpoint).map_err(io_context(&checkpoint))?;
            let flow = module.forward(&load(&current)?, &load(&neighbor)?)?;
            write_ftz(&out, flow.as_tensor()).map_err(io_context(&out))
        }
        Command::IffTrain {
            checkpoint,
            spec,
            steps,
            lr,
            temporal_radius,
            seed,
            trl,
            out,
            log,
        } => {
            let mut module = read_checkpoint(&checkpoint).map_err(io_context(&checkpoint))?;
            let spec = load_spec(spec.as_deref())?;
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")).into());
            }
            let cfg = TrainConfig {
                steps,
                lr,
                trl: trl.config()?,
                temporal_radius,
                seed,
                ..TrainConfig::default()
            };
            let report = train_iff(&mut module, &spec, &cfg)?;
            write_checkpoint(&out, &module).map_err(io_context(&out))?;
            write_text(&log, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))
        }
        Command::Trl {
            current,
            neighbor,
            flow,
            trl,
        } => {
            let flow = FlowMap::from_tensor(load(&flow)?)?;
            let loss = trl_forward(&load(&current)?, &load(&neighbor)?, &flow, &trl.config()?)?;
            println!("{loss}");
            Ok(())
        }
        Command::Aggregate {
            current,
            neighbors,
            out,
        } => {
            let warped = neighbors.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
            let input = AggregationInput::new(load(&current)?, warped)?;
            write_ftz(&out, &aggregate(&input)?).map_err(io_context(&out))
        }
        Command::Seqnms {
            input,
            output,
            variant,
            link_iou,
            nms_iou,
            rescore,
        } => {
            let text = fs::read_to_string(&input).map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
            let dets: Vec<Detection> = serde_json::from_str(&text).map_err(Error::from)?;
            for d in &dets {
                d.validate()?;
            }
            let cfg = SeqNmsConfig {
                link_iou,
                nms_iou,
                variant: match variant {
                    SeqVariantArg::Plus => SeqNmsVariant::Plus,
                    SeqVariantArg::Original => SeqNmsVariant::Original,
                },
                rescore_op: match rescore {
                    RescoreArg::Mean => RescoreOp::Mean,
                    RescoreArg::Max => RescoreOp::Max,
                },
            };
            cfg.validate()?;
            let json = serde_json::to_string_pretty(&seqnms(&dets, &cfg)).map_err(Error::from)? + "\n";
            match output {
                Some(path) => write_text(&path, &json),
                None => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
        Command::Gradcheck { tol, seeds } => {
            if let Some(t) = tol {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Failure::Usage(format!("--tol must be positive, got {t}")));
                }
            }
            let results = run_suite(seeds, tol)?;
            for r in &results {
                println!(
                    "{}",
                    json!({"check": r.name, "max_error": r.max_error, "tolerance": r.tolerance, "seeds": r.seeds, "passed": r.passed()})
                );
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Invalid {
                    kind: "tolerance_breach",
                    message: format!("gradient checks failed: {}", failed.join(", ")),
                })
            }
        }
        Command::Synth { spec, out_dir } => {
            let spec = load_spec(spec.as_deref())?;
            let data = generate_synthetic(&spec)?;
            fs::create_dir_all(&out_dir).map_err(|e| Failure::Usage(format!("{}: {e}", out_dir.display())))?;
            write_text(&out_dir.join("spec.kv"), &spec.to_kv())?;
            for (t, frame) in data.frames.iter().enumerate() {
                let p = out_dir.join(format!("frame_{t:03}.ftz"));
                write_ftz(&p, frame).map_err(io_context(&p))?;
            }
            for (t, flow) in data.gt_flows.iter().enumerate() {
                let p = out_dir.join(format!("flow_{t:03}.ftz"));
                write_ftz(&p, flow.as_tensor()).map_err(io_context(&p))?;
            }
            Ok(())
        }
        Command::Report { log, out_dir } => {
            let text = fs::read_to_string(&log).map_err(|e| Failure::Usage(format!("{}: {e}", log.display())))?;
            let report: TrainingReport = serde_json::from_str(&text).map_err(Error::from)?;
            fs::create_dir_all(&out_dir).map_err(|e| Failure::Usage(format!("{}: {e}", out_dir.display())))?;
            write_text(&out_dir.join("curve.csv"), &curve_csv(&report))?;
            write_text(&out_dir.join("summary.csv"), &summary_csv(&report))?;
            write_text(&out_dir.join("curve.svg"), &curve_svg(&report))
        }
    }
}
