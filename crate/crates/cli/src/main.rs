use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use infraplace_core::{Evaluator, PipelineError};
use infraplace_io::heatmap::{HeatmapLayer, HeatmapSlice, HeatmapSource};
use infraplace_io::{compare_csv, load_map, load_scenario, sniff_kind, sweep_csv, DocError, DocKind, ReportFormat, Scenario};

/// Scores roadside camera and LiDAR placements on a voxelized intersection.
#[derive(Parser)]
#[command(name = "infraplace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one scenario and print its report.
    Evaluate {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario's output format.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Evaluate several placements and rank them by fused score.
    Compare {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a scenario with one setting varied.
    Sweep {
        scenario: PathBuf,
        /// Dotted path, e.g. units[0].sensors[0].yaw_deg
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a bird's-eye PGM of visibility, occupancy or occlusion frequency.
    Heatmap {
        scenario: PathBuf,
        /// Height layer index, or "max" for the column maximum.
        #[arg(long, default_value = "max")]
        layer: String,
        /// visibility | occupancy | occlusion
        #[arg(long, default_value = "visibility")]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a map or scenario document.
    Validate { file: PathBuf },
    /// Run the local HTTP service.
    Serve {
        #[arg(long, default_value_t = 8321)]
        port: u16,
        /// Directory of map documents to offer.
        #[arg(long, default_value = "data/maps")]
        maps: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<DocError> for Failure {
    fn from(e: DocError) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Failure::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Failure::Runtime(format!("writing output: {e}")))
        }
    }
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

/// Scenarios sharing map, ROI and traffic reuse one evaluator.
fn same_scene(a: &Scenario, b: &Scenario) -> bool {
    a.map_doc == b.map_doc && a.roi == b.roi && a.traffic == b.traffic
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Evaluate { scenario, out, format } => {
            let s = load_scenario(&scenario)?;
            let (_, evaluation) = s.evaluate()?;
            warn(&evaluation.report.warnings);
            let format = format.map(ReportFormat::from).or(s.doc.output.format).unwrap_or_default();
            write_out(out.as_deref(), format.render(&evaluation.report).as_bytes())
        }
        Command::Compare { scenarios, out } => {
            let loaded = scenarios.iter().map(|p| load_scenario(p)).collect::<Result<Vec<_>, _>>()?;
            let mut evaluator: Option<(usize, Evaluator)> = None;
            let mut rows = Vec::with_capacity(loaded.len());
            for (n, s) in loaded.iter().enumerate() {
                let reuse = matches!(&evaluator, Some((k, _)) if same_scene(&loaded[*k], s));
                if !reuse {
                    evaluator = Some((n, s.evaluator()?));
                }
                let (_, ev) = evaluator.as_ref().unwrap();
                let evaluation = ev.evaluate(&s.placement, &s.weights)?;
                warn(&evaluation.report.warnings);
                rows.push((s.name().to_string(), evaluation.report));
            }
            write_out(out.as_deref(), compare_csv(&rows).as_bytes())
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out,
        } => {
            let s = load_scenario(&scenario)?;
            let variants = infraplace_io::sweep::sweep(&s, &param, &values)?;
            let mut evaluator: Option<(usize, Evaluator)> = None;
            let mut rows = Vec::with_capacity(variants.len());
            for (n, (value, v)) in variants.iter().enumerate() {
                let reuse = matches!(&evaluator, Some((k, _)) if same_scene(&variants[*k].1, v));
                if !reuse {
                    evaluator = Some((n, v.evaluator()?));
                }
                let (_, ev) = evaluator.as_ref().unwrap();
                let evaluation = ev.evaluate(&v.placement, &v.weights)?;
                rows.push((value.clone(), evaluation.report));
            }
            write_out(out.as_deref(), sweep_csv(&param, &rows).as_bytes())
        }
        Command::Heatmap {
            scenario,
            layer,
            source,
            out,
        } => {
            let layer = HeatmapLayer::parse(&layer)
                .ok_or_else(|| Failure::Invalid(format!("--layer: expected an index or \"max\", got {layer:?}")))?;
            let source = HeatmapSource::parse(&source).ok_or_else(|| {
                Failure::Invalid(format!("--source: expected visibility, occupancy or occlusion, got {source:?}"))
            })?;
            let s = load_scenario(&scenario)?;
            let (evaluator, evaluation) = s.evaluate()?;
            warn(&evaluation.report.warnings);
            let slice = HeatmapSlice::from_evaluation(evaluator.grid(), &evaluation, source, layer)?;
            write_out(Some(&out), &slice.to_pgm())
        }
        Command::Validate { file } => {
            let text = std::fs::read_to_string(&file).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Failure::Runtime(format!("file not found: {}", file.display()))
                } else {
                    Failure::Runtime(format!("reading {}: {e}", file.display()))
                }
            })?;
            match sniff_kind(&text).map_err(|e| e.in_file(&file))? {
                DocKind::Map => {
                    let (_, map) = load_map(&file)?;
                    println!(
                        "ok: map with {} regions and {} lanes",
                        map.regions().len(),
                        map.lanes().len()
                    );
                }
                DocKind::Scenario => {
                    let s = load_scenario(&file)?;
                    println!(
                        "ok: scenario {:?} with {} sensors",
                        s.name(),
                        s.placement.sensors().count()
                    );
                }
            }
            Ok(())
        }
        Command::Serve { port, maps } => {
            eprintln!("serving {} on http://127.0.0.1:{port}", maps.display());
            infraplace_service::serve_blocking(port, maps).map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("PLACEMENT_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
