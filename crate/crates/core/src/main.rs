use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use onsensor_cs::codec::CodecMode;
use onsensor_cs::image::{self, Format};
use onsensor_cs::pipeline::{
    compression_ratio_for, estimate_power, run_pipeline, sweep, PipelineConfig, PowerModel, RunReport, SweepGrid,
};
use onsensor_cs::pixel::{
    fit_weight, junction_capacitance, pixel_response, simulate_weight_grid, PhotodiodeParams, PixelResponseModel,
};
use onsensor_cs::reconstruct::{spl_reconstruct, SplConfig};
use onsensor_cs::sampler::{load_sampled, sample, save_sampled, SamplingKind, SamplingSpec};
use onsensor_cs::transforms::Basis;
use onsensor_cs::{Error, Result};

/// On-sensor compressed sampling simulator.
#[derive(Parser)]
#[command(name = "onsensor-cs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an 8-bit PGM and write the measurement as raw + sidecar.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "non_binary")]
        kind: SamplingKind,
        #[arg(long, default_value_t = 0)]
        truncated_bits: u8,
    },
    /// Reconstruct an 8-bit image from a stored measurement.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        spl: SplArgs,
        /// Write the per-iteration trace (iteration, D, residual) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print PSNR against this 8-bit PGM.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run the full chain on one configuration.
    Run(RunArgs),
    /// Run a grid of qualities, bit depths and sampling kinds.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated qualities; `lossless` allowed.
        #[arg(long, value_delimiter = ',', default_value = "lossless,100,85,75,60,50,40,30,20")]
        qualities: Vec<CodecMode>,
        /// Comma-separated stored measurement depths.
        #[arg(long, value_delimiter = ',', default_value = "12,11,10,9,8,7,6,5")]
        bitdepths: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "binary,non_binary")]
        kinds: Vec<SamplingKind>,
    },
    /// Readout power with on-chip compression.
    Power {
        #[arg(long, value_enum, default_value = "design1")]
        design: Design,
        /// Compression ratio in [0, 1).
        #[arg(long, conflicts_with = "bitdepth")]
        cr: Option<f64>,
        /// Derive the compression ratio from the stored measurement depth.
        #[arg(long)]
        bitdepth: Option<u8>,
    },
    /// Photodiode and pixel response utilities.
    PixelModel {
        #[command(subcommand)]
        what: PixelCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Design1,
    Design2,
}

#[derive(Subcommand)]
enum PixelCommand {
    /// Junction capacitance in fF.
    Capacitance {
        /// key=value parameter file; the reference diode when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Pixel output voltage for two photocurrents in fA.
    Response {
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        p2: f64,
    },
    /// Fit the quadratic response over the 10 x 10 sweep and report the weight.
    FitWeight,
}

#[derive(Args, Clone)]
struct SplArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Consecutive iterations that must meet epsilon.
    #[arg(long)]
    patience: Option<usize>,
    /// `ddwt` or `dwt`.
    #[arg(long)]
    basis: Option<Basis>,
    #[arg(long)]
    levels: Option<usize>,
}

impl SplArgs {
    fn apply(&self, cfg: &mut SplConfig) {
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.basis {
            cfg.basis = v;
        }
        if let Some(v) = self.levels {
            cfg.levels = Some(v);
        }
    }
}

/// Flags mirror the config-file keys and override them.
#[derive(Args, Clone)]
struct RunArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input image; repeat for several.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    kind: Option<SamplingKind>,
    #[arg(long)]
    truncated_bits: Option<u8>,
    /// `lossless` or a quality 1..=100.
    #[arg(long)]
    codec: Option<CodecMode>,
    #[command(flatten)]
    spl: SplArgs,
    #[arg(long)]
    fpn_column_offset_sigma: Option<f64>,
    #[arg(long)]
    fpn_pixel_gain_sigma: Option<f64>,
    #[arg(long)]
    fpn_seed: Option<u64>,
    #[arg(long)]
    fpn_calibrate: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        if let Some(v) = self.kind {
            cfg.kind = v;
        }
        if let Some(v) = self.truncated_bits {
            cfg.truncated_bits = v;
        }
        if let Some(v) = self.codec {
            cfg.codec = v;
        }
        self.spl.apply(&mut cfg.spl);
        if let Some(v) = self.fpn_column_offset_sigma {
            cfg.fpn.column_offset_sigma = v;
        }
        if let Some(v) = self.fpn_pixel_gain_sigma {
            cfg.fpn.pixel_gain_sigma = v;
        }
        if let Some(v) = self.fpn_seed {
            cfg.fpn.seed = v;
        }
        cfg.fpn_calibrate |= self.fpn_calibrate;
        if let Some(v) = &self.output_dir {
            cfg.output_dir = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(report: &RunReport) {
    println!(
        "{} q={} {}-bit  on-chip {}%  size {:.2}%  PSNR {} dB",
        report.kind,
        report.quality,
        report.bitdepth,
        report.onchip_compression,
        report.mean_normalized_size(),
        report.mean_psnr()
    );
    for r in &report.rows {
        println!(
            "  {:<24} size {:>8.2}%  PSNR {:>8} dB  {} iters{}",
            r.image,
            r.normalized_size,
            r.psnr.to_string(),
            r.iterations,
            if r.converged { "" } else { " (not converged)" }
        );
    }
}

fn load_pgm(path: &Path) -> Result<image::Image> {
    image::load_image(path, Format::Pgm8).map_err(|e| e.context(path.display().to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample {
            input,
            output,
            kind,
            truncated_bits,
        } => {
            let img = load_pgm(&input)?;
            let y = sample(&img, &SamplingSpec::of_kind(kind)?)?.truncate(truncated_bits)?;
            save_sampled(&y, &output)?;
            println!(
                "{}x{} measurement, {} bits, on-chip compression {}%",
                y.width(),
                y.height(),
                y.bit_depth(),
                onsensor_cs::sampler::onchip_compression(y.bit_depth())?
            );
        }
        Command::Reconstruct {
            input,
            output,
            spl,
            trace,
            reference,
        } => {
            let y = load_sampled(&input)?;
            let mut cfg = SplConfig::default();
            spl.apply(&mut cfg);
            let (x, tr) = spl_reconstruct(&y, &cfg)?;
            image::save_image(&x, &output, Format::Pgm8)?;
            if let Some(t) = trace {
                tr.write_csv(&t)?;
            }
            println!("{} iterations, converged: {}", tr.iterations(), tr.converged);
            if let Some(r) = reference {
                println!("PSNR {} dB", image::psnr(&load_pgm(&r)?, &x)?);
            }
        }
        Command::Run(args) => print_report(&run_pipeline(&args.config()?)?),
        Command::Sweep {
            run,
            qualities,
            bitdepths,
            kinds,
        } => {
            let mut base = run.config_for_sweep()?;
            base.truncated_bits = 0;
            let grid = SweepGrid {
                qualities,
                bitdepths,
                kinds,
            };
            let out = sweep(&base, &grid)?;
            for r in &out.reports {
                print_report(r);
            }
            for f in &out.failures {
                eprintln!("skipped {} q={} {}-bit: {}", f.kind, f.quality, f.bitdepth, f.error);
            }
        }
        Command::Power { design, cr, bitdepth } => {
            let model = match design {
                Design::Design1 => PowerModel::design1(),
                Design::Design2 => PowerModel::design2(),
            };
            let cr = match (cr, bitdepth) {
                (Some(c), _) => c,
                (None, Some(d)) => compression_ratio_for(d)?,
                (None, None) => 0.0,
            };
            let b = estimate_power(&model, cr)?;
            println!("compression ratio {:.4}", b.compression_ratio);
            for (c, mw) in &b.categories {
                println!("  {:<6} {:>9.3} mW  (baseline {:.3})", c.to_string(), mw, model.get(*c));
            }
            println!("  total  {:>9.3} mW  (baseline {:.3})", b.total, b.baseline_total);
            println!("savings {:.2}%", b.savings_pct);
        }
        Command::PixelModel { what } => match what {
            PixelCommand::Capacitance { params } => {
                let p = match params {
                    Some(path) => PhotodiodeParams::load(&path)?,
                    None => PhotodiodeParams::reference_design(),
                };
                println!("{:.4} fF", junction_capacitance(&p)?);
            }
            PixelCommand::Response { p1, p2 } => {
                println!("{:.6} V", pixel_response(p1, p2, &PixelResponseModel::fitted()));
            }
            PixelCommand::FitWeight => {
                let fit = fit_weight(&simulate_weight_grid(&PixelResponseModel::fitted()))?;
                println!("coefficients {:?}", fit.coeffs);
                println!("weight {:.5}", fit.weight);
            }
        },
    }
    Ok(())
}

impl RunArgs {
    /// Like [`RunArgs::config`] but truncation comes from the grid.
    fn config_for_sweep(&self) -> Result<PipelineConfig> {
        let mut args = self.clone();
        args.truncated_bits = Some(0);
        args.config()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        2
    } else {
        1
    }
}
