use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use decn::pipeline::experiment::{self, save_dataset, sweep_table2};
use decn::pipeline::io::{self, Dtype};
use decn::pipeline::{load_dataset, run_evaluation, run_reconstruction, run_training, ExperimentConfig};
use decn::{Error, Result};

/// Compressed-sensing MRI reconstruction with guided error correction.
#[derive(Parser, Debug)]
#[command(name = "decn", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set mask.ratio=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Shorthand for `--set output_dir=...`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Training seed (`train.seed`).
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom dataset into a directory.
    Phantoms {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Dataset seed (`dataset.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Also write magnitude previews.
        #[arg(long)]
        pgm: bool,
    },
    /// Generate the configured sampling mask.
    Mask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Train the guide (if trainable) and the error-correction network.
    Train(SeedArg),
    /// Reconstruct one natural-order k-space file with trained weights.
    Reconstruct {
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Full-sampled reference image for scoring.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "f32")]
        dtype: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score guide and full reconstruction on the test split.
    Evaluate(SeedArg),
    /// Run a preset sweep.
    Sweep {
        /// Preset name; only `tableII` exists.
        preset: String,
        #[arg(long)]
        seed: u64,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))
        })
        .collect()
}

fn load_config(cli: &Cli, extra: Vec<(String, String)>) -> Result<ExperimentConfig> {
    let mut overrides = parse_overrides(&cli.overrides)?;
    if let Some(dir) = &cli.output_dir {
        overrides.push(("output_dir".into(), format!("{:?}", dir.display().to_string())));
    }
    overrides.extend(extra);
    match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::from_toml_with("", &overrides),
    }
}

fn seed_override(key: &str, seed: Option<u64>) -> Vec<(String, String)> {
    seed.map(|s| vec![(key.to_string(), s.to_string())]).unwrap_or_default()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantoms { out, count, seed, pgm } => {
            let mut extra = seed_override("dataset.seed", *seed);
            if let Some(c) = count {
                extra.push(("dataset.count".into(), c.to_string()));
            }
            let mut cfg = load_config(cli, extra)?;
            cfg.dataset.path = None;
            let data = load_dataset(&cfg)?;
            save_dataset(out, &data)?;
            if *pgm {
                for (i, img) in data.images.iter().enumerate() {
                    io::save_magnitude_pgm(&out.join(format!("{}.pgm", experiment::image_id(i))), img)?;
                }
            }
            println!(
                "wrote {} phantoms ({} train / {} test) to {}",
                data.images.len(),
                data.split.train.len(),
                data.split.test.len(),
                out.display()
            );
        }
        Command::Mask { out, pgm } => {
            let cfg = load_config(cli, Vec::new())?;
            let mask = cfg.mask.build(cfg.dataset.height, cfg.dataset.width)?;
            io::save_mask(out, &mask)?;
            if let Some(p) = pgm {
                let values: Vec<f64> = mask.centered().iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
                io::write_pgm(p, mask.height(), mask.width(), &values, 0.0, 1.0)?;
            }
            println!("{} of {} samples kept ({:.4})", mask.count(), mask.height() * mask.width(), mask.ratio());
        }
        Command::Train(SeedArg { seed }) => {
            let cfg = load_config(cli, seed_override("train.seed", Some(*seed)))?;
            let data = load_dataset(&cfg)?;
            let artifacts = run_training(&cfg, &data)?;
            println!(
                "trained {} ({} parameters): loss {} -> {}",
                cfg.ecnet.ablation.name(),
                artifacts.ecnet.num_params(),
                artifacts.history.first().unwrap_or(f64::NAN),
                artifacts.history.last().unwrap_or(f64::NAN)
            );
        }
        Command::Reconstruct {
            kspace,
            mask,
            out,
            reference,
            dtype,
            seed,
        } => {
            let cfg = load_config(cli, seed_override("train.seed", *seed))?;
            let dtype: Dtype = dtype.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let y = io::load_kspace(kspace)?;
            let mask = io::load_mask(mask)?;
            let y = decn::sampling::apply_mask(&y, &mask)?;
            let reference = reference.as_deref().map(io::load_image).transpose()?;
            let (rec, score) = run_reconstruction(&cfg, &y, &mask, reference.as_ref())?;
            io::save_image(out, &rec.image, dtype)?;
            match score {
                Some(s) => println!("psnr {} dB, ssim {}", s.psnr_db, s.ssim),
                None => println!("wrote {}", out.display()),
            }
        }
        Command::Evaluate(SeedArg { seed }) => {
            let cfg = load_config(cli, seed_override("train.seed", Some(*seed)))?;
            let data = load_dataset(&cfg)?;
            let report = run_evaluation(&cfg, &data)?;
            let (g, d) = (report.mean_guide(), report.mean_decn());
            println!(
                "{} test images: guide {} dB / {}, decn {} dB / {}",
                report.rows.len(),
                g.psnr_db,
                g.ssim,
                d.psnr_db,
                d.ssim
            );
        }
        Command::Sweep { preset, seed } => {
            if preset != "tableII" {
                return Err(Error::Config(format!("unknown sweep preset `{preset}` (expected tableII)")));
            }
            let cfg = load_config(cli, seed_override("train.seed", Some(*seed)))?;
            let data = load_dataset(&cfg)?;
            let results = sweep_table2(&cfg, &data)?;
            print!("{}", experiment::summary_csv(&results));
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
