use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glandseg::config::{ExperimentConfig, KEYS};
use glandseg::dataset::{patchify, write_synth};
use glandseg::experiment::{evaluate_checkpoint, evaluate_predictions, predict_file};
use glandseg::io::load_checkpoint;
use glandseg::report::write_report;
use glandseg::{run_experiment, Error, Progress, Result};
use glandseg_core::data::SynthConfig;
use glandseg_core::loss::MetricReport;

#[derive(Parser)]
#[command(
    name = "glandseg",
    version,
    about = "Gland segmentation in histology patches with U-Net variants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of textured ellipse "glands".
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        patients: usize,
    },
    /// Cut a source raster and its mask into overlapping patches.
    Patchify {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        slide: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
    },
    /// Run patient-grouped cross-validation.
    Train(TrainArgs),
    /// Score a checkpoint or saved predictions against a dataset.
    Evaluate {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(
            long,
            conflicts_with = "predictions",
            required_unless_present = "predictions"
        )]
        checkpoint: Option<PathBuf>,
        /// Directory of `<stem>.png` masks to score offline.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Report CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Where predicted masks go when scoring a checkpoint.
        #[arg(long)]
        predictions_out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the input with predicted contours drawn on it.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    test_dir: Option<String>,
    /// basic, rb or mrb.
    #[arg(long)]
    block_kind: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    base_filters: Option<String>,
    #[arg(long)]
    input_side: Option<String>,
    #[arg(long)]
    input_channels: Option<String>,
    #[arg(long)]
    num_classes: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    use_augmentation: Option<String>,
    #[arg(long)]
    use_border_class: Option<String>,
    #[arg(long)]
    border_width: Option<String>,
    #[arg(long)]
    max_translation: Option<String>,
    #[arg(long)]
    rotation_degrees: Option<String>,
    #[arg(long)]
    mirror_probability: Option<String>,
    /// Only print the final summary.
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); KEYS.len()] {
        [
            ("data_dir", &self.data_dir),
            ("output_dir", &self.output_dir),
            ("test_dir", &self.test_dir),
            ("block_kind", &self.block_kind),
            ("depth", &self.depth),
            ("base_filters", &self.base_filters),
            ("input_side", &self.input_side),
            ("input_channels", &self.input_channels),
            ("num_classes", &self.num_classes),
            ("learning_rate", &self.learning_rate),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("folds", &self.folds),
            ("use_augmentation", &self.use_augmentation),
            ("use_border_class", &self.use_border_class),
            ("border_width", &self.border_width),
            ("max_translation", &self.max_translation),
            ("rotation_degrees", &self.rotation_degrees),
            ("mirror_probability", &self.mirror_probability),
        ]
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(config)
    }
}

fn print_summary(label: &str, report: &MetricReport) {
    let parts: Vec<String> = report
        .class_names
        .iter()
        .enumerate()
        .map(|(c, name)| format!("{name} {}", report.summary(c)))
        .collect();
    println!(
        "{label}: {} images, DI {}",
        report.image_ids.len(),
        parts.join(", ")
    );
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = args.resolve()?;
    let quiet = args.quiet;
    let summary = run_experiment(&config, |p| match p {
        _ if quiet => {}
        Progress::FoldStart { fold, train, val } => {
            eprintln!("fold {fold}: {train} training / {val} validation patches")
        }
        Progress::Epoch {
            label,
            total,
            record,
        } => {
            let di: Vec<String> = record.val_di.iter().map(|d| format!("{d:.4}")).collect();
            eprintln!(
                "{label} epoch {}/{total} loss {:.5} val DI [{}]",
                record.epoch,
                record.train_loss,
                di.join(", ")
            );
        }
        Progress::FoldDone { label, report } => print_summary(label, report),
    })?;
    print_summary("cross-validation", &summary.aggregate);
    if let Some(test) = &summary.test {
        print_summary("test", test);
    }
    println!("results in {}", config.output_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            count,
            side,
            seed,
            patients,
        } => {
            let records = write_synth(
                &out,
                &SynthConfig {
                    n_images: count,
                    side,
                    seed,
                    n_patients: patients,
                },
            )?;
            println!("wrote {} patches to {}", records.len(), out.display());
        }
        Command::Patchify {
            image,
            mask,
            patient,
            slide,
            out,
            size,
            overlap,
        } => {
            let added = patchify(&image, &mask, &patient, &slide, size, overlap, &out)?;
            println!("wrote {} patches to {}", added.len(), out.display());
        }
        Command::Train(args) => train(&args)?,
        Command::Evaluate {
            data_dir,
            checkpoint,
            predictions,
            out,
            predictions_out,
            batch_size,
        } => {
            let report = match (checkpoint, predictions) {
                (Some(ckpt), _) => {
                    let model = load_checkpoint(&ckpt)?;
                    let dir = predictions_out.unwrap_or_else(|| out.with_extension("predictions"));
                    evaluate_checkpoint(&model, &data_dir, &dir, batch_size)?
                }
                (None, Some(dir)) => evaluate_predictions(&data_dir, &dir)?,
                (None, None) => {
                    return Err(Error::Config(String::from(
                        "evaluate needs --checkpoint or --predictions",
                    )))
                }
            };
            write_report(&out, &report)?;
            print_summary("evaluation", &report);
        }
        Command::Predict {
            checkpoint,
            image,
            out,
            overlay,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let mask = predict_file(&model, &image, &out, overlay.as_deref())?;
            println!(
                "wrote {} ({} gland pixels)",
                out.display(),
                mask.labels().iter().filter(|&&l| l != 0).count()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error[{}]: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
