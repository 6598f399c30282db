use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use irface::ensemble::{normalize_prepared, prepare_image, read_ensemble, signature_in_range, write_ensemble};
use irface::harness::{
    evaluate_with, summary_text, train_from_images, write_report, write_synthetic_dataset, DatasetManifest,
    PipelineConfig, SynthSpec,
};
use irface::imgcore::{read_image, write_image};
use irface::matching::{ncc_masked, rank_scores, write_scores_csv, ScorePair};
use irface::{Error, Result};

/// Thermal-IR face matching with pose-normalised vascular signatures.
#[derive(Parser)]
#[command(name = "irface", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an AAM ensemble from an annotated manifest.
    Train {
        manifest: PathBuf,
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Select and fit the best ensemble member; prints the fitted landmarks.
    Fit {
        ensemble: PathBuf,
        image: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Extract the vesselness signature in the frame of the selected pose range.
    Extract {
        ensemble: PathBuf,
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Rank every image of a gallery directory against a probe image.
    Match {
        ensemble: PathBuf,
        probe: PathBuf,
        gallery: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run the single-image enrollment protocol and write a report.
    Evaluate {
        manifest: PathBuf,
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Use a trained ensemble instead of training on the manifest.
        #[arg(short, long)]
        ensemble: Option<PathBuf>,
    },
    /// Render a synthetic dataset from a TOML spec file.
    Synth {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::read(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn gallery_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("tfr" | "pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Annotation(format!("no .tfr or .pgm images in {}", dir.display())));
    }
    Ok(paths)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let out_err = |e| Error::io("<stdout>", e);
    match cli.command {
        Command::Train { manifest, config, output } => {
            let config = PipelineConfig::read(&config)?;
            let images = DatasetManifest::read(&manifest)?.load()?;
            let ensemble = train_from_images(&images, &config)?;
            write_ensemble(&ensemble, &output)?;
            println!("trained {} models into {}", ensemble.len(), output.display());
        }
        Command::Fit { ensemble, image, config } => {
            let config = load_config(config.as_deref())?;
            let ensemble = read_ensemble(&ensemble)?;
            let prepared = prepare_image(&ensemble, &read_image(&image)?, &config.stage_params())?;
            let sel = &prepared.selection;
            let mut out = stdout.lock();
            writeln!(out, "# model {} {}", sel.chosen.0, sel.chosen.1).map_err(out_err)?;
            writeln!(
                out,
                "# final_error {:.9e} iterations {} converged {}",
                sel.fit.final_error, sel.fit.iterations, sel.fit.converged
            )
            .map_err(out_err)?;
            write!(out, "{}", sel.shape(&ensemble).to_landmarks()).map_err(out_err)?;
        }
        Command::Extract { ensemble, image, output, config } => {
            let config = load_config(config.as_deref())?;
            let ensemble = read_ensemble(&ensemble)?;
            let prepared = prepare_image(&ensemble, &read_image(&image)?, &config.stage_params())?;
            let sig = signature_in_range(&ensemble, &prepared, prepared.range())?;
            write_image(&sig, &output)?;
        }
        Command::Match { ensemble, probe, gallery, config } => {
            let params = load_config(config.as_deref())?.stage_params();
            let ensemble = read_ensemble(&ensemble)?;
            let p = prepare_image(&ensemble, &read_image(&probe)?, &params)?;
            let scores = gallery_images(&gallery)?
                .par_iter()
                .map(|path| {
                    let g = prepare_image(&ensemble, &read_image(path)?, &params)?;
                    let pair = normalize_prepared(&ensemble, &p, &g)?;
                    let mask = ensemble.frame(pair.range).raster.mask();
                    Ok(ScorePair {
                        gallery_id: stem(path),
                        rho: ncc_masked(&pair.a, &pair.b, &mask)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let probe_id = stem(&probe);
            let rows: Vec<(String, ScorePair)> =
                rank_scores(scores).into_iter().map(|s| (probe_id.clone(), s)).collect();
            write_scores_csv(stdout.lock(), &rows).map_err(out_err)?;
        }
        Command::Evaluate { manifest, config, output, ensemble } => {
            let config = PipelineConfig::read(&config)?;
            let images = DatasetManifest::read(&manifest)?.load()?;
            let ensemble = match ensemble {
                Some(dir) => read_ensemble(dir)?,
                None => train_from_images(&images, &config)?,
            };
            let report = evaluate_with(&ensemble, &images, &config)?;
            write_report(&report, &output)?;
            print!("{}", summary_text(&report));
        }
        Command::Synth { spec, output } => {
            let text = fs::read_to_string(&spec).map_err(io_err(&spec))?;
            let spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let manifest = write_synthetic_dataset(&spec, &output)?;
            println!("wrote {} images into {}", manifest.entries.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
