//! Command-line interface: ingestion diagnostics, descriptive tables, the
//! Hausman test, adjustment fits, synthetic-data generation, and the full
//! study pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use capstruct::adjustment::{build_adjustment_report, AdjustmentReport, CellOutcome, Engine};
use capstruct::error::Error;
use capstruct::features::{build_design, derive_rows, winsorize, DerivedRow, LeverageForm};
use capstruct::mean_panel::{fit_fixed_effects, fit_random_effects, hausman_test};
use capstruct::numerics::RandomSource;
use capstruct::panel_quantreg::decile_grid;
use capstruct::panel_store::{
    load_macro_csv, load_panel_csv, validate_and_merge, write_macro_csv, write_panel_csv,
    MergeDiagnostics, PanelDataset,
};
use capstruct::report::{
    canonical_json, correlation_matrix, correlations_csv, render_text, run_study, write_report_files,
    year_means_csv, yearly_means, StageClass, StudyConfig,
};
use capstruct::simulate::{simulate_raw, DgpConfig};

#[derive(Parser)]
#[command(
    name = "capstruct",
    version,
    about = "Panel econometrics for capital-structure adjustment studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum LeverageArg {
    Tdr,
    Ltdr,
    Stdr,
}

impl From<LeverageArg> for LeverageForm {
    fn from(a: LeverageArg) -> Self {
        match a {
            LeverageArg::Tdr => LeverageForm::Tdr,
            LeverageArg::Ltdr => LeverageForm::Ltdr,
            LeverageArg::Stdr => LeverageForm::Stdr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Mean,
    Qr,
}

#[derive(Args)]
struct DataArgs {
    /// Firm-year panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Macroeconomic series CSV.
    #[arg(long = "macro")]
    macro_path: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate panel and macro files and report merge diagnostics.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Write the validated panel.csv/macro.csv plus diagnostics here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Emit the year-means and correlation tables.
    Describe {
        #[command(flatten)]
        data: DataArgs,
        /// Symmetric winsorization percentile in (0, 0.5).
        #[arg(long)]
        winsorize: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Fixed- vs random-effects Hausman test on the mean model.
    Hausman {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        leverage: LeverageArg,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// One adjustment report for a leverage form and engine.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        leverage: LeverageArg,
        #[arg(long, value_enum)]
        engine: EngineArg,
        /// Comma-separated quantiles for the qr engine (default: deciles).
        #[arg(long)]
        tau: Option<String>,
        /// Intercept penalty for the qr engine.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Bootstrap replicates behind qr covariances.
        #[arg(long, default_value_t = 100)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Generate a synthetic panel from a ground-truth config.
    Simulate {
        /// DGP config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for panel.csv, macro.csv, and truth.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full study pipeline from a config file.
    Study {
        /// Study config file (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

/// Exit-code class per error kind.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. } | Error::InvalidTau { .. } => 2,
        Error::Io { .. }
        | Error::MissingHeader { .. }
        | Error::UnknownHeader { .. }
        | Error::NonNumericCell { .. }
        | Error::MissingRequiredField { .. }
        | Error::DuplicateKey { .. }
        | Error::DuplicateYear { .. }
        | Error::YearGap { .. }
        | Error::EmptyDataset
        | Error::EmptyInput { .. }
        | Error::UnderIdentified { .. } => 3,
        Error::RankDeficient { .. }
        | Error::NonConvergence { .. }
        | Error::SingleState { .. }
        | Error::UnknownCoefficient { .. }
        | Error::UnknownFirm { .. }
        | Error::DegenerateFit { .. }
        | Error::SpeedTooSmall { .. }
        | Error::MissingCovariance { .. }
        | Error::BootstrapExhausted { .. } => 4,
        Error::Stage { source, .. } => exit_code(source),
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err))
}

fn load_merged(data: &DataArgs) -> Result<(PanelDataset, MergeDiagnostics), Error> {
    let records = load_panel_csv(&data.panel)?;
    let macro_series = load_macro_csv(&data.macro_path)?;
    validate_and_merge(records, macro_series)
}

fn derived(data: &DataArgs, winsor: Option<f64>) -> Result<Vec<DerivedRow>, Error> {
    let (dataset, _) = load_merged(data)?;
    let mut rows = derive_rows(&dataset);
    if let Some(p) = winsor {
        winsorize(&mut rows, p)?;
    }
    Ok(rows)
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
        message: format!("{}: {e}", path.display()),
    })
}

fn parse_taus(raw: &Option<String>) -> Result<Vec<f64>, Error> {
    match raw {
        None => Ok(decile_grid()),
        Some(s) => {
            let taus: Result<Vec<f64>, Error> = s
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| Error::InvalidConfig {
                        message: format!("cannot parse quantile `{t}`"),
                    })
                })
                .collect();
            let taus = taus?;
            if !taus.windows(2).all(|w| w[0] < w[1])
                || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0))
                || taus.is_empty()
            {
                return Err(Error::InvalidConfig {
                    message: "quantiles must be strictly increasing inside (0, 1)".to_string(),
                });
            }
            Ok(taus)
        }
    }
}

fn write_or_print(out: &Option<PathBuf>, name: &str, content: &str) -> Result<(), Error> {
    match out {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn cmd_ingest(data: &DataArgs, out: &Option<PathBuf>, format: Format) -> Result<(), Error> {
    let (dataset, diag) = load_merged(data)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_panel_csv(&dir.join("panel.csv"), dataset.records())?;
        write_macro_csv(&dir.join("macro.csv"), dataset.macro_series())?;
        std::fs::write(dir.join("diagnostics.json"), canonical_json(&diag)?)
            .map_err(|e| Error::io(dir, e))?;
    }
    match format {
        Format::Json => print!("{}", canonical_json(&diag)?),
        _ => {
            println!(
                "{} rows in, {} kept; dropped: {} outside macro range, {} nonpositive assets; {} firms, macro {}..{}",
                diag.input_rows,
                diag.output_rows,
                diag.dropped_outside_macro.values().sum::<usize>(),
                diag.dropped_nonpositive_assets,
                dataset.n_firms(),
                dataset.macro_series().first().map(|m| m.year).unwrap_or_default(),
                dataset.macro_series().last().map(|m| m.year).unwrap_or_default(),
            );
        }
    }
    Ok(())
}

fn cmd_describe(
    data: &DataArgs,
    winsor: Option<f64>,
    out: &Option<PathBuf>,
    format: Format,
) -> Result<(), Error> {
    let rows = derived(data, winsor)?;
    let means = yearly_means(&rows)?;
    let corr = correlation_matrix(&rows)?;
    match format {
        Format::Json => {
            let doc = serde_json::json!({ "year_means": means, "correlations": corr });
            write_or_print(out, "describe.json", &canonical_json(&doc)?)?;
        }
        Format::Csv => {
            write_or_print(out, "year_means.csv", &year_means_csv(&means))?;
            write_or_print(out, "correlations.csv", &correlations_csv(&corr))?;
        }
        Format::Text => {
            let mut text = String::new();
            text.push_str(&format!("year means ({} years)\n", means.rows.len()));
            text.push_str(&year_means_csv(&means));
            text.push_str("\ncorrelations\n");
            text.push_str(&correlations_csv(&corr));
            write_or_print(out, "describe.txt", &text)?;
        }
    }
    Ok(())
}

fn cmd_hausman(data: &DataArgs, leverage: LeverageForm, format: Format) -> Result<(), Error> {
    let rows = derived(data, None)?;
    let design = build_design(&rows, leverage, true)?;
    let fe = fit_fixed_effects(&design)?;
    let re = fit_random_effects(&design)?;
    let result = hausman_test(&fe, &re)?;
    match format {
        Format::Json => print!("{}", canonical_json(&result)?),
        _ => println!(
            "hausman ({}): chi2 = {:.6}, df = {}, p = {:.4} -> {}",
            leverage.name(),
            result.statistic,
            result.df,
            result.p_value,
            if result.p_value < 0.05 {
                "reject random effects (use fixed effects)"
            } else {
                "random effects not rejected"
            }
        ),
    }
    Ok(())
}

fn render_adjustment_text(report: &AdjustmentReport) -> String {
    let mut out = format!("adjustment report: leverage {}\n", report.leverage.name());
    for cell in &report.cells {
        match &cell.outcome {
            CellOutcome::Fitted(f) => {
                out.push_str(&format!(
                    "  {}: delta = {:.6} delta_c = {:.6} speed_good = {:.6} speed_bad = {:.6}\n",
                    cell.engine.label(),
                    f.coefficients.delta,
                    f.coefficients.delta_c,
                    f.speeds.good,
                    f.speeds.bad,
                ));
                if let Some(tests) = &f.tests {
                    out.push_str(&format!(
                        "      H0 delta_c = 0: W = {:.6}, df = {}, p = {:.4}\n",
                        tests.delta_c.statistic, tests.delta_c.df, tests.delta_c.p_value
                    ));
                }
            }
            CellOutcome::Failed { error } => {
                out.push_str(&format!("  {}: FAILED ({error})\n", cell.engine.label()));
            }
        }
    }
    for note in &report.notes {
        out.push_str(&format!("  note: {note}\n"));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    data: &DataArgs,
    leverage: LeverageForm,
    engine: EngineArg,
    tau: &Option<String>,
    lambda: f64,
    bootstrap: usize,
    seed: u64,
    out: &Option<PathBuf>,
    format: Format,
) -> Result<(), Error> {
    let rows = derived(data, None)?;
    let design = build_design(&rows, leverage, true)?;
    let engines: Vec<Engine> = match engine {
        EngineArg::Mean => vec![Engine::MeanFe],
        EngineArg::Qr => parse_taus(tau)?
            .into_iter()
            .map(|tau| Engine::PanelQr {
                tau,
                lambda,
                bootstrap,
            })
            .collect(),
    };
    let report = build_adjustment_report(&design, &engines, &RandomSource::new(seed));
    match format {
        Format::Json | Format::Csv => write_or_print(out, "fit.json", &canonical_json(&report)?)?,
        Format::Text => write_or_print(out, "fit.txt", &render_adjustment_text(&report))?,
    }
    let failed: Vec<&str> = report
        .cells
        .iter()
        .filter_map(|c| match &c.outcome {
            CellOutcome::Failed { error } => Some(error.as_str()),
            _ => None,
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::DegenerateFit {
            message: format!("{} of {} cells failed to fit", failed.len(), report.cells.len()),
        })
    }
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg: DgpConfig = read_json_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sim = simulate_raw(&cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_panel_csv(&out.join("panel.csv"), &sim.records)?;
    write_macro_csv(&out.join("macro.csv"), &sim.macro_series)?;
    std::fs::write(out.join("truth.json"), canonical_json(&sim.truth)?)
        .map_err(|e| Error::io(out, e))?;
    eprintln!(
        "wrote {} panel rows, {} macro years, truth.json to {}",
        sim.records.len(),
        sim.macro_series.len(),
        out.display()
    );
    Ok(())
}

fn cmd_study(config: &Path, out: &Option<PathBuf>, seed: Option<u64>, format: Format) -> ExitCode {
    let mut cfg: StudyConfig = match read_json_config(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Err(e) = cfg.validate() {
        return fail(e);
    }
    let report = run_study(&cfg);
    let rendered = match format {
        Format::Json | Format::Csv => canonical_json(&report),
        Format::Text => Ok(render_text(&report)),
    };
    match rendered {
        Ok(text) => print!("{text}"),
        Err(e) => return fail(e),
    }
    if let Some(dir) = out {
        if let Err(e) = write_report_files(&report, dir) {
            return fail(e);
        }
        eprintln!("wrote report files to {}", dir.display());
    }
    match report.failure_class() {
        None => ExitCode::SUCCESS,
        Some(StageClass::Data) => ExitCode::from(3),
        Some(StageClass::Estimation) => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest { data, out, format } => cmd_ingest(data, out, *format),
        Command::Describe {
            data,
            winsorize,
            out,
            format,
        } => cmd_describe(data, *winsorize, out, *format),
        Command::Hausman {
            data,
            leverage,
            format,
        } => cmd_hausman(data, (*leverage).into(), *format),
        Command::Fit {
            data,
            leverage,
            engine,
            tau,
            lambda,
            bootstrap,
            seed,
            out,
            format,
        } => cmd_fit(
            data,
            (*leverage).into(),
            *engine,
            tau,
            *lambda,
            *bootstrap,
            *seed,
            out,
            *format,
        ),
        Command::Simulate { config, out, seed } => cmd_simulate(config, out, *seed),
        Command::Study {
            config,
            out,
            seed,
            format,
        } => return cmd_study(config, out, *seed, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
