//! Descriptive tables, end-to-end study orchestration, and machine-readable
//! report serialization.
//!
//! The canonical report document is JSON with sorted keys and every float
//! rounded to 6 significant digits, so identical runs produce byte-identical
//! files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjustment::{build_adjustment_report, AdjustmentReport, CellOutcome, Engine};
use crate::error::{Error, Result};
use crate::exec;
use crate::features::{build_design, derive_rows, winsorize, DerivedRow, LeverageForm};
use crate::mean_panel::{fit_fixed_effects, fit_random_effects, hausman_test, HausmanResult};
use crate::panel_quantreg::decile_grid;
use crate::panel_store::{
    load_macro_csv, load_panel_csv, validate_and_merge, MergeDiagnostics, PanelDataset,
};
use crate::simulate::{simulate_raw, DgpConfig};

/// Names and extractors for every derived variable, in table order.
fn derived_variables() -> Vec<(&'static str, fn(&DerivedRow) -> Option<f64>)> {
    vec![
        ("tdr", |r| r.tdr),
        ("ltdr", |r| r.ltdr),
        ("stdr", |r| r.stdr),
        ("as", |r| r.as_ratio),
        ("size", |r| r.size),
        ("gr", |r| r.gr),
        ("pr", |r| r.pr),
        ("ndts", |r| r.ndts),
        ("risk", |r| r.risk),
        ("ntcs", |r| r.ntcs),
        ("cashta", |r| r.cashta),
        ("finexp", |r| r.finexp),
        ("cred", |r| r.cred),
        ("infl", |r| r.infl),
        ("intr", |r| r.intr),
        ("c", |r| Some(r.c as f64)),
    ]
}

/// Per-year means of each derived variable over the firms present that year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearMeansTable {
    pub variables: Vec<String>,
    pub rows: Vec<YearMeansRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearMeansRow {
    pub year: i32,
    /// Mean per variable over non-missing cells; missing when no firm
    /// reports the variable that year.
    pub means: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// Arithmetic mean per (year, variable) over non-missing cells. Row order of
/// the input is irrelevant.
pub fn yearly_means(rows: &[DerivedRow]) -> Result<YearMeansTable> {
    if rows.is_empty() {
        return Err(Error::EmptyInput {
            context: "yearly_means".to_string(),
        });
    }
    let vars = derived_variables();
    let mut years: Vec<i32> = rows.iter().map(|r| r.year).collect();
    years.sort_unstable();
    years.dedup();
    let table_rows = years
        .into_iter()
        .map(|year| {
            let mut means = Vec::with_capacity(vars.len());
            let mut counts = Vec::with_capacity(vars.len());
            for (_, get) in &vars {
                // Summing in sorted order makes the mean exactly invariant
                // to the input row order.
                let mut values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.year == year)
                    .filter_map(get)
                    .collect();
                values.sort_by(f64::total_cmp);
                let n = values.len();
                means.push(if n > 0 {
                    Some(values.iter().sum::<f64>() / n as f64)
                } else {
                    None
                });
                counts.push(n);
            }
            YearMeansRow { year, means, counts }
        })
        .collect();
    Ok(YearMeansTable {
        variables: vars.iter().map(|(n, _)| n.to_string()).collect(),
        rows: table_rows,
    })
}

/// Pairwise-complete Pearson correlations over all derived variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub variables: Vec<String>,
    /// Symmetric matrix; missing when a pair has fewer than 3 complete rows
    /// or a degenerate variance.
    pub r: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

/// Pearson correlation per variable pair on pairwise-complete observations,
/// accumulated with Welford-style co-moment updates.
pub fn correlation_matrix(rows: &[DerivedRow]) -> Result<CorrelationTable> {
    if rows.len() < 2 {
        return Err(Error::EmptyInput {
            context: "correlation_matrix needs at least 2 rows".to_string(),
        });
    }
    let vars = derived_variables();
    let k = vars.len();
    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| vars.iter().map(|(_, get)| get(r)).collect())
        .collect();
    let mut r = vec![vec![None; k]; k];
    let mut counts = vec![vec![0usize; k]; k];
    for a in 0..k {
        for b in a..k {
            let mut n = 0.0_f64;
            let (mut mean_a, mut mean_b) = (0.0, 0.0);
            let (mut m2a, mut m2b, mut cab) = (0.0, 0.0, 0.0);
            for row in &values {
                if let (Some(x), Some(y)) = (row[a], row[b]) {
                    n += 1.0;
                    let dx = x - mean_a;
                    mean_a += dx / n;
                    let dy = y - mean_b;
                    mean_b += dy / n;
                    m2a += dx * (x - mean_a);
                    m2b += dy * (y - mean_b);
                    cab += dx * (y - mean_b);
                }
            }
            counts[a][b] = n as usize;
            counts[b][a] = n as usize;
            let cell = if a == b {
                if n as usize >= 3 && m2a > 0.0 {
                    Some(1.0)
                } else {
                    None
                }
            } else if (n as usize) < 3 || m2a <= 0.0 || m2b <= 0.0 {
                None
            } else {
                Some((cab / (m2a.sqrt() * m2b.sqrt())).clamp(-1.0, 1.0))
            };
            r[a][b] = cell;
            r[b][a] = cell;
        }
    }
    Ok(CorrelationTable {
        variables: vars.iter().map(|(n, _)| n.to_string()).collect(),
        r,
        counts,
    })
}

/// Where the study's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Files {
        panel: PathBuf,
        #[serde(rename = "macro")]
        macro_path: PathBuf,
    },
    Simulate(DgpConfig),
}

/// Engine families to run per leverage form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    Mean,
    Qr,
}

fn default_leverage() -> Vec<LeverageForm> {
    LeverageForm::ALL.to_vec()
}

fn default_engines() -> Vec<EngineChoice> {
    vec![EngineChoice::Mean, EngineChoice::Qr]
}

fn default_bootstrap() -> usize {
    100
}

/// Full study configuration. Mirrors the CLI's config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub data: DataSource,
    #[serde(default = "default_leverage")]
    pub leverage: Vec<LeverageForm>,
    #[serde(default = "default_engines")]
    pub engines: Vec<EngineChoice>,
    /// Quantile grid for the QR engine; empty means the decile default.
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
    /// Bootstrap replicates behind QR covariances (0 disables the tests).
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub winsorize: Option<f64>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leverage.is_empty() {
            return Err(Error::InvalidConfig {
                message: "at least one leverage form is required".to_string(),
            });
        }
        if self.engines.is_empty() {
            return Err(Error::InvalidConfig {
                message: "at least one engine is required".to_string(),
            });
        }
        let taus = self.tau_grid();
        if !taus.windows(2).all(|w| w[0] < w[1]) || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidConfig {
                message: "taus must be strictly increasing inside (0, 1)".to_string(),
            });
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig {
                message: "lambda must be nonnegative".to_string(),
            });
        }
        if let Some(p) = self.winsorize {
            if !(p > 0.0 && p < 0.5) {
                return Err(Error::InvalidConfig {
                    message: format!("winsorize percentile must lie in (0, 0.5), got {p}"),
                });
            }
        }
        if let DataSource::Simulate(dgp) = &self.data {
            dgp.validate()?;
        }
        Ok(())
    }

    pub fn tau_grid(&self) -> Vec<f64> {
        if self.taus.is_empty() {
            decile_grid()
        } else {
            self.taus.clone()
        }
    }

    fn engine_list(&self) -> Vec<Engine> {
        let mut engines = Vec::new();
        for choice in &self.engines {
            match choice {
                EngineChoice::Mean => engines.push(Engine::MeanFe),
                EngineChoice::Qr => {
                    for tau in self.tau_grid() {
                        engines.push(Engine::PanelQr {
                            tau,
                            lambda: self.lambda,
                            bootstrap: self.bootstrap,
                        });
                    }
                }
            }
        }
        engines
    }
}

/// Which exit-code class a stage failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageClass {
    Data,
    Estimation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub class: StageClass,
    pub message: String,
}

/// Study metadata echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    pub lambda: f64,
    pub bootstrap: usize,
    pub winsorize: Option<f64>,
    pub engines: Vec<EngineChoice>,
    pub leverage: Vec<LeverageForm>,
    pub source: String,
}

/// One leverage form's results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeverageSection {
    pub leverage: LeverageForm,
    pub hausman: Option<HausmanResult>,
    pub adjustment: Option<AdjustmentReport>,
}

/// The full study output. Stage failures are recorded with their stage name;
/// completed stages keep their results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub metadata: StudyMetadata,
    pub diagnostics: Option<MergeDiagnostics>,
    pub year_means: Option<YearMeansTable>,
    pub correlations: Option<CorrelationTable>,
    pub sections: Vec<LeverageSection>,
    pub stage_errors: Vec<StageError>,
    pub notes: Vec<String>,
}

impl StudyReport {
    /// Exit-code class of the worst recorded failure.
    pub fn failure_class(&self) -> Option<StageClass> {
        if self.stage_errors.iter().any(|e| e.class == StageClass::Data) {
            return Some(StageClass::Data);
        }
        if self.stage_errors.is_empty() {
            None
        } else {
            Some(StageClass::Estimation)
        }
    }
}

fn load_study_data(cfg: &StudyConfig) -> Result<(PanelDataset, MergeDiagnostics)> {
    let (records, macro_series) = match &cfg.data {
        DataSource::Files { panel, macro_path } => {
            (load_panel_csv(panel)?, load_macro_csv(macro_path)?)
        }
        DataSource::Simulate(dgp) => {
            let raw = simulate_raw(dgp)?;
            (raw.records, raw.macro_series)
        }
    };
    validate_and_merge(records, macro_series)
}

/// Runs the full pipeline: ingest (or simulate), features, descriptives,
/// Hausman per leverage form, adjustment fits per engine, tests.
/// Deterministic under the configured seed.
pub fn run_study(cfg: &StudyConfig) -> StudyReport {
    let metadata = StudyMetadata {
        seed: cfg.seed,
        tau_grid: cfg.tau_grid(),
        lambda: cfg.lambda,
        bootstrap: cfg.bootstrap,
        winsorize: cfg.winsorize,
        engines: cfg.engines.clone(),
        leverage: cfg.leverage.clone(),
        source: match &cfg.data {
            DataSource::Files { panel, .. } => format!("files:{}", panel.display()),
            DataSource::Simulate(dgp) => format!("simulate:seed={}", dgp.seed),
        },
    };
    let mut report = StudyReport {
        metadata,
        diagnostics: None,
        year_means: None,
        correlations: None,
        sections: Vec::new(),
        stage_errors: Vec::new(),
        notes: vec![crate::adjustment::LAGGED_FE_BIAS_NOTE.to_string()],
    };

    if let Err(e) = cfg.validate() {
        report.stage_errors.push(StageError {
            stage: "config".to_string(),
            class: StageClass::Data,
            message: e.to_string(),
        });
        return report;
    }

    let dataset = match load_study_data(cfg) {
        Ok((ds, diag)) => {
            report.diagnostics = Some(diag);
            ds
        }
        Err(e) => {
            report.stage_errors.push(StageError {
                stage: "ingest".to_string(),
                class: StageClass::Data,
                message: e.to_string(),
            });
            return report;
        }
    };

    let mut rows = derive_rows(&dataset);
    if let Some(p) = cfg.winsorize {
        if let Err(e) = winsorize(&mut rows, p) {
            report.stage_errors.push(StageError {
                stage: "features".to_string(),
                class: StageClass::Data,
                message: e.to_string(),
            });
            return report;
        }
    }

    match yearly_means(&rows) {
        Ok(t) => report.year_means = Some(t),
        Err(e) => report.stage_errors.push(StageError {
            stage: "descriptives".to_string(),
            class: StageClass::Data,
            message: e.to_string(),
        }),
    }
    match correlation_matrix(&rows) {
        Ok(t) => report.correlations = Some(t),
        Err(e) => report.stage_errors.push(StageError {
            stage: "descriptives".to_string(),
            class: StageClass::Data,
            message: e.to_string(),
        }),
    }

    let engines = cfg.engine_list();
    let master = crate::numerics::RandomSource::new(cfg.seed);
    let sections: Vec<(LeverageSection, Vec<StageError>)> =
        exec::map_indexed(cfg.leverage.len(), |i| {
            let form = cfg.leverage[i];
            let mut errors = Vec::new();
            let mut section = LeverageSection {
                leverage: form,
                hausman: None,
                adjustment: None,
            };
            let design = match build_design(&rows, form, true) {
                Ok(d) => d,
                Err(e) => {
                    errors.push(StageError {
                        stage: format!("design({})", form.name()),
                        class: StageClass::Data,
                        message: e.to_string(),
                    });
                    return (section, errors);
                }
            };
            match fit_fixed_effects(&design)
                .and_then(|fe| fit_random_effects(&design).map(|re| (fe, re)))
                .and_then(|(fe, re)| hausman_test(&fe, &re))
            {
                Ok(h) => section.hausman = Some(h),
                Err(e) => errors.push(StageError {
                    stage: format!("hausman({})", form.name()),
                    class: StageClass::Estimation,
                    message: e.to_string(),
                }),
            }
            let rng = master.child(1000 + i as u64);
            let adjustment = build_adjustment_report(&design, &engines, &rng);
            for cell in &adjustment.cells {
                if let CellOutcome::Failed { error } = &cell.outcome {
                    errors.push(StageError {
                        stage: format!("fit({}, {})", form.name(), cell.engine.label()),
                        class: StageClass::Estimation,
                        message: error.clone(),
                    });
                }
            }
            section.adjustment = Some(adjustment);
            (section, errors)
        });
    for (section, errors) in sections {
        report.sections.push(section);
        report.stage_errors.extend(errors);
    }
    report
}

/// Rounds to 6 significant digits (bit-stable: format and re-parse).
fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn canonicalize_value(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if !n.is_i64() && !n.is_u64() {
                if let Some(f) = n.as_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig6(f)) {
                        *v = serde_json::Value::Number(rounded);
                    }
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(canonicalize_value),
        serde_json::Value::Object(map) => map.values_mut().for_each(canonicalize_value),
        _ => {}
    }
}

/// Canonical JSON: sorted keys (serde_json maps are ordered), floats rounded
/// to 6 significant digits, pretty-printed. Idempotent, so write-read-write
/// produces identical bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::InvalidConfig {
        message: format!("serialization failed: {e}"),
    })?;
    canonicalize_value(&mut v);
    let mut out = serde_json::to_string_pretty(&v).map_err(|e| Error::InvalidConfig {
        message: format!("serialization failed: {e}"),
    })?;
    out.push('\n');
    Ok(out)
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:>12.6}", round_sig6(x)),
        None => format!("{:>12}", "."),
    }
}

/// Plain-text rendering of the descriptive tables and speed summary.
pub fn render_text(report: &StudyReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "study seed={} source={}\n",
        report.metadata.seed, report.metadata.source
    ));
    if let Some(d) = &report.diagnostics {
        out.push_str(&format!(
            "rows: {} in, {} kept, {} dropped ({} outside macro range, {} nonpositive assets)\n",
            d.input_rows,
            d.output_rows,
            d.dropped_total(),
            d.dropped_outside_macro.values().sum::<usize>(),
            d.dropped_nonpositive_assets,
        ));
    }
    if let Some(t) = &report.year_means {
        out.push_str("\nyear means\n");
        out.push_str(&format!("{:>6}", "year"));
        for v in &t.variables {
            out.push_str(&format!("{v:>13}"));
        }
        out.push('\n');
        for row in &t.rows {
            out.push_str(&format!("{:>6}", row.year));
            for m in &row.means {
                out.push_str(&format!(" {}", fmt_cell(*m)));
            }
            out.push('\n');
        }
    }
    if let Some(t) = &report.correlations {
        out.push_str("\ncorrelations\n");
        out.push_str(&format!("{:>8}", ""));
        for v in &t.variables {
            out.push_str(&format!("{v:>13}"));
        }
        out.push('\n');
        for (i, v) in t.variables.iter().enumerate() {
            out.push_str(&format!("{v:>8}"));
            for j in 0..t.variables.len() {
                out.push_str(&format!(" {}", fmt_cell(t.r[i][j])));
            }
            out.push('\n');
        }
    }
    for section in &report.sections {
        out.push_str(&format!("\nleverage {}\n", section.leverage.name()));
        if let Some(h) = &section.hausman {
            out.push_str(&format!(
                "  hausman: chi2 = {:.6} df = {} p = {:.4}\n",
                round_sig6(h.statistic),
                h.df,
                h.p_value
            ));
        }
        if let Some(adj) = &section.adjustment {
            for cell in &adj.cells {
                match &cell.outcome {
                    CellOutcome::Fitted(f) => {
                        let t = &f.tests;
                        out.push_str(&format!(
                            "  {}: delta = {:.6} delta_c = {:.6} speed_good = {:.6} speed_bad = {:.6}{}\n",
                            cell.engine.label(),
                            round_sig6(f.coefficients.delta),
                            round_sig6(f.coefficients.delta_c),
                            round_sig6(f.speeds.good),
                            round_sig6(f.speeds.bad),
                            match t {
                                Some(t) => format!(" p(delta_c=0) = {:.4}", t.delta_c.p_value),
                                None => String::new(),
                            }
                        ));
                    }
                    CellOutcome::Failed { error } => {
                        out.push_str(&format!("  {}: FAILED ({error})\n", cell.engine.label()));
                    }
                }
            }
        }
    }
    if !report.stage_errors.is_empty() {
        out.push_str("\nerrors\n");
        for e in &report.stage_errors {
            out.push_str(&format!("  {}: {}\n", e.stage, e.message));
        }
    }
    out
}

/// Long-format CSV of the year-means table: year,variable,mean,count.
pub fn year_means_csv(table: &YearMeansTable) -> String {
    let mut out = String::from("year,variable,mean,count\n");
    for row in &table.rows {
        for (j, var) in table.variables.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.year,
                var,
                row.means[j].map(|m| round_sig6(m).to_string()).unwrap_or_default(),
                row.counts[j]
            ));
        }
    }
    out
}

/// Long-format CSV of the correlation table: variable_a,variable_b,r,count.
pub fn correlations_csv(table: &CorrelationTable) -> String {
    let mut out = String::from("variable_a,variable_b,r,count\n");
    for (i, a) in table.variables.iter().enumerate() {
        for (j, b) in table.variables.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                a,
                b,
                table.r[i][j].map(|r| round_sig6(r).to_string()).unwrap_or_default(),
                table.counts[i][j]
            ));
        }
    }
    out
}

/// Writes the canonical report plus per-table CSV exports into `dir`.
pub fn write_report_files(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    emit("report.json", canonical_json(report)?)?;
    emit("report.txt", render_text(report))?;
    if let Some(t) = &report.year_means {
        emit("year_means.csv", year_means_csv(t))?;
    }
    if let Some(t) = &report.correlations {
        emit("correlations.csv", correlations_csv(t))?;
    }
    Ok(written)
}
