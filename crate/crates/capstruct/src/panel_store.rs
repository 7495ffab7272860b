//! Loading, validation, and storage of the unbalanced firm-year panel and the
//! macroeconomic time series.
//!
//! CSV schemas are fixed (exact header names, case-sensitive, UTF-8,
//! comma-separated, decimal point):
//!
//! - panel.csv: `firm_id,year,sales,total_assets,short_term_debt,long_term_debt,ebit,depreciation,cash,financial_expenses,trade_receivables,trade_payables,tangible_assets`
//! - macro.csv: `year,gdp_growth,lending_rate,inflation,credit_supply`
//!
//! An empty cell in a numeric panel column means the field is missing; there
//! are no sentinel values. Macro cells are all required.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque firm identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FirmId(pub String);

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FirmId {
    fn from(s: &str) -> Self {
        FirmId(s.to_string())
    }
}

pub const PANEL_HEADERS: [&str; 13] = [
    "firm_id",
    "year",
    "sales",
    "total_assets",
    "short_term_debt",
    "long_term_debt",
    "ebit",
    "depreciation",
    "cash",
    "financial_expenses",
    "trade_receivables",
    "trade_payables",
    "tangible_assets",
];

pub const MACRO_HEADERS: [&str; 5] =
    ["year", "gdp_growth", "lending_rate", "inflation", "credit_supply"];

/// One firm-year row of raw balance-sheet inputs. Any field except `firm_id`
/// and `year` may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmYearRecord {
    pub firm_id: FirmId,
    pub year: i32,
    pub sales: Option<f64>,
    pub total_assets: Option<f64>,
    pub short_term_debt: Option<f64>,
    pub long_term_debt: Option<f64>,
    pub ebit: Option<f64>,
    pub depreciation: Option<f64>,
    pub cash: Option<f64>,
    pub financial_expenses: Option<f64>,
    pub trade_receivables: Option<f64>,
    pub trade_payables: Option<f64>,
    pub tangible_assets: Option<f64>,
}

impl FirmYearRecord {
    /// Blank record with only the key fields set.
    pub fn new(firm_id: FirmId, year: i32) -> Self {
        FirmYearRecord {
            firm_id,
            year,
            sales: None,
            total_assets: None,
            short_term_debt: None,
            long_term_debt: None,
            ebit: None,
            depreciation: None,
            cash: None,
            financial_expenses: None,
            trade_receivables: None,
            trade_payables: None,
            tangible_assets: None,
        }
    }
}

/// One year of the macroeconomic series. All fields are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroYearRecord {
    pub year: i32,
    /// Percent per year; the recession indicator is 1 when this is negative.
    pub gdp_growth: f64,
    /// Percent per year.
    pub lending_rate: f64,
    /// Annual CPI change, percent per year.
    pub inflation: f64,
    /// Index level; the credit-growth regressor is its annual growth rate.
    pub credit_supply: f64,
}

/// Validated, merged panel: firm-year records whose years all fall inside the
/// macro series' range, plus a per-firm index of rows sorted by year.
/// Immutable after construction and safe to share across readers.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    records: Vec<FirmYearRecord>,
    macro_series: Vec<MacroYearRecord>,
    firm_rows: BTreeMap<FirmId, Vec<usize>>,
}

/// Per-reason drop counts produced by `validate_and_merge`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeDiagnostics {
    pub input_rows: usize,
    pub output_rows: usize,
    /// Rows dropped because their year lies outside the macro range, keyed by year.
    pub dropped_outside_macro: BTreeMap<i32, usize>,
    /// Rows dropped because total_assets is missing or not strictly positive.
    pub dropped_nonpositive_assets: usize,
}

impl MergeDiagnostics {
    pub fn dropped_total(&self) -> usize {
        self.dropped_outside_macro.values().sum::<usize>() + self.dropped_nonpositive_assets
    }
}

impl PanelDataset {
    pub fn records(&self) -> &[FirmYearRecord] {
        &self.records
    }

    pub fn macro_series(&self) -> &[MacroYearRecord] {
        &self.macro_series
    }

    pub fn macro_for_year(&self, year: i32) -> Option<&MacroYearRecord> {
        let first = self.macro_series.first()?.year;
        let idx = year.checked_sub(first)?;
        if idx < 0 {
            return None;
        }
        self.macro_series.get(idx as usize)
    }

    pub fn firms(&self) -> impl Iterator<Item = &FirmId> {
        self.firm_rows.keys()
    }

    pub fn n_firms(&self) -> usize {
        self.firm_rows.len()
    }

    /// Rows of one firm, sorted by year ascending.
    pub fn firm_history(&self, firm: &FirmId) -> Vec<&FirmYearRecord> {
        self.firm_rows
            .get(firm)
            .map(|rows| rows.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }
}

fn parse_cell(path: &str, row: usize, column: &str, raw: &str) -> Result<Option<f64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::NonNumericCell {
            path: path.to_string(),
            row,
            column: column.to_string(),
            value: trimmed.to_string(),
        })
}

fn header_positions(
    path: &str,
    headers: &csv::StringRecord,
    schema: &[&str],
) -> Result<Vec<usize>> {
    for got in headers.iter() {
        if !schema.contains(&got.trim()) {
            return Err(Error::UnknownHeader {
                path: path.to_string(),
                header: got.trim().to_string(),
            });
        }
    }
    schema
        .iter()
        .map(|want| {
            headers
                .iter()
                .position(|got| got.trim() == *want)
                .ok_or_else(|| Error::MissingHeader {
                    path: path.to_string(),
                    header: want.to_string(),
                })
        })
        .collect()
}

/// Loads firm-year records from `panel.csv`. Header order is irrelevant;
/// empty cells become missing fields; duplicate (firm_id, year) keys are
/// rejected.
pub fn load_panel_csv(path: &Path) -> Result<Vec<FirmYearRecord>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Io {
            path: display.clone(),
            message: e.to_string(),
        })?
        .clone();
    let pos = header_positions(&display, &headers, &PANEL_HEADERS)?;

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::Io {
            path: display.clone(),
            message: e.to_string(),
        })?;
        let get = |k: usize| row.get(pos[k]).unwrap_or("");

        let firm_raw = get(0).trim();
        if firm_raw.is_empty() {
            return Err(Error::MissingRequiredField {
                path: display.clone(),
                row: row_no,
                column: "firm_id".to_string(),
            });
        }
        let year_raw = get(1).trim();
        let year = year_raw.parse::<i32>().map_err(|_| Error::NonNumericCell {
            path: display.clone(),
            row: row_no,
            column: "year".to_string(),
            value: year_raw.to_string(),
        })?;
        let firm_id = FirmId(firm_raw.to_string());
        if !seen.insert((firm_id.clone(), year)) {
            return Err(Error::DuplicateKey {
                firm_id: firm_id.0,
                year,
            });
        }
        let cell =
            |k: usize, name: &str| -> Result<Option<f64>> { parse_cell(&display, row_no, name, get(k)) };
        let rec = FirmYearRecord {
            firm_id,
            year,
            sales: cell(2, "sales")?,
            total_assets: cell(3, "total_assets")?,
            short_term_debt: cell(4, "short_term_debt")?,
            long_term_debt: cell(5, "long_term_debt")?,
            ebit: cell(6, "ebit")?,
            depreciation: cell(7, "depreciation")?,
            cash: cell(8, "cash")?,
            financial_expenses: cell(9, "financial_expenses")?,
            trade_receivables: cell(10, "trade_receivables")?,
            trade_payables: cell(11, "trade_payables")?,
            tangible_assets: cell(12, "tangible_assets")?,
        };
        records.push(rec);
    }
    Ok(records)
}

/// Loads the macro series from `macro.csv`: all cells required, years unique
/// and contiguous, output sorted ascending by year.
pub fn load_macro_csv(path: &Path) -> Result<Vec<MacroYearRecord>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Io {
            path: display.clone(),
            message: e.to_string(),
        })?
        .clone();
    let pos = header_positions(&display, &headers, &MACRO_HEADERS)?;

    let mut rows = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::Io {
            path: display.clone(),
            message: e.to_string(),
        })?;
        let get = |k: usize| row.get(pos[k]).unwrap_or("");
        let year_raw = get(0).trim();
        let year = year_raw.parse::<i32>().map_err(|_| Error::NonNumericCell {
            path: display.clone(),
            row: row_no,
            column: "year".to_string(),
            value: year_raw.to_string(),
        })?;
        let required = |k: usize, name: &str| -> Result<f64> {
            parse_cell(&display, row_no, name, get(k))?.ok_or_else(|| Error::MissingRequiredField {
                path: display.clone(),
                row: row_no,
                column: name.to_string(),
            })
        };
        rows.push(MacroYearRecord {
            year,
            gdp_growth: required(1, "gdp_growth")?,
            lending_rate: required(2, "lending_rate")?,
            inflation: required(3, "inflation")?,
            credit_supply: required(4, "credit_supply")?,
        });
    }
    validate_macro_series(&mut rows)?;
    Ok(rows)
}

/// Sorts by year and checks uniqueness and contiguity.
pub fn validate_macro_series(rows: &mut [MacroYearRecord]) -> Result<()> {
    rows.sort_by_key(|r| r.year);
    for pair in rows.windows(2) {
        if pair[0].year == pair[1].year {
            return Err(Error::DuplicateYear { year: pair[0].year });
        }
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        let have: BTreeSet<i32> = rows.iter().map(|r| r.year).collect();
        let missing: Vec<i32> = (first.year..=last.year).filter(|y| !have.contains(y)).collect();
        if !missing.is_empty() {
            return Err(Error::YearGap { missing });
        }
    }
    Ok(())
}

/// Merges loaded records with the macro series, dropping rows outside the
/// macro year range and rows with missing or non-positive total assets
/// (every leverage ratio divides by total assets). Idempotent.
pub fn validate_and_merge(
    records: Vec<FirmYearRecord>,
    macro_series: Vec<MacroYearRecord>,
) -> Result<(PanelDataset, MergeDiagnostics)> {
    let mut diag = MergeDiagnostics {
        input_rows: records.len(),
        ..MergeDiagnostics::default()
    };
    if macro_series.is_empty() {
        return Err(Error::EmptyInput {
            context: "macro series".to_string(),
        });
    }
    let (first, last) = (macro_series[0].year, macro_series[macro_series.len() - 1].year);

    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        if rec.year < first || rec.year > last {
            *diag.dropped_outside_macro.entry(rec.year).or_insert(0) += 1;
            continue;
        }
        match rec.total_assets {
            Some(assets) if assets > 0.0 => kept.push(rec),
            _ => diag.dropped_nonpositive_assets += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    kept.sort_by(|a, b| (&a.firm_id, a.year).cmp(&(&b.firm_id, b.year)));
    diag.output_rows = kept.len();

    let mut firm_rows: BTreeMap<FirmId, Vec<usize>> = BTreeMap::new();
    for (i, rec) in kept.iter().enumerate() {
        firm_rows.entry(rec.firm_id.clone()).or_default().push(i);
    }
    Ok((
        PanelDataset {
            records: kept,
            macro_series,
            firm_rows,
        },
        diag,
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the panel.csv schema. Floats use the shortest
/// round-trippable decimal form, so ingesting the output reproduces the
/// records bit for bit.
pub fn write_panel_csv(path: &Path, records: &[FirmYearRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let emit = |w: &mut csv::Writer<std::fs::File>, fields: Vec<String>| {
        w.write_record(&fields).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    };
    emit(&mut w, PANEL_HEADERS.iter().map(|s| s.to_string()).collect())?;
    for r in records {
        emit(
            &mut w,
            vec![
                r.firm_id.0.clone(),
                r.year.to_string(),
                fmt_opt(r.sales),
                fmt_opt(r.total_assets),
                fmt_opt(r.short_term_debt),
                fmt_opt(r.long_term_debt),
                fmt_opt(r.ebit),
                fmt_opt(r.depreciation),
                fmt_opt(r.cash),
                fmt_opt(r.financial_expenses),
                fmt_opt(r.trade_receivables),
                fmt_opt(r.trade_payables),
                fmt_opt(r.tangible_assets),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the macro series in the macro.csv schema.
pub fn write_macro_csv(path: &Path, rows: &[MacroYearRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    w.write_record(MACRO_HEADERS)
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    for r in rows {
        w.write_record(&[
            r.year.to_string(),
            r.gdp_growth.to_string(),
            r.lending_rate.to_string(),
            r.inflation.to_string(),
            r.credit_supply.to_string(),
        ])
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const PANEL_HEADER_LINE: &str = "firm_id,year,sales,total_assets,short_term_debt,long_term_debt,ebit,depreciation,cash,financial_expenses,trade_receivables,trade_payables,tangible_assets";

    #[test]
    fn loads_two_well_formed_rows() {
        let f = write_temp(&format!(
            "{PANEL_HEADER_LINE}\nA,2001,100,200,10,30,20,5,8,2,10,4,60\nA,2002,110,210,12,31,21,5,9,2,11,4,61\n"
        ));
        let recs = load_panel_csv(f.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].firm_id, FirmId::from("A"));
        assert_eq!(recs[0].year, 2001);
        assert_eq!(recs[0].sales, Some(100.0));
        assert_eq!(recs[1].tangible_assets, Some(61.0));
    }

    #[test]
    fn empty_cell_becomes_missing() {
        let f = write_temp(&format!(
            "{PANEL_HEADER_LINE}\nA,2001,100,200,10,30,,5,8,2,10,4,60\n"
        ));
        let recs = load_panel_csv(f.path()).unwrap();
        assert_eq!(recs[0].ebit, None);
        assert_eq!(recs[0].sales, Some(100.0));
    }

    #[test]
    fn duplicate_key_is_an_error_naming_the_key() {
        let f = write_temp(&format!(
            "{PANEL_HEADER_LINE}\nA,2001,1,2,0,0,,,,,,,\nA,2001,1,2,0,0,,,,,,,\n"
        ));
        match load_panel_csv(f.path()) {
            Err(Error::DuplicateKey { firm_id, year }) => {
                assert_eq!(firm_id, "A");
                assert_eq!(year, 2001);
            }
            other => panic!("expected duplicate-key error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let f = write_temp(&format!(
            "{PANEL_HEADER_LINE}\nA,2001,abc,200,10,30,20,5,8,2,10,4,60\n"
        ));
        match load_panel_csv(f.path()) {
            Err(Error::NonNumericCell { row, column, value, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "sales");
                assert_eq!(value, "abc");
            }
            other => panic!("expected non-numeric error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_headers_are_errors() {
        let f = write_temp("firm_id,year,bogus\nA,2001,1\n");
        assert!(matches!(load_panel_csv(f.path()), Err(Error::UnknownHeader { .. })));
        let f = write_temp("firm_id,year\nA,2001\n");
        assert!(matches!(load_panel_csv(f.path()), Err(Error::MissingHeader { .. })));
    }

    #[test]
    fn header_order_is_irrelevant() {
        let f = write_temp(
            "year,firm_id,total_assets,sales,short_term_debt,long_term_debt,ebit,depreciation,cash,financial_expenses,trade_receivables,trade_payables,tangible_assets\n2001,A,200,100,10,30,20,5,8,2,10,4,60\n",
        );
        let recs = load_panel_csv(f.path()).unwrap();
        assert_eq!(recs[0].total_assets, Some(200.0));
        assert_eq!(recs[0].sales, Some(100.0));
    }

    fn macro_line(year: i32) -> String {
        format!("{year},2.0,5.0,1.5,{}", 100 + (year - 2000))
    }

    #[test]
    fn macro_rows_sorted_ascending() {
        let f = write_temp(&format!(
            "year,gdp_growth,lending_rate,inflation,credit_supply\n{}\n{}\n{}\n",
            macro_line(2002),
            macro_line(2000),
            macro_line(2001),
        ));
        let rows = load_macro_csv(f.path()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.year).collect::<Vec<_>>(), vec![2000, 2001, 2002]);
    }

    #[test]
    fn macro_gap_lists_missing_years() {
        let f = write_temp(&format!(
            "year,gdp_growth,lending_rate,inflation,credit_supply\n{}\n{}\n",
            macro_line(2000),
            macro_line(2002),
        ));
        match load_macro_csv(f.path()) {
            Err(Error::YearGap { missing }) => assert_eq!(missing, vec![2001]),
            other => panic!("expected gap error, got {other:?}"),
        }
    }

    #[test]
    fn macro_duplicate_year_is_an_error() {
        let f = write_temp(&format!(
            "year,gdp_growth,lending_rate,inflation,credit_supply\n{}\n{}\n",
            macro_line(2001),
            macro_line(2001),
        ));
        assert!(matches!(
            load_macro_csv(f.path()),
            Err(Error::DuplicateYear { year: 2001 })
        ));
    }

    fn sample_records() -> Vec<FirmYearRecord> {
        let mut recs = Vec::new();
        for year in 1999..=2002 {
            let mut r = FirmYearRecord::new(FirmId::from("A"), year);
            r.total_assets = Some(100.0);
            recs.push(r);
        }
        recs
    }

    fn sample_macro() -> Vec<MacroYearRecord> {
        (2000..=2002)
            .map(|year| MacroYearRecord {
                year,
                gdp_growth: 2.0,
                lending_rate: 5.0,
                inflation: 1.5,
                credit_supply: 100.0,
            })
            .collect()
    }

    #[test]
    fn merge_drops_years_outside_macro_range_with_counts() {
        let (ds, diag) = validate_and_merge(sample_records(), sample_macro()).unwrap();
        assert_eq!(ds.records().len(), 3);
        assert_eq!(diag.dropped_outside_macro.get(&1999), Some(&1));
        assert_eq!(diag.dropped_nonpositive_assets, 0);
        assert_eq!(diag.dropped_total(), diag.input_rows - diag.output_rows);
    }

    #[test]
    fn merge_drops_nonpositive_assets() {
        let mut recs = sample_records();
        recs[1].total_assets = Some(0.0);
        recs[2].total_assets = None;
        let (ds, diag) = validate_and_merge(recs, sample_macro()).unwrap();
        assert_eq!(diag.dropped_nonpositive_assets, 2);
        assert_eq!(ds.records().len(), 1);
    }

    #[test]
    fn merge_with_nothing_left_is_an_error() {
        let mut recs = sample_records();
        for r in &mut recs {
            r.total_assets = None;
        }
        assert!(matches!(
            validate_and_merge(recs, sample_macro()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn merge_is_idempotent() {
        let (ds, _) = validate_and_merge(sample_records(), sample_macro()).unwrap();
        let (ds2, diag2) =
            validate_and_merge(ds.records().to_vec(), ds.macro_series().to_vec()).unwrap();
        assert_eq!(ds.records(), ds2.records());
        assert_eq!(diag2.dropped_total(), 0);
    }

    #[test]
    fn csv_round_trip_reproduces_records_exactly() {
        let mut recs = sample_records();
        recs[0].ebit = Some(0.1 + 0.2); // not exactly representable sum
        recs[1].sales = Some(1.0 / 3.0);
        recs[3].cash = Some(-7.25e-9);
        let dir = tempfile::tempdir().unwrap();
        let panel_path = dir.path().join("panel.csv");
        write_panel_csv(&panel_path, &recs).unwrap();
        let back = load_panel_csv(&panel_path).unwrap();
        assert_eq!(recs, back);

        let macros = sample_macro();
        let macro_path = dir.path().join("macro.csv");
        write_macro_csv(&macro_path, &macros).unwrap();
        let back = load_macro_csv(&macro_path).unwrap();
        assert_eq!(macros, back);
    }

    #[test]
    fn firm_history_is_sorted_by_year() {
        let (ds, _) = validate_and_merge(sample_records(), sample_macro()).unwrap();
        let hist = ds.firm_history(&FirmId::from("A"));
        let years: Vec<i32> = hist.iter().map(|r| r.year).collect();
        assert_eq!(years, vec![2000, 2001, 2002]);
    }
}
