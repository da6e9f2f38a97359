//! Transaction ingestion, weekly aggregation and the panel and state-path
//! CSV formats.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::decoding::StatePath;
use crate::error::{Error, Result};
use crate::model::{PanelDataset, RawBorrower, State};
use crate::simulate::{amount_column, count_column, CATEGORIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    BasicExpenses,
    DiscretionaryExpenses,
    NonRecurrentIncome,
    BasicTransfers,
    DiscretionaryTransfers,
    NonRecurrentTransfers,
    RecurrentIncome,
    LuxuryExpenses,
}

impl Category {
    /// Column order of the weekly covariates.
    pub const ALL: [Category; 8] = [
        Category::BasicExpenses,
        Category::DiscretionaryExpenses,
        Category::NonRecurrentIncome,
        Category::BasicTransfers,
        Category::DiscretionaryTransfers,
        Category::NonRecurrentTransfers,
        Category::RecurrentIncome,
        Category::LuxuryExpenses,
    ];

    pub fn as_str(self) -> &'static str {
        CATEGORIES[self.position()]
    }

    fn position(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("listed")
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown category {s:?}")))
    }
}

/// Names of the sixteen covariates, amount then count per category.
pub fn covariate_names() -> Vec<String> {
    Category::ALL
        .iter()
        .flat_map(|c| [amount_column(c.as_str()), count_column(c.as_str())])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub borrower_id: String,
    pub date: NaiveDate,
    pub amount: f64,
    pub category: Category,
    pub loan_flag: bool,
}

pub const TRANSACTIONS_HEADER: [&str; 5] = ["borrower_id", "date", "amount", "category", "loan_flag"];

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Validation(format!(
            "expected header {}, found {}",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn row_error(line: u64, message: impl Into<String>) -> Error {
    Error::Row { line, message: message.into() }
}

fn line_of(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map_or(fallback, |p| p.line())
}

pub fn read_transactions_csv<R: Read>(reader: R) -> Result<Vec<TransactionRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &TRANSACTIONS_HEADER)?;
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = line_of(&record, row as u64 + 2);
        if record.len() != TRANSACTIONS_HEADER.len() {
            return Err(row_error(line, format!("expected 5 fields, found {}", record.len())));
        }
        let borrower_id = record[0].trim().to_string();
        if borrower_id.is_empty() {
            return Err(row_error(line, "empty borrower_id"));
        }
        let date = NaiveDate::parse_from_str(record[1].trim(), "%Y-%m-%d")
            .map_err(|e| row_error(line, format!("invalid date {:?}: {e}", &record[1])))?;
        let amount: f64 = record[2]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| row_error(line, format!("invalid amount {:?}", &record[2])))?;
        let category = record[3].trim().parse().map_err(|e: Error| row_error(line, e.to_string()))?;
        let loan_flag = match record[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(row_error(line, format!("loan_flag must be 0 or 1, found {other:?}"))),
        };
        out.push(TransactionRecord { borrower_id, date, amount, category, loan_flag });
    }
    if out.is_empty() {
        return Err(Error::Validation("transaction file has no rows".into()));
    }
    Ok(out)
}

pub fn write_transactions_csv<W: Write>(records: &[TransactionRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(TRANSACTIONS_HEADER)?;
    for r in records {
        out.write_record([
            r.borrower_id.clone(),
            r.date.format("%Y-%m-%d").to_string(),
            r.amount.to_string(),
            r.category.to_string(),
            if r.loan_flag { "1" } else { "0" }.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn week_start(date: NaiveDate, anchor: Weekday) -> NaiveDate {
    let back = (7 + date.weekday().num_days_from_monday() - anchor.num_days_from_monday()) % 7;
    date - chrono::Days::new(u64::from(back))
}

#[derive(Default)]
struct Cell {
    amounts: Vec<f64>,
    count: usize,
}

/// Builds the weekly panel. Weeks start on `anchor` and run from each
/// borrower's first to last active week; loan rows only feed the count.
pub fn aggregate_weekly(records: &[TransactionRecord], anchor: Weekday, standardize: bool) -> Result<PanelDataset> {
    if records.is_empty() {
        return Err(Error::Validation("no transactions to aggregate".into()));
    }
    let mut by_borrower: BTreeMap<&str, Vec<&TransactionRecord>> = BTreeMap::new();
    for r in records {
        by_borrower.entry(r.borrower_id.as_str()).or_default().push(r);
    }
    let raw = by_borrower
        .into_iter()
        .map(|(id, rows)| {
            let starts: Vec<NaiveDate> = rows.iter().map(|r| week_start(r.date, anchor)).collect();
            let first = *starts.iter().min().expect("nonempty");
            let last = *starts.iter().max().expect("nonempty");
            let len = ((last - first).num_days() / 7) as usize + 1;
            let mut loans = vec![0u32; len];
            let mut cells: Vec<Vec<Cell>> = (0..len).map(|_| (0..Category::ALL.len()).map(|_| Cell::default()).collect()).collect();
            for (r, start) in rows.iter().zip(&starts) {
                let t = ((*start - first).num_days() / 7) as usize;
                if r.loan_flag {
                    loans[t] += 1;
                } else {
                    let cell = &mut cells[t][r.category.position()];
                    cell.amounts.push(r.amount.abs());
                    cell.count += 1;
                }
            }
            let weeks = loans
                .into_iter()
                .zip(cells)
                .map(|(y, week)| {
                    let values = week
                        .into_iter()
                        .flat_map(|mut c| {
                            c.amounts.sort_by(f64::total_cmp);
                            [c.amounts.iter().sum::<f64>(), c.count as f64]
                        })
                        .collect();
                    (y, values)
                })
                .collect();
            RawBorrower { borrower_id: id.to_string(), weeks }
        })
        .collect();
    PanelDataset::from_raw(raw, covariate_names(), standardize)
}

pub const PANEL_PREFIX: [&str; 3] = ["borrower_id", "week", "count"];

/// Writes the raw (unstandardized) covariates of a panel.
pub fn write_panel_csv<W: Write>(panel: &PanelDataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let header: Vec<&str> = PANEL_PREFIX.iter().copied().chain(panel.raw_names().iter().map(String::as_str)).collect();
    out.write_record(&header)?;
    for b in &panel.borrowers {
        for w in &b.weeks {
            let mut row = vec![b.borrower_id.clone(), w.week.to_string(), w.count.to_string()];
            row.extend(w.raw.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a panel file. Borrowers keep their order of first appearance and
/// each borrower's rows must list weeks 1, 2, ... in order.
pub fn read_panel_csv<R: Read>(reader: R, standardize: bool) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < PANEL_PREFIX.len() || header.iter().take(3).ne(PANEL_PREFIX) {
        return Err(Error::Validation(format!(
            "panel header must start with {}",
            PANEL_PREFIX.join(",")
        )));
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut order: Vec<RawBorrower> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = line_of(&record, row as u64 + 2);
        if record.len() != header.len() {
            return Err(row_error(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let id = record[0].to_string();
        let week: u32 = record[1].parse().map_err(|_| row_error(line, format!("invalid week {:?}", &record[1])))?;
        let count: u32 = record[2].parse().map_err(|_| row_error(line, format!("invalid count {:?}", &record[2])))?;
        let values = record
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| row_error(line, format!("invalid covariate {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(RawBorrower { borrower_id: id.clone(), weeks: Vec::new() });
            order.len() - 1
        });
        let borrower = &mut order[slot];
        let expected = borrower.weeks.len() as u32 + 1;
        if week != expected {
            return Err(row_error(line, format!("borrower {id}: expected week {expected}, found {week}")));
        }
        borrower.weeks.push((count, values));
    }
    if order.is_empty() {
        return Err(Error::Validation("panel file has no rows".into()));
    }
    PanelDataset::from_raw(order, names, standardize)
}

pub const STATES_HEADER: [&str; 4] = ["borrower_id", "week", "state", "count"];

pub fn write_states_csv<W: Write>(paths: &[StatePath], panel: &PanelDataset, writer: W) -> Result<()> {
    if paths.len() != panel.n_borrowers() {
        return Err(Error::Dimension(format!("{} paths for {} borrowers", paths.len(), panel.n_borrowers())));
    }
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(STATES_HEADER)?;
    for (path, series) in paths.iter().zip(&panel.borrowers) {
        if path.borrower_id != series.borrower_id || path.len() != series.len() {
            return Err(Error::Dimension(format!("path for {} does not match the panel", path.borrower_id)));
        }
        for (s, w) in path.states.iter().zip(&series.weeks) {
            out.write_record([series.borrower_id.clone(), w.week.to_string(), s.label().to_string(), w.count.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads decoded paths. The file carries no joint likelihood, so
/// `log_joint` is NaN.
pub fn read_states_csv<R: Read>(reader: R) -> Result<Vec<StatePath>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, &STATES_HEADER)?;
    let mut paths: Vec<StatePath> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = line_of(&record, row as u64 + 2);
        if record.len() != STATES_HEADER.len() {
            return Err(row_error(line, "expected 4 fields"));
        }
        let id = record[0].to_string();
        let week: usize = record[1].parse().map_err(|_| row_error(line, format!("invalid week {:?}", &record[1])))?;
        let label: u8 = record[2].parse().map_err(|_| row_error(line, format!("invalid state {:?}", &record[2])))?;
        let state = State::from_label(label).map_err(|e| row_error(line, e.to_string()))?;
        record[3].parse::<u32>().map_err(|_| row_error(line, format!("invalid count {:?}", &record[3])))?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            paths.push(StatePath { borrower_id: id.clone(), states: Vec::new(), log_joint: f64::NAN });
            paths.len() - 1
        });
        let path = &mut paths[slot];
        if week != path.len() + 1 {
            return Err(row_error(line, format!("borrower {id}: expected week {}, found {week}", path.len() + 1)));
        }
        path.states.push(state);
    }
    if paths.is_empty() {
        return Err(Error::Validation("state file has no rows".into()));
    }
    Ok(paths)
}
