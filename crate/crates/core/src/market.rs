//! Contract codes, quote tables and regression-dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::calendar::{add_months, parse_date, DeliveryPeriod};
use crate::constraints::GranularitySplit;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelativeKind {
    Day,
    Weekend,
    Week,
    Month,
    Quarter,
    Year,
}

impl RelativeKind {
    fn prefix(self) -> &'static str {
        match self {
            RelativeKind::Day => "D",
            RelativeKind::Weekend => "WE",
            RelativeKind::Week => "W",
            RelativeKind::Month => "M",
            RelativeKind::Quarter => "Q",
            RelativeKind::Year => "Y",
        }
    }
}

/// A contract as quoted: an absolute window or an offset from the quote date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContractCode {
    Absolute(DeliveryPeriod),
    Relative { kind: RelativeKind, offset: u32 },
}

impl fmt::Display for ContractCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContractCode::Absolute(p) => write!(f, "{p}"),
            ContractCode::Relative { kind, offset } => write!(f, "{}+{offset}", kind.prefix()),
        }
    }
}

impl FromStr for ContractCode {
    type Err = Error;

    /// `D+1`, `WE+2`, `W+1`, `M+3`, `Q+1`, `Y+2` (also `CAL+1`), or an absolute code.
    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        if let Some((head, n)) = upper.split_once('+') {
            let kind = match head {
                "D" => RelativeKind::Day,
                "WE" => RelativeKind::Weekend,
                "W" => RelativeKind::Week,
                "M" => RelativeKind::Month,
                "Q" => RelativeKind::Quarter,
                "Y" | "CAL" => RelativeKind::Year,
                _ => return Err(Error::InvalidContract(s.to_string())),
            };
            let offset: u32 = n.parse().map_err(|_| Error::InvalidContract(s.to_string()))?;
            if offset == 0 {
                return Err(Error::InvalidContract(format!("{s}: offset must be >= 1")));
            }
            return Ok(ContractCode::Relative { kind, offset });
        }
        Ok(ContractCode::Absolute(upper.parse()?))
    }
}

fn first_saturday_after(date: NaiveDate) -> NaiveDate {
    let ahead = (Weekday::Sat.num_days_from_monday() as i64 - date.weekday().num_days_from_monday() as i64)
        .rem_euclid(7);
    date + Duration::days(if ahead == 0 { 7 } else { ahead })
}

/// Delivery window of `code` as seen on `quote_date`. Absolute codes are returned unchanged.
pub fn resolve_relative(code: &ContractCode, quote_date: NaiveDate) -> Result<DeliveryPeriod> {
    let (kind, n) = match *code {
        ContractCode::Absolute(p) => return Ok(p),
        ContractCode::Relative { kind, offset } => (kind, offset as i64),
    };
    match kind {
        RelativeKind::Day => Ok(DeliveryPeriod::day(quote_date + Duration::days(n))),
        RelativeKind::Weekend => {
            DeliveryPeriod::weekend(first_saturday_after(quote_date) + Duration::days(7 * (n - 1)))
        }
        RelativeKind::Week => {
            let monday = quote_date - Duration::days(quote_date.weekday().num_days_from_monday() as i64);
            DeliveryPeriod::week(monday + Duration::days(7 * n))
        }
        RelativeKind::Month => {
            let start = add_months(quote_date, n as i32);
            DeliveryPeriod::month(start.year(), start.month())
        }
        RelativeKind::Quarter => {
            let current = add_months(quote_date, -((quote_date.month0() % 3) as i32));
            let start = add_months(current, 3 * n as i32);
            DeliveryPeriod::quarter(start.year(), start.month0() / 3 + 1)
        }
        RelativeKind::Year => DeliveryPeriod::year(quote_date.year() + n as i32),
    }
}

/// Prices keyed by quote date and resolved delivery window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuoteTable {
    quotes: BTreeMap<(NaiveDate, DeliveryPeriod), f64>,
}

#[derive(Debug, Serialize)]
struct QuoteRow<'a> {
    quote_date: NaiveDate,
    contract: &'a str,
    price: f64,
}

impl QuoteTable {
    pub fn new() -> Self {
        QuoteTable::default()
    }

    pub fn insert(&mut self, date: NaiveDate, period: DeliveryPeriod, price: f64) -> Result<()> {
        if !price.is_finite() {
            return Err(Error::NonFinite);
        }
        if period.start_date() < date {
            return Err(Error::InvalidContract(format!("{period} starts before quote date {date}")));
        }
        if self.quotes.insert((date, period), price).is_some() {
            return Err(Error::DuplicateQuote { line: 0, date, period: period.code() });
        }
        Ok(())
    }

    pub fn get(&self, date: NaiveDate, period: &DeliveryPeriod) -> Option<f64> {
        self.quotes.get(&(date, *period)).copied()
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, DeliveryPeriod, f64)> + '_ {
        self.quotes.iter().map(|((d, p), v)| (*d, *p, *v))
    }

    pub fn dates(&self) -> BTreeSet<NaiveDate> {
        self.quotes.keys().map(|(d, _)| *d).collect()
    }

    /// Quotes whose quote date falls in `range`.
    pub fn filter_dates(&self, range: &RangeInclusive<NaiveDate>) -> QuoteTable {
        QuoteTable {
            quotes: self
                .quotes
                .iter()
                .filter(|((d, _), _)| range.contains(d))
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }

    /// Reads `quote_date,contract,price` rows; relative codes are resolved per row.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["quote_date", "contract", "price"] {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header quote_date,contract,price, got {}", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut table = QuoteTable::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_err = |message: String| Error::Parse { line, message };
            if record.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", record.len())));
            }
            let date = parse_date(&record[0]).map_err(|_| parse_err(format!("bad date {:?}", &record[0])))?;
            let code: ContractCode = record[1].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let price: f64 =
                record[2].parse().map_err(|_| parse_err(format!("bad price {:?}", &record[2])))?;
            let period = resolve_relative(&code, date).map_err(|e| parse_err(e.to_string()))?;
            match table.insert(date, period, price) {
                Err(Error::DuplicateQuote { date, period, .. }) => {
                    return Err(Error::DuplicateQuote { line, date, period })
                }
                Err(e) => return Err(parse_err(e.to_string())),
                Ok(()) => {}
            }
        }
        Ok(table)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        QuoteTable::from_reader(file)
    }

    /// Writes absolute codes in the same CSV layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for ((date, period), price) in &self.quotes {
            let code = period.code();
            w.serialize(QuoteRow { quote_date: *date, contract: &code, price: *price })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Rows considered and dropped while assembling a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    /// Parent quotes at the split's position.
    pub candidates: usize,
    pub complete: usize,
    pub dropped: usize,
    /// Missing-quote counts by child position key.
    pub missing_by_child: BTreeMap<String, usize>,
}

/// Children of `parent` that play the roles of the split's children.
fn matching_children(parent: &DeliveryPeriod, split: &GranularitySplit) -> Option<Vec<DeliveryPeriod>> {
    if *parent == split.parent {
        return Some(split.children.clone());
    }
    let children = parent.children(split.child_granularity()).ok()?;
    let same_keys = children.len() == split.len()
        && children.iter().zip(&split.children).all(|(a, b)| a.position_key() == b.position_key());
    same_keys.then_some(children)
}

/// One row per quote date and parent contract of the split's kind with all children quoted.
///
/// A parent qualifies when it has the split parent's granularity and calendar
/// position (e.g. every calendar year for a year-to-quarter split, every April for
/// an April-to-day split) and its children line up with the split's children.
pub fn build_regression_dataset(
    table: &QuoteTable,
    split: &GranularitySplit,
) -> Result<(Dataset, CompletenessReport)> {
    let key = split.parent.position_key();
    let mut report = CompletenessReport::default();
    let mut x = Vec::new();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (date, period, price) in table.iter() {
        if period.granularity != split.parent.granularity || period.position_key() != key {
            continue;
        }
        let Some(children) = matching_children(&period, split) else { continue };
        report.candidates += 1;
        let quoted: Vec<Option<f64>> = children.iter().map(|c| table.get(date, c)).collect();
        if quoted.iter().all(Option::is_some) {
            x.push(price);
            rows.push(quoted.into_iter().flatten().collect::<Vec<_>>());
            ids.push(format!("{date}/{}", period.code()));
            report.complete += 1;
        } else {
            report.dropped += 1;
            for (c, q) in children.iter().zip(&quoted) {
                if q.is_none() {
                    *report.missing_by_child.entry(c.position_key()).or_default() += 1;
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::NoJointObservations);
    }
    Ok((Dataset::from_rows(x, &rows, Some(ids))?, report))
}
