//! Delivery periods and calendar arithmetic.
//!
//! A [`DeliveryPeriod`] is a half-open window `[start, end)` of local clock
//! time. Hour counts ignore daylight saving unless [`CalendarConfig::dst_aware`]
//! is set, in which case the central-European switch dates apply.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Hour,
    Day,
    Weekend,
    Week,
    Month,
    Quarter,
    Year,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Hour => "hour",
            Granularity::Day => "day",
            Granularity::Weekend => "weekend",
            Granularity::Week => "week",
            Granularity::Month => "month",
            Granularity::Quarter => "quarter",
            Granularity::Year => "year",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "hour" | "h" => Granularity::Hour,
            "day" | "d" => Granularity::Day,
            "weekend" | "we" => Granularity::Weekend,
            "week" | "w" => Granularity::Week,
            "month" | "m" => Granularity::Month,
            "quarter" | "q" => Granularity::Quarter,
            "year" | "cal" | "y" => Granularity::Year,
            _ => return Err(Error::InvalidContract(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DayType {
    Weekday,
    Saturday,
    Sunday,
}

impl DayType {
    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat => DayType::Saturday,
            Weekday::Sun => DayType::Sunday,
            _ => DayType::Weekday,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            DayType::Weekday => "WD",
            DayType::Saturday => "SAT",
            DayType::Sunday => "SUN",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarConfig {
    /// Count the 23- and 25-hour days of the European summer-time switch.
    #[serde(default)]
    pub dst_aware: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeliveryPeriod {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub granularity: Granularity,
}

const MONTHS: [&str; 12] =
    ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

fn midnight(date: NaiveDate) -> NaiveDateTime {
    date.and_time(NaiveTime::MIN)
}

fn ymd(year: i32, month: u32, day: u32) -> Result<NaiveDate> {
    NaiveDate::from_ymd_opt(year, month, day)
        .ok_or_else(|| Error::InvalidDeliveryWindow(format!("{year}-{month}-{day}")))
}

/// First day of the month `months` months after the one containing `date`.
pub(crate) fn add_months(date: NaiveDate, months: i32) -> NaiveDate {
    let idx = date.year() * 12 + date.month0() as i32 + months;
    NaiveDate::from_ymd_opt(idx.div_euclid(12), idx.rem_euclid(12) as u32 + 1, 1)
        .expect("month index in chrono range")
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let mut d = add_months(NaiveDate::from_ymd_opt(year, month, 1).unwrap(), 1) - Duration::days(1);
    while d.weekday() != Weekday::Sun {
        d -= Duration::days(1);
    }
    d
}

impl DeliveryPeriod {
    pub fn year(year: i32) -> Result<Self> {
        let start = ymd(year, 1, 1)?;
        Ok(Self::span(start, ymd(year + 1, 1, 1)?, Granularity::Year))
    }

    pub fn quarter(year: i32, quarter: u32) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::InvalidContract(format!("Q{quarter}-{year}")));
        }
        let start = ymd(year, 3 * (quarter - 1) + 1, 1)?;
        Ok(Self::span(start, add_months(start, 3), Granularity::Quarter))
    }

    pub fn month(year: i32, month: u32) -> Result<Self> {
        let start = ymd(year, month, 1)?;
        Ok(Self::span(start, add_months(start, 1), Granularity::Month))
    }

    pub fn day(date: NaiveDate) -> Self {
        Self::span(date, date + Duration::days(1), Granularity::Day)
    }

    /// Saturday-Sunday block starting on `saturday`.
    pub fn weekend(saturday: NaiveDate) -> Result<Self> {
        if saturday.weekday() != Weekday::Sat {
            return Err(Error::InvalidContract(format!("WE-{saturday}: not a Saturday")));
        }
        Ok(Self::span(saturday, saturday + Duration::days(2), Granularity::Weekend))
    }

    /// Monday-to-Sunday week starting on `monday`.
    pub fn week(monday: NaiveDate) -> Result<Self> {
        if monday.weekday() != Weekday::Mon {
            return Err(Error::InvalidContract(format!("W-{monday}: not a Monday")));
        }
        Ok(Self::span(monday, monday + Duration::days(7), Granularity::Week))
    }

    pub fn hour(date: NaiveDate, hour: u32) -> Result<Self> {
        if hour > 23 {
            return Err(Error::InvalidContract(format!("H-{date}-{hour}")));
        }
        let start = midnight(date) + Duration::hours(hour as i64);
        Ok(DeliveryPeriod { start, end: start + Duration::hours(1), granularity: Granularity::Hour })
    }

    /// The period of `granularity` whose window contains the instant `at`.
    pub fn containing(at: NaiveDateTime, granularity: Granularity) -> Result<Self> {
        let d = at.date();
        let back = |n: u32| d - Duration::days(n as i64);
        match granularity {
            Granularity::Year => Self::year(d.year()),
            Granularity::Quarter => Self::quarter(d.year(), d.month0() / 3 + 1),
            Granularity::Month => Self::month(d.year(), d.month()),
            Granularity::Week => Self::week(back(d.weekday().num_days_from_monday())),
            Granularity::Weekend => match d.weekday() {
                Weekday::Sat => Self::weekend(d),
                Weekday::Sun => Self::weekend(back(1)),
                _ => Err(Error::InvalidContract(format!("{d} is not in a weekend"))),
            },
            Granularity::Day => Ok(Self::day(d)),
            Granularity::Hour => Self::hour(d, at.hour()),
        }
    }

    fn span(start: NaiveDate, end: NaiveDate, granularity: Granularity) -> Self {
        DeliveryPeriod { start: midnight(start), end: midnight(end), granularity }
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start.date()
    }

    /// Last calendar day touched by the window.
    pub fn last_date(&self) -> NaiveDate {
        (self.end - Duration::nanoseconds(1)).date()
    }

    pub fn contains(&self, other: &DeliveryPeriod) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Canonical absolute contract code, e.g. `CAL-2014`, `Q3-2012`, `M-2012-07`.
    pub fn code(&self) -> String {
        let d = self.start.date();
        match self.granularity {
            Granularity::Year => format!("CAL-{}", d.year()),
            Granularity::Quarter => format!("Q{}-{}", d.month0() / 3 + 1, d.year()),
            Granularity::Month => format!("M-{}-{:02}", d.year(), d.month()),
            Granularity::Week => format!("W-{d}"),
            Granularity::Weekend => format!("WE-{d}"),
            Granularity::Day => format!("D-{d}"),
            Granularity::Hour => format!("H-{d}-{:02}", self.start.hour()),
        }
    }

    /// Sub-periods of the given finer granularity, in delivery order.
    pub fn children(&self, granularity: Granularity) -> Result<Vec<DeliveryPeriod>> {
        let invalid = || {
            Error::InvalidSplit(format!("cannot split {} into {}s", self.code(), granularity))
        };
        if granularity >= self.granularity {
            return Err(invalid());
        }
        let mut out = Vec::new();
        match granularity {
            Granularity::Hour => {
                let mut t = self.start;
                while t < self.end {
                    out.push(DeliveryPeriod::hour(t.date(), t.hour())?);
                    t += Duration::hours(1);
                }
            }
            Granularity::Day => {
                let mut d = self.start.date();
                while midnight(d) < self.end {
                    out.push(DeliveryPeriod::day(d));
                    d += Duration::days(1);
                }
            }
            Granularity::Month => {
                let mut d = self.start.date();
                while midnight(d) < self.end {
                    out.push(DeliveryPeriod::month(d.year(), d.month())?);
                    d = add_months(d, 1);
                }
            }
            Granularity::Quarter => {
                let mut d = self.start.date();
                while midnight(d) < self.end {
                    out.push(DeliveryPeriod::quarter(d.year(), d.month0() / 3 + 1)?);
                    d = add_months(d, 3);
                }
            }
            // weeks and weekends do not tile months, quarters or years
            Granularity::Week | Granularity::Weekend | Granularity::Year => return Err(invalid()),
        }
        if out.first().map(|c| c.start) != Some(self.start)
            || out.last().map(|c| c.end) != Some(self.end)
        {
            return Err(invalid());
        }
        Ok(out)
    }

    /// Calendar key of this period inside its natural parent, e.g. `Q2`, `Apr`, `D05`, `H13`.
    pub fn position_key(&self) -> String {
        let d = self.start.date();
        match self.granularity {
            Granularity::Year => String::new(),
            Granularity::Quarter => format!("Q{}", d.month0() / 3 + 1),
            Granularity::Month => MONTHS[d.month0() as usize].to_string(),
            Granularity::Day => format!("D{:02}", d.day()),
            Granularity::Hour => format!("H{:02}", self.start.hour()),
            Granularity::Week | Granularity::Weekend => String::new(),
        }
    }
}

impl fmt::Display for DeliveryPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

pub(crate) fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| Error::InvalidContract(s.to_string()))
}

impl FromStr for DeliveryPeriod {
    type Err = Error;

    /// Parses the absolute code forms produced by [`DeliveryPeriod::code`].
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidContract(s.to_string());
        let upper = s.trim().to_ascii_uppercase();
        let (head, rest) = upper.split_once('-').ok_or_else(bad)?;
        match head {
            "CAL" | "Y" => DeliveryPeriod::year(rest.parse().map_err(|_| bad())?),
            "M" => {
                let (y, m) = rest.split_once('-').ok_or_else(bad)?;
                DeliveryPeriod::month(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
            }
            "D" => Ok(DeliveryPeriod::day(parse_date(rest)?)),
            "WE" => DeliveryPeriod::weekend(parse_date(rest)?),
            "W" => DeliveryPeriod::week(parse_date(rest)?),
            "H" => {
                let (date, hour) = rest.rsplit_once('-').ok_or_else(bad)?;
                DeliveryPeriod::hour(parse_date(date)?, hour.parse().map_err(|_| bad())?)
            }
            q if q.len() == 2 && q.starts_with('Q') => DeliveryPeriod::quarter(
                rest.parse().map_err(|_| bad())?,
                q[1..].parse().map_err(|_| bad())?,
            ),
            _ => Err(bad()),
        }
    }
}

impl Serialize for DeliveryPeriod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for DeliveryPeriod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hours of delivery in the window.
pub fn delivery_hours(period: &DeliveryPeriod, calendar: &CalendarConfig) -> Result<u32> {
    if period.end <= period.start {
        return Err(Error::InvalidDeliveryWindow(format!(
            "end {} not after start {}",
            period.end, period.start
        )));
    }
    let mut hours = (period.end - period.start).num_hours();
    if calendar.dst_aware {
        for year in period.start.year()..=period.end.year() {
            // clocks jump at 02:00 local time
            let spring = last_sunday(year, 3).and_hms_opt(2, 0, 0).unwrap();
            let autumn = last_sunday(year, 10).and_hms_opt(2, 0, 0).unwrap();
            if period.start <= spring && spring < period.end {
                hours -= 1;
            }
            if period.start <= autumn && autumn < period.end {
                hours += 1;
            }
        }
    }
    if hours <= 0 {
        return Err(Error::InvalidDeliveryWindow(format!("{} has no delivery hours", period)));
    }
    Ok(hours as u32)
}
