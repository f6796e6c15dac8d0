use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use super::series::FieldSeries;
use crate::error::{Error, Result};

/// Inclusive range of calendar years (UTC).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidSplit(format!("year range {start}-{end} is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    fn overlaps(&self, other: &YearRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl std::str::FromStr for YearRange {
    type Err = Error;

    /// Parses `1979-2015` or a single year `2016`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim()
                .parse::<i32>()
                .map_err(|_| Error::InvalidSplit(format!("bad year {v:?} in {s:?}")))
        };
        match s.split_once('-') {
            Some((a, b)) => YearRange::new(parse(a)?, parse(b)?),
            None => {
                let y = parse(s)?;
                YearRange::new(y, y)
            }
        }
    }
}

impl std::fmt::Display for YearRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: YearRange,
    pub val: YearRange,
    pub test: YearRange,
}

impl Default for SplitSpec {
    /// 1979–2015 train, 2016 validation, 2017–2018 test.
    fn default() -> Self {
        Self {
            train: YearRange { start: 1979, end: 2015 },
            val: YearRange { start: 2016, end: 2016 },
            test: YearRange { start: 2017, end: 2018 },
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let named = [("train", self.train), ("val", self.val), ("test", self.test)];
        for (i, (na, a)) in named.iter().enumerate() {
            if a.start > a.end {
                return Err(Error::InvalidSplit(format!("{na} range {a} is reversed")));
            }
            for (nb, b) in &named[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::InvalidSplit(format!("{na} range {a} overlaps {nb} range {b}")));
                }
            }
        }
        Ok(())
    }

    /// Index range of `series` falling inside `years`.
    pub fn indices(series: &FieldSeries, years: &YearRange) -> std::ops::Range<usize> {
        let sel: Vec<usize> = (0..series.len())
            .filter(|&t| years.contains(year_of(series.time_at(t))))
            .collect();
        match (sel.first(), sel.last()) {
            (Some(&a), Some(&b)) => a..b + 1,
            _ => 0..0,
        }
    }
}

/// UTC calendar year of a unix timestamp.
pub fn year_of(unix_seconds: i64) -> i32 {
    DateTime::from_timestamp(unix_seconds, 0)
        .map(|d| d.year())
        .unwrap_or(i32::MIN)
}

/// Chronological train/validation/test partition.
pub fn split_by_years(series: &FieldSeries, splits: &SplitSpec) -> Result<[FieldSeries; 3]> {
    splits.validate()?;
    let part = |name: &str, years: &YearRange| {
        let r = SplitSpec::indices(series, years);
        if r.is_empty() {
            return Err(Error::InvalidSplit(format!("{name} split {years} selects no timestamps")));
        }
        series.slice_time(r)
    };
    Ok([
        part("train", &splits.train)?,
        part("val", &splits.val)?,
        part("test", &splits.test)?,
    ])
}
