//! Human Mortality Database `Mx_1x1` period life-table text files.
//!
//! Layout: a title line, an optional blank line and a column header
//! (`Year Age Female Male Total`), followed by one whitespace-separated record
//! per (year, age). The open age class is written `110+` and missing values `.`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Which rate column of the table to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "female" => Ok(Sex::Female),
            "male" => Ok(Sex::Male),
            "total" => Ok(Sex::Total),
            other => Err(format!("unknown rate column `{other}` (expected female, male or total)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityRecord {
    pub year: i32,
    pub age: u32,
    /// True for the open age class (`110+`).
    pub open_age: bool,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub total: Option<f64>,
}

impl MortalityRecord {
    pub fn rate(&self, sex: Sex) -> Option<f64> {
        match sex {
            Sex::Female => self.female,
            Sex::Male => self.male,
            Sex::Total => self.total,
        }
    }
}

/// Parsed period death rates, one record per (year, age).
#[derive(Debug, Clone, Default)]
pub struct MortalityTable {
    records: Vec<MortalityRecord>,
    index: HashMap<(i32, u32), usize>,
}

impl MortalityTable {
    /// Builds a table, rejecting duplicate (year, age) pairs and invalid rates.
    pub fn from_records(records: Vec<MortalityRecord>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            for rate in [rec.female, rec.male, rec.total].into_iter().flatten() {
                if !rate.is_finite() || rate < 0.0 {
                    return Err(DataError::Malformed {
                        line: i + 1,
                        reason: format!("rate {rate} is not a finite non-negative number"),
                    });
                }
            }
            if index.insert((rec.year, rec.age), i).is_some() {
                return Err(DataError::Malformed {
                    line: i + 1,
                    reason: format!("duplicate record for year {}, age {}", rec.year, rec.age),
                });
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[MortalityRecord] {
        &self.records
    }

    pub fn get(&self, year: i32, age: u32) -> Option<&MortalityRecord> {
        self.index.get(&(year, age)).map(|&i| &self.records[i])
    }

    pub fn rate(&self, sex: Sex, year: i32, age: u32) -> Option<f64> {
        self.get(year, age).and_then(|r| r.rate(sex))
    }

    /// Distinct years in file order.
    pub fn years(&self) -> Vec<i32> {
        let mut out: Vec<i32> = Vec::new();
        for r in &self.records {
            if out.last() != Some(&r.year) {
                out.push(r.year);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn parse_rate(token: &str, line: usize) -> Result<Option<f64>, DataError> {
    if token == "." {
        return Ok(None);
    }
    let v: f64 = token.parse().map_err(|_| DataError::Malformed {
        line,
        reason: format!("cannot parse rate `{token}`"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(DataError::Malformed { line, reason: format!("invalid rate `{token}`") });
    }
    Ok(Some(v))
}

/// Parses an HMD `Mx_1x1` file. Line numbers in errors are 1-based.
pub fn parse_hmd_1x1(text: &str) -> Result<MortalityTable, DataError> {
    let mut records: Vec<MortalityRecord> = Vec::new();
    let mut in_header = true;
    let mut last: Option<(i32, u32)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if in_header {
            if tokens[0].eq_ignore_ascii_case("year") {
                in_header = false;
                continue;
            }
            if tokens[0].parse::<i32>().is_err() {
                // title line
                continue;
            }
            in_header = false;
        }
        if tokens.len() != 5 {
            return Err(DataError::Malformed {
                line: line_no,
                reason: format!("expected 5 columns, found {}", tokens.len()),
            });
        }
        let year: i32 = tokens[0].parse().map_err(|_| DataError::Malformed {
            line: line_no,
            reason: format!("cannot parse year `{}`", tokens[0]),
        })?;
        let (age, open_age) = match tokens[1].strip_suffix('+') {
            Some(base) => (base, true),
            None => (tokens[1], false),
        };
        let age: u32 = age.parse().map_err(|_| DataError::Malformed {
            line: line_no,
            reason: format!("cannot parse age `{}`", tokens[1]),
        })?;
        if let Some((prev_year, prev_age)) = last {
            if year < prev_year {
                return Err(DataError::NonMonotoneYears { line: line_no, year, previous: prev_year });
            }
            if year == prev_year && age <= prev_age {
                return Err(DataError::Malformed {
                    line: line_no,
                    reason: format!("age {age} does not increase within year {year}"),
                });
            }
        }
        last = Some((year, age));
        records.push(MortalityRecord {
            year,
            age,
            open_age,
            female: parse_rate(tokens[2], line_no)?,
            male: parse_rate(tokens[3], line_no)?,
            total: parse_rate(tokens[4], line_no)?,
        });
    }
    MortalityTable::from_records(records)
}

/// Writes a table back out in `Mx_1x1` layout.
pub fn write_hmd_1x1(table: &MortalityTable, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out);
    let _ = writeln!(out, "  Year          Age             Female            Male           Total");
    let fmt = |v: Option<f64>| v.map_or_else(|| ".".to_string(), |x| format!("{x}"));
    for r in table.records() {
        let age = if r.open_age { format!("{}+", r.age) } else { r.age.to_string() };
        let _ = writeln!(
            out,
            "  {:<4}  {:>10}  {:>16}  {:>14}  {:>14}",
            r.year,
            age,
            fmt(r.female),
            fmt(r.male),
            fmt(r.total)
        );
    }
    out
}
