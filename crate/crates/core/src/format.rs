//! Plain-text histogram files.
//!
//! ```text
//! coc-v1 count 4
//! 0
//! 2
//! 1
//! 2
//! ```
//!
//! The header names the representation and the number of value lines that follow.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hist::{CountHistogram, CumulativeHistogram, UnattributedHistogram};

const MAGIC: &str = "coc-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Count,
    Cumulative,
    Unattributed,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Count => "count",
            Representation::Cumulative => "cumulative",
            Representation::Unattributed => "unattributed",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Representation::Count),
            "cumulative" => Ok(Representation::Cumulative),
            "unattributed" => Ok(Representation::Unattributed),
            other => Err(Error::Format(format!("unknown representation `{other}`"))),
        }
    }
}

/// A histogram file whose values have not been validated as nonnegative integers.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHistogram {
    pub representation: Representation,
    pub values: Vec<String>,
}

impl RawHistogram {
    /// Strict conversion to unsigned integers.
    pub fn to_u64(&self) -> Result<Vec<u64>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.parse::<u64>().map_err(|_| {
                    Error::Format(format!("value {} (`{v}`) is not a nonnegative integer", i + 1))
                })
            })
            .collect()
    }
}

pub fn write_values<W: Write>(mut w: W, repr: Representation, values: &[u64]) -> Result<()> {
    writeln!(w, "{MAGIC} {repr} {}", values.len())?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw<R: BufRead>(r: R) -> Result<RawHistogram> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::Format("missing header".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Format(format!("bad header `{header}`")));
    }
    let representation: Representation =
        parts.next().ok_or_else(|| Error::Format("header lacks representation".into()))?.parse()?;
    let len: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad length in header `{header}`")))?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("trailing fields in header `{header}`")));
    }
    let mut values = Vec::with_capacity(len);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            values.push(t.to_string());
        }
    }
    if values.len() != len {
        return Err(Error::Format(format!("header declares {len} values, found {}", values.len())));
    }
    Ok(RawHistogram { representation, values })
}

fn read_as<R: BufRead>(r: R, want: Representation) -> Result<Vec<u64>> {
    let raw = read_raw(r)?;
    if raw.representation != want {
        return Err(Error::Format(format!("expected {want} histogram, found {}", raw.representation)));
    }
    raw.to_u64()
}

pub fn write_count<W: Write>(w: W, h: &CountHistogram) -> Result<()> {
    write_values(w, Representation::Count, h.counts())
}

pub fn read_count<R: BufRead>(r: R) -> Result<CountHistogram> {
    Ok(CountHistogram::new(read_as(r, Representation::Count)?))
}

pub fn write_cumulative<W: Write>(w: W, h: &CumulativeHistogram) -> Result<()> {
    write_values(w, Representation::Cumulative, h.csums())
}

pub fn read_cumulative<R: BufRead>(r: R) -> Result<CumulativeHistogram> {
    CumulativeHistogram::new(read_as(r, Representation::Cumulative)?)
}

pub fn write_unattributed<W: Write>(w: W, h: &UnattributedHistogram) -> Result<()> {
    write_values(w, Representation::Unattributed, h.sizes())
}

pub fn read_unattributed<R: BufRead>(r: R) -> Result<UnattributedHistogram> {
    UnattributedHistogram::new(read_as(r, Representation::Unattributed)?)
}
