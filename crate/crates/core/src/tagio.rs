//! Time-tag stream serialization.
//!
//! CSV: header `time_ps,channel,truth`; `channel` is `signal` or `idler`;
//! `truth` is `dark` or `pair:<id>:<k>:<detuning_thz>`.
//!
//! Binary: a headerless sequence of 12-byte little-endian records
//!
//! | offset | type | field                         |
//! |--------|------|-------------------------------|
//! | 0      | u64  | time in whole picoseconds     |
//! | 8      | u8   | channel: 0 signal, 1 idler    |
//! | 9      | u8   | truth kind: 0 dark, 1 pair    |
//! | 10     | i16  | sideband k (0 for dark)       |

use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::events::{Channel, TimeTag, Truth};

pub const RECORD_BYTES: usize = 12;

pub fn write_csv<W: Write>(mut w: W, tags: &[TimeTag]) -> io::Result<()> {
    writeln!(w, "time_ps,channel,truth")?;
    for t in tags {
        let ch = match t.channel {
            Channel::Signal => "signal",
            Channel::Idler => "idler",
        };
        match t.truth {
            Truth::Dark => writeln!(w, "{},{ch},dark", t.time_ps)?,
            Truth::Pair {
                id,
                k,
                detuning_thz,
            } => writeln!(w, "{},{ch},pair:{id}:{k}:{detuning_thz}", t.time_ps)?,
        }
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<TimeTag>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line_no = n + 1;
        let bad = |reason: &str| Error::Parse {
            line: line_no,
            reason: reason.to_string(),
        };
        let line = line.map_err(|e| bad(&e.to_string()))?;
        if n == 0 {
            if line.trim() != "time_ps,channel,truth" {
                return Err(bad("expected header `time_ps,channel,truth`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(time), Some(ch), Some(truth), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three fields"));
        };
        let time_ps: f64 = time.parse().map_err(|_| bad("time is not a number"))?;
        let channel = match ch {
            "signal" => Channel::Signal,
            "idler" => Channel::Idler,
            _ => return Err(bad("unknown channel")),
        };
        let truth = if truth == "dark" {
            Truth::Dark
        } else {
            let parts: Vec<&str> = truth.split(':').collect();
            match parts.as_slice() {
                ["pair", id, k, det] => Truth::Pair {
                    id: id.parse().map_err(|_| bad("bad pair id"))?,
                    k: k.parse().map_err(|_| bad("bad sideband"))?,
                    detuning_thz: det.parse().map_err(|_| bad("bad detuning"))?,
                },
                _ => return Err(bad("unknown truth annotation")),
            }
        };
        out.push(TimeTag {
            time_ps,
            channel,
            truth,
        });
    }
    Ok(out)
}

/// One binary record. Pair id and detuning are not carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRecord {
    pub time_ps: u64,
    pub channel: Channel,
    pub is_pair: bool,
    pub k: i16,
}

impl TryFrom<&TimeTag> for TagRecord {
    type Error = Error;

    fn try_from(t: &TimeTag) -> Result<Self> {
        if !(t.time_ps >= 0.0) || t.time_ps.round() > u64::MAX as f64 {
            return Err(Error::InvalidParameter {
                field: "time_ps",
                reason: format!("{} cannot be stored as unsigned picoseconds", t.time_ps),
            });
        }
        let (is_pair, k) = match t.truth {
            Truth::Dark => (false, 0),
            Truth::Pair { k, .. } => (
                true,
                i16::try_from(k).map_err(|_| Error::SidebandUnavailable {
                    k,
                    reason: "does not fit a 16-bit record".into(),
                })?,
            ),
        };
        Ok(TagRecord {
            time_ps: t.time_ps.round() as u64,
            channel: t.channel,
            is_pair,
            k,
        })
    }
}

impl TagRecord {
    pub fn to_bytes(&self) -> [u8; RECORD_BYTES] {
        let mut b = [0u8; RECORD_BYTES];
        b[..8].copy_from_slice(&self.time_ps.to_le_bytes());
        b[8] = match self.channel {
            Channel::Signal => 0,
            Channel::Idler => 1,
        };
        b[9] = u8::from(self.is_pair);
        b[10..].copy_from_slice(&self.k.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; RECORD_BYTES], index: usize) -> Result<Self> {
        let bad = |reason: &str| Error::Parse {
            line: index + 1,
            reason: reason.to_string(),
        };
        let channel = match b[8] {
            0 => Channel::Signal,
            1 => Channel::Idler,
            _ => return Err(bad("unknown channel code")),
        };
        let is_pair = match b[9] {
            0 => false,
            1 => true,
            _ => return Err(bad("unknown truth kind")),
        };
        Ok(TagRecord {
            time_ps: u64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
            channel,
            is_pair,
            k: i16::from_le_bytes([b[10], b[11]]),
        })
    }
}

pub fn write_binary<W: Write>(mut w: W, tags: &[TimeTag]) -> Result<()> {
    for t in tags {
        let rec = TagRecord::try_from(t)?;
        w.write_all(&rec.to_bytes()).map_err(|e| Error::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<TagRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::Parse {
        line: 0,
        reason: e.to_string(),
    })?;
    if buf.len() % RECORD_BYTES != 0 {
        return Err(Error::Parse {
            line: buf.len() / RECORD_BYTES + 1,
            reason: "truncated record".into(),
        });
    }
    buf.chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, c)| TagRecord::from_bytes(c.try_into().expect("record size"), i))
        .collect()
}
