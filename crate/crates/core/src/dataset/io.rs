//! JSON Lines storage for preference records.
//!
//! One record per line:
//!
//! ```text
//! {"structure_id":"s00001","native":"ACDE","candidates":[{"sequence":"ACDA","reward":0.512345678},...],"mean_reward":0.43,"pairs":[[0,1],...]}
//! ```
//!
//! Rewards are written with exactly 9 decimal digits; `mean_reward` uses the
//! shortest representation that round-trips.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde_json::Value;

use crate::dataset::{Candidate, PreferenceRecord};
use crate::error::{Error, Result};
use crate::sequence::Sequence;

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

pub fn write_records<W: Write>(mut w: W, records: &[PreferenceRecord]) -> Result<()> {
    for r in records {
        let mut line = format!(
            "{{\"structure_id\":{},\"native\":{},\"candidates\":[",
            json_str(&r.structure_id),
            json_str(&r.native.to_string())
        );
        for (k, c) in r.candidates.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            let _ = write!(line, "{{\"sequence\":{},\"reward\":{:.9}}}", json_str(&c.sequence.to_string()), c.reward);
        }
        let _ = write!(line, "],\"mean_reward\":{},\"pairs\":[", serde_json::to_string(&r.mean_reward).expect("f64"));
        for (k, (a, b)) in r.pairs.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            let _ = write!(line, "[{a},{b}]");
        }
        line.push_str("]}\n");
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

struct LineCtx(usize);

impl LineCtx {
    fn err(&self, field: &str, msg: impl std::fmt::Display) -> Error {
        Error::Data(format!("line {}: field `{field}`: {msg}", self.0))
    }

    fn get<'v>(&self, obj: &'v Value, field: &str) -> Result<&'v Value> {
        obj.get(field).ok_or_else(|| self.err(field, "missing"))
    }

    fn string(&self, obj: &Value, field: &str) -> Result<String> {
        self.get(obj, field)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.err(field, "expected a string"))
    }

    fn sequence(&self, obj: &Value, field: &str, label: &str) -> Result<Sequence> {
        self.string(obj, field)
            .map_err(|_| self.err(label, "expected a sequence string"))?
            .parse()
            .map_err(|e| self.err(label, e))
    }

    fn number(&self, obj: &Value, field: &str, label: &str) -> Result<f64> {
        self.get(obj, field)
            .map_err(|_| self.err(label, "missing"))?
            .as_f64()
            .ok_or_else(|| self.err(label, "expected a number"))
    }
}

fn parse_line(ctx: &LineCtx, line: &str) -> Result<PreferenceRecord> {
    let v: Value = serde_json::from_str(line).map_err(|e| Error::Data(format!("line {}: malformed JSON: {e}", ctx.0)))?;
    let structure_id = ctx.string(&v, "structure_id")?;
    let native = ctx.sequence(&v, "native", "native")?;
    let cands = ctx
        .get(&v, "candidates")?
        .as_array()
        .ok_or_else(|| ctx.err("candidates", "expected an array"))?;
    let candidates = cands
        .iter()
        .enumerate()
        .map(|(k, c)| {
            Ok(Candidate {
                sequence: ctx.sequence(c, "sequence", &format!("candidates[{k}].sequence"))?,
                reward: ctx.number(c, "reward", &format!("candidates[{k}].reward"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_reward = ctx.number(&v, "mean_reward", "mean_reward")?;
    let pairs = ctx
        .get(&v, "pairs")?
        .as_array()
        .ok_or_else(|| ctx.err("pairs", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let idx = |n: usize| p.get(n).and_then(Value::as_u64).map(|x| x as usize);
            match (idx(0), idx(1), p.as_array().map(Vec::len)) {
                (Some(a), Some(b), Some(2)) => Ok((a, b)),
                _ => Err(ctx.err(&format!("pairs[{k}]"), "expected [winner, loser]")),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let record = PreferenceRecord {
        structure_id,
        native,
        candidates,
        mean_reward,
        pairs,
    };
    record
        .validate()
        .map_err(|e| Error::Data(format!("line {}: {}", ctx.0, e.to_string().trim_start_matches("data error: "))))?;
    Ok(record)
}

/// Reads and validates records. Blank lines are skipped.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<PreferenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&LineCtx(i + 1), &line)?);
    }
    Ok(out)
}
