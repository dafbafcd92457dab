//! Plain-text parameter files.
//!
//! ```text
//! adaptlab-params v1
//! family tabular
//! context_len 1
//! vocab 4
//! seq_len 5
//! count 20
//! -1.2039728043259361e0
//! ...
//! ```
//!
//! Values use 17 significant digits, which round-trips every `f64` exactly.

use std::io::{BufRead, Write};

use super::{ArchSpec, Family, ModelParams};
use crate::error::{Error, Result};
use crate::sources::Vocab;

const MAGIC: &str = "adaptlab-params v1";

pub fn write_params<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let arch = params.arch();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "family {}", arch.family())?;
    writeln!(out, "context_len {}", arch.context_len())?;
    writeln!(out, "vocab {}", arch.vocab().size())?;
    writeln!(out, "seq_len {}", arch.seq_len())?;
    writeln!(out, "count {}", params.theta().len())?;
    for x in params.theta() {
        writeln!(out, "{x:.16e}")?;
    }
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<ModelParams> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(Error::Parse(format!("unexpected end of file, expected {what}"))),
        }
    };
    let (_, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(Error::Parse(format!("line 1: expected {MAGIC:?}, found {magic:?}")));
    }
    let mut field = |key: &str| -> Result<String> {
        let (no, line) = next(key)?;
        match line.trim().split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(Error::Parse(format!("line {no}: expected `{key} <value>`, found {line:?}"))),
        }
    };
    let int = |key: &str, s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Parse(format!("{key}: not a non-negative integer: {s:?}")))
    };
    let family: Family = field("family")?.parse()?;
    let context_len = int("context_len", field("context_len")?)?;
    let vocab = Vocab::new(int("vocab", field("vocab")?)?)?;
    let seq_len = int("seq_len", field("seq_len")?)?;
    let count = int("count", field("count")?)?;
    let arch = ArchSpec::new(family, context_len, vocab, seq_len)?;
    if count != arch.param_count() {
        return Err(Error::LengthMismatch {
            expected: arch.param_count(),
            found: count,
        });
    }
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        let (no, line) = next("parameter value")?;
        let x: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {no}: not a number: {line:?}")))?;
        theta.push(x);
    }
    ModelParams::new(arch, theta)
}
