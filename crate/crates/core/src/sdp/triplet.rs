//! Plain-text dump of an [`SdpProblem`] for inspection with external solvers.
//!
//! ```text
//! sdp-triplets 1
//! blocks 2 3 1
//! free 2
//! constraints 4
//! c <row> <block> <i> <j> <value>
//! f <row> <var> <value>
//! b <row> <value>
//! obj_free <var> <value>
//! obj_block <block> <i> <j> <value>
//! ```
//!
//! Floats are written with round-trip precision.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{BlockEntry, SdpConstraint, SdpProblem};

#[derive(Debug, Error)]
pub enum TripletError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_triplets<W: Write>(prob: &SdpProblem, mut w: W) -> std::io::Result<()> {
    writeln!(w, "sdp-triplets 1")?;
    write!(w, "blocks {}", prob.blocks.len())?;
    for s in &prob.blocks {
        write!(w, " {s}")?;
    }
    writeln!(w)?;
    writeln!(w, "free {}", prob.num_free)?;
    writeln!(w, "constraints {}", prob.constraints.len())?;
    for (i, c) in prob.constraints.iter().enumerate() {
        for e in &c.block_entries {
            writeln!(w, "c {i} {} {} {} {:?}", e.block, e.row, e.col, e.value)?;
        }
        for &(v, a) in &c.free_entries {
            writeln!(w, "f {i} {v} {a:?}")?;
        }
        writeln!(w, "b {i} {:?}", c.rhs)?;
    }
    for (v, a) in prob.objective_free.iter().enumerate() {
        if *a != 0.0 {
            writeln!(w, "obj_free {v} {a:?}")?;
        }
    }
    for e in &prob.objective_blocks {
        writeln!(w, "obj_block {} {} {} {:?}", e.block, e.row, e.col, e.value)?;
    }
    Ok(())
}

pub fn read_triplets<R: BufRead>(r: R) -> Result<SdpProblem, TripletError> {
    let mut prob = SdpProblem::default();
    let mut saw_header = false;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let err = |msg: &str| TripletError::Parse { line: lineno, msg: msg.to_string() };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() || toks[0].starts_with('#') {
            continue;
        }
        let uint = |i: usize| -> Result<usize, TripletError> {
            toks.get(i).ok_or_else(|| err("missing field"))?.parse().map_err(|_| err("expected an integer"))
        };
        let float = |i: usize| -> Result<f64, TripletError> {
            toks.get(i).ok_or_else(|| err("missing field"))?.parse().map_err(|_| err("expected a number"))
        };
        let row = |i: usize, prob: &SdpProblem| -> Result<usize, TripletError> {
            let r = uint(i)?;
            if r >= prob.constraints.len() {
                return Err(err("constraint index out of range"));
            }
            Ok(r)
        };
        if !saw_header {
            if toks[0] != "sdp-triplets" {
                return Err(err("missing sdp-triplets header"));
            }
            saw_header = true;
            continue;
        }
        match toks[0] {
            "blocks" => {
                let n = uint(1)?;
                prob.blocks = (0..n).map(|k| uint(2 + k)).collect::<Result<_, _>>()?;
            }
            "free" => {
                prob.num_free = uint(1)?;
                prob.objective_free = vec![0.0; prob.num_free];
            }
            "constraints" => prob.constraints = vec![SdpConstraint::default(); uint(1)?],
            "c" => {
                let i = row(1, &prob)?;
                let e = BlockEntry::new(uint(2)?, uint(3)?, uint(4)?, float(5)?);
                prob.constraints[i].block_entries.push(e);
            }
            "f" => {
                let i = row(1, &prob)?;
                let entry = (uint(2)?, float(3)?);
                prob.constraints[i].free_entries.push(entry);
            }
            "b" => {
                let i = row(1, &prob)?;
                prob.constraints[i].rhs = float(2)?;
            }
            "obj_free" => {
                let v = uint(1)?;
                let slot = prob.objective_free.get_mut(v).ok_or_else(|| err("free variable out of range"))?;
                *slot = float(2)?;
            }
            "obj_block" => prob.objective_blocks.push(BlockEntry::new(uint(1)?, uint(2)?, uint(3)?, float(4)?)),
            other => return Err(err(&format!("unknown record '{other}'"))),
        }
    }
    if !saw_header {
        return Err(TripletError::Parse { line: 0, msg: "empty input".into() });
    }
    Ok(prob)
}
