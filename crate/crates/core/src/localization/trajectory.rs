//! Line format shared by fix streams and reference trajectories:
//! `t x y z yaw valid`, whitespace separated, `valid` as `0`/`1`. Lines
//! starting with `#` are comments.

use std::io::{self, BufRead, Write};

use super::LocError;
use crate::state::Pose4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub pose: Pose4,
    pub valid: bool,
}

impl TrajectorySample {
    pub fn t(&self) -> f64 {
        self.pose.t
    }
}

pub fn write_trajectory<W: Write>(mut out: W, samples: &[TrajectorySample]) -> io::Result<()> {
    writeln!(out, "# t x y z yaw valid")?;
    for s in samples {
        let p = &s.pose;
        writeln!(out, "{:.6} {:.6} {:.6} {:.6} {:.4} {}", p.t, p.x, p.y, p.z, p.yaw, u8::from(s.valid))?;
    }
    Ok(())
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectorySample>, LocError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let err = |reason: String| LocError::Trajectory { line: i + 1, reason };
        let line = line.map_err(|e| err(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 5];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
        }
        let valid = match fields[5] {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("bad valid flag {other:?}"))),
        };
        out.push(TrajectorySample { pose: Pose4::new(v[1], v[2], v[3], v[4], v[0]), valid });
    }
    Ok(out)
}
