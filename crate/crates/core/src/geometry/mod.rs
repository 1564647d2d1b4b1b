//! Backbone geometry: the deterministic fold oracle, rigid superposition and
//! TM-score, and the structural reward built from them.
//!
//! Structures are Cα-only: one point per residue.

mod fold;
mod superpose;
mod tm;

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::Vector3;

pub use fold::{fold, torsion_degrees, BOND_ANGLE_DEGREES, BOND_LENGTH};
pub use superpose::{kabsch_rmsd, weighted_superposition, Superposition};
pub use tm::{tm_d0, tm_score};

use crate::error::{Error, Result};
use crate::sequence::Sequence;

pub type Point = Vector3<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub id: String,
    pub coords: Vec<Point>,
}

impl Structure {
    pub fn new(id: impl Into<String>, coords: Vec<Point>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("structure id {id:?} must be a non-empty token")));
        }
        if coords.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput(format!("structure {id} has non-finite coordinates")));
        }
        Ok(Self { id, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Applies `p -> rotation * p + translation` to every point.
    pub fn transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: &Point) -> Structure {
        Structure {
            id: self.id.clone(),
            coords: self.coords.iter().map(|p| rotation * p + translation).collect(),
        }
    }

    /// Text record: a header line `<id> <L>` followed by `L` lines of
    /// `x y z`, each coordinate printed with 9 decimal digits.
    pub fn to_record(&self) -> String {
        let mut out = format!("{} {}\n", self.id, self.len());
        for p in &self.coords {
            let _ = writeln!(out, "{:.9} {:.9} {:.9}", p.x, p.y, p.z);
        }
        out
    }
}

/// Writes structures as concatenated text records.
pub fn write_structures<W: std::io::Write>(mut w: W, structures: &[Structure]) -> Result<()> {
    for s in structures {
        w.write_all(s.to_record().as_bytes())?;
    }
    Ok(())
}

/// Parses concatenated structure records.
pub fn read_structures<R: BufRead>(r: R) -> Result<Vec<Structure>> {
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate();
    while let Some((lineno, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut head = line.split_whitespace();
        let (Some(id), Some(len), None) = (head.next(), head.next(), head.next()) else {
            return Err(Error::Data(format!("line {}: expected `<id> <L>` header", lineno + 1)));
        };
        let len: usize = len
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad residue count {len:?}", lineno + 1)))?;
        let mut coords = Vec::with_capacity(len);
        for _ in 0..len {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::Data(format!("structure {id}: truncated record")))?;
            let line = line?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data(format!("line {}: malformed coordinate", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Data(format!("line {}: expected 3 coordinates", lineno + 1)));
            }
            coords.push(Point::new(vals[0], vals[1], vals[2]));
        }
        out.push(Structure::new(id, coords)?);
    }
    Ok(out)
}

/// Structural reward: TM-score between `x` and the fold of `y`.
pub fn reward(x: &Structure, y: &Sequence) -> Result<f64> {
    if y.len() != x.len() {
        return Err(Error::Dimension(format!(
            "sequence length {} does not match structure {} of length {}",
            y.len(),
            x.id,
            x.len()
        )));
    }
    let folded = fold(y)?;
    tm_score(x, &folded)
}
