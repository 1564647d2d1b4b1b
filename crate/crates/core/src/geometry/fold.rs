//! Torsion-table fold oracle.
//!
//! The chain starts at the origin, the second point lies on +x and the third
//! in the xy-plane. Every later point `i` is placed by the natural extension
//! reference frame recurrence from points `i-3, i-2, i-1`, with a fixed bond
//! length and bond angle and the dihedral assigned to token `i`. Tokens of
//! the first three residues therefore do not influence the geometry.

use crate::error::{Error, Result};
use crate::geometry::{Point, Structure};
use crate::sequence::{Sequence, N_TOKENS};

pub const BOND_LENGTH: f64 = 3.8;
pub const BOND_ANGLE_DEGREES: f64 = 120.0;

/// Dihedral (degrees) for a token index: uniform over [-180, 180) in alphabetical order.
pub fn torsion_degrees(token: u8) -> f64 {
    -180.0 + 360.0 * f64::from(token) / N_TOKENS as f64
}

fn place(a: &Point, b: &Point, c: &Point, torsion: f64) -> Point {
    let theta = BOND_ANGLE_DEGREES.to_radians();
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = n.cross(&bc);
    let local = Point::new(
        -BOND_LENGTH * theta.cos(),
        BOND_LENGTH * theta.sin() * torsion.cos(),
        -BOND_LENGTH * theta.sin() * torsion.sin(),
    );
    c + bc * local.x + m * local.y + n * local.z
}

/// Folds a sequence into a Cα chain. The structure id is the sequence itself.
pub fn fold(seq: &Sequence) -> Result<Structure> {
    if seq.is_empty() {
        return Err(Error::InvalidInput("cannot fold an empty sequence".into()));
    }
    let theta = BOND_ANGLE_DEGREES.to_radians();
    let mut coords: Vec<Point> = Vec::with_capacity(seq.len());
    for (i, &tok) in seq.tokens().iter().enumerate() {
        let p = match i {
            0 => Point::zeros(),
            1 => Point::new(BOND_LENGTH, 0.0, 0.0),
            2 => coords[1]
                + Point::new(
                    BOND_LENGTH * (std::f64::consts::PI - theta).cos(),
                    BOND_LENGTH * (std::f64::consts::PI - theta).sin(),
                    0.0,
                ),
            _ => place(
                &coords[i - 3],
                &coords[i - 2],
                &coords[i - 1],
                torsion_degrees(tok).to_radians(),
            ),
        };
        coords.push(p);
    }
    Structure::new(seq.to_string(), coords)
}
