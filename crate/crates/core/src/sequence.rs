//! Amino-acid alphabet and token sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The 20 canonical amino acids in alphabetical order of their one-letter codes.
pub const ALPHABET: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

pub const N_TOKENS: usize = ALPHABET.len();

/// Index of a one-letter code in [`ALPHABET`].
pub fn token_index(c: char) -> Result<u8> {
    ALPHABET
        .iter()
        .position(|&a| a as char == c)
        .map(|i| i as u8)
        .ok_or(Error::InvalidToken(c))
}

/// A sequence of amino-acid tokens, stored as alphabet indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence {
    tokens: Vec<u8>,
}

impl Sequence {
    pub fn from_indices(tokens: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= N_TOKENS) {
            return Err(Error::InvalidInput(format!("token index {bad} out of range")));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = s.chars().map(token_index).collect::<Result<Vec<_>>>()?;
        Ok(Self { tokens })
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &t in &self.tokens {
            write!(f, "{}", ALPHABET[t as usize] as char)?;
        }
        Ok(())
    }
}

impl Serialize for Sequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Sequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fraction of positions at which two equal-length sequences differ.
pub fn hamming_fraction(a: &Sequence, b: &Sequence) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let differing = a.tokens.iter().zip(&b.tokens).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let s: Sequence = "ACDWY".parse().unwrap();
        assert_eq!(s.tokens(), &[0, 1, 2, 18, 19]);
        assert_eq!(s.to_string(), "ACDWY");
    }

    #[test]
    fn rejects_non_canonical_letters() {
        assert!(matches!("ACB".parse::<Sequence>(), Err(Error::InvalidToken('B'))));
        assert!(matches!("acd".parse::<Sequence>(), Err(Error::InvalidToken('a'))));
        assert!(Sequence::from_indices(vec![20]).is_err());
    }

    #[test]
    fn hamming() {
        let a: Sequence = "AAAA".parse().unwrap();
        let b: Sequence = "AAAC".parse().unwrap();
        assert_eq!(hamming_fraction(&a, &b).unwrap(), 0.25);
        assert!(hamming_fraction(&a, &"AA".parse().unwrap()).is_err());
    }
}
