//! Inclusion patterns and their canonical ordering.
//!
//! A pattern `h = (h_1, ..., h_K)` is stored as an integer whose binary
//! digits, most significant first, are `h_1 ... h_K`. Ascending integer order
//! is therefore the canonical order of the full pattern set `H`, and every
//! vector indexed by `H` in this crate is laid out that way. Vectors indexed
//! by the observable set `H*` drop the all-zero pattern, so pattern `h` sits
//! at position `h - 1`.

use std::fmt;

use crate::error::{Error, Result};

pub const MIN_SOURCES: usize = 2;
/// Dense `2^K` vectors are kept in memory, so `K` is capped.
pub const MAX_SOURCES: usize = 20;

/// Validated source count `K` together with the canonical pattern order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatternOrder {
    k: usize,
}

impl PatternOrder {
    pub fn new(k: usize) -> Result<Self> {
        if !(MIN_SOURCES..=MAX_SOURCES).contains(&k) {
            return Err(Error::InvalidDimension(format!(
                "source count K={k} outside supported range {MIN_SOURCES}..={MAX_SOURCES}"
            )));
        }
        Ok(PatternOrder { k })
    }

    pub fn sources(&self) -> usize {
        self.k
    }

    /// `2^K`
    pub fn full_len(&self) -> usize {
        1 << self.k
    }

    /// `2^K - 1`
    pub fn observed_len(&self) -> usize {
        self.full_len() - 1
    }

    /// All patterns of `H` in ascending order.
    pub fn full(&self) -> impl Iterator<Item = InclusionPattern> + '_ {
        (0..self.full_len() as u32).map(move |i| InclusionPattern::from_index(self.k, i))
    }

    /// All patterns of `H*` in ascending order.
    pub fn observed(&self) -> impl Iterator<Item = InclusionPattern> + '_ {
        (1..self.full_len() as u32).map(move |i| InclusionPattern::from_index(self.k, i))
    }

    /// Bit mask selecting source `s` (zero-based) inside a pattern index.
    #[inline]
    pub fn source_mask(&self, s: usize) -> u32 {
        1 << (self.k - 1 - s)
    }
}

/// One inclusion pattern `h` over `K` sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InclusionPattern {
    k: u8,
    index: u32,
}

impl InclusionPattern {
    pub(crate) fn from_index(k: usize, index: u32) -> Self {
        debug_assert!(k <= MAX_SOURCES && (index as usize) < (1usize << k));
        InclusionPattern { k: k as u8, index }
    }

    /// Builds a pattern from explicit indicators in source order.
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let order = PatternOrder::new(bits.len())?;
        let index = bits
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | u32::from(b));
        Ok(InclusionPattern::from_index(order.sources(), index))
    }

    /// Parses a `K`-character string of `'0'`/`'1'`.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Domain(format!(
                    "pattern {s:?} contains {other:?}; expected only '0' and '1'"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }

    pub fn sources(&self) -> usize {
        self.k as usize
    }

    /// Position in the canonical order of `H`.
    pub fn index(&self) -> usize {
        self.index as usize
    }

    /// Position in the canonical order of `H*`, or `None` for the missing cell.
    pub fn observed_index(&self) -> Option<usize> {
        (self.index != 0).then(|| self.index as usize - 1)
    }

    pub fn is_missing_cell(&self) -> bool {
        self.index == 0
    }

    /// Indicator for source `s` (zero-based).
    pub fn bit(&self, s: usize) -> bool {
        assert!(s < self.sources(), "source {s} out of range");
        self.index >> (self.sources() - 1 - s) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.sources()).map(|s| self.bit(s)).collect()
    }

    /// Number of sources that sampled the individual.
    pub fn weight(&self) -> u32 {
        self.index.count_ones()
    }

    /// Componentwise `self <= other`.
    pub fn is_contained_in(&self, other: &InclusionPattern) -> bool {
        self.k == other.k && self.index & !other.index == 0
    }
}

impl fmt::Display for InclusionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.index, width = self.sources())
    }
}

/// The observable patterns `H*` in canonical order.
pub fn enumerate_patterns(k: usize) -> Result<Vec<InclusionPattern>> {
    let order = PatternOrder::new(k)?;
    Ok(order.observed().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(k: usize) -> Vec<String> {
        enumerate_patterns(k)
            .unwrap()
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    #[test]
    fn two_sources() {
        assert_eq!(strings(2), ["01", "10", "11"]);
    }

    #[test]
    fn three_sources_binary_order() {
        assert_eq!(
            strings(3),
            ["001", "010", "011", "100", "101", "110", "111"]
        );
        let order = PatternOrder::new(3).unwrap();
        let full: Vec<_> = order.full().map(|h| h.to_string()).collect();
        assert_eq!(full[0], "000");
        assert_eq!(full.len(), 8);
    }

    #[test]
    fn lengths() {
        for k in MIN_SOURCES..=12 {
            assert_eq!(enumerate_patterns(k).unwrap().len(), (1 << k) - 1);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(enumerate_patterns(1), Err(Error::InvalidDimension(_))));
        assert!(matches!(enumerate_patterns(0), Err(Error::InvalidDimension(_))));
        assert!(matches!(enumerate_patterns(21), Err(Error::InvalidDimension(_))));
        assert!(enumerate_patterns(20).is_ok());
    }

    #[test]
    fn bits_follow_source_order() {
        let h = InclusionPattern::parse("1110").unwrap();
        assert_eq!(h.bits(), [true, true, true, false]);
        assert_eq!(h.index(), 14);
        assert_eq!(h.observed_index(), Some(13));
        assert_eq!(h.weight(), 3);
        let zero = InclusionPattern::parse("0000").unwrap();
        assert!(zero.is_missing_cell());
        assert_eq!(zero.observed_index(), None);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(InclusionPattern::parse("0120").is_err());
        assert!(InclusionPattern::parse("1").is_err());
        assert!(InclusionPattern::parse("").is_err());
    }

    #[test]
    fn containment() {
        let a = InclusionPattern::parse("010").unwrap();
        let b = InclusionPattern::parse("011").unwrap();
        assert!(a.is_contained_in(&b));
        assert!(!b.is_contained_in(&a));
    }
}
