//! Fixed-width bitsets over the images of one class.
//!
//! Every set built for a class has the same bit length, so binary operations
//! assume equal word counts and never reallocate.

use serde::{Deserialize, Serialize};

const WORD_BITS: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bitset {
    len: usize,
    words: Vec<u64>,
}

impl Bitset {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut set = Self {
            len,
            words: vec![u64::MAX; len.div_ceil(WORD_BITS)],
        };
        set.clear_tail();
        set
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut set = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                set.insert(i);
            }
        }
        set
    }

    /// Number of addressable bits.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / WORD_BITS] & (1 << (i % WORD_BITS)) != 0
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn and(&self, other: &Bitset) -> Bitset {
        debug_assert_eq!(self.len, other.len);
        Bitset {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    /// Writes `a & b` into `self` without allocating.
    pub fn assign_and(&mut self, a: &Bitset, b: &Bitset) {
        debug_assert_eq!(a.len, b.len);
        self.len = a.len;
        self.words.clear();
        self.words
            .extend(a.words.iter().zip(&b.words).map(|(x, y)| x & y));
    }

    pub fn and_not(&self, other: &Bitset) -> Bitset {
        debug_assert_eq!(self.len, other.len);
        Bitset {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & !b)
                .collect(),
        }
    }

    /// `popcount(self & other)`.
    pub fn count_and(&self, other: &Bitset) -> u64 {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum()
    }

    /// `(popcount(self & other), popcount(self & other & third))` in one pass.
    pub fn count_and2(&self, other: &Bitset, third: &Bitset) -> (u64, u64) {
        debug_assert_eq!(self.len, other.len);
        debug_assert_eq!(self.len, third.len);
        let mut both = 0u64;
        let mut all = 0u64;
        for ((a, b), c) in self.words.iter().zip(&other.words).zip(&third.words) {
            let ab = a & b;
            both += u64::from(ab.count_ones());
            all += u64::from((ab & c).count_ones());
        }
        (both, all)
    }

    /// Indices of set bits in increasing order.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD_BITS + bit)
            })
        })
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl std::fmt::Debug for Bitset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bits: String = (0..self.len)
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect();
        write!(f, "Bitset({bits})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(bits: &str) -> Bitset {
        Bitset::from_bools(&bits.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn and_of_two_masks() {
        let a = parse("1100");
        let b = parse("1010");
        assert_eq!(a.and(&b), parse("1000"));
        assert_eq!(a.count_and(&b), 1);
    }

    #[test]
    fn ones_clears_tail_bits() {
        let set = Bitset::ones(70);
        assert_eq!(set.count(), 70);
        assert_eq!(set.words()[1], (1 << 6) - 1);
        assert_eq!(Bitset::ones(0).count(), 0);
        assert_eq!(Bitset::ones(64).count(), 64);
    }

    #[test]
    fn iter_ones_across_words() {
        let mut set = Bitset::zeros(200);
        for i in [0, 63, 64, 127, 199] {
            set.insert(i);
        }
        assert_eq!(
            set.iter_ones().collect::<Vec<_>>(),
            vec![0, 63, 64, 127, 199]
        );
    }

    proptest! {
        #[test]
        fn counts_match_naive(a in proptest::collection::vec(any::<bool>(), 0..300),
                              seed in any::<u64>()) {
            let n = a.len();
            let b: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let c: Vec<bool> = (0..n).map(|i| (i * 7 + seed as usize).is_multiple_of(3)).collect();
            let (sa, sb, sc) = (Bitset::from_bools(&a), Bitset::from_bools(&b), Bitset::from_bools(&c));
            let both = (0..n).filter(|&i| a[i] && b[i]).count() as u64;
            let all = (0..n).filter(|&i| a[i] && b[i] && c[i]).count() as u64;
            prop_assert_eq!(sa.count_and(&sb), both);
            prop_assert_eq!(sa.count_and2(&sb, &sc), (both, all));
            let mut out = Bitset::zeros(0);
            out.assign_and(&sa, &sb);
            prop_assert_eq!(out.count(), both);
            prop_assert_eq!(sa.and_not(&sb).count(), (0..n).filter(|&i| a[i] && !b[i]).count() as u64);
        }
    }
}
