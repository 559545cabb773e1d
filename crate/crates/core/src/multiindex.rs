//! Multi-indices `k = (k_1, ..., k_d)` of total weight at most `m`.
//!
//! The set of all such indices indexes the tensor-power coefficients
//! `g(k, mu) = prod_l alpha_l(mu)^{k_l}` that appear when a matrix with an
//! `d`-term affine decomposition is raised to a power `p <= m`. Sets are
//! enumerated in graded lexicographic order so that the set for `m - 1` is
//! always a prefix of the set for `m`.

use std::fmt;

use crate::error::{Error, Result};

/// A vector of nonnegative exponents, one per affine term.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    /// The zero multi-index `k0 = (0, ..., 0)`.
    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total weight `|k| = sum_l k_l`.
    pub fn weight(&self) -> u64 {
        self.0.iter().map(|&e| e as u64).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Entrywise sum, used for the multiplicativity `g(k + k') = g(k) g(k')`.
    pub fn add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(MultiIndex(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Graded lexicographic comparison: by weight, then lexicographically.
    pub fn graded_cmp(&self, other: &MultiIndex) -> std::cmp::Ordering {
        self.weight()
            .cmp(&other.weight())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

/// All multi-indices of dimension `d` and weight at most `m`, in graded
/// lexicographic order. `items[0]` is always the zero index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexSet {
    m: u32,
    d: usize,
    items: Vec<MultiIndex>,
}

impl MultiIndexSet {
    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn items(&self) -> &[MultiIndex] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&MultiIndex> {
        self.items.get(i)
    }

    /// Position of `k` in the set, found by binary search on the graded order.
    pub fn position(&self, k: &MultiIndex) -> Option<usize> {
        if k.len() != self.d {
            return None;
        }
        self.items.binary_search_by(|x| x.graded_cmp(k)).ok()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.items.iter()
    }
}

impl<'a> IntoIterator for &'a MultiIndexSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::slice::Iter<'a, MultiIndex>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

fn check_args(m: i64, d: i64) -> Result<(u32, usize)> {
    if d < 1 {
        return Err(Error::invalid(format!("d must be at least 1, got {d}")));
    }
    if m < 0 {
        return Err(Error::invalid(format!("m must be nonnegative, got {m}")));
    }
    let m = u32::try_from(m).map_err(|_| Error::invalid(format!("m = {m} is too large")))?;
    Ok((m, d as usize))
}

/// Enumerates every `k` with `|k| <= m`, graded lexicographic order.
pub fn enumerate_kappa(m: i64, d: i64) -> Result<MultiIndexSet> {
    let (m, d) = check_args(m, d)?;
    let total = count_kappa(m as i64, d as i64)?;
    let mut items = Vec::with_capacity(usize::try_from(total).unwrap_or(0));
    let mut scratch = vec![0u32; d];
    for p in 0..=m {
        compositions(p, 0, &mut scratch, &mut items);
    }
    Ok(MultiIndexSet { m, d, items })
}

// Lexicographically ascending compositions of `remaining` into the slots
// `pos..` of `scratch`.
fn compositions(remaining: u32, pos: usize, scratch: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for first in 0..=remaining {
        scratch[pos] = first;
        compositions(remaining - first, pos + 1, scratch, out);
    }
}

/// Binomial coefficient `C(n, k)` with overflow detection.
pub(crate) fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc * (n - k + i) is divisible by i at every step.
        acc = acc.checked_mul(n as u128 - k as u128 + i)? / i;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Number of multi-indices of dimension `d` with weight exactly `p`,
/// `C(p + d - 1, d - 1)`.
pub fn count_weight_exact(p: i64, d: i64) -> Result<u64> {
    let (p, d) = check_args(p, d)?;
    let n = (p as u64)
        .checked_add(d as u64 - 1)
        .ok_or(Error::Overflow("count_weight_exact"))?;
    binomial(n, d as u64 - 1).ok_or(Error::Overflow("count_weight_exact"))
}

/// Cardinality `Q_{m,d}` of the set of multi-indices with weight at most `m`.
pub fn count_kappa(m: i64, d: i64) -> Result<u64> {
    let (m, d) = check_args(m, d)?;
    let mut total: u64 = 0;
    for p in 0..=m {
        let term = count_weight_exact(p as i64, d as i64)?;
        total = total
            .checked_add(term)
            .ok_or(Error::Overflow("count_kappa"))?;
    }
    Ok(total)
}

/// Largest `m` whose set size `Q_{m,d}` does not exceed `budget`.
pub fn largest_m_within(budget: u64, d: usize) -> Result<Option<u32>> {
    let mut best = None;
    let mut m = 0u32;
    loop {
        let q = count_kappa(m as i64, d as i64)?;
        if q > budget {
            return Ok(best);
        }
        best = Some(m);
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: scan the whole box [0, m]^d and keep |k| <= m.
    fn brute_force(m: u32, d: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; d];
        loop {
            if cur.iter().sum::<u32>() <= m {
                out.push(cur.clone());
            }
            let mut i = d;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < m {
                    cur[i] += 1;
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    #[test]
    fn m0_is_only_zero_index() {
        let set = enumerate_kappa(0, 3).unwrap();
        assert_eq!(set.items(), &[MultiIndex::zero(3)]);
    }

    #[test]
    fn m2_d2_hand_enumeration() {
        let set = enumerate_kappa(2, 2).unwrap();
        let expect: Vec<MultiIndex> = [[0, 0], [0, 1], [1, 0], [0, 2], [1, 1], [2, 0]]
            .iter()
            .map(|k| MultiIndex::new(k.to_vec()))
            .collect();
        assert_eq!(set.items(), expect.as_slice());
    }

    #[test]
    fn cardinality_anchors() {
        assert_eq!(enumerate_kappa(3, 14).unwrap().len(), 680);
        assert_eq!(count_kappa(1, 10).unwrap(), 11);
        assert_eq!(count_kappa(2, 10).unwrap(), 66);
        assert_eq!(count_kappa(3, 10).unwrap(), 286);
        assert_eq!(count_kappa(10, 2).unwrap(), 66);
        assert_eq!(count_kappa(3, 14).unwrap(), 680);
        for m in 0..20 {
            assert_eq!(count_kappa(m, 1).unwrap(), m as u64 + 1);
        }
    }

    #[test]
    fn weight_exact_values() {
        for d in 1..8 {
            assert_eq!(count_weight_exact(0, d).unwrap(), 1);
        }
        assert_eq!(count_weight_exact(2, 2).unwrap(), 3);
        assert_eq!(count_weight_exact(3, 14).unwrap(), 560);
    }

    #[test]
    fn matches_brute_force_and_sum_of_layers() {
        for m in 0..=6u32 {
            for d in 1..=6usize {
                let set = enumerate_kappa(m as i64, d as i64).unwrap();
                let q = count_kappa(m as i64, d as i64).unwrap();
                let layers: u64 = (0..=m)
                    .map(|p| count_weight_exact(p as i64, d as i64).unwrap())
                    .sum();
                let mut oracle = brute_force(m, d);
                assert_eq!(set.len() as u64, q);
                assert_eq!(q, layers);
                assert_eq!(oracle.len() as u64, q);
                let mut got: Vec<Vec<u32>> = set.iter().map(|k| k.entries().to_vec()).collect();
                got.sort();
                oracle.sort();
                assert_eq!(got, oracle);
            }
        }
    }

    #[test]
    fn nested_prefix_and_sorted() {
        for d in 1..=5 {
            for m in 1..=6 {
                let big = enumerate_kappa(m, d).unwrap();
                let small = enumerate_kappa(m - 1, d).unwrap();
                assert!(big.items()[0].is_zero());
                assert_eq!(&big.items()[..small.len()], small.items());
                for w in big.items().windows(2) {
                    assert_eq!(w[0].graded_cmp(&w[1]), std::cmp::Ordering::Less);
                }
                for (i, k) in big.iter().enumerate() {
                    assert_eq!(big.position(k), Some(i));
                }
            }
        }
    }

    #[test]
    fn polynomial_upper_bound() {
        for d in 2..=6u64 {
            for m in 0..=6u64 {
                let q = count_kappa(m as i64, d as i64).unwrap() as f64;
                let fact: f64 = (1..d).map(|x| x as f64).product();
                let prod: f64 = (1..d).map(|j| (m + j) as f64).product();
                let bound = m as f64 / fact * prod + 1.0;
                assert!(q <= bound, "m={m} d={d} q={q} bound={bound}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(enumerate_kappa(2, 0).is_err());
        assert!(enumerate_kappa(-1, 2).is_err());
        assert!(count_kappa(3, -2).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        assert!(matches!(
            count_kappa(1_000_000, 40),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn budget_to_m() {
        assert_eq!(largest_m_within(680, 14).unwrap(), Some(3));
        assert_eq!(largest_m_within(300, 10).unwrap(), Some(3));
        assert_eq!(largest_m_within(0, 3).unwrap(), None);
    }
}
