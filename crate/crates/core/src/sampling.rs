//! Finite parameter sets: training samples for the greedy and designs of
//! experiments for the regression baseline.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::family::ParameterBox;

/// Number of seeded Latin hypercube candidates compared by [`maximin_lhs`].
pub const MAXIMIN_CANDIDATES: usize = 64;

/// Above this size a single Latin hypercube is drawn: the pairwise-distance
/// criterion is quadratic in the number of points.
pub const MAXIMIN_MAX_POINTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Grid,
    Lhs,
    Explicit,
}

impl SampleKind {
    pub fn name(self) -> &'static str {
        match self {
            SampleKind::Grid => "grid",
            SampleKind::Lhs => "lhs-maximin",
            SampleKind::Explicit => "explicit",
        }
    }
}

/// A finite set of distinct parameter points.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: Vec<Vec<f64>>,
    kind: SampleKind,
    seed: u64,
}

impl SampleSet {
    /// Wraps explicit points, checking box membership and distinctness.
    pub fn explicit(points: Vec<Vec<f64>>, param_box: &ParameterBox) -> Result<SampleSet> {
        let s = SampleSet {
            points,
            kind: SampleKind::Explicit,
            seed: 0,
        };
        s.validate(param_box)?;
        Ok(s)
    }

    /// Tensor grid with `per_dim` equispaced points per axis, endpoints included.
    pub fn grid(param_box: &ParameterBox, per_dim: usize) -> Result<SampleSet> {
        if per_dim < 2 {
            return Err(Error::invalid("a grid needs at least two points per axis"));
        }
        let r = param_box.dim();
        let total = per_dim
            .checked_pow(r as u32)
            .filter(|&t| t <= 10_000_000)
            .ok_or_else(|| Error::invalid("grid sample too large"))?;
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut u = vec![0.0; r];
            for slot in u.iter_mut().rev() {
                *slot = (rem % per_dim) as f64 / (per_dim - 1) as f64;
                rem /= per_dim;
            }
            points.push(param_box.from_unit(&u));
        }
        Ok(SampleSet {
            points,
            kind: SampleKind::Grid,
            seed: 0,
        })
    }

    /// Maximin Latin hypercube of `n` points mapped into `param_box`.
    pub fn lhs(param_box: &ParameterBox, n: usize, seed: u64) -> Result<SampleSet> {
        let unit = maximin_lhs(param_box.dim(), n, seed)?;
        Ok(SampleSet {
            points: unit.points.iter().map(|u| param_box.from_unit(u)).collect(),
            kind: SampleKind::Lhs,
            seed,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self, param_box: &ParameterBox) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            if !param_box.contains(p) {
                return Err(Error::invalid(format!("sample point {i} = {p:?} is outside the box")));
            }
            let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::invalid(format!("sample point {i} = {p:?} is duplicated")));
            }
        }
        Ok(())
    }
}

fn lhs_candidate<R: Rng>(r: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; r]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for dim in 0..r {
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[dim] = (perm[i] as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    pts
}

/// Smallest pairwise Euclidean distance.
pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// Latin hypercube design on the unit cube `[0, 1]^r`: one point per stratum
/// per axis. Among [`MAXIMIN_CANDIDATES`] seeded candidates the one with the
/// largest minimum pairwise distance is returned (a single candidate is
/// drawn beyond [`MAXIMIN_MAX_POINTS`] points).
pub fn maximin_lhs(r: usize, n: usize, seed: u64) -> Result<SampleSet> {
    if r == 0 {
        return Err(Error::invalid("design dimension must be positive"));
    }
    if n < 2 {
        return Err(Error::invalid(format!("a design needs at least 2 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = if n <= MAXIMIN_MAX_POINTS { MAXIMIN_CANDIDATES } else { 1 };
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..candidates {
        let pts = lhs_candidate(r, n, &mut rng);
        let score = if candidates > 1 { min_pairwise_distance(&pts) } else { 0.0 };
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, pts));
        }
    }
    Ok(SampleSet {
        points: best.expect("at least one candidate").1,
        kind: SampleKind::Lhs,
        seed,
    })
}

/// CSV with header `mu1,...,muR` and one row per point.
pub fn write_doe_csv(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    let r = points.first().map_or(0, Vec::len);
    if r == 0 {
        return Err(Error::invalid("empty design"));
    }
    let mut s = String::new();
    let header: Vec<String> = (1..=r).map(|i| format!("mu{i}")).collect();
    let _ = writeln!(s, "{}", header.join(","));
    for p in points {
        let row: Vec<String> = p.iter().map(|&x| crate::io::fmt17(x)).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_doe_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty DOE file", path.display())))?;
    let r = header.split(',').count();
    for (i, h) in header.split(',').enumerate() {
        if h.trim() != format!("mu{}", i + 1) {
            return Err(Error::Format(format!("{}: bad header `{header}`", path.display())));
        }
    }
    lines
        .enumerate()
        .map(|(row, l)| {
            let vals: Vec<f64> = l
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), row + 1)))?;
            if vals.len() != r {
                return Err(Error::Format(format!(
                    "{} row {}: expected {r} values",
                    path.display(),
                    row + 1
                )));
            }
            Ok(vals)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_stratum() {
        for seed in 0..5 {
            let s = maximin_lhs(1, 4, seed).unwrap();
            let mut bins: Vec<usize> = s.points().iter().map(|p| (p[0] * 4.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, vec![0, 1, 2, 3]);
        }
        let s = maximin_lhs(3, 10, 1).unwrap();
        for dim in 0..3 {
            let mut bins: Vec<usize> = s.points().iter().map(|p| (p[dim] * 10.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn maximin_beats_random_designs() {
        let s = maximin_lhs(2, 66, 7).unwrap();
        let best = min_pairwise_distance(s.points());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let random_mean: f64 = (0..64)
            .map(|_| {
                let pts: Vec<Vec<f64>> = (0..66).map(|_| vec![rng.gen(), rng.gen()]).collect();
                min_pairwise_distance(&pts)
            })
            .sum::<f64>()
            / 64.0;
        assert!(best >= random_mean, "{best} < {random_mean}");
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(maximin_lhs(3, 20, 9).unwrap(), maximin_lhs(3, 20, 9).unwrap());
        assert_ne!(maximin_lhs(3, 20, 9).unwrap(), maximin_lhs(3, 20, 10).unwrap());
    }

    #[test]
    fn maps_into_box() {
        let b = ParameterBox::new(vec![(1.0, 4.0), (-2.0, -1.0)]).unwrap();
        let s = SampleSet::lhs(&b, 30, 3).unwrap();
        s.validate(&b).unwrap();
        let g = SampleSet::grid(&b, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.points()[0], vec![1.0, -2.0]);
        assert_eq!(g.points()[8], vec![4.0, -1.0]);
    }

    #[test]
    fn explicit_checks() {
        let b = ParameterBox::cube(1, 0.0, 1.0).unwrap();
        assert!(SampleSet::explicit(vec![vec![0.5], vec![0.5]], &b).is_err());
        assert!(SampleSet::explicit(vec![vec![1.5]], &b).is_err());
        assert!(SampleSet::explicit(vec![vec![0.5], vec![0.25]], &b).is_ok());
        assert!(maximin_lhs(2, 1, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("doe.csv");
        let s = maximin_lhs(3, 5, 2).unwrap();
        write_doe_csv(&p, s.points()).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("mu1,mu2,mu3\n"));
        assert_eq!(read_doe_csv(&p).unwrap(), s.points());
    }
}
