//! Affinely parametrized matrix families `A(mu) = sum_l alpha_l(mu) A_l`.

mod config;
pub mod expr;
pub mod generators;
pub mod sparse;

use rand::Rng;

use crate::error::{Error, Result};
use crate::multiindex::{MultiIndex, MultiIndexSet};

pub use config::{load_family, write_family, FamilyConfig};
pub use expr::{parse_coeff_expr, CoeffExpr};
pub use generators::{gen_problem, ProblemKind};
pub use sparse::SparseMatrix;

/// Axis-aligned parameter box `prod_i [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBox {
    intervals: Vec<(f64, f64)>,
}

impl ParameterBox {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<ParameterBox> {
        if intervals.is_empty() {
            return Err(Error::invalid("parameter box needs at least one interval"));
        }
        for (i, &(lo, hi)) in intervals.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                return Err(Error::invalid(format!(
                    "interval {} = [{lo}, {hi}] must be finite with lo < hi",
                    i + 1
                )));
            }
        }
        Ok(ParameterBox { intervals })
    }

    /// `[lo, hi]^r`.
    pub fn cube(r: usize, lo: f64, hi: f64) -> Result<ParameterBox> {
        ParameterBox::new(vec![(lo, hi); r])
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.intervals.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Closed-box membership with a small relative slack for round-off.
    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && self.intervals.iter().zip(mu).all(|(&(lo, hi), &x)| {
                let slack = 1e-12 * (hi - lo);
                x >= lo - slack && x <= hi + slack
            })
    }

    /// Maps a point of the unit cube affinely into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.intervals
            .iter()
            .zip(u)
            .map(|(&(lo, hi), &t)| lo + t * (hi - lo))
            .collect()
    }

    /// Inverse of [`from_unit`](Self::from_unit).
    pub fn to_unit(&self, mu: &[f64]) -> Vec<f64> {
        self.intervals
            .iter()
            .zip(mu)
            .map(|(&(lo, hi), &x)| (x - lo) / (hi - lo))
            .collect()
    }

    /// Uniform random point.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.intervals
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..hi))
            .collect()
    }

    /// All `2^r` corners, lexicographic in (lo, hi) per axis.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let r = self.dim();
        (0..1usize << r)
            .map(|mask| {
                self.intervals
                    .iter()
                    .enumerate()
                    .map(|(i, &(lo, hi))| if mask >> (r - 1 - i) & 1 == 1 { hi } else { lo })
                    .collect()
            })
            .collect()
    }
}

/// `A(mu) = sum_l alpha_l(mu) A_l` with square terms of a common order.
#[derive(Clone, Debug)]
pub struct AffineFamily {
    terms: Vec<SparseMatrix>,
    coeffs: Vec<CoeffExpr>,
    param_box: ParameterBox,
    symmetric_hint: bool,
    spd_hint: bool,
    rhs: Option<Vec<f64>>,
}

impl AffineFamily {
    /// Validates shapes, coefficient domains over the box, and (for `spd`)
    /// runs one Cholesky factorization at the box midpoint.
    pub fn new(
        terms: Vec<SparseMatrix>,
        coeffs: Vec<CoeffExpr>,
        param_box: ParameterBox,
        spd: bool,
    ) -> Result<AffineFamily> {
        if terms.is_empty() {
            return Err(Error::invalid("an affine family needs at least one term"));
        }
        if coeffs.len() != terms.len() {
            return Err(Error::DimensionMismatch {
                expected: terms.len(),
                got: coeffs.len(),
            });
        }
        let n = terms[0].n_rows();
        for (l, t) in terms.iter().enumerate() {
            if !t.is_square() || t.n_rows() != n {
                return Err(Error::ShapeMismatch(format!(
                    "term {} is {}x{}, expected {n}x{n}",
                    l + 1,
                    t.n_rows(),
                    t.n_cols()
                )));
            }
        }
        for c in &coeffs {
            if c.param_dim() > param_box.dim() {
                return Err(Error::invalid(format!(
                    "coefficient `{c}` references mu{} but the box has dimension {}",
                    c.param_dim(),
                    param_box.dim()
                )));
            }
            c.range_on_box(param_box.intervals())?;
        }
        let symmetric_hint = terms.iter().all(|t| t.is_symmetric(1e-14));
        if spd && !symmetric_hint {
            return Err(Error::NotSpd("terms are not symmetric".into()));
        }
        let fam = AffineFamily {
            terms,
            coeffs,
            param_box,
            symmetric_hint,
            spd_hint: spd,
            rhs: None,
        };
        if spd {
            let a = fam.assemble(&fam.param_box.midpoint())?;
            crate::linalg::SkylineCholesky::factor(&a).map_err(|e| {
                Error::NotSpd(format!("Cholesky at the box midpoint failed: {e}"))
            })?;
        }
        Ok(fam)
    }

    pub fn with_rhs(mut self, rhs: Vec<f64>) -> Result<AffineFamily> {
        if rhs.len() != self.order() {
            return Err(Error::DimensionMismatch {
                expected: self.order(),
                got: rhs.len(),
            });
        }
        self.rhs = Some(rhs);
        Ok(self)
    }

    /// Replaces the coefficient expressions and box, keeping the terms.
    pub fn with_coeffs(&self, coeffs: Vec<CoeffExpr>, param_box: ParameterBox) -> Result<AffineFamily> {
        let fam = AffineFamily::new(self.terms.clone(), coeffs, param_box, self.spd_hint)?;
        Ok(AffineFamily {
            rhs: self.rhs.clone(),
            ..fam
        })
    }

    /// Number of affine terms `d`.
    pub fn d(&self) -> usize {
        self.terms.len()
    }

    /// Parameter dimension `r`.
    pub fn r(&self) -> usize {
        self.param_box.dim()
    }

    /// Matrix order.
    pub fn order(&self) -> usize {
        self.terms[0].n_rows()
    }

    pub fn terms(&self) -> &[SparseMatrix] {
        &self.terms
    }

    pub fn coeffs(&self) -> &[CoeffExpr] {
        &self.coeffs
    }

    pub fn param_box(&self) -> &ParameterBox {
        &self.param_box
    }

    pub fn symmetric_hint(&self) -> bool {
        self.symmetric_hint
    }

    pub fn spd_hint(&self) -> bool {
        self.spd_hint
    }

    pub fn rhs(&self) -> Option<&[f64]> {
        self.rhs.as_deref()
    }

    /// `(alpha_1(mu), ..., alpha_d(mu))`.
    pub fn eval_coeffs(&self, mu: &[f64]) -> Result<Vec<f64>> {
        eval_coeff_exprs(&self.coeffs, self.r(), mu)
    }

    /// `A(mu)` on the union sparsity pattern of the terms.
    pub fn assemble(&self, mu: &[f64]) -> Result<SparseMatrix> {
        let alpha = self.eval_coeffs(mu)?;
        self.assemble_with(&alpha)
    }

    /// `sum_l alpha_l A_l` for explicit coefficient values.
    pub fn assemble_with(&self, alpha: &[f64]) -> Result<SparseMatrix> {
        let refs: Vec<&SparseMatrix> = self.terms.iter().collect();
        SparseMatrix::linear_combination(alpha, &refs)
    }

    /// Enclosure of each `alpha_l` over the whole box.
    pub fn coeff_ranges(&self) -> Result<Vec<(f64, f64)>> {
        self.coeffs
            .iter()
            .map(|c| c.range_on_box(self.param_box.intervals()))
            .collect()
    }
}

pub(crate) fn eval_coeff_exprs(coeffs: &[CoeffExpr], r: usize, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            got: mu.len(),
        });
    }
    coeffs
        .iter()
        .enumerate()
        .map(|(l, c)| {
            let v = c.eval(mu);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("alpha_{} = `{c}` at {mu:?}", l + 1)))
            }
        })
        .collect()
}

/// `g(k, mu) = prod_l alpha_l^{k_l}` with `0^0 = 1`.
pub fn g_eval(alpha: &[f64], k: &MultiIndex) -> Result<f64> {
    if alpha.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: k.len(),
            got: alpha.len(),
        });
    }
    let v = alpha
        .iter()
        .zip(k.entries())
        .map(|(&a, &e)| a.powi(e as i32))
        .product::<f64>();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("g({k}) for alpha = {alpha:?}")))
    }
}

/// `g(k, mu)` for every `k` of `set`, sharing one table of powers.
pub fn g_all(alpha: &[f64], set: &MultiIndexSet) -> Result<Vec<f64>> {
    if alpha.len() != set.d() {
        return Err(Error::DimensionMismatch {
            expected: set.d(),
            got: alpha.len(),
        });
    }
    let m = set.m() as usize;
    let mut powers = vec![0.0; alpha.len() * (m + 1)];
    for (l, &a) in alpha.iter().enumerate() {
        let row = &mut powers[l * (m + 1)..(l + 1) * (m + 1)];
        row[0] = 1.0;
        for e in 1..=m {
            row[e] = row[e - 1] * a;
        }
    }
    let mut out = Vec::with_capacity(set.len());
    for k in set {
        let mut v = 1.0;
        for (l, &e) in k.entries().iter().enumerate() {
            v *= powers[l * (m + 1) + e as usize];
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("g({k}) for alpha = {alpha:?}")));
        }
        out.push(v);
    }
    Ok(out)
}
