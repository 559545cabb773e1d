//! Comparison methods: Frobenius-norm minimization over snapshot inverses,
//! POD-Galerkin, and kernel ridge regression on POD coefficients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::{AffineFamily, ParameterBox};
use crate::linalg::factorize_dense;
use crate::surrogate::INVERSE_DENSE_LIMIT;

pub use crate::sampling::maximin_lhs;

/// Default relative energy discarded by [`pod_build`].
pub const DEFAULT_ENERGY_TOL: f64 = 1e-10;

/// Traces needed to assemble the normal equations `M(mu) lambda = S(mu)` of
/// `min ||I - sum_i lambda_i A(mu_i)^{-1} A(mu)||_F`.
#[derive(Clone, Debug)]
pub struct FrobPrecomp {
    selected_mu: Vec<Vec<f64>>,
    d: usize,
    /// `trace(A_l^T Y_i^T Y_j A_m)` at `((i * n + j) * d + l) * d + m`.
    trace4: Vec<f64>,
    /// `trace(Y_i A_l)` at `i * d + l`.
    trace2: Vec<f64>,
    /// Triangular factor of the QR decomposition of `[vec(W_{0,0}) ... vec(W_{n-1,d-1}) vec(I)]`.
    r_factor: DMatrix<f64>,
    inverses: Vec<DMatrix<f64>>,
}

impl FrobPrecomp {
    pub fn len(&self) -> usize {
        self.selected_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_mu.is_empty()
    }

    pub fn selected_mu(&self) -> &[Vec<f64>] {
        &self.selected_mu
    }

    pub fn trace4(&self, i: usize, j: usize, l: usize, m: usize) -> f64 {
        let (n, d) = (self.len(), self.d);
        self.trace4[((i * n + j) * d + l) * d + m]
    }

    pub fn trace2(&self, i: usize, l: usize) -> f64 {
        self.trace2[i * self.d + l]
    }

    /// The snapshot inverses `A(mu_i)^{-1}`.
    pub fn inverses(&self) -> &[DMatrix<f64>] {
        &self.inverses
    }

    /// `M(mu)` and `S(mu)` for coefficient values `alpha`.
    pub fn normal_equations(&self, alpha: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (n, d) = (self.len(), self.d);
        let m = DMatrix::from_fn(n, n, |i, j| {
            let mut acc = 0.0;
            for l in 0..d {
                for k in 0..d {
                    acc += alpha[l] * alpha[k] * self.trace4(i, j, l, k);
                }
            }
            acc
        });
        let s = DVector::from_fn(n, |i, _| (0..d).map(|l| alpha[l] * self.trace2(i, l)).sum());
        (m, s)
    }

    /// `||I - sum_i lambda_i Y_i A(mu)||_F^2`, evaluated through the QR factor.
    pub fn objective(&self, alpha: &[f64], lambda: &[f64]) -> f64 {
        let (g, t) = self.reduced_system(alpha);
        let tail = self.r_factor.get((self.len() * self.d, self.len() * self.d)).copied().unwrap_or(0.0);
        (g * DVector::from_column_slice(lambda) - t).norm_squared() + tail * tail
    }

    /// `R C(alpha)` and `t`, where `C` maps `lambda` to the weights `lambda_i alpha_l`
    /// of the columns `W_{i,l}`. The least-squares problem in these has the
    /// conditioning of the stacked `Y_i A(mu)`, not its square.
    fn reduced_system(&self, alpha: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (n, d) = (self.len(), self.d);
        let rows = self.r_factor.nrows().min(n * d);
        let g = DMatrix::from_fn(rows, n, |r, i| {
            (0..d).map(|l| self.r_factor[(r, i * d + l)] * alpha[l]).sum()
        });
        let t = DVector::from_fn(rows, |r, _| self.r_factor[(r, n * d)]);
        (g, t)
    }
}

/// Rows per block of the tall-skinny QR.
const TSQR_BLOCK: usize = 4096;

/// Upper-triangular factor of the tall matrix whose columns are `cols`,
/// reduced block by block in a fixed order.
fn tsqr(cols: &[&[f64]]) -> DMatrix<f64> {
    let (rows, k) = (cols[0].len(), cols.len());
    let block_r = |r0: usize, r1: usize, prev: Option<DMatrix<f64>>| {
        let p = prev.as_ref().map_or(0, |m| m.nrows());
        let stacked = DMatrix::from_fn(p + r1 - r0, k, |r, c| match &prev {
            Some(m) if r < p => m[(r, c)],
            _ => cols[c][r0 + r - p],
        });
        stacked.qr().r()
    };
    let groups: Vec<(usize, usize)> = (0..rows).step_by(TSQR_BLOCK * 8).map(|g| (g, (g + TSQR_BLOCK * 8).min(rows))).collect();
    let partial: Vec<DMatrix<f64>> = groups
        .par_iter()
        .map(|&(g0, g1)| {
            let mut acc = None;
            for r0 in (g0..g1).step_by(TSQR_BLOCK) {
                acc = Some(block_r(r0, (r0 + TSQR_BLOCK).min(g1), acc));
            }
            acc.expect("nonempty group")
        })
        .collect();
    let mut iter = partial.into_iter();
    let mut acc = iter.next().expect("at least one row");
    for m in iter {
        let p = acc.nrows();
        let stacked = DMatrix::from_fn(p + m.nrows(), k, |r, c| if r < p { acc[(r, c)] } else { m[(r - p, c)] });
        acc = stacked.qr().r();
    }
    acc
}

/// Materializes `Y_i = A(mu_i)^{-1}` and the trace tensors.
pub fn frob_build(fam: &AffineFamily, selected_mu: &[Vec<f64>]) -> Result<FrobPrecomp> {
    let order = fam.order();
    if order > INVERSE_DENSE_LIMIT {
        return Err(Error::invalid(format!(
            "Frobenius baseline limited to order {INVERSE_DENSE_LIMIT}, got {order}"
        )));
    }
    if selected_mu.is_empty() {
        return Err(Error::invalid("Frobenius baseline needs at least one parameter"));
    }
    for (i, mu) in selected_mu.iter().enumerate() {
        if selected_mu[..i].contains(mu) {
            return Err(Error::invalid(format!("parameter {mu:?} is repeated")));
        }
    }
    let n = selected_mu.len();
    let d = fam.d();
    let inverses = selected_mu
        .par_iter()
        .map(|mu| crate::surrogate::exact_inverse(fam, mu))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    // W_{i,l} = Y_i A_l, stored at i * d + l.
    let w: Vec<DMatrix<f64>> = (0..n * d)
        .into_par_iter()
        .map(|il| fam.terms()[il % d].left_mul_dense(&inverses[il / d]))
        .collect();
    let trace2 = w.iter().map(|m| m.trace()).collect();
    let nd = n * d;
    let gram: Vec<f64> = (0..nd * nd)
        .into_par_iter()
        .map(|ab| {
            let (a, b) = (ab / nd, ab % nd);
            if b < a {
                0.0
            } else {
                w[a].dot(&w[b])
            }
        })
        .collect();
    let mut trace4 = vec![0.0; n * n * d * d];
    for i in 0..n {
        for j in 0..n {
            for l in 0..d {
                for m in 0..d {
                    let (a, b) = (i * d + l, j * d + m);
                    let v = if a <= b { gram[a * nd + b] } else { gram[b * nd + a] };
                    trace4[((i * n + j) * d + l) * d + m] = v;
                }
            }
        }
    }
    let identity = DMatrix::<f64>::identity(order, order);
    let mut cols: Vec<&[f64]> = w.iter().map(|m| m.as_slice()).collect();
    cols.push(identity.as_slice());
    let r_factor = tsqr(&cols);
    Ok(FrobPrecomp {
        selected_mu: selected_mu.to_vec(),
        d,
        trace4,
        trace2,
        r_factor,
        inverses,
    })
}

/// Minimizes the Frobenius objective as a small least-squares problem on
/// the precomputed QR factor. Directions with singular values below
/// `1e-14` of the largest are dropped (minimum-norm solution).
pub fn frob_lambda(pre: &FrobPrecomp, fam: &AffineFamily, mu: &[f64]) -> Result<Vec<f64>> {
    let alpha = fam.eval_coeffs(mu)?;
    let (g, t) = pre.reduced_system(&alpha);
    let svd = g.svd(true, true);
    let cutoff = 1e-14 * svd.singular_values.max();
    let x = svd
        .solve(&t, cutoff)
        .map_err(|e| Error::Numerical(format!("Frobenius least squares: {e}")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Frobenius weights".into()));
    }
    Ok(x.as_slice().to_vec())
}

/// Leading left singular vectors of a snapshot matrix.
#[derive(Clone, Debug)]
pub struct PodBasis {
    vectors: DMatrix<f64>,
    singular_values: Vec<f64>,
    energy_tol: f64,
}

impl PodBasis {
    /// `N x N_hat` matrix with orthonormal columns.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn energy_tol(&self) -> f64 {
        self.energy_tol
    }

    /// Coefficients `V^T u`.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.vectors.tr_mul(&DVector::from_column_slice(u)).as_slice().to_vec()
    }

    /// `V c`.
    pub fn lift(&self, c: &[f64]) -> Vec<f64> {
        (&self.vectors * DVector::from_column_slice(c)).as_slice().to_vec()
    }
}

/// Keeps the smallest `N_hat` with `sum_{i <= N_hat} s_i^2 >= (1 - tol) sum s_i^2`,
/// never exceeding the numerical rank.
pub fn pod_build(snapshots: &[Vec<f64>], energy_tol: f64) -> Result<PodBasis> {
    let first = snapshots.first().ok_or_else(|| Error::invalid("POD needs at least one snapshot"))?;
    let n = first.len();
    if snapshots.iter().any(|s| s.len() != n) {
        return Err(Error::ShapeMismatch("snapshots of different lengths".into()));
    }
    if !(0.0..1.0).contains(&energy_tol) {
        return Err(Error::invalid(format!("energy_tol must lie in [0, 1), got {energy_tol}")));
    }
    let s = DMatrix::from_fn(n, snapshots.len(), |i, j| snapshots[j][i]);
    let svd = s.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let total: f64 = sv.iter().map(|x| x * x).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("all snapshots are zero".into()));
    }
    let rank_floor = sv[0] * f64::EPSILON * n.max(snapshots.len()) as f64;
    let rank = sv.iter().take_while(|&&x| x > rank_floor).count();
    // Tail energies summed from the small end, so a zero tolerance keeps
    // every numerically nonzero mode.
    let mut tail = vec![0.0; sv.len() + 1];
    for i in (0..sv.len()).rev() {
        tail[i] = tail[i + 1] + sv[i] * sv[i];
    }
    let mut kept = 1;
    while kept < rank && tail[kept] > energy_tol * total {
        kept += 1;
    }
    let vectors = DMatrix::from_fn(n, kept, |i, j| u[(i, order[j])]);
    Ok(PodBasis {
        vectors,
        singular_values: sv,
        energy_tol,
    })
}

/// Galerkin projection of an affine family onto a POD basis, with the
/// reduced terms `V^T A_l V` and load `V^T b` cached.
#[derive(Clone, Debug)]
pub struct PodSolver {
    basis: PodBasis,
    reduced_terms: Vec<DMatrix<f64>>,
    reduced_rhs: DVector<f64>,
}

impl PodSolver {
    pub fn new(fam: &AffineFamily, basis: PodBasis, rhs: &[f64]) -> Result<PodSolver> {
        let v = basis.vectors();
        if v.nrows() != fam.order() || rhs.len() != fam.order() {
            return Err(Error::ShapeMismatch(format!(
                "POD basis of length {} and rhs of length {} for order {}",
                v.nrows(),
                rhs.len(),
                fam.order()
            )));
        }
        let reduced_terms = fam
            .terms()
            .iter()
            .map(|a| v.tr_mul(&a.mul_dense(v)))
            .collect();
        let reduced_rhs = v.tr_mul(&DVector::from_column_slice(rhs));
        Ok(PodSolver {
            basis,
            reduced_terms,
            reduced_rhs,
        })
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    /// Reduced coefficients `c` with `(V^T A(mu) V) c = V^T b`.
    pub fn reduced_solve(&self, fam: &AffineFamily, mu: &[f64]) -> Result<Vec<f64>> {
        let alpha = fam.eval_coeffs(mu)?;
        let k = self.basis.len();
        let mut a = DMatrix::<f64>::zeros(k, k);
        for (al, t) in alpha.iter().zip(&self.reduced_terms) {
            a.zip_apply(t, |o, v| *o += al * v);
        }
        factorize_dense(&a)
            .map_err(|_| Error::Numerical(format!("singular reduced system at {mu:?}")))?
            .solve(self.reduced_rhs.as_slice())
    }

    pub fn solve(&self, fam: &AffineFamily, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(self.basis.lift(&self.reduced_solve(fam, mu)?))
    }
}

/// One-shot POD-Galerkin solve (the reduced terms are rebuilt every call).
pub fn pod_solve(fam: &AffineFamily, basis: &PodBasis, rhs: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    PodSolver::new(fam, basis.clone(), rhs)?.solve(fam, mu)
}

/// Gaussian kernel ridge regression on box-normalized parameters. Targets
/// are centered per output, so constant targets are reproduced exactly.
#[derive(Clone, Debug)]
pub struct RidgeModel {
    bandwidth: f64,
    reg: f64,
    param_box: ParameterBox,
    inputs: Vec<Vec<f64>>,
    means: DVector<f64>,
    /// `n x outputs`, `(K + reg I)^{-1} (Y - mean)`.
    weights: DMatrix<f64>,
}

impl RidgeModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

fn kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

fn kernel_matrix(xs: &[Vec<f64>], bandwidth: f64, reg: f64) -> Result<DMatrix<f64>> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j], bandwidth) + if i == j { reg } else { 0.0 });
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel matrix".into()));
    }
    Ok(k)
}

fn ridge_inverse(k: DMatrix<f64>) -> Result<DMatrix<f64>> {
    match k.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => factorize_dense(&k)?.inverse(),
    }
}

/// Fits one weight column per output column of `targets` (`n x outputs`).
pub fn ridge_fit(
    points: &[Vec<f64>],
    param_box: &ParameterBox,
    targets: &DMatrix<f64>,
    bandwidth: f64,
    reg: f64,
) -> Result<RidgeModel> {
    if points.len() < 2 {
        return Err(Error::invalid("ridge regression needs at least 2 training points"));
    }
    if targets.nrows() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} training points",
            targets.nrows(),
            points.len()
        )));
    }
    if !(bandwidth > 0.0) || !(reg >= 0.0) {
        return Err(Error::invalid("bandwidth must be positive and reg nonnegative"));
    }
    let inputs: Vec<Vec<f64>> = points.iter().map(|p| param_box.to_unit(p)).collect();
    let (means, centered) = center(targets);
    let k = kernel_matrix(&inputs, bandwidth, reg)?;
    let weights = match k.clone().cholesky() {
        Some(ch) => ch.solve(&centered),
        None => factorize_dense(&k)?.solve_dense(&centered)?,
    };
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge weights".into()));
    }
    Ok(RidgeModel {
        bandwidth,
        reg,
        param_box: param_box.clone(),
        inputs,
        means,
        weights,
    })
}

fn center(targets: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = targets.nrows() as f64;
    let means = DVector::from_fn(targets.ncols(), |c, _| targets.column(c).sum() / n);
    let centered = DMatrix::from_fn(targets.nrows(), targets.ncols(), |i, c| targets[(i, c)] - means[c]);
    (means, centered)
}

/// Picks `(bandwidth, reg)` from a fixed grid by closed-form leave-one-out
/// error, then fits.
pub fn ridge_fit_loo(points: &[Vec<f64>], param_box: &ParameterBox, targets: &DMatrix<f64>) -> Result<RidgeModel> {
    const BANDWIDTHS: [f64; 7] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2];
    const REGS: [f64; 4] = [1e-12, 1e-9, 1e-6, 1e-3];
    if points.len() < 2 {
        return Err(Error::invalid("ridge regression needs at least 2 training points"));
    }
    let inputs: Vec<Vec<f64>> = points.iter().map(|p| param_box.to_unit(p)).collect();
    let (_, centered) = center(targets);
    let mut best: Option<(f64, f64, f64)> = None;
    for &h in &BANDWIDTHS {
        for &reg in &REGS {
            let Ok(inv) = kernel_matrix(&inputs, h, reg).and_then(ridge_inverse) else {
                continue;
            };
            // LOO residual of sample i: (inv Y)_i / inv_ii.
            let a = &inv * &centered;
            let mut err = 0.0;
            for i in 0..points.len() {
                for c in 0..targets.ncols() {
                    let e = a[(i, c)] / inv[(i, i)];
                    err += e * e;
                }
            }
            if err.is_finite() && best.map_or(true, |(b, _, _)| err < b) {
                best = Some((err, h, reg));
            }
        }
    }
    let (_, h, reg) = best.ok_or_else(|| Error::Numerical("no admissible ridge hyperparameters".into()))?;
    ridge_fit(points, param_box, targets, h, reg)
}

/// Kernel row at `mu` times the weights.
pub fn ridge_predict(model: &RidgeModel, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != model.param_box.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_box.dim(),
            got: mu.len(),
        });
    }
    let x = model.param_box.to_unit(mu);
    let row = DVector::from_iterator(
        model.inputs.len(),
        model.inputs.iter().map(|xi| kernel(&x, xi, model.bandwidth)),
    );
    Ok((model.weights.tr_mul(&row) + &model.means).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{parse_coeff_expr, SparseMatrix};

    #[test]
    fn frob_single_snapshot_matches_scalar_least_squares() {
        let a1 = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]), 0.0).unwrap();
        let a2 = SparseMatrix::identity(2);
        let fam = AffineFamily::new(
            vec![a1, a2],
            vec![parse_coeff_expr("mu1").unwrap(), parse_coeff_expr("mu2").unwrap()],
            ParameterBox::cube(2, 1.0, 4.0).unwrap(),
            true,
        )
        .unwrap();
        let mu1 = vec![2.0, 1.5];
        let pre = frob_build(&fam, &[mu1.clone()]).unwrap();
        let mu = [3.0, 2.5];
        let y = crate::surrogate::exact_inverse(&fam, &mu1).unwrap();
        let a = fam.assemble(&mu).unwrap().to_dense();
        let ya = &y * &a;
        let expected = ya.trace() / ya.dot(&ya);
        let lam = frob_lambda(&pre, &fam, &mu).unwrap();
        assert!((lam[0] - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn pod_keeps_the_rank() {
        let u = vec![1.0, 2.0, 0.0, 1.0];
        let v = vec![0.0, 1.0, 1.0, 0.0];
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - b).collect();
        let basis = pod_build(&[u, v, w], 0.0).unwrap();
        assert_eq!(basis.len(), 2);
        let g = basis.vectors().tr_mul(basis.vectors());
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(pod_build(&[vec![0.0; 3]], 0.0).is_err());
    }

    #[test]
    fn ridge_interpolates_and_keeps_constants() {
        let b = ParameterBox::cube(1, 0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 + 0.5) / 20.0]).collect();
        let y = DMatrix::from_fn(20, 2, |i, c| if c == 0 { 3.0 } else { pts[i][0].sin() });
        let m = ridge_fit(&pts, &b, &y, 0.2, 1e-8).unwrap();
        for i in 0..201 {
            let x = i as f64 / 200.0;
            let p = ridge_predict(&m, &[x]).unwrap();
            assert!((p[1] - x.sin()).abs() < 1e-2);
        }
        // Interpolating limit.
        let tight = ridge_fit(&pts, &b, &y, 0.2, 1e-14).unwrap();
        let p = ridge_predict(&tight, &pts[7]).unwrap();
        assert!((p[1] - pts[7][0].sin()).abs() < 1e-6);
        let loo = ridge_fit_loo(&pts, &b, &y).unwrap();
        for x in [0.0, 0.33, 1.0] {
            assert!((ridge_predict(&loo, &[x]).unwrap()[0] - 3.0).abs() < 1e-8);
            assert!((ridge_predict(&m, &[x]).unwrap()[0] - 3.0).abs() < 1e-8);
        }
    }
}
