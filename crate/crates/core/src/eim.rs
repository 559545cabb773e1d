//! Empirical interpolation of the tensor-power coefficients `g(k, mu)`.
//!
//! The offline greedy works on the residual table `r(k, mu)` over
//! `kappa_{m,d} x P_sample`: each step picks the sample point whose residual
//! has the largest sup-norm, then the multi-index where that residual peaks,
//! and removes the normalized residual from every row. The greedy produces
//! a unit lower triangular `B = (q_j(k_i))` and the pivots `Gamma`, and
//! `F = B Gamma^T` is an LU factorization of `F_{l,l'} = g(k_l, mu_{l'})`.
//! The online weights solve `F lambda = (g(k_l, mu))_l`, so that
//! `I(g)(k, mu) = sum_l lambda_l(mu) g(k, mu_l)`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::family::{eval_coeff_exprs, g_all, g_eval, parse_coeff_expr, AffineFamily, CoeffExpr, ParameterBox};
use crate::io::{fmt17, json_f64_array, json_string};
use crate::multiindex::{enumerate_kappa, MultiIndex, MultiIndexSet};
use crate::sampling::SampleSet;

pub const MODEL_VERSION: u64 = 1;

/// Default relative stopping tolerance: effectively "run until the residual
/// is exhausted".
pub const DEFAULT_TOL_REL: f64 = 1e-12;

/// Residuals below this are treated as exact zeros (no normalization).
const PIVOT_FLOOR: f64 = 1e-300;

/// Upper bound on `|P_sample| * Q_{m,d}` for the in-memory residual table.
pub const MAX_RESIDUAL_ENTRIES: usize = 100_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EimOptions {
    pub tol_rel: f64,
    /// At most this many greedy steps; `None` runs to completion.
    pub n_max: Option<usize>,
    /// Select `k0 = (0, ..., 0)` at the first step.
    pub force_k0: bool,
}

impl Default for EimOptions {
    fn default() -> Self {
        EimOptions {
            tol_rel: DEFAULT_TOL_REL,
            n_max: None,
            force_k0: false,
        }
    }
}

/// Result of the offline stage.
#[derive(Clone, Debug)]
pub struct EimModel {
    m: u32,
    coeffs: Vec<CoeffExpr>,
    param_box: ParameterBox,
    forced_k0: bool,
    selected_k: Vec<MultiIndex>,
    selected_mu: Vec<Vec<f64>>,
    b: DMatrix<f64>,
    f: DMatrix<f64>,
    /// `Gamma^T = triu(B^{-1} F)`.
    upper: DMatrix<f64>,
    residual_history: Vec<f64>,
    alpha_sel: Vec<Vec<f64>>,
    /// The greedy basis `q_j(k)` on the full index set, `Q x N`; only present
    /// for models built in this process.
    basis: Option<(MultiIndexSet, DMatrix<f64>)>,
}

/// Runs the greedy of the offline stage on `sample`.
pub fn eim_offline(fam: &AffineFamily, m: i64, sample: &SampleSet, opts: &EimOptions) -> Result<EimModel> {
    if m < 1 {
        return Err(Error::invalid(format!("m must be at least 1, got {m}")));
    }
    if sample.is_empty() {
        return Err(Error::invalid("empty training sample"));
    }
    if !(opts.tol_rel >= 0.0) || !opts.tol_rel.is_finite() {
        return Err(Error::invalid(format!("tol_rel must be finite and >= 0, got {}", opts.tol_rel)));
    }
    if opts.n_max == Some(0) {
        return Err(Error::invalid("n_max must be positive"));
    }
    sample.validate(fam.param_box())?;

    let kappa = enumerate_kappa(m, fam.d() as i64)?;
    let q = kappa.len();
    let s = sample.len();
    if s.checked_mul(q).map_or(true, |t| t > MAX_RESIDUAL_ENTRIES) {
        return Err(Error::invalid(format!(
            "residual table of {s} x {q} entries exceeds the limit of {MAX_RESIDUAL_ENTRIES}"
        )));
    }

    let mut res = vec![0.0; s * q];
    let filled: Vec<Result<()>> = res
        .par_chunks_mut(q)
        .zip(sample.points().par_iter())
        .map(|(row, mu)| {
            let alpha = fam.eval_coeffs(mu)?;
            row.copy_from_slice(&g_all(&alpha, &kappa)?);
            Ok(())
        })
        .collect();
    filled.into_iter().collect::<Result<()>>()?;

    let mut row_max: Vec<f64> = res.par_chunks(q).map(sup_norm).collect();
    let n_max = opts.n_max.unwrap_or(q).min(q).min(s);
    let mut sel_s: Vec<usize> = Vec::new();
    let mut is_sel = vec![false; s];
    let mut sel_k: Vec<usize> = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut history = Vec::new();
    let mut first = 0.0;

    while sel_k.len() < n_max {
        let (s_star, e) = argmax(row_max.iter().copied());
        if sel_k.is_empty() {
            first = e;
        }
        if e < PIVOT_FLOOR || (!sel_k.is_empty() && e <= opts.tol_rel * first) {
            break;
        }
        let row = &res[s_star * q..(s_star + 1) * q];
        let k_star = if sel_k.is_empty() && opts.force_k0 {
            0
        } else {
            argmax(row.iter().map(|v| v.abs())).0
        };
        let pivot = row[k_star];
        if pivot.abs() < PIVOT_FLOOR {
            break;
        }
        let mut qv: Vec<f64> = row.iter().map(|v| v / pivot).collect();
        for &k in &sel_k {
            qv[k] = 0.0;
        }
        qv[k_star] = 1.0;
        history.push(e);
        sel_s.push(s_star);
        is_sel[s_star] = true;
        sel_k.push(k_star);

        res.par_chunks_mut(q)
            .zip(row_max.par_iter_mut())
            .zip(is_sel.par_iter())
            .for_each(|((row, rmax), &selected)| {
                if selected {
                    row.fill(0.0);
                } else {
                    let c = row[k_star];
                    if c != 0.0 {
                        for (v, qk) in row.iter_mut().zip(&qv) {
                            *v -= c * qk;
                        }
                    }
                    // Exact zeros where the interpolation already matches.
                    for &k in &sel_k {
                        row[k] = 0.0;
                    }
                }
                *rmax = sup_norm(row);
            });
        basis.push(qv);
    }

    let n = sel_k.len();
    let b = DMatrix::from_fn(n, n, |i, j| basis[j][sel_k[i]]);
    let basis_mat = DMatrix::from_fn(q, n, |k, j| basis[j][k]);
    let selected_k: Vec<MultiIndex> = sel_k.iter().map(|&k| kappa.items()[k].clone()).collect();
    let selected_mu: Vec<Vec<f64>> = sel_s.iter().map(|&i| sample.points()[i].clone()).collect();
    let alpha_sel = selected_mu
        .iter()
        .map(|mu| fam.eval_coeffs(mu))
        .collect::<Result<Vec<_>>>()?;
    let f = f_matrix(&selected_k, &alpha_sel)?;

    let mut model = EimModel::from_parts(
        m as u32,
        fam.coeffs().to_vec(),
        fam.param_box().clone(),
        opts.force_k0,
        selected_k,
        selected_mu,
        b,
        f,
        history,
    )?;
    model.basis = Some((kappa, basis_mat));
    Ok(model)
}

fn sup_norm(row: &[f64]) -> f64 {
    row.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// First index of the largest value.
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn f_matrix(selected_k: &[MultiIndex], alpha_sel: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = selected_k.len();
    let mut f = DMatrix::zeros(n, n);
    for (l, k) in selected_k.iter().enumerate() {
        for (lp, alpha) in alpha_sel.iter().enumerate() {
            f[(l, lp)] = g_eval(alpha, k)?;
        }
    }
    Ok(f)
}

/// Solves `L x = rhs` for lower triangular `L`; `unit` skips the diagonal.
fn forward(l: &DMatrix<f64>, rhs: &[f64], unit: bool) -> Vec<f64> {
    let n = rhs.len();
    let mut x = rhs.to_vec();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = if unit { acc } else { acc / l[(i, i)] };
    }
    x
}

/// Solves `U x = rhs` for upper triangular `U`.
fn backward(u: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut x = rhs.to_vec();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= u[(i, j)] * x[j];
        }
        x[i] = acc / u[(i, i)];
    }
    x
}

impl EimModel {
    /// Assembles a model from its stored parts and checks the structural
    /// invariants: `B` unit lower triangular with entries bounded by one
    /// (except a forced `k0` column),
    /// `F` consistent with the coefficients and invertible, distinct
    /// selections.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        m: u32,
        coeffs: Vec<CoeffExpr>,
        param_box: ParameterBox,
        forced_k0: bool,
        selected_k: Vec<MultiIndex>,
        selected_mu: Vec<Vec<f64>>,
        b: DMatrix<f64>,
        f: DMatrix<f64>,
        residual_history: Vec<f64>,
    ) -> Result<EimModel> {
        let corrupt = |msg: String| Error::CorruptModel(msg);
        let d = coeffs.len();
        let r = param_box.dim();
        let n = selected_k.len();
        if n == 0 {
            return Err(corrupt("model has no selected indices".into()));
        }
        if selected_mu.len() != n || residual_history.len() != n {
            return Err(corrupt(format!(
                "{n} selected indices but {} parameters and {} residuals",
                selected_mu.len(),
                residual_history.len()
            )));
        }
        if b.shape() != (n, n) || f.shape() != (n, n) {
            return Err(corrupt(format!("B and F must be {n} x {n}")));
        }
        for (i, k) in selected_k.iter().enumerate() {
            if k.len() != d || k.weight() > m as u64 {
                return Err(corrupt(format!("selected index {k} does not belong to kappa_{{{m},{d}}}")));
            }
            if selected_k[..i].contains(k) {
                return Err(corrupt(format!("selected index {k} is repeated")));
            }
        }
        if forced_k0 && !selected_k[0].is_zero() {
            return Err(corrupt("forced k0 model does not start with k0".into()));
        }
        for (i, mu) in selected_mu.iter().enumerate() {
            if mu.len() != r {
                return Err(corrupt(format!("selected parameter {i} has dimension {}", mu.len())));
            }
            if selected_mu[..i].contains(mu) {
                return Err(corrupt(format!("selected parameter {mu:?} is repeated")));
            }
        }
        for i in 0..n {
            if b[(i, i)] != 1.0 {
                return Err(corrupt(format!("B[{i},{i}] = {} is not 1", b[(i, i)])));
            }
            for j in 0..n {
                let v = b[(i, j)];
                // A forced first column is g(., mu_1) itself and is not
                // normalized by its maximum.
                let bounded = !(forced_k0 && j == 0);
                if (j > i && v != 0.0) || !v.is_finite() || (bounded && !(v.abs() <= 1.0 + 1e-12)) {
                    return Err(corrupt(format!("B[{i},{j}] = {v} breaks the triangular structure")));
                }
            }
        }
        let alpha_sel = selected_mu
            .iter()
            .map(|mu| eval_coeff_exprs(&coeffs, r, mu))
            .collect::<Result<Vec<_>>>()?;
        let f_check = f_matrix(&selected_k, &alpha_sel)?;
        for (a, e) in f.iter().zip(f_check.iter()) {
            if !((a - e).abs() <= 1e-12 * e.abs().max(1.0)) {
                return Err(corrupt(format!("F entry {a} disagrees with g = {e}")));
            }
        }

        let mut upper = DMatrix::zeros(n, n);
        for j in 0..n {
            let col: Vec<f64> = f.column(j).iter().copied().collect();
            let x = forward(&b, &col, true);
            for i in 0..=j {
                upper[(i, j)] = x[i];
            }
        }
        let scale = upper.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let p = upper[(i, i)];
            if !(p.abs() > scale * f64::EPSILON * n as f64) || !p.is_finite() {
                return Err(corrupt(format!("F is singular (pivot {i} = {p})")));
            }
        }

        Ok(EimModel {
            m,
            coeffs,
            param_box,
            forced_k0,
            selected_k,
            selected_mu,
            b,
            f,
            upper,
            residual_history,
            alpha_sel,
            basis: None,
        })
    }

    pub fn d(&self) -> usize {
        self.coeffs.len()
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn r(&self) -> usize {
        self.param_box.dim()
    }

    /// Number of selected pairs `N`.
    pub fn n(&self) -> usize {
        self.selected_k.len()
    }

    pub fn forced_k0(&self) -> bool {
        self.forced_k0
    }

    pub fn coeffs(&self) -> &[CoeffExpr] {
        &self.coeffs
    }

    pub fn param_box(&self) -> &ParameterBox {
        &self.param_box
    }

    pub fn selected_k(&self) -> &[MultiIndex] {
        &self.selected_k
    }

    pub fn selected_mu(&self) -> &[Vec<f64>] {
        &self.selected_mu
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn residual_history(&self) -> &[f64] {
        &self.residual_history
    }

    /// Keeps only the first `n` selections. Greedy prefixes are themselves
    /// valid models, which is how budget sweeps reuse one offline run.
    pub fn truncated(&self, n: usize) -> Result<EimModel> {
        if n == 0 || n > self.n() {
            return Err(Error::invalid(format!("cannot truncate a model of size {} to {n}", self.n())));
        }
        let mut out = EimModel::from_parts(
            self.m,
            self.coeffs.clone(),
            self.param_box.clone(),
            self.forced_k0,
            self.selected_k[..n].to_vec(),
            self.selected_mu[..n].to_vec(),
            self.b.view((0, 0), (n, n)).into_owned(),
            self.f.view((0, 0), (n, n)).into_owned(),
            self.residual_history[..n].to_vec(),
        )?;
        out.basis = self
            .basis
            .as_ref()
            .map(|(set, q)| (set.clone(), q.columns(0, n).into_owned()));
        Ok(out)
    }

    fn alpha(&self, mu: &[f64]) -> Result<Vec<f64>> {
        eval_coeff_exprs(&self.coeffs, self.r(), mu)
    }

    fn g_selected(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let alpha = self.alpha(mu)?;
        self.selected_k.iter().map(|k| g_eval(&alpha, k)).collect()
    }

    /// `beta(mu)` with `B beta = (g(k_l, mu))_l`.
    pub fn beta(&self, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(&self.b, &self.g_selected(mu)?, true))
    }

    /// Combination weights `lambda(mu)`, the solution of `F lambda = (g(k_l, mu))_l`.
    pub fn lambda(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let lam = backward(&self.upper, &self.beta(mu)?);
        if lam.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite interpolation weights at {mu:?}")));
        }
        Ok(lam)
    }

    /// `I(g)(k, mu) = sum_l lambda_l(mu) g(k, mu_l)`.
    pub fn interpolate(&self, mu: &[f64], k: &MultiIndex) -> Result<f64> {
        self.check_index(k)?;
        let lam = self.lambda(mu)?;
        let mut acc = 0.0;
        for (l, alpha) in self.alpha_sel.iter().enumerate() {
            acc += lam[l] * g_eval(alpha, k)?;
        }
        Ok(acc)
    }

    /// The same interpolant through the greedy basis: `sum_j beta_j(mu) q_j(k)`.
    pub fn interpolate_beta(&self, mu: &[f64], k: &MultiIndex) -> Result<f64> {
        self.check_index(k)?;
        let beta = self.beta(mu)?;
        let qk = self.basis_at(k)?;
        Ok(beta.iter().zip(&qk).map(|(b, q)| b * q).sum())
    }

    /// `q_j(k)` for all `j`: read from the greedy table when available,
    /// otherwise from `G = Q Gamma^T` restricted to row `k`.
    fn basis_at(&self, k: &MultiIndex) -> Result<Vec<f64>> {
        if let Some((set, q)) = &self.basis {
            if let Some(pos) = set.position(k) {
                return Ok(q.row(pos).iter().copied().collect());
            }
        }
        let g_row = self
            .alpha_sel
            .iter()
            .map(|alpha| g_eval(alpha, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(forward(&self.upper.transpose(), &g_row, false))
    }

    fn check_index(&self, k: &MultiIndex) -> Result<()> {
        if k.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: k.len(),
            });
        }
        if k.weight() > self.m as u64 {
            return Err(Error::invalid(format!("|{k}| exceeds m = {}", self.m)));
        }
        Ok(())
    }

    /// Serializes the model. `payload_ref` is an already-encoded JSON value
    /// (or `None` for `null`).
    pub fn to_json(&self, payload_ref: Option<&str>) -> String {
        let mut s = String::from("{\n");
        let rows = |m: &DMatrix<f64>| -> String {
            let items: Vec<String> = (0..m.nrows())
                .map(|i| json_f64_array(&m.row(i).iter().copied().collect::<Vec<_>>()))
                .collect();
            format!("[{}]", items.join(","))
        };
        let _ = writeln!(s, "  \"version\": {MODEL_VERSION},");
        let _ = writeln!(s, "  \"d\": {},", self.d());
        let _ = writeln!(s, "  \"m\": {},", self.m);
        let _ = writeln!(s, "  \"r\": {},", self.r());
        let _ = writeln!(s, "  \"forced_k0\": {},", self.forced_k0);
        let coeffs: Vec<String> = self.coeffs.iter().map(|c| json_string(c.source())).collect();
        let _ = writeln!(s, "  \"coeffs\": [{}],", coeffs.join(","));
        let bx: Vec<String> = self
            .param_box
            .intervals()
            .iter()
            .map(|&(lo, hi)| format!("[{},{}]", fmt17(lo), fmt17(hi)))
            .collect();
        let _ = writeln!(s, "  \"param_box\": [{}],", bx.join(","));
        let ks: Vec<String> = self
            .selected_k
            .iter()
            .map(|k| {
                let e: Vec<String> = k.entries().iter().map(|v| v.to_string()).collect();
                format!("[{}]", e.join(","))
            })
            .collect();
        let _ = writeln!(s, "  \"selected_k\": [{}],", ks.join(","));
        let mus: Vec<String> = self.selected_mu.iter().map(|mu| json_f64_array(mu)).collect();
        let _ = writeln!(s, "  \"selected_mu\": [{}],", mus.join(","));
        let _ = writeln!(s, "  \"F\": {},", rows(&self.f));
        let _ = writeln!(s, "  \"B\": {},", rows(&self.b));
        let _ = writeln!(s, "  \"residual_history\": {},", json_f64_array(&self.residual_history));
        let _ = writeln!(s, "  \"payload_ref\": {}", payload_ref.unwrap_or("null"));
        s.push_str("}\n");
        s
    }

    /// Parses a model file; returns the model and its `payload_ref` value.
    pub fn from_json(text: &str) -> Result<(EimModel, Value)> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("model JSON: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Format("model JSON must be an object".into()))?;
        let field = |name: &str| obj.get(name).ok_or_else(|| Error::Format(format!("model JSON lacks `{name}`")));
        let uint = |name: &str| -> Result<u64> {
            field(name)?
                .as_u64()
                .ok_or_else(|| Error::Format(format!("`{name}` must be a nonnegative integer")))
        };
        let version = uint("version")?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let d = uint("d")? as usize;
        let m = u32::try_from(uint("m")?).map_err(|_| Error::Format("`m` out of range".into()))?;
        let r = uint("r")? as usize;
        let forced_k0 = field("forced_k0")?
            .as_bool()
            .ok_or_else(|| Error::Format("`forced_k0` must be a boolean".into()))?;
        let coeffs = field("coeffs")?
            .as_array()
            .ok_or_else(|| Error::Format("`coeffs` must be an array".into()))?
            .iter()
            .map(|c| {
                c.as_str()
                    .ok_or_else(|| Error::Format("coefficient must be a string".into()))
                    .and_then(parse_coeff_expr)
            })
            .collect::<Result<Vec<_>>>()?;
        let bx = f64_rows(field("param_box")?, "param_box")?;
        let param_box = ParameterBox::new(
            bx.iter()
                .map(|p| match p.as_slice() {
                    [lo, hi] => Ok((*lo, *hi)),
                    _ => Err(Error::Format("`param_box` entries must be [lo, hi]".into())),
                })
                .collect::<Result<Vec<_>>>()?,
        )?;
        if coeffs.len() != d || param_box.dim() != r {
            return Err(Error::CorruptModel(format!(
                "declared d = {d}, r = {r} but found {} coefficients and {} intervals",
                coeffs.len(),
                param_box.dim()
            )));
        }
        let selected_k = field("selected_k")?
            .as_array()
            .ok_or_else(|| Error::Format("`selected_k` must be an array".into()))?
            .iter()
            .map(|k| {
                k.as_array()
                    .and_then(|e| e.iter().map(|x| x.as_u64().and_then(|x| u32::try_from(x).ok())).collect())
                    .map(MultiIndex::new)
                    .ok_or_else(|| Error::Format("`selected_k` entries must be integer arrays".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let selected_mu = f64_rows(field("selected_mu")?, "selected_mu")?;
        let f = matrix(field("F")?, "F")?;
        let b = matrix(field("B")?, "B")?;
        let residual_history = f64_list(field("residual_history")?, "residual_history")?;
        let payload = field("payload_ref")?.clone();
        let model = EimModel::from_parts(
            m,
            coeffs,
            param_box,
            forced_k0,
            selected_k,
            selected_mu,
            b,
            f,
            residual_history,
        )?;
        Ok((model, payload))
    }
}

fn f64_list(v: &Value, name: &str) -> Result<Vec<f64>> {
    v.as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect())
        .ok_or_else(|| Error::Format(format!("`{name}` must be an array of numbers")))
}

fn f64_rows(v: &Value, name: &str) -> Result<Vec<Vec<f64>>> {
    v.as_array()
        .ok_or_else(|| Error::Format(format!("`{name}` must be an array")))?
        .iter()
        .map(|row| f64_list(row, name))
        .collect()
}

fn matrix(v: &Value, name: &str) -> Result<DMatrix<f64>> {
    let rows = f64_rows(v, name)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format(format!("`{name}` must be a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Free-function form of [`EimModel::lambda`].
pub fn eim_lambda(model: &EimModel, mu: &[f64]) -> Result<Vec<f64>> {
    model.lambda(mu)
}

/// Free-function form of [`EimModel::interpolate`].
pub fn eim_interpolate(model: &EimModel, mu: &[f64], k: &MultiIndex) -> Result<f64> {
    model.interpolate(mu, k)
}
