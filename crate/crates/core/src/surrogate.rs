//! Surrogates built on an [`EimModel`]: `sum_l lambda_l(mu) Q(mu_l)` where
//! `Q` is a linear solve, the full inverse or the log-determinant. Also holds
//! the exact reference oracles and the power-series validators (Richardson
//! iteration, the explicit tensor-power expansion, the log-det trace
//! series).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eim::EimModel;
use crate::error::{Error, Result};
use crate::family::{AffineFamily, SparseMatrix};
use crate::io::json_f64_array;
use crate::linalg::{dense_power, factorize, factorize_dense, SkylineCholesky};
use crate::multiindex::{enumerate_kappa, MultiIndex};

/// Largest order for which dense inverses are materialized.
pub const INVERSE_DENSE_LIMIT: usize = 2000;

/// Largest order accepted by [`brute_power_expand`].
pub const BRUTE_DENSE_LIMIT: usize = 50;

/// Largest number of ordered products `d^p` in [`brute_power_expand`].
pub const BRUTE_MAX_PRODUCTS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Inverse,
    Logdet,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Inverse => "inverse",
            Mode::Logdet => "logdet",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solve" => Ok(Mode::Solve),
            "inverse" => Ok(Mode::Inverse),
            "logdet" => Ok(Mode::Logdet),
            _ => Err(Error::invalid(format!("unknown quantity `{s}` (expected solve, inverse or logdet)"))),
        }
    }
}

/// A computed quantity: a solution vector, a dense inverse or a log-det.
#[derive(Clone, Debug, PartialEq)]
pub enum Quantity {
    Vector(Vec<f64>),
    Matrix(DMatrix<f64>),
    Scalar(f64),
}

impl Quantity {
    /// The entries in a fixed (row-major for matrices) order.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Quantity::Vector(v) => v.clone(),
            Quantity::Matrix(m) => m.transpose().as_slice().to_vec(),
            Quantity::Scalar(x) => vec![*x],
        }
    }
}

/// Per-selected-parameter snapshots.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Solve(Vec<Vec<f64>>),
    Inverse(Vec<DMatrix<f64>>),
    Logdet(Vec<f64>),
}

impl Payload {
    pub fn mode(&self) -> Mode {
        match self {
            Payload::Solve(_) => Mode::Solve,
            Payload::Inverse(_) => Mode::Inverse,
            Payload::Logdet(_) => Mode::Logdet,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Solve(v) => v.len(),
            Payload::Inverse(v) => v.len(),
            Payload::Logdet(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Surrogate {
    model: EimModel,
    payload: Payload,
}

impl Surrogate {
    pub fn new(model: EimModel, payload: Payload) -> Result<Surrogate> {
        if payload.len() != model.n() {
            return Err(Error::CorruptModel(format!(
                "payload has {} snapshots for a model of size {}",
                payload.len(),
                model.n()
            )));
        }
        if payload.mode() == Mode::Logdet && !model.forced_k0() {
            return Err(Error::invalid("log-det surrogates need a model built with forced k0"));
        }
        let order = match &payload {
            Payload::Solve(v) => v.first().map(Vec::len),
            Payload::Inverse(v) => v.first().map(|m| m.nrows()),
            Payload::Logdet(_) => None,
        };
        let consistent = match &payload {
            Payload::Solve(v) => v.iter().all(|x| Some(x.len()) == order),
            Payload::Inverse(v) => v.iter().all(|m| Some(m.nrows()) == order && m.is_square()),
            Payload::Logdet(_) => true,
        };
        if !consistent {
            return Err(Error::CorruptModel("snapshots of inconsistent size".into()));
        }
        Ok(Surrogate { model, payload })
    }

    pub fn model(&self) -> &EimModel {
        &self.model
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn mode(&self) -> Mode {
        self.payload.mode()
    }

    /// `sum_l lambda_l(mu) payload_l`, accumulated in index order.
    pub fn eval(&self, mu: &[f64]) -> Result<Quantity> {
        let lam = self.model.lambda(mu)?;
        Ok(self.combine(&lam))
    }

    /// Combines the snapshots with explicit weights.
    pub fn combine(&self, lam: &[f64]) -> Quantity {
        match &self.payload {
            Payload::Solve(snaps) => {
                let mut out = vec![0.0; snaps[0].len()];
                for (l, u) in lam.iter().zip(snaps) {
                    for (o, x) in out.iter_mut().zip(u) {
                        *o += l * x;
                    }
                }
                Quantity::Vector(out)
            }
            Payload::Inverse(snaps) => {
                let mut out = DMatrix::<f64>::zeros(snaps[0].nrows(), snaps[0].ncols());
                for (l, x) in lam.iter().zip(snaps) {
                    out.zip_apply(x, |o, v| *o += l * v);
                }
                Quantity::Matrix(out)
            }
            Payload::Logdet(snaps) => Quantity::Scalar(lam.iter().zip(snaps).map(|(l, x)| l * x).sum()),
        }
    }

    /// Writes the model JSON with the payload embedded (inverse matrices go
    /// to a sidecar `<stem>.inverse.bin` next to `path`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let payload_ref = match &self.payload {
            Payload::Solve(snaps) => {
                let items: Vec<String> = snaps.iter().map(|u| json_f64_array(u)).collect();
                format!(
                    "{{\"mode\":\"solve\",\"order\":{},\"snapshots\":[{}]}}",
                    snaps[0].len(),
                    items.join(",")
                )
            }
            Payload::Logdet(snaps) => {
                format!("{{\"mode\":\"logdet\",\"snapshots\":{}}}", json_f64_array(snaps))
            }
            Payload::Inverse(snaps) => {
                let sidecar = sidecar_name(path)?;
                let order = snaps[0].nrows();
                let mut bytes = Vec::with_capacity(snaps.len() * order * order * 8);
                for x in snaps {
                    for i in 0..order {
                        for j in 0..order {
                            bytes.extend_from_slice(&x[(i, j)].to_le_bytes());
                        }
                    }
                }
                let sidecar_path = path.with_file_name(&sidecar);
                fs::write(&sidecar_path, bytes).map_err(|e| Error::io(&sidecar_path, e))?;
                format!(
                    "{{\"mode\":\"inverse\",\"order\":{order},\"file\":{}}}",
                    crate::io::json_string(&sidecar)
                )
            }
        };
        let text = self.model.to_json(Some(&payload_ref));
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Surrogate> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (model, payload_ref) = EimModel::from_json(&text)?;
        let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        let obj = payload_ref
            .as_object()
            .ok_or_else(|| bad("model has no surrogate payload"))?;
        let mode: Mode = obj
            .get("mode")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("payload lacks `mode`"))?
            .parse()?;
        let payload = match mode {
            Mode::Solve => Payload::Solve(
                obj.get("snapshots")
                    .and_then(Value::as_array)
                    .and_then(|rows| {
                        rows.iter()
                            .map(|r| r.as_array().and_then(|a| a.iter().map(Value::as_f64).collect()))
                            .collect()
                    })
                    .ok_or_else(|| bad("solve snapshots must be arrays of numbers"))?,
            ),
            Mode::Logdet => Payload::Logdet(
                obj.get("snapshots")
                    .and_then(Value::as_array)
                    .and_then(|a| a.iter().map(Value::as_f64).collect())
                    .ok_or_else(|| bad("log-det snapshots must be numbers"))?,
            ),
            Mode::Inverse => {
                let order = obj
                    .get("order")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| bad("inverse payload lacks `order`"))? as usize;
                let file = obj
                    .get("file")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("inverse payload lacks `file`"))?;
                let sidecar = path.with_file_name(file);
                let bytes = fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
                let per = order * order * 8;
                if per == 0 || bytes.len() != per * model.n() {
                    return Err(Error::Format(format!(
                        "{}: expected {} bytes, found {}",
                        sidecar.display(),
                        per * model.n(),
                        bytes.len()
                    )));
                }
                Payload::Inverse(
                    bytes
                        .chunks_exact(per)
                        .map(|chunk| {
                            let vals: Vec<f64> = chunk
                                .chunks_exact(8)
                                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                                .collect();
                            DMatrix::from_row_slice(order, order, &vals)
                        })
                        .collect(),
                )
            }
        };
        Surrogate::new(model, payload)
    }
}

fn sidecar_name(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("cannot derive a sidecar name from {}", path.display())))?;
    Ok(format!("{stem}.inverse.bin"))
}

fn check_compatible(model: &EimModel, fam: &AffineFamily) -> Result<()> {
    let same = model.d() == fam.d()
        && model.r() == fam.r()
        && model
            .coeffs()
            .iter()
            .zip(fam.coeffs())
            .all(|(a, b)| a.source() == b.source());
    if same {
        Ok(())
    } else {
        Err(Error::invalid("model coefficients do not match the family"))
    }
}

fn resolve_rhs<'a>(fam: &'a AffineFamily, rhs: Option<&'a [f64]>) -> Result<&'a [f64]> {
    let b = rhs
        .or_else(|| fam.rhs())
        .ok_or_else(|| Error::invalid("solve mode needs a right-hand side"))?;
    if b.len() != fam.order() {
        return Err(Error::DimensionMismatch {
            expected: fam.order(),
            got: b.len(),
        });
    }
    Ok(b)
}

/// Computes the snapshots at every selected parameter by direct
/// factorization. `rhs` defaults to the family's right-hand side.
pub fn build_surrogate(model: &EimModel, fam: &AffineFamily, mode: Mode, rhs: Option<&[f64]>) -> Result<Surrogate> {
    check_compatible(model, fam)?;
    match mode {
        Mode::Solve => {
            resolve_rhs(fam, rhs)?;
        }
        Mode::Inverse if fam.order() > INVERSE_DENSE_LIMIT => {
            return Err(Error::invalid(format!(
                "inverse mode is limited to order {INVERSE_DENSE_LIMIT}, got {}",
                fam.order()
            )));
        }
        Mode::Logdet if !fam.spd_hint() => {
            return Err(Error::NotSpd("log-det surrogates need an SPD family".into()));
        }
        Mode::Logdet if !model.forced_k0() => {
            return Err(Error::invalid("log-det surrogates need a model built with forced k0"));
        }
        _ => {}
    }
    let snaps: Vec<Result<Quantity>> = model
        .selected_mu()
        .par_iter()
        .map(|mu| exact_quantity(fam, mode, mu, rhs))
        .collect();
    let mut values = Vec::with_capacity(snaps.len());
    for (l, s) in snaps.into_iter().enumerate() {
        values.push(s.map_err(|e| match e {
            Error::NotSpd(msg) => Error::NotSpd(format!("snapshot {}: {msg}", l + 1)),
            Error::Factorization(msg) => Error::Factorization(format!("snapshot {}: {msg}", l + 1)),
            other => other,
        })?);
    }
    let payload = match mode {
        Mode::Solve => Payload::Solve(
            values
                .into_iter()
                .map(|q| match q {
                    Quantity::Vector(v) => v,
                    _ => unreachable!("solve snapshots are vectors"),
                })
                .collect(),
        ),
        Mode::Inverse => Payload::Inverse(
            values
                .into_iter()
                .map(|q| match q {
                    Quantity::Matrix(m) => m,
                    _ => unreachable!("inverse snapshots are matrices"),
                })
                .collect(),
        ),
        Mode::Logdet => Payload::Logdet(
            values
                .into_iter()
                .map(|q| match q {
                    Quantity::Scalar(x) => x,
                    _ => unreachable!("log-det snapshots are scalars"),
                })
                .collect(),
        ),
    };
    Surrogate::new(model.clone(), payload)
}

pub fn eval_surrogate(s: &Surrogate, mu: &[f64]) -> Result<Quantity> {
    s.eval(mu)
}

/// The exact quantity of `mode` at `mu`.
pub fn exact_quantity(fam: &AffineFamily, mode: Mode, mu: &[f64], rhs: Option<&[f64]>) -> Result<Quantity> {
    match mode {
        Mode::Solve => exact_solve(fam, mu, resolve_rhs(fam, rhs)?).map(Quantity::Vector),
        Mode::Inverse => exact_inverse(fam, mu).map(Quantity::Matrix),
        Mode::Logdet => exact_logdet(fam, mu).map(Quantity::Scalar),
    }
}

/// `A(mu)^{-1} b` by a direct factorization.
pub fn exact_solve(fam: &AffineFamily, mu: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != fam.order() {
        return Err(Error::DimensionMismatch {
            expected: fam.order(),
            got: rhs.len(),
        });
    }
    factorize(&fam.assemble(mu)?, fam.spd_hint())?.solve(rhs)
}

pub fn exact_inverse(fam: &AffineFamily, mu: &[f64]) -> Result<DMatrix<f64>> {
    if fam.order() > INVERSE_DENSE_LIMIT {
        return Err(Error::invalid(format!(
            "dense inverse limited to order {INVERSE_DENSE_LIMIT}, got {}",
            fam.order()
        )));
    }
    factorize(&fam.assemble(mu)?, fam.spd_hint())?.inverse()
}

/// `log det A(mu) = 2 sum_i log L_ii` from a Cholesky factor.
pub fn exact_logdet(fam: &AffineFamily, mu: &[f64]) -> Result<f64> {
    Ok(SkylineCholesky::factor(&fam.assemble(mu)?)?.log_det())
}

fn dense_family_checks(fam: &AffineFamily, limit: usize) -> Result<()> {
    if fam.order() > limit {
        return Err(Error::invalid(format!(
            "dense validator limited to order {limit}, got {}",
            fam.order()
        )));
    }
    Ok(())
}

/// Preconditioner `Psi_0`, initial guess `X_0` and step count of the
/// fixed-point iteration `X_{k+1} = (I - Psi^{-1} A) X_k + Psi^{-1}`.
#[derive(Clone, Debug)]
pub struct RichardsonConfig {
    pub psi: SparseMatrix,
    pub x0: DMatrix<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct RichardsonRun {
    /// `X_0, ..., X_m` from the recurrence.
    pub iterates: Vec<DMatrix<f64>>,
    /// `(I - Psi^{-1} A)^k (X_0 - A^{-1}) + A^{-1}` for `k = 0..=m`.
    pub closed_form: Vec<DMatrix<f64>>,
    /// `||X_k - A^{-1}||_2`.
    pub errors: Vec<f64>,
    /// `||I - Psi^{-1} A||_2`.
    pub rho: f64,
    /// `||X_0 - A^{-1}||_2`.
    pub eps0: f64,
}

pub fn richardson_iterate(fam: &AffineFamily, mu: &[f64], cfg: &RichardsonConfig) -> Result<RichardsonRun> {
    dense_family_checks(fam, INVERSE_DENSE_LIMIT)?;
    let n = fam.order();
    if cfg.psi.n_rows() != n || cfg.psi.n_cols() != n || cfg.x0.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!("Richardson operands must be {n} x {n}")));
    }
    let psi_inv = factorize_dense(&cfg.psi.to_dense())?.inverse()?;
    let a = fam.assemble(mu)?.to_dense();
    let a_inv = factorize_dense(&a)?.inverse()?;
    let e = DMatrix::identity(n, n) - &psi_inv * &a;

    let mut iterates = Vec::with_capacity(cfg.steps + 1);
    iterates.push(cfg.x0.clone());
    for k in 0..cfg.steps {
        let next = &e * &iterates[k] + &psi_inv;
        iterates.push(next);
    }
    let mut closed_form = Vec::with_capacity(cfg.steps + 1);
    let mut ek = &cfg.x0 - &a_inv;
    for _ in 0..=cfg.steps {
        closed_form.push(&ek + &a_inv);
        ek = &e * &ek;
    }
    let errors = iterates
        .iter()
        .map(|x| crate::linalg::spectral_norm(&(x - &a_inv)))
        .collect::<Vec<_>>();
    Ok(RichardsonRun {
        rho: crate::linalg::spectral_norm(&e),
        eps0: errors[0],
        iterates,
        closed_form,
        errors,
    })
}

/// `A(mu)^p` grouped as `sum_{|k| = p} g(k, mu) T_{k,p}`.
#[derive(Clone, Debug)]
pub struct PowerExpansion {
    pub total: DMatrix<f64>,
    /// `T_{k,p}` for every `k` of weight `p`, in graded order.
    pub terms: Vec<(MultiIndex, DMatrix<f64>)>,
}

/// Expands `A(mu)^p` over all `d^p` ordered products of terms.
pub fn brute_power_expand(fam: &AffineFamily, mu: &[f64], p: usize) -> Result<PowerExpansion> {
    dense_family_checks(fam, BRUTE_DENSE_LIMIT)?;
    let d = fam.d();
    let products = (d as u64).checked_pow(p as u32).filter(|&c| c <= BRUTE_MAX_PRODUCTS);
    if products.is_none() {
        return Err(Error::invalid(format!("{d}^{p} products exceed the oracle limit of {BRUTE_MAX_PRODUCTS}")));
    }
    let n = fam.order();
    let kappa = enumerate_kappa(p as i64, d as i64)?;
    let first = kappa.iter().position(|k| k.weight() == p as u64).expect("weight p is present");
    let mut t: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); kappa.len() - first];
    let dense: Vec<DMatrix<f64>> = fam.terms().iter().map(SparseMatrix::to_dense).collect();

    // Depth-first over sequences (s_1, ..., s_p), sharing prefix products.
    fn walk(
        prefix: &DMatrix<f64>,
        counts: &mut Vec<u32>,
        depth: usize,
        p: usize,
        dense: &[DMatrix<f64>],
        sink: &mut dyn FnMut(&[u32], &DMatrix<f64>),
    ) {
        if depth == p {
            sink(counts, prefix);
            return;
        }
        for (l, a) in dense.iter().enumerate() {
            counts[l] += 1;
            walk(&(prefix * a), counts, depth + 1, p, dense, sink);
            counts[l] -= 1;
        }
    }
    let mut counts = vec![0u32; d];
    walk(&DMatrix::identity(n, n), &mut counts, 0, p, &dense, &mut |c, prod| {
        let pos = kappa.position(&MultiIndex::new(c.to_vec())).expect("count vector has weight p");
        t[pos - first] += prod;
    });

    let alpha = fam.eval_coeffs(mu)?;
    let mut total = DMatrix::<f64>::zeros(n, n);
    let mut terms = Vec::with_capacity(t.len());
    for (i, tk) in t.into_iter().enumerate() {
        let k = kappa.items()[first + i].clone();
        let g = crate::family::g_eval(&alpha, &k)?;
        total.zip_apply(&tk, |o, v| *o += g * v);
        terms.push((k, tk));
    }
    Ok(PowerExpansion { total, terms })
}

/// `sum_l lambda_l(mu) A(mu_l)^p`, the interpolated matrix power.
pub fn power_interp_check(model: &EimModel, fam: &AffineFamily, mu: &[f64], p: usize) -> Result<DMatrix<f64>> {
    check_compatible(model, fam)?;
    dense_family_checks(fam, INVERSE_DENSE_LIMIT)?;
    if p as u64 > model.m() as u64 {
        return Err(Error::invalid(format!("power {p} exceeds the model's m = {}", model.m())));
    }
    let lam = model.lambda(mu)?;
    let n = fam.order();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (l, mu_l) in lam.iter().zip(model.selected_mu()) {
        let a = fam.assemble(mu_l)?.to_dense();
        out.zip_apply(&dense_power(&a, p), |o, v| *o += l * v);
    }
    Ok(out)
}

/// Spectral bounds and truncation order of the log-det trace series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogDetSeriesConfig {
    pub rho_max: f64,
    pub rho_min: f64,
    pub steps: usize,
}

impl LogDetSeriesConfig {
    pub fn new(rho_min: f64, rho_max: f64, steps: usize) -> Result<LogDetSeriesConfig> {
        if !(rho_min > 0.0 && rho_min <= rho_max && rho_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < rho_min <= rho_max, got {rho_min} and {rho_max}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("the series needs at least one step"));
        }
        Ok(LogDetSeriesConfig {
            rho_max,
            rho_min,
            steps,
        })
    }

    /// `N (rho_M / rho_0) (1 - rho_0 / rho_M)^m / m`.
    pub fn truncation_bound(&self, order: usize) -> f64 {
        let ratio = self.rho_min / self.rho_max;
        order as f64 / ratio * (1.0 - ratio).powi(self.steps as i32) / self.steps as f64
    }
}

/// `N log rho_M - sum_{k=1}^{m-1} tr((I - A/rho_M)^k) / k` with explicit
/// dense powers.
pub fn logdet_series(fam: &AffineFamily, mu: &[f64], cfg: &LogDetSeriesConfig) -> Result<f64> {
    dense_family_checks(fam, INVERSE_DENSE_LIMIT)?;
    let a = fam.assemble(mu)?.to_dense();
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    for &r in eig.eigenvalues.iter() {
        if !(r > 0.0) {
            return Err(Error::NotSpd(format!("eigenvalue {r} at {mu:?}")));
        }
        if (1.0 - r / cfg.rho_max).abs() >= 1.0 {
            return Err(Error::Numerical(format!(
                "rho_M = {} does not dominate the eigenvalue {r} at {mu:?}",
                cfg.rho_max
            )));
        }
    }
    let e = DMatrix::identity(n, n) - a / cfg.rho_max;
    let mut ek = e.clone();
    let mut acc = 0.0;
    for k in 1..cfg.steps {
        acc += ek.trace() / k as f64;
        ek = &ek * &e;
    }
    Ok(n as f64 * cfg.rho_max.ln() - acc)
}

/// Bounds for the log-det series on the whole box: `rho_max` is 1.01 times
/// a Gershgorin bound using coefficient enclosures (valid for every `mu` in
/// the box); `rho_min` is the smallest eigenvalue over `points`.
pub fn logdet_rho_bounds(fam: &AffineFamily, points: &[Vec<f64>]) -> Result<(f64, f64)> {
    dense_family_checks(fam, INVERSE_DENSE_LIMIT)?;
    let ranges = fam.coeff_ranges()?;
    let n = fam.order();
    // Entrywise enclosure of A(mu) = sum_l alpha_l A_l over the box.
    let mut lo = DMatrix::<f64>::zeros(n, n);
    let mut hi = DMatrix::<f64>::zeros(n, n);
    for (term, &(a_lo, a_hi)) in fam.terms().iter().zip(&ranges) {
        for (i, j, v) in term.triplets() {
            let (x, y) = (a_lo * v, a_hi * v);
            lo[(i, j)] += x.min(y);
            hi[(i, j)] += x.max(y);
        }
    }
    let mut gersh = f64::NEG_INFINITY;
    for i in 0..n {
        let mut row = hi[(i, i)];
        for j in 0..n {
            if j != i {
                row += lo[(i, j)].abs().max(hi[(i, j)].abs());
            }
        }
        gersh = gersh.max(row);
    }
    let mut rho_min = f64::INFINITY;
    for mu in points {
        let a = fam.assemble(mu)?.to_dense();
        let (l, _) = crate::linalg::symmetric_extreme_eigenvalues(&a);
        rho_min = rho_min.min(l);
    }
    if !(rho_min > 0.0) {
        return Err(Error::NotSpd(format!("smallest sampled eigenvalue is {rho_min}")));
    }
    Ok((rho_min, 1.01 * gersh))
}

/// Path of the inverse sidecar that [`Surrogate::save`] writes for `path`.
pub fn inverse_sidecar_path(path: &Path) -> Result<PathBuf> {
    Ok(path.with_file_name(sidecar_name(path)?))
}
