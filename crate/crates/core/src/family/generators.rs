//! Desk-scale problem generators.
//!
//! Each generator returns a symmetric positive definite family on a regular
//! grid together with a right-hand side:
//!
//! * `laplace2d_thermal`: conduction plus reaction on the unit square,
//!   `A = mu1 K + mu2 M` with a Neumann flux entering through the left edge.
//! * `logdet_thermal`: the same two terms with saturating coefficients
//!   `0.045 (1 - exp(-mu1^2))` and `1 - exp(-mu2)`.
//! * `heat_capacity10`: one backward-Euler step of a 3-D heat equation whose
//!   volumetric heat capacity is `10 + sum_l mu_l f_l(x)`; eleven terms, ten
//!   parameters.
//! * `fiber_block14`: a clamped cube with six stiff vertical fibers in a soft
//!   matrix; each of the seven regions contributes a pair of stiffness terms
//!   scaled by its own two moduli.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{parse_coeff_expr, AffineFamily, CoeffExpr, ParameterBox, SparseMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Laplace2dThermal,
    LogdetThermal,
    HeatCapacity10,
    FiberBlock14,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::Laplace2dThermal,
        ProblemKind::LogdetThermal,
        ProblemKind::HeatCapacity10,
        ProblemKind::FiberBlock14,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Laplace2dThermal => "laplace2d_thermal",
            ProblemKind::LogdetThermal => "logdet_thermal",
            ProblemKind::HeatCapacity10 => "heat_capacity10",
            ProblemKind::FiberBlock14 => "fiber_block14",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unsupported problem kind `{s}`")))
    }
}

/// Builds the family for `kind` at grid resolution `n` (`n >= 2`).
/// The seed only affects `fiber_block14` (fiber placement).
pub fn gen_problem(kind: ProblemKind, n: usize, seed: u64) -> Result<AffineFamily> {
    if n < 2 {
        return Err(Error::invalid(format!("grid resolution must be at least 2, got {n}")));
    }
    match kind {
        ProblemKind::Laplace2dThermal => laplace2d_thermal(n),
        ProblemKind::LogdetThermal => logdet_thermal(n),
        ProblemKind::HeatCapacity10 => heat_capacity10(n, HeatCapacityCoeffs::Linear, 0.1, 0.2),
        ProblemKind::FiberBlock14 => fiber_block14(n, seed, 0.10),
    }
}

fn exprs(srcs: &[String]) -> Result<Vec<CoeffExpr>> {
    srcs.iter().map(|s| parse_coeff_expr(s)).collect()
}

/// Five-point graph Laplacian (natural boundary conditions), lumped mass and
/// left-edge flux load on an `n x n` grid of the unit square.
fn thermal_terms(n: usize) -> Result<(SparseMatrix, SparseMatrix, Vec<f64>)> {
    let h = 1.0 / (n - 1) as f64;
    let idx = |i: usize, j: usize| j * n + i;
    let mut k = Vec::new();
    let mut mass = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let p = idx(i, j);
            let mut deg = 0.0;
            let mut link = |q: usize| {
                k.push((p, q, -1.0));
                deg += 1.0;
            };
            if i > 0 {
                link(idx(i - 1, j));
            }
            if i + 1 < n {
                link(idx(i + 1, j));
            }
            if j > 0 {
                link(idx(i, j - 1));
            }
            if j + 1 < n {
                link(idx(i, j + 1));
            }
            k.push((p, p, deg));
            let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let wy = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            mass[p] = h * h * wx * wy;
            if i == 0 {
                b[p] = h * wy;
            }
        }
    }
    Ok((
        SparseMatrix::from_triplets(n * n, n * n, k)?,
        SparseMatrix::from_diagonal(&mass),
        b,
    ))
}

fn laplace2d_thermal(n: usize) -> Result<AffineFamily> {
    let (k, m, b) = thermal_terms(n)?;
    AffineFamily::new(
        vec![k, m],
        exprs(&["mu1".into(), "mu2".into()])?,
        ParameterBox::cube(2, 1.0, 4.0)?,
        true,
    )?
    .with_rhs(b)
}

fn logdet_thermal(n: usize) -> Result<AffineFamily> {
    let (k, m, b) = thermal_terms(n)?;
    AffineFamily::new(
        vec![k, m],
        exprs(&["0.045*(1-exp(-mu1^2))".into(), "1-exp(-mu2)".into()])?,
        ParameterBox::cube(2, 1.0, 4.0)?,
        true,
    )?
    .with_rhs(b)
}

/// Coefficient pattern of the ten heat-capacity modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatCapacityCoeffs {
    /// `alpha_{l+1} = mu_l`.
    Linear,
    /// `alpha_{l+1} = 1 - exp(-mu_l)`.
    Saturating,
}

/// Ten-parameter heat-capacity family on an `n^3` node grid of `[0, 30]^3`
/// with the box `[lo, hi]^10`.
pub fn heat_capacity10(
    n: usize,
    pattern: HeatCapacityCoeffs,
    lo: f64,
    hi: f64,
) -> Result<AffineFamily> {
    if n < 2 {
        return Err(Error::invalid(format!("grid resolution must be at least 2, got {n}")));
    }
    const LENGTH: f64 = 30.0;
    const CONDUCTIVITY: f64 = 370.0;
    const FLUX: f64 = 1000.0;
    let h = LENGTH / (n + 1) as f64;
    let nn = n * n * n;
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    // x = 0 is the heated (Neumann) face; every other face is held at zero.
    let coord = |i: usize, j: usize, k: usize| (i as f64 * h, (j + 1) as f64 * h, (k + 1) as f64 * h);
    let (xmax, ymax, zmax) = coord(n - 1, n - 1, n - 1);

    let mut stiff = Vec::new();
    let mut mass = vec![0.0; nn];
    let mut rhs = vec![0.0; nn];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = idx(i, j, k);
                let mut diag = 0.0;
                let neighbors = [
                    (i > 0).then(|| idx(i - 1, j, k)),
                    (i + 1 < n).then(|| idx(i + 1, j, k)),
                    (j > 0).then(|| idx(i, j - 1, k)),
                    (j + 1 < n).then(|| idx(i, j + 1, k)),
                    (k > 0).then(|| idx(i, j, k - 1)),
                    (k + 1 < n).then(|| idx(i, j, k + 1)),
                ];
                for (dir, q) in neighbors.iter().enumerate() {
                    match q {
                        Some(q) => {
                            stiff.push((p, *q, -h));
                            diag += h;
                        }
                        // Missing neighbor: Dirichlet ghost, except across x = 0.
                        None if !(dir == 0 && i == 0) => diag += h,
                        None => {}
                    }
                }
                stiff.push((p, p, diag));
                let w = if i == 0 { 0.5 } else { 1.0 };
                mass[p] = h * h * h * w;
                if i == 0 {
                    rhs[p] = FLUX * h * h;
                }
            }
        }
    }
    let stiff = SparseMatrix::from_triplets(nn, nn, stiff)?;
    let modes: [&dyn Fn(f64, f64, f64) -> f64; 10] = [
        &|x, _, _| (0.2 * x).cos(),
        &|_, y, _| (0.25 * y).cos(),
        &|_, _, z| (0.3 * z).cos(),
        &|x, y, _| (0.2 * (x + y)).cos(),
        &|x, _, z| (0.25 * (x + z)).cos(),
        &|_, y, z| (0.3 * (y + z)).cos(),
        &|x, _, _| x / xmax,
        &|_, y, _| y / ymax,
        &|_, _, z| z / zmax,
        &|x, y, z| (0.1 * (x + y + z)).cos(),
    ];
    let mut terms = Vec::with_capacity(11);
    let base: Vec<(usize, usize, f64)> = stiff
        .triplets()
        .map(|(p, q, v)| (p, q, CONDUCTIVITY * v))
        .chain(mass.iter().enumerate().map(|(p, &m)| (p, p, 10.0 / 100.0 * m)))
        .collect();
    terms.push(SparseMatrix::from_triplets(nn, nn, base)?);
    for f in modes {
        let mut diag = vec![0.0; nn];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = idx(i, j, k);
                    let (x, y, z) = coord(i, j, k);
                    diag[p] = mass[p] * f(x, y, z) / 100.0;
                }
            }
        }
        terms.push(SparseMatrix::from_diagonal(&diag));
    }
    let mut coeffs = vec!["1".to_string()];
    for l in 1..=10 {
        coeffs.push(match pattern {
            HeatCapacityCoeffs::Linear => format!("mu{l}"),
            HeatCapacityCoeffs::Saturating => format!("1-exp(-mu{l})"),
        });
    }
    AffineFamily::new(terms, exprs(&coeffs)?, ParameterBox::cube(10, lo, hi)?, true)?.with_rhs(rhs)
}

/// Reference moduli `(eta1, eta2)` of the soft matrix and of the fibers.
pub const MATRIX_MODULI: (f64, f64) = (1.15e6, 7.7e5);
pub const FIBER_MODULI: (f64, f64) = (1.15e9, 7.7e8);

/// Seven-region clamped cube: region 0 is the matrix, regions 1..=6 are
/// vertical fibers. Terms `2k` and `2k+1` (zero based) are the full and the
/// axial (vertical-only) stiffness of region `k`, scaled by `mu_{2k+1}` and
/// `mu_{2k+2}`. The box is centered at the reference moduli with
/// relative width `rel_width`.
pub fn fiber_block14(n: usize, seed: u64, rel_width: f64) -> Result<AffineFamily> {
    if n < 2 {
        return Err(Error::invalid(format!("grid resolution must be at least 2, got {n}")));
    }
    if !(rel_width > 0.0 && rel_width < 1.0) {
        return Err(Error::invalid(format!("relative box width {rel_width} outside (0, 1)")));
    }
    let nn = n * n * n;
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;

    // Region of each vertical column (i, j).
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = (n / 10) as i64;
    let mut region = vec![0usize; n * n];
    for f in 0..6 {
        let (a, b) = (f % 3, f / 3);
        let jitter = |rng: &mut ChaCha8Rng| if n >= 8 { rng.gen_range(-1i64..=1) } else { 0 };
        let ci = ((a + 1) * n) as i64 / 4 + jitter(&mut rng);
        let cj = ((b + 1) * n) as i64 / 3 + jitter(&mut rng);
        for j in 0..n as i64 {
            for i in 0..n as i64 {
                if (i - ci).abs() <= radius && (j - cj).abs() <= radius {
                    region[(j as usize) * n + i as usize] = f + 1;
                }
            }
        }
    }
    let mut full: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 7];
    let mut axial: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 7];
    let edge = |list: &mut Vec<(usize, usize, f64)>, p: usize, q: Option<usize>, w: f64| {
        list.push((p, p, w));
        if let Some(q) = q {
            list.push((q, q, w));
            list.push((p, q, -w));
            list.push((q, p, -w));
        }
    };
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = idx(i, j, k);
                let rp = region[j * n + i];
                // Vertical edge to the node below; the bottom layer is clamped.
                let below = (k > 0).then(|| idx(i, j, k - 1));
                edge(&mut full[rp], p, below, h);
                edge(&mut axial[rp], p, below, 2.0 * h);
                // Horizontal edges belong to a region only when both ends do.
                if i + 1 < n {
                    let rq = region[j * n + i + 1];
                    let reg = if rp == rq { rp } else { 0 };
                    edge(&mut full[reg], p, Some(idx(i + 1, j, k)), h);
                }
                if j + 1 < n {
                    let rq = region[(j + 1) * n + i];
                    let reg = if rp == rq { rp } else { 0 };
                    edge(&mut full[reg], p, Some(idx(i, j + 1, k)), h);
                }
            }
        }
    }
    let mut terms = Vec::with_capacity(14);
    let mut coeffs = Vec::with_capacity(14);
    let mut intervals = Vec::with_capacity(14);
    for r in 0..7 {
        let (e1, e2) = if r == 0 { MATRIX_MODULI } else { FIBER_MODULI };
        terms.push(SparseMatrix::from_triplets(nn, nn, full[r].drain(..))?);
        terms.push(SparseMatrix::from_triplets(nn, nn, axial[r].drain(..))?);
        coeffs.push(format!("mu{}", 2 * r + 1));
        coeffs.push(format!("mu{}", 2 * r + 2));
        for e in [e1, e2] {
            intervals.push((e * (1.0 - rel_width / 2.0), e * (1.0 + rel_width / 2.0)));
        }
    }
    let mut rhs = vec![0.0; nn];
    for j in 0..n {
        for i in 0..n {
            rhs[idx(i, j, n - 1)] = -100.0 * h * h;
        }
    }
    AffineFamily::new(terms, exprs(&coeffs)?, ParameterBox::new(intervals)?, true)?.with_rhs(rhs)
}

/// Reference moduli vector `(eta_{1,0}, eta_{2,0}, ..., eta_{1,6}, eta_{2,6})`.
pub fn fiber_reference_parameters() -> Vec<f64> {
    let mut out = vec![MATRIX_MODULI.0, MATRIX_MODULI.1];
    for _ in 0..6 {
        out.extend([FIBER_MODULI.0, FIBER_MODULI.1]);
    }
    out
}
