//! Self-checks of every module's invariants, runnable from the CLI.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_convergence, BenchConfig, Method};
use crate::baselines::{frob_build, frob_lambda, pod_build, pod_solve};
use crate::eim::{eim_offline, EimOptions};
use crate::error::{Error, Result};
use crate::family::{gen_problem, parse_coeff_expr, AffineFamily, ParameterBox, ProblemKind, SparseMatrix};
use crate::linalg::rel_frobenius;
use crate::multiindex::{count_kappa, count_weight_exact, enumerate_kappa, MultiIndex};
use crate::sampling::SampleSet;
use crate::surrogate::{
    brute_power_expand, build_surrogate, exact_quantity, exact_solve, logdet_rho_bounds, logdet_series,
    power_interp_check, richardson_iterate, LogDetSeriesConfig, Mode, Quantity, RichardsonConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationLevel {
    Fast,
    Full,
}

impl FromStr for ValidationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(ValidationLevel::Fast),
            "full" => Ok(ValidationLevel::Full),
            _ => Err(Error::invalid(format!("unknown validation level `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<26} {:>8.2}s  {}", self.name, self.seconds, self.detail)
    }
}

type Check = fn(ValidationLevel) -> Result<String>;

/// Runs the checks for `level`; a check that errors counts as failed.
pub fn validate_suite(level: ValidationLevel) -> Vec<CheckOutcome> {
    let mut checks: Vec<(&'static str, Check)> = vec![
        ("multiindex_counting", check_counting),
        ("eim_hand_trace", check_hand_trace),
        ("interpolation_property", check_interpolation),
        ("partition_of_unity", check_partition_of_unity),
        ("power_exactness", check_power_exactness),
        ("richardson_bound", check_richardson),
        ("logdet_series_bound", check_logdet_series),
        ("selected_point_exactness", check_selected_points),
        ("baselines", check_baselines),
    ];
    if level == ValidationLevel::Full {
        checks.push(("convergence_shape", check_convergence));
    }
    checks
        .into_iter()
        .map(|(name, check)| {
            let t = Instant::now();
            let (passed, detail) = match check(level) {
                Ok(d) => (true, d),
                Err(e) => (false, e.to_string()),
            };
            CheckOutcome {
                name,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Numerical(msg()))
    }
}

fn check_counting(_: ValidationLevel) -> Result<String> {
    for m in 0..=6 {
        for d in 1..=6 {
            let n = enumerate_kappa(m, d)?.len() as u64;
            let by_weight: u64 = (0..=m).map(|p| count_weight_exact(p, d)).sum::<Result<u64>>()?;
            let q = count_kappa(m, d)?;
            ensure(n == q && q == by_weight, || format!("Q_{{{m},{d}}}: {n} vs {q} vs {by_weight}"))?;
        }
    }
    for (m, d, q) in [(1, 10, 11), (3, 10, 286), (10, 2, 66), (3, 14, 680)] {
        ensure(count_kappa(m, d)? == q, || format!("Q_{{{m},{d}}} != {q}"))?;
    }
    Ok("Q_{m,d} for m <= 6, d <= 6 and four anchors".into())
}

fn scalar_family() -> Result<AffineFamily> {
    AffineFamily::new(
        vec![SparseMatrix::identity(1)],
        vec![parse_coeff_expr("mu1")?],
        ParameterBox::cube(1, 1.0, 3.0)?,
        true,
    )
}

fn check_hand_trace(_: ValidationLevel) -> Result<String> {
    let fam = scalar_family()?;
    let sample = SampleSet::explicit(vec![vec![1.0], vec![2.0], vec![3.0]], fam.param_box())?;
    let model = eim_offline(&fam, 1, &sample, &EimOptions::default())?;
    let ok = model.selected_mu() == [vec![3.0], vec![1.0]]
        && model.selected_k() == [MultiIndex::new(vec![1]), MultiIndex::new(vec![0])];
    ensure(ok, || format!("selected {:?} / {:?}", model.selected_mu(), model.selected_k()))?;
    Ok("(3, (1)) then (1, (0))".into())
}

fn random_mu(fam: &AffineFamily, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| fam.param_box().sample_uniform(&mut rng)).collect()
}

fn check_interpolation(_: ValidationLevel) -> Result<String> {
    let fam = gen_problem(ProblemKind::Laplace2dThermal, 4, 0)?;
    let sample = SampleSet::lhs(fam.param_box(), 2000, 0)?;
    let model = eim_offline(&fam, 3, &sample, &EimOptions::default())?;
    let mut worst = 0.0f64;
    for mu in random_mu(&fam, 200, 1) {
        let alpha = fam.eval_coeffs(&mu)?;
        for k in model.selected_k() {
            let g = crate::family::g_eval(&alpha, k)?;
            let err = (model.interpolate(&mu, k)? - g).abs() / g.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    ensure(worst <= 1e-10, || format!("worst scaled error {worst:e}"))?;
    Ok(format!("N = {}, worst scaled error {worst:.1e}", model.n()))
}

fn check_partition_of_unity(_: ValidationLevel) -> Result<String> {
    let fam = gen_problem(ProblemKind::LogdetThermal, 4, 0)?;
    let sample = SampleSet::lhs(fam.param_box(), 2000, 0)?;
    let opts = EimOptions {
        force_k0: true,
        ..EimOptions::default()
    };
    let model = eim_offline(&fam, 3, &sample, &opts)?;
    let mut worst = 0.0f64;
    for mu in random_mu(&fam, 500, 2) {
        worst = worst.max((model.lambda(&mu)?.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("|sum lambda - 1| = {worst:e}"))?;
    Ok(format!("max |sum lambda - 1| = {worst:.1e}"))
}

/// `d = 2`, order-4 family with random symmetric terms on `[1, 2]^2`.
pub(crate) fn random_small_family(seed: u64) -> Result<AffineFamily> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut term = || {
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        SparseMatrix::from_dense(&((&m + m.transpose()) * 0.5), 0.0)
    };
    let (a1, a2) = (term()?, term()?);
    AffineFamily::new(
        vec![a1, a2],
        vec![parse_coeff_expr("mu1")?, parse_coeff_expr("mu2")?],
        ParameterBox::cube(2, 1.0, 2.0)?,
        false,
    )
}

fn check_power_exactness(level: ValidationLevel) -> Result<String> {
    let count = if level == ValidationLevel::Full { 20 } else { 3 };
    let mut worst = 0.0f64;
    for seed in 0..count {
        let fam = random_small_family(seed)?;
        let sample = SampleSet::lhs(fam.param_box(), 200, seed)?;
        let model = eim_offline(&fam, 3, &sample, &EimOptions::default())?;
        ensure(model.n() == 10, || format!("family {seed}: N = {}", model.n()))?;
        for mu in random_mu(&fam, 3, seed + 100) {
            for p in 0..=3 {
                let brute = brute_power_expand(&fam, &mu, p)?.total;
                worst = worst.max(rel_frobenius(&brute, &power_interp_check(&model, &fam, &mu, p)?));
            }
        }
    }
    ensure(worst <= 1e-8, || format!("relative Frobenius error {worst:e}"))?;
    Ok(format!("{count} families, worst {worst:.1e}"))
}

fn check_richardson(level: ValidationLevel) -> Result<String> {
    let count = if level == ValidationLevel::Full { 100 } else { 20 };
    let fam = gen_problem(ProblemKind::Laplace2dThermal, 5, 0)?;
    let cfg = RichardsonConfig {
        psi: fam.assemble(&fam.param_box().midpoint())?,
        x0: DMatrix::zeros(fam.order(), fam.order()),
        steps: 30,
    };
    let runs = random_mu(&fam, count, 3)
        .iter()
        .map(|mu| richardson_iterate(&fam, mu, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let rho = runs.iter().map(|r| r.rho).fold(0.0, f64::max);
    let eps0 = runs.iter().map(|r| r.eps0).fold(0.0, f64::max);
    for run in &runs {
        for (m, err) in run.errors.iter().enumerate().skip(1) {
            let bound = eps0 * rho.powi(m as i32);
            ensure(*err <= bound * (1.0 + 1e-8) + 1e-13 * eps0, || {
                format!("||X_{m} - A^-1|| = {err:e} > {bound:e}")
            })?;
        }
        for (x, c) in run.iterates.iter().zip(&run.closed_form) {
            let diff = (x - c).amax() / c.amax().max(1.0);
            ensure(diff <= 1e-10, || format!("closed form differs by {diff:e}"))?;
        }
    }
    Ok(format!("rho = {rho:.3}, eps0 = {eps0:.3e}, {count} parameters"))
}

fn check_logdet_series(level: ValidationLevel) -> Result<String> {
    let count = if level == ValidationLevel::Full { 50 } else { 10 };
    let fam = gen_problem(ProblemKind::LogdetThermal, 5, 0)?;
    let points = random_mu(&fam, count, 4);
    let (rho_min, rho_max) = logdet_rho_bounds(&fam, &points)?;
    for steps in [5, 10, 20, 40] {
        let cfg = LogDetSeriesConfig::new(rho_min, rho_max, steps)?;
        let bound = cfg.truncation_bound(fam.order());
        for mu in &points {
            let exact = crate::surrogate::exact_logdet(&fam, mu)?;
            let err = (logdet_series(&fam, mu, &cfg)? - exact).abs();
            ensure(err <= bound, || format!("m = {steps}: error {err:e} > bound {bound:e}"))?;
        }
    }
    Ok(format!("rho_0 = {rho_min:.3e}, rho_M = {rho_max:.3e}"))
}

fn check_selected_points(_: ValidationLevel) -> Result<String> {
    let fam = gen_problem(ProblemKind::Laplace2dThermal, 4, 0)?;
    let sample = SampleSet::lhs(fam.param_box(), 500, 5)?;
    let opts = EimOptions {
        force_k0: true,
        ..EimOptions::default()
    };
    let model = eim_offline(&fam, 2, &sample, &opts)?;
    let mut worst = 0.0f64;
    for mode in [Mode::Solve, Mode::Inverse, Mode::Logdet] {
        let s = build_surrogate(&model, &fam, mode, None)?;
        for mu in model.selected_mu() {
            let exact = exact_quantity(&fam, mode, mu, None)?;
            let (l2, _) = super::rel_errors(&exact, &s.eval(mu)?)?;
            worst = worst.max(l2);
        }
    }
    ensure(worst <= 1e-10, || format!("worst relative error {worst:e}"))?;
    Ok(format!("N = {}, worst {worst:.1e}", model.n()))
}

fn check_baselines(_: ValidationLevel) -> Result<String> {
    let fam = gen_problem(ProblemKind::Laplace2dThermal, 3, 0)?;
    let b = fam.rhs().expect("generated families carry a load").to_vec();
    let sel = vec![vec![1.5, 2.0], vec![3.0, 1.2], vec![2.2, 3.7]];
    let pre = frob_build(&fam, &sel)?;
    for (i, mu) in sel.iter().enumerate() {
        let lam = frob_lambda(&pre, &fam, mu)?;
        let off = lam
            .iter()
            .enumerate()
            .map(|(j, v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        let obj = pre.objective(&fam.eval_coeffs(mu)?, &lam).abs();
        ensure(off <= 1e-8 && obj <= 1e-8, || format!("frobenius at mu_{i}: {off:e}, objective {obj:e}"))?;
    }
    // Snapshots spanning the whole space: POD-Galerkin is exact.
    let snaps = SampleSet::lhs(fam.param_box(), 2 * fam.order(), 6)?
        .points()
        .iter()
        .map(|mu| exact_solve(&fam, mu, &b))
        .collect::<Result<Vec<_>>>()?;
    let basis = pod_build(&snaps, 0.0)?;
    let mut worst = 0.0f64;
    for mu in random_mu(&fam, 10, 7) {
        let exact = Quantity::Vector(exact_solve(&fam, &mu, &b)?);
        let approx = Quantity::Vector(pod_solve(&fam, &basis, &b, &mu)?);
        worst = worst.max(super::rel_errors(&exact, &approx)?.0);
    }
    ensure(worst <= 1e-9, || format!("POD error {worst:e} with {} modes", basis.len()))?;
    Ok(format!("POD with {} modes, worst {worst:.1e}", basis.len()))
}

fn check_convergence(_: ValidationLevel) -> Result<String> {
    let cfg: BenchConfig = serde_json::from_str(
        r#"{"problem":{"kind":"laplace2d_thermal","n":20},"methods":["proposed"],"quantity":"solve",
            "budgets":[{"m":1},{"m":2},{"m":3},{"m":4},{"m":5},{"m":6},{"m":7},{"m":8},{"m":9},{"m":10}]}"#,
    )
    .expect("built-in config parses");
    let report = run_convergence(&cfg)?;
    let errs: Vec<f64> = report.method_rows(Method::Proposed).iter().map(|r| r.mean_rel_l2).collect();
    ensure(errs.windows(2).all(|w| w[1] < w[0]), || format!("not decreasing: {errs:?}"))?;
    let drop = errs[0] / errs[errs.len() - 1];
    ensure(drop >= 100.0, || format!("drop {drop:.1} < 100"))?;
    Ok(format!("drop {drop:.2e} over {} budgets", errs.len()))
}
