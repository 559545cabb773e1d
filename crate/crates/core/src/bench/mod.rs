//! Convergence experiments: every method is built with a given number of
//! high-fidelity evaluations and compared with exact oracles on a shared set
//! of random test parameters.

mod validate;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{frob_build, frob_lambda, pod_build, ridge_fit_loo, ridge_predict, PodSolver, DEFAULT_ENERGY_TOL};
use crate::eim::{eim_offline, EimModel, EimOptions, DEFAULT_TOL_REL};
use crate::error::{Error, Result};
use crate::family::{gen_problem, load_family, AffineFamily, ProblemKind};
use crate::io::fmt17;
use crate::multiindex::count_kappa;
use crate::sampling::SampleSet;
use crate::surrogate::{build_surrogate, exact_quantity, Mode, Payload, Quantity, Surrogate};

pub use validate::{validate_suite, CheckOutcome, ValidationLevel};

pub const CSV_HEADER: &str = "method,Q,quantity,mean_rel_l2,mean_rel_linf,max_rel_l2,wall_seconds";

/// Training-sample size used when the config does not give one.
pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;

/// Cap on `|P_sample| * Q` for the default sample size.
const DEFAULT_SAMPLE_ENTRIES: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Frobenius,
    Pod,
    Ridge,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Frobenius => "frobenius",
            Method::Pod => "pod",
            Method::Ridge => "ridge",
        }
    }

    fn supports(self, q: Mode) -> bool {
        match self {
            Method::Proposed => true,
            Method::Frobenius => q != Mode::Logdet,
            Method::Pod => q == Mode::Solve,
            Method::Ridge => q != Mode::Inverse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ProblemSpec {
    Generated {
        kind: String,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        family: PathBuf,
    },
}

/// A budget is either a maximal weight `m` (run to `Q_{m,d}`) or an explicit
/// number of snapshots `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Budget {
    M { m: u32 },
    Q { q: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SampleSpec {
    Lhs {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
    Grid {
        per_dim: usize,
    },
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec::Lhs { n: None, seed: 0 }
    }
}

fn default_n_test() -> usize {
    100
}

fn default_doe_seed() -> u64 {
    7
}

fn default_energy_tol() -> f64 {
    DEFAULT_ENERGY_TOL
}

fn default_tol() -> f64 {
    DEFAULT_TOL_REL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub problem: ProblemSpec,
    pub methods: Vec<Method>,
    pub quantity: Mode,
    pub budgets: Vec<Budget>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub test_seed: u64,
    #[serde(default)]
    pub sample: SampleSpec,
    /// Defaults to `true` for log-det runs and `false` otherwise.
    #[serde(default)]
    pub force_k0: Option<bool>,
    #[serde(default = "default_tol")]
    pub tol_rel: f64,
    /// Seed of the maximin LHS design used by the regression baseline.
    #[serde(default = "default_doe_seed")]
    pub doe_seed: u64,
    #[serde(default = "default_energy_tol")]
    pub energy_tol: f64,
    /// Record wall-clock seconds per row. Off by default so that reports are
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

impl BenchConfig {
    pub fn from_file(path: &Path) -> Result<BenchConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: BenchConfig =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if let ProblemSpec::File { family } = &mut cfg.problem {
            if family.is_relative() {
                *family = path.parent().unwrap_or_else(|| Path::new(".")).join(&*family);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::invalid("at least one budget is required"));
        }
        if self.n_test == 0 {
            return Err(Error::invalid("n_test must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        for m in &self.methods {
            if !m.supports(self.quantity) {
                return Err(Error::invalid(format!(
                    "method `{}` does not produce the quantity `{}`",
                    m.name(),
                    self.quantity
                )));
            }
        }
        for b in &self.budgets {
            match *b {
                Budget::M { m: 0 } => return Err(Error::invalid("budget m must be at least 1")),
                Budget::Q { q: 0 } => return Err(Error::invalid("budget q must be at least 1")),
                _ => {}
            }
        }
        Ok(())
    }

    fn force_k0(&self) -> bool {
        self.force_k0.unwrap_or(self.quantity == Mode::Logdet)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn family(&self) -> Result<AffineFamily> {
        match &self.problem {
            ProblemSpec::Generated { kind, n, seed } => gen_problem(kind.parse::<ProblemKind>()?, *n, *seed),
            ProblemSpec::File { family } => load_family(family),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    /// Number of high-fidelity evaluations consumed.
    pub q: usize,
    pub quantity: Mode,
    pub mean_rel_l2: f64,
    pub mean_rel_linf: f64,
    pub max_rel_l2: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchMeta {
    pub version: String,
    pub config_hash: String,
    pub test_seed: u64,
    pub doe_seed: u64,
    pub sample_kind: String,
    pub sample_size: usize,
    pub sample_seed: u64,
    /// Where the intrusive baselines take their parameters from.
    pub baseline_points: String,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub meta: BenchMeta,
}

impl BenchReport {
    /// Rows of one method in increasing `Q`.
    pub fn method_rows(&self, method: Method) -> Vec<&BenchRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }
}

/// `(||e - a||_2 / ||e||_2, ||e - a||_inf / ||e||_inf)`, Frobenius for
/// matrices and absolute value for scalars.
pub fn rel_errors(exact: &Quantity, approx: &Quantity) -> Result<(f64, f64)> {
    let (e, a) = match (exact, approx) {
        (Quantity::Vector(e), Quantity::Vector(a)) if e.len() == a.len() => (exact.to_vec(), approx.to_vec()),
        (Quantity::Matrix(e), Quantity::Matrix(a)) if e.shape() == a.shape() => (exact.to_vec(), approx.to_vec()),
        (Quantity::Scalar(_), Quantity::Scalar(_)) => (exact.to_vec(), approx.to_vec()),
        _ => return Err(Error::ShapeMismatch("exact and approximate quantities differ in shape".into())),
    };
    let norm2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let norminf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    let e2 = norm2(&mut e.iter().copied());
    if !(e2 > 0.0) {
        return Err(Error::Numerical("relative error against a zero reference".into()));
    }
    let diff = || e.iter().zip(&a).map(|(x, y)| x - y);
    let d2 = norm2(&mut diff());
    let dinf = norminf(&mut diff());
    let einf = norminf(&mut e.iter().copied());
    Ok((d2 / e2, dinf / einf))
}

/// Uniform test parameters with `seed`, redrawn if they collide with any
/// point of `exclude`.
pub fn test_points(fam: &AffineFamily, n: usize, seed: u64, exclude: &[&[Vec<f64>]]) -> Vec<Vec<f64>> {
    let mut taken: HashSet<Vec<u64>> = exclude
        .iter()
        .flat_map(|set| set.iter())
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = fam.param_box().sample_uniform(&mut rng);
        if taken.insert(p.iter().map(|x| x.to_bits()).collect()) {
            out.push(p);
        }
    }
    out
}

/// Training sample size when none is given: 10^5 points, reduced so that
/// the `S x Q` residual table stays near 2e7 entries, but never below 1000.
pub fn default_sample_size(q: usize) -> usize {
    DEFAULT_SAMPLE_SIZE.min((DEFAULT_SAMPLE_ENTRIES / q.max(1)).max(1_000))
}

fn training_sample(cfg: &BenchConfig, fam: &AffineFamily, q_max: usize) -> Result<SampleSet> {
    match cfg.sample {
        SampleSpec::Grid { per_dim } => SampleSet::grid(fam.param_box(), per_dim),
        SampleSpec::Lhs { n, seed } => {
            let n = n.unwrap_or_else(|| default_sample_size(q_max));
            SampleSet::lhs(fam.param_box(), n, seed)
        }
    }
}

/// `(m, n_max)` for a budget.
fn resolve_budget(b: Budget, d: usize) -> Result<(u32, Option<usize>)> {
    match b {
        Budget::M { m } => Ok((m, None)),
        Budget::Q { q } => {
            let mut m = 1u32;
            while (count_kappa(m as i64, d as i64)? as usize) < q {
                m += 1;
            }
            Ok((m, Some(q)))
        }
    }
}

struct Errors {
    mean_l2: f64,
    mean_linf: f64,
    max_l2: f64,
}

fn aggregate(errs: Vec<Result<(f64, f64)>>) -> Result<Errors> {
    let n = errs.len() as f64;
    let mut out = Errors {
        mean_l2: 0.0,
        mean_linf: 0.0,
        max_l2: 0.0,
    };
    for e in errs {
        let (l2, linf) = e?;
        out.mean_l2 += l2;
        out.mean_linf += linf;
        out.max_l2 = out.max_l2.max(l2);
    }
    out.mean_l2 /= n;
    out.mean_linf /= n;
    Ok(out)
}

struct Ctx<'a> {
    cfg: &'a BenchConfig,
    fam: &'a AffineFamily,
    rhs: Option<&'a [f64]>,
    tests: &'a [Vec<f64>],
    exact: &'a [Quantity],
}

impl Ctx<'_> {
    /// Evaluates `approx` at every test point, in parallel, reducing in
    /// index order.
    fn score(&self, approx: impl Fn(&[f64]) -> Result<Quantity> + Sync) -> Result<Errors> {
        let errs: Vec<Result<(f64, f64)>> = self
            .tests
            .par_iter()
            .zip(self.exact.par_iter())
            .map(|(mu, ex)| rel_errors(ex, &approx(mu)?))
            .collect();
        aggregate(errs)
    }

    fn run_method(&self, method: Method, model: &EimModel, proposed: &Surrogate) -> Result<(usize, Errors)> {
        let n = model.n();
        match method {
            Method::Proposed => Ok((n, self.score(|mu| proposed.eval(mu))?)),
            Method::Pod => {
                let Payload::Solve(snaps) = proposed.payload() else {
                    unreachable!("POD runs on solve snapshots")
                };
                let basis = pod_build(snaps, self.cfg.energy_tol)?;
                let rhs = self.rhs.ok_or_else(|| Error::invalid("solve mode needs a right-hand side"))?;
                let solver = PodSolver::new(self.fam, basis, rhs)?;
                Ok((n, self.score(|mu| solver.solve(self.fam, mu).map(Quantity::Vector))?))
            }
            Method::Frobenius => {
                let pre = frob_build(self.fam, model.selected_mu())?;
                let errs = self.score(|mu| {
                    let lam = frob_lambda(&pre, self.fam, mu)?;
                    Ok(match self.cfg.quantity {
                        // Same snapshot combination as the proposed method.
                        Mode::Solve => proposed.combine(&lam),
                        _ => {
                            let order = self.fam.order();
                            let mut p = DMatrix::<f64>::zeros(order, order);
                            for (l, y) in lam.iter().zip(pre.inverses()) {
                                p.zip_apply(y, |o, v| *o += l * v);
                            }
                            Quantity::Matrix(p)
                        }
                    })
                })?;
                Ok((n, errs))
            }
            Method::Ridge => {
                if n < 2 {
                    return Err(Error::invalid("ridge regression needs at least 2 training points"));
                }
                let doe = SampleSet::lhs(self.fam.param_box(), n, self.cfg.doe_seed)?;
                let train: Vec<Quantity> = doe
                    .points()
                    .par_iter()
                    .map(|mu| exact_quantity(self.fam, self.cfg.quantity, mu, self.rhs))
                    .collect::<Vec<Result<_>>>()
                    .into_iter()
                    .collect::<Result<_>>()?;
                let errs = match self.cfg.quantity {
                    Mode::Solve => {
                        let snaps: Vec<Vec<f64>> = train.iter().map(Quantity::to_vec).collect();
                        let basis = pod_build(&snaps, self.cfg.energy_tol)?;
                        let coeffs: Vec<Vec<f64>> = snaps.iter().map(|u| basis.project(u)).collect();
                        let y = DMatrix::from_fn(n, basis.len(), |i, c| coeffs[i][c]);
                        let model = ridge_fit_loo(doe.points(), self.fam.param_box(), &y)?;
                        self.score(|mu| Ok(Quantity::Vector(basis.lift(&ridge_predict(&model, mu)?))))?
                    }
                    _ => {
                        let y = DMatrix::from_fn(n, 1, |i, _| train[i].to_vec()[0]);
                        let model = ridge_fit_loo(doe.points(), self.fam.param_box(), &y)?;
                        self.score(|mu| Ok(Quantity::Scalar(ridge_predict(&model, mu)?[0])))?
                    }
                };
                Ok((n, errs))
            }
        }
    }
}

/// Runs every method at every budget. Method failures produce rows with
/// `nan` errors and an entry in `meta.failures`.
pub fn run_convergence(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let fam = cfg.family()?;
    let rhs = match cfg.quantity {
        Mode::Solve => Some(
            fam.rhs()
                .ok_or_else(|| Error::invalid("solve benchmarks need a family with a right-hand side"))?,
        ),
        _ => None,
    };
    let budgets = cfg
        .budgets
        .iter()
        .map(|&b| resolve_budget(b, fam.d()))
        .collect::<Result<Vec<_>>>()?;
    let q_max = budgets
        .iter()
        .map(|&(m, _)| count_kappa(m as i64, fam.d() as i64).map(|q| q as usize))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    let sample = training_sample(cfg, &fam, q_max)?;
    let tests = test_points(&fam, cfg.n_test, cfg.test_seed, &[sample.points()]);
    let exact: Vec<Quantity> = tests
        .par_iter()
        .map(|mu| exact_quantity(&fam, cfg.quantity, mu, rhs))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let ctx = Ctx {
        cfg,
        fam: &fam,
        rhs,
        tests: &tests,
        exact: &exact,
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    for (m, n_max) in budgets {
        let opts = EimOptions {
            tol_rel: cfg.tol_rel,
            n_max,
            force_k0: cfg.force_k0(),
        };
        let t0 = Instant::now();
        let built = eim_offline(&fam, m as i64, &sample, &opts)
            .and_then(|model| build_surrogate(&model, &fam, cfg.quantity, rhs).map(|s| (model, s)));
        let offline_seconds = t0.elapsed().as_secs_f64();
        let (model, proposed) = match built {
            Ok(x) => x,
            Err(e) => {
                let q = n_max.unwrap_or(count_kappa(m as i64, fam.d() as i64)? as usize);
                for &method in &methods {
                    failures.push(format!("{} at m = {m}: {e}", method.name()));
                    rows.push(nan_row(method, q, cfg.quantity));
                }
                continue;
            }
        };
        for &method in &methods {
            let t = Instant::now();
            let outcome = ctx.run_method(method, &model, &proposed);
            let mut seconds = t.elapsed().as_secs_f64();
            if method == Method::Proposed {
                seconds += offline_seconds;
            }
            match outcome {
                Ok((q, e)) => rows.push(BenchRow {
                    method,
                    q,
                    quantity: cfg.quantity,
                    mean_rel_l2: e.mean_l2,
                    mean_rel_linf: e.mean_linf,
                    max_rel_l2: e.max_l2,
                    wall_seconds: if cfg.timing { seconds } else { 0.0 },
                }),
                Err(e) => {
                    failures.push(format!("{} at N = {}: {e}", method.name(), model.n()));
                    rows.push(nan_row(method, model.n(), cfg.quantity));
                }
            }
        }
    }
    rows.sort_by(|a, b| (a.method.name(), a.q).cmp(&(b.method.name(), b.q)));

    let (sample_seed, sample_kind) = (sample.seed(), sample.kind().name().to_string());
    Ok(BenchReport {
        rows,
        meta: BenchMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            test_seed: cfg.test_seed,
            doe_seed: cfg.doe_seed,
            sample_kind,
            sample_size: sample.len(),
            sample_seed,
            baseline_points: "eim-selected (pod, frobenius); lhs-maximin (ridge)".into(),
            failures,
        },
    })
}

fn nan_row(method: Method, q: usize, quantity: Mode) -> BenchRow {
    BenchRow {
        method,
        q,
        quantity,
        mean_rel_l2: f64::NAN,
        mean_rel_linf: f64::NAN,
        max_rel_l2: f64::NAN,
        wall_seconds: 0.0,
    }
}

/// CSV text of a report (17 significant digits).
pub fn report_csv(report: &BenchReport) -> String {
    let mut s = String::with_capacity(64 * (report.rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method.name(),
            r.q,
            r.quantity,
            fmt17(r.mean_rel_l2),
            fmt17(r.mean_rel_linf),
            fmt17(r.max_rel_l2),
            fmt17(r.wall_seconds)
        );
    }
    s
}

pub fn export_csv(report: &BenchReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::invalid("refusing to write an empty report"));
    }
    fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))
}

/// Writes the report metadata as pretty JSON.
pub fn export_meta(report: &BenchReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.meta).expect("metadata serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_errors_by_hand() {
        let v = |x: &[f64]| Quantity::Vector(x.to_vec());
        assert_eq!(rel_errors(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), (0.0, 0.0));
        assert_eq!(rel_errors(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), (1.0, 1.0));
        let (l2, linf) = rel_errors(&v(&[3.0, 4.0]), &v(&[3.0, 0.0])).unwrap();
        assert!((l2 - 0.8).abs() < 1e-15 && linf == 1.0);
        assert!(rel_errors(&v(&[0.0]), &v(&[1.0])).is_err());
        assert!(rel_errors(&v(&[1.0]), &Quantity::Scalar(1.0)).is_err());
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg: BenchConfig = serde_json::from_str(
            r#"{"problem":{"kind":"laplace2d_thermal","n":4},"methods":["proposed","pod"],
                "quantity":"solve","budgets":[{"m":1},{"q":4}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_test, 100);
        assert_eq!(cfg.budgets[1], Budget::Q { q: 4 });
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.quantity = Mode::Logdet;
        assert!(bad.validate().is_err());
        assert_eq!(resolve_budget(Budget::Q { q: 4 }, 2).unwrap(), (2, Some(4)));
        assert!(serde_json::from_str::<BenchConfig>(r#"{"problem":{"kind":"x","n":4},"methods":[],"quantity":"solve","budgets":[],"extra":1}"#).is_err());
    }

    #[test]
    fn empty_report_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let report = BenchReport {
            rows: vec![],
            meta: BenchMeta {
                version: String::new(),
                config_hash: String::new(),
                test_seed: 0,
                doe_seed: 0,
                sample_kind: String::new(),
                sample_size: 0,
                sample_seed: 0,
                baseline_points: String::new(),
                failures: vec![],
            },
        };
        assert!(export_csv(&report, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn small_run_is_sorted_and_finite() {
        let cfg: BenchConfig = serde_json::from_str(
            r#"{"problem":{"kind":"laplace2d_thermal","n":4},"methods":["ridge","proposed","pod","frobenius"],
                "quantity":"solve","budgets":[{"m":2},{"m":1}],"n_test":5,
                "sample":{"kind":"lhs","n":200,"seed":1}}"#,
        )
        .unwrap();
        let report = run_convergence(&cfg).unwrap();
        assert_eq!(report.rows.len(), 8);
        assert!(report.meta.failures.is_empty(), "{:?}", report.meta.failures);
        let keys: Vec<(&str, usize)> = report.rows.iter().map(|r| (r.method.name(), r.q)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(report.rows.iter().all(|r| r.mean_rel_l2.is_finite() && r.mean_rel_l2 >= 0.0));
        assert!(report_csv(&report).starts_with(CSV_HEADER));
    }
}
