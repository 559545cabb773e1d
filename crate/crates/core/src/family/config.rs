use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sparse::{read_matrix_market, read_vector, write_matrix_market, write_vector};
use super::{parse_coeff_expr, AffineFamily, ParameterBox};
use crate::error::{Error, Result};

/// On-disk description of an affine family. Relative paths are resolved
/// against the directory holding the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub terms: Vec<PathBuf>,
    pub coeffs: Vec<String>,
    pub param_box: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<PathBuf>,
    #[serde(default)]
    pub spd: bool,
}

/// Reads a family config and the MatrixMarket files it references.
pub fn load_family(config_path: &Path) -> Result<AffineFamily> {
    let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg: FamilyConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let terms = cfg
        .terms
        .iter()
        .map(|p| read_matrix_market(&resolve(p)))
        .collect::<Result<Vec<_>>>()?;
    let coeffs = cfg
        .coeffs
        .iter()
        .map(|s| parse_coeff_expr(s))
        .collect::<Result<Vec<_>>>()?;
    let param_box = ParameterBox::new(cfg.param_box.iter().map(|&[lo, hi]| (lo, hi)).collect())?;
    let fam = AffineFamily::new(terms, coeffs, param_box, cfg.spd)?;
    match &cfg.rhs {
        Some(p) => fam.with_rhs(read_vector(&resolve(p))?),
        None => Ok(fam),
    }
}

/// Writes `A1.mtx ... Ad.mtx`, an optional `rhs.mtx`, and `family.json`
/// into `dir`; returns the config path.
pub fn write_family(dir: &Path, fam: &AffineFamily) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut terms = Vec::with_capacity(fam.d());
    for (l, t) in fam.terms().iter().enumerate() {
        let name = PathBuf::from(format!("A{}.mtx", l + 1));
        write_matrix_market(&dir.join(&name), t, fam.symmetric_hint())?;
        terms.push(name);
    }
    let rhs = match fam.rhs() {
        Some(b) => {
            let name = PathBuf::from("rhs.mtx");
            write_vector(&dir.join(&name), b)?;
            Some(name)
        }
        None => None,
    };
    let cfg = FamilyConfig {
        terms,
        coeffs: fam.coeffs().iter().map(|c| c.source().to_string()).collect(),
        param_box: fam.param_box().intervals().iter().map(|&(lo, hi)| [lo, hi]).collect(),
        rhs,
        spd: fam.spd_hint(),
    };
    let path = dir.join("family.json");
    let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
