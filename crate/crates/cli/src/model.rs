//! Model files: plant, MPC problem or precomputed law, and verification task.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use veripc_core::expr::{Jacobian, SymbolTable, VectorField};
use veripc_core::hybrid::HoldMode;
use veripc_core::mpc::{discretize, MpcProblem, NormKind};
use veripc_core::polyhedron::{BoxSet, Polyhedron};
use veripc_core::reach::ReachConfig;

use crate::CliError;

/// Points used to compare a supplied Jacobian with the derived one.
pub const JACOBIAN_CHECK_POINTS: usize = 10;
pub const JACOBIAN_CHECK_TOL: f64 = 1e-6;

/// A matrix literal, or the string `"identity"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixLit {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormLit {
    One,
    #[default]
    Inf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcLit {
    #[serde(rename = "A_d", default, skip_serializing_if = "Option::is_none")]
    pub a_d: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B_d", default, skip_serializing_if = "Option::is_none")]
    pub b_d: Option<Vec<Vec<f64>>>,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q")]
    pub q: MatrixLit,
    #[serde(rename = "R")]
    pub r: MatrixLit,
    #[serde(default)]
    pub norm: NormLit,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Defaults to `[x_min, x_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_domain: Option<BoxSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyLit {
    pub initial: BoxSet,
    #[serde(rename = "unsafe", default)]
    pub unsafe_sets: Vec<Polyhedron>,
    #[serde(rename = "Tv")]
    pub tv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_partitions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloat_safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub containment_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_box: Option<BoxSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_split_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_grid: Option<usize>,
}

/// The file as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub state_dim: usize,
    pub input_dim: usize,
    #[serde(rename = "Ts")]
    pub ts: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub dynamics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian_x: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian_u: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub hold: HoldMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpc: Option<MpcLit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyLit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySpec {
    pub initial: BoxSet,
    pub unsafe_sets: Vec<Polyhedron>,
    pub tv: f64,
    pub config: ReachConfig,
}

/// A validated model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub field: VectorField,
    pub jacobian: Jacobian,
    pub jacobian_supplied: bool,
    pub hold: HoldMode,
    pub ts: f64,
    pub mpc: Option<MpcProblem>,
    /// Resolved against the model file's directory.
    pub solution_file: Option<PathBuf>,
    pub verify: Option<VerifySpec>,
    pub source: ModelFile,
}

impl ModelSpec {
    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.field.input_dim()
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Validation { field: field.into(), message: message.into() }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<ModelSpec, CliError> {
    let file: ModelFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate_model(file, base)
}

pub fn write_model(file: &ModelFile, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(file).expect("model files serialize");
    fs::write(path, text + "\n").map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, field: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(field, format!("expected a {r}x{c} matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

fn weight(lit: &MatrixLit, size: usize, field: &str) -> Result<DMatrix<f64>, CliError> {
    match lit {
        MatrixLit::Named(s) if s == "identity" => Ok(DMatrix::identity(size, size)),
        MatrixLit::Named(s) => Err(invalid(field, format!("unknown matrix name `{s}`"))),
        MatrixLit::Rows(rows) => {
            let c = rows.first().map_or(0, |r| r.len());
            if c != size {
                return Err(invalid(field, format!("expected {size} columns, got {c}")));
            }
            matrix(rows, rows.len(), size, field)
        }
    }
}

fn vector(v: &[f64], len: usize, field: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != len {
        return Err(invalid(field, format!("expected {len} entries, got {}", v.len())));
    }
    Ok(DVector::from_row_slice(v))
}

fn mpc_problem(lit: &MpcLit, n: usize, m: usize, ts: f64, jac: &Jacobian) -> Result<MpcProblem, CliError> {
    let (a_d, b_d) = match (&lit.a_d, &lit.b_d) {
        (Some(a), Some(b)) => (matrix(a, n, n, "mpc.A_d")?, matrix(b, n, m, "mpc.B_d")?),
        (None, None) => {
            let (jx, ju) = jac
                .eval(&vec![0.0; n], &vec![0.0; m])
                .map_err(|e| invalid("jacobian_x", format!("cannot linearize at the origin: {e}")))?;
            discretize(&jx, &ju, ts).map_err(|e| invalid("mpc", e.to_string()))?
        }
        _ => return Err(invalid("mpc.B_d", "A_d and B_d must be given together")),
    };
    let x_min = vector(&lit.x_min, n, "mpc.x_min")?;
    let x_max = vector(&lit.x_max, n, "mpc.x_max")?;
    let param_domain = match &lit.param_domain {
        Some(b) => b.clone(),
        None => BoxSet::new(x_min.clone(), x_max.clone()).map_err(|e| invalid("mpc.x_min", e.to_string()))?,
    };
    let prob = MpcProblem {
        a_d,
        b_d,
        horizon: lit.horizon,
        ts,
        q: weight(&lit.q, n, "mpc.Q")?,
        r: weight(&lit.r, m, "mpc.R")?,
        norm: match lit.norm {
            NormLit::One => NormKind::One,
            NormLit::Inf => NormKind::Inf,
        },
        u_min: vector(&lit.u_min, m, "mpc.u_min")?,
        u_max: vector(&lit.u_max, m, "mpc.u_max")?,
        x_min,
        x_max,
        param_domain,
    };
    prob.validate().map_err(|e| invalid("mpc", e.to_string()))?;
    Ok(prob)
}

fn verify_spec(lit: &VerifyLit, n: usize) -> Result<VerifySpec, CliError> {
    if lit.initial.dim() != n {
        return Err(invalid("verify.initial", format!("expected a box in {n} dimensions")));
    }
    for (i, u) in lit.unsafe_sets.iter().enumerate() {
        if u.dim() != n {
            return Err(invalid(format!("verify.unsafe[{i}]"), format!("expected {n} columns")));
        }
    }
    if !(lit.tv.is_finite() && lit.tv > 0.0) {
        return Err(invalid("verify.Tv", "must be positive"));
    }
    let d = ReachConfig::default();
    let config = ReachConfig {
        max_partitions: lit.max_partitions.unwrap_or(d.max_partitions),
        steps_per_period: lit.steps_per_period.unwrap_or(d.steps_per_period),
        bloat_safety: lit.bloat_safety.unwrap_or(d.bloat_safety),
        containment_tol: lit.containment_tol.unwrap_or(d.containment_tol),
        world_box: lit.world_box.clone(),
        max_split_depth: lit.max_split_depth.unwrap_or(d.max_split_depth),
        leak_grid: lit.leak_grid.unwrap_or(d.leak_grid),
        ..d
    };
    config.validate().map_err(|e| invalid("verify", e))?;
    if let Some(w) = &config.world_box {
        if w.dim() != n {
            return Err(invalid("verify.world_box", format!("expected a box in {n} dimensions")));
        }
    }
    Ok(VerifySpec {
        initial: lit.initial.clone(),
        unsafe_sets: lit.unsafe_sets.clone(),
        tv: lit.tv,
        config,
    })
}

pub fn validate_model(file: ModelFile, base: &Path) -> Result<ModelSpec, CliError> {
    let (n, m) = (file.state_dim, file.input_dim);
    if n == 0 {
        return Err(invalid("state_dim", "must be at least 1"));
    }
    if m == 0 {
        return Err(invalid("input_dim", "must be at least 1"));
    }
    if !(file.ts.is_finite() && file.ts > 0.0) {
        return Err(invalid("Ts", "must be positive"));
    }
    if file.dynamics.len() != n {
        return Err(invalid(
            "dynamics",
            format!("{} expressions for {n} states", file.dynamics.len()),
        ));
    }
    if file.mpc.is_none() && file.solution_file.is_none() {
        return Err(invalid("mpc", "either `mpc` or `solution_file` is required"));
    }
    let symbols = SymbolTable::new(n, m).with_params(file.params.clone());
    let mut components = Vec::with_capacity(n);
    for (i, text) in file.dynamics.iter().enumerate() {
        let e = veripc_core::expr::parse(text, &symbols)
            .and_then(|e| e.substitute_params(&symbols.params))
            .map_err(|e| invalid(format!("dynamics[{i}]"), e.to_string()))?;
        components.push(e);
    }
    let field = VectorField::new(components, &symbols).map_err(|e| invalid("dynamics", e.to_string()))?;
    let derived = field.jacobian().map_err(|e| invalid("dynamics", e.to_string()))?;

    let verify = file.verify.as_ref().map(|v| verify_spec(v, n)).transpose()?;
    let (jacobian, supplied) = match (&file.jacobian_x, &file.jacobian_u) {
        (None, None) => (derived, false),
        (Some(jx), Some(ju)) => {
            let jac = Jacobian::parse(jx, ju, &symbols).map_err(|e| invalid("jacobian_x", e.to_string()))?;
            let (x_box, u_box) = check_boxes(&file, n, m, verify.as_ref());
            jac.cross_check(&derived, &x_box, &u_box, JACOBIAN_CHECK_POINTS, JACOBIAN_CHECK_TOL)
                .map_err(|e| invalid("jacobian_x", e.to_string()))?;
            (jac, true)
        }
        _ => return Err(invalid("jacobian_u", "jacobian_x and jacobian_u must be given together")),
    };
    let mpc = file
        .mpc
        .as_ref()
        .map(|lit| mpc_problem(lit, n, m, file.ts, &jacobian))
        .transpose()?;
    let solution_file = file.solution_file.as_ref().map(|p| base.join(p));
    Ok(ModelSpec {
        name: file.name.clone(),
        field,
        jacobian,
        jacobian_supplied: supplied,
        hold: file.hold,
        ts: file.ts,
        mpc,
        solution_file,
        verify,
        source: file,
    })
}

/// Where a supplied Jacobian is compared: the state and input bounds when
/// known, else the initial box, else the unit box.
fn check_boxes(file: &ModelFile, n: usize, m: usize, verify: Option<&VerifySpec>) -> (BoxSet, BoxSet) {
    let from = |lo: &[f64], hi: &[f64], len: usize| {
        if lo.len() == len && hi.len() == len {
            BoxSet::from_slices(lo, hi).ok()
        } else {
            None
        }
    };
    let x_box = file
        .mpc
        .as_ref()
        .and_then(|p| from(&p.x_min, &p.x_max, n))
        .or_else(|| verify.map(|v| v.initial.clone()))
        .unwrap_or_else(|| BoxSet::cube(n, 1.0));
    let u_box = file
        .mpc
        .as_ref()
        .and_then(|p| from(&p.u_min, &p.u_max, m))
        .unwrap_or_else(|| BoxSet::cube(m, 1.0));
    (x_box, u_box)
}
