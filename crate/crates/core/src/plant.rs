//! Discrete-time LTI plant `x+ = A x + B u`, `y = C x + D u + d` and its
//! steady-state sensitivity.
//!
//! Inputs and outputs have one scalar channel per agent (`n_io` agents). The
//! state dimension may differ from `n_io`, in which case `B` is
//! `n_state x n_io` and `C` is `n_io x n_state`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OfoError, Result};
use crate::linalg;

/// Spectral radii at or above `1 - SCHUR_TOL` count as unstable.
pub const SCHUR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    disturbance: DVector<f64>,
}

impl LtiPlant {
    /// Validates dimensions and Schur stability of `a`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        disturbance: DVector<f64>,
    ) -> Result<Self> {
        let plant = Self::new_unchecked(a, b, c, d, disturbance)?;
        let (stable, radius) = is_schur_stable(&plant.a)?;
        if !stable {
            return Err(OfoError::UnstablePlant { radius });
        }
        Ok(plant)
    }

    /// Like [`LtiPlant::new`] but skips the stability check.
    pub fn new_unchecked(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        disturbance: DVector<f64>,
    ) -> Result<Self> {
        let n_state = a.nrows();
        let n_io = disturbance.len();
        if n_io == 0 || n_state == 0 {
            return Err(OfoError::invalid("plant", "empty state or output dimension"));
        }
        linalg::check_shape(&a, n_state, n_state, "plant matrix A")?;
        linalg::check_shape(&b, n_state, n_io, "plant matrix B")?;
        linalg::check_shape(&c, n_io, n_state, "plant matrix C")?;
        linalg::check_shape(&d, n_io, n_io, "plant matrix D")?;
        Ok(Self {
            a,
            b,
            c,
            d,
            disturbance,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn disturbance(&self) -> &DVector<f64> {
        &self.disturbance
    }

    /// Number of agents (input/output channels).
    pub fn n_io(&self) -> usize {
        self.disturbance.len()
    }

    pub fn n_state(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_disturbance(mut self, disturbance: DVector<f64>) -> Result<Self> {
        linalg::check_len(&disturbance, self.n_io(), "plant disturbance")?;
        self.disturbance = disturbance;
        Ok(self)
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, self.n_state(), "plant state")?;
        linalg::check_len(u, self.n_io(), "plant input")?;
        Ok(&self.c * x + &self.d * u + &self.disturbance)
    }

    /// One step: returns `(A x + B u, C x + D u + d)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let y = self.output(x, u)?;
        Ok((&self.a * x + &self.b * u, y))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: PlantFile = serde_json::from_str(s).map_err(|e| OfoError::Parse {
            key: "plant".into(),
            reason: e.to_string(),
        })?;
        file.into_plant()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| OfoError::Parse {
            key: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&s)
    }

    pub fn to_file(&self) -> PlantFile {
        PlantFile {
            a: linalg::matrix_to_rows(&self.a),
            b: linalg::matrix_to_rows(&self.b),
            c: linalg::matrix_to_rows(&self.c),
            d: linalg::matrix_to_rows(&self.d),
            disturbance: self.disturbance.iter().copied().collect(),
        }
    }
}

/// On-disk plant description: row-major nested arrays under keys
/// `"A"`, `"B"`, `"C"`, `"D"` and the disturbance vector `"d"`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "d")]
    pub disturbance: Vec<f64>,
}

impl PlantFile {
    pub fn into_plant(self) -> Result<LtiPlant> {
        let parse = |key: &str, rows: &[Vec<f64>]| {
            linalg::matrix_from_rows(rows).map_err(|reason| OfoError::Parse {
                key: key.into(),
                reason,
            })
        };
        let a = parse("A", &self.a)?;
        let b = parse("B", &self.b)?;
        let c = parse("C", &self.c)?;
        let d = parse("D", &self.d)?;
        if let Some(x) = self.disturbance.iter().find(|x| !x.is_finite()) {
            return Err(OfoError::Parse {
                key: "d".into(),
                reason: format!("non-finite entry {x}"),
            });
        }
        let dist = DVector::from_vec(self.disturbance);
        let (n, p) = (a.nrows(), dist.len());
        let expect = |key: &str, m: &DMatrix<f64>, r: usize, c: usize| {
            if m.shape() == (r, c) {
                Ok(())
            } else {
                Err(OfoError::Parse {
                    key: key.into(),
                    reason: format!("expected {r}x{c}, found {}x{}", m.nrows(), m.ncols()),
                })
            }
        };
        expect("A", &a, n, n)?;
        expect("B", &b, n, p)?;
        expect("C", &c, p, n)?;
        expect("D", &d, p, p)?;
        LtiPlant::new(a, b, c, d, dist)
    }
}

/// Steady-state sensitivities of a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityModel {
    h: DMatrix<f64>,
    h_diag: DMatrix<f64>,
    h_x: Option<DMatrix<f64>>,
}

impl SensitivityModel {
    /// Model for an algebraic plant given only its input-output sensitivity.
    pub fn from_h(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() || h.is_empty() {
            return Err(OfoError::dims(
                "sensitivity H",
                "non-empty square matrix",
                format!("{}x{}", h.nrows(), h.ncols()),
            ));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(OfoError::invalid("H", "non-finite entry"));
        }
        let h_diag = linalg::diag_part(&h);
        Ok(Self {
            h,
            h_diag,
            h_x: None,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn h_diag(&self) -> &DMatrix<f64> {
        &self.h_diag
    }
    /// State sensitivity `(I - A)^{-1} B`; absent for purely algebraic models.
    pub fn h_x(&self) -> Option<&DMatrix<f64>> {
        self.h_x.as_ref()
    }
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// `H - H_diag`, the cross-coupling ignored by the decentralized controller.
    pub fn off_diagonal(&self) -> DMatrix<f64> {
        &self.h - &self.h_diag
    }

    pub fn steady_state_output(&self, u: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(u, self.n(), "steady-state input")?;
        linalg::check_len(d, self.n(), "steady-state disturbance")?;
        Ok(&self.h * u + d)
    }
}

/// `H_x = (I - A)^{-1} B` by linear solve, then `H = C H_x + D`.
pub fn compute_sensitivity(plant: &LtiPlant) -> Result<SensitivityModel> {
    let n = plant.n_state();
    let i_minus_a = DMatrix::identity(n, n) - plant.a();
    let h_x = linalg::solve(&i_minus_a, plant.b(), "I - A")?;
    let h = plant.c() * &h_x + plant.d();
    let mut model = SensitivityModel::from_h(h)?;
    model.h_x = Some(h_x);
    Ok(model)
}

/// Returns `(spectral_radius < 1 - SCHUR_TOL, spectral_radius)`.
pub fn is_schur_stable(a: &DMatrix<f64>) -> Result<(bool, f64)> {
    if !a.is_square() {
        return Err(OfoError::dims(
            "Schur stability",
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let radius = linalg::spectral_radius(a);
    Ok((radius < 1.0 - SCHUR_TOL, radius))
}
