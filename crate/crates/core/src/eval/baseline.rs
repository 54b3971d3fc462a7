//! Calibrated optimizer-cost baseline.
//!
//! Fits ordinary least squares from the root operator's optimizer estimates
//! — `[1, total-cost, plan-rows, plan-width]` — to observed root latency.
//! This is the reference point a learned model has to beat: it captures
//! everything a linear read of the optimizer's own cost model can.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::{PlanNode, PlanTree};

/// Root attributes used as regressors, in column order after the intercept.
const FEATURE_ATTRS: [&str; 3] = ["total-cost", "plan-rows", "plan-width"];

/// Pivots smaller than this times the matrix scale are treated as singular.
const SINGULAR_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedCostModel {
    /// `[intercept, total-cost, plan-rows, plan-width]`, or a single
    /// cost-only slope when the full system was singular.
    pub coefficients: Vec<f64>,
    /// True when collinear features forced the cost-only fallback.
    pub cost_only: bool,
}

impl CalibratedCostModel {
    pub fn predict(&self, root: &PlanNode) -> f64 {
        let x = root_features(root);
        if self.cost_only {
            self.coefficients[0] * x[1]
        } else {
            self.coefficients.iter().zip(&x).map(|(c, v)| c * v).sum()
        }
    }
}

fn root_features(root: &PlanNode) -> [f64; 4] {
    let mut x = [1.0, 0.0, 0.0, 0.0];
    for (i, name) in FEATURE_ATTRS.iter().enumerate() {
        x[i + 1] = root.num_attr(name).unwrap_or(0.0);
    }
    x
}

/// Fits the baseline on every tree with a positive observed root latency.
pub fn fit_baseline(trees: &[&PlanTree]) -> Result<CalibratedCostModel> {
    let mut rows: Vec<([f64; 4], f64)> = Vec::new();
    for t in trees {
        if let Some(y) = t.root_latency() {
            if y > 0.0 {
                rows.push((root_features(&t.root), y));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Fit(
            "no plans with positive root latencies to calibrate against".into(),
        ));
    }

    // Normal equations: (X'X) beta = X'y.
    let mut xtx = [[0.0f64; 4]; 4];
    let mut xty = [0.0f64; 4];
    for (x, y) in &rows {
        for i in 0..4 {
            for j in 0..4 {
                xtx[i][j] += x[i] * x[j];
            }
            xty[i] += x[i] * y;
        }
    }

    if let Some(beta) = solve4(xtx, xty) {
        return Ok(CalibratedCostModel {
            coefficients: beta.to_vec(),
            cost_only: false,
        });
    }

    // Collinear features: fall back to a single slope on total-cost.
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &rows {
        num += x[1] * y;
        den += x[1] * x[1];
    }
    if den <= 0.0 {
        return Err(Error::Fit(
            "degenerate corpus: features are collinear and total-cost is absent".into(),
        ));
    }
    Ok(CalibratedCostModel {
        coefficients: vec![num / den],
        cost_only: true,
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..4 {
        let pivot_row = (col..4)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < SINGULAR_REL_TOL * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for col in (0..4).rev() {
        let mut acc = b[col];
        for k in col + 1..4 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}
