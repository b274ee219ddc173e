//! Evidence → Dirichlet bookkeeping.
//!
//! A non-negative evidence vector e parameterizes a Dirichlet with
//! concentration alpha = e + 1. Its total strength S = sum(alpha) gives the
//! predicted class probabilities p = alpha / S and the vacuity-style
//! uncertainty u = C / S: no evidence means u = 1, unbounded evidence drives
//! u toward 0 (never reaching it).

use ndarray::{Array1, Array3, Array4};

/// Video-level evidential quantities.
#[derive(Debug, Clone)]
pub struct PooledEvidence {
    pub e: Array1<f64>,
    pub alpha: Array1<f64>,
    pub strength: f64,
    pub p: Array1<f64>,
    pub u: f64,
}

/// Derive alpha, S, p, u from rectified evidence. `e` must be non-negative —
/// callers apply ReLU first; a negative entry is a contract violation.
pub fn pooled_evidence(e: &Array1<f64>) -> PooledEvidence {
    assert!(
        e.iter().all(|&v| v >= 0.0),
        "evidence must be non-negative, got {e:?}"
    );
    let alpha = e.mapv(|v| v + 1.0);
    let strength: f64 = alpha.sum();
    let p = alpha.mapv(|a| a / strength);
    let u = e.len() as f64 / strength;
    PooledEvidence {
        e: e.clone(),
        alpha,
        strength,
        p,
        u,
    }
}

/// Per-location uncertainty U[i,j,t] = C / sum_c (E[i,j,t,c] + 1) from a
/// non-negative evidence map E.
pub fn uncertainty_map(e_map: &Array4<f64>) -> Array3<f64> {
    let (h, w, t, c) = e_map.dim();
    let mut u = Array3::zeros((h, w, t));
    for i in 0..h {
        for j in 0..w {
            for k in 0..t {
                let mut s = 0.0;
                for ch in 0..c {
                    let e = e_map[[i, j, k, ch]];
                    debug_assert!(e >= 0.0, "evidence map must be non-negative");
                    s += e + 1.0;
                }
                u[[i, j, k]] = c as f64 / s;
            }
        }
    }
    u
}
