//! Min-max normalization and trilinear upsampling for the uncertainty map.

use ndarray::Array3;

/// What the forward min-max pass saw; enough to run the exact backward.
#[derive(Debug, Clone, Copy)]
pub struct MinMaxInfo {
    /// First index attaining the minimum / maximum.
    pub min_idx: usize,
    pub max_idx: usize,
    pub min: f64,
    pub range: f64,
}

/// Min-max normalize to [0, 1]. A constant input (range 0) maps to all
/// zeros — with the downstream uses (reconstruction weights, guide targets) a
/// flat map carries no information and zero weight is the safe reading.
pub fn minmax_normalize(x: &[f64]) -> (Vec<f64>, MinMaxInfo) {
    assert!(!x.is_empty());
    let (mut min_idx, mut max_idx) = (0usize, 0usize);
    for (i, &v) in x.iter().enumerate() {
        if v < x[min_idx] {
            min_idx = i;
        }
        if v > x[max_idx] {
            max_idx = i;
        }
    }
    let min = x[min_idx];
    let range = x[max_idx] - min;
    let out = if range == 0.0 {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|&v| (v - min) / range).collect()
    };
    (
        out,
        MinMaxInfo {
            min_idx,
            max_idx,
            min,
            range,
        },
    )
}

/// Exact gradient of min-max normalization, including the terms through the
/// argmin/argmax entries (first occurrence on ties, matching the forward
/// pass). For a constant input the forward is constant zero, so the gradient
/// vanishes.
///
/// With n_j = (x_j - min) / range, S1 = sum_j g_j and S2 = sum_j g_j n_j:
///   dL/dx_k        = g_k / range                     for interior k,
///   dL/dx_(argmin) = (g - S1 + S2) / range,
///   dL/dx_(argmax) = (g - S2) / range,
/// which sums to zero over k, as it must for a shift-invariant map.
pub fn minmax_backward(g_norm: &[f64], normed: &[f64], info: &MinMaxInfo) -> Vec<f64> {
    if info.range == 0.0 {
        return vec![0.0; g_norm.len()];
    }
    let s1: f64 = g_norm.iter().sum();
    let s2: f64 = g_norm.iter().zip(normed).map(|(g, n)| g * n).sum();
    let mut gx: Vec<f64> = g_norm.iter().map(|&g| g / info.range).collect();
    gx[info.min_idx] += (-s1 + s2) / info.range;
    gx[info.max_idx] += -s2 / info.range;
    gx
}

/// Trilinear interpolation to `out` dims with half-pixel centers and clamped
/// borders: source coordinate s = (d + 0.5) * (in / out) - 0.5, clamped to
/// [0, in-1], blended between floor(s) and floor(s)+1.
pub fn trilinear_upsample(u: &Array3<f64>, out: (usize, usize, usize)) -> Array3<f64> {
    let (ih, iw, it) = u.dim();
    let (oh, ow, ot) = out;
    let axis = |d: usize, i_len: usize, o_len: usize| -> (usize, usize, f64) {
        let scale = i_len as f64 / o_len as f64;
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (i_len - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(i_len - 1);
        (lo, hi, s - lo as f64)
    };
    Array3::from_shape_fn((oh, ow, ot), |(i, j, t)| {
        let (i0, i1, fi) = axis(i, ih, oh);
        let (j0, j1, fj) = axis(j, iw, ow);
        let (t0, t1, ft) = axis(t, it, ot);
        let mut acc = 0.0;
        for (ii, wi) in [(i0, 1.0 - fi), (i1, fi)] {
            for (jj, wj) in [(j0, 1.0 - fj), (j1, fj)] {
                for (tt, wt) in [(t0, 1.0 - ft), (t1, ft)] {
                    acc += wi * wj * wt * u[[ii, jj, tt]];
                }
            }
        }
        acc
    })
}

/// Normalize then upsample an uncertainty map to clip resolution; the result
/// stays in [0, 1].
pub fn normalize_upsample(u: &Array3<f64>, out: (usize, usize, usize)) -> Array3<f64> {
    let dims = u.dim();
    let flat = u.as_slice().expect("standard layout");
    let (normed, _) = minmax_normalize(flat);
    let normed = Array3::from_shape_vec(dims, normed).unwrap();
    trilinear_upsample(&normed, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minmax_basics() {
        let (n, info) = minmax_normalize(&[0.2, 0.5, 0.8]);
        for (got, want) in n.iter().zip([0.0, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!((info.min_idx, info.max_idx), (0, 2));

        let (flat, info) = minmax_normalize(&[0.7, 0.7, 0.7]);
        assert_eq!(flat, vec![0.0, 0.0, 0.0]);
        assert_eq!(info.range, 0.0);
    }

    #[test]
    fn constant_map_upsamples_to_zeros() {
        let u = Array3::from_elem((2, 2, 2), 3.5);
        let up = normalize_upsample(&u, (4, 4, 4));
        assert!(up.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_matches_an_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = Array3::from_shape_fn((2, 2, 2), |_| rng.gen::<f64>());
        let up = trilinear_upsample(&u, (4, 4, 4));
        // Oracle: expand one axis at a time with explicitly written weights.
        // For in=2, out=4 the sources are s = {-0.25, 0.25, 0.75, 1.25} ->
        // clamped {0, 0.25, 0.75, 1}.
        let pos = [(0usize, 0usize, 0.0f64), (0, 1, 0.25), (0, 1, 0.75), (1, 1, 0.0)];
        for (oi, &(i0, i1, fi)) in pos.iter().enumerate() {
            for (oj, &(j0, j1, fj)) in pos.iter().enumerate() {
                for (ot, &(t0, t1, ft)) in pos.iter().enumerate() {
                    let expect = (1.0 - fi) * (1.0 - fj) * (1.0 - ft) * u[[i0, j0, t0]]
                        + (1.0 - fi) * (1.0 - fj) * ft * u[[i0, j0, t1]]
                        + (1.0 - fi) * fj * (1.0 - ft) * u[[i0, j1, t0]]
                        + (1.0 - fi) * fj * ft * u[[i0, j1, t1]]
                        + fi * (1.0 - fj) * (1.0 - ft) * u[[i1, j0, t0]]
                        + fi * (1.0 - fj) * ft * u[[i1, j0, t1]]
                        + fi * fj * (1.0 - ft) * u[[i1, j1, t0]]
                        + fi * fj * ft * u[[i1, j1, t1]];
                    assert!(
                        (up[[oi, oj, ot]] - expect).abs() < 1e-6,
                        "mismatch at ({oi},{oj},{ot})"
                    );
                }
            }
        }
    }

    #[test]
    fn minmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..7).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..7).map(|_| rng.gen::<f64>() - 0.5).collect();
        let loss = |x: &[f64]| -> f64 {
            let (n, _) = minmax_normalize(x);
            n.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (normed, info) = minmax_normalize(&x);
        let gx = minmax_backward(&g, &normed, &info);
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let numeric = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!(
                (gx[k] - numeric).abs() < 1e-5,
                "k={k}: analytic {} vs numeric {numeric}",
                gx[k]
            );
        }
        // Shift invariance: the entries sum to zero.
        assert!(gx.iter().sum::<f64>().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn upsampled_range_and_argmax_are_preserved(vals in prop::collection::vec(0.01f64..1.0, 8)) {
            let u = Array3::from_shape_vec((2, 2, 2), vals).unwrap();
            let flat = u.as_slice().unwrap();
            let (normed, _) = minmax_normalize(flat);
            // Normalization keeps the argmax location.
            let argmax = |v: &[f64]| {
                v.iter().enumerate().fold((0, f64::MIN), |acc, (i, &x)| {
                    if x > acc.1 { (i, x) } else { acc }
                }).0
            };
            prop_assert_eq!(argmax(flat), argmax(&normed));
            let up = normalize_upsample(&u, (5, 4, 3));
            for &v in up.iter() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
