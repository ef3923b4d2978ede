//! Small dense-vector kernels shared by the models.

/// Max-shifted softmax. Empty input gives an empty output.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln Σ exp(z)`, stabilized.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cosine similarity and its gradients with respect to both arguments.
/// Zero-norm inputs give a similarity of 0 and zero gradients.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    (c, ga, gb)
}

/// Unclamped cosine; zero when either norm is zero.
pub fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Row-major `rows × cols` matrix times vector.
pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[r * cols..(r + 1) * cols], x);
    }
}

/// `out += mᵀ y` for a row-major `rows × cols` matrix.
pub fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr != 0.0 {
            axpy(yr, &m[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `m += y xᵀ` for a row-major `rows × cols` matrix.
pub fn outer_acc(m: &mut [f64], rows: usize, cols: usize, y: &[f64], x: &[f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr != 0.0 {
            axpy(yr, x, &mut m[r * cols..(r + 1) * cols]);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_hand_values() {
        // Direct evaluation with mpmath.
        let p = softmax(&[1.0, 2.0, 3.0, 4.0]);
        let expected = [0.032_058_603_280_085, 0.087_144_318_742_032_6, 0.236_882_818_089_910, 0.643_914_259_887_972];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_grad_matches_finite_differences() {
        let a = [0.3, -1.2, 0.7];
        let b = [1.1, 0.4, -0.5];
        let (_, ga, gb) = cosine_with_grad(&a, &b);
        let eps = 1e-6;
        for i in 0..3 {
            let mut ap = a;
            ap[i] += eps;
            let mut am = a;
            am[i] -= eps;
            let fd = (cosine_raw(&ap, &b) - cosine_raw(&am, &b)) / (2.0 * eps);
            assert!((fd - ga[i]).abs() < 1e-8);
            let mut bp = b;
            bp[i] += eps;
            let mut bm = b;
            bm[i] -= eps;
            let fd = (cosine_raw(&a, &bp) - cosine_raw(&a, &bm)) / (2.0 * eps);
            assert!((fd - gb[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
            let p = softmax(&z);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = z.iter().map(|x| x + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
