//! One gated recurrent cell (input, forget, output, candidate blocks in that
//! order) with its hand-derived backward pass.

use crate::numeric::{matvec, matvec_t_acc, outer_acc, sigmoid};

/// Borrowed view of a cell's weights: `w` is `4h × (n_in + h)` row-major
/// acting on `[x; h_prev]`, `b` has length `4h`.
#[derive(Debug, Clone, Copy)]
pub struct CellWeights<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub n_in: usize,
    pub hidden: usize,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub xh: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// `(h_t, c_t)` from `x_t` and `(h_{t-1}, c_{t-1})`.
pub fn cell_step(cw: CellWeights<'_>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellCache {
    let h = cw.hidden;
    debug_assert_eq!(x.len(), cw.n_in);
    let cols = cw.n_in + h;
    let mut xh = Vec::with_capacity(cols);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h_prev);
    let mut z = vec![0.0; 4 * h];
    matvec(cw.w, 4 * h, cols, &xh, &mut z);
    for (zi, bi) in z.iter_mut().zip(cw.b) {
        *zi += bi;
    }
    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * h..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hh: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    CellCache {
        xh,
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h: hh,
    }
}

/// Backward through one step given the loss gradients `dh`, `dc` with
/// respect to this step's outputs. Accumulates into `dw`/`db` and returns
/// `(dx, dh_prev, dc_prev)`.
pub fn cell_backward(
    cw: CellWeights<'_>,
    cache: &CellCache,
    dh: &[f64],
    dc: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = cw.hidden;
    let cols = cw.n_in + h;
    let mut dz = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for k in 0..h {
        let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let di = dct * g;
        let dg = dct * i;
        let df = dct * cache.c_prev[k];
        dc_prev[k] = dct * f;
        dz[k] = di * i * (1.0 - i);
        dz[h + k] = df * f * (1.0 - f);
        dz[2 * h + k] = d_o * o * (1.0 - o);
        dz[3 * h + k] = dg * (1.0 - g * g);
    }
    outer_acc(dw, 4 * h, cols, &dz, &cache.xh);
    for (b, d) in db.iter_mut().zip(&dz) {
        *b += d;
    }
    let mut dxh = vec![0.0; cols];
    matvec_t_acc(cw.w, 4 * h, cols, &dz, &mut dxh);
    let dh_prev = dxh.split_off(cw.n_in);
    (dxh, dh_prev, dc_prev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let w = vec![0.0; 4 * 2 * (3 + 2)];
        let b = vec![0.0; 8];
        let cw = CellWeights { w: &w, b: &b, n_in: 3, hidden: 2 };
        let out = cell_step(cw, &[0.7, -1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(out.h, vec![0.0, 0.0]);
        assert_eq!(out.c, vec![0.0, 0.0]);
    }

    #[test]
    fn tiny_cell_pencil() {
        // n_in = 1, h = 2; rows: i0 i1 f0 f1 o0 o1 g0 g1, columns: x h0 h1.
        let w = vec![
            0.1, 0.2, -0.1, //
            -0.3, 0.0, 0.4, //
            0.5, -0.2, 0.1, //
            0.0, 0.3, 0.3, //
            0.2, 0.1, 0.0, //
            -0.1, -0.1, 0.2, //
            0.6, 0.0, -0.5, //
            -0.4, 0.2, 0.1,
        ];
        let b = vec![0.0, 0.1, 0.0, -0.1, 0.05, 0.0, 0.0, 0.2];
        let cw = CellWeights { w: &w, b: &b, n_in: 1, hidden: 2 };
        let (x, hp, cp) = ([1.5], [0.2, -0.3], [0.1, 0.4]);
        let out = cell_step(cw, &x, &hp, &cp);

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |r: usize| w[3 * r] * 1.5 + w[3 * r + 1] * 0.2 + w[3 * r + 2] * -0.3 + b[r];
        let (i0, i1) = (sig(pre(0)), sig(pre(1)));
        let (f0, f1) = (sig(pre(2)), sig(pre(3)));
        let (o0, o1) = (sig(pre(4)), sig(pre(5)));
        let (g0, g1) = (pre(6).tanh(), pre(7).tanh());
        let c0 = f0 * 0.1 + i0 * g0;
        let c1 = f1 * 0.4 + i1 * g1;
        assert!((out.c[0] - c0).abs() < 1e-9);
        assert!((out.c[1] - c1).abs() < 1e-9);
        assert!((out.h[0] - o0 * c0.tanh()).abs() < 1e-9);
        assert!((out.h[1] - o1 * c1.tanh()).abs() < 1e-9);
    }

    #[test]
    fn one_step_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (n_in, h) = (3, 2);
        let mut w: Vec<f64> = (0..4 * h * (n_in + h)).map(|_| rng.random_range(-0.8..0.8)).collect();
        let b: Vec<f64> = (0..4 * h).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hp = vec![0.3, -0.6];
        let cp = vec![-0.2, 0.5];
        // Scalar loss: L = a·h + e·c
        let a = [0.7, -1.3];
        let e = [0.4, 0.9];
        let loss = |w: &[f64], x: &[f64]| {
            let cw = CellWeights { w, b: &b, n_in, hidden: h };
            let o = cell_step(cw, x, &hp, &cp);
            a[0] * o.h[0] + a[1] * o.h[1] + e[0] * o.c[0] + e[1] * o.c[1]
        };
        let cw = CellWeights { w: &w, b: &b, n_in, hidden: h };
        let cache = cell_step(cw, &x, &hp, &cp);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let (dx, _, _) = cell_backward(cw, &cache, &a, &e, &mut dw, &mut db);

        let eps = 1e-4;
        let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
        for k in 0..w.len() {
            let orig = w[k];
            w[k] = orig + eps;
            let lp = loss(&w, &x);
            w[k] = orig - eps;
            let lm = loss(&w, &x);
            w[k] = orig;
            assert!(rel(dw[k], (lp - lm) / (2.0 * eps)) < 1e-4, "w[{k}]");
        }
        for k in 0..n_in {
            let mut xp = x.clone();
            xp[k] += eps;
            let mut xm = x.clone();
            xm[k] -= eps;
            assert!(rel(dx[k], (loss(&w, &xp) - loss(&w, &xm)) / (2.0 * eps)) < 1e-4, "x[{k}]");
        }
    }
}
