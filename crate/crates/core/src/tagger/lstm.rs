//! One direction of an LSTM layer over flat row-major buffers.
//!
//! Gate order is input, forget, cell, output. `W` is `4H × I`, `U` is
//! `4H × H`, the bias has `4H` entries.

use crate::linalg::{dot, sigmoid};

pub(crate) struct Cell<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

pub(crate) struct CellGrad<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Activations of one direction, indexed by sequence position.
pub(crate) struct DirCache {
    /// T × H outputs.
    pub h: Vec<f64>,
    c: Vec<f64>,
    c_prev: Vec<f64>,
    /// T × 4H activated gates.
    gates: Vec<f64>,
    /// T × H recurrent input after the dropout mask.
    h_in: Vec<f64>,
}

fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

pub(crate) fn forward(cell: &Cell<'_>, xs: &[f64], len: usize, reverse: bool, rmask: Option<&[f64]>) -> DirCache {
    let (n_in, n_h) = (cell.input, cell.hidden);
    let mut cache = DirCache {
        h: vec![0.0; len * n_h],
        c: vec![0.0; len * n_h],
        c_prev: vec![0.0; len * n_h],
        gates: vec![0.0; len * 4 * n_h],
        h_in: vec![0.0; len * n_h],
    };
    let mut h_prev = vec![0.0; n_h];
    let mut c_prev = vec![0.0; n_h];
    let mut a = vec![0.0; 4 * n_h];
    for t in order(len, reverse) {
        let x = &xs[t * n_in..(t + 1) * n_in];
        let h_in = &mut cache.h_in[t * n_h..(t + 1) * n_h];
        for k in 0..n_h {
            h_in[k] = match rmask {
                Some(m) => h_prev[k] * m[k],
                None => h_prev[k],
            };
        }
        for r in 0..4 * n_h {
            a[r] = cell.b[r]
                + dot(&cell.w[r * n_in..(r + 1) * n_in], x)
                + dot(&cell.u[r * n_h..(r + 1) * n_h], h_in);
        }
        let gates = &mut cache.gates[t * 4 * n_h..(t + 1) * 4 * n_h];
        for k in 0..n_h {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[n_h + k]);
            let g = a[2 * n_h + k].tanh();
            let o = sigmoid(a[3 * n_h + k]);
            gates[k] = i;
            gates[n_h + k] = f;
            gates[2 * n_h + k] = g;
            gates[3 * n_h + k] = o;
            let c = f * c_prev[k] + i * g;
            cache.c_prev[t * n_h + k] = c_prev[k];
            cache.c[t * n_h + k] = c;
            let h = o * c.tanh();
            cache.h[t * n_h + k] = h;
            c_prev[k] = c;
            h_prev[k] = h;
        }
    }
    cache
}

/// Backpropagates `dh_out` (T × H) through the direction, accumulating
/// parameter gradients. Returns dL/dx (T × I) when `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    cell: &Cell<'_>,
    cache: &DirCache,
    xs: &[f64],
    dh_out: &[f64],
    len: usize,
    reverse: bool,
    rmask: Option<&[f64]>,
    grad: &mut CellGrad<'_>,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (n_in, n_h) = (cell.input, cell.hidden);
    let mut dx = want_dx.then(|| vec![0.0; len * n_in]);
    let mut dh_next = vec![0.0; n_h];
    let mut dc_next = vec![0.0; n_h];
    let mut da = vec![0.0; 4 * n_h];
    let mut dh_in = vec![0.0; n_h];
    // reverse of the processing order
    for t in order(len, !reverse) {
        let gates = &cache.gates[t * 4 * n_h..(t + 1) * 4 * n_h];
        for k in 0..n_h {
            let (i, f, g, o) = (gates[k], gates[n_h + k], gates[2 * n_h + k], gates[3 * n_h + k]);
            let tc = cache.c[t * n_h + k].tanh();
            let dh = dh_out[t * n_h + k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let di = dc * g;
            let dg = dc * i;
            let df = dc * cache.c_prev[t * n_h + k];
            dc_next[k] = dc * f;
            da[k] = di * i * (1.0 - i);
            da[n_h + k] = df * f * (1.0 - f);
            da[2 * n_h + k] = dg * (1.0 - g * g);
            da[3 * n_h + k] = d_o * o * (1.0 - o);
        }
        let x = &xs[t * n_in..(t + 1) * n_in];
        let h_in = &cache.h_in[t * n_h..(t + 1) * n_h];
        dh_in.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * n_h {
            let d = da[r];
            if d == 0.0 {
                continue;
            }
            grad.b[r] += d;
            axpy(d, x, &mut grad.w[r * n_in..(r + 1) * n_in]);
            axpy(d, h_in, &mut grad.u[r * n_h..(r + 1) * n_h]);
            axpy(d, &cell.u[r * n_h..(r + 1) * n_h], &mut dh_in);
            if let Some(dx) = dx.as_mut() {
                axpy(d, &cell.w[r * n_in..(r + 1) * n_in], &mut dx[t * n_in..(t + 1) * n_in]);
            }
        }
        for k in 0..n_h {
            dh_next[k] = match rmask {
                Some(m) => dh_in[k] * m[k],
                None => dh_in[k],
            };
        }
    }
    dx
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
