//! Layer primitives with hand-written backward passes.
//!
//! Every forward function that needs intermediate state for its backward pass
//! returns it explicitly; nothing is cached behind the caller's back.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn require_2d(x: &Grid, what: &'static str) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::Shape {
            axis: what,
            expected: 2,
            actual: x.shape().len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// conv1d

fn check_conv(x: &Grid, kernel: &Grid, bias: Option<&Grid>, dilation: usize) -> Result<()> {
    require_2d(x, "input rank")?;
    if kernel.shape().len() != 3 {
        return Err(Error::Shape {
            axis: "kernel rank",
            expected: 3,
            actual: kernel.shape().len(),
        });
    }
    let (cout, cin, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if cin != x.rows() {
        return Err(Error::Shape {
            axis: "input channels",
            expected: cin,
            actual: x.rows(),
        });
    }
    if k % 2 == 0 {
        return Err(Error::config(format!("kernel size must be odd, got {k}")));
    }
    if dilation == 0 {
        return Err(Error::config("dilation must be at least 1"));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::Shape {
                axis: "bias length",
                expected: cout,
                actual: b.len(),
            });
        }
    }
    Ok(())
}

/// Valid output range `[t0, t1)` for a tap at signed offset `s`.
#[inline]
fn tap_range(t: usize, s: isize) -> (usize, usize) {
    let t0 = (-s).max(0) as usize;
    let t1 = (t as isize - s).clamp(0, t as isize) as usize;
    (t0, t1)
}

/// Same-padded 1-D convolution (cross-correlation) with zero padding.
///
/// `x` is `C_in×T`, `kernel` is `C_out×C_in×k` with odd `k`; the output is
/// `C_out×T`.
pub fn conv1d(x: &Grid, kernel: &Grid, bias: Option<&Grid>, dilation: usize) -> Result<Grid> {
    check_conv(x, kernel, bias, dilation)?;
    Ok(conv1d_forward(x, kernel, bias, dilation))
}

pub(crate) fn conv1d_forward(x: &Grid, kernel: &Grid, bias: Option<&Grid>, dilation: usize) -> Grid {
    let (cin, t) = (x.rows(), x.cols());
    let (cout, k) = (kernel.shape()[0], kernel.shape()[2]);
    let half = (k / 2) as isize;
    let w = kernel.data();
    let mut y = Grid::zeros(&[cout, t]);
    for o in 0..cout {
        let yo = y.row_mut(o);
        if let Some(b) = bias {
            yo.fill(b.data()[o]);
        }
        for i in 0..cin {
            let xi = x.row(i);
            for j in 0..k {
                let wv = w[(o * cin + i) * k + j];
                let s = dilation as isize * (j as isize - half);
                let (t0, t1) = tap_range(t, s);
                if t0 >= t1 {
                    continue;
                }
                let src = &xi[(t0 as isize + s) as usize..(t1 as isize + s) as usize];
                for (a, b) in yo[t0..t1].iter_mut().zip(src) {
                    *a += wv * b;
                }
            }
        }
    }
    y
}

/// Backward of [`conv1d`]. Accumulates into `grad_kernel` / `grad_bias` and
/// returns the gradient with respect to `x`.
pub(crate) fn conv1d_backward(
    x: &Grid,
    kernel: &Grid,
    dilation: usize,
    grad_out: &Grid,
    grad_kernel: &mut Grid,
    grad_bias: Option<&mut Grid>,
) -> Grid {
    let (cin, t) = (x.rows(), x.cols());
    let (cout, k) = (kernel.shape()[0], kernel.shape()[2]);
    let half = (k / 2) as isize;
    let w = kernel.data();
    let mut gx = Grid::zeros(&[cin, t]);
    if let Some(gb) = grad_bias {
        for o in 0..cout {
            gb.data_mut()[o] += grad_out.row(o).iter().sum::<f64>();
        }
    }
    let gw = grad_kernel.data_mut();
    for o in 0..cout {
        let go = grad_out.row(o);
        for i in 0..cin {
            let xi = x.row(i);
            for j in 0..k {
                let idx = (o * cin + i) * k + j;
                let s = dilation as isize * (j as isize - half);
                let (t0, t1) = tap_range(t, s);
                if t0 >= t1 {
                    continue;
                }
                let lo = (t0 as isize + s) as usize;
                let hi = (t1 as isize + s) as usize;
                let g = &go[t0..t1];
                gw[idx] += g.iter().zip(&xi[lo..hi]).map(|(a, b)| a * b).sum::<f64>();
                let wv = w[idx];
                let gxi = &mut gx.row_mut(i)[lo..hi];
                for (a, b) in gxi.iter_mut().zip(g) {
                    *a += wv * b;
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// layer norm over the channel axis

pub struct LayerNormCache {
    pub(crate) xhat: Grid,
    pub(crate) inv_std: Vec<f64>,
}

/// Normalizes each time step across channels, then applies a per-channel
/// affine map.
pub fn layer_norm(x: &Grid, gain: &Grid, shift: &Grid) -> Result<Grid> {
    require_2d(x, "input rank")?;
    for (g, axis) in [(gain, "gain length"), (shift, "shift length")] {
        if g.len() != x.rows() {
            return Err(Error::Shape {
                axis,
                expected: x.rows(),
                actual: g.len(),
            });
        }
    }
    Ok(layer_norm_forward(x, gain, shift).0)
}

pub(crate) fn layer_norm_forward(x: &Grid, gain: &Grid, shift: &Grid) -> (Grid, LayerNormCache) {
    let (c, t) = (x.rows(), x.cols());
    let mut mean = vec![0.0; t];
    for i in 0..c {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut var = vec![0.0; t];
    for i in 0..c {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / c as f64 + LAYER_NORM_EPS).sqrt())
        .collect();
    let mut xhat = Grid::zeros(&[c, t]);
    let mut y = Grid::zeros(&[c, t]);
    for i in 0..c {
        let (g, b) = (gain.data()[i], shift.data()[i]);
        let xi = x.row(i);
        let xh = xhat.row_mut(i);
        for j in 0..t {
            xh[j] = (xi[j] - mean[j]) * inv_std[j];
        }
        let yr = y.row_mut(i);
        for j in 0..t {
            yr[j] = g * xhat.row(i)[j] + b;
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Grid,
    grad_out: &Grid,
    grad_gain: &mut Grid,
    grad_shift: &mut Grid,
) -> Grid {
    let (c, t) = (grad_out.rows(), grad_out.cols());
    let xhat = &cache.xhat;
    let mut dxhat = Grid::zeros(&[c, t]);
    for i in 0..c {
        let g = gain.data()[i];
        let go = grad_out.row(i);
        let xh = xhat.row(i);
        grad_gain.data_mut()[i] += go.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        grad_shift.data_mut()[i] += go.iter().sum::<f64>();
        for (d, v) in dxhat.row_mut(i).iter_mut().zip(go) {
            *d = g * v;
        }
    }
    let mut mean_d = vec![0.0; t];
    let mut mean_dx = vec![0.0; t];
    for i in 0..c {
        for j in 0..t {
            mean_d[j] += dxhat.row(i)[j];
            mean_dx[j] += dxhat.row(i)[j] * xhat.row(i)[j];
        }
    }
    let cf = c as f64;
    let mut gx = Grid::zeros(&[c, t]);
    for i in 0..c {
        let row = gx.row_mut(i);
        for j in 0..t {
            row[j] = cache.inv_std[j]
                * (dxhat.row(i)[j] - mean_d[j] / cf - xhat.row(i)[j] * mean_dx[j] / cf);
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// pooling

/// Pools each channel over time: `C×T → C`.
pub fn pool_over_time(x: &Grid, mode: PoolMode) -> Result<Grid> {
    require_2d(x, "input rank")?;
    if x.cols() == 0 {
        return Err(Error::TooShort {
            what: "time axis",
            actual: 0,
            minimum: 1,
        });
    }
    Ok(pool_time_forward(x, mode).0)
}

pub(crate) fn pool_time_forward(x: &Grid, mode: PoolMode) -> (Grid, Vec<usize>) {
    let c = x.rows();
    let mut out = Vec::with_capacity(c);
    let mut arg = Vec::new();
    for i in 0..c {
        let r = x.row(i);
        match mode {
            PoolMode::Avg => out.push(r.iter().sum::<f64>() / r.len() as f64),
            PoolMode::Max => {
                let (j, v) = argmax(r);
                arg.push(j);
                out.push(v);
            }
        }
    }
    (Grid::vector(out), arg)
}

/// Pools each time step over channels: `C×T → 1×T`.
pub fn pool_over_channels(x: &Grid, mode: PoolMode) -> Result<Grid> {
    require_2d(x, "input rank")?;
    if x.rows() == 0 {
        return Err(Error::TooShort {
            what: "channel axis",
            actual: 0,
            minimum: 1,
        });
    }
    Ok(pool_channels_forward(x, mode).0)
}

pub(crate) fn pool_channels_forward(x: &Grid, mode: PoolMode) -> (Grid, Vec<usize>) {
    let (c, t) = (x.rows(), x.cols());
    let mut out = Grid::zeros(&[1, t]);
    let mut arg = vec![0usize; if mode == PoolMode::Max { t } else { 0 }];
    match mode {
        PoolMode::Avg => {
            let o = out.row_mut(0);
            for i in 0..c {
                for (a, b) in o.iter_mut().zip(x.row(i)) {
                    *a += b;
                }
            }
            o.iter_mut().for_each(|v| *v /= c as f64);
        }
        PoolMode::Max => {
            let o = out.row_mut(0);
            o.copy_from_slice(x.row(0));
            for i in 1..c {
                for (j, v) in x.row(i).iter().enumerate() {
                    if *v > o[j] {
                        o[j] = *v;
                        arg[j] = i;
                    }
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn pool_channels_backward(grad: &[f64], c: usize, mode: PoolMode, arg: &[usize]) -> Grid {
    let t = grad.len();
    let mut gx = Grid::zeros(&[c, t]);
    match mode {
        PoolMode::Avg => {
            for i in 0..c {
                for (a, g) in gx.row_mut(i).iter_mut().zip(grad) {
                    *a = g / c as f64;
                }
            }
        }
        PoolMode::Max => {
            for (j, g) in grad.iter().enumerate() {
                gx.set(arg[j], j, *g);
            }
        }
    }
    gx
}

/// First index of the maximum.
fn argmax(r: &[f64]) -> (usize, f64) {
    let mut best = (0, r[0]);
    for (j, &v) in r.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// resampling

/// Nearest-neighbor 2× upsampling along time.
pub fn upsample2(x: &Grid) -> Result<Grid> {
    require_2d(x, "input rank")?;
    if x.cols() == 0 {
        return Err(Error::TooShort {
            what: "time axis",
            actual: 0,
            minimum: 1,
        });
    }
    Ok(upsample2_forward(x))
}

pub(crate) fn upsample2_forward(x: &Grid) -> Grid {
    let (c, t) = (x.rows(), x.cols());
    let mut y = Grid::zeros(&[c, 2 * t]);
    for i in 0..c {
        let src = x.row(i);
        for (j, pair) in y.row_mut(i).chunks_exact_mut(2).enumerate() {
            pair[0] = src[j];
            pair[1] = src[j];
        }
    }
    y
}

/// Backward of [`upsample2`] restricted to the first `t_up` output columns.
pub(crate) fn upsample2_backward(grad: &Grid, t_in: usize) -> Grid {
    let c = grad.rows();
    let mut gx = Grid::zeros(&[c, t_in]);
    for i in 0..c {
        let g = grad.row(i);
        let o = gx.row_mut(i);
        for (j, v) in g.iter().enumerate() {
            o[j / 2] += v;
        }
    }
    gx
}

/// Stride-2, window-2 max pooling along time; output length `ceil(T/2)`.
pub fn downsample2(x: &Grid) -> Result<Grid> {
    require_2d(x, "input rank")?;
    if x.cols() == 0 {
        return Err(Error::TooShort {
            what: "time axis",
            actual: 0,
            minimum: 1,
        });
    }
    Ok(downsample2_forward(x).0)
}

pub(crate) fn downsample2_forward(x: &Grid) -> (Grid, Vec<usize>) {
    let (c, t) = (x.rows(), x.cols());
    let to = t.div_ceil(2);
    let mut y = Grid::zeros(&[c, to]);
    let mut arg = Vec::with_capacity(c * to);
    for i in 0..c {
        let src = x.row(i);
        let dst = y.row_mut(i);
        for (j, d) in dst.iter_mut().enumerate() {
            let a = 2 * j;
            let pick = if a + 1 < t && src[a + 1] > src[a] { a + 1 } else { a };
            *d = src[pick];
            arg.push(pick);
        }
    }
    (y, arg)
}

pub(crate) fn downsample2_backward(grad: &Grid, t_in: usize, arg: &[usize]) -> Grid {
    let (c, to) = (grad.rows(), grad.cols());
    let mut gx = Grid::zeros(&[c, t_in]);
    for i in 0..c {
        let g = grad.row(i);
        let o = gx.row_mut(i);
        for j in 0..to {
            o[arg[i * to + j]] += g[j];
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// two-layer MLP

/// `w2 · relu(w1 · v)`, bias-free.
pub fn mlp2(v: &Grid, w1: &Grid, w2: &Grid) -> Result<Grid> {
    let c = v.len();
    if w1.shape().len() != 2 || w1.cols() != c {
        return Err(Error::Shape {
            axis: "mlp input width",
            expected: c,
            actual: w1.shape().last().copied().unwrap_or(0),
        });
    }
    if w2.shape().len() != 2 || w2.cols() != w1.rows() {
        return Err(Error::Shape {
            axis: "mlp hidden width",
            expected: w1.rows(),
            actual: w2.shape().last().copied().unwrap_or(0),
        });
    }
    Ok(mlp2_forward(v.data(), w1, w2).0)
}

pub(crate) fn matvec(w: &Grid, v: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Returns the output and the hidden pre-activation.
pub(crate) fn mlp2_forward(v: &[f64], w1: &Grid, w2: &Grid) -> (Grid, Vec<f64>) {
    let pre = matvec(w1, v);
    let hidden: Vec<f64> = pre.iter().map(|&z| relu(z)).collect();
    (Grid::vector(matvec(w2, &hidden)), pre)
}

pub(crate) fn mlp2_backward(
    v: &[f64],
    pre: &[f64],
    w1: &Grid,
    w2: &Grid,
    grad_out: &[f64],
    grad_w1: &mut Grid,
    grad_w2: &mut Grid,
) -> Vec<f64> {
    let hidden: Vec<f64> = pre.iter().map(|&z| relu(z)).collect();
    let (c, h) = (w2.rows(), w2.cols());
    let mut dh = vec![0.0; h];
    for o in 0..c {
        let g = grad_out[o];
        let gw = grad_w2.row_mut(o);
        for k in 0..h {
            gw[k] += g * hidden[k];
            dh[k] += g * w2.row(o)[k];
        }
    }
    let mut dv = vec![0.0; v.len()];
    for k in 0..h {
        if pre[k] <= 0.0 {
            continue;
        }
        let g = dh[k];
        let gw = grad_w1.row_mut(k);
        for (j, x) in v.iter().enumerate() {
            gw[j] += g * x;
            dv[j] += g * w1.row(k)[j];
        }
    }
    dv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: &[&[f64]]) -> Grid {
        Grid::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn conv_identity_kernel() {
        let x = g(&[&[3.0, -2.0, 5.0]]);
        let k = Grid::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d(&x, &k, Some(&Grid::vector(vec![0.0])), 1).unwrap();
        assert_eq!(y.data(), &[3.0, -2.0, 5.0]);
    }

    #[test]
    fn conv_box_kernel_zero_padding() {
        let x = g(&[&[1.0, 1.0, 1.0, 1.0]]);
        let k = Grid::from_vec(&[1, 1, 3], vec![1.0; 3]).unwrap();
        let y = conv1d(&x, &k, None, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let x = Grid::zeros(&[2, 5]);
        let k = Grid::zeros(&[1, 3, 3]);
        let err = conv1d(&x, &k, None, 1).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
        let k = Grid::zeros(&[1, 2, 4]);
        assert!(conv1d(&x, &k, None, 1).is_err());
        let k = Grid::zeros(&[1, 2, 3]);
        assert!(conv1d(&x, &k, None, 0).is_err());
        assert!(conv1d(&x, &k, Some(&Grid::zeros(&[2])), 1).is_err());
    }

    #[test]
    fn dilated_conv_length_preserved() {
        let x = Grid::filled(&[1, 3], 1.0);
        let k = Grid::from_vec(&[1, 1, 5], vec![1.0; 5]).unwrap();
        let y = conv1d(&x, &k, None, 3).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn layer_norm_constant_column_is_zero() {
        let x = g(&[&[2.0], &[2.0]]);
        let y = layer_norm(&x, &Grid::filled(&[2], 1.0), &Grid::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let x1 = g(&[&[4.0, -1.0]]);
        let y1 = layer_norm(&x1, &Grid::filled(&[1], 1.0), &Grid::zeros(&[1])).unwrap();
        assert_eq!(y1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn layer_norm_closed_form() {
        let x = g(&[&[1.0], &[3.0]]);
        let y = layer_norm(&x, &Grid::filled(&[2], 1.0), &Grid::zeros(&[2])).unwrap();
        let d = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + d).abs() < 1e-9);
        assert!((y.data()[1] - d).abs() < 1e-9);
        let z = layer_norm(&x, &Grid::zeros(&[2]), &Grid::zeros(&[2])).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn pools() {
        let x = g(&[&[1.0, 3.0], &[2.0, 2.0]]);
        assert_eq!(pool_over_time(&x, PoolMode::Avg).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(pool_over_time(&x, PoolMode::Max).unwrap().data(), &[3.0, 2.0]);
        let x = g(&[&[1.0, 3.0], &[3.0, 1.0]]);
        assert_eq!(pool_over_channels(&x, PoolMode::Avg).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(pool_over_channels(&x, PoolMode::Max).unwrap().data(), &[3.0, 3.0]);
        assert!(pool_over_time(&Grid::zeros(&[2, 0]), PoolMode::Avg).is_err());
    }

    #[test]
    fn resampling() {
        let x = g(&[&[1.0, 2.0]]);
        assert_eq!(upsample2(&x).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
        let x = g(&[&[1.0, 4.0, 2.0, 2.0, 7.0]]);
        assert_eq!(downsample2(&x).unwrap().data(), &[4.0, 2.0, 7.0]);
        assert!(downsample2(&Grid::zeros(&[1, 0])).is_err());
    }

    #[test]
    fn mlp_scalar_chain() {
        let v = Grid::vector(vec![1.0]);
        let w1 = Grid::from_rows(&[vec![2.0]]);
        let w2 = Grid::from_rows(&[vec![3.0]]);
        assert_eq!(mlp2(&v, &w1, &w2).unwrap().data(), &[6.0]);
        let z = mlp2(&v, &Grid::zeros(&[1, 1]), &Grid::zeros(&[1, 1])).unwrap();
        assert_eq!(z.data(), &[0.0]);
        assert!(mlp2(&v, &Grid::zeros(&[1, 2]), &w2).is_err());
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
    }
}
