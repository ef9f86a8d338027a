//! Forward and backward passes for the individual layers: 1-d convolution,
//! ReLU, max pooling, the fully connected head, inverted dropout and softmax.
//!
//! Backward functions take the upstream gradient and return gradients for
//! parameters and inputs, so each layer can be finite-difference checked in
//! isolation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::grid::{gemm_nn_acc, gemm_nt, gemm_tn_acc, Grid};

/// Valid (no padding) cross-correlation plus per-filter bias.
///
/// x: [batch, in_ch, len], weight: [filters, in_ch, kernel], bias: [filters]
/// -> [batch, filters, len - kernel + 1]
pub fn conv1d_forward(x: &Grid, weight: &Grid, bias: &Grid) -> Result<Grid> {
    let (batch, in_ch, len) = dims3(x, "conv1d_forward input")?;
    let (filters, w_in_ch, kernel) = dims3(weight, "conv1d_forward weight")?;
    if w_in_ch != in_ch || bias.shape() != [filters] || kernel > len {
        return Err(Error::ShapeMismatch {
            op: "conv1d_forward",
            expected: format!("weight [{filters},{in_ch},k<=len], bias [{filters}]"),
            got: format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
        });
    }
    let out_len = len - kernel + 1;
    let mut out = Grid::zeros(&[batch, filters, out_len]);
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let od = out.data_mut();
    for b in 0..batch {
        for f in 0..filters {
            let orow = &mut od[(b * filters + f) * out_len..(b * filters + f + 1) * out_len];
            orow.iter_mut().for_each(|v| *v = bd[f]);
            for c in 0..in_ch {
                let xrow = &xd[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                let wrow = &wd[(f * in_ch + c) * kernel..(f * in_ch + c + 1) * kernel];
                for (p, o) in orow.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..kernel {
                        acc += wrow[k] * xrow[p + k];
                    }
                    *o += acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of conv1d w.r.t. weight, bias and input.
pub fn conv1d_backward(dy: &Grid, x: &Grid, weight: &Grid) -> Result<(Grid, Grid, Grid)> {
    let (batch, in_ch, len) = dims3(x, "conv1d_backward input")?;
    let (filters, _, kernel) = dims3(weight, "conv1d_backward weight")?;
    let out_len = len - kernel + 1;
    dy.expect_shape("conv1d_backward upstream", &[batch, filters, out_len])?;

    let mut dw = Grid::zeros_like(weight);
    let mut db = Grid::zeros(&[filters]);
    let mut dx = Grid::zeros_like(x);
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();
    {
        let dwd = dw.data_mut();
        for b in 0..batch {
            for f in 0..filters {
                let dyrow = &dyd[(b * filters + f) * out_len..(b * filters + f + 1) * out_len];
                for c in 0..in_ch {
                    let xrow = &xd[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                    let dwrow =
                        &mut dwd[(f * in_ch + c) * kernel..(f * in_ch + c + 1) * kernel];
                    for (p, &g) in dyrow.iter().enumerate() {
                        for k in 0..kernel {
                            dwrow[k] += g * xrow[p + k];
                        }
                    }
                }
            }
        }
    }
    {
        let dbd = db.data_mut();
        for b in 0..batch {
            for f in 0..filters {
                let dyrow = &dyd[(b * filters + f) * out_len..(b * filters + f + 1) * out_len];
                dbd[f] += dyrow.iter().sum::<f64>();
            }
        }
    }
    {
        let dxd = dx.data_mut();
        for b in 0..batch {
            for f in 0..filters {
                let dyrow = &dyd[(b * filters + f) * out_len..(b * filters + f + 1) * out_len];
                for c in 0..in_ch {
                    let wrow = &wd[(f * in_ch + c) * kernel..(f * in_ch + c + 1) * kernel];
                    let dxrow = &mut dxd[(b * in_ch + c) * len..(b * in_ch + c + 1) * len];
                    for (p, &g) in dyrow.iter().enumerate() {
                        for k in 0..kernel {
                            dxrow[p + k] += g * wrow[k];
                        }
                    }
                }
            }
        }
    }
    Ok((dw, db, dx))
}

pub fn relu(x: &Grid) -> Grid {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    out
}

/// dy masked by the positive entries of the forward output.
pub fn relu_backward(dy: &Grid, y: &Grid) -> Grid {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Non-overlapping max pooling over the last axis; the trailing remainder is
/// dropped. Ties resolve to the first index. Returns the pooled grid and the
/// winning input position for every output element (for backprop).
pub fn maxpool1d(x: &Grid, window: usize) -> Result<(Grid, Vec<usize>)> {
    let (batch, ch, len) = dims3(x, "maxpool1d input")?;
    if window == 0 || len < window {
        return Err(Error::ShapeMismatch {
            op: "maxpool1d",
            expected: format!("len >= window ({window})"),
            got: format!("len {len}"),
        });
    }
    let out_len = len / window;
    let mut out = Grid::zeros(&[batch, ch, out_len]);
    let mut argmax = vec![0usize; batch * ch * out_len];
    let xd = x.data();
    let od = out.data_mut();
    for bc in 0..batch * ch {
        let xrow = &xd[bc * len..(bc + 1) * len];
        for p in 0..out_len {
            let start = p * window;
            let mut best = xrow[start];
            let mut best_k = start;
            for k in start + 1..start + window {
                if xrow[k] > best {
                    best = xrow[k];
                    best_k = k;
                }
            }
            od[bc * out_len + p] = best;
            argmax[bc * out_len + p] = best_k;
        }
    }
    Ok((out, argmax))
}

/// Scatter upstream gradients back to the argmax positions.
pub fn maxpool1d_backward(dy: &Grid, argmax: &[usize], in_len: usize) -> Result<Grid> {
    let (batch, ch, out_len) = dims3(dy, "maxpool1d_backward upstream")?;
    let mut dx = Grid::zeros(&[batch, ch, in_len]);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for bc in 0..batch * ch {
        for p in 0..out_len {
            let src = bc * out_len + p;
            dxd[bc * in_len + argmax[src]] += dyd[src];
        }
    }
    Ok(dx)
}

/// Affine map h -> h * W^T + b.  h: [batch, in], w: [out, in], b: [out].
pub fn fc_forward(h: &Grid, weight: &Grid, bias: &Grid) -> Result<Grid> {
    let (batch, inf) = dims2(h, "fc_forward input")?;
    let (outf, w_in) = dims2(weight, "fc_forward weight")?;
    if w_in != inf || bias.shape() != [outf] {
        return Err(Error::ShapeMismatch {
            op: "fc_forward",
            expected: format!("weight [out,{inf}], bias [out]"),
            got: format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
        });
    }
    let mut out = Grid::zeros(&[batch, outf]);
    gemm_nt(h.data(), batch, inf, weight.data(), outf, out.data_mut());
    let od = out.data_mut();
    let bd = bias.data();
    for b in 0..batch {
        for o in 0..outf {
            od[b * outf + o] += bd[o];
        }
    }
    Ok(out)
}

/// Returns (dW, db, dh).
pub fn fc_backward(dy: &Grid, h: &Grid, weight: &Grid) -> Result<(Grid, Grid, Grid)> {
    let (batch, inf) = dims2(h, "fc_backward input")?;
    let (outf, _) = dims2(weight, "fc_backward weight")?;
    dy.expect_shape("fc_backward upstream", &[batch, outf])?;

    let mut dw = Grid::zeros_like(weight);
    gemm_tn_acc(dy.data(), batch, outf, h.data(), inf, dw.data_mut());

    let mut db = Grid::zeros(&[outf]);
    let dbd = db.data_mut();
    for b in 0..batch {
        for o in 0..outf {
            dbd[o] += dy.data()[b * outf + o];
        }
    }

    let mut dh = Grid::zeros_like(h);
    gemm_nn_acc(dy.data(), batch, outf, weight.data(), inf, dh.data_mut());
    Ok((dw, db, dh))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); eval mode is the identity.
/// The returned mask holds the factor applied per element and is what the
/// backward pass multiplies by.
pub fn dropout<R: Rng + ?Sized>(
    x: &Grid,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Grid, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::BadDropoutRate(rate));
    }
    match mode {
        Mode::Eval => Ok((x.clone(), vec![1.0; x.len()])),
        Mode::Train => {
            let keep_scale = 1.0 / (1.0 - rate);
            let mut out = x.clone();
            let mut mask = vec![0.0; x.len()];
            for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
                let u: f64 = rng.random();
                if u < rate {
                    *v = 0.0;
                    *m = 0.0;
                } else {
                    *v *= keep_scale;
                    *m = keep_scale;
                }
            }
            Ok((out, mask))
        }
    }
}

pub fn dropout_backward(dy: &Grid, mask: &[f64]) -> Grid {
    let mut dx = dy.clone();
    for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
        *d *= m;
    }
    dx
}

/// Row-wise softmax, computed shift-invariantly (row max subtracted).
pub fn softmax(scores: &Grid) -> Result<Grid> {
    let (batch, k) = dims2(scores, "softmax input")?;
    let mut out = scores.clone();
    let od = out.data_mut();
    for b in 0..batch {
        let row = &mut od[b * k..(b + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub(crate) fn dims2(g: &Grid, op: &'static str) -> Result<(usize, usize)> {
    match g.shape() {
        [a, b] => Ok((*a, *b)),
        other => Err(Error::ShapeMismatch {
            op: "dims2",
            expected: format!("2-d grid for {op}"),
            got: format!("{:?}", other),
        }),
    }
}

pub(crate) fn dims3(g: &Grid, op: &'static str) -> Result<(usize, usize, usize)> {
    match g.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        other => Err(Error::ShapeMismatch {
            op: "dims3",
            expected: format!("3-d grid for {op}"),
            got: format!("{:?}", other),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_grid(shape: &[usize], rng: &mut ChaCha8Rng) -> Grid {
        use rand::Rng;
        let n: usize = shape.iter().product();
        Grid::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_zero_weights_give_bias() {
        let x = Grid::from_vec(&[1, 1, 9], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Grid::zeros(&[2, 1, 3]);
        let b = Grid::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let y = conv1d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 7]);
        assert!(y.data()[..7].iter().all(|&v| v == 0.5));
        assert!(y.data()[7..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_identity_kernel_shifts() {
        // kernel [0,1,0] picks the middle of each window: input 1..9 -> 2..8
        let x = Grid::from_vec(&[1, 1, 9], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Grid::from_vec(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let b = Grid::zeros(&[1]);
        let y = conv1d_forward(&x, &w, &b).unwrap();
        let expected: Vec<f64> = (2..=8).map(|v| v as f64).collect();
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn conv_matches_sliding_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_grid(&[1, 1, 9], &mut rng);
        let w = rand_grid(&[4, 1, 3], &mut rng);
        let b = rand_grid(&[4], &mut rng);
        let y = conv1d_forward(&x, &w, &b).unwrap();
        for f in 0..4 {
            for p in 0..7 {
                let mut expect = b.data()[f];
                for k in 0..3 {
                    expect += w.data()[f * 3 + k] * x.data()[p + k];
                }
                let got = y.data()[f * 7 + p];
                assert!((got - expect).abs() < 1e-12, "f={f} p={p}");
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_is_error() {
        let x = Grid::zeros(&[1, 1, 2]);
        let w = Grid::zeros(&[1, 1, 3]); // kernel 3 > input 2
        let b = Grid::zeros(&[1]);
        assert!(conv1d_forward(&x, &w, &b).is_err());
    }

    #[test]
    fn maxpool_hand_example() {
        let x = Grid::from_vec(&[1, 1, 7], vec![5.0, 1.0, 3.0, 9.0, 2.0, 2.0, 7.0]).unwrap();
        let (y, idx) = maxpool1d(&x, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0, 2.0]);
        assert_eq!(idx, vec![0, 3, 4]);
    }

    #[test]
    fn maxpool_constant_ties_to_first_index() {
        let x = Grid::from_vec(&[1, 1, 6], vec![2.0; 6]).unwrap();
        let (y, idx) = maxpool1d(&x, 2).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 2.0]);
        assert_eq!(idx, vec![0, 2, 4]);
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_grid(&[2, 3, 7], &mut rng);
        let (y, _) = maxpool1d(&x, 2).unwrap();
        for bc in 0..6 {
            for p in 0..3 {
                let win = &x.data()[bc * 7 + p * 2..bc * 7 + p * 2 + 2];
                let expect = win.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                assert_eq!(y.data()[bc * 3 + p], expect);
            }
        }
    }

    #[test]
    fn fc_zero_weight_gives_bias() {
        let h = Grid::from_vec(&[3, 4], vec![0.25; 12]).unwrap();
        let w = Grid::zeros(&[2, 4]);
        let b = Grid::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let y = fc_forward(&h, &w, &b).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), &[1.0, -1.0]);
        }
    }

    #[test]
    fn fc_identity_rows_select_components() {
        let h = Grid::from_vec(&[1, 3], vec![0.3, 0.7, -0.2]).unwrap();
        let w = Grid::from_vec(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Grid::zeros(&[2]);
        let y = fc_forward(&h, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.3, -0.2]);
    }

    #[test]
    fn fc_matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = rand_grid(&[3, 6], &mut rng);
        let w = rand_grid(&[2, 6], &mut rng);
        let b = rand_grid(&[2], &mut rng);
        let y = fc_forward(&h, &w, &b).unwrap();
        for r in 0..3 {
            for o in 0..2 {
                let mut expect = b.data()[o];
                for i in 0..6 {
                    expect += h.data()[r * 6 + i] * w.data()[o * 6 + i];
                }
                assert!((y.data()[r * 2 + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Grid::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, -5.0, 6.0]).unwrap();
        let (y, _) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        let (y, _) = dropout(&x, 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_eval_is_identity_for_any_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Grid::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, mask) = dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_rate_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Grid::zeros(&[1, 4]);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_empirical_zero_fraction() {
        // 10^5 ones at rate 0.4: zero fraction must land within 0.4 +- 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Grid::from_vec(&[1, 100_000], vec![1.0; 100_000]).unwrap();
        let (y, _) = dropout(&x, 0.4, Mode::Train, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / 100_000.0;
        assert!((frac - 0.4).abs() < 0.01, "zero fraction {frac}");
        // survivors carry the 1/(1-rate) scale
        let survivor = y.data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((survivor - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn softmax_symmetry_and_large_inputs() {
        let s = Grid::from_vec(&[2, 2], vec![0.0, 0.0, 1000.0, 1000.0]).unwrap();
        let p = softmax(&s).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
        assert!((p.data()[1] - 0.5).abs() < 1e-12);
        assert!((p.data()[2] - 0.5).abs() < 1e-12, "must not overflow");
        assert!((p.data()[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_log3_gap_gives_quarter() {
        // (c, c + ln 3) -> (0.25, 0.75) for any c
        for c in [-40.0, 0.0, 7.5] {
            let s = Grid::from_vec(&[1, 2], vec![c, c + 3.0f64.ln()]).unwrap();
            let p = softmax(&s).unwrap();
            assert!((p.data()[0] - 0.25).abs() < 1e-12);
            assert!((p.data()[1] - 0.75).abs() < 1e-12);
        }
    }
}
