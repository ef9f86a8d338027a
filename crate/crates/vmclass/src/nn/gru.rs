//! Gated recurrent unit with separate input/recurrent biases.
//!
//! Per timestep, with sigmoid s and elementwise *:
//!
//! ```text
//! u    = s(x W_ux^T + b_ux + h_prev W_uh^T + b_uh)     update gate
//! r    = s(x W_rx^T + b_rx + h_prev W_rh^T + b_rh)     reset gate
//! cand = tanh(x W_cx^T + b_cx + (r * h_prev) W_ch^T + b_ch)
//! h    = (1 - u) * h_prev + u * cand
//! ```
//!
//! The reset gate is applied to `h_prev` before the recurrent matmul. Every
//! intermediate needed by backprop is kept in a per-step cache so the full
//! sequence can be unrolled in reverse.

use crate::error::Result;
use crate::nn::grid::{gemm_nn_acc, gemm_tn_acc, Grid};
use crate::nn::layers::{dims2, dims3, fc_forward};

#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_ux: Grid,
    pub w_uh: Grid,
    pub b_ux: Grid,
    pub b_uh: Grid,
    pub w_rx: Grid,
    pub w_rh: Grid,
    pub b_rx: Grid,
    pub b_rh: Grid,
    pub w_cx: Grid,
    pub w_ch: Grid,
    pub b_cx: Grid,
    pub b_ch: Grid,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ux: Grid::zeros(&[hidden, input]),
            w_uh: Grid::zeros(&[hidden, hidden]),
            b_ux: Grid::zeros(&[hidden]),
            b_uh: Grid::zeros(&[hidden]),
            w_rx: Grid::zeros(&[hidden, input]),
            w_rh: Grid::zeros(&[hidden, hidden]),
            b_rx: Grid::zeros(&[hidden]),
            b_rh: Grid::zeros(&[hidden]),
            w_cx: Grid::zeros(&[hidden, input]),
            w_ch: Grid::zeros(&[hidden, hidden]),
            b_cx: Grid::zeros(&[hidden]),
            b_ch: Grid::zeros(&[hidden]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input(), self.hidden())
    }

    pub fn input(&self) -> usize {
        self.w_ux.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_ux.shape()[0]
    }

    pub fn grids(&self) -> [(&'static str, &Grid); 12] {
        [
            ("gru.w_ux", &self.w_ux),
            ("gru.w_uh", &self.w_uh),
            ("gru.b_ux", &self.b_ux),
            ("gru.b_uh", &self.b_uh),
            ("gru.w_rx", &self.w_rx),
            ("gru.w_rh", &self.w_rh),
            ("gru.b_rx", &self.b_rx),
            ("gru.b_rh", &self.b_rh),
            ("gru.w_cx", &self.w_cx),
            ("gru.w_ch", &self.w_ch),
            ("gru.b_cx", &self.b_cx),
            ("gru.b_ch", &self.b_ch),
        ]
    }

    pub fn grids_mut(&mut self) -> [(&'static str, &mut Grid); 12] {
        [
            ("gru.w_ux", &mut self.w_ux),
            ("gru.w_uh", &mut self.w_uh),
            ("gru.b_ux", &mut self.b_ux),
            ("gru.b_uh", &mut self.b_uh),
            ("gru.w_rx", &mut self.w_rx),
            ("gru.w_rh", &mut self.w_rh),
            ("gru.b_rx", &mut self.b_rx),
            ("gru.b_rh", &mut self.b_rh),
            ("gru.w_cx", &mut self.w_cx),
            ("gru.w_ch", &mut self.w_ch),
            ("gru.b_cx", &mut self.b_cx),
            ("gru.b_ch", &mut self.b_ch),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.grids().iter().map(|(_, g)| g.len()).sum()
    }
}

/// Everything the backward pass needs from one timestep.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Grid,
    pub h_prev: Grid,
    pub u: Grid,
    pub r: Grid,
    pub cand: Grid,
    pub rh: Grid,
}

fn sigmoid_inplace(g: &mut Grid) {
    g.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
}

fn add_assign(a: &mut Grid, b: &Grid) {
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

/// One GRU step. x: [batch, input], h_prev: [batch, hidden].
pub fn gru_cell(x: &Grid, h_prev: &Grid, p: &GruParams) -> Result<(Grid, GruStepCache)> {
    let mut u = fc_forward(x, &p.w_ux, &p.b_ux)?;
    add_assign(&mut u, &fc_forward(h_prev, &p.w_uh, &p.b_uh)?);
    sigmoid_inplace(&mut u);

    let mut r = fc_forward(x, &p.w_rx, &p.b_rx)?;
    add_assign(&mut r, &fc_forward(h_prev, &p.w_rh, &p.b_rh)?);
    sigmoid_inplace(&mut r);

    let mut rh = r.clone();
    for (v, &h) in rh.data_mut().iter_mut().zip(h_prev.data()) {
        *v *= h;
    }

    let mut cand = fc_forward(x, &p.w_cx, &p.b_cx)?;
    add_assign(&mut cand, &fc_forward(&rh, &p.w_ch, &p.b_ch)?);
    cand.data_mut().iter_mut().for_each(|v| *v = v.tanh());

    let mut h = h_prev.clone();
    for ((hv, &uv), &cv) in h.data_mut().iter_mut().zip(u.data()).zip(cand.data()) {
        *hv = (1.0 - uv) * *hv + uv * cv;
    }

    let cache = GruStepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        u,
        r,
        cand,
        rh,
    };
    Ok((h, cache))
}

/// Run the cell over a [batch, steps, input] sequence from a zero initial
/// state and return the final hidden state plus per-step caches.
pub fn gru_sequence(xs: &Grid, p: &GruParams) -> Result<(Grid, Vec<GruStepCache>)> {
    let (batch, steps, input) = dims3(xs, "gru_sequence input")?;
    let mut h = Grid::zeros(&[batch, p.hidden()]);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut xt = Grid::zeros(&[batch, input]);
        for b in 0..batch {
            let src = &xs.data()[(b * steps + t) * input..(b * steps + t + 1) * input];
            xt.data_mut()[b * input..(b + 1) * input].copy_from_slice(src);
        }
        let (h_next, cache) = gru_cell(&xt, &h, p)?;
        h = h_next;
        caches.push(cache);
    }
    Ok((h, caches))
}

/// Backprop one step. Adds parameter gradients into `grads`, consumes the
/// gradient w.r.t. h_t and returns (dh_prev, dx).
pub fn gru_cell_backward(
    dh: &Grid,
    cache: &GruStepCache,
    p: &GruParams,
    grads: &mut GruParams,
) -> Result<(Grid, Grid)> {
    let (batch, hidden) = dims2(dh, "gru_cell_backward upstream")?;
    let input = p.input();

    // Gate-local gradients.
    let mut d_pre_u = Grid::zeros(&[batch, hidden]);
    let mut d_pre_c = Grid::zeros(&[batch, hidden]);
    let mut dh_prev = Grid::zeros(&[batch, hidden]);
    {
        let dhd = dh.data();
        let ud = cache.u.data();
        let cd = cache.cand.data();
        let hpd = cache.h_prev.data();
        let dud = d_pre_u.data_mut();
        let dcd = d_pre_c.data_mut();
        let dhp = dh_prev.data_mut();
        for i in 0..batch * hidden {
            let du = dhd[i] * (cd[i] - hpd[i]);
            let dcand = dhd[i] * ud[i];
            dhp[i] = dhd[i] * (1.0 - ud[i]);
            dud[i] = du * ud[i] * (1.0 - ud[i]);
            dcd[i] = dcand * (1.0 - cd[i] * cd[i]);
        }
    }

    // Candidate branch: pre-activation flows to x, W_cx, and through W_ch to
    // the reset product r * h_prev.
    let mut d_rh = Grid::zeros(&[batch, hidden]);
    gemm_nn_acc(
        d_pre_c.data(),
        batch,
        hidden,
        p.w_ch.data(),
        hidden,
        d_rh.data_mut(),
    );
    let mut d_pre_r = Grid::zeros(&[batch, hidden]);
    {
        let drh = d_rh.data();
        let rd = cache.r.data();
        let hpd = cache.h_prev.data();
        let dhp = dh_prev.data_mut();
        let drd = d_pre_r.data_mut();
        for i in 0..batch * hidden {
            let dr = drh[i] * hpd[i];
            dhp[i] += drh[i] * rd[i];
            drd[i] = dr * rd[i] * (1.0 - rd[i]);
        }
    }

    // Shared wiring per gate: dx += d_pre . W_x, dW_x += d_pre^T . x,
    // db_x += colsum(d_pre), and the same for the recurrent side whose input
    // is h_prev for u/r but r * h_prev for the candidate. The candidate's
    // recurrent input gradient was already routed through d_rh above, so
    // `into_h_prev` is false for it.
    let mut dx = Grid::zeros(&[batch, input]);
    let gates: [(&Grid, &Grid, &Grid, &Grid, bool); 3] = [
        (&d_pre_u, &p.w_ux, &p.w_uh, &cache.h_prev, true),
        (&d_pre_r, &p.w_rx, &p.w_rh, &cache.h_prev, true),
        (&d_pre_c, &p.w_cx, &p.w_ch, &cache.rh, false),
    ];
    for (d_pre, _, wh, _, into_h_prev) in gates {
        if into_h_prev {
            gemm_nn_acc(
                d_pre.data(),
                batch,
                hidden,
                wh.data(),
                hidden,
                dh_prev.data_mut(),
            );
        }
    }
    for (d_pre, wx, _, _, _) in gates {
        gemm_nn_acc(d_pre.data(), batch, hidden, wx.data(), input, dx.data_mut());
    }
    let grad_slots = [
        (
            &d_pre_u,
            &cache.h_prev,
            &mut grads.w_ux,
            &mut grads.w_uh,
            &mut grads.b_ux,
            &mut grads.b_uh,
        ),
        (
            &d_pre_r,
            &cache.h_prev,
            &mut grads.w_rx,
            &mut grads.w_rh,
            &mut grads.b_rx,
            &mut grads.b_rh,
        ),
        (
            &d_pre_c,
            &cache.rh,
            &mut grads.w_cx,
            &mut grads.w_ch,
            &mut grads.b_cx,
            &mut grads.b_ch,
        ),
    ];
    for (d_pre, h_in, gwx, gwh, gbx, gbh) in grad_slots {
        gemm_tn_acc(
            d_pre.data(),
            batch,
            hidden,
            cache.x.data(),
            input,
            gwx.data_mut(),
        );
        gemm_tn_acc(
            d_pre.data(),
            batch,
            hidden,
            h_in.data(),
            hidden,
            gwh.data_mut(),
        );
        col_sum_acc(d_pre, gbx);
        col_sum_acc(d_pre, gbh);
    }

    Ok((dh_prev, dx))
}

/// Backprop a whole sequence given the gradient at the final hidden state.
/// Returns parameter gradients and the gradient w.r.t. the input sequence.
pub fn gru_sequence_backward(
    dh_final: &Grid,
    caches: &[GruStepCache],
    p: &GruParams,
) -> Result<(GruParams, Grid)> {
    let (batch, _) = dims2(dh_final, "gru_sequence_backward upstream")?;
    let steps = caches.len();
    let input = p.input();
    let mut grads = p.zeros_like();
    let mut dxs = Grid::zeros(&[batch, steps, input]);
    let mut dh = dh_final.clone();
    for t in (0..steps).rev() {
        let (dh_prev, dx) = gru_cell_backward(&dh, &caches[t], p, &mut grads)?;
        for b in 0..batch {
            dxs.data_mut()[(b * steps + t) * input..(b * steps + t + 1) * input]
                .copy_from_slice(&dx.data()[b * input..(b + 1) * input]);
        }
        dh = dh_prev;
    }
    Ok((grads, dxs))
}

fn col_sum_acc(m: &Grid, out: &mut Grid) {
    let cols = out.len();
    let rows = m.len() / cols;
    let md = m.data();
    let od = out.data_mut();
    for r in 0..rows {
        for c in 0..cols {
            od[c] += md[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_params(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruParams {
        let mut p = GruParams::zeros(input, hidden);
        for (_, g) in p.grids_mut() {
            for v in g.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        p
    }

    fn rand_grid(shape: &[usize], rng: &mut ChaCha8Rng) -> Grid {
        let n: usize = shape.iter().product();
        Grid::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        // All-zero parameters: u = r = 0.5, cand = 0, so h = 0.5 * h_prev.
        let p = GruParams::zeros(3, 4);
        let x = Grid::from_vec(&[1, 3], vec![5.0, -2.0, 9.0]).unwrap();
        let h_prev = Grid::from_vec(&[1, 4], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let (h, _) = gru_cell(&x, &h_prev, &p).unwrap();
        assert_eq!(h.data(), &[0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn state_is_convex_mix_of_prev_and_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = rand_params(5, 6, &mut rng);
        let x = rand_grid(&[4, 5], &mut rng);
        let h_prev = rand_grid(&[4, 6], &mut rng);
        let (h, cache) = gru_cell(&x, &h_prev, &p).unwrap();
        for i in 0..h.len() {
            let lo = cache.h_prev.data()[i].min(cache.cand.data()[i]);
            let hi = cache.h_prev.data()[i].max(cache.cand.data()[i]);
            assert!(
                h.data()[i] >= lo - 1e-12 && h.data()[i] <= hi + 1e-12,
                "element {i} escaped [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let p = GruParams::zeros(64, 64);
        assert_eq!(p.param_count(), 3 * (64 * 64 + 64 * 64 + 64 + 64));
        assert_eq!(p.param_count(), 24_960);
    }

    #[test]
    fn sequence_final_state_matches_stepwise_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = rand_params(3, 4, &mut rng);
        let xs = rand_grid(&[2, 3, 3], &mut rng);
        let (h_seq, caches) = gru_sequence(&xs, &p).unwrap();
        assert_eq!(caches.len(), 3);

        let mut h = Grid::zeros(&[2, 4]);
        for t in 0..3 {
            let mut xt = Grid::zeros(&[2, 3]);
            for b in 0..2 {
                xt.data_mut()[b * 3..(b + 1) * 3]
                    .copy_from_slice(&xs.data()[(b * 3 + t) * 3..(b * 3 + t + 1) * 3]);
            }
            let (next, _) = gru_cell(&xt, &h, &p).unwrap();
            h = next;
        }
        for i in 0..h.len() {
            assert!((h.data()[i] - h_seq.data()[i]).abs() < 1e-14);
        }
    }

    /// Scalar loss used by the finite-difference tests: a fixed random
    /// projection of the final hidden state.
    fn projected_loss(xs: &Grid, p: &GruParams, proj: &[f64]) -> f64 {
        let (h, _) = gru_sequence(xs, p).unwrap();
        let (batch, hidden) = (h.shape()[0], h.shape()[1]);
        let mut loss = 0.0;
        for b in 0..batch {
            for i in 0..hidden {
                loss += proj[i] * h.data()[b * hidden + i];
            }
        }
        loss
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut p = rand_params(3, 4, &mut rng);
        let xs = rand_grid(&[2, 3, 3], &mut rng);
        let proj: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (_, caches) = gru_sequence(&xs, &p).unwrap();
        let mut dh = Grid::zeros(&[2, 4]);
        for b in 0..2 {
            dh.data_mut()[b * 4..(b + 1) * 4].copy_from_slice(&proj);
        }
        let (grads, dxs) = gru_sequence_backward(&dh, &caches, &p).unwrap();

        let eps = 1e-6;
        // Parameter gradients against central differences.
        let analytic: Vec<(&'static str, Vec<f64>)> = grads
            .grids()
            .iter()
            .map(|(n, g)| (*n, g.data().to_vec()))
            .collect();
        for (g_idx, (name, a)) in analytic.iter().enumerate() {
            let len = a.len();
            for i in 0..len {
                let orig = p.grids()[g_idx].1.data()[i];
                p.grids_mut()[g_idx].1.data_mut()[i] = orig + eps;
                let up = projected_loss(&xs, &p, &proj);
                p.grids_mut()[g_idx].1.data_mut()[i] = orig - eps;
                let down = projected_loss(&xs, &p, &proj);
                p.grids_mut()[g_idx].1.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let denom = (numeric.abs() + a[i].abs()).max(1e-8);
                assert!(
                    (numeric - a[i]).abs() / denom < 1e-5,
                    "{name}[{i}]: numeric {numeric} vs analytic {}",
                    a[i]
                );
            }
        }
        // Input gradients.
        let mut xs_var = xs.clone();
        for i in 0..xs_var.len() {
            let orig = xs_var.data()[i];
            xs_var.data_mut()[i] = orig + eps;
            let up = projected_loss(&xs_var, &p, &proj);
            xs_var.data_mut()[i] = orig - eps;
            let down = projected_loss(&xs_var, &p, &proj);
            xs_var.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = dxs.data()[i];
            let denom = (numeric.abs() + a.abs()).max(1e-8);
            assert!(
                (numeric - a).abs() / denom < 1e-5,
                "dx[{i}]: numeric {numeric} vs analytic {a}"
            );
        }
    }
}
