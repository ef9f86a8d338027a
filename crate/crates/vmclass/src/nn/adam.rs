//! Adam optimizer with bias-corrected first and second moments.
//!
//! Moments are kept per parameter grid, in the same order the grids are
//! handed to [`Adam::step`], so the optimizer state can be checkpointed and
//! restored alongside the parameters.

use crate::error::{Error, Result};
use crate::nn::grid::Grid;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Grid>,
    v: Vec<Grid>,
}

impl Adam {
    /// Fresh optimizer over grids of the given shapes, zero moments.
    pub fn new(lr: f64, shapes: &[&[usize]]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Grid::zeros(s)).collect(),
            v: shapes.iter().map(|s| Grid::zeros(s)).collect(),
        }
    }

    /// Rebuild optimizer state from checkpointed moments.
    pub fn from_parts(lr: f64, step: u64, m: Vec<Grid>, v: Vec<Grid>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::BadCheckpoint(
                "optimizer moment shapes disagree".into(),
            ));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step,
            m,
            v,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Grid], &[Grid]) {
        (&self.m, &self.v)
    }

    /// One update: advance the step counter, fold the gradients into the
    /// moment estimates and move every parameter.
    pub fn step(&mut self, params: &mut [&mut Grid], grads: &[&Grid]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                expected: format!("{} grids", self.m.len()),
                got: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            p.expect_shape("adam_step param", m.shape())?;
            g.expect_shape("adam_step grad", m.shape())?;
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Grid::from_vec(&[2], vec![1.5, -0.5]).unwrap();
        let g = Grid::zeros(&[2]);
        let mut opt = Adam::new(0.01, &[&[2]]);
        opt.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.data(), &[1.5, -0.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With bias correction, m_hat = g and v_hat = g^2 on step one, so the
        // update is lr * sign(g) regardless of |g|.
        for &g0 in &[0.001, 1.0, 250.0, -3.5] {
            let mut p = Grid::from_vec(&[1], vec![0.0]).unwrap();
            let g = Grid::from_vec(&[1], vec![g0]).unwrap();
            let mut opt = Adam::new(0.01, &[&[1]]);
            opt.step(&mut [&mut p], &[&g]).unwrap();
            let expected = -0.01 * g0.signum();
            assert!(
                (p.data()[0] - expected).abs() < 1e-6,
                "g0 = {g0}: step {}",
                p.data()[0]
            );
        }
    }

    #[test]
    fn moments_follow_hand_computed_recurrence() {
        let mut p = Grid::from_vec(&[1], vec![0.0]).unwrap();
        let mut opt = Adam::new(0.01, &[&[1]]);
        let seq = [2.0, -1.0, 0.5];
        let (mut m, mut v) = (0.0, 0.0);
        for (t, &gv) in seq.iter().enumerate() {
            let g = Grid::from_vec(&[1], vec![gv]).unwrap();
            opt.step(&mut [&mut p], &[&g]).unwrap();
            m = 0.9 * m + 0.1 * gv;
            v = 0.999 * v + 0.001 * gv * gv;
            let (om, ov) = opt.moments();
            assert!((om[0].data()[0] - m).abs() < 1e-15, "m at step {t}");
            assert!((ov[0].data()[0] - v).abs() < 1e-15, "v at step {t}");
        }
        assert_eq!(opt.step_count(), 3);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // f(x) = (x - 3)^2, gradient 2(x - 3)
        let mut x = Grid::from_vec(&[1], vec![-4.0]).unwrap();
        let mut opt = Adam::new(0.1, &[&[1]]);
        for _ in 0..500 {
            let g = Grid::from_vec(&[1], vec![2.0 * (x.data()[0] - 3.0)]).unwrap();
            opt.step(&mut [&mut x], &[&g]).unwrap();
        }
        assert!(
            (x.data()[0] - 3.0).abs() < 1e-3,
            "ended at {}",
            x.data()[0]
        );
    }

    #[test]
    fn grid_count_mismatch_is_error() {
        let mut p = Grid::zeros(&[2]);
        let g = Grid::zeros(&[2]);
        let mut opt = Adam::new(0.01, &[&[2], &[3]]);
        assert!(opt.step(&mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn restored_state_continues_identically() {
        let grads = [0.7, -0.3, 1.1, 0.2, -0.9];
        let run = |resume_at: Option<usize>| -> f64 {
            let mut p = Grid::from_vec(&[1], vec![1.0]).unwrap();
            let mut opt = Adam::new(0.05, &[&[1]]);
            for (i, &gv) in grads.iter().enumerate() {
                if Some(i) == resume_at {
                    let (m, v) = opt.moments();
                    opt = Adam::from_parts(0.05, opt.step_count(), m.to_vec(), v.to_vec())
                        .unwrap();
                }
                let g = Grid::from_vec(&[1], vec![gv]).unwrap();
                opt.step(&mut [&mut p], &[&g]).unwrap();
            }
            p.data()[0]
        };
        assert_eq!(run(None).to_bits(), run(Some(3)).to_bits());
    }
}
