//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Optimizer state for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update. Slots whose gradient is not finite keep their parameter
    /// and moments; their count is returned.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<usize> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} slots, got {} params and {} grads",
                self.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut skipped = 0;
        for i in 0..params.len() {
            let g = grads[i];
            if !g.is_finite() {
                skipped += 1;
                continue;
            }
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} non-finite gradient slots");
        }
        Ok(skipped)
    }

    /// Rebuilds the moments for a resized group of `stride`-wide rows:
    /// `sources[r]` names the old row that new row `r` inherits, or `None`
    /// for fresh zero moments.
    pub fn remap_rows(&mut self, sources: &[Option<usize>], stride: usize) {
        let mut m = Vec::with_capacity(sources.len() * stride);
        let mut v = Vec::with_capacity(sources.len() * stride);
        for s in sources {
            match s {
                Some(old) => {
                    m.extend_from_slice(&self.m[old * stride..(old + 1) * stride]);
                    v.extend_from_slice(&self.v[old * stride..(old + 1) * stride]);
                }
                None => {
                    m.extend(std::iter::repeat_n(0.0, stride));
                    v.extend(std::iter::repeat_n(0.0, stride));
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = Adam::new(0.1, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let mut opt = Adam::new(0.1, 1);
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-7);
    }

    #[test]
    fn matches_scalar_reference() {
        // Scalar reference written out independently.
        let (lr, g) = (0.05, 0.7);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        let mut opt = Adam::new(lr, 1);
        let mut p = vec![1.0];
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            opt.step(&mut p, &[g]).unwrap();
            assert!((opt.m[0] - g * (1.0 - 0.9f64.powi(t))).abs() < 1e-15);
            assert!((p[0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_slots_are_skipped() {
        let mut opt = Adam::new(0.1, 2);
        let mut p = vec![1.0, 1.0];
        assert_eq!(opt.step(&mut p, &[f64::NAN, 1.0]).unwrap(), 1);
        assert_eq!(p[0], 1.0);
        assert_eq!(opt.m[0], 0.0);
        assert!(p[1] < 1.0);
    }

    #[test]
    fn remap_keeps_and_zeroes_rows() {
        let mut opt = Adam::new(0.1, 4);
        opt.m = vec![1.0, 2.0, 3.0, 4.0];
        opt.v = vec![5.0, 6.0, 7.0, 8.0];
        opt.remap_rows(&[Some(1), None, Some(0)], 2);
        assert_eq!(opt.m, vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(opt.v, vec![7.0, 8.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = Adam::new(0.1, 2);
        assert!(opt.step(&mut [0.0], &[0.0]).is_err());
    }
}
