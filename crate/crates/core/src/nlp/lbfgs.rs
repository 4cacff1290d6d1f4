use std::collections::VecDeque;

use nalgebra::DMatrix;

/// Limited-memory BFGS Hessian approximation in compact form
/// `B = delta I - W M^{-1} W^T`, `W = [delta S, Y]`.
#[derive(Debug, Clone)]
pub(crate) struct LbfgsMatrix {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    delta: f64,
}

impl LbfgsMatrix {
    pub fn new(memory: usize, initial_delta: f64) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
            delta: initial_delta,
        }
    }

    /// Stores the pair unless the curvature condition fails. Returns whether
    /// it was accepted.
    pub fn update(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        let yy = dot(&y, &y);
        if !(sy > 1e-10 * (ss * yy).sqrt()) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.delta = (yy / sy).clamp(1e-8, 1e8);
        self.pairs.push_back((s, y));
        true
    }

    /// Adds `B` into the dense matrix `h`.
    pub fn add_to(&self, h: &mut DMatrix<f64>) {
        let n = h.nrows();
        for i in 0..n {
            h[(i, i)] += self.delta;
        }
        let k = self.pairs.len();
        if k == 0 {
            return;
        }
        let d = self.delta;
        let mut w = DMatrix::<f64>::zeros(n, 2 * k);
        for (j, (s, y)) in self.pairs.iter().enumerate() {
            for i in 0..n {
                w[(i, j)] = d * s[i];
                w[(i, k + j)] = y[i];
            }
        }
        let mut m = DMatrix::<f64>::zeros(2 * k, 2 * k);
        for (a, (sa, ya)) in self.pairs.iter().enumerate() {
            for (b, (sb, yb)) in self.pairs.iter().enumerate() {
                m[(a, b)] = d * dot(sa, sb);
                if a > b {
                    // L = strictly lower part of S^T Y
                    let l = dot(sa, yb);
                    m[(a, k + b)] = l;
                    m[(k + b, a)] = l;
                }
            }
            m[(k + a, k + a)] = -dot(sa, ya);
        }
        let Some(minv) = m.try_inverse() else {
            return;
        };
        let wm = &w * minv;
        // h -= wm * w^T
        h.gemm(-1.0, &wm, &w.transpose(), 1.0);
    }

    #[cfg(test)]
    pub fn dense(&self, n: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(n, n);
        self.add_to(&mut h);
        h
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn secant_condition_holds_for_latest_pair() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let mut b = LbfgsMatrix::new(5, 1.0);
        let steps = [[1.0, 0.0, 0.2], [0.1, 1.0, -0.3], [-0.2, 0.4, 1.0]];
        for s in steps {
            let y = &a * DVector::from_column_slice(&s);
            assert!(b.update(s.to_vec(), y.as_slice().to_vec()));
        }
        let h = b.dense(3);
        let s = DVector::from_column_slice(&steps[2]);
        let y = &a * &s;
        assert!((&h * &s - y).abs().max() < 1e-12);
        assert!((&h - h.transpose()).abs().max() < 1e-12);
        assert!(h.clone().cholesky().is_some());
    }

    #[test]
    fn rejects_negative_curvature() {
        let mut b = LbfgsMatrix::new(3, 1.0);
        assert!(!b.update(vec![1.0, 0.0], vec![-1.0, 0.0]));
        let h = b.dense(2);
        assert_eq!(h, DMatrix::identity(2, 2));
    }
}
