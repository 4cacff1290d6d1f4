//! Lagrangian Hessian from forward differences of the sparse Jacobian.
//!
//! Columns that never share a Jacobian row (or the objective) are perturbed
//! together, so one Jacobian evaluation recovers the curvature of every row
//! with respect to one column of the group.

use nalgebra::DMatrix;

use super::{NlpProblem, SparsityPattern};

struct Group {
    cols: Vec<usize>,
    /// (constraint row, owning column, slot of each entry of the row).
    rows: Vec<(usize, usize, Vec<usize>)>,
    /// Owning column and slots of the objective-pattern entries.
    objective: Option<(usize, Vec<usize>)>,
}

/// Lower-triangle sparse Hessian of the Lagrangian by colored differences.
pub struct DifferenceHessian {
    groups: Vec<Group>,
    obj_pattern: Vec<usize>,
    /// Lower-triangle (row >= col) entries.
    entries: Vec<(usize, usize)>,
    /// 0.5 for off-diagonal slots (estimated twice), 1 on the diagonal.
    weights: Vec<f64>,
}

impl DifferenceHessian {
    pub fn new(pattern: &SparsityPattern, obj_pattern: Option<Vec<usize>>) -> Self {
        let n = pattern.n_cols();
        let m = pattern.n_rows();
        let obj_pattern = obj_pattern.unwrap_or_else(|| (0..n).collect());
        let row_cols = |r: usize| -> Vec<usize> {
            if r == m {
                obj_pattern.clone()
            } else {
                pattern
                    .row_range(r)
                    .map(|k| pattern.col_indices()[k])
                    .collect()
            }
        };
        // rows touching each column; the objective is row `m`
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in pattern.entries() {
            col_rows[c].push(r);
        }
        for &c in &obj_pattern {
            col_rows[c].push(m);
        }
        let mut color = vec![usize::MAX; n];
        let mut n_colors = 0;
        let mut forbidden = Vec::new();
        for j in 0..n {
            forbidden.clear();
            for &r in &col_rows[j] {
                for c in row_cols(r) {
                    if color[c] != usize::MAX {
                        forbidden.push(color[c]);
                    }
                }
            }
            forbidden.sort_unstable();
            forbidden.dedup();
            let mut k = 0;
            while forbidden.binary_search(&k).is_ok() {
                k += 1;
            }
            color[j] = k;
            n_colors = n_colors.max(k + 1);
        }

        let mut owned: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_colors];
        for j in 0..n {
            for &r in &col_rows[j] {
                owned[color[j]].push((r, j));
            }
        }
        let mut raw: Vec<(usize, usize)> = Vec::new();
        for list in &owned {
            for &(r, j) in list {
                for k in row_cols(r) {
                    raw.push((k.max(j), k.min(j)));
                }
            }
        }
        let mut entries = raw.clone();
        entries.sort_unstable();
        entries.dedup();
        let slot = |k: usize, j: usize| entries.binary_search(&(k.max(j), k.min(j))).unwrap();
        let mut groups: Vec<Group> = (0..n_colors)
            .map(|_| Group {
                cols: Vec::new(),
                rows: Vec::new(),
                objective: None,
            })
            .collect();
        for j in 0..n {
            groups[color[j]].cols.push(j);
        }
        for (g, list) in groups.iter_mut().zip(&owned) {
            for &(r, j) in list {
                let slots: Vec<usize> = row_cols(r).into_iter().map(|k| slot(k, j)).collect();
                if r == m {
                    g.objective = Some((j, slots));
                } else {
                    g.rows.push((r, j, slots));
                }
            }
            g.rows.sort_unstable_by_key(|e| e.0);
        }
        let weights = entries
            .iter()
            .map(|(a, b)| if a == b { 1.0 } else { 0.5 })
            .collect();
        Self {
            groups,
            obj_pattern,
            entries,
            weights,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Lower-triangle (row, col) entries matching the values of [`Self::evaluate`].
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Lower-triangle values of `grad^2 f + sum_i y_i grad^2 c_i` at `x`.
    pub fn evaluate(
        &self,
        problem: &dyn NlpProblem,
        pattern: &SparsityPattern,
        x: &[f64],
        jac: &[f64],
        grad: &[f64],
        y: &[f64],
    ) -> Vec<f64> {
        let n = x.len();
        let mut values = vec![0.0; self.entries.len()];
        let steps: Vec<f64> = x
            .iter()
            .map(|v| {
                let h = f64::EPSILON.sqrt() * v.abs().max(1.0);
                (v + h) - v
            })
            .collect();
        let mut xp = x.to_vec();
        let mut jp = vec![0.0; jac.len()];
        let mut gp = vec![0.0; n];
        for g in &self.groups {
            for &j in &g.cols {
                xp[j] = x[j] + steps[j];
            }
            problem.jacobian_values(&xp, &mut jp);
            if g.objective.is_some() {
                problem.objective_gradient(&xp, &mut gp);
            }
            for &j in &g.cols {
                xp[j] = x[j];
            }
            for &(r, j, ref slots) in &g.rows {
                if y[r] == 0.0 {
                    continue;
                }
                let scale = y[r] / steps[j];
                for (k, &s) in pattern.row_range(r).zip(slots) {
                    values[s] += scale * (jp[k] - jac[k]);
                }
            }
            if let Some((j, slots)) = &g.objective {
                let j = *j;
                for (&k, &s) in self.obj_pattern.iter().zip(slots) {
                    values[s] += (gp[k] - grad[k]) / steps[j];
                }
            }
        }
        for (v, w) in values.iter_mut().zip(&self.weights) {
            *v *= w;
        }
        values
    }

    /// Adds the symmetric matrix held in `values` to the dense `h`.
    pub fn add_to_dense(&self, values: &[f64], h: &mut DMatrix<f64>) {
        for (&(a, b), v) in self.entries.iter().zip(values) {
            h[(a, b)] += v;
            if a != b {
                h[(b, a)] += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::ConstraintKind;

    /// c0 = x0^2 x1, c1 = sin(x2) + x3^3, f = x0 x3
    struct P(SparsityPattern);

    impl NlpProblem for P {
        fn num_variables(&self) -> usize {
            4
        }
        fn num_constraints(&self) -> usize {
            2
        }
        fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![f64::NEG_INFINITY; 4], vec![f64::INFINITY; 4])
        }
        fn constraint_kinds(&self) -> Vec<ConstraintKind> {
            vec![ConstraintKind::Equality; 2]
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] * x[3]
        }
        fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
            g.fill(0.0);
            g[0] = x[3];
            g[3] = x[0];
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) {
            c[0] = x[0] * x[0] * x[1];
            c[1] = x[2].sin() + x[3].powi(3);
        }
        fn jacobian_pattern(&self) -> &SparsityPattern {
            &self.0
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) {
            v.copy_from_slice(&[
                2.0 * x[0] * x[1],
                x[0] * x[0],
                x[2].cos(),
                3.0 * x[3] * x[3],
            ]);
        }
        fn objective_gradient_pattern(&self) -> Option<Vec<usize>> {
            Some(vec![0, 3])
        }
    }

    #[test]
    fn recovers_exact_hessian_with_few_groups() {
        let (pat, _) = SparsityPattern::from_entries(2, 4, &[(0, 0), (0, 1), (1, 2), (1, 3)]);
        let p = P(pat.clone());
        let dh = DifferenceHessian::new(&pat, p.objective_gradient_pattern());
        assert!(dh.n_groups() < 4);
        let x = [0.7, -1.2, 0.3, 1.1];
        let y = [2.0, -0.5];
        let mut jac = vec![0.0; 4];
        p.jacobian_values(&x, &mut jac);
        let mut g = vec![0.0; 4];
        p.objective_gradient(&x, &mut g);
        let mut h = DMatrix::zeros(4, 4);
        let v = dh.evaluate(&p, &pat, &x, &jac, &g, &y);
        dh.add_to_dense(&v, &mut h);
        assert!(dh.entries().iter().all(|(a, b)| a >= b));
        let mut exact = DMatrix::<f64>::zeros(4, 4);
        exact[(0, 0)] = 2.0 * 2.0 * x[1];
        exact[(0, 1)] = 2.0 * 2.0 * x[0];
        exact[(1, 0)] = exact[(0, 1)];
        exact[(2, 2)] = -0.5 * -x[2].sin();
        exact[(3, 3)] = -0.5 * 6.0 * x[3];
        exact[(0, 3)] = 1.0;
        exact[(3, 0)] = 1.0;
        assert!((&h - &exact).abs().max() < 1e-6, "{h}");
    }
}
