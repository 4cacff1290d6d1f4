/// Compressed-row sparsity structure of a constraint Jacobian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a pattern from (row, col) entries that may repeat. Returns the
    /// pattern and, for every input entry, the storage slot it maps to, so
    /// that values emitted in the same order can be accumulated.
    pub fn from_entries(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize)],
    ) -> (Self, Vec<usize>) {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&k| entries[k]);
        let mut col_idx = Vec::new();
        let mut row_of = Vec::new();
        let mut slot = vec![0usize; entries.len()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let e = entries[k];
            assert!(e.0 < n_rows && e.1 < n_cols, "entry {e:?} out of range");
            if last != Some(e) {
                col_idx.push(e.1);
                row_of.push(e.0);
                last = Some(e);
            }
            slot[k] = col_idx.len() - 1;
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &r in &row_of {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        (
            Self {
                n_rows,
                n_cols,
                row_ptr,
                col_idx,
            },
            slot,
        )
    }

    /// Pattern with every entry of an `n_rows x n_cols` matrix.
    pub fn dense(n_rows: usize, n_cols: usize) -> Self {
        let entries: Vec<(usize, usize)> = (0..n_rows)
            .flat_map(|r| (0..n_cols).map(move |c| (r, c)))
            .collect();
        Self::from_entries(n_rows, n_cols, &entries).0
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    /// Iterates `(row, col)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row_range(r).map(move |k| (r, self.col_idx[k])))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.col_idx[self.row_range(row)].contains(&col)
    }

    /// `out = J x`.
    pub fn mul_vec(&self, values: &[f64], x: &[f64], out: &mut [f64]) {
        for r in 0..self.n_rows {
            out[r] = self
                .row_range(r)
                .map(|k| values[k] * x[self.col_idx[k]])
                .sum();
        }
    }

    /// `out = J^T y`.
    pub fn mul_transpose_vec(&self, values: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.n_rows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for k in self.row_range(r) {
                out[self.col_idx[k]] += values[k] * yr;
            }
        }
    }

    pub fn to_dense(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (k, (r, c)) in self.entries().enumerate() {
            d[r][c] = values[k];
        }
        d
    }
}
