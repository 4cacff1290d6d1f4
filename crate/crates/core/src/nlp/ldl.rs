//! Envelope (skyline) LDL^T factorization of sparse symmetric matrices.
//!
//! Nodes are reordered by reverse Cuthill-McKee with high-degree nodes moved
//! to the end, so banded problems with a few dense couplings keep a narrow
//! envelope. No pivoting is performed; the factorization reports the inertia
//! so callers can regularize until it matches what they expect.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone)]
pub struct EnvelopeLdl {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    /// For each input entry, its slot in the envelope storage (or diagonal).
    slots: Vec<Slot>,
    l: Vec<f64>,
    d: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Diagonal(usize),
    Off(usize),
}

impl EnvelopeLdl {
    /// Symbolic analysis for a matrix given by its lower or upper entries
    /// `(row, col)`; entries may repeat and are summed.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in entries {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for v in &mut adj {
            v.sort_unstable();
            v.dedup();
        }
        let perm = ordering(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(a, b) in entries {
            let (i, j) = (inv[a], inv[b]);
            let (hi, lo) = (i.max(j), i.min(j));
            first[hi] = first[hi].min(lo);
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let slots = entries
            .iter()
            .map(|&(a, b)| {
                let (i, j) = (inv[a], inv[b]);
                if i == j {
                    Slot::Diagonal(i)
                } else {
                    let (hi, lo) = (i.max(j), i.min(j));
                    Slot::Off(start[hi] + lo - first[hi])
                }
            })
            .collect();
        Self {
            n,
            l: vec![0.0; start[n]],
            d: vec![0.0; n],
            perm,
            inv,
            first,
            start,
            slots,
        }
    }

    /// Stored entries of the strictly lower envelope.
    pub fn envelope_size(&self) -> usize {
        self.start[self.n]
    }

    /// Factorizes the matrix with `values` (matching the analysed entries)
    /// plus `diag_shift[i]` on the diagonal. Returns the inertia of the
    /// pivots; entries below `zero_tol` in magnitude count as zero.
    pub fn factor(&mut self, values: &[f64], diag_shift: &[f64], zero_tol: f64) -> Inertia {
        let n = self.n;
        self.l.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            self.d[self.inv[i]] = diag_shift[i];
        }
        for (slot, v) in self.slots.iter().zip(values) {
            match *slot {
                Slot::Diagonal(i) => self.d[i] += v,
                Slot::Off(s) => self.l[s] += v,
            }
        }
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            // row i holds a_ij, overwritten by t_ij = L_ij D_j
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let sj = self.start[j];
                let mut acc = self.l[si + j - fi];
                for k in k0..j {
                    acc -= self.l[si + k - fi] * self.l[sj + k - fj];
                }
                self.l[si + j - fi] = acc;
            }
            let mut di = self.d[i];
            for j in fi..i {
                let t = self.l[si + j - fi];
                let lij = t / self.d[j];
                di -= t * lij;
                self.l[si + j - fi] = lij;
            }
            if !di.is_finite() || di.abs() <= zero_tol {
                inertia.zero += 1;
                di = if di.is_finite() && di != 0.0 {
                    di
                } else {
                    zero_tol.max(f64::MIN_POSITIVE)
                };
            } else if di > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.d[i] = di;
        }
        inertia
    }

    /// Solves with the most recent factorization.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = self.perm.iter().map(|&o| rhs[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut acc = z[i];
            for k in fi..i {
                acc -= self.l[si + k - fi] * z[k];
            }
            z[i] = acc;
        }
        for i in 0..n {
            z[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let zi = z[i];
            for k in fi..i {
                z[k] -= self.l[si + k - fi] * zi;
            }
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = z[new];
        }
        out
    }
}

/// Reverse Cuthill-McKee over the sparse nodes, dense nodes appended last.
fn ordering(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let threshold = 16usize.max(n / 8);
    let dense: Vec<bool> = adj.iter().map(|a| a.len() > threshold).collect();
    let degree = |v: usize| adj[v].iter().filter(|&&u| !dense[u]).count();
    let mut visited = dense.clone();
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).filter(|&v| !dense[v]).collect();
    by_degree.sort_by_key(|&v| (degree(v), v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = peripheral(adj, &dense, seed);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        let mut component = Vec::new();
        while let Some(v) = queue.pop_front() {
            component.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree(u), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
        order.extend(component);
    }
    order.reverse();
    order.extend((0..n).filter(|&v| dense[v]));
    order
}

/// Pseudo-peripheral node of the component containing `seed`.
fn peripheral(adj: &[Vec<usize>], dense: &[bool], seed: usize) -> usize {
    let mut root = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let (levels, far) = bfs_levels(adj, dense, root);
        if levels <= depth {
            break;
        }
        depth = levels;
        root = far;
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], dense: &[bool], root: usize) -> (usize, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut far = root;
    while let Some(v) = queue.pop_front() {
        if level[v] > level[far] || (level[v] == level[far] && adj[v].len() < adj[far].len()) {
            far = v;
        }
        for &u in &adj[v] {
            if !dense[u] && level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
    }
    (level[far], far)
}
