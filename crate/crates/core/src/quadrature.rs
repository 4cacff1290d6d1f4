//! Legendre-family nodes, weights and Lagrange interpolation helpers.

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        // P_n'(+-1) = (+-1)^(n+1) n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Newton iteration with deflation against roots already found.
fn polish(mut x: f64, f: impl Fn(f64) -> (f64, f64), found: &[f64]) -> f64 {
    for _ in 0..100 {
        let (p, dp) = f(x);
        let defl: f64 = found.iter().map(|r| 1.0 / (x - r)).sum();
        let step = p / (dp - p * defl);
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    x
}

/// Gauss-Legendre nodes and weights on [-1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let guess = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let x = polish(guess, |x| legendre(n, x), &nodes);
        nodes.push(x);
    }
    nodes.sort_by(f64::total_cmp);
    let weights = nodes
        .iter()
        .map(|&x| {
            let (_, dp) = legendre(n, x);
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    (nodes, weights)
}

/// Legendre-Gauss-Radau nodes (including -1) and quadrature weights.
pub fn gauss_radau(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1);
    let kf = k as f64;
    let f = |x: f64| {
        let (a, da) = legendre(k - 1, x);
        let (b, db) = legendre(k, x);
        (a + b, da + db)
    };
    let mut nodes = vec![-1.0];
    for i in 1..k {
        let guess = -(2.0 * std::f64::consts::PI * i as f64 / (2.0 * kf - 1.0)).cos();
        let x = polish(guess, f, &nodes);
        nodes.push(x);
    }
    nodes.sort_by(f64::total_cmp);
    let weights = nodes
        .iter()
        .map(|&x| {
            if x == -1.0 {
                2.0 / (kf * kf)
            } else {
                let (p, _) = legendre(k - 1, x);
                (1.0 - x) / (kf * kf * p * p)
            }
        })
        .collect();
    (nodes, weights)
}

/// Values and first derivatives of every Lagrange basis polynomial on
/// `support`, evaluated at `x`.
pub fn lagrange_basis(support: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
    let n = support.len();
    let mut values = vec![0.0; n];
    let mut derivs = vec![0.0; n];
    for j in 0..n {
        let mut denom = 1.0;
        for k in 0..n {
            if k != j {
                denom *= support[j] - support[k];
            }
        }
        let mut v = 1.0;
        for k in 0..n {
            if k != j {
                v *= x - support[k];
            }
        }
        let mut d = 0.0;
        for m in 0..n {
            if m == j {
                continue;
            }
            let mut prod = 1.0;
            for k in 0..n {
                if k != j && k != m {
                    prod *= x - support[k];
                }
            }
            d += prod;
        }
        values[j] = v / denom;
        derivs[j] = d / denom;
    }
    (values, derivs)
}

/// Differentiation matrix: row `i` holds the basis derivatives at
/// `points[i]`.
pub fn differentiation_matrix(support: &[f64], points: &[f64]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|&x| lagrange_basis(support, x).1)
        .collect()
}
