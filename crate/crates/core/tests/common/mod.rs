//! A deliberately independent reference solver for the integration tests.
//!
//! The library factors its normal equations with Cholesky; this module
//! solves the very same stored systems by full-pivot Gauss-Jordan
//! elimination followed by compensated-residual refinement. Both routes
//! converge to the exact solution of the stored system, so their answers
//! must agree far beyond the tolerances the tests assert.

/// One full-pivot Gauss-Jordan elimination pass. Panics on an exactly
/// singular system — the tests only feed it full-rank ones.
pub fn gj_solve_once(a_in: &[f64], n: usize, b_in: &[f64]) -> Vec<f64> {
    assert_eq!(a_in.len(), n * n);
    assert_eq!(b_in.len(), n);
    let mut a = a_in.to_vec();
    let mut b = b_in.to_vec();
    let mut col_of: Vec<usize> = (0..n).collect();
    for step in 0..n {
        let (mut pr, mut pc, mut best) = (step, step, -1.0f64);
        for r in step..n {
            for c in step..n {
                let v = a[r * n + c].abs();
                if v > best {
                    best = v;
                    pr = r;
                    pc = c;
                }
            }
        }
        assert!(best > 0.0, "reference solver hit a singular system at step {step}");
        if pr != step {
            for c in 0..n {
                a.swap(step * n + c, pr * n + c);
            }
            b.swap(step, pr);
        }
        if pc != step {
            for r in 0..n {
                a.swap(r * n + step, r * n + pc);
            }
            col_of.swap(step, pc);
        }
        let piv = a[step * n + step];
        for c in 0..n {
            a[step * n + c] /= piv;
        }
        b[step] /= piv;
        for r in 0..n {
            if r == step {
                continue;
            }
            let f = a[r * n + step];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a[r * n + c] -= f * a[step * n + c];
            }
            b[r] -= f * b[step];
        }
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[col_of[i]] = b[i];
    }
    x
}

/// `b − A·x` with every product's rounding error recovered through an FMA
/// and every partial sum compensated.
pub fn compensated_residual(a: &[f64], n: usize, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        let mut comp = 0.0;
        for j in 0..n {
            let p = -(a[i * n + j] * x[j]);
            let e = (-a[i * n + j]).mul_add(x[j], -p);
            let t = s + p;
            let big = t - s;
            let round = (s - (t - big)) + (p - big);
            s = t;
            comp += e + round;
        }
        r[i] = s + comp;
    }
    r
}

/// Gauss-Jordan solve with three rounds of refinement.
pub fn oracle_solve(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = gj_solve_once(a, n, b);
    for _ in 0..3 {
        let r = compensated_residual(a, n, b, &x);
        let d = gj_solve_once(a, n, &r);
        for i in 0..n {
            x[i] += d[i];
        }
    }
    x
}

/// Assemble the 10-parameter normal equations for a list of
/// (window, target-block) pairs exactly the way the library does: design
/// rows `[1, p1..p9]`, upper triangle accumulated in sample order then
/// mirrored, ridge added to the slope diagonal only.
pub fn assemble_normal_system(pairs: &[([f64; 9], [f64; 4])], lambda: f64) -> (Vec<f64>, [Vec<f64>; 4]) {
    let mut a = vec![0.0f64; 100];
    let mut rhs: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0f64; 10]);
    let mut x = [0.0f64; 10];
    for (low, high) in pairs {
        x[0] = 1.0;
        x[1..].copy_from_slice(low);
        for i in 0..10 {
            for j in i..10 {
                a[i * 10 + j] += x[i] * x[j];
            }
        }
        for (m, row) in rhs.iter_mut().enumerate() {
            for i in 0..10 {
                row[i] += x[i] * high[m];
            }
        }
    }
    for i in 0..10 {
        for j in 0..i {
            a[i * 10 + j] = a[j * 10 + i];
        }
    }
    for i in 1..10 {
        a[i * 10 + i] += lambda;
    }
    (a, rhs)
}

/// Reconstruction weights solved through the constrained KKT system
/// `[[G, 1], [1ᵀ, 0]]` rather than the library's `G·v = 1` shortcut. The
/// Gram matrix and its stabilizing diagonal replicate the library exactly;
/// only the solve route differs.
pub fn ne_weights_oracle(query: &[f64; 9], neighbors: &[[f64; 9]], eps_rel: f64) -> Vec<f64> {
    let k = neighbors.len();
    assert!(k > 0);
    let diffs: Vec<[f64; 9]> = neighbors
        .iter()
        .map(|nb| std::array::from_fn(|i| query[i] - nb[i]))
        .collect();
    let mut gram = vec![0.0f64; k * k];
    for j in 0..k {
        for l in 0..k {
            let mut dot = 0.0;
            for i in 0..9 {
                dot += diffs[j][i] * diffs[l][i];
            }
            gram[j * k + l] = dot;
        }
    }
    let trace: f64 = (0..k).map(|j| gram[j * k + j]).sum();
    let reg = if trace > 0.0 { eps_rel * trace / k as f64 } else { 1e-12 };
    for j in 0..k {
        gram[j * k + j] += reg;
    }
    let m = k + 1;
    let mut kkt = vec![0.0f64; m * m];
    for j in 0..k {
        for l in 0..k {
            kkt[j * m + l] = gram[j * k + l];
        }
        kkt[j * m + k] = 1.0;
        kkt[k * m + j] = 1.0;
    }
    let mut rhs = vec![0.0f64; m];
    rhs[k] = 1.0;
    let sol = oracle_solve(&kkt, m, &rhs);
    sol[..k].to_vec()
}
