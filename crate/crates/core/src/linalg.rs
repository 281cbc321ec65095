//! Small dense solvers for the normal-equation systems behind the
//! regression fits.
//!
//! Every system in this crate is symmetric positive definite by
//! construction (a Gram or ridge-augmented normal matrix) and at most a few
//! hundred unknowns, so an unblocked Cholesky factorization is enough. Each
//! solve is followed by a couple of rounds of iterative refinement with
//! compensated residuals, which keeps the answers accurate even when a
//! neighborhood produces a badly conditioned system.

/// The pivot that stopped a factorization, for diagnostics.
#[derive(Debug)]
pub(crate) struct PivotFailure {
    pub index: usize,
    pub value: f64,
}

/// Lower Cholesky factorization in place. `a` is n×n row-major; only the
/// lower triangle is read and written. Fails on the first pivot that is not
/// strictly positive and finite, or that falls below a small multiple of
/// the machine epsilon times the largest diagonal entry — an exactly
/// rank-deficient matrix can otherwise slip through with a pivot that is
/// pure rounding noise instead of a clean zero.
pub(crate) fn cholesky_factor(a: &mut [f64], n: usize) -> Result<(), PivotFailure> {
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|j| a[j * n + j]).fold(0.0f64, f64::max);
    let floor = 8.0 * f64::EPSILON * scale;
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > floor) || !d.is_finite() {
            return Err(PivotFailure { index: j, value: d });
        }
        let l = d.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / l;
        }
    }
    Ok(())
}

/// Solve L·Lᵀ·x = b in place given a factor from [`cholesky_factor`].
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * n + p] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= l[p * n + i] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `bi − row·x` evaluated in twofold working precision: the rounding error
/// of every product and partial sum is carried in a second accumulator
/// (compensated summation with exact FMA product errors).
fn residual_component(bi: f64, row: &[f64], x: &[f64]) -> f64 {
    let mut s = bi;
    let mut c = 0.0;
    for (&a, &xv) in row.iter().zip(x) {
        let p = -(a * xv);
        let e = (-a).mul_add(xv, -p);
        let t = s + p;
        let bv = t - s;
        let round = (s - (t - bv)) + (p - bv);
        s = t;
        c += e + round;
    }
    s + c
}

/// Solve the symmetric positive definite system `a·x = b` for each
/// right-hand side in `rhs`, replacing it with the solution. `a` holds the
/// full matrix (both triangles) and is left untouched; the factorization
/// works on a copy. Two refinement rounds per solve.
pub(crate) fn solve_spd(a: &[f64], n: usize, rhs: &mut [Vec<f64>]) -> Result<(), PivotFailure> {
    const REFINE_ROUNDS: usize = 2;
    let mut l = a.to_vec();
    cholesky_factor(&mut l, n)?;
    let mut r = vec![0.0; n];
    for b in rhs.iter_mut() {
        debug_assert_eq!(b.len(), n);
        let mut x = b.clone();
        cholesky_solve(&l, n, &mut x);
        for _ in 0..REFINE_ROUNDS {
            for i in 0..n {
                r[i] = residual_component(b[i], &a[i * n..(i + 1) * n], &x);
            }
            cholesky_solve(&l, n, &mut r);
            for i in 0..n {
                x[i] += r[i];
            }
        }
        *b = x;
    }
    Ok(())
}
