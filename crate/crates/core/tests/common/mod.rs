//! Oracles shared by the integration tests.
#![allow(dead_code)]

use mvlift::measure::EmpiricalMeasure;

/// Minimum of `Σ πᵢⱼ |xᵢ − yⱼ|²` over couplings of `a` and `b`, by a dense
/// two-phase simplex with Bland's rule on the transportation polytope.
pub fn lp_w2_squared(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let (n, m) = (a.len(), b.len());
    let cost: Vec<f64> = (0..n * m)
        .map(|k| {
            let (x, y) = (a.point(k / m), b.point(k % m));
            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
        })
        .collect();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        rows.push((0..n * m).map(|k| if k / m == i { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        rhs.push(a.weights()[i]);
    }
    // the last column constraint is implied by the others
    for j in 0..m.saturating_sub(1) {
        rows.push((0..n * m).map(|k| if k % m == j { 1.0 } else { 0.0 }).collect());
        rhs.push(b.weights()[j]);
    }
    simplex_min(&cost, &rows, &rhs)
}

/// `min c·x` subject to `A x = b`, `x ≥ 0`, `b ≥ 0`. Panics if infeasible.
pub fn simplex_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
    const TOL: f64 = 1e-12;
    let (rows, cols) = (a.len(), c.len());
    let width = cols + rows + 1;
    let mut t: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            let mut r = a[i].clone();
            r.extend((0..rows).map(|k| if k == i { 1.0 } else { 0.0 }));
            r.push(b[i]);
            r
        })
        .collect();
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, r: usize, e: usize| {
        let p = t[r][e];
        t[r].iter_mut().for_each(|v| *v /= p);
        let pr = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[e] != 0.0 {
                let f = row[e];
                row.iter_mut().zip(&pr).for_each(|(v, q)| *v -= f * q);
            }
        }
        basis[r] = e;
    };

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, obj: &[f64], allowed: usize| loop {
        let reduced = |j: usize| obj[j] - basis.iter().enumerate().map(|(i, &bj)| obj[bj] * t[i][j]).sum::<f64>();
        let Some(e) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(j) < -TOL) else {
            return;
        };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..t.len() {
            if t[i][e] > TOL {
                let ratio = t[i][width - 1] / t[i][e];
                match best {
                    Some((r, bi)) if ratio > r + TOL || (ratio > r - TOL && basis[i] > basis[bi]) => {}
                    _ => best = Some((ratio, i)),
                }
            }
        }
        let (_, r) = best.expect("unbounded program");
        pivot(t, basis, r, e);
    };

    let phase1: Vec<f64> = (0..cols + rows).map(|j| if j >= cols { 1.0 } else { 0.0 }).collect();
    run(&mut t, &mut basis, &phase1, cols + rows);
    let infeasibility: f64 = basis.iter().enumerate().filter(|(_, &bj)| bj >= cols).map(|(i, _)| t[i][width - 1]).sum();
    assert!(infeasibility < 1e-9, "infeasible program ({infeasibility})");
    // drive zero-level artificials out of the basis where possible
    for i in 0..rows {
        if basis[i] >= cols {
            if let Some(e) = (0..cols).find(|&j| !basis.contains(&j) && t[i][j].abs() > TOL) {
                pivot(&mut t, &mut basis, i, e);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, rows));
    run(&mut t, &mut basis, &phase2, cols);
    basis.iter().enumerate().filter(|(_, &bj)| bj < cols).map(|(i, &bj)| c[bj] * t[i][width - 1]).sum()
}

/// Minimum over permutations of the mean squared distance between two
/// uniform clouds of equal size.
pub fn permutation_w2_squared(x: &[f64], y: &[f64]) -> f64 {
    fn go(k: usize, x: &[f64], y: &[f64], used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if k == x.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                go(k + 1, x, y, used, acc + (x[k] - y[j]).powi(2), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, x, y, &mut vec![false; y.len()], 0.0, &mut best);
    best / x.len() as f64
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Fits `e(ε) = A ε^p + B ε^q` through the first two samples and returns the
/// misfit at the third. A leftover term of lower order than `p` shows up here
/// even when `A` is small next to `B` and the raw slope is still pre-asymptotic.
pub fn expansion_misfit(eps: [f64; 3], signed_err: [f64; 3], p: i32, q: i32) -> f64 {
    let (a11, a12, a21, a22) = (eps[0].powi(p), eps[0].powi(q), eps[1].powi(p), eps[1].powi(q));
    let det = a11 * a22 - a12 * a21;
    let a = (signed_err[0] * a22 - a12 * signed_err[1]) / det;
    let b = (a11 * signed_err[1] - a21 * signed_err[0]) / det;
    signed_err[2] - (a * eps[2].powi(p) + b * eps[2].powi(q))
}

/// Sample standard deviation over `√n`.
pub fn stderr(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}
