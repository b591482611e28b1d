//! Independent oracles shared by the integration suites. These deliberately
//! avoid the library's solver paths: the LP oracle enumerates basic feasible
//! solutions, the restricted-eigenvalue oracle scans a dense grid.

// Each integration target uses its own subset of these helpers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Brute-force LP oracle for `min sum(x) (c = 1)` over
/// `{x >= 0 : A x <= b}` via basic-solution enumeration on `[A I] z = b`.
/// Returns the optimal objective, or `None` when no feasible basis exists.
pub fn lp_vertex_oracle(c: &[f64], a: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
    let m = a.nrows();
    let n = a.ncols();
    let total = n + m;

    // Columns of [A I].
    let column = |j: usize| -> DVector<f64> {
        if j < n {
            a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(m);
            e[j - n] = 1.0;
            e
        }
    };

    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..m).collect();

    loop {
        // Assemble the basis matrix for the current column subset.
        let mut basis = DMatrix::zeros(m, m);
        for (idx, &j) in combo.iter().enumerate() {
            basis.set_column(idx, &column(j));
        }
        if let Some(solution) = basis.clone().lu().solve(b) {
            let residual = &basis * &solution - b;
            let feasible = residual.amax() <= 1e-7 && solution.iter().all(|&v| v >= -1e-9);
            if feasible {
                let objective: f64 = combo
                    .iter()
                    .zip(solution.iter())
                    .map(|(&j, &v)| if j < n { c[j] * v.max(0.0) } else { 0.0 })
                    .sum();
                best = Some(match best {
                    None => objective,
                    Some(current) => current.min(objective),
                });
            }
        }

        // Next m-combination of {0, .., total-1} in lexicographic order.
        let mut i = m as isize - 1;
        while i >= 0 && combo[i as usize] == total - m + i as usize {
            i -= 1;
        }
        if i < 0 {
            return best;
        }
        let i = i as usize;
        combo[i] += 1;
        for k in i + 1..m {
            combo[k] = combo[k - 1] + 1;
        }
    }
}

/// The Dantzig program as an inequality system over `x = (u, v)`:
/// `[S, -S; -S, S] x <= [gamma + lambda; lambda - gamma]`.
pub fn dantzig_inequalities(
    sigma: &DMatrix<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
) -> (Vec<f64>, DMatrix<f64>, DVector<f64>) {
    let p = gamma.len();
    let mut a = DMatrix::zeros(2 * p, 2 * p);
    let mut b = DVector::zeros(2 * p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] = sigma[(i, j)];
            a[(i, p + j)] = -sigma[(i, j)];
            a[(p + i, j)] = -sigma[(i, j)];
            a[(p + i, p + j)] = sigma[(i, j)];
        }
        b[i] = gamma[i] + lambda;
        b[p + i] = lambda - gamma[i];
    }
    (vec![1.0; 2 * p], a, b)
}

/// `M(delta)` for the restricted-eigenvalue quotient: the support plus the
/// `s` largest remaining coordinates (ties included).
fn m_set(delta: &[f64], in_support: &[bool], s: usize) -> Vec<bool> {
    let p = delta.len();
    let mut m = in_support.to_vec();
    let mut outside: Vec<(f64, usize)> = (0..p)
        .filter(|&j| !in_support[j])
        .map(|j| (delta[j].abs(), j))
        .collect();
    if outside.is_empty() {
        return m;
    }
    outside.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let keep = s.min(outside.len());
    let threshold = outside[keep - 1].0;
    for &(v, j) in &outside {
        if v >= threshold {
            m[j] = true;
        }
    }
    m
}

/// Dense-grid oracle for `phi^2(A, s)`: every support of size at most `s`,
/// every grid direction in `[-1, 1]^p` satisfying the cone constraint.
pub fn re_grid_oracle(a: &DMatrix<f64>, s: usize, grid_points: usize) -> f64 {
    let p = a.nrows();
    let mut best = f64::INFINITY;

    let mut supports: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    fn push_supports(
        start: usize,
        p: usize,
        max: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if !current.is_empty() {
            out.push(current.clone());
        }
        if current.len() == max {
            return;
        }
        for j in start..p {
            current.push(j);
            push_supports(j + 1, p, max, current, out);
            current.pop();
        }
    }
    push_supports(0, p, s.min(p), &mut current, &mut supports);

    let mut delta = vec![0.0f64; p];
    for support in &supports {
        let mut in_support = vec![false; p];
        for &j in support {
            in_support[j] = true;
        }
        let mut index = vec![0usize; p];
        'grid: loop {
            for j in 0..p {
                delta[j] = -1.0 + 2.0 * index[j] as f64 / (grid_points - 1) as f64;
            }
            let norm_s: f64 = (0..p).filter(|&j| in_support[j]).map(|j| delta[j].abs()).sum();
            let norm_sc: f64 = (0..p).filter(|&j| !in_support[j]).map(|j| delta[j].abs()).sum();
            let nonzero = delta.iter().any(|&v| v != 0.0);
            if nonzero && norm_sc <= norm_s {
                let m = m_set(&delta, &in_support, s);
                let mut quad = 0.0;
                for i in 0..p {
                    for j in 0..p {
                        quad += delta[i] * a[(i, j)] * delta[j];
                    }
                }
                let den: f64 = (0..p)
                    .filter(|&j| m[j])
                    .map(|j| delta[j] * delta[j])
                    .sum();
                if den > 0.0 {
                    let val = quad / den;
                    if val < best {
                        best = val;
                    }
                }
            }
            // Odometer increment.
            let mut j = 0;
            loop {
                if j == p {
                    break 'grid;
                }
                index[j] += 1;
                if index[j] < grid_points {
                    break;
                }
                index[j] = 0;
                j += 1;
            }
        }
    }
    best
}

/// Percentile bootstrap for the difference of means between two paired
/// samples; returns the requested quantile of `mean(a) - mean(b)` over
/// seeded resamples.
pub fn bootstrap_mean_diff_quantile(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    quantile: f64,
    seed: u64,
) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            let idx = rng.random_range(0..n);
            sum += a[idx] - b[idx];
        }
        diffs.push(sum / n as f64);
    }
    diffs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = ((resamples as f64 - 1.0) * quantile).round() as usize;
    diffs[pos.min(resamples - 1)]
}
