//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c^T x` subject to `A x <= b`, `x >= 0`. Bland's rule (lowest
//! admissible index for both the entering column and the leaving row)
//! guarantees termination without cycling; ties and alternative optima are
//! therefore resolved deterministically.

pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexStatus {
    Optimal,
    Infeasible,
    IterationCap,
    /// Unreachable for programs with componentwise nonnegative costs; kept so
    /// numerical degeneracies are reported rather than mislabelled.
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub status: SimplexStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    /// (m + 1) rows by (width + 1) columns; last row is the objective, last
    /// column the right-hand side.
    data: Vec<f64>,
    m: usize,
    width: usize,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.width + 1) + c]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * (self.width + 1) + c]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let stride = self.width + 1;
        let pivot_value = self.at(row, col);
        let (before, rest) = self.data.split_at_mut(row * stride);
        let (pivot_row, after) = rest.split_at_mut(stride);
        for v in pivot_row.iter_mut() {
            *v /= pivot_value;
        }
        let eliminate = |chunk: &mut [f64]| {
            for r in chunk.chunks_exact_mut(stride) {
                let factor = r[col];
                if factor.abs() < 1e-14 {
                    continue;
                }
                for (v, pv) in r.iter_mut().zip(pivot_row.iter()) {
                    *v -= factor * pv;
                }
            }
        };
        eliminate(before);
        eliminate(after);
        self.basis[row] = col;
    }

    /// One simplex phase under Bland's rule. `allowed` restricts the columns
    /// permitted to enter the basis.
    fn iterate(
        &mut self,
        allowed: &dyn Fn(usize) -> bool,
        iterations: &mut usize,
        cap: usize,
    ) -> SimplexStatus {
        loop {
            if *iterations >= cap {
                return SimplexStatus::IterationCap;
            }
            // Entering column: lowest index with strictly negative reduced
            // cost (minimisation tableau).
            let mut entering = None;
            for c in 0..self.width {
                if allowed(c) && self.at(self.m, c) < -PIVOT_TOL {
                    entering = Some(c);
                    break;
                }
            }
            let Some(col) = entering else {
                return SimplexStatus::Optimal;
            };

            // Leaving row: minimum ratio, ties broken by the lowest basic
            // variable index.
            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, col);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.width) / a;
                    let better = match leaving {
                        None => true,
                        Some((best_row, best_ratio)) => {
                            ratio < best_ratio - 1e-12
                                || ((ratio - best_ratio).abs() <= 1e-12
                                    && self.basis[r] < self.basis[best_row])
                        }
                    };
                    if better {
                        leaving = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return SimplexStatus::Unbounded;
            };

            self.pivot(row, col);
            *iterations += 1;
        }
    }
}

/// Solves `min c^T x` s.t. `A x <= b`, `x >= 0` (dense row-major `a` with
/// `m` rows of length `n`). The iteration cap is `50 * (rows + columns)`
/// counting slack and artificial columns.
pub fn solve(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> SimplexOutcome {
    let m = a.len();
    let n = c.len();

    // Normalise to nonnegative right-hand sides; flipped rows become >=
    // constraints needing a surplus and an artificial variable.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut flipped = Vec::with_capacity(m);
    for (row, &bi) in a.iter().zip(b) {
        if bi < 0.0 {
            rows.push(row.iter().map(|v| -v).collect());
            rhs.push(-bi);
            flipped.push(true);
        } else {
            rows.push(row.clone());
            rhs.push(bi);
            flipped.push(false);
        }
    }

    let n_artificial = flipped.iter().filter(|&&f| f).count();
    let width = n + m + n_artificial;
    let cap = 50 * (m + width);

    let mut tab = Tableau {
        data: vec![0.0; (m + 1) * (width + 1)],
        m,
        width,
        basis: vec![0; m],
    };

    let mut artificial_idx = n + m;
    let artificial_start = n + m;
    for r in 0..m {
        for (cidx, &coeff) in rows[r].iter().enumerate() {
            *tab.at_mut(r, cidx) = coeff;
        }
        // Slack (or surplus, when the row was flipped).
        *tab.at_mut(r, n + r) = if flipped[r] { -1.0 } else { 1.0 };
        *tab.at_mut(r, width) = rhs[r];
        if flipped[r] {
            *tab.at_mut(r, artificial_idx) = 1.0;
            tab.basis[r] = artificial_idx;
            artificial_idx += 1;
        } else {
            tab.basis[r] = n + r;
        }
    }

    let mut iterations = 0usize;

    // Phase 1: minimise the sum of artificials.
    if n_artificial > 0 {
        for cidx in artificial_start..width {
            *tab.at_mut(m, cidx) = 1.0;
        }
        // Canonicalise: subtract artificial rows from the objective.
        for r in 0..m {
            if tab.basis[r] >= artificial_start {
                for cidx in 0..=width {
                    let v = tab.at(r, cidx);
                    *tab.at_mut(m, cidx) -= v;
                }
            }
        }
        let status = tab.iterate(&|_| true, &mut iterations, cap);
        match status {
            SimplexStatus::Optimal => {}
            other => {
                return SimplexOutcome {
                    status: other,
                    x: vec![0.0; n],
                    objective: f64::NAN,
                    iterations,
                };
            }
        }
        // The phase-1 objective row holds -sum(artificials).
        if -tab.at(m, width) > 1e-7 {
            return SimplexOutcome {
                status: SimplexStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
                iterations,
            };
        }
        // Drive any artificial still basic at zero out of the basis; rows
        // with no admissible pivot are redundant and can stay inert.
        for r in 0..m {
            if tab.basis[r] >= artificial_start {
                let col = (0..artificial_start).find(|&cidx| tab.at(r, cidx).abs() > PIVOT_TOL);
                if let Some(cidx) = col {
                    tab.pivot(r, cidx);
                    iterations += 1;
                }
            }
        }
    }

    // Phase 2: restore the real objective and canonicalise for the basis.
    for cidx in 0..=width {
        *tab.at_mut(m, cidx) = 0.0;
    }
    for (cidx, &cost) in c.iter().enumerate() {
        *tab.at_mut(m, cidx) = cost;
    }
    for r in 0..m {
        let basic = tab.basis[r];
        let factor = tab.at(m, basic);
        if factor.abs() > 1e-14 {
            for cidx in 0..=width {
                let v = tab.at(r, cidx);
                *tab.at_mut(m, cidx) -= factor * v;
            }
        }
    }

    let status = tab.iterate(&|cidx| cidx < artificial_start, &mut iterations, cap);

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.at(r, width);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();

    SimplexOutcome {
        status,
        x,
        objective,
        iterations,
    }
}
