//! Small dense two-phase simplex solver for the dominance LPs.
//!
//! Instances here are tiny (a handful of variables, a handful of
//! constraints), so a plain tableau with Bland's rule is plenty.

/// Constraint sense for [`solve_max`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
}

const EPS: f64 = 1e-11;

/// Maximize `c . x` subject to `rows[i] . x (sense_i) rhs_i` and `x >= 0`.
pub fn solve_max(
    c: &[f64],
    rows: &[Vec<f64>],
    senses: &[Sense],
    rhs: &[f64],
) -> Result<LpSolution, LpError> {
    let n = c.len();
    let m = rows.len();
    assert_eq!(senses.len(), m);
    assert_eq!(rhs.len(), m);

    // Standard form: flip rows so rhs >= 0, then add one slack/surplus per
    // inequality and one artificial wherever a feasible basis column is
    // missing.
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut b: Vec<f64> = Vec::with_capacity(m);
    let mut sense_std: Vec<Sense> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = rows[i].clone();
        assert_eq!(row.len(), n);
        let mut bi = rhs[i];
        let mut s = senses[i];
        if bi < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
            bi = -bi;
            s = match s {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        a.push(row);
        b.push(bi);
        sense_std.push(s);
    }

    let n_slack = sense_std.iter().filter(|s| **s != Sense::Eq).count();
    let n_art = sense_std.iter().filter(|s| **s != Sense::Le).count();
    let total = n + n_slack + n_art;

    // tableau[i] = [coefficients..., rhs]
    let mut t = vec![vec![0.0; total + 1]; m];
    let mut basis = vec![usize::MAX; m];
    let mut slack_at = n;
    let mut art_at = n + n_slack;
    let mut art_cols: Vec<usize> = Vec::new();
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][total] = b[i];
        match sense_std[i] {
            Sense::Le => {
                t[i][slack_at] = 1.0;
                basis[i] = slack_at;
                slack_at += 1;
            }
            Sense::Ge => {
                t[i][slack_at] = -1.0;
                slack_at += 1;
                t[i][art_at] = 1.0;
                basis[i] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
            Sense::Eq => {
                t[i][art_at] = 1.0;
                basis[i] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
        }
    }

    // Phase 1: minimize sum of artificials.
    if !art_cols.is_empty() {
        let mut obj = vec![0.0; total + 1];
        for &j in &art_cols {
            obj[j] = -1.0;
        }
        // Price out the artificial basis.
        for i in 0..m {
            if art_cols.contains(&basis[i]) {
                for j in 0..=total {
                    obj[j] += t[i][j];
                }
            }
        }
        run_simplex(&mut t, &mut obj, &mut basis, total)?;
        if obj[total] > EPS {
            return Err(LpError::Infeasible);
        }
        // Drive remaining artificials out of the basis if possible.
        for i in 0..m {
            if art_cols.contains(&basis[i]) {
                if let Some(j) = (0..n + n_slack).find(|&j| t[i][j].abs() > EPS) {
                    pivot(&mut t, &mut basis, i, j, total);
                }
            }
        }
    }

    // Phase 2: maximize c.x with artificial columns frozen.
    let mut obj = vec![0.0; total + 1];
    obj[..n].copy_from_slice(c);
    for &j in &art_cols {
        obj[j] = f64::NEG_INFINITY; // never re-enter
    }
    // Price out the current basis.
    for i in 0..m {
        let bj = basis[i];
        if obj[bj] != 0.0 && obj[bj].is_finite() {
            let coeff = obj[bj];
            for j in 0..=total {
                obj[j] -= coeff * t[i][j];
            }
        }
    }
    run_simplex(&mut t, &mut obj, &mut basis, total)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i][total];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { objective, x })
}

/// Simplex iterations on a maximization tableau; `obj` holds reduced costs
/// negated in the usual "row zero" convention (entering column has positive
/// reduced cost).
fn run_simplex(
    t: &mut [Vec<f64>],
    obj: &mut [f64],
    basis: &mut [usize],
    total: usize,
) -> Result<(), LpError> {
    let m = t.len();
    loop {
        // Bland's rule: smallest improving index.
        let Some(enter) = (0..total).find(|&j| obj[j] > EPS && obj[j].is_finite()) else {
            return Ok(());
        };
        let mut leave = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[i][enter] > EPS {
                let ratio = t[i][total] / t[i][enter];
                if ratio < best - EPS || (ratio < best + EPS && leave.is_none()) {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(LpError::Unbounded);
        };
        pivot_with_obj(t, obj, basis, row, enter, total);
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, total: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut().take(total + 1) {
        *v /= p;
    }
    for i in 0..t.len() {
        if i != row && t[i][col].abs() > 0.0 {
            let f = t[i][col];
            for j in 0..=total {
                t[i][j] -= f * t[row][j];
            }
        }
    }
    basis[row] = col;
}

fn pivot_with_obj(
    t: &mut [Vec<f64>],
    obj: &mut [f64],
    basis: &mut [usize],
    row: usize,
    col: usize,
    total: usize,
) {
    pivot(t, basis, row, col, total);
    let f = obj[col];
    if f != 0.0 && f.is_finite() {
        for j in 0..=total {
            if obj[j].is_finite() {
                obj[j] -= f * t[row][j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simple_le() {
        // max x + y s.t. x + y <= 1, x <= 0.6
        let sol = solve_max(
            &[1.0, 1.0],
            &[vec![1.0, 1.0], vec![1.0, 0.0]],
            &[Sense::Le, Sense::Le],
            &[1.0, 0.6],
        )
        .unwrap();
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_and_ge() {
        // max d s.t. p1 + p2 = 1, 2 p1 - d >= 0, 2 p2 - d >= 0
        // optimum at p = (1/2, 1/2), d = 1.
        let sol = solve_max(
            &[0.0, 0.0, 1.0],
            &[
                vec![1.0, 1.0, 0.0],
                vec![2.0, 0.0, -1.0],
                vec![0.0, 2.0, -1.0],
            ],
            &[Sense::Eq, Sense::Ge, Sense::Ge],
            &[1.0, 0.0, 0.0],
        )
        .unwrap();
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        // x <= 1 and x >= 2
        let err = solve_max(
            &[1.0],
            &[vec![1.0], vec![1.0]],
            &[Sense::Le, Sense::Ge],
            &[1.0, 2.0],
        )
        .unwrap_err();
        assert_eq!(err, LpError::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let err = solve_max(&[1.0], &[vec![-1.0]], &[Sense::Le], &[1.0]).unwrap_err();
        assert_eq!(err, LpError::Unbounded);
    }

    #[test]
    fn negative_rhs_normalized() {
        // max -x s.t. -x <= -0.25  (i.e. x >= 0.25)
        let sol = solve_max(&[-1.0], &[vec![-1.0]], &[Sense::Le], &[-0.25]).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.25, epsilon = 1e-9);
    }
}
