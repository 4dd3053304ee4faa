use cacc_core::lp::{check_solution, solve, LpProblem, LpStatus};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use proptest::prelude::*;

/// 2-D LP over `rows` plus the box `|x|, |y| <= 10`.
fn boxed(objective: [f64; 2], rows: &[([f64; 2], f64)]) -> LpProblem {
    let mut all: Vec<([f64; 2], f64)> = rows.to_vec();
    all.extend([([1.0, 0.0], 10.0), ([-1.0, 0.0], 10.0), ([0.0, 1.0], 10.0), ([0.0, -1.0], 10.0)]);
    let mut p = LpProblem::new(2);
    p.objective = DVector::from_row_slice(&objective);
    p.ineq_lhs = DMatrix::from_row_iterator(all.len(), 2, all.iter().flat_map(|(a, _)| a.iter().copied()));
    p.ineq_rhs = DVector::from_iterator(all.len(), all.iter().map(|(_, b)| *b));
    p
}

/// Minimum over all feasible pairwise row intersections.
fn brute_force(p: &LpProblem) -> Option<f64> {
    let m = p.num_ineq();
    let mut best: Option<f64> = None;
    for i in 0..m {
        for j in (i + 1)..m {
            let a = Matrix2::new(p.ineq_lhs[(i, 0)], p.ineq_lhs[(i, 1)], p.ineq_lhs[(j, 0)], p.ineq_lhs[(j, 1)]);
            if a.determinant().abs() < 1e-9 {
                continue;
            }
            let x = a.try_inverse().unwrap() * Vector2::new(p.ineq_rhs[i], p.ineq_rhs[j]);
            let z = DVector::from_row_slice(x.as_slice());
            let slack = &p.ineq_lhs * &z - &p.ineq_rhs;
            if slack.max() <= 1e-9 {
                let v = p.evaluate(&z);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
    }
    best
}

fn row() -> impl Strategy<Value = ([f64; 2], f64)> {
    (prop::array::uniform2(-5.0..5.0f64), -8.0..8.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_vertex_enumeration(
        c in prop::array::uniform2(-5.0..5.0f64),
        rows in prop::collection::vec(row(), 0..8),
    ) {
        let p = boxed(c, &rows);
        let sol = solve(&p, 1000).unwrap();
        match brute_force(&p) {
            Some(best) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective_value - best).abs() < 1e-7 * (1.0 + best.abs()),
                    "simplex {} vs vertices {best}", sol.objective_value);
                prop_assert!(check_solution(&p, &sol.z).unwrap().within_tolerance(&p));
            }
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn deterministic(
        c in prop::array::uniform2(-5.0..5.0f64),
        rows in prop::collection::vec(row(), 0..8),
    ) {
        let p = boxed(c, &rows);
        let a = solve(&p, 1000).unwrap();
        let b = solve(&p, 1000).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert!(a.z.iter().zip(b.z.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn equality_reduction_agrees(
        c in prop::array::uniform3(-5.0..5.0f64),
        e in prop::array::uniform3(-3.0..3.0f64),
        rhs in -4.0..4.0f64,
    ) {
        // min c.x s.t. e.x = rhs, |x_i| <= 5, compared against a fine sweep
        // over the two free coordinates once the largest |e_i| is eliminated.
        prop_assume!(e.iter().any(|v| v.abs() > 0.5));
        let k = (0..3).max_by(|&a, &b| e[a].abs().total_cmp(&e[b].abs())).unwrap();
        let mut p = LpProblem::new(3);
        p.objective = DVector::from_row_slice(&c);
        p.eq_lhs = DMatrix::from_row_slice(1, 3, &e);
        p.eq_rhs = DVector::from_element(1, rhs);
        let mut lhs = DMatrix::zeros(6, 3);
        for i in 0..3 {
            lhs[(2 * i, i)] = 1.0;
            lhs[(2 * i + 1, i)] = -1.0;
        }
        p.ineq_lhs = lhs;
        p.ineq_rhs = DVector::from_element(6, 5.0);
        let sol = solve(&p, 1000).unwrap();

        let others: Vec<usize> = (0..3).filter(|&i| i != k).collect();
        let mut best = f64::INFINITY;
        let n = 200;
        for i in 0..=n {
            for j in 0..=n {
                let mut x = [0.0; 3];
                x[others[0]] = -5.0 + 10.0 * i as f64 / n as f64;
                x[others[1]] = -5.0 + 10.0 * j as f64 / n as f64;
                x[k] = (rhs - e[others[0]] * x[others[0]] - e[others[1]] * x[others[1]]) / e[k];
                if x[k].abs() <= 5.0 {
                    best = best.min(c[0] * x[0] + c[1] * x[1] + c[2] * x[2]);
                }
            }
        }
        if best.is_finite() {
            prop_assert_eq!(sol.status, LpStatus::Optimal);
            // the sweep is a grid, so it can only be worse than the true optimum
            prop_assert!(sol.objective_value <= best + 1e-7);
            prop_assert!(best - sol.objective_value < 0.5);
            prop_assert!(check_solution(&p, &sol.z).unwrap().within_tolerance(&p));
        }
    }
}

#[test]
fn open_direction_is_unbounded() {
    let mut p = LpProblem::new(2);
    p.objective = DVector::from_row_slice(&[1.0, 1.0]);
    p.ineq_lhs = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
    p.ineq_rhs = DVector::from_element(1, 0.0);
    assert_eq!(solve(&p, 100).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn degenerate_vertex_terminates() {
    // many rows through the optimal vertex (1, 1)
    let rows: Vec<([f64; 2], f64)> = (0..12)
        .map(|i| {
            let th = 0.1 + 1.3 * i as f64 / 11.0;
            ([th.cos(), th.sin()], th.cos() + th.sin())
        })
        .collect();
    let p = boxed([-1.0, -1.0], &rows);
    let sol = solve(&p, 1000).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective_value + 2.0).abs() < 1e-9);
}
