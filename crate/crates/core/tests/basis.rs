use ergoscout::ergodic::{CoefficientVector, FourierBasis, Workspace};
use proptest::prelude::*;

fn simpson(n: usize, lo: f64, len: f64) -> Vec<(f64, f64)> {
    let h = len / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            ((lo + i as f64 * h).min(lo + len), c * h / 3.0)
        })
        .collect()
}

fn workspace() -> impl Strategy<Value = Workspace> {
    (1.0..200.0f64, 1.0..200.0f64, -100.0..100.0f64, -100.0..100.0f64)
        .prop_map(|(lx, ly, ox, oy)| Workspace::new(vec![lx, ly], vec![ox, oy]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn basis_is_orthonormal(ws in workspace()) {
        let basis = FourierBasis::new(ws.clone(), 5).unwrap();
        let xs = simpson(201, ws.lower(0), ws.lengths()[0]);
        let ys = simpson(201, ws.lower(1), ws.lengths()[1]);
        let n = basis.len();
        let mut gram = vec![0.0; n * n];
        let mut vals = vec![0.0; n];
        for &(y, wy) in &ys {
            for &(x, wx) in &xs {
                for (i, v) in vals.iter_mut().enumerate() {
                    *v = basis.basis_value(i, &[x, y]).unwrap();
                }
                for i in 0..n {
                    for j in i..n {
                        gram[i * n + j] += wx * wy * vals[i] * vals[j];
                    }
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[i * n + j] - want).abs() < 1e-6, "<F{i}, F{j}> = {}", gram[i * n + j]);
            }
        }
    }

    #[test]
    fn metric_is_nonnegative_and_zero_at_equality(
        c in prop::collection::vec(-1.0..1.0f64, 36),
        phi in prop::collection::vec(-1.0..1.0f64, 36),
    ) {
        let basis = FourierBasis::new(Workspace::planar(10.0, 10.0).unwrap(), 6).unwrap();
        let (c, phi) = (CoefficientVector(c), CoefficientVector(phi));
        prop_assert!(basis.ergodic_metric(&c, &phi).unwrap() >= 0.0);
        prop_assert_eq!(basis.ergodic_metric(&phi, &phi).unwrap(), 0.0);
    }

    #[test]
    fn translation_leaves_metric_unchanged(
        ws in workspace(),
        shift in (-500.0..500.0f64, -500.0..500.0f64),
        unit in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..30),
        phi in prop::collection::vec(-0.1..0.1f64, 49),
    ) {
        let moved = ws.shifted(&[shift.0, shift.1]).unwrap();
        let here = FourierBasis::new(ws.clone(), 7).unwrap();
        let there = FourierBasis::new(moved.clone(), 7).unwrap();
        let place = |w: &Workspace, (a, b): (f64, f64)| vec![w.lower(0) + a * w.lengths()[0], w.lower(1) + b * w.lengths()[1]];
        let p: Vec<Vec<f64>> = unit.iter().map(|&u| place(&ws, u)).collect();
        let q: Vec<Vec<f64>> = unit.iter().map(|&u| place(&moved, u)).collect();
        let phi = CoefficientVector(phi);
        let e0 = here.ergodic_metric(&here.trajectory_coefficients(&p).unwrap(), &phi).unwrap();
        let e1 = there.ergodic_metric(&there.trajectory_coefficients(&q).unwrap(), &phi).unwrap();
        prop_assert!((e0 - e1).abs() < 1e-12, "{e0} vs {e1}");
    }

    #[test]
    fn stationary_point_coefficients_are_basis_values(
        ws in workspace(),
        u in (0.0..1.0f64, 0.0..1.0f64),
        t in 1usize..20,
    ) {
        let basis = FourierBasis::new(ws.clone(), 4).unwrap();
        let w = vec![ws.lower(0) + u.0 * ws.lengths()[0], ws.lower(1) + u.1 * ws.lengths()[1]];
        let c = basis.trajectory_coefficients(&vec![w.clone(); t]).unwrap();
        for i in 0..basis.len() {
            prop_assert!((c.0[i] - basis.basis_value(i, &w).unwrap()).abs() < 1e-12);
        }
    }
}
