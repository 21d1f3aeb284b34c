mod common;

use common::{brute_force_second_order, random_model, rng, zero_delayed};
use delay_h2::benchmark::{benchmark_model, REPORTED_POLES, REPORTED_RESIDUES, REPORTED_TAU};
use delay_h2::h2::{build_gtilde, compute_gap, h2_norm_sq};
use delay_h2::irka::{hermite_residuals, irka_reduce, IrkaConfig, IrkaInit};
use delay_h2::precision::to_c64;
use delay_h2::{DelayBlock, PoleResidueModel};
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `1/((s+1)(s+2)(s+3))` in partial fractions.
fn third_order() -> PoleResidueModel {
    PoleResidueModel::siso(&[(c(-1.0, 0.0), c(0.5, 0.0)), (c(-2.0, 0.0), c(-1.0, 0.0)), (c(-3.0, 0.0), c(0.5, 0.0))])
        .unwrap()
}

#[test]
fn second_order_reduction_matches_brute_force() {
    let g = third_order();
    let n = h2_norm_sq(&g).unwrap();
    let cfg = IrkaConfig {
        shift_tol: 1e-12,
        ..IrkaConfig::new(2)
    };
    let red = irka_reduce(&g, &cfg).unwrap();
    assert!(red.converged);
    let j = compute_gap(&g, &zero_delayed(red.model), n).unwrap().j;
    let oracle = brute_force_second_order(&[(1.0, 0.5), (2.0, -1.0), (3.0, 0.5)], n);
    assert!((j - oracle).abs() < 1e-6, "irka {j:e}, grid {oracle:e}");
}

#[test]
fn reported_core_is_the_reduction_of_the_surrogate() {
    let g = benchmark_model();
    let gt = build_gtilde(&g, &DelayBlock::with_delays(vec![REPORTED_TAU]).unwrap(), &DelayBlock::none(1));
    let red = irka_reduce(&gt, &IrkaConfig::new(2)).unwrap();
    assert!(red.converged);
    for (k, term) in red.model.terms().iter().enumerate() {
        let pole = term.pole_c64();
        let res = to_c64(term.residue()[0]);
        let want_pole = c(REPORTED_POLES[k][0], REPORTED_POLES[k][1]);
        let want_res = c(REPORTED_RESIDUES[k][0], REPORTED_RESIDUES[k][1]);
        assert!((pole.re - want_pole.re).abs() < 1e-3 && (pole.im - want_pole.im).abs() < 1e-3, "{pole}");
        assert!((res.re - want_res.re).abs() < 1e-3 && (res.im - want_res.im).abs() < 1e-3, "{res}");
    }
}

#[test]
fn full_order_recovers_random_models() {
    let mut r = rng(7);
    let mut recovered = 0;
    for _ in 0..10 {
        let g = random_model(&mut r, 4, 2, 2);
        let red = irka_reduce(&g, &IrkaConfig::new(4)).unwrap();
        if !red.converged {
            continue;
        }
        recovered += 1;
        let n = h2_norm_sq(&g).unwrap();
        let gap = compute_gap(&g, &zero_delayed(red.model.clone()), n).unwrap();
        assert!(gap.j.abs() < 1e-9 * n, "{gap:?}");
        for (a, b) in g.poles().iter().zip(red.model.poles()) {
            assert!((a - b).norm() < 1e-6, "{a} vs {b}");
        }
    }
    assert!(recovered >= 8, "{recovered}");
}

#[test]
fn converged_reductions_interpolate() {
    let mut r = rng(17);
    let mut checked = 0;
    for (ny, nu) in [(1, 1), (2, 1), (2, 3)] {
        for _ in 0..4 {
            let g = random_model(&mut r, 8, ny, nu);
            let cfg = IrkaConfig {
                shift_tol: 1e-12,
                ..IrkaConfig::new(3)
            };
            let red = irka_reduce(&g, &cfg).unwrap();
            if !red.converged {
                continue;
            }
            checked += 1;
            for [right, left, hermite] in hermite_residuals(&g, &red).unwrap() {
                assert!(right < 1e-8 && left < 1e-8 && hermite < 1e-8, "{right:e} {left:e} {hermite:e}");
            }
            assert!(red.model.poles().iter().all(|p| p.re < 0.0));
        }
    }
    assert!(checked >= 6, "{checked}");
}

#[test]
fn warm_start_at_a_fixed_point_stays_put() {
    let g = benchmark_model();
    let first = irka_reduce(&g, &IrkaConfig::new(2)).unwrap();
    assert!(first.converged);
    let cfg = IrkaConfig {
        init: IrkaInit::from_model(&first.model),
        ..IrkaConfig::new(2)
    };
    let again = irka_reduce(&g, &cfg).unwrap();
    assert!(again.converged);
    assert!(again.iterations <= 2, "{}", again.iterations);
    for (a, b) in first.model.poles().iter().zip(again.model.poles()) {
        assert!((a - b).norm() < 1e-7);
    }
}

#[test]
fn random_restart_is_reproducible() {
    let mut r = rng(27);
    let g = random_model(&mut r, 6, 1, 2);
    let cfg = IrkaConfig {
        init: IrkaInit::RandomStable { seed: 99 },
        ..IrkaConfig::new(2)
    };
    let a = irka_reduce(&g, &cfg).unwrap();
    let b = irka_reduce(&g, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn invalid_configurations() {
    let g = third_order();
    assert!(irka_reduce(&g, &IrkaConfig::new(0)).is_err());
    assert!(irka_reduce(&g, &IrkaConfig::new(4)).is_err());
    let bad_shift = IrkaConfig {
        init: IrkaInit::User {
            shifts: vec![[-1.0, 0.0]],
            right: vec![vec![[1.0, 0.0]]],
            left: vec![vec![[1.0, 0.0]]],
        },
        ..IrkaConfig::new(1)
    };
    assert!(irka_reduce(&g, &bad_shift).is_err());
}
