#![allow(dead_code)]

use delay_h2::precision::cdd;
use delay_h2::{DelayBlock, DelayedModel, PoleResidueModel, StateSpaceModel, Term};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cvec(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn rvec(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
    (0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect()
}

fn term(pole: Complex64, left: &[Complex64], right: &[Complex64]) -> Term {
    Term::new(cdd(pole), left.iter().map(|z| cdd(*z)).collect(), right.iter().map(|z| cdd(*z)).collect())
}

/// Stable, conjugate-closed model of order `n` with a mix of real poles and
/// complex pairs.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, ny: usize, nu: usize) -> PoleResidueModel {
    let mut terms = Vec::new();
    while terms.len() < n {
        let re = -rng.random_range(0.2..3.0);
        if n - terms.len() >= 2 && rng.random_bool(0.6) {
            let p = Complex64::new(re, rng.random_range(0.2..3.0));
            let (l, r) = (cvec(rng, ny), cvec(rng, nu));
            terms.push(term(p, &l, &r));
            let conj = |v: &[Complex64]| v.iter().map(|z| z.conj()).collect::<Vec<_>>();
            terms.push(term(p.conj(), &conj(&l), &conj(&r)));
        } else {
            terms.push(term(Complex64::new(re, 0.0), &rvec(rng, ny), &rvec(rng, nu)));
        }
    }
    PoleResidueModel::new_canonical(terms, ny, nu).expect("random poles are distinct")
}

pub fn random_delays(rng: &mut ChaCha8Rng, len: usize, max: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.0..max)).collect()
}

pub fn random_delayed(rng: &mut ChaCha8Rng, n: usize, ny: usize, nu: usize) -> DelayedModel {
    let core = random_model(rng, n, ny, nu);
    let tau = random_delays(rng, nu, 2.0);
    let gamma = random_delays(rng, ny, 2.0);
    DelayedModel::new(core, DelayBlock::with_delays(tau).unwrap(), DelayBlock::with_delays(gamma).unwrap()).unwrap()
}

fn rmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// `E` symmetric positive definite and `A = K − P` with `K` skew and `P`
/// positive definite, so every generalized eigenvalue is stable.
pub fn random_state_space(rng: &mut ChaCha8Rng, n: usize, ny: usize, nu: usize) -> StateSpaceModel {
    let gram = |m: &[Vec<f64>], shift: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>() + if i == j { shift } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    let e = gram(&rmat(rng, n, n), 1.0);
    let p = gram(&rmat(rng, n, n), 0.3);
    let k = rmat(rng, n, n);
    let a = (0..n)
        .map(|i| (0..n).map(|j| 2.0 * (k[i][j] - k[j][i]) - p[i][j]).collect())
        .collect();
    StateSpaceModel::new(e, a, rmat(rng, n, nu), rmat(rng, ny, n)).unwrap()
}

pub fn rel_err(got: Complex64, want: Complex64) -> f64 {
    (got - want).norm() / want.norm()
}

/// Same model with one real coordinate of term `k` moved by `h`, mirrored
/// onto its conjugate partner. `which`: 0 = pole, 1 = left entry, 2 = right
/// entry; `imag` selects the imaginary direction.
pub fn perturb(m: &PoleResidueModel, k: usize, which: usize, index: usize, imag: bool, h: f64) -> PoleResidueModel {
    let partners = m.conjugate_partners().expect("closed model");
    let mut terms = m.terms().to_vec();
    let step = if imag { Complex64::new(0.0, h) } else { Complex64::new(h, 0.0) };
    let apply = |t: &mut Term, d: Complex64| match which {
        0 => t.pole += cdd(d),
        1 => t.left[index] += cdd(d),
        _ => t.right[index] += cdd(d),
    };
    apply(&mut terms[k], step);
    if partners[k] != k {
        apply(&mut terms[partners[k]], step.conj());
    }
    PoleResidueModel::new(terms, m.ny(), m.nu()).unwrap()
}

pub fn zero_delayed(m: PoleResidueModel) -> DelayedModel {
    DelayedModel::undelayed(m)
}

pub fn gap(g: &PoleResidueModel, hd: &DelayedModel) -> f64 {
    let n = delay_h2::h2::h2_norm_sq(g).unwrap();
    delay_h2::h2::compute_gap(g, hd, n).unwrap().j
}

pub fn with_core(hd: &DelayedModel, core: PoleResidueModel) -> DelayedModel {
    DelayedModel::new(core, hd.input_delays.clone(), hd.output_delays.clone()).unwrap()
}

pub fn with_delays(hd: &DelayedModel, tau: Vec<f64>, gamma: Vec<f64>) -> DelayedModel {
    DelayedModel::new(
        hd.core.clone(),
        hd.input_delays.with_values(&tau).unwrap(),
        hd.output_delays.with_values(&gamma).unwrap(),
    )
    .unwrap()
}

/// Worst relative mismatch between every analytic gradient and central
/// differences of the gap, scaled by the largest gradient entry.
pub fn gradient_check(g: &PoleResidueModel, hd: &DelayedModel) -> f64 {
    use delay_h2::h2;
    let h = 1e-6;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let (gin, gout) = h2::grad_delays(g, hd).unwrap();
    let (tau, gamma) = (hd.input_delays.delays().to_vec(), hd.output_delays.delays().to_vec());
    for l in 0..tau.len() {
        let (mut p, mut m) = (tau.clone(), tau.clone());
        p[l] += h;
        m[l] -= h;
        let fd = (gap(g, &with_delays(hd, p, gamma.clone())) - gap(g, &with_delays(hd, m, gamma.clone()))) / (2.0 * h);
        pairs.push((gin[l], fd));
    }
    for k in 0..gamma.len() {
        let (mut p, mut m) = (gamma.clone(), gamma.clone());
        p[k] += h;
        m[k] -= h;
        let fd = (gap(g, &with_delays(hd, tau.clone(), p)) - gap(g, &with_delays(hd, tau.clone(), m))) / (2.0 * h);
        pairs.push((gout[k], fd));
    }
    let gt = h2::build_gtilde(g, &hd.input_delays, &hd.output_delays);
    let grads = h2::real_gradients(&hd.core, &h2::grad_residues_poles(&gt, &hd.core).unwrap()).unwrap();
    let (ny, nu) = (hd.core.ny(), hd.core.nu());
    for k in 0..hd.core.order() {
        let mut coords: Vec<(usize, usize, [f64; 2])> = vec![(0, 0, grads.dl[k])];
        coords.extend((0..ny).map(|i| (1, i, grads.dc[k][i])));
        coords.extend((0..nu).map(|i| (2, i, grads.db[k][i])));
        let real_term = hd.core.terms()[k].pole.im.hi() == 0.0;
        for (which, index, an) in coords {
            for (part, imag) in [(0, false), (1, true)] {
                // a real term has no free imaginary coordinates
                if real_term && imag {
                    continue;
                }
                let jp = gap(g, &with_core(hd, perturb(&hd.core, k, which, index, imag, h)));
                let jm = gap(g, &with_core(hd, perturb(&hd.core, k, which, index, imag, -h)));
                pairs.push((an[part], (jp - jm) / (2.0 * h)));
            }
        }
    }
    let scale = pairs.iter().map(|(a, _)| a.abs()).fold(0.0, f64::max).max(1e-12);
    pairs.iter().map(|(a, f)| (a - f).abs() / a.abs().max(1e-3 * scale)).fold(0.0, f64::max)
}

/// Gap of the best `(as + b)/(s² + ps + q)` for fixed `(p, q)` against
/// `G = Σ g/(s + s_j)` given as `(s_j, g)` pairs with real `s_j > 0`.
///
/// `‖H‖² = (a²q + b²)/(2pq)` and `⟨G, H⟩ = Σ g_j H(−μ_j)` is linear in
/// `(a, b)`, so the inner minimization is closed-form:
/// `J = ‖G‖² − 2p(α² + qβ²)`.
fn profile_gap(terms: &[(f64, f64)], norm_g_sq: f64, p: f64, q: f64) -> f64 {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    for &(s, g) in terms {
        let d = s * s + p * s + q;
        alpha += g * s / d;
        beta += g / d;
    }
    norm_g_sq - 2.0 * p * (alpha * alpha + q * beta * beta)
}

/// Best second-order gap for a real-pole SISO model: grid search over the
/// stable `(p, q)` quadrant followed by repeated zooms around the incumbent.
pub fn brute_force_second_order(terms: &[(f64, f64)], norm_g_sq: f64) -> f64 {
    let (mut pc, mut qc, mut pw, mut qw) = (10.0, 20.0, 10.0, 20.0);
    let mut best = f64::INFINITY;
    for _ in 0..30 {
        let k = 200;
        let (mut bp, mut bq) = (pc, qc);
        for i in 0..=k {
            for j in 0..=k {
                let p = pc - pw + 2.0 * pw * i as f64 / k as f64;
                let q = qc - qw + 2.0 * qw * j as f64 / k as f64;
                if p <= 0.0 || q <= 0.0 {
                    continue;
                }
                let v = profile_gap(terms, norm_g_sq, p, q);
                if v < best {
                    best = v;
                    bp = p;
                    bq = q;
                }
            }
        }
        pc = bp;
        qc = bq;
        pw *= 0.1;
        qw *= 0.1;
        pw = pw.max(1e-12);
        qw = qw.max(1e-12);
    }
    best
}
