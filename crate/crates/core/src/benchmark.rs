//! The twenty-pole cascade `G(s) = Π_j μ_j / (s − μ_j)` with `μ_j` evenly
//! spaced in `[−2, −1]`, and a published order-2 delayed approximation of it.

use num_complex::Complex64;

use crate::model::{DelayBlock, DelayedModel, ImpulseResponse, PoleResidueModel, StateSpaceModel, Term};
use crate::precision::{dd, ddiv, Cdd, Dd};

pub const CASCADE_ORDER: usize = 20;

/// Reported optimal delay of the published order-2 model.
pub const REPORTED_TAU: f64 = 8.7179;
/// Reported poles `−2.0320e−1 ± 2.0700e−1 i`, positive imaginary part first.
pub const REPORTED_POLES: [[f64; 2]; 2] = [[-2.0320e-1, 2.0700e-1], [-2.0320e-1, -2.0700e-1]];
/// Reported residues, paired with [`REPORTED_POLES`].
pub const REPORTED_RESIDUES: [[f64; 2]; 2] = [[1.5713e-3, -1.8691e-1], [1.5713e-3, 1.8691e-1]];

/// The `n` cascade poles `linspace(−2, −1, n)`.
pub fn cascade_poles(n: usize) -> Vec<f64> {
    (0..n).map(|i| -2.0 + i as f64 / (n - 1) as f64).collect()
}

/// Pole/residue form with residues `Π_j μ_j / Π_{j≠k} (μ_k − μ_j)` formed in
/// double-double.
pub fn cascade_model(n: usize) -> PoleResidueModel {
    let mu = cascade_poles(n);
    let gain = mu.iter().fold(dd(1.0), |acc, &m| acc * m);
    let terms: Vec<Term> = mu
        .iter()
        .enumerate()
        .map(|(k, &mk)| {
            let denom = mu
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .fold(dd(1.0), |acc, (_, &mj)| acc * (dd(mk) - dd(mj)));
            let psi: Dd = ddiv(gain, denom);
            Term::new(Cdd::new(dd(mk), dd(0.0)), vec![Cdd::new(psi, dd(0.0))], vec![Cdd::new(dd(1.0), dd(0.0))])
        })
        .collect();
    PoleResidueModel::new_canonical(terms, 1, 1).expect("cascade poles are distinct and stable")
}

/// The benchmark model (`n = 20`).
pub fn benchmark_model() -> PoleResidueModel {
    cascade_model(CASCADE_ORDER)
}

/// `‖G‖²` of the cascade from its bidiagonal realization. The modal
/// residues reach `1e15` at `n = 20`, so the pole/residue double sum cannot
/// deliver this value.
pub fn cascade_norm_sq(n: usize) -> f64 {
    crate::h2::h2_norm_sq_state_space(&cascade_state_space(n)).expect("cascade realization is stable")
}

/// Product form `Π_j μ_j / (s − μ_j)` evaluated directly.
pub fn cascade_product(n: usize, s: Complex64) -> Complex64 {
    cascade_poles(n).iter().map(|&m| m / (s - m)).product()
}

/// Bidiagonal realization: `x_1' = μ_1 x_1 + u`, `x_j' = μ_j x_j + μ_{j−1} x_{j−1}`,
/// `y = μ_n x_n`.
pub fn cascade_state_space(n: usize) -> StateSpaceModel {
    let mu = cascade_poles(n);
    let mut a = vec![vec![0.0; n]; n];
    for j in 0..n {
        a[j][j] = mu[j];
        if j > 0 {
            a[j][j - 1] = mu[j - 1];
        }
    }
    let mut b = vec![vec![0.0]; n];
    b[0][0] = 1.0;
    let mut c = vec![vec![0.0; n]];
    c[0][n - 1] = mu[n - 1];
    StateSpaceModel::standard(a, b, c).expect("valid cascade realization")
}

/// The published order-2 delayed approximation.
pub fn reported_model() -> DelayedModel {
    let c = |p: [f64; 2]| Complex64::new(p[0], p[1]);
    let core = PoleResidueModel::siso(&[
        (c(REPORTED_POLES[0]), c(REPORTED_RESIDUES[0])),
        (c(REPORTED_POLES[1]), c(REPORTED_RESIDUES[1])),
    ])
    .expect("reported poles are stable");
    DelayedModel::new(core, DelayBlock::with_delays(vec![REPORTED_TAU]).expect("tau >= 0"), DelayBlock::none(1))
        .expect("siso blocks")
}

/// Mean over the grid of the squared Frobenius error between two sampled
/// impulse responses.
pub fn impulse_mse(a: &ImpulseResponse, b: &ImpulseResponse) -> f64 {
    let len = a.times.len();
    let mut acc = 0.0;
    for m in 0..a.ny {
        for l in 0..a.nu {
            acc += a
                .channel(m, l)
                .iter()
                .zip(b.channel(m, l))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    acc / len as f64
}

/// `n` evenly spaced samples of `[0, t_max]`.
pub fn time_grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}
