//! Tangential IRKA for a model given in pole/residue form.
//!
//! The projected matrices are assembled directly from the poles and residues
//! of the model being reduced, so no state-space realization is ever formed.

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::h2;
use crate::linalg;
use crate::model::{PoleResidueModel, Term};
use crate::precision::{cdd, crecip, czero, to_c64, Cdd};

/// How the first shifts and tangential directions are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IrkaInit {
    /// Real shifts log-spaced over the magnitude range of the model's poles.
    LogSpacedReal,
    /// Real shifts drawn uniformly over the same range, random directions.
    RandomStable { seed: u64 },
    /// Explicit shifts (right half-plane) and directions, as `[re, im]` pairs.
    User {
        shifts: Vec<[f64; 2]>,
        right: Vec<Vec<[f64; 2]>>,
        left: Vec<Vec<[f64; 2]>>,
    },
}

impl IrkaInit {
    /// Warm start from a reduced model: shifts at the mirrored poles and its
    /// own residue directions.
    pub fn from_model(h: &PoleResidueModel) -> Self {
        let pair = |z: Complex64| [z.re, z.im];
        let dirs = |v: &[Cdd]| normalize(&v.iter().map(|z| to_c64(*z)).collect::<Vec<_>>()).into_iter().map(pair).collect();
        IrkaInit::User {
            shifts: h.poles().into_iter().map(|p| pair(-p)).collect(),
            right: h.terms().iter().map(|t| dirs(&t.right)).collect(),
            left: h.terms().iter().map(|t| dirs(&t.left)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrkaConfig {
    pub order: usize,
    pub max_iters: usize,
    /// Relative movement of the shift set below which iteration stops.
    pub shift_tol: f64,
    pub init: IrkaInit,
    /// Seed of one randomized restart attempted when the first run fails or
    /// does not converge.
    pub retry_seed: Option<u64>,
}

impl IrkaConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            max_iters: 200,
            shift_tol: 1e-8,
            init: IrkaInit::LogSpacedReal,
            retry_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrkaResult {
    pub model: PoleResidueModel,
    pub iterations: usize,
    pub converged: bool,
    pub final_shift_movement: f64,
    /// Number of unstable reduced poles mirrored into the left half-plane.
    pub reflections: usize,
}

struct Interpolation {
    shifts: Vec<Complex64>,
    right: Vec<Vec<Complex64>>,
    left: Vec<Vec<Complex64>>,
}

fn normalize(v: &[Complex64]) -> Vec<Complex64> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|z| z / n).collect()
}

fn initial(g: &PoleResidueModel, cfg: &IrkaConfig) -> Result<Interpolation> {
    let n = cfg.order;
    let mags: Vec<f64> = g.poles().iter().map(|p| p.norm()).collect();
    let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().cloned().fold(0.0, f64::max);
    let (ny, nu) = (g.ny(), g.nu());
    let unit = |len: usize| vec![Complex64::new(1.0 / (len as f64).sqrt(), 0.0); len];
    match &cfg.init {
        IrkaInit::LogSpacedReal => {
            let shifts = (0..n)
                .map(|i| {
                    let f = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                    Complex64::new(lo * (hi / lo).powf(f), 0.0)
                })
                .collect();
            Ok(Interpolation {
                shifts,
                right: vec![unit(nu); n],
                left: vec![unit(ny); n],
            })
        }
        IrkaInit::RandomStable { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut shifts: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(lo..=hi), 0.0)).collect();
            shifts.sort_by(|a, b| a.re.total_cmp(&b.re));
            let mut dir = |len: usize| -> Vec<Complex64> {
                normalize(&(0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect::<Vec<_>>())
            };
            let right = (0..n).map(|_| dir(nu)).collect();
            let left = (0..n).map(|_| dir(ny)).collect();
            Ok(Interpolation { shifts, right, left })
        }
        IrkaInit::User { shifts, right, left } => {
            if shifts.len() != n || right.len() != n || left.len() != n {
                return Err(Error::InvalidConfig(format!("user init must provide {n} shifts and directions")));
            }
            let c = |p: &[f64; 2]| Complex64::new(p[0], p[1]);
            let shifts: Vec<Complex64> = shifts.iter().map(c).collect();
            if let Some(s) = shifts.iter().find(|s| !(s.re > 0.0)) {
                return Err(Error::InvalidConfig(format!("shift {s} is not in the right half-plane")));
            }
            let conv = |v: &Vec<Vec<[f64; 2]>>, len: usize| -> Result<Vec<Vec<Complex64>>> {
                v.iter()
                    .map(|d| {
                        if d.len() != len {
                            return Err(Error::DimensionMismatch(format!("direction of length {} (expected {len})", d.len())));
                        }
                        Ok(d.iter().map(c).collect())
                    })
                    .collect()
            };
            Ok(Interpolation {
                shifts,
                right: conv(right, nu)?,
                left: conv(left, ny)?,
            })
        }
    }
}

/// One projection: the order-`n` tangential interpolant of `g` at the shifts.
fn project(g: &PoleResidueModel, ip: &Interpolation) -> Result<PoleResidueModel> {
    let n = ip.shifts.len();
    let (ny, nu) = (g.ny(), g.nu());
    for k in 0..n {
        let rn: f64 = ip.right[k].iter().map(|z| z.norm_sqr()).sum();
        let ln: f64 = ip.left[k].iter().map(|z| z.norm_sqr()).sum();
        if !(rn > 0.0 && ln > 0.0) {
            return Err(Error::DegenerateDirections { index: k });
        }
    }
    let sigma: Vec<Cdd> = ip.shifts.iter().map(|s| cdd(*s)).collect();
    let right: Vec<Vec<Cdd>> = ip.right.iter().map(|v| v.iter().map(|z| cdd(*z)).collect()).collect();
    let left: Vec<Vec<Cdd>> = ip.left.iter().map(|v| v.iter().map(|z| cdd(*z)).collect()).collect();

    // per term j: c_i^T l_j, r_j^T b_k and 1/(σ_i − μ_j)
    let terms = g.terms();
    let dot = |a: &[Cdd], b: &[Cdd]| a.iter().zip(b).fold(czero(), |acc, (x, y)| acc + *x * *y);
    let cl: Vec<Vec<Cdd>> = terms.iter().map(|t| left.iter().map(|c| dot(c, &t.left)).collect()).collect();
    let rb: Vec<Vec<Cdd>> = terms.iter().map(|t| right.iter().map(|b| dot(&t.right, b)).collect()).collect();
    let inv: Vec<Vec<Cdd>> = terms
        .iter()
        .map(|t| sigma.iter().map(|s| crecip(*s - t.pole)).collect())
        .collect();

    let mut er = Mat::<Complex64>::zeros(n, n);
    let mut ar = Mat::<Complex64>::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let (mut e, mut a) = (czero(), czero());
            for (j, t) in terms.iter().enumerate() {
                let w = cl[j][i] * rb[j][k] * inv[j][i] * inv[j][k];
                e += w;
                a += w * t.pole;
            }
            er[(i, k)] = to_c64(e);
            ar[(i, k)] = to_c64(a);
        }
    }
    let mut br = Mat::<Complex64>::zeros(n, nu);
    let mut cr = Mat::<Complex64>::zeros(ny, n);
    for i in 0..n {
        for l in 0..nu {
            let s = terms
                .iter()
                .enumerate()
                .fold(czero(), |acc, (j, t)| acc + cl[j][i] * inv[j][i] * t.right[l]);
            br[(i, l)] = to_c64(s);
        }
        for m in 0..ny {
            let s = terms
                .iter()
                .enumerate()
                .fold(czero(), |acc, (j, t)| acc + t.left[m] * rb[j][i] * inv[j][i]);
            cr[(m, i)] = to_c64(s);
        }
    }

    let (lambda, x, eb, cr) = match realifier(&ip.shifts, &ip.right, &ip.left) {
        Some(t) => {
            // W T and V T span the same spaces with real columns
            let tt = t.transpose();
            let re = |m: Mat<Complex64>| Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re);
            let er = re(tt * &er * &t);
            let ar = re(tt * &ar * &t);
            let br = re(tt * &br);
            let cr = &cr * &t;
            check_condition(linalg::condition_number(&er)?)?;
            let (lambda, x) = linalg::eig_real(&linalg::solve_real(&er, &ar))?;
            let eb = linalg::solve_real(&er, &br);
            let eb = Mat::<Complex64>::from_fn(n, nu, |i, j| Complex64::new(eb[(i, j)], 0.0));
            (lambda, x, eb, cr)
        }
        None => {
            check_condition(linalg::condition_number_complex(&er)?)?;
            let (lambda, x) = linalg::eig_complex(&linalg::solve_complex(&er, &ar)?)?;
            (lambda, x, linalg::solve_complex(&er, &br)?, cr)
        }
    };
    let xinv = linalg::inverse_complex(&x)?;
    let bhat = &xinv * &eb;
    let chat = &cr * &x;

    let out: Vec<Term> = (0..n)
        .map(|k| {
            Term::new(
                cdd(lambda[k]),
                (0..ny).map(|m| cdd(chat[(m, k)])).collect(),
                (0..nu).map(|l| cdd(bhat[(k, l)])).collect(),
            )
        })
        .collect();
    Ok(PoleResidueModel::from_parts_unchecked(out, ny, nu))
}

fn check_condition(cond: f64) -> Result<()> {
    if cond.is_finite() {
        Ok(())
    } else {
        Err(Error::LinearAlgebra("singular projected E".into()))
    }
}

/// For a conjugate-closed interpolation set, the matrix `T` whose columns map
/// each conjugate pair `(v, v̄)` to `(Re v, Im v)`; `None` otherwise.
fn realifier(shifts: &[Complex64], right: &[Vec<Complex64>], left: &[Vec<Complex64>]) -> Option<Mat<Complex64>> {
    let n = shifts.len();
    let mut t = Mat::<Complex64>::zeros(n, n);
    let mut done = vec![false; n];
    let mirrored = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).all(|(x, y)| *x == y.conj());
    for i in 0..n {
        if done[i] {
            continue;
        }
        if shifts[i].im == 0.0 {
            if right[i].iter().chain(&left[i]).any(|z| z.im != 0.0) {
                return None;
            }
            t[(i, i)] = Complex64::new(1.0, 0.0);
            done[i] = true;
            continue;
        }
        let p = (i + 1..n).find(|&p| {
            !done[p] && shifts[p] == shifts[i].conj() && mirrored(&right[p], &right[i]) && mirrored(&left[p], &left[i])
        })?;
        let half = Complex64::new(0.5, 0.0);
        let ihalf = Complex64::new(0.0, 0.5);
        t[(i, i)] = half;
        t[(p, i)] = half;
        t[(i, p)] = -ihalf;
        t[(p, p)] = ihalf;
        done[i] = true;
        done[p] = true;
    }
    Some(t)
}

/// Mirrors unstable poles into the open left half-plane; returns the count.
fn reflect(h: PoleResidueModel) -> (PoleResidueModel, usize) {
    let mut count = 0;
    let terms = h
        .terms()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            if t.pole.re.hi() >= 0.0 {
                count += 1;
                t.pole.re = -t.pole.re;
                if t.pole.re.hi() == 0.0 {
                    t.pole.re = crate::precision::dd(-1e-12);
                }
            }
            t
        })
        .collect();
    (PoleResidueModel::from_parts_unchecked(terms, h.ny(), h.nu()), count)
}

fn movement(old: &[Complex64], new: &[Complex64]) -> f64 {
    let canon = |v: &[Complex64]| {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.abs().total_cmp(&b.im.abs())).then(b.im.total_cmp(&a.im)));
        v
    };
    let (a, b) = (canon(old), canon(new));
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

fn run(g: &PoleResidueModel, cfg: &IrkaConfig, ip: Interpolation) -> Result<IrkaResult> {
    let mut ip = ip;
    let mut reflections = 0;
    let mut last = None;
    let mut moved = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let raw = project(g, &ip)?;
        let (raw, r) = reflect(raw);
        reflections += r;
        let raw = raw.closed_by_poles().ok_or(Error::NonRealModel)?;
        let h = PoleResidueModel::new_canonical(raw.terms().to_vec(), g.ny(), g.nu())?;
        let next = Interpolation {
            shifts: h.poles().iter().map(|p| -p).collect(),
            right: h.terms().iter().map(|t| normalize(&t.right.iter().map(|z| to_c64(*z)).collect::<Vec<_>>())).collect(),
            left: h.terms().iter().map(|t| normalize(&t.left.iter().map(|z| to_c64(*z)).collect::<Vec<_>>())).collect(),
        };
        moved = movement(&ip.shifts, &next.shifts);
        ip = next;
        last = Some(h);
        if moved < cfg.shift_tol {
            return Ok(IrkaResult {
                model: last.unwrap(),
                iterations: it,
                converged: true,
                final_shift_movement: moved,
                reflections,
            });
        }
    }
    Ok(IrkaResult {
        model: last.ok_or_else(|| Error::InvalidConfig("max_iters must be positive".into()))?,
        iterations: cfg.max_iters,
        converged: false,
        final_shift_movement: moved,
        reflections,
    })
}

/// Order-`n` tangential IRKA on `g`.
///
/// Returns the last projected model with `converged = false` when the
/// iteration budget runs out; errors only on breakdown. With `retry_seed`
/// set, a failed or unconverged run is repeated once from random shifts and
/// the better of the two outcomes is returned.
pub fn irka_reduce(g: &PoleResidueModel, cfg: &IrkaConfig) -> Result<IrkaResult> {
    if cfg.order == 0 {
        return Err(Error::InvalidConfig("reduced order must be positive".into()));
    }
    if cfg.order > g.order() {
        return Err(Error::InvalidConfig(format!(
            "reduced order {} exceeds model order {}",
            cfg.order,
            g.order()
        )));
    }
    if !(cfg.shift_tol > 0.0) {
        return Err(Error::InvalidConfig("shift_tol must be positive".into()));
    }
    let first = initial(g, cfg).and_then(|ip| run(g, cfg, ip));
    let Some(seed) = cfg.retry_seed else {
        return first;
    };
    if matches!(&first, Ok(r) if r.converged) {
        return first;
    }
    let retry_cfg = IrkaConfig {
        init: IrkaInit::RandomStable { seed },
        retry_seed: None,
        ..cfg.clone()
    };
    let second = initial(g, &retry_cfg).and_then(|ip| run(g, &retry_cfg, ip));
    match (first, second) {
        (Ok(a), Ok(b)) => {
            if b.converged {
                Ok(b)
            } else {
                Ok(a)
            }
        }
        (Err(_), Ok(b)) => Ok(b),
        (first, Err(_)) => first,
    }
}

/// Right, left and Hermite interpolation residuals of the reduced model
/// against the model it was reduced from, one triple per term.
pub fn hermite_residuals(g: &PoleResidueModel, result: &IrkaResult) -> Result<Vec<[f64; 3]>> {
    let [r, l, h] = h2::interpolation_residuals(g, &result.model)?;
    Ok((0..r.len()).map(|k| [r[k], l[k], h[k]]).collect())
}
