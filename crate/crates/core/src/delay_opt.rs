//! Delay search for a fixed rational core: maximize `⟨Δ_o Ĥ Δ_i, G⟩` over a
//! box of nonnegative delays.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::h2;
use crate::model::{DelayBlock, DelayedModel, PoleResidueModel};
use crate::precision::{czero, delay_factor, dd, to_f64, Cdd, Dd};

/// Relative tail energy that bounds the automatic search horizon.
pub const TAIL_ENERGY_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySearchConfig {
    pub grid_points_per_channel: usize,
    /// Upper end of the search box for every free channel; `None` picks it
    /// from the model (see [`default_tau_max`]).
    pub tau_max: Option<f64>,
    /// Gradient norm at which ascent stops.
    pub refine_tol: f64,
    pub max_refine_iters: usize,
    /// Budget of grid evaluations for joint scans of two or three channels.
    pub max_grid_evals: usize,
    /// Number of grid maxima used as ascent starts.
    pub starts: usize,
    pub input_mask: Vec<bool>,
    pub output_mask: Vec<bool>,
}

impl DelaySearchConfig {
    pub fn new(input_mask: Vec<bool>, output_mask: Vec<bool>) -> Self {
        Self {
            grid_points_per_channel: 400,
            tau_max: None,
            refine_tol: 1e-10,
            max_refine_iters: 100,
            max_grid_evals: 160_000,
            starts: 5,
            input_mask,
            output_mask,
        }
    }

    /// Input delays free, output delays pinned.
    pub fn input_only(nu: usize, ny: usize) -> Self {
        Self::new(vec![true; nu], vec![false; ny])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelaySearchResult {
    pub input_delays: DelayBlock,
    pub output_delays: DelayBlock,
    /// Cross inner product at the returned delays.
    pub objective: f64,
    /// Norm of the projected gradient of the objective.
    pub grad_norm: f64,
    pub on_boundary: bool,
    /// Whether the ascent met `refine_tol` (always true on the boundary).
    pub converged: bool,
    pub tau_max: f64,
    pub grid_evaluations: usize,
}

/// Precomputed `A_j[m,l] = (l_j)_m Ĥ(−μ_j)[m,l] (r_j)_l`, so that the cross
/// term is `Re Σ_j Σ_{m,l} e^{μ_j (γ_m + τ_l)} A_j[m,l]`.
pub(crate) struct CrossKernel {
    mu: Vec<Cdd>,
    a: Vec<Vec<Cdd>>,
    ny: usize,
    nu: usize,
}

impl CrossKernel {
    pub(crate) fn new(g: &PoleResidueModel, h: &PoleResidueModel) -> Result<Self> {
        if g.ny() != h.ny() || g.nu() != h.nu() {
            return Err(Error::DimensionMismatch("reference and core dimensions differ".into()));
        }
        let (ny, nu) = (g.ny(), g.nu());
        let mut mu = Vec::with_capacity(g.order());
        let mut a = Vec::with_capacity(g.order());
        for t in g.terms() {
            let hv = h.eval_dd(-t.pole)?;
            let mut aj = vec![czero(); ny * nu];
            for m in 0..ny {
                for l in 0..nu {
                    aj[m * nu + l] = t.left[m] * hv[m * nu + l] * t.right[l];
                }
            }
            mu.push(t.pole);
            a.push(aj);
        }
        Ok(Self { mu, a, ny, nu })
    }

    /// Objective and its gradients with respect to `τ` and `γ`.
    pub(crate) fn eval(&self, tau: &[f64], gamma: &[f64], with_grad: bool) -> (Dd, Vec<Dd>, Vec<Dd>) {
        let (ny, nu) = (self.ny, self.nu);
        let mut value = czero();
        let mut gt = vec![czero(); if with_grad { nu } else { 0 }];
        let mut gg = vec![czero(); if with_grad { ny } else { 0 }];
        let mut ei = vec![czero(); nu];
        let mut eo = vec![czero(); ny];
        for (mu, aj) in self.mu.iter().zip(&self.a) {
            for (e, &t) in ei.iter_mut().zip(tau) {
                *e = delay_factor(*mu, t);
            }
            for (e, &t) in eo.iter_mut().zip(gamma) {
                *e = delay_factor(*mu, t);
            }
            let mut vj = czero();
            for m in 0..ny {
                for l in 0..nu {
                    let w = eo[m] * ei[l] * aj[m * nu + l];
                    vj += w;
                    if with_grad {
                        gt[l] += *mu * w;
                        gg[m] += *mu * w;
                    }
                }
            }
            value += vj;
        }
        (value.re, gt.into_iter().map(|z| z.re).collect(), gg.into_iter().map(|z| z.re).collect())
    }

    /// Contribution of term `j` for precomputed delay factors; summed over
    /// `j` in order this reproduces [`CrossKernel::eval`] bit for bit.
    fn term_value(&self, j: usize, ei: &[Cdd], eo: &[Cdd]) -> Cdd {
        let aj = &self.a[j];
        let mut vj = czero();
        for m in 0..self.ny {
            for l in 0..self.nu {
                vj += eo[m] * ei[l] * aj[m * self.nu + l];
            }
        }
        vj
    }
}

/// `⟨Δ_o Ĥ Δ_i, G⟩` at the given delays.
pub fn cross_objective(g: &PoleResidueModel, h: &PoleResidueModel, delays_in: &[f64], delays_out: &[f64]) -> Result<f64> {
    let hd = DelayedModel::new(
        h.clone(),
        DelayBlock::with_delays(delays_in.to_vec())?,
        DelayBlock::with_delays(delays_out.to_vec())?,
    )?;
    h2::inner_product_delayed(&hd, g)
}

/// `max(5 / min|Re μ|, T)` where `T` is the smallest advance whose tail
/// energy `‖G̃_T‖²` drops below [`TAIL_ENERGY_FRACTION`]` · ‖G‖²` on the free
/// sides.
pub fn default_tau_max(g: &PoleResidueModel, input_mask: &[bool], output_mask: &[bool]) -> Result<f64> {
    let slowest = g.poles().iter().map(|p| -p.re).fold(f64::INFINITY, f64::min);
    let base = 5.0 / slowest;
    let total = h2::norm_sq_dd(g)?;
    let target = to_f64(total) * TAIL_ENERGY_FRACTION;
    let tail = |t: f64, input: bool| -> Result<f64> {
        let (ib, ob) = if input {
            (DelayBlock::with_delays(vec![t; g.nu()])?, DelayBlock::none(g.ny()))
        } else {
            (DelayBlock::none(g.nu()), DelayBlock::with_delays(vec![t; g.ny()])?)
        };
        h2::h2_norm_sq(&h2::build_gtilde(g, &ib, &ob))
    };
    let mut horizon: f64 = base;
    for (input, mask) in [(true, input_mask), (false, output_mask)] {
        if !mask.iter().any(|m| *m) {
            continue;
        }
        let (mut lo, mut hi) = (0.0, base);
        let mut doublings = 0;
        while tail(hi, input)? > target {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::NonFiniteObjective);
            }
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if tail(mid, input)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        horizon = horizon.max(hi);
    }
    Ok(horizon)
}

/// Layout of the free coordinates `x` inside `(τ, γ)`.
struct Layout {
    free: Vec<(bool, usize)>,
    nu: usize,
    ny: usize,
}

impl Layout {
    fn expand(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tau = vec![0.0; self.nu];
        let mut gamma = vec![0.0; self.ny];
        for (&(input, idx), &v) in self.free.iter().zip(x) {
            if input {
                tau[idx] = v;
            } else {
                gamma[idx] = v;
            }
        }
        (tau, gamma)
    }

    fn objective(&self, k: &CrossKernel, x: &[f64]) -> Dd {
        let (tau, gamma) = self.expand(x);
        k.eval(&tau, &gamma, false).0
    }

    fn value_grad(&self, k: &CrossKernel, x: &[f64]) -> (Dd, Vec<f64>) {
        let (tau, gamma) = self.expand(x);
        let (v, gt, gg) = k.eval(&tau, &gamma, true);
        let grad = self
            .free
            .iter()
            .map(|&(input, idx)| to_f64(if input { gt[idx] } else { gg[idx] }))
            .collect();
        (v, grad)
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    x: Vec<f64>,
    value: Dd,
    grad_norm: f64,
    on_boundary: bool,
    converged: bool,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let (va, vb) = (to_f64(a.value), to_f64(b.value));
    let tie = (va - vb).abs() <= 1e-14 * va.abs().max(vb.abs());
    if !tie {
        return va > vb;
    }
    a.x.iter().zip(&b.x).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less)
}

fn projected_gradient(x: &[f64], g: &[f64], upper: f64) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if (xi <= 0.0 && gi < 0.0) || (xi >= upper && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected Barzilai-Borwein ascent with Armijo backtracking.
fn ascend(layout: &Layout, k: &CrossKernel, x0: &[f64], upper: f64, cfg: &DelaySearchConfig) -> Candidate {
    let clamp = |v: f64| v.clamp(0.0, upper);
    let mut x = x0.to_vec();
    let (mut f, mut g) = layout.value_grad(k, &x);
    let mut step = 1.0 / norm(&g).max(1e-300) * (upper * 1e-2);
    let mut converged = false;
    for _ in 0..cfg.max_refine_iters {
        let pg = projected_gradient(&x, &g, upper);
        if norm(&pg) < cfg.refine_tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..80 {
            let xn: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| clamp(xi + step * gi)).collect();
            let moved: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            if moved == 0.0 {
                break;
            }
            let fnew = layout.objective(k, &xn);
            if fnew >= f + dd(1e-4 * moved) {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            break;
        };
        let (_, gn) = layout.value_grad(k, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 { ss / -sy } else { step * 4.0 };
        x = xn;
        f = fnew;
        g = gn;
    }
    let pg = projected_gradient(&x, &g, upper);
    let grad_norm = norm(&pg);
    let on_boundary = x.iter().any(|&v| v <= 0.0 || v >= upper);
    Candidate {
        converged: converged || grad_norm < cfg.refine_tol,
        x,
        value: f,
        grad_norm,
        on_boundary,
    }
}

fn linspace(upper: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| upper * i as f64 / (n - 1) as f64).collect()
}

/// Full tensor grid; returns the sample values and the ascent starts.
fn tensor_scan(layout: &Layout, k: &CrossKernel, upper: f64, cfg: &DelaySearchConfig) -> (Vec<Candidate>, usize) {
    let d = layout.free.len();
    let per_axis = if d == 1 {
        cfg.grid_points_per_channel
    } else {
        let cap = (cfg.max_grid_evals as f64).powf(1.0 / d as f64).floor() as usize;
        cfg.grid_points_per_channel.min(cap)
    }
    .max(2);
    let axis = linspace(upper, per_axis);
    let total = per_axis.pow(d as u32);
    let point = |mut idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; d];
        for c in (0..d).rev() {
            x[c] = axis[idx % per_axis];
            idx /= per_axis;
        }
        x
    };
    // delay factors depend on one axis value each, so tabulate them once
    let table: Vec<Vec<Cdd>> = k.mu.iter().map(|mu| axis.iter().map(|&t| delay_factor(*mu, t)).collect()).collect();
    let pinned: Vec<Cdd> = k.mu.iter().map(|mu| delay_factor(*mu, 0.0)).collect();
    let values: Vec<Dd> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut idx = vec![0; d];
            let mut rest = i;
            for c in (0..d).rev() {
                idx[c] = rest % per_axis;
                rest /= per_axis;
            }
            let mut value = czero();
            for j in 0..k.mu.len() {
                let mut ei = vec![pinned[j]; layout.nu];
                let mut eo = vec![pinned[j]; layout.ny];
                for (c, &(input, ch)) in layout.free.iter().enumerate() {
                    let f = table[j][idx[c]];
                    if input {
                        ei[ch] = f;
                    } else {
                        eo[ch] = f;
                    }
                }
                value += k.term_value(j, &ei, &eo);
            }
            value.re
        })
        .collect();

    // local maxima along every axis
    let mut peaks: Vec<usize> = (0..total)
        .filter(|&i| {
            let mut stride = 1;
            for _ in 0..d {
                let pos = (i / stride) % per_axis;
                if pos > 0 && values[i - stride] > values[i] {
                    return false;
                }
                if pos + 1 < per_axis && values[i + stride] > values[i] {
                    return false;
                }
                stride *= per_axis;
            }
            true
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    peaks.truncate(cfg.starts.max(1));
    let starts = peaks
        .into_iter()
        .map(|i| Candidate {
            x: point(i),
            value: values[i],
            grad_norm: f64::INFINITY,
            on_boundary: false,
            converged: false,
        })
        .collect();
    (starts, total)
}

/// Cyclic coordinate scans from zero; every sweep's end point is a start.
fn cyclic_scan(layout: &Layout, k: &CrossKernel, upper: f64, cfg: &DelaySearchConfig) -> (Vec<Candidate>, usize) {
    let d = layout.free.len();
    let axis = linspace(upper, cfg.grid_points_per_channel.max(2));
    let mut x = vec![0.0; d];
    let mut best = layout.objective(k, &x);
    let mut evals = 1;
    let mut starts = Vec::new();
    for _ in 0..cfg.starts.max(1) {
        let before = x.clone();
        for c in 0..d {
            let vals: Vec<Dd> = axis
                .par_iter()
                .map(|&v| {
                    let mut y = x.clone();
                    y[c] = v;
                    layout.objective(k, &y)
                })
                .collect();
            evals += vals.len();
            for (i, v) in vals.iter().enumerate() {
                if *v > best {
                    best = *v;
                    x[c] = axis[i];
                }
            }
        }
        starts.push(Candidate {
            x: x.clone(),
            value: best,
            grad_norm: f64::INFINITY,
            on_boundary: false,
            converged: false,
        });
        if x == before {
            break;
        }
    }
    (starts, evals)
}

/// Delays maximizing the cross inner product for the fixed core `h`.
pub fn optimize_delays(g: &PoleResidueModel, h: &PoleResidueModel, cfg: &DelaySearchConfig) -> Result<DelaySearchResult> {
    if cfg.input_mask.len() != g.nu() || cfg.output_mask.len() != g.ny() {
        return Err(Error::DimensionMismatch("delay masks do not match model dimensions".into()));
    }
    if cfg.grid_points_per_channel < 2 {
        return Err(Error::InvalidConfig("grid_points_per_channel must be at least 2".into()));
    }
    if !(cfg.refine_tol > 0.0) {
        return Err(Error::InvalidConfig("refine_tol must be positive".into()));
    }
    let upper = match cfg.tau_max {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::InvalidConfig(format!("tau_max = {t} must be positive"))),
        None => default_tau_max(g, &cfg.input_mask, &cfg.output_mask)?,
    };
    let kernel = CrossKernel::new(g, h)?;
    let layout = Layout {
        free: cfg
            .input_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| (true, i))
            .chain(cfg.output_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| (false, i)))
            .collect(),
        nu: g.nu(),
        ny: g.ny(),
    };

    let d = layout.free.len();
    let (winner, evals) = if d == 0 {
        let value = layout.objective(&kernel, &[]);
        let c = Candidate {
            x: vec![],
            value,
            grad_norm: 0.0,
            on_boundary: false,
            converged: true,
        };
        (c, 1)
    } else {
        let (starts, evals) = if d <= 3 {
            tensor_scan(&layout, &kernel, upper, cfg)
        } else {
            cyclic_scan(&layout, &kernel, upper, cfg)
        };
        let refined: Vec<Candidate> = starts
            .par_iter()
            .map(|s| {
                let r = ascend(&layout, &kernel, &s.x, upper, cfg);
                if r.value >= s.value {
                    r
                } else {
                    s.clone()
                }
            })
            .collect();
        let mut best = refined[0].clone();
        for c in &refined[1..] {
            if better(c, &best) {
                best = c.clone();
            }
        }
        (best, evals)
    };

    let value = to_f64(winner.value);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let (tau, gamma) = layout.expand(&winner.x);
    Ok(DelaySearchResult {
        input_delays: DelayBlock::new(tau, cfg.input_mask.clone())?,
        output_delays: DelayBlock::new(gamma, cfg.output_mask.clone())?,
        objective: value,
        grad_norm: winner.grad_norm,
        on_boundary: winner.on_boundary,
        converged: winner.converged || winner.on_boundary,
        tau_max: upper,
        grid_evaluations: evals,
    })
}

/// One row of the delay landscape: free-channel delays and the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeRow {
    pub input_delays: Vec<f64>,
    pub output_delays: Vec<f64>,
    pub objective: f64,
}

/// Objective on the search grid (tensor grid over the free channels, capped
/// at `max_grid_evals` points).
pub fn delay_landscape(g: &PoleResidueModel, h: &PoleResidueModel, cfg: &DelaySearchConfig) -> Result<Vec<LandscapeRow>> {
    let upper = match cfg.tau_max {
        Some(t) => t,
        None => default_tau_max(g, &cfg.input_mask, &cfg.output_mask)?,
    };
    let kernel = CrossKernel::new(g, h)?;
    let free: Vec<(bool, usize)> = cfg
        .input_mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| (true, i))
        .chain(cfg.output_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| (false, i)))
        .collect();
    let d = free.len().max(1);
    let cap = (cfg.max_grid_evals as f64).powf(1.0 / d as f64).floor() as usize;
    let per_axis = cfg.grid_points_per_channel.min(cap).max(2);
    let axis = linspace(upper, per_axis);
    let total = if free.is_empty() { 1 } else { per_axis.pow(free.len() as u32) };
    let layout = Layout {
        free,
        nu: g.nu(),
        ny: g.ny(),
    };
    let rows = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut x = vec![0.0; layout.free.len()];
            for c in (0..x.len()).rev() {
                x[c] = axis[idx % per_axis];
                idx /= per_axis;
            }
            let (tau, gamma) = layout.expand(&x);
            let objective = to_f64(layout.objective(&kernel, &x));
            LandscapeRow {
                input_delays: tau,
                output_delays: gamma,
                objective,
            }
        })
        .collect();
    Ok(rows)
}
