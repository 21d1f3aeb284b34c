//! The alternating reduction loop: IRKA on the delay-shifted surrogate, then
//! a delay search for the new core, until the pair stops moving.

use serde::{Deserialize, Serialize};

use crate::delay_opt::{self, DelaySearchConfig};
use crate::error::{Error, Result};
use crate::h2::{self, GapValue, OptimalityResiduals};
use crate::irka::{self, IrkaConfig, IrkaInit};
use crate::linalg;
use crate::model::{DelayBlock, DelayedModel, PoleResidueModel};
use crate::precision::{dd, Dd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMode {
    /// Pole set and delay vector both move less than `outer_tol` (relative).
    PoleVariation,
    /// Every optimality residual falls below `residual_tol`.
    OptimalityResidual,
    /// The gap changes by less than `outer_tol` (relative).
    H2Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Acceleration {
    /// Literal alternation: the next delays are the search result.
    None,
    /// Anderson mixing of the delay map over the last `depth` iterates.
    Anderson { depth: usize },
}

/// Where the outer loop starts its delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayInit {
    /// `init_input_delays` / `init_output_delays` as given.
    Given,
    /// Peak of the impulse cross-correlation between `G` and the delay-free
    /// IRKA model of the same order, i.e. one delay search on that core.
    CrossCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoDirkaConfig {
    pub order: usize,
    pub init_input_delays: Vec<f64>,
    pub init_output_delays: Vec<f64>,
    pub delay_init: DelayInit,
    pub outer_max_iters: usize,
    pub outer_tol: f64,
    /// Threshold for [`StoppingMode::OptimalityResidual`].
    pub residual_tol: f64,
    pub stopping_mode: StoppingMode,
    pub acceleration: Acceleration,
    /// Re-run IRKA at the final delays so the interpolation conditions hold
    /// against the final surrogate.
    pub final_irka_pass: bool,
    pub irka: IrkaConfig,
    /// Delay search settings; its masks define the delay structure.
    pub search: DelaySearchConfig,
}

impl IoDirkaConfig {
    pub fn new(order: usize, input_mask: Vec<bool>, output_mask: Vec<bool>) -> Self {
        let (nu, ny) = (input_mask.len(), output_mask.len());
        Self {
            order,
            init_input_delays: vec![0.0; nu],
            init_output_delays: vec![0.0; ny],
            delay_init: DelayInit::Given,
            outer_max_iters: 200,
            outer_tol: 1e-6,
            residual_tol: 1e-6,
            stopping_mode: StoppingMode::PoleVariation,
            acceleration: Acceleration::Anderson { depth: 3 },
            final_irka_pass: true,
            irka: IrkaConfig::new(order),
            search: DelaySearchConfig::new(input_mask, output_mask),
        }
    }

    /// Free input delays, no output delays.
    pub fn input_delays(order: usize, nu: usize, ny: usize) -> Self {
        Self::new(order, vec![true; nu], vec![false; ny])
    }

    /// All delays pinned: plain IRKA wrapped in the same report.
    pub fn delay_free(order: usize, nu: usize, ny: usize) -> Self {
        Self::new(order, vec![false; nu], vec![false; ny])
    }
}

/// Snapshot of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Core returned by IRKA at this iteration.
    pub core: PoleResidueModel,
    /// Delays returned by the search for that core.
    pub input_delays: Vec<f64>,
    pub output_delays: Vec<f64>,
    pub gap: GapValue,
    pub irka_iterations: usize,
    pub irka_converged: bool,
    pub pole_movement: f64,
    pub delay_movement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub model: DelayedModel,
    pub gap: GapValue,
    /// Residuals of the final model.
    pub residuals: OptimalityResiduals,
    /// Residuals of the last in-loop pair (core, searched delays).
    pub loop_residuals: OptimalityResiduals,
    pub outer_iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub stopping_mode: StoppingMode,
}

fn pole_movement(old: &PoleResidueModel, new: &PoleResidueModel) -> f64 {
    let (a, b) = (old.poles(), new.poles());
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff: Vec<f64> = old.iter().zip(new).map(|(a, b)| a - b).collect();
    let scale = norm(old).max(norm(new));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Anderson mixing of a fixed-point map on the free delay coordinates.
struct Anderson {
    depth: usize,
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: Vec::new(),
            fs: Vec::new(),
        }
    }

    /// Next iterate given the map value `fx` at `x`.
    fn next(&mut self, x: &[f64], fx: &[f64], upper: f64) -> Vec<f64> {
        let d = x.len();
        let res = |x: &[f64], f: &[f64]| -> Vec<f64> { f.iter().zip(x).map(|(a, b)| a - b).collect() };
        let r = res(x, fx);
        if let (Some(px), Some(pf)) = (self.xs.last(), self.fs.last()) {
            if norm(&r) > 2.0 * norm(&res(px, pf)) {
                self.xs.clear();
                self.fs.clear();
            }
        }
        self.xs.push(x.to_vec());
        self.fs.push(fx.to_vec());
        let keep = self.depth.min(d).max(1) + 1;
        if self.xs.len() > keep {
            let drop = self.xs.len() - keep;
            self.xs.drain(..drop);
            self.fs.drain(..drop);
        }
        let m = self.xs.len() - 1;
        if m == 0 {
            return fx.to_vec();
        }
        let rs: Vec<Vec<f64>> = self.xs.iter().zip(&self.fs).map(|(x, f)| res(x, f)).collect();
        // columns ΔR_i = r_{i+1} − r_i, ΔF_i = F_{i+1} − F_i
        let dr: Vec<Vec<f64>> = (0..m).map(|i| rs[i + 1].iter().zip(&rs[i]).map(|(a, b)| a - b).collect()).collect();
        let df: Vec<Vec<f64>> = (0..m)
            .map(|i| self.fs[i + 1].iter().zip(&self.fs[i]).map(|(a, b)| a - b).collect())
            .collect();
        // normal equations (ΔRᵀΔR + εI) γ = ΔRᵀ r
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        let mut trace = 0.0;
        for i in 0..m {
            for j in 0..m {
                gram[i][j] = dot(&dr[i], &dr[j]);
            }
            rhs[i] = dot(&dr[i], &r);
            trace += gram[i][i];
        }
        if trace == 0.0 {
            return fx.to_vec();
        }
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += 1e-12 * trace;
        }
        let Some(gamma) = solve_small(gram, rhs) else {
            return fx.to_vec();
        };
        let mut out = fx.to_vec();
        for (i, g) in gamma.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&df[i]) {
                *o -= g * v;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return fx.to_vec();
        }
        out.iter().map(|v| v.clamp(0.0, upper)).collect()
    }
}

fn solve_small(a: Vec<Vec<f64>>, b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let x = linalg::solve_real(&linalg::real_mat(&a, n, n), &faer::Mat::from_fn(n, 1, |i, _| b[i]));
    let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct Free {
    input: Vec<usize>,
    output: Vec<usize>,
}

impl Free {
    fn is_empty(&self) -> bool {
        self.input.is_empty() && self.output.is_empty()
    }

    fn gather(&self, tau: &[f64], gamma: &[f64]) -> Vec<f64> {
        self.input.iter().map(|&i| tau[i]).chain(self.output.iter().map(|&i| gamma[i])).collect()
    }

    fn scatter(&self, x: &[f64], nu: usize, ny: usize) -> (Vec<f64>, Vec<f64>) {
        let mut tau = vec![0.0; nu];
        let mut gamma = vec![0.0; ny];
        for (k, &i) in self.input.iter().enumerate() {
            tau[i] = x[k];
        }
        for (k, &i) in self.output.iter().enumerate() {
            gamma[i] = x[self.input.len() + k];
        }
        (tau, gamma)
    }
}

fn validate(g: &PoleResidueModel, cfg: &IoDirkaConfig) -> Result<()> {
    if cfg.order == 0 || cfg.order > g.order() {
        return Err(Error::InvalidConfig(format!(
            "order {} must lie in 1..={}",
            cfg.order,
            g.order()
        )));
    }
    if !(cfg.outer_tol > 0.0) || !(cfg.residual_tol > 0.0) {
        return Err(Error::InvalidConfig("outer tolerances must be positive".into()));
    }
    if cfg.outer_max_iters == 0 {
        return Err(Error::InvalidConfig("outer_max_iters must be positive".into()));
    }
    if cfg.init_input_delays.len() != g.nu() || cfg.init_output_delays.len() != g.ny() {
        return Err(Error::DimensionMismatch("initial delays do not match model dimensions".into()));
    }
    if g.conjugate_partners().is_none() {
        return Err(Error::NonRealModel);
    }
    Ok(())
}

fn delayed(core: PoleResidueModel, tau: Vec<f64>, gamma: Vec<f64>, cfg: &DelaySearchConfig) -> Result<DelayedModel> {
    DelayedModel::new(
        core,
        DelayBlock::new(tau, cfg.input_mask.clone())?,
        DelayBlock::new(gamma, cfg.output_mask.clone())?,
    )
}

fn reduce_at(g: &PoleResidueModel, tau: &[f64], gamma: &[f64], irka_cfg: &IrkaConfig) -> Result<irka::IrkaResult> {
    let gt = h2::build_gtilde(
        g,
        &DelayBlock::with_delays(tau.to_vec())?,
        &DelayBlock::with_delays(gamma.to_vec())?,
    );
    irka::irka_reduce(&gt, irka_cfg)
}

/// Runs the alternating loop on `g`, taking `‖G‖²` from its pole/residue
/// sum. The norm is rounded to `f64` so [`trace_gap`] reproduces every
/// trace entry from `h2_norm_sq(g)`.
pub fn io_dirka(g: &PoleResidueModel, cfg: &IoDirkaConfig) -> Result<ReductionReport> {
    validate(g, cfg)?;
    run(g, dd(h2::h2_norm_sq(g)?), cfg)
}

/// As [`io_dirka`], with `‖G‖²` supplied from a better-conditioned source
/// such as [`h2::h2_norm_sq_state_space`]. Only the reported gap depends on
/// it; the iterates do not.
pub fn io_dirka_with_norm(g: &PoleResidueModel, g_norm_sq: f64, cfg: &IoDirkaConfig) -> Result<ReductionReport> {
    if !g_norm_sq.is_finite() || g_norm_sq < 0.0 {
        return Err(Error::InvalidConfig("reference norm must be finite and non-negative".into()));
    }
    run(g, dd(g_norm_sq), cfg)
}

fn run(g: &PoleResidueModel, norm_g: Dd, cfg: &IoDirkaConfig) -> Result<ReductionReport> {
    validate(g, cfg)?;
    let (nu, ny) = (g.nu(), g.ny());

    let mut search = cfg.search.clone();
    if search.input_mask.len() != nu || search.output_mask.len() != ny {
        return Err(Error::DimensionMismatch("delay masks do not match model dimensions".into()));
    }
    let upper = match search.tau_max {
        Some(t) => t,
        None => delay_opt::default_tau_max(g, &search.input_mask, &search.output_mask)?,
    };
    search.tau_max = Some(upper);
    let free = Free {
        input: (0..nu).filter(|&i| search.input_mask[i]).collect(),
        output: (0..ny).filter(|&i| search.output_mask[i]).collect(),
    };

    let init_in: Vec<f64> = cfg.init_input_delays.iter().zip(&search.input_mask).map(|(&d, &m)| if m { d } else { 0.0 }).collect();
    let init_out: Vec<f64> = cfg.init_output_delays.iter().zip(&search.output_mask).map(|(&d, &m)| if m { d } else { 0.0 }).collect();
    let mut x = free.gather(&init_in, &init_out);
    let mut anderson = match cfg.acceleration {
        Acceleration::Anderson { depth } if depth > 0 => Some(Anderson::new(depth)),
        _ => None,
    };

    let mut irka_cfg = cfg.irka.clone();
    irka_cfg.order = cfg.order;
    if cfg.delay_init == DelayInit::CrossCorrelation && !free.is_empty() {
        let red = reduce_at(g, &vec![0.0; nu], &vec![0.0; ny], &irka_cfg).map_err(|e| e.at_outer(0))?;
        let found = delay_opt::optimize_delays(g, &red.model, &search).map_err(|e| e.at_outer(0))?;
        x = free.gather(found.input_delays.delays(), found.output_delays.delays());
        irka_cfg.init = IrkaInit::from_model(&red.model);
    }
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut converged = false;

    for it in 1..=cfg.outer_max_iters {
        let (tau, gamma) = free.scatter(&x, nu, ny);
        let red = reduce_at(g, &tau, &gamma, &irka_cfg).map_err(|e| e.at_outer(it))?;
        let found = delay_opt::optimize_delays(g, &red.model, &search).map_err(|e| e.at_outer(it))?;
        let fx = free.gather(found.input_delays.delays(), found.output_delays.delays());
        let hd = delayed(red.model.clone(), found.input_delays.delays().to_vec(), found.output_delays.delays().to_vec(), &search)?;
        let gap = h2::compute_gap_dd(g, &hd, norm_g).map_err(|e| e.at_outer(it))?;

        let pole_move = trace.last().map_or(f64::INFINITY, |p| pole_movement(&p.core, &red.model));
        let delay_move = relative_change(&x, &fx);
        let stop = match cfg.stopping_mode {
            StoppingMode::PoleVariation => pole_move < cfg.outer_tol && delay_move < cfg.outer_tol,
            StoppingMode::H2Error => trace.last().is_some_and(|p| {
                (gap.j - p.gap.j).abs() <= cfg.outer_tol * p.gap.j.abs() + 1e-14 * gap.norm_g_sq
            }),
            StoppingMode::OptimalityResidual => {
                let r = h2::optimality_residuals(g, &hd).map_err(|e| e.at_outer(it))?;
                r.max_interp() < cfg.residual_tol && r.max_delay() < cfg.residual_tol
            }
        };
        irka_cfg.init = IrkaInit::from_model(&red.model);
        trace.push(TraceEntry {
            iteration: it,
            core: red.model,
            input_delays: found.input_delays.delays().to_vec(),
            output_delays: found.output_delays.delays().to_vec(),
            gap,
            irka_iterations: red.iterations,
            irka_converged: red.converged,
            pole_movement: pole_move,
            delay_movement: delay_move,
        });
        if stop {
            converged = true;
            break;
        }
        x = match anderson.as_mut() {
            Some(a) => a.next(&x, &fx, upper),
            None => fx,
        };
    }

    // converged: the last pair; otherwise the pair with the smallest gap
    let chosen = if converged {
        trace.len() - 1
    } else {
        (0..trace.len())
            .min_by(|&a, &b| trace[a].gap.j.total_cmp(&trace[b].gap.j).then(a.cmp(&b)))
            .unwrap_or(0)
    };
    let pick = &trace[chosen];
    let loop_model = delayed(pick.core.clone(), pick.input_delays.clone(), pick.output_delays.clone(), &search)?;
    let loop_residuals = h2::optimality_residuals(g, &loop_model)?;

    let model = if cfg.final_irka_pass {
        let mut final_cfg = irka_cfg.clone();
        final_cfg.init = IrkaInit::from_model(&pick.core);
        let red = reduce_at(g, &pick.input_delays, &pick.output_delays, &final_cfg)?;
        delayed(red.model, pick.input_delays.clone(), pick.output_delays.clone(), &search)?
    } else {
        loop_model
    };
    let gap = h2::compute_gap_dd(g, &model, norm_g)?;
    let residuals = h2::optimality_residuals(g, &model)?;
    Ok(ReductionReport {
        model,
        gap,
        residuals,
        loop_residuals,
        outer_iterations: trace.len(),
        trace,
        converged,
        stopping_mode: cfg.stopping_mode,
    })
}

/// Recomputes every optimality residual of the report's final model.
pub fn certify(g: &PoleResidueModel, report: &ReductionReport) -> Result<OptimalityResiduals> {
    h2::optimality_residuals(g, &report.model)
}

/// Gap of a trace snapshot, recomputed from the stored core and delays.
pub fn trace_gap(g: &PoleResidueModel, entry: &TraceEntry, g_norm_sq: f64) -> Result<GapValue> {
    let hd = DelayedModel::new(
        entry.core.clone(),
        DelayBlock::with_delays(entry.input_delays.clone())?,
        DelayBlock::with_delays(entry.output_delays.clone())?,
    )?;
    h2::compute_gap_dd(g, &hd, dd(g_norm_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn anderson_solves_linear_map_quickly() {
        // F(x) = 0.99 x + 0.05 has its fixed point at 5
        let mut a = Anderson::new(3);
        let mut x = vec![0.0];
        for _ in 0..6 {
            let fx = vec![0.99 * x[0] + 0.05];
            x = a.next(&x, &fx, 100.0);
        }
        assert!((x[0] - 5.0).abs() < 1e-9, "{x:?}");
    }

    #[test]
    fn small_solver() {
        let x = solve_small(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn full_order_recovers_model() {
        let c = |re, im| Complex64::new(re, im);
        let g = PoleResidueModel::siso(&[(c(-1.0, 0.0), c(1.0, 0.0)), (c(-2.0, 1.0), c(0.5, 0.2)), (c(-2.0, -1.0), c(0.5, -0.2))])
            .unwrap()
            .canonicalized();
        let report = io_dirka(&g, &IoDirkaConfig::input_delays(3, 1, 1)).unwrap();
        assert!(report.converged);
        assert!(report.gap.j < 1e-9, "{:?}", report.gap);
        assert_eq!(report.model.input_delays.delays(), &[0.0]);
    }
}
