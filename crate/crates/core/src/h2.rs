//! H2 norms, inner products and the delayed mismatch gap, their analytic
//! gradients and the first-order optimality residuals.
//!
//! All sums over terms are formed in double-double and rounded at the end.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DelayBlock, DelayedModel, PoleResidueModel, StateSpaceModel, Term, REALNESS_TOL};
use crate::precision::{crecip, czero, delay_factor, dd, to_c64, to_f64, CWide, Cdd, Dd};

/// Squared-norm values more negative than this are reported as errors.
pub const NEGATIVE_TOL: f64 = 1e-10;
/// Gap values below `-GAP_TOL` signal an inconsistent evaluation.
pub const GAP_TOL: f64 = 1e-9;

/// Default symmetric frequency range of the quadrature oracle.
pub const QUADRATURE_OMEGA_MAX: f64 = 1e4;
/// Default number of Simpson nodes of the quadrature oracle.
pub const QUADRATURE_POINTS: usize = 2_000_001;

/// `J = ‖G‖² − 2 cross + ‖Ĥ‖²` with its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapValue {
    pub j: f64,
    pub norm_g_sq: f64,
    pub cross: f64,
    pub norm_h_sq: f64,
}

impl GapValue {
    /// `j` clamped at zero.
    pub fn reported(&self) -> f64 {
        self.j.max(0.0)
    }

    /// Gap relative to `‖G‖²`.
    pub fn relative(&self) -> f64 {
        self.reported() / self.norm_g_sq
    }
}

/// Per-term and per-channel residuals of the first-order optimality conditions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimalityResiduals {
    pub interp_right: Vec<f64>,
    pub interp_left: Vec<f64>,
    pub interp_hermite: Vec<f64>,
    pub delay_in: Vec<f64>,
    pub delay_out: Vec<f64>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

impl OptimalityResiduals {
    /// Largest of the three interpolation families.
    pub fn max_interp(&self) -> f64 {
        max_of(&self.interp_right)
            .max(max_of(&self.interp_left))
            .max(max_of(&self.interp_hermite))
    }

    /// Largest delay-condition residual over free channels.
    pub fn max_delay(&self) -> f64 {
        max_of(&self.delay_in).max(max_of(&self.delay_out))
    }

    /// Largest entry of every family, in field order.
    pub fn maxima(&self) -> [f64; 5] {
        [
            max_of(&self.interp_right),
            max_of(&self.interp_left),
            max_of(&self.interp_hermite),
            max_of(&self.delay_in),
            max_of(&self.delay_out),
        ]
    }
}

/// Complex gradients of `J` with respect to each term's parameters, treating
/// every term (including conjugate partners) as independent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub db: Vec<Vec<Complex64>>,
    pub dc: Vec<Vec<Complex64>>,
    pub dl: Vec<Complex64>,
}

/// Gradients with respect to `(Re, Im)` of every parameter of a real model.
///
/// Moving a coordinate of a paired term moves its partner's coordinate so
/// the model stays real; imaginary coordinates of real terms are pinned and
/// report 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGradients {
    pub db: Vec<Vec<[f64; 2]>>,
    pub dc: Vec<Vec<[f64; 2]>>,
    pub dl: Vec<[f64; 2]>,
}

fn dot(a: &[Cdd], b: &[Cdd]) -> Cdd {
    a.iter().zip(b).fold(czero(), |acc, (x, y)| acc + *x * *y)
}

fn check_real(z: Cdd) -> Result<Dd> {
    let c = to_c64(z);
    if c.im.abs() > REALNESS_TOL * (1.0 + c.re.abs()) {
        return Err(Error::NonRealSum { imag: c.im });
    }
    Ok(z.re)
}

fn check_dims(g: &PoleResidueModel, h: &PoleResidueModel) -> Result<()> {
    if g.ny() != h.ny() || g.nu() != h.nu() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} model against {}x{} model",
            g.ny(),
            g.nu(),
            h.ny(),
            h.nu()
        )));
    }
    Ok(())
}

/// `Σ_{j,k} (a_j.left · b_k.left)(b_k.right · a_j.right) / (−α_j − β_k)`, the
/// H2 inner product of two pole/residue models, summed in [`CWide`]: with
/// large residues on both sides the terms cancel by more digits than
/// double-double carries.
fn pair_sum_wide(a: &[Term], b: &[Term]) -> Cdd {
    let wide_terms = |ts: &[Term]| -> Vec<(CWide, Vec<CWide>, Vec<CWide>)> {
        ts.iter()
            .map(|t| {
                (
                    CWide::from_cdd(t.pole),
                    t.left.iter().map(|z| CWide::from_cdd(*z)).collect(),
                    t.right.iter().map(|z| CWide::from_cdd(*z)).collect(),
                )
            })
            .collect()
    };
    let dot = |x: &[CWide], y: &[CWide]| x.iter().zip(y).fold(CWide::zero(), |acc, (p, q)| acc.add(&p.mul(q)));
    let (wa, wb) = (wide_terms(a), wide_terms(b));
    let mut acc = CWide::zero();
    for (pa, la, ra) in &wa {
        for (pb, lb, rb) in &wb {
            let w = dot(la, lb).mul(&dot(rb, ra));
            acc = acc.add(&w.div(&pa.add(pb).neg()));
        }
    }
    acc.to_cdd()
}

pub(crate) fn norm_sq_dd(h: &PoleResidueModel) -> Result<Dd> {
    let v = check_real(pair_sum_wide(h.terms(), h.terms()))?;
    if v.hi() < -NEGATIVE_TOL {
        return Err(Error::NegativeNormSquared { value: to_f64(v) });
    }
    Ok(v)
}

/// `‖H‖_{H2} = (Σ_k c_k^T H(−λ_k) b_k)^{1/2}`.
pub fn h2_norm_pole_residue(h: &PoleResidueModel) -> Result<f64> {
    Ok(to_f64(norm_sq_dd(h)?).max(0.0).sqrt())
}

/// Squared H2 norm of a pole/residue model.
pub fn h2_norm_sq(h: &PoleResidueModel) -> Result<f64> {
    Ok(to_f64(norm_sq_dd(h)?))
}

/// Squared H2 norm of a state-space model, `tr(C P Cᵀ)` with `P` the
/// controllability Gramian of `(E⁻¹A, E⁻¹B)`.
///
/// Prefer this over the pole/residue sum when the modal residues are large:
/// the double sum then cancels far beyond double-double precision.
pub fn h2_norm_sq_state_space(ss: &StateSpaceModel) -> Result<f64> {
    let n = ss.order();
    let e = linalg::real_mat(&ss.e, n, n);
    let a = linalg::solve_real(&e, &linalg::real_mat(&ss.a, n, n));
    let b = linalg::solve_real(&e, &linalg::real_mat(&ss.b, n, ss.inputs()));
    let c = linalg::real_mat(&ss.c, ss.outputs(), n);
    let p = linalg::lyapunov(&a, &(&b * b.transpose()))?;
    let cpc = &c * &p * c.transpose();
    let v: f64 = (0..cpc.nrows()).map(|i| cpc[(i, i)]).sum();
    if !v.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    if v < -NEGATIVE_TOL {
        return Err(Error::NegativeNormSquared { value: v });
    }
    Ok(v)
}

/// Scales each term's left and right vectors by `e^{λ γ_m}` and `e^{λ τ_l}`.
pub fn build_gtilde(g: &PoleResidueModel, input_delays: &DelayBlock, output_delays: &DelayBlock) -> PoleResidueModel {
    assert_eq!(input_delays.len(), g.nu(), "input delay block length");
    assert_eq!(output_delays.len(), g.ny(), "output delay block length");
    g.map_terms(|t| scale_term(t, input_delays.delays(), output_delays.delays()))
}

fn scale_term(t: &Term, tau: &[f64], gamma: &[f64]) -> Term {
    let left = t
        .left
        .iter()
        .zip(gamma)
        .map(|(c, &d)| *c * delay_factor(t.pole, d))
        .collect();
    let right = t
        .right
        .iter()
        .zip(tau)
        .map(|(b, &d)| *b * delay_factor(t.pole, d))
        .collect();
    Term::new(t.pole, left, right)
}

pub(crate) fn cross_dd(g: &PoleResidueModel, hd: &DelayedModel) -> Result<Dd> {
    check_dims(g, &hd.core)?;
    let gt = build_gtilde(g, &hd.input_delays, &hd.output_delays);
    check_real(pair_sum_wide(gt.terms(), hd.core.terms()))
}

/// `⟨Ĥ_d, G⟩ = Σ_j l_j^T Δ_o(−μ_j) Ĥ(−μ_j) Δ_i(−μ_j) r_j`.
pub fn inner_product_delayed(hd: &DelayedModel, g: &PoleResidueModel) -> Result<f64> {
    Ok(to_f64(cross_dd(g, hd)?))
}

/// Mismatch `‖G − Ĥ_d‖²` given the cached `‖G‖²`.
pub fn compute_gap(g: &PoleResidueModel, hd: &DelayedModel, g_norm_sq: f64) -> Result<GapValue> {
    compute_gap_dd(g, hd, dd(g_norm_sq))
}

pub(crate) fn compute_gap_dd(g: &PoleResidueModel, hd: &DelayedModel, g_norm_sq: Dd) -> Result<GapValue> {
    let cross = cross_dd(g, hd)?;
    let nh = norm_sq_dd(&hd.core)?;
    let j = g_norm_sq - cross * 2.0 + nh;
    let jf = to_f64(j);
    if !jf.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    if jf < -GAP_TOL {
        return Err(Error::NegativeNormSquared { value: jf });
    }
    Ok(GapValue {
        j: jf,
        norm_g_sq: to_f64(g_norm_sq),
        cross: to_f64(cross),
        norm_h_sq: to_f64(nh),
    })
}

/// Per-channel sums `Σ_j μ_j (l̃_j^T Ĥ(−μ_j))_l (r̃_j)_l` and
/// `Σ_j μ_j (l̃_j)_m (Ĥ(−μ_j) r̃_j)_m`.
fn delay_conditions(g: &PoleResidueModel, hd: &DelayedModel) -> Result<(Vec<Dd>, Vec<Dd>)> {
    check_dims(g, &hd.core)?;
    let gt = build_gtilde(g, &hd.input_delays, &hd.output_delays);
    let (ny, nu) = (g.ny(), g.nu());
    let mut din = vec![czero(); nu];
    let mut dout = vec![czero(); ny];
    for t in gt.terms() {
        let mut row = vec![czero(); nu];
        let mut col = vec![czero(); ny];
        for h in hd.core.terms() {
            let w = crecip(-t.pole - h.pole);
            let a = dot(&t.left, &h.left) * w;
            let b = dot(&h.right, &t.right) * w;
            for (r, hb) in row.iter_mut().zip(&h.right) {
                *r += a * *hb;
            }
            for (c, hc) in col.iter_mut().zip(&h.left) {
                *c += b * *hc;
            }
        }
        for l in 0..nu {
            din[l] += t.pole * row[l] * t.right[l];
        }
        for m in 0..ny {
            dout[m] += t.pole * t.left[m] * col[m];
        }
    }
    let mask = |v: Vec<Cdd>, block: &DelayBlock| -> Result<Vec<Dd>> {
        v.into_iter()
            .zip(block.mask())
            .map(|(z, &free)| if free { check_real(z) } else { Ok(dd(0.0)) })
            .collect()
    };
    Ok((mask(din, &hd.input_delays)?, mask(dout, &hd.output_delays)?))
}

/// `∂J/∂τ_l` and `∂J/∂γ_m`; zero on masked-off channels.
pub fn grad_delays(g: &PoleResidueModel, hd: &DelayedModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let (din, dout) = delay_conditions(g, hd)?;
    let scale = |v: Vec<Dd>| v.into_iter().map(|x| -2.0 * to_f64(x)).collect();
    Ok((scale(din), scale(dout)))
}

struct Mismatch {
    /// `(G̃ − Ĥ)(−λ_k)`, row-major.
    value: Vec<Vec<Cdd>>,
    /// `(G̃′ − Ĥ′)(−λ_k)`, row-major.
    deriv: Vec<Vec<Cdd>>,
}

fn mismatch(gt: &PoleResidueModel, h: &PoleResidueModel) -> Result<Mismatch> {
    check_dims(gt, h)?;
    let mut value = Vec::with_capacity(h.order());
    let mut deriv = Vec::with_capacity(h.order());
    for t in h.terms() {
        let s = -t.pole;
        let gv = gt.eval_dd(s)?;
        let hv = h.eval_dd(s)?;
        let gd = gt.eval_deriv_dd(s)?;
        let hdv = h.eval_deriv_dd(s)?;
        value.push(gv.iter().zip(&hv).map(|(a, b)| *a - *b).collect());
        deriv.push(gd.iter().zip(&hdv).map(|(a, b)| *a - *b).collect());
    }
    Ok(Mismatch { value, deriv })
}

fn left_mul(c: &[Cdd], m: &[Cdd], nu: usize) -> Vec<Cdd> {
    (0..nu)
        .map(|l| c.iter().enumerate().fold(czero(), |acc, (i, ci)| acc + *ci * m[i * nu + l]))
        .collect()
}

fn right_mul(m: &[Cdd], b: &[Cdd], nu: usize) -> Vec<Cdd> {
    m.chunks(nu).map(|row| dot(row, b)).collect()
}

/// `∇_b J`, `∇_c J`, `∇_λ J` at the parameters of `h`, given the surrogate
/// `gt` for the current delays.
pub fn grad_residues_poles(gt: &PoleResidueModel, h: &PoleResidueModel) -> Result<ParameterGradients> {
    let mm = mismatch(gt, h)?;
    let nu = h.nu();
    let mut out = ParameterGradients {
        db: Vec::with_capacity(h.order()),
        dc: Vec::with_capacity(h.order()),
        dl: Vec::with_capacity(h.order()),
    };
    for (k, t) in h.terms().iter().enumerate() {
        let ct_m = left_mul(&t.left, &mm.value[k], nu);
        let m_b = right_mul(&mm.value[k], &t.right, nu);
        let hermite = dot(&left_mul(&t.left, &mm.deriv[k], nu), &t.right);
        out.db.push(ct_m.iter().map(|z| to_c64(*z) * -2.0).collect());
        out.dc.push(m_b.iter().map(|z| to_c64(*z) * -2.0).collect());
        out.dl.push(to_c64(hermite) * 2.0);
    }
    Ok(out)
}

/// Converts complex per-term gradients into `(Re, Im)` coordinate gradients
/// for a conjugate-closed model.
pub fn real_gradients(h: &PoleResidueModel, g: &ParameterGradients) -> Result<RealGradients> {
    let partners = h.conjugate_partners().ok_or(Error::NonRealModel)?;
    let conv = |z: Complex64, paired: bool| if paired { [2.0 * z.re, -2.0 * z.im] } else { [z.re, 0.0] };
    let mut out = RealGradients {
        db: Vec::new(),
        dc: Vec::new(),
        dl: Vec::new(),
    };
    for (k, &p) in partners.iter().enumerate() {
        let paired = p != k;
        out.db.push(g.db[k].iter().map(|z| conv(*z, paired)).collect());
        out.dc.push(g.dc[k].iter().map(|z| conv(*z, paired)).collect());
        out.dl.push(conv(g.dl[k], paired));
    }
    Ok(out)
}

fn vec_norm(v: &[Cdd]) -> f64 {
    v.iter().map(|z| to_c64(*z).norm_sqr()).sum::<f64>().sqrt()
}

/// Interpolation residuals of `h` against a surrogate `gt`.
pub(crate) fn interpolation_residuals(gt: &PoleResidueModel, h: &PoleResidueModel) -> Result<[Vec<f64>; 3]> {
    let mm = mismatch(gt, h)?;
    let nu = h.nu();
    let mut right = Vec::with_capacity(h.order());
    let mut left = Vec::with_capacity(h.order());
    let mut hermite = Vec::with_capacity(h.order());
    for (k, t) in h.terms().iter().enumerate() {
        right.push(vec_norm(&right_mul(&mm.value[k], &t.right, nu)));
        left.push(vec_norm(&left_mul(&t.left, &mm.value[k], nu)));
        hermite.push(to_c64(dot(&left_mul(&t.left, &mm.deriv[k], nu), &t.right)).norm());
    }
    Ok([right, left, hermite])
}

/// All five residual families at the candidate `hd`.
pub fn optimality_residuals(g: &PoleResidueModel, hd: &DelayedModel) -> Result<OptimalityResiduals> {
    let gt = build_gtilde(g, &hd.input_delays, &hd.output_delays);
    let [interp_right, interp_left, interp_hermite] = interpolation_residuals(&gt, &hd.core)?;
    let (din, dout) = delay_conditions(g, hd)?;
    let abs = |v: Vec<Dd>| v.into_iter().map(|x| to_f64(x).abs()).collect();
    Ok(OptimalityResiduals {
        interp_right,
        interp_left,
        interp_hermite,
        delay_in: abs(din),
        delay_out: abs(dout),
    })
}

/// Plain `f64` evaluator used by the quadrature oracle.
struct FastEval {
    poles: Vec<Complex64>,
    residues: Vec<Vec<Complex64>>,
    tau: Vec<f64>,
    gamma: Vec<f64>,
    nu: usize,
}

impl FastEval {
    fn new(h: &DelayedModel) -> Self {
        Self {
            poles: h.core.poles(),
            residues: h
                .core
                .terms()
                .iter()
                .map(|t| t.residue().into_iter().map(to_c64).collect())
                .collect(),
            tau: h.input_delays.delays().to_vec(),
            gamma: h.output_delays.delays().to_vec(),
            nu: h.core.nu(),
        }
    }

    fn eval(&self, s: Complex64, out: &mut [Complex64]) {
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (p, r) in self.poles.iter().zip(&self.residues) {
            let w = 1.0 / (s - p);
            for (o, ri) in out.iter_mut().zip(r) {
                *o += ri * w;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let d = self.gamma[i / self.nu] + self.tau[i % self.nu];
            if d != 0.0 {
                *o *= (-s * d).exp();
            }
        }
    }
}

fn simpson<F: FnMut(f64) -> f64>(omega_max: f64, n_points: usize, mut f: F) -> f64 {
    // an odd node count keeps the panels paired
    let n = if n_points.is_multiple_of(2) { n_points + 1 } else { n_points.max(3) };
    let h = 2.0 * omega_max / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let w = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * f(-omega_max + i as f64 * h);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI)
}

/// `(1/2π ∫ ‖H(iω)‖_F² dω)^{1/2}` by composite Simpson on `[−ω_max, ω_max]`.
///
/// The integrand decays like `‖M‖²/ω²` with `M = lim ωH(iω)`; the part past
/// `±ω_max` is added in closed form from the endpoint value
/// `ω_max ‖H(iω_max)‖²/π`, which leaves an `O(ω_max⁻²)` tail error.
/// Test oracle only.
pub fn h2_norm_quadrature(h: &DelayedModel, omega_max: f64, n_points: usize) -> f64 {
    let ev = FastEval::new(h);
    let mut buf = vec![Complex64::new(0.0, 0.0); h.core.ny() * h.core.nu()];
    let mut sq = |w: f64| -> f64 {
        ev.eval(Complex64::new(0.0, w), &mut buf);
        buf.iter().map(|z| z.norm_sqr()).sum()
    };
    let tail = omega_max * (sq(omega_max) + sq(-omega_max)) / (2.0 * std::f64::consts::PI);
    (simpson(omega_max, n_points, sq) + tail).max(0.0).sqrt()
}

/// `1/2π ∫ Re tr(A(iω)^H B(iω)) dω` by composite Simpson.
pub fn h2_inner_quadrature(a: &DelayedModel, b: &DelayedModel, omega_max: f64, n_points: usize) -> f64 {
    let (ea, eb) = (FastEval::new(a), FastEval::new(b));
    let size = a.core.ny() * a.core.nu();
    let mut ba = vec![Complex64::new(0.0, 0.0); size];
    let mut bb = ba.clone();
    simpson(omega_max, n_points, |w| {
        let s = Complex64::new(0.0, w);
        ea.eval(s, &mut ba);
        eb.eval(s, &mut bb);
        ba.iter().zip(&bb).map(|(x, y)| (x.conj() * y).re).sum()
    })
}
