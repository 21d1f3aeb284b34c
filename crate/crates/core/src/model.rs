//! Model representations: descriptor state space, pole/residue form and
//! input/output delay blocks, plus transfer-function and impulse-response
//! evaluation.

use faer::Mat;
use num_complex::Complex64;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::linalg;
use crate::precision::{self, cabs, cdd, crecip, czero, dd, ddiv, to_c64, Cdd};

/// Condition estimate above which `E` is rejected.
pub const MAX_E_CONDITION: f64 = 1e12;
/// Relative pole separation below which two poles are considered repeated.
pub const REPEATED_POLE_TOL: f64 = 1e-8;
/// Tolerance for conjugate-closure checks and imaginary leakage.
pub const REALNESS_TOL: f64 = 1e-10;

/// Dense complex `n_y × n_u` transfer matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![Complex64::zero(); nrows * ncols],
        }
    }

    pub(crate) fn from_dd(nrows: usize, ncols: usize, data: &[Cdd]) -> Self {
        Self {
            nrows,
            ncols,
            data: data.iter().map(|z| to_c64(*z)).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Descriptor realization `E x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub e: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl StateSpaceModel {
    /// Checks shapes; `E` invertibility and stability are checked on conversion.
    pub fn new(e: Vec<Vec<f64>>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::InvalidModel("empty state matrix A".into()));
        }
        let square = |m: &[Vec<f64>], name: &str| -> Result<()> {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(Error::DimensionMismatch(format!("{name} must be {n}x{n}")));
            }
            Ok(())
        };
        square(&a, "A")?;
        square(&e, "E")?;
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("B must have {n} rows")));
        }
        let nu = b.first().map_or(0, |r| r.len());
        if nu == 0 || b.iter().any(|r| r.len() != nu) {
            return Err(Error::DimensionMismatch("B rows must share a nonzero width".into()));
        }
        if c.is_empty() || c.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!("C must have {n} columns")));
        }
        let all = e.iter().chain(&a).chain(&b).chain(&c);
        if all.flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("non-finite matrix entry".into()));
        }
        Ok(Self { e, a, b, c })
    }

    /// Standard (`E = I`) realization.
    pub fn standard(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        let e = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(e, a, b, c)
    }

    pub fn order(&self) -> usize {
        self.a.len()
    }

    pub fn inputs(&self) -> usize {
        self.b[0].len()
    }

    pub fn outputs(&self) -> usize {
        self.c.len()
    }

    /// `C (E s - A)^{-1} B` by a dense complex solve.
    pub fn eval_resolvent(&self, s: Complex64) -> Result<CMatrix> {
        let n = self.order();
        let pencil = Mat::<Complex64>::from_fn(n, n, |i, j| {
            Complex64::new(self.e[i][j], 0.0) * s - Complex64::new(self.a[i][j], 0.0)
        });
        let rhs = Mat::<Complex64>::from_fn(n, self.inputs(), |i, j| Complex64::new(self.b[i][j], 0.0));
        let x = linalg::solve_complex(&pencil, &rhs)
            .map_err(|_| Error::EvalAtPole { re: s.re, im: s.im })?;
        let mut out = CMatrix::zeros(self.outputs(), self.inputs());
        for m in 0..self.outputs() {
            for l in 0..self.inputs() {
                out[(m, l)] = (0..n).map(|k| x[(k, l)] * self.c[m][k]).sum();
            }
        }
        Ok(out)
    }
}

/// One rank-1 term `c b^T / (s - λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub pole: Cdd,
    /// Left residue direction, length `n_y`.
    pub left: Vec<Cdd>,
    /// Right residue direction, length `n_u`.
    pub right: Vec<Cdd>,
}

impl Term {
    pub fn new(pole: Cdd, left: Vec<Cdd>, right: Vec<Cdd>) -> Self {
        Self { pole, left, right }
    }

    /// Single-input single-output term `residue / (s - pole)`.
    pub fn siso(pole: Complex64, residue: Complex64) -> Self {
        Self::new(cdd(pole), vec![cdd(residue)], vec![Cdd::new(dd(1.0), dd(0.0))])
    }

    pub fn pole_c64(&self) -> Complex64 {
        to_c64(self.pole)
    }

    /// Residue matrix `c b^T`, row-major.
    pub fn residue(&self) -> Vec<Cdd> {
        let mut out = Vec::with_capacity(self.left.len() * self.right.len());
        for c in &self.left {
            for b in &self.right {
                out.push(*c * *b);
            }
        }
        out
    }

    fn conj(&self) -> Self {
        Self {
            pole: self.pole.conj(),
            left: self.left.iter().map(|z| z.conj()).collect(),
            right: self.right.iter().map(|z| z.conj()).collect(),
        }
    }
}

/// `G(s) = Σ_j c_j b_j^T / (s - λ_j)` with distinct stable poles.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleResidueModel {
    terms: Vec<Term>,
    ny: usize,
    nu: usize,
}

impl PoleResidueModel {
    /// Validates dimensions, stability and pole distinctness. Term order is kept.
    pub fn new(terms: Vec<Term>, ny: usize, nu: usize) -> Result<Self> {
        if ny == 0 || nu == 0 {
            return Err(Error::DimensionMismatch("ny and nu must be positive".into()));
        }
        for (k, t) in terms.iter().enumerate() {
            if t.left.len() != ny || t.right.len() != nu {
                return Err(Error::DimensionMismatch(format!(
                    "term {k}: left has {} entries (expected {ny}), right has {} (expected {nu})",
                    t.left.len(),
                    t.right.len()
                )));
            }
            let p = t.pole_c64();
            if !p.re.is_finite() || !p.im.is_finite() {
                return Err(Error::InvalidModel(format!("term {k}: non-finite pole")));
            }
            if p.re >= 0.0 {
                return Err(Error::Unstable { re: p.re, im: p.im });
            }
        }
        check_distinct(&terms.iter().map(Term::pole_c64).collect::<Vec<_>>())?;
        Ok(Self { terms, ny, nu })
    }

    /// Like [`new`](Self::new), then puts terms in canonical order with exact
    /// conjugate pairs.
    pub fn new_canonical(terms: Vec<Term>, ny: usize, nu: usize) -> Result<Self> {
        let m = Self::new(terms, ny, nu)?;
        Ok(m.canonicalized())
    }

    pub fn siso(poles_residues: &[(Complex64, Complex64)]) -> Result<Self> {
        let terms = poles_residues.iter().map(|&(p, r)| Term::siso(p, r)).collect();
        Self::new(terms, 1, 1)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn order(&self) -> usize {
        self.terms.len()
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.terms.iter().map(Term::pole_c64).collect()
    }

    pub(crate) fn from_parts_unchecked(terms: Vec<Term>, ny: usize, nu: usize) -> Self {
        Self { terms, ny, nu }
    }

    /// Transfer matrix at `s`, double-double, row-major `ny × nu`.
    pub(crate) fn eval_dd(&self, s: Cdd) -> Result<Vec<Cdd>> {
        let mut out = vec![czero(); self.ny * self.nu];
        for t in &self.terms {
            let w = self.gap_recip(s, t)?;
            accumulate_rank1(&mut out, &t.left, &t.right, w, self.nu);
        }
        Ok(out)
    }

    /// Derivative `-Σ c b^T/(s-λ)^2`, double-double.
    pub(crate) fn eval_deriv_dd(&self, s: Cdd) -> Result<Vec<Cdd>> {
        let mut out = vec![czero(); self.ny * self.nu];
        for t in &self.terms {
            let w = self.gap_recip(s, t)?;
            accumulate_rank1(&mut out, &t.left, &t.right, -(w * w), self.nu);
        }
        Ok(out)
    }

    fn gap_recip(&self, s: Cdd, t: &Term) -> Result<Cdd> {
        let d = s - t.pole;
        let scale = 1.0 + cabs(t.pole);
        if cabs(d) <= 1e-13 * scale {
            let s = to_c64(s);
            return Err(Error::EvalAtPole { re: s.re, im: s.im });
        }
        Ok(crecip(d))
    }

    /// Index of the conjugate partner of every term (itself for self-conjugate
    /// terms), or `None` when the model is not conjugate-closed.
    pub fn conjugate_partners(&self) -> Option<Vec<usize>> {
        let n = self.terms.len();
        let mut partner = vec![usize::MAX; n];
        for k in 0..n {
            if partner[k] != usize::MAX {
                continue;
            }
            let tk = &self.terms[k];
            if is_self_conjugate(tk) {
                partner[k] = k;
                continue;
            }
            let found = (0..n).find(|&m| m != k && partner[m] == usize::MAX && is_conjugate_of(tk, &self.terms[m]));
            let m = found?;
            partner[k] = m;
            partner[m] = k;
        }
        Some(partner)
    }

    /// Canonical order: by real part, then |imaginary part|, conjugates
    /// adjacent with the positive imaginary part first. Detected conjugate
    /// pairs are made exactly conjugate and self-conjugate terms exactly real.
    pub fn canonicalized(&self) -> Self {
        let partners = self.conjugate_partners();
        let mut groups: Vec<Vec<Term>> = Vec::new();
        match partners {
            Some(p) => {
                for (k, &m) in p.iter().enumerate() {
                    if m == k {
                        groups.push(vec![realify_term(&self.terms[k])]);
                    } else if k < m {
                        let (a, b) = (&self.terms[k], &self.terms[m]);
                        let upper = if a.pole.im.hi() > 0.0 { a } else { b };
                        groups.push(vec![upper.clone(), upper.conj()]);
                    }
                }
            }
            None => groups.extend(self.terms.iter().map(|t| vec![t.clone()])),
        }
        groups.sort_by(|x, y| {
            let (px, py) = (x[0].pole_c64(), y[0].pole_c64());
            px.re
                .total_cmp(&py.re)
                .then(px.im.abs().total_cmp(&py.im.abs()))
                .then(py.im.total_cmp(&px.im))
        });
        Self {
            terms: groups.into_iter().flatten().collect(),
            ny: self.ny,
            nu: self.nu,
        }
    }

    /// Restores exact conjugate closure of a nearly real model by pairing
    /// poles: each pole above the real axis is matched with the nearest pole
    /// below it, whose term is replaced by the exact mirror; real poles get
    /// real residues. `None` when the poles cannot be paired.
    pub(crate) fn closed_by_poles(&self) -> Option<Self> {
        let n = self.terms.len();
        let poles = self.poles();
        let is_real = |p: Complex64| p.im.abs() <= 1e-12 * (1.0 + p.norm());
        let mut used = vec![false; n];
        let mut groups: Vec<Vec<Term>> = Vec::new();
        for k in 0..n {
            if used[k] || is_real(poles[k]) || poles[k].im < 0.0 {
                continue;
            }
            let m = (0..n)
                .filter(|&m| !used[m] && m != k && !is_real(poles[m]) && poles[m].im < 0.0)
                .min_by(|&a, &b| {
                    (poles[a] - poles[k].conj())
                        .norm()
                        .total_cmp(&(poles[b] - poles[k].conj()).norm())
                })?;
            if (poles[m] - poles[k].conj()).norm() > 1e-6 * (1.0 + poles[k].norm()) {
                return None;
            }
            used[k] = true;
            used[m] = true;
            let t = self.terms[k].clone();
            let mirror = t.conj();
            groups.push(vec![t, mirror]);
        }
        for k in 0..n {
            if used[k] {
                continue;
            }
            if !is_real(poles[k]) {
                return None;
            }
            let t = &self.terms[k];
            let r: Vec<Cdd> = t.residue().iter().map(|z| Cdd::new(z.re, dd(0.0))).collect();
            let (left, right) = factor_rank1(&r, self.ny, self.nu);
            groups.push(vec![Term::new(Cdd::new(t.pole.re, dd(0.0)), left, right)]);
        }
        let flat: Vec<Term> = groups.into_iter().flatten().collect();
        Some(Self::from_parts_unchecked(flat, self.ny, self.nu).canonicalized())
    }

    /// Copy with every residue matrix `c b^T` scaled channel-wise.
    pub(crate) fn map_terms(&self, f: impl Fn(&Term) -> Term) -> Self {
        Self {
            terms: self.terms.iter().map(f).collect(),
            ny: self.ny,
            nu: self.nu,
        }
    }
}

fn accumulate_rank1(out: &mut [Cdd], left: &[Cdd], right: &[Cdd], w: Cdd, nu: usize) {
    for (m, c) in left.iter().enumerate() {
        let cw = *c * w;
        for (l, b) in right.iter().enumerate() {
            out[m * nu + l] += cw * *b;
        }
    }
}

fn tol_scale(z: Complex64) -> f64 {
    REALNESS_TOL * (1.0 + z.norm())
}

fn residue_close(a: &[Cdd], b: &[Cdd]) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        let (x, y) = (to_c64(*x), to_c64(*y));
        (x - y).norm() <= REALNESS_TOL * (1.0 + x.norm().max(y.norm()))
    })
}

fn is_self_conjugate(t: &Term) -> bool {
    let p = t.pole_c64();
    if p.im.abs() > tol_scale(p) {
        return false;
    }
    t.residue().iter().all(|z| {
        let z = to_c64(*z);
        z.im.abs() <= tol_scale(z)
    })
}

fn is_conjugate_of(a: &Term, b: &Term) -> bool {
    let (pa, pb) = (a.pole_c64(), b.pole_c64());
    if (pa - pb.conj()).norm() > tol_scale(pa) {
        return false;
    }
    let rb: Vec<Cdd> = b.residue().iter().map(|z| z.conj()).collect();
    residue_close(&a.residue(), &rb)
}

fn realify_term(t: &Term) -> Term {
    let pole = Cdd::new(t.pole.re, dd(0.0));
    let all_real = t.left.iter().chain(&t.right).all(|z| z.im.hi() == 0.0);
    if all_real {
        return Term::new(pole, t.left.clone(), t.right.clone());
    }
    let r: Vec<Cdd> = t.residue().iter().map(|z| Cdd::new(z.re, dd(0.0))).collect();
    let (left, right) = factor_rank1(&r, t.left.len(), t.right.len());
    Term::new(pole, left, right)
}

/// Splits a rank-1 matrix `R` (row-major) into `l r^T` with `‖l‖ = ‖r‖`.
///
/// `l` is the column of largest norm and `r` the least-squares row factor.
pub(crate) fn factor_rank1(r: &[Cdd], ny: usize, nu: usize) -> (Vec<Cdd>, Vec<Cdd>) {
    let col_norm = |j: usize| (0..ny).map(|i| to_c64(r[i * nu + j]).norm_sqr()).sum::<f64>();
    let jmax = (0..nu)
        .max_by(|&a, &b| col_norm(a).total_cmp(&col_norm(b)))
        .unwrap_or(0);
    let mut left: Vec<Cdd> = (0..ny).map(|i| r[i * nu + jmax]).collect();
    let ll = left.iter().fold(dd(0.0), |acc, z| acc + z.re * z.re + z.im * z.im);
    if ll.hi() == 0.0 {
        return (vec![czero(); ny], vec![czero(); nu]);
    }
    let mut right: Vec<Cdd> = (0..nu)
        .map(|j| {
            let s = (0..ny).fold(czero(), |acc, i| acc + left[i].conj() * r[i * nu + j]);
            Cdd::new(ddiv(s.re, ll), ddiv(s.im, ll))
        })
        .collect();
    let rr = right.iter().fold(dd(0.0), |acc, z| acc + z.re * z.re + z.im * z.im);
    // alpha^4 = |r|^2 / |l|^2
    let alpha = ddiv(rr, ll).sqrt().sqrt();
    for z in &mut left {
        *z *= alpha;
    }
    for z in &mut right {
        *z = Cdd::new(ddiv(z.re, alpha), ddiv(z.im, alpha));
    }
    (left, right)
}

fn check_distinct(poles: &[Complex64]) -> Result<()> {
    let scale = poles.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let tol = REPEATED_POLE_TOL * scale;
    for i in 0..poles.len() {
        for j in i + 1..poles.len() {
            let d = (poles[i] - poles[j]).norm();
            if d < tol {
                return Err(Error::RepeatedPole { i, j, distance: d });
            }
        }
    }
    Ok(())
}

/// Diagonal delay block: one nonnegative delay per channel and a mask of the
/// channels allowed to carry one.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBlock {
    delays: Vec<f64>,
    mask: Vec<bool>,
}

impl DelayBlock {
    pub fn new(delays: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if delays.len() != mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} delays but {} mask entries",
                delays.len(),
                mask.len()
            )));
        }
        for (i, (&d, &m)) in delays.iter().zip(&mask).enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidModel(format!("delay {i} = {d} must be finite and >= 0")));
            }
            if !m && d != 0.0 {
                return Err(Error::InvalidModel(format!("delay {i} = {d} on a masked-off channel")));
            }
        }
        Ok(Self { delays, mask })
    }

    /// All channels pinned to zero delay.
    pub fn none(n: usize) -> Self {
        Self {
            delays: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    /// All channels free, starting at zero delay.
    pub fn free(n: usize) -> Self {
        Self {
            delays: vec![0.0; n],
            mask: vec![true; n],
        }
    }

    /// Free channels with the given delays.
    pub fn with_delays(delays: Vec<f64>) -> Result<Self> {
        let mask = vec![true; delays.len()];
        Self::new(delays, mask)
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Same mask, new delay values (masked-off channels forced to zero).
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        let delays = values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Self::new(delays, self.mask.clone())
    }
}

/// `Δ_o(s) H(s) Δ_i(s)` with diagonal pure-delay blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedModel {
    pub core: PoleResidueModel,
    pub input_delays: DelayBlock,
    pub output_delays: DelayBlock,
}

impl DelayedModel {
    pub fn new(core: PoleResidueModel, input_delays: DelayBlock, output_delays: DelayBlock) -> Result<Self> {
        if input_delays.len() != core.nu() || output_delays.len() != core.ny() {
            return Err(Error::DimensionMismatch(format!(
                "delay blocks ({} in, {} out) do not match a {}x{} model",
                input_delays.len(),
                output_delays.len(),
                core.ny(),
                core.nu()
            )));
        }
        Ok(Self {
            core,
            input_delays,
            output_delays,
        })
    }

    pub fn undelayed(core: PoleResidueModel) -> Self {
        let (ny, nu) = (core.ny(), core.nu());
        Self {
            core,
            input_delays: DelayBlock::none(nu),
            output_delays: DelayBlock::none(ny),
        }
    }

    /// `Ĥ_d(s)` including the delay phases.
    pub fn eval(&self, s: Complex64) -> Result<CMatrix> {
        let mut h = eval_transfer(&self.core, s)?;
        for m in 0..self.core.ny() {
            for l in 0..self.core.nu() {
                let d = self.output_delays.delays()[m] + self.input_delays.delays()[l];
                h[(m, l)] *= (-s * d).exp();
            }
        }
        Ok(h)
    }
}

/// Diagonalizes `E^{-1} A` and returns the pole/residue form in canonical order.
pub fn pole_residue_from_state_space(m: &StateSpaceModel) -> Result<PoleResidueModel> {
    let (n, nu, ny) = (m.order(), m.inputs(), m.outputs());
    let e = linalg::real_mat(&m.e, n, n);
    let cond = linalg::condition_number(&e)?;
    if !(cond <= MAX_E_CONDITION) {
        return Err(Error::NonInvertibleE { cond });
    }
    let a = linalg::real_mat(&m.a, n, n);
    let b = linalg::real_mat(&m.b, n, nu);
    let einv_a = linalg::solve_real(&e, &a);
    let einv_b = linalg::solve_real(&e, &b);

    let (poles, vecs) = linalg::eig_real(&einv_a)?;
    for p in &poles {
        if !(p.re < 0.0) {
            return Err(Error::Unstable { re: p.re, im: p.im });
        }
    }
    check_distinct(&poles)?;

    let w = linalg::inverse_complex(&vecs)?;
    let mut terms = Vec::with_capacity(n);
    for (k, &pole) in poles.iter().enumerate() {
        let left: Vec<Complex64> = (0..ny)
            .map(|i| (0..n).map(|q| vecs[(q, k)] * m.c[i][q]).sum())
            .collect();
        let right: Vec<Complex64> = (0..nu)
            .map(|j| (0..n).map(|q| w[(k, q)] * einv_b[(q, j)]).sum())
            .collect();
        let mut r = Vec::with_capacity(ny * nu);
        for l in &left {
            for rr in &right {
                r.push(cdd(*l * *rr));
            }
        }
        let (left, right) = factor_rank1(&r, ny, nu);
        terms.push(Term::new(cdd(pole), left, right));
    }
    let pr = PoleResidueModel::new(terms, ny, nu)?;
    Ok(pr.canonicalized())
}

/// `Σ_j c_j b_j^T / (s - λ_j)`.
pub fn eval_transfer(m: &PoleResidueModel, s: Complex64) -> Result<CMatrix> {
    let v = m.eval_dd(cdd(s))?;
    Ok(CMatrix::from_dd(m.ny(), m.nu(), &v))
}

/// `-Σ_j c_j b_j^T / (s - λ_j)^2`.
pub fn eval_transfer_derivative(m: &PoleResidueModel, s: Complex64) -> Result<CMatrix> {
    let v = m.eval_deriv_dd(cdd(s))?;
    Ok(CMatrix::from_dd(m.ny(), m.nu(), &v))
}

/// True iff every term has its conjugate mirror (within [`REALNESS_TOL`]).
pub fn realify_check(m: &PoleResidueModel) -> bool {
    m.conjugate_partners().is_some()
}

/// Sampled impulse response, stored channel by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub ny: usize,
    pub nu: usize,
    pub times: Vec<f64>,
    values: Vec<f64>,
}

impl ImpulseResponse {
    /// Samples of output `m` driven by an impulse on input `l`.
    pub fn channel(&self, m: usize, l: usize) -> &[f64] {
        let len = self.times.len();
        let start = (m * self.nu + l) * len;
        &self.values[start..start + len]
    }

    pub fn get(&self, m: usize, l: usize, k: usize) -> f64 {
        self.channel(m, l)[k]
    }
}

/// Impulse response of a delayed model on a nondecreasing, nonnegative grid.
///
/// Entry `(m, l)` at time `t` is `Σ_j [c_j]_m [b_j]_l e^{λ_j (t - γ_m - τ_l)}`
/// once `t ≥ γ_m + τ_l`, zero before.
pub fn impulse_response(m: &DelayedModel, t_grid: &[f64]) -> Result<ImpulseResponse> {
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("time grid must be nonnegative and nondecreasing".into()));
    }
    if !realify_check(&m.core) {
        return Err(Error::NonRealModel);
    }
    let (ny, nu) = (m.core.ny(), m.core.nu());
    let len = t_grid.len();
    let mut values = vec![0.0; ny * nu * len];
    for mm in 0..ny {
        for l in 0..nu {
            let shift = m.output_delays.delays()[mm] + m.input_delays.delays()[l];
            let weights: Vec<Cdd> = m.core.terms().iter().map(|t| t.left[mm] * t.right[l]).collect();
            for (k, &t) in t_grid.iter().enumerate() {
                if t < shift {
                    continue;
                }
                let dt = dd(t) - dd(shift);
                let mut acc = czero();
                for (term, w) in m.core.terms().iter().zip(&weights) {
                    acc += *w * precision::cexp(term.pole * dt);
                }
                let z = to_c64(acc);
                if z.im.abs() > REALNESS_TOL * (1.0 + z.re.abs()) {
                    return Err(Error::NonRealSum { imag: z.im });
                }
                values[(mm * nu + l) * len + k] = z.re;
            }
        }
    }
    Ok(ImpulseResponse {
        ny,
        nu,
        times: t_grid.to_vec(),
        values,
    })
}
