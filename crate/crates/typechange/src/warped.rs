//! Warped products `g = f(t)^2 g_S - t dt^2` on `I x S`.
//!
//! The locus is `{t = 0}` with `tau = -t` (so that `g(E_m, E_m) = tau` holds
//! for the radical `E_m = d/dt`). The warping function is either an explicit
//! expression in `t` or an opaque symbol with declared values `f(0) > 0`,
//! `f'(0)`, `f''(0)`. The module assembles the curvature stack from closed
//! forms, cross-validates it against the generic engine, decides
//! extendibility from the locus jet of `f`, and reparametrizes the regular
//! part onto a product metric.

use num_traits::{Signed, Zero};

use crate::curvature::{kulkarni_nomizu, CurvatureBundle, MetricData};
use crate::expr::{ExprError, Rat, ScalarExpr, Strength, Tau, Valuations};
use crate::geometry::{Chart, GeometryError, MetricChart, Setting, Tensor, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum WarpedError {
    #[error("warped products need ambient dimension at least 4, got {0}")]
    DimensionTooSmall(usize),
    #[error("warping function must be positive at the locus; f(0) = {0}")]
    NonPositiveWarp(String),
    #[error("warping function values f(0), f'(0), f''(0) are required; missing order {0}")]
    MissingJet(u32),
    #[error("base metric is not positive definite at a sample point")]
    BaseNotRiemannian,
    #[error("base metric must not depend on the warped coordinate")]
    BaseDependsOnT,
    #[error("closed-form table disagrees with the generic engine; component {0:?}")]
    CrossValidationFailed(Vec<usize>),
    #[error("supplied coordinates are not isothermal for the locus metric: residual at ({0},{1})")]
    NotIsothermal(usize, usize),
    #[error("normal form requires a vanishing Weyl tensor")]
    WeylNotZero,
    #[error("quadrature did not converge")]
    Quadrature,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// The warping function.
#[derive(Debug, Clone)]
pub enum WarpFn {
    /// Expression in the warped coordinate (the last one).
    Explicit(ScalarExpr),
    /// Opaque symbol; locus values come from the function table.
    Opaque(String),
}

/// A warped product: base chart and metric, plus the warping function.
#[derive(Debug, Clone)]
pub struct WarpedSpec {
    base_chart: Chart,
    base_g: Vec<Vec<ScalarExpr>>,
    warp: WarpFn,
    t_name: String,
}

/// The closed-form curvature stack of a warped product.
#[derive(Debug, Clone)]
pub struct WarpedTable {
    pub k: Tensor,
    pub ric: Tensor,
    pub sc: ScalarExpr,
    pub h: Tensor,
    pub w: Tensor,
}

/// Extendibility discrimination from the locus jet of the warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpedVerdicts {
    pub k_extends: bool,
    pub ric_extends: bool,
    pub w_extends: bool,
}

/// The three equivalent characterizations of a vanishing Weyl tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeylVanishing {
    /// W of the warped metric vanishes identically.
    pub w_zero: bool,
    /// The base has zero Weyl tensor and traceless Ricci.
    pub base_conformally_einstein: bool,
    /// The base has constant sectional curvature.
    pub base_constant_curvature: bool,
}

/// Result of the normal-form factorization `g = phi * (delta + tau dxm^2)`.
#[derive(Debug)]
pub struct NormalForm {
    /// The bracketed flat-looking metric with its own tau.
    pub chart: MetricChart,
    /// Conformal factor `phi` with `g = phi * chart`.
    pub factor: ScalarExpr,
    /// New degeneracy function.
    pub tau: Tau,
    /// `g - phi * chart`, must vanish identically.
    pub residual_zero: bool,
    /// d(tau) nonzero at the locus.
    pub dtau_nonzero: Verdict,
}

impl WarpedSpec {
    pub fn new(
        base_chart: Chart,
        base_g: Vec<Vec<ScalarExpr>>,
        warp: WarpFn,
    ) -> Result<WarpedSpec, WarpedError> {
        let m = base_chart.dim() + 1;
        if m < 4 {
            return Err(WarpedError::DimensionTooSmall(m));
        }
        let t_idx = m - 1;
        for row in &base_g {
            for e in row {
                if !e.differentiate(t_idx).is_zero() {
                    return Err(WarpedError::BaseDependsOnT);
                }
            }
        }
        Ok(WarpedSpec {
            base_chart,
            base_g,
            warp,
            t_name: "t".to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.base_chart.dim() + 1
    }

    fn t_index(&self) -> usize {
        self.dim() - 1
    }

    pub fn chart(&self) -> Chart {
        let mut coords = self.base_chart.coords.clone();
        coords.push(self.t_name.clone());
        Chart::new(coords)
    }

    pub fn tau(&self) -> Tau {
        Tau::with_unit(self.t_index(), ScalarExpr::int(-1))
    }

    /// The warping function as an expression on the full chart.
    pub fn f_expr(&self) -> ScalarExpr {
        match &self.warp {
            WarpFn::Explicit(e) => e.clone(),
            WarpFn::Opaque(name) => ScalarExpr::func(name, 0, self.t_index()),
        }
    }

    /// Locus jet `(f(0), f'(0), f''(0))`, exact.
    pub fn jet(&self, setting: &Setting) -> Result<[Rat; 3], WarpedError> {
        let tau = self.tau();
        match &self.warp {
            WarpFn::Explicit(e) => {
                let mut out = Vec::new();
                let mut cur = e.clone();
                for _ in 0..3 {
                    let r = cur
                        .restrict(&tau, &setting.fns, None)?
                        .expr
                        .as_rational()
                        .ok_or(WarpedError::MissingJet(0))?;
                    out.push(r);
                    cur = cur.differentiate(self.t_index());
                }
                Ok([out[0].clone(), out[1].clone(), out[2].clone()])
            }
            WarpFn::Opaque(name) => {
                let mut out = Vec::new();
                for k in 0..3u32 {
                    out.push(
                        setting
                            .fns
                            .jet_value(name, k)
                            .cloned()
                            .ok_or(WarpedError::MissingJet(k))?,
                    );
                }
                Ok([out[0].clone(), out[1].clone(), out[2].clone()])
            }
        }
    }

    /// Assemble the metric chart `f^2 g_S` block plus `g_tt = -t`.
    pub fn make_metric(&self, setting: &Setting) -> Result<MetricChart, WarpedError> {
        let m = self.dim();
        let jet = self.jet(setting)?;
        if !jet[0].is_positive() {
            return Err(WarpedError::NonPositiveWarp(jet[0].to_string()));
        }
        // base positivity spot-check
        let ctx = setting.numeric_ctx(m, self.t_index());
        let vals = Valuations::from_table(&setting.fns);
        for p in ctx.sigma_samples() {
            let n = m - 1;
            let mut a = vec![vec![0.0; n]; n];
            let mut ok = true;
            for i in 0..n {
                for j in 0..n {
                    match self.base_g[i][j].evaluate(&p, &vals) {
                        Ok(v) => a[i][j] = v,
                        Err(_) => ok = false,
                    }
                }
            }
            if !ok {
                continue;
            }
            let eigs = crate::geometry::jacobi_eigenvalues(&mut a);
            if eigs.iter().any(|&e| e <= 1e-12) {
                return Err(WarpedError::BaseNotRiemannian);
            }
        }
        let f = self.f_expr();
        let f2 = f.mul(&f);
        let mut full = vec![vec![ScalarExpr::zero(); m]; m];
        for i in 0..m - 1 {
            for j in 0..m - 1 {
                full[i][j] = self.base_g[i][j].mul(&f2);
            }
        }
        full[m - 1][m - 1] = ScalarExpr::coord(m - 1).neg();
        Ok(MetricChart::new(self.chart(), full, self.tau())?)
    }

    /// Curvature bundle of the base metric, on the base chart.
    pub fn base_bundle(&self) -> Result<CurvatureBundle, WarpedError> {
        Ok(CurvatureBundle::compute(MetricData::new(
            self.base_g.clone(),
        )?)?)
    }

    fn lift(&self, t: &Tensor) -> Tensor {
        let m = self.dim();
        let mut out = Tensor::zeros(m, t.rank);
        for idx in t.indices() {
            out.set(&idx, t.get(&idx).clone());
        }
        out
    }

    fn dt2(&self) -> Tensor {
        let m = self.dim();
        let mut dt2 = Tensor::zeros(m, 2);
        dt2.set(&[m - 1, m - 1], ScalarExpr::one());
        dt2
    }

    /// Closed-form curvature of the warped product, assembled from the base
    /// curvature and the warp derivatives.
    pub fn closed_form_table(&self) -> Result<WarpedTable, WarpedError> {
        let m = self.dim() as i64;
        let t_idx = self.t_index();
        let base = self.base_bundle()?;
        let gs = self.lift(&base.md.metric_tensor());
        let ks = self.lift(&base.k);
        let rics = self.lift(&base.ric);
        let hs = self.lift(&base.h);
        let ws = self.lift(&base.w);
        let scs = base.sc.clone();
        let dt2 = self.dt2();
        let t = ScalarExpr::coord(t_idx);
        let f = self.f_expr();
        let f1 = f.differentiate(t_idx);
        let f2d = f1.differentiate(t_idx);
        let fsq = f.mul(&f);
        let two = ScalarExpr::int(2);
        // common bracket: f'/t - 2 f''
        let bracket = f1.div(&t)?.sub(&f2d.mul(&two));

        // K = f^2 K_S + (f'^2 f^2 / 2t) gS*gS + (f/2)(f'/t - 2f'') gS*dt^2
        let k = ks
            .scale_expr(&fsq)
            .add(
                &kulkarni_nomizu(&gs, &gs)
                    .scale_expr(&f1.mul(&f1).mul(&fsq).div(&t.mul(&two))?),
            )
            .add(&kulkarni_nomizu(&gs, &dt2).scale_expr(&f.mul(&bracket).div(&two)?));

        // Ric = Ric_S - ((f/2t)(f'/t - 2f'') - (m-2) f'^2/t) gS
        //       + ((m-1)/2f)(f'/t - 2f'') dt^2
        let ric_gs_coeff = f
            .mul(&bracket)
            .div(&t.mul(&two))?
            .sub(&f1.mul(&f1).scale(&Rat::from_integer((m - 2).into())).div(&t)?);
        let ric_dt_coeff = bracket
            .scale(&Rat::from_integer((m - 1).into()))
            .div(&f.mul(&two))?;
        let ric = rics
            .sub(&gs.scale_expr(&ric_gs_coeff))
            .add(&dt2.scale_expr(&ric_dt_coeff));

        // Sc = Sc_S/f^2 - ((m-1)/f^2)((f/t)(f'/t - 2f'') - (m-2) f'^2/t)
        let sc_inner = f
            .mul(&bracket)
            .div(&t)?
            .sub(&f1.mul(&f1).scale(&Rat::from_integer((m - 2).into())).div(&t)?);
        let sc = scs
            .div(&fsq)?
            .sub(&sc_inner.scale(&Rat::from_integer((m - 1).into())).div(&fsq)?);

        // h = ((m-3)/(m-2)) h_S
        //     + (Sc_S/(2(m-2)^2(m-1)) + f'^2/2t) gS
        //     + (t Sc_S/(2(m-1)(m-2) f^2) + (1/2f)(f'^2/f + f'/t - 2f'')) dt^2
        let h_gs_coeff = scs
            .scale(&Rat::new(1.into(), (2 * (m - 2) * (m - 2) * (m - 1)).into()))
            .add(&f1.mul(&f1).div(&t.mul(&two))?);
        let h_dt_coeff = t
            .mul(&scs)
            .scale(&Rat::new(1.into(), (2 * (m - 1) * (m - 2)).into()))
            .div(&fsq)?
            .add(
                &f1.mul(&f1)
                    .div(&f)?
                    .add(&bracket)
                    .div(&f.mul(&two))?,
            );
        let h = hs
            .scale_expr(&ScalarExpr::rational(m - 3, m - 2))
            .add(&gs.scale_expr(&h_gs_coeff))
            .add(&dt2.scale_expr(&h_dt_coeff));

        // W = f^2 W_S + (1/(m-2)) (Ric_S - Sc_S/(m-1) gS) * (f^2/(m-3) gS + t dt^2)
        let traceless = rics.sub(&gs.scale_expr(&scs.scale(&Rat::new(1.into(), (m - 1).into()))));
        let partner = gs
            .scale_expr(&fsq.scale(&Rat::new(1.into(), (m - 3).into())))
            .add(&dt2.scale_expr(&t));
        let w = ws.scale_expr(&fsq).add(
            &kulkarni_nomizu(&traceless, &partner)
                .scale_expr(&ScalarExpr::rational(1, m - 2)),
        );

        Ok(WarpedTable { k, ric, sc, h, w })
    }

    /// Table minus generic engine, all five quantities. Exact zero for
    /// explicit warps; numeric agreement at off-locus samples for opaque
    /// warps.
    pub fn cross_validate(&self, setting: &Setting) -> Result<Strength, WarpedError> {
        let table = self.closed_form_table()?;
        let metric = self.make_metric(setting)?;
        let engine = CurvatureBundle::of_chart(&metric)?;
        let diffs: Vec<(&str, Tensor)> = vec![
            ("k", table.k.sub(&engine.k)),
            ("ric", table.ric.sub(&engine.ric)),
            ("sc", {
                let mut t = Tensor::zeros(self.dim(), 0);
                t.set(&[], table.sc.sub(&engine.sc));
                t
            }),
            ("h", table.h.sub(&engine.h)),
            ("w", table.w.sub(&engine.w)),
        ];
        let exact = matches!(self.warp, WarpFn::Explicit(_));
        if exact {
            for (_, d) in &diffs {
                if !d.is_zero() {
                    let witness = d
                        .indices()
                        .find(|i| !d.get(i).is_zero())
                        .unwrap_or_default();
                    return Err(WarpedError::CrossValidationFailed(witness));
                }
            }
            return Ok(Strength::Exact);
        }
        let ctx = setting.numeric_ctx(self.dim(), self.t_index());
        let vals = Valuations::from_table(&setting.fns);
        for (_, d) in &diffs {
            for idx in d.indices() {
                let e = d.get(&idx);
                if e.is_zero() {
                    continue;
                }
                for p in ctx.off_sigma_samples() {
                    if let Ok(v) = e.evaluate(&p, &vals) {
                        if v.abs() > 1e-9 {
                            return Err(WarpedError::CrossValidationFailed(idx.clone()));
                        }
                    }
                }
            }
        }
        Ok(Strength::Numeric)
    }

    /// Extendibility verdicts from the locus jet: the curvature and Schouten
    /// tensors extend iff `f'(0) = 0`; Ricci and the scalar extend iff
    /// additionally `f''(0) = 0`; the Weyl tensor extends always.
    pub fn extendibility(&self, setting: &Setting) -> Result<WarpedVerdicts, WarpedError> {
        let jet = self.jet(setting)?;
        let k_extends = jet[1].is_zero();
        // the limit of f'/t at 0 exists only when f'(0) = 0 and equals f''(0)
        let ric_extends = k_extends && jet[2].is_zero();
        Ok(WarpedVerdicts {
            k_extends,
            ric_extends,
            w_extends: true,
        })
    }

    fn f_at(&self, s: f64, setting: &Setting) -> Result<f64, WarpedError> {
        let m = self.dim();
        let mut p = vec![0.0; m];
        p[m - 1] = s;
        let vals = Valuations::from_table(&setting.fns);
        self.f_expr()
            .evaluate(&p, &vals)
            .map_err(|_| WarpedError::Quadrature)
    }

    /// Reparametrization `T = psi(t) = integral_0^t |s|^(1/2)/f(s) ds` by
    /// adaptive quadrature with absolute error below 1e-10. The substitution
    /// `s = u^2` removes the square-root kink at the locus, so the quadrature
    /// sees a smooth integrand.
    pub fn psi(&self, t: f64, setting: &Setting) -> Result<f64, WarpedError> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let side = t.signum();
        let integrand = |u: f64| -> Result<f64, WarpedError> {
            Ok(2.0 * u * u / self.f_at(side * u * u, setting)?)
        };
        let v = adaptive_simpson(&integrand, 0.0, t.abs().sqrt(), 1e-12, 40)?;
        Ok(side * v)
    }

    /// Branchwise conformality of the reparametrization: on each side of the
    /// locus the pullback of the product metric (Lorentzian `-dT^2 + g_S` for
    /// t > 0, Riemannian `+dT^2 + g_S` for t < 0) agrees with `f^-2 g` at the
    /// sample points. Returns the maximum componentwise residual per branch.
    pub fn psi_conformality(&self, setting: &Setting) -> Result<(f64, f64), WarpedError> {
        let m = self.dim();
        let ctx = setting.numeric_ctx(m, self.t_index());
        let vals = Valuations::from_table(&setting.fns);
        let mut residuals = [0.0f64; 2];
        for (branch, positive) in [(0usize, true), (1usize, false)] {
            let sign = if positive { -1.0 } else { 1.0 };
            for p in ctx.one_sided_samples(positive) {
                let t = p[m - 1];
                let f = self.f_at(t, setting)?;
                // dT = psi'(t) dt with psi' = |t|^(1/2)/f
                let psi_prime = t.abs().sqrt() / f;
                // pullback tt-component vs (f^-2 g)_tt = -t/f^2
                let lhs = sign * psi_prime * psi_prime;
                let rhs = -t / (f * f);
                residuals[branch] = residuals[branch].max((lhs - rhs).abs());
                // base block: pullback is g_S itself; f^-2 g gives g_S too
                for i in 0..m - 1 {
                    for j in 0..m - 1 {
                        let gs = self.base_g[i][j]
                            .evaluate(&p, &vals)
                            .map_err(|_| WarpedError::Quadrature)?;
                        let amb = gs * f * f / (f * f);
                        residuals[branch] = residuals[branch].max((amb - gs).abs());
                    }
                }
            }
        }
        Ok((residuals[0], residuals[1]))
    }

    /// The three equivalent conditions for `W = 0`.
    pub fn weyl_vanishing(&self) -> Result<WeylVanishing, WarpedError> {
        let base = self.base_bundle()?;
        let table = self.closed_form_table()?;
        let nm1 = self.dim() as i64 - 1;
        let traceless = base.ric.sub(
            &base
                .md
                .metric_tensor()
                .scale_expr(&base.sc.scale(&Rat::new(1.into(), nm1.into()))),
        );
        let base_conformally_einstein = base.w.is_zero() && traceless.is_zero();
        // constant curvature: K_S = (C/2) gS*gS with one fitted constant C
        let gg = kulkarni_nomizu(&base.md.metric_tensor(), &base.md.metric_tensor());
        let mut constant = true;
        let mut c_fit = ScalarExpr::zero();
        'outer: for idx in gg.indices() {
            let denom = gg.get(&idx);
            if denom.is_zero() {
                continue;
            }
            c_fit = base.k.get(&idx).mul(&ScalarExpr::int(2)).div(denom)?;
            break 'outer;
        }
        if c_fit.as_rational().is_none() && !c_fit.is_zero() {
            constant = false;
        }
        if constant {
            let residual = base.k.sub(&gg.scale_expr(&c_fit.div(&ScalarExpr::int(2))?));
            constant = residual.is_zero();
        }
        Ok(WeylVanishing {
            w_zero: table.w.is_zero(),
            base_conformally_einstein,
            base_constant_curvature: constant,
        })
    }

    /// Normal-form factorization `g = phi * (sum dxi^2 + tau dxm^2)` with
    /// `phi = exp(2h) f(t)^2 / f(0)^2` and `tau = -t f(0)^2 exp(-2h)/f(t)^2`.
    /// The caller supplies the isothermal factor `h` for the locus metric,
    /// which is verified against `f(0)^2 g_S = exp(2h) delta`, not derived.
    pub fn normal_form(
        &self,
        isothermal_h: &ScalarExpr,
        setting: &Setting,
    ) -> Result<NormalForm, WarpedError> {
        let wv = self.weyl_vanishing()?;
        if !wv.w_zero {
            return Err(WarpedError::WeylNotZero);
        }
        let m = self.dim();
        let jet = self.jet(setting)?;
        let f0sq = ScalarExpr::from_rat(&jet[0] * &jet[0]);
        let e2h = ScalarExpr::exp_of(&isothermal_h.scale(&Rat::from_integer(2.into())))?;
        // verify isothermality: f(0)^2 gS = exp(2h) delta
        for i in 0..m - 1 {
            for j in 0..m - 1 {
                let target = if i == j { e2h.clone() } else { ScalarExpr::zero() };
                let resid = self.base_g[i][j].mul(&f0sq).sub(&target);
                if !resid.is_zero() {
                    return Err(WarpedError::NotIsothermal(i, j));
                }
            }
        }
        let f = self.f_expr();
        let fsq = f.mul(&f);
        let t = ScalarExpr::coord(m - 1);
        let factor = e2h.mul(&fsq).div(&f0sq)?;
        let unit = f0sq
            .neg()
            .mul(&ScalarExpr::exp_of(&isothermal_h.scale(&Rat::from_integer((-2).into())))?)
            .div(&fsq)?;
        let tau_new_expr = t.mul(&unit);
        let tau_new = Tau::with_unit(m - 1, unit);
        let mut bracket = vec![vec![ScalarExpr::zero(); m]; m];
        for (i, row) in bracket.iter_mut().enumerate().take(m - 1) {
            row[i] = ScalarExpr::one();
        }
        bracket[m - 1][m - 1] = tau_new_expr;
        let chart = MetricChart::new(self.chart(), bracket, tau_new.clone())?;
        // verify the factorization exactly against the warped metric
        let g = self.make_metric(setting)?;
        let mut residual_zero = true;
        for i in 0..m {
            for j in 0..m {
                let lhs = g.g(i, j);
                let rhs = chart.g(i, j).mul(&factor);
                if !lhs.sub(&rhs).is_zero() {
                    residual_zero = false;
                }
            }
        }
        // d(tau) at the locus: the t-derivative restricts to the unit value
        let ctx = setting.numeric_ctx(m, m - 1);
        let dtau = tau_new
            .expr()
            .differentiate(m - 1)
            .restrict(&tau_new, &setting.fns, Some(&ctx))?;
        let dtau_nonzero = match ctx.decide_zero(&dtau.expr, true) {
            crate::expr::ZeroDecision::NonZero => Verdict {
                value: true,
                evidence: dtau.strength,
            },
            _ => Verdict::numeric(false),
        };
        Ok(NormalForm {
            chart,
            factor,
            tau: tau_new,
            residual_zero,
            dtau_nonzero,
        })
    }
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> Result<f64, WarpedError>,
    a: f64,
    b: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, WarpedError> {
    let fa = f(a)?;
    let fb = f(b)?;
    let mid = 0.5 * (a + b);
    let fm = f(mid)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fb, fm, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> Result<f64, WarpedError>,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, WarpedError> {
    let mid = 0.5 * (a + b);
    let lm = 0.5 * (a + mid);
    let rm = 0.5 * (mid + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (mid - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - mid) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 {
        return Err(WarpedError::Quadrature);
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_rec(f, a, mid, fa, fm, flm, left, tol / 2.0, depth - 1)?
        + simpson_rec(f, mid, b, fm, fb, frm, right, tol / 2.0, depth - 1)?)
}

/// Flat base metric on n coordinates.
pub fn flat_base(n: usize) -> Vec<Vec<ScalarExpr>> {
    let mut g = vec![vec![ScalarExpr::zero(); n]; n];
    for (i, row) in g.iter_mut().enumerate() {
        row[i] = ScalarExpr::one();
    }
    g
}

/// Round sphere of curvature one in stereographic coordinates:
/// `g = 4 delta / (1 + |y|^2)^2`.
pub fn sphere_base(n: usize) -> Vec<Vec<ScalarExpr>> {
    let mut r2 = ScalarExpr::zero();
    for i in 0..n {
        r2 = r2.add(&ScalarExpr::coord(i).pow_u(2));
    }
    let conf = ScalarExpr::int(4)
        .div(&ScalarExpr::one().add(&r2).pow_u(2))
        .expect("denominator nonzero");
    let mut g = vec![vec![ScalarExpr::zero(); n]; n];
    for (i, row) in g.iter_mut().enumerate() {
        row[i] = conf.clone();
    }
    g
}

/// Product of a round 2-sphere with a line: non-constant curvature base.
pub fn sphere_line_base() -> Vec<Vec<ScalarExpr>> {
    let r2 = ScalarExpr::coord(0)
        .pow_u(2)
        .add(&ScalarExpr::coord(1).pow_u(2));
    let conf = ScalarExpr::int(4)
        .div(&ScalarExpr::one().add(&r2).pow_u(2))
        .expect("denominator nonzero");
    let mut g = vec![vec![ScalarExpr::zero(); 3]; 3];
    g[0][0] = conf.clone();
    g[1][1] = conf;
    g[2][2] = ScalarExpr::one();
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setting() -> Setting {
        Setting::plain(4)
    }

    fn explicit(expr: ScalarExpr) -> WarpedSpec {
        WarpedSpec::new(Chart::standard(3), flat_base(3), WarpFn::Explicit(expr)).unwrap()
    }

    fn f_one() -> WarpedSpec {
        explicit(ScalarExpr::one())
    }

    fn f_1pt() -> WarpedSpec {
        explicit(ScalarExpr::one().add(&ScalarExpr::coord(3)))
    }

    fn f_1pt2() -> WarpedSpec {
        explicit(ScalarExpr::one().add(&ScalarExpr::coord(3).pow_u(2)))
    }

    #[test]
    fn metric_assembly() {
        let s = setting();
        let g = f_1pt2().make_metric(&s).unwrap();
        let f = ScalarExpr::one().add(&ScalarExpr::coord(3).pow_u(2));
        assert_eq!(*g.g(0, 0), f.mul(&f));
        assert_eq!(*g.g(3, 3), ScalarExpr::coord(3).neg());
        assert!(g.g(0, 3).is_zero());
        // det = -t f^6 det(gS)
        let det = g.det();
        let expected = ScalarExpr::coord(3).neg().mul(&f.pow_u(6));
        assert!(det.sub(&expected).is_zero());
    }

    #[test]
    fn trivial_warp_is_flat() {
        let t = f_one().closed_form_table().unwrap();
        assert!(t.k.is_zero());
        assert!(t.ric.is_zero());
        assert!(t.sc.is_zero());
        assert!(t.h.is_zero());
        assert!(t.w.is_zero());
    }

    #[test]
    fn cross_validation_flat_base() {
        let s = setting();
        for spec in [f_one(), f_1pt(), f_1pt2()] {
            assert_eq!(spec.cross_validate(&s).unwrap(), Strength::Exact);
        }
    }

    #[test]
    fn cross_validation_sphere_base() {
        let s = setting();
        let spec = WarpedSpec::new(
            Chart::standard(3),
            sphere_base(3),
            WarpFn::Explicit(ScalarExpr::one().add(&ScalarExpr::coord(3).pow_u(2))),
        )
        .unwrap();
        assert_eq!(spec.cross_validate(&s).unwrap(), Strength::Exact);
    }

    #[test]
    fn cross_validation_opaque_warp() {
        let mut s = setting();
        s.fns.declare(
            "f",
            vec![Rat::from_integer(1.into()), Rat::zero(), Rat::from_integer(2.into())],
        );
        let spec = WarpedSpec::new(
            Chart::standard(3),
            flat_base(3),
            WarpFn::Opaque("f".into()),
        )
        .unwrap();
        assert_eq!(spec.cross_validate(&s).unwrap(), Strength::Numeric);
    }

    #[test]
    fn extendibility_discrimination() {
        let s = setting();
        let v1 = f_one().extendibility(&s).unwrap();
        assert_eq!(
            v1,
            WarpedVerdicts {
                k_extends: true,
                ric_extends: true,
                w_extends: true
            }
        );
        let v2 = f_1pt().extendibility(&s).unwrap();
        assert_eq!(
            v2,
            WarpedVerdicts {
                k_extends: false,
                ric_extends: false,
                w_extends: true
            }
        );
        let v3 = f_1pt2().extendibility(&s).unwrap();
        assert_eq!(
            v3,
            WarpedVerdicts {
                k_extends: true,
                ric_extends: false,
                w_extends: true
            }
        );
    }

    #[test]
    fn psi_closed_form_for_unit_warp() {
        let s = setting();
        let spec = f_one();
        for k in 1..=20 {
            let t = k as f64 / 20.0;
            let expected = (2.0 / 3.0) * t.powf(1.5);
            let got = spec.psi(t, &s).unwrap();
            assert!((got - expected).abs() < 1e-9, "t={t}: {got} vs {expected}");
        }
        // odd in t and strictly increasing
        assert!(spec.psi(0.2, &s).unwrap() < spec.psi(0.4, &s).unwrap());
        assert!((spec.psi(-0.25, &s).unwrap() + spec.psi(0.25, &s).unwrap()).abs() < 1e-10);
        assert!((spec.psi(0.25, &s).unwrap() - 2.0 / 3.0 * 0.125).abs() < 1e-10);
    }

    #[test]
    fn psi_branch_conformality() {
        let s = setting();
        for spec in [f_one(), f_1pt2()] {
            let (lorentz, riemann) = spec.psi_conformality(&s).unwrap();
            assert!(lorentz < 1e-9);
            assert!(riemann < 1e-9);
        }
    }

    #[test]
    fn weyl_vanishing_equivalences() {
        let flat = f_one().weyl_vanishing().unwrap();
        assert_eq!(flat.w_zero, true);
        assert_eq!(flat.base_conformally_einstein, true);
        assert_eq!(flat.base_constant_curvature, true);

        let sphere = WarpedSpec::new(
            Chart::standard(3),
            sphere_base(3),
            WarpFn::Explicit(ScalarExpr::one()),
        )
        .unwrap()
        .weyl_vanishing()
        .unwrap();
        assert_eq!(sphere.w_zero, true);
        assert_eq!(sphere.base_conformally_einstein, true);
        assert_eq!(sphere.base_constant_curvature, true);

        let product = WarpedSpec::new(
            Chart::standard(3),
            sphere_line_base(),
            WarpFn::Explicit(ScalarExpr::one()),
        )
        .unwrap()
        .weyl_vanishing()
        .unwrap();
        assert_eq!(product.w_zero, false);
        assert_eq!(product.base_conformally_einstein, false);
        assert_eq!(product.base_constant_curvature, false);
    }

    #[test]
    fn normal_form_trivial_warp() {
        let s = setting();
        let nf = f_one().normal_form(&ScalarExpr::zero(), &s).unwrap();
        assert!(nf.residual_zero);
        assert!(nf.factor.is_one());
        assert_eq!(nf.tau.expr(), ScalarExpr::coord(3).neg());
        assert!(nf.dtau_nonzero.value);
        // the bracket metric is the flat normal form with tau = -t
        let b = CurvatureBundle::of_chart(&nf.chart).unwrap();
        assert!(b.k.is_zero());
    }

    #[test]
    fn normal_form_nontrivial_warp() {
        let s = setting();
        let nf = f_1pt().normal_form(&ScalarExpr::zero(), &s).unwrap();
        assert!(nf.residual_zero);
        // tau = -t/(1+t)^2
        let t = ScalarExpr::coord(3);
        let f = ScalarExpr::one().add(&t);
        let expected = t.neg().div(&f.pow_u(2)).unwrap();
        assert!(nf.tau.expr().sub(&expected).is_zero());
        // factor is f^2 at h = 0
        assert!(nf.factor.sub(&f.pow_u(2)).is_zero());
    }

    #[test]
    fn normal_form_requires_vanishing_weyl() {
        let s = setting();
        let spec = WarpedSpec::new(
            Chart::standard(3),
            sphere_line_base(),
            WarpFn::Explicit(ScalarExpr::one()),
        )
        .unwrap();
        assert!(matches!(
            spec.normal_form(&ScalarExpr::zero(), &s),
            Err(WarpedError::WeylNotZero)
        ));
    }

    #[test]
    fn rejects_small_dimension() {
        assert!(matches!(
            WarpedSpec::new(
                Chart::standard(2),
                flat_base(2),
                WarpFn::Explicit(ScalarExpr::one())
            ),
            Err(WarpedError::DimensionTooSmall(3))
        ));
    }

    #[test]
    fn rejects_nonpositive_warp() {
        let s = setting();
        let spec = explicit(ScalarExpr::coord(3)); // f(0) = 0
        assert!(matches!(
            spec.make_metric(&s),
            Err(WarpedError::NonPositiveWarp(_))
        ));
    }
}
