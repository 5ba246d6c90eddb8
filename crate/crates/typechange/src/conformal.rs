//! Conformal rescaling, transformation laws, and constructive flattening.
//!
//! A conformal factor `exp(2f)` is carried as an integer power of the single
//! exponential atom `exp(f)`, so rescaled inverse metrics, frames and
//! curvature cancel the factor exactly. The flattening constructions are
//! implemented in the coordinate-aligned case (frame radical proportional to
//! the tau coordinate direction), where the required first-order equation
//! `E_m f = h` reduces to a one-variable polynomial antiderivative; the
//! locus extension of the right-hand side is taken constant in tau.


use crate::degeneracy::{
    self, dual_pairing, is_conformally_ii_flat, is_conformally_iii_flat, is_ii_flat,
    second_fundamental, third_fundamental, DegeneracyError,
};
use crate::curvature::{CurvatureBundle, MetricData};
use crate::expr::{ExprError, Gen, Rat, ScalarExpr, Strength, ZeroDecision};
use crate::geometry::{Frame, GeometryError, MetricChart, Setting, VectorField, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum ConformalError {
    #[error("flattening requires the frame radical to be aligned with the tau coordinate")]
    NotCoordinateAligned,
    #[error("right-hand side is not polynomial in the tau coordinate")]
    NotPolynomialInTau,
    #[error("metric is not conformally II-flat; no flattening factor exists")]
    NotConformallyIIFlat,
    #[error("metric is not II-flat; the third form does not exist")]
    NotIIFlat,
    #[error("metric is not conformally III-flat; no flattening factor exists")]
    NotConformallyIIIFlat,
    #[error("radical self-pairing vanishes; flattening needs a transverse radical")]
    TangentRadical,
    #[error(transparent)]
    Degeneracy(#[from] DegeneracyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A conformal factor `exp(2f)`, kept as powers of the atom `exp(f)`.
#[derive(Debug, Clone)]
pub struct ConformalFactor {
    pub f: ScalarExpr,
    e_f: ScalarExpr,
}

impl ConformalFactor {
    pub fn new(f: &ScalarExpr) -> Result<ConformalFactor, ExprError> {
        Ok(ConformalFactor {
            f: f.clone(),
            e_f: ScalarExpr::exp_of(f)?,
        })
    }

    /// `exp(2f)`.
    pub fn e2f(&self) -> ScalarExpr {
        self.e_f.mul(&self.e_f)
    }

    /// `exp(-2f)`.
    pub fn em2f(&self) -> ScalarExpr {
        ScalarExpr::one()
            .div(&self.e2f())
            .expect("exponentials are units")
    }
}

/// `g -> exp(2f) g`; the locus and its degeneracy function are unchanged.
pub fn rescale(mc: &MetricChart, factor: &ConformalFactor) -> MetricChart {
    let m = mc.dim();
    let e2f = factor.e2f();
    let comps: Vec<Vec<ScalarExpr>> = (0..m)
        .map(|i| (0..m).map(|j| mc.g(i, j).mul(&e2f)).collect())
        .collect();
    MetricChart::new(mc.chart.clone(), comps, mc.tau.clone()).expect("rescaled metric is symmetric")
}

/// Gradient of `f` in an adapted frame:
/// `grad f = sum eps_i (E_i f) E_i + (Rf)/tau R`. The field extends across
/// the locus iff `(Rf)` is divisible by tau, i.e. `(Rf)` vanishes there.
pub fn gradient_in_frame(
    mc: &MetricChart,
    frame: &Frame,
    f: &ScalarExpr,
    setting: &Setting,
) -> Result<(VectorField, Verdict), ConformalError> {
    let m = mc.dim();
    let mut grad = VectorField::new(vec![ScalarExpr::zero(); m]);
    for i in 0..m - 1 {
        let df = frame.fields[i].apply(f);
        if df.is_zero() {
            continue;
        }
        let coeff = df.scale(&Rat::from_integer(frame.eps[i].into()));
        grad = grad.add(&frame.fields[i].scale(&coeff));
    }
    let rf = frame.radical().apply(f);
    let extends = match rf.divide_exact(&mc.tau, &setting.fns, None) {
        Ok(q) => {
            grad = grad.add(&frame.radical().scale(&q.expr));
            Verdict {
                value: true,
                evidence: q.strength,
            }
        }
        Err(_) => {
            let coeff = rf.div(&mc.tau.expr())?;
            grad = grad.add(&frame.radical().scale(&coeff));
            Verdict::exact(false)
        }
    };
    Ok((grad, extends))
}

/// Residual matrix of a conformal transformation law, restricted to the
/// locus; all entries must vanish.
pub struct LawCheck {
    pub residuals: Vec<Vec<ScalarExpr>>,
    pub zero: Verdict,
}

fn residuals_verdict(
    residuals: &[Vec<ScalarExpr>],
    ctx: &crate::expr::NumericCtx,
    strength: Strength,
) -> Verdict {
    let mut evidence = strength;
    for row in residuals {
        for e in row {
            match ctx.decide_zero(e, true) {
                ZeroDecision::ExactZero => {}
                ZeroDecision::ProbablyZero => evidence = Strength::Numeric,
                ZeroDecision::NonZero => {
                    return Verdict {
                        value: false,
                        evidence: if e.is_rational_fragment() {
                            Strength::Exact
                        } else {
                            Strength::Numeric
                        },
                    }
                }
            }
        }
    }
    Verdict {
        value: true,
        evidence,
    }
}

/// Law for the second form under `g -> exp(2f) g` with a fixed radical:
/// `II~ = exp(2f) (II - (Rf)|_Sigma g_Sigma)`, tested componentwise in the
/// frame of `g`.
pub fn verify_ii_law(
    mc: &MetricChart,
    factor: &ConformalFactor,
    setting: &Setting,
) -> Result<LawCheck, ConformalError> {
    let m = mc.dim();
    let n = m - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let frame = mc.build_adapted_frame(setting)?;
    let radical = frame.radical();
    let forms = second_fundamental(mc, radical, &frame, setting)?;
    let rescaled = rescale(mc, factor);
    let forms_bar = second_fundamental(&rescaled, radical, &frame, setting)?;
    let rf = radical
        .apply(&factor.f)
        .restrict(&mc.tau, &setting.fns, Some(&ctx))?;
    let e2f_sigma = factor
        .e2f()
        .restrict(&mc.tau, &setting.fns, Some(&ctx))?;
    let mut residuals = vec![vec![ScalarExpr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let g_sigma = if i == j {
                ScalarExpr::int(frame.eps[i] as i64)
            } else {
                ScalarExpr::zero()
            };
            let law = e2f_sigma
                .expr
                .mul(&forms.ii[i][j].sub(&rf.expr.mul(&g_sigma)));
            residuals[i][j] = forms_bar.ii[i][j].sub(&law);
        }
    }
    let strength = forms.strength.and(forms_bar.strength).and(rf.strength);
    let zero = residuals_verdict(&residuals, &ctx, strength);
    Ok(LawCheck { residuals, zero })
}

/// Law for the third form between II-flat conformal metrics:
/// `III~ = exp(2f) (III - II(grad f, R) g_Sigma)`.
pub fn verify_iii_law(
    mc: &MetricChart,
    factor: &ConformalFactor,
    setting: &Setting,
) -> Result<LawCheck, ConformalError> {
    let m = mc.dim();
    let n = m - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let frame = mc.build_adapted_frame(setting)?;
    let radical = frame.radical();
    let forms = second_fundamental(mc, radical, &frame, setting)?;
    if !is_ii_flat(&forms, &frame, &ctx).value {
        return Err(ConformalError::NotIIFlat);
    }
    let rescaled = rescale(mc, factor);
    let rframe = rescaled.build_adapted_frame(setting)?;
    let rforms = second_fundamental(&rescaled, rframe.radical(), &rframe, setting)?;
    if !is_ii_flat(&rforms, &rframe, &ctx).value {
        return Err(ConformalError::NotIIFlat);
    }
    let iii = third_fundamental(mc, radical, &frame, setting)?;
    // the rescaled third form against the same radical field, in the same
    // test basis E_i of g
    let iii_bar = third_against_frame(&rescaled, radical, &frame, setting)?;
    let (grad, _) = gradient_in_frame(mc, &frame, &factor.f, setting)?;
    let md = MetricData::from_chart(mc)?;
    let first = crate::curvature::dual_connection(&md);
    let ii_grad_r = dual_pairing(mc, &first, &grad, radical, radical)
        .restrict(&mc.tau, &setting.fns, Some(&ctx))?;
    let e2f_sigma = factor
        .e2f()
        .restrict(&mc.tau, &setting.fns, Some(&ctx))?;
    let mut residuals = vec![vec![ScalarExpr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let g_sigma = if i == j {
                ScalarExpr::int(frame.eps[i] as i64)
            } else {
                ScalarExpr::zero()
            };
            let law = e2f_sigma
                .expr
                .mul(&iii.ii[i][j].sub(&ii_grad_r.expr.mul(&g_sigma)));
            residuals[i][j] = iii_bar.ii[i][j].sub(&law);
        }
    }
    let strength = iii.strength.and(iii_bar.strength).and(ii_grad_r.strength);
    let zero = residuals_verdict(&residuals, &ctx, strength);
    Ok(LawCheck { residuals, zero })
}

fn third_against_frame(
    mc: &MetricChart,
    radical: &VectorField,
    frame: &Frame,
    setting: &Setting,
) -> Result<degeneracy::FundamentalForms, ConformalError> {
    // third form of `mc` contracted against an explicit radical, with the
    // supplied frame fields as test slots
    let m = mc.dim();
    let n = frame.fields.len() - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let md = MetricData::from_chart(mc)?;
    let conn = crate::curvature::christoffel(&md)?;
    let mut iii = vec![vec![ScalarExpr::zero(); n]; n];
    let mut strength = Strength::Exact;
    for i in 0..n {
        for j in i..n {
            let z = degeneracy::covariant_vector(mc, &conn.second, &frame.fields[i], &frame.fields[j]);
            let raw = dual_pairing(mc, &conn.first, &z, radical, radical);
            let r = raw
                .restrict(&mc.tau, &setting.fns, Some(&ctx))
                .map_err(|_| DegeneracyError::PoleOnLocus)?;
            strength = strength.and(r.strength);
            iii[i][j] = r.expr.clone();
            iii[j][i] = r.expr;
        }
    }
    Ok(degeneracy::FundamentalForms {
        ii: iii,
        strength,
        trace: ScalarExpr::zero(),
    })
}

/// Conformal covariance of the Weyl tensor: `W~ = exp(2f) W` exactly, and
/// the raised version is identical as an expression.
pub struct WeylInvariance {
    pub w_residual_zero: Verdict,
    pub w13_identical: bool,
}

pub fn verify_weyl_invariance(
    mc: &MetricChart,
    factor: &ConformalFactor,
    setting: &Setting,
) -> Result<WeylInvariance, ConformalError> {
    let ctx = setting.numeric_ctx(mc.dim(), mc.tau.coord);
    let base = CurvatureBundle::of_chart(mc)?;
    let rescaled = rescale(mc, factor);
    let bar = CurvatureBundle::of_chart(&rescaled)?;
    let expected = base.w.scale_expr(&factor.e2f());
    let residual = bar.w.sub(&expected);
    let mut verdict = Verdict::exact(true);
    for e in residual.components() {
        match ctx.decide_zero(e, false) {
            ZeroDecision::ExactZero => {}
            ZeroDecision::ProbablyZero => verdict.evidence = Strength::Numeric,
            ZeroDecision::NonZero => {
                verdict = Verdict::exact(false);
                break;
            }
        }
    }
    let w13_identical = bar.w13 == base.w13;
    Ok(WeylInvariance {
        w_residual_zero: verdict,
        w13_identical,
    })
}

/// Polynomial antiderivative in one coordinate; the expression must be
/// polynomial in that coordinate (coefficients may be anything).
fn antiderivative_in(e: &ScalarExpr, coord: usize) -> Result<ScalarExpr, ConformalError> {
    let xg = Gen::coord(coord);
    if e.den().contains_gen(&xg) {
        return Err(ConformalError::NotPolynomialInTau);
    }
    let den = ScalarExpr::from_poly(e.den().clone());
    let coeffs = e.num().coeffs_in(&xg);
    let mut acc = ScalarExpr::zero();
    let x = ScalarExpr::coord(coord);
    for (k, c) in coeffs.iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        // the coefficient polynomials must not hide the coordinate inside
        // atoms; opaque symbols of the tau variable are not integrable here
        if c.contains_gen(&xg) {
            return Err(ConformalError::NotPolynomialInTau);
        }
        let has_tau_atom = c.all_gens().iter().any(|g| match g.kind() {
            crate::expr::GenKind::Func { arg, .. } => *arg == coord,
            _ => false,
        });
        if has_tau_atom {
            return Err(ConformalError::NotPolynomialInTau);
        }
        let term = ScalarExpr::from_poly(c.clone())
            .mul(&x.pow_u(k as u32 + 1))
            .scale(&Rat::new(1.into(), (k as i64 + 1).into()));
        acc = acc.add(&term);
    }
    acc.div(&den).map_err(ConformalError::Expr)
}

/// Scale factor of the frame radical against the tau coordinate direction:
/// `E_m = c * d_m` is required for the constructive flattening.
fn radical_alignment(
    mc: &MetricChart,
    frame: &Frame,
    setting: &Setting,
) -> Result<ScalarExpr, ConformalError> {
    let r = mc.radical_direction(setting)?;
    if r != mc.tau.coord {
        return Err(ConformalError::NotCoordinateAligned);
    }
    let c = &frame.radical().comps[r];
    for (i, comp) in frame.radical().comps.iter().enumerate() {
        if i != r && !comp.is_zero() {
            return Err(ConformalError::NotCoordinateAligned);
        }
    }
    Ok(c.clone())
}

/// Build the flattening factor from a known proportionality factor `k` of
/// the second form: solve `E_m f = k^` with the constant-in-tau extension of
/// `k`, by a polynomial antiderivative.
pub fn flatten_ii_with_factor(
    mc: &MetricChart,
    k_on_sigma: &ScalarExpr,
    setting: &Setting,
) -> Result<ConformalFactor, ConformalError> {
    let frame = mc.build_adapted_frame(setting)?;
    let c = radical_alignment(mc, &frame, setting)?;
    // E_m f = k^  with E_m = c d_m, so d_m f = k^ / c
    let rhs = k_on_sigma.div(&c)?;
    let f = antiderivative_in(&rhs, mc.tau.coord)?;
    Ok(ConformalFactor::new(&f)?)
}

/// Conformal factor turning a conformally II-flat metric into a II-flat one.
pub fn flatten_ii(mc: &MetricChart, setting: &Setting) -> Result<ConformalFactor, ConformalError> {
    let ctx = setting.numeric_ctx(mc.dim(), mc.tau.coord);
    let frame = mc.build_adapted_frame(setting)?;
    let forms = second_fundamental(mc, frame.radical(), &frame, setting)?;
    let (flat, k) = is_conformally_ii_flat(&forms, &frame, &ctx);
    if !flat.value {
        return Err(ConformalError::NotConformallyIIFlat);
    }
    flatten_ii_with_factor(mc, &k.expect("factor exists when proportional"), setting)
}

/// Conformal factor turning a II-flat, conformally III-flat metric into a
/// III-flat one: solves `E_m f = tau k1^` with `k1 = k / II(E_m, E_m)`.
pub fn flatten_iii(mc: &MetricChart, setting: &Setting) -> Result<ConformalFactor, ConformalError> {
    let ctx = setting.numeric_ctx(mc.dim(), mc.tau.coord);
    let frame = mc.build_adapted_frame(setting)?;
    let forms = second_fundamental(mc, frame.radical(), &frame, setting)?;
    if !is_ii_flat(&forms, &frame, &ctx).value {
        return Err(ConformalError::NotIIFlat);
    }
    let iii = third_fundamental(mc, frame.radical(), &frame, setting)?;
    let (flat, k) = is_conformally_iii_flat(&iii, &frame, &ctx);
    if !flat.value {
        return Err(ConformalError::NotConformallyIIIFlat);
    }
    let m = mc.dim();
    let ii_mm = &forms.ii[m - 1][m - 1];
    if ii_mm.is_zero() {
        return Err(ConformalError::TangentRadical);
    }
    let k1 = k.expect("factor exists").div(ii_mm)?;
    let c = radical_alignment(mc, &frame, setting)?;
    let rhs = mc.tau.expr().mul(&k1).div(&c)?;
    let f = antiderivative_in(&rhs, mc.tau.coord)?;
    Ok(ConformalFactor::new(&f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Tau;
    use crate::geometry::Chart;

    fn setting() -> Setting {
        Setting::plain(4)
    }

    fn model() -> MetricChart {
        let chart = Chart::standard(4);
        let entries = vec![
            (0, 0, ScalarExpr::one()),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::one()),
            (3, 3, ScalarExpr::coord(3)),
        ];
        MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap()
    }

    fn conf_flat_only() -> MetricChart {
        let chart = Chart::standard(4);
        let c = ScalarExpr::one().add(&ScalarExpr::coord(3));
        let entries = vec![
            (0, 0, c.clone()),
            (1, 1, c.clone()),
            (2, 2, c),
            (3, 3, ScalarExpr::coord(3)),
        ];
        MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap()
    }

    #[test]
    fn rescale_scales_determinant() {
        let s = setting();
        let mc = model();
        let factor = ConformalFactor::new(&ScalarExpr::coord(0)).unwrap();
        let bar = rescale(&mc, &factor);
        // det(gbar) = exp(8 f) tau for m = 4
        let e8f = ScalarExpr::exp_of(&ScalarExpr::coord(0).scale(&Rat::from_integer(8.into())))
            .unwrap();
        assert!(bar.det().sub(&e8f.mul(&ScalarExpr::coord(3))).is_zero());
        assert!(bar.is_transverse_type_changing(&s).unwrap().value);
        // zero factor is the identity
        let id = ConformalFactor::new(&ScalarExpr::zero()).unwrap();
        let same = rescale(&mc, &id);
        assert!(same.g(0, 0).is_one());
    }

    #[test]
    fn gradient_extendibility() {
        let s = setting();
        let mc = model();
        let frame = mc.build_adapted_frame(&s).unwrap();
        // f = x1: tangential gradient, extends
        let (g1, v1) = gradient_in_frame(&mc, &frame, &ScalarExpr::coord(0), &s).unwrap();
        assert!(v1.value);
        assert_eq!(g1.comps[0], ScalarExpr::one());
        // f = x4 = tau: radical term 1/tau, does not extend
        let (_, v2) = gradient_in_frame(&mc, &frame, &ScalarExpr::coord(3), &s).unwrap();
        assert!(!v2.value);
        // f = x4^2: Rf = 2 x4 divides, extends
        let (g3, v3) =
            gradient_in_frame(&mc, &frame, &ScalarExpr::coord(3).pow_u(2), &s).unwrap();
        assert!(v3.value);
        assert_eq!(g3.comps[3], ScalarExpr::int(2));
    }

    #[test]
    fn ii_law_holds() {
        let s = setting();
        let mc = model();
        // tangential factor: Rf vanishes on the locus
        let f1 = ConformalFactor::new(&ScalarExpr::coord(0)).unwrap();
        let chk = verify_ii_law(&mc, &f1, &s).unwrap();
        assert!(chk.zero.value);
        assert_eq!(chk.zero.evidence, Strength::Exact);
        // transverse factor: Rf nonzero on the locus
        let f2 = ConformalFactor::new(&ScalarExpr::coord(3)).unwrap();
        let chk2 = verify_ii_law(&mc, &f2, &s).unwrap();
        assert!(chk2.zero.value);
        // zero factor
        let f0 = ConformalFactor::new(&ScalarExpr::zero()).unwrap();
        assert!(verify_ii_law(&mc, &f0, &s).unwrap().zero.value);
    }

    #[test]
    fn ii_flatness_is_not_conformal() {
        // the model is II-flat; rescaling by f = x4 makes Rf|_Sigma = 1,
        // so the rescaled metric is not II-flat
        let s = setting();
        let mc = model();
        let ctx = s.numeric_ctx(4, 3);
        let factor = ConformalFactor::new(&ScalarExpr::coord(3)).unwrap();
        let bar = rescale(&mc, &factor);
        let frame = bar.build_adapted_frame(&s).unwrap();
        let forms = second_fundamental(&bar, frame.radical(), &frame, &s).unwrap();
        assert!(!is_ii_flat(&forms, &frame, &ctx).value);
        let (cv, _) = is_conformally_ii_flat(&forms, &frame, &ctx);
        assert!(cv.value, "conformal flatness is preserved");
    }

    #[test]
    fn iii_law_holds() {
        let s = setting();
        let mc = model();
        // f = x4^2 keeps both metrics II-flat (Rf|_Sigma = 0)
        let f = ConformalFactor::new(&ScalarExpr::coord(3).pow_u(2)).unwrap();
        let chk = verify_iii_law(&mc, &f, &s).unwrap();
        assert!(chk.zero.value);
        // zero factor
        let f0 = ConformalFactor::new(&ScalarExpr::zero()).unwrap();
        assert!(verify_iii_law(&mc, &f0, &s).unwrap().zero.value);
    }

    #[test]
    fn weyl_invariance() {
        let s = setting();
        let mc = model();
        for f in [
            ScalarExpr::zero(),
            ScalarExpr::coord(0).mul(&ScalarExpr::coord(1)),
            ScalarExpr::coord(3),
        ] {
            let factor = ConformalFactor::new(&f).unwrap();
            let inv = verify_weyl_invariance(&mc, &factor, &s).unwrap();
            assert!(inv.w_residual_zero.value);
            assert_eq!(inv.w_residual_zero.evidence, Strength::Exact);
            assert!(inv.w13_identical);
        }
    }

    #[test]
    fn flatten_ii_produces_flat_metric() {
        let s = setting();
        let ctx = s.numeric_ctx(4, 3);
        let mc = conf_flat_only();
        let factor = flatten_ii(&mc, &s).unwrap();
        // k = -1/2, so f = -x4/2
        assert_eq!(
            factor.f,
            ScalarExpr::coord(3).scale(&Rat::new((-1).into(), 2.into()))
        );
        let bar = rescale(&mc, &factor);
        let frame = bar.build_adapted_frame(&s).unwrap();
        let forms = second_fundamental(&bar, frame.radical(), &frame, &s).unwrap();
        assert!(is_ii_flat(&forms, &frame, &ctx).value);
        // already-flat input gives f = 0
        let id = flatten_ii(&model(), &s).unwrap();
        assert!(id.f.is_zero());
    }

    #[test]
    fn flatten_ii_rejects_non_proportional() {
        let s = setting();
        let chart = Chart::standard(4);
        let entries = vec![
            (0, 0, ScalarExpr::one().add(&ScalarExpr::coord(3))),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::one()),
            (3, 3, ScalarExpr::coord(3)),
        ];
        let mc = MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap();
        assert!(matches!(
            flatten_ii(&mc, &s),
            Err(ConformalError::NotConformallyIIFlat)
        ));
    }
}
