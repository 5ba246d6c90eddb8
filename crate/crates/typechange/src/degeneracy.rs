//! Degeneracy analysis: fundamental forms against the radical, flatness
//! classification, and the two extendibility deciders.
//!
//! The dual connection pairing `D_X Y (Z) = sum X^a Z^d (d_a(Y^b) g_bd +
//! Y^b G_{ab,d})` is defined across the locus, so the second fundamental
//! form `II(X,Y) = D_X Y (R)` restricts cleanly. The third form contracts
//! `II` against covariant derivatives assembled from the raised Christoffel
//! symbols; flatness of `II` guarantees the tau poles cancel, which the
//! restriction machinery checks rather than assumes.
//!
//! Extendibility is decided twice and the verdicts must agree: once from the
//! classification flags (transversality, II/III-flatness, conformal
//! III-flatness) and once by an order-two Laurent analysis of the frame
//! components of the Riemann, Ricci and Weyl tensors.

use crate::conformal;
use crate::curvature::{covariant_derivative_2tensor, CurvatureBundle, MetricData};
use crate::expr::{
    ExprError, NumericCtx, Rat, ScalarExpr, Strength, Tau, ZeroDecision,
};
use crate::geometry::{
    Frame, GeometryError, MetricChart, Setting, Tensor, Transversality, VectorField, Verdict,
};
use crate::report::{
    AnalysisReport, DiagEntry, Diagnostics, ExtendibilityTable, Flags, MethodPair,
};

#[derive(Debug, thiserror::Error)]
pub enum DegeneracyError {
    #[error("operation requires a transverse radical")]
    RadicalNotTransverse,
    #[error("third fundamental form requires a II-flat metric")]
    NotIIFlat,
    #[error("operation requires a III-flat metric")]
    NotIIIFlat,
    #[error("operation requires a conformally II-flat metric")]
    NotConformallyIIFlat,
    #[error("second fundamental form has a pole on the locus; radical mis-scaled")]
    PoleOnLocus,
    #[error("locus metric is degenerate; induced geometry undefined")]
    DegenerateLocusMetric,
    #[error("analysis precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Dual connection pairing `D_X Y (Z)`, polynomial in tau whenever the
/// arguments are.
pub fn dual_pairing(
    mc: &MetricChart,
    first_kind: &Tensor,
    x: &VectorField,
    y: &VectorField,
    z: &VectorField,
) -> ScalarExpr {
    let m = mc.dim();
    let mut acc = ScalarExpr::zero();
    for a in 0..m {
        if x.comps[a].is_zero() {
            continue;
        }
        for d in 0..m {
            if z.comps[d].is_zero() {
                continue;
            }
            let mut inner = ScalarExpr::zero();
            for b in 0..m {
                let dy = y.comps[b].differentiate(a);
                if !dy.is_zero() {
                    inner = inner.add(&dy.mul(mc.g(b, d)));
                }
                if !y.comps[b].is_zero() {
                    inner = inner.add(&y.comps[b].mul(first_kind.get(&[a, b, d])));
                }
            }
            if inner.is_zero() {
                continue;
            }
            acc = acc.add(&x.comps[a].mul(&z.comps[d]).mul(&inner));
        }
    }
    acc
}

/// Covariant derivative `nabla_X Y` from the raised Christoffel symbols;
/// carries tau poles of order at most one.
pub fn covariant_vector(
    mc: &MetricChart,
    second_kind: &Tensor,
    x: &VectorField,
    y: &VectorField,
) -> VectorField {
    let m = mc.dim();
    let mut comps = vec![ScalarExpr::zero(); m];
    for c in 0..m {
        let mut acc = ScalarExpr::zero();
        for a in 0..m {
            if x.comps[a].is_zero() {
                continue;
            }
            let mut inner = y.comps[c].differentiate(a);
            for b in 0..m {
                if y.comps[b].is_zero() {
                    continue;
                }
                let gamma = second_kind.get(&[a, b, c]);
                if gamma.is_zero() {
                    continue;
                }
                inner = inner.add(&y.comps[b].mul(gamma));
            }
            acc = acc.add(&x.comps[a].mul(&inner));
        }
        comps[c] = acc;
    }
    VectorField::new(comps)
}

/// Second fundamental form against a radical field, restricted to the locus,
/// in the given frame. Entry `[a][b]` is `II(E_a, E_b)`.
#[derive(Debug, Clone)]
pub struct FundamentalForms {
    pub ii: Vec<Vec<ScalarExpr>>,
    pub strength: Strength,
    /// `sum_l eps_l II(E_l, E_l)` over the non-radical frame fields.
    pub trace: ScalarExpr,
}

pub fn second_fundamental(
    mc: &MetricChart,
    radical: &VectorField,
    frame: &Frame,
    setting: &Setting,
) -> Result<FundamentalForms, DegeneracyError> {
    let m = mc.dim();
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let first = crate::curvature::dual_connection(&MetricData::from_chart(mc)?);
    let mut ii = vec![vec![ScalarExpr::zero(); m]; m];
    let mut strength = Strength::Exact;
    for a in 0..m {
        for b in a..m {
            let raw = dual_pairing(mc, &first, &frame.fields[a], &frame.fields[b], radical);
            let r = raw
                .restrict(&mc.tau, &setting.fns, Some(&ctx))
                .map_err(|_| DegeneracyError::PoleOnLocus)?;
            strength = strength.and(r.strength);
            ii[a][b] = r.expr.clone();
            ii[b][a] = r.expr;
        }
    }
    let mut trace = ScalarExpr::zero();
    for (l, &eps) in frame.eps.iter().enumerate() {
        trace = trace.add(&ii[l][l].scale(&Rat::from_integer(eps.into())));
    }
    Ok(FundamentalForms {
        ii,
        strength,
        trace,
    })
}

/// The canonically scaled radical: `R = (II^U(U,U))^(-1/3) U`, the unique
/// radical field with `II^R(R,R) = 1` when the radical is transverse.
pub fn canonical_radical(
    mc: &MetricChart,
    u: &VectorField,
    setting: &Setting,
) -> Result<VectorField, DegeneracyError> {
    let ctx = setting.numeric_ctx(mc.dim(), mc.tau.coord);
    let first = crate::curvature::dual_connection(&MetricData::from_chart(mc)?);
    let q = dual_pairing(mc, &first, u, u, u);
    let q_on_sigma = q.restrict(&mc.tau, &setting.fns, Some(&ctx))?;
    match ctx.decide_zero(&q_on_sigma.expr, true) {
        ZeroDecision::NonZero => {}
        _ => return Err(DegeneracyError::RadicalNotTransverse),
    }
    let scale = ScalarExpr::one().div(&q)?.cbrt()?;
    Ok(u.scale(&scale))
}

/// Proportionality test `T = k g_Sigma` in an orthonormal frame: off-diagonal
/// entries vanish and the sign-weighted diagonals agree. Returns the factor.
fn proportionality(
    entries: &[Vec<ScalarExpr>],
    eps: &[i8],
    n: usize,
    ctx: &NumericCtx,
) -> (Verdict, Option<ScalarExpr>) {
    let mut strength = Strength::Exact;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            match ctx.decide_zero(&entries[i][j], true) {
                ZeroDecision::ExactZero => {}
                ZeroDecision::ProbablyZero => strength = Strength::Numeric,
                ZeroDecision::NonZero => {
                    return (
                        Verdict {
                            value: false,
                            evidence: if entries[i][j].is_rational_fragment() {
                                Strength::Exact
                            } else {
                                Strength::Numeric
                            },
                        },
                        None,
                    )
                }
            }
        }
    }
    let k = entries[0][0].scale(&Rat::from_integer(eps[0].into()));
    for i in 1..n {
        let diff = entries[i][i]
            .scale(&Rat::from_integer(eps[i].into()))
            .sub(&k);
        match ctx.decide_zero(&diff, true) {
            ZeroDecision::ExactZero => {}
            ZeroDecision::ProbablyZero => strength = Strength::Numeric,
            ZeroDecision::NonZero => {
                return (
                    Verdict {
                        value: false,
                        evidence: if diff.is_rational_fragment() {
                            Strength::Exact
                        } else {
                            Strength::Numeric
                        },
                    },
                    None,
                )
            }
        }
    }
    (
        Verdict {
            value: true,
            evidence: strength,
        },
        Some(k),
    )
}

/// Zero test of a matrix block, with honest evidence strength.
fn block_is_zero(entries: &[Vec<ScalarExpr>], n: usize, ctx: &NumericCtx) -> Verdict {
    let mut strength = Strength::Exact;
    for i in 0..n {
        for j in 0..n {
            match ctx.decide_zero(&entries[i][j], true) {
                ZeroDecision::ExactZero => {}
                ZeroDecision::ProbablyZero => strength = Strength::Numeric,
                ZeroDecision::NonZero => {
                    return Verdict {
                        value: false,
                        evidence: if entries[i][j].is_rational_fragment() {
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
        evidence: strength,
    }
}

/// II-flatness: the restriction of `II` to locus-tangent frame fields
/// vanishes. For a transverse radical these are the first m-1 fields of a
/// completely adapted frame.
pub fn is_ii_flat(forms: &FundamentalForms, frame: &Frame, ctx: &NumericCtx) -> Verdict {
    let n = frame.fields.len() - 1;
    let v = block_is_zero(&forms.ii, n, ctx);
    Verdict {
        value: v.value,
        evidence: v.evidence.and(forms.strength),
    }
}

/// Conformal II-flatness: `II_Sigma = k g_Sigma`; returns the factor
/// `k = eps_1 II_11` when proportional.
pub fn is_conformally_ii_flat(
    forms: &FundamentalForms,
    frame: &Frame,
    ctx: &NumericCtx,
) -> (Verdict, Option<ScalarExpr>) {
    let n = frame.fields.len() - 1;
    let (v, k) = proportionality(&forms.ii, &frame.eps, n, ctx);
    (
        Verdict {
            value: v.value,
            evidence: v.evidence.and(forms.strength),
        },
        k,
    )
}

/// Third fundamental form `III(E_i, E_j) = II(nabla_{E_i} E_j, R)` restricted
/// to the locus; defined only for II-flat metrics, where the tau poles of
/// the covariant derivative cancel in the contraction (checked, not assumed).
pub fn third_fundamental(
    mc: &MetricChart,
    radical: &VectorField,
    frame: &Frame,
    setting: &Setting,
) -> Result<FundamentalForms, DegeneracyError> {
    let m = mc.dim();
    let n = m - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let md = MetricData::from_chart(mc)?;
    let conn = crate::curvature::christoffel(&md)?;
    let mut iii = vec![vec![ScalarExpr::zero(); n]; n];
    let mut strength = Strength::Exact;
    for i in 0..n {
        for j in i..n {
            let z = covariant_vector(mc, &conn.second, &frame.fields[i], &frame.fields[j]);
            let raw = dual_pairing(mc, &conn.first, &z, radical, radical);
            let r = raw
                .restrict(&mc.tau, &setting.fns, Some(&ctx))
                .map_err(|_| DegeneracyError::PoleOnLocus)?;
            strength = strength.and(r.strength);
            iii[i][j] = r.expr.clone();
            iii[j][i] = r.expr;
        }
    }
    let mut trace = ScalarExpr::zero();
    for l in 0..n {
        trace = trace.add(&iii[l][l].scale(&Rat::from_integer(frame.eps[l].into())));
    }
    Ok(FundamentalForms {
        ii: iii,
        strength,
        trace,
    })
}

pub fn is_iii_flat(forms: &FundamentalForms, frame: &Frame, ctx: &NumericCtx) -> Verdict {
    is_ii_flat(forms, frame, ctx)
}

pub fn is_conformally_iii_flat(
    forms: &FundamentalForms,
    frame: &Frame,
    ctx: &NumericCtx,
) -> (Verdict, Option<ScalarExpr>) {
    is_conformally_ii_flat(forms, frame, ctx)
}

/// One Laurent extendibility test: the component extends iff the order-two
/// coefficient vanishes on the locus and so does `a1 + a2/tau` there.
fn component_extends(
    e: &ScalarExpr,
    tau: &Tau,
    setting: &Setting,
    ctx: &NumericCtx,
) -> Result<(Verdict, Option<ScalarExpr>), DegeneracyError> {
    let l = e.laurent_split(tau, &setting.fns, Some(ctx))?;
    let mut strength = l.unit_check;
    let a2_r = l.a2.restrict(tau, &setting.fns, Some(ctx))?;
    strength = strength.and(a2_r.strength);
    match ctx.decide_zero(&a2_r.expr, true) {
        ZeroDecision::ExactZero => {}
        ZeroDecision::ProbablyZero => strength = Strength::Numeric,
        ZeroDecision::NonZero => {
            return Ok((
                Verdict {
                    value: false,
                    evidence: if a2_r.expr.is_rational_fragment() {
                        strength
                    } else {
                        Strength::Numeric
                    },
                },
                Some(a2_r.expr),
            ));
        }
    }
    let singular = if l.a2.is_zero() {
        l.a1.clone()
    } else {
        let div = l.a2.divide_exact(tau, &setting.fns, Some(ctx))?;
        strength = strength.and(div.strength);
        l.a1.add(&div.expr)
    };
    let s_r = singular.restrict(tau, &setting.fns, Some(ctx))?;
    strength = strength.and(s_r.strength);
    match ctx.decide_zero(&s_r.expr, true) {
        ZeroDecision::ExactZero => {}
        ZeroDecision::ProbablyZero => strength = Strength::Numeric,
        ZeroDecision::NonZero => {
            return Ok((
                Verdict {
                    value: false,
                    evidence: if s_r.expr.is_rational_fragment() {
                        strength
                    } else {
                        Strength::Numeric
                    },
                },
                Some(s_r.expr),
            ));
        }
    }
    Ok((
        Verdict {
            value: true,
            evidence: strength,
        },
        None,
    ))
}

/// Laurent verdict for a whole tensor in frame components. Exploits the
/// symmetry of the inputs only through the zero fast path; every component
/// is split and tested.
pub fn tensor_extends_by_laurent(
    t: &Tensor,
    names: &[String],
    tau: &Tau,
    setting: &Setting,
    ctx: &NumericCtx,
) -> Result<(Verdict, Option<String>), DegeneracyError> {
    let mut strength = Strength::Exact;
    let mut seen: std::collections::HashMap<ScalarExpr, (Verdict, Option<ScalarExpr>)> =
        std::collections::HashMap::new();
    for idx in t.indices() {
        let e = t.get(&idx);
        if e.is_zero() {
            continue;
        }
        let (v, witness_expr) = match seen.get(e) {
            Some(hit) => hit.clone(),
            None => {
                let r = component_extends(e, tau, setting, ctx)?;
                seen.insert(e.clone(), r.clone());
                r
            }
        };
        strength = strength.and(v.evidence);
        if !v.value {
            let pretty: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
            let witness = format!(
                "component ({}) restricts to {}",
                pretty.join(","),
                witness_expr
                    .map(|w| w.to_string_with(names))
                    .unwrap_or_default()
            );
            return Ok((
                Verdict {
                    value: false,
                    evidence: v.evidence,
                },
                Some(witness),
            ));
        }
    }
    Ok((
        Verdict {
            value: true,
            evidence: strength,
        },
        None,
    ))
}

/// Outcome of the full analysis pipeline, before serialization.
pub struct Analysis {
    pub report: AnalysisReport,
    pub frame: Option<Frame>,
    pub bundle: CurvatureBundle,
}

/// Induced geometry of the locus: metric, curvature stack, and either the
/// locus Weyl tensor (dim > 4) or the antisymmetrized covariant derivative
/// of the locus Schouten tensor (dim = 4).
pub struct SigmaGeometry {
    pub metric: Vec<Vec<ScalarExpr>>,
    pub bundle: CurvatureBundle,
    pub cotton: Option<Tensor>,
    pub w_sigma: Option<Tensor>,
}

pub fn sigma_geometry(mc: &MetricChart, setting: &Setting) -> Result<SigmaGeometry, DegeneracyError> {
    let m = mc.dim();
    let n = m - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let mut g = vec![vec![ScalarExpr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = mc
                .g(i, j)
                .restrict(&mc.tau, &setting.fns, Some(&ctx))?
                .expr;
        }
    }
    let md = MetricData::new(g.clone()).map_err(|_| DegeneracyError::DegenerateLocusMetric)?;
    let bundle = CurvatureBundle::compute(md)?;
    let (cotton, w_sigma) = if n == 3 {
        let dh = covariant_derivative_2tensor(&bundle.conn, &bundle.h);
        let mut c = Tensor::zeros(n, 3);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c.set(&[i, j, k], dh.get(&[i, j, k]).sub(dh.get(&[j, i, k])));
                }
            }
        }
        (Some(c), None)
    } else {
        (None, Some(bundle.w.clone()))
    };
    Ok(SigmaGeometry {
        metric: g,
        bundle,
        cotton,
        w_sigma,
    })
}

/// Residuals of the totally-geodesic property: the ambient curvature
/// restricted to locus-tangent coordinate slots against the locus curvature,
/// and the tangential/normal split of the ambient covariant derivative.
pub struct GaussCheck {
    pub curvature_residual_zero: Verdict,
    pub decomposition_residual_zero: Verdict,
}

pub fn gauss_check(mc: &MetricChart, setting: &Setting) -> Result<GaussCheck, DegeneracyError> {
    let m = mc.dim();
    let n = m - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let radical_dir = mc.radical_direction(setting)?;
    if radical_dir != m - 1 {
        return Err(DegeneracyError::RadicalNotTransverse);
    }
    let sg = sigma_geometry(mc, setting)?;
    let bundle = CurvatureBundle::of_chart(mc)?;
    // ambient K restricted to tangent slots equals the locus curvature
    let mut curv_ok = Verdict::exact(true);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let amb = bundle
                        .k
                        .get(&[i, j, k, l])
                        .restrict(&mc.tau, &setting.fns, Some(&ctx))?;
                    let diff = amb.expr.sub(sg.bundle.k.get(&[i, j, k, l]));
                    match ctx.decide_zero(&diff, true) {
                        ZeroDecision::ExactZero => {
                            curv_ok.evidence = curv_ok.evidence.and(amb.strength)
                        }
                        ZeroDecision::ProbablyZero => {
                            curv_ok.evidence = Strength::Numeric;
                        }
                        ZeroDecision::NonZero => {
                            return Ok(GaussCheck {
                                curvature_residual_zero: Verdict::exact(false),
                                decomposition_residual_zero: Verdict::exact(false),
                            })
                        }
                    }
                }
            }
        }
    }
    // nabla_X Y = nabla^Sigma_X Y + III(X,Y) R for tangent coordinate fields
    let md = MetricData::from_chart(mc)?;
    let conn = crate::curvature::christoffel(&md)?;
    let u = mc.radical_field(setting)?;
    let r_can = canonical_radical(mc, &u, setting)?;
    let frame = mc.build_adapted_frame(setting)?;
    let coord_frame = Frame {
        fields: (0..n)
            .map(|i| VectorField::coordinate(m, i))
            .chain(std::iter::once(frame.radical().clone()))
            .collect(),
        eps: vec![1; n],
        adapted: false,
        completely_adapted: false,
    };
    let iii = third_fundamental_against(mc, &r_can, &coord_frame, setting)?;
    let mut decomp_ok = Verdict::exact(true);
    for i in 0..n {
        for j in 0..n {
            let z = covariant_vector(
                mc,
                &conn.second,
                &VectorField::coordinate(m, i),
                &VectorField::coordinate(m, j),
            );
            for c in 0..m {
                let ambient = z.comps[c].restrict(&mc.tau, &setting.fns, Some(&ctx))?;
                let mut expected = if c < n {
                    sg.bundle.conn.second.get(&[i, j, c]).clone()
                } else {
                    ScalarExpr::zero()
                };
                let rc = r_can.comps[c].restrict(&mc.tau, &setting.fns, Some(&ctx))?;
                expected = expected.add(&iii.ii[i][j].mul(&rc.expr));
                let diff = ambient.expr.sub(&expected);
                match ctx.decide_zero(&diff, true) {
                    ZeroDecision::ExactZero => {
                        decomp_ok.evidence = decomp_ok.evidence.and(ambient.strength)
                    }
                    ZeroDecision::ProbablyZero => decomp_ok.evidence = Strength::Numeric,
                    ZeroDecision::NonZero => {
                        decomp_ok = Verdict::exact(false);
                    }
                }
            }
        }
    }
    Ok(GaussCheck {
        curvature_residual_zero: curv_ok,
        decomposition_residual_zero: decomp_ok,
    })
}

/// Third fundamental form against an explicit radical (not the frame one).
fn third_fundamental_against(
    mc: &MetricChart,
    radical: &VectorField,
    frame: &Frame,
    setting: &Setting,
) -> Result<FundamentalForms, DegeneracyError> {
    let m = mc.dim();
    let n = frame.fields.len() - 1;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let md = MetricData::from_chart(mc)?;
    let conn = crate::curvature::christoffel(&md)?;
    let mut iii = vec![vec![ScalarExpr::zero(); n]; n];
    let mut strength = Strength::Exact;
    for i in 0..n {
        for j in i..n {
            let z = covariant_vector(mc, &conn.second, &frame.fields[i], &frame.fields[j]);
            let raw = dual_pairing(mc, &conn.first, &z, radical, radical);
            let r = raw
                .restrict(&mc.tau, &setting.fns, Some(&ctx))
                .map_err(|_| DegeneracyError::PoleOnLocus)?;
            strength = strength.and(r.strength);
            iii[i][j] = r.expr.clone();
            iii[j][i] = r.expr;
        }
    }
    Ok(FundamentalForms {
        ii: iii,
        strength,
        trace: ScalarExpr::zero(),
    })
}

/// Locus values of the Schouten gap between the induced and ambient Schouten
/// tensors, expressed through extendible curvature combinations in a
/// completely adapted frame. Requires a III-flat metric.
pub fn schouten_gap(
    mc: &MetricChart,
    _frame: &Frame,
    k_frame: &Tensor,
    setting: &Setting,
) -> Result<Vec<Vec<ScalarExpr>>, DegeneracyError> {
    let m = mc.dim();
    let n = m - 1;
    let mi = m as i64;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let tau = &mc.tau;
    let fns = &setting.fns;
    let mm = m - 1; // radical frame slot
    // sum_k K_kmkm / tau and sum_{k,l} K_klkl, shared across entries
    let mut sum_kmkm_over_tau = ScalarExpr::zero();
    for k in 0..n {
        let q = k_frame
            .get(&[k, mm, k, mm])
            .divide_exact(tau, fns, Some(&ctx))
            .map_err(|_| DegeneracyError::NotIIIFlat)?;
        sum_kmkm_over_tau = sum_kmkm_over_tau.add(&q.expr);
    }
    let mut sum_klkl = ScalarExpr::zero();
    for k in 0..n {
        for l in 0..n {
            sum_klkl = sum_klkl.add(k_frame.get(&[k, l, k, l]));
        }
    }
    let third = ScalarExpr::rational(1, mi - 3);
    let inner_bracket = sum_kmkm_over_tau.sub(&third.mul(&sum_klkl));
    let mut gap = vec![vec![ScalarExpr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let kimjm = k_frame
                .get(&[i, mm, j, mm])
                .divide_exact(tau, fns, Some(&ctx))
                .map_err(|_| DegeneracyError::NotIIIFlat)?;
            let mut sum_iljl = ScalarExpr::zero();
            for l in 0..n {
                sum_iljl = sum_iljl.add(k_frame.get(&[i, l, j, l]));
            }
            let mut e = kimjm.expr.sub(&third.mul(&sum_iljl));
            if i == j {
                e = e.sub(&inner_bracket.scale(&Rat::new(1.into(), (mi - 1).into())));
            }
            let e = e.scale(&Rat::new((-1).into(), (mi - 2).into()));
            gap[i][j] = e.restrict(tau, fns, Some(&ctx))?.expr;
        }
    }
    Ok(gap)
}

/// The locus obstruction built from curvature components that controls
/// whether the Schouten block extends: for frame indices i, j, k below the
/// radical with k distinct from i and j,
/// `B_ijk = (eps_k K_imjm + d_ij eps_i K_kmkm
///           - (2 eps_k d_ij eps_i/(m-1)) sum_l eps_l K_lmlm) / (m-2)`.
/// Requires a II-flat metric so that the frame curvature restricts.
pub fn b_obstruction(
    mc: &MetricChart,
    frame: &Frame,
    k_frame: &Tensor,
    setting: &Setting,
) -> Result<Vec<ScalarExpr>, DegeneracyError> {
    let m = mc.dim();
    let n = m - 1;
    let mi = m as i64;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let mm = m - 1;
    let restrict =
        |e: &ScalarExpr| -> Result<ScalarExpr, DegeneracyError> {
            Ok(e.restrict(&mc.tau, &setting.fns, Some(&ctx))
                .map_err(|_| DegeneracyError::NotIIFlat)?
                .expr)
        };
    let mut sum_lmlm = ScalarExpr::zero();
    for l in 0..n {
        let v = restrict(k_frame.get(&[l, mm, l, mm]))?;
        sum_lmlm = sum_lmlm.add(&v.scale(&Rat::from_integer(frame.eps[l].into())));
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let eps_k = Rat::from_integer(frame.eps[k].into());
                let eps_i = Rat::from_integer(frame.eps[i].into());
                let kimjm = restrict(k_frame.get(&[i, mm, j, mm]))?;
                let mut e = kimjm.scale(&eps_k);
                if i == j {
                    let kkmkm = restrict(k_frame.get(&[k, mm, k, mm]))?;
                    e = e.add(&kkmkm.scale(&eps_i));
                    let coeff = (&eps_k * &eps_i) * Rat::new(2.into(), (mi - 1).into());
                    e = e.sub(&sum_lmlm.scale(&coeff));
                }
                out.push(e.scale(&Rat::new(1.into(), (mi - 2).into())));
            }
        }
    }
    Ok(out)
}

fn diag_entry(
    values: &[ScalarExpr],
    names: &[String],
    ctx: &NumericCtx,
    strength: Strength,
) -> DiagEntry {
    let mut max = 0.0f64;
    let mut worst: Option<&ScalarExpr> = None;
    let mut any = false;
    for v in values {
        if v.is_zero() {
            continue;
        }
        any = true;
        let m = ctx.max_abs_on_sigma(v);
        if !m.is_nan() && (worst.is_none() || m > max) {
            max = m;
            worst = Some(v);
        }
    }
    let expr = if !any {
        "0".to_string()
    } else {
        worst
            .map(|w| w.to_string_with(names))
            .unwrap_or_else(|| "0".to_string())
    };
    DiagEntry {
        expr,
        max_abs_on_samples: crate::report::format_f64(if any { max } else { 0.0 }),
        evidence: if values.iter().all(|v| v.is_rational_fragment() || v.is_zero()) {
            strength
        } else {
            Strength::Numeric
        },
    }
}

/// Full pipeline: classification flags, both extendibility deciders, and
/// the locus diagnostics.
pub fn analyze(mc: &MetricChart, setting: &Setting) -> Result<Analysis, DegeneracyError> {
    let m = mc.dim();
    let names = &mc.chart.coords;
    let ctx = setting.numeric_ctx(m, mc.tau.coord);
    let mut notes: Vec<String> = Vec::new();

    let transverse = mc
        .is_transverse_type_changing(setting)
        .map_err(|e| DegeneracyError::Precondition(e.to_string()))?;
    if !transverse.value {
        return Err(DegeneracyError::Precondition(
            "metric is not transverse type-changing on the declared locus".into(),
        ));
    }
    let radical = mc.radical_field(setting)?;
    let (transversality, radical_strength) = mc.radical_transversality(&radical, setting)?;
    let radical_transverse = matches!(transversality, Transversality::Transverse);

    if let Transversality::NonUniform { .. } = transversality {
        notes.push(
            "radical transversality is non-uniform along the locus; extendibility not asserted"
                .into(),
        );
        let flags = Flags {
            transverse_type_changing: transverse,
            radical_transversality: transversality,
            radical_evidence: radical_strength,
            ii_flat: Verdict::numeric(false),
            iii_flat: Verdict::numeric(false),
            conf_ii_flat: Verdict::numeric(false),
            conf_iii_flat: Verdict::numeric(false),
        };
        let bundle = CurvatureBundle::of_chart(mc)?;
        return Ok(Analysis {
            report: AnalysisReport {
                engine_version: env!("CARGO_PKG_VERSION").to_string(),
                input_hash: None,
                seed: setting.seed,
                dim: m,
                coords: names.clone(),
                flags,
                extendibility: None,
                diagnostics: Diagnostics::default(),
                notes,
            },
            frame: None,
            bundle,
        });
    }

    // frame: adapted for transverse radicals, obstruction-mixed for tangent
    let frame = if radical_transverse {
        mc.build_adapted_frame(setting)?
    } else {
        mc.obstruction_frame(setting)?
    };

    let forms = second_fundamental(mc, frame.radical(), &frame, setting)?;
    let ii_flat = is_ii_flat(&forms, &frame, &ctx);
    let (conf_ii_flat, conf_ii_k) = if radical_transverse {
        is_conformally_ii_flat(&forms, &frame, &ctx)
    } else {
        (Verdict::exact(false), None)
    };

    let iii_flat;
    let mut conf_iii_flat = Verdict::exact(false);
    if radical_transverse && ii_flat.value {
        let f3 = third_fundamental(mc, frame.radical(), &frame, setting)?;
        let v = is_iii_flat(&f3, &frame, &ctx);
        let (cv, _) = is_conformally_iii_flat(&f3, &frame, &ctx);
        iii_flat = Verdict {
            value: v.value,
            evidence: v.evidence.and(ii_flat.evidence),
        };
        conf_iii_flat = Verdict {
            value: conf_ii_flat.value && cv.value,
            evidence: cv.evidence.and(conf_ii_flat.evidence),
        };
    } else {
        // the third form only exists for II-flat metrics
        iii_flat = Verdict {
            value: false,
            evidence: ii_flat.evidence,
        };
        if !ii_flat.value && radical_transverse && conf_ii_flat.value {
            // decide conformal III-flatness on the II-flattened representative
            match conformal::flatten_ii_with_factor(mc, conf_ii_k.as_ref().unwrap(), setting) {
                Ok(factor) => {
                    let rescaled = conformal::rescale(mc, &factor);
                    let rframe = rescaled.build_adapted_frame(setting)?;
                    let rforms =
                        second_fundamental(&rescaled, rframe.radical(), &rframe, setting)?;
                    let r_ii = is_ii_flat(&rforms, &rframe, &ctx);
                    if r_ii.value {
                        let r3 = third_fundamental(&rescaled, rframe.radical(), &rframe, setting)?;
                        let (cv, _) = is_conformally_iii_flat(&r3, &rframe, &ctx);
                        conf_iii_flat = Verdict {
                            value: cv.value,
                            evidence: cv.evidence.and(r_ii.evidence).and(conf_ii_flat.evidence),
                        };
                        notes.push(
                            "conformal III-flatness decided on the II-flattened representative"
                                .into(),
                        );
                    } else {
                        notes.push("II-flattening factor failed re-analysis".into());
                    }
                }
                Err(e) => {
                    notes.push(format!(
                        "conformal III-flatness undecided: flattening unavailable ({e})"
                    ));
                }
            }
        }
    }

    let bundle = CurvatureBundle::of_chart(mc)?;

    // criteria decider
    let k_crit = Verdict {
        value: radical_transverse && ii_flat.value,
        evidence: radical_strength.and(ii_flat.evidence),
    };
    let ric_crit = Verdict {
        value: radical_transverse && iii_flat.value,
        evidence: radical_strength.and(iii_flat.evidence),
    };
    let w_crit = Verdict {
        value: radical_transverse && conf_iii_flat.value,
        evidence: radical_strength.and(conf_iii_flat.evidence),
    };

    // Laurent decider on frame components
    let k_frame = bundle.k.in_frame(&frame);
    let ric_frame = bundle.ric.in_frame(&frame);
    let (k_lau, k_wit) = tensor_extends_by_laurent(&k_frame, names, &mc.tau, setting, &ctx)?;
    let (ric_lau, ric_wit) = tensor_extends_by_laurent(&ric_frame, names, &mc.tau, setting, &ctx)?;
    let (w_lau, w_wit, w_frame) = if m >= 4 {
        let wf = bundle.w.in_frame(&frame);
        let (v, w) = tensor_extends_by_laurent(&wf, names, &mc.tau, setting, &ctx)?;
        (v, w, Some(wf))
    } else {
        (Verdict::exact(true), None, None)
    };

    let extendibility = ExtendibilityTable {
        riemann: MethodPair::new(k_crit, k_lau, k_wit),
        ricci: MethodPair::new(ric_crit, ric_lau, ric_wit),
        weyl: MethodPair::new(w_crit, w_lau, w_wit),
    };

    // diagnostics
    let mut diagnostics = Diagnostics::default();
    if let Some(wf) = &w_frame {
        if !radical_transverse {
            // order-two witness in the mixed-frame (1,3,2,3) component family
            let e = wf.get(&[0, 2, 1, 2]);
            let l = e.laurent_split(&mc.tau, &setting.fns, Some(&ctx))?;
            let a2 = l.a2.restrict(&mc.tau, &setting.fns, Some(&ctx))?;
            diagnostics.weyl_order2_witness =
                Some(diag_entry(&[a2.expr], names, &ctx, a2.strength));
        }
    }
    if radical_transverse && ii_flat.value {
        let b = b_obstruction(mc, &frame, &k_frame, setting)?;
        diagnostics.b_residual_max = Some(diag_entry(&b, names, &ctx, ii_flat.evidence));
    }
    if radical_transverse && iii_flat.value {
        let gap = schouten_gap(mc, &frame, &k_frame, setting)?;
        let flat: Vec<ScalarExpr> = gap.into_iter().flatten().collect();
        diagnostics.schouten_gap_max = Some(diag_entry(&flat, names, &ctx, iii_flat.evidence));
    }
    if radical_transverse {
        if let Ok(sg) = sigma_geometry(mc, setting) {
            if let Some(c) = &sg.cotton {
                diagnostics.cotton_residual_max = Some(diag_entry(
                    c.components(),
                    names,
                    &ctx,
                    Strength::Exact,
                ));
            }
        }
    }

    let flags = Flags {
        transverse_type_changing: transverse,
        radical_transversality: transversality,
        radical_evidence: radical_strength,
        ii_flat,
        iii_flat,
        conf_ii_flat,
        conf_iii_flat,
    };
    Ok(Analysis {
        report: AnalysisReport {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            input_hash: None,
            seed: setting.seed,
            dim: m,
            coords: names.clone(),
            flags,
            extendibility: Some(extendibility),
            diagnostics,
            notes,
        },
        frame: Some(frame),
        bundle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Chart;

    fn model(m: usize) -> MetricChart {
        let chart = Chart::standard(m);
        let tau = Tau::coordinate(m - 1);
        let mut entries = Vec::new();
        for i in 0..m - 1 {
            entries.push((i, i, ScalarExpr::one()));
        }
        entries.push((m - 1, m - 1, ScalarExpr::coord(m - 1)));
        MetricChart::from_upper(chart, &entries, tau).unwrap()
    }

    fn tangent_model() -> MetricChart {
        let chart = Chart::standard(4);
        let entries = vec![
            (0, 0, ScalarExpr::one()),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::coord(3)),
            (3, 3, ScalarExpr::one()),
        ];
        MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap()
    }

    #[test]
    fn model_second_fundamental() {
        let setting = Setting::plain(4);
        let mc = model(4);
        let frame = mc.build_adapted_frame(&setting).unwrap();
        let forms = second_fundamental(&mc, frame.radical(), &frame, &setting).unwrap();
        // II(E_m, E_m) = 1/2, everything else zero
        for a in 0..4 {
            for b in 0..4 {
                if (a, b) == (3, 3) {
                    assert_eq!(forms.ii[a][b], ScalarExpr::rational(1, 2));
                } else {
                    assert!(forms.ii[a][b].is_zero());
                }
            }
        }
        let ctx = setting.numeric_ctx(4, 3);
        assert!(is_ii_flat(&forms, &frame, &ctx).value);
    }

    #[test]
    fn tangent_model_radical_self_form_vanishes() {
        let setting = Setting::plain(4);
        let mc = tangent_model();
        let frame = mc.obstruction_frame(&setting).unwrap();
        let forms = second_fundamental(&mc, frame.radical(), &frame, &setting).unwrap();
        assert!(forms.ii[3][3].is_zero());
    }

    #[test]
    fn canonical_radical_normalization() {
        let setting = Setting::plain(4);
        let mc = model(4);
        // II(d4,d4) = 1/2, so the canonical radical is 2^(1/3) d4
        let u = VectorField::coordinate(4, 3);
        let r = canonical_radical(&mc, &u, &setting).unwrap();
        let expected = ScalarExpr::int(2).cbrt().unwrap();
        assert_eq!(r.comps[3], expected);
        // II^R(R,R) = 1 exactly
        let first =
            crate::curvature::dual_connection(&MetricData::from_chart(&mc).unwrap());
        let q = dual_pairing(&mc, &first, &r, &r, &r);
        assert!(q.is_one());
        // idempotence: scaled input gives the same output
        let r2 = canonical_radical(&mc, &r, &setting).unwrap();
        assert_eq!(r2, r);
        // constant rescalings are absorbed exactly
        let r3 = canonical_radical(&mc, &u.scale(&ScalarExpr::int(5)), &setting).unwrap();
        assert_eq!(r3, r);
        let r4 =
            canonical_radical(&mc, &u.scale(&ScalarExpr::rational(3, 7)), &setting).unwrap();
        assert_eq!(r4, r);
    }

    #[test]
    fn canonical_radical_rejects_tangent() {
        let setting = Setting::plain(4);
        let mc = tangent_model();
        let u = VectorField::coordinate(4, 2);
        assert!(matches!(
            canonical_radical(&mc, &u, &setting),
            Err(DegeneracyError::RadicalNotTransverse)
        ));
    }

    #[test]
    fn model_is_fully_flat_and_extendible() {
        let setting = Setting::plain(4);
        let mc = model(4);
        let a = analyze(&mc, &setting).unwrap();
        let r = &a.report;
        assert!(r.flags.transverse_type_changing.value);
        assert_eq!(r.flags.radical_transversality, Transversality::Transverse);
        assert!(r.flags.ii_flat.value);
        assert!(r.flags.iii_flat.value);
        assert!(r.flags.conf_ii_flat.value);
        assert!(r.flags.conf_iii_flat.value);
        let e = r.extendibility.as_ref().unwrap();
        assert!(e.riemann.criteria.value && e.riemann.laurent.value);
        assert!(e.ricci.criteria.value && e.ricci.laurent.value);
        assert!(e.weyl.criteria.value && e.weyl.laurent.value);
        assert!(e.all_agree());
        assert_eq!(e.riemann.criteria.evidence, Strength::Exact);
    }

    #[test]
    fn tangent_model_blocks_everything() {
        let setting = Setting::plain(4);
        let mc = tangent_model();
        let a = analyze(&mc, &setting).unwrap();
        let r = &a.report;
        assert_eq!(r.flags.radical_transversality, Transversality::Tangent);
        let e = r.extendibility.as_ref().unwrap();
        assert!(!e.riemann.criteria.value && !e.riemann.laurent.value);
        assert!(!e.ricci.criteria.value && !e.ricci.laurent.value);
        assert!(!e.weyl.criteria.value && !e.weyl.laurent.value);
        assert!(e.all_agree());
        // the order-two witness in the mixed frame is nonzero
        let witness = r.diagnostics.weyl_order2_witness.as_ref().unwrap();
        assert_ne!(witness.expr, "0");
        let max: f64 = witness.max_abs_on_samples.parse().unwrap();
        assert!(max > 1e-6, "witness magnitude {max}");
    }

    #[test]
    fn perturbed_metric_is_not_flat() {
        // g11 = 1 + x4: II(E1,E1) = -1/2, not conformally II-flat
        let setting = Setting::plain(4);
        let chart = Chart::standard(4);
        let entries = vec![
            (0, 0, ScalarExpr::one().add(&ScalarExpr::coord(3))),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::one()),
            (3, 3, ScalarExpr::coord(3)),
        ];
        let mc = MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap();
        let a = analyze(&mc, &setting).unwrap();
        let r = &a.report;
        assert!(!r.flags.ii_flat.value);
        assert!(!r.flags.conf_ii_flat.value);
        let e = r.extendibility.as_ref().unwrap();
        assert!(!e.riemann.criteria.value);
        assert!(!e.ricci.criteria.value);
        assert!(!e.weyl.criteria.value);
        assert!(e.all_agree(), "laurent must also reject: {e:?}");
    }

    #[test]
    fn conformally_flat_only_metric() {
        // g = (1+x4)(dx1^2+dx2^2+dx3^2) + x4 dx4^2: II = -(1/2) g_Sigma
        let setting = Setting::plain(4);
        let chart = Chart::standard(4);
        let c = ScalarExpr::one().add(&ScalarExpr::coord(3));
        let entries = vec![
            (0, 0, c.clone()),
            (1, 1, c.clone()),
            (2, 2, c),
            (3, 3, ScalarExpr::coord(3)),
        ];
        let mc = MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap();
        let a = analyze(&mc, &setting).unwrap();
        let r = &a.report;
        assert!(!r.flags.ii_flat.value);
        assert!(r.flags.conf_ii_flat.value);
        let e = r.extendibility.as_ref().unwrap();
        assert!(!e.riemann.criteria.value);
        assert!(e.all_agree(), "{e:?}");
    }

    #[test]
    fn gauss_check_on_model() {
        let setting = Setting::plain(4);
        let g = gauss_check(&model(4), &setting).unwrap();
        assert!(g.curvature_residual_zero.value);
        assert!(g.decomposition_residual_zero.value);
    }

    #[test]
    fn sigma_geometry_of_model_is_flat() {
        let setting = Setting::plain(4);
        let sg = sigma_geometry(&model(4), &setting).unwrap();
        assert!(sg.bundle.k.is_zero());
        let cotton = sg.cotton.unwrap();
        assert!(cotton.is_zero());
        assert!(sg.w_sigma.is_none());
    }

    #[test]
    fn sigma_geometry_m5_reports_weyl() {
        let setting = Setting::plain(5);
        let sg = sigma_geometry(&model(5), &setting).unwrap();
        assert!(sg.cotton.is_none());
        assert!(sg.w_sigma.unwrap().is_zero());
    }

    #[test]
    fn diagnostics_of_model_vanish() {
        let setting = Setting::plain(4);
        let a = analyze(&model(4), &setting).unwrap();
        let d = &a.report.diagnostics;
        assert_eq!(d.b_residual_max.as_ref().unwrap().expr, "0");
        assert_eq!(d.schouten_gap_max.as_ref().unwrap().expr, "0");
        assert_eq!(d.cotton_residual_max.as_ref().unwrap().expr, "0");
    }

    #[test]
    fn tangency_duality_against_second_form() {
        // X tangent to the locus iff II(X, R) vanishes there
        let setting = Setting::plain(4);
        for mc in [model(4), tangent_model()] {
            let frame = if mc.radical_direction(&setting).unwrap() == 3 {
                mc.build_adapted_frame(&setting).unwrap()
            } else {
                mc.obstruction_frame(&setting).unwrap()
            };
            let first =
                crate::curvature::dual_connection(&MetricData::from_chart(&mc).unwrap());
            let ctx = setting.numeric_ctx(4, 3);
            let radical = frame.radical();
            let mut fields: Vec<VectorField> = (0..4)
                .map(|i| VectorField::coordinate(4, i))
                .collect();
            fields.push(
                VectorField::coordinate(4, 0)
                    .scale(&ScalarExpr::coord(3))
                    .add(&VectorField::coordinate(4, 1)),
            );
            fields.push(VectorField::coordinate(4, 0).add(&VectorField::coordinate(4, 3)));
            for x in &fields {
                let tangent = mc.tangent_to_sigma(x, &setting).unwrap().value;
                let pairing = dual_pairing(&mc, &first, x, radical, radical);
                let restricted = pairing
                    .restrict(&mc.tau, &setting.fns, Some(&ctx))
                    .unwrap();
                let vanishes =
                    ctx.decide_zero(&restricted.expr, true) != ZeroDecision::NonZero;
                assert_eq!(tangent, vanishes);
            }
        }
    }

    #[test]
    fn flags_independent_of_radical_rescaling() {
        let setting = Setting::plain(4);
        let mc = model(4);
        let frame = mc.build_adapted_frame(&setting).unwrap();
        let ctx = setting.numeric_ctx(4, 3);
        let units = [
            ScalarExpr::int(2),
            ScalarExpr::rational(5, 7),
            ScalarExpr::one().add(&ScalarExpr::coord(0).pow_u(2)),
        ];
        for u in units {
            let r = frame.radical().scale(&u);
            let forms = second_fundamental(&mc, &r, &frame, &setting).unwrap();
            assert!(is_ii_flat(&forms, &frame, &ctx).value);
            let (cv, _) = is_conformally_ii_flat(&forms, &frame, &ctx);
            assert!(cv.value);
        }
    }
}
