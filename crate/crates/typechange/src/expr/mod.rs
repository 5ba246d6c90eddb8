//! Exact symbolic scalar expressions on a chart.
//!
//! A [`ScalarExpr`] is a canonical ratio of multivariate polynomials over
//! arbitrary-precision rationals. The polynomial variables are chart
//! coordinates plus opaque atoms (function symbols with derivative chains,
//! square/cube roots, exponentials). Canonical form means: denominator free
//! of root atoms, numerator/denominator coprime, denominator monic in the
//! graded-lex leading coefficient, root exponents reduced below their degree.
//! Construction maintains the form, so structural equality decides equality
//! of the rational fragment exactly, and `canonicalize` is the identity on
//! every value produced by this module.
//!
//! The degeneracy function τ is always `unit * x_last` for a declared
//! nonvanishing unit, which makes restriction to the locus, exact division
//! by τ, and the order-two Laurent split decidable. Restriction applies
//! L'Hôpital steps to resolve smooth quotients like `f'(t)/t` using declared
//! derivative values at the locus.

mod eval;
mod gen;
mod parse;
mod poly;

pub use eval::{NumericCtx, Valuations, ZeroDecision};
pub use gen::{Gen, GenKind};
pub use parse::{parse_expr, ParseError};
pub use poly::{rat_nth_root, rat_power_free, Monomial, Poly, Rat};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

/// How a verdict was established.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    /// Decided by canonical-form algebra alone.
    Exact,
    /// Required sampling with the declared numeric models.
    Numeric,
}

impl Strength {
    pub fn and(self, other: Strength) -> Strength {
        self.max(other)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExprError {
    #[error("division by an expression that is identically zero")]
    DivisionByZero,
    #[error("expression has a pole on the degeneracy locus: {0}")]
    PoleOnSigma(String),
    #[error("pole order {0} in the degeneracy function exceeds 2")]
    PoleOrderTooHigh(u32),
    #[error("denominator is not a unit near the degeneracy locus")]
    DenominatorNotUnit,
    #[error("expression does not vanish on the locus, exact division by tau impossible")]
    NotDivisible,
    #[error("root rationalization degenerated (radicand is a perfect power in disguise)")]
    DegenerateRadical,
    #[error("restriction exceeded the pole-order bound")]
    PoleBound,
    #[error("integer exponent too large")]
    ExponentOverflow,
}

/// Declared exact values `f(0), f'(0), f''(0), ...` for opaque symbols.
#[derive(Debug, Clone, Default)]
pub struct FunctionTable {
    jets: BTreeMap<String, Vec<Rat>>,
}

impl FunctionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str, values: Vec<Rat>) {
        self.jets.insert(name.to_string(), values);
    }

    pub fn jet_value(&self, name: &str, order: u32) -> Option<&Rat> {
        self.jets.get(name).and_then(|v| v.get(order as usize))
    }

    pub fn jets(&self) -> &BTreeMap<String, Vec<Rat>> {
        &self.jets
    }
}

/// The degeneracy function: `tau = unit * x_coord`, `unit` nonvanishing near
/// the locus. By convention `coord` is the last chart coordinate.
#[derive(Debug, Clone)]
pub struct Tau {
    pub coord: usize,
    pub unit: ScalarExpr,
}

impl Tau {
    pub fn coordinate(coord: usize) -> Tau {
        Tau {
            coord,
            unit: ScalarExpr::one(),
        }
    }

    pub fn with_unit(coord: usize, unit: ScalarExpr) -> Tau {
        Tau { coord, unit }
    }

    pub fn expr(&self) -> ScalarExpr {
        ScalarExpr::coord(self.coord).mul(&self.unit)
    }
}

/// Result of restriction to the degeneracy locus.
#[derive(Debug, Clone)]
pub struct Restricted {
    pub expr: ScalarExpr,
    pub strength: Strength,
}

/// Order-two Laurent decomposition `e = a0 + a1/tau + a2/tau^2` with
/// coefficients free of negative tau powers.
#[derive(Debug, Clone)]
pub struct LaurentForm {
    pub a0: ScalarExpr,
    pub a1: ScalarExpr,
    pub a2: ScalarExpr,
    pub pole_order: u32,
    pub unit_check: Strength,
}

impl LaurentForm {
    pub fn reassemble(&self, tau: &Tau) -> ScalarExpr {
        let t = tau.expr();
        let mut acc = self.a0.clone();
        if !self.a1.is_zero() {
            acc = acc.add(&self.a1.div(&t).expect("tau is nonzero"));
        }
        if !self.a2.is_zero() {
            acc = acc.add(&self.a2.div(&t.mul(&t)).expect("tau is nonzero"));
        }
        acc
    }
}

/// Canonical rational expression. See the module docs for the invariants.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ScalarExpr {
    num: Poly,
    den: Poly,
}

impl ScalarExpr {
    fn make(num: Poly, den: Poly) -> Result<ScalarExpr, ExprError> {
        if den.is_zero() {
            return Err(ExprError::DivisionByZero);
        }
        if num.is_zero() {
            return Ok(ScalarExpr {
                num: Poly::zero(),
                den: Poly::one(),
            });
        }
        let (mut num, mut den) = (num, den);
        // clear root atoms out of the denominator
        loop {
            let root = den
                .all_gens()
                .into_iter()
                .filter(|g| matches!(g.kind(), GenKind::Root { .. }))
                .max();
            let Some(r) = root else { break };
            let GenKind::Root { degree, radicand } = r.kind().clone() else {
                unreachable!()
            };
            let parts = den.coeffs_in(&r);
            match degree {
                2 => {
                    let d0 = parts.first().cloned().unwrap_or_else(Poly::zero);
                    let d1 = parts.get(1).cloned().unwrap_or_else(Poly::zero);
                    // multiply by the conjugate d0 - r*d1
                    let conj = d0.sub(&Poly::var(r.clone()).mul(&d1));
                    num = num.mul(&conj);
                    den = d0.mul(&d0).sub(&radicand.mul(&d1).mul(&d1));
                }
                3 => {
                    let d0 = parts.first().cloned().unwrap_or_else(Poly::zero);
                    let d1 = parts.get(1).cloned().unwrap_or_else(Poly::zero);
                    let d2 = parts.get(2).cloned().unwrap_or_else(Poly::zero);
                    let u = &radicand;
                    let rv = Poly::var(r.clone());
                    // cofactor of d0 + r d1 + r^2 d2 with norm
                    // d0^3 + u d1^3 + u^2 d2^3 - 3 u d0 d1 d2
                    let c0 = d0.mul(&d0).sub(&u.mul(&d1).mul(&d2));
                    let c1 = u.mul(&d2).mul(&d2).sub(&d0.mul(&d1));
                    let c2 = d1.mul(&d1).sub(&d0.mul(&d2));
                    let conj = c0.add(&rv.mul(&c1)).add(&rv.mul(&rv).mul(&c2));
                    num = num.mul(&conj);
                    den = d0
                        .pow(3)
                        .add(&u.mul(&d1.pow(3)))
                        .add(&u.pow(2).mul(&d2.pow(3)))
                        .sub(&u.mul(&d0).mul(&d1).mul(&d2).scale(&Rat::from_integer(3.into())));
                }
                _ => unreachable!("root degrees are 2 or 3"),
            }
            if den.is_zero() {
                return Err(ExprError::DegenerateRadical);
            }
        }
        let g = Poly::gcd(&num, &den);
        if !g.is_one() {
            num = num.try_div_exact(&g).expect("gcd divides");
            den = den.try_div_exact(&g).expect("gcd divides");
        }
        let lc = den.leading().expect("den nonzero").1.clone();
        if !lc.is_one() {
            let inv = Rat::one() / lc;
            num = num.scale(&inv);
            den = den.scale(&inv);
        }
        Ok(ScalarExpr { num, den })
    }

    pub fn zero() -> ScalarExpr {
        ScalarExpr {
            num: Poly::zero(),
            den: Poly::one(),
        }
    }

    pub fn one() -> ScalarExpr {
        ScalarExpr {
            num: Poly::one(),
            den: Poly::one(),
        }
    }

    pub fn int(n: i64) -> ScalarExpr {
        ScalarExpr::from_rat(Rat::from_integer(n.into()))
    }

    pub fn rational(num: i64, den: i64) -> ScalarExpr {
        assert!(den != 0);
        ScalarExpr::from_rat(Rat::new(num.into(), den.into()))
    }

    pub fn from_rat(c: Rat) -> ScalarExpr {
        ScalarExpr {
            num: Poly::constant(c),
            den: Poly::one(),
        }
    }

    pub fn coord(idx: usize) -> ScalarExpr {
        ScalarExpr {
            num: Poly::var(Gen::coord(idx)),
            den: Poly::one(),
        }
    }

    /// `order`-th derivative of the opaque symbol `name` applied to the
    /// coordinate `arg`.
    pub fn func(name: &str, order: u32, arg: usize) -> ScalarExpr {
        ScalarExpr {
            num: Poly::var(Gen::func(name, order, arg)),
            den: Poly::one(),
        }
    }

    pub fn func_val(name: &str, order: u32) -> ScalarExpr {
        ScalarExpr {
            num: Poly::var(Gen::func_val(name, order)),
            den: Poly::one(),
        }
    }

    pub fn from_poly(p: Poly) -> ScalarExpr {
        ScalarExpr {
            num: p,
            den: Poly::one(),
        }
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    /// Exact zero test. Complete for the rational fragment; for expressions
    /// with atoms a `false` means "not identically zero as a polynomial in
    /// independent atoms".
    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num.is_one() && self.den.is_one()
    }

    pub fn as_rational(&self) -> Option<Rat> {
        match (self.num.as_constant(), self.den.as_constant()) {
            (Some(n), Some(d)) => Some(n / d),
            _ => None,
        }
    }

    /// True if only coordinate atoms occur (no functions, roots, exponentials).
    pub fn is_rational_fragment(&self) -> bool {
        let ok = |p: &Poly| {
            p.terms().iter().all(|(m, _)| {
                m.slots()
                    .iter()
                    .all(|(g, _)| matches!(g.kind(), GenKind::Coord(_)))
            })
        };
        ok(&self.num) && ok(&self.den)
    }

    pub fn all_gens(&self) -> Vec<Gen> {
        let mut v = self.num.all_gens();
        for g in self.den.all_gens() {
            if !v.contains(&g) {
                v.push(g);
            }
        }
        v.sort();
        v
    }

    /// Identity on canonical values; exposed so callers can state the
    /// idempotence contract explicitly.
    pub fn canonicalize(&self) -> ScalarExpr {
        self.clone()
    }

    pub fn add(&self, other: &ScalarExpr) -> ScalarExpr {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let g = Poly::gcd(&self.den, &other.den);
        let (db, dd) = if g.is_one() {
            (self.den.clone(), other.den.clone())
        } else {
            (
                self.den.try_div_exact(&g).expect("gcd divides"),
                other.den.try_div_exact(&g).expect("gcd divides"),
            )
        };
        let num = self.num.mul(&dd).add(&other.num.mul(&db));
        let den = self.den.mul(&dd);
        ScalarExpr::make(num, den).expect("den nonzero")
    }

    pub fn sub(&self, other: &ScalarExpr) -> ScalarExpr {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> ScalarExpr {
        ScalarExpr {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }

    pub fn mul(&self, other: &ScalarExpr) -> ScalarExpr {
        if self.is_zero() || other.is_zero() {
            return ScalarExpr::zero();
        }
        let g1 = Poly::gcd(&self.num, &other.den);
        let g2 = Poly::gcd(&other.num, &self.den);
        let n1 = self.num.try_div_exact(&g1).expect("gcd divides");
        let d2 = other.den.try_div_exact(&g1).expect("gcd divides");
        let n2 = other.num.try_div_exact(&g2).expect("gcd divides");
        let d1 = self.den.try_div_exact(&g2).expect("gcd divides");
        ScalarExpr::make(n1.mul(&n2), d1.mul(&d2)).expect("den nonzero")
    }

    pub fn div(&self, other: &ScalarExpr) -> Result<ScalarExpr, ExprError> {
        if other.is_zero() {
            return Err(ExprError::DivisionByZero);
        }
        let flipped = ScalarExpr {
            num: other.den.clone(),
            den: other.num.clone(),
        };
        // flipped may violate invariants (roots in den); mul re-normalizes
        let g1 = Poly::gcd(&self.num, &flipped.den);
        let n1 = self.num.try_div_exact(&g1).expect("gcd divides");
        let d2 = flipped.den.try_div_exact(&g1).expect("gcd divides");
        ScalarExpr::make(n1.mul(&flipped.num), self.den.mul(&d2))
    }

    pub fn scale(&self, c: &Rat) -> ScalarExpr {
        if c.is_zero() {
            return ScalarExpr::zero();
        }
        ScalarExpr {
            num: self.num.scale(c),
            den: self.den.clone(),
        }
    }

    pub fn powi(&self, e: i64) -> Result<ScalarExpr, ExprError> {
        if e == 0 {
            return Ok(ScalarExpr::one());
        }
        let mag = e.unsigned_abs();
        if mag > u32::MAX as u64 {
            return Err(ExprError::ExponentOverflow);
        }
        let p = ScalarExpr::make(self.num.pow(mag as u32), self.den.pow(mag as u32))?;
        if e < 0 {
            ScalarExpr::one().div(&p)
        } else {
            Ok(p)
        }
    }

    pub fn pow_u(&self, e: u32) -> ScalarExpr {
        self.powi(e as i64).expect("non-negative power")
    }

    /// Square root, extracting perfect-square content and whole squares,
    /// otherwise introducing a root atom assumed positive.
    pub fn sqrt(&self) -> Result<ScalarExpr, ExprError> {
        self.root(2)
    }

    pub fn cbrt(&self) -> Result<ScalarExpr, ExprError> {
        self.root(3)
    }

    fn root(&self, k: u32) -> Result<ScalarExpr, ExprError> {
        if self.is_zero() {
            return Ok(ScalarExpr::zero());
        }
        // (n/d)^(1/k) = (n d^(k-1))^(1/k) / d
        let radicand = self.num.mul(&self.den.pow(k - 1));
        let (outside, inner) = extract_root(&radicand, k)?;
        let den_expr = ScalarExpr::from_poly(self.den.clone());
        outside.mul(&inner).div(&den_expr)
    }

    /// `exp(w)`, as an integer power of a content-normalized atom so that
    /// products and inverses of the same exponential cancel exactly.
    pub fn exp_of(w: &ScalarExpr) -> Result<ScalarExpr, ExprError> {
        if w.is_zero() {
            return Ok(ScalarExpr::one());
        }
        let content = w.num.signed_content();
        let n = content.numer().clone();
        let payload = w.scale(&(Rat::one() / Rat::from_integer(n.clone())));
        let power = n.to_i64().ok_or(ExprError::ExponentOverflow)?;
        let atom = ScalarExpr {
            num: Poly::var(Gen::new(GenKind::Exp(payload))),
            den: Poly::one(),
        };
        atom.powi(power)
    }

    /// Exact partial derivative with respect to the chart coordinate `x`.
    /// Opaque symbols advance along their derivative chain; roots follow
    /// `d(u^(1/k)) = u' / (k u^((k-1)/k))`; exponentials reproduce themselves.
    pub fn differentiate(&self, x: usize) -> ScalarExpr {
        let dn = poly_derivative(&self.num, x);
        let dd = poly_derivative(&self.den, x);
        let den_e = ScalarExpr::from_poly(self.den.clone());
        let num_e = ScalarExpr::from_poly(self.num.clone());
        // (N' D - N D') / D^2
        dn.mul(&den_e)
            .sub(&num_e.mul(&dd))
            .div(&den_e.mul(&den_e))
            .expect("den nonzero")
    }

    /// Restriction to the locus `x_coord = 0`. Poles are resolved by
    /// L'Hôpital steps when the numerator vanishes there; each step needs one
    /// more declared derivative value for opaque symbols in the tau variable.
    pub fn restrict(
        &self,
        tau: &Tau,
        fns: &FunctionTable,
        numeric: Option<&NumericCtx>,
    ) -> Result<Restricted, ExprError> {
        self.restrict_inner(tau, fns, numeric, 8)
    }

    fn restrict_inner(
        &self,
        tau: &Tau,
        fns: &FunctionTable,
        numeric: Option<&NumericCtx>,
        budget: u32,
    ) -> Result<Restricted, ExprError> {
        if budget == 0 {
            return Err(ExprError::PoleBound);
        }
        let xg = Gen::coord(tau.coord);
        let k = if self.den.contains_gen(&xg) {
            self.den.min_exponent_of(&xg)
        } else {
            0
        };
        if k == 0 {
            let (n, sn) = subst_poly_at_zero(&self.num, tau, fns, numeric)?;
            let (d, sd) = subst_poly_at_zero(&self.den, tau, fns, numeric)?;
            if d.is_zero() {
                return Err(ExprError::DenominatorNotUnit);
            }
            return Ok(Restricted {
                expr: n.div(&d)?,
                strength: sn.and(sd),
            });
        }
        // pole candidate: numerator must vanish on the locus
        let (n0, s0) = subst_poly_at_zero(&self.num, tau, fns, numeric)?;
        let strength = if n0.is_zero() {
            s0
        } else {
            let decided = numeric
                .map(|ctx| ctx.decide_zero(&n0, true))
                .unwrap_or(ZeroDecision::NonZero);
            match decided {
                ZeroDecision::ExactZero | ZeroDecision::ProbablyZero => Strength::Numeric,
                ZeroDecision::NonZero => {
                    return Err(ExprError::PoleOnSigma(format!(
                        "numerator restricts to a nonzero value against a tau^{k} pole"
                    )))
                }
            }
        };
        let num_e = ScalarExpr::from_poly(self.num.clone());
        let den_e = ScalarExpr::from_poly(self.den.clone());
        let dn = num_e.differentiate(tau.coord);
        let dd = den_e.differentiate(tau.coord);
        if dd.is_zero() {
            return Err(ExprError::PoleBound);
        }
        let next = dn.div(&dd)?;
        let inner = next.restrict_inner(tau, fns, numeric, budget - 1)?;
        Ok(Restricted {
            expr: inner.expr,
            strength: strength.and(inner.strength),
        })
    }

    /// Exact division by tau in the smooth sense: requires the restriction of
    /// `self` to vanish, then returns `self / tau`.
    pub fn divide_exact(
        &self,
        tau: &Tau,
        fns: &FunctionTable,
        numeric: Option<&NumericCtx>,
    ) -> Result<Restricted, ExprError> {
        if self.is_zero() {
            return Ok(Restricted {
                expr: ScalarExpr::zero(),
                strength: Strength::Exact,
            });
        }
        let r = self.restrict(tau, fns, numeric)?;
        let strength = if r.expr.is_zero() {
            r.strength
        } else {
            match numeric
                .map(|ctx| ctx.decide_zero(&r.expr, true))
                .unwrap_or(ZeroDecision::NonZero)
            {
                ZeroDecision::ExactZero | ZeroDecision::ProbablyZero => Strength::Numeric,
                ZeroDecision::NonZero => return Err(ExprError::NotDivisible),
            }
        };
        Ok(Restricted {
            expr: self.div(&tau.expr())?,
            strength,
        })
    }

    /// Order-two Laurent split in tau. The denominator must factor as
    /// `x^k * u` with `k <= 2` and `u` a unit near the locus.
    pub fn laurent_split(
        &self,
        tau: &Tau,
        fns: &FunctionTable,
        numeric: Option<&NumericCtx>,
    ) -> Result<LaurentForm, ExprError> {
        let xg = Gen::coord(tau.coord);
        let k = if self.den.contains_gen(&xg) {
            self.den.min_exponent_of(&xg)
        } else {
            0
        };
        if k > 2 {
            return Err(ExprError::PoleOrderTooHigh(k));
        }
        let d0 = self
            .den
            .shift_down(&xg, k)
            .expect("minimum exponent divides");
        // unit check on the tau-free denominator part
        let (d0r, _) = subst_poly_at_zero(&d0, tau, fns, numeric)?;
        let unit_check = if d0r.is_zero() {
            return Err(ExprError::DenominatorNotUnit);
        } else if d0r.is_rational_fragment() || d0r.as_rational().is_some() {
            Strength::Exact
        } else {
            match numeric.map(|ctx| ctx.decide_nonvanishing(&d0r, true)) {
                Some(true) => Strength::Numeric,
                Some(false) => return Err(ExprError::DenominatorNotUnit),
                None => Strength::Numeric,
            }
        };
        let d0e = ScalarExpr::from_poly(d0);
        let coeffs = self.num.coeffs_in(&xg);
        let part = |lo: usize, hi: Option<usize>| -> Poly {
            let mut acc = Poly::zero();
            let up = hi.unwrap_or(coeffs.len());
            for (e, c) in coeffs.iter().enumerate() {
                if e >= lo && e < up {
                    acc = acc.add(&Poly::from_coeffs_in(&xg, &{
                        let mut v = vec![Poly::zero(); e - lo];
                        v.push(c.clone());
                        v
                    }));
                }
            }
            acc
        };
        let (a0_raw, a1_raw, a2_raw) = match k {
            0 => (self.num.clone(), Poly::zero(), Poly::zero()),
            1 => (part(1, None), part(0, Some(1)), Poly::zero()),
            2 => (part(2, None), part(1, Some(2)), part(0, Some(1))),
            _ => unreachable!(),
        };
        let a0_raw = a0_raw
            .shift_down(&xg, k.min(a0_raw.min_exponent_of(&xg)))
            .unwrap_or(a0_raw);
        // x^-1 = unit * tau^-1
        let u = &tau.unit;
        let a0 = ScalarExpr::from_poly(a0_raw).div(&d0e)?;
        let a1 = ScalarExpr::from_poly(a1_raw).div(&d0e)?.mul(u);
        let a2 = ScalarExpr::from_poly(a2_raw).div(&d0e)?.mul(&u.mul(u));
        Ok(LaurentForm {
            a0,
            a1,
            a2,
            pole_order: k,
            unit_check,
        })
    }

    /// Numeric evaluation at a point. Opaque symbols take their values from
    /// the valuation table; roots require nonnegative radicands.
    pub fn evaluate(&self, point: &[f64], vals: &Valuations) -> Result<f64, eval::EvalError> {
        eval::eval_expr(self, point, vals)
    }

    pub fn structural_bytes(&self) -> Vec<u8> {
        let mut b = self.num.structural_bytes();
        b.extend_from_slice(&self.den.structural_bytes());
        b
    }

    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }

    pub fn to_string_with(&self, names: &[String]) -> String {
        format!("{}", self.display(names))
    }
}

/// Extract k-th powers from a radicand, returning `(outside, atom_or_one)`.
fn extract_root(radicand: &Poly, k: u32) -> Result<(ScalarExpr, ScalarExpr), ExprError> {
    let content = radicand.signed_content();
    let primitive = radicand.primitive_part();
    let (c_root, c_rest) = rat_power_free(&content, k);
    // pull whole k-th powers out of the common monomial
    let common = primitive
        .terms()
        .iter()
        .fold(None::<Monomial>, |acc, (m, _)| match acc {
            None => Some(m.clone()),
            Some(a) => Some(Monomial::from_slots(
                a.slots()
                    .iter()
                    .filter_map(|(g, e)| {
                        let e2 = m.exponent_of(g).min(*e);
                        if e2 > 0 {
                            Some((g.clone(), e2))
                        } else {
                            None
                        }
                    })
                    .collect(),
            )),
        })
        .unwrap_or_else(Monomial::one);
    let mut out_slots = smallvec::SmallVec::new();
    let mut strip = smallvec::SmallVec::new();
    for (g, e) in common.slots() {
        let q = e / k;
        if q > 0 && !matches!(g.kind(), GenKind::Root { .. }) {
            out_slots.push((g.clone(), q));
            strip.push((g.clone(), q * k));
        }
    }
    let out_mono = Monomial::from_slots(out_slots);
    let strip_mono = Monomial::from_slots(strip);
    let reduced = Poly::from_terms(
        primitive
            .terms()
            .iter()
            .map(|(m, c)| (m.try_div(&strip_mono).expect("common part divides"), c.clone()))
            .collect(),
    );
    let mut outside = ScalarExpr::from_poly(Poly::from_terms(vec![(out_mono, Rat::one())]))
        .scale(&c_root);
    let inner = if let Some(whole) = reduced.nth_root(k) {
        // radicand was a perfect power up to the rational rest
        let lead_sign = whole.leading().map(|(_, c)| c.is_negative()).unwrap_or(false);
        let whole = if lead_sign && k % 2 == 0 { whole.neg() } else { whole };
        outside = outside.mul(&ScalarExpr::from_poly(whole));
        if c_rest.is_one() {
            ScalarExpr::one()
        } else {
            ScalarExpr {
                num: Poly::var(Gen::new(GenKind::Root {
                    degree: k,
                    radicand: Poly::constant(c_rest),
                })),
                den: Poly::one(),
            }
        }
    } else {
        let radicand = reduced.scale(&c_rest);
        ScalarExpr {
            num: Poly::var(Gen::new(GenKind::Root {
                degree: k,
                radicand,
            })),
            den: Poly::one(),
        }
    };
    Ok((outside, inner))
}

/// Derivative of one atom as an expression (zero when independent of `x`).
fn gen_derivative(g: &Gen, x: usize) -> ScalarExpr {
    match g.kind() {
        GenKind::Coord(i) => {
            if *i == x {
                ScalarExpr::one()
            } else {
                ScalarExpr::zero()
            }
        }
        GenKind::Func { name, order, arg } => {
            if *arg == x {
                ScalarExpr::func(name, order + 1, *arg)
            } else {
                ScalarExpr::zero()
            }
        }
        GenKind::FuncVal { .. } => ScalarExpr::zero(),
        GenKind::Exp(w) => {
            let dw = w.differentiate(x);
            if dw.is_zero() {
                ScalarExpr::zero()
            } else {
                let atom = ScalarExpr {
                    num: Poly::var(g.clone()),
                    den: Poly::one(),
                };
                dw.mul(&atom)
            }
        }
        GenKind::Root { degree, radicand } => {
            let du = poly_derivative(radicand, x);
            if du.is_zero() {
                return ScalarExpr::zero();
            }
            // u'/(k * r^(k-1)) = u' * r / (k * u)
            let atom = ScalarExpr {
                num: Poly::var(g.clone()),
                den: Poly::one(),
            };
            let u = ScalarExpr::from_poly(radicand.clone());
            du.mul(&atom)
                .div(&u.scale(&Rat::from_integer((*degree).into())))
                .expect("radicand nonzero")
        }
    }
}

fn poly_derivative(p: &Poly, x: usize) -> ScalarExpr {
    let mut acc = ScalarExpr::zero();
    for (m, c) in p.terms() {
        for (idx, (g, e)) in m.slots().iter().enumerate() {
            let dg = gen_derivative(g, x);
            if dg.is_zero() {
                continue;
            }
            let mut slots: smallvec::SmallVec<[(Gen, u32); 4]> = m
                .slots()
                .iter()
                .enumerate()
                .filter_map(|(j, (gg, ee))| {
                    let ee = if j == idx { ee - 1 } else { *ee };
                    if ee > 0 {
                        Some((gg.clone(), ee))
                    } else {
                        None
                    }
                })
                .collect();
            slots.sort_by(|a, b| a.0.cmp(&b.0));
            let rest = ScalarExpr::from_poly(Poly::from_terms(vec![(
                Monomial::from_slots(slots),
                c * Rat::from_integer((*e).into()),
            )]));
            acc = acc.add(&rest.mul(&dg));
        }
    }
    acc
}

/// Substitute the tau coordinate by zero inside a polynomial, replacing
/// opaque symbols in that variable by their declared locus values (or
/// symbolic `f^(n)(0)` atoms when undeclared).
fn subst_poly_at_zero(
    p: &Poly,
    tau: &Tau,
    fns: &FunctionTable,
    numeric: Option<&NumericCtx>,
) -> Result<(ScalarExpr, Strength), ExprError> {
    let mut cache: HashMap<Gen, (ScalarExpr, Strength)> = HashMap::new();
    let mut strength = Strength::Exact;
    let mut acc = ScalarExpr::zero();
    for (m, c) in p.terms() {
        let mut term = ScalarExpr::from_rat(c.clone());
        let mut dead = false;
        for (g, e) in m.slots() {
            let (img, s) = match cache.get(g) {
                Some(v) => v.clone(),
                None => {
                    let v = subst_gen_at_zero(g, tau, fns, numeric)?;
                    cache.insert(g.clone(), v.clone());
                    v
                }
            };
            strength = strength.and(s);
            if img.is_zero() {
                dead = true;
                break;
            }
            term = term.mul(&img.powi(*e as i64)?);
        }
        if !dead {
            acc = acc.add(&term);
        }
    }
    Ok((acc, strength))
}

fn subst_gen_at_zero(
    g: &Gen,
    tau: &Tau,
    fns: &FunctionTable,
    numeric: Option<&NumericCtx>,
) -> Result<(ScalarExpr, Strength), ExprError> {
    let id = ScalarExpr {
        num: Poly::var(g.clone()),
        den: Poly::one(),
    };
    Ok(match g.kind() {
        GenKind::Coord(i) => {
            if *i == tau.coord {
                (ScalarExpr::zero(), Strength::Exact)
            } else {
                (id, Strength::Exact)
            }
        }
        GenKind::Func { name, order, arg } => {
            if *arg == tau.coord {
                match fns.jet_value(name, *order) {
                    Some(v) => (ScalarExpr::from_rat(v.clone()), Strength::Exact),
                    None => (ScalarExpr::func_val(name, *order), Strength::Exact),
                }
            } else {
                (id, Strength::Exact)
            }
        }
        GenKind::FuncVal { .. } => (id, Strength::Exact),
        GenKind::Exp(w) => {
            let r = w.restrict(tau, fns, numeric)?;
            (ScalarExpr::exp_of(&r.expr)?, r.strength)
        }
        GenKind::Root { degree, radicand } => {
            let (r, s) = subst_poly_at_zero(radicand, tau, fns, numeric)?;
            (r.root(*degree)?, s)
        }
    })
}

// -- display ----------------------------------------------------------------

pub struct ExprDisplay<'a> {
    expr: &'a ScalarExpr,
    names: &'a [String],
}

fn coord_name(names: &[String], i: usize) -> String {
    names
        .get(i)
        .cloned()
        .unwrap_or_else(|| format!("x{}", i + 1))
}

fn fmt_gen(g: &Gen, names: &[String], out: &mut String) {
    match g.kind() {
        GenKind::Coord(i) => out.push_str(&coord_name(names, *i)),
        GenKind::Func { name, order, arg } => {
            out.push_str(name);
            if *order <= 3 {
                for _ in 0..*order {
                    out.push('\'');
                }
            } else {
                out.push_str(&format!("^({order})"));
            }
            out.push('(');
            out.push_str(&coord_name(names, *arg));
            out.push(')');
        }
        GenKind::FuncVal { name, order } => {
            out.push_str(name);
            if *order <= 3 {
                for _ in 0..*order {
                    out.push('\'');
                }
            } else {
                out.push_str(&format!("^({order})"));
            }
            out.push_str("(0)");
        }
        GenKind::Exp(w) => {
            out.push_str("exp(");
            out.push_str(&format!("{}", w.display(names)));
            out.push(')');
        }
        GenKind::Root { degree, radicand } => {
            out.push_str(if *degree == 2 { "sqrt(" } else { "cbrt(" });
            out.push_str(&format!(
                "{}",
                ScalarExpr::from_poly(radicand.clone()).display(names)
            ));
            out.push(')');
        }
    }
}

fn fmt_poly(p: &Poly, names: &[String]) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, (m, c)) in p.terms().iter().enumerate() {
        let neg = c.is_negative();
        let mag = c.abs();
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        let mut pieces: Vec<String> = Vec::new();
        if !mag.is_one() || m.is_one() {
            pieces.push(mag.to_string());
        }
        for (g, e) in m.slots() {
            let mut s = String::new();
            fmt_gen(g, names, &mut s);
            if *e > 1 {
                s.push_str(&format!("^{e}"));
            }
            pieces.push(s);
        }
        out.push_str(&pieces.join("*"));
    }
    out
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = fmt_poly(&self.expr.num, self.names);
        if self.expr.den.is_one() {
            write!(f, "{n}")
        } else {
            let d = fmt_poly(&self.expr.den, self.names);
            let needs = self.expr.num.terms().len() > 1;
            if needs {
                write!(f, "({n})/({d})")
            } else {
                write!(f, "{n}/({d})")
            }
        }
    }
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display(&[]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> ScalarExpr {
        ScalarExpr::coord(0)
    }

    fn y() -> ScalarExpr {
        ScalarExpr::coord(1)
    }

    #[test]
    fn canonical_cancellation() {
        // (x^2 - 1)/(x - 1) = x + 1
        let e = x()
            .mul(&x())
            .sub(&ScalarExpr::one())
            .div(&x().sub(&ScalarExpr::one()))
            .unwrap();
        assert_eq!(e, x().add(&ScalarExpr::one()));
        // x*y - y*x = 0
        assert!(x().mul(&y()).sub(&y().mul(&x())).is_zero());
    }

    #[test]
    fn tau_power_cancellation() {
        // tau^2 * tau^-1 - tau = 0 with tau = x4 on a 4-dim chart
        let tau = ScalarExpr::coord(3);
        let e = tau
            .pow_u(2)
            .div(&tau)
            .unwrap()
            .sub(&tau);
        assert!(e.is_zero());
    }

    #[test]
    fn polynomial_derivative() {
        // d/dx (x^2 y) = 2xy
        let e = x().mul(&x()).mul(&y());
        assert_eq!(e.differentiate(0), x().mul(&y()).scale(&Rat::from_integer(2.into())));
        assert!(e.differentiate(2).is_zero());
    }

    #[test]
    fn chain_rule_on_opaque_symbol() {
        // d/dt f(t)^2 = 2 f(t) f'(t), with t the coordinate 0
        let f = ScalarExpr::func("f", 0, 0);
        let fp = ScalarExpr::func("f", 1, 0);
        let d = f.mul(&f).differentiate(0);
        assert_eq!(d, f.mul(&fp).scale(&Rat::from_integer(2.into())));
    }

    #[test]
    fn sqrt_derivative_and_reduction() {
        // d/dx sqrt(1 + x) = 1/(2 sqrt(1 + x))
        let u = ScalarExpr::one().add(&x());
        let s = u.sqrt().unwrap();
        let d = s.differentiate(0);
        let expected = ScalarExpr::one()
            .div(&s.scale(&Rat::from_integer(2.into())))
            .unwrap();
        assert_eq!(d, expected);
        // sqrt(u)^2 = u exactly
        assert_eq!(s.mul(&s), u);
    }

    #[test]
    fn sqrt_extracts_squares() {
        // sqrt(4 (1+x)^2) = 2 (1+x)
        let u = ScalarExpr::one().add(&x());
        let e = u.mul(&u).scale(&Rat::from_integer(4.into()));
        assert_eq!(e.sqrt().unwrap(), u.scale(&Rat::from_integer(2.into())));
        // sqrt(12) = 2 sqrt(3)
        let t = ScalarExpr::int(12).sqrt().unwrap();
        let s3 = ScalarExpr::int(3).sqrt().unwrap();
        assert_eq!(t, s3.scale(&Rat::from_integer(2.into())));
    }

    #[test]
    fn cbrt_relation() {
        let q = ScalarExpr::rational(1, 2);
        let c = q.cbrt().unwrap();
        assert_eq!(c.pow_u(3), q);
        assert_eq!(ScalarExpr::int(8).cbrt().unwrap(), ScalarExpr::int(2));
    }

    #[test]
    fn exponential_atoms_cancel() {
        let w = x().scale(&Rat::from_integer(2.into()));
        let e2 = ScalarExpr::exp_of(&w).unwrap();
        let em2 = ScalarExpr::exp_of(&w.neg()).unwrap();
        assert!(e2.mul(&em2).is_one());
        // d/dx exp(2x) = 2 exp(2x)
        assert_eq!(e2.differentiate(0), e2.scale(&Rat::from_integer(2.into())));
        // exp(x)^2 == exp(2x)
        let e1 = ScalarExpr::exp_of(&x()).unwrap();
        assert_eq!(e1.mul(&e1), e2);
    }

    fn tau_last(dim: usize) -> Tau {
        Tau::coordinate(dim - 1)
    }

    #[test]
    fn restriction_basics() {
        let fns = FunctionTable::new();
        let tau = tau_last(4);
        let t = ScalarExpr::coord(3);
        // x1 + 3 tau -> x1
        let e = x().add(&t.scale(&Rat::from_integer(3.into())));
        let r = e.restrict(&tau, &fns, None).unwrap();
        assert_eq!(r.expr, x());
        assert_eq!(r.strength, Strength::Exact);
        // tau * (1/tau) -> 1 (cancellation precedes restriction)
        let e = t.mul(&ScalarExpr::one().div(&t).unwrap());
        assert!(e.restrict(&tau, &fns, None).unwrap().expr.is_one());
    }

    #[test]
    fn restriction_substitutes_declared_values() {
        // f(t)^2 - t f'(t) at tau = t restricts to f(0)^2
        let mut fns = FunctionTable::new();
        fns.declare("f", vec![Rat::from_integer(3.into())]);
        let tau = Tau::coordinate(0);
        let f = ScalarExpr::func("f", 0, 0);
        let fp = ScalarExpr::func("f", 1, 0);
        let t = ScalarExpr::coord(0);
        let e = f.mul(&f).sub(&t.mul(&fp));
        let r = e.restrict(&tau, &fns, None).unwrap();
        assert_eq!(r.expr, ScalarExpr::int(9));
    }

    #[test]
    fn lhopital_step() {
        // f'(t)/t with f'(0) = 0 restricts to f''(0)
        let mut fns = FunctionTable::new();
        fns.declare(
            "f",
            vec![Rat::one(), Rat::zero(), Rat::from_integer(2.into())],
        );
        let tau = Tau::coordinate(0);
        let fp = ScalarExpr::func("f", 1, 0);
        let t = ScalarExpr::coord(0);
        let e = fp.div(&t).unwrap();
        let r = e.restrict(&tau, &fns, None).unwrap();
        assert_eq!(r.expr, ScalarExpr::int(2));
        assert_eq!(r.strength, Strength::Exact);
    }

    #[test]
    fn pole_is_detected() {
        let fns = FunctionTable::new();
        let tau = tau_last(2);
        let t = ScalarExpr::coord(1);
        let e = ScalarExpr::one().div(&t).unwrap();
        assert!(matches!(
            e.restrict(&tau, &fns, None),
            Err(ExprError::PoleOnSigma(_))
        ));
    }

    #[test]
    fn divide_exact_examples() {
        let fns = FunctionTable::new();
        let tau = tau_last(2);
        let t = ScalarExpr::coord(1);
        // tau^2 + x tau -> tau + x
        let e = t.pow_u(2).add(&x().mul(&t));
        let q = e.divide_exact(&tau, &fns, None).unwrap();
        assert_eq!(q.expr, t.add(&x()));
        // t f'(t) / t -> f'(t)
        let mut fns2 = FunctionTable::new();
        fns2.declare("g", vec![Rat::zero(), Rat::zero()]);
        let tau0 = Tau::coordinate(0);
        let gp = ScalarExpr::func("g", 1, 0);
        let t0 = ScalarExpr::coord(0);
        let q2 = t0.mul(&gp).divide_exact(&tau0, &fns2, None).unwrap();
        assert_eq!(q2.expr, gp);
        // nonvanishing expression is rejected
        assert!(matches!(
            x().add(&ScalarExpr::one()).divide_exact(&tau, &fns, None),
            Err(ExprError::NotDivisible)
        ));
    }

    #[test]
    fn laurent_split_simple() {
        let fns = FunctionTable::new();
        let tau = tau_last(2);
        let t = ScalarExpr::coord(1);
        // x + 5/tau
        let e = x().add(&ScalarExpr::int(5).div(&t).unwrap());
        let l = e.laurent_split(&tau, &fns, None).unwrap();
        assert_eq!(l.a0, x());
        assert_eq!(l.a1, ScalarExpr::int(5));
        assert!(l.a2.is_zero());
        assert!(l.reassemble(&tau).sub(&e).is_zero());
    }

    #[test]
    fn laurent_split_with_unit() {
        let fns = FunctionTable::new();
        // tau = -t: e = 1/t = -1/tau, so a1 = -1
        let tau = Tau::with_unit(1, ScalarExpr::int(-1));
        let t = ScalarExpr::coord(1);
        let e = ScalarExpr::one().div(&t).unwrap();
        let l = e.laurent_split(&tau, &fns, None).unwrap();
        assert_eq!(l.a1, ScalarExpr::int(-1));
        assert!(l.reassemble(&tau).sub(&e).is_zero());
    }

    #[test]
    fn laurent_rejects_deep_poles() {
        let fns = FunctionTable::new();
        let tau = tau_last(2);
        let t = ScalarExpr::coord(1);
        let e = ScalarExpr::one().div(&t.pow_u(3)).unwrap();
        assert!(matches!(
            e.laurent_split(&tau, &fns, None),
            Err(ExprError::PoleOrderTooHigh(3))
        ));
    }

    #[test]
    fn display_round_trip_shape() {
        let names: Vec<String> = vec!["x".into(), "t".into()];
        let e = x()
            .mul(&x())
            .sub(&ScalarExpr::rational(1, 2))
            .div(&ScalarExpr::coord(1))
            .unwrap();
        assert_eq!(format!("{}", e.display(&names)), "(x^2 - 1/2)/(t)");
    }
}
