//! Numeric evaluation and the sampling-based evidence channel.
//!
//! Exact zero tests are complete for the rational fragment. Expressions with
//! opaque atoms are decided by evaluating at quasi-random points: opaque
//! symbols are modeled by their declared jet at the locus (a truncated Taylor
//! polynomial), undeclared symbols by seeded random jets. A zero verdict from
//! this channel is reported as `probable`, never as exact.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gen::GenKind;
use super::{FunctionTable, Gen, Poly, ScalarExpr};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("missing valuation for symbol `{0}`")]
    MissingValuation(String),
    #[error("missing coordinate value at index {0}")]
    MissingCoordinate(usize),
    #[error("denominator numerically zero")]
    NumericallySingular,
    #[error("negative radicand {0:.3e} under an even root")]
    NegativeRadicand(f64),
}

/// Numeric models for opaque function symbols: jet coefficients at 0, used
/// as a Taylor polynomial (`jet[k]` is the k-th derivative at 0).
#[derive(Debug, Clone, Default)]
pub struct Valuations {
    jets: BTreeMap<String, Vec<f64>>,
}

impl Valuations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_jet(&mut self, name: &str, jet: Vec<f64>) {
        self.jets.insert(name.to_string(), jet);
    }

    pub fn from_table(fns: &FunctionTable) -> Self {
        let mut v = Valuations::new();
        for (name, jet) in fns.jets() {
            v.set_jet(
                name,
                jet.iter().map(|r| r.to_f64().unwrap_or(f64::NAN)).collect(),
            );
        }
        v
    }

    /// Ensure every named symbol has some jet, filling gaps with seeded
    /// random coefficients so that independent atoms stay generic.
    pub fn with_random_fallback(mut self, names: &[String], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for name in names {
            self.jets.entry(name.clone()).or_insert_with(|| {
                (0..6)
                    .map(|_| {
                        let v: f64 = rng.gen_range(-2.0..2.0);
                        if v.abs() < 0.25 {
                            v + 0.5_f64.copysign(v + 0.1)
                        } else {
                            v
                        }
                    })
                    .collect()
            });
        }
        self
    }

    /// Value of `f^(order)` at the point `arg` per the jet model.
    pub fn func_value(&self, name: &str, order: u32, arg: f64) -> Result<f64, EvalError> {
        let jet = self
            .jets
            .get(name)
            .ok_or_else(|| EvalError::MissingValuation(name.to_string()))?;
        let mut acc = 0.0;
        let mut fact = 1.0;
        for (i, c) in jet.iter().skip(order as usize).enumerate() {
            if i > 0 {
                fact *= i as f64;
            }
            acc += c * arg.powi(i as i32) / fact;
        }
        Ok(acc)
    }
}

fn eval_gen(g: &Gen, point: &[f64], vals: &Valuations) -> Result<f64, EvalError> {
    match g.kind() {
        GenKind::Coord(i) => point
            .get(*i)
            .copied()
            .ok_or(EvalError::MissingCoordinate(*i)),
        GenKind::Func { name, order, arg } => {
            let a = point
                .get(*arg)
                .copied()
                .ok_or(EvalError::MissingCoordinate(*arg))?;
            vals.func_value(name, *order, a)
        }
        GenKind::FuncVal { name, order } => vals.func_value(name, *order, 0.0),
        GenKind::Exp(w) => Ok(eval_expr(w, point, vals)?.exp()),
        GenKind::Root { degree, radicand } => {
            let u = eval_poly(radicand, point, vals)?.0;
            if *degree % 2 == 0 && u < -1e-12 {
                return Err(EvalError::NegativeRadicand(u));
            }
            if *degree % 2 == 1 && u < 0.0 {
                Ok(-(-u).powf(1.0 / *degree as f64))
            } else {
                Ok(u.max(0.0).powf(1.0 / *degree as f64))
            }
        }
    }
}

/// Evaluate a polynomial, also returning the sum of term magnitudes, which
/// callers use as the scale for relative tolerances.
fn eval_poly(p: &Poly, point: &[f64], vals: &Valuations) -> Result<(f64, f64), EvalError> {
    let mut acc = 0.0;
    let mut scale = 0.0;
    for (m, c) in p.terms() {
        let mut t = c.to_f64().unwrap_or(f64::NAN);
        for (g, e) in m.slots() {
            t *= eval_gen(g, point, vals)?.powi(*e as i32);
        }
        acc += t;
        scale += t.abs();
    }
    Ok((acc, scale))
}

pub(super) fn eval_expr(
    e: &ScalarExpr,
    point: &[f64],
    vals: &Valuations,
) -> Result<f64, EvalError> {
    let (n, _) = eval_poly(e.num(), point, vals)?;
    let (d, dscale) = eval_poly(e.den(), point, vals)?;
    if d.abs() <= 1e-14 * (1.0 + dscale) {
        return Err(EvalError::NumericallySingular);
    }
    Ok(n / d)
}

/// Outcome of a sampling-based zero test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroDecision {
    ExactZero,
    ProbablyZero,
    NonZero,
}

/// Sampling context: a coordinate box, a seed, and numeric models for the
/// opaque symbols. All sampling is deterministic given the seed.
#[derive(Debug, Clone)]
pub struct NumericCtx {
    pub dim: usize,
    pub tau_coord: usize,
    pub box_: Vec<(f64, f64)>,
    pub seed: u64,
    pub samples: usize,
    pub tol: f64,
    pub vals: Valuations,
}

impl NumericCtx {
    pub fn new(dim: usize, tau_coord: usize, box_: Vec<(f64, f64)>, seed: u64) -> Self {
        NumericCtx {
            dim,
            tau_coord,
            box_,
            seed,
            samples: 20,
            tol: 1e-9,
            vals: Valuations::new(),
        }
    }

    pub fn with_valuations(mut self, vals: Valuations) -> Self {
        self.vals = vals;
        self
    }

    fn range(&self, i: usize) -> (f64, f64) {
        self.box_.get(i).copied().unwrap_or((-0.5, 0.5))
    }

    /// Quasi-random points on the locus (`tau` coordinate pinned to zero).
    pub fn sigma_samples(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                (0..self.dim)
                    .map(|i| {
                        if i == self.tau_coord {
                            0.0
                        } else {
                            let (lo, hi) = self.range(i);
                            rng.gen_range(lo..hi)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Points off the locus, kept away from it so poles stay finite.
    pub fn off_sigma_samples(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        (0..self.samples)
            .map(|_| {
                (0..self.dim)
                    .map(|i| {
                        let (lo, hi) = self.range(i);
                        if i == self.tau_coord {
                            let margin = 0.1 * (hi - lo);
                            let v: f64 = rng.gen_range(margin..(hi - lo) / 2.0);
                            if rng.gen_bool(0.5) {
                                v
                            } else {
                                -v
                            }
                        } else {
                            rng.gen_range(lo..hi)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Points on a chosen side of the locus.
    pub fn one_sided_samples(&self, positive: bool) -> Vec<Vec<f64>> {
        self.off_sigma_samples()
            .into_iter()
            .map(|mut p| {
                let v = p[self.tau_coord].abs();
                p[self.tau_coord] = if positive { v } else { -v };
                p
            })
            .collect()
    }

    fn valuations_for(&self, e: &ScalarExpr) -> Valuations {
        let names: Vec<String> = e
            .all_gens()
            .into_iter()
            .filter_map(|g| match g.kind() {
                GenKind::Func { name, .. } | GenKind::FuncVal { name, .. } => Some(name.clone()),
                _ => None,
            })
            .collect();
        self.vals.clone().with_random_fallback(&names, self.seed)
    }

    /// Zero test with honest strength reporting: exact for the rational
    /// fragment, sampled otherwise.
    pub fn decide_zero(&self, e: &ScalarExpr, on_sigma: bool) -> ZeroDecision {
        if e.is_zero() {
            return ZeroDecision::ExactZero;
        }
        if e.is_rational_fragment() {
            return ZeroDecision::NonZero;
        }
        let vals = self.valuations_for(e);
        let points = if on_sigma {
            self.sigma_samples()
        } else {
            self.off_sigma_samples()
        };
        let mut seen = 0usize;
        for p in &points {
            let n = eval_poly(e.num(), p, &vals);
            let d = eval_poly(e.den(), p, &vals);
            let (Ok((nv, nscale)), Ok((dv, _))) = (n, d) else {
                continue;
            };
            if dv.abs() <= 1e-12 {
                continue;
            }
            seen += 1;
            let rel = (nv / dv).abs() / (1.0 + nscale / dv.abs());
            if rel > self.tol {
                return ZeroDecision::NonZero;
            }
        }
        if seen == 0 {
            // could not evaluate anywhere; stay conservative
            return ZeroDecision::NonZero;
        }
        ZeroDecision::ProbablyZero
    }

    /// True if the expression stays clearly away from zero at every sample.
    pub fn decide_nonvanishing(&self, e: &ScalarExpr, on_sigma: bool) -> bool {
        if e.is_zero() {
            return false;
        }
        // monomials in positive atoms with nonzero coefficient cannot vanish
        if e.num().terms().len() == 1 {
            let (m, _) = &e.num().terms()[0];
            if m.slots().iter().all(|(g, _)| g.is_positive_atom()) {
                return true;
            }
        }
        let vals = self.valuations_for(e);
        let points = if on_sigma {
            self.sigma_samples()
        } else {
            self.off_sigma_samples()
        };
        let mut seen = 0usize;
        for p in &points {
            match e.evaluate(p, &vals) {
                Ok(v) => {
                    seen += 1;
                    if v.abs() <= self.tol {
                        return false;
                    }
                }
                Err(_) => continue,
            }
        }
        seen > 0
    }

    /// Maximum |e| over locus samples; NaN when nothing was evaluable.
    pub fn max_abs_on_sigma(&self, e: &ScalarExpr) -> f64 {
        let vals = self.valuations_for(e);
        let mut max = f64::NAN;
        for p in &self.sigma_samples() {
            if let Ok(v) = e.evaluate(p, &vals) {
                if max.is_nan() || v.abs() > max {
                    max = v.abs();
                }
            }
        }
        max
    }
}
