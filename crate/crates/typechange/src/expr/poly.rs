//! Multivariate polynomials over exact rationals.
//!
//! Terms are kept sorted in descending graded-lexicographic order on the
//! atom sort keys, with nonzero coefficients, so two polynomials are equal
//! iff their representations are equal. Root atoms obey the reduction
//! `r^k = radicand` (k = 2 or 3); public multiplication applies it, while
//! the gcd/division internals work in the free ring, which is sound because
//! reduced inputs have reduced gcds and cofactors.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use smallvec::SmallVec;

use super::gen::{Gen, GenKind};

pub type Rat = BigRational;

/// Product of atom powers. Slots are sorted by atom and exponents are >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    slots: SmallVec<[(Gen, u32); 4]>,
}

impl Monomial {
    pub fn one() -> Monomial {
        Monomial::default()
    }

    pub fn var(gen: Gen) -> Monomial {
        Monomial {
            slots: smallvec::smallvec![(gen, 1)],
        }
    }

    pub fn from_slots(mut slots: SmallVec<[(Gen, u32); 4]>) -> Monomial {
        slots.retain(|(_, e)| *e > 0);
        slots.sort_by(|a, b| a.0.cmp(&b.0));
        Monomial { slots }
    }

    pub fn is_one(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[(Gen, u32)] {
        &self.slots
    }

    pub fn degree(&self) -> u32 {
        self.slots.iter().map(|(_, e)| e).sum()
    }

    pub fn exponent_of(&self, gen: &Gen) -> u32 {
        self.slots
            .iter()
            .find(|(g, _)| g == gen)
            .map(|(_, e)| *e)
            .unwrap_or(0)
    }

    /// Free-ring product: exponents add, no root reduction.
    pub fn mul_free(&self, other: &Monomial) -> Monomial {
        let mut slots = SmallVec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.slots.len() && j < other.slots.len() {
            match self.slots[i].0.cmp(&other.slots[j].0) {
                std::cmp::Ordering::Less => {
                    slots.push(self.slots[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    slots.push(other.slots[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    slots.push((self.slots[i].0.clone(), self.slots[i].1 + other.slots[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        slots.extend(self.slots[i..].iter().cloned());
        slots.extend(other.slots[j..].iter().cloned());
        Monomial { slots }
    }

    pub fn try_div(&self, other: &Monomial) -> Option<Monomial> {
        let mut slots = SmallVec::new();
        let mut j = 0;
        for (g, e) in &self.slots {
            let mut e = *e;
            while j < other.slots.len() && other.slots[j].0 < *g {
                return None; // divisor has an atom we lack
            }
            if j < other.slots.len() && other.slots[j].0 == *g {
                if other.slots[j].1 > e {
                    return None;
                }
                e -= other.slots[j].1;
                j += 1;
            }
            if e > 0 {
                slots.push((g.clone(), e));
            }
        }
        if j < other.slots.len() {
            return None;
        }
        Some(Monomial { slots })
    }

    /// Graded-lex comparison: higher total degree first, then lexicographic
    /// with smaller atoms taking precedence.
    pub fn cmp_graded(&self, other: &Monomial) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let (mut i, mut j) = (0, 0);
        while i < self.slots.len() && j < other.slots.len() {
            match self.slots[i].0.cmp(&other.slots[j].0) {
                Ordering::Less => return Ordering::Greater, // we carry the smaller atom
                Ordering::Greater => return Ordering::Less,
                Ordering::Equal => match self.slots[i].1.cmp(&other.slots[j].1) {
                    Ordering::Equal => {
                        i += 1;
                        j += 1;
                    }
                    ord => return ord,
                },
            }
        }
        self.slots.len().cmp(&other.slots.len()).reverse()
    }

    fn structural_bytes(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&(self.slots.len() as u32).to_be_bytes());
        for (g, e) in &self.slots {
            buf.extend_from_slice(&(g.sort_key().len() as u32).to_be_bytes());
            buf.extend_from_slice(g.sort_key());
            buf.extend_from_slice(&e.to_be_bytes());
        }
    }
}

/// Sparse multivariate polynomial, terms in descending graded-lex order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Poly {
    terms: Vec<(Monomial, Rat)>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly::default()
    }

    pub fn one() -> Poly {
        Poly::constant(Rat::one())
    }

    pub fn constant(c: Rat) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: vec![(Monomial::one(), c)],
        }
    }

    pub fn var(gen: Gen) -> Poly {
        Poly {
            terms: vec![(Monomial::var(gen), Rat::one())],
        }
    }

    pub fn from_terms(terms: Vec<(Monomial, Rat)>) -> Poly {
        let mut terms = terms;
        terms.sort_by(|a, b| b.0.cmp_graded(&a.0));
        let mut out: Vec<(Monomial, Rat)> = Vec::with_capacity(terms.len());
        for (m, c) in terms {
            if let Some(last) = out.last_mut() {
                if last.0 == m {
                    last.1 += c;
                    if last.1.is_zero() {
                        out.pop();
                    }
                    continue;
                }
            }
            if !c.is_zero() {
                out.push((m, c));
            }
        }
        // merging can leave out-of-order runs only if input had duplicates
        // interleaved; re-normalize defensively when needed
        if out.windows(2).any(|w| w[0].0.cmp_graded(&w[1].0) != std::cmp::Ordering::Greater) {
            let again = out;
            return Poly::from_terms(again);
        }
        Poly { terms: out }
    }

    pub fn terms(&self) -> &[(Monomial, Rat)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].0.is_one() && self.terms[0].1.is_one()
    }

    pub fn as_constant(&self) -> Option<Rat> {
        if self.terms.is_empty() {
            return Some(Rat::zero());
        }
        if self.terms.len() == 1 && self.terms[0].0.is_one() {
            return Some(self.terms[0].1.clone());
        }
        None
    }

    pub fn leading(&self) -> Option<&(Monomial, Rat)> {
        self.terms.first()
    }

    pub fn map_coeffs(&self, f: impl Fn(&Rat) -> Rat) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .map(|(m, c)| (m.clone(), f(c)))
                .collect(),
        )
    }

    pub fn scale(&self, c: &Rat) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(m, k)| (m.clone(), k * c))
                .collect(),
        }
    }

    pub fn neg(&self) -> Poly {
        self.map_coeffs(|c| -c)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() && j < other.terms.len() {
            match self.terms[i].0.cmp_graded(&other.terms[j].0) {
                std::cmp::Ordering::Greater => {
                    out.push(self.terms[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Less => {
                    out.push(other.terms[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let c = &self.terms[i].1 + &other.terms[j].1;
                    if !c.is_zero() {
                        out.push((self.terms[i].0.clone(), c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.terms[i..]);
        out.extend_from_slice(&other.terms[j..]);
        Poly { terms: out }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    /// Product in the free ring, no root reduction. Used by gcd/division.
    pub fn mul_free(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        if other.terms.len() == 1 {
            let (m, c) = &other.terms[0];
            return Poly::from_terms(
                self.terms
                    .iter()
                    .map(|(mm, cc)| (mm.mul_free(m), cc * c))
                    .collect(),
            );
        }
        let mut acc = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                acc.push((m1.mul_free(m2), c1 * c2));
            }
        }
        Poly::from_terms(acc)
    }

    /// Product with root reduction: any slot `r^e` with `e >= k` for a root
    /// atom `r = u^(1/k)` is rewritten as `u^(e/k) * r^(e mod k)`.
    pub fn mul(&self, other: &Poly) -> Poly {
        let raw = self.mul_free(other);
        raw.reduce_roots()
    }

    pub fn reduce_roots(&self) -> Poly {
        if !self.terms.iter().any(|(m, _)| {
            m.slots().iter().any(|(g, e)| {
                matches!(g.kind(), GenKind::Root { degree, .. } if *e >= *degree)
            })
        }) {
            return self.clone();
        }
        let mut acc = Poly::zero();
        for (m, c) in &self.terms {
            let mut base = SmallVec::new();
            let mut carry = Poly::constant(c.clone());
            for (g, e) in m.slots() {
                if let GenKind::Root { degree, radicand } = g.kind() {
                    if *e >= *degree {
                        let q = e / degree;
                        let r = e % degree;
                        carry = carry.mul_free(&radicand.pow_free(q));
                        if r > 0 {
                            base.push((g.clone(), r));
                        }
                        continue;
                    }
                }
                base.push((g.clone(), *e));
            }
            let term = Poly {
                terms: vec![(Monomial::from_slots(base), Rat::one())],
            };
            // the carry may itself contain reducible roots (nested radicands)
            acc = acc.add(&term.mul_free(&carry).reduce_roots());
        }
        acc
    }

    pub fn pow_free(&self, mut e: u32) -> Poly {
        let mut base = self.clone();
        let mut acc = Poly::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul_free(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_free(&base);
            }
        }
        acc
    }

    pub fn pow(&self, mut e: u32) -> Poly {
        let mut base = self.clone();
        let mut acc = Poly::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Largest atom occurring in the polynomial.
    pub fn max_gen(&self) -> Option<Gen> {
        self.terms
            .iter()
            .flat_map(|(m, _)| m.slots().iter().map(|(g, _)| g.clone()))
            .max()
    }

    pub fn contains_gen(&self, gen: &Gen) -> bool {
        self.terms
            .iter()
            .any(|(m, _)| m.slots().iter().any(|(g, _)| g == gen))
    }

    pub fn all_gens(&self) -> Vec<Gen> {
        let mut v: Vec<Gen> = Vec::new();
        for (m, _) in &self.terms {
            for (g, _) in m.slots() {
                if !v.contains(g) {
                    v.push(g.clone());
                }
            }
        }
        v.sort();
        v
    }

    pub fn degree_in(&self, gen: &Gen) -> u32 {
        self.terms
            .iter()
            .map(|(m, _)| m.exponent_of(gen))
            .max()
            .unwrap_or(0)
    }

    /// Minimum exponent of `gen` across all terms (0 for the zero poly).
    pub fn min_exponent_of(&self, gen: &Gen) -> u32 {
        self.terms
            .iter()
            .map(|(m, _)| m.exponent_of(gen))
            .min()
            .unwrap_or(0)
    }

    /// View as univariate in `gen`: coefficient polynomials by ascending power.
    pub fn coeffs_in(&self, gen: &Gen) -> Vec<Poly> {
        let d = self.degree_in(gen) as usize;
        let mut out = vec![Poly::zero(); d + 1];
        for (m, c) in &self.terms {
            let e = m.exponent_of(gen) as usize;
            let rest = Monomial::from_slots(
                m.slots()
                    .iter()
                    .filter(|(g, _)| g != gen)
                    .cloned()
                    .collect(),
            );
            out[e] = out[e].add(&Poly {
                terms: vec![(rest, c.clone())],
            });
        }
        out
    }

    pub fn from_coeffs_in(gen: &Gen, coeffs: &[Poly]) -> Poly {
        let mut acc = Poly::zero();
        for (e, c) in coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let pow = Poly {
                terms: vec![(
                    Monomial::from_slots(smallvec::smallvec![(gen.clone(), e as u32)]),
                    Rat::one(),
                )],
            };
            acc = acc.add(&c.mul_free(&pow));
        }
        acc
    }

    /// Exact division in the free ring; `None` if the division has a remainder.
    pub fn try_div_exact(&self, divisor: &Poly) -> Option<Poly> {
        if divisor.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Poly::zero());
        }
        if let Some(c) = divisor.as_constant() {
            return Some(self.scale(&(Rat::one() / c)));
        }
        let mut rem = self.clone();
        let mut quot: Vec<(Monomial, Rat)> = Vec::new();
        let (dm, dc) = divisor.leading().unwrap();
        while !rem.is_zero() {
            let (rm, rc) = rem.leading().unwrap();
            let qm = rm.try_div(dm)?;
            let qc = rc / dc;
            let qpoly = Poly {
                terms: vec![(qm.clone(), qc.clone())],
            };
            rem = rem.sub(&qpoly.mul_free(divisor));
            quot.push((qm, qc));
        }
        Some(Poly::from_terms(quot))
    }

    /// Divide out `gen^k`; requires every term to carry at least `gen^k`.
    pub fn shift_down(&self, gen: &Gen, k: u32) -> Option<Poly> {
        if k == 0 {
            return Some(self.clone());
        }
        let mut out = Vec::with_capacity(self.terms.len());
        for (m, c) in &self.terms {
            if m.exponent_of(gen) < k {
                return None;
            }
            let slots = m
                .slots()
                .iter()
                .map(|(g, e)| {
                    if g == gen {
                        (g.clone(), e - k)
                    } else {
                        (g.clone(), *e)
                    }
                })
                .collect();
            out.push((Monomial::from_slots(slots), c.clone()));
        }
        Some(Poly::from_terms(out))
    }

    /// Rational content: the positive gcd of coefficients, signed by the
    /// leading coefficient. Dividing by it leaves integer coprime
    /// coefficients with positive leading term.
    pub fn signed_content(&self) -> Rat {
        if self.is_zero() {
            return Rat::one();
        }
        let mut num_gcd = BigInt::zero();
        let mut den_lcm = BigInt::one();
        for (_, c) in &self.terms {
            num_gcd = num_integer::Integer::gcd(&num_gcd, &c.numer().abs());
            den_lcm = num_integer::Integer::lcm(&den_lcm, &c.denom().abs());
        }
        if num_gcd.is_zero() {
            return Rat::one();
        }
        let mut content = Rat::new(num_gcd, den_lcm);
        if self.terms[0].1.is_negative() {
            content = -content;
        }
        content
    }

    pub fn primitive_part(&self) -> Poly {
        let c = self.signed_content();
        if c.is_one() {
            return self.clone();
        }
        self.scale(&(Rat::one() / c))
    }

    /// Polynomial content with respect to `gen`: gcd of the univariate
    /// coefficients.
    fn content_in(&self, gen: &Gen) -> Poly {
        let coeffs = self.coeffs_in(gen);
        let mut acc = Poly::zero();
        for c in coeffs {
            if c.is_zero() {
                continue;
            }
            acc = Poly::gcd(&acc, &c);
            if acc.is_constant_nonzero() {
                return Poly::one();
            }
        }
        acc
    }

    fn is_constant_nonzero(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].0.is_one()
    }

    /// Pseudo-remainder of `self` by `divisor` in the variable `gen`.
    fn pseudo_rem(&self, divisor: &Poly, gen: &Gen) -> Poly {
        let da = self.degree_in(gen);
        let db = divisor.degree_in(gen);
        debug_assert!(db > 0 && da >= db);
        let bcoeffs = divisor.coeffs_in(gen);
        let lb = &bcoeffs[db as usize];
        let mut rem = self.clone();
        while !rem.is_zero() && rem.degree_in(gen) >= db {
            let dr = rem.degree_in(gen);
            let rcoeffs = rem.coeffs_in(gen);
            let lr = rcoeffs[dr as usize].clone();
            // rem = lb*rem - lr*gen^(dr-db)*divisor
            let shift = Poly {
                terms: vec![(
                    Monomial::from_slots(smallvec::smallvec![(gen.clone(), dr - db)]),
                    Rat::one(),
                )],
            };
            rem = rem
                .mul_free(lb)
                .sub(&divisor.mul_free(&lr).mul_free(&shift));
        }
        rem
    }

    /// Multivariate gcd by primitive pseudo-remainder sequences. The result
    /// is normalized: integer coprime coefficients, positive leading term.
    pub fn gcd(a: &Poly, b: &Poly) -> Poly {
        if a.is_zero() {
            return b.primitive_part();
        }
        if b.is_zero() {
            return a.primitive_part();
        }
        if a.as_constant().is_some() || b.as_constant().is_some() {
            return Poly::one();
        }
        if a == b {
            return a.primitive_part();
        }
        // fast path: single-term gcd
        if a.terms.len() == 1 && b.terms.len() == 1 {
            return Poly::monomial_gcd(a, b);
        }
        // strip the common monomial factor first; it is cheap and makes the
        // recursive calls much smaller for curvature-style inputs
        let ma = a.common_monomial();
        let mb = b.common_monomial();
        let shared = Monomial::from_slots(
            ma.slots()
                .iter()
                .filter_map(|(g, e)| {
                    let eb = mb.exponent_of(g);
                    let m = (*e).min(eb);
                    if m > 0 {
                        Some((g.clone(), m))
                    } else {
                        None
                    }
                })
                .collect(),
        );
        let a = a.divide_monomial(&ma);
        let b = b.divide_monomial(&mb);
        let core = Poly::gcd_core(&a, &b);
        let shared_poly = Poly {
            terms: vec![(shared, Rat::one())],
        };
        core.mul_free(&shared_poly).primitive_part()
    }

    fn monomial_gcd(a: &Poly, b: &Poly) -> Poly {
        let (ma, _) = &a.terms[0];
        let (mb, _) = &b.terms[0];
        let slots = ma
            .slots()
            .iter()
            .filter_map(|(g, e)| {
                let eb = mb.exponent_of(g);
                let m = (*e).min(eb);
                if m > 0 {
                    Some((g.clone(), m))
                } else {
                    None
                }
            })
            .collect();
        Poly {
            terms: vec![(Monomial::from_slots(slots), Rat::one())],
        }
    }

    fn common_monomial(&self) -> Monomial {
        let mut iter = self.terms.iter();
        let mut acc = match iter.next() {
            Some((m, _)) => m.clone(),
            None => return Monomial::one(),
        };
        for (m, _) in iter {
            if acc.is_one() {
                break;
            }
            let slots = acc
                .slots()
                .iter()
                .filter_map(|(g, e)| {
                    let eb = m.exponent_of(g);
                    let mn = (*e).min(eb);
                    if mn > 0 {
                        Some((g.clone(), mn))
                    } else {
                        None
                    }
                })
                .collect();
            acc = Monomial::from_slots(slots);
        }
        acc
    }

    fn divide_monomial(&self, m: &Monomial) -> Poly {
        if m.is_one() {
            return self.clone();
        }
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(mm, c)| (mm.try_div(m).expect("common monomial divides"), c.clone()))
                .collect(),
        }
    }

    fn gcd_core(a: &Poly, b: &Poly) -> Poly {
        if a.is_zero() {
            return b.primitive_part();
        }
        if b.is_zero() {
            return a.primitive_part();
        }
        if a.as_constant().is_some() || b.as_constant().is_some() {
            return Poly::one();
        }
        let ga = a.max_gen().unwrap();
        let gb = b.max_gen().unwrap();
        let gen = ga.clone().max(gb.clone());
        let a_has = a.contains_gen(&gen);
        let b_has = b.contains_gen(&gen);
        if a_has && !b_has {
            return Poly::gcd_core(&a.content_in(&gen), b);
        }
        if b_has && !a_has {
            return Poly::gcd_core(a, &b.content_in(&gen));
        }
        let ca = a.content_in(&gen);
        let cb = b.content_in(&gen);
        let g0 = Poly::gcd(&ca, &cb);
        let mut pa = a.try_div_exact(&ca).expect("content divides");
        let mut pb = b.try_div_exact(&cb).expect("content divides");
        if pa.degree_in(&gen) < pb.degree_in(&gen) {
            std::mem::swap(&mut pa, &mut pb);
        }
        loop {
            if pb.is_zero() {
                let pp = pa
                    .try_div_exact(&pa.content_in(&gen))
                    .expect("content divides");
                return g0.mul_free(&pp).primitive_part();
            }
            if pb.degree_in(&gen) == 0 {
                return g0;
            }
            let rem = pa.pseudo_rem(&pb, &gen);
            pa = pb;
            pb = if rem.is_zero() {
                Poly::zero()
            } else {
                let c = rem.content_in(&gen);
                rem.try_div_exact(&c).expect("content divides")
            };
        }
    }

    /// Exact polynomial k-th root, if one exists (free ring).
    pub fn nth_root(&self, k: u32) -> Option<Poly> {
        if self.is_zero() {
            return Some(Poly::zero());
        }
        if let Some(c) = self.as_constant() {
            return rat_nth_root(&c, k).map(Poly::constant);
        }
        let gen = self.max_gen().unwrap();
        let d = self.degree_in(&gen);
        if d % k != 0 {
            return None;
        }
        let coeffs = self.coeffs_in(&gen);
        let top = coeffs.last().unwrap().nth_root(k)?;
        let shift = Poly {
            terms: vec![(
                Monomial::from_slots(smallvec::smallvec![(gen.clone(), d / k)]),
                Rat::one(),
            )],
        };
        let mut root = top.mul_free(&shift);
        // Newton-style completion by leading-term division
        let mut guard = 0usize;
        loop {
            let rem = self.sub(&root.pow_free(k));
            if rem.is_zero() {
                return Some(root);
            }
            guard += 1;
            if guard > 4 * (self.terms.len() + 4) {
                return None;
            }
            // next correction t satisfies k * lt(root)^(k-1) * t = lt(rem)
            let lt_rem = Poly {
                terms: vec![rem.leading().unwrap().clone()],
            };
            let lead = Poly {
                terms: vec![root.leading().unwrap().clone()],
            };
            let denom = lead.pow_free(k - 1).scale(&Rat::from_integer(k.into()));
            let t = lt_rem.try_div_exact(&denom)?;
            if t.is_zero() {
                return None;
            }
            root = root.add(&t);
        }
    }

    pub fn structural_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.terms.len() as u32).to_be_bytes());
        for (m, c) in &self.terms {
            m.structural_bytes(&mut buf);
            let s = c.to_string();
            buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        buf
    }
}

/// Exact rational k-th root when numerator and denominator are perfect
/// k-th powers (sign allowed for odd k).
pub fn rat_nth_root(c: &Rat, k: u32) -> Option<Rat> {
    if c.is_zero() {
        return Some(Rat::zero());
    }
    let negative = c.is_negative();
    if negative && k % 2 == 0 {
        return None;
    }
    let num = c.numer().abs();
    let den = c.denom().abs();
    let rn = num.nth_root(k);
    let rd = den.nth_root(k);
    if num_traits::pow::Pow::pow(&rn, k) == num && num_traits::pow::Pow::pow(&rd, k) == den {
        let mut r = Rat::new(rn, rd);
        if negative {
            r = -r;
        }
        Some(r)
    } else {
        None
    }
}

/// Largest k-th-power divisor of a rational: returns (root, rest) with
/// `c = root^k * rest` and rest's numerator/denominator k-th-power free.
pub fn rat_power_free(c: &Rat, k: u32) -> (Rat, Rat) {
    if c.is_zero() {
        return (Rat::one(), Rat::zero());
    }
    let (rn, restn) = int_power_free(&c.numer().abs(), k);
    let (rd, restd) = int_power_free(&c.denom().abs(), k);
    let root = Rat::new(rn, rd);
    let mut rest = Rat::new(restn, restd);
    if c.is_negative() {
        rest = -rest;
    }
    (root, rest)
}

fn int_power_free(n: &BigInt, k: u32) -> (BigInt, BigInt) {
    // trial division up to a small bound; enough for the coefficients that
    // arise from metric components and frame normalizations
    let mut root = BigInt::one();
    let mut rest = n.clone();
    let mut p = BigInt::from(2u32);
    let bound = BigInt::from(100_000u32);
    while &p * &p <= rest && p <= bound {
        let pk = num_traits::pow::Pow::pow(&p, k);
        loop {
            let (q, r) = num_integer::Integer::div_rem(&rest, &pk);
            if r.is_zero() {
                root *= &p;
                rest = q;
            } else {
                break;
            }
        }
        p += 1;
    }
    (root, rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Poly {
        Poly::var(Gen::coord(0))
    }

    fn y() -> Poly {
        Poly::var(Gen::coord(1))
    }

    fn int(n: i64) -> Rat {
        Rat::from_integer(n.into())
    }

    #[test]
    fn arithmetic_and_ordering() {
        let p = x().mul(&x()).add(&y().scale(&int(2))); // x^2 + 2y
        let q = p.sub(&p);
        assert!(q.is_zero());
        assert_eq!(p.leading().unwrap().0.degree(), 2);
        let commutes = x().mul(&y()).sub(&y().mul(&x()));
        assert!(commutes.is_zero());
    }

    #[test]
    fn exact_division() {
        // (x^2 - y^2) / (x - y) = x + y
        let num = x().mul(&x()).sub(&y().mul(&y()));
        let den = x().sub(&y());
        let q = num.try_div_exact(&den).unwrap();
        assert_eq!(q, x().add(&y()));
        assert!(x().try_div_exact(&y()).is_none());
    }

    #[test]
    fn gcd_cancels_common_factor() {
        // gcd((x+y)^2 * x, (x+y) * y) = x + y
        let s = x().add(&y());
        let a = s.mul(&s).mul(&x());
        let b = s.mul(&y());
        let g = Poly::gcd(&a, &b);
        assert_eq!(g, s);
    }

    #[test]
    fn gcd_of_coprime_is_one() {
        let a = x().mul(&x()).add(&Poly::one());
        let b = y().add(&Poly::constant(int(3)));
        assert!(Poly::gcd(&a, &b).is_one());
    }

    #[test]
    fn nth_root_of_square() {
        let s = x().add(&Poly::constant(int(1)));
        let sq = s.mul(&s).scale(&int(4));
        let r = sq.nth_root(2).unwrap();
        // sign convention: positive leading coefficient
        assert_eq!(r.mul(&r), sq);
        assert!(x().add(&Poly::one()).nth_root(2).is_none());
    }

    #[test]
    fn rational_roots() {
        assert_eq!(rat_nth_root(&Rat::new(4.into(), 9.into()), 2), Some(Rat::new(2.into(), 3.into())));
        assert_eq!(rat_nth_root(&int(8), 3), Some(int(2)));
        assert_eq!(rat_nth_root(&int(-8), 3), Some(int(-2)));
        assert_eq!(rat_nth_root(&int(2), 2), None);
        let (root, rest) = rat_power_free(&int(12), 2);
        assert_eq!(root, int(2));
        assert_eq!(rest, int(3));
    }
}
