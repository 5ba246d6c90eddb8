//! Generator atoms for the polynomial layer.
//!
//! Every scalar expression is a ratio of multivariate polynomials whose
//! "variables" are drawn from a small set of atom kinds: chart coordinates,
//! opaque univariate function symbols together with their derivative chain
//! (`f`, `f'`, `f''`, ...), values of those symbols at the degeneracy locus,
//! exponential atoms `exp(w)`, and root atoms `(radicand)^(1/k)` for k = 2, 3.
//!
//! Atoms are hash-consed: building the same [`GenKind`] twice yields pointers
//! to the same allocation, so equality is a pointer comparison. Each atom
//! carries a structural sort key so that canonical forms do not depend on the
//! order in which atoms were first created (important for reproducible output
//! when unrelated analyses share the process).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;

use super::poly::Poly;
use super::ScalarExpr;

/// The structural description of a generator atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GenKind {
    /// Chart coordinate, by 0-based index.
    Coord(usize),
    /// `order`-th derivative of an opaque function symbol applied to the
    /// coordinate with index `arg`.
    Func { name: String, order: u32, arg: usize },
    /// The value `f^(order)(0)` kept symbolic because no exact value was
    /// declared for it. Appears only after restriction to the locus.
    FuncVal { name: String, order: u32 },
    /// `exp(payload)`. The payload is scaled so that integer powers of the
    /// atom generate every exponential the analysis needs.
    Exp(ScalarExpr),
    /// `radicand^(1/degree)` with degree 2 or 3. The radicand is a polynomial
    /// in atoms created strictly earlier, assumed positive on the working
    /// neighbourhood.
    Root { degree: u32, radicand: Poly },
}

#[derive(Debug)]
pub struct GenData {
    key: Vec<u8>,
    kind: GenKind,
}

/// Hash-consed generator atom. Cheap to clone and compare.
#[derive(Debug, Clone)]
pub struct Gen(Arc<GenData>);

impl Gen {
    pub fn new(kind: GenKind) -> Gen {
        static INTERNER: Lazy<Mutex<HashMap<GenKind, Gen>>> =
            Lazy::new(|| Mutex::new(HashMap::new()));
        let mut map = INTERNER.lock().unwrap();
        if let Some(g) = map.get(&kind) {
            return g.clone();
        }
        let key = sort_key(&kind);
        let gen = Gen(Arc::new(GenData {
            key,
            kind: kind.clone(),
        }));
        map.insert(kind, gen.clone());
        gen
    }

    pub fn coord(idx: usize) -> Gen {
        Gen::new(GenKind::Coord(idx))
    }

    pub fn func(name: &str, order: u32, arg: usize) -> Gen {
        Gen::new(GenKind::Func {
            name: name.to_string(),
            order,
            arg,
        })
    }

    pub fn func_val(name: &str, order: u32) -> Gen {
        Gen::new(GenKind::FuncVal {
            name: name.to_string(),
            order,
        })
    }

    pub fn kind(&self) -> &GenKind {
        &self.0.kind
    }

    pub fn sort_key(&self) -> &[u8] {
        &self.0.key
    }

    pub fn is_coord(&self, idx: usize) -> bool {
        matches!(self.kind(), GenKind::Coord(i) if *i == idx)
    }

    /// Root and exponential atoms are positive by construction; a monomial
    /// made only of those cannot vanish.
    pub fn is_positive_atom(&self) -> bool {
        matches!(self.kind(), GenKind::Exp(_) | GenKind::Root { .. })
    }
}

impl PartialEq for Gen {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Gen {}

impl PartialOrd for Gen {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gen {
    fn cmp(&self, other: &Self) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        self.0.key.cmp(&other.0.key)
    }
}

impl Hash for Gen {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.key.hash(state);
    }
}

fn push_len(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    buf.extend_from_slice(bytes);
}

/// Canonical byte encoding of an atom. Coordinates sort first, then function
/// symbols by argument and order, then locus values, exponentials and roots.
fn sort_key(kind: &GenKind) -> Vec<u8> {
    let mut buf = Vec::new();
    match kind {
        GenKind::Coord(i) => {
            buf.push(0);
            buf.extend_from_slice(&(*i as u32).to_be_bytes());
        }
        GenKind::Func { name, order, arg } => {
            buf.push(1);
            buf.extend_from_slice(&(*arg as u32).to_be_bytes());
            push_len(&mut buf, name.as_bytes());
            buf.extend_from_slice(&order.to_be_bytes());
        }
        GenKind::FuncVal { name, order } => {
            buf.push(2);
            push_len(&mut buf, name.as_bytes());
            buf.extend_from_slice(&order.to_be_bytes());
        }
        GenKind::Exp(e) => {
            buf.push(3);
            push_len(&mut buf, &e.structural_bytes());
        }
        GenKind::Root { degree, radicand } => {
            buf.push(4);
            buf.extend_from_slice(&degree.to_be_bytes());
            push_len(&mut buf, &radicand.structural_bytes());
        }
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_dedups() {
        let a = Gen::coord(0);
        let b = Gen::coord(0);
        assert_eq!(a, b);
        assert!(Arc::ptr_eq(&a.0, &b.0));
        assert_ne!(Gen::coord(1), a);
    }

    #[test]
    fn coords_sort_before_functions() {
        let x = Gen::coord(3);
        let f = Gen::func("f", 0, 3);
        assert!(x < f);
        assert!(Gen::func("f", 0, 3) < Gen::func("f", 1, 3));
    }
}
