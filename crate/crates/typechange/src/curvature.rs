//! Connection and curvature stack.
//!
//! Everything is computed in coordinates with exact coefficients. The dual
//! connection coefficients of the first kind are polynomial in tau and live
//! on the whole chart; raising an index through the inverse metric brings in
//! the tau poles, so the Riemann/Ricci/Schouten/Weyl tensors are objects of
//! the regular part and their locus behaviour is what the Laurent analysis
//! measures.
//!
//! Sign conventions are pinned by cross-validation against closed-form
//! warped-product curvature: `K(d_a, d_b, d_c, d_d)` is positive on round
//! spheres (`K_1212 > 0`), Ricci is the contraction making spheres positive,
//! and `W = K - h (*) g` with `h` the Schouten tensor and `(*)` the
//! Kulkarni-Nomizu product.

use crate::expr::{ExprError, Rat, ScalarExpr, Tau};
use crate::geometry::{det_expr, Frame, GeometryError, MetricChart, Tensor};

/// Metric data for curvature computations: components and exact inverse.
/// Works for the ambient type-changing metric (inverse has tau poles) and
/// for ordinary Riemannian charts (base and locus metrics).
#[derive(Debug, Clone)]
pub struct MetricData {
    pub dim: usize,
    pub g: Vec<Vec<ScalarExpr>>,
    pub inv: Vec<Vec<ScalarExpr>>,
    pub det: ScalarExpr,
}

impl MetricData {
    pub fn new(g: Vec<Vec<ScalarExpr>>) -> Result<MetricData, GeometryError> {
        let dim = g.len();
        let det = det_expr(&g);
        if det.is_zero() {
            return Err(GeometryError::DetIdenticallyZero);
        }
        let mut inv = vec![vec![ScalarExpr::zero(); dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                let minor: Vec<Vec<ScalarExpr>> = g
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| *r != i)
                    .map(|(_, row)| {
                        row.iter()
                            .enumerate()
                            .filter(|(c, _)| *c != j)
                            .map(|(_, e)| e.clone())
                            .collect()
                    })
                    .collect();
                let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                inv[j][i] = det_expr(&minor)
                    .scale(&Rat::from_integer(sign.into()))
                    .div(&det)?;
            }
        }
        Ok(MetricData { dim, g, inv, det })
    }

    pub fn from_chart(mc: &MetricChart) -> Result<MetricData, GeometryError> {
        let m = mc.dim();
        let g: Vec<Vec<ScalarExpr>> = (0..m)
            .map(|i| (0..m).map(|j| mc.g(i, j).clone()).collect())
            .collect();
        MetricData::new(g)
    }

    pub fn metric_tensor(&self) -> Tensor {
        let mut t = Tensor::zeros(self.dim, 2);
        for a in 0..self.dim {
            for b in 0..self.dim {
                t.set(&[a, b], self.g[a][b].clone());
            }
        }
        t
    }
}

/// Connection coefficients: `first[a][b][c] = G_{ab,c}` (the dual connection,
/// polynomial in tau) and `second[a][b][c] = G^c_{ab}` (Levi-Civita off the
/// locus, with tau poles of order at most one).
#[derive(Debug, Clone)]
pub struct ConnectionCoeffs {
    pub first: Tensor,
    pub second: Tensor,
}

/// Coefficients of the first kind:
/// `G_{ab,c} = (d_a g_bc + d_b g_ac - d_c g_ab)/2`.
pub fn dual_connection(md: &MetricData) -> Tensor {
    let m = md.dim;
    let half = Rat::new(1.into(), 2.into());
    let mut t = Tensor::zeros(m, 3);
    for a in 0..m {
        for b in a..m {
            for c in 0..m {
                let e = md.g[b][c]
                    .differentiate(a)
                    .add(&md.g[a][c].differentiate(b))
                    .sub(&md.g[a][b].differentiate(c))
                    .scale(&half);
                t.set(&[a, b, c], e.clone());
                if a != b {
                    t.set(&[b, a, c], e);
                }
            }
        }
    }
    t
}

/// Coefficients of the second kind: `G^c_{ab} = g^{cd} G_{ab,d}`.
pub fn christoffel(md: &MetricData) -> Result<ConnectionCoeffs, ExprError> {
    let m = md.dim;
    let first = dual_connection(md);
    let mut second = Tensor::zeros(m, 3);
    for a in 0..m {
        for b in a..m {
            for c in 0..m {
                let mut acc = ScalarExpr::zero();
                for d in 0..m {
                    let f = first.get(&[a, b, d]);
                    if f.is_zero() || md.inv[c][d].is_zero() {
                        continue;
                    }
                    acc = acc.add(&md.inv[c][d].mul(f));
                }
                second.set(&[a, b, c], acc.clone());
                if a != b {
                    second.set(&[b, a, c], acc);
                }
            }
        }
    }
    Ok(ConnectionCoeffs { first, second })
}

/// Covariant curvature `K_{abcd}`, antisymmetric in (a,b) and (c,d),
/// symmetric under pair interchange, satisfying the first Bianchi identity.
pub fn riemann(md: &MetricData, conn: &ConnectionCoeffs) -> Tensor {
    let m = md.dim;
    let g2 = &conn.second;
    // R^e_{abc} = d_a G^e_{bc} - d_b G^e_{ac} + G^e_{af}G^f_{bc} - G^e_{bf}G^f_{ac}
    let rmixed = |a: usize, b: usize, c: usize, e: usize| -> ScalarExpr {
        let mut acc = g2
            .get(&[b, c, e])
            .differentiate(a)
            .sub(&g2.get(&[a, c, e]).differentiate(b));
        for f in 0..m {
            let t1 = g2.get(&[a, f, e]).mul(g2.get(&[b, c, f]));
            let t2 = g2.get(&[b, f, e]).mul(g2.get(&[a, c, f]));
            acc = acc.add(&t1).sub(&t2);
        }
        acc
    };
    let mut k = Tensor::zeros(m, 4);
    // independent slots: a<b, c<d, (a,b) <= (c,d); the rest by symmetry
    for a in 0..m {
        for b in (a + 1)..m {
            for c in 0..m {
                for d in (c + 1)..m {
                    if (c, d) < (a, b) {
                        continue;
                    }
                    let mut acc = ScalarExpr::zero();
                    for e in 0..m {
                        if md.g[d][e].is_zero() {
                            continue;
                        }
                        acc = acc.add(&md.g[d][e].mul(&rmixed(a, b, c, e)));
                    }
                    let v = acc.neg();
                    for (i, j, kk, l, sign) in [
                        (a, b, c, d, 1),
                        (b, a, c, d, -1),
                        (a, b, d, c, -1),
                        (b, a, d, c, 1),
                        (c, d, a, b, 1),
                        (d, c, a, b, -1),
                        (c, d, b, a, -1),
                        (d, c, b, a, 1),
                    ] {
                        let e = if sign > 0 { v.clone() } else { v.neg() };
                        k.set(&[i, j, kk, l], e);
                    }
                }
            }
        }
    }
    k
}

/// Ricci contraction, positive on round spheres.
pub fn ricci(md: &MetricData, k: &Tensor) -> Tensor {
    let m = md.dim;
    let mut ric = Tensor::zeros(m, 2);
    for a in 0..m {
        for b in a..m {
            let mut acc = ScalarExpr::zero();
            for c in 0..m {
                for d in 0..m {
                    if md.inv[c][d].is_zero() {
                        continue;
                    }
                    let kk = k.get(&[a, c, b, d]);
                    if kk.is_zero() {
                        continue;
                    }
                    acc = acc.add(&md.inv[c][d].mul(kk));
                }
            }
            ric.set(&[a, b], acc.clone());
            if a != b {
                ric.set(&[b, a], acc);
            }
        }
    }
    ric
}

pub fn scalar_curvature(md: &MetricData, ric: &Tensor) -> ScalarExpr {
    let m = md.dim;
    let mut acc = ScalarExpr::zero();
    for a in 0..m {
        for b in 0..m {
            if md.inv[a][b].is_zero() {
                continue;
            }
            acc = acc.add(&md.inv[a][b].mul(ric.get(&[a, b])));
        }
    }
    acc
}

/// Schouten tensor `h = (Ric - Sc/(2(m-1)) g) / (m-2)`, defined for m >= 3.
pub fn schouten(md: &MetricData, ric: &Tensor, sc: &ScalarExpr) -> Result<Tensor, GeometryError> {
    let m = md.dim;
    if m < 3 {
        return Err(GeometryError::TooSmall);
    }
    let coeff = ScalarExpr::from_rat(Rat::new(1.into(), (2 * (m as i64 - 1)).into()));
    let correction = md.metric_tensor().scale_expr(&sc.mul(&coeff));
    Ok(ric
        .sub(&correction)
        .scale_expr(&ScalarExpr::rational(1, m as i64 - 2)))
}

/// Kulkarni-Nomizu product of two symmetric 2-tensors:
/// `(t*w)(x,y,z,v) = t(x,z)w(y,v) - w(x,v)t(y,z) + w(x,z)t(y,v) - t(x,v)w(y,z)`.
pub fn kulkarni_nomizu(theta: &Tensor, omega: &Tensor) -> Tensor {
    let m = theta.dim;
    let mut out = Tensor::zeros(m, 4);
    for x in 0..m {
        for y in 0..m {
            for z in 0..m {
                for v in 0..m {
                    let e = theta
                        .get(&[x, z])
                        .mul(omega.get(&[y, v]))
                        .sub(&omega.get(&[x, v]).mul(theta.get(&[y, z])))
                        .add(&omega.get(&[x, z]).mul(theta.get(&[y, v])))
                        .sub(&theta.get(&[x, v]).mul(omega.get(&[y, z])));
                    out.set(&[x, y, z, v], e);
                }
            }
        }
    }
    out
}

/// Raise the second slot through the inverse metric:
/// `out[a][b][c][d] = g^{be} W_{aecd}`.
pub fn raise_second(md: &MetricData, w: &Tensor) -> Tensor {
    let m = md.dim;
    let mut out = Tensor::zeros(m, 4);
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                for d in 0..m {
                    let mut acc = ScalarExpr::zero();
                    for e in 0..m {
                        if md.inv[b][e].is_zero() {
                            continue;
                        }
                        let v = w.get(&[a, e, c, d]);
                        if v.is_zero() {
                            continue;
                        }
                        acc = acc.add(&md.inv[b][e].mul(v));
                    }
                    out.set(&[a, b, c, d], acc);
                }
            }
        }
    }
    out
}

/// The whole curvature stack of one metric.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub md: MetricData,
    pub conn: ConnectionCoeffs,
    pub k: Tensor,
    pub ric: Tensor,
    pub sc: ScalarExpr,
    pub h: Tensor,
    /// Weyl (0,4); only meaningful for dim >= 4 (zero tensor below that).
    pub w: Tensor,
    /// Weyl with the second slot raised; conformally invariant.
    pub w13: Tensor,
}

impl CurvatureBundle {
    pub fn compute(md: MetricData) -> Result<CurvatureBundle, GeometryError> {
        let conn = christoffel(&md)?;
        let k = riemann(&md, &conn);
        let ric = ricci(&md, &k);
        let sc = scalar_curvature(&md, &ric);
        let (h, w, w13);
        if md.dim >= 3 {
            h = schouten(&md, &ric, &sc)?;
            if md.dim >= 4 {
                w = k.sub(&kulkarni_nomizu(&h, &md.metric_tensor()));
                w13 = raise_second(&md, &w);
            } else {
                w = Tensor::zeros(md.dim, 4);
                w13 = Tensor::zeros(md.dim, 4);
            }
        } else {
            h = Tensor::zeros(md.dim, 2);
            w = Tensor::zeros(md.dim, 4);
            w13 = Tensor::zeros(md.dim, 4);
        }
        Ok(CurvatureBundle {
            md,
            conn,
            k,
            ric,
            sc,
            h,
            w,
            w13,
        })
    }

    pub fn of_chart(mc: &MetricChart) -> Result<CurvatureBundle, GeometryError> {
        CurvatureBundle::compute(MetricData::from_chart(mc)?)
    }

    /// Frame components of a covariant tensor of this bundle.
    pub fn in_frame(&self, t: &Tensor, frame: &Frame) -> Tensor {
        t.in_frame(frame)
    }
}

/// Order of the tau pole of an expression (0 when smooth at the locus).
pub fn tau_pole_order(e: &ScalarExpr, tau: &Tau) -> u32 {
    let xg = crate::expr::Gen::coord(tau.coord);
    if e.den().contains_gen(&xg) {
        e.den().min_exponent_of(&xg)
    } else {
        0
    }
}

/// Largest tau pole order across a tensor's components.
pub fn max_pole_order(t: &Tensor, tau: &Tau) -> u32 {
    t.components()
        .iter()
        .map(|e| tau_pole_order(e, tau))
        .max()
        .unwrap_or(0)
}

/// All six pair traces of a (0,4) tensor through the inverse metric; used to
/// check total trace-freeness of the Weyl tensor.
pub fn pair_traces(md: &MetricData, t: &Tensor) -> Vec<Tensor> {
    let m = md.dim;
    let pairs: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut out = Vec::new();
    for (p, q) in pairs {
        let mut tr = Tensor::zeros(m, 2);
        let free: Vec<usize> = (0..4).filter(|s| *s != p && *s != q).collect();
        for i in 0..m {
            for j in 0..m {
                let mut acc = ScalarExpr::zero();
                for a in 0..m {
                    for b in 0..m {
                        if md.inv[a][b].is_zero() {
                            continue;
                        }
                        let mut idx = [0usize; 4];
                        idx[p] = a;
                        idx[q] = b;
                        idx[free[0]] = i;
                        idx[free[1]] = j;
                        let v = t.get(&idx);
                        if v.is_zero() {
                            continue;
                        }
                        acc = acc.add(&md.inv[a][b].mul(v));
                    }
                }
                tr.set(&[i, j], acc);
            }
        }
        out.push(tr);
    }
    out
}

/// Covariant derivative of a (0,2) tensor: `out[a][b][c] = (D_a T)(b,c)`.
pub fn covariant_derivative_2tensor(conn: &ConnectionCoeffs, t: &Tensor) -> Tensor {
    let m = t.dim;
    let g2 = &conn.second;
    let mut out = Tensor::zeros(m, 3);
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                let mut acc = t.get(&[b, c]).differentiate(a);
                for e in 0..m {
                    let gb = g2.get(&[a, b, e]);
                    if !gb.is_zero() {
                        acc = acc.sub(&gb.mul(t.get(&[e, c])));
                    }
                    let gc = g2.get(&[a, c, e]);
                    if !gc.is_zero() {
                        acc = acc.sub(&gc.mul(t.get(&[b, e])));
                    }
                }
                out.set(&[a, b, c], acc);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ScalarExpr as E;

    fn flat(dim: usize) -> MetricData {
        let mut g = vec![vec![E::zero(); dim]; dim];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = E::one();
        }
        MetricData::new(g).unwrap()
    }

    /// g = dx^2 + dy^2 + dz^2 + t dt^2 on coordinates (x,y,z,t).
    fn model() -> MetricData {
        let mut g = vec![vec![E::zero(); 4]; 4];
        for (i, row) in g.iter_mut().enumerate().take(3) {
            row[i] = E::one();
        }
        g[3][3] = E::coord(3);
        MetricData::new(g).unwrap()
    }

    /// Warped product with f = 1+t over flat 3-space: g = f^2 delta - t dt^2.
    fn warped_1pt() -> MetricData {
        let f = E::one().add(&E::coord(3));
        let f2 = f.mul(&f);
        let mut g = vec![vec![E::zero(); 4]; 4];
        for (i, row) in g.iter_mut().enumerate().take(3) {
            row[i] = f2.clone();
        }
        g[3][3] = E::coord(3).neg();
        MetricData::new(g).unwrap()
    }

    /// Round 3-sphere in stereographic coordinates: g = 4 delta / (1+r^2)^2.
    fn sphere3() -> MetricData {
        let r2 = E::coord(0)
            .pow_u(2)
            .add(&E::coord(1).pow_u(2))
            .add(&E::coord(2).pow_u(2));
        let conf = E::int(4).div(&E::one().add(&r2).pow_u(2)).unwrap();
        let mut g = vec![vec![E::zero(); 3]; 3];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = conf.clone();
        }
        MetricData::new(g).unwrap()
    }

    #[test]
    fn flat_space_is_flat() {
        let b = CurvatureBundle::compute(flat(4)).unwrap();
        assert!(b.conn.first.is_zero());
        assert!(b.k.is_zero());
        assert!(b.ric.is_zero());
        assert!(b.sc.is_zero());
        assert!(b.w.is_zero());
    }

    #[test]
    fn model_metric_connection_and_flatness() {
        let md = model();
        let first = dual_connection(&md);
        // G_{tt,t} = 1/2, all others vanish
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let v = first.get(&[a, b, c]);
                    if (a, b, c) == (3, 3, 3) {
                        assert_eq!(*v, E::rational(1, 2));
                    } else {
                        assert!(v.is_zero(), "G_{{{a}{b},{c}}} = {v:?}");
                    }
                }
            }
        }
        let b = CurvatureBundle::compute(md).unwrap();
        // G^t_{tt} = 1/(2t)
        let expected = E::one()
            .div(&E::coord(3).scale(&Rat::from_integer(2.into())))
            .unwrap();
        assert_eq!(*b.conn.second.get(&[3, 3, 3]), expected);
        assert!(b.k.is_zero());
        assert!(b.w.is_zero());
    }

    #[test]
    fn dual_connection_on_warped_time_direction() {
        // g_tt = -t gives G_{tt,t} = -1/2 and nabla_U U = U/(2t)
        let md = warped_1pt();
        let conn = christoffel(&md).unwrap();
        assert_eq!(*conn.first.get(&[3, 3, 3]), E::rational(-1, 2));
        let expected = E::one()
            .div(&E::coord(3).scale(&Rat::from_integer(2.into())))
            .unwrap();
        assert_eq!(*conn.second.get(&[3, 3, 3]), expected);
        // nabla_U X = (f'/f) X
        let f = E::one().add(&E::coord(3));
        let expected = E::one().div(&f).unwrap();
        assert_eq!(*conn.second.get(&[3, 0, 0]), expected);
    }

    #[test]
    fn warped_curvature_closed_values() {
        let md = warped_1pt();
        let b = CurvatureBundle::compute(md).unwrap();
        let t = E::coord(3);
        let f = E::one().add(&t);
        // K_{1212} = (f'^2 f^2 / 2t) * (gS*gS)_{1212} = f^2/t for this f
        let expected = f.pow_u(2).div(&t).unwrap();
        assert_eq!(*b.k.get(&[0, 1, 0, 1]), expected);
        // K_{1t1t} = (f/2)(f'/t - 2f'') = f/(2t)
        let expected = f.div(&t.scale(&Rat::from_integer(2.into()))).unwrap();
        assert_eq!(*b.k.get(&[0, 3, 0, 3]), expected);
        // Ric_tt = ((m-1)/2f)(f'/t - 2f'') = 3/(2tf)
        let expected = E::int(3)
            .div(&t.mul(&f).scale(&Rat::from_integer(2.into())))
            .unwrap();
        assert_eq!(*b.ric.get(&[3, 3]), expected);
        // this warped metric over a flat base is conformally flat
        assert!(b.w.is_zero());
    }

    #[test]
    fn sphere_ricci_and_scalar() {
        let b = CurvatureBundle::compute(sphere3()).unwrap();
        // round sphere of curvature one: Ric = 2g, Sc = 6
        let twice_g = b.md.metric_tensor().scale_expr(&E::int(2));
        assert!(b.ric.sub(&twice_g).is_zero());
        assert_eq!(b.sc, E::int(6));
    }

    #[test]
    fn metric_compatibility_and_symmetry() {
        let md = warped_1pt();
        let first = dual_connection(&md);
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(first.get(&[a, b, 0]), first.get(&[b, a, 0]));
                for c in 0..4 {
                    let dg = md.g[b][c].differentiate(a);
                    let sum = first.get(&[a, b, c]).add(first.get(&[a, c, b]));
                    assert!(dg.sub(&sum).is_zero());
                }
            }
        }
    }

    #[test]
    fn curvature_symmetries_hold_exactly() {
        let b = CurvatureBundle::compute(warped_1pt()).unwrap();
        for a in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    assert!(b.k.get(&[a, a, c, d]).is_zero());
                    for bb in 0..4 {
                        let k1 = b.k.get(&[a, bb, c, d]);
                        let k2 = b.k.get(&[bb, a, c, d]);
                        assert!(k1.add(k2).is_zero());
                        let k3 = b.k.get(&[c, d, a, bb]);
                        assert!(k1.sub(k3).is_zero());
                        let bianchi = b
                            .k
                            .get(&[a, bb, c, d])
                            .add(b.k.get(&[bb, c, a, d]))
                            .add(b.k.get(&[c, a, bb, d]));
                        assert!(bianchi.is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn kulkarni_nomizu_identities() {
        let md = flat(4);
        let g = md.metric_tensor();
        let gg = kulkarni_nomizu(&g, &g);
        // (g*g)(x,y,z,v) = 2(g_xz g_yv - g_xv g_yz); component (1212) -> 2
        assert_eq!(*gg.get(&[0, 1, 0, 1]), E::int(2));
        assert_eq!(*gg.get(&[0, 1, 1, 0]), E::int(-2));
        assert!(gg.get(&[0, 1, 2, 3]).is_zero());
        // commutativity on asymmetric arguments
        let mut theta = Tensor::zeros(4, 2);
        theta.set(&[0, 0], E::coord(0));
        theta.set(&[1, 1], E::int(3));
        let a = kulkarni_nomizu(&theta, &g);
        let b = kulkarni_nomizu(&g, &theta);
        assert!(a.sub(&b).is_zero());
    }

    #[test]
    fn conformally_flat_metric_has_zero_weyl() {
        // g = exp(2 x1) delta on 4-space
        let e2f = E::exp_of(&E::coord(0).scale(&Rat::from_integer(2.into()))).unwrap();
        let mut g = vec![vec![E::zero(); 4]; 4];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = e2f.clone();
        }
        let b = CurvatureBundle::compute(MetricData::new(g).unwrap()).unwrap();
        assert!(!b.k.is_zero());
        assert!(b.w.is_zero());
    }

    #[test]
    fn weyl_is_trace_free() {
        // non-conformally-flat example: g11 = 1 + t on the model degeneracy
        let mut g = vec![vec![E::zero(); 4]; 4];
        g[0][0] = E::one().add(&E::coord(3));
        g[1][1] = E::one();
        g[2][2] = E::one();
        g[3][3] = E::coord(3);
        let b = CurvatureBundle::compute(MetricData::new(g).unwrap()).unwrap();
        assert!(!b.w.is_zero());
        for tr in pair_traces(&b.md, &b.w) {
            assert!(tr.is_zero());
        }
    }

    #[test]
    fn pole_order_tracking() {
        let tau = Tau::coordinate(3);
        let b = CurvatureBundle::compute(model()).unwrap();
        assert_eq!(max_pole_order(&b.conn.first, &tau), 0);
        assert_eq!(max_pole_order(&b.conn.second, &tau), 1);
    }

    fn covariant_derivative_4tensor(conn: &ConnectionCoeffs, t: &Tensor) -> Tensor {
        let m = t.dim;
        let g2 = &conn.second;
        let mut out = Tensor::zeros(m, 5);
        for e in 0..m {
            for idx in t.indices() {
                let mut acc = t.get(&idx).differentiate(e);
                for (slot, &i) in idx.iter().enumerate() {
                    for f in 0..m {
                        let gamma = g2.get(&[e, i, f]);
                        if gamma.is_zero() {
                            continue;
                        }
                        let mut jdx = idx.clone();
                        jdx[slot] = f;
                        acc = acc.sub(&gamma.mul(t.get(&jdx)));
                    }
                }
                let mut full = vec![e];
                full.extend_from_slice(&idx);
                out.set(&full, acc);
            }
        }
        out
    }

    #[test]
    fn second_bianchi_numerically() {
        use crate::expr::Valuations;
        let vals = Valuations::new();
        for md in [warped_1pt(), model()] {
            let b = CurvatureBundle::compute(md).unwrap();
            let dk = covariant_derivative_4tensor(&b.conn, &b.k);
            let pts = [
                [0.3, -0.2, 0.1, 0.4],
                [0.1, 0.2, -0.3, 0.6],
                [-0.4, 0.1, 0.2, 0.35],
            ];
            for p in pts {
                for (a, bb, c, d, e) in [(0, 1, 0, 1, 3), (0, 3, 0, 3, 1), (1, 2, 1, 3, 0)] {
                    let cyc = dk
                        .get(&[e, a, bb, c, d])
                        .add(dk.get(&[c, a, bb, d, e]))
                        .add(dk.get(&[d, a, bb, e, c]));
                    let v = cyc.evaluate(&p, &vals).unwrap();
                    assert!(v.abs() < 1e-8, "second Bianchi residual {v}");
                }
            }
        }
    }
}
