//! Charts, metric charts, tensor fields and adapted frames.
//!
//! One chart per analysis. The degeneracy locus is `{x_m = 0}` where `x_m`
//! is the last coordinate; the degeneracy function is `tau = unit * x_m` for
//! a declared nonvanishing unit. Frames are built by Gram-Schmidt over the
//! expression field, which introduces square-root atoms; the radical frame
//! field is rescaled so that `g(E_m, E_m) = tau` holds exactly.

use serde::Serialize;

use crate::expr::{
    ExprError, FunctionTable, NumericCtx, Rat, ScalarExpr, Strength, Tau, Valuations, ZeroDecision,
};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("metric is not symmetric at entry ({0},{1})")]
    NotSymmetric(usize, usize),
    #[error("metric determinant is identically zero")]
    DetIdenticallyZero,
    #[error("determinant is not divisible by tau; the locus is mis-declared")]
    DetNotDivisible,
    #[error("determinant unit factor vanishes on locus samples")]
    DetUnitVanishes,
    #[error("radical kernel has dimension {0} on the locus")]
    KernelDimension(usize),
    #[error("radical is not aligned with a single coordinate direction; symbolic frames need a block metric")]
    NotBlockDiagonal,
    #[error("frame normalization hit a null direction off the locus")]
    NullDirection,
    #[error("g(R,R)/tau is negative near the locus; declare the opposite sign in tau_unit")]
    TauSignMismatch,
    #[error("chart has too few spatial directions")]
    TooSmall,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A boolean finding together with how it was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub value: bool,
    pub evidence: Strength,
}

impl Verdict {
    pub fn exact(value: bool) -> Verdict {
        Verdict {
            value,
            evidence: Strength::Exact,
        }
    }

    pub fn numeric(value: bool) -> Verdict {
        Verdict {
            value,
            evidence: Strength::Numeric,
        }
    }
}

/// Analysis context: declared locus jets for opaque symbols, the sampling
/// box, and the seed for every quasi-random draw.
#[derive(Debug, Clone)]
pub struct Setting {
    pub fns: FunctionTable,
    pub box_: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Setting {
    pub fn new(fns: FunctionTable, box_: Vec<(f64, f64)>, seed: u64) -> Setting {
        Setting { fns, box_, seed }
    }

    pub fn plain(dim: usize) -> Setting {
        Setting {
            fns: FunctionTable::new(),
            box_: vec![(-0.5, 0.5); dim],
            seed: 0,
        }
    }

    pub fn numeric_ctx(&self, dim: usize, tau_coord: usize) -> NumericCtx {
        NumericCtx::new(dim, tau_coord, self.box_.clone(), self.seed)
            .with_valuations(Valuations::from_table(&self.fns))
    }
}

/// Chart: a list of coordinate names; the dimension is their count.
#[derive(Debug, Clone)]
pub struct Chart {
    pub coords: Vec<String>,
}

impl Chart {
    pub fn new(coords: Vec<String>) -> Chart {
        Chart { coords }
    }

    pub fn standard(dim: usize) -> Chart {
        Chart {
            coords: (1..=dim).map(|i| format!("x{i}")).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Dense covariant/mixed tensor of fixed rank with expression components.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dim: usize,
    pub rank: usize,
    comps: Vec<ScalarExpr>,
}

impl Tensor {
    pub fn zeros(dim: usize, rank: usize) -> Tensor {
        Tensor {
            dim,
            rank,
            comps: vec![ScalarExpr::zero(); dim.pow(rank as u32)],
        }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &ScalarExpr {
        &self.comps[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], e: ScalarExpr) {
        let o = self.offset(idx);
        self.comps[o] = e;
    }

    pub fn components(&self) -> &[ScalarExpr] {
        &self.comps
    }

    pub fn map(&self, f: impl Fn(&ScalarExpr) -> ScalarExpr) -> Tensor {
        Tensor {
            dim: self.dim,
            rank: self.rank,
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn try_map(
        &self,
        mut f: impl FnMut(&ScalarExpr) -> Result<ScalarExpr, ExprError>,
    ) -> Result<Tensor, ExprError> {
        let mut comps = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            comps.push(f(c)?);
        }
        Ok(Tensor {
            dim: self.dim,
            rank: self.rank,
            comps,
        })
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.comps.len(), other.comps.len());
        Tensor {
            dim: self.dim,
            rank: self.rank,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.add(&other.map(|e| e.neg()))
    }

    pub fn scale_expr(&self, s: &ScalarExpr) -> Tensor {
        if s.is_zero() {
            return Tensor::zeros(self.dim, self.rank);
        }
        self.map(|e| e.mul(s))
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|e| e.is_zero())
    }

    /// Iterate over all index tuples of this rank.
    pub fn indices(&self) -> IndexIter {
        IndexIter {
            dim: self.dim,
            idx: vec![0; self.rank],
            done: self.dim == 0 && self.rank > 0,
            first: true,
        }
    }

    /// Express the tensor in a frame: multilinear substitution of the frame
    /// fields into every covariant slot.
    pub fn in_frame(&self, frame: &Frame) -> Tensor {
        let mut out = Tensor::zeros(self.dim, self.rank);
        for idx in out.indices() {
            let mut acc = ScalarExpr::zero();
            for src in self.indices() {
                let c = self.get(&src);
                if c.is_zero() {
                    continue;
                }
                let mut weight = ScalarExpr::one();
                let mut dead = false;
                for (slot, &a) in src.iter().enumerate() {
                    let comp = &frame.fields[idx[slot]].comps[a];
                    if comp.is_zero() {
                        dead = true;
                        break;
                    }
                    weight = weight.mul(comp);
                }
                if dead {
                    continue;
                }
                acc = acc.add(&c.mul(&weight));
            }
            out.set(&idx, acc);
        }
        out
    }
}

pub struct IndexIter {
    dim: usize,
    idx: Vec<usize>,
    done: bool,
    first: bool,
}

impl Iterator for IndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if self.first {
            self.first = false;
            return Some(self.idx.clone());
        }
        for slot in (0..self.idx.len()).rev() {
            self.idx[slot] += 1;
            if self.idx[slot] < self.dim {
                return Some(self.idx.clone());
            }
            self.idx[slot] = 0;
        }
        self.done = true;
        None
    }
}

/// Vector field with expression components in the chart basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub comps: Vec<ScalarExpr>,
}

impl VectorField {
    pub fn new(comps: Vec<ScalarExpr>) -> VectorField {
        VectorField { comps }
    }

    pub fn coordinate(dim: usize, idx: usize) -> VectorField {
        let mut comps = vec![ScalarExpr::zero(); dim];
        comps[idx] = ScalarExpr::one();
        VectorField { comps }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn scale(&self, s: &ScalarExpr) -> VectorField {
        VectorField {
            comps: self.comps.iter().map(|c| c.mul(s)).collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    /// Directional derivative `X(f)`.
    pub fn apply(&self, f: &ScalarExpr) -> ScalarExpr {
        let mut acc = ScalarExpr::zero();
        for (a, c) in self.comps.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            acc = acc.add(&c.mul(&f.differentiate(a)));
        }
        acc
    }
}

/// Orthonormal frame adapted to the degeneracy: `E_m` spans the radical with
/// `g(E_m, E_m) = tau`, the others are orthonormal with signs `eps`.
#[derive(Debug, Clone)]
pub struct Frame {
    pub fields: Vec<VectorField>,
    pub eps: Vec<i8>,
    pub adapted: bool,
    pub completely_adapted: bool,
}

impl Frame {
    pub fn radical(&self) -> &VectorField {
        self.fields.last().expect("frame is nonempty")
    }
}

/// Transversality of the radical against the locus.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Transversality {
    Transverse,
    Tangent,
    /// Mixed verdicts across locus samples; reported per sample.
    NonUniform { transverse_samples: Vec<bool> },
}

/// Metric chart: dimension, coordinate names, symmetric metric components
/// and the designated degeneracy function.
#[derive(Debug, Clone)]
pub struct MetricChart {
    pub chart: Chart,
    g: Vec<ScalarExpr>,
    pub tau: Tau,
}

impl MetricChart {
    /// Build from a full component matrix; checks symmetry exactly.
    pub fn new(
        chart: Chart,
        components: Vec<Vec<ScalarExpr>>,
        tau: Tau,
    ) -> Result<MetricChart, GeometryError> {
        let m = chart.dim();
        if m < 2 {
            return Err(GeometryError::TooSmall);
        }
        let mut g = vec![ScalarExpr::zero(); m * m];
        for i in 0..m {
            for j in 0..m {
                g[i * m + j] = components[i][j].clone();
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if !g[i * m + j].sub(&g[j * m + i]).is_zero() {
                    return Err(GeometryError::NotSymmetric(i, j));
                }
            }
        }
        Ok(MetricChart { chart, g, tau })
    }

    /// Build from the upper triangle (missing entries are zero).
    pub fn from_upper(
        chart: Chart,
        entries: &[(usize, usize, ScalarExpr)],
        tau: Tau,
    ) -> Result<MetricChart, GeometryError> {
        let m = chart.dim();
        let mut full = vec![vec![ScalarExpr::zero(); m]; m];
        for (i, j, e) in entries {
            full[*i][*j] = e.clone();
            if i != j {
                full[*j][*i] = e.clone();
            }
        }
        MetricChart::new(chart, full, tau)
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn g(&self, a: usize, b: usize) -> &ScalarExpr {
        &self.g[a * self.dim() + b]
    }

    pub fn metric_tensor(&self) -> Tensor {
        let m = self.dim();
        let mut t = Tensor::zeros(m, 2);
        for a in 0..m {
            for b in 0..m {
                t.set(&[a, b], self.g(a, b).clone());
            }
        }
        t
    }

    pub fn product(&self, v: &VectorField, w: &VectorField) -> ScalarExpr {
        let m = self.dim();
        let mut acc = ScalarExpr::zero();
        for a in 0..m {
            if v.comps[a].is_zero() {
                continue;
            }
            for b in 0..m {
                if w.comps[b].is_zero() {
                    continue;
                }
                acc = acc.add(&v.comps[a].mul(&w.comps[b]).mul(self.g(a, b)));
            }
        }
        acc
    }

    pub fn det(&self) -> ScalarExpr {
        let m = self.dim();
        let rows: Vec<Vec<ScalarExpr>> = (0..m)
            .map(|i| (0..m).map(|j| self.g(i, j).clone()).collect())
            .collect();
        det_expr(&rows)
    }

    /// Inverse metric by adjugate over determinant; introduces the tau poles.
    pub fn inverse(&self) -> Result<Vec<Vec<ScalarExpr>>, GeometryError> {
        let m = self.dim();
        let det = self.det();
        if det.is_zero() {
            return Err(GeometryError::DetIdenticallyZero);
        }
        let rows: Vec<Vec<ScalarExpr>> = (0..m)
            .map(|i| (0..m).map(|j| self.g(i, j).clone()).collect())
            .collect();
        let mut inv = vec![vec![ScalarExpr::zero(); m]; m];
        for i in 0..m {
            for j in 0..m {
                let minor = minor_matrix(&rows, i, j);
                let c = det_expr(&minor);
                let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                // adjugate is the transposed cofactor matrix; symmetry of g
                // makes the transpose immaterial
                inv[j][i] = c.scale(&Rat::from_integer(sign.into())).div(&det)?;
            }
        }
        Ok(inv)
    }

    /// Transverse type-change test: `det g = tau * u` with `u` nonvanishing
    /// on the locus, equivalently `d(det g)` nonzero there.
    pub fn is_transverse_type_changing(
        &self,
        setting: &Setting,
    ) -> Result<Verdict, GeometryError> {
        let ctx = setting.numeric_ctx(self.dim(), self.tau.coord);
        let det = self.det();
        if det.is_zero() {
            return Err(GeometryError::DetIdenticallyZero);
        }
        let quotient = det
            .divide_exact(&self.tau, &setting.fns, Some(&ctx))
            .map_err(|_| GeometryError::DetNotDivisible)?;
        let u_on_sigma = quotient
            .expr
            .restrict(&self.tau, &setting.fns, Some(&ctx))?;
        // d(det)|_Sigma must have a nonvanishing component as well; since
        // det = tau*u this reduces to the same unit check, but test both.
        let mut d_nonzero = false;
        let mut d_strength = Strength::Exact;
        for a in 0..self.dim() {
            let da = det.differentiate(a);
            let r = da.restrict(&self.tau, &setting.fns, Some(&ctx))?;
            if ctx.decide_zero(&r.expr, true) == ZeroDecision::NonZero {
                d_nonzero = true;
                d_strength = d_strength.and(r.strength).and(if r.expr.as_rational().is_some() {
                    Strength::Exact
                } else {
                    Strength::Numeric
                });
                break;
            }
        }
        if !d_nonzero {
            return Ok(Verdict::exact(false));
        }
        let (unit_ok, unit_strength) = decide_unit(&u_on_sigma.expr, &ctx);
        if !unit_ok {
            return Ok(Verdict {
                value: false,
                evidence: unit_strength,
            });
        }
        Ok(Verdict {
            value: true,
            evidence: quotient
                .strength
                .and(u_on_sigma.strength)
                .and(unit_strength)
                .and(d_strength),
        })
    }

    /// Solve `g(R, .) = 0 mod tau` for a radical field, nonvanishing near
    /// the locus, by exact elimination on the locus-restricted matrix.
    pub fn radical_field(&self, setting: &Setting) -> Result<VectorField, GeometryError> {
        let m = self.dim();
        let ctx = setting.numeric_ctx(m, self.tau.coord);
        let mut rows: Vec<Vec<ScalarExpr>> = Vec::with_capacity(m);
        for i in 0..m {
            let mut row = Vec::with_capacity(m);
            for j in 0..m {
                row.push(
                    self.g(i, j)
                        .restrict(&self.tau, &setting.fns, Some(&ctx))?
                        .expr,
                );
            }
            rows.push(row);
        }
        let kernel = kernel_basis(&rows)?;
        if kernel.len() != 1 {
            return Err(GeometryError::KernelDimension(kernel.len()));
        }
        // numeric spot-check: rank m-1 at locus samples
        let vals = Valuations::from_table(&setting.fns);
        for p in ctx.sigma_samples() {
            let mut num = vec![vec![0.0; m]; m];
            let mut ok = true;
            for i in 0..m {
                for j in 0..m {
                    match self.g(i, j).evaluate(&p, &vals) {
                        Ok(v) => num[i][j] = v,
                        Err(_) => {
                            ok = false;
                        }
                    }
                }
            }
            if !ok {
                continue;
            }
            let rank = numeric_rank(&mut num, 1e-9);
            if rank != m - 1 {
                return Err(GeometryError::KernelDimension(m - rank));
            }
        }
        // clear denominators and strip common factors
        let mut v = kernel.into_iter().next().unwrap();
        let mut den = ScalarExpr::one();
        for c in &v {
            if !c.den().is_one() {
                den = den.mul(&ScalarExpr::from_poly(c.den().clone()));
            }
        }
        if !den.is_one() {
            v = v.iter().map(|c| c.mul(&den)).collect();
        }
        Ok(VectorField::new(v))
    }

    /// Transversality of a radical field: `R(tau)` nonzero on the locus.
    pub fn radical_transversality(
        &self,
        radical: &VectorField,
        setting: &Setting,
    ) -> Result<(Transversality, Strength), GeometryError> {
        let ctx = setting.numeric_ctx(self.dim(), self.tau.coord);
        let rtau = radical.apply(&self.tau.expr());
        let restricted = rtau.restrict(&self.tau, &setting.fns, Some(&ctx))?;
        let e = &restricted.expr;
        if e.is_zero() {
            return Ok((Transversality::Tangent, restricted.strength));
        }
        match ctx.decide_zero(e, true) {
            ZeroDecision::ExactZero | ZeroDecision::ProbablyZero => {
                Ok((Transversality::Tangent, Strength::Numeric))
            }
            ZeroDecision::NonZero => {
                // decide uniformity per sample
                let vals = Valuations::from_table(&setting.fns);
                let mut flags = Vec::new();
                for p in ctx.sigma_samples() {
                    if let Ok(v) = e.evaluate(&p, &vals) {
                        flags.push(v.abs() > ctx.tol);
                    }
                }
                let strength = if e.as_rational().is_some() {
                    Strength::Exact
                } else {
                    Strength::Numeric
                };
                if !flags.is_empty() && flags.iter().any(|f| !f) {
                    if flags.iter().any(|f| *f) {
                        return Ok((
                            Transversality::NonUniform {
                                transverse_samples: flags,
                            },
                            Strength::Numeric,
                        ));
                    }
                    return Ok((Transversality::Tangent, Strength::Numeric));
                }
                Ok((
                    Transversality::Transverse,
                    strength.and(restricted.strength),
                ))
            }
        }
    }

    /// True iff the field is tangent to the locus: `X(tau)` vanishes there.
    pub fn tangent_to_sigma(
        &self,
        field: &VectorField,
        setting: &Setting,
    ) -> Result<Verdict, GeometryError> {
        let ctx = setting.numeric_ctx(self.dim(), self.tau.coord);
        let xtau = field.apply(&self.tau.expr());
        let r = xtau.restrict(&self.tau, &setting.fns, Some(&ctx))?;
        Ok(match ctx.decide_zero(&r.expr, true) {
            ZeroDecision::ExactZero => Verdict {
                value: true,
                evidence: r.strength,
            },
            ZeroDecision::ProbablyZero => Verdict::numeric(true),
            ZeroDecision::NonZero => Verdict {
                value: false,
                evidence: if r.expr.as_rational().is_some() {
                    Strength::Exact
                } else {
                    Strength::Numeric
                },
            },
        })
    }

    /// Index of the coordinate direction the radical is aligned with, when
    /// the metric is block-diagonal against it.
    pub fn radical_direction(&self, setting: &Setting) -> Result<usize, GeometryError> {
        let radical = self.radical_field(setting)?;
        let nonzero: Vec<usize> = radical
            .comps
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, _)| i)
            .collect();
        if nonzero.len() != 1 {
            return Err(GeometryError::NotBlockDiagonal);
        }
        Ok(nonzero[0])
    }

    /// Build the adapted orthonormal frame: Gram-Schmidt on the non-radical
    /// coordinate directions, radical last and rescaled to `g(E_m,E_m)=tau`.
    pub fn build_adapted_frame(&self, setting: &Setting) -> Result<Frame, GeometryError> {
        let m = self.dim();
        let r = self.radical_direction(setting)?;
        for i in 0..m {
            if i != r && !self.g(i, r).is_zero() {
                return Err(GeometryError::NotBlockDiagonal);
            }
        }
        let ctx = setting.numeric_ctx(m, self.tau.coord);
        let e_m = self.normalized_radical(r, setting, &ctx)?;
        let inputs: Vec<VectorField> = (0..m)
            .filter(|&i| i != r)
            .map(|i| VectorField::coordinate(m, i))
            .collect();
        let (fields, eps) = self.gram_schmidt(&inputs, &ctx)?;
        self.assemble_frame(fields, eps, e_m, setting)
    }

    /// Orthonormal frame variant for tangent radicals that mixes the
    /// transverse coordinate direction into the first two fields, making
    /// second-order Laurent obstructions visible.
    pub fn obstruction_frame(&self, setting: &Setting) -> Result<Frame, GeometryError> {
        let m = self.dim();
        let r = self.radical_direction(setting)?;
        let t = self.tau.coord;
        if r == t {
            // transverse radical: the plain adapted frame already works
            return self.build_adapted_frame(setting);
        }
        let ctx = setting.numeric_ctx(m, self.tau.coord);
        let e_m = self.normalized_radical(r, setting, &ctx)?;
        let spatial: Vec<usize> = (0..m).filter(|&i| i != r && i != t).collect();
        if spatial.len() < 2 {
            return Err(GeometryError::TooSmall);
        }
        let dt = VectorField::coordinate(m, t);
        let mut inputs = vec![
            VectorField::coordinate(m, spatial[0]).add(&dt),
            VectorField::coordinate(m, spatial[1]).add(&dt),
        ];
        for &i in &spatial[2..] {
            inputs.push(VectorField::coordinate(m, i));
        }
        inputs.push(dt);
        let (fields, eps) = self.gram_schmidt(&inputs, &ctx)?;
        self.assemble_frame(fields, eps, e_m, setting)
    }

    fn normalized_radical(
        &self,
        r: usize,
        setting: &Setting,
        ctx: &NumericCtx,
    ) -> Result<VectorField, GeometryError> {
        // g_rr = tau * w with w a positive unit; E_m = d_r / sqrt(w)
        let q = self.g(r, r).clone();
        let w = q
            .divide_exact(&self.tau, &setting.fns, Some(ctx))
            .map_err(|_| GeometryError::TauSignMismatch)?;
        let w_sign = sign_near_sigma(&w.expr, ctx).ok_or(GeometryError::TauSignMismatch)?;
        if w_sign < 0 {
            return Err(GeometryError::TauSignMismatch);
        }
        Ok(VectorField::coordinate(self.dim(), r)
            .scale(&ScalarExpr::one().div(&w.expr.sqrt()?)?))
    }

    fn assemble_frame(
        &self,
        mut fields: Vec<VectorField>,
        eps: Vec<i8>,
        e_m: VectorField,
        setting: &Setting,
    ) -> Result<Frame, GeometryError> {
        fields.push(e_m);
        let mut completely = true;
        for f in fields.iter().take(fields.len() - 1) {
            if !self.tangent_to_sigma(f, setting)?.value {
                completely = false;
            }
        }
        Ok(Frame {
            fields,
            eps,
            adapted: true,
            completely_adapted: completely,
        })
    }

    fn gram_schmidt(
        &self,
        inputs: &[VectorField],
        ctx: &NumericCtx,
    ) -> Result<(Vec<VectorField>, Vec<i8>), GeometryError> {
        let mut fields: Vec<VectorField> = Vec::new();
        let mut eps: Vec<i8> = Vec::new();
        for v in inputs {
            let mut w = v.clone();
            for (e, &s) in fields.iter().zip(&eps) {
                let proj = self.product(&w, e).scale(&Rat::from_integer(s.into()));
                w = w.sub(&e.scale(&proj));
            }
            let n2 = self.product(&w, &w);
            if n2.is_zero() {
                return Err(GeometryError::NullDirection);
            }
            let s = sign_near_sigma(&n2, ctx).ok_or(GeometryError::NullDirection)?;
            let signed = if s < 0 { n2.neg() } else { n2.clone() };
            let norm = signed.sqrt()?;
            fields.push(w.scale(&ScalarExpr::one().div(&norm)?));
            eps.push(s);
        }
        Ok((fields, eps))
    }

    /// Signature of g at a point: (negative, zero, positive) eigenvalue
    /// counts.
    pub fn signature_at(
        &self,
        point: &[f64],
        vals: &Valuations,
    ) -> Result<(usize, usize, usize), GeometryError> {
        let m = self.dim();
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                a[i][j] = self
                    .g(i, j)
                    .evaluate(point, vals)
                    .map_err(|_| GeometryError::DetIdenticallyZero)?;
            }
        }
        let eigs = jacobi_eigenvalues(&mut a);
        let tol = 1e-9;
        let neg = eigs.iter().filter(|&&e| e < -tol).count();
        let pos = eigs.iter().filter(|&&e| e > tol).count();
        Ok((neg, m - neg - pos, pos))
    }

    /// Floating-point orthonormal frame at a single point, for metrics the
    /// symbolic constructions do not cover.
    pub fn numeric_frame_at(
        &self,
        point: &[f64],
        vals: &Valuations,
    ) -> Result<Vec<Vec<f64>>, GeometryError> {
        let m = self.dim();
        let mut gmat = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                gmat[i][j] = self
                    .g(i, j)
                    .evaluate(point, vals)
                    .map_err(|_| GeometryError::DetIdenticallyZero)?;
            }
        }
        let dot = |a: &[f64], b: &[f64]| {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += a[i] * gmat[i][j] * b[j];
                }
            }
            acc
        };
        let mut frame: Vec<Vec<f64>> = Vec::new();
        let mut signs: Vec<f64> = Vec::new();
        for k in 0..m {
            let mut v = vec![0.0; m];
            v[k] = 1.0;
            for (e, s) in frame.iter().zip(&signs) {
                let p = dot(&v, e) * s;
                for i in 0..m {
                    v[i] -= p * e[i];
                }
            }
            let n2 = dot(&v, &v);
            if n2.abs() < 1e-12 {
                continue; // direction inside the radical at this point
            }
            let s = n2.signum();
            let n = (s * n2).sqrt();
            for x in v.iter_mut() {
                *x /= n;
            }
            signs.push(s);
            frame.push(v);
        }
        Ok(frame)
    }
}

fn decide_unit(u_on_sigma: &ScalarExpr, ctx: &NumericCtx) -> (bool, Strength) {
    if let Some(c) = u_on_sigma.as_rational() {
        use num_traits::Zero;
        return (!c.is_zero(), Strength::Exact);
    }
    (ctx.decide_nonvanishing(u_on_sigma, true), Strength::Numeric)
}

/// Sign of an expression near the locus: exact for rational constants, else
/// sampled with a consistency requirement across the box.
pub fn sign_near_sigma(e: &ScalarExpr, ctx: &NumericCtx) -> Option<i8> {
    use num_traits::Signed as _;
    if let Some(c) = e.as_rational() {
        if c.is_positive() {
            return Some(1);
        } else if c.is_negative() {
            return Some(-1);
        }
        return None;
    }
    let mut sign = 0i8;
    let mut seen = 0;
    for p in ctx
        .sigma_samples()
        .into_iter()
        .chain(ctx.off_sigma_samples())
    {
        match e.evaluate(&p, &ctx.vals) {
            Ok(v) if v.abs() > 1e-12 => {
                let s = if v > 0.0 { 1 } else { -1 };
                if sign == 0 {
                    sign = s;
                } else if sign != s {
                    return None;
                }
                seen += 1;
            }
            _ => continue,
        }
    }
    if seen == 0 {
        None
    } else {
        Some(sign)
    }
}

fn minor_matrix(rows: &[Vec<ScalarExpr>], skip_i: usize, skip_j: usize) -> Vec<Vec<ScalarExpr>> {
    rows.iter()
        .enumerate()
        .filter(|(i, _)| *i != skip_i)
        .map(|(_, row)| {
            row.iter()
                .enumerate()
                .filter(|(j, _)| *j != skip_j)
                .map(|(_, e)| e.clone())
                .collect()
        })
        .collect()
}

/// Determinant by cofactor expansion along the first column.
pub fn det_expr(rows: &[Vec<ScalarExpr>]) -> ScalarExpr {
    let n = rows.len();
    if n == 0 {
        return ScalarExpr::one();
    }
    if n == 1 {
        return rows[0][0].clone();
    }
    if n == 2 {
        return rows[0][0]
            .mul(&rows[1][1])
            .sub(&rows[0][1].mul(&rows[1][0]));
    }
    let mut acc = ScalarExpr::zero();
    for i in 0..n {
        if rows[i][0].is_zero() {
            continue;
        }
        let minor = minor_matrix(rows, i, 0);
        let term = rows[i][0].mul(&det_expr(&minor));
        acc = if i % 2 == 0 {
            acc.add(&term)
        } else {
            acc.sub(&term)
        };
    }
    acc
}

/// Kernel basis of a symbolic matrix by Gauss elimination over the
/// expression field. Pivot choice is structural nonzero-ness, which is exact
/// after locus restriction has substituted declared values.
fn kernel_basis(rows: &[Vec<ScalarExpr>]) -> Result<Vec<Vec<ScalarExpr>>, GeometryError> {
    let m = rows.len();
    let n = rows[0].len();
    let mut a: Vec<Vec<ScalarExpr>> = rows.to_vec();
    let mut pivot_cols = Vec::new();
    let mut rank = 0usize;
    for col in 0..n {
        let mut pivot = None;
        for (r, row) in a.iter().enumerate().skip(rank) {
            if !row[col].is_zero() {
                pivot = Some(r);
                break;
            }
        }
        let Some(p) = pivot else { continue };
        a.swap(rank, p);
        let inv = ScalarExpr::one().div(&a[rank][col].clone())?;
        for j in 0..n {
            a[rank][j] = a[rank][j].mul(&inv);
        }
        for r in 0..m {
            if r == rank || a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone();
            for j in 0..n {
                let s = a[rank][j].mul(&factor);
                a[r][j] = a[r][j].sub(&s);
            }
        }
        pivot_cols.push(col);
        rank += 1;
    }
    let free_cols: Vec<usize> = (0..n).filter(|c| !pivot_cols.contains(c)).collect();
    let mut basis = Vec::new();
    for &fc in &free_cols {
        let mut v = vec![ScalarExpr::zero(); n];
        v[fc] = ScalarExpr::one();
        for (r, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = a[r][fc].neg();
        }
        basis.push(v);
    }
    Ok(basis)
}

fn numeric_rank(a: &mut [Vec<f64>], tol: f64) -> usize {
    let m = a.len();
    let n = a[0].len();
    let mut rank = 0;
    for col in 0..n {
        let mut best = rank;
        for r in rank..m {
            if a[r][col].abs() > a[best][col].abs() {
                best = r;
            }
        }
        if a[best][col].abs() <= tol {
            continue;
        }
        a.swap(rank, best);
        let p = a[rank][col];
        for r in 0..m {
            if r == rank {
                continue;
            }
            let f = a[r][col] / p;
            for j in 0..n {
                a[r][j] -= f * a[rank][j];
            }
        }
        rank += 1;
    }
    rank
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(a: &mut [Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[cfg(test)]
pub(crate) mod test_metrics {
    use super::*;

    /// Flat normal form: g = dx1^2 + ... + tau dxm^2 with tau = x_m.
    pub fn model_metric(m: usize) -> MetricChart {
        let chart = Chart::standard(m);
        let tau = Tau::coordinate(m - 1);
        let mut entries = Vec::new();
        for i in 0..m - 1 {
            entries.push((i, i, ScalarExpr::one()));
        }
        entries.push((m - 1, m - 1, ScalarExpr::coord(m - 1)));
        MetricChart::from_upper(chart, &entries, tau).unwrap()
    }

    /// Tangent-radical variant: the degenerate direction is x3, not x4.
    pub fn tangent_model() -> MetricChart {
        let chart = Chart::standard(4);
        let tau = Tau::coordinate(3);
        let entries = vec![
            (0, 0, ScalarExpr::one()),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::coord(3)),
            (3, 3, ScalarExpr::one()),
        ];
        MetricChart::from_upper(chart, &entries, tau).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_metrics::{model_metric, tangent_model};
    use super::*;

    #[test]
    fn determinant_and_inverse() {
        let g = model_metric(4);
        let det = g.det();
        assert_eq!(det, ScalarExpr::coord(3));
        let inv = g.inverse().unwrap();
        assert_eq!(inv[0][0], ScalarExpr::one());
        assert_eq!(
            inv[3][3],
            ScalarExpr::one().div(&ScalarExpr::coord(3)).unwrap()
        );
        assert!(inv[0][3].is_zero());
    }

    #[test]
    fn transverse_detection() {
        let setting = Setting::plain(4);
        let g = model_metric(4);
        let v = g.is_transverse_type_changing(&setting).unwrap();
        assert!(v.value);
        assert_eq!(v.evidence, Strength::Exact);

        // (x4)^2 factor: d(det) vanishes on the locus
        let chart = Chart::standard(4);
        let sq = ScalarExpr::coord(3).pow_u(2);
        let entries = vec![
            (0, 0, ScalarExpr::one()),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::one()),
            (3, 3, sq),
        ];
        let g2 = MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap();
        let v2 = g2.is_transverse_type_changing(&setting).unwrap();
        assert!(!v2.value);
    }

    #[test]
    fn radical_of_model_metric() {
        let setting = Setting::plain(4);
        let g = model_metric(4);
        let r = g.radical_field(&setting).unwrap();
        assert_eq!(r, VectorField::coordinate(4, 3));
        let (t, s) = g.radical_transversality(&r, &setting).unwrap();
        assert_eq!(t, Transversality::Transverse);
        assert_eq!(s, Strength::Exact);
    }

    #[test]
    fn radical_of_tangent_model() {
        let setting = Setting::plain(4);
        let g = tangent_model();
        let r = g.radical_field(&setting).unwrap();
        assert_eq!(r, VectorField::coordinate(4, 2));
        let (t, _) = g.radical_transversality(&r, &setting).unwrap();
        assert_eq!(t, Transversality::Tangent);
    }

    #[test]
    fn radical_with_offdiagonal_tau_block() {
        // g_14 = tau keeps the radical aligned with d_4
        let setting = Setting::plain(4);
        let chart = Chart::standard(4);
        let t = ScalarExpr::coord(3);
        let entries = vec![
            (0, 0, ScalarExpr::one()),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::one()),
            (3, 3, t.clone()),
            (0, 3, t.clone()),
        ];
        let g = MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap();
        let r = g.radical_field(&setting).unwrap();
        assert_eq!(r, VectorField::coordinate(4, 3));
    }

    #[test]
    fn adapted_frame_of_model() {
        let setting = Setting::plain(4);
        let g = model_metric(4);
        let f = g.build_adapted_frame(&setting).unwrap();
        assert!(f.adapted && f.completely_adapted);
        assert_eq!(f.eps, vec![1, 1, 1]);
        for i in 0..3 {
            assert_eq!(f.fields[i], VectorField::coordinate(4, i));
        }
        assert_eq!(*f.radical(), VectorField::coordinate(4, 3));
        // frame products reproduce the signs and tau exactly
        for i in 0..3 {
            for j in 0..3 {
                let p = g.product(&f.fields[i], &f.fields[j]);
                if i == j {
                    assert!(p.is_one());
                } else {
                    assert!(p.is_zero());
                }
            }
            assert!(g.product(&f.fields[i], f.radical()).is_zero());
        }
        assert_eq!(g.product(f.radical(), f.radical()), g.tau.expr());
    }

    #[test]
    fn gram_schmidt_normalizes_scaled_directions() {
        // g11 = 1 + x1^2 gives E1 = d1 / sqrt(1 + x1^2)
        let setting = Setting::plain(4);
        let chart = Chart::standard(4);
        let g11 = ScalarExpr::one().add(&ScalarExpr::coord(0).pow_u(2));
        let entries = vec![
            (0, 0, g11.clone()),
            (1, 1, ScalarExpr::one()),
            (2, 2, ScalarExpr::one()),
            (3, 3, ScalarExpr::coord(3)),
        ];
        let g = MetricChart::from_upper(chart, &entries, Tau::coordinate(3)).unwrap();
        let f = g.build_adapted_frame(&setting).unwrap();
        let expected = VectorField::coordinate(4, 0)
            .scale(&ScalarExpr::one().div(&g11.sqrt().unwrap()).unwrap());
        assert_eq!(f.fields[0], expected);
        assert!(g.product(&f.fields[0], &f.fields[0]).is_one());
    }

    #[test]
    fn tangency_of_coordinate_fields() {
        let setting = Setting::plain(4);
        let g = model_metric(4);
        let d1 = VectorField::coordinate(4, 0);
        let dm = VectorField::coordinate(4, 3);
        assert!(g.tangent_to_sigma(&d1, &setting).unwrap().value);
        assert!(!g.tangent_to_sigma(&dm, &setting).unwrap().value);
        // x4*d1 + d2 is tangent
        let mixed = d1
            .scale(&ScalarExpr::coord(3))
            .add(&VectorField::coordinate(4, 1));
        assert!(g.tangent_to_sigma(&mixed, &setting).unwrap().value);
    }

    #[test]
    fn signature_jumps_by_one_across_locus() {
        let g = model_metric(4);
        let vals = Valuations::new();
        let (neg_plus, _, _) = g.signature_at(&[0.1, 0.1, 0.1, 0.4], &vals).unwrap();
        let (neg_minus, _, _) = g.signature_at(&[0.1, 0.1, 0.1, -0.4], &vals).unwrap();
        assert_eq!(neg_plus, 0);
        assert_eq!(neg_minus, 1);
    }

    #[test]
    fn obstruction_frame_mixes_transverse_direction() {
        let setting = Setting::plain(4);
        let g = tangent_model();
        let f = g.obstruction_frame(&setting).unwrap();
        assert!(!f.completely_adapted);
        // first two fields must be transverse to the locus
        for i in 0..2 {
            assert!(!g.tangent_to_sigma(&f.fields[i], &setting).unwrap().value);
        }
        // still orthonormal
        for i in 0..3 {
            for j in 0..3 {
                let p = g.product(&f.fields[i], &f.fields[j]);
                if i == j {
                    assert!(p.is_one(), "norm of E{i} is {p:?}");
                } else {
                    assert!(p.is_zero(), "product E{i}E{j} = {p:?}");
                }
            }
        }
        assert_eq!(g.product(f.radical(), f.radical()), g.tau.expr());
    }

    #[test]
    fn numeric_frame_off_locus() {
        let g = model_metric(4);
        let vals = Valuations::new();
        let f = g.numeric_frame_at(&[0.1, 0.2, 0.3, 0.5], &vals).unwrap();
        assert_eq!(f.len(), 4);
    }

    #[test]
    fn index_iteration_covers_all_tuples() {
        let t = Tensor::zeros(3, 2);
        let all: Vec<_> = t.indices().collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[8], vec![2, 2]);
    }
}
