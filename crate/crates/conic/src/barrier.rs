//! Primal log-barrier path-following backend.
//!
//! Phase I maximizes `−s` over the program whose cones are all shifted
//! outward by `s` (and whose PSD blocks are shifted by `s·I`), starting from
//! a least-norm solution of the equalities. Phase II follows the central path
//! of the original program from the strictly feasible point found.
//!
//! The Newton system never forms the `n² × n²` Hessian of `−log det X`.
//! Cone rows that touch a PSD block get explicit multipliers and the block
//! directions are eliminated through `(∇²)⁻¹[Δ] = X Δ X`, leaving a dense
//! system whose size is the number of block-touching rows plus scalars plus
//! equalities.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::program::{AffineExpr, Constraint, ConvexProgram, HermitianCoef, Sense};
use crate::{ConicBackend, ProgramError, Residuals, Solution, Status, Tolerances};

type CMat = DMatrix<Complex64>;

const CZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Log-barrier interior-point solver.
#[derive(Clone, Copy, Debug)]
pub struct BarrierSolver {
    /// Barrier-parameter growth factor between centering rounds.
    pub growth: f64,
    /// Centering stops once `λ²/2` (Newton decrement) drops below this.
    pub newton_tol: f64,
}

impl Default for BarrierSolver {
    fn default() -> Self {
        Self {
            growth: 12.0,
            newton_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
struct Coef {
    identity: f64,
    rank_one: Vec<(f64, DVector<Complex64>)>,
    dense: Option<CMat>,
}

impl Coef {
    fn new(c: &HermitianCoef, n: usize) -> Self {
        let dense = c.dense.as_ref().map(|d| CMat::from_row_slice(n, n, d));
        Self {
            identity: c.identity,
            rank_one: c
                .rank_one
                .iter()
                .filter(|r| r.weight != 0.0)
                .map(|r| (r.weight, DVector::from_column_slice(&r.vector)))
                .collect(),
            dense,
        }
    }

    fn merge(&mut self, other: Coef) {
        self.identity += other.identity;
        self.rank_one.extend(other.rank_one);
        self.dense = match (self.dense.take(), other.dense) {
            (Some(a), Some(b)) => Some(a + b),
            (a, b) => a.or(b),
        };
    }

    fn apply_no_dense(&self, x: &CMat) -> f64 {
        let mut acc = 0.0;
        if self.identity != 0.0 {
            acc += self.identity * x.diagonal().iter().map(|z| z.re).sum::<f64>();
        }
        for (w, v) in &self.rank_one {
            acc += w * crate::program::quad_form(v.as_slice(), x);
        }
        acc
    }

    /// `Re tr(C X)`.
    fn apply(&self, x: &CMat) -> f64 {
        let mut acc = self.apply_no_dense(x);
        if let Some(d) = &self.dense {
            acc += re_trace_product(d, x);
        }
        acc
    }

    fn trace(&self, n: usize) -> f64 {
        self.identity * n as f64
            + self.rank_one.iter().map(|(w, v)| w * v.norm_squared()).sum::<f64>()
            + self
                .dense
                .as_ref()
                .map_or(0.0, |d| d.diagonal().iter().map(|z| z.re).sum())
    }
}

/// `Re tr(A B)` for square matrices.
fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

#[derive(Clone, Debug, Default)]
struct Row {
    constant: f64,
    x: Vec<(usize, f64)>,
    blocks: Vec<(usize, Coef)>,
}

impl Row {
    fn new(e: &AffineExpr, sizes: &[usize]) -> Self {
        let mut x: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, a) in &e.terms {
            *x.entry(v.0).or_insert(0.0) += a;
        }
        let mut blocks: BTreeMap<usize, Coef> = BTreeMap::new();
        for (b, c) in &e.blocks {
            let c = Coef::new(c, sizes[b.0]);
            match blocks.get_mut(&b.0) {
                Some(existing) => existing.merge(c),
                None => {
                    blocks.insert(b.0, c);
                }
            }
        }
        Self {
            constant: e.constant,
            x: x.into_iter().filter(|(_, a)| *a != 0.0).collect(),
            blocks: blocks.into_iter().collect(),
        }
    }

    fn block(&self, b: usize) -> Option<&Coef> {
        self.blocks.iter().find(|(i, _)| *i == b).map(|(_, c)| c)
    }

    fn linear(&self, x: &DVector<f64>, blocks: &[CMat]) -> f64 {
        self.x.iter().map(|(i, a)| a * x[*i]).sum::<f64>()
            + self.blocks.iter().map(|(b, c)| c.apply(&blocks[*b])).sum::<f64>()
    }

    fn eval(&self, p: &Point) -> f64 {
        self.constant + self.linear(&p.x, &p.blocks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    NonNeg,
    Soc,
    LogHypo,
}

#[derive(Clone, Debug)]
struct Cone {
    kind: Kind,
    start: usize,
    len: usize,
    touches_blocks: bool,
}

impl Kind {
    fn degree(self) -> f64 {
        match self {
            Kind::NonNeg => 1.0,
            Kind::Soc | Kind::LogHypo => 2.0,
        }
    }

    fn barrier(self, u: &[f64]) -> Option<f64> {
        match self {
            Kind::NonNeg => (u[0] > 0.0).then(|| -u[0].ln()),
            Kind::Soc => {
                let d = soc_gap(u);
                (u[0] > 0.0 && d > 0.0).then(|| -d.ln())
            }
            Kind::LogHypo => {
                if u[1] <= 0.0 {
                    return None;
                }
                let psi = u[1].ln() - u[0];
                (psi > 0.0).then(|| -psi.ln() - u[1].ln())
            }
        }
    }

    fn gradient(self, u: &[f64]) -> Vec<f64> {
        match self {
            Kind::NonNeg => vec![-1.0 / u[0]],
            Kind::Soc => {
                let d = soc_gap(u);
                let mut g: Vec<f64> = u.iter().map(|v| 2.0 * v / d).collect();
                g[0] = -2.0 * u[0] / d;
                g
            }
            Kind::LogHypo => {
                let (s, y) = (u[0], u[1]);
                let psi = y.ln() - s;
                vec![1.0 / psi, -1.0 / (psi * y) - 1.0 / y]
            }
        }
    }

    fn hessian(self, u: &[f64]) -> DMatrix<f64> {
        match self {
            Kind::NonNeg => DMatrix::from_element(1, 1, 1.0 / (u[0] * u[0])),
            Kind::Soc => {
                let n = u.len();
                let d = soc_gap(u);
                let qu: Vec<f64> = (0..n).map(|i| if i == 0 { u[0] } else { -u[i] }).collect();
                DMatrix::from_fn(n, n, |i, j| {
                    let q = if i != j {
                        0.0
                    } else if i == 0 {
                        -2.0 / d
                    } else {
                        2.0 / d
                    };
                    q + 4.0 * qu[i] * qu[j] / (d * d)
                })
            }
            Kind::LogHypo => {
                let (s, y) = (u[0], u[1]);
                let psi = y.ln() - s;
                let p2 = psi * psi;
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        1.0 / p2,
                        -1.0 / (p2 * y),
                        -1.0 / (p2 * y),
                        1.0 / (p2 * y * y) + 1.0 / (psi * y * y) + 1.0 / (y * y),
                    ],
                )
            }
        }
    }

    fn hessian_inverse(self, u: &[f64]) -> DMatrix<f64> {
        match self {
            Kind::NonNeg => DMatrix::from_element(1, 1, u[0] * u[0]),
            Kind::Soc => {
                // (∇²)⁻¹ = u uᵀ − (δ/2) Q with Q = diag(1, −1, …, −1).
                let n = u.len();
                let d = soc_gap(u);
                DMatrix::from_fn(n, n, |i, j| {
                    let q = if i != j {
                        0.0
                    } else if i == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    u[i] * u[j] - 0.5 * d * q
                })
            }
            Kind::LogHypo => {
                let h = self.hessian(u);
                let det = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
                DMatrix::from_row_slice(2, 2, &[h[(1, 1)] / det, -h[(0, 1)] / det, -h[(1, 0)] / det, h[(0, 0)] / det])
            }
        }
    }

    /// Phase-I shift direction for each row of the cone.
    fn shift(self, len: usize) -> Vec<f64> {
        match self {
            Kind::NonNeg => vec![1.0],
            Kind::Soc => {
                let mut v = vec![0.0; len];
                v[0] = 1.0;
                v
            }
            Kind::LogHypo => vec![-1.0, 1.0],
        }
    }

    /// Smallest shift `s` making the cone strictly feasible at `u`.
    fn required_shift(self, u: &[f64]) -> f64 {
        match self {
            Kind::NonNeg => -u[0],
            Kind::Soc => u[1..].iter().map(|v| v * v).sum::<f64>().sqrt() - u[0],
            Kind::LogHypo => {
                let (v, y) = (u[0], u[1]);
                let f = |s: f64| (y + s).ln() - v + s;
                let mut lo = -y;
                let mut hi = (-y).max(0.0) + 1.0;
                while f(hi) <= 0.0 {
                    hi = 2.0 * hi + 1.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }

    fn margin(self, u: &[f64]) -> f64 {
        match self {
            Kind::NonNeg => u[0],
            Kind::Soc => u[0] - u[1..].iter().map(|v| v * v).sum::<f64>().sqrt(),
            Kind::LogHypo => {
                if u[1] <= 0.0 {
                    u[1]
                } else {
                    (u[1].ln() - u[0]).min(u[1])
                }
            }
        }
    }
}

fn soc_gap(u: &[f64]) -> f64 {
    u[0] * u[0] - u[1..].iter().map(|v| v * v).sum::<f64>()
}

#[derive(Clone, Debug)]
struct Compiled {
    nx: usize,
    sizes: Vec<usize>,
    objective: Row,
    rows: Vec<Row>,
    cones: Vec<Cone>,
    eqs: Vec<Row>,
}

impl Compiled {
    fn new(p: &ConvexProgram) -> Self {
        let sizes = p.block_sizes.clone();
        let mut objective = Row::new(&p.objective, &sizes);
        if p.sense == Sense::Minimize {
            objective.constant = -objective.constant;
            objective.x.iter_mut().for_each(|t| t.1 = -t.1);
            objective.blocks.iter_mut().for_each(|(_, c)| {
                c.identity = -c.identity;
                c.rank_one.iter_mut().for_each(|r| r.0 = -r.0);
                if let Some(d) = &mut c.dense {
                    *d = -d.clone();
                }
            });
        }
        let mut rows = Vec::new();
        let mut cones = Vec::new();
        let mut eqs = Vec::new();
        for c in &p.constraints {
            let (kind, exprs): (Kind, Vec<&AffineExpr>) = match c {
                Constraint::Zero(e) => {
                    eqs.push(Row::new(e, &sizes));
                    continue;
                }
                Constraint::NonNeg(e) => (Kind::NonNeg, vec![e]),
                Constraint::SecondOrder { bound, entries } => {
                    (Kind::Soc, std::iter::once(bound).chain(entries.iter()).collect())
                }
                Constraint::LogHypograph { value, argument } => (Kind::LogHypo, vec![value, argument]),
            };
            let start = rows.len();
            rows.extend(exprs.iter().map(|e| Row::new(e, &sizes)));
            let touches_blocks = rows[start..].iter().any(|r| !r.blocks.is_empty());
            cones.push(Cone {
                kind,
                start,
                len: exprs.len(),
                touches_blocks,
            });
        }
        Self {
            nx: p.num_vars(),
            sizes,
            objective,
            rows,
            cones,
            eqs,
        }
    }

    fn degree(&self) -> f64 {
        self.cones.iter().map(|c| c.kind.degree()).sum::<f64>() + self.sizes.iter().sum::<usize>() as f64
    }

    /// Shifted program over `(x, s, Y)` with `X = Y − sI`; maximizes `−s`.
    ///
    /// `‖x‖ <= radius` and `Σ tr Y <= trace_cap` keep the barrier bounded
    /// below when the original feasible set is unbounded.
    fn phase_one(&self, radius: f64, trace_cap: f64) -> Compiled {
        let s = self.nx;
        let with_shift = |row: &Row, shift: f64| {
            let mut r = row.clone();
            let tr: f64 = row.blocks.iter().map(|(b, c)| c.trace(self.sizes[*b])).sum();
            let coef = shift - tr;
            if coef != 0.0 {
                r.x.push((s, coef));
            }
            r
        };
        let mut rows = Vec::with_capacity(self.rows.len() + 1);
        let mut cones = Vec::with_capacity(self.cones.len() + 1);
        for c in &self.cones {
            let shifts = c.kind.shift(c.len);
            for (k, row) in self.rows[c.start..c.start + c.len].iter().enumerate() {
                rows.push(with_shift(row, shifts[k]));
            }
            cones.push(Cone {
                touches_blocks: c.touches_blocks,
                ..c.clone()
            });
        }
        // s >= -1 keeps phase I bounded.
        cones.push(Cone {
            kind: Kind::NonNeg,
            start: rows.len(),
            len: 1,
            touches_blocks: false,
        });
        rows.push(Row {
            constant: 1.0,
            x: vec![(s, 1.0)],
            blocks: Vec::new(),
        });
        if self.nx > 0 {
            cones.push(Cone {
                kind: Kind::Soc,
                start: rows.len(),
                len: self.nx + 1,
                touches_blocks: false,
            });
            rows.push(Row {
                constant: radius,
                x: Vec::new(),
                blocks: Vec::new(),
            });
            rows.extend((0..self.nx).map(|i| Row {
                constant: 0.0,
                x: vec![(i, 1.0)],
                blocks: Vec::new(),
            }));
        }
        if !self.sizes.is_empty() {
            cones.push(Cone {
                kind: Kind::NonNeg,
                start: rows.len(),
                len: 1,
                touches_blocks: true,
            });
            rows.push(Row {
                constant: trace_cap,
                x: Vec::new(),
                blocks: (0..self.sizes.len())
                    .map(|b| {
                        (
                            b,
                            Coef {
                                identity: -1.0,
                                rank_one: Vec::new(),
                                dense: None,
                            },
                        )
                    })
                    .collect(),
            });
        }
        Compiled {
            nx: self.nx + 1,
            sizes: self.sizes.clone(),
            objective: Row {
                constant: 0.0,
                x: vec![(s, -1.0)],
                blocks: Vec::new(),
            },
            rows,
            cones,
            eqs: self.eqs.iter().map(|r| with_shift(r, 0.0)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct Point {
    x: DVector<f64>,
    blocks: Vec<CMat>,
}

struct Newton {
    dx: DVector<f64>,
    dblocks: Vec<CMat>,
    decrement: f64,
}

enum Centering {
    Centered,
    EarlyExit,
    Stalled,
    Budget,
}

fn hermitian_part(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = a;
            m[(j, i)] = a.conj();
        }
    }
}

/// Adds `⟨C_u, X C_v X⟩` for every pair of rows into `s`.
fn block_gram(x: &CMat, coefs: &[Option<&Coef>], s: &mut DMatrix<f64>) {
    let n = x.nrows();
    let mut atoms: Vec<&DVector<Complex64>> = Vec::new();
    let mut members: Vec<Vec<(f64, usize)>> = Vec::with_capacity(coefs.len());
    for c in coefs {
        let mut m = Vec::new();
        if let Some(c) = c {
            for (w, v) in &c.rank_one {
                m.push((*w, atoms.len()));
                atoms.push(v);
            }
        }
        members.push(m);
    }
    let r = atoms.len();
    let a = CMat::from_fn(n, r, |i, j| atoms[j][i]);
    let xa = x * &a;
    let gram = a.adjoint() * &xa;
    let xa_norm2: Vec<f64> = (0..r).map(|j| xa.column(j).norm_squared()).collect();
    let tr_x2: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    let dense_t: Vec<Option<CMat>> = coefs
        .iter()
        .map(|c| c.and_then(|c| c.dense.as_ref()).map(|d| x * d * x))
        .collect();

    for u in 0..coefs.len() {
        let Some(cu) = coefs[u] else { continue };
        for v in u..coefs.len() {
            let Some(cv) = coefs[v] else { continue };
            let mut val = cu.identity * cv.identity * tr_x2;
            if cu.identity != 0.0 {
                val += cu.identity * members[v].iter().map(|(w, b)| w * xa_norm2[*b]).sum::<f64>();
            }
            if cv.identity != 0.0 {
                val += cv.identity * members[u].iter().map(|(w, a)| w * xa_norm2[*a]).sum::<f64>();
            }
            for (wa, ia) in &members[u] {
                for (wb, ib) in &members[v] {
                    val += wa * wb * gram[(*ia, *ib)].norm_sqr();
                }
            }
            if let Some(tv) = &dense_t[v] {
                val += cu.apply(tv);
            }
            if let Some(tu) = &dense_t[u] {
                val += cv.apply_no_dense(tu);
            }
            s[(u, v)] += val;
            if u != v {
                s[(v, u)] += val;
            }
        }
    }
}

impl Coef {
    /// Adds `s · C` with proper conjugation of rank-one terms.
    fn add_scaled(&self, s: f64, out: &mut CMat) {
        if s == 0.0 {
            return;
        }
        let n = out.nrows();
        if self.identity != 0.0 {
            for i in 0..n {
                out[(i, i)] += self.identity * s;
            }
        }
        for (w, v) in &self.rank_one {
            let ws = w * s;
            for j in 0..n {
                let vj = v[j].conj() * ws;
                if vj == CZERO {
                    continue;
                }
                for i in 0..n {
                    out[(i, j)] += v[i] * vj;
                }
            }
        }
        if let Some(d) = &self.dense {
            *out += d * Complex64::new(s, 0.0);
        }
    }
}

struct Engine<'a> {
    prog: &'a Compiled,
    newton_tol: f64,
}

impl Engine<'_> {
    fn row_values(&self, p: &Point) -> Vec<f64> {
        self.prog.rows.iter().map(|r| r.eval(p)).collect()
    }

    fn newton(&self, p: &Point, tau: f64) -> Option<Newton> {
        let prog = self.prog;
        let nx = prog.nx;
        let vals = self.row_values(p);

        let mut factors = Vec::with_capacity(p.blocks.len());
        for x in &p.blocks {
            factors.push(cholesky(x)?);
        }

        let mut gx = DVector::<f64>::zeros(nx);
        for (i, a) in &prog.objective.x {
            gx[*i] -= tau * a;
        }
        // Block gradients without the `−X⁻¹` term of `−log det X`, which is
        // handled analytically below so that `X` is never inverted.
        let mut gb: Vec<CMat> = p.blocks.iter().map(|x| CMat::zeros(x.nrows(), x.ncols())).collect();
        for (b, c) in &prog.objective.blocks {
            c.add_scaled(-tau, &mut gb[*b]);
        }

        let mut hxx = DMatrix::<f64>::zeros(nx, nx);
        let mut wrows: Vec<usize> = Vec::new();
        let mut winv: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for cone in &prog.cones {
            let u = &vals[cone.start..cone.start + cone.len];
            let grad = cone.kind.gradient(u);
            let rows = &prog.rows[cone.start..cone.start + cone.len];
            for (k, row) in rows.iter().enumerate() {
                for (i, a) in &row.x {
                    gx[*i] += grad[k] * a;
                }
                for (b, c) in &row.blocks {
                    c.add_scaled(grad[k], &mut gb[*b]);
                }
            }
            if cone.touches_blocks {
                winv.push((wrows.len(), cone.kind.hessian_inverse(u)));
                wrows.extend(cone.start..cone.start + cone.len);
            } else {
                let h = cone.kind.hessian(u);
                for (ka, ra) in rows.iter().enumerate() {
                    for (kb, rb) in rows.iter().enumerate() {
                        let hab = h[(ka, kb)];
                        if hab == 0.0 {
                            continue;
                        }
                        for (i, ca) in &ra.x {
                            for (j, cb) in &rb.x {
                                hxx[(*i, *j)] += hab * ca * cb;
                            }
                        }
                    }
                }
            }
        }
        for g in &mut gb {
            hermitian_part(g);
        }

        let mw = wrows.len();
        let meq = prog.eqs.len();
        let brows: Vec<&Row> = wrows.iter().map(|&r| &prog.rows[r]).chain(prog.eqs.iter()).collect();
        let nb = brows.len();
        let mut s = DMatrix::<f64>::zeros(nb, nb);
        let mut h = DVector::<f64>::zeros(nb);
        for (b, x) in p.blocks.iter().enumerate() {
            let t = x * &gb[b] * x - x;
            let coefs: Vec<Option<&Coef>> = brows.iter().map(|r| r.block(b)).collect();
            if coefs.iter().any(Option::is_some) {
                block_gram(x, &coefs, &mut s);
                for (u, c) in coefs.iter().enumerate() {
                    if let Some(c) = c {
                        h[u] += c.apply(&t);
                    }
                }
            }
        }

        let dim = mw + nx + meq;
        let mut k = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (off, wi) in &winv {
            let n = wi.nrows();
            for i in 0..n {
                for j in 0..n {
                    k[(off + i, off + j)] += wi[(i, j)];
                }
            }
        }
        for u in 0..nb {
            let iu = if u < mw { u } else { mw + nx + (u - mw) };
            for v in 0..nb {
                let iv = if v < mw { v } else { mw + nx + (v - mw) };
                k[(iu, iv)] += s[(u, v)];
            }
        }
        for (a, &r) in wrows.iter().enumerate() {
            for (i, c) in &prog.rows[r].x {
                k[(a, mw + i)] -= c;
                k[(mw + i, a)] -= c;
            }
        }
        let diag_scale = (0..nx).map(|i| hxx[(i, i)].abs()).fold(1.0, f64::max);
        for i in 0..nx {
            for j in 0..nx {
                k[(mw + i, mw + j)] -= hxx[(i, j)];
            }
            k[(mw + i, mw + i)] -= 1e-13 * diag_scale;
        }
        for (e, row) in prog.eqs.iter().enumerate() {
            for (i, c) in &row.x {
                k[(mw + nx + e, mw + i)] -= c;
                k[(mw + i, mw + nx + e)] -= c;
            }
        }
        for a in 0..mw {
            rhs[a] = -h[a];
        }
        for i in 0..nx {
            rhs[mw + i] = gx[i];
        }
        for (e, row) in prog.eqs.iter().enumerate() {
            rhs[mw + nx + e] = row.eval(p) - h[mw + e];
        }

        let sol = k.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dx = sol.rows(mw, nx).into_owned();
        let mut dblocks = Vec::with_capacity(p.blocks.len());
        for (b, x) in p.blocks.iter().enumerate() {
            let mut inner = gb[b].clone();
            for (a, &r) in wrows.iter().enumerate() {
                if let Some(c) = prog.rows[r].block(b) {
                    c.add_scaled(sol[a], &mut inner);
                }
            }
            for (e, row) in prog.eqs.iter().enumerate() {
                if let Some(c) = row.block(b) {
                    c.add_scaled(sol[mw + nx + e], &mut inner);
                }
            }
            let mut d = x - x * &inner * x;
            hermitian_part(&mut d);
            dblocks.push(d);
        }
        // λ² = dzᵀ ∇²F dz, evaluated as a sum of squares.
        let mut decrement = 0.0;
        for cone in &prog.cones {
            let r = cone.start..cone.start + cone.len;
            let u = &vals[r.clone()];
            let lin = DVector::from_iterator(cone.len, prog.rows[r].iter().map(|row| row.linear(&dx, &dblocks)));
            decrement += lin.dot(&(cone.kind.hessian(u) * &lin));
        }
        for (l, d) in factors.iter().zip(&dblocks) {
            let m = l.solve_lower_triangular(d)?;
            let m = l.solve_lower_triangular(&m.adjoint())?;
            decrement += m.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        Some(Newton {
            dx,
            dblocks,
            decrement,
        })
    }

    /// Returns the change in the barrier merit `−τ·obj + Σφ − Σ log det`
    /// when moving from `p` to `p + α·d`, or `None` outside the domain.
    #[allow(clippy::too_many_arguments)]
    fn merit_change(
        &self,
        base: &[f64],
        lin: &[f64],
        obj_lin: f64,
        p: &Point,
        d: &Newton,
        alpha: f64,
        tau: f64,
        base_logdet: &[f64],
    ) -> Option<f64> {
        let mut delta = -tau * alpha * obj_lin;
        let mut trial = vec![0.0; base.len()];
        for i in 0..base.len() {
            trial[i] = base[i] + alpha * lin[i];
        }
        for c in &self.prog.cones {
            let r = c.start..c.start + c.len;
            let new = c.kind.barrier(&trial[r.clone()])?;
            let old = c.kind.barrier(&base[r])?;
            delta += new - old;
        }
        for (b, x) in p.blocks.iter().enumerate() {
            let y = x + &d.dblocks[b] * Complex64::new(alpha, 0.0);
            let ld = logdet(&y)?;
            delta += base_logdet[b] - ld;
        }
        Some(delta)
    }

    fn center(
        &self,
        p: &mut Point,
        tau: f64,
        budget: &mut usize,
        early_exit: &dyn Fn(&Point) -> bool,
    ) -> Centering {
        loop {
            if *budget == 0 {
                return Centering::Budget;
            }
            let Some(d) = self.newton(p, tau) else {
                return Centering::Stalled;
            };
            if !d.decrement.is_finite() {
                return Centering::Stalled;
            }
            if d.decrement * 0.5 <= self.newton_tol {
                return Centering::Centered;
            }
            *budget -= 1;

            let base = self.row_values(p);
            let lin: Vec<f64> = self
                .prog
                .rows
                .iter()
                .map(|r| r.linear(&d.dx, &d.dblocks))
                .collect();
            let obj_lin = self.prog.objective.linear(&d.dx, &d.dblocks);
            let base_logdet: Vec<f64> = p.blocks.iter().map(|x| logdet(x).unwrap_or(f64::NAN)).collect();

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                match self.merit_change(&base, &lin, obj_lin, p, &d, alpha, tau, &base_logdet) {
                    Some(change) if change <= -0.01 * alpha * d.decrement => {
                        accepted = true;
                        break;
                    }
                    // Round-off floor: merit can no longer resolve the decrease.
                    Some(change) if d.decrement < 1e-6 && change <= 1e-12 * (1.0 + tau) => {
                        accepted = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            if !accepted {
                return if d.decrement < 1e-5 {
                    Centering::Centered
                } else {
                    Centering::Stalled
                };
            }
            p.x.axpy(alpha, &d.dx, 1.0);
            for (x, dx) in p.blocks.iter_mut().zip(&d.dblocks) {
                *x += dx * Complex64::new(alpha, 0.0);
                hermitian_part(x);
            }
            if early_exit(p) {
                return Centering::EarlyExit;
            }
        }
    }
}

/// Lower Cholesky factor of a Hermitian matrix, `None` unless positive definite.
fn cholesky(x: &CMat) -> Option<CMat> {
    let n = x.nrows();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = x[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut v = x[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
    }
    Some(l)
}

fn logdet(x: &CMat) -> Option<f64> {
    let l = cholesky(x)?;
    Some((0..x.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

fn min_eigenvalue(x: &CMat) -> f64 {
    if x.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(x.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Least-norm solution of the equalities (`X_b = I` for blocks they ignore).
fn least_norm_start(prog: &Compiled) -> Point {
    let nx = prog.nx;
    let meq = prog.eqs.len();
    let mut x = DVector::<f64>::zeros(nx);
    let mut blocks: Vec<CMat> = prog
        .sizes
        .iter()
        .map(|&n| CMat::identity(n, n))
        .collect();
    if meq == 0 {
        return Point { x, blocks };
    }
    let touched: Vec<bool> = (0..prog.sizes.len())
        .map(|b| prog.eqs.iter().any(|r| r.block(b).is_some()))
        .collect();
    // Dense forms of every equality's block coefficients.
    let dense: Vec<Vec<Option<CMat>>> = prog
        .eqs
        .iter()
        .map(|r| {
            (0..prog.sizes.len())
                .map(|b| {
                    r.block(b).map(|c| {
                        let n = prog.sizes[b];
                        let mut m = CMat::zeros(n, n);
                        c.add_scaled(1.0, &mut m);
                        m
                    })
                })
                .collect()
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(meq, meq);
    let mut dense_x = DMatrix::<f64>::zeros(meq, nx);
    for (e, r) in prog.eqs.iter().enumerate() {
        for (i, a) in &r.x {
            dense_x[(e, *i)] += a;
        }
    }
    for i in 0..meq {
        for j in i..meq {
            let mut g = dense_x.row(i).dot(&dense_x.row(j));
            for (a, c) in dense[i].iter().zip(&dense[j]) {
                if let (Some(a), Some(c)) = (a, c) {
                    g += re_trace_product(a, c);
                }
            }
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    // Blocks untouched by equalities start at I; touched ones start at zero
    // and receive the least-norm correction.
    for (b, t) in touched.iter().enumerate() {
        if *t {
            blocks[b] = CMat::zeros(prog.sizes[b], prog.sizes[b]);
        }
    }
    let p0 = Point {
        x: x.clone(),
        blocks: blocks.clone(),
    };
    let rhs = DVector::from_iterator(meq, prog.eqs.iter().map(|r| -r.eval(&p0)));
    let scale = gram.diagonal().iter().cloned().fold(0.0, f64::max).max(1e-300);
    let y = SVD::new(gram, true, true)
        .solve(&rhs, 1e-13 * scale)
        .unwrap_or_else(|_| DVector::zeros(meq));
    for e in 0..meq {
        x.axpy(y[e], &dense_x.row(e).transpose(), 1.0);
        for b in 0..prog.sizes.len() {
            if let Some(m) = &dense[e][b] {
                blocks[b] += m * Complex64::new(y[e], 0.0);
            }
        }
    }
    for m in &mut blocks {
        hermitian_part(m);
    }
    Point { x, blocks }
}

fn residuals(prog: &Compiled, p: &Point, gap: f64) -> Residuals {
    let equality = prog
        .eqs
        .iter()
        .map(|r| r.eval(p).abs() / (1.0 + r.constant.abs()))
        .fold(0.0, f64::max);
    let vals: Vec<f64> = prog.rows.iter().map(|r| r.eval(p)).collect();
    let cone_margin = prog
        .cones
        .iter()
        .map(|c| c.kind.margin(&vals[c.start..c.start + c.len]))
        .chain(p.blocks.iter().map(min_eigenvalue))
        .fold(f64::INFINITY, f64::min);
    Residuals {
        equality,
        gap,
        cone_margin,
    }
}

impl ConicBackend for BarrierSolver {
    fn solve(&self, program: &ConvexProgram, tol: &Tolerances) -> Result<Solution, ProgramError> {
        program.validate()?;
        let prog = Compiled::new(program);
        let sign = if program.sense == Sense::Minimize { -1.0 } else { 1.0 };
        let mut budget = tol.max_newton_steps;
        let start = least_norm_start(&prog);

        let finish = |p: &Point, status: Status, gap: f64, used: usize| {
            let objective = sign * prog.objective.eval(p);
            Solution {
                status,
                objective,
                scalars: p.x.iter().cloned().collect(),
                blocks: p.blocks.clone(),
                iterations: used,
                residuals: residuals(&prog, p, gap),
            }
        };

        let eq_res = prog
            .eqs
            .iter()
            .map(|r| r.eval(&start).abs() / (1.0 + r.constant.abs()))
            .fold(0.0, f64::max);
        if eq_res > 1e-6 {
            return Ok(finish(&start, Status::Infeasible, f64::INFINITY, 0));
        }

        // Phase I.
        let vals: Vec<f64> = prog.rows.iter().map(|r| r.eval(&start)).collect();
        let required = prog
            .cones
            .iter()
            .map(|c| c.kind.required_shift(&vals[c.start..c.start + c.len]))
            .chain(start.blocks.iter().map(|x| -min_eigenvalue(x)))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut point = if required < -1e-6 {
            start
        } else {
            let sigma0 = (required + 1.0 + 0.1 * required.abs()).max(-0.5);
            let mut y = start.clone();
            for m in &mut y.blocks {
                for i in 0..m.nrows() {
                    m[(i, i)] += sigma0;
                }
            }
            let radius = 1e6 * (1.0 + start.x.norm() + sigma0);
            let trace_cap = 1e6
                * (1.0 + y.blocks.iter().map(|m| m.diagonal().iter().map(|z| z.re).sum::<f64>()).sum::<f64>());
            let p1 = prog.phase_one(radius, trace_cap);
            let mut x1 = DVector::zeros(prog.nx + 1);
            x1.rows_mut(0, prog.nx).copy_from(&start.x);
            x1[prog.nx] = sigma0;
            let mut q = Point { x: x1, blocks: y.blocks };
            let engine = Engine {
                prog: &p1,
                newton_tol: self.newton_tol,
            };
            let nu = p1.degree();
            let s_idx = prog.nx;
            let mut tau = nu / (1.0 + sigma0.abs());
            let deep = |q: &Point| q.x[s_idx] < 0.0;
            let found = loop {
                let outcome = engine.center(&mut q, tau, &mut budget, &deep);
                let sigma = q.x[s_idx];
                match outcome {
                    Centering::EarlyExit => break true,
                    Centering::Centered if sigma < 0.0 => break true,
                    Centering::Centered => {
                        if sigma - nu / tau > 0.0 || nu / tau < 1e-12 {
                            break false;
                        }
                        tau *= self.growth;
                    }
                    Centering::Stalled | Centering::Budget => {
                        if sigma < 0.0 {
                            break true;
                        }
                        let used = tol.max_newton_steps - budget;
                        let status = if sigma - nu / tau > 0.0 {
                            Status::Infeasible
                        } else {
                            Status::NumericalLimit
                        };
                        let back = Point {
                            x: q.x.rows(0, prog.nx).into_owned(),
                            blocks: q.blocks.clone(),
                        };
                        return Ok(finish(&back, status, f64::INFINITY, used));
                    }
                }
            };
            let sigma = q.x[s_idx];
            let mut blocks = q.blocks;
            for m in &mut blocks {
                for i in 0..m.nrows() {
                    m[(i, i)] -= sigma;
                }
            }
            let back = Point {
                x: q.x.rows(0, prog.nx).into_owned(),
                blocks,
            };
            if !found {
                let used = tol.max_newton_steps - budget;
                return Ok(finish(&back, Status::Infeasible, f64::INFINITY, used));
            }
            back
        };

        // Phase II.
        let engine = Engine {
            prog: &prog,
            newton_tol: self.newton_tol,
        };
        let nu = prog.degree();
        let f0 = prog.objective.eval(&point);
        let mut tau = nu / (1.0 + f0.abs());
        let never = |_: &Point| false;
        loop {
            let outcome = engine.center(&mut point, tau, &mut budget, &never);
            let used = tol.max_newton_steps - budget;
            let f = prog.objective.eval(&point);
            let gap = nu / tau;
            if !f.is_finite() || f.abs() > 1e14 {
                return Ok(finish(&point, Status::NumericalLimit, gap, used));
            }
            match outcome {
                Centering::Centered | Centering::EarlyExit => {
                    if gap <= tol.gap * (1.0 + f.abs()) {
                        let res = residuals(&prog, &point, gap);
                        let status = if res.equality <= tol.feasibility {
                            Status::Optimal
                        } else {
                            Status::NumericalLimit
                        };
                        return Ok(finish(&point, status, gap, used));
                    }
                    tau *= self.growth;
                }
                Centering::Stalled | Centering::Budget => {
                    // A stalled step close to the target still certifies the
                    // gap bound of the last completed centering.
                    let status = if gap <= 1e3 * tol.gap * (1.0 + f.abs()) {
                        Status::Optimal
                    } else {
                        Status::NumericalLimit
                    };
                    return Ok(finish(&point, status, gap, used));
                }
            }
        }
    }
}
