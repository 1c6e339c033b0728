//! Solver-agnostic description of a convex program.
//!
//! Decision variables are real scalars and complex Hermitian positive
//! semidefinite blocks. Every constraint is a cone membership over affine
//! expressions of those variables; the objective is a single affine
//! expression. Concave atoms (square root, `ln(1 + ·)`) and convex squared
//! norms are lowered to cone constraints by the builder helpers.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ProgramError;

/// Handle to a real scalar variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub usize);

/// Handle to a Hermitian PSD matrix block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block(pub usize);

/// Weighted outer product `weight · v vᴴ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOne {
    pub weight: f64,
    pub vector: Vec<Complex64>,
}

/// Hermitian coefficient matrix `C` of the real-linear map `X ↦ Re tr(C X)`.
///
/// Stored as `identity · I + Σ wᵢ vᵢvᵢᴴ + dense`, which keeps the common
/// diagonal-entry, trace and quadratic-form functionals cheap.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HermitianCoef {
    pub identity: f64,
    pub rank_one: Vec<RankOne>,
    /// Row-major `n × n`, must be Hermitian.
    pub dense: Option<Vec<Complex64>>,
}

impl HermitianCoef {
    pub fn identity(weight: f64) -> Self {
        Self {
            identity: weight,
            ..Self::default()
        }
    }

    pub fn rank_one(weight: f64, vector: Vec<Complex64>) -> Self {
        Self {
            rank_one: vec![RankOne { weight, vector }],
            ..Self::default()
        }
    }

    /// Selects the real diagonal entry `X[i, i]`.
    pub fn diagonal_entry(n: usize, i: usize) -> Self {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[i] = Complex64::new(1.0, 0.0);
        Self::rank_one(1.0, v)
    }

    pub fn dense(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        Self {
            dense: Some(data),
            ..Self::default()
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.identity *= s;
        for r in &mut self.rank_one {
            r.weight *= s;
        }
        if let Some(d) = &mut self.dense {
            for z in d.iter_mut() {
                *z *= s;
            }
        }
        self
    }

    pub fn merge(&mut self, other: HermitianCoef) {
        self.identity += other.identity;
        self.rank_one.extend(other.rank_one);
        match (&mut self.dense, other.dense) {
            (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (slot @ None, Some(b)) => *slot = Some(b),
            _ => {}
        }
    }

    pub fn to_matrix(&self, n: usize) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_diagonal_element(n, n, Complex64::new(self.identity, 0.0));
        for r in &self.rank_one {
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += r.vector[i] * r.vector[j].conj() * r.weight;
                }
            }
        }
        if let Some(d) = &self.dense {
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += d[i * n + j];
                }
            }
        }
        m
    }

    /// `Re tr(C X)`.
    pub fn apply(&self, x: &DMatrix<Complex64>) -> f64 {
        let n = x.nrows();
        let mut acc = 0.0;
        if self.identity != 0.0 {
            acc += self.identity * (0..n).map(|i| x[(i, i)].re).sum::<f64>();
        }
        for r in &self.rank_one {
            acc += r.weight * quad_form(&r.vector, x);
        }
        if let Some(d) = &self.dense {
            for i in 0..n {
                for j in 0..n {
                    acc += (d[i * n + j] * x[(j, i)]).re;
                }
            }
        }
        acc
    }

    fn check(&self, n: usize) -> Result<(), String> {
        for r in &self.rank_one {
            if r.vector.len() != n {
                return Err(format!("rank-one vector of length {} on a {n}x{n} block", r.vector.len()));
            }
        }
        if let Some(d) = &self.dense {
            if d.len() != n * n {
                return Err(format!("dense coefficient of length {} on a {n}x{n} block", d.len()));
            }
            for i in 0..n {
                for j in 0..n {
                    if (d[i * n + j] - d[j * n + i].conj()).norm() > 1e-12 * (1.0 + d[i * n + j].norm()) {
                        return Err("dense coefficient is not Hermitian".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// `vᴴ X v` (real for Hermitian `X`).
pub(crate) fn quad_form(v: &[Complex64], x: &DMatrix<Complex64>) -> f64 {
    let n = v.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        if v[j] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..n {
            col += v[i].conj() * x[(i, j)];
        }
        acc += col * v[j];
    }
    acc.re
}

/// `constant + Σ aᵢ xᵢ + Σ_b Re tr(C_b X_b)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(Var, f64)>,
    pub blocks: Vec<(Block, HermitianCoef)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    pub fn var(v: Var) -> Self {
        Self::default().plus_var(v, 1.0)
    }

    pub fn plus_var(mut self, v: Var, coef: f64) -> Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn plus_block(mut self, b: Block, coef: HermitianCoef) -> Self {
        self.blocks.push((b, coef));
        self
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.constant *= s;
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.blocks = self.blocks.into_iter().map(|(b, c)| (b, c.scaled(s))).collect();
        self
    }

    /// Evaluates the expression at explicit variable values.
    pub fn eval(&self, scalars: &[f64], blocks: &[DMatrix<Complex64>]) -> f64 {
        self.constant
            + self.terms.iter().map(|(v, a)| a * scalars[v.0]).sum::<f64>()
            + self.blocks.iter().map(|(b, c)| c.apply(&blocks[b.0])).sum::<f64>()
    }
}

impl From<Var> for AffineExpr {
    fn from(v: Var) -> Self {
        AffineExpr::var(v)
    }
}

impl From<f64> for AffineExpr {
    fn from(c: f64) -> Self {
        AffineExpr::constant(c)
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self.blocks.extend(rhs.blocks);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + rhs.scaled(-1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(self, rhs: f64) -> AffineExpr {
        self.scaled(rhs)
    }
}

/// Cone memberships understood by every backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// `expr == 0`
    Zero(AffineExpr),
    /// `expr >= 0`
    NonNeg(AffineExpr),
    /// `‖entries‖₂ <= bound`
    SecondOrder {
        bound: AffineExpr,
        entries: Vec<AffineExpr>,
    },
    /// `value <= ln(argument)`, `argument > 0`
    LogHypograph {
        value: AffineExpr,
        argument: AffineExpr,
    },
}

impl Constraint {
    fn exprs(&self) -> Vec<&AffineExpr> {
        match self {
            Constraint::Zero(e) | Constraint::NonNeg(e) => vec![e],
            Constraint::SecondOrder { bound, entries } => {
                std::iter::once(bound).chain(entries.iter()).collect()
            }
            Constraint::LogHypograph { value, argument } => vec![value, argument],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// Real and imaginary scalar handles of a complex vector variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexVars {
    pub re: Vec<Var>,
    pub im: Vec<Var>,
}

impl ComplexVars {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Real and imaginary parts of `hᴴ v` as affine expressions.
    pub fn inner_with(&self, h: &[Complex64]) -> (AffineExpr, AffineExpr) {
        let mut re = AffineExpr::default();
        let mut im = AffineExpr::default();
        for (l, hl) in h.iter().enumerate() {
            re = re.plus_var(self.re[l], hl.re).plus_var(self.im[l], hl.im);
            im = im.plus_var(self.im[l], hl.re).plus_var(self.re[l], -hl.im);
        }
        (re, im)
    }

    /// Real scalar expressions `[Re v₁, Im v₁, Re v₂, …]`, each scaled by `s`.
    pub fn components(&self, s: f64) -> Vec<AffineExpr> {
        self.re
            .iter()
            .zip(&self.im)
            .flat_map(|(&r, &i)| [AffineExpr::default().plus_var(r, s), AffineExpr::default().plus_var(i, s)])
            .collect()
    }

    pub fn values(&self, scalars: &[f64]) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| Complex64::new(scalars[r.0], scalars[i.0]))
            .collect()
    }
}

/// A convex program ready for submission to a [`crate::ConicBackend`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub var_names: Vec<String>,
    pub block_sizes: Vec<usize>,
    pub sense: Sense,
    pub objective: AffineExpr,
    pub constraints: Vec<Constraint>,
}

impl Default for ConvexProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self {
            var_names: Vec::new(),
            block_sizes: Vec::new(),
            sense: Sense::Maximize,
            objective: AffineExpr::default(),
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var(&mut self, name: impl Into<String>) -> Var {
        self.var_names.push(name.into());
        Var(self.var_names.len() - 1)
    }

    pub fn complex_vector(&mut self, name: &str, len: usize) -> ComplexVars {
        let mut re = Vec::with_capacity(len);
        let mut im = Vec::with_capacity(len);
        for l in 0..len {
            re.push(self.var(format!("re({name})[{l}]")));
            im.push(self.var(format!("im({name})[{l}]")));
        }
        ComplexVars { re, im }
    }

    /// Declares an `n × n` Hermitian PSD variable.
    pub fn psd_block(&mut self, n: usize) -> Block {
        self.block_sizes.push(n);
        Block(self.block_sizes.len() - 1)
    }

    pub fn maximize(&mut self, e: AffineExpr) {
        self.sense = Sense::Maximize;
        self.objective = e;
    }

    pub fn minimize(&mut self, e: AffineExpr) {
        self.sense = Sense::Minimize;
        self.objective = e;
    }

    pub fn add_zero(&mut self, e: AffineExpr) {
        self.constraints.push(Constraint::Zero(e));
    }

    pub fn add_nonneg(&mut self, e: AffineExpr) {
        self.constraints.push(Constraint::NonNeg(e));
    }

    pub fn add_soc(&mut self, bound: AffineExpr, entries: Vec<AffineExpr>) {
        self.constraints.push(Constraint::SecondOrder { bound, entries });
    }

    pub fn add_log_hypograph(&mut self, value: AffineExpr, argument: AffineExpr) {
        self.constraints.push(Constraint::LogHypograph { value, argument });
    }

    /// `value <= ln(1 + argument)`.
    pub fn add_log1p_hypograph(&mut self, value: AffineExpr, argument: AffineExpr) {
        self.add_log_hypograph(value, argument.plus_constant(1.0));
    }

    /// `value <= sqrt(argument)`, lowered as `‖(2·value, argument − 1)‖ <= argument + 1`.
    ///
    /// The lowering is exact whenever `value >= 0`; a negative `value` is
    /// additionally bounded below by `−sqrt(argument)`.
    pub fn add_sqrt_hypograph(&mut self, value: AffineExpr, argument: AffineExpr) {
        let bound = argument.clone().plus_constant(1.0);
        let entries = vec![value.scaled(2.0), argument.plus_constant(-1.0)];
        self.add_soc(bound, entries);
    }

    /// `‖entries‖² <= epigraph`.
    pub fn add_squared_norm_epigraph(&mut self, epigraph: AffineExpr, entries: Vec<AffineExpr>) {
        let bound = epigraph.clone().plus_constant(1.0);
        let mut all: Vec<AffineExpr> = entries.into_iter().map(|e| e.scaled(2.0)).collect();
        all.push(epigraph.plus_constant(-1.0));
        self.add_soc(bound, all);
    }

    /// Checks variable references, block dimensions and Hermitian symmetry.
    pub fn validate(&self) -> Result<(), ProgramError> {
        let check = |e: &AffineExpr, what: &str| -> Result<(), ProgramError> {
            for (v, a) in &e.terms {
                if v.0 >= self.num_vars() {
                    return Err(ProgramError::UndeclaredVariable(v.0));
                }
                if !a.is_finite() {
                    return Err(ProgramError::NonFinite(what.to_string()));
                }
            }
            if !e.constant.is_finite() {
                return Err(ProgramError::NonFinite(what.to_string()));
            }
            for (b, c) in &e.blocks {
                let n = *self
                    .block_sizes
                    .get(b.0)
                    .ok_or(ProgramError::UndeclaredBlock(b.0))?;
                c.check(n).map_err(|msg| ProgramError::BadCoefficient {
                    block: b.0,
                    msg,
                })?;
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (i, c) in self.constraints.iter().enumerate() {
            for e in c.exprs() {
                check(e, &format!("constraint {i}"))?;
            }
            if let Constraint::SecondOrder { entries, .. } = c {
                if entries.is_empty() {
                    return Err(ProgramError::EmptyCone(i));
                }
            }
        }
        Ok(())
    }

    /// Scalars that appear in no constraint and no objective term.
    pub fn unused_vars(&self) -> BTreeSet<usize> {
        let mut unused: BTreeSet<usize> = (0..self.num_vars()).collect();
        let mut mark = |e: &AffineExpr| {
            for (v, _) in &e.terms {
                unused.remove(&v.0);
            }
        };
        mark(&self.objective);
        for c in &self.constraints {
            for e in c.exprs() {
                mark(e);
            }
        }
        unused
    }

    /// Text dump for offline inspection.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ProgramError> {
        serde_json::from_str(s).map_err(|e| ProgramError::Parse(e.to_string()))
    }
}

impl fmt::Display for ConvexProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let count = |pred: fn(&Constraint) -> bool| self.constraints.iter().filter(|c| pred(c)).count();
        write!(
            f,
            "{:?} over {} scalars, {} PSD blocks {:?}; {} zero, {} nonneg, {} soc, {} log-hypograph constraints",
            self.sense,
            self.num_vars(),
            self.block_sizes.len(),
            self.block_sizes,
            count(|c| matches!(c, Constraint::Zero(_))),
            count(|c| matches!(c, Constraint::NonNeg(_))),
            count(|c| matches!(c, Constraint::SecondOrder { .. })),
            count(|c| matches!(c, Constraint::LogHypograph { .. })),
        )
    }
}
