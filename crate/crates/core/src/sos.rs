//! Weighted sum-of-squares constraints compiled to conic programs.
//!
//! A constraint reads
//!
//! ```text
//! a(x) V(x) + b(x) (Lie V)(x) + c(x) + sum_k sigma_k c_k(x) >= 0   on S = {s_j >= 0}
//! ```
//!
//! with `V = coeffs . phi` and scalars `sigma_k` as decision variables. It is
//! replaced by the identity
//!
//! ```text
//! a V + b Lie V + c + ... = v' P v + sum_j s_j w_j' Q_j w_j,   P, Q_j PSD,
//! ```
//!
//! matched coefficient by coefficient in the basis of the polynomials
//! (monomial or Chebyshev). Gram matrices use the svec layout of
//! [`crate::sdp`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::koopman::{EdmdOperators, KoopmanError, LieKind};
use crate::polybasis::{Basis, Dictionary, MultiIndex, Poly, PolyError, PolyInBasis};
use crate::sdp::{
    self, svec_index, Cone, SdpError, SdpProblem, SdpSolution, SdpStatus, SolverOptions, SQRT2,
};
use crate::systems::{SystemError, SystemSpec};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("constraint {constraint}: {what} term {index} lies outside span(v v)")]
    NotInGramSpan {
        constraint: usize,
        what: String,
        index: MultiIndex,
    },
    #[error("constraint {constraint}: polynomial has terms outside u: {source}")]
    NotInU {
        constraint: usize,
        source: PolyError,
    },
    #[error("constraint {constraint}: {msg}")]
    Constraint { constraint: usize, msg: String },
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// `{x : s_j(x) >= 0 for all j}`; the empty list is the whole space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemialgebraicSet {
    pub s_list: Vec<Poly>,
}

impl SemialgebraicSet {
    pub fn whole_space() -> Self {
        Self::default()
    }

    pub fn new(s_list: Vec<Poly>) -> Result<Self, SosError> {
        if let Some(first) = s_list.first() {
            let d = first.basis().dim();
            if s_list.iter().any(|s| s.basis().dim() != d) {
                return Err(SosError::Invalid(
                    "set polynomials differ in dimension".into(),
                ));
            }
        }
        Ok(Self { s_list })
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool, SosError> {
        for s in &self.s_list {
            if s.evaluate(x)? < 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Where the Lie derivative of the unknown comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LieSource {
    Exact { system: SystemSpec },
    Edmd { ops: Box<EdmdOperators> },
    Gedmd { ops: Box<EdmdOperators> },
}

impl LieSource {
    pub fn name(&self) -> &'static str {
        match self {
            LieSource::Exact { .. } => "exact",
            LieSource::Edmd { .. } => "edmd",
            LieSource::Gedmd { .. } => "gedmd",
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, LieSource::Exact { .. })
    }

    /// Lie image of each element of `phi`.
    pub fn images(&self, phi: &Dictionary) -> Result<Vec<Poly>, SosError> {
        match self {
            LieSource::Exact { system } => (0..phi.len())
                .map(|j| Ok(system.exact_lie_poly(&phi.element(j))?))
                .collect(),
            LieSource::Edmd { ops } | LieSource::Gedmd { ops } => {
                if &ops.phi != phi {
                    return Err(SosError::Invalid(
                        "operator phi differs from the program's phi".into(),
                    ));
                }
                let which = if matches!(self, LieSource::Edmd { .. }) {
                    LieKind::Edmd
                } else {
                    LieKind::Gedmd
                };
                let mat = ops.lie_matrix(which)?;
                (0..phi.len())
                    .map(|j| {
                        let row: Vec<f64> = mat.row(j).iter().copied().collect();
                        Ok(PolyInBasis::new(ops.psi.clone(), row)?.to_poly())
                    })
                    .collect()
            }
        }
    }

    /// Lie image of an arbitrary polynomial; data-driven sources need it in
    /// the span of their `phi`.
    pub fn apply(&self, p: &Poly) -> Result<Poly, SosError> {
        match self {
            LieSource::Exact { system } => Ok(system.exact_lie_poly(p)?),
            LieSource::Edmd { ops } | LieSource::Gedmd { ops } => {
                let c = p.restrict(&ops.phi)?;
                let imgs = self.images(&ops.phi)?;
                let mut out = Poly::zero(p.basis().clone());
                for (cj, img) in c.coeffs.iter().zip(&imgs) {
                    if *cj != 0.0 {
                        out = out.add(&img.scale(*cj))?;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// The dictionaries of the weighted SOS identity: targets live in `u`,
/// `P` is indexed by `v`, `Q_j` by `w[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SosBases {
    pub u: Dictionary,
    pub v: Dictionary,
    pub w: Vec<Dictionary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarTerm {
    pub scalar: usize,
    pub poly: Poly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityConstraint {
    pub a: Poly,
    pub b: Poly,
    pub c: Poly,
    #[serde(default)]
    pub c_scalars: Vec<ScalarTerm>,
    /// Required when `b` is nonzero.
    #[serde(default)]
    pub lie: Option<LieSource>,
    #[serde(default)]
    pub set: SemialgebraicSet,
    /// `None` picks total-degree bases with [`auto_bases`].
    #[serde(default)]
    pub bases: Option<SosBases>,
}

impl InequalityConstraint {
    /// `0 >= 0` on the whole space; fill in the fields.
    pub fn new(basis: &Basis) -> Self {
        Self {
            a: Poly::zero(basis.clone()),
            b: Poly::zero(basis.clone()),
            c: Poly::zero(basis.clone()),
            c_scalars: Vec::new(),
            lie: None,
            set: SemialgebraicSet::whole_space(),
            bases: None,
        }
    }

    /// `p >= 0` for a fixed polynomial.
    pub fn nonnegative(p: Poly) -> Self {
        let mut c = Self::new(p.basis());
        c.c = p;
        c
    }

    fn lie_images(&self, phi: Option<&Dictionary>) -> Result<Option<Vec<Poly>>, SosError> {
        match (phi, self.b.is_zero()) {
            (Some(phi), false) => {
                let lie = self.lie.as_ref().ok_or_else(|| {
                    SosError::Invalid("b is nonzero but no Lie source is given".into())
                })?;
                Ok(Some(lie.images(phi)?))
            }
            _ => Ok(None),
        }
    }

    /// `a phi_j + b Lie phi_j` for every element of `phi`.
    fn coefficient_polys(&self, phi: Option<&Dictionary>) -> Result<Vec<Poly>, SosError> {
        let Some(phi) = phi else {
            return Ok(Vec::new());
        };
        let images = self.lie_images(Some(phi))?;
        (0..phi.len())
            .map(|j| {
                let mut t = if self.a.is_zero() {
                    Poly::zero(self.a.basis().clone())
                } else {
                    self.a.mul(&phi.element(j))?
                };
                if let Some(img) = &images {
                    t = t.add(&self.b.mul(&img[j])?)?;
                }
                Ok(t)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    Coeff(usize),
    Scalar(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: Sense,
    #[serde(default)]
    pub linear: Vec<(Var, f64)>,
    /// Weight of `sum_i |coeff_i|` (added for minimization, subtracted for
    /// maximization).
    #[serde(default)]
    pub l1_weight: f64,
}

impl Objective {
    pub fn feasibility() -> Self {
        Self {
            sense: Sense::Minimize,
            linear: Vec::new(),
            l1_weight: 0.0,
        }
    }

    pub fn minimize(v: Var) -> Self {
        Self {
            sense: Sense::Minimize,
            linear: vec![(v, 1.0)],
            l1_weight: 0.0,
        }
    }

    pub fn maximize(v: Var) -> Self {
        Self {
            sense: Sense::Maximize,
            linear: vec![(v, 1.0)],
            l1_weight: 0.0,
        }
    }

    pub fn l1() -> Self {
        Self {
            sense: Sense::Minimize,
            linear: Vec::new(),
            l1_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    pub terms: Vec<(Var, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SosProgram {
    /// Dictionary of the unknown `V`; `None` when only scalars are free.
    pub phi: Option<Dictionary>,
    #[serde(default)]
    pub scalars: Vec<String>,
    pub constraints: Vec<InequalityConstraint>,
    pub objective: Objective,
    #[serde(default)]
    pub equalities: Vec<LinearEquality>,
}

impl SosProgram {
    pub fn new(phi: Option<Dictionary>, objective: Objective) -> Self {
        Self {
            phi,
            scalars: Vec::new(),
            constraints: Vec::new(),
            objective,
            equalities: Vec::new(),
        }
    }

    /// Registers a named scalar and returns its handle.
    pub fn add_scalar(&mut self, name: &str) -> Var {
        self.scalars.push(name.to_string());
        Var::Scalar(self.scalars.len() - 1)
    }

    pub fn num_coeffs(&self) -> usize {
        self.phi.as_ref().map_or(0, Dictionary::len)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("program serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SosError> {
        serde_json::from_str(s).map_err(|e| SosError::Invalid(e.to_string()))
    }
}

/// Total-degree bases for one constraint:
/// `u` covers every target, `v` has half of `deg u` rounded up, and each
/// `w_j` has half of `deg u - deg s_j` rounded up (at least 0), with `v`
/// enlarged if `s_j w_j w_j` would not fit.
pub fn auto_bases(
    constraint: &InequalityConstraint,
    phi: Option<&Dictionary>,
) -> Result<SosBases, SosError> {
    let basis = constraint.c.basis().clone();
    let mut deg_u = constraint.c.degree();
    for t in constraint.coefficient_polys(phi)? {
        deg_u = deg_u.max(t.degree());
    }
    for st in &constraint.c_scalars {
        deg_u = deg_u.max(st.poly.degree());
    }
    auto_bases_for_degree(&basis, deg_u, &constraint.set)
}

pub fn auto_bases_for_degree(
    basis: &Basis,
    deg_u: u32,
    set: &SemialgebraicSet,
) -> Result<SosBases, SosError> {
    let mut deg_v = deg_u.div_ceil(2);
    let mut w = Vec::new();
    for s in &set.s_list {
        let ds = s.degree();
        let dw = deg_u.saturating_sub(ds).div_ceil(2);
        deg_v = deg_v.max((ds + 2 * dw).div_ceil(2));
        w.push(Dictionary::total_degree(basis.clone(), dw));
    }
    Ok(SosBases {
        u: Dictionary::total_degree(basis.clone(), deg_u),
        v: Dictionary::total_degree(basis.clone(), deg_v),
        w,
    })
}

/// Where each piece of a compiled program sits in the SDP variable vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SosLayout {
    pub coeff_offset: usize,
    pub num_coeffs: usize,
    pub scalar_offset: usize,
    pub num_scalars: usize,
    /// `(plus, minus)` offsets of the l1 split, if present.
    pub l1_offsets: Option<(usize, usize)>,
    pub grams: Vec<GramLayout>,
    /// `+1` for minimization, `-1` when the SDP minimizes the negated objective.
    pub objective_sign: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramLayout {
    pub bases: SosBases,
    /// SDP cone index of `P`.
    pub p_cone: usize,
    /// SDP cone indices of the `Q_j`.
    pub q_cones: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CompiledSos {
    pub problem: SdpProblem,
    pub layout: SosLayout,
}

fn var_index(layout: &SosLayout, v: Var, nc: usize, ns: usize) -> Result<usize, SosError> {
    match v {
        Var::Coeff(i) if i < nc => Ok(layout.coeff_offset + i),
        Var::Scalar(k) if k < ns => Ok(layout.scalar_offset + k),
        _ => Err(SosError::Invalid(format!("variable {v:?} out of range"))),
    }
}

pub fn compile(prog: &SosProgram) -> Result<CompiledSos, SosError> {
    let nc = prog.num_coeffs();
    let ns = prog.scalars.len();
    if prog.constraints.is_empty() {
        return Err(SosError::Invalid("no constraints".into()));
    }
    let l1 = prog.objective.l1_weight != 0.0 && nc > 0;

    // per-constraint bases first, so cone sizes are known
    let mut all_bases = Vec::with_capacity(prog.constraints.len());
    for (ci, con) in prog.constraints.iter().enumerate() {
        let bases = match &con.bases {
            Some(b) => b.clone(),
            None => auto_bases(con, prog.phi.as_ref())?,
        };
        if bases.w.len() != con.set.s_list.len() {
            return Err(SosError::Constraint {
                constraint: ci,
                msg: format!(
                    "{} multiplier bases for {} set polynomials",
                    bases.w.len(),
                    con.set.s_list.len()
                ),
            });
        }
        if bases.v.is_empty() {
            return Err(SosError::Constraint {
                constraint: ci,
                msg: "empty v basis: equality-only constraints are not supported".into(),
            });
        }
        all_bases.push(bases);
    }

    let mut cones = Vec::new();
    if nc + ns > 0 {
        cones.push(Cone::Free { dim: nc + ns });
    }
    if l1 {
        cones.push(Cone::Nonneg { dim: 2 * nc });
    }
    let mut grams = Vec::new();
    for bases in &all_bases {
        let p_cone = cones.len();
        cones.push(Cone::Psd {
            side: bases.v.len(),
        });
        let mut q_cones = Vec::new();
        for w in &bases.w {
            q_cones.push(cones.len());
            cones.push(Cone::Psd { side: w.len() });
        }
        grams.push(GramLayout {
            bases: bases.clone(),
            p_cone,
            q_cones,
        });
    }
    let mut problem = SdpProblem::new(cones);
    let offsets = problem.offsets();
    let layout = SosLayout {
        coeff_offset: 0,
        num_coeffs: nc,
        scalar_offset: nc,
        num_scalars: ns,
        l1_offsets: l1.then(|| (offsets[1], offsets[1] + nc)),
        grams,
        objective_sign: match prog.objective.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        },
    };

    for (ci, con) in prog.constraints.iter().enumerate() {
        compile_constraint(prog, ci, con, &layout, &offsets, &mut problem)?;
    }

    for eq in &prog.equalities {
        let mut entries = Vec::new();
        for &(v, coef) in &eq.terms {
            entries.push((var_index(&layout, v, nc, ns)?, coef));
        }
        if entries.iter().all(|e| e.1 == 0.0) {
            if eq.rhs != 0.0 {
                return Err(SosError::Invalid(
                    "inconsistent linear equality 0 = rhs".into(),
                ));
            }
            continue;
        }
        problem.add_row(&entries, eq.rhs);
    }

    let sign = layout.objective_sign;
    for &(v, coef) in &prog.objective.linear {
        problem.add_objective(var_index(&layout, v, nc, ns)?, sign * coef);
    }
    if let Some((plus, minus)) = layout.l1_offsets {
        for i in 0..nc {
            // coeff_i = plus_i - minus_i
            problem.add_row(
                &[
                    (layout.coeff_offset + i, 1.0),
                    (plus + i, -1.0),
                    (minus + i, 1.0),
                ],
                0.0,
            );
            problem.add_objective(plus + i, prog.objective.l1_weight);
            problem.add_objective(minus + i, prog.objective.l1_weight);
        }
    }
    Ok(CompiledSos { problem, layout })
}

/// Products `f * g_i * g_k` for `i >= k`, keyed by `(i, k)`.
type KeyedProducts = Vec<((usize, usize), Poly)>;

fn gram_products(g: &Dictionary, weight: Option<&Poly>) -> Result<KeyedProducts, SosError> {
    let elems: Vec<Poly> = (0..g.len()).map(|i| g.element(i)).collect();
    let mut out = Vec::with_capacity(g.len() * (g.len() + 1) / 2);
    for k in 0..g.len() {
        for i in k..g.len() {
            let mut p = elems[i].mul(&elems[k])?;
            if let Some(w) = weight {
                p = w.mul(&p)?;
            }
            out.push(((i, k), p));
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Row {
    entries: Vec<(usize, f64)>,
    rhs: f64,
}

fn compile_constraint(
    prog: &SosProgram,
    ci: usize,
    con: &InequalityConstraint,
    layout: &SosLayout,
    offsets: &[usize],
    problem: &mut SdpProblem,
) -> Result<(), SosError> {
    let gl = &layout.grams[ci];
    let bases = &gl.bases;
    let nc = layout.num_coeffs;
    let ns = layout.num_scalars;

    // A1: every target in span u
    let restrict = |p: &Poly| {
        p.restrict(&bases.u).map_err(|e| SosError::NotInU {
            constraint: ci,
            source: e,
        })
    };
    let coeff_polys: Vec<PolyInBasis> = con
        .coefficient_polys(prog.phi.as_ref())?
        .iter()
        .map(restrict)
        .collect::<Result<_, _>>()?;
    let c0 = restrict(&con.c)?;
    let mut scalar_polys = Vec::new();
    for st in &con.c_scalars {
        if st.scalar >= ns {
            return Err(SosError::Constraint {
                constraint: ci,
                msg: format!("scalar {} is not declared", st.scalar),
            });
        }
        scalar_polys.push((st.scalar, restrict(&st.poly)?));
    }

    // Gram side
    let mut rows: BTreeMap<MultiIndex, Row> = BTreeMap::new();
    let p_off = offsets[gl.p_cone];
    let side_v = bases.v.len();
    for ((i, k), prod) in gram_products(&bases.v, None)? {
        let var = p_off + svec_index(side_v, i, k);
        let scale = if i == k { 1.0 } else { SQRT2 };
        for (m, c) in prod.terms() {
            rows.entry(m.clone())
                .or_default()
                .entries
                .push((var, -scale * c));
        }
    }
    let vv_support: Vec<MultiIndex> = rows.keys().cloned().collect();
    let in_vv = |m: &MultiIndex| vv_support.binary_search(m).is_ok();
    // A3: s_j w_j w_j in span(v v)
    for (j, (w, s)) in bases.w.iter().zip(&con.set.s_list).enumerate() {
        let q_off = offsets[gl.q_cones[j]];
        let side_w = w.len();
        for ((i, k), prod) in gram_products(w, Some(s))? {
            let var = q_off + svec_index(side_w, i, k);
            let scale = if i == k { 1.0 } else { SQRT2 };
            for (m, c) in prod.terms() {
                if !in_vv(m) {
                    return Err(SosError::NotInGramSpan {
                        constraint: ci,
                        what: format!("multiplier s_{j} w w"),
                        index: m.clone(),
                    });
                }
                rows.get_mut(m)
                    .expect("checked")
                    .entries
                    .push((var, -scale * c));
            }
        }
    }
    // A3: u in span(v v)
    for m in bases.u.indices() {
        if !in_vv(m) {
            return Err(SosError::NotInGramSpan {
                constraint: ci,
                what: "u".into(),
                index: m.clone(),
            });
        }
    }

    // target side
    for (pos, m) in bases.u.indices().iter().enumerate() {
        let row = rows.get_mut(m).expect("u inside v v");
        for (j, t) in coeff_polys.iter().enumerate() {
            if t.coeffs[pos] != 0.0 {
                row.entries.push((layout.coeff_offset + j, t.coeffs[pos]));
            }
        }
        for (k, t) in &scalar_polys {
            if t.coeffs[pos] != 0.0 {
                row.entries.push((layout.scalar_offset + k, t.coeffs[pos]));
            }
        }
        row.rhs = -c0.coeffs[pos];
    }
    debug_assert!(coeff_polys.len() == nc);

    for (m, row) in rows {
        let entries = merge_entries(row.entries);
        if entries.is_empty() {
            if row.rhs != 0.0 {
                return Err(SosError::Constraint {
                    constraint: ci,
                    msg: format!("term {m} cannot be matched"),
                });
            }
            continue;
        }
        problem.add_row(&entries, row.rhs);
    }
    Ok(())
}

fn merge_entries(mut e: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    e.sort_by_key(|x| x.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(e.len());
    for (j, v) in e {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|x| x.1 != 0.0);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGram {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SosSolution {
    pub status: SdpStatus,
    /// Coefficients of `V` over `phi`.
    pub coeffs: Vec<f64>,
    pub scalars: Vec<f64>,
    /// In the program's own sense.
    pub objective: f64,
    pub grams: Vec<ConstraintGram>,
    pub sdp: SdpSolution,
}

impl SosSolution {
    pub fn v(&self, prog: &SosProgram) -> Option<PolyInBasis> {
        prog.phi
            .as_ref()
            .map(|phi| PolyInBasis::new(phi.clone(), self.coeffs.clone()).expect("length matches"))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        match v {
            Var::Scalar(k) => self.scalars[k],
            Var::Coeff(i) => self.coeffs[i],
        }
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn solve(prog: &SosProgram, opts: &SolverOptions) -> Result<SosSolution, SosError> {
    let compiled = compile(prog)?;
    let sol = sdp::solve(&compiled.problem, opts)?;
    Ok(extract(prog, &compiled, sol))
}

fn extract(prog: &SosProgram, compiled: &CompiledSos, sol: SdpSolution) -> SosSolution {
    let lay = &compiled.layout;
    let coeffs = sol.z[lay.coeff_offset..lay.coeff_offset + lay.num_coeffs].to_vec();
    let scalars = sol.z[lay.scalar_offset..lay.scalar_offset + lay.num_scalars].to_vec();
    let grams = lay
        .grams
        .iter()
        .map(|g| ConstraintGram {
            p: to_rows(
                &compiled
                    .problem
                    .psd_block(&sol.z, g.p_cone)
                    .expect("psd cone"),
            ),
            q: g.q_cones
                .iter()
                .map(|&c| to_rows(&compiled.problem.psd_block(&sol.z, c).expect("psd cone")))
                .collect(),
        })
        .collect();
    let mut objective = 0.0;
    for &(v, coef) in &prog.objective.linear {
        objective += coef
            * match v {
                Var::Coeff(i) => coeffs[i],
                Var::Scalar(k) => scalars[k],
            };
    }
    let l1 = prog.objective.l1_weight * coeffs.iter().map(|c| c.abs()).sum::<f64>();
    objective += match prog.objective.sense {
        Sense::Minimize => l1,
        Sense::Maximize => -l1,
    };
    SosSolution {
        status: sol.status,
        coeffs,
        scalars,
        objective,
        grams,
        sdp: sol,
    }
}

/// The polynomial constraint `i` certifies nonnegative on its set, at the
/// solution: `a V + b Lie V + c + sum sigma_k c_k`.
pub fn certificate_poly(prog: &SosProgram, sol: &SosSolution, i: usize) -> Result<Poly, SosError> {
    let con = &prog.constraints[i];
    let mut out = con.c.clone();
    for (j, t) in con.coefficient_polys(prog.phi.as_ref())?.iter().enumerate() {
        out = out.add(&t.scale(sol.coeffs[j]))?;
    }
    for st in &con.c_scalars {
        out = out.add(&st.poly.scale(sol.scalars[st.scalar]))?;
    }
    Ok(out)
}

/// `v' P v + sum_j s_j w_j' Q_j w_j` at `x`, from the returned Gram matrices.
pub fn gram_value(
    prog: &SosProgram,
    sol: &SosSolution,
    layout: &SosLayout,
    i: usize,
    x: &[f64],
) -> Result<f64, SosError> {
    let g = &layout.grams[i];
    let quad = |d: &Dictionary, m: &[Vec<f64>]| -> Result<f64, SosError> {
        let e = d.evaluate(x)?;
        let mut acc = 0.0;
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                acc += e[r] * v * e[c];
            }
        }
        Ok(acc)
    };
    let mut total = quad(&g.bases.v, &sol.grams[i].p)?;
    for (j, s) in prog.constraints[i].set.s_list.iter().enumerate() {
        total += s.evaluate(x)? * quad(&g.bases.w[j], &sol.grams[i].q[j])?;
    }
    Ok(total)
}

/// `a V + b (Lie V) + c - eps * e >= 0` with `V` fixed and `eps` maximized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTemplate {
    pub a: Poly,
    pub b: Poly,
    pub c: Poly,
    /// Positive weight multiplying `eps`, such as `|x|^2`.
    pub eps_weight: Poly,
    pub set: SemialgebraicSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub status: SdpStatus,
    /// Largest `eps` with an SOS certificate; `NaN` when the solve failed.
    pub epsilon: f64,
    /// Minimum over the grid of `(a V + b Lie V + c) / eps_weight` at points
    /// of the set where the weight is positive. An upper estimate of `eps`.
    pub grid_min_ratio: f64,
    pub grid_points: usize,
}

/// Re-checks a candidate `V` against the exact generator of `system`.
pub fn posterior_verify(
    v: &Poly,
    system: &SystemSpec,
    template: &PosteriorTemplate,
    grid: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<PosteriorReport, SosError> {
    let lie = system.exact_lie_poly(v)?;
    let fixed = template
        .a
        .mul(v)?
        .add(&template.b.mul(&lie)?)?
        .add(&template.c)?;
    let mut prog = SosProgram::new(None, Objective::feasibility());
    let eps = prog.add_scalar("epsilon");
    prog.objective = Objective::maximize(eps);
    let mut con = InequalityConstraint::nonnegative(fixed.clone());
    con.c_scalars.push(ScalarTerm {
        scalar: 0,
        poly: template.eps_weight.scale(-1.0),
    });
    con.set = template.set.clone();
    prog.constraints.push(con);
    let sol = solve(&prog, opts)?;
    let epsilon = if sol.status == SdpStatus::Optimal {
        sol.scalar(eps)
    } else {
        f64::NAN
    };

    let mut grid_min = f64::INFINITY;
    let mut used = 0;
    for x in grid {
        if !template.set.contains(x)? {
            continue;
        }
        let w = template.eps_weight.evaluate(x)?;
        if w <= 1e-12 {
            continue;
        }
        used += 1;
        grid_min = grid_min.min(fixed.evaluate(x)? / w);
    }
    Ok(PosteriorReport {
        status: sol.status,
        epsilon,
        grid_min_ratio: grid_min,
        grid_points: used,
    })
}

/// `sum_k x_k^2` in `basis`.
pub fn squared_norm(basis: &Basis) -> Poly {
    let d = basis.dim();
    let terms: Vec<(Vec<u32>, f64)> = (0..d)
        .map(|k| {
            let mut e = vec![0; d];
            e[k] = 2;
            (e, 1.0)
        })
        .collect();
    Poly::from_monomials(basis.clone(), &terms)
}
