//! Multivariate polynomial dictionaries over `R^d`.
//!
//! Two families are supported: plain monomials `x^a` and tensor-product
//! Chebyshev polynomials `T_a1(xi_1) ... T_ad(xi_d)`. Chebyshev dictionaries
//! carry an explicit box `[lo_k, hi_k]` per coordinate and evaluate on the
//! rescaled state `xi_k = (x_k - c_k) / h_k`, where `c_k` is the box centre
//! and `h_k` the half-width. States are expected to lie inside that box; the
//! library does not clip.
//!
//! Dictionaries are ordered graded-lexicographically: total degree first,
//! then larger exponents on earlier coordinates first, so in two variables
//! the quadratic block reads `x1^2, x1 x2, x2^2`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficients below this fraction of the largest one are treated as
/// round-off when a polynomial is restricted to a dictionary.
pub const RESTRICT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("state has dimension {got}, dictionary expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("incompatible bases: {0}")]
    BasisMismatch(String),
    #[error("index {0} of the smaller dictionary is missing from the larger one")]
    SmallNotContained(MultiIndex),
    #[error("target dictionary is missing indices {}", fmt_indices(.missing))]
    TargetTooSmall { missing: Vec<MultiIndex> },
    #[error("coefficient vector has length {got}, dictionary has {expected} elements")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
}

fn fmt_indices(v: &[MultiIndex]) -> String {
    let parts: Vec<String> = v.iter().map(|m| m.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Exponent vector of one basis element.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self(exponents)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn unit(dim: usize, k: usize) -> Self {
        let mut e = vec![0; dim];
        e[k] = 1;
        Self(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Monomial,
    Chebyshev,
}

/// Family plus the coordinate system the basis functions live in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Basis {
    Monomial {
        dim: usize,
    },
    /// Chebyshev polynomials of `xi_k = (x_k - c_k) / h_k` for the box `domain`.
    Chebyshev {
        domain: Vec<[f64; 2]>,
    },
}

impl Basis {
    pub fn monomial(dim: usize) -> Self {
        Basis::Monomial { dim }
    }

    /// Chebyshev basis on the reference box `[-1, 1]^dim`.
    pub fn chebyshev(dim: usize) -> Self {
        Basis::Chebyshev {
            domain: vec![[-1.0, 1.0]; dim],
        }
    }

    pub fn chebyshev_on(domain: Vec<[f64; 2]>) -> Self {
        Basis::Chebyshev { domain }
    }

    pub fn of_family(family: Family, dim: usize) -> Self {
        match family {
            Family::Monomial => Self::monomial(dim),
            Family::Chebyshev => Self::chebyshev(dim),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Basis::Monomial { dim } => *dim,
            Basis::Chebyshev { domain } => domain.len(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Basis::Monomial { .. } => Family::Monomial,
            Basis::Chebyshev { .. } => Family::Chebyshev,
        }
    }

    pub fn domain(&self) -> Option<&[[f64; 2]]> {
        match self {
            Basis::Monomial { .. } => None,
            Basis::Chebyshev { domain } => Some(domain),
        }
    }

    /// Centre and half-width of coordinate `k` (`(0, 1)` for monomials).
    fn affine(&self, k: usize) -> (f64, f64) {
        match self {
            Basis::Monomial { .. } => (0.0, 1.0),
            Basis::Chebyshev { domain } => {
                let [lo, hi] = domain[k];
                (0.5 * (lo + hi), 0.5 * (hi - lo))
            }
        }
    }

    fn validate(&self) -> Result<(), PolyError> {
        if self.dim() == 0 {
            return Err(PolyError::InvalidDictionary(
                "dimension must be positive".into(),
            ));
        }
        if let Basis::Chebyshev { domain } = self {
            for (k, [lo, hi]) in domain.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return Err(PolyError::InvalidDictionary(format!(
                        "coordinate {k} has degenerate box [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    fn ensure_same(&self, other: &Basis) -> Result<(), PolyError> {
        if self == other {
            Ok(())
        } else {
            Err(PolyError::BasisMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Values of the 1D basis functions `0..=max_deg` of coordinate `k` at `x`.
    fn univariate_into(&self, k: usize, x: f64, out: &mut [f64]) {
        let (c, h) = self.affine(k);
        let xi = (x - c) / h;
        if out.is_empty() {
            return;
        }
        out[0] = 1.0;
        if out.len() == 1 {
            return;
        }
        out[1] = xi;
        match self {
            Basis::Monomial { .. } => {
                for j in 2..out.len() {
                    out[j] = out[j - 1] * xi;
                }
            }
            Basis::Chebyshev { .. } => {
                for j in 2..out.len() {
                    out[j] = 2.0 * xi * out[j - 1] - out[j - 2];
                }
            }
        }
    }
}

/// Ordered finite set of basis functions of one family.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "DictionarySpec", into = "DictionarySpec")]
pub struct Dictionary {
    basis: Basis,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

impl PartialEq for Dictionary {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis && self.indices == other.indices
    }
}

impl Dictionary {
    /// Builds a dictionary from arbitrary indices; they are sorted and
    /// duplicates rejected.
    pub fn new(basis: Basis, mut indices: Vec<MultiIndex>) -> Result<Self, PolyError> {
        basis.validate()?;
        if indices.is_empty() {
            return Err(PolyError::InvalidDictionary("no basis functions".into()));
        }
        for idx in &indices {
            if idx.dim() != basis.dim() {
                return Err(PolyError::DimensionMismatch {
                    expected: basis.dim(),
                    got: idx.dim(),
                });
            }
        }
        indices.sort();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(PolyError::InvalidDictionary(format!(
                    "duplicate index {}",
                    w[0]
                )));
            }
        }
        let lookup = indices
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, m)| (m, i))
            .collect();
        Ok(Self {
            basis,
            indices,
            lookup,
        })
    }

    /// All multi-indices of total degree at most `deg`.
    pub fn total_degree(basis: Basis, deg: u32) -> Self {
        let d = basis.dim();
        let mut indices = Vec::new();
        for total in 0..=deg {
            push_compositions(d, total, &mut Vec::with_capacity(d), &mut indices);
        }
        Self::new(basis, indices).expect("total-degree index set is valid")
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn family(&self) -> Family {
        self.basis.family()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, idx: &MultiIndex) -> Option<usize> {
        self.lookup.get(idx).copied()
    }

    pub fn contains(&self, idx: &MultiIndex) -> bool {
        self.lookup.contains_key(idx)
    }

    pub fn max_degree(&self) -> u32 {
        self.indices
            .iter()
            .map(MultiIndex::degree)
            .max()
            .unwrap_or(0)
    }

    fn max_exponent(&self) -> u32 {
        self.indices
            .iter()
            .flat_map(|m| m.0.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Values of every basis function at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, PolyError> {
        let mut out = vec![0.0; self.len()];
        self.evaluator().evaluate_into(x, &mut out)?;
        Ok(out)
    }

    /// Reusable evaluator holding scratch space, for hot loops.
    pub fn evaluator(&self) -> DictionaryEvaluator<'_> {
        let width = self.max_exponent() as usize + 1;
        DictionaryEvaluator {
            dict: self,
            width,
            table: vec![0.0; width * self.dim()],
        }
    }

    /// The basis function `i` as a sparse polynomial.
    pub fn element(&self, i: usize) -> Poly {
        Poly::monomial_term(self.basis.clone(), self.indices[i].clone(), 1.0)
    }
}

fn push_compositions(d: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() == d - 1 {
        let mut e = prefix.clone();
        e.push(total);
        out.push(MultiIndex(e));
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        push_compositions(d, total - first, prefix, out);
        prefix.pop();
    }
}

pub struct DictionaryEvaluator<'a> {
    dict: &'a Dictionary,
    width: usize,
    table: Vec<f64>,
}

impl DictionaryEvaluator<'_> {
    pub fn evaluate_into(&mut self, x: &[f64], out: &mut [f64]) -> Result<(), PolyError> {
        let d = self.dict.dim();
        if x.len() != d {
            return Err(PolyError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        debug_assert_eq!(out.len(), self.dict.len());
        let w = self.width;
        for (k, &xk) in x.iter().enumerate() {
            self.dict
                .basis
                .univariate_into(k, xk, &mut self.table[k * w..(k + 1) * w]);
        }
        for (slot, idx) in out.iter_mut().zip(&self.dict.indices) {
            let mut v = 1.0;
            for (k, &e) in idx.0.iter().enumerate() {
                v *= self.table[k * w + e as usize];
            }
            *slot = v;
        }
        Ok(())
    }
}

/// Serialized form of a [`Dictionary`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    pub family: Family,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<Vec<u32>>>,
    /// Chebyshev box per coordinate; defaults to `[-1, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
}

impl TryFrom<DictionarySpec> for Dictionary {
    type Error = PolyError;

    fn try_from(spec: DictionarySpec) -> Result<Self, Self::Error> {
        let basis = match (spec.family, spec.domain) {
            (Family::Monomial, None) => Basis::monomial(spec.dimension),
            (Family::Monomial, Some(_)) => {
                return Err(PolyError::InvalidDictionary(
                    "monomial dictionaries take no domain".into(),
                ))
            }
            (Family::Chebyshev, None) => Basis::chebyshev(spec.dimension),
            (Family::Chebyshev, Some(dom)) => {
                if dom.len() != spec.dimension {
                    return Err(PolyError::InvalidDictionary(format!(
                        "domain has {} intervals for dimension {}",
                        dom.len(),
                        spec.dimension
                    )));
                }
                Basis::chebyshev_on(dom)
            }
        };
        match (spec.max_degree, spec.indices) {
            (Some(deg), None) => {
                basis.validate()?;
                Ok(Dictionary::total_degree(basis, deg))
            }
            (None, Some(list)) => {
                Dictionary::new(basis, list.into_iter().map(MultiIndex).collect())
            }
            _ => Err(PolyError::InvalidDictionary(
                "exactly one of max_degree or indices must be given".into(),
            )),
        }
    }
}

impl From<Dictionary> for DictionarySpec {
    fn from(d: Dictionary) -> Self {
        let deg = d.max_degree();
        let is_total = Dictionary::total_degree(d.basis.clone(), deg).indices == d.indices;
        let domain = match &d.basis {
            Basis::Monomial { .. } => None,
            Basis::Chebyshev { domain } => {
                if domain.iter().all(|iv| *iv == [-1.0, 1.0]) {
                    None
                } else {
                    Some(domain.clone())
                }
            }
        };
        DictionarySpec {
            family: d.family(),
            dimension: d.dim(),
            max_degree: is_total.then_some(deg),
            indices: (!is_total).then(|| d.indices.iter().map(|m| m.0.clone()).collect()),
            domain,
        }
    }
}

/// Dictionary of all multi-indices of total degree `<= deg`; Chebyshev
/// dictionaries built this way live on `[-1, 1]^d`.
pub fn total_degree_dictionary(family: Family, d: usize, deg: u32) -> Dictionary {
    Dictionary::total_degree(Basis::of_family(family, d), deg)
}

/// Selection matrix `Theta` with `small(x) = Theta * big(x)`.
pub fn inclusion_matrix(small: &Dictionary, big: &Dictionary) -> Result<DMatrix<f64>, PolyError> {
    small.basis.ensure_same(&big.basis)?;
    let mut theta = DMatrix::zeros(small.len(), big.len());
    for (i, idx) in small.indices.iter().enumerate() {
        let j = big
            .position(idx)
            .ok_or_else(|| PolyError::SmallNotContained(idx.clone()))?;
        theta[(i, j)] = 1.0;
    }
    Ok(theta)
}

/// A polynomial as dense coefficients over a dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyInBasis {
    pub dictionary: Dictionary,
    pub coeffs: Vec<f64>,
}

impl PolyInBasis {
    pub fn new(dictionary: Dictionary, coeffs: Vec<f64>) -> Result<Self, PolyError> {
        if coeffs.len() != dictionary.len() {
            return Err(PolyError::LengthMismatch {
                expected: dictionary.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { dictionary, coeffs })
    }

    pub fn zero(dictionary: Dictionary) -> Self {
        let n = dictionary.len();
        Self {
            dictionary,
            coeffs: vec![0.0; n],
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        let vals = self.dictionary.evaluate(x)?;
        Ok(vals.iter().zip(&self.coeffs).map(|(v, c)| v * c).sum())
    }

    pub fn to_poly(&self) -> Poly {
        let mut p = Poly::zero(self.dictionary.basis.clone());
        for (idx, &c) in self.dictionary.indices.iter().zip(&self.coeffs) {
            if c != 0.0 {
                p.terms.insert(idx.clone(), c);
            }
        }
        p
    }

    /// `alpha * self + beta * other` on a shared dictionary.
    pub fn lin_comb(&self, alpha: f64, other: &PolyInBasis, beta: f64) -> Result<Self, PolyError> {
        if self.dictionary != other.dictionary {
            return Err(PolyError::BasisMismatch("different dictionaries".into()));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Self {
            dictionary: self.dictionary.clone(),
            coeffs,
        })
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Exact coefficients of `p * q` in `target`.
pub fn product_expand(
    p: &PolyInBasis,
    q: &PolyInBasis,
    target: &Dictionary,
) -> Result<PolyInBasis, PolyError> {
    p.dictionary.basis.ensure_same(&q.dictionary.basis)?;
    p.to_poly().mul(&q.to_poly())?.restrict(target)
}

/// Sparse polynomial over a [`Basis`], used for symbolic manipulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolySpec", into = "PolySpec")]
pub struct Poly {
    basis: Basis,
    terms: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolySpec {
    basis: Basis,
    terms: Vec<(MultiIndex, f64)>,
}

impl From<Poly> for PolySpec {
    fn from(p: Poly) -> Self {
        PolySpec {
            basis: p.basis,
            terms: p.terms.into_iter().collect(),
        }
    }
}

impl TryFrom<PolySpec> for Poly {
    type Error = PolyError;

    fn try_from(spec: PolySpec) -> Result<Self, PolyError> {
        spec.basis.validate()?;
        let d = spec.basis.dim();
        let mut p = Poly::zero(spec.basis);
        for (m, c) in spec.terms {
            if m.dim() != d {
                return Err(PolyError::DimensionMismatch {
                    expected: d,
                    got: m.dim(),
                });
            }
            *p.terms.entry(m).or_insert(0.0) += c;
        }
        p.terms.retain(|_, c| *c != 0.0);
        Ok(p)
    }
}

impl Poly {
    pub fn zero(basis: Basis) -> Self {
        Self {
            basis,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(basis: Basis, c: f64) -> Self {
        let d = basis.dim();
        Self::monomial_term(basis, MultiIndex::zeros(d), c)
    }

    pub fn monomial_term(basis: Basis, idx: MultiIndex, c: f64) -> Self {
        let mut p = Self::zero(basis);
        if c != 0.0 {
            p.terms.insert(idx, c);
        }
        p
    }

    /// The coordinate function `x_k` (in original, unscaled coordinates).
    pub fn variable(basis: Basis, k: usize) -> Self {
        let d = basis.dim();
        let (c, h) = basis.affine(k);
        let mut p = Self::zero(basis);
        p.terms.insert(MultiIndex::unit(d, k), h);
        if c != 0.0 {
            p.terms.insert(MultiIndex::zeros(d), c);
        }
        p
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs written in
    /// plain monomials of the original coordinates, re-expressed in `basis`.
    pub fn from_monomials(basis: Basis, terms: &[(Vec<u32>, f64)]) -> Self {
        let d = basis.dim();
        let mut mono = Poly::zero(Basis::monomial(d));
        for (e, c) in terms {
            assert_eq!(e.len(), d, "exponent vector has wrong dimension");
            *mono.terms.entry(MultiIndex(e.clone())).or_insert(0.0) += c;
        }
        mono.terms.retain(|_, c| *c != 0.0);
        mono.convert(&basis)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, v)| (k, *v))
    }

    pub fn coeff(&self, idx: &MultiIndex) -> f64 {
        self.terms.get(idx).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| *c == 0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(_, c)| **c != 0.0)
            .map(|(m, _)| m.degree())
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        let d = self.basis.dim();
        if x.len() != d {
            return Err(PolyError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let width = self
            .terms
            .keys()
            .flat_map(|m| m.0.iter().copied())
            .max()
            .unwrap_or(0) as usize
            + 1;
        let mut table = vec![0.0; width * d];
        for k in 0..d {
            self.basis
                .univariate_into(k, x[k], &mut table[k * width..(k + 1) * width]);
        }
        Ok(self
            .terms
            .iter()
            .map(|(m, c)| {
                c * m
                    .0
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| table[k * width + e as usize])
                    .product::<f64>()
            })
            .sum())
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.basis.ensure_same(&other.basis)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.add(&other.scale(-1.0))
    }

    pub fn add_constant(&self, c: f64) -> Poly {
        let mut out = self.clone();
        *out.terms
            .entry(MultiIndex::zeros(self.basis.dim()))
            .or_insert(0.0) += c;
        out
    }

    pub fn mul(&self, other: &Poly) -> Result<Poly, PolyError> {
        self.basis.ensure_same(&other.basis)?;
        let d = self.basis.dim();
        let mut out = Poly::zero(self.basis.clone());
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let c = ca * cb;
                if c == 0.0 {
                    continue;
                }
                match self.basis {
                    Basis::Monomial { .. } => {
                        *out.terms.entry(a.add(b)).or_insert(0.0) += c;
                    }
                    Basis::Chebyshev { .. } => {
                        // T_i T_j = (T_{i+j} + T_{|i-j|}) / 2 in every coordinate.
                        let mut combos: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(d), c)];
                        for k in 0..d {
                            let (i, j) = (a.0[k], b.0[k]);
                            let mut next = Vec::with_capacity(combos.len() * 2);
                            for (e, w) in combos {
                                if i == 0 || j == 0 {
                                    let mut e1 = e;
                                    e1.push(i + j);
                                    next.push((e1, w));
                                } else {
                                    let mut e1 = e.clone();
                                    e1.push(i + j);
                                    next.push((e1, 0.5 * w));
                                    let mut e2 = e;
                                    e2.push(i.abs_diff(j));
                                    next.push((e2, 0.5 * w));
                                }
                            }
                            combos = next;
                        }
                        for (e, w) in combos {
                            *out.terms.entry(MultiIndex(e)).or_insert(0.0) += w;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Partial derivative with respect to the original coordinate `x_k`.
    pub fn derivative(&self, k: usize) -> Poly {
        let (_, h) = self.basis.affine(k);
        let mut out = Poly::zero(self.basis.clone());
        for (m, c) in &self.terms {
            let n = m.0[k];
            if n == 0 {
                continue;
            }
            match self.basis {
                Basis::Monomial { .. } => {
                    let mut e = m.0.clone();
                    e[k] -= 1;
                    *out.terms.entry(MultiIndex(e)).or_insert(0.0) += c * n as f64;
                }
                Basis::Chebyshev { .. } => {
                    // T_n' = n U_{n-1}, U_{n-1} = 2 sum_{j = n-1, n-3, ...} T_j (T_0 halved).
                    let mut j = n as i64 - 1;
                    while j >= 0 {
                        let w = if j == 0 { 1.0 } else { 2.0 };
                        let mut e = m.0.clone();
                        e[k] = j as u32;
                        *out.terms.entry(MultiIndex(e)).or_insert(0.0) += c * n as f64 * w / h;
                        j -= 2;
                    }
                }
            }
        }
        out
    }

    /// Substitutes `x_k := subs[k]` for every coordinate. The substituted
    /// polynomials fix the basis of the result.
    pub fn compose(&self, subs: &[Poly]) -> Result<Poly, PolyError> {
        let d = self.basis.dim();
        if subs.len() != d {
            return Err(PolyError::DimensionMismatch {
                expected: d,
                got: subs.len(),
            });
        }
        let out_basis = subs[0].basis.clone();
        for s in subs {
            s.basis.ensure_same(&out_basis)?;
        }
        // Per-coordinate tables of B_j(xi_k(subs[k])), j = 0..=max exponent.
        let mut tables: Vec<Vec<Poly>> = Vec::with_capacity(d);
        for (k, sub) in subs.iter().enumerate() {
            let max_e = self.terms.keys().map(|m| m.0[k]).max().unwrap_or(0);
            let (c, h) = self.basis.affine(k);
            let xi = sub.add_constant(-c).scale(1.0 / h);
            let mut table = vec![Poly::constant(out_basis.clone(), 1.0)];
            if max_e >= 1 {
                table.push(xi.clone());
            }
            for j in 2..=max_e as usize {
                let next = match self.basis {
                    Basis::Monomial { .. } => table[j - 1].mul(&xi)?,
                    Basis::Chebyshev { .. } => {
                        table[j - 1].mul(&xi)?.scale(2.0).sub(&table[j - 2])?
                    }
                };
                table.push(next);
            }
            tables.push(table);
        }
        let mut out = Poly::zero(out_basis.clone());
        for (m, c) in &self.terms {
            let mut term = Poly::constant(out_basis.clone(), *c);
            for (k, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    term = term.mul(&tables[k][e as usize])?;
                }
            }
            out = out.add(&term)?;
        }
        Ok(out)
    }

    /// The same function written in another basis of equal dimension.
    pub fn convert(&self, target: &Basis) -> Poly {
        if &self.basis == target {
            return self.clone();
        }
        let subs: Vec<Poly> = (0..self.basis.dim())
            .map(|k| Poly::variable(target.clone(), k))
            .collect();
        self.compose(&subs)
            .expect("dimensions agree by construction")
    }

    /// Drops coefficients below `rel_tol` times the largest one.
    pub fn prune(&mut self, rel_tol: f64) {
        let cut = rel_tol * self.max_abs_coeff();
        self.terms.retain(|_, c| c.abs() > cut);
    }

    /// Dense coefficients in `target`; fails if a non-negligible term has
    /// no slot there.
    pub fn restrict(&self, target: &Dictionary) -> Result<PolyInBasis, PolyError> {
        self.basis.ensure_same(&target.basis)?;
        let cut = RESTRICT_REL_TOL * self.max_abs_coeff();
        let mut coeffs = vec![0.0; target.len()];
        let mut missing = Vec::new();
        for (m, &c) in &self.terms {
            match target.position(m) {
                Some(i) => coeffs[i] = c,
                None if c.abs() > cut => missing.push(m.clone()),
                None => {}
            }
        }
        if !missing.is_empty() {
            return Err(PolyError::TargetTooSmall { missing });
        }
        Ok(PolyInBasis {
            dictionary: target.clone(),
            coeffs,
        })
    }

    /// Smallest total-degree dictionary holding this polynomial.
    pub fn total_degree_hull(&self) -> Dictionary {
        Dictionary::total_degree(self.basis.clone(), self.degree())
    }
}
