//! Monomial dictionaries and polynomial vector/matrix fields over them.
//!
//! The dictionary fixes the row/column semantics of every matrix in the
//! identification: entries are ordered by total degree, and within a degree
//! lexicographically with higher powers of earlier coordinates first. For two
//! coordinates and degree 3 this gives
//! `1, c1, c2, c1^2, c1c2, c2^2, c1^3, c1^2c2, c1c2^2, c2^3`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::poly::{MultiIndex, Polynomial};

#[derive(Clone, Debug, PartialEq)]
pub struct MonomialDictionary {
    dim: usize,
    max_degree: u32,
    indices: Vec<MultiIndex>,
    lookup: BTreeMap<MultiIndex, usize>,
}

/// Exponent vectors of total degree `deg` in `dim` variables, earlier
/// coordinates carrying the larger powers first.
fn exponents_of_degree(dim: usize, deg: u32) -> Vec<MultiIndex> {
    if dim == 0 {
        return if deg == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    if dim == 1 {
        return vec![vec![deg]];
    }
    let mut out = Vec::new();
    for first in (0..=deg).rev() {
        for rest in exponents_of_degree(dim - 1, deg - first) {
            let mut e = Vec::with_capacity(dim);
            e.push(first);
            e.extend(rest);
            out.push(e);
        }
    }
    out
}

impl MonomialDictionary {
    /// All monomials in `dim` variables of total degree at most `max_degree`.
    pub fn new(dim: usize, max_degree: u32) -> Self {
        assert!(dim >= 1, "dictionary needs at least one coordinate");
        let indices: Vec<MultiIndex> =
            (0..=max_degree).flat_map(|deg| exponents_of_degree(dim, deg)).collect();
        Self::build(dim, max_degree, indices)
    }

    /// Dictionary from an explicit list, e.g. read back from a model file.
    /// The list must start with the constant and contain every linear monomial.
    pub fn from_indices(dim: usize, indices: Vec<MultiIndex>) -> Result<Self> {
        if indices.first().map(|e| e.iter().all(|&k| k == 0)) != Some(true) {
            return Err(Error::Contract("dictionary must start with the constant monomial".into()));
        }
        for e in &indices {
            if e.len() != dim {
                return Err(Error::Contract(format!("multi-index {e:?} has wrong length")));
            }
        }
        let max_degree = indices.iter().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0);
        let dict = Self::build(dim, max_degree, indices);
        if dict.lookup.len() != dict.indices.len() {
            return Err(Error::Contract("dictionary contains duplicate monomials".into()));
        }
        for i in 0..dim {
            if dict.linear_index(i).is_none() {
                return Err(Error::Contract(format!("dictionary lacks the linear monomial x{i}")));
            }
        }
        Ok(dict)
    }

    fn build(dim: usize, max_degree: u32, indices: Vec<MultiIndex>) -> Self {
        let lookup = indices.iter().enumerate().map(|(k, e)| (e.clone(), k)).collect();
        Self { dim, max_degree, indices, lookup }
    }

    /// Dictionary degree sufficient for models whose highest transition order is `order`.
    pub fn degree_for_order(order: u32) -> u32 {
        order + 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
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

    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.lookup.get(exponents).copied()
    }

    pub fn linear_index(&self, i: usize) -> Option<usize> {
        let mut e = vec![0; self.dim];
        e[i] = 1;
        self.index_of(&e)
    }

    /// Position of `x_i x_j` (or `x_i^2`).
    pub fn quadratic_index(&self, i: usize, j: usize) -> Option<usize> {
        let mut e = vec![0; self.dim];
        e[i] += 1;
        e[j] += 1;
        self.index_of(&e)
    }

    /// Human-readable monomial name, e.g. `c1^2c2` (coordinates numbered from 1).
    pub fn name(&self, k: usize) -> alloc::string::String {
        let e = &self.indices[k];
        if e.iter().all(|&p| p == 0) {
            return "1".into();
        }
        let mut s = alloc::string::String::new();
        for (i, &p) in e.iter().enumerate() {
            match p {
                0 => {}
                1 => s.push_str(&format!("c{}", i + 1)),
                _ => s.push_str(&format!("c{}^{}", i + 1, p)),
            }
        }
        s
    }

    fn powers(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|&xi| {
                let mut p = Vec::with_capacity(self.max_degree as usize + 1);
                let mut acc = 1.0;
                for _ in 0..=self.max_degree {
                    p.push(acc);
                    acc *= xi;
                }
                p
            })
            .collect()
    }

    /// `psi(x)`: every dictionary function evaluated at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        let pw = self.powers(x);
        for (o, e) in out.iter_mut().zip(&self.indices) {
            *o = e.iter().enumerate().map(|(i, &k)| pw[i][k as usize]).product();
        }
    }

    /// `d psi(x)`: the generator with drift `b` and diffusion `a` (row-major
    /// `dim x dim`) applied to every dictionary function at `x`.
    pub fn apply_generator(&self, x: &[f64], b: &[f64], a: &[f64]) -> Vec<f64> {
        let d = self.dim;
        assert_eq!(x.len(), d);
        assert_eq!(b.len(), d);
        assert_eq!(a.len(), d * d);
        let pw = self.powers(x);
        // x^e with the exponent of coordinate `skip.0` lowered by `skip.1`, etc.
        let mono = |e: &MultiIndex, lower: &[(usize, u32)]| -> f64 {
            let mut v = 1.0;
            for (i, &k) in e.iter().enumerate() {
                let dec: u32 = lower.iter().filter(|(j, _)| *j == i).map(|(_, n)| n).sum();
                v *= pw[i][(k - dec) as usize];
            }
            v
        };
        self.indices
            .iter()
            .map(|e| {
                let mut acc = 0.0;
                for i in 0..d {
                    if e[i] == 0 {
                        continue;
                    }
                    acc += b[i] * e[i] as f64 * mono(e, &[(i, 1)]);
                    if e[i] >= 2 {
                        acc += 0.5 * a[i * d + i] * (e[i] * (e[i] - 1)) as f64 * mono(e, &[(i, 2)]);
                    }
                    for j in 0..d {
                        if j != i && e[j] > 0 {
                            acc += 0.5 * a[i * d + j] * (e[i] * e[j]) as f64 * mono(e, &[(i, 1), (j, 1)]);
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// Coefficient vector of `p` over this dictionary; fails naming the first
    /// monomial of `p` that the dictionary lacks.
    pub fn coefficients_of(&self, p: &Polynomial) -> Result<Vec<f64>> {
        if p.dim() != self.dim {
            return Err(Error::Contract(format!(
                "polynomial has {} variables, dictionary has {}",
                p.dim(),
                self.dim
            )));
        }
        let mut out = vec![0.0; self.len()];
        for (e, c) in p.terms() {
            match self.index_of(e) {
                Some(k) => out[k] += c,
                None => return Err(Error::Representation(e.clone())),
            }
        }
        Ok(out)
    }

    /// Polynomial with the given coefficient vector.
    pub fn polynomial(&self, coefficients: &[f64]) -> Polynomial {
        assert_eq!(coefficients.len(), self.len());
        let mut p = Polynomial::zero(self.dim);
        for (e, &c) in self.indices.iter().zip(coefficients) {
            p.add_term(e.clone(), c);
        }
        p
    }

    /// Number of monomials of degree at most `max_degree` in `dim` variables.
    pub fn size_for(dim: usize, max_degree: u32) -> usize {
        math::binomial((dim as u64) + max_degree as u64, max_degree as u64) as usize
    }
}

/// Polynomial components over a shared dictionary: row `i` holds the
/// coefficients of component `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialField {
    dictionary: MonomialDictionary,
    coefficients: Vec<Vec<f64>>,
}

impl PolynomialField {
    pub fn new(dictionary: MonomialDictionary, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(row) = coefficients.iter().find(|r| r.len() != dictionary.len()) {
            return Err(Error::Contract(format!(
                "coefficient row of length {} does not match dictionary size {}",
                row.len(),
                dictionary.len()
            )));
        }
        Ok(Self { dictionary, coefficients })
    }

    pub fn zeros(dictionary: MonomialDictionary, rows: usize) -> Self {
        let n = dictionary.len();
        Self { dictionary, coefficients: vec![vec![0.0; n]; rows] }
    }

    pub fn from_polynomials(dictionary: MonomialDictionary, polys: &[Polynomial]) -> Result<Self> {
        let coefficients = polys.iter().map(|p| dictionary.coefficients_of(p)).collect::<Result<_>>()?;
        Ok(Self { dictionary, coefficients })
    }

    pub fn dictionary(&self) -> &MonomialDictionary {
        &self.dictionary
    }

    pub fn rows(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coefficients[i]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coefficients[i]
    }

    pub fn polynomial(&self, i: usize) -> Polynomial {
        self.dictionary.polynomial(&self.coefficients[i])
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let psi = self.dictionary.eval(x);
        self.eval_with(&psi)
    }

    /// Evaluation from precomputed dictionary values.
    pub fn eval_with(&self, psi: &[f64]) -> Vec<f64> {
        self.coefficients.iter().map(|row| row.iter().zip(psi).map(|(c, p)| c * p).sum()).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        let coefficients = self.coefficients.iter().map(|r| r.iter().map(|c| c * s).collect()).collect();
        Self { dictionary: self.dictionary.clone(), coefficients }
    }

    /// Zeroes every coefficient of a monomial with degree above `max_degree`.
    pub fn truncated(&self, max_degree: u32) -> Self {
        let mut out = self.clone();
        for (k, e) in self.dictionary.indices().iter().enumerate() {
            if e.iter().sum::<u32>() > max_degree {
                for row in &mut out.coefficients {
                    row[k] = 0.0;
                }
            }
        }
        out
    }

    /// Zeroes coefficients with magnitude below `threshold`.
    pub fn hard_threshold(&self, threshold: f64) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .map(|r| r.iter().map(|&c| if c.abs() < threshold { 0.0 } else { c }).collect())
            .collect();
        Self { dictionary: self.dictionary.clone(), coefficients }
    }
}

/// Index of the pair `(i, j)`, `i <= j`, in row-major upper-triangular order.
pub fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

/// Symmetric matrix-valued polynomial field `a(x)`, stored as the
/// upper-triangular entries `(0,0), (0,1), .., (0,d-1), (1,1), ..`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionField {
    dim: usize,
    entries: PolynomialField,
}

impl DiffusionField {
    pub fn new(dim: usize, entries: PolynomialField) -> Result<Self> {
        if entries.rows() != dim * (dim + 1) / 2 {
            return Err(Error::Contract(format!(
                "diffusion field for dimension {dim} needs {} rows, got {}",
                dim * (dim + 1) / 2,
                entries.rows()
            )));
        }
        Ok(Self { dim, entries })
    }

    /// Builds the field from a full symmetric matrix of polynomials.
    pub fn from_matrix(dictionary: MonomialDictionary, matrix: &[Vec<Polynomial>]) -> Result<Self> {
        let d = matrix.len();
        let mut polys = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                polys.push(matrix[i][j].clone());
            }
        }
        Self::new(d, PolynomialField::from_polynomials(dictionary, &polys)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dictionary(&self) -> &MonomialDictionary {
        self.entries.dictionary()
    }

    pub fn entries(&self) -> &PolynomialField {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> Polynomial {
        self.entries.polynomial(upper_index(self.dim, i, j))
    }

    pub fn entry_coefficients(&self, i: usize, j: usize) -> &[f64] {
        self.entries.row(upper_index(self.dim, i, j))
    }

    /// Row-major `dim x dim` matrix `a(x)`.
    pub fn eval_matrix(&self, x: &[f64]) -> Vec<f64> {
        let psi = self.dictionary().eval(x);
        self.eval_matrix_with(&psi)
    }

    pub fn eval_matrix_with(&self, psi: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let upper = self.entries.eval_with(psi);
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = upper[upper_index(d, i, j)];
                m[i * d + j] = v;
                m[j * d + i] = v;
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.scale(s) }
    }

    pub fn hard_threshold(&self, threshold: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.hard_threshold(threshold) }
    }
}
