//! Sparse multivariate polynomials with real coefficients.
//!
//! Terms are keyed by exponent vectors. Used for exact symbolic work: limit
//! models, generator columns and the diffusion identity `L(x_i x_j) - b_i x_j - b_j x_i`.

use alloc::collections::btree_map::Entry;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use crate::math;

/// Exponent vector of a monomial.
pub type MultiIndex = Vec<u32>;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::monomial(vec![0; dim], value)
    }

    /// The coordinate function `x_i`.
    pub fn variable(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Self::monomial(e, 1.0)
    }

    pub fn monomial(exponents: MultiIndex, coef: f64) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, coef);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> + '_ {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn coeff(&self, exponents: &[u32]) -> f64 {
        self.terms.get(exponents).copied().unwrap_or(0.0)
    }

    pub fn add_term(&mut self, exponents: MultiIndex, coef: f64) {
        debug_assert_eq!(exponents.len(), self.dim);
        if coef == 0.0 {
            return;
        }
        match self.terms.entry(exponents) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += coef;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(coef);
            }
        }
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|(e, &c)| c * e.iter().zip(x).map(|(&k, &xi)| math::powi(xi, k)).product::<f64>())
            .sum()
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::constant(self.dim, 1.0);
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Partial derivative with respect to `x_i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, &c) in &self.terms {
            if e[i] > 0 {
                let mut d = e.clone();
                d[i] -= 1;
                out.add_term(d, c * e[i] as f64);
            }
        }
        out
    }

    /// Drops every term whose degree exceeds `max_degree`.
    pub fn truncate(&self, max_degree: u32) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, &c) in &self.terms {
            if e.iter().sum::<u32>() <= max_degree {
                out.add_term(e.clone(), c);
            }
        }
        out
    }

    /// Removes terms with `|coef| <= tol`.
    pub fn prune(&self, tol: f64) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, &c) in &self.terms {
            if c.abs() > tol {
                out.add_term(e.clone(), c);
            }
        }
        out
    }

    /// Substitutes `x_var := replacement` and removes `x_var` from the
    /// variable list. `replacement` lives in the remaining `dim - 1` variables.
    pub fn eliminate(&self, var: usize, replacement: &Polynomial) -> Self {
        assert!(var < self.dim);
        assert_eq!(replacement.dim + 1, self.dim);
        let mut out = Self::zero(self.dim - 1);
        let mut powers: Vec<Polynomial> = vec![Self::constant(self.dim - 1, 1.0)];
        for (e, &c) in &self.terms {
            let k = e[var] as usize;
            while powers.len() <= k {
                let next = powers.last().map(|p| p * replacement).unwrap_or_default();
                powers.push(next);
            }
            let mut rest = e.clone();
            rest.remove(var);
            let term = &Self::monomial(rest, c) * &powers[k];
            out = &out + &term;
        }
        out
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim);
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term(e.clone(), c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim);
        let mut out = Polynomial::zero(self.dim);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &rhs.terms {
                let e: MultiIndex = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}
