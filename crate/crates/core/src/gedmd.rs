//! Generator fit over a monomial dictionary and SDE identification.
//!
//! Given points `x_l` with drift and diffusion estimates, the generator is
//! fitted in the least-squares sense from `Psi_X` (dictionary values) and
//! `dPsi_X` (the generator applied to every dictionary function). Column `k` of
//! `L = M^T` holds the dictionary coefficients of `L psi_k`; drift and
//! diffusion are read off the columns of the linear and quadratic monomials.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::dictionary::{upper_index, DiffusionField, MonomialDictionary, PolynomialField};
use crate::error::{Error, Result};
use crate::km::Measurement;
use crate::linalg;
use crate::math;
use crate::mjp::{limit_sde_polynomials, JumpModel, TransitionRule};
use crate::poly::Polynomial;

/// Singular values below this fraction of the largest are dropped.
pub const SVD_REL_CUTOFF: f64 = 1e-10;

/// Matrix representation `L` of the generator on a dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    dictionary: MonomialDictionary,
    entries: DMatrix<f64>,
    /// Rank of `Psi_X` used in the fit (`n` for analytic matrices).
    pub rank: usize,
    pub rank_deficient: bool,
    /// Fewer measurements than dictionary functions.
    pub underdetermined: bool,
    /// `||dPsi_X - M Psi_X||_F`.
    pub residual: f64,
}

impl GeneratorMatrix {
    /// Wraps an `n x n` matrix whose column `k` represents `L psi_k`.
    pub fn from_entries(dictionary: MonomialDictionary, entries: DMatrix<f64>) -> Result<Self> {
        let n = dictionary.len();
        if entries.shape() != (n, n) {
            return Err(Error::Contract(format!("generator must be {n}x{n}, got {:?}", entries.shape())));
        }
        Ok(Self { dictionary, entries, rank: n, rank_deficient: false, underdetermined: false, residual: 0.0 })
    }

    pub fn dictionary(&self) -> &MonomialDictionary {
        &self.dictionary
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Entry `l_{ij}`: coefficient of `psi_i` in `L psi_j`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.entries.column(k).iter().copied().collect()
    }

    /// `L psi_k` as a polynomial.
    pub fn column_polynomial(&self, k: usize) -> Polynomial {
        self.dictionary.polynomial(&self.column(k))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { entries: &self.entries * s, residual: self.residual * s.abs(), ..self.clone() }
    }
}

/// `Psi_X` and `dPsi_X`, both `n x m`.
pub fn assemble(measurements: &[Measurement], dictionary: &MonomialDictionary) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = dictionary.len();
    let m = measurements.len();
    let mut psi = DMatrix::zeros(n, m);
    let mut dpsi = DMatrix::zeros(n, m);
    let mut buf = vec![0.0; n];
    for (l, meas) in measurements.iter().enumerate() {
        let d = dictionary.dim();
        if meas.point.len() != d || meas.drift.len() != d || meas.diffusion.len() != d * d {
            return Err(Error::Contract(format!("measurement {l} does not have dimension {d}")));
        }
        dictionary.eval_into(&meas.point, &mut buf);
        psi.column_mut(l).copy_from_slice(&buf);
        let g = dictionary.apply_generator(&meas.point, &meas.drift, &meas.diffusion);
        dpsi.column_mut(l).copy_from_slice(&g);
    }
    Ok((psi, dpsi))
}

/// Least-squares generator `L = M^T` with `M = dPsi_X Psi_X^+`.
pub fn fit_generator(measurements: &[Measurement], dictionary: &MonomialDictionary) -> Result<GeneratorMatrix> {
    fit_generator_with_cutoff(measurements, dictionary, SVD_REL_CUTOFF)
}

pub fn fit_generator_with_cutoff(
    measurements: &[Measurement],
    dictionary: &MonomialDictionary,
    rel_cutoff: f64,
) -> Result<GeneratorMatrix> {
    if measurements.is_empty() {
        return Err(Error::Data("no measurements".into()));
    }
    let (psi, dpsi) = assemble(measurements, dictionary)?;
    let psi_t = psi.transpose();
    let dpsi_t = dpsi.transpose();
    let sol = linalg::lstsq(&psi_t, &dpsi_t, rel_cutoff);
    let residual = (&psi_t * &sol.x - &dpsi_t).norm();
    let n = dictionary.len();
    Ok(GeneratorMatrix {
        dictionary: dictionary.clone(),
        entries: sol.x,
        rank: sol.rank,
        rank_deficient: sol.rank < n,
        underdetermined: measurements.len() < n,
        residual,
    })
}

/// `L psi` for polynomial drift `b` and diffusion `a`.
pub fn apply_generator_polynomial(psi: &Polynomial, drift: &[Polynomial], diffusion: &[Vec<Polynomial>]) -> Polynomial {
    let d = drift.len();
    let mut out = Polynomial::zero(psi.dim());
    for i in 0..d {
        let di = psi.derivative(i);
        out = &out + &(&drift[i] * &di);
        for j in 0..d {
            let dij = di.derivative(j);
            if !dij.is_zero() {
                out = &out + &(&diffusion[i][j] * &dij).scale(0.5);
            }
        }
    }
    out
}

/// Columns of the exact generator for polynomial coefficients. A column is
/// `None` when `L psi_k` leaves the span of the dictionary.
pub fn analytic_generator(
    dictionary: &MonomialDictionary,
    drift: &[Polynomial],
    diffusion: &[Vec<Polynomial>],
) -> Vec<Option<Vec<f64>>> {
    dictionary
        .indices()
        .iter()
        .map(|e| {
            let psi = Polynomial::monomial(e.clone(), 1.0);
            dictionary.coefficients_of(&apply_generator_polynomial(&psi, drift, diffusion)).ok()
        })
        .collect()
}

/// Full analytic generator; fails if any column is not representable.
pub fn analytic_generator_matrix(
    dictionary: &MonomialDictionary,
    drift: &[Polynomial],
    diffusion: &[Vec<Polynomial>],
) -> Result<GeneratorMatrix> {
    let n = dictionary.len();
    let mut entries = DMatrix::zeros(n, n);
    for (k, col) in analytic_generator(dictionary, drift, diffusion).into_iter().enumerate() {
        let col = col.ok_or_else(|| Error::Representation(dictionary.indices()[k].clone()))?;
        entries.column_mut(k).copy_from_slice(&col);
    }
    GeneratorMatrix::from_entries(dictionary.clone(), entries)
}

/// Drift component `i` is the column of the monomial `x_i`.
pub fn extract_drift(generator: &GeneratorMatrix) -> Result<PolynomialField> {
    let dict = &generator.dictionary;
    let rows = (0..dict.dim())
        .map(|i| {
            let k = dict.linear_index(i).ok_or_else(|| Error::Contract(format!("dictionary lacks x_{}", i + 1)))?;
            Ok(generator.column(k))
        })
        .collect::<Result<Vec<_>>>()?;
    PolynomialField::new(dict.clone(), rows)
}

fn diffusion_polynomial(generator: &GeneratorMatrix, drift: &PolynomialField, i: usize, j: usize) -> Result<Polynomial> {
    let dict = &generator.dictionary;
    let d = dict.dim();
    let k = dict
        .quadratic_index(i, j)
        .ok_or_else(|| Error::Contract(format!("dictionary lacks x_{} x_{}", i + 1, j + 1)))?;
    let xi = Polynomial::variable(d, i);
    let xj = Polynomial::variable(d, j);
    let bi = drift.polynomial(i);
    let bj = drift.polynomial(j);
    Ok(&(&generator.column_polynomial(k) - &(&bi * &xj)) - &(&bj * &xi))
}

/// Diffusion by `a_ij = L(x_i x_j) - b_i x_j - b_j x_i`, with exact polynomial
/// arithmetic. Fails if a product leaves the dictionary.
pub fn extract_diffusion(generator: &GeneratorMatrix, drift: &PolynomialField) -> Result<DiffusionField> {
    extract_diffusion_impl(generator, drift, false)
}

/// As [`extract_diffusion`], but monomials of the products `b_i x_j` above the
/// dictionary degree are dropped. This equals using the drift truncated to
/// degree `max_degree - 1`.
pub fn extract_diffusion_truncated(generator: &GeneratorMatrix, drift: &PolynomialField) -> Result<DiffusionField> {
    extract_diffusion_impl(generator, drift, true)
}

fn extract_diffusion_impl(generator: &GeneratorMatrix, drift: &PolynomialField, truncate: bool) -> Result<DiffusionField> {
    let dict = &generator.dictionary;
    let d = dict.dim();
    if drift.rows() != d {
        return Err(Error::Contract(format!("drift has {} rows for {d} coordinates", drift.rows())));
    }
    let mut rows = vec![Vec::new(); d * (d + 1) / 2];
    for i in 0..d {
        for j in i..d {
            let mut p = diffusion_polynomial(generator, drift, i, j)?;
            if truncate {
                p = p.truncate(dict.max_degree());
            }
            rows[upper_index(d, i, j)] = dict.coefficients_of(&p)?;
        }
    }
    DiffusionField::new(d, PolynomialField::new(dict.clone(), rows)?)
}

/// Square root `sigma = V sqrt(Lambda)` of the PSD part of a symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdSigma {
    /// Row-major `dim x dim`.
    pub sigma: Vec<f64>,
    /// Sum of the magnitudes of the clipped negative eigenvalues.
    pub clipped_mass: f64,
}

pub fn psd_sigma(a: &[f64], dim: usize) -> PsdSigma {
    let mut sigma = vec![0.0; dim * dim];
    let clipped_mass = psd_sigma_into(a, dim, &mut sigma);
    PsdSigma { sigma, clipped_mass }
}

/// Writes `sigma` into `out` and returns the clipped mass.
pub fn psd_sigma_into(a: &[f64], dim: usize, out: &mut [f64]) -> f64 {
    match dim {
        1 => {
            out[0] = math::sqrt(a[0].max(0.0));
            (-a[0]).max(0.0)
        }
        _ => {
            let (values, vectors) = linalg::symmetric_eigen(a, dim);
            let mut clipped = 0.0;
            for (k, &lam) in values.iter().enumerate() {
                if lam < 0.0 {
                    clipped -= lam;
                }
                let s = math::sqrt(lam.max(0.0));
                for i in 0..dim {
                    out[i * dim + k] = vectors[(i, k)] * s;
                }
            }
            clipped
        }
    }
}

/// Where a model came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub num_points: usize,
    pub samples_per_point: usize,
    pub lag: f64,
    pub seed: u64,
    pub source: String,
}

/// Polynomial SDE `dX = b(X) dt + sigma(X) dW` with `a = sigma sigma^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiedSde {
    pub drift: PolynomialField,
    pub diffusion: DiffusionField,
    /// Agents per unit of the coordinates (1 for unscaled data).
    pub population_size: u64,
    pub provenance: Option<Provenance>,
}

impl IdentifiedSde {
    pub fn new(drift: PolynomialField, diffusion: DiffusionField, population_size: u64) -> Result<Self> {
        if drift.dictionary() != diffusion.dictionary() {
            return Err(Error::Contract("drift and diffusion use different dictionaries".into()));
        }
        if drift.rows() != drift.dictionary().dim() {
            return Err(Error::Contract("drift must have one row per coordinate".into()));
        }
        if diffusion.dim() != drift.rows() {
            return Err(Error::Contract("diffusion dimension does not match drift".into()));
        }
        Ok(Self { drift, diffusion, population_size, provenance: None })
    }

    pub fn dim(&self) -> usize {
        self.drift.rows()
    }

    pub fn dictionary(&self) -> &MonomialDictionary {
        self.drift.dictionary()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentifyOptions {
    pub rel_cutoff: f64,
    /// Zero every coefficient below this magnitude after extraction.
    pub hard_threshold: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { rel_cutoff: SVD_REL_CUTOFF, hard_threshold: None }
    }
}

/// Fit, drift extraction and diffusion extraction in one go.
pub fn identify(
    measurements: &[Measurement],
    dictionary: &MonomialDictionary,
    population_size: u64,
    options: IdentifyOptions,
) -> Result<(IdentifiedSde, GeneratorMatrix)> {
    let generator = fit_generator_with_cutoff(measurements, dictionary, options.rel_cutoff)?;
    let mut drift = extract_drift(&generator)?;
    let mut diffusion = extract_diffusion_truncated(&generator, &drift)?;
    if let Some(t) = options.hard_threshold {
        drift = drift.hard_threshold(t);
        diffusion = diffusion.hard_threshold(t);
    }
    Ok((IdentifiedSde::new(drift, diffusion, population_size)?, generator))
}

/// Ordered type pairs of the three-type voter model: 12, 13, 21, 23, 31, 32.
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];

/// Monomials `c1^2, c2^2, c1 c2, c1, c2, 1` in the order of the coefficient vector.
const V_MONOMIALS: [[u32; 2]; 6] = [[2, 0], [0, 2], [1, 1], [1, 0], [0, 1], [0, 0]];

/// Rate constants recovered from a reduced three-type voter SDE.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReconstruction {
    /// `gamma_ij`, zero diagonal.
    pub imitation: [[f64; 3]; 3],
    /// `gamma'_ij`, zero diagonal.
    pub exploration: [[f64; 3]; 3],
    /// `||A gamma - v||`.
    pub residual: f64,
    pub rank: usize,
}

impl RateReconstruction {
    /// `gamma_ij - gamma_ji`.
    pub fn imitation_difference(&self, i: usize, j: usize) -> f64 {
        self.imitation[i][j] - self.imitation[j][i]
    }
}

/// Coefficient vector `v` (30 entries): the six quadratic-order coefficients of
/// `b_1`, `b_2`, `a_11`, `a_12`, `a_22` in turn.
pub fn rate_coefficient_vector(drift: &[Polynomial], diffusion: &[Vec<Polynomial>]) -> Vec<f64> {
    let mut v = Vec::with_capacity(30);
    for p in [&drift[0], &drift[1], &diffusion[0][0], &diffusion[0][1], &diffusion[1][1]] {
        for e in V_MONOMIALS {
            v.push(p.coeff(&e));
        }
    }
    v
}

/// The 30 x 12 matrix `A` with `A gamma = v`, columns ordered imitation
/// 12, 13, 21, 23, 31, 32 then exploration in the same order.
pub fn rate_system_matrix(population_size: u64) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(30, 12);
    for (col, &(i, j)) in PAIRS.iter().enumerate() {
        for (offset, imitation) in [(0, true), (6, false)] {
            let mut reactants = vec![0; 3];
            let mut products = vec![0; 3];
            reactants[i] += 1;
            if imitation {
                reactants[j] += 1;
                products[j] = 2;
            } else {
                products[j] = 1;
            }
            let model = JumpModel::new(3, vec![TransitionRule::new(reactants, products, 1.0)?], population_size)?;
            let reduced = limit_sde_polynomials(&model).reduce_blocks(&[3])?;
            let v = rate_coefficient_vector(&reduced.drift, &reduced.diffusion);
            a.column_mut(col + offset).copy_from_slice(&v);
        }
    }
    Ok(a)
}

/// Minimum-norm least-squares rates for a reduced (d = 3 to 2) voter SDE.
/// Drift coefficients fix only the differences `gamma_ij - gamma_ji`; the sums
/// come from the diffusion, so noisy diffusion makes individual rates unreliable.
pub fn reconstruct_rates(sde: &IdentifiedSde) -> Result<RateReconstruction> {
    if sde.dim() != 2 {
        return Err(Error::Contract(format!("rate reconstruction needs the reduced 2-D voter model, got dimension {}", sde.dim())));
    }
    let drift: Vec<Polynomial> = (0..2).map(|i| sde.drift.polynomial(i)).collect();
    let diffusion: Vec<Vec<Polynomial>> =
        (0..2).map(|i| (0..2).map(|j| sde.diffusion.entry(i, j)).collect()).collect();
    reconstruct_rates_from_vector(&rate_coefficient_vector(&drift, &diffusion), sde.population_size)
}

pub fn reconstruct_rates_from_vector(v: &[f64], population_size: u64) -> Result<RateReconstruction> {
    if v.len() != 30 {
        return Err(Error::Contract(format!("coefficient vector needs 30 entries, got {}", v.len())));
    }
    let a = rate_system_matrix(population_size)?;
    let b = DMatrix::from_column_slice(30, 1, v);
    let sol = linalg::lstsq(&a, &b, SVD_REL_CUTOFF);
    let residual = (&a * &sol.x - &b).norm();
    let mut imitation = [[0.0; 3]; 3];
    let mut exploration = [[0.0; 3]; 3];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        imitation[i][j] = sol.x[(k, 0)];
        exploration[i][j] = sol.x[(k + 6, 0)];
    }
    Ok(RateReconstruction { imitation, exploration, residual, rank: sol.rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mjp::limit_sde;
    use crate::voter::{evm_jump_model, VoterRates};

    fn reference_fields(n: u64) -> (PolynomialField, DiffusionField) {
        let model = evm_jump_model(&VoterRates::reference(), n).unwrap();
        limit_sde(&model, &MonomialDictionary::new(2, 3)).unwrap()
    }

    fn as_polys(drift: &PolynomialField, diffusion: &DiffusionField) -> (Vec<Polynomial>, Vec<Vec<Polynomial>>) {
        let d = drift.rows();
        ((0..d).map(|i| drift.polynomial(i)).collect(), (0..d).map(|i| (0..d).map(|j| diffusion.entry(i, j)).collect()).collect())
    }

    #[test]
    fn analytic_generator_matches_reference_columns() {
        let (drift, diffusion) = reference_fields(10);
        let (b, a) = as_polys(&drift, &diffusion);
        let dict = MonomialDictionary::new(2, 3);
        let cols = analytic_generator(&dict, &b, &a);
        // (column, row, value) with the constant, c1, c2, c1^2, c1c2, c2^2, c1^3, ... layout.
        let expected = [
            (1, 0, 0.01), (1, 1, 0.97), (1, 3, -1.0), (1, 4, -2.0),
            (2, 0, 0.01), (2, 2, -1.03), (2, 4, 2.0), (2, 5, 1.0),
            (3, 0, 0.001), (3, 1, 0.321), (3, 3, 1.64), (3, 6, -2.0), (3, 7, -4.0),
            (4, 1, 0.009), (4, 2, 0.009), (4, 4, -0.36), (4, 7, 1.0), (4, 8, -1.0),
            (5, 0, 0.001), (5, 2, 0.321), (5, 5, -2.36), (5, 8, 4.0), (5, 9, 2.0),
        ];
        for (c, r, v) in expected {
            assert!((cols[c].as_ref().unwrap()[r] - v).abs() < 1e-12, "l[{r}][{c}]");
        }
        assert!(cols[0].as_ref().unwrap().iter().all(|&x| x == 0.0));
        // Cubic observables produce quartic terms.
        assert!(cols[6].is_none());
    }

    #[test]
    fn drift_and_diffusion_from_reference_generator() {
        let (drift, diffusion) = reference_fields(10);
        let (b, a) = as_polys(&drift, &diffusion);
        let dict = MonomialDictionary::new(2, 3);
        let mut entries = DMatrix::zeros(10, 10);
        for (k, col) in analytic_generator(&dict, &b, &a).into_iter().enumerate().take(6) {
            entries.column_mut(k).copy_from_slice(&col.unwrap());
        }
        let gen = GeneratorMatrix::from_entries(dict, entries).unwrap();
        let got = extract_drift(&gen).unwrap();
        let b1 = got.polynomial(0);
        assert!((b1.coeff(&[2, 0]) + 1.0).abs() < 1e-12);
        assert!((b1.coeff(&[1, 1]) + 2.0).abs() < 1e-12);
        assert!((b1.coeff(&[1, 0]) - 0.97).abs() < 1e-12);
        assert!((b1.coeff(&[0, 0]) - 0.01).abs() < 1e-12);
        let a_hat = extract_diffusion(&gen, &got).unwrap();
        let a12 = a_hat.entry(0, 1);
        assert!((a12.coeff(&[1, 1]) + 0.3).abs() < 1e-12);
        assert!((a12.coeff(&[1, 0]) + 0.001).abs() < 1e-12);
        assert!((a12.coeff(&[0, 1]) + 0.001).abs() < 1e-12);
        assert!(a12.prune(1e-14).terms().count() == 3);
    }

    #[test]
    fn ou_and_brownian_generators() {
        let dict = MonomialDictionary::new(1, 3);
        let x = Polynomial::variable(1, 0);
        let ou = analytic_generator_matrix(&MonomialDictionary::new(1, 3), &[x.scale(-1.0)], &[vec![Polynomial::zero(1)]]).unwrap();
        let b = extract_drift(&ou).unwrap();
        assert_eq!(b.row(0), &[0.0, -1.0, 0.0, 0.0]);
        let bm = analytic_generator_matrix(&dict, &[Polynomial::zero(1)], &[vec![Polynomial::constant(1, 1.0)]]).unwrap();
        let a = extract_diffusion(&bm, &extract_drift(&bm).unwrap()).unwrap();
        assert!((a.entry_coefficients(0, 0)[0] - 1.0).abs() < 1e-10);
        assert!(a.entry_coefficients(0, 0)[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn zero_data_gives_zero_generator() {
        let dict = MonomialDictionary::new(2, 2);
        let ms: Vec<Measurement> = (0..10)
            .map(|l| Measurement {
                point: vec![libm::sin(l as f64 * 1.7).abs(), libm::cos(l as f64 * 2.9).abs()],
                drift: vec![0.0; 2],
                diffusion: vec![0.0; 4],
                sample_count: 1,
                lag: 0.1,
            })
            .collect();
        let gen = fit_generator(&ms, &dict).unwrap();
        assert!(gen.entries().iter().all(|&v| v == 0.0));
        assert!(!gen.rank_deficient);
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let dict = MonomialDictionary::new(1, 3);
        let ms: Vec<Measurement> = [0.1, 0.2]
            .iter()
            .map(|&x| Measurement { point: vec![x], drift: vec![-x], diffusion: vec![1.0], sample_count: 1, lag: 1.0 })
            .collect();
        let gen = fit_generator(&ms, &dict).unwrap();
        assert!(gen.rank_deficient && gen.underdetermined);
        assert_eq!(gen.rank, 2);
    }

    #[test]
    fn psd_sigma_examples() {
        let id = psd_sigma(&[1.0, 0.0, 0.0, 1.0], 2);
        let mut sst = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                sst[i * 2 + j] = (0..2).map(|k| id.sigma[i * 2 + k] * id.sigma[j * 2 + k]).sum();
            }
        }
        assert!((sst[0] - 1.0).abs() < 1e-14 && sst[1].abs() < 1e-14 && (sst[3] - 1.0).abs() < 1e-14);
        let diag = psd_sigma(&[4.0, 0.0, 0.0, 0.0], 2);
        let col_norms: Vec<f64> = (0..2).map(|k| math::sqrt(diag.sigma[k] * diag.sigma[k] + diag.sigma[2 + k] * diag.sigma[2 + k])).collect();
        assert!(col_norms.iter().any(|&v| (v - 2.0).abs() < 1e-14));
        assert!(col_norms.iter().any(|&v| v < 1e-14));
        assert_eq!(diag.clipped_mass, 0.0);
        // Eigenvalues 1 and -1e-6 along (1, 1) and (1, -1).
        let l1 = 1.0;
        let l2 = -1e-6;
        let a = [(l1 + l2) / 2.0, (l1 - l2) / 2.0, (l1 - l2) / 2.0, (l1 + l2) / 2.0];
        let s = psd_sigma(&a, 2);
        assert!((s.clipped_mass - 1e-6).abs() < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| s.sigma[i * 2 + k] * s.sigma[j * 2 + k]).sum();
                assert!((v - a[i * 2 + j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn rates_from_zero_vector() {
        let r = reconstruct_rates_from_vector(&[0.0; 30], 100).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.imitation.iter().flatten().chain(r.exploration.iter().flatten()).all(|&g| g == 0.0));
    }

    #[test]
    fn rate_system_has_full_column_rank() {
        let a = rate_system_matrix(50).unwrap();
        let sol = linalg::lstsq(&a, &DMatrix::zeros(30, 1), SVD_REL_CUTOFF);
        assert_eq!(sol.rank, 12);
    }
}
