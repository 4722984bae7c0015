//! Closed-form algebra on Gaussian densities and Gaussian mixtures over
//! stacked trajectory-waypoint vectors.
//!
//! Everything that can underflow is carried in log space: mixture weights
//! are stored as log-weights and products report their normalizer as a
//! natural-log value.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Relative asymmetry tolerated in a covariance matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue allowed, relative to the largest, before a
/// covariance is rejected as indefinite.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalue floor (relative to the largest eigenvalue) applied before any
/// inversion.
pub const EIGEN_FLOOR: f64 = 1e-10;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("covariance of {which} is singular")]
    Singular { which: &'static str },
    #[error("covariance is not symmetric (asymmetry {asymmetry:e} against scale {scale:e})")]
    NotSymmetric { asymmetry: f64, scale: f64 },
    #[error("covariance is not positive semi-definite (eigenvalues span [{min_eigenvalue:e}, {max_eigenvalue:e}])")]
    NotPositiveSemiDefinite { min_eigenvalue: f64, max_eigenvalue: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("point is not a local maximum (gradient norm {gradient_norm:e})")]
    NotAMaximum { gradient_norm: f64 },
    #[error("Hessian is not negative definite; offending eigenvalues {0:?}")]
    FlatDirection(Vec<f64>),
}

/// `log(Σ exp(v))`, stable for large magnitudes. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Symmetric eigendecomposition accurate to a few ulps of `λ_max`.
///
/// nalgebra's QR iteration can stop with off-diagonal residue near 1e-10
/// relative, visible as `V Λ Vᵀ ≠ M` at that level. Re-diagonalizing the
/// nearly diagonal `Vᵀ M V` removes it.
fn accurate_eigen(m: DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(m.clone());
    let scale = m.amax();
    for _ in 0..3 {
        let rotated = symmetrized(&(eig.eigenvectors.tr_mul(&m) * &eig.eigenvectors));
        let residue = (0..rotated.nrows())
            .flat_map(|r| (0..r).map(move |c| (r, c)))
            .map(|(r, c)| rotated[(r, c)].abs())
            .fold(0.0, f64::max);
        if !(residue > 16.0 * f64::EPSILON * scale) {
            break;
        }
        let inner = SymmetricEigen::new(rotated);
        eig.eigenvectors = &eig.eigenvectors * inner.eigenvectors;
        eig.eigenvalues = inner.eigenvalues;
    }
    eig
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_dim(expected: usize, actual: usize) -> Result<(), GaussianError> {
    if expected != actual {
        return Err(GaussianError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

// ============================================================================
// Symmetric positive-definite factorization
// ============================================================================

/// Eigen-factorization of a covariance (or precision) with the eigenvalue
/// floor applied. All inversions in this crate go through it.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    log_det: f64,
}

impl SpdFactor {
    /// Factorizes `matrix`; `which` names the input in the singularity error.
    pub fn new(matrix: &DMatrix<f64>, which: &'static str) -> Result<Self, GaussianError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GaussianError::Singular { which });
        }
        let eig = accurate_eigen(symmetrized(matrix));
        let max = eig.eigenvalues.max();
        if !(max > 0.0) || !max.is_finite() {
            return Err(GaussianError::Singular { which });
        }
        let floor = EIGEN_FLOOR * max;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        let log_det = values.iter().map(|v| v.ln()).sum();
        Ok(Self {
            vectors: eig.eigenvectors,
            values,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.vectors[(r, c)] / self.values[c]);
        symmetrized(&(scaled * self.vectors.transpose()))
    }

    /// The factored matrix itself, after flooring.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.vectors[(r, c)] * self.values[c]);
        symmetrized(&(scaled * self.vectors.transpose()))
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut projected = self.vectors.tr_mul(rhs);
        projected.component_div_assign(&self.values);
        &self.vectors * projected
    }

    /// `vᵀ M⁻¹ v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let projected = self.vectors.tr_mul(v);
        projected.iter().zip(self.values.iter()).map(|(p, l)| p * p / l).sum()
    }

    /// `W` with `Wᵀ W = M⁻¹`, so that `vᵀ M⁻¹ v = |W v|²`.
    pub fn whitener(&self) -> DMatrix<f64> {
        let mut w = self.vectors.transpose();
        for (r, l) in self.values.iter().enumerate() {
            let s = 1.0 / l.sqrt();
            w.row_mut(r).scale_mut(s);
        }
        w
    }
}

// ============================================================================
// Gaussian density
// ============================================================================

/// Multivariate normal over a stacked waypoint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

/// Natural log of the normalizer `∫ N(x|a) N(x|b) dx` of a Gaussian product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalizer(pub f64);

impl LogNormalizer {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl GaussianDensity {
    /// Validates symmetry and positive semi-definiteness, then stores the
    /// exactly-symmetrized covariance.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, GaussianError> {
        let d = mean.len();
        if d == 0 {
            return Err(GaussianError::Contract("zero-dimensional density".into()));
        }
        check_dim(d, covariance.nrows())?;
        check_dim(d, covariance.ncols())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(GaussianError::NonFinite("mean"));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(GaussianError::NonFinite("covariance"));
        }
        let scale = covariance.amax();
        let asymmetry = (&covariance - covariance.transpose()).amax();
        if asymmetry > SYMMETRY_TOL * scale {
            return Err(GaussianError::NotSymmetric { asymmetry, scale });
        }
        let covariance = symmetrized(&covariance);
        let eig = covariance.symmetric_eigenvalues();
        let (min, max) = (eig.min(), eig.max());
        if min < -PSD_TOL * max.max(0.0) || (max <= 0.0 && min < 0.0) {
            return Err(GaussianError::NotPositiveSemiDefinite {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        Ok(Self { mean, covariance })
    }

    /// Skips validation; callers guarantee a symmetric PSD covariance.
    pub(crate) fn from_parts(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), covariance.nrows());
        Self { mean, covariance }
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self, GaussianError> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self, which: &'static str) -> Result<SpdFactor, GaussianError> {
        SpdFactor::new(&self.covariance, which)
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64, GaussianError> {
        check_dim(self.dim(), x.len())?;
        let f = self.factor("density")?;
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + f.log_det() + f.quad_form(&(x - &self.mean))))
    }

    /// Same density with eigenvalues floored at `EIGEN_FLOOR · λ_max`.
    pub fn clamped(&self) -> Result<Self, GaussianError> {
        let f = self.factor("density")?;
        Ok(Self::from_parts(self.mean.clone(), f.reconstruct()))
    }

    /// `KL(self ‖ other)`.
    pub fn kl_divergence(&self, other: &Self) -> Result<f64, GaussianError> {
        check_dim(self.dim(), other.dim())?;
        // eigenvalues λ of W Σ_self Wᵀ give Σ(λ − 1 − ln λ), stable near λ = 1
        let fo = other.factor("second")?;
        let w = fo.whitener();
        let whitened = symmetrized(&(&w * &self.covariance * w.transpose()));
        let spectrum: f64 = whitened
            .symmetric_eigenvalues()
            .iter()
            .map(|l| {
                let l = l.max(f64::MIN_POSITIVE);
                (l - 1.0) - l.ln()
            })
            .sum();
        let quad = fo.quad_form(&(&other.mean - &self.mean));
        Ok(0.5 * (spectrum + quad))
    }

    pub fn prepared(&self) -> Result<PreparedGaussian, GaussianError> {
        PreparedGaussian::new(self)
    }

    /// Sampler using the PSD square root; zero-variance directions stay at
    /// the mean.
    pub fn sampler(&self) -> GaussianSampler {
        GaussianSampler::new(self.mean.clone(), &self.covariance)
    }
}

fn psd_root(covariance: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = accurate_eigen(covariance.clone());
    let mut root = eig.eigenvectors;
    for (c, l) in eig.eigenvalues.iter().enumerate() {
        root.column_mut(c).scale_mut(l.max(0.0).sqrt());
    }
    root
}

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Self {
        Self {
            mean,
            root: psd_root(covariance),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.root * z
    }
}

/// `N(x|a) N(x|b) = Z · N(x|c)`: returns `c` and `log Z`.
///
/// The product precision is the sum of the input precisions; `log Z` is
/// the log-density of `N(0 | a.mean − b.mean, a.cov + b.cov)`.
pub fn product_of_gaussians(
    a: &GaussianDensity,
    b: &GaussianDensity,
) -> Result<(GaussianDensity, LogNormalizer), GaussianError> {
    check_dim(a.dim(), b.dim())?;
    let fa = a.factor("first")?;
    let fb = b.factor("second")?;
    let pa = fa.inverse();
    let pb = fb.inverse();
    let precision = &pa + &pb;
    let fp = SpdFactor::new(&precision, "product precision")?;
    let covariance = fp.inverse();
    let mean = &covariance * (&pa * &a.mean + &pb * &b.mean);

    let sum = &a.covariance + &b.covariance;
    let fs = SpdFactor::new(&sum, "summed covariance")?;
    let diff = &a.mean - &b.mean;
    let log_z = -0.5 * (a.dim() as f64 * LN_2PI + fs.log_det() + fs.quad_form(&diff));
    Ok((GaussianDensity::from_parts(mean, covariance), LogNormalizer(log_z)))
}

/// Precision-weighted fusion of an operator vector `z_h` (isotropic
/// variance `gamma`) with an autonomy mode `f_bar` (covariance `sigma_r`):
/// `σ(γ⁻¹ z_h + σ_R⁻¹ f̄)` with `σ⁻¹ = γ⁻¹ + σ_R⁻¹`.
///
/// `gamma = +inf` is accepted and returns `f_bar`.
pub fn precision_combine(
    gamma: f64,
    sigma_r: &DMatrix<f64>,
    z_h: &DVector<f64>,
    f_bar: &DVector<f64>,
) -> Result<DVector<f64>, GaussianError> {
    if !(gamma > 0.0) {
        return Err(GaussianError::Contract(format!("gamma must be positive, got {gamma}")));
    }
    let d = z_h.len();
    check_dim(d, f_bar.len())?;
    check_dim(d, sigma_r.nrows())?;
    check_dim(d, sigma_r.ncols())?;
    let f = SpdFactor::new(sigma_r, "sigma_R")?;
    let inv_gamma = 1.0 / gamma;
    let v = &f.vectors;
    let zp = v.tr_mul(z_h);
    let fp = v.tr_mul(f_bar);
    let combined = DVector::from_fn(d, |i, _| {
        let l = f.values[i];
        let sigma = 1.0 / (inv_gamma + 1.0 / l);
        sigma * (inv_gamma * zp[i] + fp[i] / l)
    });
    Ok(v * combined)
}

// ============================================================================
// Gaussian mixtures
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianDensity>,
    log_weights: Vec<f64>,
}

impl GaussianMixture {
    /// Builds a mixture and renormalizes the log-weights so that
    /// `Σ exp(log_weights) = 1`.
    pub fn new(components: Vec<GaussianDensity>, log_weights: Vec<f64>) -> Result<Self, GaussianError> {
        if components.is_empty() {
            return Err(GaussianError::Contract("mixture has no components".into()));
        }
        check_dim(components.len(), log_weights.len())?;
        let d = components[0].dim();
        for c in &components[1..] {
            check_dim(d, c.dim())?;
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(GaussianError::NonFinite("mixture log-weights"));
        }
        let total = log_sum_exp(&log_weights);
        if !total.is_finite() {
            return Err(GaussianError::NonFinite("mixture log-weights"));
        }
        let log_weights = log_weights.into_iter().map(|w| w - total).collect();
        Ok(Self {
            components,
            log_weights,
        })
    }

    pub fn single(component: GaussianDensity) -> Self {
        Self {
            components: vec![component],
            log_weights: vec![0.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianDensity] {
        &self.components
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Index of the heaviest component (lowest index on ties).
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.log_weights.iter().enumerate() {
            if *w > self.log_weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64, GaussianError> {
        Ok(self.prepared()?.log_pdf(x))
    }

    pub fn prepared(&self) -> Result<PreparedMixture, GaussianError> {
        PreparedMixture::new(self)
    }

    /// Draws a component by weight, then a point from it.
    pub fn sample<R: Rng + ?Sized>(&self, samplers: &[GaussianSampler], rng: &mut R) -> DVector<f64> {
        samplers[pick_component(&self.log_weights, rng)].draw(rng)
    }

    pub fn samplers(&self) -> Vec<GaussianSampler> {
        self.components.iter().map(|c| c.sampler()).collect()
    }
}

fn pick_component<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in log_weights.iter().enumerate() {
        acc += w.exp();
        if u < acc {
            return i;
        }
    }
    log_weights.len() - 1
}

/// Result of multiplying every mixture component by one Gaussian factor.
#[derive(Debug, Clone)]
pub struct MixtureProduct {
    pub mixture: GaussianMixture,
    /// `log Z_k` of each component product.
    pub log_normalizers: Vec<f64>,
    /// `log Σ_k w_k Z_k`, the constant removed by renormalization.
    pub log_evidence: f64,
}

/// Multiplies each component by `g`, adds each component's log-normalizer to
/// its log-weight, and renormalizes.
pub fn mixture_times_gaussian(mix: &GaussianMixture, g: &GaussianDensity) -> Result<MixtureProduct, GaussianError> {
    check_dim(mix.dim(), g.dim())?;
    let mut components = Vec::with_capacity(mix.len());
    let mut log_normalizers = Vec::with_capacity(mix.len());
    let mut raw = Vec::with_capacity(mix.len());
    for (c, w) in mix.components.iter().zip(&mix.log_weights) {
        let (p, z) = product_of_gaussians(c, g)?;
        components.push(p);
        log_normalizers.push(z.value());
        raw.push(w + z.value());
    }
    let log_evidence = log_sum_exp(&raw);
    let mixture = GaussianMixture::new(components, raw)?;
    Ok(MixtureProduct {
        mixture,
        log_normalizers,
        log_evidence,
    })
}

/// Highest-density point of a mixture: local ascent from the best candidate
/// and from every component mean, keeping the best end point.
pub fn mixture_argmax(mix: &GaussianMixture, candidates: &[DVector<f64>]) -> Result<DVector<f64>, GaussianError> {
    if candidates.is_empty() {
        return Err(GaussianError::Contract("empty candidate set".into()));
    }
    for c in candidates {
        check_dim(mix.dim(), c.len())?;
    }
    let prepared = mix.prepared()?;
    let mut best_candidate = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let v = prepared.log_pdf(c);
        if v > best_value {
            best_value = v;
            best_candidate = i;
        }
    }
    let mut starts = vec![candidates[best_candidate].clone()];
    starts.extend(mix.components.iter().map(|c| c.mean.clone()));

    let mut best: Option<(DVector<f64>, f64)> = None;
    for s in starts {
        let (x, v) = prepared.ascend(s, 500);
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((x, v));
        }
    }
    Ok(best.map(|(x, _)| x).expect("at least one start"))
}

// ============================================================================
// Prepared evaluators
// ============================================================================

/// A Gaussian with its precision and whitening factor cached.
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    whitener: DMatrix<f64>,
    log_norm: f64,
}

impl PreparedGaussian {
    pub fn new(g: &GaussianDensity) -> Result<Self, GaussianError> {
        let f = g.factor("density")?;
        Ok(Self {
            mean: g.mean.clone(),
            covariance: g.covariance.clone(),
            precision: f.inverse(),
            whitener: f.whitener(),
            log_norm: -0.5 * (g.dim() as f64 * LN_2PI + f.log_det()),
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let w = &self.whitener * (x - &self.mean);
        self.log_norm - 0.5 * w.norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * (x - &self.mean))
    }

    /// `Σ v`: turns a gradient into a Newton step for this factor.
    pub fn covariance_times(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.covariance * v
    }

    pub fn sampler(&self) -> GaussianSampler {
        GaussianSampler::new(self.mean.clone(), &self.covariance)
    }
}

#[derive(Debug, Clone)]
struct CovarianceGroup {
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    whitener: DMatrix<f64>,
    log_norm: f64,
}

#[derive(Debug, Clone)]
struct PreparedComponent {
    mean: DVector<f64>,
    white_mean: DVector<f64>,
    group: usize,
    log_weight: f64,
}

/// Mixture evaluator with log-density, gradient and a positive-definite
/// curvature surrogate. Components sharing a covariance share one factor.
#[derive(Debug, Clone)]
pub struct PreparedMixture {
    groups: Vec<CovarianceGroup>,
    components: Vec<PreparedComponent>,
    dim: usize,
}

impl PreparedMixture {
    pub fn new(mix: &GaussianMixture) -> Result<Self, GaussianError> {
        let mut groups: Vec<CovarianceGroup> = Vec::new();
        let mut components = Vec::with_capacity(mix.len());
        for (c, w) in mix.components.iter().zip(&mix.log_weights) {
            let group = match groups.iter().position(|g| g.covariance == c.covariance) {
                Some(i) => i,
                None => {
                    let f = c.factor("mixture component")?;
                    groups.push(CovarianceGroup {
                        covariance: c.covariance.clone(),
                        precision: f.inverse(),
                        whitener: f.whitener(),
                        log_norm: -0.5 * (c.dim() as f64 * LN_2PI + f.log_det()),
                    });
                    groups.len() - 1
                }
            };
            components.push(PreparedComponent {
                white_mean: &groups[group].whitener * &c.mean,
                mean: c.mean.clone(),
                group,
                log_weight: *w,
            });
        }
        Ok(Self {
            groups,
            components,
            dim: mix.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn means(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.components.iter().map(|c| &c.mean)
    }

    pub fn precisions(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.components.iter().map(|c| &self.groups[c.group].precision)
    }

    pub fn log_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|c| c.log_weight)
    }

    /// One sampler per component; square roots are shared per covariance.
    pub fn samplers(&self) -> Vec<GaussianSampler> {
        let roots: Vec<DMatrix<f64>> = self.groups.iter().map(|g| psd_root(&g.covariance)).collect();
        self.components
            .iter()
            .map(|c| GaussianSampler {
                mean: c.mean.clone(),
                root: roots[c.group].clone(),
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, samplers: &[GaussianSampler], rng: &mut R) -> DVector<f64> {
        let lw: Vec<f64> = self.log_weights().collect();
        samplers[pick_component(&lw, rng)].draw(rng)
    }

    /// Per-component `log w_k + log N(x | μ_k, Σ_k)`.
    pub fn component_log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        let white: Vec<DVector<f64>> = self.groups.iter().map(|g| &g.whitener * x).collect();
        self.components
            .iter()
            .map(|c| {
                let g = &self.groups[c.group];
                let q = (&white[c.group] - &c.white_mean).norm_squared();
                c.log_weight + g.log_norm - 0.5 * q
            })
            .collect()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.component_log_terms(x))
    }

    /// Log-density, gradient, and `Σ_k r_k P_k` (positive definite).
    pub fn gradient_and_curvature(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let terms = self.component_log_terms(x);
        let total = log_sum_exp(&terms);
        let mut mass = vec![0.0; self.groups.len()];
        let mut weighted_means = vec![DVector::zeros(self.dim); self.groups.len()];
        for (c, t) in self.components.iter().zip(&terms) {
            let r = (t - total).exp();
            mass[c.group] += r;
            weighted_means[c.group].axpy(r, &c.mean, 1.0);
        }
        let mut grad = DVector::zeros(self.dim);
        let mut curvature = DMatrix::zeros(self.dim, self.dim);
        for (g, (m, wm)) in self.groups.iter().zip(mass.iter().zip(&weighted_means)) {
            if *m == 0.0 {
                continue;
            }
            grad -= &g.precision * (x * *m - wm);
            curvature += &g.precision * *m;
        }
        (total, grad, curvature)
    }

    /// Preconditioned ascent with step halving; returns the end point and
    /// its log-density. Never decreases the log-density.
    pub fn ascend(&self, mut x: DVector<f64>, max_iter: usize) -> (DVector<f64>, f64) {
        let mut value = self.log_pdf(&x);
        for _ in 0..max_iter {
            let (_, grad, curvature) = self.gradient_and_curvature(&x);
            let step = match curvature.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad,
            };
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let trial = &x + &step * t;
                let v = self.log_pdf(&trial);
                if v > value {
                    x = trial;
                    value = v;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved || (step.amax() * t) <= 1e-13 * (1.0 + x.amax()) {
                break;
            }
        }
        (x, value)
    }
}

// ============================================================================
// Laplace approximation
// ============================================================================

/// Gradient-norm tolerance for accepting a point as a mode.
pub const LAPLACE_GRADIENT_TOL: f64 = 1e-6;

fn fd_step(x: f64) -> f64 {
    1e-4 * (1.0 + x.abs())
}

/// Gaussian approximation at `mode`: mean `mode`, covariance the inverse of
/// the negative central-difference Hessian of `log_density`.
pub fn laplace_approximation<F>(log_density: F, mode: &DVector<f64>) -> Result<GaussianDensity, GaussianError>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = mode.len();
    let f0 = log_density(mode);
    if !f0.is_finite() {
        return Err(GaussianError::NonFinite("log-density at mode"));
    }
    let steps: Vec<f64> = mode.iter().map(|v| fd_step(*v)).collect();
    let shifted = |i: usize, si: f64, j: Option<(usize, f64)>| {
        let mut x = mode.clone();
        x[i] += si * steps[i];
        if let Some((j, sj)) = j {
            x[j] += sj * steps[j];
        }
        log_density(&x)
    };

    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut grad_sq = 0.0;
    for i in 0..n {
        plus[i] = shifted(i, 1.0, None);
        minus[i] = shifted(i, -1.0, None);
        let g = (plus[i] - minus[i]) / (2.0 * steps[i]);
        grad_sq += g * g;
    }
    let gradient_norm = grad_sq.sqrt();
    if !(gradient_norm <= LAPLACE_GRADIENT_TOL) {
        return Err(GaussianError::NotAMaximum { gradient_norm });
    }

    let mut hessian = DMatrix::zeros(n, n);
    for i in 0..n {
        hessian[(i, i)] = (plus[i] - 2.0 * f0 + minus[i]) / (steps[i] * steps[i]);
        for j in (i + 1)..n {
            let pp = shifted(i, 1.0, Some((j, 1.0)));
            let pm = shifted(i, 1.0, Some((j, -1.0)));
            let mp = shifted(i, -1.0, Some((j, 1.0)));
            let mm = shifted(i, -1.0, Some((j, -1.0)));
            let h = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
            hessian[(i, j)] = h;
            hessian[(j, i)] = h;
        }
    }
    let eig = accurate_eigen(symmetrized(&hessian));
    let offending: Vec<f64> = eig.eigenvalues.iter().copied().filter(|l| !(*l < 0.0)).collect();
    if !offending.is_empty() {
        return Err(GaussianError::FlatDirection(offending));
    }
    let mut scaled = eig.eigenvectors.clone();
    for (c, l) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(c).scale_mut(-1.0 / l);
    }
    let covariance = symmetrized(&(scaled * eig.eigenvectors.transpose()));
    GaussianDensity::new(mode.clone(), covariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn g1(mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::new(dvector![mean], DMatrix::from_element(1, 1, var)).unwrap()
    }

    #[test]
    fn symmetric_unit_product() {
        let (p, _) = product_of_gaussians(&g1(0.0, 1.0), &g1(0.0, 1.0)).unwrap();
        assert!(p.mean()[0].abs() < 1e-15);
        assert!((p.covariance()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shifted_product_matches_quadrature() {
        let (p, z) = product_of_gaussians(&g1(0.0, 1.0), &g1(2.0, 1.0)).unwrap();
        assert!((p.mean()[0] - 1.0).abs() < 1e-14);
        assert!((p.covariance()[(0, 0)] - 0.5).abs() < 1e-14);
        // midpoint rule over [-10, 12] with 10^6 nodes
        let (lo, hi, n) = (-10.0_f64, 12.0_f64, 1_000_000usize);
        let h = (hi - lo) / n as f64;
        let pdf = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let integral: f64 = (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                pdf(x, 0.0) * pdf(x, 2.0)
            })
            .sum::<f64>()
            * h;
        assert!((z.value() - integral.ln()).abs() < 1e-6);
    }

    #[test]
    fn diagonal_product_factorizes_per_axis() {
        let a = GaussianDensity::new(dvector![0.5, -1.0], DMatrix::from_diagonal(&dvector![2.0, 0.3])).unwrap();
        let b = GaussianDensity::new(dvector![1.5, 2.0], DMatrix::from_diagonal(&dvector![0.7, 1.1])).unwrap();
        let (p, z) = product_of_gaussians(&a, &b).unwrap();
        let (px, zx) = product_of_gaussians(&g1(0.5, 2.0), &g1(1.5, 0.7)).unwrap();
        let (py, zy) = product_of_gaussians(&g1(-1.0, 0.3), &g1(2.0, 1.1)).unwrap();
        assert!((p.mean()[0] - px.mean()[0]).abs() < 1e-12);
        assert!((p.mean()[1] - py.mean()[0]).abs() < 1e-12);
        assert!((p.covariance()[(0, 0)] - px.covariance()[(0, 0)]).abs() < 1e-12);
        assert!((p.covariance()[(1, 1)] - py.covariance()[(0, 0)]).abs() < 1e-12);
        assert!(p.covariance()[(0, 1)].abs() < 1e-12);
        assert!((z.value() - zx.value() - zy.value()).abs() < 1e-12);
    }

    #[test]
    fn product_rejects_mismatch_and_singular() {
        let a = g1(0.0, 1.0);
        let b = GaussianDensity::isotropic(dvector![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            product_of_gaussians(&a, &b),
            Err(GaussianError::DimensionMismatch { .. })
        ));
        let zero = g1(0.0, 0.0);
        assert_eq!(
            product_of_gaussians(&a, &zero).unwrap_err(),
            GaussianError::Singular { which: "second" }
        );
        assert_eq!(
            product_of_gaussians(&zero, &a).unwrap_err(),
            GaussianError::Singular { which: "first" }
        );
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            GaussianDensity::new(dvector![0.0, 0.0], m),
            Err(GaussianError::NotSymmetric { .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianDensity::new(dvector![0.0, 0.0], m),
            Err(GaussianError::NotPositiveSemiDefinite { .. })
        ));
    }

    #[test]
    fn precision_combine_cases() {
        let one = DMatrix::identity(1, 1);
        let u = precision_combine(1.0, &one, &dvector![0.0], &dvector![2.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        // σ_R = γ/K_R − γ with γ = 1, K_R = 0.5 gives σ_R = 1 and equal gains
        let sigma_r = 1.0 / 0.5 - 1.0;
        assert_eq!(sigma_r, 1.0);
        let u = precision_combine(1e12, &one, &dvector![0.0], &dvector![2.0]).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-11);
        let u = precision_combine(f64::INFINITY, &one, &dvector![0.0], &dvector![2.0]).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-15);
        assert!(precision_combine(0.0, &one, &dvector![0.0], &dvector![2.0]).is_err());
        assert!(precision_combine(-1.0, &one, &dvector![0.0], &dvector![2.0]).is_err());
    }

    #[test]
    fn single_component_mixture_product_matches_plain_product() {
        let a = g1(0.3, 0.8);
        let g = g1(-1.0, 2.0);
        let out = mixture_times_gaussian(&GaussianMixture::single(a.clone()), &g).unwrap();
        let (p, z) = product_of_gaussians(&a, &g).unwrap();
        assert_eq!(out.mixture.log_weights(), &[0.0]);
        assert_eq!(out.mixture.components()[0], p);
        assert!((out.log_evidence - z.value()).abs() < 1e-15);
    }

    #[test]
    fn far_component_loses_weight() {
        let mix = GaussianMixture::new(vec![g1(-5.0, 0.5), g1(5.0, 0.5)], vec![0.0, 0.0]).unwrap();
        let out = mixture_times_gaussian(&mix, &g1(5.0, 0.5)).unwrap();
        // analytic: log N(±10 or 0 | 0, 1.0)
        let lz0 = -0.5 * (LN_2PI + 100.0);
        let lz1 = -0.5 * LN_2PI;
        assert!((out.log_normalizers[0] - lz0).abs() < 1e-12);
        assert!((out.log_normalizers[1] - lz1).abs() < 1e-12);
        assert!(out.mixture.weights()[1] > 0.99);
    }

    #[test]
    fn mixture_requires_components() {
        assert!(GaussianMixture::new(vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![g1(0.0, 1.0)], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn argmax_unimodal_and_degenerate() {
        let mix = GaussianMixture::single(
            GaussianDensity::new(
                dvector![1.0, -2.0],
                DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]),
            )
            .unwrap(),
        );
        let x = mixture_argmax(&mix, &[dvector![10.0, 10.0]]).unwrap();
        assert!((x - dvector![1.0, -2.0]).amax() < 1e-8);

        let twin = GaussianMixture::new(vec![g1(3.0, 1.0), g1(3.0, 1.0)], vec![0.0, 0.0]).unwrap();
        let x = mixture_argmax(&twin, &[dvector![-4.0]]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-8);
        assert!(mixture_argmax(&twin, &[]).is_err());
    }

    #[test]
    fn argmax_prefers_heavy_mode() {
        let mix = GaussianMixture::new(vec![g1(-4.0, 1.0), g1(4.0, 1.0)], vec![0.9f64.ln(), 0.1f64.ln()]).unwrap();
        let x = mixture_argmax(&mix, &[dvector![3.9]]).unwrap();
        // dense grid oracle
        let p = mix.prepared().unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=200_000 {
            let v = -10.0 + i as f64 * 1e-4;
            let l = p.log_pdf(&dvector![v]);
            if l > best.0 {
                best = (l, v);
            }
        }
        assert!((x[0] - best.1).abs() < 2e-4);
        assert!((x[0] + 4.0).abs() < 1e-6);
    }

    #[test]
    fn laplace_recovers_gaussian() {
        let g = GaussianDensity::new(
            dvector![0.5, -1.5, 2.0],
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 0.5, -0.05, 0.1, -0.05, 2.0]),
        )
        .unwrap();
        let p = g.prepared().unwrap();
        let approx = laplace_approximation(|x| p.log_pdf(x), g.mean()).unwrap();
        let rel = (approx.covariance() - g.covariance()).amax() / g.covariance().amax();
        assert!(rel < 1e-5, "relative error {rel}");
        assert_eq!(approx.mean(), g.mean());
    }

    #[test]
    fn laplace_rejects_non_maximum_and_flat() {
        let p = g1(0.0, 1.0).prepared().unwrap();
        assert!(matches!(
            laplace_approximation(|x| p.log_pdf(x), &dvector![0.5]),
            Err(GaussianError::NotAMaximum { .. })
        ));
        let flat = |x: &DVector<f64>| -x[0] * x[0];
        match laplace_approximation(flat, &dvector![0.0, 0.0]) {
            Err(GaussianError::FlatDirection(ev)) => assert_eq!(ev.len(), 1),
            other => panic!("expected flat direction, got {other:?}"),
        }
    }

    #[test]
    fn log_sum_exp_edges() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
