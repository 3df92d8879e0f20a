//! Kernel functions over joint (history, label) sequences.
//!
//! Every kernel here treats a joint sequence as one flattened vector of
//! length `(H + T) * D`. Distance families use the Frobenius norm of the
//! difference; inner-product families use the flattened dot product.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on `‖a − b‖` in the exponential-kernel gradient.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(−‖a−b‖ / 2σ²)`, unsquared norm.
    Exponential,
    /// `exp(−‖a−b‖² / 2σ²)`.
    Gaussian,
    Linear,
    Polynomial,
    Sigmoid,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::Exponential,
        KernelFamily::Gaussian,
        KernelFamily::Linear,
        KernelFamily::Polynomial,
        KernelFamily::Sigmoid,
    ];

    pub fn is_distance_based(self) -> bool {
        matches!(self, KernelFamily::Exponential | KernelFamily::Gaussian)
    }
}

/// A kernel family together with its parameters.
///
/// Only the parameters relevant to `family` are read: `sigma` for the
/// distance families, `degree` for Polynomial, `scale`/`offset` for
/// Polynomial and Sigmoid. `scale = None` means `1 / flattened length`;
/// `offset = None` means 0 for Polynomial and −1 for Sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: f64,
    pub degree: u32,
    pub scale: Option<f64>,
    pub offset: Option<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        KernelSpec {
            family,
            sigma: 1.0,
            degree: 2,
            scale: None,
            offset: None,
        }
    }

    pub fn exponential(sigma: f64) -> Self {
        KernelSpec {
            sigma,
            ..Self::new(KernelFamily::Exponential)
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec {
            sigma,
            ..Self::new(KernelFamily::Gaussian)
        }
    }

    pub fn linear() -> Self {
        Self::new(KernelFamily::Linear)
    }

    pub fn polynomial(degree: u32) -> Self {
        KernelSpec {
            degree,
            ..Self::new(KernelFamily::Polynomial)
        }
    }

    pub fn sigmoid() -> Self {
        Self::new(KernelFamily::Sigmoid)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Exponential | KernelFamily::Gaussian => {
                if !(self.sigma.is_finite() && self.sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "kernel bandwidth must be positive and finite, got {}",
                        self.sigma
                    )));
                }
            }
            KernelFamily::Polynomial => {
                if self.degree < 1 {
                    return Err(Error::Config("polynomial degree must be >= 1".into()));
                }
                self.check_affine()?;
            }
            KernelFamily::Sigmoid => self.check_affine()?,
            KernelFamily::Linear => {}
        }
        Ok(())
    }

    fn check_affine(&self) -> Result<()> {
        for (name, v) in [("scale", self.scale), ("offset", self.offset)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::Config(format!("kernel {name} must be finite")));
                }
            }
        }
        Ok(())
    }

    fn scale_for(&self, len: usize) -> f64 {
        self.scale.unwrap_or(1.0 / len.max(1) as f64)
    }

    fn offset(&self) -> f64 {
        match self.family {
            KernelFamily::Sigmoid => self.offset.unwrap_or(-1.0),
            _ => self.offset.unwrap_or(0.0),
        }
    }

    /// `K(a, b)` on flattened vectors of equal length.
    pub fn eval_flat(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let two_sigma_sq = 2.0 * self.sigma * self.sigma;
        match self.family {
            KernelFamily::Exponential => (-squared_distance(a, b).sqrt() / two_sigma_sq).exp(),
            KernelFamily::Gaussian => (-squared_distance(a, b) / two_sigma_sq).exp(),
            KernelFamily::Linear => dot(a, b),
            KernelFamily::Polynomial => {
                let base = self.scale_for(a.len()) * dot(a, b) + self.offset();
                base.powi(self.degree as i32)
            }
            KernelFamily::Sigmoid => (self.scale_for(a.len()) * dot(a, b) + self.offset()).tanh(),
        }
    }

    /// Writes `∂K(a, b)/∂b` into `out`, scaled by `weight` and added to what
    /// is already there.
    pub fn accumulate_grad_b(&self, a: &[f64], b: &[f64], weight: f64, out: &mut [f64]) {
        debug_assert_eq!(a.len(), b.len());
        debug_assert_eq!(a.len(), out.len());
        let sigma_sq = self.sigma * self.sigma;
        match self.family {
            KernelFamily::Exponential => {
                let dist = squared_distance(a, b).sqrt();
                let k = (-dist / (2.0 * sigma_sq)).exp();
                let coef = weight * k / (2.0 * sigma_sq * dist.max(EPS_NORM));
                axpy_diff(coef, a, b, out);
            }
            KernelFamily::Gaussian => {
                let k = (-squared_distance(a, b) / (2.0 * sigma_sq)).exp();
                axpy_diff(weight * k / sigma_sq, a, b, out);
            }
            KernelFamily::Linear => axpy(weight, a, out),
            KernelFamily::Polynomial => {
                let s = self.scale_for(a.len());
                let base = s * dot(a, b) + self.offset();
                let coef = self.degree as f64 * base.powi(self.degree as i32 - 1) * s;
                axpy(weight * coef, a, out);
            }
            KernelFamily::Sigmoid => {
                let s = self.scale_for(a.len());
                let t = (s * dot(a, b) + self.offset()).tanh();
                axpy(weight * (1.0 - t * t) * s, a, out);
            }
        }
    }
}

const LANES: usize = 8;

// Independent partial sums so the loop vectorizes; the order is fixed, so
// results are reproducible.
#[inline]
fn lane_sum(a: &[f64], b: &[f64], term: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += term(xa[l], xb[l]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += term(*x, *y);
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| (x - y) * (x - y))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| x * y)
}

// out += coef * (a − b)
fn axpy_diff(coef: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += coef * (x - y);
    }
}

fn axpy(coef: f64, a: &[f64], out: &mut [f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o += coef * x;
    }
}

/// A history block followed by a label (or forecast) block along time.
///
/// The first `history` rows are history; the remaining rows are the label
/// or forecast. Entries are always finite and stored in standard layout.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSequence {
    values: Array2<f64>,
    history: usize,
}

impl JointSequence {
    pub fn new(values: Array2<f64>, history: usize) -> Result<Self> {
        if history > values.nrows() {
            return Err(Error::Dimension(format!(
                "history length {history} exceeds {} rows",
                values.nrows()
            )));
        }
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::Dimension("joint sequence must be non-empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry {bad} in joint sequence")));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(JointSequence { values, history })
    }

    /// `concat(X, Y)` along time.
    pub fn concat(history: ArrayView2<'_, f64>, label: ArrayView2<'_, f64>) -> Result<Self> {
        if history.ncols() != label.ncols() {
            return Err(Error::Dimension(format!(
                "history has {} channels, label has {}",
                history.ncols(),
                label.ncols()
            )));
        }
        let values = concatenate(Axis(0), &[history, label])
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values, history.nrows())
    }

    /// A 1×1 joint with no history, handy for scalar examples.
    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(Array2::from_elem((1, 1), v), 0)
    }

    pub fn from_rows(rows: &[&[f64]], history: usize) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let values = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values, history)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn history_len(&self) -> usize {
        self.history
    }

    pub fn horizon(&self) -> usize {
        self.values.nrows() - self.history
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("joint sequences are kept in standard layout")
    }

    /// Flattened offset at which the label block starts.
    pub fn label_offset(&self) -> usize {
        self.history * self.values.ncols()
    }
}

fn check_same_shape(a: &JointSequence, b: &JointSequence) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "joint shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn eval_kernel(spec: &KernelSpec, a: &JointSequence, b: &JointSequence) -> Result<f64> {
    spec.validate()?;
    check_same_shape(a, b)?;
    Ok(spec.eval_flat(a.as_slice(), b.as_slice()))
}

/// Gram matrix with entry `(i, j) = K(rows[i], cols[j])`.
///
/// Rows are computed in parallel; each entry is a single sequential
/// evaluation, so the result is identical to the plain double loop.
pub fn gram_matrix(
    spec: &KernelSpec,
    rows: &[JointSequence],
    cols: &[JointSequence],
) -> Result<Array2<f64>> {
    spec.validate()?;
    let Some(first) = rows.first().or_else(|| cols.first()) else {
        return Ok(Array2::zeros((rows.len(), cols.len())));
    };
    for z in rows.iter().chain(cols) {
        check_same_shape(first, z)?;
    }
    let entries: Vec<f64> = rows
        .par_iter()
        .flat_map_iter(|r| cols.iter().map(move |c| spec.eval_flat(r.as_slice(), c.as_slice())))
        .collect();
    Ok(Array2::from_shape_vec((rows.len(), cols.len()), entries)
        .expect("gram entries match the requested shape"))
}

/// `∂K(a, b)/∂b`, shaped like `b`.
pub fn kernel_grad_b(spec: &KernelSpec, a: &JointSequence, b: &JointSequence) -> Result<Array2<f64>> {
    spec.validate()?;
    check_same_shape(a, b)?;
    let mut out = vec![0.0; a.as_slice().len()];
    spec.accumulate_grad_b(a.as_slice(), b.as_slice(), 1.0, &mut out);
    Ok(Array2::from_shape_vec(b.shape(), out).expect("gradient matches joint shape"))
}

/// Median-heuristic bandwidth over all pairs `i < j` of `samples`.
///
/// For the exponential kernel `σ² = median ‖Zᵢ − Zⱼ‖`; for the Gaussian
/// kernel `σ² = median ‖Zᵢ − Zⱼ‖²`, so the exponent is O(1) in both cases.
/// Other families ignore σ and get 1.
pub fn median_bandwidth(family: KernelFamily, samples: &[JointSequence]) -> Result<f64> {
    if !family.is_distance_based() {
        return Ok(1.0);
    }
    if samples.len() < 2 {
        return Err(Error::Config(
            "median bandwidth needs at least two samples".into(),
        ));
    }
    let mut stats = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            check_same_shape(a, b)?;
            let sq = squared_distance(a.as_slice(), b.as_slice());
            stats.push(if family == KernelFamily::Gaussian { sq } else { sq.sqrt() });
        }
    }
    let median = median(&mut stats);
    if !(median > 0.0) {
        return Err(Error::Domain(
            "median pairwise distance is zero; set kernel.sigma explicitly".into(),
        ));
    }
    Ok(median.sqrt())
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(rng: &mut ChaCha8Rng, rows: usize, cols: usize, history: usize) -> JointSequence {
        let values = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        JointSequence::new(values, history).unwrap()
    }

    fn all_specs() -> Vec<KernelSpec> {
        vec![
            KernelSpec::exponential(1.3),
            KernelSpec::gaussian(0.9),
            KernelSpec::linear(),
            KernelSpec::polynomial(3),
            KernelSpec::sigmoid(),
        ]
    }

    #[test]
    fn exponential_examples() {
        let spec = KernelSpec::exponential(1.0);
        let z = JointSequence::scalar(0.7).unwrap();
        assert_eq!(eval_kernel(&spec, &z, &z).unwrap(), 1.0);
        let a = JointSequence::scalar(0.0).unwrap();
        let b = JointSequence::scalar(2.0).unwrap();
        assert_relative_eq!(eval_kernel(&spec, &a, &b).unwrap(), (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(eval_kernel(&spec, &a, &b).unwrap(), 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_and_linear_examples() {
        let a = JointSequence::scalar(0.0).unwrap();
        let b = JointSequence::scalar(2.0).unwrap();
        let g = eval_kernel(&KernelSpec::gaussian(1.0), &a, &b).unwrap();
        assert_relative_eq!(g, (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(g, 0.135335, epsilon = 1e-6);

        let a = JointSequence::from_rows(&[&[1.0, 2.0]], 0).unwrap();
        let b = JointSequence::from_rows(&[&[3.0, 4.0]], 0).unwrap();
        assert_eq!(eval_kernel(&KernelSpec::linear(), &a, &b).unwrap(), 11.0);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = JointSequence::scalar(0.0).unwrap();
        let b = JointSequence::from_rows(&[&[1.0, 2.0]], 0).unwrap();
        let err = eval_kernel(&KernelSpec::linear(), &a, &b).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(matches!(
            kernel_grad_b(&KernelSpec::linear(), &a, &b).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn non_finite_input_is_domain_error() {
        let err = JointSequence::scalar(f64::NAN).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let err = JointSequence::from_rows(&[&[1.0, f64::INFINITY]], 0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let z = JointSequence::scalar(0.0).unwrap();
        assert!(eval_kernel(&KernelSpec::exponential(0.0), &z, &z).is_err());
        assert!(eval_kernel(&KernelSpec::gaussian(-1.0), &z, &z).is_err());
        assert!(eval_kernel(&KernelSpec::polynomial(0), &z, &z).is_err());
        // sigma is irrelevant to the linear family
        assert!(eval_kernel(&KernelSpec::linear().with_sigma(-5.0), &z, &z).is_ok());
    }

    #[test]
    fn gram_examples() {
        let spec = KernelSpec::exponential(1.0);
        let z = vec![JointSequence::scalar(3.0).unwrap()];
        assert_eq!(gram_matrix(&spec, &z, &z).unwrap(), Array2::from_elem((1, 1), 1.0));

        let pts = vec![JointSequence::scalar(0.0).unwrap(), JointSequence::scalar(2.0).unwrap()];
        let g = gram_matrix(&spec, &pts, &pts).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(g, ndarray::array![[1.0, e], [e, 1.0]]);
    }

    #[test]
    fn gram_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..5).map(|_| random_joint(&mut rng, 4, 2, 2)).collect();
        for spec in all_specs() {
            let g = gram_matrix(&spec, &pts, &pts).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(g[[i, j]], eval_kernel(&spec, &pts[i], &pts[j]).unwrap());
                    assert_eq!(g[[i, j]], g[[j, i]]);
                }
            }
        }
    }

    #[test]
    fn grad_examples() {
        let a = JointSequence::scalar(1.5).unwrap();
        let g = kernel_grad_b(&KernelSpec::gaussian(1.0), &a, &a).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let a = JointSequence::scalar(0.0).unwrap();
        let b = JointSequence::scalar(2.0).unwrap();
        let g = kernel_grad_b(&KernelSpec::exponential(1.0), &a, &b).unwrap();
        assert_relative_eq!(g[[0, 0]], -(-1.0f64).exp() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(g[[0, 0]], -0.183940, epsilon = 1e-6);
    }

    #[test]
    fn exponential_grad_is_finite_at_coincidence() {
        let a = JointSequence::scalar(0.4).unwrap();
        let g = kernel_grad_b(&KernelSpec::exponential(1.0), &a, &a).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step = 1e-5;
        for spec in all_specs() {
            for _ in 0..10 {
                let a = random_joint(&mut rng, 3, 2, 1);
                let b = random_joint(&mut rng, 3, 2, 1);
                let analytic = kernel_grad_b(&spec, &a, &b).unwrap();
                let mut fd = Array2::zeros(b.shape());
                for idx in 0..6 {
                    let (r, c) = (idx / 2, idx % 2);
                    let mut plus = b.values().clone();
                    plus[[r, c]] += step;
                    let mut minus = b.values().clone();
                    minus[[r, c]] -= step;
                    let fp = eval_kernel(&spec, &a, &JointSequence::new(plus, 1).unwrap()).unwrap();
                    let fm = eval_kernel(&spec, &a, &JointSequence::new(minus, 1).unwrap()).unwrap();
                    fd[[r, c]] = (fp - fm) / (2.0 * step);
                }
                let num: f64 = (&analytic - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
                let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                assert!(num / den < 1e-6, "{:?}: rel err {}", spec.family, num / den);
            }
        }
    }

    #[test]
    fn median_bandwidth_scalar_points() {
        let pts: Vec<_> = [0.0, 1.0, 3.0]
            .iter()
            .map(|&v| JointSequence::scalar(v).unwrap())
            .collect();
        // pairwise distances 1, 3, 2 -> median 2
        let s = median_bandwidth(KernelFamily::Exponential, &pts).unwrap();
        assert_relative_eq!(s * s, 2.0, max_relative = 1e-14);
        // squared distances 1, 9, 4 -> median 4
        let s = median_bandwidth(KernelFamily::Gaussian, &pts).unwrap();
        assert_relative_eq!(s * s, 4.0, max_relative = 1e-14);
        assert_eq!(median_bandwidth(KernelFamily::Linear, &pts).unwrap(), 1.0);
        assert!(median_bandwidth(KernelFamily::Exponential, &pts[..1]).is_err());
    }

    #[test]
    fn concat_puts_history_first() {
        let x = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let y = ndarray::array![[5.0, 6.0]];
        let z = JointSequence::concat(x.view(), y.view()).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(z.history_len(), 2);
        assert_eq!(z.horizon(), 1);
        assert_eq!(z.label_offset(), 4);
        let bad = ndarray::array![[5.0]];
        assert!(JointSequence::concat(x.view(), bad.view()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn joint_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..8).prop_flat_map(|n| {
                (
                    prop::collection::vec(-3.0f64..3.0, n),
                    prop::collection::vec(-3.0f64..3.0, n),
                )
            })
        }

        proptest! {
            #[test]
            fn symmetric((a, b) in joint_pair(), sigma in 0.2f64..3.0) {
                for spec in all_specs() {
                    let spec = if spec.family.is_distance_based() { spec.with_sigma(sigma) } else { spec };
                    prop_assert_eq!(spec.eval_flat(&a, &b), spec.eval_flat(&b, &a));
                }
            }

            #[test]
            fn distance_kernels_in_unit_interval((a, b) in joint_pair(), sigma in 0.2f64..3.0) {
                for spec in [KernelSpec::exponential(sigma), KernelSpec::gaussian(sigma)] {
                    let k = spec.eval_flat(&a, &b);
                    prop_assert!((0.0..=1.0).contains(&k));
                    // exp underflows to 0 only for exponents below about −745.
                    let d2 = squared_distance(&a, &b);
                    let exponent = match spec.family {
                        KernelFamily::Exponential => d2.sqrt(),
                        _ => d2,
                    } / (2.0 * sigma * sigma);
                    if exponent < 700.0 {
                        prop_assert!(k > 0.0);
                    }
                    prop_assert_eq!(spec.eval_flat(&a, &a), 1.0);
                }
            }

            #[test]
            fn distance_kernels_decay(a in prop::collection::vec(-2.0f64..2.0, 3),
                                      dir in prop::collection::vec(-1.0f64..1.0, 3),
                                      t1 in 0.01f64..2.0, dt in 0.01f64..2.0) {
                let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assume!(norm > 1e-3);
                let near: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + t1 * d / norm).collect();
                let far: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + (t1 + dt) * d / norm).collect();
                for spec in [KernelSpec::exponential(1.0), KernelSpec::gaussian(1.0)] {
                    prop_assert!(spec.eval_flat(&a, &near) > spec.eval_flat(&a, &far));
                }
            }
        }
    }
}
