//! Decorrelating transforms and their coding gains.
//!
//! The KLT is the orthogonal eigenbasis of the weight covariance; the ELT is
//! the biorthogonal transform jointly diagonalizing the weight covariance and
//! the inverse gradient covariance, which is the output-distortion-optimal
//! choice. Both are built per layer on the matricized channel dimension.
//! Coding gain measures the distortion ratio a transform buys at a fixed
//! rate; a gain of G is worth `0.5 * log2(G)` bits per weight.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{matricize, symmetrize, Axis};
use crate::error::{Error, Result};
use crate::grad::GradientBatch;
use crate::model::WeightTensor;

/// Transform families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    None,
    Klt,
    Elt,
    TwoD,
    IntraKernel,
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TransformKind::None => "none",
            TransformKind::Klt => "klt",
            TransformKind::Elt => "elt",
            TransformKind::TwoD => "2d",
            TransformKind::IntraKernel => "intra",
        };
        write!(f, "{s}")
    }
}

/// Input-channel side of a 2D transform.
#[derive(Debug, Clone)]
pub struct SecondAxis {
    /// Orthogonal basis `V`; analysis applies `V` on the input-channel side.
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

/// A constructed transform: analysis matrix `U^t`, synthesis `S = U^{-t}`,
/// and the coefficient variances (eigenvalues), sorted non-ascending.
#[derive(Debug, Clone)]
pub struct TransformPlan {
    pub kind: TransformKind,
    pub axis: Axis,
    pub analysis: DMatrix<f64>,
    pub synthesis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub second: Option<SecondAxis>,
}

impl TransformPlan {
    /// The do-nothing transform of the given channel count.
    pub fn identity(dim: usize, axis: Axis) -> Self {
        TransformPlan {
            kind: TransformKind::None,
            axis,
            analysis: DMatrix::identity(dim, dim),
            synthesis: DMatrix::identity(dim, dim),
            eigenvalues: DVector::from_element(dim, 1.0),
            second: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.analysis.nrows()
    }

    /// Applies the analysis transform to a matricized layer.
    pub fn apply(&self, matricized: &DMatrix<f64>) -> DMatrix<f64> {
        &self.analysis * matricized
    }

    /// Inverts the transform: `synthesis * coefficients`.
    pub fn reconstruct(&self, coefficients: &DMatrix<f64>) -> DMatrix<f64> {
        &self.synthesis * coefficients
    }
}

fn check_symmetric(c: &DMatrix<f64>, what: &str) -> Result<()> {
    if c.nrows() != c.ncols() {
        return Err(Error::NotSymmetric(format!("{what} is not square")));
    }
    let scale = c.abs().max().max(f64::MIN_POSITIVE);
    for i in 0..c.nrows() {
        for j in (i + 1)..c.ncols() {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::NotSymmetric(format!(
                    "{what}: entry ({i},{j}) differs from ({j},{i})"
                )));
            }
        }
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted non-ascending and a
/// deterministic sign convention (largest-magnitude component positive).
pub(crate) fn sorted_symmetric_eigen(c: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(c.clone());
    let dim = c.nrows();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("eigenvalues are finite")
    });
    let mut values = DVector::zeros(dim);
    let mut vectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..dim {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let flip = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            vectors[(r, dst)] = flip * col[r];
        }
    }
    (values, vectors)
}

/// Karhunen-Loeve transform: the orthogonal eigenbasis of the weight
/// covariance. Synthesis coincides with the (untransposed) basis.
pub fn klt(c_theta: &DMatrix<f64>, axis: Axis) -> Result<TransformPlan> {
    check_symmetric(c_theta, "weight covariance")?;
    let (values, u) = sorted_symmetric_eigen(c_theta);
    Ok(TransformPlan {
        kind: TransformKind::Klt,
        axis,
        analysis: u.transpose(),
        synthesis: u,
        eigenvalues: values.map(|v| v.max(0.0)),
        second: None,
    })
}

/// The jointly-diagonalizing transform of `(C_thth, C_gg^{-1})`:
/// `U^t C_thth U = Lambda` and `U^t C_gg^{-1} U = I`.
///
/// Built by Cholesky whitening: with `C_gg = L L^t` and the symmetric
/// eigendecomposition `L^t C_thth L = Q Lambda Q^t`, take `U = L Q`, so the
/// synthesis matrix is `U^{-t} = L^{-t} Q`.
pub fn elt(c_theta: &DMatrix<f64>, c_gamma: &DMatrix<f64>, axis: Axis) -> Result<TransformPlan> {
    check_symmetric(c_theta, "weight covariance")?;
    check_symmetric(c_gamma, "gradient covariance")?;
    if c_theta.nrows() != c_gamma.nrows() {
        return Err(Error::shape(
            "elt",
            format!("{0}x{0} gradient covariance", c_theta.nrows()),
            format!("{0}x{0}", c_gamma.nrows()),
        ));
    }
    let chol = nalgebra::Cholesky::new(c_gamma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("gradient covariance".into()))?;
    let l = chol.l();
    let mut whitened = l.transpose() * c_theta * &l;
    symmetrize(&mut whitened);
    let (values, q) = sorted_symmetric_eigen(&whitened);
    let u = &l * &q;
    let synthesis = l
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::NotPositiveDefinite("gradient covariance (singular factor)".into()))?;
    Ok(TransformPlan {
        kind: TransformKind::Elt,
        axis,
        analysis: u.transpose(),
        synthesis,
        eigenvalues: values.map(|v| v.max(0.0)),
        second: None,
    })
}

fn log_product_of_diagonal(m: &DMatrix<f64>) -> f64 {
    let mut sum = 0.0;
    for i in 0..m.nrows() {
        let d = m[(i, i)];
        if d <= 0.0 {
            return f64::NEG_INFINITY;
        }
        sum += d.ln();
    }
    sum
}

/// Transformed covariance diagonals appearing in the distortion formulas:
/// `(U^t C_thth U, S^t C_gg S)`.
fn transformed_pair(
    c_theta: &DMatrix<f64>,
    c_gamma: &DMatrix<f64>,
    plan: &TransformPlan,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = &plan.analysis * c_theta * plan.analysis.transpose();
    let g = plan.synthesis.transpose() * c_gamma * &plan.synthesis;
    (t, g)
}

/// Coding gain of a transform: the ratio of geometric-mean diagonal products
/// without and with the transform. The identity plan scores exactly 1;
/// higher is better. A zero transformed diagonal yields +infinity.
pub fn coding_gain(c_theta: &DMatrix<f64>, c_gamma: &DMatrix<f64>, plan: &TransformPlan) -> f64 {
    let (weight, gradient) = gain_decomposition(c_theta, c_gamma, plan);
    weight * gradient
}

/// Splits the coding gain into its weight-decorrelation and
/// gradient-decorrelation factors; their product is [`coding_gain`].
pub fn gain_decomposition(
    c_theta: &DMatrix<f64>,
    c_gamma: &DMatrix<f64>,
    plan: &TransformPlan,
) -> (f64, f64) {
    let n = c_theta.nrows() as f64;
    let (t, g) = transformed_pair(c_theta, c_gamma, plan);
    if plan.kind == TransformKind::None {
        return (1.0, 1.0);
    }
    let weight = ((log_product_of_diagonal(c_theta) - log_product_of_diagonal(&t)) / n).exp();
    let gradient = ((log_product_of_diagonal(c_gamma) - log_product_of_diagonal(&g)) / n).exp();
    (weight, gradient)
}

/// Orthonormal type-II DCT matrix; basis vectors are rows.
pub fn dct2_basis(len: usize) -> DMatrix<f64> {
    let n = len as f64;
    DMatrix::from_fn(len, len, |k, i| {
        let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        s * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()
    })
}

/// Separable 2D DCT-II over `a x b` kernels, as an `(a*b) x (a*b)` matrix
/// acting on row-major kernel vectors.
fn dct2_basis_2d(a: usize, b: usize) -> DMatrix<f64> {
    let da = dct2_basis(a);
    let db = dct2_basis(b);
    DMatrix::from_fn(a * b, a * b, |k, i| {
        let (ka, kb) = (k / b, k % b);
        let (ia, ib) = (i / b, i % b);
        da[(ka, ia)] * db[(kb, ib)]
    })
}

/// 2D transform `T = U^t Theta V`: orthogonal KLTs over output channels (U,
/// from the column-axis weight covariance) and input channels (V, row-axis).
pub fn transform_2d(
    layer: &WeightTensor,
    c_out: &DMatrix<f64>,
    c_in: &DMatrix<f64>,
) -> Result<TransformPlan> {
    let dims = layer.dims();
    if c_out.nrows() != dims.n || c_in.nrows() != dims.m {
        return Err(Error::shape(
            "transform_2d covariances",
            format!("{}x{} and {}x{}", dims.n, dims.n, dims.m, dims.m),
            format!("{}x{} and {}x{}", c_out.nrows(), c_out.ncols(), c_in.nrows(), c_in.ncols()),
        ));
    }
    let uplan = klt(c_out, Axis::Column)?;
    let vplan = klt(c_in, Axis::Row)?;
    Ok(TransformPlan {
        kind: TransformKind::TwoD,
        axis: Axis::Column,
        analysis: uplan.analysis,
        synthesis: uplan.synthesis,
        eigenvalues: uplan.eigenvalues,
        second: Some(SecondAxis {
            basis: vplan.synthesis,
            eigenvalues: vplan.eigenvalues,
        }),
    })
}

/// Applies a 2D plan to a layer: `t_kj = sum_{k'j'} U[k',k] theta_k'j' V[j',j]`.
pub fn apply_2d(layer: &WeightTensor, plan: &TransformPlan) -> Result<Vec<f64>> {
    let second = plan
        .second
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("plan has no second axis".into()))?;
    let dims = layer.dims();
    let kl = dims.kernel_len();
    let u = &plan.synthesis; // orthogonal, so synthesis == U
    let v = &second.basis;
    let mut half = vec![0.0; dims.weight_count()];
    // output-channel side: U^t on the left
    for k in 0..dims.n {
        for j in 0..dims.m {
            for t in 0..kl {
                let mut acc = 0.0;
                for kp in 0..dims.n {
                    acc += u[(kp, k)] * layer.data()[(kp * dims.m + j) * kl + t];
                }
                half[(k * dims.m + j) * kl + t] = acc;
            }
        }
    }
    // input-channel side: V on the right
    let mut out = vec![0.0; dims.weight_count()];
    for k in 0..dims.n {
        for j in 0..dims.m {
            for t in 0..kl {
                let mut acc = 0.0;
                for jp in 0..dims.m {
                    acc += half[(k * dims.m + jp) * kl + t] * v[(jp, j)];
                }
                out[(k * dims.m + j) * kl + t] = acc;
            }
        }
    }
    Ok(out)
}

/// Inverts [`apply_2d`]: `theta = U T V^t`.
pub fn reconstruct_2d(coeffs: &[f64], dims: crate::model::LayerDims, plan: &TransformPlan) -> Result<Vec<f64>> {
    let second = plan
        .second
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("plan has no second axis".into()))?;
    let kl = dims.kernel_len();
    let u = &plan.synthesis;
    let v = &second.basis;
    let mut half = vec![0.0; dims.weight_count()];
    for k in 0..dims.n {
        for j in 0..dims.m {
            for t in 0..kl {
                let mut acc = 0.0;
                for kp in 0..dims.n {
                    acc += u[(k, kp)] * coeffs[(kp * dims.m + j) * kl + t];
                }
                half[(k * dims.m + j) * kl + t] = acc;
            }
        }
    }
    let mut out = vec![0.0; dims.weight_count()];
    for k in 0..dims.n {
        for j in 0..dims.m {
            for t in 0..kl {
                let mut acc = 0.0;
                for jp in 0..dims.m {
                    acc += half[(k * dims.m + jp) * kl + t] * v[(j, jp)];
                }
                out[(k * dims.m + j) * kl + t] = acc;
            }
        }
    }
    Ok(out)
}

/// Which fixed basis the intra-kernel gain is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntraBasis {
    Dct2,
    Klt,
}

/// Per-output-row coding gains of an intra-kernel transform: for each output
/// channel, the within-kernel covariance across that row's kernels is
/// decorrelated by a 2D DCT-II or its own KLT. Gradient covariance defaults
/// to identity (weight-only gain) unless a gradient batch is supplied, in
/// which case the within-kernel gradient covariance mirrors the weight one.
pub fn intra_kernel_gains(
    layer: &WeightTensor,
    basis: IntraBasis,
    grads: Option<&GradientBatch>,
) -> Result<Vec<f64>> {
    let dims = layer.dims();
    let kl = dims.kernel_len();
    if kl == 1 {
        return Err(Error::Unsupported(
            "intra-kernel transform undefined for 1x1 kernels".into(),
        ));
    }
    let mut gains = Vec::with_capacity(dims.n);
    for k in 0..dims.n {
        // within-kernel weight covariance across row k's kernels
        let mut cw = DMatrix::<f64>::zeros(kl, kl);
        for j in 0..dims.m {
            let base = (k * dims.m + j) * kl;
            let v = DVector::from_column_slice(&layer.data()[base..base + kl]);
            cw.gemm(1.0 / dims.m as f64, &v, &v.transpose(), 1.0);
        }
        symmetrize(&mut cw);
        let cg = match grads {
            None => DMatrix::identity(kl, kl),
            Some(g) => {
                let mut cg = DMatrix::<f64>::zeros(kl, kl);
                for s in 0..g.samples() {
                    for i in 0..g.coords() {
                        let data = g.gradient(s, i);
                        for j in 0..dims.m {
                            let base = (k * dims.m + j) * kl;
                            let v = DVector::from_column_slice(&data[base..base + kl]);
                            cg.gemm(1.0 / g.samples() as f64, &v, &v.transpose(), 1.0);
                        }
                    }
                }
                symmetrize(&mut cg);
                cg
            }
        };
        let plan = match basis {
            IntraBasis::Klt => klt(&cw, Axis::Column)?,
            IntraBasis::Dct2 => {
                let analysis = dct2_basis_2d(dims.a, dims.b);
                TransformPlan {
                    kind: TransformKind::IntraKernel,
                    axis: Axis::Column,
                    synthesis: analysis.transpose(),
                    eigenvalues: DVector::from_element(kl, 0.0),
                    analysis,
                    second: None,
                }
            }
        };
        gains.push(coding_gain(&cw, &cg, &plan));
    }
    Ok(gains)
}

/// For a dense layer under a KLT plan, the rows of `U^t Theta` must be
/// orthogonal; returns the largest off-diagonal magnitude of
/// `(U^t Theta)(U^t Theta)^t` as the residual.
pub fn svd_consistency_check(layer: &WeightTensor, plan: &TransformPlan) -> Result<f64> {
    if !layer.dims().is_dense() {
        return Err(Error::Unsupported(
            "SVD consistency check applies to dense layers only".into(),
        ));
    }
    if plan.kind != TransformKind::Klt {
        return Err(Error::InvalidParam(format!(
            "SVD consistency check needs a KLT plan, got {}",
            plan.kind
        )));
    }
    let t = plan.apply(&matricize(layer, plan.axis));
    let gram = &t * t.transpose();
    let mut residual = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i != j {
                residual = residual.max(gram[(i, j)].abs());
            }
        }
    }
    Ok(residual)
}
