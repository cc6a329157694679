//! Skeleton graph algebra: normalized adjacency, the two-hop propagation
//! matrix, the rational spectral response, and eigen-based checks of the
//! identities linking them.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Parent of every joint in the default 16-joint Human3.6M skeleton; the hip
/// (joint 0) is the root.
///
/// Order: hip, r-hip, r-knee, r-foot, l-hip, l-knee, l-foot, spine, thorax,
/// head, l-shoulder, l-elbow, l-wrist, r-shoulder, r-elbow, r-wrist.
pub const H36M16_PARENTS: [Option<usize>; 16] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(8),
    Some(10),
    Some(11),
    Some(8),
    Some(13),
    Some(14),
];

/// Index of the root joint that 3D targets are centered on.
pub const ROOT_JOINT: usize = 0;

/// Edge list of the default skeleton, derived from [`H36M16_PARENTS`].
pub fn h36m16_edges() -> Vec<(usize, usize)> {
    H36M16_PARENTS.iter().enumerate().filter_map(|(j, p)| p.map(|p| (p, j))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Matrix,
    normalized_adjacency: Matrix,
    laplacian: Matrix,
}

impl SkeletonGraph {
    /// Builds the graph and all derived matrices. Duplicate edges collapse.
    pub fn new(joint_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::BadDimensions("joint count must be positive".into()));
        }
        if edges.is_empty() {
            return Err(Error::EmptyEdgeList);
        }
        let mut adjacency = Matrix::zeros(joint_count, joint_count);
        for &(i, j) in edges {
            for idx in [i, j] {
                if idx >= joint_count {
                    return Err(Error::IndexOutOfRange { index: idx, limit: joint_count });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        let degree: Vec<f64> = (0..joint_count).map(|i| adjacency.row(i).iter().sum()).collect();
        if let Some(isolated) = degree.iter().position(|&d| d == 0.0) {
            return Err(Error::IsolatedJoint(isolated));
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / libm::sqrt(d)).collect();
        let mut normalized_adjacency = Matrix::zeros(joint_count, joint_count);
        let mut laplacian = Matrix::identity(joint_count);
        for i in 0..joint_count {
            for j in 0..joint_count {
                let a = adjacency[(i, j)];
                if a != 0.0 {
                    // Same product order for (i,j) and (j,i) keeps the result exactly symmetric.
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    let v = inv_sqrt[lo] * a * inv_sqrt[hi];
                    normalized_adjacency[(i, j)] = v;
                    laplacian[(i, j)] -= v;
                }
            }
        }
        let mut canonical: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| if i < j { (i, j) } else { (j, i) }).collect();
        canonical.sort_unstable();
        canonical.dedup();
        Ok(Self { joint_count, edges: canonical, adjacency, normalized_adjacency, laplacian })
    }

    /// The 16-joint Human3.6M skeleton used by default.
    pub fn h36m16() -> Self {
        Self::new(16, &h36m16_edges()).expect("built-in skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    /// Canonical edges `(i, j)` with `i < j`, sorted and deduplicated.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn normalized_adjacency(&self) -> &Matrix {
        &self.normalized_adjacency
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    /// Eigenpairs `(mu, v)` of the normalized adjacency, with unit-norm `v`.
    pub fn adjacency_eigenpairs(&self) -> Vec<(f64, Vec<f64>)> {
        let n = self.joint_count;
        let dm = DMatrix::from_row_slice(n, n, self.normalized_adjacency.as_slice());
        let eig = dm.symmetric_eigen();
        (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect())).collect()
    }
}

/// `P = (1 - s) Â + s Â²`, kept alongside `Â` so it can be applied without
/// forming the square.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    matrix: Matrix,
    normalized_adjacency: Matrix,
    scaling: f64,
}

/// Accepts the closed interval `[0, 1]`; the endpoints only make sense as
/// test oracles (see [`validate_training_scaling`]).
pub fn validate_scaling(s: f64) -> Result<()> {
    if s.is_finite() && (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::ScalingOutOfRange(s))
    }
}

/// Training configs need `0 < s < 1`.
pub fn validate_training_scaling(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::ScalingOutOfRange(s))
    }
}

impl PropagationMatrix {
    pub fn new(graph: &SkeletonGraph, s: f64) -> Result<Self> {
        validate_scaling(s)?;
        let a = graph.normalized_adjacency().clone();
        let a2 = a.matmul(&a)?;
        let mut matrix = a.clone();
        matrix.axpby(1.0 - s, s, &a2)?;
        Ok(Self { matrix, normalized_adjacency: a, scaling: s })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn joint_count(&self) -> usize {
        self.matrix.rows()
    }

    /// `P·H` computed right-to-left as `(1-s)(Â·H) + s(Â·(Â·H))`.
    pub fn propagate(&self, h: &Matrix) -> Result<Matrix> {
        let j = self.joint_count();
        if h.rows() != j {
            return Err(crate::error::shape_err((j, h.cols()), h.shape()));
        }
        let ah = self.normalized_adjacency.matmul(h)?;
        let mut out = self.normalized_adjacency.matmul(&ah)?;
        out.axpby(self.scaling, 1.0 - self.scaling, &ah)?;
        Ok(out)
    }

    /// `P·H + X` without materializing `Â²`.
    pub fn apply(&self, h: &Matrix, x: &Matrix) -> Result<Matrix> {
        x.ensure_shape(h.rows(), h.cols())?;
        let mut out = self.propagate(h)?;
        out.add_assign(x)?;
        Ok(out)
    }

    /// `P·H + X` using the stored dense `P`.
    pub fn apply_dense(&self, h: &Matrix, x: &Matrix) -> Result<Matrix> {
        x.ensure_shape(h.rows(), h.cols())?;
        let mut out = self.matrix.matmul(h)?;
        out.add_assign(x)?;
        Ok(out)
    }
}

/// The rational response `h_s(λ) = 1 / ((1+s)λ - sλ²)` over Laplacian
/// eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFilter {
    scaling: f64,
}

impl SpectralFilter {
    pub fn new(s: f64) -> Result<Self> {
        validate_scaling(s)?;
        Ok(Self { scaling: s })
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn response(&self, lambda: f64) -> Result<f64> {
        if !lambda.is_finite() {
            return Err(Error::NonFiniteInput(lambda));
        }
        let s = self.scaling;
        let den = lambda * (1.0 + s * (1.0 - lambda));
        if libm::fabs(den) <= 1e-12 {
            return Err(Error::SingularFrequency(lambda));
        }
        Ok(1.0 / den)
    }
}

/// One fixed-point step `((1-s)I + sÂ)·Â·H + X`.
///
/// Evaluated in that factored order, so it is an independent route to
/// [`PropagationMatrix::apply`].
pub fn fixed_point_step(graph: &SkeletonGraph, s: f64, h: &Matrix, x: &Matrix) -> Result<Matrix> {
    validate_scaling(s)?;
    let j = graph.joint_count();
    h.ensure_shape(j, h.cols())?;
    x.ensure_shape(j, h.cols())?;
    let a = graph.normalized_adjacency();
    let mut left = a.clone();
    left.scale(s);
    for i in 0..j {
        left[(i, i)] += 1.0 - s;
    }
    let ah = a.matmul(h)?;
    let mut out = left.matmul(&ah)?;
    out.add_assign(x)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterIdentityReport {
    pub scaling: f64,
    pub checks: Vec<IdentityCheck>,
}

impl FilterIdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }
}

pub const FILTER_IDENTITY_TOL: f64 = 1e-10;

/// Checks the Laplacian/adjacency factorizations behind the propagation rule
/// and the eigen-consistency of `P`.
///
/// Rows: `laplacian_expansion` is `(I - sL)(I - L) = I - (1+s)L + sL²`,
/// `adjacency_factorization` is `(I - sL)(I - L) = ((1-s)I + sÂ)Â`,
/// `propagation_eigenpairs` is `P v = ((1-s)μ + sμ²) v` for every eigenpair
/// of `Â`. Residuals are Frobenius norms (relative to `‖v‖` for the last).
pub fn verify_filter_identities(graph: &SkeletonGraph, s: f64) -> Result<FilterIdentityReport> {
    let j = graph.joint_count();
    let id = Matrix::identity(j);
    let l = graph.laplacian();
    let a = graph.normalized_adjacency();

    let mut i_minus_sl = id.clone();
    i_minus_sl.axpby(1.0, -s, l)?;
    let mut i_minus_l = id.clone();
    i_minus_l.axpby(1.0, -1.0, l)?;
    let product = i_minus_sl.matmul(&i_minus_l)?;

    let l2 = l.matmul(l)?;
    let mut expanded = id.clone();
    expanded.axpby(1.0, -(1.0 + s), l)?;
    expanded.axpby(1.0, s, &l2)?;
    let r1 = product.sub(&expanded)?.frobenius_norm();

    let mut left = a.clone();
    left.scale(s);
    for i in 0..j {
        left[(i, i)] += 1.0 - s;
    }
    let factored = left.matmul(a)?;
    let r2 = product.sub(&factored)?.frobenius_norm();

    let prop = PropagationMatrix::new(graph, s)?;
    let mut r3: f64 = 0.0;
    for (mu, v) in graph.adjacency_eigenpairs() {
        let vm = Matrix::from_vec(j, 1, v);
        let pv = prop.matrix().matmul(&vm)?;
        let mut expected = vm.clone();
        expected.scale((1.0 - s) * mu + s * mu * mu);
        let res = pv.sub(&expected)?.frobenius_norm() / vm.frobenius_norm();
        r3 = r3.max(res);
    }

    let checks = [("laplacian_expansion", r1), ("adjacency_factorization", r2), ("propagation_eigenpairs", r3)]
        .into_iter()
        .map(|(name, residual)| IdentityCheck { name, residual, passed: residual <= FILTER_IDENTITY_TOL })
        .collect();
    Ok(FilterIdentityReport { scaling: s, checks })
}
