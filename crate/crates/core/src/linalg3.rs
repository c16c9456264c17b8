//! Fixed-size 3-vectors and 3×3 matrices.
//!
//! Everything downstream (frames, transport, readout, equivariance checks)
//! is expressed with these two types. [`sym_eig3`] is a cyclic Jacobi
//! solver: it stays stable on repeated eigenvalues, which is exactly the
//! regime where PCA frames become ill-defined and must be flagged.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("non-finite matrix")]
    NonFinite,
    #[error("degenerate basis (|det| = {0:e})")]
    DegenerateBasis(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        cross(self, o)
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// `self · selfᵀ`
    pub fn outer(self, o: Self) -> Mat3<T> {
        let a = self.to_array();
        let b = o.to_array();
        let mut m = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m.m[r][c] = a[r] * b[c];
            }
        }
        m
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossless()),
            U::lit(self.y.to_f64_lossless()),
            U::lit(self.z.to_f64_lossless()),
        )
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn zeros() -> Self {
        Self { m: [[T::zero(); 3]; 3] }
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one(), T::one())
    }

    pub fn diag(a: T, b: T, c: T) -> Self {
        let mut m = Self::zeros();
        m.m[0][0] = a;
        m.m[1][1] = b;
        m.m[2][2] = c;
        m
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self {
            m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    /// Row-major flat slice of nine entries.
    pub fn from_slice(s: &[T]) -> Self {
        assert_eq!(s.len(), 9, "Mat3::from_slice needs 9 entries");
        Self {
            m: [[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]],
        }
    }

    pub fn to_flat(&self) -> [T; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn col(&self, c: usize) -> Vec3<T> {
        Vec3::new(self.m[0][c], self.m[1][c], self.m[2][c])
    }

    pub fn set_col(&mut self, c: usize, v: Vec3<T>) {
        self.m[0][c] = v.x;
        self.m[1][c] = v.y;
        self.m[2][c] = v.z;
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]],
        }
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> T {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn frobenius_norm(&self) -> T {
        self.to_flat().iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.to_flat().iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for r in out.m.iter_mut() {
            for v in r.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrized(&self) -> Self {
        (*self + self.transpose()).scale(T::lit(0.5))
    }

    /// `R · self · Rᵀ`
    pub fn conjugate(&self, r: &Mat3<T>) -> Self {
        *r * *self * r.transpose()
    }

    /// Largest deviation from symmetry, `max |m - mᵀ|`.
    pub fn asymmetry(&self) -> T {
        (*self - self.transpose()).max_abs()
    }

    /// `max |FᵀF − I|`
    pub fn orthonormality_error(&self) -> T {
        (self.transpose() * *self - Self::identity()).max_abs()
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = Mat3::<U>::zeros();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = U::lit(self.m[r][c].to_f64_lossless());
            }
        }
        out
    }
}

impl<T: Real> Index<(usize, usize)> for Mat3<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.m[r][c]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Mat3<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.m[r][c]
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] += o.m[r][c];
            }
        }
        out
    }
}

impl<T: Real> AddAssign for Mat3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] -= o.m[r][c];
            }
        }
        out
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self::zeros();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = self.m[r][0] * o.m[0][c] + self.m[r][1] * o.m[1][c] + self.m[r][2] * o.m[2][c];
            }
        }
        out
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    #[inline]
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    Vec3::new(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x)
}

/// Eigendecomposition of a symmetric 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEig3<T> {
    /// Ascending.
    pub values: [T; 3],
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: Mat3<T>,
    /// Two eigenvalues coincide within the tie tolerance.
    pub degenerate: bool,
}

impl<T: Real> SymEig3<T> {
    pub fn vector(&self, k: usize) -> Vec3<T> {
        self.vectors.col(k)
    }

    /// `E Λ Eᵀ`
    pub fn reconstruct(&self) -> Mat3<T> {
        let l = self.values;
        self.vectors * Mat3::diag(l[0], l[1], l[2]) * self.vectors.transpose()
    }
}

const MAX_SWEEPS: usize = 50;

fn off_diagonal_norm<T: Real>(a: &Mat3<T>) -> T {
    let two = T::lit(2.0);
    (two * (a.m[0][1] * a.m[0][1] + a.m[0][2] * a.m[0][2] + a.m[1][2] * a.m[1][2])).sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back ascending; each eigenvector column is flipped so
/// that its largest-magnitude component (first index on an exact tie) is
/// non-negative. The input is symmetrized from its upper triangle.
pub fn sym_eig3<T: Real>(m: &Mat3<T>) -> Result<SymEig3<T>, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let mut a = *m;
    a.m[1][0] = a.m[0][1];
    a.m[2][0] = a.m[0][2];
    a.m[2][1] = a.m[1][2];
    let norm = a.frobenius_norm();
    let tol = T::lit(1e-14).max(T::epsilon() * T::lit(4.0)) * norm;
    let mut v = Mat3::<T>::identity();

    let mut sweeps = 0;
    while off_diagonal_norm(&a) > tol && sweeps < MAX_SWEEPS {
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a.m[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a.m[q][q] - a.m[p][p]) / (T::lit(2.0) * apq);
            let t = if theta.abs() > T::lit(1e150) {
                T::lit(0.5) / theta
            } else {
                let sgn = if theta >= T::zero() { T::one() } else { -T::one() };
                sgn / (theta.abs() + (theta * theta + T::one()).sqrt())
            };
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            // A <- Jᵀ A J with J the (p, q) Givens rotation.
            for k in 0..3 {
                let akp = a.m[k][p];
                let akq = a.m[k][q];
                a.m[k][p] = c * akp - s * akq;
                a.m[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a.m[p][k];
                let aqk = a.m[q][k];
                a.m[p][k] = c * apk - s * aqk;
                a.m[q][k] = s * apk + c * aqk;
            }
            a.m[p][q] = T::zero();
            a.m[q][p] = T::zero();
            for k in 0..3 {
                let vkp = v.m[k][p];
                let vkq = v.m[k][q];
                v.m[k][p] = c * vkp - s * vkq;
                v.m[k][q] = s * vkp + c * vkq;
            }
        }
        sweeps += 1;
    }

    let diag = [a.m[0][0], a.m[1][1], a.m[2][2]];
    let mut order = [0usize, 1, 2];
    // Stable: equal eigenvalues keep their Jacobi order.
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));

    let mut values = [T::zero(); 3];
    let mut vectors = Mat3::zeros();
    for (k, &src) in order.iter().enumerate() {
        values[k] = diag[src];
        vectors.set_col(k, canonical_sign(v.col(src)));
    }

    let tie = T::lit(1e-10) * T::one().max(norm);
    let degenerate = (values[1] - values[0]).abs() <= tie || (values[2] - values[1]).abs() <= tie;
    Ok(SymEig3 { values, vectors, degenerate })
}

/// Flips `v` so that its largest-magnitude component is non-negative.
pub fn canonical_sign<T: Real>(v: Vec3<T>) -> Vec3<T> {
    let a = v.to_array();
    let mut best = 0;
    for k in 1..3 {
        if a[k].abs() > a[best].abs() {
            best = k;
        }
    }
    if a[best] < T::zero() {
        -v
    } else {
        v
    }
}

/// Gram–Schmidt on the columns (first, then second, third by cross
/// product). The result is always a proper rotation.
pub fn orthonormalize<T: Real>(m: &Mat3<T>) -> Result<Mat3<T>, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let cols = [m.col(0), m.col(1), m.col(2)];
    let norms = [cols[0].norm(), cols[1].norm(), cols[2].norm()];
    if norms.iter().any(|&n| n == T::zero()) {
        return Err(LinalgError::DegenerateBasis(0.0));
    }
    let unit = Mat3::from_cols(cols[0].scale(norms[0].recip()), cols[1].scale(norms[1].recip()), cols[2].scale(norms[2].recip()));
    let det = unit.det();
    if det.abs() <= T::lit(1e-12) {
        return Err(LinalgError::DegenerateBasis(det.to_f64_lossless()));
    }
    let x = unit.col(0);
    let y_raw = unit.col(1) - x.scale(x.dot(unit.col(1)));
    let y = y_raw.scale(y_raw.norm().recip());
    let z = cross(x, y);
    // One re-projection pass keeps ‖FᵀF − I‖ at rounding level.
    let z = z.scale(z.norm().recip());
    let y = cross(z, x);
    Ok(Mat3::from_cols(x, y, z))
}

/// Haar-uniform rotation from a uniformly random unit quaternion.
pub fn random_rotation<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Mat3<T> {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = [a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos()];
    quaternion_to_matrix(q).cast()
}

/// Rotation matrix of the unit quaternion `(x, y, z, w)`.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Mat3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (x, y, z, w) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::from_rows([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ])
}
