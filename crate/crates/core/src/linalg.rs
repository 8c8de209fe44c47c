//! Small dense linear-algebra helpers shared by the estimator, Riccati and
//! simulation code. Everything works on `DMatrix<f64>`; problem sizes are
//! desk scale so clarity wins over blocking.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

/// Smallest admissible pivot (relative to the matrix scale) for a symmetric
/// factorization to count as positive definite.
pub const PIVOT_TOL: f64 = 1e-12;

/// Singular-value threshold used by the PBH rank tests.
pub const RANK_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `||X - X'||_F / ||X||_F`, zero for the zero matrix.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Cholesky factor `L` with `L L' = A` for a symmetric positive definite `A`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    /// Factorizes `a` (only its lower triangle is read). Returns `None` when a
    /// pivot falls below `PIVOT_TOL` times the largest diagonal magnitude
    /// (floored at one), which is how positive definiteness is decided.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return None;
        }
        let scale = a.diagonal().iter().fold(1.0_f64, |s, d| s.max(d.abs()));
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() || d <= PIVOT_TOL * scale {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(Self { l })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.l.nrows();
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }
}

pub fn is_pd(a: &DMatrix<f64>) -> bool {
    SpdFactor::new(a).is_some()
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// PSD test with an absolute floor of `tol * max(1, ||A||_F)`.
pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(a) >= -tol * a.norm().max(1.0)
}

/// Returns `F` with `F F' = A` from the eigendecomposition of a symmetric
/// PSD matrix. Eigenvalues in `[-clamp, 0)` are treated as zero; anything
/// more negative is rejected.
pub fn psd_factor(a: &DMatrix<f64>, clamp: f64) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut f = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -clamp {
            return None;
        }
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Some(f)
}

/// Symmetric square root `S = S'` with `S S = A`.
pub fn sym_sqrt(a: &DMatrix<f64>, clamp: f64) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(a));
    if eig.eigenvalues.iter().any(|&l| l < -clamp) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.is_empty() {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().cloned().collect()
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

/// Smallest singular value of a complex matrix relative to its largest
/// (floored at one).
fn relative_min_singular(m: &DMatrix<Complex<f64>>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(1.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    min / max
}

/// Outcome of a PBH test for one eigenvalue of `A`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PbhDiagnostic {
    pub eigenvalue_re: f64,
    pub eigenvalue_im: f64,
    pub relative_min_singular_value: f64,
    pub full_rank: bool,
}

/// PBH observability test of `(A, C)`: `[λI - A; C]` has full column rank
/// for every eigenvalue λ of `A`, or only those with `|λ| >= 1` when
/// `detectability` is set.
pub fn pbh_observable(a: &DMatrix<f64>, c: &DMatrix<f64>, detectability: bool) -> (bool, Vec<PbhDiagnostic>) {
    let n = a.nrows();
    let ac = to_complex(a);
    let cc = to_complex(c);
    let mut ok = true;
    let mut diags = Vec::new();
    for lambda in eigenvalues(a) {
        if detectability && lambda.norm() < 1.0 {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        let shifted = DMatrix::<Complex<f64>>::identity(n, n) * lambda - &ac;
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        if c.nrows() > 0 {
            m.view_mut((n, 0), (c.nrows(), n)).copy_from(&cc);
        }
        let rel = relative_min_singular(&m);
        let full = rel > RANK_TOL;
        ok &= full;
        diags.push(PbhDiagnostic {
            eigenvalue_re: lambda.re,
            eigenvalue_im: lambda.im,
            relative_min_singular_value: rel,
            full_rank: full,
        });
    }
    (ok, diags)
}

/// PBH controllability/stabilizability test of `(A, B)` by duality.
pub fn pbh_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>, stabilizability: bool) -> (bool, Vec<PbhDiagnostic>) {
    pbh_observable(&a.transpose(), &b.transpose(), stabilizability)
}

/// Solves the discrete Lyapunov equation `X = F X F' + C` through the
/// Kronecker form `(I - F ⊗ F) vec X = vec C`.
pub fn dlyap(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let kron = f.kronecker(f);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(c.as_slice());
    let v = lhs.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_column_slice(n, n, v.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_factor_rejects_zero_and_solves() {
        assert!(SpdFactor::new(&DMatrix::from_element(1, 1, 0.0)).is_none());
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = SpdFactor::new(&a).unwrap();
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = f.solve(&b);
        assert!((&a * &x - &b).norm() < 1e-14);
        assert!((f.lower() * f.lower().transpose() - &a).norm() < 1e-14);
    }

    #[test]
    fn psd_factor_clamps_zero_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = psd_factor(&a, 1e-12).unwrap();
        assert!((&f * f.transpose() - &a).norm() < 1e-14);
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(psd_factor(&neg, 1e-12).is_none());
    }

    #[test]
    fn pbh_on_jordan_block() {
        // A = [[1,1],[0,1]] is observable from the first coordinate only.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let c1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let c2 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(pbh_observable(&a, &c1, true).0);
        assert!(!pbh_observable(&a, &c2, true).0);
    }

    #[test]
    fn stable_modes_are_ignored_for_detectability() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(pbh_observable(&a, &c, true).0);
        assert!(!pbh_observable(&a, &c, false).0);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((spectral_radius(&a) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn dlyap_scalar() {
        let f = DMatrix::from_element(1, 1, 0.5);
        let c = DMatrix::from_element(1, 1, 3.0);
        let x = dlyap(&f, &c).unwrap();
        assert!((x[(0, 0)] - 4.0).abs() < 1e-12);
    }
}
