//! Small fixed-size tensor algebra in Voigt notation.
//!
//! Ordering is (xx, yy, zz, yz, xz, xy). Strain-like vectors carry engineering
//! shear (γ = 2ε), so a stress-like vector dotted with a strain-like vector is the
//! full tensor contraction. Stress-stress contractions use the weights (1,1,1,2,2,2).
//!
//! The constitutive code is written once over a generic stress space of dimension
//! `N`: `N = 6` is the full Voigt space used by solid elements, `N = 1` is the exact
//! uniaxial-stress reduction used by bar elements.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

pub type Voigt6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Vector<const N: usize> = SVector<f64, N>;
pub type Matrix<const N: usize> = SMatrix<f64, N, N>;

/// Stress-stress contraction weights.
pub const STRESS_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

/// Unit spherical direction (1,1,1,0,0,0).
pub fn spherical() -> Voigt6 {
    Voigt6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
}

pub fn deviatoric(s: &Voigt6) -> Voigt6 {
    let p = (s[0] + s[1] + s[2]) / 3.0;
    Voigt6::new(s[0] - p, s[1] - p, s[2] - p, s[3], s[4], s[5])
}

/// Full-tensor contraction of two stress-like vectors.
pub fn double_dot_stress(a: &Voigt6, b: &Voigt6) -> f64 {
    (0..6).map(|i| STRESS_WEIGHTS[i] * a[i] * b[i]).sum()
}

/// Full-tensor contraction of a stress-like and a strain-like vector.
pub fn double_dot_mixed(s: &Voigt6, e: &Voigt6) -> f64 {
    s.dot(e)
}

pub fn von_mises(s: &Voigt6) -> f64 {
    let d = deviatoric(s);
    (1.5 * double_dot_stress(&d, &d)).max(0.0).sqrt()
}

/// Effective magnitude √(2/3 ε:ε) of a strain-like vector.
pub fn effective_strain(e: &Voigt6) -> f64 {
    let normal = e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
    let shear = 0.5 * (e[3] * e[3] + e[4] * e[4] + e[5] * e[5]);
    (2.0 / 3.0 * (normal + shear)).sqrt()
}

/// Dimensionless elastic shape matrix 𝔠 (compliance divided by S).
pub fn compliance_shape(poisson: f64) -> Result<Mat6> {
    if !(poisson > -1.0 && poisson < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "Poisson ratio {poisson} outside (-1, 0.5)"
        )));
    }
    let mut c = Mat6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = if i == j { 1.0 } else { -poisson };
        }
        c[(i + 3, i + 3)] = 2.0 * (1.0 + poisson);
    }
    Ok(c)
}

pub fn compliance_matrix(s: f64, poisson: f64) -> Result<Mat6> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("compliance {s} must be positive")));
    }
    Ok(compliance_shape(poisson)? * s)
}

/// Dense inverse by elimination with partial pivoting.
pub fn invert<const N: usize>(m: &Matrix<N>) -> Result<Matrix<N>> {
    let norm1 = |a: &Matrix<N>| {
        (0..N)
            .map(|j| (0..N).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut a = *m;
    let mut inv = Matrix::<N>::identity();
    let scale = norm1(m);
    for col in 0..N {
        let (piv, pmax) = (col..N)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(pmax > f64::EPSILON * scale * N as f64) || !pmax.is_finite() {
            return Err(Error::Singular {
                condition: if pmax > 0.0 { scale / pmax } else { f64::INFINITY },
            });
        }
        a.swap_rows(piv, col);
        inv.swap_rows(piv, col);
        let d = a[(col, col)];
        for j in 0..N {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for r in 0..N {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for j in 0..N {
                        a[(r, j)] -= f * a[(col, j)];
                        inv[(r, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    Ok(inv)
}

pub fn invert6(m: &Mat6) -> Result<Mat6> {
    invert(m)
}

/// Kinematic description of a stress space: how stresses contract, which
/// direction is spherical, and how the deviatoric flow metric looks.
pub trait Space<const N: usize> {
    const NAME: &'static str;
    /// 𝔠 for the given Poisson ratio.
    fn shape(poisson: f64) -> Result<Matrix<N>>;
    /// Direction of free thermal expansion.
    fn thermal() -> Vector<N>;
    /// Symmetric A with σ_vM² = (3/2)·σᵀAσ; Aσ is the deviatoric stress in strain-like form.
    fn flow_metric() -> Matrix<N>;
    /// Effective magnitude of a strain-like vector.
    fn effective_strain(e: &Vector<N>) -> f64;
    /// Deviatoric part of a stress-like vector.
    fn deviator(s: &Vector<N>) -> Vector<N>;
    /// κ with 𝔠τ = κ·Aτ for every deviatoric τ.
    fn deviatoric_shape(poisson: f64) -> f64;
}

/// Marker for the stress space of dimension `N`.
pub struct Sp<const N: usize>;

impl Space<6> for Sp<6> {
    const NAME: &'static str = "solid";

    fn shape(poisson: f64) -> Result<Mat6> {
        compliance_shape(poisson)
    }

    fn thermal() -> Voigt6 {
        spherical()
    }

    fn flow_metric() -> Mat6 {
        let mut a = Mat6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
            }
            a[(i + 3, i + 3)] = 2.0;
        }
        a
    }

    fn effective_strain(e: &Voigt6) -> f64 {
        effective_strain(e)
    }

    fn deviator(s: &Voigt6) -> Voigt6 {
        deviatoric(s)
    }

    fn deviatoric_shape(poisson: f64) -> f64 {
        1.0 + poisson
    }
}

impl Space<1> for Sp<1> {
    const NAME: &'static str = "uniaxial";

    fn shape(poisson: f64) -> Result<Matrix<1>> {
        compliance_shape(poisson)?;
        Ok(Matrix::<1>::identity())
    }

    fn thermal() -> Vector<1> {
        Vector::<1>::new(1.0)
    }

    fn flow_metric() -> Matrix<1> {
        Matrix::<1>::new(2.0 / 3.0)
    }

    fn effective_strain(e: &Vector<1>) -> f64 {
        e[0].abs()
    }

    fn deviator(s: &Vector<1>) -> Vector<1> {
        *s
    }

    fn deviatoric_shape(_poisson: f64) -> f64 {
        1.5
    }
}

/// Expand a stress-like Voigt vector into a symmetric 3×3 tensor.
pub fn stress_tensor(s: &Voigt6) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2])
}

/// Expand a strain-like Voigt vector (engineering shear) into a symmetric 3×3 tensor.
pub fn strain_tensor(e: &Voigt6) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(
        e[0],
        0.5 * e[5],
        0.5 * e[4],
        0.5 * e[5],
        e[1],
        0.5 * e[3],
        0.5 * e[4],
        0.5 * e[3],
        e[2],
    )
}
