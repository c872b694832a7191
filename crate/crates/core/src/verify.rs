//! Reference solutions and numerical checks: the uniaxial closed-form transformation
//! response, error metrics, finite-difference derivative checks and a dense solve of
//! the full local Newton system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::local::{local_residual, Increment, InternalState, LocalResidual};
use crate::material::{HardeningModel, MaterialParams, TransformDirection};
use crate::material::Material;
use crate::voigt::{Sp, Space, Vector};

pub mod suite;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticPoint {
    pub t: f64,
    pub sigma: f64,
    pub xi: f64,
    pub eps_t: f64,
}

/// Uniaxial (ξ, εᵗ) on the transformation surface of the quadratic model.
/// Forward: ξ = [|σ|H + ½ΔSσ² + ρΔs₀(T − M_s)] / ρbᴹ with ρbᴹ = −ρΔs₀(M_s − M_f).
/// Reverse: ξ = [|σ|H + ½ΔSσ² + ρΔs₀(T − A_f)] / ρbᴬ with ρbᴬ = −ρΔs₀(A_f − A_s).
pub fn analytic_1d(sigma: f64, t: f64, p: &MaterialParams, dir: TransformDirection) -> Result<(f64, f64)> {
    if p.hardening != HardeningModel::Quadratic {
        return Err(Error::InvalidParameter(format!(
            "closed-form response needs quadratic hardening, got {}",
            p.hardening.name()
        )));
    }
    let delta_s = 1.0 / p.e_m - 1.0 / p.e_a;
    let drive = sigma.abs() * p.h + 0.5 * delta_s * sigma * sigma;
    let xi = match dir {
        TransformDirection::Forward => {
            (drive + p.rho_delta_s0 * (t - p.m_s)) / (-p.rho_delta_s0 * (p.m_s - p.m_f))
        }
        TransformDirection::Reverse => {
            (drive + p.rho_delta_s0 * (t - p.a_f)) / (-p.rho_delta_s0 * (p.a_f - p.a_s))
        }
        TransformDirection::None => return Err(Error::UndefinedDirection("closed-form response")),
    }
    .clamp(0.0, 1.0);
    Ok((xi, p.h * sigma.signum() * xi * f64::from(u8::from(sigma != 0.0))))
}

/// (|ξ_ana − ξ_num|, |εᵗ_ana − εᵗ_num|).
pub fn error_metrics(numeric: &AnalyticPoint, analytic: &AnalyticPoint) -> (f64, f64) {
    ((analytic.xi - numeric.xi).abs(), (analytic.eps_t - numeric.eps_t).abs())
}

/// Step ladder (relative to the variable scale) used by `fd_check`.
pub const FD_LADDER: [f64; 5] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Central differences of `f` at `x` over a ladder of steps (each multiplied by the
/// per-variable `scale`); returns the best relative Frobenius error against `jac`.
pub fn fd_check(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    jac: &DMatrix<f64>,
    scale: &DVector<f64>,
    ladder: &[f64],
) -> f64 {
    let size = jac.norm().max(1e-300);
    let mut best = f64::INFINITY;
    for step in ladder {
        let mut fd = DMatrix::zeros(jac.nrows(), jac.ncols());
        for c in 0..x.len() {
            let h = step * scale[c];
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            fd.set_column(c, &((f(&xp) - f(&xm)) / (2.0 * h)));
        }
        let e = (fd - jac).norm() / size;
        if e.is_finite() {
            best = best.min(e);
        }
    }
    best
}

/// Local unknowns ordered (ξ, εᵗ, S, σ).
pub fn pack_state<const N: usize>(st: &InternalState<N>) -> DVector<f64> {
    let mut v = DVector::zeros(2 * N + 2);
    v[0] = st.xi;
    for i in 0..N {
        v[1 + i] = st.eps_t[i];
        v[N + 2 + i] = st.sigma[i];
    }
    v[N + 1] = st.s;
    v
}

pub fn unpack_state<const N: usize>(v: &DVector<f64>, like: &InternalState<N>) -> InternalState<N> {
    let mut st = *like;
    st.xi = v[0];
    for i in 0..N {
        st.eps_t[i] = v[1 + i];
        st.sigma[i] = v[N + 2 + i];
    }
    st.s = v[N + 1];
    st
}

pub fn pack_residual<const N: usize>(r: &LocalResidual<N>) -> DVector<f64> {
    let mut v = DVector::zeros(2 * N + 2);
    v[0] = r.h_phi;
    for i in 0..N {
        v[1 + i] = r.h_et[i];
        v[N + 2 + i] = r.h_sigma[i];
    }
    v[N + 1] = r.h_s;
    v
}

pub fn pack_increment<const N: usize>(d: &Increment<N>) -> DVector<f64> {
    let mut v = DVector::zeros(2 * N + 2);
    v[0] = d.xi;
    for i in 0..N {
        v[1 + i] = d.eps_t[i];
        v[N + 2 + i] = d.sigma[i];
    }
    v[N + 1] = d.s;
    v
}

/// Typical magnitudes of the unknowns (1, H, ΔS, E_A·H).
pub fn unknown_scales<const N: usize>(mat: &Material<N>) -> DVector<f64>
where
    Sp<N>: Space<N>,
{
    let mut v = DVector::zeros(2 * N + 2);
    v[0] = 1.0;
    for i in 0..N {
        v[1 + i] = mat.params.h;
        v[N + 2 + i] = mat.params.e_a * mat.params.h;
    }
    v[N + 1] = mat.delta_s.abs();
    v
}

/// Typical magnitudes of the residual rows (Y, H, ΔS, E_A·H).
pub fn residual_scales<const N: usize>(mat: &Material<N>) -> DVector<f64>
where
    Sp<N>: Space<N>,
{
    let mut v = unknown_scales(mat);
    v[0] = mat.y();
    v
}

/// ∂H/∂ν assembled entry by entry from the material partials.
pub fn dense_local_jacobian<const N: usize>(
    mat: &Material<N>,
    st: &InternalState<N>,
    st_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
) -> Result<DMatrix<f64>>
where
    Sp<N>: Space<N>,
{
    let d = mat.phi_and_partials(st.xi, &st.sigma, t, dir, &st.reversal)?;
    let n = 2 * N + 2;
    let mut j = DMatrix::zeros(n, n);
    let dxi = st.xi - st_n.xi;
    let stiff = mat.stiffness(st.s);
    let elastic = mat.elastic_stress(eps, t, &st.eps_t, st.s);
    j[(0, 0)] = d.d_xi;
    for i in 0..N {
        j[(0, N + 2 + i)] = d.d_sigma[i];
        j[(1 + i, 0)] = d.lambda[i];
        j[(1 + i, 1 + i)] = -1.0;
        for k in 0..N {
            j[(1 + i, N + 2 + k)] = d.d_lambda[(i, k)] * dxi;
            j[(N + 2 + i, 1 + k)] = -stiff[(i, k)];
        }
        j[(N + 2 + i, N + 1)] = -elastic[i] / st.s;
        j[(N + 2 + i, N + 2 + i)] = -1.0;
    }
    j[(N + 1, 0)] = mat.delta_s;
    j[(N + 1, N + 1)] = -1.0;
    Ok(j)
}

/// ∂H/∂ν by central differences of the residual.
pub fn fd_local_jacobian<const N: usize>(
    mat: &Material<N>,
    st: &InternalState<N>,
    st_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
) -> Result<DMatrix<f64>>
where
    Sp<N>: Space<N>,
{
    let n = 2 * N + 2;
    let x = pack_state(st);
    let sc = unknown_scales(mat);
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let h = 1e-6 * sc[c];
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let rp = pack_residual(&local_residual(mat, &unpack_state(&xp, st), st_n, eps, t, dir)?);
        let rm = pack_residual(&local_residual(mat, &unpack_state(&xm, st), st_n, eps, t, dir)?);
        j.set_column(c, &((rp - rm) / (2.0 * h)));
    }
    Ok(j)
}

#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub jacobian: DMatrix<f64>,
    /// −(∂H/∂ν)⁻¹H.
    pub delta: DVector<f64>,
    /// −(∂H/∂ν)⁻¹(∂H/∂ε)δε.
    pub delta_star: DVector<f64>,
    /// 2-norm condition number of the raw Jacobian.
    pub condition_raw: f64,
    /// Condition number after row/column equilibration.
    pub condition_scaled: f64,
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv.max() / sv.min()
}

/// Solves the full local Newton system densely (exact ∂H/∂ν, so it coincides with
/// the closed-form increment where H_σ = 0), with equilibration D_r·J·D_c before
/// the LU factorization. ∂H/∂ε is linear: the stress row is 𝐒⁻¹ (elastic-stress
/// residual), every other row is independent of ε.
pub fn dense_local_oracle<const N: usize>(
    mat: &Material<N>,
    st: &InternalState<N>,
    st_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
    d_eps: &Vector<N>,
) -> Result<DenseOracle>
where
    Sp<N>: Space<N>,
{
    if dir == TransformDirection::None {
        return Err(Error::UndefinedDirection("dense oracle"));
    }
    let j = dense_local_jacobian(mat, st, st_n, eps, t, dir)?;
    let h = pack_residual(&local_residual(mat, st, st_n, eps, t, dir)?);
    let mut dh = DVector::zeros(2 * N + 2);
    let ds = mat.stiffness(st.s) * d_eps;
    for i in 0..N {
        dh[N + 2 + i] = ds[i];
    }
    let rows = residual_scales(mat).map(|v| 1.0 / v);
    let cols = unknown_scales(mat);
    let scaled = DMatrix::from_diagonal(&rows) * &j * DMatrix::from_diagonal(&cols);
    let cond = condition(&scaled);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular { condition: cond });
    }
    let lu = scaled.clone().lu();
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        let y = lu
            .solve(&(-rhs.component_mul(&rows)))
            .ok_or(Error::Singular { condition: cond })?;
        Ok(y.component_mul(&cols))
    };
    Ok(DenseOracle {
        delta: solve(&h)?,
        delta_star: solve(&dh)?,
        condition_raw: condition(&j),
        condition_scaled: cond,
        jacobian: j,
    })
}

/// Least-squares slope of log(y) against log(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Ratio test on the last three residual norms above `floor`: the contraction
/// factor must shrink, r₃/r₂ < r₂/r₁, and the last step must contract.
pub fn superlinear_tail(history: &[f64], floor: f64) -> bool {
    let tail: Vec<f64> = history.iter().copied().filter(|r| *r > floor).collect();
    if tail.len() < 3 {
        return false;
    }
    let [r1, r2, r3] = [tail[tail.len() - 3], tail[tail.len() - 2], tail[tail.len() - 1]];
    r3 < r2 && r2 < r1 && r3 / r2 < r2 / r1
}
