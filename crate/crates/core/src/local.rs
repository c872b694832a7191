//! Gauss-point state update: elastic predictor, transformation detection, the local
//! residual H(ν) for ν = (ξ, εᵗ, S, σ), its closed-form Newton increments by Schur
//! elimination, and the consistent tangent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{Material, Reversal, TransformDirection};
use crate::voigt::{invert, Matrix, Space, Sp, Vector};

/// Default normalized local tolerance.
pub const LOCAL_TOLERANCE: f64 = 1e-6;
pub const LOCAL_MAX_ITERATIONS: usize = 50;
/// Step halvings tried by the local line search before taking the best candidate.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalState<const N: usize> {
    pub xi: f64,
    pub eps_t: Vector<N>,
    /// Scalar effective compliance S(ξ).
    pub s: f64,
    pub sigma: Vector<N>,
    pub reversal: Reversal<N>,
    pub direction: TransformDirection,
}

impl<const N: usize> InternalState<N>
where
    Sp<N>: Space<N>,
{
    /// Stress-free austenite.
    pub fn austenite(mat: &Material<N>) -> Self {
        InternalState {
            xi: 0.0,
            eps_t: Vector::<N>::zeros(),
            s: mat.s_a,
            sigma: Vector::<N>::zeros(),
            reversal: Reversal::default(),
            direction: TransformDirection::None,
        }
    }

    pub fn validate(&self, mat: &Material<N>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::FractionOutOfRange(self.xi));
        }
        let s = mat.s_a + self.xi * mat.delta_s;
        if (self.s - s).abs() > 1e-10 * s {
            return Err(Error::InvalidParameter(format!(
                "compliance {} inconsistent with fraction {}",
                self.s, self.xi
            )));
        }
        if mat.effective_strain(&self.eps_t) > mat.params.h * (1.0 + 1e-6) {
            return Err(Error::InvalidParameter("transformation strain exceeds H".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalResidual<const N: usize> {
    pub h_phi: f64,
    pub h_et: Vector<N>,
    pub h_s: f64,
    pub h_sigma: Vector<N>,
}

impl<const N: usize> LocalResidual<N>
where
    Sp<N>: Space<N>,
{
    pub fn zero() -> Self {
        LocalResidual {
            h_phi: 0.0,
            h_et: Vector::<N>::zeros(),
            h_s: 0.0,
            h_sigma: Vector::<N>::zeros(),
        }
    }

    /// Largest block magnitude after scaling by Y, H, ΔS and E_A respectively.
    pub fn norm(&self, mat: &Material<N>) -> f64 {
        let p = &mat.params;
        let b = [
            self.h_phi.abs() / mat.y(),
            self.h_et.norm() / p.h,
            self.h_s.abs() / mat.delta_s.abs(),
            self.h_sigma.norm() / p.e_a,
        ];
        b.into_iter().fold(0.0, f64::max)
    }

    /// Sum of squares of the scaled blocks; the Newton direction descends on it.
    pub fn merit(&self, mat: &Material<N>) -> f64 {
        let p = &mat.params;
        (self.h_phi / mat.y()).powi(2)
            + (self.h_et / p.h).norm_squared()
            + (self.h_s / mat.delta_s).powi(2)
            + (self.h_sigma / p.e_a).norm_squared()
    }
}

/// Increment of the local unknowns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment<const N: usize> {
    pub xi: f64,
    pub eps_t: Vector<N>,
    pub s: f64,
    pub sigma: Vector<N>,
}

impl<const N: usize> Increment<N>
where
    Sp<N>: Space<N>,
{
    pub fn zero() -> Self {
        Increment { xi: 0.0, eps_t: Vector::<N>::zeros(), s: 0.0, sigma: Vector::<N>::zeros() }
    }

    pub fn scaled(&self, f: f64) -> Self {
        Increment { xi: self.xi * f, eps_t: self.eps_t * f, s: self.s * f, sigma: self.sigma * f }
    }

    pub fn add(&self, o: &Self) -> Self {
        Increment {
            xi: self.xi + o.xi,
            eps_t: self.eps_t + o.eps_t,
            s: self.s + o.s,
            sigma: self.sigma + o.sigma,
        }
    }

    pub fn apply(&self, st: &InternalState<N>) -> InternalState<N> {
        InternalState {
            xi: st.xi + self.xi,
            eps_t: st.eps_t + self.eps_t,
            s: st.s + self.s,
            sigma: st.sigma + self.sigma,
            ..*st
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalScheme {
    NewtonRaphson,
    RadialReturn,
    ClosestPoint,
    CuttingPlane,
}

impl LocalScheme {
    pub const ALL: [LocalScheme; 4] = [
        LocalScheme::NewtonRaphson,
        LocalScheme::RadialReturn,
        LocalScheme::ClosestPoint,
        LocalScheme::CuttingPlane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LocalScheme::NewtonRaphson => "newton_raphson",
            LocalScheme::RadialReturn => "radial_return",
            LocalScheme::ClosestPoint => "closest_point",
            LocalScheme::CuttingPlane => "cutting_plane",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Trial<const N: usize> {
    pub sigma: Vector<N>,
    pub phi_fwd: f64,
    pub phi_rev: f64,
}

/// Reversal record a reverse step starting from `state_n` would use.
pub fn reversal_for<const N: usize>(state_n: &InternalState<N>) -> Reversal<N> {
    if state_n.direction == TransformDirection::Reverse {
        state_n.reversal
    } else {
        Reversal { eps_t: state_n.eps_t, xi: state_n.xi }
    }
}

pub fn trial_elastic<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
) -> Result<Trial<N>>
where
    Sp<N>: Space<N>,
{
    let sigma = mat.elastic_stress(eps, t, &state_n.eps_t, state_n.s);
    let rev = reversal_for(state_n);
    let phi_fwd = mat.phi_and_partials(state_n.xi, &sigma, t, TransformDirection::Forward, &rev)?.phi;
    let phi_rev = mat.phi_and_partials(state_n.xi, &sigma, t, TransformDirection::Reverse, &rev)?.phi;
    Ok(Trial { sigma, phi_fwd, phi_rev })
}

pub fn detect_direction(phi_fwd: f64, phi_rev: f64, xi_n: f64) -> TransformDirection {
    if phi_fwd > 0.0 && xi_n < 1.0 {
        TransformDirection::Forward
    } else if phi_rev > 0.0 && xi_n > 0.0 {
        TransformDirection::Reverse
    } else {
        TransformDirection::None
    }
}

/// State with internal variables frozen at `state_n` and the given stress.
pub fn frozen_state<const N: usize>(
    state_n: &InternalState<N>,
    sigma: Vector<N>,
    dir: TransformDirection,
) -> InternalState<N> {
    let reversal = match dir {
        TransformDirection::Reverse => reversal_for(state_n),
        _ => state_n.reversal,
    };
    InternalState { sigma, reversal, direction: dir, ..*state_n }
}

fn flow_direction<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    dir: TransformDirection,
) -> Vector<N>
where
    Sp<N>: Space<N>,
{
    match dir {
        TransformDirection::Reverse => mat.reverse_flow(&state.reversal),
        _ => mat.forward_flow(&state.sigma).lambda,
    }
}

pub fn local_residual<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
) -> Result<LocalResidual<N>>
where
    Sp<N>: Space<N>,
{
    let d = mat.phi_and_partials(state.xi, &state.sigma, t, dir, &state.reversal)?;
    let dxi = state.xi - state_n.xi;
    Ok(LocalResidual {
        h_phi: d.phi,
        h_et: state_n.eps_t + d.lambda * dxi - state.eps_t,
        h_s: state_n.s + mat.delta_s * dxi - state.s,
        h_sigma: mat.elastic_stress(eps, t, &state.eps_t, state.s) - state.sigma,
    })
}

/// Linearization of H about one iterate.
struct Lin<const N: usize> {
    /// +1 forward, −1 reverse.
    sign: f64,
    /// ∂Φ/∂σ.
    a: Vector<N>,
    /// ∂Φ/∂ξ.
    q: f64,
    lambda: Vector<N>,
    compliance: Matrix<N>,
    zeta_inv: Matrix<N>,
    /// 𝔠σ, which equals 𝐒·σ/S.
    c_sigma: Vector<N>,
}

fn linearize<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
    dir: TransformDirection,
) -> Result<Lin<N>>
where
    Sp<N>: Space<N>,
{
    if dir == TransformDirection::None {
        return Err(Error::UndefinedDirection("linearization needs a transformation branch"));
    }
    // ∂Φ/∂σ and ∂Φ/∂ξ do not depend on temperature
    let d = mat.phi_and_partials(state.xi, &state.sigma, mat.params.t0, dir, &state.reversal)?;
    let g = d.d_lambda * (state.xi - state_n.xi);
    let compliance = mat.compliance(state.s);
    let zeta_inv = invert(&(compliance + g))?;
    Ok(Lin {
        sign: dir.sign(),
        a: d.d_sigma,
        q: d.d_xi,
        lambda: d.lambda,
        compliance,
        zeta_inv,
        c_sigma: mat.shape * state.sigma,
    })
}

fn nonzero(d: f64) -> Result<f64> {
    if d == 0.0 || !d.is_finite() {
        Err(Error::ZeroDenominator)
    } else {
        Ok(d)
    }
}

impl<const N: usize> Lin<N>
where
    Sp<N>: Space<N>,
{
    /// Full Newton increment −J⁻¹H, with J in the block form
    ///   [ q   0   0   aᵀ ]
    ///   [ Λ  −I   0   G  ]
    ///   [ ΔS  0  −1   0  ]
    ///   [ 0  −𝐒⁻¹ −σ/S −I ]
    fn newton(&self, res: &LocalResidual<N>, delta_s: f64) -> Result<Increment<N>> {
        let zi = &self.zeta_inv;
        let zi_a = zi * self.a;
        let d = nonzero(self.sign * self.a.dot(&zi_a) - self.q)?;
        // Ψ = H_σ − (σ/S)H_S and 𝐒Ψ = 𝐒H_σ − 𝔠σ H_S
        let s_psi = self.compliance * res.h_sigma - self.c_sigma * res.h_s;
        let xi_star = (res.h_phi - zi_a.dot(&res.h_et)) / d;
        let theta = zi_a.dot(&s_psi) / d;
        let dxi = xi_star + theta;
        let dsigma = zi * (s_psi - res.h_et - self.a * (self.sign * dxi));
        let deps_t = s_psi - self.c_sigma * (delta_s * dxi) - self.compliance * dsigma;
        Ok(Increment { xi: dxi, eps_t: deps_t, s: delta_s * dxi + res.h_s, sigma: dsigma })
    }

    /// 𝔏 = ζ⁻¹ − ζ⁻¹a ⊗ ζ⁻¹a / (a:ζ⁻¹:a ∓ ∂ξΦ).
    fn tangent(&self) -> Result<Matrix<N>> {
        let zi_a = self.zeta_inv * self.a;
        let den = nonzero(self.a.dot(&zi_a) - self.sign * self.q)?;
        Ok(self.zeta_inv - zi_a * zi_a.transpose() / den)
    }
}

/// Stress after changing (εᵗ, S) with the total strain held fixed, using
/// ε − α(T−T₀) = 𝐒(σ + H_σ) + εᵗ at the current iterate.
fn stress_at_fixed_strain<const N: usize>(
    mat: &Material<N>,
    st: &InternalState<N>,
    res: &LocalResidual<N>,
    eps_t_new: &Vector<N>,
    s_new: f64,
) -> Vector<N>
where
    Sp<N>: Space<N>,
{
    (st.sigma + res.h_sigma) * (st.s / s_new) - mat.shape_inv * (eps_t_new - st.eps_t) / s_new
}

/// Increment for one local iteration. The reduced schemes return the update that
/// results after their eliminated equations are enforced exactly.
pub fn delta_nu<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
    res: &LocalResidual<N>,
    dir: TransformDirection,
    scheme: LocalScheme,
) -> Result<Increment<N>>
where
    Sp<N>: Space<N>,
{
    let lin = linearize(mat, state, state_n, dir)?;
    let ds = mat.delta_s;
    match scheme {
        LocalScheme::NewtonRaphson => lin.newton(res, ds),
        LocalScheme::RadialReturn => {
            let mut reduced = *res;
            reduced.h_sigma = Vector::<N>::zeros();
            let inc = lin.newton(&reduced, ds)?;
            let s_new = state.s + inc.s;
            let sigma = stress_at_fixed_strain(mat, state, res, &(state.eps_t + inc.eps_t), s_new);
            Ok(Increment { sigma: sigma - state.sigma, ..inc })
        }
        LocalScheme::ClosestPoint => {
            let mut reduced = *res;
            reduced.h_sigma = Vector::<N>::zeros();
            reduced.h_s = 0.0;
            let inc = lin.newton(&reduced, ds)?;
            let s_new = state_n.s + ds * (state.xi + inc.xi - state_n.xi);
            let sigma = stress_at_fixed_strain(mat, state, res, &(state.eps_t + inc.eps_t), s_new);
            Ok(Increment { xi: inc.xi, eps_t: inc.eps_t, s: s_new - state.s, sigma: sigma - state.sigma })
        }
        LocalScheme::CuttingPlane => {
            let s_inv_a = mat.stiffness(state.s) * lin.a;
            let dxi = res.h_phi / nonzero(lin.sign * lin.a.dot(&s_inv_a) - lin.q)?;
            let xi = state.xi + dxi;
            let s_new = state_n.s + ds * (xi - state_n.xi);
            let eps_t = state_n.eps_t + lin.lambda * (xi - state_n.xi);
            let sigma = stress_at_fixed_strain(mat, state, res, &eps_t, s_new);
            Ok(Increment {
                xi: dxi,
                eps_t: eps_t - state.eps_t,
                s: s_new - state.s,
                sigma: sigma - state.sigma,
            })
        }
    }
}

/// Response of the local unknowns to a strain increment δε = B·δu at fixed residual:
/// −(∂H/∂ν)⁻¹(∂H/∂ε)δε. Its stress part is 𝔏δε.
pub fn delta_nu_star<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
    d_eps: &Vector<N>,
    dir: TransformDirection,
) -> Result<Increment<N>>
where
    Sp<N>: Space<N>,
{
    let lin = linearize(mat, state, state_n, dir)?;
    let res = LocalResidual {
        h_sigma: mat.stiffness(state.s) * d_eps,
        ..LocalResidual::zero()
    };
    lin.newton(&res, mat.delta_s)
}

pub fn consistent_tangent<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
    dir: TransformDirection,
) -> Result<Matrix<N>>
where
    Sp<N>: Space<N>,
{
    match dir {
        TransformDirection::None => Ok(mat.stiffness(state.s)),
        _ => linearize(mat, state, state_n, dir)?.tangent(),
    }
}

/// Tangent dσ/dε of a resolved state: 𝔏 while transforming, (𝐒 + ∂σΛ Δξ)⁻¹ after
/// forward saturation within the step, elastic otherwise.
pub fn state_tangent<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
) -> Result<Matrix<N>>
where
    Sp<N>: Space<N>,
{
    match state.direction {
        TransformDirection::None if state.xi > state_n.xi => {
            let g = mat.forward_flow(&state.sigma).d_lambda * (state.xi - state_n.xi);
            invert(&(mat.compliance(state.s) + g))
        }
        dir => consistent_tangent(mat, state, state_n, dir),
    }
}

/// Stress row of the coupling operator applied to H:
/// ζ⁻¹a H_Φ/Q′ + 𝔏H_εᵗ + 𝔏𝔠σ H_S − 𝔏𝐒H_σ with Q′ = a:ζ⁻¹:a ∓ ∂ξΦ.
/// It is the negative of the stress part of the Newton increment for H.
pub fn coupling_stress<const N: usize>(
    mat: &Material<N>,
    state: &InternalState<N>,
    state_n: &InternalState<N>,
    res: &LocalResidual<N>,
    dir: TransformDirection,
) -> Result<Vector<N>>
where
    Sp<N>: Space<N>,
{
    let lin = linearize(mat, state, state_n, dir)?;
    let zi_a = lin.zeta_inv * lin.a;
    let qp = nonzero(lin.a.dot(&zi_a) - lin.sign * lin.q)?;
    let l = lin.tangent()?;
    Ok(zi_a * (res.h_phi / qp) + l * (res.h_et + lin.c_sigma * res.h_s - lin.compliance * res.h_sigma))
}

/// Completes the step with ξ pinned at the physical bound of `dir` (1 forward,
/// 0 reverse) and the stress elastic.
pub fn saturate<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
) -> Result<InternalState<N>>
where
    Sp<N>: Space<N>,
{
    let xi = match dir {
        TransformDirection::Forward => 1.0,
        TransformDirection::Reverse => 0.0,
        TransformDirection::None => return Err(Error::UndefinedDirection("saturation")),
    };
    let st = state_at_fraction(mat, state_n, eps, t, dir, xi)?;
    Ok(InternalState { direction: TransformDirection::None, ..st })
}

/// State with ξ prescribed and every other local equation except Φ = 0 satisfied.
pub fn state_at_fraction<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
    xi: f64,
) -> Result<InternalState<N>>
where
    Sp<N>: Space<N>,
{
    let rev = match dir {
        TransformDirection::Reverse => reversal_for(state_n),
        _ => state_n.reversal,
    };
    let s = state_n.s + mat.delta_s * (xi - state_n.xi);
    let dxi = xi - state_n.xi;
    let rhs = eps - mat.thermal_strain(t) - state_n.eps_t;
    let (sigma, lambda) = match dir {
        TransformDirection::Reverse => {
            let lambda = mat.reverse_flow(&rev);
            (mat.stiffness(s) * (rhs - lambda * dxi), lambda)
        }
        TransformDirection::Forward => {
            let sigma = forward_stress(mat, s, dxi, &rhs);
            (sigma, mat.forward_flow(&sigma).lambda)
        }
        TransformDirection::None => return Err(Error::UndefinedDirection("prescribed fraction")),
    };
    Ok(InternalState { xi, eps_t: state_n.eps_t + lambda * dxi, s, sigma, reversal: rev, direction: dir })
}

/// Solves S𝔠σ + Λ(σ)Δξ = r for Δξ ≥ 0. Since 𝔠 = κA on deviators, the solution is
/// the elastic stress 𝐒⁻¹r with its deviator shrunk by a scalar factor, and the
/// effective stress v obeys v + β·w′(v) = v_e with β = 3HΔξ/(2κS).
fn forward_stress<const N: usize>(mat: &Material<N>, s: f64, dxi: f64, rhs: &Vector<N>) -> Vector<N>
where
    Sp<N>: Space<N>,
{
    let elastic = mat.stiffness(s) * rhs;
    let v_e = mat.von_mises(&elastic);
    if dxi <= 0.0 || v_e == 0.0 {
        return elastic;
    }
    let kappa = <Sp<N> as Space<N>>::deviatoric_shape(mat.params.poisson);
    let beta = 1.5 * mat.params.h * dxi / (kappa * s);
    let sc = mat.params.flow_smoothing;
    let v = if v_e - beta >= sc {
        v_e - beta
    } else if sc > 0.0 {
        v_e / (1.0 + beta / sc)
    } else {
        0.0
    };
    elastic - <Sp<N> as Space<N>>::deviator(&elastic) * (1.0 - v / v_e)
}

/// Nested solve used when the selected scheme fails: for each trial ξ the stress
/// problem is solved exactly, leaving the scalar Φ(ξ) = 0, which is monotone in ξ and
/// bracketed by the admissible range. Returns the state and the number of Φ
/// evaluations.
pub fn resolve_by_fraction<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
    tolerance: f64,
) -> Result<(InternalState<N>, usize)>
where
    Sp<N>: Space<N>,
{
    let (mut lo, mut hi) = match dir {
        TransformDirection::Forward => (state_n.xi, 1.0),
        TransformDirection::Reverse => (0.0, state_n.xi),
        TransformDirection::None => return Err(Error::UndefinedDirection("fraction solve")),
    };
    let sg = dir.sign();
    let phi_at = |st: &InternalState<N>| -> Result<f64> {
        Ok(mat.phi_and_partials(st.xi, &st.sigma, t, dir, &st.reversal)?.phi)
    };
    let far = if sg > 0.0 { hi } else { lo };
    let sat = state_at_fraction(mat, state_n, eps, t, dir, far)?;
    let mut evals = 1;
    if phi_at(&sat)? >= 0.0 {
        return Ok((InternalState { direction: TransformDirection::None, ..sat }, evals));
    }
    let mut xi = 0.5 * (lo + hi);
    for _ in 0..200 {
        let st = state_at_fraction(mat, state_n, eps, t, dir, xi)?;
        evals += 1;
        let d = mat.phi_and_partials(st.xi, &st.sigma, t, dir, &st.reversal)?;
        if d.phi.abs() < 1e-3 * tolerance * mat.y() || hi - lo < 1e-15 {
            return Ok((st, evals));
        }
        // Φ > 0 means the transformation has not gone far enough
        if (d.phi > 0.0) == (sg > 0.0) {
            lo = xi;
        } else {
            hi = xi;
        }
        // dΦ/dξ along the constrained path is −(±a·ζ⁻¹·a − ∂ξΦ)
        let g = d.d_lambda * (st.xi - state_n.xi);
        let zi_a = invert(&(mat.compliance(st.s) + g))? * d.d_sigma;
        let slope = -(sg * d.d_sigma.dot(&zi_a) - d.d_xi);
        let newton = xi - d.phi / slope;
        xi = if slope.is_finite() && slope != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::LocalDivergence { iterations: evals, residual: f64::NAN })
}

/// Divergence control of the local iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Safeguard {
    /// Halve the increment once the residual norm has grown on two consecutive
    /// iterations.
    Backtrack,
    /// Backtracking line search on the merit every iteration, then the
    /// fraction-bracketing fallback if the scheme still fails.
    #[default]
    LineSearch,
}

#[derive(Debug, Clone, Copy)]
pub struct LocalOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub safeguard: Safeguard,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            tolerance: LOCAL_TOLERANCE,
            max_iterations: LOCAL_MAX_ITERATIONS,
            safeguard: Safeguard::default(),
        }
    }
}

/// Enforces the equations a reduced scheme eliminates, after an increment that may
/// have been scaled. `prev` is the iterate the increment was computed at.
pub fn enforce_eliminated<const N: usize>(
    mat: &Material<N>,
    st: &mut InternalState<N>,
    prev: &InternalState<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    scheme: LocalScheme,
) where
    Sp<N>: Space<N>,
{
    // S(ξ) is linear and holds exactly after any Newton step; re-imposing it removes roundoff
    st.s = state_n.s + mat.delta_s * (st.xi - state_n.xi);
    if scheme == LocalScheme::CuttingPlane {
        st.eps_t = state_n.eps_t + flow_direction(mat, prev, st.direction) * (st.xi - state_n.xi);
    }
    if scheme != LocalScheme::NewtonRaphson {
        st.sigma = mat.elastic_stress(eps, t, &st.eps_t, st.s);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LocalOutcome<const N: usize> {
    pub state: InternalState<N>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves the local problem at fixed (ε, T) from the converged state of the previous
/// step.
pub fn resolve_local<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    scheme: LocalScheme,
) -> Result<(InternalState<N>, usize)>
where
    Sp<N>: Space<N>,
{
    let out = resolve_local_with(mat, state_n, eps, t, scheme, &LocalOptions::default())?;
    Ok((out.state, out.iterations))
}

pub fn resolve_local_with<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    scheme: LocalScheme,
    opts: &LocalOptions,
) -> Result<LocalOutcome<N>>
where
    Sp<N>: Space<N>,
{
    let trial = trial_elastic(mat, state_n, eps, t)?;
    let dir = trial_direction(&trial, state_n);
    let first = resolve_in_direction(mat, state_n, eps, t, &trial, dir, scheme, opts)?;
    if !both_violated(&trial, state_n) {
        return Ok(first);
    }
    // the solution must leave the other surface inactive
    let other = match dir {
        TransformDirection::Forward => TransformDirection::Reverse,
        _ => TransformDirection::Forward,
    };
    let violates = |st: &InternalState<N>| -> Result<bool> {
        let phi = mat.phi_and_partials(st.xi, &st.sigma, t, other, &reversal_for(state_n))?.phi;
        Ok(phi > 1e-9 * mat.y())
    };
    if !violates(&first.state)? {
        return Ok(first);
    }
    match resolve_in_direction(mat, state_n, eps, t, &trial, other, scheme, opts) {
        Ok(second) => {
            let iterations = first.iterations + second.iterations;
            let other_side = match other {
                TransformDirection::Forward => TransformDirection::Reverse,
                _ => TransformDirection::Forward,
            };
            let phi = mat.phi_and_partials(second.state.xi, &second.state.sigma, t, other_side, &reversal_for(state_n))?.phi;
            if phi > 1e-9 * mat.y() {
                return Ok(LocalOutcome { iterations, ..first });
            }
            Ok(LocalOutcome { iterations, ..second })
        }
        Err(_) => Ok(first),
    }
}

fn both_violated<const N: usize>(trial: &Trial<N>, state_n: &InternalState<N>) -> bool {
    trial.phi_fwd > 0.0 && trial.phi_rev > 0.0 && state_n.xi > 0.0 && state_n.xi < 1.0
}

/// Direction of a trial state. Both surfaces can be violated at once, because the
/// forward flow follows the current stress while the reverse flow is the stored
/// reversal direction; a reverse transformation in progress is then continued.
pub fn trial_direction<const N: usize>(trial: &Trial<N>, state_n: &InternalState<N>) -> TransformDirection {
    if both_violated(trial, state_n) && state_n.direction == TransformDirection::Reverse {
        return TransformDirection::Reverse;
    }
    detect_direction(trial.phi_fwd, trial.phi_rev, state_n.xi)
}

#[allow(clippy::too_many_arguments)]
fn resolve_in_direction<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    trial: &Trial<N>,
    dir: TransformDirection,
    scheme: LocalScheme,
    opts: &LocalOptions,
) -> Result<LocalOutcome<N>>
where
    Sp<N>: Space<N>,
{
    let mut st = frozen_state(state_n, trial.sigma, dir);
    if dir == TransformDirection::None {
        return Ok(LocalOutcome { state: st, iterations: 0, residual: 0.0 });
    }
    match iterate_local(mat, state_n, &mut st, eps, t, dir, scheme, opts, 0) {
        Err(Error::LocalDivergence { iterations, .. }) if opts.safeguard == Safeguard::LineSearch => {
            let (mut st, evals) = resolve_by_fraction(mat, state_n, eps, t, dir, opts.tolerance)?;
            if st.direction == TransformDirection::None {
                return Ok(LocalOutcome { state: st, iterations: iterations + evals, residual: 0.0 });
            }
            let out = iterate_local(mat, state_n, &mut st, eps, t, dir, scheme, opts, 0)?;
            Ok(LocalOutcome { iterations: iterations + evals + out.iterations, ..out })
        }
        other => other,
    }
}

/// Iterates the local update from `st` until converged, saturated or out of iterations.
#[allow(clippy::too_many_arguments)]
pub fn iterate_local<const N: usize>(
    mat: &Material<N>,
    state_n: &InternalState<N>,
    st: &mut InternalState<N>,
    eps: &Vector<N>,
    t: f64,
    dir: TransformDirection,
    scheme: LocalScheme,
    opts: &LocalOptions,
    max_steps: usize,
) -> Result<LocalOutcome<N>>
where
    Sp<N>: Space<N>,
{
    let max_steps = if max_steps == 0 { opts.max_iterations } else { max_steps };
    let (lo, hi) = match dir {
        TransformDirection::Forward => (state_n.xi, 1.0),
        _ => (0.0, state_n.xi),
    };
    let bound = if dir == TransformDirection::Forward { 1.0 } else { 0.0 };
    let mut res = local_residual(mat, st, state_n, eps, t, dir)?;
    let mut norm = res.norm(mat);
    let mut merit = res.merit(mat);
    let mut iterations = 0usize;
    let mut increases = 0usize;
    while iterations < max_steps {
        if norm < opts.tolerance {
            return Ok(LocalOutcome { state: *st, iterations, residual: norm });
        }
        let inc = delta_nu(mat, st, state_n, &res, dir, scheme)?;
        iterations += 1;
        let target = st.xi + inc.xi;
        let (mut alpha, hit) = if target > hi {
            ((hi - st.xi) / inc.xi, Some(hi))
        } else if target < lo {
            ((lo - st.xi) / inc.xi, Some(lo))
        } else {
            (1.0, None)
        };
        if opts.safeguard == Safeguard::Backtrack && increases >= 2 && hit.is_none() {
            alpha *= 0.5;
            increases = 0;
        }
        let halvings = if opts.safeguard == Safeguard::LineSearch { MAX_HALVINGS } else { 0 };
        let prev = *st;
        let mut best: Option<(f64, InternalState<N>, LocalResidual<N>)> = None;
        for halving in 0..=halvings {
            let mut cand = inc.scaled(alpha).apply(&prev);
            if halving == 0 {
                if let Some(b) = hit {
                    cand.xi = b;
                }
            }
            enforce_eliminated(mat, &mut cand, &prev, state_n, eps, t, scheme);
            if halving == 0 && hit == Some(bound) && bound != state_n.xi {
                let sat = saturate(mat, state_n, eps, t, dir)?;
                let phi = mat.phi_and_partials(sat.xi, &sat.sigma, t, dir, &sat.reversal)?.phi;
                if phi >= 0.0 {
                    return Ok(LocalOutcome { state: sat, iterations, residual: 0.0 });
                }
                cand = InternalState { direction: dir, ..sat };
            }
            let r = local_residual(mat, &cand, state_n, eps, t, dir)?;
            let m = r.merit(mat);
            let better = best.as_ref().map_or(true, |b| m < b.0);
            if better {
                best = Some((m, cand, r));
            }
            if m < merit {
                break;
            }
            alpha *= 0.5;
        }
        let (m, cand, r) = best.expect("line search evaluates at least one candidate");
        *st = cand;
        res = r;
        merit = m;
        let previous = norm;
        norm = res.norm(mat);
        increases = if norm > previous { increases + 1 } else { 0 };
    }
    if norm < opts.tolerance {
        return Ok(LocalOutcome { state: *st, iterations, residual: norm });
    }
    Err(Error::LocalDivergence { iterations, residual: norm })
}

#[cfg(test)]
mod tests;
