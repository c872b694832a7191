//! Phenomenological SMA constitutive ingredients: effective compliance,
//! hardening (energy of mixing), flow direction Λ, driving force Π and the
//! transformation function Φ with its partial derivatives.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voigt::{invert, Matrix, Space, Sp, Vector};

/// Endpoint clamp used inside hardening evaluation for the singular models.
pub const HARDENING_CLAMP: f64 = 1e-9;

/// Fraction of martensite formed at M_f (and left at A_f) for the exponential model,
/// which only approaches the endpoints asymptotically.
pub const EXPONENTIAL_COMPLETION: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformDirection {
    Forward,
    Reverse,
    None,
}

impl TransformDirection {
    /// +1 forward, −1 reverse, 0 none.
    pub fn sign(self) -> f64 {
        match self {
            TransformDirection::Forward => 1.0,
            TransformDirection::Reverse => -1.0,
            TransformDirection::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum HardeningModel {
    Quadratic,
    Cosine,
    Exponential,
    Smooth {
        #[serde(default = "one")]
        n1: f64,
        #[serde(default = "one")]
        n2: f64,
        #[serde(default = "one")]
        n3: f64,
        #[serde(default = "one")]
        n4: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_smoothing() -> f64 {
    1.0
}

impl HardeningModel {
    pub fn name(&self) -> &'static str {
        match self {
            HardeningModel::Quadratic => "quadratic",
            HardeningModel::Cosine => "cosine",
            HardeningModel::Exponential => "exponential",
            HardeningModel::Smooth { .. } => "smooth",
        }
    }
}

/// Input material constants (SI units). Defaults are NiTi50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    pub e_a: f64,
    pub e_m: f64,
    pub poisson: f64,
    pub alpha: f64,
    pub specific_heat: f64,
    pub m_s: f64,
    pub m_f: f64,
    pub a_s: f64,
    pub a_f: f64,
    pub h: f64,
    pub density: f64,
    pub t0: f64,
    pub rho_delta_s0: f64,
    /// Only the combination ρΔu₀ + μ₁ is identifiable; μ₁ absorbs whatever is set here.
    pub rho_delta_u0: f64,
    /// Effective stress (Pa) below which the forward flow direction is blended
    /// linearly to zero. Zero selects the unsmoothed direction field.
    #[serde(default = "default_smoothing")]
    pub flow_smoothing: f64,
    pub hardening: HardeningModel,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            e_a: 32.5e9,
            e_m: 23.0e9,
            poisson: 0.33,
            alpha: 22e-6,
            specific_heat: 400.0,
            m_s: 226.0,
            m_f: 194.0,
            a_s: 241.0,
            a_f: 290.0,
            h: 0.033,
            density: 6500.0,
            t0: 300.0,
            rho_delta_s0: -11.55e4,
            rho_delta_u0: 0.0,
            flow_smoothing: 1.0,
            hardening: HardeningModel::Quadratic,
        }
    }
}

impl MaterialParams {
    pub fn with_hardening(mut self, model: HardeningModel) -> Self {
        self.hardening = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        let all = [
            self.e_a,
            self.e_m,
            self.poisson,
            self.alpha,
            self.specific_heat,
            self.m_s,
            self.m_f,
            self.a_s,
            self.a_f,
            self.h,
            self.density,
            self.t0,
            self.rho_delta_s0,
            self.rho_delta_u0,
            self.flow_smoothing,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite material constant");
        }
        if !(self.e_a > 0.0 && self.e_m > 0.0) {
            return bad("moduli must be positive");
        }
        if !(self.h > 0.0) {
            return bad("H must be positive");
        }
        if !(self.rho_delta_s0 < 0.0) {
            return bad("rho_delta_s0 must be negative");
        }
        if !(self.m_f < self.m_s && self.m_s < self.a_s && self.a_s < self.a_f) {
            return bad("transformation temperatures must satisfy M_f < M_s < A_s < A_f");
        }
        if self.flow_smoothing < 0.0 {
            return bad("flow_smoothing must be nonnegative");
        }
        if let HardeningModel::Smooth { n1, n2, n3, n4 } = self.hardening {
            if [n1, n2, n3, n4].iter().any(|n| !(*n >= 1.0)) {
                return bad("smooth hardening exponents must be >= 1");
            }
        }
        crate::voigt::compliance_shape(self.poisson)?;
        Ok(())
    }
}

/// One branch of the hardening function without its linear μ terms:
/// g(ξ) = ∂f/∂ξ − (μ₁ ± μ₂), g'(ξ) = ∂²f/∂ξ², and G with G' = g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    /// G = ½bξ².
    Quadratic { b: f64 },
    /// G = ∫₀^ξ k[π − acos(2t−1)] dt with k = −ρΔs₀/a.
    Cosine { a: f64, k: f64 },
    /// Forward: G = (ρΔs₀/a)[(1−ξ)ln(1−ξ) + ξ].
    ExponentialForward { a: f64, k: f64 },
    /// Reverse: G = −(ρΔs₀/a)[ξ ln ξ − ξ].
    ExponentialReverse { a: f64, k: f64 },
    /// G = ½b[ξ + ξ^{p+1}/(p+1) + (1−ξ)^{q+1}/(q+1)].
    Smooth { b: f64, p: f64, q: f64 },
}

impl Branch {
    fn clamp(&self, xi: f64) -> f64 {
        match self {
            Branch::Quadratic { .. } => xi,
            _ => xi.clamp(HARDENING_CLAMP, 1.0 - HARDENING_CLAMP),
        }
    }

    /// (G, g, g') at ξ.
    pub fn eval(&self, xi: f64) -> (f64, f64, f64) {
        let x = self.clamp(xi);
        match *self {
            Branch::Quadratic { b } => (0.5 * b * x * x, b * x, b),
            Branch::Cosine { k, .. } => {
                // g and G stay finite at the endpoints; only g' needs the clamp
                let u = (2.0 * xi - 1.0).clamp(-1.0, 1.0);
                let ac = u.acos();
                let root = (1.0 - u * u).max(0.0).sqrt();
                let big = k * (PI * u.mul_add(0.5, 0.5) - 0.5 * (u * ac - root + PI));
                (big, k * (PI - ac), k / (x * (1.0 - x)).sqrt())
            }
            Branch::ExponentialForward { k, .. } => {
                let l = (1.0 - x).ln();
                (k * ((1.0 - x) * l + x), -k * l, k / (1.0 - x))
            }
            Branch::ExponentialReverse { k, .. } => {
                let l = x.ln();
                (-k * (x * l - x), -k * l, -k / x)
            }
            Branch::Smooth { b, p, q } => (
                0.5 * b * (x + x.powf(p + 1.0) / (p + 1.0) + (1.0 - x).powf(q + 1.0) / (q + 1.0)),
                0.5 * b * (1.0 + x.powf(p) - (1.0 - x).powf(q)),
                0.5 * b * (p * x.powf(p - 1.0) + q * (1.0 - x).powf(q - 1.0)),
            ),
        }
    }

    /// ∫₀¹ g dξ = G(1) − G(0), using the exact endpoint limits.
    fn integral(&self) -> f64 {
        match *self {
            Branch::Quadratic { b } => 0.5 * b,
            Branch::Cosine { k, .. } => 0.5 * PI * k,
            Branch::ExponentialForward { k, .. } => k,
            Branch::ExponentialReverse { k, .. } => k,
            Branch::Smooth { b, p, q } => 0.5 * b * (1.0 + 1.0 / (p + 1.0) - 1.0 / (q + 1.0)),
        }
    }

    /// Exact endpoint values g(0), g(1) where finite.
    fn g_at(&self, end: f64) -> f64 {
        match *self {
            Branch::Quadratic { b } => b * end,
            Branch::Cosine { k, .. } => k * PI * end,
            Branch::ExponentialForward { .. } | Branch::ExponentialReverse { .. } => 0.0,
            Branch::Smooth { b, .. } => b * end,
        }
    }
}

/// Calibrated hardening/threshold constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub forward: Branch,
    pub reverse: Branch,
    pub mu1: f64,
    pub mu2: f64,
    /// Transformation threshold Y.
    pub y: f64,
}

impl Calibration {
    /// Calibrates against the zero-stress phase diagram: the forward surface passes
    /// through (ξ=0, M_s) and (ξ=1, M_f), the reverse surface through (ξ=1, A_s) and
    /// (ξ=0, A_f). The remaining freedom in (μ₂, Y) is fixed by requiring the full
    /// forward and full reverse transformations to store the same mixing energy.
    pub fn new(p: &MaterialParams) -> Result<Self> {
        let ds = p.rho_delta_s0;
        let (forward, reverse) = match p.hardening {
            HardeningModel::Quadratic => (
                Branch::Quadratic { b: -ds * (p.m_s - p.m_f) },
                Branch::Quadratic { b: -ds * (p.a_f - p.a_s) },
            ),
            HardeningModel::Cosine => {
                let am = PI / (p.m_s - p.m_f);
                let aa = PI / (p.a_f - p.a_s);
                (Branch::Cosine { a: am, k: -ds / am }, Branch::Cosine { a: aa, k: -ds / aa })
            }
            HardeningModel::Exponential => {
                let rest = (1.0 - EXPONENTIAL_COMPLETION).ln();
                let am = rest / (p.m_s - p.m_f);
                let aa = rest / (p.a_s - p.a_f);
                (
                    Branch::ExponentialForward { a: am, k: ds / am },
                    Branch::ExponentialReverse { a: aa, k: ds / aa },
                )
            }
            HardeningModel::Smooth { n1, n2, n3, n4 } => (
                Branch::Smooth { b: -ds * (p.m_s - p.m_f), p: n1, q: n2 },
                Branch::Smooth { b: -ds * (p.a_f - p.a_s), p: n3, q: n4 },
            ),
        };
        let g_m0 = forward.g_at(0.0);
        let g_a1 = reverse.g_at(1.0);
        let combined = 0.5 * (ds * (p.m_s + p.a_s) - g_m0 - g_a1);
        let mu2 = 0.5 * (reverse.integral() - forward.integral());
        let y = 0.5 * (ds * (p.m_s - p.a_s) - g_m0 + g_a1) - mu2;
        if !(y > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "calibrated threshold Y = {y} is not positive"
            )));
        }
        Ok(Calibration { forward, reverse, mu1: combined - p.rho_delta_u0, mu2, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardeningValue {
    pub f: f64,
    pub df: f64,
    pub d2f: f64,
}

/// Transformation strain and martensite fraction at the last forward→reverse switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reversal<const N: usize> {
    pub eps_t: Vector<N>,
    pub xi: f64,
}

impl<const N: usize> Default for Reversal<N> {
    fn default() -> Self {
        Reversal { eps_t: Vector::<N>::zeros(), xi: 0.0 }
    }
}

/// Forward flow direction and its stress derivative.
#[derive(Debug, Clone, Copy)]
pub struct Flow<const N: usize> {
    pub lambda: Vector<N>,
    pub d_lambda: Matrix<N>,
    /// Potential whose stress gradient is Λ (equals σ:Λ above the smoothing stress).
    pub work: f64,
}

/// Φ and its partials at one state.
#[derive(Debug, Clone, Copy)]
pub struct PhiPartials<const N: usize> {
    pub phi: f64,
    pub d_sigma: Vector<N>,
    pub d_xi: f64,
    pub d_t: f64,
    pub lambda: Vector<N>,
    pub d_lambda: Matrix<N>,
    pub pi: f64,
}

/// Material bound to a stress space, with calibration and precomputed matrices.
#[derive(Debug, Clone)]
pub struct Material<const N: usize> {
    pub params: MaterialParams,
    pub cal: Calibration,
    pub shape: Matrix<N>,
    pub shape_inv: Matrix<N>,
    pub thermal: Vector<N>,
    pub flow_metric: Matrix<N>,
    pub s_a: f64,
    pub s_m: f64,
    pub delta_s: f64,
}

impl<const N: usize> Material<N>
where
    Sp<N>: Space<N>,
{
    pub fn new(params: MaterialParams) -> Result<Self> {
        params.validate()?;
        let cal = Calibration::new(&params)?;
        let shape = <Sp<N> as Space<N>>::shape(params.poisson)?;
        let shape_inv = invert(&shape)?;
        let s_a = 1.0 / params.e_a;
        let s_m = 1.0 / params.e_m;
        Ok(Material {
            cal,
            shape,
            shape_inv,
            thermal: <Sp<N> as Space<N>>::thermal() * params.alpha,
            flow_metric: <Sp<N> as Space<N>>::flow_metric(),
            s_a,
            s_m,
            delta_s: s_m - s_a,
            params,
        })
    }

    pub fn y(&self) -> f64 {
        self.cal.y
    }

    pub fn effective_strain(&self, e: &Vector<N>) -> f64 {
        <Sp<N> as Space<N>>::effective_strain(e)
    }

    /// Evaluated on the deviator so a large mean stress does not cancel it away.
    pub fn von_mises(&self, s: &Vector<N>) -> f64 {
        let d = <Sp<N> as Space<N>>::deviator(s);
        (1.5 * d.dot(&(self.flow_metric * d))).max(0.0).sqrt()
    }

    /// Aσ computed from the deviator.
    fn metric_stress(&self, s: &Vector<N>) -> Vector<N> {
        self.flow_metric * <Sp<N> as Space<N>>::deviator(s)
    }

    /// (S, ΔS) at ξ.
    pub fn effective_properties(&self, xi: f64) -> Result<(f64, f64)> {
        check_fraction(xi)?;
        Ok((self.s_a + xi * self.delta_s, self.delta_s))
    }

    /// Compliance 𝐒 = S·𝔠.
    pub fn compliance(&self, s: f64) -> Matrix<N> {
        self.shape * s
    }

    pub fn stiffness(&self, s: f64) -> Matrix<N> {
        self.shape_inv / s
    }

    /// Thermal strain α(T − T₀).
    pub fn thermal_strain(&self, t: f64) -> Vector<N> {
        self.thermal * (t - self.params.t0)
    }

    /// Stress from the elastic relation σ = 𝐒⁻¹(ε − α(T−T₀) − εᵗ).
    pub fn elastic_stress(&self, eps: &Vector<N>, t: f64, eps_t: &Vector<N>, s: f64) -> Vector<N> {
        self.shape_inv * (eps - self.thermal_strain(t) - eps_t) / s
    }

    pub fn hardening(&self, xi: f64, dir: TransformDirection) -> Result<HardeningValue> {
        check_fraction(xi)?;
        let (branch, mu) = match dir {
            TransformDirection::Forward => (&self.cal.forward, self.cal.mu1 + self.cal.mu2),
            TransformDirection::Reverse => (&self.cal.reverse, self.cal.mu1 - self.cal.mu2),
            TransformDirection::None => {
                return Err(Error::UndefinedDirection("hardening needs a transformation branch"))
            }
        };
        let (g_int, g, dg) = branch.eval(xi);
        Ok(HardeningValue { f: g_int + mu * xi, df: g + mu, d2f: dg })
    }

    /// Forward flow field with the linear blend below `flow_smoothing`.
    pub fn forward_flow(&self, sigma: &Vector<N>) -> Flow<N> {
        let h = self.params.h;
        let a_sigma = self.metric_stress(sigma);
        let vm = self.von_mises(sigma);
        let sc = self.params.flow_smoothing;
        if vm >= sc && vm > 0.0 {
            let lambda = a_sigma * (1.5 * h / vm);
            let d_lambda = (self.flow_metric - a_sigma * a_sigma.transpose() * (1.5 / (vm * vm)))
                * (1.5 * h / vm);
            Flow { lambda, d_lambda, work: h * vm }
        } else if sc > 0.0 {
            Flow {
                lambda: a_sigma * (1.5 * h / sc),
                d_lambda: self.flow_metric * (1.5 * h / sc),
                work: h * (vm * vm / (2.0 * sc) + 0.5 * sc),
            }
        } else {
            Flow { lambda: Vector::<N>::zeros(), d_lambda: Matrix::<N>::zeros(), work: 0.0 }
        }
    }

    /// Reverse flow direction: recovers the transformation strain in proportion to ξ.
    pub fn reverse_flow(&self, rev: &Reversal<N>) -> Vector<N> {
        if rev.xi > 0.0 {
            rev.eps_t / rev.xi
        } else {
            Vector::<N>::zeros()
        }
    }

    /// Λ: (3/2)H σ_dev/σ_vM forward; εᵗ_r/ξ_r reverse.
    pub fn transformation_tensor(
        &self,
        sigma: &Vector<N>,
        rev: &Reversal<N>,
        dir: TransformDirection,
    ) -> Result<Vector<N>> {
        match dir {
            TransformDirection::Forward => {
                let vm = self.von_mises(sigma);
                if !(vm > 0.0) {
                    return Err(Error::UndefinedDirection("zero effective stress"));
                }
                Ok(self.flow_metric * sigma * (1.5 * self.params.h / vm))
            }
            TransformDirection::Reverse => {
                if !(rev.xi > 0.0) || self.effective_strain(&rev.eps_t) == 0.0 {
                    return Err(Error::UndefinedDirection("zero reversal strain"));
                }
                Ok(self.reverse_flow(rev))
            }
            TransformDirection::None => Err(Error::UndefinedDirection("no transformation")),
        }
    }

    /// ∂Λ/∂σ of the forward direction; zero for reverse.
    pub fn d_lambda_d_sigma(&self, sigma: &Vector<N>, dir: TransformDirection) -> Result<Matrix<N>> {
        match dir {
            TransformDirection::Forward => {
                let vm = self.von_mises(sigma);
                if !(vm > 0.0) {
                    return Err(Error::UndefinedDirection("zero effective stress"));
                }
                let a_sigma = self.metric_stress(sigma);
                Ok((self.flow_metric - a_sigma * a_sigma.transpose() * (1.5 / (vm * vm)))
                    * (1.5 * self.params.h / vm))
            }
            TransformDirection::Reverse => Ok(Matrix::<N>::zeros()),
            TransformDirection::None => Err(Error::UndefinedDirection("no transformation")),
        }
    }

    fn flow_for(&self, sigma: &Vector<N>, dir: TransformDirection, rev: &Reversal<N>) -> Result<Flow<N>> {
        match dir {
            TransformDirection::Forward => Ok(self.forward_flow(sigma)),
            TransformDirection::Reverse => {
                let lambda = self.reverse_flow(rev);
                Ok(Flow { lambda, d_lambda: Matrix::<N>::zeros(), work: sigma.dot(&lambda) })
            }
            TransformDirection::None => Err(Error::UndefinedDirection("no transformation")),
        }
    }

    /// Π = σ:Λ + ½σ:ΔS𝔠:σ + ρΔs₀T − ρΔu₀ − ∂f/∂ξ.
    pub fn driving_force(
        &self,
        xi: f64,
        sigma: &Vector<N>,
        t: f64,
        dir: TransformDirection,
        rev: &Reversal<N>,
    ) -> Result<f64> {
        let flow = self.flow_for(sigma, dir, rev)?;
        let hard = self.hardening(xi, dir)?;
        Ok(self.pi_from(&flow, &hard, sigma, t))
    }

    fn pi_from(&self, flow: &Flow<N>, hard: &HardeningValue, sigma: &Vector<N>, t: f64) -> f64 {
        let p = &self.params;
        flow.work + 0.5 * self.delta_s * sigma.dot(&(self.shape * sigma)) + p.rho_delta_s0 * t
            - p.rho_delta_u0
            - hard.df
    }

    pub fn phi_and_partials(
        &self,
        xi: f64,
        sigma: &Vector<N>,
        t: f64,
        dir: TransformDirection,
        rev: &Reversal<N>,
    ) -> Result<PhiPartials<N>> {
        let flow = self.flow_for(sigma, dir, rev)?;
        let hard = self.hardening(xi, dir)?;
        let pi = self.pi_from(&flow, &hard, sigma, t);
        let sg = dir.sign();
        let grad = flow.lambda + self.shape * sigma * self.delta_s;
        Ok(PhiPartials {
            phi: sg * pi - self.cal.y,
            d_sigma: grad * sg,
            d_xi: -sg * hard.d2f,
            d_t: sg * self.params.rho_delta_s0,
            lambda: flow.lambda,
            d_lambda: flow.d_lambda,
            pi,
        })
    }
}

fn check_fraction(xi: f64) -> Result<()> {
    if !(-1e-12..=1.0 + 1e-12).contains(&xi) {
        return Err(Error::FractionOutOfRange(xi));
    }
    Ok(())
}
