use crate::FuncError;
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

type EvalFn = dyn Fn(Complex64) -> Complex64 + Send + Sync;

const HINF_SAMPLES_PER_RAY: usize = 4096;
const HINF_R_MIN: f64 = 1e-8;
const HINF_R_MAX: f64 = 1e8;

/// A holomorphic function on a sector, decaying at 0 and infinity, together
/// with the metadata the quadrature needs: power-law decay exponents at both
/// ends and the widest aperture on which the function stays bounded.
#[derive(Clone)]
pub struct FunctionSpec {
    name: String,
    psi_max: f64,
    decay_zero: f64,
    decay_inf: f64,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FunctionSpec({})", self.name)
    }
}

impl FunctionSpec {
    pub fn new(
        name: impl Into<String>,
        psi_max: f64,
        decay_zero: f64,
        decay_inf: f64,
        eval: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        FunctionSpec {
            name: name.into(),
            psi_max,
            decay_zero,
            decay_inf,
            eval: Arc::new(eval),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Aperture limit: |f| is bounded on every sector strictly narrower.
    pub fn psi_max(&self) -> f64 {
        self.psi_max
    }

    /// Decay exponents (at zero, at infinity): |f(z)| shrinks at least like
    /// |z|^d0 near 0 and |z|^-dinf towards infinity on admissible rays.
    pub fn decay(&self) -> (f64, f64) {
        (self.decay_zero, self.decay_inf)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        (self.eval)(z)
    }

    /// Pointwise square. Decay exponents double; the aperture is unchanged.
    pub fn squared(&self) -> FunctionSpec {
        let inner = self.eval.clone();
        FunctionSpec {
            name: format!("({})^2", self.name),
            psi_max: self.psi_max,
            decay_zero: 2.0 * self.decay_zero,
            decay_inf: 2.0 * self.decay_inf,
            eval: Arc::new(move |z| {
                let v = inner(z);
                v * v
            }),
        }
    }

    /// Sup of |f| along the two boundary rays of the sector of half-angle
    /// `psi`, sampled log-uniformly (4096 radii per ray). For functions in
    /// the decay class the boundary sup is the sector sup.
    pub fn hinf_norm(&self, psi: f64) -> f64 {
        let h = (HINF_R_MAX / HINF_R_MIN).ln() / (HINF_SAMPLES_PER_RAY - 1) as f64;
        let mut sup: f64 = 0.0;
        for j in 0..HINF_SAMPLES_PER_RAY {
            let r = HINF_R_MIN * (h * j as f64).exp();
            sup = sup.max(self.eval(Complex64::from_polar(r, psi)).norm());
            if psi != 0.0 {
                sup = sup.max(self.eval(Complex64::from_polar(r, -psi)).norm());
            }
        }
        sup
    }
}

/// phi(z) = z (1+z)^{-2}, the workhorse decay-class function.
pub fn phi() -> FunctionSpec {
    FunctionSpec::new("phi", PI, 1.0, 1.0, |z| {
        let w = 1.0 + z;
        z / (w * w)
    })
}

/// z^eps (1+z)^{-2 eps} on the principal branch, eps in (0, 1].
pub fn power(eps: f64) -> FunctionSpec {
    FunctionSpec::new(format!("power({eps})"), PI, eps, eps, move |z| {
        z.powf(eps) * (1.0 + z).powf(-2.0 * eps)
    })
}

/// zeta_n(z) = n/(n+z) - 1/(1+nz), a difference of resolvents at reciprocal
/// scales. Tends to 1 pointwise as n grows; identically zero at n = 1.
pub fn zeta(n: u32) -> FunctionSpec {
    let nf = n as f64;
    FunctionSpec::new(format!("zeta_n({n})"), PI, 1.0, 1.0, move |z| {
        nf / (nf + z) - 1.0 / (1.0 + nf * z)
    })
}

/// e^{-tz} - (1+tz)^{-1}: the semigroup kernel with its value at 0 removed
/// by a resolvent, which restores decay at the origin. Bounded only on
/// sectors strictly inside the right half-plane.
pub fn exp_decay(t: f64) -> FunctionSpec {
    FunctionSpec::new(format!("exp_decay({t})"), FRAC_PI_2, 2.0, 1.0, move |z| {
        (-t * z).exp() - 1.0 / (1.0 + t * z)
    })
}

/// Blaschke-type sample: (z-a)/(z+a) * z/(1+z)^2. The first factor has
/// modulus one on the imaginary axis; the second restores decay.
pub fn blaschke(a: f64) -> FunctionSpec {
    FunctionSpec::new(format!("blaschke({a})"), PI, 1.0, 1.0, move |z| {
        let w = 1.0 + z;
        (z - a) / (z + a) * z / (w * w)
    })
}

/// Lacunary alternating sum of dilated phi's spanning m quadruple scales:
/// sum_{k<m} (-1)^k phi(z / 4^k). Uniformly bounded in m on every sector,
/// but probes an operator across m well-separated frequency scales at once.
pub fn comb(m: u32) -> FunctionSpec {
    FunctionSpec::new(format!("comb({m})"), PI, 1.0, 1.0, move |z| {
        let mut acc = Complex64::default();
        let mut sign = 1.0;
        let mut scale = 1.0;
        for _ in 0..m {
            let y = z * (1.0 / scale);
            let w = 1.0 + y;
            acc += sign * y / (w * w);
            sign = -sign;
            scale *= 4.0;
        }
        acc
    })
}

fn parse_arg<'a>(key: &'a str, head: &str) -> Option<&'a str> {
    key.strip_prefix(head)?.strip_prefix('(')?.strip_suffix(')')
}

/// Resolves a string key (as used in scenario configs) to a function.
/// Known keys: `phi`, `zeta_n(k)`, `power(eps)`, `exp_decay(t)`,
/// `blaschke(a)`, `comb(m)`.
pub fn lookup(key: &str) -> Result<FunctionSpec, FuncError> {
    let bad = || FuncError::UnknownFunction { key: key.to_string() };
    if key == "phi" {
        return Ok(phi());
    }
    if let Some(arg) = parse_arg(key, "zeta_n") {
        let n: u32 = arg.trim().parse().map_err(|_| bad())?;
        return Ok(zeta(n));
    }
    if let Some(arg) = parse_arg(key, "power") {
        let eps: f64 = arg.trim().parse().map_err(|_| bad())?;
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(bad());
        }
        return Ok(power(eps));
    }
    if let Some(arg) = parse_arg(key, "exp_decay") {
        let t: f64 = arg.trim().parse().map_err(|_| bad())?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(bad());
        }
        return Ok(exp_decay(t));
    }
    if let Some(arg) = parse_arg(key, "blaschke") {
        let a: f64 = arg.trim().parse().map_err(|_| bad())?;
        if !(a > 0.0 && a.is_finite()) {
            return Err(bad());
        }
        return Ok(blaschke(a));
    }
    if let Some(arg) = parse_arg(key, "comb") {
        let m: u32 = arg.trim().parse().map_err(|_| bad())?;
        if m == 0 {
            return Err(bad());
        }
        return Ok(comb(m));
    }
    Err(bad())
}

/// A finite family of decay-class functions together with the sector
/// aperture their H-infinity norms are taken on.
#[derive(Clone, Debug)]
pub struct TestFunctionFamily {
    psi: f64,
    members: Vec<FunctionSpec>,
}

impl TestFunctionFamily {
    pub fn new(psi: f64) -> Result<Self, FuncError> {
        if !(psi > 0.0 && psi < PI) {
            return Err(FuncError::InvalidContour(format!(
                "family aperture {psi} lies outside (0, pi)"
            )));
        }
        Ok(TestFunctionFamily { psi, members: Vec::new() })
    }

    /// Adds a member; it must stay bounded on the family's sector.
    pub fn push(&mut self, f: FunctionSpec) -> Result<(), FuncError> {
        if self.psi >= f.psi_max() {
            return Err(FuncError::ApertureTooWide {
                name: f.name().to_string(),
                psi: self.psi,
            });
        }
        self.members.push(f);
        Ok(())
    }

    /// The default mix: phi, two fractional powers, two resolvent
    /// differences, two Blaschke-type samples.
    pub fn standard(psi: f64) -> Result<Self, FuncError> {
        let mut fam = TestFunctionFamily::new(psi)?;
        for f in [
            phi(),
            power(0.5),
            power(0.25),
            zeta(2),
            zeta(8),
            blaschke(1.0),
            blaschke(4.0),
        ] {
            fam.push(f)?;
        }
        Ok(fam)
    }

    /// Lacunary combs of the given depths; the stress family for operators
    /// whose interesting behavior spans many frequency scales.
    pub fn lacunary(psi: f64, depths: &[u32]) -> Result<Self, FuncError> {
        let mut fam = TestFunctionFamily::new(psi)?;
        for &m in depths {
            fam.push(comb(m))?;
        }
        Ok(fam)
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn members(&self) -> &[FunctionSpec] {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}
