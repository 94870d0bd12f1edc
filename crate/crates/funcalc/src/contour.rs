use crate::FuncError;
use std::f64::consts::PI;

/// Integration path along the boundary of a sector of half-angle `theta`,
/// truncated to radii `[r_min, r_max]` and discretized log-uniformly.
///
/// Both rays are traversed with the sector interior on the left, so the
/// quadrature winds positively around the spectrum it encloses.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    theta: f64,
    r_min: f64,
    r_max: f64,
    nodes_per_ray: usize,
}

impl Contour {
    pub fn new(
        theta: f64,
        r_min: f64,
        r_max: f64,
        nodes_per_ray: usize,
    ) -> Result<Self, FuncError> {
        if !(theta > 0.0 && theta < PI) {
            return Err(FuncError::InvalidContour(format!(
                "ray angle {theta} lies outside (0, pi)"
            )));
        }
        if !(r_min > 0.0 && r_min < r_max && r_max.is_finite()) {
            return Err(FuncError::InvalidContour(format!(
                "radial window [{r_min}, {r_max}] is not an ordered positive interval"
            )));
        }
        if nodes_per_ray < 8 {
            return Err(FuncError::InvalidContour(format!(
                "{nodes_per_ray} nodes per ray cannot resolve the path; need at least 8"
            )));
        }
        Ok(Contour { theta, r_min, r_max, nodes_per_ray })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn nodes_per_ray(&self) -> usize {
        self.nodes_per_ray
    }

    /// Same path with the node spacing halved; endpoints are preserved, so
    /// the refined rule reuses every coarse abscissa.
    pub fn refined(&self) -> Contour {
        Contour { nodes_per_ray: 2 * self.nodes_per_ray - 1, ..self.clone() }
    }

    /// Trapezoid rule in log-radius: pairs of (radius, dr-weight).
    /// The substitution r = e^s turns the half-line integral into one with
    /// exponentially decaying integrand at both ends, where the trapezoid
    /// rule converges geometrically in the node count.
    pub(crate) fn radial_rule(&self) -> Vec<(f64, f64)> {
        let n = self.nodes_per_ray;
        let h = (self.r_max / self.r_min).ln() / (n - 1) as f64;
        (0..n)
            .map(|j| {
                let r = self.r_min * (h * j as f64).exp();
                let w = if j == 0 || j == n - 1 { 0.5 * h * r } else { h * r };
                (r, w)
            })
            .collect()
    }
}
