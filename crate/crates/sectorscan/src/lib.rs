//! Sampling diagnostics for sectorial operators: resolvent-norm sweeps over
//! rays, angle estimation from radius stability, Rademacher bound estimates,
//! and the dyadic ray criterion for interaction factors.
//!
//! Everything here is sampling over finite lattices: sweep suprema are over
//! the sampled cells, never over the continuum, and Rademacher estimates are
//! certified lower bounds (exact only where a closed form exists).

use gridspace::FreqGrid;
use num_complex::Complex64;
use opcore::{operator_norm, resolvent, OpError, OperatorHandle};
use rayon::prelude::*;
use thiserror::Error;

mod rademacher;
pub use rademacher::{
    ray_dyadic_rbound, rbound, DyadicMeta, RBoundEstimate, RBoundMethodUsed, RBoundMode,
    DEFAULT_SEED,
};

#[derive(Debug, Error)]
pub enum SectorError {
    #[error("sector angle must lie in (0, pi), got {0}")]
    InvalidAngle(f64),
    #[error("angle estimation needs at least 8 rays and 3 decades of radii, got {rays} rays over {decades:.2} decades")]
    InsufficientCoverage { rays: usize, decades: f64 },
    #[error("no sampled ray is radius-stable")]
    Inconclusive,
    #[error("operator family is empty")]
    EmptyFamily,
    #[error("family member {index} does not act on the shared space tag")]
    FamilyTagMismatch { index: usize },
    #[error("M{j} not invertible at lambda = {lambda} (dyadic index {dyadic_k})")]
    NotInvertible { j: u8, lambda: Complex64, dyadic_k: i32 },
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Block(#[from] blockfact::BlockError),
    #[error(transparent)]
    Grid(#[from] gridspace::GridError),
}

/// Open sector around the positive reals: half-angle psi in (0, pi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    psi: f64,
}

impl Sector {
    pub fn new(psi: f64) -> Result<Self, SectorError> {
        if !(psi > 0.0 && psi < std::f64::consts::PI) {
            return Err(SectorError::InvalidAngle(psi));
        }
        Ok(Sector { psi })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z != Complex64::default() && z.arg().abs() < self.psi
    }

    /// Complement of the closed sector: nonzero points with |arg| > psi.
    pub fn complement_contains(&self, z: Complex64) -> bool {
        z != Complex64::default() && z.arg().abs() > self.psi
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub theta: f64,
    pub radius: f64,
    pub lambda: Complex64,
    /// ||lambda (lambda - T)^{-1}||; None marks a singular cell, which is
    /// data, never silently zero.
    pub norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ResolventSweep {
    pub rays: Vec<f64>,
    pub radii: Vec<f64>,
    /// Row-major over (ray, radius).
    pub cells: Vec<SweepCell>,
}

impl ResolventSweep {
    pub fn cell(&self, ray: usize, radius: usize) -> &SweepCell {
        &self.cells[ray * self.radii.len() + radius]
    }

    /// Largest finite value, with a flag for singular cells encountered.
    pub fn finite_sup(&self) -> (Option<f64>, bool) {
        let mut sup = None;
        let mut singular = false;
        for cell in &self.cells {
            match cell.norm {
                Some(v) => sup = Some(sup.map_or(v, |s: f64| s.max(v))),
                None => singular = true,
            }
        }
        (sup, singular)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,radius,re_lambda,im_lambda,norm,singular_flag\n");
        for cell in &self.cells {
            let (norm, flag) = match cell.norm {
                Some(v) => (format!("{v}"), 0),
                None => (String::new(), 1),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.theta, cell.radius, cell.lambda.re, cell.lambda.im, norm, flag
            ));
        }
        out
    }
}

/// Log-spaced radii, endpoints included.
pub fn log_radii(r_min: f64, r_max: f64, per_ray: usize) -> Vec<f64> {
    assert!(r_min > 0.0 && r_max >= r_min && per_ray >= 1);
    if per_ray == 1 {
        return vec![r_min];
    }
    let (a, b) = (r_min.ln(), r_max.ln());
    (0..per_ray)
        .map(|i| (a + (b - a) * i as f64 / (per_ray - 1) as f64).exp())
        .collect()
}

/// 16 rays between pi/2 and pi, endpoints included.
pub fn default_rays() -> Vec<f64> {
    let (a, b) = (std::f64::consts::FRAC_PI_2, std::f64::consts::PI);
    (0..16).map(|i| a + (b - a) * i as f64 / 15.0).collect()
}

/// 25 radii per ray covering [1e-3, 1e3] * scale.
pub fn default_radii(scale: f64) -> Vec<f64> {
    log_radii(1e-3 * scale, 1e3 * scale, 25)
}

/// Median singular value over the operator's proxy spectrum: per-mode symbol
/// blocks when available, otherwise the dense matrix. Used to center radius
/// sweeps; never zero.
pub fn spectrum_scale(op: &OperatorHandle, grid: FreqGrid) -> f64 {
    let mut values: Vec<f64> = Vec::new();
    if op.has_symbol() {
        for flat in grid.modes() {
            if let Some(block) = op.symbol_at(&grid.xi_at(flat)) {
                let sv = block.svd(false, false).singular_values;
                values.extend(sv.iter().cloned());
            }
        }
    } else if let Ok(mat) = opcore::dense_matrix(op) {
        values.extend(mat.svd(false, false).singular_values.iter().cloned());
    }
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return 1.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = values[values.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Tabulates ||lambda (lambda - T)^{-1}|| over lambda = r e^{i theta} for
/// the given rays and radii. Singular resolvents are recorded as singular
/// cells, not errors; structural failures (wrong shapes) still propagate.
pub fn sweep(
    op: &OperatorHandle,
    grid: FreqGrid,
    rays: &[f64],
    radii: &[f64],
) -> Result<ResolventSweep, SectorError> {
    let tag = op.in_tag.clone();
    let cells: Result<Vec<SweepCell>, SectorError> = (0..rays.len() * radii.len())
        .into_par_iter()
        .map(|idx| {
            let theta = rays[idx / radii.len()];
            let radius = radii[idx % radii.len()];
            let lambda = Complex64::from_polar(radius, theta);
            let norm = match resolvent(op, lambda, grid) {
                Ok(r) => {
                    let scaled = r.scaled(lambda);
                    Some(operator_norm(&scaled, grid, &tag, &tag)?.0)
                }
                Err(OpError::SingularResolvent { .. }) | Err(OpError::IllConditioned { .. }) => {
                    None
                }
                Err(e) => return Err(e.into()),
            };
            Ok(SweepCell { theta, radius, lambda, norm })
        })
        .collect();
    Ok(ResolventSweep { rays: rays.to_vec(), radii: radii.to_vec(), cells: cells? })
}

/// Per-ray stability record kept by `estimate_angle`.
#[derive(Debug, Clone)]
pub struct RayDiagnostic {
    pub theta: f64,
    /// |arg| of the ray direction, in [0, pi].
    pub angle: f64,
    /// Largest finite value; None when a singular cell sits on the ray.
    pub sup: Option<f64>,
    /// Growth across the innermost sampled decade (r -> 0 behavior).
    pub inner_ratio: Option<f64>,
    /// Growth across the outermost sampled decade (r -> infinity behavior).
    pub outer_ratio: Option<f64>,
    /// Ray supremum over the outermost-decade supremum: large values mean
    /// the ray peaked at an interior pole passage instead of settling.
    pub peak_ratio: Option<f64>,
    pub singular_cells: usize,
    pub stable: bool,
}

#[derive(Debug, Clone)]
pub struct AngleEstimate {
    pub omega_hat: f64,
    /// psi -> sup over sampled cells with |arg lambda| >= psi; None marks an
    /// unbounded (singular) region. Nonincreasing in psi.
    pub bound_at: Vec<(f64, Option<f64>)>,
    pub blowup_flags: Vec<RayDiagnostic>,
}

fn decade_sup(cells: &[&SweepCell], lo: f64, hi: f64) -> Option<f64> {
    let mut sup: Option<f64> = None;
    for cell in cells {
        if cell.radius > lo && cell.radius <= hi {
            match cell.norm {
                Some(v) => sup = Some(sup.map_or(v, |s| s.max(v))),
                None => return None,
            }
        }
    }
    sup
}

/// Estimates the sectoriality angle from a sweep: the smallest sampled
/// candidate psi = pi - theta such that every ray with |arg| >= psi is
/// radius-stable. A ray is stable when it has no singular cells and its
/// growth across the outermost sampled decade stays below
/// `stability_window`. The peak-over-plateau ratio is kept as a diagnostic:
/// on a truncated lattice nothing grows forever, so an interior pole
/// passage shows up as a peak, not as asymptotic growth. A bracketing
/// heuristic over the ray grid, not an infimum.
pub fn estimate_angle(
    sweep: &ResolventSweep,
    stability_window: f64,
) -> Result<AngleEstimate, SectorError> {
    let decades = if sweep.radii.is_empty() {
        0.0
    } else {
        let (lo, hi) = sweep
            .radii
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
        (hi / lo).log10()
    };
    if sweep.rays.len() < 8 || decades < 3.0 - 1e-9 {
        return Err(SectorError::InsufficientCoverage { rays: sweep.rays.len(), decades });
    }

    let r_max = sweep.radii.iter().cloned().fold(0.0f64, f64::max);
    let r_min = sweep.radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut flags = Vec::with_capacity(sweep.rays.len());
    for (i, &theta) in sweep.rays.iter().enumerate() {
        let cells: Vec<&SweepCell> =
            (0..sweep.radii.len()).map(|j| sweep.cell(i, j)).collect();
        let singular_cells = cells.iter().filter(|c| c.norm.is_none()).count();
        let sup = if singular_cells > 0 {
            None
        } else {
            cells.iter().filter_map(|c| c.norm).fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |s| s.max(v)))
            })
        };
        let outer = decade_sup(&cells, r_max / 10.0, r_max);
        let outer_prev = decade_sup(&cells, r_max / 100.0, r_max / 10.0);
        let outer_ratio = match (outer, outer_prev) {
            (Some(o), Some(p)) if p > 0.0 => Some(o / p),
            _ => None,
        };
        let inner = decade_sup(&cells, r_min * (1.0 - 1e-12), r_min * 10.0);
        let inner_next = decade_sup(&cells, r_min * 10.0, r_min * 100.0);
        let inner_ratio = match (inner, inner_next) {
            (Some(i0), Some(i1)) if i0 > 0.0 => Some(i1 / i0),
            _ => None,
        };
        let peak_ratio = match (sup, outer) {
            (Some(s), Some(o)) if o > 0.0 => Some(s / o),
            _ => None,
        };
        let stable = sup.is_some() && outer_ratio.map_or(false, |r| r <= stability_window);
        let angle = Complex64::from_polar(1.0, theta).arg().abs();
        flags.push(RayDiagnostic {
            theta,
            angle,
            sup,
            inner_ratio,
            outer_ratio,
            peak_ratio,
            singular_cells,
            stable,
        });
    }

    let mut angles: Vec<f64> = flags.iter().map(|f| f.angle).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // bound_at over the sampled angle grid: cells with |arg| >= psi.
    let mut bound_at = Vec::with_capacity(angles.len());
    for &psi in &angles {
        let mut sup: Option<f64> = Some(0.0);
        let mut any = false;
        for flag in &flags {
            if flag.angle >= psi - 1e-12 {
                any = true;
                sup = match (sup, flag.sup) {
                    (Some(s), Some(v)) => Some(s.max(v)),
                    _ => None,
                };
            }
        }
        bound_at.push((psi, if any { sup } else { Some(0.0) }));
    }

    // Candidates pi - theta, smallest first; accept when every ray at angle
    // >= candidate is stable (and there is at least one such ray).
    let mut candidates: Vec<f64> =
        flags.iter().map(|f| std::f64::consts::PI - f.angle).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut omega_hat = None;
    for &v in &candidates {
        let covered: Vec<&RayDiagnostic> =
            flags.iter().filter(|f| f.angle >= v - 1e-12).collect();
        if !covered.is_empty() && covered.iter().all(|f| f.stable) {
            omega_hat = Some(v.max(0.0));
            break;
        }
    }
    match omega_hat {
        Some(omega_hat) => Ok(AngleEstimate { omega_hat, bound_at, blowup_flags: flags }),
        None => Err(SectorError::Inconclusive),
    }
}

#[derive(Debug, Clone)]
pub struct SectorConstants {
    /// sup over sampled lambda outside the closed sector of ||T(lambda-T)^{-1}||.
    pub n_s: f64,
    /// Sampled location of the supremum.
    pub at: Complex64,
    /// Rademacher bound of the sampled resolvent family.
    pub n_r: RBoundEstimate,
}

/// Samples ||T(lambda - T)^{-1}|| over the complement of the closed sector
/// of half-angle psi (both ray signs), and estimates the family's
/// Rademacher bound. A singular resolvent violates the precondition psi >
/// angle(T) and so propagates as an error.
pub fn sector_constants(
    op: &OperatorHandle,
    grid: FreqGrid,
    psi: f64,
    angles: usize,
    radii: &[f64],
    seed: u64,
) -> Result<SectorConstants, SectorError> {
    let sector = Sector::new(psi)?;
    let tag = op.in_tag.clone();
    // Strictly inside the complement of the closed sector: angles in
    // (psi, pi], mirrored to the lower half-plane except for the cut at pi.
    let angle_count = angles.max(2);
    let mut thetas = Vec::new();
    for i in 1..=angle_count {
        let t = sector.psi()
            + (std::f64::consts::PI - sector.psi()) * i as f64 / angle_count as f64;
        thetas.push(t);
        if t < std::f64::consts::PI - 1e-12 {
            thetas.push(-t);
        }
    }
    let mut family = Vec::new();
    let mut n_s = 0.0f64;
    let mut at = Complex64::default();
    for &theta in &thetas {
        for &radius in radii {
            let lambda = Complex64::from_polar(radius, theta);
            let r = resolvent(op, lambda, grid)?;
            let t_r = op.clone().compose(r);
            let (value, _) = operator_norm(&t_r, grid, &tag, &tag)?;
            if value > n_s {
                n_s = value;
                at = lambda;
            }
            family.push(t_r);
        }
    }
    let n_r = rbound(&family, grid, &tag, RBoundMode::Auto, 64, seed)?;
    Ok(SectorConstants { n_s, at, n_r })
}
