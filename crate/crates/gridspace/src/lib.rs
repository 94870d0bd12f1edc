//! Discrete function spaces on the d-torus.
//!
//! Frequencies are the integer lattice vectors k in {-n/2, ..., n/2-1}^d on a
//! torus of side length 2*pi, and the symbol variable xi *equals* k. With this
//! convention differential symbols carry no 2*pi factors: d/dx has symbol
//! i*xi, the Laplacian has symbol -|xi|^2. Norms use the unit-mass measure
//! (cell weight 1/n^d), so the constant function 1 has L^p norm exactly 1 and
//! every operator-norm or ratio reported downstream is measure-independent.

use num_complex::Complex64;
use once_cell::sync::{Lazy, OnceCell};
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Desk-scale guard: grids above this total point count are rejected.
pub const MAX_TOTAL_POINTS: usize = 1 << 21;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1, 2, or 3 (got {0})")]
    DimensionOutOfRange(usize),
    #[error("points per axis must be a power of two >= 4 (got {0})")]
    NotPowerOfTwo(usize),
    #[error("grid has {points} points, above the desk-scale cap of {cap}")]
    TooManyPoints { points: usize, cap: usize },
    #[error("vector lives on grid {found:?}, expected {expected:?}")]
    GridMismatch { expected: FreqGrid, found: FreqGrid },
    #[error("tag expects {expected} components, vector has {found}")]
    ComponentMismatch { expected: usize, found: usize },
    #[error("integrability exponent must lie in (1, infinity), got {0}")]
    BadExponent(f64),
    #[error("frequency {0:?} is not on the grid")]
    ModeOutOfRange([i64; 3]),
    #[error("data length {found} does not match {expected} (components x lattice points)")]
    DataLength { expected: usize, found: usize },
    #[error(
        "component {component} has zero-mode coefficient of magnitude {magnitude:.3e} under the reject policy"
    )]
    ZeroModeRejected { component: usize, magnitude: f64 },
}

/// Frequency lattice {-n/2, ..., n/2-1}^d stored in FFT order: the flat index
/// runs row-major over axis indices j in 0..n with k = j for j < n/2 and
/// k = j - n otherwise, so flat index 0 is the zero mode.
///
/// The lattice is symmetric under negation except the Nyquist rows
/// (components equal to -n/2, whose negation n/2 is not stored).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FreqGrid {
    d: usize,
    n: usize,
}

/// Builds the frequency lattice for dimension `d` with `n` points per axis.
pub fn make_grid(d: usize, n: usize) -> Result<FreqGrid, GridError> {
    FreqGrid::new(d, n)
}

impl FreqGrid {
    pub fn new(d: usize, n: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&d) {
            return Err(GridError::DimensionOutOfRange(d));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo(n));
        }
        let points = n.checked_pow(d as u32).unwrap_or(usize::MAX);
        if points > MAX_TOTAL_POINTS {
            return Err(GridError::TooManyPoints {
                points,
                cap: MAX_TOTAL_POINTS,
            });
        }
        Ok(FreqGrid { d, n })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Flat index of the zero mode k = 0.
    pub fn zero_mode(&self) -> usize {
        0
    }

    fn axis_freq(&self, idx: usize) -> i64 {
        if idx < self.n / 2 {
            idx as i64
        } else {
            idx as i64 - self.n as i64
        }
    }

    fn axis_index(&self, k: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if (-half..half).contains(&k) {
            Some(if k >= 0 { k as usize } else { (k + self.n as i64) as usize })
        } else {
            None
        }
    }

    /// Integer frequency vector of a flat index; unused trailing axes are 0.
    pub fn k_at(&self, flat: usize) -> [i64; 3] {
        debug_assert!(flat < self.points());
        let mut k = [0i64; 3];
        let mut rest = flat;
        for axis in (0..self.d).rev() {
            k[axis] = self.axis_freq(rest % self.n);
            rest /= self.n;
        }
        k
    }

    /// Symbol variable xi at a flat index; equals k componentwise.
    pub fn xi_at(&self, flat: usize) -> [f64; 3] {
        let k = self.k_at(flat);
        [k[0] as f64, k[1] as f64, k[2] as f64]
    }

    /// |k|^2 at a flat index.
    pub fn abs2(&self, flat: usize) -> f64 {
        let k = self.k_at(flat);
        (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64
    }

    pub fn flat_of(&self, k: [i64; 3]) -> Result<usize, GridError> {
        for axis in self.d..3 {
            if k[axis] != 0 {
                return Err(GridError::ModeOutOfRange(k));
            }
        }
        let mut flat = 0usize;
        for axis in 0..self.d {
            let idx = self.axis_index(k[axis]).ok_or(GridError::ModeOutOfRange(k))?;
            flat = flat * self.n + idx;
        }
        Ok(flat)
    }

    pub fn contains(&self, k: [i64; 3]) -> bool {
        self.flat_of(k).is_ok()
    }

    /// True when any component sits on the unpaired Nyquist row k_i = -n/2.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        let k = self.k_at(flat);
        let half = (self.n / 2) as i64;
        (0..self.d).any(|a| k[a] == -half)
    }

    pub fn modes(&self) -> impl Iterator<Item = usize> {
        0..self.points()
    }

    /// Physical grid point x_j = 2*pi*j/n per axis for a flat *physical* index
    /// laid out row-major like the frequency side.
    pub fn phys_point(&self, flat: usize) -> [f64; 3] {
        let mut x = [0f64; 3];
        let mut rest = flat;
        for axis in (0..self.d).rev() {
            x[axis] = TAU * (rest % self.n) as f64 / self.n as f64;
            rest /= self.n;
        }
        x
    }
}

/// Zero-mode handling for homogeneous tags, where the weight |xi|^s is
/// singular or degenerate at xi = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroModePolicy {
    /// Work in the mean-free subspace: the zero mode is projected away.
    #[default]
    Project,
    /// Error if a vector carries nonzero zero-mode content.
    Reject,
    /// Replace |xi|^s by (1 + |xi|^2)^(s/2) at the zero mode only, i.e. the
    /// zero mode gets weight 1.
    Shift,
}

/// Discrete stand-in for H^{s,p}, homogeneous dot-H^{s,p}, and L^p = H^{0,p}.
///
/// `components` counts scalar fields; a tag with mixed smoothness per
/// component (product spaces like H^4 x L^2) carries an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTag {
    s: f64,
    p: f64,
    homogeneous: bool,
    components: usize,
    zero_mode: ZeroModePolicy,
    per_component_s: Option<Vec<f64>>,
}

impl SpaceTag {
    /// Inhomogeneous tag H^{s,p}, one component, default zero-mode policy.
    pub fn new(s: f64, p: f64) -> Self {
        assert!(p > 1.0 && p.is_finite(), "integrability exponent must lie in (1, infinity)");
        SpaceTag {
            s,
            p,
            homogeneous: false,
            components: 1,
            zero_mode: ZeroModePolicy::Project,
            per_component_s: None,
        }
    }

    /// Homogeneous tag dot-H^{s,p}; the policy decides the zero mode.
    pub fn homogeneous(s: f64, p: f64, zero_mode: ZeroModePolicy) -> Self {
        let mut tag = SpaceTag::new(s, p);
        tag.homogeneous = true;
        tag.zero_mode = zero_mode;
        tag
    }

    pub fn with_components(mut self, components: usize) -> Self {
        assert!(components >= 1);
        self.components = components;
        if let Some(list) = &self.per_component_s {
            assert_eq!(list.len(), components, "per-component smoothness list length");
        }
        self
    }

    /// Overrides the smoothness exponent per component, e.g. H^4 x L^2.
    pub fn with_component_smoothness(mut self, s_list: Vec<f64>) -> Self {
        assert_eq!(s_list.len(), self.components, "per-component smoothness list length");
        self.per_component_s = Some(s_list);
        self
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn zero_mode_policy(&self) -> ZeroModePolicy {
        self.zero_mode
    }

    pub fn s_of(&self, component: usize) -> f64 {
        match &self.per_component_s {
            Some(list) => list[component],
            None => self.s,
        }
    }

    /// Tags are compatible for composition iff component counts match.
    pub fn compatible(&self, other: &SpaceTag) -> bool {
        self.components == other.components
    }

    /// Norm weight of one mode and component. `None` means the mode does not
    /// belong to the space (projected zero mode of a homogeneous tag).
    pub fn weight_at(&self, grid: &FreqGrid, flat: usize, component: usize) -> Option<f64> {
        let a2 = grid.abs2(flat);
        let s = self.s_of(component);
        if !self.homogeneous {
            return Some((1.0 + a2).powf(s / 2.0));
        }
        if a2 == 0.0 {
            match self.zero_mode {
                ZeroModePolicy::Project => None,
                // Reject is enforced against vector content in `norm`; a
                // surviving zero coefficient there is exactly zero.
                ZeroModePolicy::Reject => None,
                ZeroModePolicy::Shift => Some(1.0),
            }
        } else {
            Some(a2.powf(s / 2.0))
        }
    }
}

/// One complex field per component per lattice point, held on whichever side
/// (frequency or physical) it was built on, with the other side materialized
/// lazily. Arithmetic is canonical on the frequency side.
#[derive(Clone)]
pub struct GridVector {
    grid: FreqGrid,
    components: usize,
    freq: OnceCell<Arc<Vec<Complex64>>>,
    phys: OnceCell<Arc<Vec<Complex64>>>,
}

impl std::fmt::Debug for GridVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridVector")
            .field("grid", &self.grid)
            .field("components", &self.components)
            .finish()
    }
}

impl GridVector {
    pub fn from_freq(
        grid: FreqGrid,
        components: usize,
        data: Vec<Complex64>,
    ) -> Result<Self, GridError> {
        let expected = components * grid.points();
        if data.len() != expected {
            return Err(GridError::DataLength { expected, found: data.len() });
        }
        let cell = OnceCell::new();
        cell.set(Arc::new(data)).ok();
        Ok(GridVector { grid, components, freq: cell, phys: OnceCell::new() })
    }

    pub fn from_phys(
        grid: FreqGrid,
        components: usize,
        data: Vec<Complex64>,
    ) -> Result<Self, GridError> {
        let expected = components * grid.points();
        if data.len() != expected {
            return Err(GridError::DataLength { expected, found: data.len() });
        }
        let cell = OnceCell::new();
        cell.set(Arc::new(data)).ok();
        Ok(GridVector { grid, components, freq: OnceCell::new(), phys: cell })
    }

    pub fn zeros(grid: FreqGrid, components: usize) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); components * grid.points()];
        GridVector::from_freq(grid, components, data).expect("length by construction")
    }

    /// Constant field: value per component, i.e. a pure zero-mode vector.
    pub fn constant(grid: FreqGrid, values: &[Complex64]) -> Self {
        let points = grid.points();
        let mut data = vec![Complex64::new(0.0, 0.0); values.len() * points];
        for (c, v) in values.iter().enumerate() {
            data[c * points] = *v;
        }
        GridVector::from_freq(grid, values.len(), data).expect("length by construction")
    }

    /// Single Fourier mode amp * e^{i k.x} in one component.
    pub fn delta_mode(
        grid: FreqGrid,
        k: [i64; 3],
        component: usize,
        components: usize,
        amp: Complex64,
    ) -> Result<Self, GridError> {
        let flat = grid.flat_of(k)?;
        let points = grid.points();
        let mut data = vec![Complex64::new(0.0, 0.0); components * points];
        data[component * points + flat] = amp;
        GridVector::from_freq(grid, components, data)
    }

    /// Samples f(x, component) at the physical grid points.
    pub fn from_phys_fn(
        grid: FreqGrid,
        components: usize,
        f: impl Fn(&[f64; 3], usize) -> Complex64,
    ) -> Self {
        let points = grid.points();
        let mut data = vec![Complex64::new(0.0, 0.0); components * points];
        for c in 0..components {
            for flat in 0..points {
                data[c * points + flat] = f(&grid.phys_point(flat), c);
            }
        }
        GridVector::from_phys(grid, components, data).expect("length by construction")
    }

    /// IID coefficients uniform in the complex unit square, on the frequency side.
    pub fn random_freq(grid: FreqGrid, components: usize, rng: &mut impl Rng) -> Self {
        let data: Vec<Complex64> = (0..components * grid.points())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        GridVector::from_freq(grid, components, data).expect("length by construction")
    }

    /// Random vector with the zero mode removed in every component.
    pub fn random_mean_free(grid: FreqGrid, components: usize, rng: &mut impl Rng) -> Self {
        GridVector::random_freq(grid, components, rng).project_zero_mode()
    }

    pub fn grid(&self) -> FreqGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Frequency-side data, component-major; computed on first use.
    pub fn freq(&self) -> &Arc<Vec<Complex64>> {
        self.freq.get_or_init(|| {
            let mut data = self.phys.get().expect("one representation always present").as_ref().clone();
            for c in 0..self.components {
                let points = self.grid.points();
                transform(&mut data[c * points..(c + 1) * points], self.grid.d, self.grid.n, false);
            }
            Arc::new(data)
        })
    }

    /// Physical-side data, component-major; computed on first use.
    pub fn phys(&self) -> &Arc<Vec<Complex64>> {
        self.phys.get_or_init(|| {
            let mut data = self.freq.get().expect("one representation always present").as_ref().clone();
            for c in 0..self.components {
                let points = self.grid.points();
                transform(&mut data[c * points..(c + 1) * points], self.grid.d, self.grid.n, true);
            }
            Arc::new(data)
        })
    }

    pub fn freq_at(&self, component: usize, flat: usize) -> Complex64 {
        self.freq()[component * self.grid.points() + flat]
    }

    pub fn phys_at(&self, component: usize, flat: usize) -> Complex64 {
        self.phys()[component * self.grid.points() + flat]
    }

    /// New vector with frequency data f(flat, component, coeff).
    pub fn map_freq(&self, f: impl Fn(usize, usize, Complex64) -> Complex64) -> GridVector {
        let points = self.grid.points();
        let src = self.freq();
        let mut data = Vec::with_capacity(src.len());
        for c in 0..self.components {
            for flat in 0..points {
                data.push(f(flat, c, src[c * points + flat]));
            }
        }
        GridVector::from_freq(self.grid, self.components, data).expect("length by construction")
    }

    pub fn linear_comb(a: Complex64, v: &GridVector, b: Complex64, w: &GridVector) -> GridVector {
        assert_eq!(v.grid, w.grid, "grids must match");
        assert_eq!(v.components, w.components, "component counts must match");
        let wf = w.freq();
        v.map_freq(|flat, c, coeff| a * coeff + b * wf[c * v.grid.points() + flat])
    }

    pub fn add(&self, other: &GridVector) -> GridVector {
        GridVector::linear_comb(Complex64::new(1.0, 0.0), self, Complex64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &GridVector) -> GridVector {
        GridVector::linear_comb(Complex64::new(1.0, 0.0), self, Complex64::new(-1.0, 0.0), other)
    }

    pub fn scale(&self, a: Complex64) -> GridVector {
        self.map_freq(|_, _, coeff| a * coeff)
    }

    /// Removes the zero mode of every component; idempotent, and it commutes
    /// with every diagonal multiplier because it is itself the multiplier
    /// with symbol 1 - delta_0.
    pub fn project_zero_mode(&self) -> GridVector {
        let zero = self.grid.zero_mode();
        self.map_freq(|flat, _, coeff| if flat == zero { Complex64::new(0.0, 0.0) } else { coeff })
    }

    /// Unweighted l^2 inner product on the frequency side, conjugate-linear in
    /// `other`. With the unit-mass measure this equals the L^2(grid) inner
    /// product of the physical fields.
    pub fn l2_inner(&self, other: &GridVector) -> Complex64 {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.components, other.components);
        let a = self.freq();
        let b = other.freq();
        a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
    }

    /// Weighted norm per the tag. p = 2 is evaluated exactly on the frequency
    /// side via Parseval; other p weight in frequency, transform, and take the
    /// discrete unit-mass L^p norm of the pointwise Euclidean magnitude.
    pub fn norm(&self, tag: &SpaceTag) -> Result<f64, GridError> {
        if tag.components != self.components {
            return Err(GridError::ComponentMismatch {
                expected: tag.components,
                found: self.components,
            });
        }
        if !(tag.p > 1.0 && tag.p.is_finite()) {
            return Err(GridError::BadExponent(tag.p));
        }
        let points = self.grid.points();
        let freq = self.freq();
        if tag.homogeneous && tag.zero_mode == ZeroModePolicy::Reject {
            let scale = freq.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
            for c in 0..self.components {
                let mag = freq[c * points + self.grid.zero_mode()].norm();
                if mag > 1e-12 * scale {
                    return Err(GridError::ZeroModeRejected { component: c, magnitude: mag });
                }
            }
        }
        if (tag.p - 2.0).abs() < 1e-14 {
            let mut acc = 0.0f64;
            for c in 0..self.components {
                for flat in 0..points {
                    if let Some(w) = tag.weight_at(&self.grid, flat, c) {
                        let m = freq[c * points + flat].norm();
                        acc += (w * m) * (w * m);
                    }
                }
            }
            return Ok(acc.sqrt());
        }
        // Weight per mode, go to physical space, unit-mass l^p of |v(x)|_2.
        let mut weighted = Vec::with_capacity(freq.len());
        for c in 0..self.components {
            for flat in 0..points {
                let w = tag.weight_at(&self.grid, flat, c).unwrap_or(0.0);
                weighted.push(freq[c * points + flat] * w);
            }
        }
        for c in 0..self.components {
            transform(&mut weighted[c * points..(c + 1) * points], self.grid.d, self.grid.n, true);
        }
        let mut acc = 0.0f64;
        for flat in 0..points {
            let mut sq = 0.0f64;
            for c in 0..self.components {
                sq += weighted[c * points + flat].norm_sqr();
            }
            acc += sq.sqrt().powf(tag.p);
        }
        Ok((acc / points as f64).powf(1.0 / tag.p))
    }

    /// Largest coefficient magnitude over both components and modes.
    pub fn max_abs_freq(&self) -> f64 {
        self.freq().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Removes the zero mode of every component.
pub fn project_zero_mode(v: &GridVector) -> GridVector {
    v.project_zero_mode()
}

/// Weighted norm of `v` under `tag`.
pub fn norm(v: &GridVector, tag: &SpaceTag) -> Result<f64, GridError> {
    v.norm(tag)
}

static PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().expect("fft plan cache poisoned");
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place d-dimensional DFT on a single component laid out row-major with
/// n points per axis. Forward scales by 1/n^d so that the constant field 1
/// transforms to a unit coefficient at the zero mode; inverse is unscaled,
/// making the round trip the identity.
pub fn transform(data: &mut [Complex64], d: usize, n: usize, inverse: bool) {
    let total = n.pow(d as u32);
    assert_eq!(data.len(), total, "component length must equal n^d");
    let fft = plan(n, inverse);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for big in 0..total / block {
            for small in 0..stride {
                let base = big * block + small;
                for j in 0..n {
                    line[j] = data[base + j * stride];
                }
                fft.process(&mut line);
                for j in 0..n {
                    data[base + j * stride] = line[j];
                }
            }
        }
    }
    if !inverse {
        let scale = 1.0 / total as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
}
