//! Periodic 1D grids, sampled fields, discrete Fourier analysis and
//! fractional Sobolev norms.
//!
//! Conventions: `f̂_j = dx · Σ_m f_m e^{-iξ_j x_m}` on `x_m = -L/2 + m dx`,
//! `ξ_j = 2πj/L`, and
//!
//! ```text
//! ‖f‖² = (1/2π) Σ_j |f̂_j|² ∫_{cell j} w(ξ) dξ
//! ```
//!
//! where cell `j` is `[ξ_j - π/L, ξ_j + π/L]`. For `w ≡ 1` this is exactly the
//! discrete Parseval identity for `∫|f|² dx`.

use std::cell::RefCell;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{LabError, Result};
use crate::model::ModelParams;
use crate::quad::gauss_legendre8;
use crate::report::fmt17;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse { p.plan_fft_inverse(buf.len()) } else { p.plan_fft_forward(buf.len()) };
        plan.process(buf);
    });
}

/// Fraction of the domain, on each side, that compactly supported fields must
/// leave empty.
pub const GUARD_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub length: f64,
    pub points: usize,
}

impl Grid1D {
    pub fn new(length: f64, points: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(LabError::invalid("length", format!("must be positive, got {length}")));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(LabError::invalid("points", format!("must be a power of two >= 4, got {points}")));
        }
        Ok(Grid1D { length, points })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn x(&self, m: usize) -> f64 {
        -0.5 * self.length + m as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.points).map(|m| self.x(m)).collect()
    }

    /// Signed mode number of FFT slot `j`.
    pub fn mode(&self, j: usize) -> i64 {
        let m = self.points as i64;
        let j = j as i64;
        if j < m / 2 {
            j
        } else {
            j - m
        }
    }

    pub fn dxi(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.length
    }

    /// Frequency of FFT slot `j`.
    pub fn xi(&self, j: usize) -> f64 {
        self.mode(j) as f64 * self.dxi()
    }

    /// Admissible band `[-L/4, L/4]` for supports.
    pub fn band(&self) -> (f64, f64) {
        let half = (0.5 - GUARD_FRACTION) * self.length;
        (-half, half)
    }

    /// Same point count, length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Grid1D::new(self.length * factor, self.points)
    }

    fn check_support(&self, lo: f64, hi: f64) -> Result<()> {
        let (band_lo, band_hi) = self.band();
        if lo < band_lo || hi > band_hi {
            return Err(LabError::SupportOverflow { lo, hi, band_lo, band_hi });
        }
        Ok(())
    }
}

/// Real samples on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points {
            return Err(LabError::GridMismatch(format!("{} samples for a {}-point grid", values.len(), grid.points)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::invalid("values", format!("non-finite sample at index {i}")));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Field { grid, values: vec![0.0; grid.points] }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Field::new(grid, grid.xs().into_iter().map(f).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Field::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Field { grid: self.grid, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        same_grid(self, other)?;
        Ok(Field { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() })
    }

    pub fn add(&self, other: &Field) -> Result<Self> {
        same_grid(self, other)?;
        Ok(Field { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ f dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.dx()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.dx()).sqrt()
    }

    /// Smallest interval containing every sample with `|f| > floor`.
    pub fn support(&self, floor: f64) -> Option<(f64, f64)> {
        let first = self.values.iter().position(|v| v.abs() > floor)?;
        let last = self.values.iter().rposition(|v| v.abs() > floor)?;
        Some((self.grid.x(first), self.grid.x(last)))
    }

    /// Errors if nonzero samples reach the guard band.
    pub fn check_guard_band(&self) -> Result<()> {
        match self.support(0.0) {
            Some((lo, hi)) => self.grid.check_support(lo, hi),
            None => Ok(()),
        }
    }

    /// `f̂_j = dx · FFT(f)_j` in FFT slot order.
    pub fn fourier(&self) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf, false);
        let dx = self.grid.dx();
        // phase for the grid origin at -L/2: e^{-iξ_j(-L/2)} = (-1)^j
        for (j, c) in buf.iter_mut().enumerate() {
            let sign = if self.grid.mode(j).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            *c *= dx * sign;
        }
        buf
    }

    /// Inverse of [`Field::fourier`]; the imaginary part is dropped.
    pub fn from_fourier(grid: Grid1D, mut spec: Vec<Complex64>) -> Result<Self> {
        let dx = grid.dx();
        for (j, c) in spec.iter_mut().enumerate() {
            let sign = if grid.mode(j).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            *c *= sign / dx;
        }
        fft_in_place(&mut spec, true);
        let m = grid.points as f64;
        Field::new(grid, spec.iter().map(|c| c.re / m).collect())
    }

    /// Band-limited (trigonometric) interpolant at an arbitrary point.
    pub fn interpolate(&self, x: f64) -> f64 {
        let spec = self.fourier();
        eval_trig(&self.grid, &spec, x)
    }

    /// Number of leading moments `∫ x^i f dx`, `i = 0, 1, ...`, that vanish to
    /// relative precision, capped at `max`.
    pub fn vanishing_moments(&self, max: usize) -> usize {
        let xs = self.grid.xs();
        let Some((lo, hi)) = self.support(0.0) else {
            return max;
        };
        let scale = 0.5 * (hi - lo).max(self.grid.dx());
        let centre = 0.5 * (lo + hi);
        for i in 0..max {
            let mut m = 0.0;
            let mut mag = 0.0;
            for (x, f) in xs.iter().zip(&self.values) {
                let y = ((x - centre) / scale).powi(i as i32);
                m += y * f;
                mag += (y * f).abs();
            }
            if m.abs() > MOMENT_TOL * mag {
                return i;
            }
        }
        max
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,value")?;
        for (m, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt17(self.grid.x(m)), fmt17(*v))?;
        }
        Ok(())
    }

    /// Spectrum dump, frequencies in increasing order.
    pub fn write_spectrum_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "xi,abs_fhat")?;
        let spec = self.fourier();
        let m = self.grid.points;
        for j in (m / 2..m).chain(0..m / 2) {
            writeln!(out, "{},{}", fmt17(self.grid.xi(j)), fmt17(spec[j].norm()))?;
        }
        Ok(())
    }
}

const MOMENT_TOL: f64 = 1e-9;

pub(crate) fn same_grid(a: &Field, b: &Field) -> Result<()> {
    if a.grid != b.grid {
        return Err(LabError::GridMismatch(format!(
            "(L = {}, M = {}) vs (L = {}, M = {})",
            a.grid.length, a.grid.points, b.grid.length, b.grid.points
        )));
    }
    Ok(())
}

fn eval_trig(grid: &Grid1D, spec: &[Complex64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (j, c) in spec.iter().enumerate() {
        let xi = grid.xi(j);
        let ph = xi * x;
        acc += c.re * ph.cos() - c.im * ph.sin();
    }
    // f(x) = (1/L) Σ f̂_j e^{iξ_j x}
    acc / grid.length
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevOrder {
    pub s: f64,
    pub homogeneous: bool,
    pub n_eff: u32,
}

impl SobolevOrder {
    pub fn inhomogeneous(s: f64) -> Self {
        SobolevOrder { s, homogeneous: false, n_eff: 1 }
    }

    pub fn homogeneous(s: f64) -> Self {
        SobolevOrder { s, homogeneous: true, n_eff: 1 }
    }

    /// Vanishing moments needed for a finite homogeneous norm (0 if none).
    pub fn required_moments(&self) -> usize {
        required_moments(self.s, self.n_eff)
    }
}

/// Smallest `q` with `q > -s - n/2`, or 0 when `s > -n/2`.
pub fn required_moments(s: f64, n: u32) -> usize {
    let bound = -s - n as f64 / 2.0;
    if bound < 0.0 {
        0
    } else {
        bound.floor() as usize + 1
    }
}

/// `∫_a^b |ξ|^{2s} dξ` for `0 < a < b`.
fn homogeneous_cell(a: f64, b: f64, s: f64) -> f64 {
    let p = 2.0 * s + 1.0;
    if p.abs() < 1e-14 {
        (b / a).ln()
    } else {
        (b.powf(p) - a.powf(p)) / p
    }
}

/// `∫_{-h}^{h} (1+ξ²)^s dξ` with a fixed rule.
fn inhomogeneous_zero_cell(h: f64, s: f64) -> f64 {
    let w = |xi: f64| (1.0 + xi * xi).powf(s);
    if h <= 1.0 {
        return 2.0 * gauss_legendre8(w, 0.0, h);
    }
    let mut acc = gauss_legendre8(w, 0.0, 1.0);
    let mut a = 1.0;
    while a < h {
        let b = (2.0 * a).min(h);
        acc += gauss_legendre8(w, a, b);
        a = b;
    }
    2.0 * acc
}

/// Cell-integrated Sobolev weights in FFT slot order.
pub fn cell_weights(grid: &Grid1D, ord: &SobolevOrder) -> Vec<f64> {
    let dxi = grid.dxi();
    let h = 0.5 * dxi;
    (0..grid.points)
        .map(|j| {
            let mode = grid.mode(j).unsigned_abs() as f64;
            if mode == 0.0 {
                if ord.homogeneous {
                    0.0
                } else {
                    inhomogeneous_zero_cell(h, ord.s)
                }
            } else {
                let a = (mode - 0.5) * dxi;
                let b = (mode + 0.5) * dxi;
                if ord.homogeneous {
                    homogeneous_cell(a, b, ord.s)
                } else {
                    gauss_legendre8(|xi| (1.0 + xi * xi).powf(ord.s), a, b)
                }
            }
        })
        .collect()
}

/// Discrete `H^s` / `Ḣ^s` norm.
///
/// Homogeneous norms with `s ≤ -n/2` require the field to have enough
/// vanishing moments; otherwise the zero-mode cut-off would silently decide
/// the answer.
pub fn sobolev_norm(f: &Field, ord: &SobolevOrder) -> Result<f64> {
    if !ord.s.is_finite() {
        return Err(LabError::invalid("s", "must be finite"));
    }
    if f.values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    if ord.homogeneous {
        let required = ord.required_moments();
        if required > 0 {
            let found = f.vanishing_moments(required);
            if found < required {
                return Err(LabError::MomentConditionViolated { s: ord.s, required, found });
            }
        }
    }
    let spec = f.fourier();
    let w = cell_weights(&f.grid, ord);
    let sum: f64 = spec.iter().zip(&w).map(|(c, w)| c.norm_sqr() * w).sum();
    Ok((sum / (2.0 * std::f64::consts::PI)).sqrt())
}

/// `height · exp(1 - 1/(1 - r²))` for `r = |x - center| / radius < 1`.
pub fn bump_profile(x: f64, center: f64, radius: f64, height: f64) -> f64 {
    let r = (x - center) / radius;
    let r2 = r * r;
    if r2 >= 1.0 {
        0.0
    } else {
        height * (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

pub fn bump(grid: Grid1D, center: f64, radius: f64, height: f64) -> Result<Field> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(LabError::invalid("radius", format!("must be positive, got {radius}")));
    }
    grid.check_support(center - radius, center + radius)?;
    Field::from_fn(grid, |x| bump_profile(x, center, radius, height))
}

/// Smooth step: 0 for `t ≤ 0`, 1 for `t ≥ 1`, `C^∞` in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Equal to `height` on `|x - center| ≤ inner`, decaying smoothly to 0 at
/// `inner + transition`.
pub fn plateau_profile(x: f64, center: f64, inner: f64, transition: f64, height: f64) -> f64 {
    let r = (x - center).abs();
    height * (1.0 - smooth_step((r - inner) / transition))
}

pub fn plateau_bump(grid: Grid1D, center: f64, inner: f64, transition: f64, height: f64) -> Result<Field> {
    if !(inner >= 0.0) || !(transition > 0.0) {
        return Err(LabError::invalid("plateau", "need inner >= 0 and transition > 0"));
    }
    let r = inner + transition;
    grid.check_support(center - r, center + r)?;
    Field::from_fn(grid, |x| plateau_profile(x, center, inner, transition, height))
}

fn binomial(q: usize, j: usize) -> f64 {
    (0..j).fold(1.0, |c, i| c * (q - i) as f64 / (i + 1) as f64)
}

/// `base(x - shift)`: integer roll when the shift is a whole number of cells,
/// spectral phase otherwise.
pub fn shifted(base: &Field, shift: f64) -> Result<Field> {
    let g = base.grid;
    let cells = shift / g.dx();
    if (cells - cells.round()).abs() < 1e-9 {
        let c = cells.round() as i64;
        let m = g.points as i64;
        let mut out = vec![0.0; g.points];
        for (i, v) in base.values.iter().enumerate() {
            out[(i as i64 + c).rem_euclid(m) as usize] = *v;
        }
        return Field::new(g, out);
    }
    let mut spec = base.fourier();
    for (j, c) in spec.iter_mut().enumerate() {
        let ph = -g.xi(j) * shift;
        *c *= Complex64::new(ph.cos(), ph.sin());
    }
    if g.points >= 2 {
        // the Nyquist mode of a real field must stay real
        let ny = g.points / 2;
        spec[ny] = Complex64::new(spec[ny].re, 0.0);
    }
    Field::from_fourier(g, spec)
}

/// `Σ_{j=0}^{q} (-1)^j C(q, j) base(x - jD)`, whose transform vanishes to
/// order `q` at the origin.
pub fn moment_data(base: &Field, q: usize, spacing: f64) -> Result<Field> {
    if q == 0 {
        return Ok(base.clone());
    }
    if let Some((lo, hi)) = base.support(0.0) {
        let last = q as f64 * spacing;
        base.grid.check_support(lo.min(lo + last), hi.max(hi + last))?;
    }
    let support = base.support(0.0);
    let mut acc = vec![0.0; base.grid.points];
    for j in 0..=q {
        let c = binomial(q, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
        let copy = shifted(base, j as f64 * spacing)?;
        for (a, v) in acc.iter_mut().zip(&copy.values) {
            *a += c * v;
        }
    }
    // a spectral shift spreads the (tiny) spectral tail over the whole grid;
    // keep only the windows occupied by the copies
    if let Some((lo, hi)) = support {
        let pad = 2.0 * base.grid.dx();
        let xs = base.grid.xs();
        for (a, x) in acc.iter_mut().zip(xs) {
            let inside = (0..=q).any(|j| {
                let off = j as f64 * spacing;
                x >= lo + off - pad && x <= hi + off + pad
            });
            if !inside {
                *a = 0.0;
            }
        }
    }
    let out = Field::new(base.grid, acc)?;
    out.check_guard_band()?;
    Ok(out)
}

/// Signed data with `q` vanishing moments built from bumps of different
/// widths, so that odd powers of the data do not integrate to zero.
///
/// Copy `j` is a bump of radius `radius · dilation^j` centred at
/// `first_center + j·spacing`; copy 0 has weight 1 and the other weights solve
/// the discrete moment equations.
pub fn asymmetric_moment_data(
    grid: Grid1D,
    first_center: f64,
    radius: f64,
    q: usize,
    spacing: f64,
    dilation: f64,
) -> Result<Field> {
    if !(dilation > 0.0) || dilation == 1.0 {
        return Err(LabError::invalid("dilation", "must be positive and different from 1"));
    }
    let copies: Vec<Field> = (0..=q)
        .map(|j| bump(grid, first_center + j as f64 * spacing, radius * dilation.powi(j as i32), 1.0))
        .collect::<Result<_>>()?;
    if q == 0 {
        return Ok(copies.into_iter().next().expect("one copy"));
    }
    let xs = grid.xs();
    let centre = first_center + 0.5 * q as f64 * spacing;
    let scale = 0.5 * q as f64 * spacing.abs() + radius * dilation.max(1.0).powi(q as i32);
    let moment = |f: &Field, i: usize| -> f64 {
        xs.iter().zip(&f.values).map(|(x, v)| ((x - centre) / scale).powi(i as i32) * v).sum::<f64>()
    };
    // rows i = 0..q-1, unknowns c_1..c_q; right-hand side from copy 0
    let mut a = vec![vec![0.0; q]; q];
    let mut rhs = vec![0.0; q];
    for i in 0..q {
        rhs[i] = -moment(&copies[0], i);
        for j in 1..=q {
            a[i][j - 1] = moment(&copies[j], i);
        }
    }
    let c = solve_dense(a, rhs)?;
    let mut acc = copies[0].values.clone();
    for j in 1..=q {
        for (s, v) in acc.iter_mut().zip(&copies[j].values) {
            *s += c[j - 1] * v;
        }
    }
    Field::new(grid, acc)
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[piv][col].abs() < 1e-300 {
            return Err(LabError::DegenerateData("singular moment system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

fn check_gamma_lambda(gamma: f64, lambda: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(LabError::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    if !(lambda > 0.0) {
        return Err(LabError::invalid("lambda", format!("must be positive, got {lambda}")));
    }
    if lambda > gamma {
        return Err(LabError::LambdaTooLarge { lambda, gamma });
    }
    Ok(())
}

/// `g(x) = λ^{-(k+1)/(k+l-1)} φ(γx/λ)`.
///
/// The result lives on the naturally scaled grid (length `L λ/γ`, same point
/// count), where the samples are exact. Use [`resample`] to move it onto
/// another grid.
pub fn rescale_data(phi: &Field, gamma: f64, lambda: f64, params: &ModelParams) -> Result<Field> {
    check_gamma_lambda(gamma, lambda)?;
    phi.check_guard_band()?;
    let amp = lambda.powf(-(params.k + 1.0) / params.homogeneity());
    let grid = phi.grid.scaled(lambda / gamma)?;
    Field::new(grid, phi.values.iter().map(|v| amp * v).collect())
}

/// Two-parameter rescaling of a solution pair at time `t`: returns the pair
/// at time `λt` of `u^{(γ,λ)} = λ^α φ^{(γ)}(t/λ, γx/λ)`, on the scaled grid.
pub fn scale_two_param(u: &Field, v: &Field, gamma: f64, lambda: f64, params: &ModelParams) -> Result<(Field, Field)> {
    check_gamma_lambda(gamma, lambda)?;
    same_grid(u, v)?;
    let alpha = params.exponents().alpha;
    let grid = u.grid.scaled(lambda / gamma)?;
    let cu = lambda.powf(alpha);
    let cv = lambda.powf(alpha - 1.0);
    Ok((
        Field::new(grid, u.values.iter().map(|x| cu * x).collect())?,
        Field::new(grid, v.values.iter().map(|x| cv * x).collect())?,
    ))
}

/// `λ^{-(k+1)/(k+l-1)} (λ/γ)^{n/2-(s-1)}`, the data norm up to a constant.
pub fn predict_data_norm(params: &ModelParams, s: f64, gamma: f64, lambda: f64, q: usize) -> Result<f64> {
    check_gamma_lambda(gamma, lambda)?;
    let n = params.n as f64;
    let needed = required_moments(s - 1.0, params.n);
    if q < needed {
        return Err(LabError::MomentConditionViolated { s: s - 1.0, required: needed, found: q });
    }
    let amp = lambda.powf(-(params.k + 1.0) / params.homogeneity());
    Ok(amp * (lambda / gamma).powf(n / 2.0 - (s - 1.0)))
}

/// Interpolates `f` onto `target`, treating `f` as periodic on its own
/// domain and zero outside it. Band-limited unless the spacing ratio exceeds
/// `M/8`, in which case a cubic rule is used.
pub fn resample(f: &Field, target: Grid1D) -> Result<Field> {
    let ratio = f.grid.dx() / target.dx();
    let stretch = ratio.max(1.0 / ratio);
    let half = 0.5 * f.grid.length;
    let inside = |x: f64| x >= -half && x < half;
    if stretch > f.grid.points as f64 / 8.0 {
        log::warn!("resample: spacing ratio {stretch:.3e} exceeds M/8, using cubic interpolation");
        return Field::from_fn(target, |x| if inside(x) { cubic_at(f, x) } else { 0.0 });
    }
    let spec = f.fourier();
    Field::from_fn(target, |x| if inside(x) { eval_trig(&f.grid, &spec, x) } else { 0.0 })
}

fn cubic_at(f: &Field, x: f64) -> f64 {
    let g = f.grid;
    let pos = (x + 0.5 * g.length) / g.dx();
    let i = pos.floor() as i64;
    let t = pos - i as f64;
    let m = g.points as i64;
    let at = |k: i64| f.values[(k.rem_euclid(m)) as usize];
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    // Catmull-Rom
    0.5 * (2.0 * p1
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(l: f64, m: usize) -> Grid1D {
        Grid1D::new(l, m).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(1.0, 6).is_err());
        assert!(Grid1D::new(0.0, 8).is_err());
        let g = grid(8.0, 8);
        assert_eq!(g.x(0), -4.0);
        assert_eq!(g.mode(4), -4);
        assert_eq!(g.mode(3), 3);
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let f = Field::zeros(grid(10.0, 64));
        for s in [-2.0, -0.5, 0.0, 1.5] {
            assert_eq!(sobolev_norm(&f, &SobolevOrder::inhomogeneous(s)).unwrap(), 0.0);
            assert_eq!(sobolev_norm(&f, &SobolevOrder::homogeneous(s)).unwrap(), 0.0);
        }
    }

    #[test]
    fn parseval_against_quadrature() {
        let g = grid(40.0, 1024);
        let f = Field::from_fn(g, |x| (-x * x).exp()).unwrap();
        let trap = f.l2_norm();
        let n = sobolev_norm(&f, &SobolevOrder::inhomogeneous(0.0)).unwrap();
        assert_relative_eq!(n, trap, max_relative = 1e-10);
        let exact = (std::f64::consts::PI / 2.0).sqrt().sqrt();
        assert_relative_eq!(n, exact, max_relative = 1e-10);

        let odd = Field::from_fn(g, |x| x * (-x * x).exp()).unwrap();
        let h = sobolev_norm(&odd, &SobolevOrder::homogeneous(0.0)).unwrap();
        assert_relative_eq!(h, odd.l2_norm(), max_relative = 1e-10);
    }

    #[test]
    fn bump_values_and_integral() {
        let g = grid(16.0, 4096);
        let b = bump(g, 0.0, 1.0, 2.5).unwrap();
        assert_eq!(b.values[2048], 2.5);
        assert_eq!(bump_profile(1.0, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(bump_profile(-1.3, 0.0, 1.0, 1.0), 0.0);
        let unit = bump(g, 0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(unit.integral(), 1.206_900_322_437_876_2, max_relative = 1e-12);
        assert!(bump(g, 3.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn dilation_law() {
        let g = grid(64.0, 1 << 14);
        let base = bump(g, 0.0, 1.0, 1.0).unwrap();
        let f = moment_data(&base, 2, 2.0).unwrap();
        let d = moment_data(&bump(g, 0.0, 2.0, 1.0).unwrap(), 2, 4.0).unwrap();
        let s = 0.5;
        let r = sobolev_norm(&d, &SobolevOrder::homogeneous(s)).unwrap()
            / sobolev_norm(&f, &SobolevOrder::homogeneous(s)).unwrap();
        assert_relative_eq!(r, 2f64.powf(0.5 - s), max_relative = 5e-3);
    }

    #[test]
    fn homogeneous_negative_order_needs_moments() {
        let g = grid(64.0, 4096);
        let b = bump(g, 0.0, 1.0, 1.0).unwrap();
        let err = sobolev_norm(&b, &SobolevOrder::homogeneous(-0.75)).unwrap_err();
        assert!(matches!(err, LabError::MomentConditionViolated { required: 1, found: 0, .. }));
        let m1 = moment_data(&b, 1, 3.0).unwrap();
        assert!(sobolev_norm(&m1, &SobolevOrder::homogeneous(-0.75)).is_ok());
        // s = -1.75 needs two moments
        assert!(sobolev_norm(&m1, &SobolevOrder::homogeneous(-1.75)).is_err());
        let m2 = moment_data(&b, 2, 3.0).unwrap();
        assert!(sobolev_norm(&m2, &SobolevOrder::homogeneous(-1.75)).is_ok());
        assert_eq!(required_moments(-0.5, 1), 1);
        assert_eq!(required_moments(-0.4, 1), 0);
        assert_eq!(required_moments(-1.5, 1), 2);
    }

    #[test]
    fn moment_data_examples() {
        let g = grid(32.0, 2048);
        let b = bump(g, -2.0, 1.0, 1.0).unwrap();
        assert_eq!(moment_data(&b, 0, 3.0).unwrap(), b);
        let m1 = moment_data(&b, 1, 3.0).unwrap();
        assert!(m1.fourier()[0].norm() < 1e-14);
        // non-integer spacing goes through the spectral shift
        let m1s = moment_data(&b, 1, 2.987).unwrap();
        assert!(m1s.fourier()[0].norm() < 1e-9 * m1s.l1_norm());
        assert!(moment_data(&b, 4, 3.0).is_err());
    }

    #[test]
    fn moment_data_small_xi_probe_is_resolution_stable() {
        let probe = |m: usize| -> f64 {
            let g = grid(64.0, m);
            let b = bump(g, -3.0, 1.0, 1.0).unwrap();
            let f = moment_data(&b, 2, 3.0).unwrap();
            let spec = f.fourier();
            (1..=3).map(|j| spec[j].norm() / g.xi(j).powi(2)).fold(0.0, f64::max)
        };
        let (a, b) = (probe(2048), probe(4096));
        assert!(a.is_finite() && a > 0.0);
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn asymmetric_data_moments() {
        let g = grid(64.0, 8192);
        let f = asymmetric_moment_data(g, -4.0, 1.0, 2, 4.0, 1.5).unwrap();
        assert!(f.vanishing_moments(4) >= 2);
        let cube: f64 = f.values.iter().map(|v| v * v * v).sum();
        assert!(cube.abs() > 1e-3);
    }

    #[test]
    fn rescale_examples() {
        let p = ModelParams::defocusing(0.0, 3.0).unwrap();
        let g = grid(16.0, 256);
        let phi = bump(g, 0.0, 1.0, 1.0).unwrap();
        let same = rescale_data(&phi, 0.01, 0.01, &p).unwrap();
        assert_eq!(same.grid, g);
        for (a, b) in same.values.iter().zip(&phi.values) {
            assert_relative_eq!(*a, b * 10.0, max_relative = 1e-14);
        }
        let tiny = rescale_data(&phi, 1e-4, 1e-4, &p).unwrap();
        assert_relative_eq!(tiny.values[128], 100.0, max_relative = 1e-12);
        assert!(matches!(rescale_data(&phi, 0.1, 0.2, &p), Err(LabError::LambdaTooLarge { .. })));
    }

    #[test]
    fn scale_two_param_examples() {
        let p = ModelParams::defocusing(0.0, 3.0).unwrap();
        let g = grid(16.0, 256);
        let phi = bump(g, 0.0, 1.0, 1.0).unwrap();
        let zero = Field::zeros(g);
        let (u, v) = scale_two_param(&phi, &phi, 1.0, 1.0, &p).unwrap();
        assert_eq!(u, phi);
        assert_eq!(v, phi);
        let (_, v) = scale_two_param(&zero, &phi, 1e-2, 1e-6, &p).unwrap();
        // α - 1 = -1/2
        assert_relative_eq!(v.values[128], 1e3, max_relative = 1e-12);
        let direct = rescale_data(&phi, 1e-2, 1e-6, &p).unwrap();
        assert_eq!(v, direct);
    }

    #[test]
    fn predict_data_norm_examples() {
        let p = ModelParams::defocusing(0.0, 3.0).unwrap();
        let e = p.exponents();
        let (s, gamma, lambda) = (0.25, 1e-2, 1e-6);
        let lhs = predict_data_norm(&p, s, gamma, lambda, 1).unwrap();
        assert!(predict_data_norm(&p, s, gamma, lambda, 0).is_err());
        let rhs = lambda.powf(e.s_c - s) * gamma.powf(s - 1.5);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-14);
        assert_relative_eq!(lhs, 0.01, max_relative = 1e-12);
        assert!(predict_data_norm(&p, -0.75, gamma, lambda, 1).is_err());
        assert!(predict_data_norm(&p, -0.75, gamma, lambda, 2).is_ok());
    }

    #[test]
    fn resample_recovers_smooth_field() {
        let g = grid(16.0, 1024);
        let phi = bump(g, 0.3, 2.0, 1.0).unwrap();
        let fine = grid(12.0, 1024);
        let r = resample(&phi, fine).unwrap();
        for (i, x) in fine.xs().into_iter().enumerate() {
            assert!((r.values[i] - bump_profile(x, 0.3, 2.0, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn spectral_shift_matches_exact_translate() {
        let g = grid(32.0, 2048);
        let b = bump(g, 0.0, 2.0, 1.0).unwrap();
        let s = shifted(&b, 0.37).unwrap();
        for (i, x) in g.xs().into_iter().enumerate() {
            assert!((s.values[i] - bump_profile(x, 0.37, 2.0, 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_dumps() {
        let g = grid(8.0, 8);
        let f = bump(g, 0.0, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,value\n"));
        assert_eq!(text.lines().count(), 9);
        let mut buf = Vec::new();
        f.write_spectrum_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("xi,abs_fhat\n"));
        assert!(text.lines().nth(1).unwrap().starts_with('-'));
    }

    proptest! {
        #[test]
        fn inhomogeneous_norm_monotone_in_s(
            c in -2.0f64..2.0, r in 0.3f64..2.0, s1 in -3.0f64..3.0, ds in 0.0f64..2.0, dxi_scale in 0u32..3
        ) {
            let g = grid(16.0 * 4f64.powi(dxi_scale as i32 - 1), 512);
            let f = bump(g, c * g.length / 16.0, r * g.length / 16.0, 1.0).unwrap();
            let a = sobolev_norm(&f, &SobolevOrder::inhomogeneous(s1)).unwrap();
            let b = sobolev_norm(&f, &SobolevOrder::inhomogeneous(s1 + ds)).unwrap();
            prop_assert!(a <= b * (1.0 + 1e-14));
        }

        #[test]
        fn norm_is_homogeneous_of_degree_one(c in -10.0f64..10.0, s in -1.0f64..2.0) {
            let g = grid(16.0, 256);
            let f = bump(g, 0.0, 1.5, 1.0).unwrap();
            let ord = SobolevOrder::inhomogeneous(s);
            let a = sobolev_norm(&f.scaled(c), &ord).unwrap();
            let b = sobolev_norm(&f, &ord).unwrap();
            prop_assert!((a - c.abs() * b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
