//! Pseudospectral method-of-lines solver for `∂_t² u - γ² ∂_x² u = F(u, ∂_t u)`
//! on a periodic grid, with γ-energy diagnostics.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{abs_pow, eval_nonlinearity, ModelParams};
use crate::spectral::{fft_in_place, same_grid, sobolev_norm, Field, Grid1D, SobolevOrder};

/// Solution pair `(u, ∂_t u)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub gamma: f64,
}

impl WaveState {
    /// State `(0, φ)` at `t = 0`.
    pub fn from_data(phi: &Field, gamma: f64) -> Result<Self> {
        let st = WaveState { t: 0.0, u: Field::zeros(phi.grid), v: phi.clone(), gamma };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        same_grid(&self.u, &self.v)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(LabError::invalid("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid1D {
        self.u.grid
    }

    pub fn negated(&self) -> Self {
        WaveState { t: self.t, u: self.u.scaled(-1.0), v: self.v.scaled(-1.0), gamma: self.gamma }
    }
}

/// Right-hand side forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forcing {
    Linear,
    Model(ModelParams),
}

impl Forcing {
    fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            Forcing::Linear => 0.0,
            Forcing::Model(p) => eval_nonlinearity(p, u, v),
        }
    }

    /// `1 + max|v|^{l-1} max|u|^k`, the nonlinear stiffness bound.
    fn stiffness(&self, umax: f64, vmax: f64) -> f64 {
        match self {
            Forcing::Linear => 1.0,
            Forcing::Model(p) => {
                let vel = if p.l >= 1.0 { abs_pow(vmax, p.l - 1.0) } else { 1.0 };
                1.0 + vel * abs_pow(umax, p.k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fixed step; `None` selects `cfl·dx / max(γ, stiffness)` every step.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub cfl: f64,
    pub dealias: bool,
    /// `max|v|` at which a run is declared blown up.
    pub blowup_cap: f64,
    /// Times at which states are recorded; `t_end` is always included.
    pub sample_times: Vec<f64>,
    pub enforce_guard_band: bool,
    /// Amplitude below which samples count as outside the support.
    pub support_floor: f64,
    /// Same, relative to the current `max(|u|, |v|)`; the larger threshold wins.
    pub support_rel_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: None,
            t_end: 1.0,
            cfl: 0.5,
            dealias: true,
            blowup_cap: 1e6,
            sample_times: Vec::new(),
            enforce_guard_band: true,
            support_floor: 1e-12,
            support_rel_floor: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn until(t_end: f64) -> Self {
        SolverConfig { t_end, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(LabError::invalid("t_end", "must be finite and >= 0"));
        }
        if !(self.cfl > 0.0) {
            return Err(LabError::invalid("cfl", "must be positive"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(LabError::invalid("dt", "must be positive"));
            }
        }
        if !(self.support_floor > 0.0) {
            return Err(LabError::invalid("support_floor", "must be positive"));
        }
        Ok(())
    }

    fn targets(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.sample_times.iter().cloned().filter(|&s| s >= 0.0 && s <= self.t_end).collect();
        t.push(self.t_end);
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Blowup { t_star: f64 },
}

#[derive(Debug, Clone)]
pub struct EvolveOutput {
    pub samples: Vec<WaveState>,
    pub status: RunStatus,
    pub steps: usize,
    /// γ-energy `½∫v² + γ²/2 ∫u_x²` of each sample.
    pub energy: Vec<f64>,
}

/// Spectral workspace for one run.
struct Rhs {
    gamma2: f64,
    forcing: Forcing,
    xi2: Vec<f64>,
    keep: Vec<bool>,
    dx: f64,
    buf: Vec<Complex64>,
    out: Vec<Complex64>,
}

impl Rhs {
    fn new(grid: Grid1D, gamma: f64, forcing: Forcing, dealias: bool) -> Self {
        let m = grid.points;
        let cut = m as i64 / 3;
        Rhs {
            gamma2: gamma * gamma,
            forcing,
            xi2: (0..m).map(|j| grid.xi(j).powi(2)).collect(),
            keep: (0..m).map(|j| !dealias || grid.mode(j).abs() <= cut).collect(),
            dx: grid.dx(),
            buf: vec![Complex64::new(0.0, 0.0); m],
            out: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    /// `dv = γ² ∂_x² u + P F(u, v)`; returns `∫ u_x² dx`.
    ///
    /// `u` and `F` are transformed together as the real and imaginary parts of
    /// one complex signal.
    fn eval(&mut self, u: &[f64], v: &[f64], dv: &mut [f64]) -> f64 {
        let m = u.len();
        for i in 0..m {
            self.buf[i] = Complex64::new(u[i], self.forcing.eval(u[i], v[i]));
        }
        fft_in_place(&mut self.buf, false);
        let mut grad2 = 0.0;
        for j in 0..m {
            let zj = self.buf[j];
            let zc = self.buf[(m - j) % m].conj();
            let uh = 0.5 * (zj + zc);
            let fh = Complex64::new(0.0, -0.5) * (zj - zc);
            grad2 += self.xi2[j] * uh.norm_sqr();
            let f_part = if self.keep[j] { fh } else { Complex64::new(0.0, 0.0) };
            self.out[j] = -self.gamma2 * self.xi2[j] * uh + f_part;
        }
        fft_in_place(&mut self.out, true);
        let inv = 1.0 / m as f64;
        for i in 0..m {
            dv[i] = self.out[i].re * inv;
        }
        grad2 * self.dx / m as f64
    }
}

struct Stepper {
    rhs: Rhs,
    k: [Vec<f64>; 4],
    tmp_u: Vec<f64>,
    tmp_v: Vec<f64>,
}

impl Stepper {
    fn new(rhs: Rhs, m: usize) -> Self {
        Stepper { rhs, k: std::array::from_fn(|_| vec![0.0; m]), tmp_u: vec![0.0; m], tmp_v: vec![0.0; m] }
    }

    /// One classical RK4 step; returns `(u', v', ∫u_x² at the start)`.
    fn step(&mut self, u: &[f64], v: &[f64], h: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let m = u.len();
        // du/dt = v, so the u-stages are the v-values at each stage
        let grad2 = self.rhs.eval(u, v, &mut self.k[0]);
        let mut vu = [v.to_vec(), vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for (stage, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..m {
                self.tmp_u[i] = u[i] + c * h * vu[stage - 1][i];
                self.tmp_v[i] = v[i] + c * h * self.k[stage - 1][i];
            }
            vu[stage].copy_from_slice(&self.tmp_v);
            let (tu, tv) = (std::mem::take(&mut self.tmp_u), std::mem::take(&mut self.tmp_v));
            self.rhs.eval(&tu, &tv, &mut self.k[stage]);
            self.tmp_u = tu;
            self.tmp_v = tv;
        }
        let mut nu = vec![0.0; m];
        let mut nv = vec![0.0; m];
        for i in 0..m {
            nu[i] = u[i] + h / 6.0 * (vu[0][i] + 2.0 * vu[1][i] + 2.0 * vu[2][i] + vu[3][i]);
            nv[i] = v[i] + h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        (nu, nv, grad2)
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn kinetic(v: &[f64], dx: f64) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>() * dx
}

/// Integrates from `init` to `cfg.t_end`, recording states at the sample
/// times. A run stops early, with [`RunStatus::Blowup`], once `max|v|`
/// reaches the blow-up cap; the crossing time is refined by bisection on the
/// last step.
pub fn evolve(init: &WaveState, forcing: &Forcing, cfg: &SolverConfig) -> Result<EvolveOutput> {
    init.validate()?;
    cfg.validate()?;
    let grid = init.grid();
    let m = grid.points;
    let dx = grid.dx();
    let gamma = init.gamma;
    let mut stepper = Stepper::new(Rhs::new(grid, gamma, *forcing, cfg.dealias), m);

    let mut t = init.t;
    let mut u = init.u.values.clone();
    let mut v = init.v.values.clone();
    let mut samples = Vec::new();
    let mut energy = Vec::new();
    let mut steps = 0usize;
    let mut scratch = vec![0.0; m];

    let record = |t: f64, u: &[f64], v: &[f64], rhs: &mut Rhs, scratch: &mut [f64]| -> Result<(WaveState, f64)> {
        let st = WaveState { t, u: Field::new(grid, u.to_vec())?, v: Field::new(grid, v.to_vec())?, gamma };
        if cfg.enforce_guard_band {
            support_radius(&st, effective_floor(&st, cfg.support_floor, cfg.support_rel_floor))?;
        }
        let g2 = rhs.eval(u, v, scratch);
        Ok((st, kinetic(v, dx) + 0.5 * gamma * gamma * g2))
    };

    for target in cfg.targets() {
        if target < t {
            continue;
        }
        while t < target {
            let umax = max_abs(&u);
            let vmax = max_abs(&v);
            let auto = cfg.cfl * dx / gamma.max(forcing.stiffness(umax, vmax));
            let mut h = cfg.dt.unwrap_or(auto);
            let last = t + h >= target * (1.0 - 1e-14);
            if last {
                h = target - t;
            }
            let (nu, nv, g2) = stepper.step(&u, &v, h);
            steps += 1;
            let e_old = kinetic(&v, dx) + 0.5 * gamma * gamma * g2;
            if nu.iter().chain(&nv).any(|x| !x.is_finite()) {
                return Err(LabError::Instability { t, detail: "non-finite values after a step".into() });
            }
            let nvmax = max_abs(&nv);
            if nvmax >= cfg.blowup_cap {
                let t_star = bisect_cap(&mut stepper, &u, &v, h, cfg.blowup_cap);
                return Ok(EvolveOutput { samples, status: RunStatus::Blowup { t_star: t + t_star }, steps, energy });
            }
            let e_new = kinetic(&nv, dx) + 0.5 * gamma * gamma * stepper.rhs.eval(&nu, &nv, &mut scratch);
            if e_old > 0.0 && e_new > 10.0 * e_old {
                return Err(LabError::Instability {
                    t: t + h,
                    detail: format!("energy grew from {e_old:.3e} to {e_new:.3e} in one step of size {h:.3e}"),
                });
            }
            u = nu;
            v = nv;
            t = if last { target } else { t + h };
        }
        let (st, e) = record(t, &u, &v, &mut stepper.rhs, &mut scratch)?;
        samples.push(st);
        energy.push(e);
    }
    Ok(EvolveOutput { samples, status: RunStatus::Completed, steps, energy })
}

/// Step length in `(0, h]` at which `max|v|` reaches `cap`.
fn bisect_cap(stepper: &mut Stepper, u: &[f64], v: &[f64], h: f64, cap: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (_, nv, _) = stepper.step(u, v, mid);
        if nv.iter().any(|x| !x.is_finite()) || max_abs(&nv) >= cap {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * h.max(1e-300) {
            break;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub m: usize,
    /// `E_γ(∂_x^j w)` for `j = 0..=m`.
    pub per_order: Vec<f64>,
    pub total: f64,
}

/// `E_γ(∂_x^j w) = ½∫|∂_x^j w_t|² + γ²/2 ∫|∂_x^{j+1} w|²`, derivatives taken
/// spectrally, and their sum over `j ≤ m`.
pub fn energy_gamma_m(w: &Field, w_t: &Field, gamma: f64, m: usize) -> Result<EnergyReport> {
    same_grid(w, w_t)?;
    let grid = w.grid;
    let spec_w = w.fourier();
    let spec_t = w_t.fourier();
    // ∫|∂^j g|² dx = (1/2π) Σ |ĝ_j|² ξ^{2j} Δξ
    let norm = grid.dxi() / (2.0 * std::f64::consts::PI);
    let moment = |spec: &[Complex64], order: usize| -> f64 {
        spec.iter()
            .enumerate()
            .map(|(j, c)| c.norm_sqr() * grid.xi(j).powi(2 * order as i32))
            .sum::<f64>()
            * norm
    };
    let per_order: Vec<f64> =
        (0..=m).map(|j| 0.5 * moment(&spec_t, j) + 0.5 * gamma * gamma * moment(&spec_w, j + 1)).collect();
    let total = per_order.iter().sum();
    Ok(EnergyReport { m, per_order, total })
}

/// `‖w‖_{H^{m+1}} + ‖w_t‖_{H^m}` with `w = u - u_ode` for each sample.
pub fn discrepancy_vs_ode(run: &[WaveState], ode: &[(Field, Field)], m: usize) -> Result<Vec<f64>> {
    if run.len() != ode.len() {
        return Err(LabError::GridMismatch(format!("{} PDE samples vs {} ODE samples", run.len(), ode.len())));
    }
    run.iter()
        .zip(ode)
        .map(|(st, (u0, v0))| {
            let w = st.u.sub(u0)?;
            let wt = st.v.sub(v0)?;
            Ok(sobolev_norm(&w, &SobolevOrder::inhomogeneous(m as f64 + 1.0))?
                + sobolev_norm(&wt, &SobolevOrder::inhomogeneous(m as f64))?)
        })
        .collect()
}

/// `max(floor, rel · max(|u|, |v|))`.
pub fn effective_floor(state: &WaveState, floor: f64, rel: f64) -> f64 {
    floor.max(rel * state.u.max_abs().max(state.v.max_abs()))
}

/// Radius of the smallest centred interval holding every sample with `|u|` or
/// `|v|` above `floor`; errors if that interval reaches the guard band.
pub fn support_radius(state: &WaveState, floor: f64) -> Result<f64> {
    let grid = state.grid();
    let mut r: f64 = 0.0;
    for i in 0..grid.points {
        if state.u.values[i].abs() > floor || state.v.values[i].abs() > floor {
            r = r.max(grid.x(i).abs());
        }
    }
    let (band_lo, band_hi) = grid.band();
    if r > band_hi {
        return Err(LabError::SupportOverflow { lo: -r, hi: r, band_lo, band_hi });
    }
    Ok(r)
}
