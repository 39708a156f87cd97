//! Time-ODE `∂_t² u = F(u, ∂_t u)` with data `(0, 1)`.
//!
//! On the monotone branch (`u ≥ 0`, `∂_t u > 0`) the conserved quantity
//! reduces the dynamics to `∂_t u = f(u)`, which is what we integrate. The
//! raw second-order system is only integrated for consistency checks.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{eval_nonlinearity, ModelParams, Sign};
use crate::quad;
use crate::report::fmt17;
use crate::spectral::Field;

pub const DEFAULT_TOL: f64 = 1e-10;
/// Velocity below which a defocusing `l < 2` trajectory counts as settled.
pub const PLATEAU_VELOCITY: f64 = 1e-12;
/// Default `u` threshold for blow-up tails.
pub const DEFAULT_U_CAP: f64 = 30.0;
/// Velocity at which the focusing integrator stops.
pub const VELOCITY_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrajectoryStatus {
    Global,
    Plateau { limit: f64 },
    Blowup { t_est: f64 },
}

/// Limit `((k+1)/(2-l))^{1/(k+1)}` of defocusing `l < 2` trajectories.
pub fn plateau_value(params: &ModelParams) -> Option<f64> {
    (params.sign == Sign::Defocusing && params.l < 2.0)
        .then(|| ((params.k + 1.0) / (2.0 - params.l)).powf(1.0 / (params.k + 1.0)))
}

/// `∂_t u` as a function of `u` on the data-(0, 1) branch.
///
/// Past a defocusing plateau the value is clamped to 0; past the focusing
/// `l > 2` singular value it is `+∞`.
pub fn velocity(params: &ModelParams, u: f64) -> f64 {
    let kp1 = params.k + 1.0;
    let w = u.max(0.0).powf(kp1) / kp1;
    let l = params.l;
    match params.sign {
        Sign::Defocusing if l == 2.0 => (-w).exp(),
        Sign::Focusing if l == 2.0 => w.exp(),
        sign => {
            let dir = if sign == Sign::Defocusing { -1.0 } else { 1.0 };
            let base = 1.0 + dir * (2.0 - l) * w;
            if base <= 0.0 {
                if l < 2.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                base.powf(1.0 / (2.0 - l))
            }
        }
    }
}

/// Conserved quantity along solutions with `u ≥ 0`, `∂_t u > 0`.
pub fn conserved_quantity(params: &ModelParams, u: f64, v: f64) -> f64 {
    let kp1 = params.k + 1.0;
    let pot = u.abs().powf(kp1) / kp1;
    let kin = if params.l == 2.0 {
        v.abs().ln()
    } else {
        v.abs().powf(2.0 - params.l) / (2.0 - params.l)
    };
    match params.sign {
        Sign::Defocusing => kin + pot,
        Sign::Focusing => kin - pot,
    }
}

/// Dormand–Prince 5(4) step for an autonomous system; returns the fifth-order
/// solution and the embedded error estimate.
fn dp45_step<const D: usize, F>(f: &F, y: &[f64; D], h: f64) -> ([f64; D], [f64; D])
where
    F: Fn(&[f64; D]) -> [f64; D],
{
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    let comb = |coef: &[(f64, &[f64; D])]| -> [f64; D] {
        let mut out = *y;
        for (c, k) in coef {
            for i in 0..D {
                out[i] += h * c * k[i];
            }
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&comb(&[(A21, &k1)]));
    let k3 = f(&comb(&[(A31, &k1), (A32, &k2)]));
    let k4 = f(&comb(&[(A41, &k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(&comb(&[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(&comb(&[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y5 = comb(&[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(&y5);
    let mut err = [0.0; D];
    for i in 0..D {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DriveEnd {
    Reached,
    Stopped,
    Underflow { t: f64 },
}

/// Adaptive driver. `stop` is checked on every accepted state; `record` sees
/// every accepted `(t, y, h)`.
fn drive<const D: usize, F, S, R>(
    f: &F,
    y0: [f64; D],
    t_end: f64,
    rtol: f64,
    stop: S,
    mut record: R,
) -> DriveEnd
where
    F: Fn(&[f64; D]) -> [f64; D],
    S: Fn(&[f64; D]) -> bool,
    R: FnMut(f64, &[f64; D], f64),
{
    let atol = rtol * 1e-4;
    let mut t = 0.0;
    let mut y = y0;
    let mut h = (rtol.powf(0.2) * 0.1).min(t_end.max(1e-300));
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let (y_new, err) = dp45_step(f, &y, h);
        let mut ratio: f64 = 0.0;
        let mut finite = true;
        for i in 0..D {
            if !y_new[i].is_finite() {
                finite = false;
            }
            let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
            ratio = ratio.max((err[i] / scale).abs());
        }
        if finite && ratio <= 1.0 {
            t += h;
            y = y_new;
            record(t, &y, h);
            if stop(&y) {
                return DriveEnd::Stopped;
            }
            let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h *= grow;
        } else {
            h *= if finite { (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.5) } else { 0.25 };
        }
        if h < 1e-15 * t.max(1e-300) || h < f64::MIN_POSITIVE {
            return DriveEnd::Underflow { t };
        }
    }
    DriveEnd::Reached
}

/// Dense solution of `∂_t u = f(u)` with data `u(0) = 0`.
///
/// Accepted steps are stored as nodes; a value between nodes is obtained by
/// one fresh Dormand–Prince step from the preceding node, which is no longer
/// than an accepted step and therefore inherits its error control.
#[derive(Debug, Clone)]
pub struct VelocityFlow {
    params: ModelParams,
    rtol: f64,
    times: Vec<f64>,
    values: Vec<f64>,
    /// Last time at which the solution is known.
    t_max: f64,
    /// Set when integration stopped at the blow-up caps.
    stopped_at_blowup: bool,
}

impl VelocityFlow {
    pub fn integrate(params: &ModelParams, t_end: f64, rtol: f64) -> Result<Self> {
        params.validate()?;
        if !(rtol > 0.0) {
            return Err(LabError::invalid("tol", "must be positive"));
        }
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(LabError::invalid("t_end", "must be finite and >= 0"));
        }
        let mut flow = VelocityFlow {
            params: *params,
            rtol,
            times: vec![0.0],
            values: vec![0.0],
            t_max: 0.0,
            stopped_at_blowup: false,
        };
        flow.advance(t_end)?;
        Ok(flow)
    }

    fn rhs(&self) -> impl Fn(&[f64; 1]) -> [f64; 1] + '_ {
        move |y: &[f64; 1]| [velocity(&self.params, y[0])]
    }

    fn advance(&mut self, t_end: f64) -> Result<()> {
        if t_end <= self.t_max || self.stopped_at_blowup {
            return Ok(());
        }
        let t0 = self.t_max;
        let u0 = *self.values.last().expect("non-empty");
        let params = self.params;
        let rhs = move |y: &[f64; 1]| [velocity(&params, y[0])];
        let focusing = params.sign == Sign::Focusing;
        let stop = |y: &[f64; 1]| focusing && (y[0] >= DEFAULT_U_CAP || velocity(&params, y[0]) >= VELOCITY_CAP);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let end = drive(&rhs, [u0], t_end - t0, self.rtol, stop, |t, y, _| {
            times.push(t0 + t);
            values.push(y[0]);
        });
        self.times.extend(times);
        self.values.extend(values);
        self.t_max = *self.times.last().expect("non-empty");
        match end {
            DriveEnd::Reached => {
                self.t_max = self.t_max.max(t_end);
                Ok(())
            }
            DriveEnd::Stopped => {
                self.stopped_at_blowup = true;
                Ok(())
            }
            DriveEnd::Underflow { t } if focusing => {
                self.stopped_at_blowup = true;
                log::debug!("step underflow at t = {} treated as blow-up", t0 + t);
                Ok(())
            }
            DriveEnd::Underflow { t } => Err(LabError::StepUnderflow {
                t: t0 + t,
                t_lo: t0 + t,
                t_hi: t_end,
            }),
        }
    }

    /// Copy of the flow covering at least `[0, t_end]`.
    pub fn extended(&self, t_end: f64) -> Result<Self> {
        let mut out = self.clone();
        out.advance(t_end)?;
        Ok(out)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn reached_blowup_cap(&self) -> bool {
        self.stopped_at_blowup
    }

    /// `(u, ∂_t u)` at time `t ∈ [0, t_max]`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(t >= 0.0) || t > self.t_max {
            return Err(LabError::BeyondLifespan { t, t_max: self.t_max });
        }
        let idx = self.times.partition_point(|&ti| ti <= t) - 1;
        let (ti, ui) = (self.times[idx], self.values[idx]);
        let u = if t == ti {
            ui
        } else {
            dp45_step(&self.rhs(), &[ui], t - ti).0[0]
        };
        Ok((u, velocity(&self.params, u)))
    }

    /// Time at which `u` first reaches `level` (monotone branch only).
    pub fn time_of_level(&self, level: f64) -> Option<f64> {
        let idx = self.values.partition_point(|&u| u < level);
        if idx == 0 {
            return Some(0.0);
        }
        if idx >= self.values.len() {
            return None;
        }
        let (t0, u0) = (self.times[idx - 1], self.values[idx - 1]);
        let dt = quad::integrate(|u| 1.0 / velocity(&self.params, u), u0, level, 0.0, 1e-14).value;
        Some(t0 + dt)
    }
}

/// Sampled trajectory `(t, u, ∂_t u)`.
#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub u_t: Vec<f64>,
    pub status: TrajectoryStatus,
    flow: Option<Arc<VelocityFlow>>,
}

impl OdeTrajectory {
    /// Dense evaluator, present on base trajectories.
    pub fn flow(&self) -> Option<&Arc<VelocityFlow>> {
        self.flow.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,u,u_t")?;
        for i in 0..self.times.len() {
            writeln!(out, "{},{},{}", fmt17(self.times[i]), fmt17(self.u[i]), fmt17(self.u_t[i]))?;
        }
        Ok(())
    }

    /// Largest relative drift `|I(t) - I(0)| / (1 + |I(0)|)` along the samples.
    pub fn conserved_drift(&self, params: &ModelParams) -> f64 {
        let i0 = conserved_quantity(params, self.u[0], self.u_t[0]);
        self.u
            .iter()
            .zip(&self.u_t)
            .map(|(&u, &v)| (conserved_quantity(params, u, v) - i0).abs() / (1.0 + i0.abs()))
            .fold(0.0, f64::max)
    }
}

/// Uniform samples on `[0, 1]` followed by a geometric grid up to `t_end`.
pub fn default_sample_times(t_end: f64) -> Vec<f64> {
    let head_end = t_end.min(1.0);
    let mut out: Vec<f64> = (0..=32).map(|i| head_end * i as f64 / 32.0).collect();
    if t_end > 1.0 {
        let ratio = 2f64.powf(1.0 / 16.0);
        let mut t = ratio;
        while t < t_end {
            out.push(t);
            t *= ratio;
        }
        out.push(t_end);
    }
    out.dedup();
    out
}

/// Sample times accumulating geometrically at the blow-up time `t_max`.
fn blowup_sample_times(t_max: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (0..32).map(|i| t_max * i as f64 / 40.0).collect();
    let mut gap = t_max * 8.0 / 40.0;
    while gap > t_max * 1e-12 {
        out.push(t_max - gap);
        gap *= 0.5;
    }
    out.push(t_max);
    out
}

fn sample(flow: &Arc<VelocityFlow>, times: &[f64], status: TrajectoryStatus) -> Result<OdeTrajectory> {
    let mut u = Vec::with_capacity(times.len());
    let mut u_t = Vec::with_capacity(times.len());
    for &t in times {
        let (a, b) = flow.eval(t)?;
        u.push(a);
        u_t.push(b);
    }
    Ok(OdeTrajectory { times: times.to_vec(), u, u_t, status, flow: Some(flow.clone()) })
}

/// Adaptive integration of the data-(0, 1) solution up to `t_end` (or up to
/// the blow-up caps for the focusing family).
pub fn integrate_base(params: &ModelParams, t_end: f64, tol: f64) -> Result<OdeTrajectory> {
    let flow = Arc::new(VelocityFlow::integrate(params, t_end, tol)?);
    let status = match params.sign {
        Sign::Defocusing => match plateau_value(params) {
            Some(limit) => TrajectoryStatus::Plateau { limit },
            None => TrajectoryStatus::Global,
        },
        Sign::Focusing => TrajectoryStatus::Blowup { t_est: blowup_time(params, tol.max(1e-12))?.t_est },
    };
    let times = if flow.reached_blowup_cap() {
        blowup_sample_times(flow.t_max())
    } else {
        default_sample_times(t_end)
    };
    sample(&flow, &times, status)
}

/// Samples of the base solution at explicit times.
pub fn sample_base(base: &OdeTrajectory, times: &[f64]) -> Result<OdeTrajectory> {
    let flow = base_flow(base)?;
    let t_need = times.iter().cloned().fold(0.0, f64::max);
    let flow = if t_need > flow.t_max() { Arc::new(flow.extended(t_need)?) } else { flow.clone() };
    sample(&flow, times, base.status)
}

fn base_flow(base: &OdeTrajectory) -> Result<&Arc<VelocityFlow>> {
    base.flow
        .as_ref()
        .ok_or_else(|| LabError::invalid("base", "trajectory has no dense solution; use integrate_base"))
}

/// Raw integration of the second-order system, used as an independent route
/// in consistency checks. Stops early on focusing blow-up.
pub fn integrate_second_order(params: &ModelParams, times: &[f64], tol: f64) -> Result<OdeTrajectory> {
    params.validate()?;
    let p = *params;
    let rhs = move |y: &[f64; 2]| [y[1], eval_nonlinearity(&p, y[0], y[1])];
    let mut out_t = vec![0.0];
    let mut out_u = vec![0.0];
    let mut out_v = vec![1.0];
    let mut t = 0.0;
    let mut y = [0.0, 1.0];
    for &target in times.iter().filter(|&&s| s > 0.0) {
        let mut last = (t, y);
        let end = drive(&rhs, y, target - t, tol, |y| y[1].abs() >= VELOCITY_CAP, |dt, yy, _| {
            last = (t + dt, *yy);
        });
        match end {
            DriveEnd::Reached => {
                t = target;
                y = last.1;
                out_t.push(t);
                out_u.push(y[0]);
                out_v.push(y[1]);
            }
            _ => break,
        }
    }
    let status = match (params.sign, plateau_value(params)) {
        (Sign::Defocusing, Some(limit)) => TrajectoryStatus::Plateau { limit },
        (Sign::Defocusing, None) => TrajectoryStatus::Global,
        (Sign::Focusing, _) => TrajectoryStatus::Blowup { t_est: f64::NAN },
    };
    Ok(OdeTrajectory { times: out_t, u: out_u, u_t: out_v, status, flow: None })
}

/// Rescaled solution `u_ψ(t) = u_1(t ψ^{N(k+l-1)}) ψ^{-N(l-2)}` with data
/// `(0, ψ^{N(k+1)})`, sampled at `times`. `ψ = 0` gives the zero solution.
pub fn rescale_trajectory(
    base: &OdeTrajectory,
    psi: f64,
    big_n: i64,
    params: &ModelParams,
    times: &[f64],
) -> Result<OdeTrajectory> {
    if !(psi >= 0.0) || !psi.is_finite() {
        return Err(LabError::invalid("psi", format!("must be finite and >= 0, got {psi}")));
    }
    if psi == 0.0 {
        let z = vec![0.0; times.len()];
        return Ok(OdeTrajectory { times: times.to_vec(), u: z.clone(), u_t: z, status: base.status, flow: None });
    }
    let flow = base_flow(base)?;
    let scaling = PsiScaling::new(params, big_n);
    let t_need = times.iter().fold(0.0f64, |m, &t| m.max(scaling.time(psi, t)));
    let flow = if t_need > flow.t_max() { Arc::new(flow.extended(t_need)?) } else { flow.clone() };
    let mut u = Vec::with_capacity(times.len());
    let mut u_t = Vec::with_capacity(times.len());
    for &t in times {
        let (a, b) = scaling.eval(&flow, psi, t)?;
        u.push(a);
        u_t.push(b);
    }
    let status = match base.status {
        TrajectoryStatus::Blowup { t_est } => TrajectoryStatus::Blowup { t_est: t_est / psi.powf(scaling.time_pow) },
        s => s,
    };
    Ok(OdeTrajectory { times: times.to_vec(), u, u_t, status, flow: None })
}

/// Exponents of the ψ-rescaling.
#[derive(Debug, Clone, Copy)]
struct PsiScaling {
    time_pow: f64,
    amp_pow: f64,
    vel_pow: f64,
}

impl PsiScaling {
    fn new(params: &ModelParams, big_n: i64) -> Self {
        let n = big_n as f64;
        PsiScaling {
            time_pow: n * (params.k + params.l - 1.0),
            amp_pow: -n * (params.l - 2.0),
            vel_pow: n * (params.k + 1.0),
        }
    }

    fn time(&self, psi: f64, t: f64) -> f64 {
        t * psi.powf(self.time_pow)
    }

    fn eval(&self, flow: &VelocityFlow, psi: f64, t: f64) -> Result<(f64, f64)> {
        if psi == 0.0 {
            return Ok((0.0, 0.0));
        }
        let s = self.time(psi, t);
        let vel = psi.powf(self.vel_pow);
        if s == 0.0 || vel == 0.0 {
            // u_1(s) = s to leading order
            return Ok((vel * t, vel));
        }
        let (u1, v1) = flow.eval(s)?;
        Ok((u1 * psi.powf(self.amp_pow), v1 * vel))
    }
}

/// Focusing rescaling `u_a(t) = u_T(T t / a)` with data `(0, T/a)`; blows up
/// at `t = a`.
pub fn rescale_focusing(base: &OdeTrajectory, a: f64) -> Result<OdeTrajectory> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(LabError::invalid("a", format!("must be positive, got {a}")));
    }
    let t_blow = match base.status {
        TrajectoryStatus::Blowup { t_est } => t_est,
        _ => return Err(LabError::invalid("base", "focusing rescaling needs a blow-up trajectory")),
    };
    let factor = t_blow / a;
    Ok(OdeTrajectory {
        times: base.times.iter().map(|t| t / factor).collect(),
        u: base.u.clone(),
        u_t: base.u_t.iter().map(|v| v * factor).collect(),
        status: TrajectoryStatus::Blowup { t_est: a },
        flow: None,
    })
}

/// Pointwise ODE flow of `x ↦ ψ(x)`: returns `(u_ψ(x)(t), ∂_t u_ψ(x)(t))`.
pub fn evolve_ode_field(
    psi_field: &Field,
    t: f64,
    params: &ModelParams,
    big_n: i64,
    base: &OdeTrajectory,
) -> Result<(Field, Field)> {
    if let Some(bad) = psi_field.values.iter().find(|&&p| !(p >= 0.0)) {
        return Err(LabError::invalid("psi", format!("must be nonnegative everywhere, found {bad}")));
    }
    let scaling = PsiScaling::new(params, big_n);
    let psi_max = psi_field.values.iter().cloned().fold(0.0, f64::max);
    let flow = prepared_flow(base, scaling.time(psi_max, t))?;
    let pairs: Result<Vec<(f64, f64)>> =
        psi_field.values.par_iter().map(|&p| scaling.eval(&flow, p, t)).collect();
    split_fields(psi_field, pairs?)
}

/// Pointwise ODE flow for signed data `φ`, using the oddness of `F`: the
/// solution with data `(0, φ)` is `sign(φ) ũ_{|φ|}`.
pub fn ode_field_from_data(phi: &Field, t: f64, params: &ModelParams, base: &OdeTrajectory) -> Result<(Field, Field)> {
    let kp1 = params.k + 1.0;
    let time_pow = (params.k + params.l - 1.0) / kp1;
    let amp_pow = -(params.l - 2.0) / kp1;
    let phi_max = phi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let flow = prepared_flow(base, t * phi_max.powf(time_pow))?;
    let pairs: Result<Vec<(f64, f64)>> = phi
        .values
        .par_iter()
        .map(|&p| {
            let a = p.abs();
            if a == 0.0 {
                return Ok((0.0, 0.0));
            }
            let s = t * a.powf(time_pow);
            if s == 0.0 {
                return Ok((p * t, p));
            }
            let (u1, v1) = flow.eval(s)?;
            Ok((p.signum() * u1 * a.powf(amp_pow), p.signum() * v1 * a))
        })
        .collect();
    split_fields(phi, pairs?)
}

fn prepared_flow(base: &OdeTrajectory, t_need: f64) -> Result<Arc<VelocityFlow>> {
    let flow = base_flow(base)?;
    if t_need > flow.t_max() {
        Ok(Arc::new(flow.extended(t_need)?))
    } else {
        Ok(flow.clone())
    }
}

fn split_fields(like: &Field, pairs: Vec<(f64, f64)>) -> Result<(Field, Field)> {
    let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok((Field::new(like.grid, u)?, Field::new(like.grid, v)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub t_est: f64,
    /// Final `u` threshold (the singular value `u*` when `l > 2`).
    pub u_cap: f64,
    /// Order of the power-law tail removed by Richardson extrapolation; 0 when
    /// the tail is closed-form or absent.
    pub richardson_order: f64,
    /// `(u_cap, estimate)` for every cap tried, in doubling order.
    pub history: Vec<(f64, f64)>,
    /// `|t_integrator(u) - ∫_0^u du/f|` at the initial cap.
    pub integrator_gap: f64,
}

/// Blow-up time `T = ∫_0^∞ du / f(u)` of the focusing data-(0, 1) solution.
pub fn blowup_time(params: &ModelParams, tol: f64) -> Result<BlowupReport> {
    params.validate()?;
    if params.sign != Sign::Focusing {
        return Err(LabError::NoBlowup);
    }
    if !(tol > 0.0) {
        return Err(LabError::invalid("tol", "must be positive"));
    }
    let (k, l) = (params.k, params.l);
    let kp1 = k + 1.0;
    let inv_f = |u: f64| 1.0 / velocity(params, u);
    let qtol = (tol * 1e-3).max(1e-15);
    let raw = |cap: f64| -> f64 {
        let head = quad::integrate(inv_f, 0.0, cap.min(1.0), 0.0, qtol).value;
        if cap <= 1.0 {
            head
        } else {
            head + quad::integrate_graded(inv_f, 1.0, cap, 0.0, qtol).value
        }
    };

    if l > 2.0 {
        let u_star = (kp1 / (l - 2.0)).powf(1.0 / kp1);
        let t = quad::integrate(inv_f, 0.0, u_star, 0.0, qtol).value;
        return Ok(BlowupReport {
            t_est: t,
            u_cap: u_star,
            richardson_order: 0.0,
            history: vec![(u_star, t)],
            integrator_gap: 0.0,
        });
    }

    // tail exponent for l < 2: f(u) ~ u^p
    let p = if l < 2.0 { kp1 / (2.0 - l) } else { f64::INFINITY };
    if p <= 1.0 {
        return Err(LabError::NoBlowup);
    }
    let tail = |cap: f64| -> f64 {
        if l == 2.0 {
            (-cap.powf(kp1) / kp1).exp() / cap.powf(k)
        } else {
            let c = (2.0 - l) / kp1;
            c.powf(-1.0 / (2.0 - l)) * cap.powf(1.0 - p) / (p - 1.0)
        }
    };
    let estimate = |cap: f64, raw_cap: f64, raw_half: Option<f64>| -> f64 {
        match raw_half {
            Some(prev) if l < 2.0 => raw_cap + (raw_cap - prev) / (2f64.powf(p - 1.0) - 1.0),
            _ => raw_cap + tail(cap),
        }
    };

    let mut cap = DEFAULT_U_CAP;
    let mut raw_prev = raw(cap);
    let mut est_prev = estimate(cap, raw_prev, None);
    let mut history = vec![(cap, est_prev)];
    for _ in 0..200 {
        let next = 2.0 * cap;
        let raw_next = raw(next);
        let est_next = estimate(next, raw_next, Some(raw_prev));
        history.push((next, est_next));
        let converged = (est_next - est_prev).abs() <= tol * est_next.abs();
        cap = next;
        raw_prev = raw_next;
        est_prev = est_next;
        if converged {
            break;
        }
    }

    let gap = VelocityFlow::integrate(params, 10.0 * est_prev, tol.max(1e-12))
        .ok()
        .and_then(|fl| {
            let level = DEFAULT_U_CAP.min(*fl.values.last()?);
            fl.time_of_level(level).map(|t| (t - raw(level)).abs())
        })
        .unwrap_or(f64::NAN);

    Ok(BlowupReport {
        t_est: est_prev,
        u_cap: cap,
        richardson_order: if l < 2.0 { p - 1.0 } else { 0.0 },
        history,
        integrator_gap: gap,
    })
}

/// `T(u_cap) = ∫_0^{u_cap} du/f(u)` without tail correction.
pub fn truncated_blowup_time(params: &ModelParams, u_cap: f64) -> f64 {
    let inv_f = |u: f64| 1.0 / velocity(params, u);
    let head = quad::integrate(inv_f, 0.0, u_cap.min(1.0), 0.0, 1e-15).value;
    if u_cap <= 1.0 {
        head
    } else {
        head + quad::integrate_graded(inv_f, 1.0, u_cap, 0.0, 1e-15).value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defoc(k: f64, l: f64) -> ModelParams {
        ModelParams::defocusing(k, l).unwrap()
    }

    #[test]
    fn velocity_examples() {
        assert_relative_eq!(velocity(&defoc(0.0, 3.0), 3.0), 0.25, max_relative = 1e-15);
        assert_relative_eq!(velocity(&defoc(1.0, 2.0), 1.0), (-0.5f64).exp(), max_relative = 1e-15);
        let foc = ModelParams::focusing(0.0, 2.0).unwrap();
        assert_relative_eq!(velocity(&foc, 1.0), std::f64::consts::E, max_relative = 1e-15);
    }

    #[test]
    fn velocity_clamps_past_plateau() {
        let p = defoc(1.0, 1.0);
        let plateau = plateau_value(&p).unwrap();
        assert_relative_eq!(plateau, 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(velocity(&p, plateau * 1.01), 0.0);
        assert!(velocity(&p, plateau * 0.99) > 0.0);
    }

    #[test]
    fn closed_forms() {
        let b = integrate_base(&defoc(0.0, 2.0), 2.0, DEFAULT_TOL).unwrap();
        let (u, v) = b.flow().unwrap().eval(1.0).unwrap();
        assert_relative_eq!(u, 2f64.ln(), max_relative = 1e-10);
        assert_relative_eq!(v, 0.5, max_relative = 1e-10);

        let b = integrate_base(&defoc(0.0, 3.0), 5.0, DEFAULT_TOL).unwrap();
        let (u, v) = b.flow().unwrap().eval(4.0).unwrap();
        assert_relative_eq!(u, 2.0, max_relative = 1e-10);
        assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn monotone_branch_on_samples() {
        for (k, l) in [(0.0, 2.0), (1.0, 1.5), (2.0, 3.0), (1.0, 1.0)] {
            let b = integrate_base(&defoc(k, l), 200.0, DEFAULT_TOL).unwrap();
            for i in 1..b.len() {
                assert!(b.u[i] >= b.u[i - 1], "u not monotone for ({k},{l})");
                assert!(b.u_t[i] <= b.u_t[i - 1], "u_t not monotone for ({k},{l})");
            }
        }
    }

    #[test]
    fn second_derivative_consistency() {
        let p = defoc(1.0, 2.5);
        let base = integrate_base(&p, 10.0, DEFAULT_TOL).unwrap();
        let flow = base.flow().unwrap();
        let mut errs = Vec::new();
        for &dt in &[1e-2, 5e-3] {
            let mut worst: f64 = 0.0;
            for i in 1..20 {
                let t = 0.4 * i as f64;
                let (um, _) = flow.eval(t - dt).unwrap();
                let (u0, v0) = flow.eval(t).unwrap();
                let (up, _) = flow.eval(t + dt).unwrap();
                let fd = (up - 2.0 * u0 + um) / (dt * dt);
                worst = worst.max((fd - eval_nonlinearity(&p, u0, v0)).abs());
            }
            errs.push(worst);
        }
        // O(dt^2): halving dt cuts the error by ~4
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[0] < 1e-4);
    }

    #[test]
    fn derivative_decay_at_large_time() {
        let p = defoc(0.0, 3.0);
        let alpha = p.exponents().alpha;
        let base = integrate_base(&p, 1.1e4, DEFAULT_TOL).unwrap();
        let flow = base.flow().unwrap();
        let t = 1e4;
        let h = 10.0;
        let u = |s: f64| flow.eval(s).unwrap().0;
        let d1 = (u(t + h) - u(t - h)) / (2.0 * h);
        let d2 = (u(t + h) - 2.0 * u(t) + u(t - h)) / (h * h);
        assert!(d1.abs() <= 10.0 * t.powf(alpha - 1.0));
        assert!(d2.abs() <= 10.0 * t.powf(alpha - 2.0));
    }

    #[test]
    fn rescaling_identities() {
        let p = defoc(0.0, 3.0);
        let base = integrate_base(&p, 10.0, DEFAULT_TOL).unwrap();
        let same = rescale_trajectory(&base, 1.0, 4, &p, &base.times).unwrap();
        for i in 0..base.len() {
            assert_relative_eq!(same.u[i], base.u[i], max_relative = 1e-15);
            assert_relative_eq!(same.u_t[i], base.u_t[i], max_relative = 1e-15);
        }
        let zero = rescale_trajectory(&base, 0.0, 4, &p, &[0.0, 1.0, 2.0]).unwrap();
        assert!(zero.u.iter().chain(&zero.u_t).all(|&x| x == 0.0));

        // beyond the base coverage: re-integrated, never extrapolated
        let r = rescale_trajectory(&base, 2.0, 4, &p, &[1.0]).unwrap();
        let exact = (513f64.sqrt() - 1.0) / 16.0;
        assert_relative_eq!(r.u[0], exact, max_relative = 1e-9);
    }

    #[test]
    fn joint_parameter_smoothness_near_zero() {
        // N(k+1) = 4 > m + 2 = 3: psi-derivatives up to order 3 vanish at psi = 0
        let p = defoc(0.0, 3.0);
        let base = integrate_base(&p, 2.0, DEFAULT_TOL).unwrap();
        let t = 1.0;
        let u = |psi: f64| rescale_trajectory(&base, psi, 4, &p, &[t]).unwrap().u[0];
        for order in 1..=3usize {
            let mut mags = Vec::new();
            for &h in &[1e-1, 1e-2, 1e-3] {
                let step = h / 10.0;
                // forward differences centred on psi = h
                let mut acc = 0.0;
                for j in 0..=order {
                    let c = (0..j).fold(1.0, |c, i| c * (order - i) as f64 / (i + 1) as f64);
                    let sgn = if (order - j) % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sgn * c * u(h + (j as f64 - order as f64 / 2.0) * step);
                }
                mags.push((acc / step.powi(order as i32)).abs());
            }
            assert!(mags[0] > mags[1] && mags[1] > mags[2], "order {order}: {mags:?}");
        }
    }

    #[test]
    fn focusing_rescale() {
        let p = ModelParams::focusing(0.0, 2.0).unwrap();
        let base = integrate_base(&p, 10.0, DEFAULT_TOL).unwrap();
        let r = rescale_focusing(&base, 0.25).unwrap();
        assert_relative_eq!(r.u_t[0], 4.0, max_relative = 1e-9);
        assert!(matches!(r.status, TrajectoryStatus::Blowup { t_est } if t_est == 0.25));
        let half = rescale_focusing(&base, 0.5).unwrap();
        for i in 0..half.len() {
            let t = half.times[i];
            if t < 0.45 {
                assert_relative_eq!(half.u[i], -(1.0 - 2.0 * t).ln(), max_relative = 1e-8, epsilon = 1e-14);
            }
        }
        assert!(rescale_focusing(&base, 0.0).is_err());
        assert!(rescale_focusing(&integrate_base(&defoc(0.0, 2.0), 1.0, 1e-10).unwrap(), 1.0).is_err());
    }

    #[test]
    fn blowup_cap_monotone_and_converging() {
        let p = ModelParams::focusing(0.0, 2.0).unwrap();
        let caps = [2.0, 4.0, 8.0, 16.0];
        let t: Vec<f64> = caps.iter().map(|&c| truncated_blowup_time(&p, c)).collect();
        for w in t.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        for w in d.windows(2) {
            assert!(w[1] * 4.0 <= w[0], "{d:?}");
        }
        let rep = blowup_time(&p, 1e-10).unwrap();
        for w in rep.history.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-15);
        }
        assert!(rep.integrator_gap < 1e-8, "{}", rep.integrator_gap);
    }

    #[test]
    fn blowup_rejects_defocusing() {
        assert_eq!(blowup_time(&defoc(0.0, 2.0), 1e-8), Err(LabError::NoBlowup));
    }

    #[test]
    fn ode_field_rejects_negative_psi() {
        use crate::spectral::Grid1D;
        let g = Grid1D::new(8.0, 16).unwrap();
        let p = defoc(0.0, 3.0);
        let base = integrate_base(&p, 1.0, DEFAULT_TOL).unwrap();
        let mut vals = vec![0.0; 16];
        vals[3] = -0.1;
        let f = Field::new(g, vals).unwrap();
        assert!(evolve_ode_field(&f, 1.0, &p, 4, &base).is_err());
    }

    #[test]
    fn csv_dump_format() {
        let b = integrate_base(&defoc(0.0, 2.0), 1.0, DEFAULT_TOL).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,u,u_t"));
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 3);
        assert!(!text.contains('\r'));
        let mantissa = first.split(',').nth(2).unwrap().split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
    }
}
