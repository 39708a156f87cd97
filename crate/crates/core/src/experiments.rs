//! The quantitative studies: small-dispersion scaling, norm inflation and
//! focusing lifespan collapse, plus parameter selection and slope fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{abs_pow, regularity, ModelParams, Sign};
use crate::ode::{self, OdeTrajectory};
use crate::pde::{
    discrepancy_vs_ode, effective_floor, energy_gamma_m, evolve, support_radius, Forcing, SolverConfig, WaveState,
};
use crate::report::{Column, ExperimentReport, Table};
use crate::spectral::{
    asymmetric_moment_data, bump_profile, plateau_profile, required_moments, rescale_data, scale_two_param,
    sobolev_norm, predict_data_norm, Field, Grid1D, SobolevOrder,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// `λ = γ^σ ε^{1/(s_c - s)}`.
    pub sigma: f64,
}

/// `λ = (ε γ^{(n+2)/2 - s})^{1/(s_c - s)}`, the scale at which the rescaled
/// data have norm `ε` (up to a fixed constant).
pub fn select_lambda(params: &ModelParams, s: f64, epsilon: f64, gamma: f64) -> Result<LambdaChoice> {
    let e = params.exponents();
    let n = params.n as f64;
    if !(s < e.s_c) {
        return Err(LabError::invalid("s", format!("must be below s_c = {}, got {s}", e.s_c)));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(LabError::invalid("epsilon", format!("must lie in (0, 1], got {epsilon}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(LabError::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    let gap = e.s_c - s;
    let top = (n + 2.0) / 2.0 - s;
    let lambda = (epsilon * gamma.powf(top)).powf(1.0 / gap);
    let sigma = top / gap;
    if !(sigma > 1.0) {
        return Err(LabError::invalid("s", format!("exponent sigma = {sigma} must exceed 1")));
    }
    if lambda > gamma {
        return Err(LabError::LambdaTooLarge { lambda, gamma });
    }
    Ok(LambdaChoice { lambda, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation in log space.
    pub residual: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(LabError::TooFewPoints { needed: 3, got: points.len() });
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(LabError::invalid("points", format!("values must be positive, got ({x}, {y})")));
    }
    let inc = points.windows(2).all(|w| w[1].0 > w[0].0);
    let dec = points.windows(2).all(|w| w[1].0 < w[0].0);
    if !(inc || dec) {
        return Err(LabError::invalid("points", "x must be strictly monotone"));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(LineFit { slope, intercept, residual })
}

fn check_decreasing(name: &'static str, list: &[f64]) -> Result<()> {
    if list.len() < 3 {
        return Err(LabError::TooFewPoints { needed: 3, got: list.len() });
    }
    if !list.windows(2).all(|w| w[1] < w[0]) {
        return Err(LabError::invalid(name, "must be strictly decreasing"));
    }
    Ok(())
}

fn check_gammas(list: &[f64]) -> Result<()> {
    check_decreasing("gamma_list", list)?;
    if let Some(g) = list.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(LabError::invalid("gamma_list", format!("entries must lie in (0, 1], got {g}")));
    }
    Ok(())
}

/// Largest `radius(t) - radius(t_0) - γ (t - t_0) - 2dx` over the samples;
/// nonpositive when the support stays in the propagation cone.
pub fn cone_excess(samples: &[WaveState], floor: f64, rel: f64) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Ok(0.0);
    };
    let dx = first.grid().dx();
    let r0 = support_radius(first, effective_floor(first, floor, rel))?;
    let mut worst = f64::NEG_INFINITY;
    for st in samples {
        let r = support_radius(st, effective_floor(st, floor, rel))?;
        worst = worst.max(r - r0 - st.gamma * (st.t - first.t) - 2.0 * dx);
    }
    Ok(worst)
}

/// Time `t_0` at which the mean of the ODE velocity field becomes visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T0Report {
    pub t0: f64,
    /// `t0` in units of the ODE time scale of the data amplitude.
    pub tau: f64,
    /// `A(t0) = ∫ ∂_t φ^{(0)}(t0) dx`.
    pub a_t0: f64,
    pub threshold: f64,
    /// Finite-difference `∂_t^{k+1} A(0)` (NaN for non-integer `k`).
    pub derivative_measured: f64,
    /// `±k! ∫ |φ|^{k+l-1} φ dx`.
    pub derivative_predicted: f64,
}

fn mean_velocity(phi: &Field, t: f64, params: &ModelParams, base: &OdeTrajectory) -> Result<f64> {
    let (_, v) = ode::ode_field_from_data(phi, t, params, base)?;
    Ok(v.integral())
}

/// Smallest sampled `t0` with `|∫ ∂_t φ^{(0)}(t0) dx| ≥ threshold`, where
/// `φ^{(0)}` is the pointwise ODE flow of the data `(0, φ)`. Samples are
/// geometric in units of the data time scale, up to `tau_horizon`.
pub fn find_t0(phi: &Field, params: &ModelParams, threshold: f64, tau_horizon: f64) -> Result<T0Report> {
    if !(threshold > 0.0) {
        return Err(LabError::invalid("threshold", "must be positive"));
    }
    let height = phi.max_abs();
    if height == 0.0 {
        return Err(LabError::DegenerateData("zero data".into()));
    }
    let (k, l) = (params.k, params.l);
    let time_scale = height.powf(-params.homogeneity() / (k + 1.0));
    let base = ode::integrate_base(params, 1.0, ode::DEFAULT_TOL)?;

    let dx = phi.grid.dx();
    let moment: f64 = phi.values.iter().map(|&p| abs_pow(p, k + l - 1.0) * p).sum::<f64>() * dx;
    let fact = if crate::model::is_integer(k) { (1..=k as u64).map(|i| i as f64).product::<f64>() } else { f64::NAN };
    let derivative_predicted = params.sign.factor() * fact * moment;
    let derivative_measured = if crate::model::is_integer(k) {
        let order = k as usize + 1;
        let diff = |h: f64| -> Result<f64> {
            let mut acc = 0.0;
            for j in 0..=order {
                let c = (0..j).fold(1.0, |c, i| c * (order - i) as f64 / (i + 1) as f64);
                let sgn = if (order - j).is_multiple_of(2) { 1.0 } else { -1.0 };
                acc += sgn * c * mean_velocity(phi, j as f64 * h, params, &base)?;
            }
            Ok(acc / h.powi(order as i32))
        };
        let h = 1e-3 * time_scale;
        2.0 * diff(0.5 * h)? - diff(h)?
    } else {
        f64::NAN
    };

    let mut tau = 0.0;
    let mut step = 1e-4;
    while tau <= tau_horizon {
        let t = tau * time_scale;
        let a = mean_velocity(phi, t, params, &base)?;
        if a.abs() >= threshold {
            return Ok(T0Report { t0: t, tau, a_t0: a, threshold, derivative_measured, derivative_predicted });
        }
        tau = if tau == 0.0 { step } else { tau * 2f64.powf(0.125) };
        step = tau;
    }
    Err(LabError::DegenerateData(format!(
        "|∫ ∂_t φ^(0) dx| stays below {threshold:.3e} up to t = {:.3e} (∫|φ|^(k+l-1) φ dx = {moment:.3e})",
        tau_horizon * time_scale
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierCheck {
    pub passed: bool,
    /// `min |F(∂_t u)(ξ)|` over the probe region divided by `λ^{α-1}(γ/λ)^{-n}`.
    pub constant: f64,
    pub probed_modes: usize,
}

/// Lower bound `|F(∂_t u)(ξ)| ≥ c λ^{α-1} (γ/λ)^{-n}` for `|ξ| ≤ c γ/λ`.
pub fn fourier_lower_bound_check(
    v: &Field,
    gamma: f64,
    lambda: f64,
    params: &ModelParams,
    c_probe: f64,
) -> Result<FourierCheck> {
    if !(c_probe > 0.0) {
        return Err(LabError::invalid("c_probe", "must be positive"));
    }
    let alpha = params.exponents().alpha;
    let scale = lambda.powf(alpha - 1.0) * (gamma / lambda).powi(-(params.n as i32));
    let limit = c_probe * gamma / lambda;
    let spec = v.fourier();
    let mut min = f64::INFINITY;
    let mut count = 0;
    for (j, c) in spec.iter().enumerate() {
        if v.grid.xi(j).abs() <= limit {
            min = min.min(c.norm());
            count += 1;
        }
    }
    let constant = min / scale;
    Ok(FourierCheck { passed: constant >= c_probe, constant, probed_modes: count })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationConfig {
    pub params: ModelParams,
    pub s: f64,
    pub epsilon: f64,
    pub gamma_list: Vec<f64>,
    /// Moment order of the data; the smallest admissible one when absent.
    pub q: Option<usize>,
    /// `t0` threshold as a fraction of `‖φ‖_{L¹}`.
    pub t0_fraction: f64,
    pub tau_horizon: f64,
    /// Spatial scale `W` of the data `φ`.
    pub data_scale: f64,
    /// Grid of the unit-scale profile.
    pub length: f64,
    pub points: usize,
    pub bump_radius: f64,
    pub bump_spacing: f64,
    pub bump_dilation: f64,
    pub c_probe: f64,
    /// Required inflation ratio at the smallest `γ`.
    pub min_final_ratio: f64,
}

impl Default for InflationConfig {
    fn default() -> Self {
        InflationConfig {
            params: ModelParams::defocusing(0.0, 3.0).expect("valid"),
            s: 0.25,
            epsilon: 0.5,
            gamma_list: vec![0.1, 0.05, 0.025],
            q: None,
            t0_fraction: 1e-3,
            tau_horizon: 1e4,
            data_scale: 1e-5,
            length: 24.0,
            points: 2048,
            bump_radius: 1.0,
            bump_spacing: 4.0,
            bump_dilation: 3.0,
            c_probe: 0.1,
            min_final_ratio: 5.0,
        }
    }
}

impl InflationConfig {
    pub fn validate(&self) -> Result<usize> {
        let p = &self.params;
        p.validate()?;
        let e = p.exponents();
        let n = p.n as f64;
        if p.n != 1 {
            return Err(LabError::invalid("n", "inflation runs are one-dimensional"));
        }
        if !(self.s < e.s_c) {
            return Err(LabError::invalid("s", format!("must be below s_c = {}, got {}", e.s_c, self.s)));
        }
        if !(self.s <= (2.0 - n) / 2.0) {
            return Err(LabError::invalid("s", format!("must be <= (2-n)/2 = {}, got {}", (2.0 - n) / 2.0, self.s)));
        }
        let kl_odd = crate::model::is_integer(p.k + p.l) && ((p.k + p.l) as i64) % 2 == 1;
        if !(kl_odd || p.l >= p.k + 1.0) {
            return Err(LabError::invalid("l", "need k + l odd or l >= k + 1"));
        }
        check_gammas(&self.gamma_list)?;
        if !(self.data_scale > 0.0 && self.data_scale <= 1.0) {
            return Err(LabError::invalid("data_scale", "must lie in (0, 1]"));
        }
        if !(self.t0_fraction > 0.0) {
            return Err(LabError::invalid("t0_fraction", "must be positive"));
        }
        let needed = required_moments(self.s - 1.0, p.n);
        let q = self.q.unwrap_or(needed);
        if q < needed {
            return Err(LabError::MomentConditionViolated { s: self.s - 1.0, required: needed, found: q });
        }
        Ok(q)
    }
}

struct InflationRow {
    gamma: f64,
    lambda: f64,
    sigma: f64,
    data_norm: f64,
    predicted: f64,
    output_norm: f64,
    fourier: FourierCheck,
    cone: f64,
    steps: usize,
}

/// Norm-inflation pipeline. The data `φ` live at scale `W`; the PDE is run on
/// the unit-scale profile and mapped back with the exact scaling symmetry
/// `u ↦ W^α u(t/W, x/W)` before the `(γ, λ)` rescaling.
pub fn inflation_run(cfg: &InflationConfig) -> Result<ExperimentReport> {
    let q = cfg.validate()?;
    let p = cfg.params;
    let e = p.exponents();
    let w = cfg.data_scale;
    let first = -0.5 * q as f64 * cfg.bump_spacing;
    let unit = unit_grid(cfg, first, q)?;
    let raw = asymmetric_moment_data(unit, first, cfg.bump_radius, q, cfg.bump_spacing, cfg.bump_dilation)?;

    // normalise so that φ = W^{α-1} ψ(·/W) has unit Ḣ^{s-1} norm
    let hom = SobolevOrder::homogeneous(cfg.s - 1.0);
    let raw_norm = sobolev_norm(&raw, &hom)?;
    let psi = raw.scaled(w.powf(-(e.s_c - cfg.s)) / raw_norm);
    let to_phi = w.powf(e.alpha - 1.0);
    let phi = Field::new(unit.scaled(w)?, psi.values.iter().map(|x| x * to_phi).collect())?;
    let phi_norm = sobolev_norm(&phi, &hom)?;

    let threshold = cfg.t0_fraction * phi.l1_norm();
    let t0 = find_t0(&phi, &p, threshold, cfg.tau_horizon)?;
    let t_unit = t0.t0 / w;

    let rows: Vec<InflationRow> = cfg
        .gamma_list
        .par_iter()
        .map(|&gamma| {
            inflation_point(cfg, &psi, &phi, t_unit, q, gamma).map_err(|err| err.at_point(format!("gamma={gamma}")))
        })
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport::new("inflate", serde_json::to_value(cfg).unwrap_or_default());
    let col = |f: &dyn Fn(&InflationRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let ratio = col(&|r| r.output_norm / r.data_norm);
    let data_ratio = col(&|r| r.data_norm / r.predicted);
    let table = Table::new("inflation")
        .num("gamma", col(&|r| r.gamma))
        .num("lambda", col(&|r| r.lambda))
        .num("sigma", col(&|r| r.sigma))
        .num("gamma_over_lambda", col(&|r| r.gamma / r.lambda))
        .num("data_norm", col(&|r| r.data_norm))
        .num("predicted_data_norm", col(&|r| r.predicted))
        .num("data_norm_ratio", data_ratio.clone())
        .num("output_norm", col(&|r| r.output_norm))
        .num("inflation_ratio", ratio.clone())
        .num("fourier_constant", col(&|r| r.fourier.constant))
        .with("fourier_pass", Column::Bool(rows.iter().map(|r| r.fourier.passed).collect()))
        .num("cone_excess", col(&|r| r.cone))
        .num("steps", col(&|r| r.steps as f64));

    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.gamma / r.lambda, r.output_norm)).collect();
    let fit = fit_loglog_slope(&points)?;
    let target = 1.0 - p.n as f64 / 2.0 - cfg.s;
    let exp_ok = if target.abs() > 1e-12 {
        (fit.slope - target).abs() <= 0.2 * target.abs()
    } else {
        fit.slope.abs() <= 0.05
    };
    let spread = spread(&data_ratio);
    let increasing = ratio.windows(2).all(|w| w[1] > w[0]);
    let max_ratio = ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    report.push_verdict(
        "data_norm_identity",
        spread <= 0.02,
        "inflation.data_norm_ratio",
        format!("relative spread {spread:.3e} (limit 2e-2)"),
    );
    report.push_verdict(
        "ratio_increasing",
        increasing,
        "inflation.inflation_ratio",
        format!("ratios {ratio:?}, largest {max_ratio:.4}"),
    );
    let last_ratio = *ratio.last().expect("three points");
    report.push_verdict(
        "final_ratio",
        last_ratio >= cfg.min_final_ratio,
        "inflation.inflation_ratio",
        format!("ratio {last_ratio:.4} at the smallest gamma (needs >= {})", cfg.min_final_ratio),
    );
    report.push_verdict(
        "growth_exponent",
        exp_ok,
        "inflation.output_norm",
        format!("fitted {:.4} vs 1 - n/2 - s = {target:.4}", fit.slope),
    );
    report.push_verdict(
        "fourier_lower_bound",
        rows.iter().all(|r| r.fourier.passed),
        "inflation.fourier_pass",
        format!("c_probe = {}", cfg.c_probe),
    );
    report.push_verdict(
        "finite_speed",
        rows.iter().all(|r| r.cone <= 0.0),
        "inflation.cone_excess",
        "support growth within γt + 2dx",
    );
    report.tables.push(table);
    report.meta("moment_order", q);
    report.meta("phi_norm", phi_norm);
    report.meta("t0", t0);
    report.meta("t_unit", t_unit);
    report.meta("fit", fit);
    report.meta("max_ratio", max_ratio);
    report.meta("unit_grid", (unit.length, unit.points));
    Ok(report)
}

/// The configured grid, lengthened at fixed `dx` until the bump layout fits
/// inside the guard band.
fn unit_grid(cfg: &InflationConfig, first: f64, q: usize) -> Result<Grid1D> {
    let last = first + q as f64 * cfg.bump_spacing;
    let extent = (first.abs() + cfg.bump_radius).max(last.abs() + cfg.bump_radius * cfg.bump_dilation.powi(q as i32));
    let needed = 4.2 * extent;
    if needed <= cfg.length {
        return Grid1D::new(cfg.length, cfg.points);
    }
    let dx = cfg.length / cfg.points as f64;
    let points = ((needed / dx).ceil() as usize).next_power_of_two();
    Grid1D::new(points as f64 * dx, points)
}

fn spread(x: &[f64]) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi / lo - 1.0
}

fn inflation_point(
    cfg: &InflationConfig,
    psi: &Field,
    phi: &Field,
    t_unit: f64,
    q: usize,
    gamma: f64,
) -> Result<InflationRow> {
    let p = cfg.params;
    let e = p.exponents();
    let w = cfg.data_scale;
    let choice = select_lambda(&p, cfg.s, cfg.epsilon, gamma)?;
    let lambda = choice.lambda;
    let ord = SobolevOrder::inhomogeneous(cfg.s - 1.0);

    let data = rescale_data(phi, gamma, lambda, &p)?;
    let data_norm = sobolev_norm(&data, &ord)?;
    let predicted = predict_data_norm(&p, cfg.s, gamma, lambda, q)?;

    let init = WaveState::from_data(psi, gamma)?;
    let solver = SolverConfig { t_end: t_unit, sample_times: vec![0.0, 0.5 * t_unit, t_unit], ..Default::default() };
    let out = evolve(&init, &Forcing::Model(p), &solver)?;
    if out.samples.len() != 3 {
        return Err(LabError::Instability { t: t_unit, detail: format!("run ended early: {:?}", out.status) });
    }
    let cone = cone_excess(&out.samples, solver.support_floor, solver.support_rel_floor)?;
    let last = &out.samples[2];
    // unit scale -> scale W: u ↦ W^α u, v ↦ W^{α-1} v, x ↦ W x
    let grid_w = last.u.grid.scaled(w)?;
    let u_w = Field::new(grid_w, last.u.values.iter().map(|x| x * w.powf(e.alpha)).collect())?;
    let v_w = Field::new(grid_w, last.v.values.iter().map(|x| x * w.powf(e.alpha - 1.0)).collect())?;
    let (_, v_scaled) = scale_two_param(&u_w, &v_w, gamma, lambda, &p)?;
    let output_norm = sobolev_norm(&v_scaled, &ord)?;
    let fourier = fourier_lower_bound_check(&v_scaled, gamma, lambda, &p, cfg.c_probe)?;
    Ok(InflationRow {
        gamma,
        lambda,
        sigma: choice.sigma,
        data_norm,
        predicted,
        output_norm,
        fourier,
        cone,
        steps: out.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub params: ModelParams,
    pub gamma_list: Vec<f64>,
    /// Final time of every run.
    pub t_end: f64,
    /// Energy order; the smallest admissible one when absent.
    pub m: Option<usize>,
    pub length: f64,
    pub points: usize,
    pub bump_radius: f64,
    pub samples: usize,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        DispersionConfig {
            params: ModelParams::defocusing(0.0, 3.0).expect("valid"),
            gamma_list: vec![0.1, 0.05, 0.025, 0.0125],
            t_end: 1.0,
            m: None,
            length: 8.0,
            points: 4096,
            bump_radius: 1.0,
            samples: 20,
        }
    }
}

struct DispersionRun {
    gamma: f64,
    times: Vec<f64>,
    discrepancy: Vec<f64>,
    energy: Vec<f64>,
    radius: Vec<f64>,
    cone: f64,
}

/// Discrepancy between the dispersive solution with data `(0, ψ^{N(k+1)})`
/// and the pointwise ODE flow, for each `γ`, with a log-log slope fit.
pub fn dispersion_scaling_study(cfg: &DispersionConfig) -> Result<ExperimentReport> {
    let p = cfg.params;
    p.validate()?;
    check_gammas(&cfg.gamma_list)?;
    if !(cfg.t_end > 0.0) || cfg.samples == 0 {
        return Err(LabError::invalid("t_end", "need t_end > 0 and at least one sample"));
    }
    let reg = regularity(&p)?;
    let m = match cfg.m {
        Some(m) if (m as i64) < reg.m || (m as i64) > reg.m0 => {
            return Err(LabError::invalid("m", format!("must lie in [{}, {}], got {m}", reg.m, reg.m0)));
        }
        Some(m) => m,
        None => reg.m as usize,
    };
    // N(k+1) > m + 2 for the chosen m
    let mut big_n = reg.big_n;
    while (big_n as f64) * (p.k + 1.0) <= (m + 2) as f64 {
        big_n += 1;
    }
    let grid = Grid1D::new(cfg.length, cfg.points)?;
    let psi = crate::spectral::bump(grid, 0.0, cfg.bump_radius, 1.0)?;
    let power = big_n as f64 * (p.k + 1.0);
    let phi = psi.map(|x| x.powf(power))?;
    let times: Vec<f64> = (0..=cfg.samples).map(|i| cfg.t_end * i as f64 / cfg.samples as f64).collect();
    let base = ode::integrate_base(&p, cfg.t_end, ode::DEFAULT_TOL)?;
    let ode_fields: Vec<(Field, Field)> =
        times.iter().map(|&t| ode::evolve_ode_field(&psi, t, &p, big_n, &base)).collect::<Result<_>>()?;

    let runs: Vec<DispersionRun> = cfg
        .gamma_list
        .par_iter()
        .map(|&gamma| {
            dispersion_point(&p, &phi, gamma, &times, &ode_fields, m).map_err(|e| e.at_point(format!("gamma={gamma}")))
        })
        .collect::<Result<_>>()?;

    let sup: Vec<f64> = runs.iter().map(|r| r.discrepancy.iter().cloned().fold(0.0, f64::max)).collect();
    let points: Vec<(f64, f64)> = runs.iter().zip(&sup).map(|(r, s)| (r.gamma, *s)).collect();
    let fit = fit_loglog_slope(&points)?;

    let mut report = ExperimentReport::new("dispersion", serde_json::to_value(cfg).unwrap_or_default());
    report.tables.push(
        Table::new("sweep")
            .num("gamma", runs.iter().map(|r| r.gamma).collect())
            .num("sup_discrepancy", sup.clone())
            .num("cone_excess", runs.iter().map(|r| r.cone).collect()),
    );
    let mut log = Table::new("runlog");
    let flat = |f: &dyn Fn(&DispersionRun, usize) -> f64| -> Vec<f64> {
        runs.iter().flat_map(|r| (0..r.times.len()).map(move |i| f(r, i))).collect()
    };
    log = log
        .num("gamma", flat(&|r, _| r.gamma))
        .num("t", flat(&|r, i| r.times[i]))
        .num("discrepancy", flat(&|r, i| r.discrepancy[i]))
        .num("E_gamma_m", flat(&|r, i| r.energy[i]))
        .num("support_radius", flat(&|r, i| r.radius[i]));
    report.tables.push(log);

    let decreasing = sup.windows(2).all(|w| w[1] < w[0]);
    let monotone_t = runs.iter().all(|r| {
        let mut best: f64 = 0.0;
        r.discrepancy.iter().all(|&d| {
            let ok = d.max(best) >= best;
            best = best.max(d);
            ok
        })
    });
    report.push_verdict(
        "gamma_slope",
        fit.slope >= 0.5 - 0.05,
        "sweep.sup_discrepancy",
        format!("fitted slope {:.4} (needs >= 0.45)", fit.slope),
    );
    report.push_verdict(
        "decreasing_in_gamma",
        decreasing && monotone_t,
        "sweep.sup_discrepancy",
        "sup discrepancy shrinks with γ",
    );
    report.push_verdict(
        "finite_speed",
        runs.iter().all(|r| r.cone <= 0.0),
        "sweep.cone_excess",
        "support growth within γt + 2dx",
    );
    report.meta("fit", fit);
    report.meta("m", m);
    report.meta("big_n", big_n);
    report.meta("t_end", cfg.t_end);
    Ok(report)
}

fn dispersion_point(
    p: &ModelParams,
    phi: &Field,
    gamma: f64,
    times: &[f64],
    ode_fields: &[(Field, Field)],
    m: usize,
) -> Result<DispersionRun> {
    let init = WaveState::from_data(phi, gamma)?;
    let t_end = *times.last().expect("samples");
    let cfg = SolverConfig { t_end, sample_times: times.to_vec(), ..Default::default() };
    let out = evolve(&init, &Forcing::Model(*p), &cfg)?;
    if out.samples.len() != times.len() {
        return Err(LabError::Instability { t: t_end, detail: format!("run ended early: {:?}", out.status) });
    }
    let discrepancy = discrepancy_vs_ode(&out.samples, ode_fields, m)?;
    let mut energy = Vec::with_capacity(times.len());
    let mut radius = Vec::with_capacity(times.len());
    for (st, (u0, v0)) in out.samples.iter().zip(ode_fields) {
        energy.push(energy_gamma_m(&st.u.sub(u0)?, &st.v.sub(v0)?, gamma, m)?.total);
        radius.push(support_radius(st, effective_floor(st, cfg.support_floor, cfg.support_rel_floor))?);
    }
    let cone = cone_excess(&out.samples, cfg.support_floor, cfg.support_rel_floor)?;
    Ok(DispersionRun { gamma, times: times.to_vec(), discrepancy, energy, radius, cone })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusingConfig {
    pub params: ModelParams,
    pub s_list: Vec<f64>,
    pub a_list: Vec<f64>,
    /// Plateau `φ = 1` on `|x| ≤ 1 + d`.
    pub d: f64,
    pub transition: f64,
    /// Zero-mean correction bumps of this radius centred at `±correction_center`.
    pub correction_radius: f64,
    pub correction_center: f64,
    /// Domain length in units of `a`.
    pub length: f64,
    pub points: usize,
    /// Interior check time as a fraction of `a`.
    pub probe: f64,
    pub t_star_tol: f64,
    pub interior_tol: f64,
}

impl Default for FocusingConfig {
    fn default() -> Self {
        FocusingConfig {
            params: ModelParams::focusing(0.0, 2.0).expect("valid"),
            s_list: vec![0.0, 0.25],
            a_list: vec![0.5, 0.25, 0.125],
            d: 0.25,
            transition: 0.5,
            correction_radius: 3.75,
            correction_center: 5.75,
            length: 42.0,
            points: 4096,
            probe: 0.8,
            t_star_tol: 0.02,
            interior_tol: 1e-4,
        }
    }
}

struct FocusingRun {
    a: f64,
    t_star: f64,
    interior_err: f64,
    data_norms: Vec<f64>,
    proxy: Vec<(f64, Vec<f64>)>,
    cone: f64,
}

/// Plateau profile with zero-mean correction bumps, in units of `a`.
fn focusing_profile(cfg: &FocusingConfig, grid: Grid1D, a: f64) -> Result<Field> {
    let inner = 1.0 + cfg.d;
    let plate = Field::from_fn(grid, |x| plateau_profile(x / a, 0.0, inner, cfg.transition, 1.0))?;
    let (c, r) = (cfg.correction_center, cfg.correction_radius);
    let corr =
        Field::from_fn(grid, |x| bump_profile(x / a, c, r, 1.0) + bump_profile(x / a, -c, r, 1.0))?;
    let height = plate.values.iter().sum::<f64>() / corr.values.iter().sum::<f64>();
    if !(height < 1.0) {
        return Err(LabError::invalid("correction_radius", format!("correction height {height:.3} must stay below 1")));
    }
    let out = plate.sub(&corr.scaled(height))?;
    out.check_guard_band()?;
    Ok(out)
}

/// Lifespan of data `(0, (T/a) φ(x/a))` with `φ = 1` on `|x| ≤ 1 + d`.
pub fn focusing_lifespan_study(cfg: &FocusingConfig) -> Result<ExperimentReport> {
    let p = cfg.params;
    p.validate()?;
    if p.sign != Sign::Focusing {
        return Err(LabError::invalid("sign", "the lifespan study needs the focusing equation"));
    }
    check_decreasing("a_list", &cfg.a_list)?;
    if cfg.s_list.is_empty() {
        return Err(LabError::invalid("s_list", "need at least one order"));
    }
    let n = p.n as f64;
    let blow = ode::blowup_time(&p, 1e-12)?;
    let base = ode::integrate_base(&p, 2.0 * blow.t_est, ode::DEFAULT_TOL)?;

    let runs: Vec<FocusingRun> = cfg
        .a_list
        .par_iter()
        .map(|&a| focusing_point(cfg, &base, blow.t_est, a).map_err(|e| e.at_point(format!("a={a}"))))
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport::new("focusing", serde_json::to_value(cfg).unwrap_or_default());
    let mut life = Table::new("lifespan")
        .num("a", runs.iter().map(|r| r.a).collect())
        .num("t_star", runs.iter().map(|r| r.t_star).collect())
        .num("t_star_over_a", runs.iter().map(|r| r.t_star / r.a).collect())
        .num("interior_rel_err", runs.iter().map(|r| r.interior_err).collect())
        .num("cone_excess", runs.iter().map(|r| r.cone).collect());
    for (i, s) in cfg.s_list.iter().enumerate() {
        life = life.num(format!("data_norm_s{s}"), runs.iter().map(|r| r.data_norms[i]).collect());
    }
    let mut loc = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in &runs {
        for (t, vals) in &r.proxy {
            for (i, s) in cfg.s_list.iter().enumerate() {
                loc.0.push(r.a);
                loc.1.push(*t);
                loc.2.push(*s);
                loc.3.push(vals[i]);
            }
        }
    }
    report.tables.push(life);
    report.tables.push(
        Table::new("localized").num("a", loc.0).num("t", loc.1).num("s", loc.2).num("norm", loc.3),
    );

    let bound_ok = runs.iter().all(|r| r.t_star <= r.a * (1.0 + cfg.t_star_tol));
    report.push_verdict(
        "lifespan_bound",
        bound_ok,
        "lifespan.t_star",
        format!("t*(a) <= a (1 + {})", cfg.t_star_tol),
    );
    let worst = runs.iter().map(|r| r.interior_err).fold(0.0, f64::max);
    report.push_verdict(
        "interior_oracle",
        worst <= cfg.interior_tol,
        "lifespan.interior_rel_err",
        format!("max relative error {worst:.3e} at t = {} a", cfg.probe),
    );
    let ratios: Vec<f64> = runs.iter().map(|r| r.t_star / r.a).collect();
    report.push_verdict(
        "scale_invariance",
        spread(&ratios) <= cfg.t_star_tol,
        "lifespan.t_star_over_a",
        format!("relative spread {:.3e}", spread(&ratios)),
    );
    // a decreases along the list, so t* must not increase
    report.push_verdict(
        "monotone_in_a",
        runs.windows(2).all(|w| w[1].t_star <= w[0].t_star),
        "lifespan.t_star",
        "t*(a) non-decreasing in a",
    );
    let mut slopes = Vec::new();
    for (i, s) in cfg.s_list.iter().enumerate() {
        let pts: Vec<(f64, f64)> = runs.iter().map(|r| (r.a, r.data_norms[i])).collect();
        let fit = fit_loglog_slope(&pts)?;
        let target = n / 2.0 - s;
        let ok = (fit.slope - target).abs() <= 0.02 * target.abs().max(1e-12);
        report.push_verdict(
            &format!("data_norm_slope_s{s}"),
            ok,
            &format!("lifespan.data_norm_s{s}"),
            format!("fitted {:.6} vs n/2 - s = {target}", fit.slope),
        );
        slopes.push(fit.slope);
    }
    report.push_verdict(
        "finite_speed",
        runs.iter().all(|r| r.cone <= 0.0),
        "lifespan.cone_excess",
        "support growth within t + 2dx",
    );
    report.meta("blowup_time", blow.t_est);
    report.meta("data_norm_slopes", slopes);
    report.meta("extrapolation", p.l != 2.0);
    Ok(report)
}

fn focusing_point(cfg: &FocusingConfig, base: &OdeTrajectory, t_blow: f64, a: f64) -> Result<FocusingRun> {
    let p = cfg.params;
    let grid = Grid1D::new(cfg.length * a, cfg.points)?;
    let phi = focusing_profile(cfg, grid, a)?;
    let data = phi.scaled(t_blow / a);
    let data_norms =
        cfg.s_list.iter().map(|&s| sobolev_norm(&data, &SobolevOrder::homogeneous(s - 1.0))).collect::<Result<_>>()?;

    let fractions = [0.0, 0.2, 0.4, 0.6, cfg.probe, 0.9, 0.95];
    let mut sample_times: Vec<f64> = fractions.iter().map(|f| f * a).collect();
    sample_times.sort_by(f64::total_cmp);
    sample_times.dedup();
    let solver = SolverConfig { t_end: 1.5 * a, sample_times, ..Default::default() };
    let init = WaveState::from_data(&data, 1.0)?;
    let out = evolve(&init, &Forcing::Model(p), &solver)?;
    let t_star = match out.status {
        crate::pde::RunStatus::Blowup { t_star } => t_star,
        crate::pde::RunStatus::Completed => f64::INFINITY,
    };

    let flow = base.flow().ok_or_else(|| LabError::invalid("base", "missing dense solution"))?;
    let inner = (1.0 + cfg.d) * a;
    let dx = grid.dx();
    let probe_t = cfg.probe * a;
    let probe = out
        .samples
        .iter()
        .find(|st| st.t == probe_t)
        .ok_or_else(|| LabError::Instability { t: probe_t, detail: "blow-up before the interior probe".into() })?;
    let (exact, _) = flow.eval(t_blow * probe_t / a)?;
    let mut interior_err: f64 = 0.0;
    for i in 0..grid.points {
        if grid.x(i).abs() <= inner - probe_t - 2.0 * dx {
            interior_err = interior_err.max((probe.u.values[i] - exact).abs() / exact.abs());
        }
    }

    let proxy = out
        .samples
        .iter()
        .filter(|st| st.t < inner)
        .map(|st| {
            let rad = inner - st.t;
            let cut = Field::from_fn(grid, |x| plateau_profile(x / rad, 0.0, 0.5, 0.5, 1.0))?;
            let local = Field::new(grid, st.u.values.iter().zip(&cut.values).map(|(u, c)| u * c).collect())?;
            let vals = cfg
                .s_list
                .iter()
                .map(|&s| sobolev_norm(&local, &SobolevOrder::homogeneous(s)))
                .collect::<Result<Vec<f64>>>()?;
            Ok((st.t, vals))
        })
        .collect::<Result<Vec<_>>>()?;
    let cone = cone_excess(&out.samples, solver.support_floor, solver.support_rel_floor)?;
    Ok(FocusingRun { a, t_star, interior_err, data_norms, proxy, cone })
}
