//! Command-line front end. Every subcommand takes a flat set of keys that can
//! come from flags or from a TOML file (`--config`); flags win. The resolved
//! keys are echoed to `config-echo.toml` so a run can be replayed exactly.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::experiments::{
    dispersion_scaling_study, focusing_lifespan_study, inflation_run, DispersionConfig, FocusingConfig,
    InflationConfig,
};
use crate::model::{regularity, ModelParams, Sign};
use crate::ode;
use crate::report::{ExperimentReport, Table};
use crate::spectral::{bump_profile, sobolev_norm, Field, Grid1D, SobolevOrder};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Output directory used when neither `--out` nor `SLWLAB_OUT` is set.
pub const DEFAULT_OUT: &str = "slwlab-out";

#[derive(Debug, Parser)]
#[command(name = "slwlab", version, about = "Semilinear wave laboratory: ODE oracles, spectral norms and PDE studies")]
pub struct Cli {
    /// Output directory (default: $SLWLAB_OUT, then ./slwlab-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML file with the subcommand's keys; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parameter sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scaling exponents and regularity indices.
    Exponents(ExponentsOpts),
    /// ODE trajectory with data (0, 1).
    Ode(OdeOpts),
    /// Blow-up time of the focusing ODE.
    Blowup(BlowupOpts),
    /// Dilation law and Parseval check for the Sobolev norms.
    Norms(NormsOpts),
    /// Small-dispersion discrepancy sweep.
    Dispersion(DispersionOpts),
    /// Norm-inflation study.
    Inflate(InflateOpts),
    /// Focusing lifespan study.
    Focusing(FocusingOpts),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Exponents(_) => "exponents",
            Command::Ode(_) => "ode",
            Command::Blowup(_) => "blowup",
            Command::Norms(_) => "norms",
            Command::Dispersion(_) => "dispersion",
            Command::Inflate(_) => "inflate",
            Command::Focusing(_) => "focusing",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentsOpts {
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub sign: Option<Sign>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeOpts {
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub sign: Option<Sign>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Bound on the relative drift of the conserved quantity.
    #[arg(long)]
    pub drift_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupOpts {
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub sign: Option<Sign>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsOpts {
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Half distance between the two opposite bumps of the profile.
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub dilations: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub orders: Option<Vec<f64>>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionOpts {
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub sign: Option<Sign>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long = "T", visible_alias = "t-end")]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflateOpts {
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub sign: Option<Sign>,
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    /// Moment order (0 or absent: smallest admissible).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub t0_fraction: Option<f64>,
    #[arg(long)]
    pub tau_horizon: Option<f64>,
    #[arg(long)]
    pub data_scale: Option<f64>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub dilation: Option<f64>,
    #[arg(long)]
    pub c_probe: Option<f64>,
    #[arg(long)]
    pub min_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusingOpts {
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<f64>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub sign: Option<Sign>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub orders: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub transition: Option<f64>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub probe: Option<f64>,
    #[arg(long)]
    pub t_star_tol: Option<f64>,
    #[arg(long)]
    pub interior_tol: Option<f64>,
}

fn need<T: Clone>(v: &Option<T>, name: &'static str) -> Result<T> {
    v.clone().ok_or_else(|| LabError::invalid(name, "missing required key"))
}

fn model(k: &Option<f64>, l: &Option<f64>, n: &Option<u32>, sign: &Option<Sign>) -> Result<ModelParams> {
    ModelParams::new(need(k, "k")?, need(l, "l")?, need(n, "n")?, need(sign, "sign")?)
}

/// A subcommand's key set: defaults, validation into a study config, and the
/// study itself.
trait Study: Serialize + DeserializeOwned + Sized + Sync {
    fn defaults() -> Self;
    /// Checks every precondition that does not need a computation.
    fn check(&self) -> Result<()>;
    fn execute(&self) -> Result<ExperimentReport>;
}

impl Study for ExponentsOpts {
    fn defaults() -> Self {
        ExponentsOpts { k: Some(0.0), l: Some(3.0), n: Some(1), sign: Some(Sign::Defocusing) }
    }

    fn check(&self) -> Result<()> {
        model(&self.k, &self.l, &self.n, &self.sign).map(|_| ())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        let p = model(&self.k, &self.l, &self.n, &self.sign)?;
        let e = p.exponents();
        let mut r = ExperimentReport::new("exponents", serde_json::Value::Null);
        r.tables.push(
            Table::new("exponents")
                .num("alpha", vec![e.alpha])
                .num("s_c", vec![e.s_c])
                .num("s_tilde", vec![e.s_tilde])
                .num("homogeneity", vec![p.homogeneity()]),
        );
        match regularity(&p) {
            Ok(reg) => r.tables.push(
                Table::new("regularity")
                    .num("m0", vec![reg.m0 as f64])
                    .num("big_n", vec![reg.big_n as f64])
                    .num("m", vec![reg.m as f64]),
            ),
            Err(err) => r.meta("regularity", err.to_string()),
        }
        Ok(r)
    }
}

/// Closed-form solutions with data `(0, 1)` where one is known.
pub fn closed_form(p: &ModelParams) -> Option<fn(f64) -> f64> {
    if p.k != 0.0 {
        return None;
    }
    match (p.sign, p.l) {
        (Sign::Defocusing, 2.0) => Some(|t: f64| t.ln_1p()),
        (Sign::Defocusing, 3.0) => Some(|t: f64| (1.0 + 2.0 * t).sqrt() - 1.0),
        (Sign::Defocusing, 4.0) => Some(|t: f64| ((3.0 * t + 1.0).powf(2.0 / 3.0) - 1.0) / 2.0),
        (Sign::Focusing, 2.0) => Some(|t: f64| -(-t).ln_1p()),
        _ => None,
    }
}

impl Study for OdeOpts {
    fn defaults() -> Self {
        OdeOpts {
            k: Some(0.0),
            l: Some(2.0),
            n: Some(1),
            sign: Some(Sign::Defocusing),
            t_end: Some(10.0),
            tol: Some(ode::DEFAULT_TOL),
            drift_tol: Some(1e-8),
        }
    }

    fn check(&self) -> Result<()> {
        model(&self.k, &self.l, &self.n, &self.sign)?;
        if !(need(&self.t_end, "t_end")? > 0.0) {
            return Err(LabError::invalid("t_end", "must be positive"));
        }
        if !(need(&self.tol, "tol")? > 0.0) {
            return Err(LabError::invalid("tol", "must be positive"));
        }
        need(&self.drift_tol, "drift_tol").map(|_| ())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        let p = model(&self.k, &self.l, &self.n, &self.sign)?;
        let traj = ode::integrate_base(&p, need(&self.t_end, "t_end")?, need(&self.tol, "tol")?)?;
        let i0 = ode::conserved_quantity(&p, traj.u[0], traj.u_t[0]);
        let drift: Vec<f64> = traj
            .u
            .iter()
            .zip(&traj.u_t)
            .map(|(&u, &v)| (ode::conserved_quantity(&p, u, v) - i0).abs() / (1.0 + i0.abs()))
            .collect();
        let max_drift = drift.iter().cloned().fold(0.0, f64::max);
        let drift_tol = need(&self.drift_tol, "drift_tol")?;
        let mut table = Table::new("trajectory")
            .num("t", traj.times.clone())
            .num("u", traj.u.clone())
            .num("u_t", traj.u_t.clone())
            .num("conserved_drift", drift);
        let mut r = ExperimentReport::new("ode", serde_json::Value::Null);
        if let Some(exact) = closed_form(&p) {
            let err: Vec<f64> = traj
                .times
                .iter()
                .zip(&traj.u)
                .map(|(&t, &u)| {
                    let e = exact(t);
                    if e == 0.0 {
                        u.abs()
                    } else {
                        ((u - e) / e).abs()
                    }
                })
                .collect();
            let worst = err.iter().cloned().fold(0.0, f64::max);
            table = table.num("closed_form_rel_err", err);
            r.push_verdict(
                "closed_form",
                worst <= 1e-8,
                "trajectory.closed_form_rel_err",
                format!("max relative error {worst:.3e} (limit 1e-8)"),
            );
        }
        r.push_verdict(
            "conservation",
            max_drift <= drift_tol,
            "trajectory.conserved_drift",
            format!("max relative drift {max_drift:.3e} (limit {drift_tol:.1e})"),
        );
        r.tables.push(table);
        r.meta("status", traj.status);
        Ok(r)
    }
}

impl Study for BlowupOpts {
    fn defaults() -> Self {
        BlowupOpts { k: Some(0.0), l: Some(2.0), n: Some(1), sign: Some(Sign::Focusing), tol: Some(1e-12) }
    }

    fn check(&self) -> Result<()> {
        let p = model(&self.k, &self.l, &self.n, &self.sign)?;
        if p.sign != Sign::Focusing {
            return Err(LabError::invalid("sign", "blow-up needs the focusing equation"));
        }
        if !(need(&self.tol, "tol")? > 0.0) {
            return Err(LabError::invalid("tol", "must be positive"));
        }
        Ok(())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        let p = model(&self.k, &self.l, &self.n, &self.sign)?;
        let b = ode::blowup_time(&p, need(&self.tol, "tol")?)?;
        let mut r = ExperimentReport::new("blowup", serde_json::Value::Null);
        let mut table = Table::new("blowup")
            .num("t_est", vec![b.t_est])
            .num("u_cap", vec![b.u_cap])
            .num("richardson_order", vec![b.richardson_order])
            .num("integrator_gap", vec![b.integrator_gap]);
        let exact = match (p.k, p.l) {
            (k, l) if k == 0.0 && l == 2.0 => Some(1.0),
            (k, l) if k == 1.0 && l == 2.0 => Some((std::f64::consts::PI / 2.0).sqrt()),
            _ => None,
        };
        if let Some(t) = exact {
            let err = (b.t_est - t).abs();
            table = table.num("closed_form", vec![t]).num("abs_err", vec![err]);
            r.push_verdict("closed_form", err <= 1e-4, "blowup.abs_err", format!("|T - {t}| = {err:.3e}"));
        }
        r.push_verdict(
            "integrator_agreement",
            b.integrator_gap <= 1e-6 * b.t_est,
            "blowup.integrator_gap",
            format!("time-stepper vs quadrature gap {:.3e}", b.integrator_gap),
        );
        r.tables.push(table);
        r.tables.push(
            Table::new("history")
                .num("u_cap", b.history.iter().map(|h| h.0).collect())
                .num("estimate", b.history.iter().map(|h| h.1).collect()),
        );
        r.meta("extrapolation", p.l != 2.0);
        Ok(r)
    }
}

impl Study for NormsOpts {
    fn defaults() -> Self {
        NormsOpts {
            length: Some(512.0),
            points: Some(1 << 14),
            radius: Some(1.0),
            offset: Some(1.5),
            dilations: Some(vec![2.0, 4.0]),
            orders: Some(vec![-1.0, -0.5, 0.0, 0.5, 1.0]),
            rel_tol: Some(5e-3),
        }
    }

    fn check(&self) -> Result<()> {
        Grid1D::new(need(&self.length, "length")?, need(&self.points, "points")?)?;
        if need(&self.dilations, "dilations")?.iter().any(|a| !(*a > 0.0)) {
            return Err(LabError::invalid("dilations", "must be positive"));
        }
        if need(&self.orders, "orders")?.is_empty() {
            return Err(LabError::invalid("orders", "need at least one order"));
        }
        need(&self.radius, "radius")?;
        need(&self.offset, "offset")?;
        need(&self.rel_tol, "rel_tol").map(|_| ())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        let grid = Grid1D::new(need(&self.length, "length")?, need(&self.points, "points")?)?;
        let (radius, offset) = (need(&self.radius, "radius")?, need(&self.offset, "offset")?);
        let tol = need(&self.rel_tol, "rel_tol")?;
        // odd profile: zero mean, so every listed order is admissible
        let beta = |a: f64| {
            Field::from_fn(grid, |x| bump_profile(x / a, -offset, radius, 1.0) - bump_profile(x / a, offset, radius, 1.0))
                .and_then(|f| f.check_guard_band().map(|_| f))
        };
        let base = beta(1.0)?;
        let (mut col_s, mut col_a, mut ratio, mut pred, mut err) = (vec![], vec![], vec![], vec![], vec![]);
        for &s in &need(&self.orders, "orders")? {
            let ord = SobolevOrder::homogeneous(s);
            let n0 = sobolev_norm(&base, &ord)?;
            for &a in &need(&self.dilations, "dilations")? {
                let measured = sobolev_norm(&beta(a)?, &ord)? / n0;
                let expected = a.powf(0.5 - s);
                col_s.push(s);
                col_a.push(a);
                ratio.push(measured);
                pred.push(expected);
                err.push((measured / expected - 1.0).abs());
            }
        }
        let worst = err.iter().cloned().fold(0.0, f64::max);
        let fft_l2 = sobolev_norm(&base, &SobolevOrder::inhomogeneous(0.0))?;
        let trap = base.l2_norm();
        let parseval = (fft_l2 / trap - 1.0).abs();
        let mut r = ExperimentReport::new("norms", serde_json::Value::Null);
        r.tables.push(
            Table::new("dilation")
                .num("s", col_s)
                .num("a", col_a)
                .num("ratio", ratio)
                .num("predicted", pred)
                .num("rel_err", err),
        );
        r.tables.push(
            Table::new("parseval").num("fourier_l2", vec![fft_l2]).num("trapezoid_l2", vec![trap]).num(
                "rel_err",
                vec![parseval],
            ),
        );
        r.push_verdict("dilation_law", worst <= tol, "dilation.rel_err", format!("max relative error {worst:.3e}"));
        r.push_verdict("parseval", parseval <= 1e-10, "parseval.rel_err", format!("relative gap {parseval:.3e}"));
        Ok(r)
    }
}

impl DispersionOpts {
    fn config(&self) -> Result<DispersionConfig> {
        Ok(DispersionConfig {
            params: model(&self.k, &self.l, &self.n, &self.sign)?,
            gamma_list: need(&self.gammas, "gammas")?,
            t_end: need(&self.t_end, "T")?,
            m: self.m.filter(|&m| m > 0),
            length: need(&self.length, "length")?,
            points: need(&self.points, "points")?,
            bump_radius: need(&self.radius, "radius")?,
            samples: need(&self.samples, "samples")?,
        })
    }
}

impl Study for DispersionOpts {
    fn defaults() -> Self {
        let d = DispersionConfig::default();
        DispersionOpts {
            k: Some(d.params.k),
            l: Some(d.params.l),
            n: Some(d.params.n),
            sign: Some(d.params.sign),
            gammas: Some(d.gamma_list),
            t_end: Some(d.t_end),
            m: Some(0),
            length: Some(d.length),
            points: Some(d.points),
            radius: Some(d.bump_radius),
            samples: Some(d.samples),
        }
    }

    fn check(&self) -> Result<()> {
        let c = self.config()?;
        c.params.validate()?;
        regularity(&c.params)?;
        Grid1D::new(c.length, c.points)?;
        if c.gamma_list.len() < 3 {
            return Err(LabError::TooFewPoints { needed: 3, got: c.gamma_list.len() });
        }
        Ok(())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        dispersion_scaling_study(&self.config()?)
    }
}

impl InflateOpts {
    fn config(&self) -> Result<InflationConfig> {
        Ok(InflationConfig {
            params: model(&self.k, &self.l, &self.n, &self.sign)?,
            s: need(&self.s, "s")?,
            epsilon: need(&self.epsilon, "epsilon")?,
            gamma_list: need(&self.gammas, "gammas")?,
            q: self.q.filter(|&q| q > 0),
            t0_fraction: need(&self.t0_fraction, "t0_fraction")?,
            tau_horizon: need(&self.tau_horizon, "tau_horizon")?,
            data_scale: need(&self.data_scale, "data_scale")?,
            length: need(&self.length, "length")?,
            points: need(&self.points, "points")?,
            bump_radius: need(&self.radius, "radius")?,
            bump_spacing: need(&self.spacing, "spacing")?,
            bump_dilation: need(&self.dilation, "dilation")?,
            c_probe: need(&self.c_probe, "c_probe")?,
            min_final_ratio: need(&self.min_ratio, "min_ratio")?,
        })
    }
}

impl Study for InflateOpts {
    fn defaults() -> Self {
        let d = InflationConfig::default();
        InflateOpts {
            k: Some(d.params.k),
            l: Some(d.params.l),
            n: Some(d.params.n),
            sign: Some(d.params.sign),
            s: Some(d.s),
            epsilon: Some(d.epsilon),
            gammas: Some(d.gamma_list),
            q: Some(0),
            t0_fraction: Some(d.t0_fraction),
            tau_horizon: Some(d.tau_horizon),
            data_scale: Some(d.data_scale),
            length: Some(d.length),
            points: Some(d.points),
            radius: Some(d.bump_radius),
            spacing: Some(d.bump_spacing),
            dilation: Some(d.bump_dilation),
            c_probe: Some(d.c_probe),
            min_ratio: Some(d.min_final_ratio),
        }
    }

    fn check(&self) -> Result<()> {
        let c = self.config()?;
        c.validate()?;
        for &g in &c.gamma_list {
            crate::experiments::select_lambda(&c.params, c.s, c.epsilon, g)?;
        }
        Ok(())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        inflation_run(&self.config()?)
    }
}

impl FocusingOpts {
    fn config(&self) -> Result<FocusingConfig> {
        let d = FocusingConfig::default();
        Ok(FocusingConfig {
            params: model(&self.k, &self.l, &self.n, &self.sign)?,
            s_list: need(&self.orders, "orders")?,
            a_list: need(&self.scales, "scales")?,
            d: need(&self.d, "d")?,
            transition: need(&self.transition, "transition")?,
            length: need(&self.length, "length")?,
            points: need(&self.points, "points")?,
            probe: need(&self.probe, "probe")?,
            t_star_tol: need(&self.t_star_tol, "t_star_tol")?,
            interior_tol: need(&self.interior_tol, "interior_tol")?,
            ..d
        })
    }
}

impl Study for FocusingOpts {
    fn defaults() -> Self {
        let d = FocusingConfig::default();
        FocusingOpts {
            k: Some(d.params.k),
            l: Some(d.params.l),
            n: Some(d.params.n),
            sign: Some(d.params.sign),
            orders: Some(d.s_list),
            scales: Some(d.a_list),
            d: Some(d.d),
            transition: Some(d.transition),
            length: Some(d.length),
            points: Some(d.points),
            probe: Some(d.probe),
            t_star_tol: Some(d.t_star_tol),
            interior_tol: Some(d.interior_tol),
        }
    }

    fn check(&self) -> Result<()> {
        let c = self.config()?;
        c.params.validate()?;
        if c.params.sign != Sign::Focusing {
            return Err(LabError::invalid("sign", "the lifespan study needs the focusing equation"));
        }
        Grid1D::new(c.length, c.points)?;
        if c.a_list.len() < 3 {
            return Err(LabError::TooFewPoints { needed: 3, got: c.a_list.len() });
        }
        Ok(())
    }

    fn execute(&self) -> Result<ExperimentReport> {
        focusing_lifespan_study(&self.config()?)
    }
}

/// Parse failure or precondition violation: exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum UsageError {
    #[error("cannot read config {path}: {detail}")]
    ConfigRead { path: PathBuf, detail: String },
    #[error("config {path}: {detail}")]
    ConfigParse { path: PathBuf, detail: String },
    #[error("config file is for `{found}`, not `{expected}`")]
    WrongSubcommand { expected: String, found: String },
    #[error("{0}")]
    Invalid(#[from] LabError),
}

/// Layers defaults, file keys and flag keys (later wins).
fn layer<T: Study>(flags: &T, file: Option<&Path>, sub: &str) -> std::result::Result<T, UsageError> {
    let mut merged = serde_json::to_value(T::defaults()).expect("serializable defaults");
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError::ConfigRead { path: path.into(), detail: e.to_string() })?;
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| UsageError::ConfigParse { path: path.into(), detail: e.to_string() })?;
        if let Some(found) = table.remove("subcommand") {
            let found = found.as_str().unwrap_or_default().to_string();
            if found != sub {
                return Err(UsageError::WrongSubcommand { expected: sub.into(), found });
            }
        }
        let keys: T = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError::ConfigParse { path: path.into(), detail: e.to_string() })?;
        overlay(&mut merged, serde_json::to_value(keys).expect("serializable"));
    }
    overlay(&mut merged, serde_json::to_value(flags).expect("serializable"));
    let out: T = serde_json::from_value(merged).map_err(|e| LabError::invalid("config", e.to_string()))?;
    out.check()?;
    Ok(out)
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    if let (Some(b), serde_json::Value::Object(t)) = (base.as_object_mut(), top) {
        for (k, v) in t {
            if !v.is_null() {
                b.insert(k, v);
            }
        }
    }
}

/// `config-echo.toml`: the subcommand followed by every resolved key.
pub fn echo_toml<T: Serialize>(sub: &str, opts: &T) -> String {
    let mut table = toml::Table::new();
    table.insert("subcommand".into(), toml::Value::String(sub.into()));
    if let Ok(toml::Value::Table(keys)) = toml::Value::try_from(opts) {
        table.extend(keys);
    }
    toml::to_string(&table).expect("plain table")
}

fn output_dir(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("SLWLAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    }
}

enum Failure {
    Usage(UsageError),
    Runtime(LabError),
}

fn run_study<T: Study>(flags: &T, cli: &Cli, sub: &str) -> std::result::Result<bool, Failure> {
    let opts = layer(flags, cli.config.as_deref(), sub).map_err(Failure::Usage)?;
    let out = output_dir(cli.out.as_deref());
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Failure::Runtime(LabError::Io(e.to_string())))?;
    let mut report = pool.install(|| opts.execute()).map_err(Failure::Runtime)?;
    let mut config = serde_json::to_value(&opts).expect("serializable");
    if let Some(obj) = config.as_object_mut() {
        obj.insert("subcommand".into(), sub.into());
    }
    report.config = config;
    report.check_references().map_err(Failure::Runtime)?;
    let write = || -> Result<()> {
        report.write_to(&out)?;
        fs::write(out.join("config-echo.toml"), echo_toml(sub, &opts))?;
        let timing = serde_json::json!({ "wall_seconds": started.elapsed().as_secs_f64(), "jobs": cli.jobs });
        fs::write(out.join("timing.json"), format!("{timing}\n"))?;
        Ok(())
    };
    write().map_err(Failure::Runtime)?;
    let mut stdout = std::io::stdout().lock();
    for v in &report.verdicts {
        let _ = writeln!(stdout, "{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let _ = writeln!(stdout, "wrote {}", out.display());
    Ok(report.all_passed())
}

/// Runs the CLI on `args` (program name first) and returns the exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let sub = cli.command.name();
    let result = match &cli.command {
        Command::Exponents(o) => run_study(o, &cli, sub),
        Command::Ode(o) => run_study(o, &cli, sub),
        Command::Blowup(o) => run_study(o, &cli, sub),
        Command::Norms(o) => run_study(o, &cli, sub),
        Command::Dispersion(o) => run_study(o, &cli, sub),
        Command::Inflate(o) => run_study(o, &cli, sub),
        Command::Focusing(o) => run_study(o, &cli, sub),
    };
    match result {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_VERDICT_FAILED,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn exponents_flags_parse() {
        let cli = parse(&["slwlab", "exponents", "--k", "0", "--l", "3", "--n", "1"]);
        let Command::Exponents(o) = &cli.command else { panic!() };
        let resolved = layer(o, None, "exponents").unwrap();
        assert_eq!(resolved.l, Some(3.0));
        assert_eq!(resolved.sign, Some(Sign::Defocusing));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let err = Cli::try_parse_from(["slwlab", "exponents", "--foo", "1"]).unwrap_err();
        assert!(err.use_stderr());
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn inflate_range_check() {
        let cli = parse(&["slwlab", "inflate", "--s", "2.0", "--k", "0", "--l", "3", "--n", "1"]);
        let Command::Inflate(o) = &cli.command else { panic!() };
        let err = layer(o, None, "inflate").unwrap_err();
        assert!(err.to_string().contains("s_c"), "{err}");
    }

    #[test]
    fn gamma_lists_split_on_commas() {
        let cli = parse(&["slwlab", "dispersion", "--gammas", "0.1,0.05,0.025", "--T", "1"]);
        let Command::Dispersion(o) = &cli.command else { panic!() };
        assert_eq!(o.gammas.as_deref(), Some(&[0.1, 0.05, 0.025][..]));
        assert_eq!(o.t_end, Some(1.0));
    }

    #[test]
    fn file_keys_are_strict_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "subcommand = \"ode\"\nl = 3.0\nt_end = 5.0\n").unwrap();
        let flags = OdeOpts { t_end: Some(2.0), ..Default::default() };
        let r = layer(&flags, Some(&path), "ode").unwrap();
        assert_eq!((r.l, r.t_end), (Some(3.0), Some(2.0)));

        fs::write(&path, "bogus = 1\n").unwrap();
        let err = layer(&flags, Some(&path), "ode").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        fs::write(&path, "subcommand = \"blowup\"\n").unwrap();
        assert!(matches!(layer(&flags, Some(&path), "ode"), Err(UsageError::WrongSubcommand { .. })));

        fs::write(&path, "l = \"three\"\n").unwrap();
        assert!(layer(&flags, Some(&path), "ode").is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let opts = layer(&OdeOpts::default(), None, "ode").unwrap();
        let text = echo_toml("ode", &opts);
        assert!(text.lines().any(|l| l == "subcommand = \"ode\""));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.toml");
        fs::write(&path, &text).unwrap();
        let again = layer(&OdeOpts::default(), Some(&path), "ode").unwrap();
        assert_eq!(echo_toml("ode", &again), text);
    }

    #[test]
    fn closed_forms_vanish_at_zero() {
        for l in [2.0, 3.0, 4.0] {
            let f = closed_form(&ModelParams::defocusing(0.0, l).unwrap()).unwrap();
            assert_eq!(f(0.0), 0.0);
        }
        assert!(closed_form(&ModelParams::defocusing(1.0, 2.0).unwrap()).is_none());
    }
}
