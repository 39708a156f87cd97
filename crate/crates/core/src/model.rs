//! The equation family `□u = ±F(u, ∂_t u)` and its derived indices.
//!
//! The defocusing nonlinearity is `-|u|^k |v|^{l-1} v` for even (or
//! non-integer) `k` and `-|u|^{k-1} u |v|^l` for odd `k`; the focusing
//! family flips the sign. All functions here are pure.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default value of the "prescribed large" regularity cap.
pub const DEFAULT_M0_CAP: i64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Defocusing,
    Focusing,
}

impl Sign {
    /// Multiplier in front of the nonlinearity.
    pub fn factor(self) -> f64 {
        match self {
            Sign::Defocusing => -1.0,
            Sign::Focusing => 1.0,
        }
    }
}

impl std::str::FromStr for Sign {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "defocusing" => Ok(Sign::Defocusing),
            "focusing" => Ok(Sign::Focusing),
            other => Err(LabError::invalid("sign", format!("expected defocusing|focusing, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sign::Defocusing => f.write_str("defocusing"),
            Sign::Focusing => f.write_str("focusing"),
        }
    }
}

/// Parameters `(k, l, n, sign)` of the model equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub k: f64,
    pub l: f64,
    /// Spatial dimension. Enters only the norm exponents; the solver is 1D.
    pub n: u32,
    pub sign: Sign,
}

impl ModelParams {
    pub fn new(k: f64, l: f64, n: u32, sign: Sign) -> Result<Self> {
        let p = ModelParams { k, l, n, sign };
        p.validate()?;
        Ok(p)
    }

    pub fn defocusing(k: f64, l: f64) -> Result<Self> {
        Self::new(k, l, 1, Sign::Defocusing)
    }

    pub fn focusing(k: f64, l: f64) -> Result<Self> {
        Self::new(k, l, 1, Sign::Focusing)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(LabError::invalid("k", format!("must be finite and >= 0, got {}", self.k)));
        }
        if !self.l.is_finite() || self.l < 0.0 {
            return Err(LabError::invalid("l", format!("must be finite and >= 0, got {}", self.l)));
        }
        if self.k + self.l <= 1.0 {
            return Err(LabError::DegenerateFamily(self.k + self.l));
        }
        if self.n == 0 {
            return Err(LabError::invalid("n", "spatial dimension must be positive"));
        }
        if self.sign == Sign::Defocusing && self.l < 1.0 {
            return Err(LabError::invalid("l", format!("defocusing family requires l >= 1, got {}", self.l)));
        }
        Ok(())
    }

    pub fn k_is_integer(&self) -> bool {
        is_integer(self.k)
    }

    /// `k + l - 1`, the common denominator of all scaling exponents.
    pub fn homogeneity(&self) -> f64 {
        self.k + self.l - 1.0
    }

    pub fn exponents(&self) -> Exponents {
        // validated params never hit the degenerate branch
        derive_exponents(self).expect("validated parameters")
    }
}

pub fn is_integer(x: f64) -> bool {
    x.is_finite() && x.fract() == 0.0
}

/// `|x|^p`, with `|0|^0 = 1` so that `k = 0` means "no u-factor".
#[inline]
pub fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        x.abs().powf(p)
    }
}

/// `sign(x)|x|^p`, i.e. `|x|^{p-1} x` continuously extended by 0 at the origin.
#[inline]
pub fn signed_pow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if p == 1.0 {
        x
    } else {
        x.signum() * x.abs().powf(p)
    }
}

/// Scaling, concentration and related indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    /// `(l - 2) / (k + l - 1)`
    pub alpha: f64,
    /// `n/2 + alpha`
    pub s_c: f64,
    /// `(n + 1)/4 + (l - 1)/(k + l - 1)`
    pub s_tilde: f64,
}

/// Regularity bookkeeping used by the small-dispersion construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regularity {
    pub m0: i64,
    /// Rescaling power: data are `psi^{N(k+1)}`.
    pub big_n: i64,
    /// Energy order.
    pub m: i64,
}

pub fn derive_exponents(params: &ModelParams) -> Result<Exponents> {
    let h = params.homogeneity();
    if h <= 0.0 {
        return Err(LabError::DegenerateFamily(params.k + params.l));
    }
    let n = params.n as f64;
    let alpha = (params.l - 2.0) / h;
    Ok(Exponents {
        alpha,
        s_c: n / 2.0 + alpha,
        s_tilde: (n + 1.0) / 4.0 + (params.l - 1.0) / h,
    })
}

/// Right-hand side `F(u, v)` of `□u = F(u, ∂_t u)`.
///
/// Integer `k` picks the branch by parity; non-integer `k` uses the
/// `|u|^k |v|^{l-1} v` form. `l = 0` is the pure-power model `|u|^{k-1} u`.
#[inline]
pub fn eval_nonlinearity(params: &ModelParams, u: f64, v: f64) -> f64 {
    let ModelParams { k, l, sign, .. } = *params;
    let magnitude = if l == 0.0 {
        signed_pow(u, k)
    } else if is_integer(k) && (k as i64) % 2 == 1 {
        signed_pow(u, k) * abs_pow(v, l)
    } else {
        abs_pow(u, k) * signed_pow(v, l)
    };
    sign.factor() * magnitude
}

/// Smoothness order `m0` of the nonlinearity.
///
/// Polynomial nonlinearities (integer `k`, `l` with `k + l` odd) get the cap.
/// Otherwise the minimum of `floor(k - 1)` and `floor(l - 1)` over the factors
/// that are actually non-smooth, clamped at zero.
pub fn compute_m0(params: &ModelParams, cap: i64) -> Result<i64> {
    if cap < 3 {
        return Err(LabError::invalid("cap", format!("must be >= 3, got {cap}")));
    }
    let (k, l) = (params.k, params.l);
    if is_integer(k) && is_integer(l) && ((k + l) as i64) % 2 == 1 {
        return Ok(cap);
    }
    let mut active = Vec::with_capacity(2);
    if k > 0.0 {
        active.push((k - 1.0).floor() as i64);
    }
    if l != 0.0 && l != 1.0 {
        active.push((l - 1.0).floor() as i64);
    }
    Ok(active.into_iter().min().map_or(cap, |m| m.clamp(0, cap)))
}

/// Smallest admissible energy order `m = floor((n+2)/2)` and the smallest
/// `N` with `N (k + 1) > m + 2`.
pub fn choose_n_m(m0: i64, k: f64, n: u32) -> Result<Regularity> {
    let m = (n as i64 + 2) / 2;
    if m0 < m {
        return Err(LabError::InsufficientRegularity { m0, needed: m });
    }
    let target = (m + 2) as f64;
    let mut big_n = (target / (k + 1.0)).floor() as i64;
    while (big_n as f64) * (k + 1.0) <= target {
        big_n += 1;
    }
    Ok(Regularity { m0, big_n: big_n.max(1), m })
}

/// Convenience: `m0` with the default cap followed by [`choose_n_m`].
pub fn regularity(params: &ModelParams) -> Result<Regularity> {
    let m0 = compute_m0(params, DEFAULT_M0_CAP)?;
    choose_n_m(m0, params.k, params.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(k: f64, l: f64, n: u32) -> ModelParams {
        ModelParams::new(k, l, n, Sign::Defocusing).unwrap()
    }

    #[test]
    fn exponent_examples() {
        let e = derive_exponents(&p(0.0, 3.0, 1)).unwrap();
        assert_relative_eq!(e.alpha, 0.5);
        assert_relative_eq!(e.s_c, 1.0);
        assert_relative_eq!(e.s_tilde, 1.5);

        let e = derive_exponents(&p(2.0, 1.0, 3)).unwrap();
        assert_relative_eq!(e.alpha, -0.5);
        assert_relative_eq!(e.s_c, 1.0);
        assert_relative_eq!(e.s_tilde, 1.0);

        let e = derive_exponents(&p(0.0, 2.0, 3)).unwrap();
        assert_eq!(e.alpha, 0.0);
        assert_relative_eq!(e.s_c, 1.5);
        assert_relative_eq!(e.s_tilde, 2.0);
    }

    #[test]
    fn degenerate_family_rejected() {
        assert!(matches!(
            ModelParams::new(0.5, 0.5, 1, Sign::Focusing),
            Err(LabError::DegenerateFamily(_))
        ));
        let raw = ModelParams { k: 0.0, l: 1.0, n: 1, sign: Sign::Defocusing };
        assert!(derive_exponents(&raw).is_err());
        assert!(ModelParams::new(1.0, 0.5, 1, Sign::Defocusing).is_err());
        assert!(ModelParams::new(1.0, 0.5, 1, Sign::Focusing).is_ok());
    }

    #[test]
    fn alpha_is_scale_free() {
        let a = derive_exponents(&p(0.0, 3.0, 1)).unwrap().alpha;
        let b = derive_exponents(&p(1.0, 4.0, 1)).unwrap().alpha;
        assert_eq!(a, b);
    }

    #[test]
    fn nonlinearity_examples() {
        assert_eq!(eval_nonlinearity(&p(0.0, 3.0, 1), 2.0, -0.5), 0.125);
        assert_eq!(eval_nonlinearity(&p(1.0, 2.0, 1), -2.0, 3.0), 18.0);
        let foc = ModelParams::focusing(0.0, 2.0).unwrap();
        assert_eq!(eval_nonlinearity(&foc, 0.0, 1.0), 1.0);
    }

    #[test]
    fn nonlinearity_odd_and_vanishing() {
        let families = [
            p(0.0, 3.0, 1),
            p(1.0, 2.0, 1),
            p(2.0, 1.5, 1),
            p(3.0, 2.5, 1),
            p(0.5, 1.0, 1),
            ModelParams::focusing(2.0, 0.0).unwrap(),
            ModelParams::focusing(0.0, 2.0).unwrap(),
            ModelParams::focusing(2.0, 0.5).unwrap(),
        ];
        let samples = [-3.0, -1.25, -0.5, 0.0, 0.3, 1.0, 2.75];
        for params in &families {
            assert_eq!(eval_nonlinearity(params, 0.0, 0.0), 0.0);
            for &u in &samples {
                for &v in &samples {
                    let f = eval_nonlinearity(params, u, v);
                    assert!(f.is_finite());
                    assert_eq!(eval_nonlinearity(params, -u, -v), -f, "{params:?} at ({u}, {v})");
                }
            }
        }
    }

    #[test]
    fn even_k_branch_matches_generic_form() {
        let params = p(2.0, 2.5, 1);
        for &(u, v) in &[(1.5f64, -2.0f64), (-0.7, 0.4), (3.0, 3.0)] {
            let generic = -u.abs().powf(2.0) * v.abs().powf(1.5) * v;
            assert_relative_eq!(eval_nonlinearity(&params, u, v), generic, max_relative = 1e-15);
        }
    }

    #[test]
    fn m0_examples() {
        assert_eq!(compute_m0(&p(1.0, 2.0, 1), 8).unwrap(), 8);
        assert_eq!(compute_m0(&p(3.0, 2.5, 1), 8).unwrap(), 1);
        assert_eq!(compute_m0(&p(0.0, 4.0, 1), 8).unwrap(), 3);
        assert_eq!(compute_m0(&p(0.5, 1.0, 1), 8).unwrap(), 0);
        assert!(compute_m0(&p(0.0, 3.0, 1), 2).is_err());
    }

    /// Independent check of the k = 0, l = 4 value: the smoothness order of
    /// `v -> |v|^3 v` at the origin is the last derivative order at which the
    /// one-sided finite-difference derivatives still agree.
    #[test]
    fn m0_matches_finite_difference_probe() {
        let params = p(0.0, 4.0, 1);
        let g = |v: f64| eval_nonlinearity(&params, 0.0, v);
        let h = 1e-2;
        let binom = |n: usize, j: usize| -> f64 { (0..j).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
        let one_sided = |order: usize, dir: f64| -> f64 {
            let mut acc = 0.0;
            for j in 0..=order {
                let sgn = if (order - j).is_multiple_of(2) { 1.0 } else { -1.0 };
                acc += sgn * binom(order, j) * g(dir * j as f64 * h);
            }
            acc / (dir * h).powi(order as i32)
        };
        let mut probe = None;
        for order in 1..=6 {
            let (right, left) = (one_sided(order, 1.0), one_sided(order, -1.0));
            if (right - left).abs() > 1.0 {
                probe = Some(order as i64 - 1);
                break;
            }
        }
        assert_eq!(probe, Some(compute_m0(&params, 8).unwrap()));
    }

    #[test]
    fn choose_n_m_examples() {
        assert_eq!(choose_n_m(8, 0.0, 1).unwrap(), Regularity { m0: 8, big_n: 4, m: 1 });
        assert_eq!(choose_n_m(8, 2.0, 1).unwrap(), Regularity { m0: 8, big_n: 2, m: 1 });
        assert!(matches!(
            choose_n_m(1, 0.0, 3),
            Err(LabError::InsufficientRegularity { m0: 1, needed: 2 })
        ));
    }
}
