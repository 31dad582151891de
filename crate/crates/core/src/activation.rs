//! Pointwise activation functions behind a common trait.
//!
//! Each variant is registered by name and selected at runtime (config file or
//! CLI flag). Besides the forward map and its derivative, an activation knows
//! the analytic facts the stability layer needs: its global output range and
//! closed-form sector / slope constants over an interval.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// A scalar activation applied elementwise.
///
/// Sector and slope bounds are taken with respect to the origin, so they are
/// only meaningful for activations with `value(0) == 0`; the others return
/// `None` and are rejected by the certification pipeline.
pub trait Activation: Send + Sync {
    /// Registry name, e.g. `"tanh"` or `"leaky_relu(0.1)"`.
    fn name(&self) -> String;

    fn value(&self, x: f64) -> f64;

    fn derivative(&self, x: f64) -> f64;

    /// Image of the whole real line, as `(lo, hi)`; unbounded sides are
    /// `f64::INFINITY` / `NEG_INFINITY`. All activations here are monotone
    /// nondecreasing, which the interval propagation in the stability layer
    /// relies on.
    fn range(&self) -> (f64, f64);

    /// Tight `[alpha_lo, alpha_hi]` with `value(x)/x` in that interval for
    /// all nonzero `x` in `[lo, hi]` (0 must lie in the interval).
    /// `None` when the activation is not zero at the origin.
    fn sector_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)>;

    /// Tight `[s_lo, s_hi]` with `derivative(x)` in that interval on
    /// `[lo, hi]`. `None` when sector bounds are unavailable (the two are
    /// used together by the certificate machinery).
    fn slope_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)>;
}

#[derive(Debug, Clone, Copy)]
pub struct Tanh;

impl Activation for Tanh {
    fn name(&self) -> String {
        "tanh".into()
    }

    fn value(&self, x: f64) -> f64 {
        x.tanh()
    }

    fn derivative(&self, x: f64) -> f64 {
        let t = x.tanh();
        1.0 - t * t
    }

    fn range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn sector_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        // tanh(x)/x is even in x and strictly decreasing in |x|, so the
        // minimum is at the widest endpoint and the supremum is 1 at x -> 0.
        let m = lo.abs().max(hi.abs());
        Some((tanh_ratio(m), 1.0))
    }

    fn slope_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        // derivative 1 - tanh^2 is even and decreasing in |x|.
        let m = lo.abs().max(hi.abs());
        Some((self.derivative(m), 1.0))
    }
}

/// `tanh(x)/x`, continuously extended through 0. The series is used below
/// 1e-4 where the direct quotient starts losing digits.
fn tanh_ratio(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-4 {
        let x2 = a * a;
        1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0
    } else {
        a.tanh() / a
    }
}

/// Leaky rectifier with negative-side slope `a` in `[0, 1)`; `a = 0` is the
/// plain ReLU.
#[derive(Debug, Clone, Copy)]
pub struct LeakyRelu {
    pub negative_slope: f64,
}

impl Activation for LeakyRelu {
    fn name(&self) -> String {
        if self.negative_slope == 0.0 {
            "relu".into()
        } else {
            format!("leaky_relu({})", self.negative_slope)
        }
    }

    fn value(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            self.negative_slope * x
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0
        } else {
            self.negative_slope
        }
    }

    fn range(&self) -> (f64, f64) {
        if self.negative_slope == 0.0 {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    }

    fn sector_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        // value(x)/x is exactly `negative_slope` for x < 0 and 1 for x > 0;
        // the interval-independent envelope [a, 1] is already tight whenever
        // the interval straddles 0, and safe otherwise.
        let _ = (lo, hi);
        Some((self.negative_slope, 1.0))
    }

    fn slope_on(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let _ = (lo, hi);
        Some((self.negative_slope, 1.0))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sigmoid;

impl Activation for Sigmoid {
    fn name(&self) -> String {
        "sigmoid".into()
    }

    fn value(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn derivative(&self, x: f64) -> f64 {
        let s = self.value(x);
        s * (1.0 - s)
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    // sigmoid(0) = 1/2 != 0: no origin-anchored sector exists, so the
    // certification path refuses it.
    fn sector_on(&self, _lo: f64, _hi: f64) -> Option<(f64, f64)> {
        None
    }

    fn slope_on(&self, _lo: f64, _hi: f64) -> Option<(f64, f64)> {
        None
    }
}

/// Shared handle used everywhere an activation crosses module boundaries.
pub type ActivationRef = Arc<dyn Activation>;

/// Names accepted by [`parse_activation`], for error messages and docs.
pub const ACTIVATION_NAMES: &[&str] = &["tanh", "relu", "leaky_relu(a)", "sigmoid"];

/// Looks an activation up by name. `leaky_relu` takes its negative-side
/// slope as `leaky_relu(0.1)` or `leaky_relu:0.1`.
pub fn parse_activation(name: &str) -> Result<ActivationRef> {
    let trimmed = name.trim();
    match trimmed {
        "tanh" => return Ok(Arc::new(Tanh)),
        "relu" => return Ok(Arc::new(LeakyRelu { negative_slope: 0.0 })),
        "sigmoid" => return Ok(Arc::new(Sigmoid)),
        _ => {}
    }
    let arg = trimmed
        .strip_prefix("leaky_relu(")
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| trimmed.strip_prefix("leaky_relu:"));
    if let Some(arg) = arg {
        let a: f64 = arg.trim().parse().map_err(|_| {
            Error::invalid(format!("leaky_relu slope `{arg}` is not a number"))
        })?;
        if !(0.0..1.0).contains(&a) {
            return Err(Error::invalid(format!(
                "leaky_relu slope must be in [0, 1), got {a}"
            )));
        }
        return Ok(Arc::new(LeakyRelu { negative_slope: a }));
    }
    Err(Error::invalid(format!(
        "unknown activation `{trimmed}` (expected one of {ACTIVATION_NAMES:?})"
    )))
}

impl fmt::Debug for dyn Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Activation({})", self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tanh_known_values() {
        let t = Tanh;
        assert_relative_eq!(t.value(0.5), 0.46211715726000974, epsilon = 1e-15);
        assert_relative_eq!(t.value(2.0), 0.9640275800758169, epsilon = 1e-15);
        assert_eq!(t.value(0.0), 0.0);
    }

    #[test]
    fn tanh_sector_slope_on_unit_interval() {
        let t = Tanh;
        let (a_lo, a_hi) = t.sector_on(-1.0, 1.0).unwrap();
        assert_relative_eq!(a_lo, (1.0f64).tanh(), epsilon = 1e-15); // 0.76159...
        assert_eq!(a_hi, 1.0);
        let (s_lo, s_hi) = t.slope_on(-1.0, 1.0).unwrap();
        assert_relative_eq!(s_lo, 1.0 - (1.0f64).tanh().powi(2), epsilon = 1e-15); // 0.41997...
        assert_eq!(s_hi, 1.0);
    }

    #[test]
    fn tanh_sector_degenerates_to_one_on_tiny_interval() {
        let t = Tanh;
        let (a_lo, a_hi) = t.sector_on(-1e-6, 1e-6).unwrap();
        assert!(a_hi - a_lo < 1e-12, "width {}", a_hi - a_lo);
        assert!((1.0 - a_lo) < 1e-12);
        let (s_lo, _) = t.slope_on(-1e-6, 1e-6).unwrap();
        assert!((1.0 - s_lo) < 1e-12);
    }

    #[test]
    fn tanh_ratio_series_continuity() {
        // The series/quotient switchover must not introduce a jump. The
        // probes hug the cutoff so the function's own slope (~2x/3, i.e.
        // ~1e-12 per 2e-8 of x) does not drown the measurement.
        let a = tanh_ratio(1e-4 * (1.0 - 1e-9));
        let b = tanh_ratio(1e-4 * (1.0 + 1e-9));
        assert!((a - b).abs() < 1e-13, "jump {:.3e}", (a - b).abs());
    }

    #[test]
    fn leaky_relu_bounds_are_interval_free() {
        let l = LeakyRelu { negative_slope: 0.1 };
        assert_eq!(l.sector_on(-2.0, 3.0), Some((0.1, 1.0)));
        assert_eq!(l.slope_on(-2.0, 3.0), Some((0.1, 1.0)));
        assert_eq!(l.value(-2.0), -0.2);
        assert_eq!(l.value(1.5), 1.5);
    }

    #[test]
    fn sigmoid_has_no_origin_sector() {
        assert!(Sigmoid.sector_on(-1.0, 1.0).is_none());
        assert_relative_eq!(Sigmoid.value(0.0), 0.5);
    }

    #[test]
    fn registry_round_trips() {
        for name in ["tanh", "relu", "sigmoid", "leaky_relu(0.25)"] {
            let a = parse_activation(name).unwrap();
            assert_eq!(a.name(), name);
        }
        assert!(parse_activation("swish").is_err());
        assert!(parse_activation("leaky_relu(1.5)").is_err());
        assert!(parse_activation("leaky_relu(x)").is_err());
    }

    #[test]
    fn sampled_sector_and_slope_membership() {
        // Definition check on a grid: value(x) between the sector lines and
        // derivative within slope bounds, for each activation that has them.
        let acts: Vec<ActivationRef> = vec![
            Arc::new(Tanh),
            Arc::new(LeakyRelu { negative_slope: 0.0 }),
            Arc::new(LeakyRelu { negative_slope: 0.3 }),
        ];
        let (lo, hi) = (-1.7, 2.3);
        for act in &acts {
            let (a_lo, a_hi) = act.sector_on(lo, hi).unwrap();
            let (s_lo, s_hi) = act.slope_on(lo, hi).unwrap();
            for k in 0..=200 {
                let x = lo + (hi - lo) * (k as f64) / 200.0;
                let v = act.value(x);
                // Sector: (v - a_lo x)(v - a_hi x) <= 0, i.e. v between the lines.
                let m = (v - a_lo * x) * (v - a_hi * x);
                assert!(m <= 1e-12, "{}: sector violated at x={x}", act.name());
                let d = act.derivative(x);
                assert!(
                    d >= s_lo - 1e-12 && d <= s_hi + 1e-12,
                    "{}: slope violated at x={x}",
                    act.name()
                );
            }
        }
    }
}
