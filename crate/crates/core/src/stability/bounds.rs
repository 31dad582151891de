//! Sector and slope bounds for the activation on a pre-activation box.
//!
//! The certificate machinery abstracts the activation by two families of
//! inequalities that hold for every `h` in a box `[h̲, h̄]` containing 0:
//! a sector bound `(σ(h) − α̲h)(σ(h) − ᾱh) ≤ 0` and a slope restriction
//! `σ̲ ≤ (σ(a) − σ(b))/(a − b) ≤ σ̄`. This file computes those bounds per
//! coordinate and, conversely, the box itself by propagating a state box
//! through the controller's linear maps.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::grnn::WeightBlocks;
use nalgebra::{DMatrix, DVector};

/// Element-wise sector and slope bounds valid on the box `[h_lo, h_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorSlopeBounds {
    pub h_lo: DVector<f64>,
    pub h_hi: DVector<f64>,
    /// Sector `[α̲, ᾱ]` per coordinate.
    pub alpha_lo: DVector<f64>,
    pub alpha_hi: DVector<f64>,
    /// Slope `[σ̲, σ̄]` per coordinate.
    pub sigma_lo: DVector<f64>,
    pub sigma_hi: DVector<f64>,
}

impl SectorSlopeBounds {
    /// Number of hidden coordinates covered.
    pub fn dim(&self) -> usize {
        self.h_lo.len()
    }

    /// Same scalar box and bounds replicated over `dim` coordinates.
    pub fn uniform(
        dim: usize,
        h: (f64, f64),
        sector: (f64, f64),
        slope: (f64, f64),
    ) -> Self {
        SectorSlopeBounds {
            h_lo: DVector::from_element(dim, h.0),
            h_hi: DVector::from_element(dim, h.1),
            alpha_lo: DVector::from_element(dim, sector.0),
            alpha_hi: DVector::from_element(dim, sector.1),
            sigma_lo: DVector::from_element(dim, slope.0),
            sigma_hi: DVector::from_element(dim, slope.1),
        }
    }
}

/// Per-coordinate sector and slope bounds of `activation` on `[h_lo, h_hi]`.
/// Each coordinate's box must contain 0 (the equilibrium the analysis is
/// anchored at). Activations without odd-like structure at the origin (no
/// valid sector through 0, e.g. the logistic sigmoid) are rejected.
pub fn activation_bounds(
    activation: &dyn Activation,
    h_lo: &DVector<f64>,
    h_hi: &DVector<f64>,
) -> Result<SectorSlopeBounds> {
    let dim = h_lo.len();
    if h_hi.len() != dim {
        return Err(Error::invalid("box bounds must have equal length"));
    }
    let mut alpha_lo = DVector::zeros(dim);
    let mut alpha_hi = DVector::zeros(dim);
    let mut sigma_lo = DVector::zeros(dim);
    let mut sigma_hi = DVector::zeros(dim);
    for j in 0..dim {
        let (lo, hi) = (h_lo[j], h_hi[j]);
        if !(lo <= 0.0 && 0.0 <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "coordinate {j}: box [{lo}, {hi}] must be finite and contain 0"
            )));
        }
        let (a_lo, a_hi) = activation.sector_on(lo, hi).ok_or_else(|| {
            Error::invalid(format!(
                "activation '{}' admits no sector bound through the origin",
                activation.name()
            ))
        })?;
        let (s_lo, s_hi) = activation.slope_on(lo, hi).ok_or_else(|| {
            Error::invalid(format!(
                "activation '{}' admits no slope restriction",
                activation.name()
            ))
        })?;
        alpha_lo[j] = a_lo;
        alpha_hi[j] = a_hi;
        sigma_lo[j] = s_lo;
        sigma_hi[j] = s_hi;
    }
    Ok(SectorSlopeBounds {
        h_lo: h_lo.clone(),
        h_hi: h_hi.clone(),
        alpha_lo,
        alpha_hi,
        sigma_lo,
        sigma_hi,
    })
}

/// Interval image of a linear map: bounds on `M v` for `v` in `[lo, hi]`.
fn interval_map(m: &DMatrix<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut out_lo = DVector::zeros(m.nrows());
    let mut out_hi = DVector::zeros(m.nrows());
    for r in 0..m.nrows() {
        let (mut l, mut h) = (0.0, 0.0);
        for c in 0..m.ncols() {
            let k = m[(r, c)];
            let (a, b) = (k * lo[c], k * hi[c]);
            l += a.min(b);
            h += a.max(b);
        }
        out_lo[r] = l;
        out_hi[r] = h;
    }
    (out_lo, out_hi)
}

/// Bounds the pre-activation `h = K1 z(t-1) + (K2 + K3 (S ⊗ I_n)) x` over a
/// state box.
///
/// For bounded activations the memory is bracketed by the activation's
/// range outright, which gives a one-shot sound box. For unbounded
/// activations the box is grown by fixed-point iteration of the interval
/// map starting from `z(-1) = 0` (the controller's actual start); if 50
/// iterations do not settle the loop gain is too large for any finite box
/// and the function fails.
pub fn input_box(
    blocks: &WeightBlocks,
    shift: &DMatrix<f64>,
    state_dim: usize,
    activation: &dyn Activation,
    x_lo: &DVector<f64>,
    x_hi: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kx = blocks.state_to_hidden(shift, state_dim);
    let pn = kx.nrows();
    if x_lo.len() != kx.ncols() || x_hi.len() != kx.ncols() {
        return Err(Error::invalid(format!(
            "state box has length {}, stacked state dimension is {}",
            x_lo.len(),
            kx.ncols()
        )));
    }
    for j in 0..x_lo.len() {
        if !(x_lo[j] <= 0.0 && 0.0 <= x_hi[j]) {
            return Err(Error::invalid(format!(
                "state box coordinate {j} [{}, {}] must contain 0",
                x_lo[j], x_hi[j]
            )));
        }
    }
    let (hx_lo, hx_hi) = interval_map(&kx, x_lo, x_hi);
    let (range_lo, range_hi) = activation.range();
    if range_lo.is_finite() && range_hi.is_finite() {
        let z_lo = DVector::from_element(pn, range_lo);
        let z_hi = DVector::from_element(pn, range_hi);
        let (hz_lo, hz_hi) = interval_map(&blocks.k1, &z_lo, &z_hi);
        return Ok((hx_lo + hz_lo, hx_hi + hz_hi));
    }
    // Unbounded activation: grow the memory box from z(-1) = 0 until the
    // induced h-box stops moving. The z refresh comes first each round —
    // otherwise the opening round replays the z = 0 image and the drift
    // check declares victory before the box has grown at all.
    let mut z_lo = DVector::zeros(pn);
    let mut z_hi = DVector::zeros(pn);
    let mut h_lo = hx_lo.clone();
    let mut h_hi = hx_hi.clone();
    for _ in 0..50 {
        // Monotone image of the activation over the current h-box.
        for j in 0..pn {
            z_lo[j] = activation.value(h_lo[j]);
            z_hi[j] = activation.value(h_hi[j]);
        }
        let (hz_lo, hz_hi) = interval_map(&blocks.k1, &z_lo, &z_hi);
        let new_h_lo = &hx_lo + hz_lo;
        let new_h_hi = &hx_hi + hz_hi;
        if new_h_lo.iter().chain(new_h_hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "input box iteration overflowed (unbounded activation, expansive memory loop)",
            ));
        }
        let drift = (&new_h_lo - &h_lo)
            .amax()
            .max((&new_h_hi - &h_hi).amax());
        h_lo = new_h_lo;
        h_hi = new_h_hi;
        let scale = 1.0 + h_lo.amax().max(h_hi.amax());
        if drift <= 1e-12 * scale {
            return Ok((h_lo, h_hi));
        }
    }
    Err(Error::numerical(
        "input box iteration did not converge within 50 rounds (unbounded activation)",
    ))
}
