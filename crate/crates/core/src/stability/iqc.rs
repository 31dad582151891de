//! The integral quadratic constraint satisfied by the activation.
//!
//! For `z(t) = σ(h(t))` with `h(t)` in the bounds' box, the filtered signal
//!
//! ```text
//! q(t) = [ diag(ᾱ)h − z;  −diag(α̲)h + z;          (sector rows)
//!          diag(σ̄)h − z;  −diag(σ̲)h + z;          (slope rows)
//!          ψ(t) ]                                     (previous slope rows)
//! ψ(t+1) = [−diag(σ̄); diag(σ̲)] h(t) + [I; −I] z(t),   ψ(0) = 0
//! ```
//!
//! satisfies `Σ_{τ≤T} q(τ)ᵀ Q q(τ) ≥ 0` for every prefix `T`, where `Q`
//! couples sector rows with multiplier `μ`, the time-`t` slope rows with
//! `η0`, and the time-`t`/time-`t−1` slope rows with `η̄`, `η̲`. The sum is
//! nonnegative because each sector product is pointwise nonnegative, while
//! the slope part telescopes: both `σ̄h − σ(h)` and `σ(h) − σ̲h` are
//! nondecreasing functions of `h` vanishing at 0, so the cross terms are
//! dominated by the diagonal ones whenever `η0 ⪰ η̲ + η̄`.

use crate::error::{Error, Result};
use crate::stability::bounds::SectorSlopeBounds;
use nalgebra::{DMatrix, DVector};

/// Multipliers parameterizing the constraint. `mu` weighs the sector rows
/// (length `pN`); the `eta` vectors weigh the slope rows and live in
/// `R^{2pN}` — one entry per row of the doubled slope stack.
#[derive(Debug, Clone, PartialEq)]
pub struct IqcMultipliers {
    pub mu: DVector<f64>,
    pub eta0: DVector<f64>,
    pub eta_lo: DVector<f64>,
    pub eta_hi: DVector<f64>,
}

impl IqcMultipliers {
    pub fn zeros(pn: usize) -> Self {
        IqcMultipliers {
            mu: DVector::zeros(pn),
            eta0: DVector::zeros(2 * pn),
            eta_lo: DVector::zeros(2 * pn),
            eta_hi: DVector::zeros(2 * pn),
        }
    }

    /// Uniform multipliers: `mu` everywhere, `eta0` everywhere, and the
    /// cross vectors at `eta0/2` each (dominance tight).
    pub fn uniform(pn: usize, mu: f64, eta0: f64) -> Self {
        IqcMultipliers {
            mu: DVector::from_element(pn, mu),
            eta0: DVector::from_element(2 * pn, eta0),
            eta_lo: DVector::from_element(2 * pn, eta0 / 2.0),
            eta_hi: DVector::from_element(2 * pn, eta0 / 2.0),
        }
    }

    /// Hidden dimension `pN` these multipliers cover.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Nonnegativity and the dominance `eta0 ⪰ eta_lo + eta_hi`, exact.
    pub fn validate(&self) -> Result<()> {
        let pn = self.mu.len();
        if self.eta0.len() != 2 * pn || self.eta_lo.len() != 2 * pn || self.eta_hi.len() != 2 * pn {
            return Err(Error::invalid(
                "eta vectors must have twice the length of mu",
            ));
        }
        if self
            .mu
            .iter()
            .chain(self.eta0.iter())
            .chain(self.eta_lo.iter())
            .chain(self.eta_hi.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::invalid("multipliers must be finite and nonnegative"));
        }
        for j in 0..2 * pn {
            if self.eta0[j] < self.eta_lo[j] + self.eta_hi[j] {
                return Err(Error::invalid(format!(
                    "slope multiplier dominance violated at row {j}: {} < {} + {}",
                    self.eta0[j], self.eta_lo[j], self.eta_hi[j]
                )));
            }
        }
        Ok(())
    }
}

/// State-space realization of the constraint filter. The filter state is
/// `ψ ∈ R^{2pN}` with no self-dynamics:
/// `ψ(t+1) = b_h h(t) + b_z z(t)`, `q(t) = c_psi ψ(t) + d_h h(t) + d_z z(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiRealization {
    pub b_h: DMatrix<f64>,
    pub b_z: DMatrix<f64>,
    pub c_psi: DMatrix<f64>,
    pub d_h: DMatrix<f64>,
    pub d_z: DMatrix<f64>,
}

impl PsiRealization {
    /// Output dimension of `q` (six stacked `pN` blocks).
    pub fn q_dim(&self) -> usize {
        self.c_psi.nrows()
    }
}

/// Assembles the filter realization and the coupling matrix `Q` for the
/// given bounds and multipliers.
pub fn build_iqc(
    bounds: &SectorSlopeBounds,
    multipliers: &IqcMultipliers,
) -> Result<(PsiRealization, DMatrix<f64>)> {
    multipliers.validate()?;
    let pn = bounds.dim();
    if multipliers.dim() != pn {
        return Err(Error::invalid(format!(
            "multipliers cover {} coordinates, bounds cover {pn}",
            multipliers.dim()
        )));
    }
    let eye = DMatrix::<f64>::identity(pn, pn);
    let d_sig_hi = DMatrix::from_diagonal(&bounds.sigma_hi);
    let d_sig_lo = DMatrix::from_diagonal(&bounds.sigma_lo);
    let d_alp_hi = DMatrix::from_diagonal(&bounds.alpha_hi);
    let d_alp_lo = DMatrix::from_diagonal(&bounds.alpha_lo);

    let mut b_h = DMatrix::zeros(2 * pn, pn);
    b_h.view_mut((0, 0), (pn, pn)).copy_from(&(-&d_sig_hi));
    b_h.view_mut((pn, 0), (pn, pn)).copy_from(&d_sig_lo);
    let mut b_z = DMatrix::zeros(2 * pn, pn);
    b_z.view_mut((0, 0), (pn, pn)).copy_from(&eye);
    b_z.view_mut((pn, 0), (pn, pn)).copy_from(&(-&eye));

    let mut c_psi = DMatrix::zeros(6 * pn, 2 * pn);
    c_psi
        .view_mut((4 * pn, 0), (2 * pn, 2 * pn))
        .copy_from(&DMatrix::identity(2 * pn, 2 * pn));

    let mut d_h = DMatrix::zeros(6 * pn, pn);
    d_h.view_mut((0, 0), (pn, pn)).copy_from(&d_alp_hi);
    d_h.view_mut((pn, 0), (pn, pn)).copy_from(&(-&d_alp_lo));
    d_h.view_mut((2 * pn, 0), (pn, pn)).copy_from(&d_sig_hi);
    d_h.view_mut((3 * pn, 0), (pn, pn)).copy_from(&(-&d_sig_lo));
    let mut d_z = DMatrix::zeros(6 * pn, pn);
    d_z.view_mut((0, 0), (pn, pn)).copy_from(&(-&eye));
    d_z.view_mut((pn, 0), (pn, pn)).copy_from(&eye);
    d_z.view_mut((2 * pn, 0), (pn, pn)).copy_from(&(-&eye));
    d_z.view_mut((3 * pn, 0), (pn, pn)).copy_from(&eye);

    let q = coupling_matrix(multipliers)?;

    Ok((
        PsiRealization {
            b_h,
            b_z,
            c_psi,
            d_h,
            d_z,
        },
        q,
    ))
}

/// The coupling matrix `Q` alone. It depends only on the multipliers: the
/// sector pair couples through `μ`, the slope pairs through halves-averages
/// of the stored `2pN`-length eta vectors, so uniform vectors behave as the
/// obvious scalars.
pub fn coupling_matrix(multipliers: &IqcMultipliers) -> Result<DMatrix<f64>> {
    multipliers.validate()?;
    let pn = multipliers.dim();
    let half_avg = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(pn, |j, _| 0.5 * (v[j] + v[pn + j]))
    };
    let e0 = half_avg(&multipliers.eta0);
    let c_hi = half_avg(&multipliers.eta_hi);
    let c_lo = half_avg(&multipliers.eta_lo);

    let mut q = DMatrix::zeros(6 * pn, 6 * pn);
    let set_pair = |q: &mut DMatrix<f64>, br: usize, bc: usize, d: &DVector<f64>| {
        for j in 0..pn {
            q[(br * pn + j, bc * pn + j)] = d[j];
            q[(bc * pn + j, br * pn + j)] = d[j];
        }
    };
    set_pair(&mut q, 0, 1, &multipliers.mu);
    set_pair(&mut q, 2, 3, &e0);
    set_pair(&mut q, 2, 5, &c_hi);
    set_pair(&mut q, 3, 4, &c_lo);
    Ok(q)
}

/// Evaluates the running sums `Σ_{τ≤T} q(τ)ᵀQq(τ)` of the constraint along
/// an `h`-sequence with `z = σ(h)`, returning one prefix value per step.
/// Test instrumentation for the nonnegativity claim.
pub fn constraint_prefix_sums(
    psi_real: &PsiRealization,
    q: &DMatrix<f64>,
    h_seq: &[DVector<f64>],
    z_seq: &[DVector<f64>],
) -> Result<Vec<f64>> {
    if h_seq.len() != z_seq.len() {
        return Err(Error::invalid("h and z sequences must have equal length"));
    }
    let pn = psi_real.d_h.ncols();
    let mut psi = DVector::zeros(2 * pn);
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(h_seq.len());
    for (h, z) in h_seq.iter().zip(z_seq) {
        if h.len() != pn || z.len() != pn {
            return Err(Error::invalid("sequence dimension mismatch"));
        }
        let qv = &psi_real.c_psi * &psi + &psi_real.d_h * h + &psi_real.d_z * z;
        acc += (qv.transpose() * q * &qv)[(0, 0)];
        out.push(acc);
        psi = &psi_real.b_h * h + &psi_real.b_z * z;
    }
    Ok(out)
}
