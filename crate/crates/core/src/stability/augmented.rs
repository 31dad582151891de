//! The augmented closed loop the certificate is checked on.
//!
//! The loop state is `ξ(t) = [x(t); h(t−1); z(t−1)]` and the activation's
//! input/output pair `w(t) = [h(t); z(t)]` is treated as an external signal
//! constrained by the IQC:
//!
//! ```text
//! ξ(t+1) = A_Ξ ξ(t) + B_Ξ w(t)
//! q(t)   = C_Ξ ξ(t) + D_Ξ w(t)
//! ```
//!
//! where the `x`-row reproduces the plant under `u = K4 z`, the `h`-row
//! stores the freshly computed pre-activation `(K2 + K3(S ⊗ I_n))x + K1
//! z(t−1)`, the `z`-row stores `z(t)`, and `q` stacks the six constraint
//! blocks (sector and slope rows from `w`, filter rows from `ξ`'s tail).

use crate::error::{Error, Result};
use crate::grnn::{stacked_weight_blocks, NodeWeights};
use crate::stability::bounds::SectorSlopeBounds;
use crate::system::NetworkedSystem;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub a_xi: DMatrix<f64>,
    pub b_xi: DMatrix<f64>,
    pub c_xi: DMatrix<f64>,
    pub d_xi: DMatrix<f64>,
    /// Stacked plant state dimension `nN` (offset 0 of ξ).
    pub n_total: usize,
    /// Stacked hidden dimension `pN`; `h(t−1)` sits at offset `n_total`,
    /// `z(t−1)` at `n_total + p_total`.
    pub p_total: usize,
}

impl AugmentedSystem {
    pub fn xi_dim(&self) -> usize {
        self.n_total + 2 * self.p_total
    }

    pub fn w_dim(&self) -> usize {
        2 * self.p_total
    }

    pub fn q_dim(&self) -> usize {
        6 * self.p_total
    }
}

/// Assembles the augmented system from the plant, the per-node controller
/// weights, the shift matrix, and the bounds (whose sector/slope diagonals
/// enter `C_Ξ`/`D_Ξ`).
pub fn build_augmented(
    system: &NetworkedSystem,
    weights: &[NodeWeights],
    shift: &DMatrix<f64>,
    bounds: &SectorSlopeBounds,
) -> Result<AugmentedSystem> {
    let blocks = stacked_weight_blocks(weights)?;
    let n = system.state_dim();
    let nn = system.a().nrows();
    let pn = blocks.k1.nrows();
    let mn = system.b().ncols();
    if blocks.k2.ncols() != nn {
        return Err(Error::invalid(
            "controller state dimension does not match the plant",
        ));
    }
    if blocks.k4.nrows() != mn {
        return Err(Error::invalid(
            "controller output dimension does not match the plant input",
        ));
    }
    if bounds.dim() != pn {
        return Err(Error::invalid(format!(
            "bounds cover {} hidden coordinates, controller has {pn}",
            bounds.dim()
        )));
    }
    if shift.nrows() != system.n_nodes() || shift.ncols() != system.n_nodes() {
        return Err(Error::invalid("shift matrix must be node-by-node"));
    }
    let kx = blocks.state_to_hidden(shift, n);
    let xi = nn + 2 * pn;

    let mut a_xi = DMatrix::zeros(xi, xi);
    a_xi.view_mut((0, 0), (nn, nn)).copy_from(system.a());
    a_xi.view_mut((nn, 0), (pn, nn)).copy_from(&kx);
    a_xi.view_mut((nn, nn + pn), (pn, pn)).copy_from(&blocks.k1);

    let mut b_xi = DMatrix::zeros(xi, 2 * pn);
    b_xi.view_mut((0, pn), (nn, pn))
        .copy_from(&(system.b() * &blocks.k4));
    b_xi.view_mut((nn + pn, pn), (pn, pn))
        .copy_from(&DMatrix::identity(pn, pn));

    let eye = DMatrix::<f64>::identity(pn, pn);
    let mut c_xi = DMatrix::zeros(6 * pn, xi);
    // Filter rows: q4 = -diag(σ̄) h(t−1) + z(t−1), q5 = diag(σ̲) h(t−1) − z(t−1).
    c_xi.view_mut((4 * pn, nn), (pn, pn))
        .copy_from(&(-DMatrix::from_diagonal(&bounds.sigma_hi)));
    c_xi.view_mut((4 * pn, nn + pn), (pn, pn)).copy_from(&eye);
    c_xi.view_mut((5 * pn, nn), (pn, pn))
        .copy_from(&DMatrix::from_diagonal(&bounds.sigma_lo));
    c_xi.view_mut((5 * pn, nn + pn), (pn, pn)).copy_from(&(-&eye));

    let mut d_xi = DMatrix::zeros(6 * pn, 2 * pn);
    d_xi.view_mut((0, 0), (pn, pn))
        .copy_from(&DMatrix::from_diagonal(&bounds.alpha_hi));
    d_xi.view_mut((0, pn), (pn, pn)).copy_from(&(-&eye));
    d_xi.view_mut((pn, 0), (pn, pn))
        .copy_from(&(-DMatrix::from_diagonal(&bounds.alpha_lo)));
    d_xi.view_mut((pn, pn), (pn, pn)).copy_from(&eye);
    d_xi.view_mut((2 * pn, 0), (pn, pn))
        .copy_from(&DMatrix::from_diagonal(&bounds.sigma_hi));
    d_xi.view_mut((2 * pn, pn), (pn, pn)).copy_from(&(-&eye));
    d_xi.view_mut((3 * pn, 0), (pn, pn))
        .copy_from(&(-DMatrix::from_diagonal(&bounds.sigma_lo)));
    d_xi.view_mut((3 * pn, pn), (pn, pn)).copy_from(&eye);

    Ok(AugmentedSystem {
        a_xi,
        b_xi,
        c_xi,
        d_xi,
        n_total: nn,
        p_total: pn,
    })
}

/// Simulates the augmented loop for `steps` steps from plant state `x0`
/// (controller memory zero), closing the activation `z = σ(h)` exactly.
/// Returns the plant-state trajectory (including `x0`). This must match a
/// direct closed-loop rollout — it is the consistency oracle for the block
/// assembly.
pub fn simulate_augmented(
    aug: &AugmentedSystem,
    kx: &DMatrix<f64>,
    k1: &DMatrix<f64>,
    activation: &dyn crate::activation::Activation,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let nn = aug.n_total;
    let pn = aug.p_total;
    if x0.len() != nn {
        return Err(Error::invalid("x0 must have the stacked plant dimension"));
    }
    let mut xi = DVector::zeros(aug.xi_dim());
    xi.rows_mut(0, nn).copy_from(x0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for _ in 0..steps {
        let x = xi.rows(0, nn).into_owned();
        let z_prev = xi.rows(nn + pn, pn).into_owned();
        let h = kx * &x + k1 * &z_prev;
        let z = h.map(|v| activation.value(v));
        let mut w = DVector::zeros(2 * pn);
        w.rows_mut(0, pn).copy_from(&h);
        w.rows_mut(pn, pn).copy_from(&z);
        xi = &aug.a_xi * &xi + &aug.b_xi * &w;
        out.push(xi.rows(0, nn).into_owned());
    }
    Ok(out)
}
