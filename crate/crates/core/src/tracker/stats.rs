//! Per-state sufficient statistics of the weighted least-squares loss.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Omega = sum_tau w_tau Y_tau Y_tau^T`, `ybar = sum_tau w_tau Y_tau`,
/// `alpha = sum_tau w_tau`, with `w_tau = beta^{t - tau}` over the
/// intervals assigned to this state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateStats {
    pub omega: DMatrix<f64>,
    pub ybar: DMatrix<f64>,
    pub alpha: f64,
}

impl StateStats {
    pub fn zeros(n: usize, c: usize) -> Self {
        StateStats {
            omega: DMatrix::zeros(n, n),
            ybar: DMatrix::zeros(n, c),
            alpha: 0.0,
        }
    }

    /// `Omega <- beta Omega + Y Y^T`, `ybar <- beta ybar + Y`,
    /// `alpha <- beta alpha + 1`.
    pub fn absorb(&mut self, y: &DMatrix<f64>, beta: f64) {
        self.decay(beta);
        self.omega += y * y.transpose();
        self.ybar += y;
        self.alpha += 1.0;
    }

    pub fn decay(&mut self, beta: f64) {
        if beta != 1.0 {
            self.omega *= beta;
            self.ybar *= beta;
            self.alpha *= beta;
        }
    }
}

/// Statistics of every state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerStats {
    pub states: Vec<StateStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsShape {
    pub n_states: usize,
    pub n_nodes: usize,
    pub n_cascades: usize,
}

impl TrackerStats {
    pub fn zeros(n_states: usize, n: usize, c: usize) -> Self {
        TrackerStats {
            states: (0..n_states).map(|_| StateStats::zeros(n, c)).collect(),
        }
    }

    pub fn shape(&self) -> StatsShape {
        let first = &self.states[0];
        StatsShape {
            n_states: self.states.len(),
            n_nodes: first.ybar.nrows(),
            n_cascades: first.ybar.ncols(),
        }
    }

    pub fn state(&self, s: usize) -> &StateStats {
        &self.states[s - 1]
    }
}

/// Adds interval `Y` to state `s_hat` (1-based). With `beta < 1` every
/// other state is decayed as well, since the forgetting weights run over
/// all past intervals regardless of the state they were assigned to.
pub fn update_stats(
    stats: &mut TrackerStats,
    y: &DMatrix<f64>,
    s_hat: usize,
    beta: f64,
) -> Result<()> {
    if s_hat == 0 || s_hat > stats.states.len() {
        return Err(Error::invalid(format!(
            "state {s_hat} outside 1..={}",
            stats.states.len()
        )));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!(
            "forgetting factor {beta} outside (0, 1]"
        )));
    }
    let shape = stats.shape();
    if y.shape() != (shape.n_nodes, shape.n_cascades) {
        return Err(Error::dims(format!(
            "Y is {}x{}, stats expect {}x{}",
            y.nrows(),
            y.ncols(),
            shape.n_nodes,
            shape.n_cascades
        )));
    }
    for (idx, st) in stats.states.iter_mut().enumerate() {
        if idx + 1 == s_hat {
            st.absorb(y, beta);
        } else {
            st.decay(beta);
        }
    }
    Ok(())
}
