//! Pairwise binary-constrained penalty loss.
//!
//! For a pair `(i, j)` with label `y`, head outputs `f` and auxiliary sign
//! vectors `b`:
//!
//! ```text
//! L = y·‖fi − fj‖² + (1 − y)·max(0, c − ‖fi − fj‖)² + α·(‖fi − bi‖² + ‖fj − bj‖²)
//! ```
//!
//! The hinge takes the unsquared distance inside the `max` and squares the
//! result. At `d = 0` its subgradient is taken as zero; at `d = c` it is
//! inactive.

use crate::error::{Error, Result};
use crate::mining::TrainingPair;
use crate::numkit::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// Hinge margin `c`.
    pub margin: f64,
    /// Weight `α` of the quantization penalty.
    pub alpha: f64,
}

impl LossParams {
    /// `c = L / 2`, `α = 1`.
    pub fn for_code_len(code_len: usize) -> Self {
        Self {
            margin: code_len as f64 / 2.0,
            alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Param(format!(
                "margin must be finite and > 0, got {}",
                self.margin
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Param(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairLossBreakdown {
    pub similarity: f64,
    pub hinge: f64,
    pub quantization: f64,
    pub total: f64,
}

impl std::ops::AddAssign for PairLossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.similarity += o.similarity;
        self.hinge += o.hinge;
        self.quantization += o.quantization;
        self.total += o.total;
    }
}

fn check_inputs(fi: &[f64], fj: &[f64], bi: &[f64], bj: &[f64]) -> Result<()> {
    let l = fi.len();
    if fj.len() != l || bi.len() != l || bj.len() != l {
        return Err(Error::Contract(format!(
            "pair vectors differ in length: {} {} {} {}",
            l,
            fj.len(),
            bi.len(),
            bj.len()
        )));
    }
    if bi.iter().chain(bj).any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Contract("auxiliary codes must be ±1".into()));
    }
    Ok(())
}

pub fn pair_loss(
    fi: &[f64],
    fj: &[f64],
    bi: &[f64],
    bj: &[f64],
    matching: bool,
    p: &LossParams,
) -> Result<PairLossBreakdown> {
    check_inputs(fi, fj, bi, bj)?;
    let d2 = squared_distance(fi, fj);
    let (similarity, hinge) = if matching {
        (d2, 0.0)
    } else {
        let gap = (p.margin - d2.sqrt()).max(0.0);
        (0.0, gap * gap)
    };
    let quantization = p.alpha * (squared_distance(fi, bi) + squared_distance(fj, bj));
    Ok(PairLossBreakdown {
        similarity,
        hinge,
        quantization,
        total: similarity + hinge + quantization,
    })
}

/// `(∂L/∂fi, ∂L/∂fj)`.
pub fn pair_grad(
    fi: &[f64],
    fj: &[f64],
    bi: &[f64],
    bj: &[f64],
    matching: bool,
    p: &LossParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(fi, fj, bi, bj)?;
    // coefficient on (fi - fj) in ∂L/∂fi
    let coef = if matching {
        2.0
    } else {
        let d = squared_distance(fi, fj).sqrt();
        if d > 0.0 && d < p.margin {
            -2.0 * (p.margin - d) / d
        } else {
            0.0
        }
    };
    let two_alpha = 2.0 * p.alpha;
    let mut gi = Vec::with_capacity(fi.len());
    let mut gj = Vec::with_capacity(fi.len());
    for k in 0..fi.len() {
        let diff = coef * (fi[k] - fj[k]);
        gi.push(diff + two_alpha * (fi[k] - bi[k]));
        gj.push(-diff + two_alpha * (fj[k] - bj[k]));
    }
    Ok((gi, gj))
}

/// Summed loss of `pairs`, with `f` and `b` indexed by world image index.
pub fn pair_set_loss(
    f: &Matrix,
    b: &Matrix,
    pairs: &[TrainingPair],
    p: &LossParams,
) -> Result<PairLossBreakdown> {
    let mut total = PairLossBreakdown::default();
    for pair in pairs {
        total += pair_loss(
            f.row(pair.query),
            f.row(pair.other),
            b.row(pair.query),
            b.row(pair.other),
            pair.matching,
            p,
        )?;
    }
    Ok(total)
}

/// Deviation of `|f|` from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationStats {
    pub mean_abs_dev: f64,
    pub max_abs_dev: f64,
}

pub fn quantization_stats(f: &Matrix) -> QuantizationStats {
    let data = f.data();
    if data.is_empty() {
        return QuantizationStats {
            mean_abs_dev: 0.0,
            max_abs_dev: 0.0,
        };
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for v in data {
        let dev = (v.abs() - 1.0).abs();
        sum += dev;
        max = max.max(dev);
    }
    QuantizationStats {
        mean_abs_dev: sum / data.len() as f64,
        max_abs_dev: max,
    }
}
