//! Diversity separators over a user's `K × d` interest matrix.
//!
//! Each loss is non-positive and is minimized, so adding it with a positive
//! weight rewards spreading the interests apart.

use std::str::FromStr;

use crate::error::{DrimError, Result};
use crate::numeric::{dot, norm, softmax, DenseMatrix};

/// Row norms below this make the angular loss undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeparatorKind {
    #[default]
    None,
    Entropy,
    MeanSquare,
    Diverse,
}

impl FromStr for SeparatorKind {
    type Err = DrimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SeparatorKind::None),
            "entropy" => Ok(SeparatorKind::Entropy),
            "mean" | "mean_square" => Ok(SeparatorKind::MeanSquare),
            "div" | "diverse" => Ok(SeparatorKind::Diverse),
            other => Err(DrimError::Config(format!("unknown separator {other:?}"))),
        }
    }
}

impl std::fmt::Display for SeparatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SeparatorKind::None => "none",
            SeparatorKind::Entropy => "entropy",
            SeparatorKind::MeanSquare => "mean",
            SeparatorKind::Diverse => "div",
        })
    }
}

/// Sign convention for the angular loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DivSign {
    /// `−mean(1 − cos)`: minimizing it increases angular spread.
    #[default]
    Corrected,
    /// `+mean(1 − cos)` as literally added to the matching loss.
    Paper,
}

impl FromStr for DivSign {
    type Err = DrimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(DivSign::Corrected),
            "paper" => Ok(DivSign::Paper),
            other => Err(DrimError::Config(format!("unknown div_sign {other:?}"))),
        }
    }
}

impl std::fmt::Display for DivSign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DivSign::Corrected => "corrected",
            DivSign::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separator {
    pub kind: SeparatorKind,
    pub lambda: f64,
    pub div_sign: DivSign,
}

impl Default for Separator {
    fn default() -> Self {
        Self {
            kind: SeparatorKind::None,
            lambda: 0.1,
            div_sign: DivSign::Corrected,
        }
    }
}

impl Separator {
    pub fn new(kind: SeparatorKind, lambda: f64) -> Self {
        Self {
            kind,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DrimError::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Whether the separator contributes at all.
    pub fn is_active(&self) -> bool {
        self.kind != SeparatorKind::None && self.lambda > 0.0
    }

    /// Unweighted separator loss and its gradient; `None` for `SeparatorKind::None`.
    pub fn evaluate(&self, interests: &DenseMatrix) -> Result<Option<(f64, DenseMatrix)>> {
        Ok(match self.kind {
            SeparatorKind::None => None,
            SeparatorKind::Entropy => Some(entropy_loss(interests)),
            SeparatorKind::MeanSquare => Some(mean_square_loss(interests)),
            SeparatorKind::Diverse => {
                let (l, mut g) = diverse_loss(interests)?;
                match self.div_sign {
                    DivSign::Corrected => Some((l, g)),
                    DivSign::Paper => {
                        g.scale(-1.0);
                        Some((-l, g))
                    }
                }
            }
        })
    }
}

/// `−Σ_k H(softmax(v_k))`, the negated sum of per-capsule component entropies.
pub fn entropy_loss(interests: &DenseMatrix) -> (f64, DenseMatrix) {
    let (k, d) = interests.shape();
    let mut grad = DenseMatrix::zeros(k, d);
    let mut loss = 0.0;
    for j in 0..k {
        let p = softmax(interests.row(j));
        let log_p: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let h = -dot(&p, &log_p);
        loss -= h;
        // ∂(−H)/∂v_m = p_m (ln p_m + H)
        for (m, g) in grad.row_mut(j).iter_mut().enumerate() {
            *g = p[m] * (log_p[m] + h);
        }
    }
    (loss, grad)
}

/// `−Σ_k ‖v_k − v̄‖²` with `v̄` the mean interest vector.
pub fn mean_square_loss(interests: &DenseMatrix) -> (f64, DenseMatrix) {
    let (k, d) = interests.shape();
    let mut mean = vec![0.0; d];
    for row in interests.iter_rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / k as f64;
        }
    }
    let mut grad = DenseMatrix::zeros(k, d);
    let mut loss = 0.0;
    for j in 0..k {
        for m in 0..d {
            let diff = interests.get(j, m) - mean[m];
            loss -= diff * diff;
            // the v̄ terms cancel because deviations sum to zero
            grad.set(j, m, -2.0 * diff);
        }
    }
    (loss, grad)
}

/// `−(2/(K(K−1))) Σ_{i<j} (1 − cos(v_i, v_j))`, the negated mean pairwise
/// angular distance. Needs `K ≥ 2` and non-degenerate rows.
pub fn diverse_loss(interests: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let (k, d) = interests.shape();
    if k < 2 {
        return Err(DrimError::Precondition(
            "the angular separator needs at least two interests".into(),
        ));
    }
    let norms: Vec<f64> = interests.iter_rows().map(norm).collect();
    if let Some((row, &n)) = norms.iter().enumerate().find(|(_, &n)| !(n > DEGENERATE_NORM)) {
        return Err(DrimError::DegenerateVector { row, norm: n });
    }
    let scale = 2.0 / (k * (k - 1)) as f64;
    let mut grad = DenseMatrix::zeros(k, d);
    let mut loss = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let (vi, vj) = (interests.row(i), interests.row(j));
            let (ni, nj) = (norms[i], norms[j]);
            let cos = dot(vi, vj) / (ni * nj);
            loss -= scale * (1.0 - cos);
            // ∂cos/∂v_i = v_j/(‖v_i‖‖v_j‖) − cos·v_i/‖v_i‖²
            for m in 0..d {
                let gi = vj[m] / (ni * nj) - cos * vi[m] / (ni * ni);
                let gj = vi[m] / (ni * nj) - cos * vj[m] / (nj * nj);
                grad.set(i, m, grad.get(i, m) + scale * gi);
                grad.set(j, m, grad.get(j, m) + scale * gj);
            }
        }
    }
    Ok((loss, grad))
}
