//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Relative tolerance above which a coordinate is flagged.
    pub rel_tol: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub abs_floor: f64,
    /// Check only this many randomly chosen coordinates (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordError>,
    /// Coordinates whose relative error exceeds `rel_tol`.
    pub flagged: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// `loss` must be deterministic: it is evaluated twice per checked coordinate.
pub fn check_gradient<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let coords: Vec<usize> = match cfg.max_coords {
        Some(m) if m < params.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, params.len(), m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..params.len()).collect(),
    };

    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        checked: coords.len(),
        max_rel_error: 0.0,
        worst: None,
        flagged: Vec::new(),
    };
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + cfg.step;
        let plus = loss(&x);
        x[i] = orig - cfg.step;
        let minus = loss(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let rel = relative_error(analytic[i], numeric, cfg.abs_floor);
        let entry = CoordError {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_error: rel,
        };
        // NaN compares false everywhere, so route it explicitly
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst = Some(entry.clone());
        }
        if !(rel <= cfg.rel_tol) {
            report.flagged.push(entry);
        }
    }
    report
}
