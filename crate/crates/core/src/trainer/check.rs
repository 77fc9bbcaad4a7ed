use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{joint_loss, Freeze};
use crate::error::Result;
use crate::extractor::{ExtractorParams, RoutingConfig, RoutingGradient};
use crate::ingest::TrainSample;
use crate::numeric::{check_gradient, GradCheckConfig, GradCheckReport};
use crate::regularizers::{Separator, SeparatorKind};

/// Shape of the end-to-end finite-difference instance.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCheck {
    pub d: usize,
    pub k: usize,
    pub history: usize,
    pub n_neg: usize,
    pub n_items: usize,
    pub separator: SeparatorKind,
    pub lambda: f64,
    pub gradient: RoutingGradient,
    pub profile: bool,
    pub seed: u64,
}

impl Default for JointCheck {
    fn default() -> Self {
        Self {
            d: 4,
            k: 2,
            history: 3,
            n_neg: 2,
            n_items: 9,
            separator: SeparatorKind::Diverse,
            lambda: 0.5,
            gradient: RoutingGradient::StopGradient,
            profile: true,
            seed: 0,
        }
    }
}

/// Compares `joint_loss` gradients for every parameter against central
/// differences on a random instance. The argmax interest is pinned, and in
/// stop-gradient mode so are the final couplings, which is the function the
/// analytic gradient differentiates.
pub fn check_joint_gradients(check: &JointCheck, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let n_profile = if check.profile { 3 } else { 0 };
    let params = ExtractorParams::init(check.n_items, n_profile, check.d, check.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed ^ 0xF00D);
    let picks = sample(&mut rng, check.n_items, check.history + 1 + check.n_neg);
    let picked: Vec<usize> = picks.iter().map(|i| i + 1).collect();
    let sample = TrainSample {
        user_index: 0,
        history: picked[..check.history].to_vec(),
        target: picked[check.history],
        profile: if check.profile { vec![1] } else { Vec::new() },
    };
    let negatives = picked[check.history + 1..].to_vec();
    let routing = RoutingConfig {
        k: check.k,
        gradient: check.gradient,
        ..RoutingConfig::default()
    };
    let separator = Separator::new(check.separator, check.lambda);

    let mut grads = params.zero_grads();
    let base = joint_loss(
        &params,
        &sample,
        &negatives,
        &routing,
        &separator,
        Freeze::default(),
        Some(&mut grads),
    )?;
    let freeze = Freeze {
        selection: Some(base.selected),
        coupling: match check.gradient {
            RoutingGradient::StopGradient => Some(&base.coupling),
            RoutingGradient::Full => None,
        },
    };
    let x0 = params.flatten();
    let mut probe = params.clone();
    let loss = |x: &[f64]| {
        probe.assign_flat(x);
        joint_loss(&probe, &sample, &negatives, &routing, &separator, freeze, None)
            .map(|p| p.total)
            .unwrap_or(f64::NAN)
    };
    Ok(check_gradient(loss, &x0, &grads.flatten(), cfg))
}

/// Every separator kind at λ ∈ {0, 0.5} under both routing gradient modes.
pub fn joint_check_grid(seed: u64) -> Vec<JointCheck> {
    let mut out = Vec::new();
    for gradient in [RoutingGradient::StopGradient, RoutingGradient::Full] {
        for separator in [
            SeparatorKind::None,
            SeparatorKind::Entropy,
            SeparatorKind::MeanSquare,
            SeparatorKind::Diverse,
        ] {
            for lambda in [0.0, 0.5] {
                out.push(JointCheck {
                    separator,
                    lambda,
                    gradient,
                    seed,
                    ..JointCheck::default()
                });
            }
        }
    }
    out
}
