use crate::error::{DrimError, Result};
use crate::extractor::{self, ExtractorParams, Gradients, RoutingConfig};
use crate::ingest::{TrainSample, PADDING};
use crate::numeric::{axpy, dot, ops::log_sum_exp, softmax, DenseMatrix};
use crate::regularizers::Separator;

/// Gradients of [`sampled_softmax_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGrads {
    pub user: Vec<f64>,
    pub target: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Cross-entropy of the target against `{target} ∪ negatives` under
/// inner-product logits.
pub fn sampled_softmax_loss(user: &[f64], target: &[f64], negatives: &[&[f64]]) -> (f64, SoftmaxGrads) {
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(dot(user, target));
    logits.extend(negatives.iter().map(|e| dot(user, e)));
    let loss = log_sum_exp(&logits) - logits[0];
    let mut p = softmax(&logits);
    p[0] -= 1.0;
    let mut g_user = vec![0.0; user.len()];
    axpy(p[0], target, &mut g_user);
    for (pk, e) in p[1..].iter().zip(negatives) {
        axpy(*pk, e, &mut g_user);
    }
    let scaled = |w: f64| user.iter().map(|u| w * u).collect::<Vec<f64>>();
    let grads = SoftmaxGrads {
        user: g_user,
        target: scaled(p[0]),
        negatives: p[1..].iter().map(|&w| scaled(w)).collect(),
    };
    (loss, grads)
}

/// Values pinned while differentiating, for finite-difference checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Freeze<'a> {
    /// Use this interest instead of the argmax.
    pub selection: Option<usize>,
    /// Replace routing by one aggregation with these coefficients.
    pub coupling: Option<&'a DenseMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub softmax: f64,
    /// Unweighted separator value; `None` when the separator is inactive.
    pub separator: Option<f64>,
    pub selected: usize,
    pub coupling: DenseMatrix,
}

/// Matching loss plus `λ ·` separator for one sample, accumulating parameter
/// gradients into `grads` when given.
pub fn joint_loss(
    params: &ExtractorParams,
    sample: &TrainSample,
    negatives: &[usize],
    routing: &RoutingConfig,
    separator: &Separator,
    freeze: Freeze<'_>,
    grads: Option<&mut Gradients>,
) -> Result<LossParts> {
    let table = &params.item_embeddings.value;
    for &i in std::iter::once(&sample.target).chain(negatives) {
        if i == PADDING || i >= table.rows() {
            return Err(DrimError::IndexOutOfRange {
                what: "target/negative items",
                index: i,
                len: table.rows(),
            });
        }
    }
    if negatives.contains(&sample.target) {
        return Err(DrimError::Precondition("negatives contain the target".into()));
    }
    let fwd = extractor::forward(params, &sample.history, &sample.profile, routing, freeze.coupling)?;
    let target = table.row(sample.target);
    let selected = match freeze.selection {
        Some(j) => j,
        None => extractor::select_interest(&fwd.output, target).0,
    };
    let neg_rows: Vec<&[f64]> = negatives.iter().map(|&i| table.row(i)).collect();
    let (softmax_loss, sg) = sampled_softmax_loss(fwd.output.row(selected), target, &neg_rows);

    let mut grad_output = DenseMatrix::zeros(fwd.output.rows(), fwd.output.cols());
    grad_output.row_mut(selected).copy_from_slice(&sg.user);
    let mut total = softmax_loss;
    let mut sep_value = None;
    if separator.is_active() {
        if let Some((value, g)) = separator.evaluate(&fwd.output)? {
            total += separator.lambda * value;
            grad_output.add_scaled(separator.lambda, &g);
            sep_value = Some(value);
        }
    }

    if let Some(grads) = grads {
        let items = &mut grads.tensors[0];
        axpy(1.0, &sg.target, items.row_mut(sample.target));
        for (&i, g) in negatives.iter().zip(&sg.negatives) {
            axpy(1.0, g, items.row_mut(i));
        }
        extractor::backward(params, &fwd, &grad_output, routing.gradient, grads);
    }
    Ok(LossParts {
        total,
        softmax: softmax_loss,
        separator: sep_value,
        selected,
        coupling: fwd.capsules.coupling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{check_gradient, GradCheckConfig};
    use crate::regularizers::SeparatorKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dominant_target_has_vanishing_loss() {
        let u = [1.0, 0.0];
        let (loss, _) = sampled_softmax_loss(&u, &[60.0, 0.0], &[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(loss < 1e-25);
    }

    #[test]
    fn equal_logits_give_log_six() {
        let u = [0.0, 0.0, 0.0];
        let e = [0.3, -0.2, 0.9];
        let negs: Vec<&[f64]> = vec![&e; 5];
        let (loss, _) = sampled_softmax_loss(&u, &e, &negs);
        assert!((loss - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = draw(4 * 4);
        let f = |x: &[f64]| sampled_softmax_loss(&x[0..4], &x[4..8], &[&x[8..12], &x[12..16]]);
        let (_, g) = f(&x);
        let mut analytic = g.user.clone();
        analytic.extend(&g.target);
        for n in &g.negatives {
            analytic.extend(n);
        }
        let report = check_gradient(|p| f(p).0, &x, &analytic, &GradCheckConfig::default());
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    fn fixture() -> (ExtractorParams, TrainSample) {
        let params = ExtractorParams::init(8, 0, 4, 5);
        let sample = TrainSample {
            user_index: 0,
            history: vec![1, 4, 6],
            target: 2,
            profile: vec![],
        };
        (params, sample)
    }

    #[test]
    fn zero_lambda_is_pure_softmax() {
        let (params, sample) = fixture();
        let routing = RoutingConfig { k: 2, ..Default::default() };
        let sep = Separator::new(SeparatorKind::Entropy, 0.0);
        let parts = joint_loss(&params, &sample, &[3, 7], &routing, &sep, Freeze::default(), None).unwrap();
        assert_eq!(parts.total, parts.softmax);
        assert_eq!(parts.separator, None);
    }

    #[test]
    fn unit_lambda_adds_separator() {
        let (params, sample) = fixture();
        let routing = RoutingConfig { k: 2, ..Default::default() };
        let sep = Separator::new(SeparatorKind::MeanSquare, 1.0);
        let parts = joint_loss(&params, &sample, &[3, 7], &routing, &sep, Freeze::default(), None).unwrap();
        assert_eq!(parts.total, parts.softmax + parts.separator.unwrap());
    }

    #[test]
    fn rejects_target_among_negatives_and_padding() {
        let (params, sample) = fixture();
        let routing = RoutingConfig { k: 2, ..Default::default() };
        let sep = Separator::default();
        assert!(joint_loss(&params, &sample, &[2], &routing, &sep, Freeze::default(), None).is_err());
        assert!(joint_loss(&params, &sample, &[0], &routing, &sep, Freeze::default(), None).is_err());
    }
}
