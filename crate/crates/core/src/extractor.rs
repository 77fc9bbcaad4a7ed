//! Multi-interest extractor: history embedding, capsule dynamic routing,
//! profile fusion and target-aware interest selection.
//!
//! Routing uses a bilinear map `S` shared by every history/interest pair.
//! For history capsule `h_i` with projection `u_i = S·h_i`:
//!
//! ```text
//! b_i·  = softmax_j(c_ij)            coupling, normalized over the K interests
//! z_j   = Σ_i b_ij · u_i             candidate vector
//! v_j   = squash(z_j)
//! c_ij ← v_jᵀ · u_i                  refreshed between iterations
//! ```

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DrimError, Result};
use crate::ingest::PADDING;
use crate::numeric::{axpy, dot, softmax_backward, squash, squash_backward, DenseMatrix, ParamSlot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogitInit {
    Zeros,
    Gaussian { std: f64 },
}

impl Default for LogitInit {
    fn default() -> Self {
        LogitInit::Gaussian { std: 1.0 }
    }
}

impl FromStr for LogitInit {
    type Err = DrimError;

    /// `zeros`, `gaussian` (σ = 1) or `gaussian:<σ>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(LogitInit::Zeros),
            "gaussian" => Ok(LogitInit::default()),
            _ => {
                let std = s
                    .strip_prefix("gaussian:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| DrimError::Config(format!("bad routing init {s:?}")))?;
                Ok(LogitInit::Gaussian { std })
            }
        }
    }
}

impl std::fmt::Display for LogitInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogitInit::Zeros => f.write_str("zeros"),
            LogitInit::Gaussian { std } => write!(f, "gaussian:{std}"),
        }
    }
}

/// How gradients pass through the routing iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingGradient {
    /// Only the final iteration is differentiated; its coupling
    /// coefficients are treated as constants.
    #[default]
    StopGradient,
    /// Differentiate through every iteration, including the logit refreshes.
    Full,
}

impl FromStr for RoutingGradient {
    type Err = DrimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stop" | "stop_gradient" => Ok(RoutingGradient::StopGradient),
            "full" => Ok(RoutingGradient::Full),
            other => Err(DrimError::Config(format!("unknown routing gradient {other:?}"))),
        }
    }
}

impl std::fmt::Display for RoutingGradient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoutingGradient::StopGradient => "stop",
            RoutingGradient::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingConfig {
    pub k: usize,
    pub iterations: usize,
    pub logit_init: LogitInit,
    pub gradient: RoutingGradient,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            k: 4,
            iterations: 3,
            logit_init: LogitInit::default(),
            gradient: RoutingGradient::default(),
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.iterations == 0 {
            return Err(DrimError::Config(
                "routing needs at least one interest and one iteration".into(),
            ));
        }
        Ok(())
    }
}

/// Routing output for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestCapsules {
    /// `K × d` interest vectors.
    pub interests: DenseMatrix,
    /// `n × K` coupling coefficients of the final iteration (zero rows where masked).
    pub coupling: DenseMatrix,
    /// `n × K` routing logits that produced `coupling`.
    pub logits: DenseMatrix,
}

/// Two-layer perceptron applied to `[v_k ; p]` for every capsule `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMlp {
    /// `4d × 2d`
    pub w1: ParamSlot,
    /// `1 × 4d`
    pub b1: ParamSlot,
    /// `d × 4d`
    pub w2: ParamSlot,
    /// `1 × d`
    pub b2: ParamSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    /// `(|I| + 1) × d`, row 0 is padding and stays zero.
    pub item_embeddings: ParamSlot,
    /// `d × d` bilinear map.
    pub bilinear: ParamSlot,
    pub profile_embeddings: Option<ParamSlot>,
    pub fusion: Option<FusionMlp>,
    /// Seeds the Gaussian routing-logit initialization.
    pub routing_seed: u64,
}

impl ExtractorParams {
    /// Gaussian initialization with σ = 1/√d for embeddings and `S`;
    /// fusion weights use σ = 1/√fan_in and zero biases.
    pub fn init(n_items: usize, n_profile_rows: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (d as f64).sqrt();
        let mut items = DenseMatrix::gaussian(n_items + 1, d, std, &mut rng);
        items.row_mut(PADDING).fill(0.0);
        let bilinear = DenseMatrix::gaussian(d, d, std, &mut rng);
        let (profile_embeddings, fusion) = if n_profile_rows > 0 {
            let prof = DenseMatrix::gaussian(n_profile_rows, d, std, &mut rng);
            let w1 = DenseMatrix::gaussian(4 * d, 2 * d, 1.0 / ((2 * d) as f64).sqrt(), &mut rng);
            let w2 = DenseMatrix::gaussian(d, 4 * d, 1.0 / ((4 * d) as f64).sqrt(), &mut rng);
            (
                Some(ParamSlot::new("profile_embeddings", prof)),
                Some(FusionMlp {
                    w1: ParamSlot::new("fusion.w1", w1),
                    b1: ParamSlot::new("fusion.b1", DenseMatrix::zeros(1, 4 * d)),
                    w2: ParamSlot::new("fusion.w2", w2),
                    b2: ParamSlot::new("fusion.b2", DenseMatrix::zeros(1, d)),
                }),
            )
        } else {
            (None, None)
        };
        Self {
            item_embeddings: ParamSlot::new("item_embeddings", items),
            bilinear: ParamSlot::new("bilinear", bilinear),
            profile_embeddings,
            fusion,
            routing_seed: seed ^ 0x5EED_0FC0_FFEE,
        }
    }

    pub fn dim(&self) -> usize {
        self.bilinear.value.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.value.rows() - 1
    }

    /// All trainable tensors in a fixed canonical order.
    pub fn slots(&self) -> Vec<&ParamSlot> {
        let mut v = vec![&self.item_embeddings, &self.bilinear];
        if let Some(p) = &self.profile_embeddings {
            v.push(p);
        }
        if let Some(f) = &self.fusion {
            v.extend([&f.w1, &f.b1, &f.w2, &f.b2]);
        }
        v
    }

    pub fn slots_mut(&mut self) -> Vec<&mut ParamSlot> {
        let mut v = vec![&mut self.item_embeddings, &mut self.bilinear];
        if let Some(p) = &mut self.profile_embeddings {
            v.push(p);
        }
        if let Some(f) = &mut self.fusion {
            v.extend([&mut f.w1, &mut f.b1, &mut f.w2, &mut f.b2]);
        }
        v
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self
                .slots()
                .iter()
                .map(|s| {
                    let (r, c) = s.shape();
                    DenseMatrix::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.slots().iter().map(|s| s.value.as_slice().len()).sum()
    }

    /// Concatenation of every parameter value in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slots()
            .iter()
            .flat_map(|s| s.value.as_slice().iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values());
        let mut offset = 0;
        for slot in self.slots_mut() {
            let n = slot.value.as_slice().len();
            slot.value.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

/// Gradient buffers aligned with [`ExtractorParams::slots`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<DenseMatrix>,
}

impl Gradients {
    const ITEMS: usize = 0;
    const BILINEAR: usize = 1;

    fn profile_index(params: &ExtractorParams) -> Option<usize> {
        params.profile_embeddings.as_ref().map(|_| 2)
    }

    fn fusion_base(params: &ExtractorParams) -> usize {
        2 + usize::from(params.profile_embeddings.is_some())
    }

    pub fn item_embeddings(&self) -> &DenseMatrix {
        &self.tensors[Self::ITEMS]
    }

    pub fn bilinear(&self) -> &DenseMatrix {
        &self.tensors[Self::BILINEAR]
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn clear(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.as_slice().iter().copied())
            .collect()
    }
}

/// Looks up embedding rows; padding entries give zero rows with `mask = true`.
pub fn embed_history(history: &[usize], table: &DenseMatrix) -> Result<(DenseMatrix, Vec<bool>)> {
    let d = table.cols();
    let mut out = DenseMatrix::zeros(history.len(), d);
    let mut mask = Vec::with_capacity(history.len());
    for (r, &idx) in history.iter().enumerate() {
        if idx >= table.rows() {
            return Err(DrimError::IndexOutOfRange {
                what: "item embeddings",
                index: idx,
                len: table.rows(),
            });
        }
        let masked = idx == PADDING;
        if !masked {
            out.row_mut(r).copy_from_slice(table.row(idx));
        }
        mask.push(masked);
    }
    Ok((out, mask))
}

/// Initial `n × K` routing logits; a given seed yields the same value for a
/// given (position, interest) regardless of `n`.
pub fn initial_logits(n: usize, k: usize, init: LogitInit, seed: u64) -> DenseMatrix {
    match init {
        LogitInit::Zeros => DenseMatrix::zeros(n, k),
        LogitInit::Gaussian { std } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DenseMatrix::gaussian(n, k, std, &mut rng)
        }
    }
}

/// Intermediate values of one routing pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct RoutingTrace {
    /// `u_i = S·h_i`, zero rows where masked.
    pub projected: DenseMatrix,
    pub mask: Vec<bool>,
    pub couplings: Vec<DenseMatrix>,
    pub candidates: Vec<DenseMatrix>,
    pub outputs: Vec<DenseMatrix>,
}

fn project(history: &DenseMatrix, mask: &[bool], bilinear: &DenseMatrix) -> Result<DenseMatrix> {
    if mask.len() != history.rows() {
        return Err(DrimError::Precondition("mask length differs from history".into()));
    }
    if mask.iter().all(|&m| m) {
        return Err(DrimError::Precondition(
            "routing needs at least one unmasked history row".into(),
        ));
    }
    let mut u = DenseMatrix::zeros(history.rows(), bilinear.rows());
    for (i, &masked) in mask.iter().enumerate() {
        if !masked {
            let p = bilinear.matvec(history.row(i));
            u.row_mut(i).copy_from_slice(&p);
        }
    }
    Ok(u)
}

fn coupling_from_logits(logits: &DenseMatrix, mask: &[bool]) -> DenseMatrix {
    let mut b = logits.clone();
    for (i, &masked) in mask.iter().enumerate() {
        let row = b.row_mut(i);
        if masked {
            row.fill(0.0);
        } else {
            crate::numeric::ops::softmax_in_place(row);
        }
    }
    b
}

/// `z = bᵀ·U` followed by a per-row squash.
fn aggregate(coupling: &DenseMatrix, projected: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (k, d) = (coupling.cols(), projected.cols());
    let mut z = DenseMatrix::zeros(k, d);
    for i in 0..projected.rows() {
        let u = projected.row(i);
        for j in 0..k {
            let bij = coupling.get(i, j);
            if bij != 0.0 {
                axpy(bij, u, z.row_mut(j));
            }
        }
    }
    let mut v = DenseMatrix::zeros(k, d);
    for j in 0..k {
        v.row_mut(j).copy_from_slice(&squash(z.row(j)));
    }
    (z, v)
}

/// Runs routing from explicit initial logits and records every iteration.
pub fn route_traced(
    history: &DenseMatrix,
    mask: &[bool],
    bilinear: &DenseMatrix,
    config: &RoutingConfig,
    init: DenseMatrix,
) -> Result<(InterestCapsules, RoutingTrace)> {
    config.validate()?;
    assert_eq!(init.shape(), (history.rows(), config.k), "initial logits shape");
    let projected = project(history, mask, bilinear)?;
    let mut logits = init;
    for (i, &masked) in mask.iter().enumerate() {
        if masked {
            logits.row_mut(i).fill(0.0);
        }
    }
    let mut trace = RoutingTrace {
        projected,
        mask: mask.to_vec(),
        couplings: Vec::with_capacity(config.iterations),
        candidates: Vec::with_capacity(config.iterations),
        outputs: Vec::with_capacity(config.iterations),
    };
    for it in 0..config.iterations {
        let b = coupling_from_logits(&logits, mask);
        let (z, v) = aggregate(&b, &trace.projected);
        if it + 1 < config.iterations {
            for i in 0..mask.len() {
                if mask[i] {
                    continue;
                }
                let u = trace.projected.row(i);
                for j in 0..config.k {
                    logits.set(i, j, dot(v.row(j), u));
                }
            }
        }
        trace.couplings.push(b);
        trace.candidates.push(z);
        trace.outputs.push(v);
    }
    let capsules = InterestCapsules {
        interests: trace.outputs.last().unwrap().clone(),
        coupling: trace.couplings.last().unwrap().clone(),
        logits,
    };
    Ok((capsules, trace))
}

/// Dynamic routing of `n × d` history capsules into `K` interest capsules.
pub fn dynamic_route(
    history: &DenseMatrix,
    mask: &[bool],
    bilinear: &DenseMatrix,
    config: &RoutingConfig,
    rng_seed: u64,
) -> Result<InterestCapsules> {
    let init = initial_logits(history.rows(), config.k, config.logit_init, rng_seed);
    route_traced(history, mask, bilinear, config, init).map(|(c, _)| c)
}

/// One aggregation step with externally fixed coupling coefficients: the
/// function that stop-gradient routing differentiates.
pub fn route_with_coupling(
    history: &DenseMatrix,
    mask: &[bool],
    bilinear: &DenseMatrix,
    coupling: &DenseMatrix,
) -> Result<(InterestCapsules, RoutingTrace)> {
    let projected = project(history, mask, bilinear)?;
    let (z, v) = aggregate(coupling, &projected);
    let capsules = InterestCapsules {
        interests: v.clone(),
        coupling: coupling.clone(),
        logits: DenseMatrix::zeros(coupling.rows(), coupling.cols()),
    };
    let trace = RoutingTrace {
        projected,
        mask: mask.to_vec(),
        couplings: vec![coupling.clone()],
        candidates: vec![z],
        outputs: vec![v],
    };
    Ok((capsules, trace))
}

/// Backpropagates `grad_interests` (`K × d`) through a recorded routing pass.
///
/// Returns the gradient w.r.t. the history rows; the gradient w.r.t. `S` is
/// accumulated into `grad_bilinear`.
pub fn route_backward(
    history: &DenseMatrix,
    bilinear: &DenseMatrix,
    trace: &RoutingTrace,
    grad_interests: &DenseMatrix,
    mode: RoutingGradient,
    grad_bilinear: &mut DenseMatrix,
) -> DenseMatrix {
    let n = trace.projected.rows();
    let d = trace.projected.cols();
    let k = grad_interests.rows();
    let iterations = trace.outputs.len();
    let mut grad_u = DenseMatrix::zeros(n, d);
    let mut grad_v = grad_interests.clone();

    for t in (0..iterations).rev() {
        let b = &trace.couplings[t];
        let z = &trace.candidates[t];
        let mut grad_z = DenseMatrix::zeros(k, d);
        for j in 0..k {
            grad_z.row_mut(j).copy_from_slice(&squash_backward(z.row(j), grad_v.row(j)));
        }
        let last_step = mode == RoutingGradient::StopGradient || t == 0;
        let mut grad_b = if last_step { None } else { Some(DenseMatrix::zeros(n, k)) };
        for i in 0..n {
            if trace.mask[i] {
                continue;
            }
            let u = trace.projected.row(i).to_vec();
            for j in 0..k {
                axpy(b.get(i, j), grad_z.row(j), grad_u.row_mut(i));
                if let Some(gb) = grad_b.as_mut() {
                    gb.set(i, j, dot(&u, grad_z.row(j)));
                }
            }
        }
        let Some(grad_b) = grad_b else { break };

        // logits of iteration t were c_ij = v^(t-1)_j · u_i
        let prev_v = &trace.outputs[t - 1];
        let mut next_grad_v = DenseMatrix::zeros(k, d);
        for i in 0..n {
            if trace.mask[i] {
                continue;
            }
            let grad_c = softmax_backward(b.row(i), grad_b.row(i));
            let u = trace.projected.row(i).to_vec();
            for j in 0..k {
                axpy(grad_c[j], &u, next_grad_v.row_mut(j));
                axpy(grad_c[j], prev_v.row(j), grad_u.row_mut(i));
            }
        }
        grad_v = next_grad_v;
    }

    // u_i = S·h_i
    let mut grad_h = DenseMatrix::zeros(n, history.cols());
    for i in 0..n {
        if trace.mask[i] {
            continue;
        }
        grad_bilinear.add_outer(1.0, grad_u.row(i), history.row(i));
        grad_h.row_mut(i).copy_from_slice(&bilinear.matvec_t(grad_u.row(i)));
    }
    grad_h
}

/// Profile embedding: the sum of the feature rows.
pub fn profile_vector(features: &[usize], table: &DenseMatrix) -> Result<Vec<f64>> {
    let mut p = vec![0.0; table.cols()];
    for &f in features {
        if f >= table.rows() {
            return Err(DrimError::IndexOutOfRange {
                what: "profile embeddings",
                index: f,
                len: table.rows(),
            });
        }
        axpy(1.0, table.row(f), &mut p);
    }
    Ok(p)
}

/// Per-capsule activations of the fusion MLP.
#[derive(Debug, Clone)]
pub struct FusionCache {
    pub profile: Vec<f64>,
    /// `K × 4d` pre-activations.
    pub hidden: DenseMatrix,
}

fn fusion_forward(
    interests: &DenseMatrix,
    profile: &[f64],
    mlp: &FusionMlp,
) -> (DenseMatrix, FusionCache) {
    let (k, d) = interests.shape();
    let hidden_dim = mlp.w1.value.rows();
    let mut hidden = DenseMatrix::zeros(k, hidden_dim);
    let mut out = DenseMatrix::zeros(k, d);
    let mut x = vec![0.0; 2 * d];
    x[d..].copy_from_slice(profile);
    for j in 0..k {
        x[..d].copy_from_slice(interests.row(j));
        let mut a = mlp.w1.value.matvec(&x);
        axpy(1.0, mlp.b1.value.row(0), &mut a);
        let r: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
        let mut o = mlp.w2.value.matvec(&r);
        axpy(1.0, mlp.b2.value.row(0), &mut o);
        hidden.row_mut(j).copy_from_slice(&a);
        out.row_mut(j).copy_from_slice(&o);
    }
    (
        out,
        FusionCache {
            profile: profile.to_vec(),
            hidden,
        },
    )
}

/// Concatenates each interest capsule with the profile embedding and maps
/// it through the shared `2d → 4d → d` ReLU perceptron. Without configured
/// profile features the capsules pass through unchanged.
pub fn fuse_profile(
    interests: &DenseMatrix,
    profile_features: &[usize],
    params: &ExtractorParams,
) -> Result<DenseMatrix> {
    match (&params.fusion, &params.profile_embeddings) {
        (Some(mlp), Some(table)) => {
            let p = profile_vector(profile_features, &table.value)?;
            Ok(fusion_forward(interests, &p, mlp).0)
        }
        _ => Ok(interests.clone()),
    }
}

/// Index of the interest with the largest inner product with `target`
/// (lowest index on ties) and that interest's vector.
pub fn select_interest(interests: &DenseMatrix, target: &[f64]) -> (usize, Vec<f64>) {
    assert!(interests.rows() > 0, "no interests to select from");
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (j, row) in interests.iter_rows().enumerate() {
        let s = dot(row, target);
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    (best, interests.row(best).to_vec())
}

/// Full forward pass for one user, with everything needed for backprop.
#[derive(Debug, Clone)]
pub struct UserForward {
    pub history_indices: Vec<usize>,
    pub profile_features: Vec<usize>,
    pub history: DenseMatrix,
    pub capsules: InterestCapsules,
    pub trace: RoutingTrace,
    pub fusion: Option<FusionCache>,
    /// Post-fusion `K × d` user vectors.
    pub output: DenseMatrix,
}

/// embed → route → fuse. `frozen_coupling` replaces routing by a single
/// aggregation with the given coefficients.
pub fn forward(
    params: &ExtractorParams,
    history_indices: &[usize],
    profile_features: &[usize],
    config: &RoutingConfig,
    frozen_coupling: Option<&DenseMatrix>,
) -> Result<UserForward> {
    let (history, mask) = embed_history(history_indices, &params.item_embeddings.value)?;
    let bilinear = &params.bilinear.value;
    let (capsules, trace) = match frozen_coupling {
        Some(b) => route_with_coupling(&history, &mask, bilinear, b)?,
        None => {
            let init = initial_logits(history.rows(), config.k, config.logit_init, params.routing_seed);
            route_traced(&history, &mask, bilinear, config, init)?
        }
    };
    let (output, fusion) = match (&params.fusion, &params.profile_embeddings) {
        (Some(mlp), Some(table)) => {
            let p = profile_vector(profile_features, &table.value)?;
            let (o, cache) = fusion_forward(&capsules.interests, &p, mlp);
            (o, Some(cache))
        }
        _ => (capsules.interests.clone(), None),
    };
    Ok(UserForward {
        history_indices: history_indices.to_vec(),
        profile_features: profile_features.to_vec(),
        history,
        capsules,
        trace,
        fusion,
        output,
    })
}

/// Accumulates parameter gradients for `grad_output` (`K × d`, w.r.t. the
/// post-fusion vectors) into `grads`. Padding rows never receive gradient.
pub fn backward(
    params: &ExtractorParams,
    fwd: &UserForward,
    grad_output: &DenseMatrix,
    mode: RoutingGradient,
    grads: &mut Gradients,
) {
    let grad_interests = match (&fwd.fusion, &params.fusion) {
        (Some(cache), Some(mlp)) => {
            let base = Gradients::fusion_base(params);
            let (k, d) = fwd.capsules.interests.shape();
            let mut grad_v = DenseMatrix::zeros(k, d);
            let mut grad_p = vec![0.0; d];
            let mut x = vec![0.0; 2 * d];
            x[d..].copy_from_slice(&cache.profile);
            for j in 0..k {
                x[..d].copy_from_slice(fwd.capsules.interests.row(j));
                let a = cache.hidden.row(j);
                let r: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
                let g_out = grad_output.row(j);
                grads.tensors[base + 2].add_outer(1.0, g_out, &r);
                axpy(1.0, g_out, grads.tensors[base + 3].row_mut(0));
                let mut g_a = mlp.w2.value.matvec_t(g_out);
                for (g, &pre) in g_a.iter_mut().zip(a) {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                }
                grads.tensors[base].add_outer(1.0, &g_a, &x);
                axpy(1.0, &g_a, grads.tensors[base + 1].row_mut(0));
                let g_x = mlp.w1.value.matvec_t(&g_a);
                grad_v.row_mut(j).copy_from_slice(&g_x[..d]);
                axpy(1.0, &g_x[d..], &mut grad_p);
            }
            if let Some(pi) = Gradients::profile_index(params) {
                for &f in &fwd.profile_features {
                    axpy(1.0, &grad_p, grads.tensors[pi].row_mut(f));
                }
            }
            grad_v
        }
        _ => grad_output.clone(),
    };

    let grad_h = route_backward(
        &fwd.history,
        &params.bilinear.value,
        &fwd.trace,
        &grad_interests,
        mode,
        &mut grads.tensors[Gradients::BILINEAR],
    );
    for (r, &idx) in fwd.history_indices.iter().enumerate() {
        if idx != PADDING {
            axpy(1.0, grad_h.row(r), grads.tensors[Gradients::ITEMS].row_mut(idx));
        }
    }
}
