//! Hit-rate evaluation, the popularity baseline, interest diversity
//! statistics and embedding export.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{DrimError, Result};
use crate::extractor::select_interest;
use crate::ingest::{Dataset, UserSequence, Vocab};
use crate::numeric::{cosine, DenseMatrix};
use crate::serving::{build_index, recommend, BackendKind, Recommendation};
use crate::trainer::Model;

/// Fraction of users whose first `n` recommended items contain at least one
/// item of their test suffix.
pub fn hit_rate(recs: &[Recommendation], sequences: &[UserSequence], n: usize) -> Result<f64> {
    if recs.is_empty() {
        return Err(DrimError::Precondition("no users to evaluate".into()));
    }
    let by_user: HashMap<usize, &UserSequence> = sequences.iter().map(|s| (s.user_index, s)).collect();
    let mut hits = 0usize;
    for r in recs {
        let seq = by_user
            .get(&r.user_index)
            .ok_or_else(|| DrimError::Precondition(format!("user {} has no sequence", r.user_index)))?;
        if seq.test().is_empty() {
            return Err(DrimError::Precondition(format!("user {} has an empty test suffix", r.user_index)));
        }
        let test: HashSet<usize> = seq.test().iter().copied().collect();
        if r.items.iter().take(n).any(|i| test.contains(i)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / recs.len() as f64)
}

/// Global top-`n` by training frequency (lower index on ties), per user with
/// the training prefix removed when `exclude_history` is set.
pub fn most_popular(vocab: &Vocab, sequences: &[UserSequence], n: usize, exclude_history: bool) -> Vec<Recommendation> {
    let mut ranked: Vec<usize> = vocab.indices().collect();
    ranked.sort_by(|&a, &b| vocab.frequency(b).cmp(&vocab.frequency(a)).then(a.cmp(&b)));
    sequences
        .iter()
        .map(|s| {
            let seen: HashSet<usize> = if exclude_history {
                s.train().iter().copied().collect()
            } else {
                HashSet::new()
            };
            let items: Vec<usize> = ranked.iter().copied().filter(|i| !seen.contains(i)).take(n).collect();
            Recommendation {
                user_index: s.user_index,
                scores: items.iter().map(|&i| vocab.frequency(i) as f64).collect(),
                sources: vec![0; items.len()],
                items,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityStats {
    pub mean_cosine: f64,
    /// Degrees.
    pub mean_angle: f64,
    /// Mean pairwise cosine per user; `None` for users with a zero vector.
    pub per_user: Vec<Option<f64>>,
    pub degenerate: usize,
}

/// Mean pairwise cosine and angle among each user's interest vectors.
pub fn diversity_stats(interests: &[DenseMatrix]) -> Result<DiversityStats> {
    let mut per_user = Vec::with_capacity(interests.len());
    let (mut cos_sum, mut angle_sum, mut counted) = (0.0, 0.0, 0usize);
    for v in interests {
        let k = v.rows();
        if k < 2 {
            return Err(DrimError::Precondition("diversity needs at least 2 interests".into()));
        }
        let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
        'pairs: for i in 0..k {
            for j in i + 1..k {
                match cosine(v.row(i), v.row(j), 1e-12) {
                    Some(c) => pairs.push(c.clamp(-1.0, 1.0)),
                    None => {
                        pairs.clear();
                        break 'pairs;
                    }
                }
            }
        }
        if pairs.is_empty() {
            per_user.push(None);
            continue;
        }
        let m = pairs.len() as f64;
        let c = pairs.iter().sum::<f64>() / m;
        angle_sum += pairs.iter().map(|c| c.acos().to_degrees()).sum::<f64>() / m;
        cos_sum += c;
        counted += 1;
        per_user.push(Some(c));
    }
    if counted == 0 {
        return Err(DrimError::Precondition("no user with non-degenerate interests".into()));
    }
    Ok(DiversityStats {
        mean_cosine: cos_sum / counted as f64,
        mean_angle: angle_sum / counted as f64,
        degenerate: per_user.iter().filter(|c| c.is_none()).count(),
        per_user,
    })
}

/// Interest vectors from each user's training prefix, in sequence order.
pub fn user_interests(model: &Model, data: &Dataset, sequences: &[UserSequence]) -> Result<Vec<DenseMatrix>> {
    sequences
        .par_iter()
        .map(|s| {
            let profile = model.profile_for_id(&data.users[s.user_index])?;
            model.user_vectors(s.train(), &profile)
        })
        .collect()
}

/// How often each interest is the argmax for the users' test targets.
pub fn utilization(model: &Model, interests: &[DenseMatrix], sequences: &[UserSequence]) -> Vec<u64> {
    let table = &model.params.item_embeddings.value;
    let mut counts = vec![0u64; model.config.k];
    for (v, s) in interests.iter().zip(sequences) {
        for &t in s.test() {
            counts[select_interest(v, table.row(t)).0] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub users: usize,
    pub exclude_history: bool,
    pub backend: BackendKind,
    /// `(N, HR@N)` for the model.
    pub hit_rates: Vec<(usize, f64)>,
    /// `(N, HR@N)` for the popularity baseline.
    pub baseline: Vec<(usize, f64)>,
    /// Absent when K = 1.
    pub diversity: Option<DiversityStats>,
    pub utilization: Vec<u64>,
}

impl EvalReport {
    pub fn hit_rate_at(&self, n: usize) -> Option<f64> {
        self.hit_rates.iter().find(|p| p.0 == n).map(|p| p.1)
    }

    pub fn baseline_at(&self, n: usize) -> Option<f64> {
        self.baseline.iter().find(|p| p.0 == n).map(|p| p.1)
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "users: {}", self.users);
        let _ = writeln!(s, "exclude_history: {}", if self.exclude_history { "on" } else { "off" });
        let _ = writeln!(s, "backend: {}", self.backend);
        for (n, hr) in &self.hit_rates {
            let _ = writeln!(s, "hr@{n}: {hr:.6}");
        }
        for (n, hr) in &self.baseline {
            let _ = writeln!(s, "most_popular_hr@{n}: {hr:.6}");
        }
        if let Some(d) = &self.diversity {
            let _ = writeln!(s, "mean_pairwise_cosine: {:.6}", d.mean_cosine);
            let _ = writeln!(s, "mean_pairwise_angle_deg: {:.4}", d.mean_angle);
            let _ = writeln!(s, "degenerate_users: {}", d.degenerate);
        }
        let util: Vec<String> = self.utilization.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "interest_utilization: {}", util.join(","));
        s
    }

    /// One JSON object per line: a summary record, then one per user with
    /// their mean pairwise cosine.
    pub fn to_json_lines(&self) -> String {
        let hr: serde_json::Map<String, serde_json::Value> =
            self.hit_rates.iter().map(|(n, v)| (format!("hr@{n}"), json!(v))).collect();
        let base: serde_json::Map<String, serde_json::Value> =
            self.baseline.iter().map(|(n, v)| (format!("hr@{n}"), json!(v))).collect();
        let mut out = json!({
            "record": "summary",
            "users": self.users,
            "exclude_history": self.exclude_history,
            "backend": self.backend.to_string(),
            "model": hr,
            "most_popular": base,
            "mean_pairwise_cosine": self.diversity.as_ref().map(|d| d.mean_cosine),
            "mean_pairwise_angle_deg": self.diversity.as_ref().map(|d| d.mean_angle),
            "interest_utilization": self.utilization,
        })
        .to_string();
        out.push('\n');
        if let Some(d) = &self.diversity {
            for (u, c) in d.per_user.iter().enumerate() {
                out.push_str(&json!({"record": "user", "position": u, "mean_pairwise_cosine": c}).to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Scores `model` on the held-out suffixes of `data`, optionally on the
/// first `max_users` sequences only.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    ns: &[usize],
    exclude_history: bool,
    backend: BackendKind,
    max_users: Option<usize>,
) -> Result<EvalReport> {
    let &max_n = ns
        .iter()
        .max()
        .ok_or_else(|| DrimError::Config("no retrieval size given".into()))?;
    if max_n == 0 {
        return Err(DrimError::Config("retrieval sizes must be at least 1".into()));
    }
    let seqs: Vec<UserSequence> = data
        .sequences
        .iter()
        .filter(|s| !s.test().is_empty() && !s.train().is_empty())
        .take(max_users.unwrap_or(usize::MAX))
        .cloned()
        .collect();
    let index = build_index(model, backend)?;
    let recs = recommend(model, &index, &seqs, &data.users, max_n, exclude_history)?;
    let pop = most_popular(&data.vocab, &seqs, max_n, exclude_history);
    let mut hit_rates = Vec::new();
    let mut baseline = Vec::new();
    for &n in ns {
        hit_rates.push((n, hit_rate(&recs, &seqs, n)?));
        baseline.push((n, hit_rate(&pop, &seqs, n)?));
    }
    let interests = user_interests(model, data, &seqs)?;
    let diversity = if model.config.k >= 2 {
        Some(diversity_stats(&interests)?)
    } else {
        None
    };
    Ok(EvalReport {
        users: seqs.len(),
        exclude_history,
        backend,
        hit_rates,
        baseline,
        diversity,
        utilization: utilization(model, &interests, &seqs),
    })
}

/// Writes `user_id \t interest_k \t c1,c2,…` rows for the first `max_users`
/// sequences. Components use the shortest representation that parses back
/// to the same value.
pub fn export_embeddings(model: &Model, data: &Dataset, max_users: Option<usize>, path: &Path) -> Result<usize> {
    let seqs: Vec<UserSequence> = data
        .sequences
        .iter()
        .filter(|s| !s.train().is_empty())
        .take(max_users.unwrap_or(usize::MAX))
        .cloned()
        .collect();
    let interests = user_interests(model, data, &seqs)?;
    let file = File::create(path).map_err(|e| DrimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut rows = 0;
    for (s, v) in seqs.iter().zip(&interests) {
        for (k, row) in v.iter_rows().enumerate() {
            let comps: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}\t{}\t{}", data.users[s.user_index], k, comps.join(",")).map_err(|e| DrimError::io(path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| DrimError::io(path, e))?;
    Ok(rows)
}
