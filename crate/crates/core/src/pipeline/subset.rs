use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::wasserstein::wasserstein_1d;
use super::ScoredCandidate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetOptions {
    pub k2: usize,
    pub trials: usize,
    pub seed: u64,
    /// Divide each distance by the pool's standard deviation of that score.
    pub normalize: bool,
}

impl Default for SubsetOptions {
    fn default() -> Self {
        SubsetOptions {
            k2: 100,
            trials: 100,
            seed: 0,
            normalize: false,
        }
    }
}

/// Chosen pool indices (ascending) and the objective of every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetChoice {
    pub indices: Vec<usize>,
    pub objective: f64,
    pub best_trial: Option<usize>,
    pub trial_objectives: Vec<f64>,
    pub nonempty_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySubset {
    pub members: Vec<ScoredCandidate>,
    pub objective: f64,
    pub candidate_trials: usize,
    pub best_trial: Option<usize>,
    pub trial_objectives: Vec<f64>,
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt()
}

/// `W(H_sub, H_pool) + W(Q_sub, Q_pool)` for the given subset.
pub fn subset_objective(hardness: &[f64], quality: &[f64], indices: &[usize], normalize: bool) -> Result<f64> {
    let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let scale = |v: &[f64]| {
        let s = std_dev(v);
        if normalize && s > 0.0 {
            s
        } else {
            1.0
        }
    };
    Ok(wasserstein_1d(&pick(hardness), hardness)? / scale(hardness)
        + wasserstein_1d(&pick(quality), quality)? / scale(quality))
}

/// Draws `trials` stratified subsets (one uniform member per k-means
/// cluster of the embeddings) and keeps the one whose hardness and quality
/// distributions are closest to the pool's.
pub fn select_indices(
    hardness: &[f64],
    quality: &[f64],
    embeddings: &[Vec<f64>],
    opts: &SubsetOptions,
) -> Result<SubsetChoice> {
    let n = hardness.len();
    if n == 0 {
        return Err(Error::Empty("proxy subset pool is empty".into()));
    }
    if quality.len() != n || embeddings.len() != n {
        return Err(Error::Validation("score and embedding lengths differ".into()));
    }
    if opts.k2 == 0 || opts.trials == 0 {
        return Err(Error::Validation("k2 and trials must be at least 1".into()));
    }
    if n <= opts.k2 {
        let indices: Vec<usize> = (0..n).collect();
        let objective = subset_objective(hardness, quality, &indices, opts.normalize)?;
        return Ok(SubsetChoice {
            indices,
            objective,
            best_trial: None,
            trial_objectives: vec![],
            nonempty_clusters: 0,
        });
    }
    let clusters: Vec<Vec<usize>> = kmeans(embeddings, opts.k2, opts.seed)
        .members()
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect();
    let shortfall = opts.k2 - clusters.len();
    if shortfall > 0 {
        log::warn!(
            "{} of {} clusters are empty; topping up each trial from the residual pool",
            shortfall,
            opts.k2
        );
    }
    let trials: Vec<(Vec<usize>, f64)> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(t as u64);
            let mut picked: Vec<usize> = clusters
                .iter()
                .map(|m| m[rng.random_range(0..m.len())])
                .collect();
            if shortfall > 0 {
                picked.sort_unstable();
                let residual: Vec<usize> = (0..n).filter(|i| picked.binary_search(i).is_err()).collect();
                let extra: Vec<usize> = sample(&mut rng, residual.len(), shortfall)
                    .into_iter()
                    .map(|j| residual[j])
                    .collect();
                picked.extend(extra);
            }
            picked.sort_unstable();
            let obj = subset_objective(hardness, quality, &picked, opts.normalize)?;
            Ok((picked, obj))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (t, (_, obj)) in trials.iter().enumerate() {
        if *obj < trials[best].1 {
            best = t;
        }
    }
    Ok(SubsetChoice {
        indices: trials[best].0.clone(),
        objective: trials[best].1,
        best_trial: Some(best),
        trial_objectives: trials.iter().map(|t| t.1).collect(),
        nonempty_clusters: clusters.len(),
    })
}

pub fn select_proxy_subset(pool: &[ScoredCandidate], opts: &SubsetOptions) -> Result<ProxySubset> {
    let h: Vec<f64> = pool.iter().map(|c| c.hardness).collect();
    let q: Vec<f64> = pool.iter().map(|c| c.quality).collect();
    let e: Vec<Vec<f64>> = pool.iter().map(|c| c.embedding.clone()).collect();
    let choice = select_indices(&h, &q, &e, opts)?;
    Ok(ProxySubset {
        members: choice.indices.iter().map(|&i| pool[i].clone()).collect(),
        objective: choice.objective,
        candidate_trials: choice.trial_objectives.len(),
        best_trial: choice.best_trial,
        trial_objectives: choice.trial_objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let h: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 37) % 101) as f64 / 10.0).collect();
        let q: Vec<f64> = (0..n).map(|i| 30.0 + ((i * 53) % 89) as f64).collect();
        let e = h.iter().zip(&q).map(|(a, b)| vec![*a, *b / 10.0]).collect();
        (h, q, e)
    }

    #[test]
    fn small_pool_is_returned_whole() {
        let (h, q, e) = pool(5);
        let c = select_indices(&h, &q, &e, &SubsetOptions::default()).unwrap();
        assert_eq!(c.indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.objective, 0.0);
    }

    #[test]
    fn constant_scores_pick_trial_zero() {
        let n = 50;
        let h = vec![2.0; n];
        let q = vec![60.0; n];
        let e: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let opts = SubsetOptions { k2: 10, trials: 20, ..Default::default() };
        let c = select_indices(&h, &q, &e, &opts).unwrap();
        assert_eq!(c.best_trial, Some(0));
        assert!(c.trial_objectives.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn returns_argmin_of_recomputed_trials() {
        let (h, q, e) = pool(200);
        let opts = SubsetOptions { k2: 20, trials: 30, seed: 5, normalize: false };
        let c = select_indices(&h, &q, &e, &opts).unwrap();
        assert_eq!(c.indices.len(), 20);
        let min = c.trial_objectives.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(c.objective, min);
        assert_eq!(subset_objective(&h, &q, &c.indices, false).unwrap(), c.objective);
        assert_eq!(c, select_indices(&h, &q, &e, &opts).unwrap());
    }

    #[test]
    fn degenerate_embeddings_top_up() {
        let (h, q, _) = pool(40);
        let e = vec![vec![0.0]; 40];
        let opts = SubsetOptions { k2: 8, trials: 5, seed: 1, normalize: true };
        let c = select_indices(&h, &q, &e, &opts).unwrap();
        assert_eq!(c.nonempty_clusters, 1);
        assert_eq!(c.indices.len(), 8);
        let mut d = c.indices.clone();
        d.dedup();
        assert_eq!(d.len(), 8);
    }
}
