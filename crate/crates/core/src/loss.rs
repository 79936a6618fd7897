//! Spatial softmax loss over per-pixel motion-cluster distributions, and the
//! order-statistic-filtered variant that only credits a pixel when its true
//! cluster ranks among the K most likely ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClusterLabelMap, SpatialProbMap};
use crate::nn::softmax_into;

/// Probabilities are clamped to at least this value before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `-sum_i log F_{i, Y_i}`.
    V1,
    /// `-sum_i sum_r w_r 1[Y_i = (r)] log F_{i,(r)}` with clusters ranked by
    /// descending probability.
    #[default]
    V2,
}

/// Rank weights of the order-statistic loss. `weights[r]` applies to the
/// cluster ranked `r` (0-based); ranks past the end weigh 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub k: usize,
    pub weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::top_k(DEFAULT_TOP_K)
    }
}

impl LossConfig {
    /// Uniform weight `1/K` on the K most likely clusters.
    pub fn top_k(k: usize) -> Self {
        let w = if k == 0 { 0.0 } else { 1.0 / k as f64 };
        LossConfig { k, weights: vec![w; k] }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::config(format!("loss weights must be finite and >= 0, got {w}")));
        }
        Ok(())
    }

    pub fn weight(&self, rank: usize) -> f64 {
        self.weights.get(rank).copied().unwrap_or(0.0)
    }

    fn all_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient with respect to the probabilities, shaped like the input map.
    pub grad_probs: Vec<f64>,
    pub per_pixel: Vec<f64>,
    pub warnings: Vec<String>,
}

fn check(probs_dims: (usize, usize, usize), labels: &ClusterLabelMap) -> Result<()> {
    let (r, c, k) = probs_dims;
    if (r, c) != (labels.rows(), labels.cols()) {
        return Err(Error::data(format!(
            "probability map is {r}x{c} but labels are {}x{}",
            labels.rows(),
            labels.cols()
        )));
    }
    if let Some(bad) = labels.labels().iter().find(|&&l| l as usize >= k) {
        return Err(Error::data(format!("label {bad} out of range for {k} clusters")));
    }
    Ok(())
}

/// 0-based position of `label` when a pixel's clusters are sorted by
/// descending probability, ties broken toward the lower cluster index.
pub fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    probs.iter().enumerate().filter(|&(j, &q)| q > p || (q == p && j < label)).count()
}

fn clamped_log(p: f64) -> (f64, bool) {
    if p >= LOG_CLAMP {
        (p.ln(), true)
    } else {
        (LOG_CLAMP.ln(), false)
    }
}

fn pixel_weight(variant: LossVariant, cfg: &LossConfig, probs: &[f64], label: usize) -> f64 {
    match variant {
        LossVariant::V1 => 1.0,
        LossVariant::V2 => cfg.weight(rank_of(probs, label)),
    }
}

fn evaluate(probs: &SpatialProbMap, labels: &ClusterLabelMap, variant: LossVariant, cfg: &LossConfig) -> Result<LossResult> {
    check((probs.rows(), probs.cols(), probs.clusters()), labels)?;
    let mut warnings = Vec::new();
    if variant == LossVariant::V2 {
        cfg.validate()?;
        if cfg.all_zero() {
            warnings.push("all rank weights are zero; the loss is identically 0".to_string());
        }
    }
    let k = probs.clusters();
    let mut grad = vec![0.0; probs.data().len()];
    let mut per_pixel = Vec::with_capacity(labels.labels().len());
    for (i, (px, &y)) in probs.pixels().zip(labels.labels()).enumerate() {
        let y = y as usize;
        let w = pixel_weight(variant, cfg, px, y);
        let (log_p, active) = clamped_log(px[y]);
        per_pixel.push(if w == 0.0 { 0.0 } else { -w * log_p });
        if active && w != 0.0 {
            grad[i * k + y] = -w / px[y];
        }
    }
    let value = per_pixel.iter().sum();
    Ok(LossResult { value, grad_probs: grad, per_pixel, warnings })
}

pub fn spatial_loss_v1(probs: &SpatialProbMap, labels: &ClusterLabelMap) -> Result<LossResult> {
    evaluate(probs, labels, LossVariant::V1, &LossConfig::default())
}

pub fn spatial_loss_v2(probs: &SpatialProbMap, labels: &ClusterLabelMap, cfg: &LossConfig) -> Result<LossResult> {
    evaluate(probs, labels, LossVariant::V2, cfg)
}

pub fn spatial_loss(
    probs: &SpatialProbMap,
    labels: &ClusterLabelMap,
    variant: LossVariant,
    cfg: &LossConfig,
) -> Result<LossResult> {
    evaluate(probs, labels, variant, cfg)
}

/// Loss value and gradient with respect to `M x N x C` logits, composing the
/// selected loss with a per-pixel softmax. For V2 the ranking permutation is
/// held fixed, so pixels whose label falls outside the weighted ranks get a
/// zero gradient.
pub fn spatial_loss_grad_logits(
    logits: &[f64],
    labels: &ClusterLabelMap,
    variant: LossVariant,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let k = labels.clusters();
    let pixels = labels.rows() * labels.cols();
    if logits.len() != pixels * k {
        return Err(Error::data(format!(
            "logits hold {} values, expected {}x{}x{k}",
            logits.len(),
            labels.rows(),
            labels.cols()
        )));
    }
    if variant == LossVariant::V2 {
        cfg.validate()?;
    }
    let mut grad = vec![0.0; logits.len()];
    let mut value = 0.0;
    let mut p = vec![0.0; k];
    for (i, (&y, g)) in labels.labels().iter().zip(grad.chunks_exact_mut(k)).enumerate() {
        let y = y as usize;
        softmax_into(&logits[i * k..(i + 1) * k], &mut p);
        let w = pixel_weight(variant, cfg, &p, y);
        if w == 0.0 {
            continue;
        }
        let (log_p, active) = clamped_log(p[y]);
        value -= w * log_p;
        if active {
            for (j, gv) in g.iter_mut().enumerate() {
                *gv = w * (p[j] - if j == y { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(r: usize, c: usize, k: usize, l: Vec<u32>) -> ClusterLabelMap {
        ClusterLabelMap::new(r, c, k, l).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let l = labels(2, 2, 3, vec![0, 2, 1, 1]);
        let res = spatial_loss_v1(&SpatialProbMap::one_hot(&l), &l).unwrap();
        assert_eq!(res.value, 0.0);
    }

    #[test]
    fn uniform_prediction() {
        let l = labels(3, 4, 5, vec![1; 12]);
        let res = spatial_loss_v1(&SpatialProbMap::uniform(3, 4, 5), &l).unwrap();
        assert!((res.value - 12.0 * 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn two_pixel_example() {
        let probs = SpatialProbMap::new(1, 2, 2, vec![0.8, 0.2, 0.4, 0.6]).unwrap();
        let res = spatial_loss_v1(&probs, &labels(1, 2, 2, vec![0, 1])).unwrap();
        let direct = -(0.8f64.ln() + 0.6f64.ln());
        assert!((res.value - direct).abs() < 1e-12);
        assert!((res.value - 0.73397).abs() < 1e-5);
        assert_eq!(res.grad_probs, vec![-1.0 / 0.8, 0.0, 0.0, -1.0 / 0.6]);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let probs = SpatialProbMap::uniform(1, 1, 2);
        let l = labels(1, 1, 5, vec![3]);
        assert!(matches!(spatial_loss_v1(&probs, &l), Err(Error::Data(_))));
    }

    #[test]
    fn label_beyond_top_k_contributes_nothing() {
        // label 3 ranks fourth; with K = 3 it is filtered out
        let probs = SpatialProbMap::new(1, 1, 4, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let l = labels(1, 1, 4, vec![3]);
        let res = spatial_loss_v2(&probs, &l, &LossConfig::top_k(3)).unwrap();
        assert_eq!(res.value, 0.0);
        assert!(res.grad_probs.iter().all(|&g| g == 0.0));
        let l = labels(1, 1, 4, vec![2]);
        let res = spatial_loss_v2(&probs, &l, &LossConfig::top_k(3)).unwrap();
        assert!((res.value + 0.2f64.ln() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_ties_prefer_lower_index() {
        assert_eq!(rank_of(&[0.25, 0.25, 0.5], 0), 1);
        assert_eq!(rank_of(&[0.25, 0.25, 0.5], 1), 2);
        assert_eq!(rank_of(&[0.25, 0.25, 0.5], 2), 0);
    }

    #[test]
    fn zero_weights_warn() {
        let cfg = LossConfig { k: 2, weights: vec![0.0, 0.0] };
        let res = spatial_loss_v2(&SpatialProbMap::uniform(1, 1, 2), &labels(1, 1, 2, vec![0]), &cfg).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.warnings.len(), 1);
        let bad = LossConfig { k: 1, weights: vec![-1.0] };
        assert!(matches!(spatial_loss_v2(&SpatialProbMap::uniform(1, 1, 2), &labels(1, 1, 2, vec![0]), &bad), Err(Error::Config(_))));
    }

    #[test]
    fn equal_logits_gradient() {
        let (_, g) = spatial_loss_grad_logits(&[0.3, 0.3], &labels(1, 1, 2, vec![0]), LossVariant::V1, &LossConfig::default()).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_top_k() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.weight(0), 0.1);
        assert_eq!(cfg.weight(9), 0.1);
        assert_eq!(cfg.weight(10), 0.0);
    }
}
