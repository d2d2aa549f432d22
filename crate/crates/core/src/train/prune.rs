use crate::data::Dataset;
use crate::error::{MimlError, Result};

/// Result of [`prune_bags`].
#[derive(Debug, Clone)]
pub struct Pruned {
    pub dataset: Dataset,
    /// Original indices of the kept bags, ascending.
    pub kept: Vec<usize>,
    /// Original indices of the removed bags, costliest first.
    pub removed: Vec<usize>,
    /// `Σ n_b |Y_b| 2^|Y_b|` over all bags.
    pub cost_total: f64,
    /// The same sum over the kept bags.
    pub cost_kept: f64,
}

impl Pruned {
    /// `cost_total / cost_kept`.
    pub fn cost_ratio(&self) -> f64 {
        self.cost_total / self.cost_kept
    }
}

/// Drops the `ceil(fraction * B)` bags with the largest DP cost. Among equal
/// costs, bags earlier in the dataset are kept.
pub fn prune_bags(ds: &Dataset, fraction: f64) -> Result<Pruned> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(MimlError::InvalidConfig(format!(
            "prune fraction {fraction} not in [0, 1)"
        )));
    }
    let nbags = ds.bags.len();
    let drop = (fraction * nbags as f64).ceil() as usize;
    if drop >= nbags {
        return Err(MimlError::InvalidData(format!(
            "pruning {drop} of {nbags} bags leaves nothing to train on"
        )));
    }
    let costs: Vec<f64> = ds.bags.iter().map(|b| b.dp_cost()).collect();
    let mut order: Vec<usize> = (0..nbags).collect();
    order.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(b.cmp(&a)));
    let removed = order[..drop].to_vec();
    let mut kept = order[drop..].to_vec();
    kept.sort_unstable();
    Ok(Pruned {
        dataset: ds.subset(&kept),
        cost_total: costs.iter().sum(),
        cost_kept: kept.iter().map(|&i| costs[i]).sum(),
        kept,
        removed,
    })
}
