use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Result, SeaError};
use crate::gtl::Dropout;
use crate::sea::{ModelBatch, PreparedGraph, RoutingDecision, SeaModel};

/// Share of nodes at or above which one expert counts as having collapsed.
pub const COLLAPSE_SHARE: f64 = 0.95;
pub const DEFAULT_REPORT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertReport {
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub threshold: f64,
    /// `(expert, frequency)` for experts at or above the threshold.
    pub shown: Vec<(usize, f64)>,
    pub collapsed: bool,
}

/// Relative routing frequency of each expert over all decisions.
pub fn expert_distribution_report(decisions: &[RoutingDecision], threshold: f64) -> Result<ExpertReport> {
    let num_experts = decisions
        .first()
        .map(RoutingDecision::num_experts)
        .ok_or(SeaError::EmptyDataset)?;
    let mut counts = vec![0usize; num_experts];
    for d in decisions {
        for &i in &d.chosen {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(SeaError::EmptyDataset);
    }
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let shown = frequencies
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, f)| f >= threshold)
        .collect();
    let collapsed = counts.iter().any(|&c| c as f64 >= COLLAPSE_SHARE * total as f64);
    Ok(ExpertReport {
        counts,
        frequencies,
        threshold,
        shown,
        collapsed,
    })
}

/// Mean cosine similarity between node states of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSmoothness {
    /// 0 is the embedded input, `l` the state table of expert `l`.
    pub layer: usize,
    /// `None` when no pair of non-zero rows exists.
    pub mean_cosine: Option<f64>,
    pub pairs: usize,
    /// Zero rows, excluded because their cosine is undefined.
    pub zero_rows: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct CosineSum {
    sum: f64,
    pairs: usize,
    zero_rows: usize,
}

fn cosine_sum(states: &Array2<f64>) -> CosineSum {
    let norms: Vec<f64> = states.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let live: Vec<usize> = (0..states.nrows()).filter(|&i| norms[i] > 0.0).collect();
    let mut out = CosineSum {
        zero_rows: states.nrows() - live.len(),
        ..CosineSum::default()
    };
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a + 1..] {
            out.sum += states.row(i).dot(&states.row(j)) / (norms[i] * norms[j]);
            out.pairs += 1;
        }
    }
    out
}

/// Mean pairwise cosine of the rows of `states`.
pub fn mean_pairwise_cosine(states: &Array2<f64>) -> (Option<f64>, usize, usize) {
    let c = cosine_sum(states);
    let mean = (c.pairs > 0).then(|| c.sum / c.pairs as f64);
    (mean, c.pairs, c.zero_rows)
}

/// Per-layer mean cosine similarity of node states, over node pairs within
/// the same graph, pooled across `graphs`.
pub fn oversmoothing_diagnostic(model: &SeaModel, graphs: &[PreparedGraph]) -> Result<Vec<LayerSmoothness>> {
    if graphs.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    let layers = model.config().num_experts + 1;
    let mut acc = vec![CosineSum::default(); layers];
    for g in graphs {
        let batch = ModelBatch::new(&[g], model.config())?;
        let tape = Tape::new();
        let p = model.params().bind_constant(&tape);
        let h0 = model.embed(&p, &batch)?;
        let mut tables = vec![h0.value()];
        for s in model.expert_states(&p, &batch, h0, &mut Dropout::off())? {
            tables.push(s.value());
        }
        for (a, t) in acc.iter_mut().zip(&tables) {
            let c = cosine_sum(t);
            a.sum += c.sum;
            a.pairs += c.pairs;
            a.zero_rows += c.zero_rows;
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(layer, c)| LayerSmoothness {
            layer,
            mean_cosine: (c.pairs > 0).then(|| c.sum / c.pairs as f64),
            pairs: c.pairs,
            zero_rows: c.zero_rows,
        })
        .collect())
}
