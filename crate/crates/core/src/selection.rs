//! Committee selection and the adaptive indexer registration window.
//!
//! Every node runs the same scoring over the same inputs, so committees are
//! agreed on without any message exchange: a node's score is its reputation
//! mapped to `[0, 1]` times a pseudorandom derived from the winning VRF value.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

use crate::ids::{NodeId, SimTime};
use crate::vrf::derive_unit;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("committee of {k} requested from {available} eligible nodes")]
    NotEnoughNodes { k: usize, available: usize },
    #[error("no indexer registered for the request")]
    NoRegistrants,
    #[error("window bounds are inconsistent (w_min > w_max or alpha outside (0, 1])")]
    InvalidWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub id: NodeId,
    pub reputation: f64,
    pub normalized: f64,
    pub r: f64,
    pub score: f64,
}

/// Linear map of a reputation in `[-1, 1]` onto `[0, 1]`.
pub fn normalize_reputation(rep: f64) -> f64 {
    ((rep + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Scores `nodes` and sorts them by descending score, ties broken by
/// ascending id.
pub fn score_nodes(nodes: &[(NodeId, f64)], v_star: &[u8; 32]) -> Vec<ScoredNode> {
    let mut scored: Vec<ScoredNode> = nodes
        .iter()
        .map(|(id, rep)| {
            let normalized = normalize_reputation(*rep);
            let r = derive_unit(v_star, id);
            ScoredNode { id: id.clone(), reputation: *rep, normalized, r, score: normalized * r }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    scored
}

/// Top-`k` oracles by score. Callers pass only unbanned nodes.
pub fn select_oracles(nodes: &[(NodeId, f64)], v_star: &[u8; 32], k: usize) -> Result<Vec<NodeId>, SelectionError> {
    if k > nodes.len() {
        return Err(SelectionError::NotEnoughNodes { k, available: nodes.len() });
    }
    Ok(score_nodes(nodes, v_star).into_iter().take(k).map(|s| s.id).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexerCommittee {
    pub members: Vec<NodeId>,
    /// How many seats stayed empty because too few indexers registered.
    pub shortfall: usize,
}

/// Same scoring as oracle selection, over the registrant set. With fewer
/// registrants than seats, all registrants are taken and the gap reported.
pub fn select_indexers(registered: &[(NodeId, f64)], v_star: &[u8; 32], k: usize) -> Result<IndexerCommittee, SelectionError> {
    if registered.is_empty() {
        return Err(SelectionError::NoRegistrants);
    }
    let take = k.min(registered.len());
    let members = score_nodes(registered, v_star).into_iter().take(take).map(|s| s.id).collect();
    Ok(IndexerCommittee { members, shortfall: k - take })
}

/// `alpha·t_u + (1 − alpha)·prev`.
pub fn update_ema(prev_ema: f64, t_u: f64, alpha: f64) -> f64 {
    alpha * t_u + (1.0 - alpha) * prev_ema
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub ema: f64,
    pub w_base: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub alpha: f64,
    pub phi: f64,
    pub ema_target: f64,
}

impl Default for WindowState {
    fn default() -> Self {
        Self { ema: 8000.0, w_base: 8000.0, w_min: 2000.0, w_max: 20_000.0, alpha: 0.2, phi: 0.5, ema_target: 8000.0 }
    }
}

impl WindowState {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.w_min > self.w_max || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SelectionError::InvalidWindow);
        }
        Ok(())
    }

    /// `clamp(w_base + phi·(ema − ema_target), w_min, w_max)`.
    pub fn window_size(&self) -> f64 {
        (self.w_base + self.phi * (self.ema - self.ema_target)).clamp(self.w_min, self.w_max)
    }

    /// Folds the latest response time into the moving average.
    pub fn observe(&mut self, t_u: f64) {
        self.ema = update_ema(self.ema, t_u, self.alpha);
    }
}

/// How long the committee waits for indexer registrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RegistrationWindow {
    Fixed(SimTime),
    Adaptive(WindowState),
}

impl RegistrationWindow {
    pub fn current(&self) -> SimTime {
        match self {
            RegistrationWindow::Fixed(ms) => *ms,
            RegistrationWindow::Adaptive(state) => state.window_size().round() as SimTime,
        }
    }

    pub fn observe(&mut self, t_u: SimTime) {
        if let RegistrationWindow::Adaptive(state) = self {
            state.observe(t_u as f64);
        }
    }
}
