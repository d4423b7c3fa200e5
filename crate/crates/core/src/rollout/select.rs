use serde::{Deserialize, Serialize};

use super::distance::{gen_distance, DistanceConfig};
use crate::error::{Error, Result};
use crate::policy::model::Policy;
use crate::policy::vocab::TokenVocabulary;
use crate::sim::observation::Observation;
use crate::sim::state::{Action, AgentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    TopK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionCandidateSet {
    pub candidates: Vec<Action>,
    pub distances: Vec<f64>,
    pub provenance: Provenance,
}

impl ActionCandidateSet {
    pub fn score(
        candidates: Vec<Action>,
        provenance: Provenance,
        s_now: &AgentState,
        expert_future: &[AgentState],
        dcfg: &DistanceConfig,
        dt: f64,
        vocab: Option<&TokenVocabulary>,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidInput("empty candidate set".into()));
        }
        let distances = candidates
            .iter()
            .map(|a| gen_distance(a, s_now, expert_future, dcfg, dt, vocab))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { candidates, distances, provenance })
    }

    /// Index and distance of the closest candidate; ties go to the lowest index.
    pub fn closest(&self) -> (usize, f64) {
        argmin(&self.distances)
    }
}

pub fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &d) in values.iter().enumerate().skip(1) {
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Candidate closest to the expert continuation.
pub fn select_closest(
    set: &ActionCandidateSet,
) -> (Action, f64) {
    let (i, d) = set.closest();
    (set.candidates[i].clone(), d)
}

/// CAT-K style selection: enumerate the `k` most likely tokens and keep the
/// one whose one-step image lands closest to the next expert state.
pub fn topk_select(
    policy: &Policy,
    obs: &Observation,
    k: usize,
    s_now: &AgentState,
    expert_next: &AgentState,
    dcfg: &DistanceConfig,
) -> Result<(Action, f64)> {
    let tokens = policy.top_k(obs, k)?;
    let set = ActionCandidateSet::score(
        tokens.into_iter().map(Action::DiscreteToken).collect(),
        Provenance::TopK,
        s_now,
        std::slice::from_ref(expert_next),
        dcfg,
        policy.config.dt,
        policy.vocab(),
    )?;
    Ok(select_closest(&set))
}

/// Token whose one-step image is closest to `target` over the whole vocabulary.
pub fn project_onto_vocabulary(
    vocab: &TokenVocabulary,
    s_now: &AgentState,
    target: &AgentState,
    dcfg: &DistanceConfig,
    dt: f64,
) -> (usize, f64) {
    let heading = s_now.heading;
    let d: Vec<f64> = vocab
        .entries()
        .iter()
        .map(|e| {
            let next = s_now.moved_to(s_now.pos() + e.rotate(heading), dt);
            dcfg.state_distance(&next, target)
        })
        .collect();
    argmin(&d)
}
