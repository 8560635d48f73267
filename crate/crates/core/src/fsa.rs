//! Weighted finite-state acceptors over token ids, max-plus (log-prob) weights.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, BLANK_ID};

pub type StateId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    /// `None` is an epsilon arc.
    pub label: Option<TokenId>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fsa {
    pub num_states: usize,
    pub start: StateId,
    pub arcs: Vec<Arc>,
    pub finals: BTreeMap<StateId, f64>,
}

impl Fsa {
    pub fn new(num_states: usize, start: StateId) -> Self {
        Self {
            num_states,
            start,
            arcs: Vec::new(),
            finals: BTreeMap::new(),
        }
    }

    pub fn add_arc(&mut self, src: StateId, dst: StateId, label: Option<TokenId>, weight: f64) -> usize {
        self.arcs.push(Arc {
            src,
            dst,
            label,
            weight,
        });
        self.arcs.len() - 1
    }

    pub fn set_final(&mut self, state: StateId, weight: f64) {
        self.finals.insert(state, weight);
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.finals.contains_key(&state)
    }

    pub fn num_epsilon_arcs(&self) -> usize {
        self.arcs.iter().filter(|a| a.label.is_none()).count()
    }

    /// Checks structural invariants; `vocab_size`, when given, bounds labels.
    /// Blank may not appear as a graph label: the decoder owns it.
    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        let n = self.num_states;
        if (self.start as usize) >= n {
            return Err(Error::InvalidGraph(format!("start state {} >= {n}", self.start)));
        }
        if self.finals.is_empty() {
            return Err(Error::InvalidGraph("no final state".into()));
        }
        if let Some(&s) = self.finals.keys().find(|&&s| s as usize >= n) {
            return Err(Error::InvalidGraph(format!("final state {s} >= {n}")));
        }
        for (i, a) in self.arcs.iter().enumerate() {
            if a.src as usize >= n || a.dst as usize >= n {
                return Err(Error::InvalidGraph(format!("arc {i} leaves the state range")));
            }
            if a.weight.is_nan() {
                return Err(Error::InvalidGraph(format!("arc {i} has NaN weight")));
            }
            if let Some(l) = a.label {
                if l == BLANK_ID {
                    return Err(Error::InvalidGraph(format!("arc {i} carries the blank label")));
                }
                if let Some(v) = vocab_size {
                    if l as usize >= v {
                        return Err(Error::InvalidGraph(format!("arc {i} label {l} >= {v}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Topological order of states under epsilon arcs, or `None` when the
    /// epsilon subgraph has a cycle.
    pub fn epsilon_topo_order(&self) -> Option<Vec<StateId>> {
        let n = self.num_states;
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for a in self.arcs.iter().filter(|a| a.label.is_none()) {
            indeg[a.dst as usize] += 1;
            succ[a.src as usize].push(a.dst);
        }
        let mut order = Vec::with_capacity(n);
        let mut stack: Vec<StateId> = (0..n as StateId).filter(|&s| indeg[s as usize] == 0).rev().collect();
        while let Some(s) = stack.pop() {
            order.push(s);
            for &d in succ[s as usize].iter().rev() {
                indeg[d as usize] -= 1;
                if indeg[d as usize] == 0 {
                    stack.push(d);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Best (max log-weight) accepting path for exactly `labels`, or `None`
    /// when the sequence is rejected.
    pub fn best_path_score(&self, labels: &[TokenId]) -> Result<Option<f64>> {
        let n = self.num_states;
        let eps: Vec<&Arc> = self.arcs.iter().filter(|a| a.label.is_none()).collect();
        let close = |scores: &mut Vec<f64>| -> Result<()> {
            for _ in 0..=n {
                let mut changed = false;
                for a in &eps {
                    let cand = scores[a.src as usize] + a.weight;
                    if cand > scores[a.dst as usize] {
                        scores[a.dst as usize] = cand;
                        changed = true;
                    }
                }
                if !changed {
                    return Ok(());
                }
            }
            Err(Error::InvalidGraph("positive-weight epsilon cycle".into()))
        };
        let mut scores = vec![f64::NEG_INFINITY; n];
        scores[self.start as usize] = 0.0;
        close(&mut scores)?;
        for &l in labels {
            let mut next = vec![f64::NEG_INFINITY; n];
            for a in self.arcs.iter().filter(|a| a.label == Some(l)) {
                let cand = scores[a.src as usize] + a.weight;
                if cand > next[a.dst as usize] {
                    next[a.dst as usize] = cand;
                }
            }
            close(&mut next)?;
            scores = next;
        }
        let best = self
            .finals
            .iter()
            .map(|(&s, &w)| scores[s as usize] + w)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((best > f64::NEG_INFINITY).then_some(best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Fsa {
        let mut f = Fsa::new(3, 0);
        f.add_arc(0, 1, Some(2), -1.0);
        f.add_arc(1, 2, Some(3), -0.5);
        f.add_arc(0, 2, None, -4.0);
        f.set_final(2, 0.0);
        f
    }

    #[test]
    fn validate_rejects_blank_and_range() {
        let mut f = chain();
        assert!(f.validate(Some(4)).is_ok());
        assert!(f.validate(Some(3)).is_err());
        f.add_arc(0, 1, Some(BLANK_ID), 0.0);
        assert!(f.validate(None).is_err());
        let mut g = chain();
        g.finals.clear();
        assert!(g.validate(None).is_err());
    }

    #[test]
    fn path_scores() {
        let f = chain();
        assert_eq!(f.best_path_score(&[2, 3]).unwrap(), Some(-1.5));
        assert_eq!(f.best_path_score(&[]).unwrap(), Some(-4.0));
        assert_eq!(f.best_path_score(&[3]).unwrap(), None);
    }

    #[test]
    fn epsilon_cycles_detected() {
        let mut f = chain();
        assert!(f.epsilon_topo_order().is_some());
        f.add_arc(2, 0, None, -1.0);
        assert!(f.epsilon_topo_order().is_none());
        // Non-positive cycles still score fine.
        assert_eq!(f.best_path_score(&[2, 3]).unwrap(), Some(-1.5));
        f.add_arc(2, 0, None, 5.0);
        assert!(f.best_path_score(&[2]).is_err());
    }
}
