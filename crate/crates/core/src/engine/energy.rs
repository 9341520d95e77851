use std::collections::{BTreeMap, BTreeSet};

use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Transmit,
    Receive,
    Sensing,
    Idle,
}

/// Residual energy per node and every debit made against it.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    initial: BTreeMap<NodeId, f64>,
    residual: BTreeMap<NodeId, f64>,
    by_category: BTreeMap<Category, f64>,
    /// Communication and shared costs attributed to each source; `None` is unattributed.
    by_source: BTreeMap<Option<NodeId>, f64>,
    debited: f64,
}

impl EnergyLedger {
    pub fn new(initial: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        let initial: BTreeMap<NodeId, f64> = initial.into_iter().collect();
        Self {
            residual: initial.clone(),
            initial,
            by_category: BTreeMap::new(),
            by_source: BTreeMap::new(),
            debited: 0.0,
        }
    }

    /// Takes up to `amount` from `node`. Returns `true` when the node is now empty.
    pub fn debit(&mut self, node: NodeId, amount: f64, cat: Category, source: Option<NodeId>) -> bool {
        let Some(r) = self.residual.get_mut(&node) else {
            return false;
        };
        let taken = amount.max(0.0).min(*r);
        *r -= taken;
        *self.by_category.entry(cat).or_default() += taken;
        *self.by_source.entry(source).or_default() += taken;
        self.debited += taken;
        amount > 0.0 && *r <= 0.0
    }

    /// Splits a node's shared cost evenly across `sources` (unattributed when empty).
    pub fn debit_shared(&mut self, node: NodeId, amount: f64, cat: Category, sources: &BTreeSet<NodeId>) -> bool {
        if sources.is_empty() {
            return self.debit(node, amount, cat, None);
        }
        let share = amount / sources.len() as f64;
        let mut empty = false;
        for &s in sources {
            empty |= self.debit(node, share, cat, Some(s));
        }
        empty
    }

    pub fn residual(&self, node: NodeId) -> f64 {
        self.residual.get(&node).copied().unwrap_or(0.0)
    }

    pub fn residuals(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.residual.iter().map(|(k, v)| (*k, *v))
    }

    pub fn total_debited(&self) -> f64 {
        self.debited
    }

    pub fn total_initial(&self) -> f64 {
        self.initial.values().sum()
    }

    pub fn total_residual(&self) -> f64 {
        self.residual.values().sum()
    }

    pub fn category(&self, cat: Category) -> f64 {
        self.by_category.get(&cat).copied().unwrap_or(0.0)
    }

    pub fn attributed(&self, source: Option<NodeId>) -> f64 {
        self.by_source.get(&source).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balances_and_clamps() {
        let mut l = EnergyLedger::new([(NodeId(1), 1.0), (NodeId(2), 1.0)]);
        assert!(!l.debit(NodeId(1), 0.25, Category::Transmit, Some(NodeId(1))));
        assert!(l.debit(NodeId(2), 5.0, Category::Receive, Some(NodeId(1))));
        assert_eq!(l.residual(NodeId(2)), 0.0);
        assert_eq!(l.total_debited(), 1.25);
        assert!((l.total_initial() - l.total_residual() - l.total_debited()).abs() < 1e-15);
        let both: BTreeSet<NodeId> = [NodeId(1), NodeId(3)].into();
        l.debit_shared(NodeId(1), 0.5, Category::Sensing, &both);
        assert_eq!(l.attributed(Some(NodeId(3))), 0.25);
        assert_eq!(l.attributed(Some(NodeId(1))), 1.5);
    }
}
