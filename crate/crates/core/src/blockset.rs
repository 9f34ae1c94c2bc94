//! Blockset enumeration.
//!
//! A [`Universe`] is the enumerated blockset of a scenario in canonical
//! block order, with per-block data that does not depend on bids
//! (membership mask, total size, BP value) precomputed once.

use std::collections::HashSet;

use crate::error::{Result, TfmError};
use crate::model::{Block, Blockset, Scenario, TxId};
use crate::money::Money;

/// Default cap on the number of enumerated blocks.
pub const DEFAULT_BUDGET: usize = 1 << 20;

/// Longest block enumerated in permutation mode.
pub const MAX_PERMUTATION_BLOCK: usize = 8;

/// Masks are `u64`, one bit per transaction position.
pub const MAX_TRANSACTIONS: usize = 64;

/// Total order used to break ties between equally good blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieOrder {
    /// Canonical block order: length, then id-lexicographic.
    Canonical,
    /// Larger total size first, then canonical order.
    LargestSizeFirst,
}

/// Enumerates the blockset, sorted in canonical order with duplicates removed.
pub fn enumerate_blocks(scenario: &Scenario, budget: usize) -> Result<Vec<Block>> {
    let mut blocks = match &scenario.blockset {
        Blockset::Explicit(blocks) => {
            if blocks.len() > budget {
                return Err(TfmError::BudgetExceeded { budget });
            }
            blocks.clone()
        }
        Blockset::Knapsack {
            max_total_size,
            candidates,
            enumerate_permutations,
        } => {
            let items: Vec<(TxId, u64)> = scenario
                .transactions()
                .iter()
                .filter(|t| candidates.as_ref().is_none_or(|c| c.contains(&t.id)))
                .map(|t| (t.id, t.size))
                .collect();
            let mut out = Vec::new();
            let mut current = Vec::new();
            knapsack_subsets(
                &items,
                0,
                *max_total_size,
                &mut current,
                *enumerate_permutations,
                budget,
                &mut out,
            )?;
            out
        }
    };
    if blocks.is_empty() {
        return Err(TfmError::EmptyBlockset);
    }
    blocks.sort();
    blocks.dedup();
    Ok(blocks)
}

fn knapsack_subsets(
    items: &[(TxId, u64)],
    start: usize,
    remaining: u64,
    current: &mut Vec<TxId>,
    permutations: bool,
    budget: usize,
    out: &mut Vec<Block>,
) -> Result<()> {
    if permutations {
        if current.len() > MAX_PERMUTATION_BLOCK {
            return Err(TfmError::Unsupported(format!(
                "permutation mode is capped at {MAX_PERMUTATION_BLOCK} transactions per block"
            )));
        }
        let mut perm = current.clone();
        push_permutations(&mut perm, 0, budget, out)?;
    } else {
        if out.len() >= budget {
            return Err(TfmError::BudgetExceeded { budget });
        }
        out.push(Block(current.clone()));
    }
    for i in start..items.len() {
        let (id, size) = items[i];
        if size <= remaining {
            current.push(id);
            knapsack_subsets(
                items,
                i + 1,
                remaining - size,
                current,
                permutations,
                budget,
                out,
            )?;
            current.pop();
        }
    }
    Ok(())
}

fn push_permutations(
    ids: &mut Vec<TxId>,
    k: usize,
    budget: usize,
    out: &mut Vec<Block>,
) -> Result<()> {
    if k == ids.len() {
        if out.len() >= budget {
            return Err(TfmError::BudgetExceeded { budget });
        }
        out.push(Block(ids.clone()));
        return Ok(());
    }
    for i in k..ids.len() {
        ids.swap(k, i);
        push_permutations(ids, k + 1, budget, out)?;
        ids.swap(k, i);
    }
    Ok(())
}

/// True when removing any transaction from any block yields another block.
pub fn is_downward_closed(blocks: &[Block]) -> bool {
    let set: HashSet<&Block> = blocks.iter().collect();
    blocks
        .iter()
        .all(|b| b.ids().iter().all(|t| set.contains(&b.without(*t))))
}

/// The enumerated blockset of one scenario.
#[derive(Debug, Clone)]
pub struct Universe {
    blocks: Vec<Block>,
    masks: Vec<u64>,
    sizes: Vec<u64>,
    bp_values: Vec<Money>,
    by_size_desc: Vec<usize>,
    canonical: Vec<usize>,
    downward_closed: bool,
}

impl Universe {
    pub fn new(scenario: &Scenario, budget: usize) -> Result<Self> {
        if scenario.transactions().len() > MAX_TRANSACTIONS {
            return Err(TfmError::Unsupported(format!(
                "more than {MAX_TRANSACTIONS} transactions in one scenario"
            )));
        }
        let blocks = enumerate_blocks(scenario, budget)?;
        let mut masks = Vec::with_capacity(blocks.len());
        let mut sizes = Vec::with_capacity(blocks.len());
        let mut bp_values = Vec::with_capacity(blocks.len());
        for b in &blocks {
            let mut mask = 0u64;
            let mut size = 0u64;
            for id in b.ids() {
                let pos = scenario.position(*id)?;
                mask |= 1 << pos;
                size += scenario.transactions()[pos].size;
            }
            masks.push(mask);
            sizes.push(size);
            bp_values.push(scenario.bp_valuation.value(b));
        }
        let mut by_size_desc: Vec<usize> = (0..blocks.len()).collect();
        by_size_desc.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let downward_closed = match scenario.blockset {
            Blockset::Knapsack { .. } => true,
            Blockset::Explicit(_) => is_downward_closed(&blocks),
        };
        Ok(Universe {
            canonical: (0..blocks.len()).collect(),
            blocks,
            masks,
            sizes,
            bp_values,
            by_size_desc,
            downward_closed,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    /// Bit `k` set iff the transaction at position `k` is in block `i`.
    pub fn mask(&self, i: usize) -> u64 {
        self.masks[i]
    }

    pub fn total_size(&self, i: usize) -> u64 {
        self.sizes[i]
    }

    pub fn bp_value(&self, i: usize) -> Money {
        self.bp_values[i]
    }

    pub fn is_downward_closed(&self) -> bool {
        self.downward_closed
    }

    /// Block indices in the given tie-breaking order.
    pub fn order(&self, order: TieOrder) -> &[usize] {
        match order {
            TieOrder::Canonical => &self.canonical,
            TieOrder::LargestSizeFirst => &self.by_size_desc,
        }
    }

    pub fn index_of(&self, block: &Block) -> Option<usize> {
        self.blocks.binary_search(block).ok()
    }

    /// Copy with BP values recomputed under another valuation.
    pub fn revalued(&self, valuation: &crate::model::BpValuation) -> Universe {
        let mut u = self.clone();
        u.bp_values = u.blocks.iter().map(|b| valuation.value(b)).collect();
        u
    }
}
