//! BPS maximization over a blockset.
//!
//! [`bps_argmax`] scans the enumerated blockset exhaustively and returns the
//! first BPS-maximizing block in canonical order. [`bps_argmax_additive_dp`]
//! is an independent dynamic program for additive valuations over knapsack
//! blocksets; the two must agree block for block.

use std::cmp::Ordering;

use crate::blockset::{TieOrder, Universe, DEFAULT_BUDGET};
use crate::error::{Result, TfmError};
use crate::mechanisms::{mask_sum, BidVector, Tfm};
use crate::model::{Block, Blockset, BpValuation, Scenario, TxId};
use crate::money::Money;

/// The fixed total order on blocks used for tie-breaking: length
/// ascending, then lexicographic on the id sequence.
#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalBlockOrder;

impl CanonicalBlockOrder {
    pub fn compare(a: &Block, b: &Block) -> Ordering {
        a.cmp(b)
    }
}

/// BPS of every block of the universe; `None` for blocks holding a
/// transaction that is ineligible at its bid.
pub fn bps_values(
    mech: &dyn Tfm,
    bids: &BidVector,
    scenario: &Scenario,
    universe: &Universe,
) -> Vec<Option<Money>> {
    let txs = scenario.transactions();
    let by_pos = bids.by_position(scenario);
    let mut ineligible = 0u64;
    for (k, t) in txs.iter().enumerate() {
        if !mech.eligible(t, by_pos[k]) {
            ineligible |= 1 << k;
        }
    }
    let weights: Option<Vec<Money>> = txs
        .iter()
        .zip(&by_pos)
        .map(|(t, b)| mech.separable_terms(t, *b).map(|(p, q)| p - q))
        .collect();
    (0..universe.len())
        .map(|i| {
            let mask = universe.mask(i);
            if mask & ineligible != 0 {
                return None;
            }
            Some(match &weights {
                Some(w) => universe.bp_value(i) + mask_sum(mask, w),
                None => {
                    let block = universe.block(i);
                    let mut v = universe.bp_value(i) - mech.burn(block, bids, scenario);
                    for id in block.ids() {
                        if let Ok(t) = scenario.tx(*id) {
                            v += mech.payment_of(t, block, bids, scenario);
                        }
                    }
                    v
                }
            })
        })
        .collect()
}

/// First index in `order` among the maximizers of `values`.
pub fn first_max(values: &[Option<Money>], order: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, Money)> = None;
    for &i in order {
        if let Some(v) = values[i] {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the BPS-maximizing block that comes first in `order`.
pub fn argmax_index(
    mech: &dyn Tfm,
    bids: &BidVector,
    scenario: &Scenario,
    universe: &Universe,
    order: TieOrder,
) -> Result<usize> {
    let values = bps_values(mech, bids, scenario, universe);
    first_max(&values, universe.order(order)).ok_or(TfmError::EmptyBlockset)
}

/// The first BPS-maximizing block in canonical order.
pub fn bps_argmax(bids: &BidVector, scenario: &Scenario, mech: &dyn Tfm) -> Result<Block> {
    bps_argmax_with_budget(bids, scenario, mech, DEFAULT_BUDGET)
}

pub fn bps_argmax_with_budget(
    bids: &BidVector,
    scenario: &Scenario,
    mech: &dyn Tfm,
    budget: usize,
) -> Result<Block> {
    let universe = Universe::new(scenario, budget)?;
    let i = argmax_index(mech, bids, scenario, &universe, TieOrder::Canonical)?;
    Ok(universe.block(i).clone())
}

/// Dynamic program over capacity for additive (or passive) valuations on
/// knapsack blocksets with separable mechanisms. Returns the same block as
/// [`bps_argmax`]: among optimal subsets, the fewest transactions, then the
/// lexicographically smallest id sequence.
pub fn bps_argmax_additive_dp(
    bids: &BidVector,
    scenario: &Scenario,
    mech: &dyn Tfm,
) -> Result<Block> {
    let (capacity, candidates) = match &scenario.blockset {
        Blockset::Knapsack {
            max_total_size,
            candidates,
            enumerate_permutations: false,
        } => (*max_total_size, candidates),
        _ => {
            return Err(TfmError::Unsupported(
                "additive DP needs a knapsack blockset without permutations".into(),
            ))
        }
    };
    let mu = |id: TxId| match &scenario.bp_valuation {
        BpValuation::Additive(m) => Ok(m.get(&id).copied().unwrap_or(Money::ZERO)),
        BpValuation::Passive(_) => Ok(Money::ZERO),
        _ => Err(TfmError::Unsupported(
            "additive DP needs an additive or passive valuation".into(),
        )),
    };

    // (id, size, weight), ascending id
    let mut items = Vec::new();
    for t in scenario.transactions() {
        if candidates.as_ref().is_some_and(|c| !c.contains(&t.id)) {
            continue;
        }
        let bid = bids.get(t.id);
        if !mech.eligible(t, bid) || t.size > capacity {
            continue;
        }
        let (p, q) = mech.separable_terms(t, bid).ok_or_else(|| {
            TfmError::Unsupported(format!("mechanism {} is not separable", mech.name()))
        })?;
        items.push((t.id, t.size, mu(t.id)? + p - q));
    }
    // Validate the valuation even with no items.
    if let BpValuation::SingleMinded { .. } | BpValuation::Table(_) = scenario.bp_valuation {
        mu(TxId(0))?;
    }

    let n = items.len();
    let cap = capacity.min(items.iter().map(|i| i.1).sum()) as usize;
    // best[i][c][k]: max weight choosing exactly k of items[i..] with total size <= c
    let idx = |i: usize, c: usize, k: usize| (i * (cap + 1) + c) * (n + 1) + k;
    let mut best: Vec<Option<Money>> = vec![None; (n + 1) * (cap + 1) * (n + 1)];
    for c in 0..=cap {
        best[idx(n, c, 0)] = Some(Money::ZERO);
    }
    for i in (0..n).rev() {
        let (_, size, w) = items[i];
        let size = size as usize;
        for c in 0..=cap {
            for k in 0..=(n - i) {
                let skip = best[idx(i + 1, c, k)];
                let take = if k > 0 && size <= c {
                    best[idx(i + 1, c - size, k - 1)].map(|v| v + w)
                } else {
                    None
                };
                best[idx(i, c, k)] = match (skip, take) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
        }
    }

    let optimum = (0..=n).filter_map(|k| best[idx(0, cap, k)]).max();
    let Some(optimum) = optimum else {
        return Ok(Block::empty());
    };
    let mut k = (0..=n)
        .find(|&k| best[idx(0, cap, k)] == Some(optimum))
        .unwrap_or(0);

    let mut chosen = Vec::with_capacity(k);
    let (mut i, mut c, mut target) = (0usize, cap, optimum);
    while k > 0 {
        let j = (i..n)
            .find(|&j| {
                let (_, size, w) = items[j];
                let size = size as usize;
                size <= c && best[idx(j + 1, c - size, k - 1)] == Some(target - w)
            })
            .ok_or_else(|| TfmError::Unsupported("DP reconstruction failed".into()))?;
        let (id, size, w) = items[j];
        chosen.push(id);
        c -= size as usize;
        target -= w;
        k -= 1;
        i = j + 1;
    }
    Ok(Block(chosen))
}

/// `nu_t`: the largest increase in BP value from adding `t` to a feasible
/// block, `max over B containing t of v(B) - v(B without t)`.
pub fn max_marginal_value(id: TxId, scenario: &Scenario) -> Result<Money> {
    let universe = Universe::new(scenario, DEFAULT_BUDGET)?;
    max_marginal_value_in(id, scenario, &universe)
}

pub fn max_marginal_value_in(id: TxId, scenario: &Scenario, universe: &Universe) -> Result<Money> {
    scenario.tx(id)?;
    universe
        .blocks()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.contains(id))
        .map(|(i, b)| {
            let rest = b.without(id);
            let rest_value = universe
                .index_of(&rest)
                .map(|j| universe.bp_value(j))
                .unwrap_or_else(|| scenario.bp_valuation.value(&rest));
            universe.bp_value(i) - rest_value
        })
        .max()
        .ok_or(TfmError::NotInAnyBlock(id))
}
