//! Transaction fee mechanisms: allocation, payment and burning rules.
//!
//! [`Tfm`] is the general rule-triple contract. Rules receive the full bid
//! vector of all known transactions, so rules that look at excluded bids are
//! expressible even though none of the presets do. [`Mechanism`] provides the
//! named presets: first-price auction, EIP-1559, tipless and the trivial
//! mechanism.

use std::collections::BTreeMap;
use std::fmt;

use crate::blockset::{TieOrder, Universe, DEFAULT_BUDGET};
use crate::error::{Result, TfmError};
use crate::model::{Block, Blockset, Scenario, Transaction, TxId};
use crate::money::Money;
use crate::solver;

/// Bids of all known transactions, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BidVector(Vec<(TxId, Money)>);

impl BidVector {
    pub fn from_pairs<I: IntoIterator<Item = (TxId, Money)>>(pairs: I) -> Self {
        let map: BTreeMap<TxId, Money> = pairs.into_iter().collect();
        BidVector(map.into_iter().collect())
    }

    pub fn from_ids<I: IntoIterator<Item = (u32, i64)>>(pairs: I) -> Self {
        Self::from_pairs(pairs.into_iter().map(|(i, b)| (TxId(i), Money(b))))
    }

    /// Bid of `id`; transactions without an entry bid 0.
    pub fn get(&self, id: TxId) -> Money {
        self.0
            .binary_search_by_key(&id, |(t, _)| *t)
            .map(|i| self.0[i].1)
            .unwrap_or(Money::ZERO)
    }

    pub fn set(&mut self, id: TxId, bid: Money) {
        match self.0.binary_search_by_key(&id, |(t, _)| *t) {
            Ok(i) => self.0[i].1 = bid,
            Err(i) => self.0.insert(i, (id, bid)),
        }
    }

    pub fn with(&self, id: TxId, bid: Money) -> Self {
        let mut b = self.clone();
        b.set(id, bid);
        b
    }

    pub fn iter(&self) -> impl Iterator<Item = (TxId, Money)> + '_ {
        self.0.iter().copied()
    }

    pub fn total(&self) -> Money {
        self.0.iter().map(|(_, b)| *b).sum()
    }

    /// Bids in scenario transaction order.
    pub fn by_position(&self, scenario: &Scenario) -> Vec<Money> {
        let txs = scenario.transactions();
        if self.0.len() == txs.len() && self.0.iter().zip(txs).all(|((id, _), t)| *id == t.id) {
            return self.0.iter().map(|(_, b)| *b).collect();
        }
        txs.iter().map(|t| self.get(t.id)).collect()
    }
}

impl fmt::Display for BidVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (id, b)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ";")?;
            }
            write!(f, "{id}:{b}")?;
        }
        Ok(())
    }
}

/// A transaction fee mechanism: a (allocation, payment, burning) rule triple.
pub trait Tfm: Send + Sync {
    fn name(&self) -> String;

    /// Payment `p_t(B, b)` of an included transaction.
    fn payment_of(
        &self,
        tx: &Transaction,
        block: &Block,
        bids: &BidVector,
        scenario: &Scenario,
    ) -> Money;

    /// Burn `q(B, b)`.
    fn burn(&self, block: &Block, bids: &BidVector, scenario: &Scenario) -> Money;

    /// Whether the transaction may be included at all with this bid.
    fn eligible(&self, _tx: &Transaction, _bid: Money) -> bool {
        true
    }

    /// Fixed total order the allocation rule uses among equally good blocks.
    fn tie_order(&self) -> TieOrder {
        TieOrder::Canonical
    }

    /// `(payment, burn)` contributed by an included transaction, when both
    /// rules decompose into per-transaction terms that depend only on the
    /// transaction's own bid.
    fn separable_terms(&self, _tx: &Transaction, _bid: Money) -> Option<(Money, Money)> {
        None
    }

    /// Index into `universe` of the recommended block.
    fn recommend(
        &self,
        bids: &BidVector,
        scenario: &Scenario,
        universe: &Universe,
    ) -> Result<usize>;
}

/// Whether a below-reserve transaction may be included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Eligibility {
    /// Any transaction may be included; the full burn is still owed.
    Free,
    /// Only transactions with `b_t >= r * s_t` are feasible.
    BaseFeeGated,
}

/// Allocation rule flavour of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Allocation {
    /// The preset's classic rule: revenue maximization for FPA, include all
    /// reserve-clearing transactions for EIP-1559, maximize included size
    /// among reserve-clearing transactions for tipless.
    Standard,
    /// BPS maximization with canonical tie-breaking.
    Consonant,
}

/// The named mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Fpa {
        allocation: Allocation,
    },
    Eip1559 {
        base_fee: Money,
        eligibility: Eligibility,
        allocation: Allocation,
    },
    Tipless {
        base_fee: Money,
        eligibility: Eligibility,
        allocation: Allocation,
    },
    /// Zero payments and burns; the BP picks its favourite block.
    Trivial,
}

impl Mechanism {
    pub fn fpa() -> Self {
        Mechanism::Fpa {
            allocation: Allocation::Standard,
        }
    }

    pub fn fpa_consonant() -> Self {
        Mechanism::Fpa {
            allocation: Allocation::Consonant,
        }
    }

    pub fn eip1559(base_fee: i64, allocation: Allocation) -> Self {
        Mechanism::Eip1559 {
            base_fee: Money(base_fee),
            eligibility: Eligibility::Free,
            allocation,
        }
    }

    pub fn tipless(base_fee: i64, allocation: Allocation) -> Self {
        Mechanism::Tipless {
            base_fee: Money(base_fee),
            eligibility: Eligibility::Free,
            allocation,
        }
    }

    pub fn base_fee(&self) -> Option<Money> {
        match self {
            Mechanism::Eip1559 { base_fee, .. } | Mechanism::Tipless { base_fee, .. } => {
                Some(*base_fee)
            }
            _ => None,
        }
    }

    pub fn allocation(&self) -> Allocation {
        match self {
            Mechanism::Fpa { allocation }
            | Mechanism::Eip1559 { allocation, .. }
            | Mechanism::Tipless { allocation, .. } => *allocation,
            Mechanism::Trivial => Allocation::Consonant,
        }
    }

    pub fn eligibility(&self) -> Eligibility {
        match self {
            Mechanism::Eip1559 { eligibility, .. } | Mechanism::Tipless { eligibility, .. } => {
                *eligibility
            }
            _ => Eligibility::Free,
        }
    }

    /// The same preset with a consonant allocation rule.
    pub fn consonant(self) -> Self {
        match self {
            Mechanism::Fpa { .. } => Mechanism::fpa_consonant(),
            Mechanism::Eip1559 {
                base_fee,
                eligibility,
                ..
            } => Mechanism::Eip1559 {
                base_fee,
                eligibility,
                allocation: Allocation::Consonant,
            },
            Mechanism::Tipless {
                base_fee,
                eligibility,
                ..
            } => Mechanism::Tipless {
                base_fee,
                eligibility,
                allocation: Allocation::Consonant,
            },
            Mechanism::Trivial => Mechanism::Trivial,
        }
    }

    /// Per-transaction payment and burn of an included transaction.
    fn terms(&self, tx: &Transaction, bid: Money) -> (Money, Money) {
        match self {
            Mechanism::Fpa { .. } => (bid, Money::ZERO),
            Mechanism::Eip1559 { base_fee, .. } => (bid, base_fee.per_unit(tx.size)),
            Mechanism::Tipless { base_fee, .. } => {
                let reserve = base_fee.per_unit(tx.size);
                (bid.min(reserve), reserve)
            }
            Mechanism::Trivial => (Money::ZERO, Money::ZERO),
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alloc = |a: &Allocation| match a {
            Allocation::Standard => "standard",
            Allocation::Consonant => "consonant",
        };
        let elig = |e: &Eligibility| match e {
            Eligibility::Free => "free",
            Eligibility::BaseFeeGated => "gated",
        };
        match self {
            Mechanism::Fpa { allocation } => write!(f, "fpa/{}", alloc(allocation)),
            Mechanism::Eip1559 {
                base_fee,
                eligibility,
                allocation,
            } => write!(
                f,
                "eip1559(r={base_fee})/{}/{}",
                elig(eligibility),
                alloc(allocation)
            ),
            Mechanism::Tipless {
                base_fee,
                eligibility,
                allocation,
            } => write!(
                f,
                "tipless(r={base_fee})/{}/{}",
                elig(eligibility),
                alloc(allocation)
            ),
            Mechanism::Trivial => write!(f, "trivial"),
        }
    }
}

impl Tfm for Mechanism {
    fn name(&self) -> String {
        self.to_string()
    }

    fn payment_of(
        &self,
        tx: &Transaction,
        block: &Block,
        bids: &BidVector,
        _scenario: &Scenario,
    ) -> Money {
        if !block.contains(tx.id) {
            return Money::ZERO;
        }
        self.terms(tx, bids.get(tx.id)).0
    }

    fn burn(&self, block: &Block, bids: &BidVector, scenario: &Scenario) -> Money {
        block
            .ids()
            .iter()
            .filter_map(|id| scenario.tx(*id).ok())
            .map(|t| self.terms(t, bids.get(t.id)).1)
            .sum()
    }

    fn eligible(&self, tx: &Transaction, bid: Money) -> bool {
        eligible(self, tx, bid)
    }

    fn tie_order(&self) -> TieOrder {
        match self {
            Mechanism::Eip1559 {
                allocation: Allocation::Standard,
                ..
            }
            | Mechanism::Tipless {
                allocation: Allocation::Standard,
                ..
            } => TieOrder::LargestSizeFirst,
            _ => TieOrder::Canonical,
        }
    }

    fn separable_terms(&self, tx: &Transaction, bid: Money) -> Option<(Money, Money)> {
        Some(self.terms(tx, bid))
    }

    fn recommend(
        &self,
        bids: &BidVector,
        scenario: &Scenario,
        universe: &Universe,
    ) -> Result<usize> {
        match (self, self.allocation()) {
            (Mechanism::Trivial, _) | (_, Allocation::Consonant) => {
                solver::argmax_index(self, bids, scenario, universe, TieOrder::Canonical)
            }
            (Mechanism::Fpa { .. }, Allocation::Standard) => revenue_max(bids, scenario, universe),
            (Mechanism::Eip1559 { base_fee, .. }, Allocation::Standard) => {
                include_all_clearing(*base_fee, bids, scenario, universe)
            }
            (Mechanism::Tipless { base_fee, .. }, Allocation::Standard) => {
                largest_clearing(*base_fee, bids, scenario, universe)
            }
        }
    }
}

fn clears_reserve(base_fee: Money, tx: &Transaction, bid: Money) -> bool {
    bid >= base_fee.per_unit(tx.size)
}

fn revenue_max(bids: &BidVector, scenario: &Scenario, universe: &Universe) -> Result<usize> {
    let by_pos = bids.by_position(scenario);
    let mut best: Option<(usize, Money)> = None;
    for &i in universe.order(TieOrder::Canonical) {
        let revenue = mask_sum(universe.mask(i), &by_pos);
        if best.is_none_or(|(_, v)| revenue > v) {
            best = Some((i, revenue));
        }
    }
    best.map(|(i, _)| i).ok_or(TfmError::EmptyBlockset)
}

fn clearing_mask(base_fee: Money, bids: &BidVector, scenario: &Scenario) -> u64 {
    let candidates = match &scenario.blockset {
        Blockset::Knapsack { candidates, .. } => candidates.as_ref(),
        Blockset::Explicit(_) => None,
    };
    let mut mask = 0u64;
    for (pos, t) in scenario.transactions().iter().enumerate() {
        let available = candidates.is_none_or(|c| c.contains(&t.id));
        if available && clears_reserve(base_fee, t, bids.get(t.id)) {
            mask |= 1 << pos;
        }
    }
    mask
}

fn include_all_clearing(
    base_fee: Money,
    bids: &BidVector,
    scenario: &Scenario,
    universe: &Universe,
) -> Result<usize> {
    let target = clearing_mask(base_fee, bids, scenario);
    if let Some(&i) = universe
        .order(TieOrder::Canonical)
        .iter()
        .find(|&&i| universe.mask(i) == target)
    {
        return Ok(i);
    }
    if is_base_fee_excessively_low(base_fee, scenario, bids)? {
        Err(TfmError::ExcessivelyLowBaseFee {
            base_fee: base_fee.micros(),
        })
    } else {
        Err(TfmError::Unsupported(
            "standard EIP-1559 rule undefined: no feasible block consists of exactly the \
             reserve-clearing transactions"
                .into(),
        ))
    }
}

fn largest_clearing(
    base_fee: Money,
    bids: &BidVector,
    scenario: &Scenario,
    universe: &Universe,
) -> Result<usize> {
    let allowed = clearing_mask(base_fee, bids, scenario);
    universe
        .order(TieOrder::LargestSizeFirst)
        .iter()
        .copied()
        .find(|&i| universe.mask(i) & !allowed == 0)
        .ok_or(TfmError::EmptyBlockset)
}

pub(crate) fn mask_sum(mut mask: u64, values: &[Money]) -> Money {
    let mut total = Money::ZERO;
    while mask != 0 {
        let k = mask.trailing_zeros() as usize;
        total += values[k];
        mask &= mask - 1;
    }
    total
}

/// Payments of the block's transactions (excluded transactions pay 0 and are
/// not listed).
pub fn payment(
    mech: &dyn Tfm,
    block: &Block,
    bids: &BidVector,
    scenario: &Scenario,
) -> Result<BTreeMap<TxId, Money>> {
    block
        .ids()
        .iter()
        .map(|id| {
            let t = scenario.tx(*id)?;
            Ok((*id, mech.payment_of(t, block, bids, scenario)))
        })
        .collect()
}

/// Burn of the block.
pub fn burn(mech: &dyn Tfm, block: &Block, bids: &BidVector, scenario: &Scenario) -> Result<Money> {
    scenario.validate_block(block)?;
    Ok(mech.burn(block, bids, scenario))
}

/// The block the allocation rule recommends.
pub fn recommended_block(mech: &dyn Tfm, bids: &BidVector, scenario: &Scenario) -> Result<Block> {
    let universe = Universe::new(scenario, DEFAULT_BUDGET)?;
    let i = mech.recommend(bids, scenario, &universe)?;
    Ok(universe.block(i).clone())
}

/// Inclusion eligibility: always under `Free`, `b_t >= r * s_t` when gated.
pub fn eligible(mech: &Mechanism, tx: &Transaction, bid: Money) -> bool {
    match (mech.eligibility(), mech.base_fee()) {
        (Eligibility::BaseFeeGated, Some(r)) => clears_reserve(r, tx, bid),
        _ => true,
    }
}

/// Whether the reserve-clearing transactions fail to fit in a single
/// feasible block.
pub fn is_base_fee_excessively_low(
    base_fee: Money,
    scenario: &Scenario,
    bids: &BidVector,
) -> Result<bool> {
    let clearing: Vec<&Transaction> = scenario
        .transactions()
        .iter()
        .filter(|t| clears_reserve(base_fee, t, bids.get(t.id)))
        .collect();
    match &scenario.blockset {
        Blockset::Knapsack {
            max_total_size,
            candidates,
            ..
        } => {
            let total: u64 = clearing
                .iter()
                .filter(|t| candidates.as_ref().is_none_or(|c| c.contains(&t.id)))
                .map(|t| t.size)
                .sum();
            Ok(total > *max_total_size)
        }
        Blockset::Explicit(blocks) => Ok(!blocks
            .iter()
            .any(|b| clearing.iter().all(|t| b.contains(t.id)))),
    }
}

/// A map from valuation to recommended bid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BiddingStrategy {
    Truthful,
    /// `min(v_t, r * s_t)`.
    CappedAtReserve(Money),
    /// `max(0, v_t + offset)`.
    FixedOffset(Money),
}

impl BiddingStrategy {
    pub fn bid(&self, valuation: Money, size: u64) -> Money {
        match self {
            BiddingStrategy::Truthful => valuation,
            BiddingStrategy::CappedAtReserve(r) => valuation.min(r.per_unit(size)),
            BiddingStrategy::FixedOffset(d) => (valuation + *d).max(Money::ZERO),
        }
    }

    /// The strategy a preset recommends: capped at the reserve for EIP-1559
    /// and tipless, truthful otherwise.
    pub fn recommended_for(mech: &Mechanism) -> Self {
        match mech.base_fee() {
            Some(r) => BiddingStrategy::CappedAtReserve(r),
            None => BiddingStrategy::Truthful,
        }
    }
}

impl fmt::Display for BiddingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiddingStrategy::Truthful => write!(f, "truthful"),
            BiddingStrategy::CappedAtReserve(r) => write!(f, "capped:{r}"),
            BiddingStrategy::FixedOffset(d) => write!(f, "offset:{d}"),
        }
    }
}

impl std::str::FromStr for BiddingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |v: &str| {
            v.parse::<i64>()
                .map(Money)
                .map_err(|e| format!("invalid strategy parameter {v:?}: {e}"))
        };
        match s.split_once(':') {
            None if s == "truthful" => Ok(BiddingStrategy::Truthful),
            Some(("capped", v)) => Ok(BiddingStrategy::CappedAtReserve(parse(v)?)),
            Some(("offset", v)) => Ok(BiddingStrategy::FixedOffset(parse(v)?)),
            _ => Err(format!(
                "unknown strategy {s:?} (expected truthful, capped:R or offset:D)"
            )),
        }
    }
}

/// Componentwise `sigma(v_t)`.
pub fn apply_strategy(
    strategy: BiddingStrategy,
    valuations: &BidVector,
    scenario: &Scenario,
) -> Result<BidVector> {
    valuations
        .iter()
        .map(|(id, v)| Ok((id, strategy.bid(v, scenario.tx(id)?.size))))
        .collect::<Result<Vec<_>>>()
        .map(BidVector::from_pairs)
}

/// A mechanism behind a bidding strategy: it accepts valuations as bids and
/// feeds `sigma` of them to the inner mechanism, so truthful bidding in the
/// wrapper corresponds to following `sigma` in the inner one.
#[derive(Debug, Clone)]
pub struct StrategyWrapped<M> {
    pub inner: M,
    pub strategy: BiddingStrategy,
}

impl<M: Tfm> StrategyWrapped<M> {
    pub fn new(inner: M, strategy: BiddingStrategy) -> Self {
        StrategyWrapped { inner, strategy }
    }

    fn translate(&self, bids: &BidVector, scenario: &Scenario) -> BidVector {
        BidVector::from_pairs(bids.iter().map(|(id, b)| {
            let size = scenario.tx(id).map(|t| t.size).unwrap_or(1);
            (id, self.strategy.bid(b, size))
        }))
    }
}

impl<M: Tfm> Tfm for StrategyWrapped<M> {
    fn name(&self) -> String {
        format!("{}+{}", self.inner.name(), self.strategy)
    }

    fn payment_of(
        &self,
        tx: &Transaction,
        block: &Block,
        bids: &BidVector,
        scenario: &Scenario,
    ) -> Money {
        self.inner
            .payment_of(tx, block, &self.translate(bids, scenario), scenario)
    }

    fn burn(&self, block: &Block, bids: &BidVector, scenario: &Scenario) -> Money {
        self.inner
            .burn(block, &self.translate(bids, scenario), scenario)
    }

    fn eligible(&self, tx: &Transaction, bid: Money) -> bool {
        self.inner.eligible(tx, self.strategy.bid(bid, tx.size))
    }

    fn tie_order(&self) -> TieOrder {
        self.inner.tie_order()
    }

    fn separable_terms(&self, tx: &Transaction, bid: Money) -> Option<(Money, Money)> {
        self.inner
            .separable_terms(tx, self.strategy.bid(bid, tx.size))
    }

    fn recommend(
        &self,
        bids: &BidVector,
        scenario: &Scenario,
        universe: &Universe,
    ) -> Result<usize> {
        self.inner
            .recommend(&self.translate(bids, scenario), scenario, universe)
    }
}
