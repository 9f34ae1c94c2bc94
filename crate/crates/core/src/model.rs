//! Domain types shared by every module, plus welfare, user utility and
//! block producer surplus.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfmError};
use crate::mechanisms::{BidVector, Tfm};
use crate::money::Money;

/// Transaction identifier, unique within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub u32);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A pending transaction: public size, private user valuation, submitted bid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub id: TxId,
    pub size: u64,
    pub valuation: Money,
    pub bid: Money,
}

impl Transaction {
    pub fn new(id: u32, size: u64, valuation: i64, bid: i64) -> Self {
        Transaction {
            id: TxId(id),
            size,
            valuation: Money(valuation),
            bid: Money(bid),
        }
    }
}

/// A finite ordered list of transaction ids.
///
/// `Ord` is the canonical block order used for every tie-break: shorter
/// blocks first, then lexicographic on the id sequence. The empty block is
/// the minimum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Block(pub Vec<TxId>);

impl Block {
    pub fn empty() -> Self {
        Block(Vec::new())
    }

    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        Block(ids.into_iter().map(TxId).collect())
    }

    pub fn ids(&self) -> &[TxId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: TxId) -> bool {
        self.0.contains(&id)
    }

    /// `self` with `id` removed, relative order of the rest preserved.
    pub fn without(&self, id: TxId) -> Block {
        Block(self.0.iter().copied().filter(|t| *t != id).collect())
    }

    pub fn id_set(&self) -> BTreeSet<TxId> {
        self.0.iter().copied().collect()
    }

    pub fn is_superset_of(&self, other: &Block) -> bool {
        other.0.iter().all(|t| self.contains(*t))
    }

    fn has_duplicates(&self) -> bool {
        let set: BTreeSet<_> = self.0.iter().collect();
        set.len() != self.0.len()
    }
}

impl Ord for Block {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Block {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

/// The feasible blocks available to the block producer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Blockset {
    Explicit(Vec<Block>),
    /// Every block of candidate transactions whose total size fits.
    /// `candidates = None` means all scenario transactions.
    Knapsack {
        max_total_size: u64,
        candidates: Option<BTreeSet<TxId>>,
        enumerate_permutations: bool,
    },
}

impl Blockset {
    pub fn knapsack(max_total_size: u64) -> Self {
        Blockset::Knapsack {
            max_total_size,
            candidates: None,
            enumerate_permutations: false,
        }
    }
}

/// The block producer's private valuation over blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BpValuation {
    Passive(Money),
    /// Per-transaction constants; unlisted ids are worth 0.
    Additive(BTreeMap<TxId, Money>),
    SingleMinded {
        targets: Vec<Block>,
        value: Money,
    },
    /// Explicit block values; unlisted blocks are worth 0.
    Table(Vec<(Block, Money)>),
}

impl BpValuation {
    pub fn additive<I: IntoIterator<Item = (u32, i64)>>(values: I) -> Self {
        BpValuation::Additive(
            values
                .into_iter()
                .map(|(id, v)| (TxId(id), Money(v)))
                .collect(),
        )
    }

    /// Value of the block; total over every block.
    pub fn value(&self, block: &Block) -> Money {
        match self {
            BpValuation::Passive(c) => *c,
            BpValuation::Additive(mu) => block
                .ids()
                .iter()
                .map(|t| mu.get(t).copied().unwrap_or(Money::ZERO))
                .sum(),
            BpValuation::SingleMinded { targets, value } => {
                if targets.iter().any(|b| b == block) {
                    *value
                } else {
                    Money::ZERO
                }
            }
            BpValuation::Table(entries) => entries
                .iter()
                .find(|(b, _)| b == block)
                .map(|(_, v)| *v)
                .unwrap_or(Money::ZERO),
        }
    }

    pub fn is_passive(&self) -> bool {
        matches!(self, BpValuation::Passive(_))
    }
}

/// `v_BP(B)` for the given valuation.
pub fn bp_value(block: &Block, valuation: &BpValuation) -> Money {
    valuation.value(block)
}

/// A complete world: transactions, the BP's valuation and blockset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    transactions: Vec<Transaction>,
    pub bp_valuation: BpValuation,
    pub blockset: Blockset,
    pub rng_seed: Option<u64>,
}

impl Scenario {
    /// Validates and builds a scenario. Transactions are stored sorted by id.
    pub fn new(
        mut transactions: Vec<Transaction>,
        bp_valuation: BpValuation,
        blockset: Blockset,
    ) -> Result<Self> {
        transactions.sort_by_key(|t| t.id);
        for pair in transactions.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TfmError::InvalidScenario(format!(
                    "duplicate transaction id {}",
                    pair[0].id
                )));
            }
        }
        for t in &transactions {
            if t.size == 0 {
                return Err(TfmError::InvalidScenario(format!(
                    "transaction {} has size 0",
                    t.id
                )));
            }
            if t.valuation.is_negative() || t.bid.is_negative() {
                return Err(TfmError::InvalidScenario(format!(
                    "transaction {} has a negative valuation or bid",
                    t.id
                )));
            }
        }
        let scenario = Scenario {
            transactions,
            bp_valuation,
            blockset,
            rng_seed: None,
        };
        scenario.validate_references()?;
        Ok(scenario)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.rng_seed = seed;
        self
    }

    fn validate_references(&self) -> Result<()> {
        let check_block = |b: &Block| -> Result<()> {
            if b.has_duplicates() {
                return Err(TfmError::InvalidScenario(format!(
                    "block {b} contains a duplicate id"
                )));
            }
            for id in b.ids() {
                self.tx(*id)?;
            }
            Ok(())
        };
        match &self.blockset {
            Blockset::Explicit(blocks) => {
                if blocks.is_empty() {
                    return Err(TfmError::EmptyBlockset);
                }
                blocks.iter().try_for_each(check_block)?;
            }
            Blockset::Knapsack { candidates, .. } => {
                if let Some(c) = candidates {
                    for id in c {
                        self.tx(*id)?;
                    }
                }
            }
        }
        match &self.bp_valuation {
            BpValuation::Passive(c) if c.is_negative() => {
                return Err(TfmError::InvalidScenario(
                    "passive BP constant must be non-negative".into(),
                ))
            }
            BpValuation::Additive(mu) => {
                for id in mu.keys() {
                    self.tx(*id)?;
                }
            }
            BpValuation::SingleMinded { targets, value } => {
                if value.is_negative() {
                    return Err(TfmError::InvalidScenario(
                        "single-minded value must be non-negative".into(),
                    ));
                }
                targets.iter().try_for_each(check_block)?;
            }
            BpValuation::Table(entries) => {
                entries.iter().try_for_each(|(b, _)| check_block(b))?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn tx(&self, id: TxId) -> Result<&Transaction> {
        self.position(id).map(|i| &self.transactions[i])
    }

    /// Index of the transaction in id order.
    pub fn position(&self, id: TxId) -> Result<usize> {
        self.transactions
            .binary_search_by_key(&id, |t| t.id)
            .map_err(|_| TfmError::UnknownTx(id))
    }

    pub fn validate_block(&self, block: &Block) -> Result<()> {
        for id in block.ids() {
            self.tx(*id)?;
        }
        if block.has_duplicates() {
            return Err(TfmError::InvalidScenario(format!(
                "block {block} contains a duplicate id"
            )));
        }
        Ok(())
    }

    /// Bids carried on the transactions themselves.
    pub fn bids(&self) -> BidVector {
        BidVector::from_pairs(self.transactions.iter().map(|t| (t.id, t.bid)))
    }

    /// Private user valuations as a bid-shaped vector.
    pub fn valuations(&self) -> BidVector {
        BidVector::from_pairs(self.transactions.iter().map(|t| (t.id, t.valuation)))
    }

    /// Copy with the given bids written onto the transactions.
    pub fn with_bids(&self, bids: &BidVector) -> Scenario {
        let mut s = self.clone();
        for t in &mut s.transactions {
            t.bid = bids.get(t.id);
        }
        s
    }

    /// Copy with one transaction's valuation replaced.
    pub fn with_valuation(&self, id: TxId, valuation: Money) -> Result<Scenario> {
        let mut s = self.clone();
        let i = s.position(id)?;
        s.transactions[i].valuation = valuation;
        Ok(s)
    }

    pub fn with_bp_valuation(&self, bp_valuation: BpValuation) -> Scenario {
        let mut s = self.clone();
        s.bp_valuation = bp_valuation;
        s
    }
}

/// `W(B) = v_BP(B) + sum of user valuations in B`.
pub fn welfare(block: &Block, scenario: &Scenario) -> Result<Money> {
    let users: Money = block
        .ids()
        .iter()
        .map(|id| scenario.tx(*id).map(|t| t.valuation))
        .sum::<Result<Money>>()?;
    Ok(scenario.bp_valuation.value(block) + users)
}

/// Quasi-linear user utility: `v_t - payment` if included, else 0.
pub fn user_utility(
    id: TxId,
    included: bool,
    payment: Money,
    scenario: &Scenario,
) -> Result<Money> {
    let t = scenario.tx(id)?;
    Ok(if included {
        t.valuation - payment
    } else {
        Money::ZERO
    })
}

/// Block producer surplus: `v_BP(B) + sum of payments - burn`.
pub fn bps(block: &Block, bids: &BidVector, scenario: &Scenario, mech: &dyn Tfm) -> Result<Money> {
    scenario.validate_block(block)?;
    let mut total = scenario.bp_valuation.value(block) - mech.burn(block, bids, scenario);
    for id in block.ids() {
        total += mech.payment_of(scenario.tx(*id)?, block, bids, scenario);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{Allocation, Eligibility, Mechanism};

    fn two_tx(valuation: BpValuation) -> Scenario {
        Scenario::new(
            vec![Transaction::new(1, 1, 3, 3), Transaction::new(2, 1, 5, 5)],
            valuation,
            Blockset::knapsack(2),
        )
        .unwrap()
    }

    #[test]
    fn welfare_examples() {
        let s = two_tx(BpValuation::Passive(Money(4)));
        assert_eq!(welfare(&Block::empty(), &s).unwrap(), Money(4));

        let s = Scenario::new(
            vec![Transaction::new(9, 1, 7, 0)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        )
        .unwrap();
        assert_eq!(welfare(&Block::from_ids([9]), &s).unwrap(), Money(7));

        let s = two_tx(BpValuation::additive([(1, 2), (2, 0)]));
        assert_eq!(welfare(&Block::from_ids([1, 2]), &s).unwrap(), Money(10));
    }

    #[test]
    fn welfare_rejects_unknown_ids() {
        let s = two_tx(BpValuation::Passive(Money(0)));
        assert_eq!(
            welfare(&Block::from_ids([3]), &s),
            Err(TfmError::UnknownTx(TxId(3)))
        );
    }

    #[test]
    fn bp_value_examples() {
        assert_eq!(
            bp_value(&Block::empty(), &BpValuation::additive([(1, 4)])),
            Money(0)
        );
        let sm = BpValuation::SingleMinded {
            targets: vec![Block::from_ids([1, 2])],
            value: Money(9),
        };
        assert_eq!(bp_value(&Block::from_ids([1]), &sm), Money(0));
        assert_eq!(bp_value(&Block::from_ids([1, 2]), &sm), Money(9));
        assert_eq!(
            bp_value(
                &Block::from_ids([1, 3]),
                &BpValuation::additive([(1, 4), (3, 6)])
            ),
            Money(10)
        );
        let table = BpValuation::Table(vec![(Block::from_ids([2]), Money(5))]);
        assert_eq!(bp_value(&Block::from_ids([2]), &table), Money(5));
        assert_eq!(bp_value(&Block::from_ids([1]), &table), Money(0));
    }

    #[test]
    fn user_utility_examples() {
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 10, 10)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        )
        .unwrap();
        assert_eq!(
            user_utility(TxId(1), false, Money(0), &s).unwrap(),
            Money(0)
        );
        assert_eq!(
            user_utility(TxId(1), true, Money(10), &s).unwrap(),
            Money(0)
        );
        assert_eq!(user_utility(TxId(1), true, Money(4), &s).unwrap(), Money(6));
    }

    #[test]
    fn bps_examples() {
        let eip = Mechanism::Eip1559 {
            base_fee: Money(2),
            eligibility: Eligibility::Free,
            allocation: Allocation::Consonant,
        };
        let passive = Scenario::new(
            vec![Transaction::new(1, 1, 5, 5)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        )
        .unwrap();
        assert_eq!(
            bps(
                &Block::empty(),
                &passive.bids(),
                &passive,
                &Mechanism::fpa()
            )
            .unwrap(),
            Money(0)
        );
        assert_eq!(
            bps(&Block::from_ids([1]), &passive.bids(), &passive, &eip).unwrap(),
            Money(3)
        );

        let active = Scenario::new(
            vec![Transaction::new(1, 1, 1, 1)],
            BpValuation::additive([(1, 4)]),
            Blockset::knapsack(1),
        )
        .unwrap();
        assert_eq!(
            bps(&Block::from_ids([1]), &active.bids(), &active, &eip).unwrap(),
            Money(3)
        );
    }

    #[test]
    fn canonical_order_puts_empty_first() {
        let mut blocks = vec![
            Block::from_ids([2]),
            Block::from_ids([1, 2]),
            Block::empty(),
            Block::from_ids([1]),
            Block::from_ids([2, 1]),
        ];
        blocks.sort();
        assert_eq!(
            blocks,
            vec![
                Block::empty(),
                Block::from_ids([1]),
                Block::from_ids([2]),
                Block::from_ids([1, 2]),
                Block::from_ids([2, 1]),
            ]
        );
    }

    #[test]
    fn scenario_validation() {
        let dup = Scenario::new(
            vec![Transaction::new(1, 1, 1, 1), Transaction::new(1, 2, 1, 1)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        );
        assert!(matches!(dup, Err(TfmError::InvalidScenario(_))));
        let zero_size = Scenario::new(
            vec![Transaction::new(1, 0, 1, 1)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        );
        assert!(zero_size.is_err());
        let unknown = Scenario::new(
            vec![Transaction::new(1, 1, 1, 1)],
            BpValuation::Passive(Money(0)),
            Blockset::Explicit(vec![Block::from_ids([2])]),
        );
        assert_eq!(unknown, Err(TfmError::UnknownTx(TxId(2))));
        let empty = Scenario::new(
            vec![],
            BpValuation::Passive(Money(0)),
            Blockset::Explicit(vec![]),
        );
        assert_eq!(empty, Err(TfmError::EmptyBlockset));
    }
}
