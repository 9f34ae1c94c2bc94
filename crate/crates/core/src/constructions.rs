//! Constructions that manufacture adversarial scenarios.
//!
//! * [`construct_thm1`] turns any positively charged transaction of a
//!   BPIC mechanism into a DSIC violation by bumping the BP's value for the
//!   recommended block until the charged user can bid 0 and still get in.
//! * [`construct_thm3`] builds a three-block instance on which a DSIC and
//!   BPIC mechanism with zero payments recovers at most a `rho` fraction of
//!   the optimal welfare.
//! * [`eip1559_underbid_demo`] shows two worlds, identical for the user,
//!   where the optimal EIP-1559 bid differs.
//!
//! Every result carries scenarios that serialize to the scenario file format
//! and replay through the auditors.

use crate::audit::audit_welfare_ratio;
use crate::blockset::{TieOrder, Universe, DEFAULT_BUDGET};
use crate::error::{Result, TfmError};
use crate::mechanisms::{Allocation, BidVector, BiddingStrategy, Mechanism, Tfm};
use crate::model::{welfare, Block, Blockset, BpValuation, Scenario, Transaction, TxId};
use crate::money::{Money, Rational};
use crate::solver::{argmax_index, bps_values};

/// A DSIC violation derived from a positively charged transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thm1Witness {
    pub scenario: Scenario,
    pub bids: BidVector,
    /// Recommended block under the original bids.
    pub block: Block,
    pub charged_tx: TxId,
    pub charged_payment: Money,
    /// Sum of all original bids.
    pub total_bids: Money,
    /// Burn of `block` under the modified bids.
    pub burn: Money,
    pub modified_valuation: BpValuation,
    /// The original bids with the charged transaction's bid set to 0.
    pub modified_bids: BidVector,
    /// Recommended block under the modified valuation and bids.
    pub deviation_block: Block,
    pub deviation_payment: Money,
    /// Utility gain of bidding 0 instead of the truthful bid.
    pub deviation_gain: Money,
}

impl Thm1Witness {
    /// Modified world with truthful bids: every valuation equals its bid, so
    /// an audit at the scenario's own bids replays the violation.
    pub fn truthful_scenario(&self) -> Scenario {
        let s = self
            .scenario
            .with_bp_valuation(self.modified_valuation.clone());
        let mut s = s.with_bids(&self.bids);
        for (id, b) in self.bids.iter() {
            s = s
                .with_valuation(id, b)
                .expect("bids only name scenario transactions");
        }
        s
    }

    /// The same world after the charged user deviates to bid 0.
    pub fn deviation_scenario(&self) -> Scenario {
        self.truthful_scenario().with_bids(&self.modified_bids)
    }

    /// Human-readable chain of facts the witness certifies.
    pub fn narrative(&self) -> String {
        let t = self.charged_tx;
        format!(
            "recommended block B = {b} charges tx {t} p = {p} > 0\n\
             P = sum of bids = {pp}, Q = burn of B under b' = {q}\n\
             modified BP valuation: {v}\n\
             under b' (tx {t} bids 0) every BPS-maximizing block contains B; recommended {d}\n\
             tx {t} is included at price {dp}, so bidding 0 beats its truthful bid by {g}\n",
            b = self.block,
            p = self.charged_payment,
            pp = self.total_bids,
            q = self.burn,
            v = describe_valuation(&self.modified_valuation),
            d = self.deviation_block,
            dp = self.deviation_payment,
            g = self.deviation_gain,
        )
    }
}

fn describe_valuation(v: &BpValuation) -> String {
    match v {
        BpValuation::Passive(c) => format!("passive {c}"),
        BpValuation::Additive(mu) => {
            let parts: Vec<String> = mu.iter().map(|(id, m)| format!("{id}->{m}")).collect();
            format!("additive {{{}}}", parts.join(", "))
        }
        BpValuation::SingleMinded { targets, value } => {
            let t: Vec<String> = targets.iter().map(|b| b.to_string()).collect();
            format!("single-minded {} -> {value}", t.join(" "))
        }
        BpValuation::Table(entries) => {
            let parts: Vec<String> = entries.iter().map(|(b, m)| format!("{b}->{m}")).collect();
            format!("table {{{}}}", parts.join(", "))
        }
    }
}

#[derive(Clone, Copy)]
enum Bump {
    Additive,
    SingleMinded,
}

/// Additive construction: `v^({t}) = v({t}) + P + Q + 1` for `t` in the
/// recommended block, 0 elsewhere.
///
/// The original BP valuation must be passive or additive with non-negative
/// values; the fixed-point step (the recommendation under the modified
/// valuation and the original bids is still the original block) relies on it.
pub fn construct_thm1(
    mech: &dyn Tfm,
    scenario: &Scenario,
    bids: &BidVector,
) -> Result<Thm1Witness> {
    match &scenario.bp_valuation {
        BpValuation::Passive(_) => {}
        BpValuation::Additive(mu) if mu.values().all(|m| !m.is_negative()) => {}
        _ => {
            return Err(TfmError::Unsupported(
                "additive construction needs a passive or non-negative additive BP valuation"
                    .into(),
            ))
        }
    }
    construct(mech, scenario, bids, Bump::Additive)
}

/// Single-minded construction: the BP values only the recommended block `B`,
/// at `spread + P + max(Q, q(B, b)) + 1`, which makes `B` the unique
/// BPS-maximizer under both the original and the modified bids. No
/// tie-breaking is involved.
pub fn construct_thm1_single_minded(
    mech: &dyn Tfm,
    scenario: &Scenario,
    bids: &BidVector,
) -> Result<Thm1Witness> {
    construct(mech, scenario, bids, Bump::SingleMinded)
}

fn construct(
    mech: &dyn Tfm,
    scenario: &Scenario,
    bids: &BidVector,
    bump: Bump,
) -> Result<Thm1Witness> {
    let universe = Universe::new(scenario, DEFAULT_BUDGET)?;
    let block = universe
        .block(mech.recommend(bids, scenario, &universe)?)
        .clone();
    let (charged_tx, charged_payment) = block
        .ids()
        .iter()
        .map(|id| {
            let t = scenario.tx(*id)?;
            Ok((*id, mech.payment_of(t, &block, bids, scenario)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .find(|(_, p)| *p > Money::ZERO)
        .ok_or(TfmError::AlreadyTrivial)?;

    let total_bids = bids.total();
    let modified_bids = bids.with(charged_tx, Money::ZERO);
    let burn = mech.burn(&block, &modified_bids, scenario);
    let modified_valuation = match bump {
        Bump::Additive => BpValuation::Additive(
            block
                .ids()
                .iter()
                .map(|id| {
                    let single = scenario.bp_valuation.value(&Block(vec![*id]));
                    (*id, single + total_bids + burn + Money(1))
                })
                .collect(),
        ),
        Bump::SingleMinded => {
            let values = (0..universe.len()).map(|i| universe.bp_value(i));
            let spread =
                values.clone().max().unwrap_or_default() - values.min().unwrap_or_default();
            let q = burn.max(mech.burn(&block, bids, scenario));
            BpValuation::SingleMinded {
                targets: vec![block.clone()],
                value: spread + total_bids + q + Money(1),
            }
        }
    };
    let modified = scenario.with_bp_valuation(modified_valuation.clone());
    let modified_universe = universe.revalued(&modified_valuation);
    let failed = |msg: String| TfmError::ConstructionFailed(msg);

    // Every BPS-maximizer under the modified bids contains the whole block.
    let values = bps_values(mech, &modified_bids, &modified, &modified_universe);
    let best = values.iter().flatten().max().copied();
    for (i, v) in values.iter().enumerate() {
        if v.is_some() && *v == best && !modified_universe.block(i).is_superset_of(&block) {
            return Err(failed(format!(
                "maximizer {} under the modified bids omits part of {block}",
                modified_universe.block(i)
            )));
        }
    }

    let deviation_block = modified_universe
        .block(mech.recommend(&modified_bids, &modified, &modified_universe)?)
        .clone();
    if !deviation_block.contains(charged_tx) {
        return Err(failed(format!(
            "tx {charged_tx} is excluded at bid 0: recommended {deviation_block}"
        )));
    }
    let deviation_payment = mech.payment_of(
        modified.tx(charged_tx)?,
        &deviation_block,
        &modified_bids,
        &modified,
    );
    if deviation_payment != Money::ZERO {
        return Err(failed(format!(
            "tx {charged_tx} pays {deviation_payment} with bid 0"
        )));
    }

    let fixed_point = modified_universe
        .block(mech.recommend(bids, &modified, &modified_universe)?)
        .clone();
    if fixed_point != block {
        return Err(failed(format!(
            "recommendation under the modified valuation is {fixed_point}, not {block}"
        )));
    }
    let truthful_payment = mech.payment_of(modified.tx(charged_tx)?, &block, bids, &modified);
    let truthful_value = bids.get(charged_tx);
    let deviation_gain = truthful_value - deviation_payment - (truthful_value - truthful_payment);

    Ok(Thm1Witness {
        scenario: scenario.clone(),
        bids: bids.clone(),
        block,
        charged_tx,
        charged_payment,
        total_bids,
        burn,
        modified_valuation,
        modified_bids,
        deviation_block,
        deviation_payment,
        deviation_gain,
    })
}

/// Three-block instance on which a zero-payment DSIC and BPIC mechanism
/// realizes at most a `rho` fraction of the optimal welfare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thm3Scenario {
    pub scenario: Scenario,
    pub rho: Rational,
    pub value_y: Money,
    pub value_z: Money,
    pub epsilon: Money,
    /// Burn of `{z}` under truthful bids.
    pub burn_z: Money,
    pub recommended: Block,
    pub recommended_welfare: Money,
    pub optimal_welfare: Money,
    pub ratio: Rational,
    /// Every `v_y` probed; all recommended `{z}`.
    pub probes: Vec<Money>,
}

impl Thm3Scenario {
    pub fn narrative(&self) -> String {
        format!(
            "blocks {{}}, {{y}}, {{z}} with y = 1, z = 2\n\
             v_z = {vz}, epsilon = {e}, q({{z}}) = {q}, v_BP({{z}}) = q + epsilon = {bz}\n\
             v_y = {vy} >= (v_z + q + epsilon) / rho with rho = {rho}\n\
             recommended {rec}: W = {w} while W({{y}}) = {wy}\n\
             ratio {ratio} <= {rho}\n",
            vz = self.value_z,
            e = self.epsilon,
            q = self.burn_z,
            bz = self.burn_z + self.epsilon,
            vy = self.value_y,
            rho = self.rho,
            rec = self.recommended,
            w = self.recommended_welfare,
            wy = self.optimal_welfare,
            ratio = self.ratio,
        )
    }
}

const THM3_PROBES: u32 = 4;

fn three_block_instance(
    mech: &dyn Tfm,
    value_y: Money,
    value_z: Money,
    epsilon: Money,
) -> Result<(Scenario, Money)> {
    let (y, z) = (Block::from_ids([1]), Block::from_ids([2]));
    let base = Scenario::new(
        vec![
            Transaction::new(1, 1, value_y.0, value_y.0),
            Transaction::new(2, 1, value_z.0, value_z.0),
        ],
        BpValuation::Passive(Money::ZERO),
        Blockset::Explicit(vec![Block::empty(), y, z.clone()]),
    )?;
    let burn_z = mech.burn(&z, &base.bids(), &base);
    let table = BpValuation::Table(vec![
        (Block::empty(), Money::ZERO),
        (Block::from_ids([1]), Money::ZERO),
        (z, burn_z + epsilon),
    ]);
    Ok((base.with_bp_valuation(table), burn_z))
}

/// Builds the welfare counterexample for `rho` in `(0, 1]`, probing `v_y`
/// on a doubling schedule starting at `ceil((v_z + q + epsilon) / rho)`.
///
/// A recommendation of `{y}` at any probe means the mechanism is not DSIC
/// and is reported as [`TfmError::NotDsicCaseC2`].
pub fn construct_thm3(mech: &dyn Tfm, rho: Rational) -> Result<Thm3Scenario> {
    if rho <= Rational::from_integer(0) || rho > Rational::from_integer(1) {
        return Err(TfmError::ConstructionFailed(format!(
            "rho must lie in (0, 1], got {rho}"
        )));
    }
    let value_z = Money(1);
    let epsilon = Money(1);
    let (_, burn_z) = three_block_instance(mech, Money(1), value_z, epsilon)?;
    let need = Rational::from_integer((value_z + burn_z + epsilon).0 as i128) / rho;
    let start = Money(need.ceil().to_integer() as i64);

    let mut first: Option<Thm3Scenario> = None;
    let mut probes = Vec::new();
    for k in 0..THM3_PROBES {
        let value_y = Money(start.0 << k);
        let (scenario, burn_z) = three_block_instance(mech, value_y, value_z, epsilon)?;
        let report = audit_welfare_ratio(
            mech,
            BiddingStrategy::Truthful,
            std::slice::from_ref(&scenario),
            DEFAULT_BUDGET,
        )?;
        let row = &report.rows[0];
        probes.push(value_y);
        if row.recommended == Block::from_ids([1]) {
            return Err(TfmError::NotDsicCaseC2 { value_y: value_y.0 });
        }
        if row.recommended != Block::from_ids([2]) {
            return Err(TfmError::ConstructionFailed(format!(
                "recommended {} at v_y = {value_y}: the BP forgoes a positive-BPS block, so the \
                 mechanism is not BPIC",
                row.recommended
            )));
        }
        let w_y = welfare(&Block::from_ids([1]), &scenario)?;
        let ratio = Rational::new(row.recommended_welfare.0 as i128, w_y.0 as i128);
        if ratio > rho {
            return Err(TfmError::ConstructionFailed(format!(
                "ratio {ratio} exceeds rho {rho} at v_y = {value_y}"
            )));
        }
        if first.is_none() {
            first = Some(Thm3Scenario {
                scenario,
                rho,
                value_y,
                value_z,
                epsilon,
                burn_z,
                recommended: row.recommended.clone(),
                recommended_welfare: row.recommended_welfare,
                optimal_welfare: w_y,
                ratio,
                probes: Vec::new(),
            });
        }
    }
    let mut out = first.expect("at least one probe");
    out.probes = probes;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemoParams {
    pub base_fee: Money,
    pub size: u64,
    pub valuation: Money,
    pub underbid: Money,
    /// BP's stand-alone value for the transaction in the active world.
    pub mu: Money,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            base_fee: Money(2),
            size: 1,
            valuation: Money(3),
            underbid: Money(1),
            mu: Money(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoWorld {
    pub scenario: Scenario,
    pub mu: Money,
    pub included: bool,
    /// BPS of `{t}` minus BPS of the empty block at the underbid.
    pub bps_margin: Money,
    /// The BP is indifferent at the underbid; the tie order decides.
    pub knife_edge: bool,
    /// Utility-maximizing bids in `0..=v + r * s`.
    pub optimal_bids: Vec<Money>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnderbidDemo {
    pub params: DemoParams,
    pub worlds: [DemoWorld; 2],
    pub no_common_optimal_bid: bool,
}

impl UnderbidDemo {
    pub fn narrative(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "EIP-1559 with r = {}, one transaction of size {} and value {}, underbid {}\n",
            p.base_fee, p.size, p.valuation, p.underbid
        );
        for (i, w) in self.worlds.iter().enumerate() {
            let bids: Vec<String> = w.optimal_bids.iter().map(|b| b.to_string()).collect();
            out.push_str(&format!(
                "world {}: mu = {}, BPS margin {} -> {}{}; optimal bids {{{}}}\n",
                i + 1,
                w.mu,
                w.bps_margin,
                if w.included { "included" } else { "excluded" },
                if w.knife_edge {
                    " (knife-edge tie)"
                } else {
                    ""
                },
                bids.join(", ")
            ));
        }
        out.push_str(if self.no_common_optimal_bid {
            "no bid is optimal in both worlds\n"
        } else {
            "some bid is optimal in both worlds at these parameters\n"
        });
        out
    }
}

/// Two worlds identical from the user's side, with BP values 0 and `mu` for
/// the transaction. The BP picks a BPS-maximizing block and, when
/// indifferent, follows the standard rule's preference for the larger block.
pub fn eip1559_underbid_demo(params: DemoParams) -> Result<UnderbidDemo> {
    let mech = Mechanism::eip1559(params.base_fee.0, Allocation::Consonant);
    let reserve = params.base_fee.per_unit(params.size);
    let world = |mu: Money| -> Result<DemoWorld> {
        let scenario = Scenario::new(
            vec![Transaction::new(
                1,
                params.size,
                params.valuation.0,
                params.underbid.0,
            )],
            BpValuation::additive([(1, mu.0)]),
            Blockset::knapsack(params.size),
        )?;
        let universe = Universe::new(&scenario, DEFAULT_BUDGET)?;
        let included_at = |bid: Money| -> Result<bool> {
            let bids = BidVector::from_pairs([(TxId(1), bid)]);
            let i = argmax_index(
                &mech,
                &bids,
                &scenario,
                &universe,
                TieOrder::LargestSizeFirst,
            )?;
            Ok(!universe.block(i).is_empty())
        };
        let bps_margin = mu + params.underbid - reserve;
        let mut utilities = Vec::new();
        for b in 0..=(params.valuation + reserve).0 {
            let u = if included_at(Money(b))? {
                params.valuation - Money(b)
            } else {
                Money::ZERO
            };
            utilities.push((Money(b), u));
        }
        let best = utilities.iter().map(|(_, u)| *u).max().unwrap_or_default();
        Ok(DemoWorld {
            included: included_at(params.underbid)?,
            scenario,
            mu,
            bps_margin,
            knife_edge: bps_margin == Money::ZERO,
            optimal_bids: utilities
                .into_iter()
                .filter(|(_, u)| *u == best)
                .map(|(b, _)| b)
                .collect(),
        })
    };
    let worlds = [world(Money::ZERO)?, world(params.mu)?];
    let no_common_optimal_bid = !worlds[0]
        .optimal_bids
        .iter()
        .any(|b| worlds[1].optimal_bids.contains(b));
    Ok(UnderbidDemo {
        params,
        worlds,
        no_common_optimal_bid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tx(size: u64, value: i64) -> Scenario {
        Scenario::new(
            vec![Transaction::new(1, size, value, value)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(size),
        )
        .unwrap()
    }

    #[test]
    fn fpa_single_transaction() {
        let s = one_tx(1, 5);
        let w = construct_thm1(&Mechanism::fpa_consonant(), &s, &s.bids()).unwrap();
        assert_eq!(w.total_bids, Money(5));
        assert_eq!(w.burn, Money(0));
        assert_eq!(
            w.modified_valuation,
            BpValuation::additive([(1, 6)]),
            "v({{t}}) + P + Q + 1"
        );
        assert_eq!(w.deviation_block, Block::from_ids([1]));
        assert_eq!(w.deviation_payment, Money(0));
        assert_eq!(w.deviation_gain, Money(5));
        assert_eq!(w.deviation_gain, w.charged_payment);
    }

    #[test]
    fn eip1559_and_tipless_witnesses() {
        let s = one_tx(1, 5);
        let w =
            construct_thm1(&Mechanism::eip1559(2, Allocation::Consonant), &s, &s.bids()).unwrap();
        assert_eq!(w.charged_payment, Money(5));
        assert_eq!(w.deviation_gain, Money(5));

        // Tipless fees never exceed the burn, so a passive BP is indifferent
        // and the empty block wins the tie; a small stand-alone value breaks it.
        let s = one_tx(1, 2).with_bp_valuation(BpValuation::additive([(1, 1)]));
        let w = construct_thm1_single_minded(
            &Mechanism::tipless(2, Allocation::Consonant),
            &s,
            &s.bids(),
        )
        .unwrap();
        assert_eq!(w.charged_payment, Money(2));
        assert_eq!(w.deviation_gain, Money(2));
    }

    #[test]
    fn single_minded_fpa_value() {
        let s = one_tx(1, 5);
        let w = construct_thm1_single_minded(&Mechanism::fpa_consonant(), &s, &s.bids()).unwrap();
        assert_eq!(
            w.modified_valuation,
            BpValuation::SingleMinded {
                targets: vec![Block::from_ids([1])],
                value: Money(6)
            }
        );
    }

    #[test]
    fn trivial_is_already_trivial() {
        let s = one_tx(1, 5);
        assert_eq!(
            construct_thm1(&Mechanism::Trivial, &s, &s.bids()),
            Err(TfmError::AlreadyTrivial)
        );
        assert_eq!(
            construct_thm1_single_minded(&Mechanism::Trivial, &s, &s.bids()),
            Err(TfmError::AlreadyTrivial)
        );
    }

    #[test]
    fn welfare_construction_values() {
        let half = construct_thm3(&Mechanism::Trivial, Rational::new(1, 2)).unwrap();
        assert_eq!(half.value_y, Money(4));
        assert_eq!(half.recommended_welfare, Money(2));
        assert_eq!(half.ratio, Rational::new(1, 2));
        let hundredth = construct_thm3(&Mechanism::Trivial, Rational::new(1, 100)).unwrap();
        assert_eq!(hundredth.value_y, Money(200));
        assert_eq!(hundredth.ratio, Rational::new(1, 100));
        let one = construct_thm3(&Mechanism::Trivial, Rational::from_integer(1)).unwrap();
        assert_eq!(one.value_y, Money(2));
        assert!(construct_thm3(&Mechanism::Trivial, Rational::from_integer(0)).is_err());
    }

    #[test]
    fn welfare_construction_reports_non_dsic_rule() {
        // Revenue maximization picks {y}, the larger bid.
        let err = construct_thm3(&Mechanism::fpa(), Rational::new(1, 2)).unwrap_err();
        assert_eq!(err, TfmError::NotDsicCaseC2 { value_y: 4 });
    }

    #[test]
    fn underbid_demo_worlds() {
        let params = DemoParams {
            valuation: Money(2),
            ..DemoParams::default()
        };
        let demo = eip1559_underbid_demo(params).unwrap();
        assert!(!demo.worlds[0].included);
        assert_eq!(demo.worlds[0].bps_margin, Money(-1));
        assert!(demo.worlds[1].included);
        assert_eq!(demo.worlds[1].bps_margin, Money(1));

        let demo = eip1559_underbid_demo(DemoParams::default()).unwrap();
        assert!(demo.no_common_optimal_bid);
        assert_eq!(demo.worlds[0].optimal_bids, vec![Money(2)]);
        assert_eq!(demo.worlds[1].optimal_bids, vec![Money(0)]);

        let edge = eip1559_underbid_demo(DemoParams {
            mu: Money(1),
            ..DemoParams::default()
        })
        .unwrap();
        assert!(edge.worlds[1].knife_edge);
    }
}
