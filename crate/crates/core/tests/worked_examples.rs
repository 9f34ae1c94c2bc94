//! Small hand-checked examples through the public API.

use tfm_lab::audit::{audit_welfare_ratio, check_beta_commensurate};
use tfm_lab::constructions::{construct_thm1, construct_thm1_single_minded, construct_thm3};
use tfm_lab::mechanisms::{
    apply_strategy, eligible, is_base_fee_excessively_low, payment, recommended_block,
};
use tfm_lab::solver::{bps_argmax, bps_argmax_additive_dp, max_marginal_value};
use tfm_lab::{
    bp_value, bps, user_utility, welfare, Allocation, BidVector, BiddingStrategy, Block, Blockset,
    BpValuation, Eligibility, Mechanism, Money, Rational, Scenario, Tfm, TfmError, Transaction,
    TxId, DEFAULT_BUDGET,
};

fn world(txs: &[(u64, i64)], mu: BpValuation, cap: u64) -> Scenario {
    Scenario::new(
        txs.iter()
            .enumerate()
            .map(|(i, &(s, v))| Transaction::new(i as u32 + 1, s, v, v))
            .collect(),
        mu,
        Blockset::knapsack(cap),
    )
    .unwrap()
}

fn passive0() -> BpValuation {
    BpValuation::Passive(Money(0))
}

fn gated_eip1559(r: i64) -> Mechanism {
    Mechanism::Eip1559 {
        base_fee: Money(r),
        eligibility: Eligibility::BaseFeeGated,
        allocation: Allocation::Standard,
    }
}

fn bids(pairs: &[(u32, i64)]) -> BidVector {
    BidVector::from_ids(pairs.iter().copied())
}

#[test]
fn welfare_and_values() {
    let s = world(&[(1, 3), (1, 5)], BpValuation::additive([(1, 2)]), 2);
    assert_eq!(welfare(&Block::empty(), &s).unwrap(), Money(0));
    assert_eq!(welfare(&Block::from_ids([1, 2]), &s).unwrap(), Money(10));
    let y = world(&[(1, 7)], passive0(), 1);
    assert_eq!(welfare(&Block::from_ids([1]), &y).unwrap(), Money(7));

    assert_eq!(
        bp_value(&Block::empty(), &BpValuation::additive([(1, 4)])),
        Money(0)
    );
    let sm = BpValuation::SingleMinded {
        targets: vec![Block::from_ids([1])],
        value: Money(9),
    };
    assert_eq!(bp_value(&Block::from_ids([2]), &sm), Money(0));
    assert_eq!(
        bp_value(
            &Block::from_ids([1, 3]),
            &BpValuation::additive([(1, 4), (3, 6)])
        ),
        Money(10)
    );
}

#[test]
fn utilities() {
    let s = world(&[(1, 10)], passive0(), 1);
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
fn surplus_with_and_without_subsidy() {
    let t = Block::from_ids([1]);
    let s = world(&[(1, 5)], passive0(), 1);
    assert_eq!(
        bps(&Block::empty(), &s.bids(), &s, &Mechanism::fpa()).unwrap(),
        Money(0)
    );
    let eip = Mechanism::eip1559(2, Allocation::Standard);
    assert_eq!(bps(&t, &bids(&[(1, 5)]), &s, &eip).unwrap(), Money(3));
    let sub = world(&[(1, 1)], BpValuation::additive([(1, 4)]), 1);
    assert_eq!(bps(&t, &bids(&[(1, 1)]), &sub, &eip).unwrap(), Money(3));
}

#[test]
fn payments_and_burns() {
    let s = world(&[(2, 10), (1, 7), (3, 1)], passive0(), 6);
    let b = bids(&[(1, 10), (2, 7), (3, 1)]);
    let all = Block::from_ids([1, 2, 3]);
    assert!(payment(&Mechanism::Trivial, &all, &b, &s)
        .unwrap()
        .values()
        .all(|p| *p == Money(0)));
    let tipless = payment(&Mechanism::tipless(3, Allocation::Standard), &all, &b, &s).unwrap();
    assert_eq!(tipless[&TxId(1)], Money(6));
    assert_eq!(
        payment(&Mechanism::fpa(), &all, &b, &s).unwrap()[&TxId(2)],
        Money(7)
    );

    assert_eq!(Mechanism::fpa().burn(&all, &b, &s), Money(0));
    let eip = Mechanism::eip1559(2, Allocation::Standard);
    assert_eq!(eip.burn(&Block::from_ids([2, 3]), &b, &s), Money(8));
    assert_eq!(eip.burn(&Block::empty(), &b, &s), Money(0));
}

#[test]
fn recommendations() {
    let s = world(&[(1, 1), (1, 1)], passive0(), 2);
    let low =
        recommended_block(&Mechanism::tipless(2, Allocation::Standard), &s.bids(), &s).unwrap();
    assert_eq!(low, Block::empty());

    let s = world(&[(1, 5), (1, 1)], passive0(), 2);
    let gated = gated_eip1559(2);
    assert_eq!(
        recommended_block(&gated, &s.bids(), &s).unwrap(),
        Block::from_ids([1])
    );

    let sm = world(
        &[(1, 4), (1, 0)],
        BpValuation::SingleMinded {
            targets: vec![Block::from_ids([2])],
            value: Money(1),
        },
        1,
    );
    assert_eq!(
        recommended_block(&Mechanism::Trivial, &sm.bids(), &sm).unwrap(),
        Block::from_ids([2])
    );
}

#[test]
fn eligibility_and_low_base_fee() {
    let free = Mechanism::tipless(2, Allocation::Standard);
    let gated = gated_eip1559(2);
    let t = Transaction::new(1, 3, 6, 0);
    assert!(eligible(&free, &t, Money(0)));
    assert!(!eligible(&gated, &t, Money(5)));
    assert!(eligible(&gated, &t, Money(6)));

    let s = world(&[(3, 1), (3, 1)], passive0(), 5);
    assert!(!is_base_fee_excessively_low(Money(2), &s, &bids(&[(1, 1), (2, 1)])).unwrap());
    assert!(is_base_fee_excessively_low(Money(2), &s, &bids(&[(1, 6), (2, 6)])).unwrap());
    let s = world(&[(2, 1), (3, 1)], passive0(), 5);
    assert!(!is_base_fee_excessively_low(Money(2), &s, &bids(&[(1, 4), (2, 6)])).unwrap());
}

#[test]
fn strategies() {
    let s = world(&[(2, 3), (2, 9)], passive0(), 4);
    let v = bids(&[(1, 3), (2, 9)]);
    assert_eq!(
        apply_strategy(BiddingStrategy::Truthful, &v, &s).unwrap(),
        v
    );
    let capped = apply_strategy(
        BiddingStrategy::CappedAtReserve(Money(4)),
        &bids(&[(1, 10), (2, 5)]),
        &s,
    )
    .unwrap();
    assert_eq!(capped, bids(&[(1, 8), (2, 5)]));
}

#[test]
fn solver_examples() {
    let s = world(&[(1, 5)], passive0(), 1);
    assert_eq!(
        bps_argmax(&s.bids(), &s, &Mechanism::fpa()).unwrap(),
        Block::from_ids([1])
    );
    let zero = world(&[(1, 0), (1, 0)], passive0(), 2);
    assert_eq!(
        bps_argmax(&zero.bids(), &zero, &Mechanism::fpa()).unwrap(),
        Block::empty()
    );
    let tipless = Mechanism::tipless(2, Allocation::Standard);
    assert_eq!(
        bps_argmax_additive_dp(&zero.bids(), &zero, &tipless).unwrap(),
        Block::empty()
    );

    // 5 - 2 for tx 1 against 1 + 4 - 2 for tx 2: a tie the canonical order
    // settles toward {1}.
    let s = world(&[(1, 5), (1, 1)], BpValuation::additive([(2, 4)]), 1);
    let eip = Mechanism::eip1559(2, Allocation::Consonant);
    assert_eq!(
        bps_argmax(&s.bids(), &s, &eip).unwrap(),
        Block::from_ids([1])
    );
    assert_eq!(
        bps_argmax_additive_dp(&s.bids(), &s, &eip).unwrap(),
        Block::from_ids([1])
    );

    let none = Scenario::new(
        vec![Transaction::new(1, 1, 3, 3)],
        passive0(),
        Blockset::Knapsack {
            max_total_size: 1,
            candidates: Some(Default::default()),
            enumerate_permutations: false,
        },
    )
    .unwrap();
    assert_eq!(
        bps_argmax_additive_dp(&none.bids(), &none, &Mechanism::fpa()).unwrap(),
        Block::empty()
    );
}

#[test]
fn marginal_values() {
    let s = world(&[(1, 1), (1, 1)], passive0(), 2);
    assert_eq!(max_marginal_value(TxId(1), &s).unwrap(), Money(0));
    let s = world(&[(1, 1), (1, 1)], BpValuation::additive([(1, 7)]), 2);
    assert_eq!(max_marginal_value(TxId(1), &s).unwrap(), Money(7));
    let s = world(
        &[(1, 1), (1, 1)],
        BpValuation::SingleMinded {
            targets: vec![Block::from_ids([1, 2])],
            value: Money(5),
        },
        2,
    );
    assert_eq!(max_marginal_value(TxId(1), &s).unwrap(), Money(5));
}

#[test]
fn welfare_audit_and_commensurability() {
    let s = world(&[(1, 4)], passive0(), 1);
    let report = audit_welfare_ratio(
        &Mechanism::fpa(),
        BiddingStrategy::Truthful,
        std::slice::from_ref(&s),
        DEFAULT_BUDGET,
    )
    .unwrap();
    assert_eq!(report.rows[0].ratio, Some(Rational::from_integer(1)));
    assert!(!check_beta_commensurate(&s, Rational::new(1, 2)).unwrap());

    let s = world(&[(1, 10), (1, 0)], BpValuation::additive([(2, 10)]), 1);
    assert!(check_beta_commensurate(&s, Rational::from_integer(1)).unwrap());
    let empty = Scenario::new(vec![], passive0(), Blockset::knapsack(0)).unwrap();
    assert!(check_beta_commensurate(&empty, Rational::from_integer(1)).unwrap());
}

#[test]
fn fpa_deviation_construction() {
    let s = world(&[(1, 5)], passive0(), 1);
    let w = construct_thm1(&Mechanism::fpa_consonant(), &s, &s.bids()).unwrap();
    assert_eq!(w.charged_payment, Money(5));
    // v(t) + P + Q + 1 with P = 5 payments in the recommended block and Q = 0.
    assert_eq!(w.modified_valuation, BpValuation::additive([(1, 6)]));
    assert_eq!(w.deviation_block, Block::from_ids([1]));
    assert_eq!(w.deviation_payment, Money(0));
    assert_eq!(w.deviation_gain, Money(5));

    let sm = construct_thm1_single_minded(&Mechanism::fpa_consonant(), &s, &s.bids()).unwrap();
    assert_eq!(sm.deviation_gain, Money(5));
    assert!(matches!(
        sm.modified_valuation,
        BpValuation::SingleMinded { .. }
    ));

    assert_eq!(
        construct_thm1(&Mechanism::Trivial, &s, &s.bids()),
        Err(TfmError::AlreadyTrivial)
    );
    assert_eq!(
        construct_thm1_single_minded(&Mechanism::Trivial, &s, &s.bids()),
        Err(TfmError::AlreadyTrivial)
    );

    let eip = construct_thm1(&Mechanism::eip1559(2, Allocation::Consonant), &s, &s.bids()).unwrap();
    assert_eq!(
        (eip.charged_payment, eip.deviation_payment),
        (Money(5), Money(0))
    );
    // A passive BP would be indifferent between {1} and the empty block.
    let two = world(&[(1, 2)], BpValuation::additive([(1, 1)]), 1);
    let tl = construct_thm1_single_minded(
        &Mechanism::tipless(2, Allocation::Consonant),
        &two,
        &two.bids(),
    )
    .unwrap();
    assert_eq!(tl.charged_payment, Money(2));
}

#[test]
fn welfare_construction() {
    let half = construct_thm3(&Mechanism::Trivial, Rational::new(1, 2)).unwrap();
    assert_eq!(
        (half.value_y, half.recommended_welfare),
        (Money(4), Money(2))
    );
    let tiny = construct_thm3(&Mechanism::Trivial, Rational::new(1, 100)).unwrap();
    assert_eq!(tiny.value_y, Money(200));
    assert!(tiny.ratio <= Rational::new(1, 100));
    let one = construct_thm3(&Mechanism::Trivial, Rational::from_integer(1)).unwrap();
    assert!(one.ratio <= Rational::from_integer(1));
}
