//! Brute-force incentive and welfare auditors.
//!
//! The incentive properties quantify over all real bids, valuations and BP
//! preferences. The auditors quantify over a finite [`Grid`] of bids and
//! valuations and an explicit scenario list instead, so a PASS means no
//! violation was found at grid resolution, nothing more.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blockset::{Universe, DEFAULT_BUDGET};
use crate::error::{Result, TfmError};
use crate::mechanisms::{
    apply_strategy, is_base_fee_excessively_low, Allocation, BidVector, BiddingStrategy, Mechanism,
    Tfm,
};
use crate::model::{welfare, Block, Scenario, TxId};
use crate::money::{Money, Rational};
use crate::scenario_file::scenario_digest;
use crate::solver::{bps_values, first_max, max_marginal_value_in};

/// Evenly spaced points `{0, step, ..., max_value}` used for both bids and
/// valuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    step: Money,
    max_value: Money,
}

impl Grid {
    pub fn new(step: i64, max_value: i64) -> Result<Self> {
        if step < 1 {
            return Err(TfmError::InvalidGrid(format!("step {step} must be >= 1")));
        }
        if max_value < 0 || max_value % step != 0 {
            return Err(TfmError::InvalidGrid(format!(
                "max_value {max_value} must be a non-negative multiple of step {step}"
            )));
        }
        Ok(Grid {
            step: Money(step),
            max_value: Money(max_value),
        })
    }

    pub fn step(&self) -> Money {
        self.step
    }

    pub fn max_value(&self) -> Money {
        self.max_value
    }

    pub fn len(&self) -> usize {
        (self.max_value.0 / self.step.0) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<Money> {
        (0..self.len() as i64)
            .map(|i| Money(i * self.step.0))
            .collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            step: Money(1),
            max_value: Money(20),
        }
    }
}

/// Uniform seeded sampling of other-bid profiles, for grids too large to
/// enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub seed: u64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub budget: usize,
    pub jobs: usize,
    pub sampling: Option<Sampling>,
    /// Largest number of bid profiles enumerated per transaction (DSIC) or
    /// per scenario (BPIC) before sampling is required.
    pub max_profiles: u64,
    pub max_transactions: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            budget: DEFAULT_BUDGET,
            jobs: 1,
            sampling: None,
            max_profiles: 5_000_000,
            max_transactions: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuditKind {
    Dsic,
    Bpic,
    ApproxDsic,
}

impl AuditKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditKind::Dsic => "dsic",
            AuditKind::Bpic => "bpic",
            AuditKind::ApproxDsic => "approx-dsic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WitnessKind {
    /// A deviation bid strictly beats the recommended bid.
    Dsic,
    /// A block has strictly higher BPS than the recommended one.
    Bpic,
    /// The recommended block is BPS-maximal but not first among the
    /// maximizers in the mechanism's declared tie order.
    BpicTieBreak,
    /// An overbid strictly beats the recommended bid.
    Overbid,
    /// A bid below `sigma(v) - nu_t` strictly beats the recommended bid.
    Underbid,
    /// Measured regret exceeds `nu_t`.
    RegretAboveBound,
}

impl WitnessKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            WitnessKind::Dsic => "dsic",
            WitnessKind::Bpic => "bpic",
            WitnessKind::BpicTieBreak => "bpic-tie-break",
            WitnessKind::Overbid => "overbid",
            WitnessKind::Underbid => "underbid",
            WitnessKind::RegretAboveBound => "regret-above-bound",
        }
    }
}

/// A replayable violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub scenario_digest: String,
    /// Index of the scenario in the audited list.
    pub scenario_index: usize,
    pub kind: WitnessKind,
    pub tx_id: TxId,
    /// User valuation of the cell (incentive witnesses only).
    pub valuation: Option<Money>,
    /// Bid of `tx_id` in `bids`: `sigma(v)` for user witnesses.
    pub recommended_bid: Money,
    pub deviation_bid: Option<Money>,
    /// Utility gain of the deviation, or BPS gain for BPIC witnesses.
    pub utility_gain: Money,
    /// Full bid vector of the cell.
    pub bids: BidVector,
    pub recommended_block: Block,
    /// Block the deviation or the better choice leads to.
    pub deviation_block: Option<Block>,
}

impl Witness {
    fn sort_key(&self) -> impl Ord + '_ {
        (
            &self.scenario_digest,
            self.tx_id,
            std::cmp::Reverse(self.utility_gain),
            self.kind,
            self.valuation,
            self.deviation_bid,
            self.bids.to_string(),
            self.scenario_index,
        )
    }
}

/// Per-transaction comparison of measured regret and the marginal-value bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundCheck {
    pub scenario_digest: String,
    pub tx_id: TxId,
    pub nu: Money,
    pub max_regret: Money,
    pub deviation_within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub kind: AuditKind,
    pub verdict: Verdict,
    pub max_regret: Money,
    pub witnesses: Vec<Witness>,
    pub cells_checked: u64,
    /// Cells where the allocation rule is undefined (e.g. an excessively low
    /// base fee under the standard EIP-1559 rule).
    pub cells_skipped: u64,
    pub bound_checks: Vec<BoundCheck>,
    pub sampling: Option<Sampling>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// One-line description of what the verdict means.
    pub fn semantics(&self) -> String {
        match (self.verdict, self.sampling) {
            (Verdict::Pass, None) => "no violation found at grid resolution".into(),
            (Verdict::Pass, Some(s)) => format!(
                "no violation found among {} sampled profiles per transaction (seed {})",
                s.samples, s.seed
            ),
            (Verdict::Fail, _) => format!("{} replayable witness(es)", self.witnesses.len()),
        }
    }
}

fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TfmError::Unsupported(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Outcome for one transaction at one bid: inclusion, payment and the block.
#[derive(Debug, Clone)]
struct Outcome {
    included: bool,
    payment: Money,
    block: usize,
}

struct Prepared<'a> {
    scenario: &'a Scenario,
    universe: Universe,
    digest: String,
}

fn prepare<'a>(scenarios: &'a [Scenario], budget: usize) -> Result<Vec<Prepared<'a>>> {
    scenarios
        .iter()
        .map(|s| {
            Ok(Prepared {
                scenario: s,
                universe: Universe::new(s, budget)?,
                digest: scenario_digest(s),
            })
        })
        .collect()
}

/// Whether an allocation-rule error means "undefined here" (cell skipped)
/// rather than a hard failure.
fn is_undefined(e: &TfmError) -> bool {
    matches!(
        e,
        TfmError::ExcessivelyLowBaseFee { .. } | TfmError::Unsupported(_)
    )
}

fn outcome(
    mech: &dyn Tfm,
    guard: Option<Money>,
    p: &Prepared<'_>,
    pos: usize,
    bids: &BidVector,
) -> Result<Option<Outcome>> {
    if let Some(r) = guard {
        if is_base_fee_excessively_low(r, p.scenario, bids)? {
            return Ok(None);
        }
    }
    let block = match mech.recommend(bids, p.scenario, &p.universe) {
        Ok(i) => i,
        Err(e) if is_undefined(&e) => return Ok(None),
        Err(e) => return Err(e),
    };
    let included = p.universe.mask(block) & (1 << pos) != 0;
    let tx = &p.scenario.transactions()[pos];
    let payment = if included {
        mech.payment_of(tx, p.universe.block(block), bids, p.scenario)
    } else {
        Money::ZERO
    };
    Ok(Some(Outcome {
        included,
        payment,
        block,
    }))
}

fn utility(valuation: Money, o: &Outcome) -> Money {
    if o.included {
        valuation - o.payment
    } else {
        Money::ZERO
    }
}

/// Other-bid profiles for transaction `pos`: every grid combination, or a
/// seeded sample.
fn profiles(
    n: usize,
    pos: usize,
    grid: &Grid,
    opts: &AuditOptions,
    scenario_index: usize,
) -> Result<Vec<Vec<Money>>> {
    let points = grid.points();
    let others = n.saturating_sub(1);
    if let Some(s) = opts.sampling {
        let mut rng = ChaCha8Rng::seed_from_u64(
            s.seed ^ ((scenario_index as u64) << 32) ^ (pos as u64).wrapping_mul(0x9E37_79B9),
        );
        return Ok((0..s.samples)
            .map(|_| {
                (0..others)
                    .map(|_| points[rng.gen_range(0..points.len())])
                    .collect()
            })
            .collect());
    }
    if n > opts.max_transactions {
        return Err(TfmError::GuardrailExceeded(format!(
            "{n} transactions exceed the exhaustive limit of {}",
            opts.max_transactions
        )));
    }
    let count = (points.len() as u64).checked_pow(others as u32);
    match count {
        Some(c) if c <= opts.max_profiles => Ok(product(&points, others)),
        _ => Err(TfmError::GuardrailExceeded(format!(
            "{}^{others} bid profiles exceed the limit of {}",
            points.len(),
            opts.max_profiles
        ))),
    }
}

/// All vectors of length `len` over `points`, last coordinate fastest.
fn product(points: &[Money], len: usize) -> Vec<Vec<Money>> {
    let mut out = vec![Vec::with_capacity(len)];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                points.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.push(*p);
                    v
                })
            })
            .collect();
    }
    out
}

fn bids_with_profile(scenario: &Scenario, pos: usize, profile: &[Money], own: Money) -> BidVector {
    let mut others = profile.iter();
    BidVector::from_pairs(scenario.transactions().iter().enumerate().map(|(k, t)| {
        let b = if k == pos {
            own
        } else {
            *others.next().unwrap_or(&Money::ZERO)
        };
        (t.id, b)
    }))
}

/// How deviations are judged in one cell.
#[derive(Clone, Copy)]
enum Rule {
    Exact,
    /// Approximate DSIC with the transaction's maximum marginal value.
    Approx {
        nu: Money,
    },
}

#[derive(Default)]
struct UnitResult {
    checked: u64,
    skipped: u64,
    max_regret: Money,
    witnesses: Vec<Witness>,
}

#[allow(clippy::too_many_arguments)]
fn audit_profile(
    mech: &dyn Tfm,
    strategy: BiddingStrategy,
    guard: Option<Money>,
    p: &Prepared<'_>,
    scenario_index: usize,
    pos: usize,
    profile: &[Money],
    grid: &Grid,
    valuations: Option<&[Money]>,
    rule: Rule,
) -> Result<UnitResult> {
    let tx = &p.scenario.transactions()[pos];
    let mut cache: HashMap<Money, Option<Outcome>> = HashMap::new();
    let mut eval = |b: Money| -> Result<Option<Outcome>> {
        if let Some(o) = cache.get(&b) {
            return Ok(o.clone());
        }
        let bids = bids_with_profile(p.scenario, pos, profile, b);
        let o = outcome(mech, guard, p, pos, &bids)?;
        cache.insert(b, o.clone());
        Ok(o)
    };
    let deviations = grid.points();
    let deviation_outcomes: Vec<(Money, Option<Outcome>)> = deviations
        .iter()
        .map(|&b| eval(b).map(|o| (b, o)))
        .collect::<Result<_>>()?;

    let grid_values = grid.points();
    let values = valuations.unwrap_or(&grid_values);
    let mut result = UnitResult::default();
    for &v in values {
        let sigma = strategy.bid(v, tx.size);
        let Some(rec) = eval(sigma)? else {
            result.skipped += 1;
            continue;
        };
        result.checked += 1;
        let base = utility(v, &rec);
        let mut best: Option<(Money, Money, usize)> = None;
        let mut flagged: Vec<(WitnessKind, Money, Money, usize)> = Vec::new();
        for (b, o) in &deviation_outcomes {
            let Some(o) = o else { continue };
            let gain = utility(v, o) - base;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, *b, o.block));
            }
            if let Rule::Approx { nu } = rule {
                if gain > Money::ZERO && *b > sigma {
                    flagged.push((WitnessKind::Overbid, *b, gain, o.block));
                } else if gain > Money::ZERO && *b < sigma - nu {
                    flagged.push((WitnessKind::Underbid, *b, gain, o.block));
                }
            }
        }
        let regret = best.map_or(Money::ZERO, |(g, _, _)| g.max(Money::ZERO));
        result.max_regret = result.max_regret.max(regret);
        let witness = |kind, b: Money, gain, block: usize| Witness {
            scenario_digest: p.digest.clone(),
            scenario_index,
            kind,
            tx_id: tx.id,
            valuation: Some(v),
            recommended_bid: sigma,
            deviation_bid: Some(b),
            utility_gain: gain,
            bids: bids_with_profile(p.scenario, pos, profile, sigma),
            recommended_block: p.universe.block(rec.block).clone(),
            deviation_block: Some(p.universe.block(block).clone()),
        };
        match rule {
            Rule::Exact => {
                if let Some((gain, b, block)) = best.filter(|(g, _, _)| *g > Money::ZERO) {
                    result
                        .witnesses
                        .push(witness(WitnessKind::Dsic, b, gain, block));
                }
            }
            Rule::Approx { nu } => {
                for (kind, b, gain, block) in flagged {
                    result.witnesses.push(witness(kind, b, gain, block));
                }
                if let Some((gain, b, block)) = best.filter(|(g, _, _)| *g > nu) {
                    result
                        .witnesses
                        .push(witness(WitnessKind::RegretAboveBound, b, gain, block));
                }
            }
        }
    }
    Ok(result)
}

struct Unit {
    scenario: usize,
    pos: usize,
    profile: Vec<Money>,
}

fn units(prepared: &[Prepared<'_>], grid: &Grid, opts: &AuditOptions) -> Result<Vec<Unit>> {
    let mut out = Vec::new();
    for (si, p) in prepared.iter().enumerate() {
        let n = p.scenario.transactions().len();
        for pos in 0..n {
            for profile in profiles(n, pos, grid, opts, si)? {
                out.push(Unit {
                    scenario: si,
                    pos,
                    profile,
                });
            }
        }
    }
    Ok(out)
}

fn finish(
    kind: AuditKind,
    mut results: Vec<UnitResult>,
    sampling: Option<Sampling>,
) -> AuditReport {
    let mut witnesses: Vec<Witness> = results
        .iter_mut()
        .flat_map(|r| std::mem::take(&mut r.witnesses))
        .collect();
    witnesses.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let max_regret = results
        .iter()
        .map(|r| r.max_regret)
        .max()
        .unwrap_or(Money::ZERO);
    AuditReport {
        kind,
        verdict: if witnesses.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        max_regret,
        cells_checked: results.iter().map(|r| r.checked).sum(),
        cells_skipped: results.iter().map(|r| r.skipped).sum(),
        witnesses,
        bound_checks: Vec::new(),
        sampling,
    }
}

/// Checks that, for every scenario and grid cell `(t, v_t, b_-t)`, bidding
/// `sigma(v_t)` maximizes the user's utility over all grid deviations,
/// assuming the BP follows the allocation rule.
pub fn audit_dsic(
    mech: &dyn Tfm,
    strategy: BiddingStrategy,
    scenarios: &[Scenario],
    grid: &Grid,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let prepared = prepare(scenarios, opts.budget)?;
    let units = units(&prepared, grid, opts)?;
    let results = run_pool(opts.jobs, || {
        units
            .par_iter()
            .map(|u| {
                audit_profile(
                    mech,
                    strategy,
                    None,
                    &prepared[u.scenario],
                    u.scenario,
                    u.pos,
                    &u.profile,
                    grid,
                    None,
                    Rule::Exact,
                )
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(finish(AuditKind::Dsic, results, opts.sampling))
}

/// Audits the single cell given by each scenario's own bids: for every
/// transaction, its valuation from the scenario and the other bids as
/// written, against every grid deviation.
pub fn audit_dsic_at_bids(
    mech: &dyn Tfm,
    strategy: BiddingStrategy,
    scenarios: &[Scenario],
    grid: &Grid,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let prepared = prepare(scenarios, opts.budget)?;
    let mut results = Vec::new();
    for (si, p) in prepared.iter().enumerate() {
        let txs = p.scenario.transactions();
        for pos in 0..txs.len() {
            let profile: Vec<Money> = txs
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != pos)
                .map(|(_, t)| t.bid)
                .collect();
            results.push(audit_profile(
                mech,
                strategy,
                None,
                p,
                si,
                pos,
                &profile,
                grid,
                Some(&[txs[pos].valuation]),
                Rule::Exact,
            )?);
        }
    }
    Ok(finish(AuditKind::Dsic, results, None))
}

/// Checks that the recommended block is BPS-maximal and first among the
/// maximizers in the mechanism's declared tie order, for every grid bid
/// vector of every scenario.
pub fn audit_bpic(
    mech: &dyn Tfm,
    scenarios: &[Scenario],
    bid_grid: &Grid,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let prepared = prepare(scenarios, opts.budget)?;
    let points = bid_grid.points();
    let mut cells: Vec<(usize, Vec<Money>)> = Vec::new();
    for (si, p) in prepared.iter().enumerate() {
        let n = p.scenario.transactions().len();
        if let Some(s) = opts.sampling {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ ((si as u64) << 32));
            for _ in 0..s.samples {
                cells.push((
                    si,
                    (0..n)
                        .map(|_| points[rng.gen_range(0..points.len())])
                        .collect(),
                ));
            }
            continue;
        }
        match (points.len() as u64).checked_pow(n as u32) {
            Some(c) if c <= opts.max_profiles => {
                cells.extend(product(&points, n).into_iter().map(|v| (si, v)));
            }
            _ => {
                return Err(TfmError::GuardrailExceeded(format!(
                    "{}^{n} bid vectors exceed the limit of {}",
                    points.len(),
                    opts.max_profiles
                )))
            }
        }
    }

    let results = run_pool(opts.jobs, || {
        cells
            .par_iter()
            .map(|(si, vector)| {
                let p = &prepared[*si];
                let bids = BidVector::from_pairs(
                    p.scenario
                        .transactions()
                        .iter()
                        .zip(vector)
                        .map(|(t, b)| (t.id, *b)),
                );
                bpic_cell(mech, p, *si, &bids)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(finish(AuditKind::Bpic, results, opts.sampling))
}

fn bpic_cell(mech: &dyn Tfm, p: &Prepared<'_>, si: usize, bids: &BidVector) -> Result<UnitResult> {
    let mut r = UnitResult::default();
    let rec = match mech.recommend(bids, p.scenario, &p.universe) {
        Ok(i) => i,
        Err(e) if is_undefined(&e) => {
            r.skipped = 1;
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    r.checked = 1;
    let values = bps_values(mech, bids, p.scenario, &p.universe);
    let Some(best) = first_max(&values, p.universe.order(mech.tie_order())) else {
        return Err(TfmError::EmptyBlockset);
    };
    if best == rec {
        return Ok(r);
    }
    let best_value = values[best].unwrap_or(Money::ZERO);
    let gain = match values[rec] {
        Some(v) => best_value - v,
        None => best_value,
    };
    let rec_block = p.universe.block(rec);
    let best_block = p.universe.block(best);
    let tx_id = best_block
        .ids()
        .iter()
        .find(|t| !rec_block.contains(**t))
        .or_else(|| rec_block.ids().iter().find(|t| !best_block.contains(**t)))
        .or_else(|| best_block.ids().first())
        .copied()
        .unwrap_or(TxId(0));
    r.max_regret = gain.max(Money::ZERO);
    r.witnesses.push(Witness {
        scenario_digest: p.digest.clone(),
        scenario_index: si,
        kind: if gain > Money::ZERO {
            WitnessKind::Bpic
        } else {
            WitnessKind::BpicTieBreak
        },
        tx_id,
        valuation: None,
        recommended_bid: bids.get(tx_id),
        deviation_bid: None,
        utility_gain: gain,
        bids: bids.clone(),
        recommended_block: rec_block.clone(),
        deviation_block: Some(best_block.clone()),
    });
    Ok(r)
}

/// Approximate-DSIC audit of the BPS-maximizing tipless mechanism (or
/// consonant EIP-1559 where the base fee is not excessively low) with
/// `sigma(v) = min(v, r * s_t)`: no overbid and no bid below
/// `sigma(v) - nu_t` may strictly beat `sigma(v)`, and the regret of every
/// cell must be at most `nu_t`.
pub fn audit_approx_dsic_bound(
    mech: &Mechanism,
    scenarios: &[Scenario],
    grid: &Grid,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let (base_fee, guard) = match *mech {
        Mechanism::Tipless {
            base_fee,
            allocation: Allocation::Consonant,
            ..
        } => (base_fee, None),
        Mechanism::Eip1559 {
            base_fee,
            allocation: Allocation::Consonant,
            ..
        } => (base_fee, Some(base_fee)),
        _ => {
            return Err(TfmError::Unsupported(format!(
                "approximate-DSIC bound applies to consonant tipless or EIP-1559, not {mech}"
            )))
        }
    };
    let strategy = BiddingStrategy::CappedAtReserve(base_fee);
    let prepared = prepare(scenarios, opts.budget)?;
    let mut nus: Vec<Vec<Option<Money>>> = Vec::new();
    for p in &prepared {
        if !p.universe.is_downward_closed() {
            return Err(TfmError::Unsupported(
                "approximate-DSIC bound needs a downward-closed blockset".into(),
            ));
        }
        nus.push(
            p.scenario
                .transactions()
                .iter()
                .map(
                    |t| match max_marginal_value_in(t.id, p.scenario, &p.universe) {
                        Ok(nu) => Ok(Some(nu)),
                        Err(TfmError::NotInAnyBlock(_)) => Ok(None),
                        Err(e) => Err(e),
                    },
                )
                .collect::<Result<_>>()?,
        );
    }
    let units = units(&prepared, grid, opts)?;
    let results = run_pool(opts.jobs, || {
        units
            .par_iter()
            .map(|u| {
                // A transaction in no feasible block is never included.
                let nu = nus[u.scenario][u.pos].unwrap_or(Money::ZERO);
                audit_profile(
                    mech,
                    strategy,
                    guard,
                    &prepared[u.scenario],
                    u.scenario,
                    u.pos,
                    &u.profile,
                    grid,
                    None,
                    Rule::Approx { nu },
                )
                .map(|r| (u.scenario, u.pos, r))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut per_tx: HashMap<(usize, usize), Money> = HashMap::new();
    for (si, pos, r) in &results {
        let e = per_tx.entry((*si, *pos)).or_insert(Money::ZERO);
        *e = (*e).max(r.max_regret);
    }
    let mut bound_checks = Vec::new();
    for (si, p) in prepared.iter().enumerate() {
        for (pos, t) in p.scenario.transactions().iter().enumerate() {
            let nu = nus[si][pos].unwrap_or(Money::ZERO);
            let max_regret = per_tx.get(&(si, pos)).copied().unwrap_or(Money::ZERO);
            bound_checks.push(BoundCheck {
                scenario_digest: p.digest.clone(),
                tx_id: t.id,
                nu,
                max_regret,
                deviation_within_bound: max_regret <= nu,
            });
        }
    }
    let mut report = finish(
        AuditKind::ApproxDsic,
        results.into_iter().map(|(_, _, r)| r).collect(),
        opts.sampling,
    );
    report.bound_checks = bound_checks;
    Ok(report)
}

/// Welfare of the recommended block relative to the welfare-maximizing one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WelfareRow {
    pub scenario_digest: String,
    pub recommended: Block,
    pub optimal: Block,
    pub recommended_welfare: Money,
    pub optimal_welfare: Money,
    /// `None` when the optimum is non-positive and the ratio is meaningless.
    pub ratio: Option<Rational>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WelfareReport {
    pub rows: Vec<WelfareRow>,
}

impl WelfareReport {
    pub fn min_ratio(&self) -> Option<Rational> {
        self.rows.iter().filter_map(|r| r.ratio).min()
    }
}

/// Welfare-maximizing block, first in canonical order among maximizers.
pub fn welfare_optimal_block(scenario: &Scenario, universe: &Universe) -> Result<(Block, Money)> {
    let mut best: Option<(usize, Money)> = None;
    for i in 0..universe.len() {
        let w = welfare(universe.block(i), scenario)?;
        if best.is_none_or(|(_, b)| w > b) {
            best = Some((i, w));
        }
    }
    let (i, w) = best.ok_or(TfmError::EmptyBlockset)?;
    Ok((universe.block(i).clone(), w))
}

/// For each scenario: the recommended block under `sigma(v)` against the
/// welfare-maximizing block, as an exact ratio `W(B) / W(B*)`.
pub fn audit_welfare_ratio(
    mech: &dyn Tfm,
    strategy: BiddingStrategy,
    scenarios: &[Scenario],
    budget: usize,
) -> Result<WelfareReport> {
    let rows = scenarios
        .iter()
        .map(|s| {
            let universe = Universe::new(s, budget)?;
            let bids = apply_strategy(strategy, &s.valuations(), s)?;
            let rec = universe.block(mech.recommend(&bids, s, &universe)?).clone();
            let w_rec = welfare(&rec, s)?;
            let (optimal, w_opt) = welfare_optimal_block(s, &universe)?;
            let (ratio, degenerate) = if w_opt > Money::ZERO {
                (Some(Rational::new(w_rec.0 as i128, w_opt.0 as i128)), false)
            } else if w_opt == Money::ZERO && w_rec == Money::ZERO {
                (Some(Rational::from_integer(1)), false)
            } else {
                (None, true)
            };
            Ok(WelfareRow {
                scenario_digest: scenario_digest(s),
                recommended: rec,
                optimal,
                recommended_welfare: w_rec,
                optimal_welfare: w_opt,
                ratio,
                degenerate,
            })
        })
        .collect::<Result<_>>()?;
    Ok(WelfareReport { rows })
}

/// `v_BP(B^BP) >= beta * sum of user values in B^u`, where `B^BP` maximizes
/// the BP's value and `B^u` the total user value.
pub fn check_beta_commensurate(scenario: &Scenario, beta: Rational) -> Result<bool> {
    let universe = Universe::new(scenario, DEFAULT_BUDGET)?;
    check_beta_commensurate_in(scenario, &universe, beta)
}

pub fn check_beta_commensurate_in(
    scenario: &Scenario,
    universe: &Universe,
    beta: Rational,
) -> Result<bool> {
    let bp_best = (0..universe.len())
        .map(|i| universe.bp_value(i))
        .max()
        .ok_or(TfmError::EmptyBlockset)?;
    let user_best = universe
        .blocks()
        .iter()
        .map(|b| {
            b.ids()
                .iter()
                .map(|id| scenario.tx(*id).map(|t| t.valuation))
                .sum::<Result<Money>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(Money::ZERO);
    Ok(Rational::from_integer(bp_best.0 as i128)
        >= beta * Rational::from_integer(user_best.0 as i128))
}

/// Re-simulates a user-incentive witness and returns the utility gain of its
/// deviation.
pub fn replay_user_witness(
    mech: &dyn Tfm,
    scenario: &Scenario,
    witness: &Witness,
) -> Result<Money> {
    let universe = Universe::new(scenario, DEFAULT_BUDGET)?;
    let pos = scenario.position(witness.tx_id)?;
    let valuation = witness
        .valuation
        .ok_or_else(|| TfmError::Unsupported("witness has no valuation".into()))?;
    let deviation = witness
        .deviation_bid
        .ok_or_else(|| TfmError::Unsupported("witness has no deviation bid".into()))?;
    let p = Prepared {
        scenario,
        universe,
        digest: String::new(),
    };
    let at = |bid: Money| -> Result<Money> {
        let o = outcome(mech, None, &p, pos, &witness.bids.with(witness.tx_id, bid))?
            .ok_or_else(|| TfmError::Unsupported("allocation undefined at witness".into()))?;
        Ok(utility(valuation, &o))
    };
    Ok(at(deviation)? - at(witness.recommended_bid)?)
}

/// Re-simulates a BPIC witness and returns the BPS gain of the better block.
pub fn replay_bpic_witness(
    mech: &dyn Tfm,
    scenario: &Scenario,
    witness: &Witness,
) -> Result<Money> {
    let universe = Universe::new(scenario, DEFAULT_BUDGET)?;
    let rec = mech.recommend(&witness.bids, scenario, &universe)?;
    let better = witness
        .deviation_block
        .as_ref()
        .and_then(|b| universe.index_of(b))
        .ok_or_else(|| TfmError::Unsupported("witness block not in blockset".into()))?;
    let values = bps_values(mech, &witness.bids, scenario, &universe);
    Ok(values[better].unwrap_or(Money::ZERO) - values[rec].unwrap_or(Money::ZERO))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Blockset, BpValuation, Transaction};

    fn passive(txs: &[(u32, u64)], cap: u64) -> Scenario {
        Scenario::new(
            txs.iter()
                .map(|&(id, s)| Transaction::new(id, s, 0, 0))
                .collect(),
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(cap),
        )
        .unwrap()
    }

    #[test]
    fn grid_points() {
        let g = Grid::new(2, 6).unwrap();
        assert_eq!(g.points(), vec![Money(0), Money(2), Money(4), Money(6)]);
        assert!(Grid::new(3, 7).is_err());
        assert!(Grid::new(0, 0).is_err());
        assert_eq!(Grid::new(1, 0).unwrap().len(), 1);
    }

    #[test]
    fn tipless_standard_is_bpic_and_dsic_with_passive_bp() {
        let s = passive(&[(1, 1), (2, 2)], 2);
        let m = Mechanism::tipless(2, Allocation::Standard);
        let g = Grid::new(1, 6).unwrap();
        let bpic = audit_bpic(&m, std::slice::from_ref(&s), &g, &AuditOptions::default()).unwrap();
        assert!(bpic.passed(), "{:?}", bpic.witnesses.first());
        let dsic = audit_dsic(
            &m,
            BiddingStrategy::CappedAtReserve(Money(2)),
            &[s],
            &g,
            &AuditOptions::default(),
        )
        .unwrap();
        assert!(dsic.passed());
        assert_eq!(dsic.max_regret, Money(0));
        assert_eq!(dsic.cells_checked, 2 * 7 * 7);
    }

    #[test]
    fn trivial_mechanism_passes_everything() {
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 0, 0), Transaction::new(2, 1, 0, 0)],
            BpValuation::additive([(2, 3)]),
            Blockset::knapsack(1),
        )
        .unwrap();
        let g = Grid::new(1, 4).unwrap();
        let opts = AuditOptions::default();
        assert!(
            audit_bpic(&Mechanism::Trivial, std::slice::from_ref(&s), &g, &opts)
                .unwrap()
                .passed()
        );
        assert!(audit_dsic(
            &Mechanism::Trivial,
            BiddingStrategy::Truthful,
            &[s],
            &g,
            &opts
        )
        .unwrap()
        .passed());
    }

    #[test]
    fn eip1559_standard_with_subsidizing_bp_fails_bpic() {
        // r * s_2 - b_2 = 2 - 1 = 1 < mu_2 = 3 at the bid vector (.., 1).
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 0, 0), Transaction::new(2, 1, 0, 0)],
            BpValuation::additive([(2, 3)]),
            Blockset::knapsack(2),
        )
        .unwrap();
        let m = Mechanism::eip1559(2, Allocation::Standard);
        let report = audit_bpic(
            &m,
            std::slice::from_ref(&s),
            &Grid::new(1, 4).unwrap(),
            &AuditOptions::default(),
        )
        .unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        let w = report
            .witnesses
            .iter()
            .find(|w| w.kind == WitnessKind::Bpic)
            .unwrap();
        assert_eq!(w.tx_id, TxId(2));
        assert!(w.utility_gain > Money(0));
        assert_eq!(replay_bpic_witness(&m, &s, w).unwrap(), w.utility_gain);
    }

    #[test]
    fn consonant_tipless_with_active_bp_fails_dsic_with_underbid() {
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 0, 0)],
            BpValuation::additive([(1, 2)]),
            Blockset::knapsack(1),
        )
        .unwrap();
        let m = Mechanism::tipless(2, Allocation::Consonant);
        let report = audit_dsic(
            &m,
            BiddingStrategy::CappedAtReserve(Money(2)),
            std::slice::from_ref(&s),
            &Grid::new(1, 4).unwrap(),
            &AuditOptions::default(),
        )
        .unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        let w = &report.witnesses[0];
        assert!(w.deviation_bid.unwrap() < w.recommended_bid);
        assert_eq!(replay_user_witness(&m, &s, w).unwrap(), w.utility_gain);
    }

    #[test]
    fn approx_bound_matches_hand_enumeration() {
        // mu_1 = 3, r * s_1 = 5: with v >= 5 the BP includes tx 1 whenever
        // b + 3 - 5 >= 0 strictly beats the alternatives; profitable
        // deviations can only lie in [2, 5].
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 0, 0), Transaction::new(2, 1, 0, 0)],
            BpValuation::additive([(1, 3)]),
            Blockset::knapsack(2),
        )
        .unwrap();
        let m = Mechanism::tipless(5, Allocation::Consonant);
        let report = audit_approx_dsic_bound(
            &m,
            &[s],
            &Grid::new(1, 10).unwrap(),
            &AuditOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.witnesses.first());
        let check = &report.bound_checks[0];
        assert_eq!(check.nu, Money(3));
        assert!(check.max_regret > Money(0) && check.max_regret <= Money(3));
        assert_eq!(report.bound_checks[1].nu, Money(0));
        assert_eq!(report.bound_checks[1].max_regret, Money(0));
    }

    #[test]
    fn approx_bound_with_passive_bp_is_exact_dsic() {
        let s = passive(&[(1, 1), (2, 1)], 1);
        let m = Mechanism::tipless(3, Allocation::Consonant);
        let report = audit_approx_dsic_bound(
            &m,
            &[s],
            &Grid::new(1, 6).unwrap(),
            &AuditOptions::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_regret, Money(0));
        assert!(report.bound_checks.iter().all(|b| b.nu == Money(0)));
    }

    #[test]
    fn guardrail_requests_sampling() {
        let s = passive(&[(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (6, 1)], 6);
        let g = Grid::new(1, 2).unwrap();
        let err = audit_dsic(
            &Mechanism::Trivial,
            BiddingStrategy::Truthful,
            std::slice::from_ref(&s),
            &g,
            &AuditOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TfmError::GuardrailExceeded(_)));
        let opts = AuditOptions {
            sampling: Some(Sampling {
                seed: 3,
                samples: 10,
            }),
            ..AuditOptions::default()
        };
        let report = audit_dsic(
            &Mechanism::Trivial,
            BiddingStrategy::Truthful,
            &[s],
            &g,
            &opts,
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.cells_checked, 6 * 10 * 3);
    }

    #[test]
    fn welfare_ratio_and_beta() {
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 10, 10)],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        )
        .unwrap();
        let report = audit_welfare_ratio(
            &Mechanism::fpa(),
            BiddingStrategy::Truthful,
            std::slice::from_ref(&s),
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert_eq!(report.rows[0].ratio, Some(Rational::from_integer(1)));
        assert!(!check_beta_commensurate(&s, Rational::new(1, 2)).unwrap());

        let s = Scenario::new(
            vec![Transaction::new(1, 1, 10, 10)],
            BpValuation::Table(vec![(Block::empty(), Money(10))]),
            Blockset::knapsack(1),
        )
        .unwrap();
        assert!(check_beta_commensurate(&s, Rational::from_integer(1)).unwrap());
        assert!(!check_beta_commensurate(&s, Rational::new(11, 10)).unwrap());

        let empty = Scenario::new(
            vec![],
            BpValuation::Passive(Money(0)),
            Blockset::knapsack(1),
        )
        .unwrap();
        assert!(check_beta_commensurate(&empty, Rational::from_integer(3)).unwrap());
    }

    #[test]
    fn parallel_and_serial_reports_agree() {
        let s = Scenario::new(
            vec![Transaction::new(1, 1, 0, 0), Transaction::new(2, 2, 0, 0)],
            BpValuation::additive([(1, 2), (2, 1)]),
            Blockset::knapsack(2),
        )
        .unwrap();
        let m = Mechanism::eip1559(1, Allocation::Consonant);
        let g = Grid::new(1, 5).unwrap();
        let one = audit_dsic(
            &m,
            BiddingStrategy::CappedAtReserve(Money(1)),
            std::slice::from_ref(&s),
            &g,
            &AuditOptions::default(),
        )
        .unwrap();
        let four = audit_dsic(
            &m,
            BiddingStrategy::CappedAtReserve(Money(1)),
            &[s],
            &g,
            &AuditOptions {
                jobs: 4,
                ..AuditOptions::default()
            },
        )
        .unwrap();
        assert_eq!(one, four);
    }
}
