//! CSV report files.
//!
//! An audit writes one row per witness to the main file and a one-row
//! summary next to it. Rows are already sorted by the auditor, and nothing
//! time-dependent is written, so reruns are byte-identical.

use std::io::{Read, Write};
use std::str::FromStr;

use crate::audit::{AuditReport, WelfareReport, Witness, WitnessKind};
use crate::error::{Result, TfmError};
use crate::mechanisms::BidVector;
use crate::model::{Block, TxId};
use crate::money::Money;

pub const WITNESS_HEADER: [&str; 10] = [
    "scenario_digest",
    "kind",
    "tx_id",
    "valuation",
    "recommended_bid",
    "deviation_bid",
    "utility_gain",
    "bids",
    "recommended_block",
    "deviation_block",
];

fn io(e: impl std::fmt::Display) -> TfmError {
    TfmError::InvalidScenario(format!("report I/O: {e}"))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_witnesses<W: Write>(out: W, report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WITNESS_HEADER).map_err(io)?;
    for x in &report.witnesses {
        w.write_record([
            x.scenario_digest.clone(),
            x.kind.as_str().to_string(),
            x.tx_id.to_string(),
            opt(x.valuation),
            x.recommended_bid.to_string(),
            opt(x.deviation_bid),
            x.utility_gain.to_string(),
            x.bids.to_string(),
            x.recommended_block.to_string(),
            opt(x.deviation_block.as_ref()),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_summary<W: Write>(out: W, report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "audit",
        "verdict",
        "max_regret",
        "cells_checked",
        "cells_skipped",
        "witnesses",
        "sampling_seed",
        "samples",
        "semantics",
    ])
    .map_err(io)?;
    w.write_record([
        report.kind.as_str().to_string(),
        report.verdict.to_string(),
        report.max_regret.to_string(),
        report.cells_checked.to_string(),
        report.cells_skipped.to_string(),
        report.witnesses.len().to_string(),
        opt(report.sampling.map(|s| s.seed)),
        opt(report.sampling.map(|s| s.samples)),
        report.semantics(),
    ])
    .map_err(io)?;
    w.flush().map_err(io)
}

pub fn write_bound_checks<W: Write>(out: W, report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario_digest",
        "tx_id",
        "nu",
        "max_regret",
        "deviation_within_bound",
    ])
    .map_err(io)?;
    for b in &report.bound_checks {
        w.write_record([
            b.scenario_digest.clone(),
            b.tx_id.to_string(),
            b.nu.to_string(),
            b.max_regret.to_string(),
            b.deviation_within_bound.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_welfare<W: Write>(out: W, report: &WelfareReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario_digest",
        "recommended",
        "optimal",
        "recommended_welfare",
        "optimal_welfare",
        "ratio",
        "degenerate",
    ])
    .map_err(io)?;
    for r in &report.rows {
        w.write_record([
            r.scenario_digest.clone(),
            r.recommended.to_string(),
            r.optimal.to_string(),
            r.recommended_welfare.to_string(),
            r.optimal_welfare.to_string(),
            opt(r.ratio),
            r.degenerate.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parses a block written as `[1 2 3]`.
pub fn parse_block(s: &str) -> Result<Block> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| TfmError::InvalidScenario(format!("malformed block {s:?}")))?;
    inner
        .split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map(TxId)
                .map_err(|e| TfmError::InvalidScenario(format!("malformed block {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Block)
}

/// Parses a bid vector written as `1:5;2:3`.
pub fn parse_bids(s: &str) -> Result<BidVector> {
    let bad = |why: String| TfmError::InvalidScenario(format!("malformed bids {s:?}: {why}"));
    if s.trim().is_empty() {
        return Ok(BidVector::default());
    }
    s.split(';')
        .map(|pair| {
            let (id, bid) = pair
                .split_once(':')
                .ok_or_else(|| bad(format!("missing ':' in {pair:?}")))?;
            let id = id.trim().parse::<u32>().map_err(|e| bad(e.to_string()))?;
            let bid = bid.trim().parse::<i64>().map_err(|e| bad(e.to_string()))?;
            Ok((TxId(id), Money(bid)))
        })
        .collect::<Result<Vec<_>>>()
        .map(BidVector::from_pairs)
}

impl FromStr for WitnessKind {
    type Err = TfmError;

    fn from_str(s: &str) -> Result<Self> {
        [
            WitnessKind::Dsic,
            WitnessKind::Bpic,
            WitnessKind::BpicTieBreak,
            WitnessKind::Overbid,
            WitnessKind::Underbid,
            WitnessKind::RegretAboveBound,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| TfmError::InvalidScenario(format!("unknown witness kind {s:?}")))
    }
}

/// Reads witness rows back for replay. `scenario_index` is not stored and
/// comes back as 0.
pub fn read_witnesses<R: Read>(input: R) -> Result<Vec<Witness>> {
    let mut r = csv::Reader::from_reader(input);
    let money = |s: &str| -> Result<Money> {
        s.parse::<i64>()
            .map(Money)
            .map_err(|e| TfmError::InvalidScenario(format!("malformed amount {s:?}: {e}")))
    };
    let opt_money = |s: &str| -> Result<Option<Money>> {
        if s.is_empty() {
            Ok(None)
        } else {
            money(s).map(Some)
        }
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(io)?;
        if row.len() != WITNESS_HEADER.len() {
            return Err(TfmError::InvalidScenario(format!(
                "witness row has {} fields, expected {}",
                row.len(),
                WITNESS_HEADER.len()
            )));
        }
        out.push(Witness {
            scenario_digest: row[0].to_string(),
            scenario_index: 0,
            kind: row[1].parse()?,
            tx_id: TxId(
                row[2]
                    .parse()
                    .map_err(|e| TfmError::InvalidScenario(format!("malformed tx id: {e}")))?,
            ),
            valuation: opt_money(&row[3])?,
            recommended_bid: money(&row[4])?,
            deviation_bid: opt_money(&row[5])?,
            utility_gain: money(&row[6])?,
            bids: parse_bids(&row[7])?,
            recommended_block: parse_block(&row[8])?,
            deviation_block: if row[9].is_empty() {
                None
            } else {
                Some(parse_block(&row[9])?)
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{AuditKind, Verdict};

    fn report() -> AuditReport {
        AuditReport {
            kind: AuditKind::Dsic,
            verdict: Verdict::Fail,
            max_regret: Money(2),
            witnesses: vec![Witness {
                scenario_digest: "abc".into(),
                scenario_index: 0,
                kind: WitnessKind::Underbid,
                tx_id: TxId(1),
                valuation: Some(Money(4)),
                recommended_bid: Money(2),
                deviation_bid: Some(Money(0)),
                utility_gain: Money(2),
                bids: BidVector::from_ids([(1, 2), (2, 3)]),
                recommended_block: Block::from_ids([1, 2]),
                deviation_block: Some(Block::empty()),
            }],
            cells_checked: 10,
            cells_skipped: 1,
            bound_checks: Vec::new(),
            sampling: None,
        }
    }

    #[test]
    fn witnesses_round_trip() {
        let r = report();
        let mut buf = Vec::new();
        write_witnesses(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario_digest,kind,tx_id,valuation"));
        assert!(text.contains("abc,underbid,1,4,2,0,2,1:2;2:3,[1 2],[]"));
        assert_eq!(read_witnesses(&buf[..]).unwrap(), r.witnesses);
    }

    #[test]
    fn summary_row() {
        let mut buf = Vec::new();
        write_summary(&mut buf, &report()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "dsic,FAIL,2,10,1,1,,,1 replayable witness(es)"
        );
    }

    #[test]
    fn parsers_reject_garbage() {
        assert!(parse_block("1 2").is_err());
        assert!(parse_bids("1=2").is_err());
        assert_eq!(parse_block("[]").unwrap(), Block::empty());
    }
}
