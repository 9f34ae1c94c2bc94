//! TOML scenario files.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [[transactions]]
//! id = 1
//! size = 1
//! valuation = 5
//! bid = 5          # optional, defaults to the valuation
//!
//! [bp_valuation]
//! kind = "additive"
//! per_tx = [{ id = 1, value = 3 }]
//!
//! [blockset]
//! kind = "knapsack"
//! max_total_size = 2
//!
//! [mechanism]
//! preset = "tipless"
//! base_fee = 2
//! allocation = "consonant"
//!
//! [grid]
//! step = 1
//! max_value = 20
//! ```
//!
//! Monetary fields are integers; the parser rejects anything fractional.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::Grid;
use crate::error::{Result, TfmError};
use crate::mechanisms::{Allocation, Eligibility, Mechanism};
use crate::model::{Block, Blockset, BpValuation, Scenario, Transaction, TxId};
use crate::money::Money;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub transactions: Vec<TxEntry>,
    pub bp_valuation: BpValuationEntry,
    pub blockset: BlocksetEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxEntry {
    pub id: u32,
    pub size: u64,
    pub valuation: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdValue {
    pub id: u32,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockValue {
    pub block: Vec<u32>,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BpValuationEntry {
    Passive {
        #[serde(default)]
        value: i64,
    },
    Additive {
        #[serde(default)]
        per_tx: Vec<IdValue>,
    },
    SingleMinded {
        targets: Vec<Vec<u32>>,
        value: i64,
    },
    Table {
        #[serde(default)]
        entries: Vec<BlockValue>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlocksetEntry {
    Explicit {
        blocks: Vec<Vec<u32>>,
    },
    Knapsack {
        max_total_size: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        candidates: Option<Vec<u32>>,
        #[serde(default)]
        enumerate_permutations: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismEntry {
    /// `fpa`, `eip1559`, `tipless` or `trivial`.
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_fee: Option<i64>,
    /// `free` or `base_fee_gated`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligibility: Option<String>,
    /// `standard` (alias `revenue_max` for fpa) or `consonant`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub step: i64,
    pub max_value: i64,
}

fn block(ids: &[u32]) -> Block {
    Block::from_ids(ids.iter().copied())
}

fn ids(block: &Block) -> Vec<u32> {
    block.ids().iter().map(|t| t.0).collect()
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| TfmError::InvalidScenario(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(TfmError::InvalidScenario(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TfmError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
            .map_err(|e| TfmError::InvalidScenario(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn from_scenario(
        scenario: &Scenario,
        mechanism: Option<&Mechanism>,
        grid: Option<&Grid>,
    ) -> Self {
        let transactions = scenario
            .transactions()
            .iter()
            .map(|t| TxEntry {
                id: t.id.0,
                size: t.size,
                valuation: t.valuation.0,
                bid: Some(t.bid.0),
            })
            .collect();
        let bp_valuation = match &scenario.bp_valuation {
            BpValuation::Passive(c) => BpValuationEntry::Passive { value: c.0 },
            BpValuation::Additive(mu) => BpValuationEntry::Additive {
                per_tx: mu
                    .iter()
                    .map(|(id, v)| IdValue {
                        id: id.0,
                        value: v.0,
                    })
                    .collect(),
            },
            BpValuation::SingleMinded { targets, value } => BpValuationEntry::SingleMinded {
                targets: targets.iter().map(ids).collect(),
                value: value.0,
            },
            BpValuation::Table(entries) => BpValuationEntry::Table {
                entries: entries
                    .iter()
                    .map(|(b, v)| BlockValue {
                        block: ids(b),
                        value: v.0,
                    })
                    .collect(),
            },
        };
        let blockset = match &scenario.blockset {
            Blockset::Explicit(blocks) => BlocksetEntry::Explicit {
                blocks: blocks.iter().map(ids).collect(),
            },
            Blockset::Knapsack {
                max_total_size,
                candidates,
                enumerate_permutations,
            } => BlocksetEntry::Knapsack {
                max_total_size: *max_total_size,
                candidates: candidates.as_ref().map(|c| c.iter().map(|t| t.0).collect()),
                enumerate_permutations: *enumerate_permutations,
            },
        };
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            seed: scenario.rng_seed,
            transactions,
            bp_valuation,
            blockset,
            mechanism: mechanism.map(MechanismEntry::from_mechanism),
            grid: grid.map(|g| GridEntry {
                step: g.step().0,
                max_value: g.max_value().0,
            }),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let transactions = self
            .transactions
            .iter()
            .map(|t| Transaction::new(t.id, t.size, t.valuation, t.bid.unwrap_or(t.valuation)))
            .collect();
        let bp_valuation = match &self.bp_valuation {
            BpValuationEntry::Passive { value } => BpValuation::Passive(Money(*value)),
            BpValuationEntry::Additive { per_tx } => {
                let mut seen = BTreeSet::new();
                for e in per_tx {
                    if !seen.insert(e.id) {
                        return Err(TfmError::InvalidScenario(format!(
                            "bp_valuation.per_tx lists id {} twice",
                            e.id
                        )));
                    }
                }
                BpValuation::additive(per_tx.iter().map(|e| (e.id, e.value)))
            }
            BpValuationEntry::SingleMinded { targets, value } => BpValuation::SingleMinded {
                targets: targets.iter().map(|b| block(b)).collect(),
                value: Money(*value),
            },
            BpValuationEntry::Table { entries } => BpValuation::Table(
                entries
                    .iter()
                    .map(|e| (block(&e.block), Money(e.value)))
                    .collect(),
            ),
        };
        let blockset = match &self.blockset {
            BlocksetEntry::Explicit { blocks } => {
                Blockset::Explicit(blocks.iter().map(|b| block(b)).collect())
            }
            BlocksetEntry::Knapsack {
                max_total_size,
                candidates,
                enumerate_permutations,
            } => Blockset::Knapsack {
                max_total_size: *max_total_size,
                candidates: candidates
                    .as_ref()
                    .map(|c| c.iter().map(|i| TxId(*i)).collect()),
                enumerate_permutations: *enumerate_permutations,
            },
        };
        Ok(Scenario::new(transactions, bp_valuation, blockset)?.with_seed(self.seed))
    }

    pub fn mechanism(&self) -> Result<Option<Mechanism>> {
        self.mechanism
            .as_ref()
            .map(|m| m.to_mechanism())
            .transpose()
    }

    pub fn grid(&self) -> Result<Option<Grid>> {
        self.grid
            .map(|g| Grid::new(g.step, g.max_value))
            .transpose()
    }
}

impl MechanismEntry {
    pub fn from_mechanism(m: &Mechanism) -> Self {
        let allocation = |a: Allocation| {
            Some(
                match a {
                    Allocation::Standard => "standard",
                    Allocation::Consonant => "consonant",
                }
                .to_string(),
            )
        };
        let eligibility = |e: Eligibility| {
            Some(
                match e {
                    Eligibility::Free => "free",
                    Eligibility::BaseFeeGated => "base_fee_gated",
                }
                .to_string(),
            )
        };
        match *m {
            Mechanism::Fpa { allocation: a } => MechanismEntry {
                preset: "fpa".into(),
                base_fee: None,
                eligibility: None,
                allocation: allocation(a),
            },
            Mechanism::Eip1559 {
                base_fee,
                eligibility: e,
                allocation: a,
            } => MechanismEntry {
                preset: "eip1559".into(),
                base_fee: Some(base_fee.0),
                eligibility: eligibility(e),
                allocation: allocation(a),
            },
            Mechanism::Tipless {
                base_fee,
                eligibility: e,
                allocation: a,
            } => MechanismEntry {
                preset: "tipless".into(),
                base_fee: Some(base_fee.0),
                eligibility: eligibility(e),
                allocation: allocation(a),
            },
            Mechanism::Trivial => MechanismEntry {
                preset: "trivial".into(),
                base_fee: None,
                eligibility: None,
                allocation: None,
            },
        }
    }

    pub fn to_mechanism(&self) -> Result<Mechanism> {
        parse_mechanism(
            &self.preset,
            self.base_fee,
            self.eligibility.as_deref(),
            self.allocation.as_deref(),
        )
    }
}

/// Builds a preset from its textual parts, as used in scenario files and on
/// the command line.
pub fn parse_mechanism(
    preset: &str,
    base_fee: Option<i64>,
    eligibility: Option<&str>,
    allocation: Option<&str>,
) -> Result<Mechanism> {
    let bad = |msg: String| TfmError::InvalidScenario(msg);
    let allocation = match allocation.unwrap_or("standard") {
        "standard" => Allocation::Standard,
        "revenue_max" if preset == "fpa" => Allocation::Standard,
        "consonant" => Allocation::Consonant,
        other => return Err(bad(format!("unknown allocation {other:?}"))),
    };
    let eligibility = match eligibility.unwrap_or("free") {
        "free" => Eligibility::Free,
        "base_fee_gated" => Eligibility::BaseFeeGated,
        other => return Err(bad(format!("unknown eligibility {other:?}"))),
    };
    let fee = || -> Result<Money> {
        match base_fee {
            Some(r) if r >= 0 => Ok(Money(r)),
            Some(r) => Err(bad(format!("base_fee {r} must be non-negative"))),
            None => Err(bad(format!("preset {preset:?} needs a base_fee"))),
        }
    };
    Ok(match preset {
        "fpa" => Mechanism::Fpa { allocation },
        "eip1559" => Mechanism::Eip1559 {
            base_fee: fee()?,
            eligibility,
            allocation,
        },
        "tipless" => Mechanism::Tipless {
            base_fee: fee()?,
            eligibility,
            allocation,
        },
        "trivial" => Mechanism::Trivial,
        other => {
            return Err(bad(format!(
                "unknown preset {other:?} (expected fpa, eip1559, tipless or trivial)"
            )))
        }
    })
}

/// Short stable identifier of a scenario: the first 12 hex digits of the
/// SHA-256 of its canonical file form.
pub fn scenario_digest(scenario: &Scenario) -> String {
    let text = ScenarioFile::from_scenario(scenario, None, None).to_toml();
    let hash = Sha256::digest(text.as_bytes());
    format!("{hash:x}")[..12].to_string()
}
