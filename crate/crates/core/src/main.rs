//! `tfm-lab` command-line front end.
//!
//! Exit codes: 0 PASS, 1 FAIL (witnesses found), 2 usage or I/O error,
//! 3 enumeration budget exceeded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tfm_lab::audit::{
    audit_approx_dsic_bound, audit_bpic, audit_dsic, audit_dsic_at_bids, audit_welfare_ratio,
    check_beta_commensurate, replay_bpic_witness, replay_user_witness, AuditOptions, AuditReport,
    Grid, Sampling, WitnessKind,
};
use tfm_lab::constructions::{
    construct_thm1, construct_thm1_single_minded, construct_thm3, eip1559_underbid_demo,
    DemoParams, Thm1Witness,
};
use tfm_lab::generator::{generate_file, BpKind, GenParams};
use tfm_lab::money::parse_rational;
use tfm_lab::report;
use tfm_lab::scenario_file::{parse_mechanism, scenario_digest, ScenarioFile};
use tfm_lab::{
    BiddingStrategy, Blockset, BpValuation, Mechanism, Money, Rational, Scenario, TfmError,
    Transaction, DEFAULT_BUDGET,
};

#[derive(Parser)]
#[command(
    name = "tfm-lab",
    version,
    about = "Audit transaction fee mechanisms against active block producers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an incentive or welfare audit over scenario files.
    Audit(AuditArgs),
    /// Build an adversarial scenario and write it as replayable files.
    Counterexample(CounterexampleArgs),
    /// Generate a seeded random scenario file.
    Gen(GenArgs),
    /// Welfare ratios, optionally against the beta / (beta + 1) bound.
    Welfare(WelfareArgs),
    /// Re-simulate witness rows of an audit report.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditKindArg {
    Dsic,
    Bpic,
    ApproxDsic,
    Welfare,
}

#[derive(Args, Clone)]
struct MechArgs {
    /// Preset: fpa, eip1559, tipless or trivial. Defaults to the files' [mechanism].
    #[arg(long)]
    mech: Option<String>,
    #[arg(long)]
    base_fee: Option<i64>,
    /// standard (revenue_max for fpa) or consonant.
    #[arg(long)]
    allocation: Option<String>,
    /// free or base_fee_gated.
    #[arg(long)]
    eligibility: Option<String>,
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long)]
    grid_step: Option<i64>,
    #[arg(long)]
    grid_max: Option<i64>,
}

#[derive(Args)]
struct AuditArgs {
    kind: AuditKindArg,
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    mech: MechArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Bidding strategy: truthful, capped:R or offset:D. Defaults to the
    /// preset's recommended strategy.
    #[arg(long)]
    strategy: Option<BiddingStrategy>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, env = "TFMLAB_BUDGET", default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Sample N bid profiles per transaction instead of enumerating them.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Audit only the cell given by each file's own valuations and bids.
    #[arg(long)]
    at_bids: bool,
    /// Witness CSV path; the summary goes to <stem>.summary.csv beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print wall time to stderr.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CounterexampleKind {
    Thm1,
    Thm1Sm,
    Thm3,
    Eip1559Demo,
}

#[derive(Args)]
struct CounterexampleArgs {
    kind: CounterexampleKind,
    #[command(flatten)]
    mech: MechArgs,
    /// Input scenario for thm1 / thm1-sm; its own bids are used.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Welfare ratio target as p/q.
    #[arg(long, default_value = "1/10")]
    rho: String,
    #[arg(long, default_value_t = 3)]
    valuation: i64,
    #[arg(long, default_value_t = 1)]
    underbid: i64,
    #[arg(long, default_value_t = 2)]
    mu: i64,
    #[arg(long, default_value_t = 1)]
    size: u64,
    /// Output directory for scenario files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    n_tx: usize,
    #[arg(long, default_value = "additive")]
    bp: BpKind,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    mech: MechArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WelfareArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    mech: MechArgs,
    #[arg(long)]
    strategy: Option<BiddingStrategy>,
    /// Also check beta-commensurability and the beta / (beta + 1) bound.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long, env = "TFMLAB_BUDGET", default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Witness CSV written by `audit`.
    #[arg(long)]
    witnesses: PathBuf,
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    mech: MechArgs,
}

enum Failure {
    Tfm(TfmError),
    Usage(String),
}

impl From<TfmError> for Failure {
    fn from(e: TfmError) -> Self {
        Failure::Tfm(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Counterexample(a) => cmd_counterexample(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Welfare(a) => cmd_welfare(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Tfm(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                TfmError::BudgetExceeded { .. } => 3,
                TfmError::NotDsicCaseC2 { .. } => 1,
                _ => 2,
            })
        }
    }
}

fn load(files: &[PathBuf]) -> Result<Vec<ScenarioFile>, Failure> {
    files
        .iter()
        .map(|p| ScenarioFile::load(p).map_err(Failure::from))
        .collect()
}

fn scenarios(files: &[ScenarioFile]) -> Result<Vec<Scenario>, Failure> {
    files
        .iter()
        .map(|f| f.scenario().map_err(Failure::from))
        .collect()
}

fn resolve_mechanism(args: &MechArgs, files: &[ScenarioFile]) -> Result<Mechanism, Failure> {
    if let Some(preset) = &args.mech {
        return Ok(parse_mechanism(
            preset,
            args.base_fee,
            args.eligibility.as_deref(),
            args.allocation.as_deref(),
        )?);
    }
    let mut found: Option<Mechanism> = None;
    for f in files {
        let entry = f.mechanism.as_ref().ok_or_else(|| {
            Failure::Usage("no mechanism: pass --mech or add a [mechanism] table".into())
        })?;
        // Individual flags override the file's fields.
        let m = parse_mechanism(
            &entry.preset,
            args.base_fee.or(entry.base_fee),
            args.eligibility.as_deref().or(entry.eligibility.as_deref()),
            args.allocation.as_deref().or(entry.allocation.as_deref()),
        )?;
        match found {
            Some(prev) if prev != m => {
                return Err(Failure::Usage(format!(
                    "files disagree on the mechanism ({prev} vs {m}); pass --mech"
                )))
            }
            _ => found = Some(m),
        }
    }
    found.ok_or_else(|| Failure::Usage("no mechanism given".into()))
}

fn resolve_grid(args: &GridArgs, files: &[ScenarioFile]) -> Result<Grid, Failure> {
    let from_file = match files.first() {
        Some(f) => f.grid()?,
        None => None,
    };
    let base = from_file.unwrap_or_default();
    Ok(Grid::new(
        args.grid_step.unwrap_or(base.step().0),
        args.grid_max.unwrap_or(base.max_value().0),
    )?)
}

/// `dir/stem.csv` -> `dir/stem.<tag>.csv`.
fn sibling(out: &Path, tag: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}.{tag}.csv"))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> tfm_lab::Result<()>,
) -> Result<(), Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

fn emit_report(report: &AuditReport, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            write_file(path, |b| report::write_witnesses(b, report))?;
            write_file(&sibling(path, "summary"), |b| {
                report::write_summary(b, report)
            })?;
            if !report.bound_checks.is_empty() {
                write_file(&sibling(path, "bounds"), |b| {
                    report::write_bound_checks(b, report)
                })?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            report::write_witnesses(&mut lock, report)?;
            if !report.bound_checks.is_empty() {
                writeln!(lock)?;
                report::write_bound_checks(&mut lock, report)?;
            }
        }
    }
    eprintln!(
        "{}: {} (cells checked {}, skipped {}, max regret {})",
        report.verdict,
        report.semantics(),
        report.cells_checked,
        report.cells_skipped,
        report.max_regret
    );
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> CliResult {
    let start = Instant::now();
    let files = load(&a.files)?;
    let list = scenarios(&files)?;
    if let AuditKindArg::Welfare = a.kind {
        let mech = resolve_mechanism(&a.mech, &files)?;
        let strategy = a
            .strategy
            .unwrap_or(BiddingStrategy::recommended_for(&mech));
        return welfare_output(&mech, strategy, &list, None, a.budget, a.out.as_deref());
    }
    let mech = resolve_mechanism(&a.mech, &files)?;
    let grid = resolve_grid(&a.grid, &files)?;
    let strategy = a
        .strategy
        .unwrap_or(BiddingStrategy::recommended_for(&mech));
    let opts = AuditOptions {
        budget: a.budget,
        jobs: a.jobs,
        sampling: a.sample.map(|samples| Sampling {
            seed: a.seed,
            samples,
        }),
        ..AuditOptions::default()
    };
    let report = match a.kind {
        AuditKindArg::Dsic if a.at_bids => {
            audit_dsic_at_bids(&mech, strategy, &list, &grid, &opts)?
        }
        AuditKindArg::Dsic => audit_dsic(&mech, strategy, &list, &grid, &opts)?,
        AuditKindArg::Bpic => audit_bpic(&mech, &list, &grid, &opts)?,
        AuditKindArg::ApproxDsic => audit_approx_dsic_bound(&mech, &list, &grid, &opts)?,
        AuditKindArg::Welfare => unreachable!(),
    };
    emit_report(&report, a.out.as_deref())?;
    if a.timing {
        eprintln!("wall_time_ms: {}", start.elapsed().as_millis());
    }
    Ok(if report.passed() { 0 } else { 1 })
}

fn welfare_output(
    mech: &Mechanism,
    strategy: BiddingStrategy,
    list: &[Scenario],
    beta: Option<Rational>,
    budget: usize,
    out: Option<&Path>,
) -> CliResult {
    let report = audit_welfare_ratio(mech, strategy, list, budget)?;
    let mut text = Vec::new();
    report::write_welfare(&mut text, &report)?;
    let mut code = 0;
    if let Some(beta) = beta {
        let bound = beta / (beta + Rational::from_integer(1));
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Failure::Usage(e.to_string());
        w.write_record([
            "scenario_digest",
            "beta",
            "commensurate",
            "ratio",
            "bound",
            "bound_holds",
        ])
        .map_err(io)?;
        for (s, row) in list.iter().zip(&report.rows) {
            let commensurate = check_beta_commensurate(s, beta)?;
            let holds = !commensurate || row.ratio.is_some_and(|r| r >= bound);
            if !holds {
                code = 1;
            }
            w.write_record([
                row.scenario_digest.clone(),
                beta.to_string(),
                commensurate.to_string(),
                row.ratio.map(|r| r.to_string()).unwrap_or_default(),
                bound.to_string(),
                holds.to_string(),
            ])
            .map_err(io)?;
        }
        text.push(b'\n');
        text.extend(w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?);
    }
    match out {
        Some(path) => write_file(path, |b| {
            b.extend_from_slice(&text);
            Ok(())
        })?,
        None => std::io::stdout().write_all(&text)?,
    }
    if let Some(min) = report.min_ratio() {
        eprintln!(
            "minimum welfare ratio {min} over {} scenario(s)",
            report.rows.len()
        );
    }
    Ok(code)
}

fn cmd_welfare(a: WelfareArgs) -> CliResult {
    let files = load(&a.files)?;
    let list = scenarios(&files)?;
    let mech = resolve_mechanism(&a.mech, &files)?;
    let strategy = a
        .strategy
        .unwrap_or(BiddingStrategy::recommended_for(&mech));
    let beta = a
        .beta
        .as_deref()
        .map(parse_rational)
        .transpose()
        .map_err(Failure::Usage)?;
    if beta.is_some_and(|b| b <= Rational::from_integer(0)) {
        return Err(Failure::Usage("beta must be positive".into()));
    }
    welfare_output(&mech, strategy, &list, beta, a.budget, a.out.as_deref())
}

fn write_scenario(
    dir: Option<&Path>,
    name: &str,
    scenario: &Scenario,
    mech: &Mechanism,
    header: &str,
) -> Result<(), Failure> {
    let body = ScenarioFile::from_scenario(scenario, Some(mech), None).to_toml();
    let commented: String = header.lines().map(|l| format!("# {l}\n")).collect();
    let text = format!("{commented}\n{body}");
    match dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => println!("--- {name}\n{text}"),
    }
    Ok(())
}

fn default_charged_scenario() -> Scenario {
    Scenario::new(
        vec![Transaction::new(1, 1, 5, 5)],
        BpValuation::Passive(Money::ZERO),
        Blockset::knapsack(1),
    )
    .expect("static scenario is valid")
}

fn cmd_counterexample(a: CounterexampleArgs) -> CliResult {
    let dir = a.out.as_deref();
    match a.kind {
        CounterexampleKind::Thm1 | CounterexampleKind::Thm1Sm => {
            let scenario = match &a.file {
                Some(p) => ScenarioFile::load(p)?.scenario()?,
                None => default_charged_scenario(),
            };
            let preset = a.mech.mech.as_deref().unwrap_or("fpa");
            let mech = parse_mechanism(
                preset,
                a.mech.base_fee,
                a.mech.eligibility.as_deref(),
                Some(a.mech.allocation.as_deref().unwrap_or("consonant")),
            )?;
            let bids = scenario.bids();
            let w: Thm1Witness = if matches!(a.kind, CounterexampleKind::Thm1) {
                construct_thm1(&mech, &scenario, &bids)?
            } else {
                construct_thm1_single_minded(&mech, &scenario, &bids)?
            };
            let narrative = w.narrative();
            print!("{narrative}");
            write_scenario(
                dir,
                "truthful.toml",
                &w.truthful_scenario(),
                &mech,
                &narrative,
            )?;
            write_scenario(
                dir,
                "deviation.toml",
                &w.deviation_scenario(),
                &mech,
                &narrative,
            )?;
            Ok(0)
        }
        CounterexampleKind::Thm3 => {
            let rho = parse_rational(&a.rho).map_err(Failure::Usage)?;
            if rho <= Rational::from_integer(0) || rho > Rational::from_integer(1) {
                return Err(Failure::Usage(format!("rho must lie in (0, 1], got {rho}")));
            }
            let mech = match &a.mech.mech {
                Some(p) => parse_mechanism(
                    p,
                    a.mech.base_fee,
                    a.mech.eligibility.as_deref(),
                    a.mech.allocation.as_deref(),
                )?,
                None => Mechanism::Trivial,
            };
            let t = construct_thm3(&mech, rho)?;
            let narrative = t.narrative();
            print!("{narrative}");
            write_scenario(dir, "welfare.toml", &t.scenario, &mech, &narrative)?;
            Ok(0)
        }
        CounterexampleKind::Eip1559Demo => {
            let params = DemoParams {
                base_fee: Money(a.mech.base_fee.unwrap_or(2)),
                size: a.size,
                valuation: Money(a.valuation),
                underbid: Money(a.underbid),
                mu: Money(a.mu),
            };
            if params.size == 0
                || params.valuation.is_negative()
                || params.underbid.is_negative()
                || params.mu.is_negative()
                || params.base_fee.is_negative()
            {
                return Err(Failure::Usage(
                    "demo parameters must be non-negative, size positive".into(),
                ));
            }
            let demo = eip1559_underbid_demo(params)?;
            let narrative = demo.narrative();
            print!("{narrative}");
            let mech = Mechanism::eip1559(params.base_fee.0, tfm_lab::Allocation::Consonant);
            for (i, w) in demo.worlds.iter().enumerate() {
                write_scenario(
                    dir,
                    &format!("world{}.toml", i + 1),
                    &w.scenario,
                    &mech,
                    &narrative,
                )?;
            }
            Ok(0)
        }
    }
}

fn cmd_gen(a: GenArgs) -> CliResult {
    let grid = resolve_grid(&a.grid, &[])?;
    let mech = match &a.mech.mech {
        Some(p) => Some(parse_mechanism(
            p,
            a.mech.base_fee,
            a.mech.eligibility.as_deref(),
            a.mech.allocation.as_deref(),
        )?),
        None => None,
    };
    let params = GenParams {
        n_tx: a.n_tx,
        grid,
        bp_kind: a.bp,
    };
    let text = generate_file(a.seed, &params, mech.as_ref())?;
    // Self-check: the emitted file must parse back to a valid scenario.
    ScenarioFile::parse(&text)?.scenario()?;
    match &a.out {
        Some(path) => write_file(path, |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        })?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_replay(a: ReplayArgs) -> CliResult {
    let files = load(&a.files)?;
    let list = scenarios(&files)?;
    let mech = resolve_mechanism(&a.mech, &files)?;
    let rows = report::read_witnesses(fs::File::open(&a.witnesses)?)?;
    let mut code = 0;
    println!("scenario_digest,kind,tx_id,stated_gain,replayed_gain,match");
    for w in rows {
        let Some(s) = list
            .iter()
            .find(|s| scenario_digest(s) == w.scenario_digest)
        else {
            return Err(Failure::Usage(format!(
                "no scenario file has digest {}",
                w.scenario_digest
            )));
        };
        let replayed = match w.kind {
            WitnessKind::Bpic | WitnessKind::BpicTieBreak => replay_bpic_witness(&mech, s, &w)?,
            _ => replay_user_witness(&mech, s, &w)?,
        };
        let ok = replayed == w.utility_gain;
        if !ok {
            code = 1;
        }
        println!(
            "{},{},{},{},{},{}",
            w.scenario_digest,
            w.kind.as_str(),
            w.tx_id,
            w.utility_gain,
            replayed,
            ok
        );
    }
    Ok(code)
}
