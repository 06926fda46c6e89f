//! Batch front end: `shadowprice <command> --scenario <path> [--seed N] [--grid N] [--out <path>]`.
//!
//! Exit status: 0 success, 1 validation failure, 2 bad input or violated
//! precondition, 3 internal invariant breach.

pub mod format;
pub mod scenario;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::market::{NodeIndex, PathWord};
use crate::oracle::{self, TradeGrid};
use crate::price_system::{self, DEFAULT_TOL};
use crate::superhedge;
use crate::utility::{self, DEFAULT_GRID_SIZE};
use crate::{MarketParams, PowerUtility, PriceSystemTree};

use format::{num, Table};
use scenario::{Scenario, SweepTarget, UtilitySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

/// Default `V̂` grid inside `sweep`, which solves one recursion per cell.
const SWEEP_UTILITY_GRID: usize = 201;

#[derive(Debug, Parser)]
#[command(name = "shadowprice", version, about = "Super-replication and power-utility optimization under proportional costs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (`section.key = value` lines).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.grid`.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Write the table here instead of after the summary on stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleTarget {
    Price,
    Utility,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Superhedging price and the `W` surface.
    Price(Common),
    /// Power-utility value and the `V̂` curves.
    Utility(Common),
    /// Generate a price system from a seed (or load `run.tree`) and validate it.
    ValidatePs(Common),
    /// Compare the recursion against its brute-force oracle.
    OracleCompare {
        target: OracleTarget,
        #[command(flatten)]
        common: Common,
    },
    /// Value over a grid of `(λ₀, λ₁)`.
    Sweep(Common),
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvariantBreach(_) | Error::Solver(_) => EXIT_INVARIANT,
            _ => EXIT_PRECONDITION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

struct Output {
    summary: String,
    table: Table,
    code: i32,
}

impl Output {
    fn new(table: Table) -> Self {
        Self {
            summary: String::new(),
            table,
            code: EXIT_OK,
        }
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }
}

/// Parses `argv` (including the program name) and runs one command.
pub fn run_command<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PRECONDITION } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    let common = match &cli.command {
        Command::Price(c) | Command::Utility(c) | Command::ValidatePs(c) | Command::Sweep(c) => c,
        Command::OracleCompare { common, .. } => common,
    };
    let result = load(common).and_then(|scenario| dispatch(&cli.command, &scenario, common));
    match result {
        Ok(out) => {
            let _ = write!(stdout, "{}", out.summary);
            match &common.out {
                Some(path) => {
                    if let Err(e) = fs::write(path, out.table.as_str()) {
                        let _ = writeln!(stderr, "error: cannot write {}: {e}", path.display());
                        return EXIT_PRECONDITION;
                    }
                }
                None => {
                    let _ = write!(stdout, "\n{}", out.table.as_str());
                }
            }
            out.code
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(&common.scenario)
        .map_err(|e| fail(EXIT_PRECONDITION, format!("cannot read {}: {e}", common.scenario.display())))?;
    let mut scenario = Scenario::parse(&text)
        .map_err(|e| fail(EXIT_PRECONDITION, format!("{}: {e}", common.scenario.display())))?;
    if let Some(seed) = common.seed {
        scenario.run.seed = seed;
    }
    if let Some(grid) = common.grid {
        if grid < 3 {
            return Err(fail(EXIT_PRECONDITION, format!("--grid {grid}: must be at least 3")));
        }
        scenario.run.grid = Some(grid);
    }
    Ok(scenario)
}

fn dispatch(command: &Command, scenario: &Scenario, common: &Common) -> Result<Output, Failure> {
    match command {
        Command::Price(_) => cmd_price(scenario),
        Command::Utility(_) => cmd_utility(scenario),
        Command::ValidatePs(_) => cmd_validate(scenario, common),
        Command::OracleCompare { target, .. } => match target {
            OracleTarget::Price => cmd_compare_price(scenario),
            OracleTarget::Utility => cmd_compare_utility(scenario),
        },
        Command::Sweep(_) => cmd_sweep(scenario),
    }
}

fn utility_spec(scenario: &Scenario) -> Result<(UtilitySpec, PowerUtility), Failure> {
    let spec = scenario
        .utility
        .ok_or_else(|| fail(EXIT_PRECONDITION, "scenario has no utility section (utility.gamma)"))?;
    Ok((spec, PowerUtility::new(spec.gamma)?))
}

fn cmd_price(scenario: &Scenario) -> Result<Output, Failure> {
    let params = &scenario.market;
    let payoff = scenario.payoff.build(params)?;
    let (pi, surface) = superhedge::price(params, &payoff)?;
    let mut table = Table::new(&["k", "j", "S[currency]", "A[currency]", "W[currency]"]);
    for (k, level) in surface.levels().iter().enumerate() {
        for (j, w) in level.iter().enumerate() {
            let s = params.stock_price(NodeIndex::new(k, j));
            for &(a, v) in w.breakpoints() {
                table.row(&[k.to_string(), j.to_string(), num(s), num(a), num(v)]);
            }
        }
    }
    let (a_star, _) = surface.at(NodeIndex::new(0, 0)).argmax();
    let mut out = Output::new(table);
    out.line(format!("superhedging price: {}", num(pi)));
    out.line(format!("worst-case shadow price at t=0: {}", num(a_star)));
    Ok(out)
}

fn cmd_utility(scenario: &Scenario) -> Result<Output, Failure> {
    let params = &scenario.market;
    let (spec, putil) = utility_spec(scenario)?;
    let grid = scenario.run.grid.unwrap_or(DEFAULT_GRID_SIZE);
    let curves = utility::vhat_recursion(params, &putil, grid)?;
    check_vhat(params, &curves)?;
    let value = utility::value_function(spec.x0, spec.x1, params, &putil, &curves[0])?;
    let mut table = Table::new(&["k", "A[ratio]", "vhat[1]"]);
    for curve in &curves {
        for (a, v) in curve.grid().iter().zip(curve.values()) {
            table.row(&[curve.k.to_string(), num(*a), num(*v)]);
        }
    }
    let mut out = Output::new(table);
    out.line(format!("value: {}", num(value)));
    let flat = utility::flat_region_bounds(params, 0);
    if flat.is_empty() {
        out.line("flat region at t=0: empty");
    } else {
        out.line(format!("flat region at t=0: [{}, {}]", num(flat.lo), num(flat.hi)));
    }
    if let Ok(hold) = utility::hold_policy_value(spec.x0, spec.x1, params, &putil) {
        out.line(format!("hold policy value: {}", num(hold)));
    }
    Ok(out)
}

/// Structural checks on the dual curves; a failure is an invariant breach.
fn check_vhat(params: &MarketParams, curves: &[crate::VhatCurve]) -> Result<(), Failure> {
    let tol = 1e-9;
    let direction = utility::drift_direction(params);
    for curve in curves {
        let v = curve.values();
        if let Some(x) = v.iter().find(|x| **x < 1.0 - tol) {
            return Err(fail(EXIT_INVARIANT, format!("vhat_{} = {x} below 1", curve.k)));
        }
        let breach = v.windows(2).any(|w| match direction {
            utility::Drift::Up => w[1] > w[0] + tol,
            utility::Drift::Down => w[1] < w[0] - tol,
            utility::Drift::Neutral => false,
        });
        if breach {
            return Err(fail(EXIT_INVARIANT, format!("vhat_{} is not monotone in A", curve.k)));
        }
    }
    for pair in curves.windows(2) {
        if pair[0].values().iter().zip(pair[1].values()).any(|(a, b)| *a < *b - tol) {
            return Err(fail(EXIT_INVARIANT, format!("vhat_{} < vhat_{}", pair[0].k, pair[1].k)));
        }
    }
    Ok(())
}

fn tree_table(tree: &PriceSystemTree) -> Table {
    let mut table = Table::new(&["path", "rho0[1]", "rho1[currency]", "A[currency]"]);
    for (word, node) in tree.iter_nodes() {
        let label = if word.is_empty() { "-".to_string() } else { word.to_string() };
        table.row(&[label, num(node.rho0), num(node.rho1), num(node.a)]);
    }
    table
}

fn read_tree(path: &Path, params: &MarketParams) -> Result<PriceSystemTree, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_PRECONDITION, format!("cannot read {}: {e}", path.display())))?;
    let horizon = params.horizon;
    let mut levels: Vec<Vec<Option<(f64, f64)>>> = (0..=horizon).map(|k| vec![None; 1 << k]).collect();
    for (i, line) in text.lines().enumerate().skip(1) {
        let at = |msg: String| fail(EXIT_PRECONDITION, format!("{}: line {}: {msg}", path.display(), i + 1));
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 3 {
            return Err(at(format!("expected path,rho0,rho1 but found '{line}'")));
        }
        let word: PathWord = if cells[0] == "-" {
            PathWord::root()
        } else {
            cells[0].parse().map_err(|e: Error| at(e.to_string()))?
        };
        if word.len() > horizon {
            return Err(at(format!("path {word} longer than the horizon {horizon}")));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| at(format!("cannot parse '{s}'")));
        let slot = &mut levels[word.len()][word.index()];
        if slot.is_some() {
            return Err(at(format!("path {} listed twice", cells[0])));
        }
        *slot = Some((parse(cells[1])?, parse(cells[2])?));
    }
    let mut dense = Vec::with_capacity(levels.len());
    for (k, level) in levels.into_iter().enumerate() {
        let mut row = Vec::with_capacity(level.len());
        for (i, node) in level.into_iter().enumerate() {
            row.push(node.ok_or_else(|| {
                fail(
                    EXIT_PRECONDITION,
                    format!("{}: missing node {}", path.display(), PathWord::from_index(k, i)),
                )
            })?);
        }
        dense.push(row);
    }
    Ok(PriceSystemTree::from_densities(params, dense)?)
}

fn cmd_validate(scenario: &Scenario, common: &Common) -> Result<Output, Failure> {
    let params = &scenario.market;
    let (tree, origin) = match &scenario.run.tree {
        Some(path) => {
            let resolved = if path.is_relative() {
                common.scenario.parent().unwrap_or(Path::new(".")).join(path)
            } else {
                path.clone()
            };
            (read_tree(&resolved, params)?, format!("file {}", resolved.display()))
        }
        None => {
            let controls = price_system::sample_random_controls(params, scenario.run.seed)?;
            (price_system::generate(params, &controls)?, format!("seed {}", scenario.run.seed))
        }
    };
    let report = price_system::validate(params, &tree, DEFAULT_TOL);
    let mut out = Output::new(tree_table(&tree));
    out.line(format!("price system from {origin}"));
    out.line(format!("max martingale error: {}", num(report.max_martingale_error)));
    out.line(format!("min band slack: {}", num(report.min_band_slack)));
    if report.is_valid() {
        out.line("valid");
    } else {
        out.line(format!("invalid: {} violation(s)", report.violations.len()));
        for v in &report.violations {
            out.line(format!("  {v}"));
        }
        out.code = EXIT_VALIDATION;
    }
    Ok(out)
}

fn gap_table(unit: &str) -> Table {
    let col = |name: &str| format!("{name}[{unit}]");
    Table::new(&["quantity", &col("recursion"), &col("oracle"), &col("abs_gap"), "rel_gap[1]"])
}

fn gap_row(table: &mut Table, name: &str, dp: f64, oracle: f64) -> f64 {
    let gap = (dp - oracle).abs();
    let rel = gap / dp.abs().max(oracle.abs()).max(f64::MIN_POSITIVE);
    table.row(&[name.into(), num(dp), num(oracle), num(gap), num(rel)]);
    gap
}

fn cmd_compare_price(scenario: &Scenario) -> Result<Output, Failure> {
    let params = &scenario.market;
    let payoff = scenario.payoff.build(params)?;
    let (pi, surface) = superhedge::price(params, &payoff)?;
    let lp = oracle::superreplication_lp(&payoff, params)?;
    let mut table = gap_table("currency");
    let gap = gap_row(&mut table, "lp", pi, lp);
    let mut out = Output::new(table);
    out.line(format!("superhedging price: {}", num(pi)));
    out.line(format!("linear program: {}", num(lp)));
    out.line(format!("gap: {}", num(gap)));
    if params.horizon <= oracle::SUP_SEARCH_MAX_HORIZON {
        let extracted = superhedge::extract_worst_case_price_system(params, &surface)?;
        let report = oracle::price_system_sup_search(
            &payoff,
            params,
            scenario.run.samples,
            scenario.run.seed,
            Some(&extracted),
        )?;
        gap_row(&mut out.table, "price_system_search", pi, report.best);
        out.line(format!(
            "price-system search (with extracted system): {} from {:?}",
            num(report.best),
            report.source
        ));
        if report.best > pi + 1e-9 * (1.0 + pi.abs()) {
            return Err(fail(
                EXIT_INVARIANT,
                format!("a price system gives {} above the price {}", num(report.best), num(pi)),
            ));
        }
    }
    if gap > scenario.run.tol {
        out.line(format!("gap exceeds run.tol = {}", num(scenario.run.tol)));
        out.code = EXIT_VALIDATION;
    }
    Ok(out)
}

fn cmd_compare_utility(scenario: &Scenario) -> Result<Output, Failure> {
    let params = &scenario.market;
    let (spec, putil) = utility_spec(scenario)?;
    let grid = scenario.run.grid.unwrap_or(DEFAULT_GRID_SIZE);
    let curves = utility::vhat_recursion(params, &putil, grid)?;
    let value = utility::value_function(spec.x0, spec.x1, params, &putil, &curves[0])?;
    let search = oracle::primal_utility_search(spec.x0, spec.x1, params, &putil, TradeGrid::default())?;
    let mut table = gap_table("utility");
    let gap = gap_row(&mut table, "primal_search", value, search);
    let mut out = Output::new(table);
    out.line(format!("value: {}", num(value)));
    out.line(format!("primal search: {}", num(search)));
    out.line(format!("gap: {}", num(gap)));
    let allowed = oracle::PRIMAL_GRID_REL_ERROR * value.abs();
    if search > value + scenario.run.tol * (1.0 + value.abs()) {
        out.line("primal search exceeds the dual value");
        out.code = EXIT_VALIDATION;
    } else if value - search > allowed {
        out.line(format!("gap exceeds the search grid error {}", num(allowed)));
        out.code = EXIT_VALIDATION;
    }
    Ok(out)
}

fn cmd_sweep(scenario: &Scenario) -> Result<Output, Failure> {
    let base = &scenario.market;
    let run = &scenario.run;
    let n = run.sweep_points;
    let lambdas: Vec<f64> = (0..n).map(|i| run.sweep_max * i as f64 / (n - 1) as f64).collect();
    let utility_setup = match run.target {
        SweepTarget::Price => None,
        SweepTarget::Utility => Some(utility_spec(scenario)?),
    };
    let mut values = vec![vec![0.0; n]; n];
    for (a, &lb) in lambdas.iter().enumerate() {
        for (b, &ls) in lambdas.iter().enumerate() {
            let params = base.with_costs(lb, ls)?;
            values[a][b] = match &utility_setup {
                None => superhedge::price(&params, &scenario.payoff.build(&params)?)?.0,
                Some((spec, putil)) => {
                    let grid = run.grid.unwrap_or(SWEEP_UTILITY_GRID);
                    let curves = utility::vhat_recursion(&params, putil, grid)?;
                    utility::value_function(spec.x0, spec.x1, &params, putil, &curves[0])?
                }
            };
        }
    }
    let unit = match run.target {
        SweepTarget::Price => "value[currency]",
        SweepTarget::Utility => "value[utility]",
    };
    let mut table = Table::new(&["lambda_buy[rate]", "lambda_sell[rate]", unit]);
    for (a, row) in values.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            table.row(&[num(lambdas[a]), num(lambdas[b]), num(*v)]);
        }
    }
    // Price rises with costs; utility falls.
    let sign = if run.target == SweepTarget::Price { 1.0 } else { -1.0 };
    let tol = |v: f64| 1e-9 * (1.0 + v.abs());
    for a in 0..n {
        for b in 0..n {
            let v = values[a][b];
            let neighbours = [(a + 1 < n).then(|| values[a + 1][b]), (b + 1 < n).then(|| values[a][b + 1])];
            for w in neighbours.into_iter().flatten() {
                if sign * (w - v) < -tol(v) {
                    return Err(fail(
                        EXIT_INVARIANT,
                        format!(
                            "value not monotone in costs at lambda_buy={}, lambda_sell={}: {} then {}",
                            num(lambdas[a]),
                            num(lambdas[b]),
                            num(v),
                            num(w)
                        ),
                    ));
                }
            }
        }
    }
    let mut out = Output::new(table);
    out.line(format!("sweep over {n}x{n} cost pairs in [0, {}]", num(run.sweep_max)));
    out.line("monotone in both costs: yes");
    Ok(out)
}
