//! Flat `section.key = value` scenario files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::market::{self, MarketParams, Payoff};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    /// 1-based line of the offending entry, if one can be named.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayoffSpec {
    Call { strike: f64 },
    Put { strike: f64 },
    CallPhysical { strike: f64 },
    Cash { amount: f64 },
    Table { y0: Vec<f64>, y1: Vec<f64> },
}

impl PayoffSpec {
    pub fn build(&self, params: &MarketParams<f64>) -> crate::Result<Payoff<f64>> {
        Ok(match self {
            Self::Call { strike } => market::Payoff::call_cash(params, *strike),
            Self::Put { strike } => market::Payoff::put_cash(params, *strike),
            Self::CallPhysical { strike } => market::Payoff::call_physical(params, *strike),
            Self::Cash { amount } => market::Payoff::constant_cash(params.horizon, *amount),
            Self::Table { y0, y1 } => market::Payoff::from_table(y0.clone(), y1.clone(), params.horizon)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySpec {
    pub gamma: f64,
    pub x0: f64,
    pub x1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTarget {
    Price,
    Utility,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub grid: Option<usize>,
    pub seed: u64,
    pub samples: usize,
    pub tol: f64,
    pub tree: Option<PathBuf>,
    pub sweep_points: usize,
    pub sweep_max: f64,
    pub target: SweepTarget,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            grid: None,
            seed: 0,
            samples: 1000,
            tol: 1e-6,
            tree: None,
            sweep_points: 10,
            sweep_max: 0.1,
            target: SweepTarget::Price,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub market: MarketParams<f64>,
    pub payoff: PayoffSpec,
    pub utility: Option<UtilitySpec>,
    pub run: RunOptions,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(Some(line), format!("expected key=value, found '{content}'")))?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(err(Some(line), format!("unknown key '{key}'")));
            }
            if let Some((first, _)) = map.get(&key) {
                return Err(err(Some(line), format!("duplicate key '{key}' (first set on line {first})")));
            }
            map.insert(key, (line, value.trim().to_string()));
        }
        Ok(Self { map })
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(l, _)| *l)
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn num<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| err(Some(line), format!("{key}: cannot parse '{v}'"))),
        }
    }

    fn required<V: std::str::FromStr>(&self, key: &str) -> Result<V, ScenarioError> {
        self.num(key)?.ok_or_else(|| err(None, format!("missing required key '{key}'")))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| err(Some(line), format!("{key}: cannot parse '{}'", t.trim())))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    /// Checks `ok(value)` and anchors a failure at the key's line.
    fn check(&self, key: &str, value: f64, ok: bool, what: &str) -> Result<(), ScenarioError> {
        if ok && value.is_finite() {
            Ok(())
        } else {
            Err(err(self.line(key), format!("{key}={value}: {what}")))
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "market.u",
    "market.d",
    "market.p",
    "market.horizon",
    "market.s0",
    "market.lambda_buy",
    "market.lambda_sell",
    "payoff.kind",
    "payoff.strike",
    "payoff.amount",
    "payoff.y0",
    "payoff.y1",
    "utility.gamma",
    "utility.x0",
    "utility.x1",
    "run.grid",
    "run.seed",
    "run.samples",
    "run.tol",
    "run.tree",
    "run.sweep_points",
    "run.sweep_max",
    "run.target",
];

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let e = Entries::parse(text)?;

        let u: f64 = e.required("market.u")?;
        let d: f64 = e.required("market.d")?;
        let p: f64 = e.required("market.p")?;
        let horizon: usize = e.required("market.horizon")?;
        let s0: f64 = e.required("market.s0")?;
        let lambda_buy: f64 = e.num("market.lambda_buy")?.unwrap_or(0.0);
        let lambda_sell: f64 = e.num("market.lambda_sell")?.unwrap_or(0.0);
        e.check("market.u", u, u > 1.0, "up factor must exceed 1")?;
        e.check("market.d", d, d > 0.0 && d < 1.0, "down factor must lie in (0, 1)")?;
        e.check("market.p", p, p > 0.0 && p < 1.0, "probability must lie in (0, 1)")?;
        e.check("market.s0", s0, s0 > 0.0, "initial price must be positive")?;
        e.check("market.lambda_buy", lambda_buy, lambda_buy >= 0.0, "must be nonnegative")?;
        e.check("market.lambda_sell", lambda_sell, (0.0..1.0).contains(&lambda_sell), "must lie in [0, 1)")?;
        let market = MarketParams::new(u, d, p, horizon, s0, lambda_buy, lambda_sell)
            .map_err(|x| err(e.line("market.u"), x.to_string()))?;

        let payoff = match e.raw("payoff.kind") {
            None => return Err(err(None, "missing required key 'payoff.kind'")),
            Some((line, kind)) => match kind {
                "call" | "put" | "call_physical" => {
                    let strike: f64 = e
                        .num("payoff.strike")?
                        .ok_or_else(|| err(Some(line), format!("payoff.kind={kind} needs payoff.strike")))?;
                    e.check("payoff.strike", strike, true, "must be finite")?;
                    match kind {
                        "call" => PayoffSpec::Call { strike },
                        "put" => PayoffSpec::Put { strike },
                        _ => PayoffSpec::CallPhysical { strike },
                    }
                }
                "cash" => {
                    let amount: f64 = e
                        .num("payoff.amount")?
                        .ok_or_else(|| err(Some(line), "payoff.kind=cash needs payoff.amount"))?;
                    e.check("payoff.amount", amount, true, "must be finite")?;
                    PayoffSpec::Cash { amount }
                }
                "table" => {
                    let y0 = e
                        .list("payoff.y0")?
                        .ok_or_else(|| err(Some(line), "payoff.kind=table needs payoff.y0"))?;
                    let y1 = e.list("payoff.y1")?.unwrap_or_else(|| vec![0.0; horizon + 1]);
                    for (key, leg) in [("payoff.y0", &y0), ("payoff.y1", &y1)] {
                        if leg.len() != horizon + 1 {
                            return Err(err(
                                e.line(key).or(Some(line)),
                                format!("{key} has {} entries, expected {}", leg.len(), horizon + 1),
                            ));
                        }
                    }
                    PayoffSpec::Table { y0, y1 }
                }
                other => {
                    return Err(err(
                        Some(line),
                        format!("unknown payoff.kind '{other}' (call, put, call_physical, cash, table)"),
                    ))
                }
            },
        };

        let utility = match e.num::<f64>("utility.gamma")? {
            None => None,
            Some(gamma) => {
                e.check("utility.gamma", gamma, gamma > 0.0 && gamma < 1.0, "must lie in (0, 1)")?;
                let x0: f64 = e.num("utility.x0")?.unwrap_or(0.0);
                let x1: f64 = e.num("utility.x1")?.unwrap_or(0.0);
                e.check("utility.x0", x0, true, "must be finite")?;
                e.check("utility.x1", x1, true, "must be finite")?;
                let liq = market.liquidation_value(market::PortfolioState::new(x0, x1), s0);
                if liq <= 0.0 {
                    let line = e.line("utility.x0").or(e.line("utility.x1"));
                    return Err(err(line, format!("initial position ({x0}, {x1}) is not solvent: liquidation value {liq}")));
                }
                Some(UtilitySpec { gamma, x0, x1 })
            }
        };
        if utility.is_none() {
            for key in ["utility.x0", "utility.x1"] {
                if let Some(line) = e.line(key) {
                    return Err(err(Some(line), format!("{key} given without utility.gamma")));
                }
            }
        }

        let defaults = RunOptions::default();
        let grid: Option<usize> = e.num("run.grid")?;
        if let Some(g) = grid {
            if g < 3 {
                return Err(err(e.line("run.grid"), format!("run.grid={g}: must be at least 3")));
            }
        }
        let tol: f64 = e.num("run.tol")?.unwrap_or(defaults.tol);
        e.check("run.tol", tol, tol > 0.0, "must be positive")?;
        let sweep_points: usize = e.num("run.sweep_points")?.unwrap_or(defaults.sweep_points);
        if sweep_points < 2 {
            return Err(err(e.line("run.sweep_points"), "run.sweep_points must be at least 2"));
        }
        let sweep_max: f64 = e.num("run.sweep_max")?.unwrap_or(defaults.sweep_max);
        e.check("run.sweep_max", sweep_max, sweep_max > 0.0 && sweep_max < 1.0, "must lie in (0, 1)")?;
        let target = match e.raw("run.target") {
            None | Some((_, "price")) => SweepTarget::Price,
            Some((_, "utility")) => SweepTarget::Utility,
            Some((line, other)) => return Err(err(Some(line), format!("unknown run.target '{other}' (price, utility)"))),
        };
        let run = RunOptions {
            grid,
            seed: e.num("run.seed")?.unwrap_or(defaults.seed),
            samples: e.num("run.samples")?.unwrap_or(defaults.samples),
            tol,
            tree: e.raw("run.tree").map(|(_, v)| PathBuf::from(v)),
            sweep_points,
            sweep_max,
            target,
        };

        Ok(Self {
            market,
            payoff,
            utility,
            run,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# T=1 frictionless
market.u = 2
market.d = 0.5
market.p = 0.5
market.horizon = 1
market.s0 = 1
payoff.kind = call
payoff.strike = 1
";

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::parse(BASE).unwrap();
        assert_eq!(s.market.horizon, 1);
        assert_eq!(s.market.lambda_buy, 0.0);
        assert_eq!(s.payoff, PayoffSpec::Call { strike: 1.0 });
        assert!(s.utility.is_none());
        assert_eq!(s.run, RunOptions::default());
    }

    #[test]
    fn errors_name_the_line() {
        let bad = BASE.replace("market.d = 0.5", "market.d = 1.5");
        let e = Scenario::parse(&bad).unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = Scenario::parse(&format!("{BASE}market.typo = 1\n")).unwrap_err();
        assert_eq!(e.line, Some(9));
        let e = Scenario::parse(&format!("{BASE}payoff.strike = 2\n")).unwrap_err();
        assert!(e.message.contains("line 8"));
        let e = Scenario::parse(&format!("{BASE}utility.gamma=0.5\nutility.x0=-1\n")).unwrap_err();
        assert_eq!(e.line, Some(10));
        assert!(Scenario::parse(&BASE.replace("market.s0 = 1\n", "")).is_err());
    }

    #[test]
    fn table_payoff_length_checked() {
        let text = BASE.replace("payoff.kind = call", "payoff.kind = table\npayoff.y0 = 1, 2");
        let s = Scenario::parse(&text).unwrap();
        assert_eq!(s.payoff, PayoffSpec::Table { y0: vec![1.0, 2.0], y1: vec![0.0, 0.0] });
        let text = BASE.replace("payoff.kind = call", "payoff.kind = table\npayoff.y0 = 1, 2, 3");
        assert_eq!(Scenario::parse(&text).unwrap_err().line, Some(8));
    }
}
