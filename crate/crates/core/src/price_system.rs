//! Price systems on the binomial path tree.
//!
//! A price system is a pair of positive martingales `ρ⁰(k), ρ¹(k)` with
//! `ρ⁰(0) = 1` whose ratio `A(k) = ρ¹(k)/ρ⁰(k)` stays in the band
//! `[(1-λ₁)P_k, (1+λ₀)P_k]`. Every such system is produced by choosing, at
//! each node, the shadow prices `(Aᵘ, A^d)` of the two children with `A(k)`
//! between them; the density then moves by the factors
//! `(A - A^d)/(p(Aᵘ - A^d))` and `(Aᵘ - A)/((1-p)(Aᵘ - A^d))`.
//!
//! Trees are path-indexed (level `k` holds `2^k` nodes, see [`PathWord`]).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::market::{MarketParams, NodeIndex, PathWord, Payoff};
use crate::scalar::Scalar;

/// Largest horizon for path-indexed trees (`2^(T+1) - 1` nodes).
pub const MAX_PATH_HORIZON: usize = 24;

/// Absolute band slack, as a multiple of the node's stock price.
const BAND_SLACK: f64 = 1e-12;

/// Default relative tolerance for the martingale identities.
pub const DEFAULT_TOL: f64 = 1e-10;

pub(crate) fn check_path_horizon(horizon: usize, what: &'static str) -> Result<()> {
    if horizon > MAX_PATH_HORIZON {
        return Err(Error::HorizonTooLarge {
            horizon,
            cap: MAX_PATH_HORIZON,
            what,
        });
    }
    Ok(())
}

fn node_of(k: usize, index: usize) -> NodeIndex {
    NodeIndex::new(k, index.count_ones() as usize)
}

/// Shadow prices targeted at the two children of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchTargets<T> {
    pub a_up: T,
    pub a_down: T,
}

/// Root shadow price plus per-node child targets for dates `0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField<T> {
    pub a0: T,
    /// `branches[k][i]`: targets at path node `i` of date `k`.
    pub branches: Vec<Vec<BranchTargets<T>>>,
}

impl<T: Scalar> ControlField<T> {
    pub fn horizon(&self) -> usize {
        self.branches.len()
    }

    /// Builds a field by a forward pass: `choose(k, index, a_k)` returns the
    /// targets at a node given the shadow price reached there.
    pub fn build(
        horizon: usize,
        a0: T,
        mut choose: impl FnMut(usize, usize, T) -> BranchTargets<T>,
    ) -> Self {
        let mut branches = Vec::with_capacity(horizon);
        let mut shadow = vec![a0];
        for k in 0..horizon {
            let level: Vec<BranchTargets<T>> = shadow
                .iter()
                .enumerate()
                .map(|(i, &a)| choose(k, i, a))
                .collect();
            shadow = level.iter().flat_map(|b| [b.a_down, b.a_up]).collect();
            branches.push(level);
        }
        Self { a0, branches }
    }

    /// The field keeping `R(k) = A(k)/P_k` at `ratio` everywhere.
    pub fn constant_ratio(params: &MarketParams<T>, ratio: T) -> Self {
        Self::build(params.horizon, ratio * params.s0, |k, i, _| {
            let s = params.stock_price(node_of(k, i));
            BranchTargets {
                a_up: ratio * s * params.u,
                a_down: ratio * s * params.d,
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsNode<T> {
    pub rho0: T,
    pub rho1: T,
    /// Shadow price `ρ¹/ρ⁰`.
    pub a: T,
    /// Band ratio `A / P_k`.
    pub r: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSystemTree<T> {
    levels: Vec<Vec<PsNode<T>>>,
}

impl<T: Scalar> PriceSystemTree<T> {
    /// Assembles a tree from `(ρ⁰, ρ¹)` per path node; `A` and `R` are derived.
    pub fn from_densities(params: &MarketParams<T>, levels: Vec<Vec<(T, T)>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Precondition("tree needs a root".into()));
        }
        check_path_horizon(levels.len() - 1, "price-system trees")?;
        let mut out = Vec::with_capacity(levels.len());
        for (k, level) in levels.into_iter().enumerate() {
            if level.len() != 1 << k {
                return Err(Error::LengthMismatch {
                    expected: 1 << k,
                    got: level.len(),
                });
            }
            out.push(
                level
                    .into_iter()
                    .enumerate()
                    .map(|(i, (rho0, rho1))| {
                        let a = rho1 / rho0;
                        PsNode {
                            rho0,
                            rho1,
                            a,
                            r: a / params.stock_price(node_of(k, i)),
                        }
                    })
                    .collect(),
            );
        }
        Ok(Self { levels: out })
    }

    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn node(&self, k: usize, index: usize) -> &PsNode<T> {
        &self.levels[k][index]
    }

    pub fn levels(&self) -> &[Vec<PsNode<T>>] {
        &self.levels
    }

    pub fn terminal(&self) -> &[PsNode<T>] {
        &self.levels[self.horizon()]
    }

    /// All nodes with their path words, level by level.
    pub fn iter_nodes(&self) -> impl Iterator<Item = (PathWord, &PsNode<T>)> {
        self.levels.iter().enumerate().flat_map(|(k, level)| {
            level
                .iter()
                .enumerate()
                .map(move |(i, n)| (PathWord::from_index(k, i), n))
        })
    }
}

/// Builds the price system induced by `controls`.
///
/// Children with `Aᵘ = A^d = A(k)` (up to `1e-12·P_k`) keep the density
/// unchanged on both branches; otherwise `A(k)` must lie strictly between
/// the two targets so that both densities stay positive.
pub fn generate<T: Scalar>(
    params: &MarketParams<T>,
    controls: &ControlField<T>,
) -> Result<PriceSystemTree<T>> {
    check_path_horizon(params.horizon, "price-system trees")?;
    if controls.horizon() != params.horizon {
        return Err(Error::LengthMismatch {
            expected: params.horizon,
            got: controls.horizon(),
        });
    }
    let slack = T::rel_tol(BAND_SLACK);
    let in_band = |a: T, s: T| {
        let (lo, hi) = params.band(s);
        a >= lo - slack * s && a <= hi + slack * s
    };

    if !in_band(controls.a0, params.s0) {
        return Err(Error::ControlViolation {
            k: 0,
            node: 0,
            reason: format!("A0={} outside the band at s0={}", controls.a0, params.s0),
        });
    }

    let one = T::one();
    let p = params.p;
    let mut levels = vec![vec![PsNode {
        rho0: one,
        rho1: controls.a0,
        a: controls.a0,
        r: controls.a0 / params.s0,
    }]];
    for (k, level_ctrl) in controls.branches.iter().enumerate() {
        if level_ctrl.len() != 1 << k {
            return Err(Error::LengthMismatch {
                expected: 1 << k,
                got: level_ctrl.len(),
            });
        }
        let parents = &levels[k];
        let mut next = Vec::with_capacity(parents.len() * 2);
        for (i, (node, ctrl)) in parents.iter().zip(level_ctrl).enumerate() {
            let s = params.stock_price(node_of(k, i));
            let violation = |reason: String| Error::ControlViolation { k, node: i, reason };
            if !in_band(ctrl.a_up, s * params.u) {
                return Err(violation(format!("A_up={} outside the up band", ctrl.a_up)));
            }
            if !in_band(ctrl.a_down, s * params.d) {
                return Err(violation(format!("A_down={} outside the down band", ctrl.a_down)));
            }
            let spread = ctrl.a_up - ctrl.a_down;
            let (w_up, w_down) = if spread.abs() <= slack * s {
                if (node.a - ctrl.a_up).abs() > slack * s {
                    return Err(violation(format!(
                        "equal targets {} must coincide with A={}",
                        ctrl.a_up, node.a
                    )));
                }
                (one, one)
            } else {
                let lo = ctrl.a_up.min(ctrl.a_down);
                let hi = ctrl.a_up.max(ctrl.a_down);
                if !(lo < node.a && node.a < hi) {
                    return Err(violation(format!(
                        "A={} not strictly between A_up={} and A_down={}",
                        node.a, ctrl.a_up, ctrl.a_down
                    )));
                }
                (
                    (node.a - ctrl.a_down) / (spread * p),
                    (ctrl.a_up - node.a) / (spread * (one - p)),
                )
            };
            let child_s = [s * params.d, s * params.u];
            for (target, weight, cs) in [
                (ctrl.a_down, w_down, child_s[0]),
                (ctrl.a_up, w_up, child_s[1]),
            ] {
                let rho0 = node.rho0 * weight;
                next.push(PsNode {
                    rho0,
                    rho1: rho0 * target,
                    a: target,
                    r: target / cs,
                });
            }
        }
        levels.push(next);
    }
    Ok(PriceSystemTree { levels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Tree has the wrong number of levels or nodes.
    Shape,
    /// `ρ⁰(0) ≠ 1`.
    Normalization,
    /// A density is not a positive finite number.
    NonPositive,
    /// Stored `A` disagrees with `ρ¹/ρ⁰`.
    Ratio,
    /// `ρ⁰` is not a martingale at this node.
    MartingaleRho0,
    /// `ρ¹` is not a martingale at this node.
    MartingaleRho1,
    /// `A` leaves the bid-ask band.
    Band,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub k: usize,
    pub index: usize,
    /// Relative error (martingale, ratio, normalization) or relative band
    /// excess; the offending value for positivity.
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} at k={} path={} (magnitude {:e})",
            self.kind,
            self.k,
            PathWord::from_index(self.k, self.index),
            self.magnitude
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Largest relative martingale defect over interior nodes and both legs.
    pub max_martingale_error: f64,
    /// Smallest `min(A - lo, hi - A) / P_k` over all nodes.
    pub min_band_slack: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks positivity, the martingale identities (relative `tol`) and the
/// band (absolute slack `1e-12·P_k`). Violations are data, never errors.
pub fn validate<T: Scalar>(
    params: &MarketParams<T>,
    tree: &PriceSystemTree<T>,
    tol: T,
) -> ValidationReport {
    let mut report = ValidationReport {
        violations: Vec::new(),
        max_martingale_error: 0.0,
        min_band_slack: f64::INFINITY,
    };
    let shape_ok = tree.levels.len() == params.horizon + 1
        && tree.levels.iter().enumerate().all(|(k, l)| l.len() == 1 << k);
    if !shape_ok {
        report.violations.push(Violation {
            kind: ViolationKind::Shape,
            k: 0,
            index: 0,
            magnitude: tree.levels.len() as f64,
        });
        return report;
    }

    let mut flag = |kind, k, index, magnitude: T| {
        report.violations.push(Violation {
            kind,
            k,
            index,
            magnitude: magnitude.as_f64(),
        })
    };
    let rel = |x: T, reference: T| x.abs() / reference.abs().max(T::min_positive_value());
    let band_slack = T::rel_tol(BAND_SLACK);
    let p = params.p;
    let q = T::one() - p;
    let mut max_mart = T::zero();
    let mut min_slack = T::infinity();

    let root = tree.levels[0][0];
    let norm = (root.rho0 - T::one()).abs();
    if !(norm <= tol) {
        flag(ViolationKind::Normalization, 0, 0, norm);
    }

    for (k, level) in tree.levels.iter().enumerate() {
        for (i, node) in level.iter().enumerate() {
            let positive = node.rho0.is_finite()
                && node.rho1.is_finite()
                && node.rho0 > T::zero()
                && node.rho1 > T::zero();
            if !positive {
                flag(ViolationKind::NonPositive, k, i, node.rho0.min(node.rho1));
                continue;
            }
            let ratio_err = rel(node.a - node.rho1 / node.rho0, node.a);
            if !(ratio_err <= tol) {
                flag(ViolationKind::Ratio, k, i, ratio_err);
            }
            let s = params.stock_price(node_of(k, i));
            let (lo, hi) = params.band(s);
            let slack = (node.a - lo).min(hi - node.a) / s;
            min_slack = min_slack.min(slack);
            if slack < -band_slack {
                flag(ViolationKind::Band, k, i, -slack);
            }
            if k < params.horizon {
                let down = tree.levels[k + 1][2 * i];
                let up = tree.levels[k + 1][2 * i + 1];
                let e0 = rel(node.rho0 - (p * up.rho0 + q * down.rho0), node.rho0);
                let e1 = rel(node.rho1 - (p * up.rho1 + q * down.rho1), node.rho1);
                max_mart = max_mart.max(e0).max(e1);
                if !(e0 <= tol) {
                    flag(ViolationKind::MartingaleRho0, k, i, e0);
                }
                if !(e1 <= tol) {
                    flag(ViolationKind::MartingaleRho1, k, i, e1);
                }
            }
        }
    }
    report.max_martingale_error = max_mart.as_f64();
    report.min_band_slack = min_slack.as_f64();
    report
}

/// Tree with `ρ⁰(k)` the density of the measure with per-step up
/// probability `q_up` and `ρ¹(k) = ρ⁰(k)·P_k` (so `R ≡ 1`).
///
/// This is a price system for every cost level exactly when `q_up` makes
/// the stock a martingale, i.e. `q_up = (1-d)/(u-d)`; for other values
/// [`validate`] reports the broken `ρ¹` martingale identity.
pub fn from_martingale_measure<T: Scalar>(
    params: &MarketParams<T>,
    q_up: T,
) -> Result<PriceSystemTree<T>> {
    if !(q_up > T::zero() && q_up < T::one()) {
        return Err(Error::Precondition(format!("q_up={q_up} must lie in (0, 1)")));
    }
    check_path_horizon(params.horizon, "price-system trees")?;
    let up = q_up / params.p;
    let down = (T::one() - q_up) / (T::one() - params.p);
    let levels = (0..=params.horizon)
        .map(|k| {
            (0..1usize << k)
                .map(|i| {
                    let node = node_of(k, i);
                    let rho0 = up.powi(node.j as i32) * down.powi((k - node.j) as i32);
                    let s = params.stock_price(node);
                    PsNode {
                        rho0,
                        rho1: rho0 * s,
                        a: s,
                        r: T::one(),
                    }
                })
                .collect()
        })
        .collect();
    Ok(PriceSystemTree { levels })
}

/// `E[Y⁰ ρ⁰(T) + Y¹ ρ¹(T)]` under the physical measure.
pub fn dual_payoff_expectation<T: Scalar>(
    params: &MarketParams<T>,
    tree: &PriceSystemTree<T>,
    payoff: &Payoff<T>,
) -> Result<T> {
    payoff.check_horizon(params.horizon)?;
    if tree.horizon() != params.horizon {
        return Err(Error::LengthMismatch {
            expected: params.horizon,
            got: tree.horizon(),
        });
    }
    let horizon = params.horizon;
    let total = tree
        .terminal()
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, n)| {
            let j = i.count_ones() as usize;
            acc + params.node_probability(horizon, j) * (payoff.y0[j] * n.rho0 + payoff.y1[j] * n.rho1)
        });
    Ok(total)
}

/// Random control field, deterministic in `seed`.
///
/// Targets are drawn uniformly in their bands; when both land on the same
/// side of the current shadow price, one of them is redrawn on the other
/// side so that the result always feeds [`generate`].
pub fn sample_random_controls<T: Scalar>(
    params: &MarketParams<T>,
    seed: u64,
) -> Result<ControlField<T>> {
    check_path_horizon(params.horizon, "price-system trees")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo0, hi0) = params.band(params.s0);
    let a0 = uniform(&mut rng, lo0, hi0);
    Ok(ControlField::build(params.horizon, a0, |k, i, a| {
        let s = params.stock_price(node_of(k, i));
        let (lo_u, hi_u) = params.band(s * params.u);
        let (lo_d, hi_d) = params.band(s * params.d);
        loop {
            let mut a_up = uniform(&mut rng, lo_u, hi_u);
            let mut a_down = uniform(&mut rng, lo_d, hi_d);
            if a_up > a && a_down >= a {
                a_down = uniform(&mut rng, lo_d, hi_d.min(a));
            } else if a_up <= a && a_down <= a {
                if hi_d > a {
                    a_down = uniform_left_open(&mut rng, a.max(lo_d), hi_d);
                } else {
                    a_up = uniform_left_open(&mut rng, a, hi_u);
                }
            }
            let (lo, hi) = (a_up.min(a_down), a_up.max(a_down));
            if lo < a && a < hi {
                return BranchTargets { a_up, a_down };
            }
        }
    }))
}

/// Uniform on `[lo, hi)`, or `lo` for an empty interval.
fn uniform<T: Scalar>(rng: &mut impl Rng, lo: T, hi: T) -> T {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * T::lit(rng.gen::<f64>())
}

/// Uniform on `(lo, hi]`.
fn uniform_left_open<T: Scalar>(rng: &mut impl Rng, lo: T, hi: T) -> T {
    if hi <= lo {
        return hi;
    }
    hi - (hi - lo) * T::lit(rng.gen::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crr_unit() -> MarketParams<f64> {
        MarketParams::new(2.0, 0.5, 0.5, 1, 1.0, 0.0, 0.0).unwrap()
    }

    fn costly(horizon: usize) -> MarketParams<f64> {
        MarketParams::new(1.2, 0.9, 0.5, horizon, 100.0, 0.1, 0.1).unwrap()
    }

    #[test]
    fn frictionless_generation_by_hand() {
        let params = crr_unit();
        let controls = ControlField {
            a0: 1.0,
            branches: vec![vec![BranchTargets { a_up: 2.0, a_down: 0.5 }]],
        };
        let tree = generate(&params, &controls).unwrap();
        // up: (1 - 0.5)/(0.5·1.5) = 2/3, down: (2 - 1)/(0.5·1.5) = 4/3
        assert!((tree.node(1, 1).rho0 - 2.0 / 3.0).abs() < 1e-15);
        assert!((tree.node(1, 0).rho0 - 4.0 / 3.0).abs() < 1e-15);
        let q = params.risk_neutral_q();
        assert!((q - 1.0 / 3.0).abs() < 1e-15);
        let via_measure = from_martingale_measure(&params, q).unwrap();
        for (a, b) in tree.levels().iter().flatten().zip(via_measure.levels().iter().flatten()) {
            assert!((a.rho0 - b.rho0).abs() < 1e-15 && (a.rho1 - b.rho1).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_targets_keep_density() {
        // All bands up to T=3 contain 100.
        let params = MarketParams::new(1.02, 0.98, 0.4, 3, 100.0, 0.1, 0.1).unwrap();
        let controls = ControlField::build(3, 100.0, |_, _, a| BranchTargets { a_up: a, a_down: a });
        let tree = generate(&params, &controls).unwrap();
        assert!(tree.levels().iter().flatten().all(|n| n.rho0 == 1.0));
        assert!(validate(&params, &tree, DEFAULT_TOL).is_valid());
    }

    #[test]
    fn rejects_bad_controls() {
        let params = costly(1);
        let out_of_band = ControlField {
            a0: 100.0,
            branches: vec![vec![BranchTargets { a_up: 140.0, a_down: 85.0 }]],
        };
        assert!(matches!(generate(&params, &out_of_band), Err(Error::ControlViolation { .. })));
        let same_side = ControlField {
            a0: 100.0,
            branches: vec![vec![BranchTargets { a_up: 110.0, a_down: 101.0 }]],
        };
        assert!(matches!(generate(&params, &same_side), Err(Error::ControlViolation { .. })));
        let bad_root = ControlField {
            a0: 111.0,
            branches: vec![vec![BranchTargets { a_up: 120.0, a_down: 90.0 }]],
        };
        assert!(generate(&params, &bad_root).is_err());
    }

    #[test]
    fn generated_trees_validate() {
        for horizon in 0..=6 {
            let params = costly(horizon);
            for seed in 0..50 {
                let controls = sample_random_controls(&params, seed).unwrap();
                let tree = generate(&params, &controls).unwrap();
                let report = validate(&params, &tree, DEFAULT_TOL);
                assert!(report.is_valid(), "seed {seed}: {:?}", report.violations);
                let total: f64 = tree
                    .terminal()
                    .iter()
                    .enumerate()
                    .map(|(i, n)| params.node_probability(horizon, i.count_ones() as usize) * n.rho0)
                    .sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbed_density_is_flagged_at_parent() {
        let params = costly(2);
        let tree = generate(&params, &sample_random_controls(&params, 7).unwrap()).unwrap();
        let mut levels: Vec<Vec<(f64, f64)>> = tree
            .levels()
            .iter()
            .map(|l| l.iter().map(|n| (n.rho0, n.rho1)).collect())
            .collect();
        // bump ρ⁰ at path "UD" (index 0b10) keeping A fixed
        let (r0, r1) = levels[2][0b10];
        levels[2][0b10] = (r0 * 1.1, r1 * 1.1);
        let bumped = PriceSystemTree::from_densities(&params, levels).unwrap();
        let report = validate(&params, &bumped, DEFAULT_TOL);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::MartingaleRho0 && v.k == 1 && v.index == 1));
    }

    #[test]
    fn band_excess_is_flagged() {
        let params = costly(1);
        let tree = generate(&params, &sample_random_controls(&params, 3).unwrap()).unwrap();
        let mut levels: Vec<Vec<(f64, f64)>> = tree
            .levels()
            .iter()
            .map(|l| l.iter().map(|n| (n.rho0, n.rho1)).collect())
            .collect();
        let top = 1.1 * 120.0 * 1.05;
        levels[1][1].1 = levels[1][1].0 * top;
        let broken = PriceSystemTree::from_densities(&params, levels).unwrap();
        let report = validate(&params, &broken, DEFAULT_TOL);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::Band && v.k == 1 && v.index == 1));
    }

    #[test]
    fn martingale_measure_trees() {
        let params = costly(3);
        let identity = from_martingale_measure(&params, params.p).unwrap();
        for (w, n) in identity.iter_nodes() {
            assert_eq!(n.rho0, 1.0);
            assert!((n.rho1 - params.stock_price(w.node())).abs() < 1e-12);
        }
        // p is not the martingale probability here: the ρ¹ identity breaks
        let report = validate(&params, &identity, DEFAULT_TOL);
        assert!(report.violations.iter().all(|v| v.kind == ViolationKind::MartingaleRho1));
        assert!(!report.is_valid());

        let emm = from_martingale_measure(&params, params.risk_neutral_q()).unwrap();
        for (lb, ls) in [(0.0, 0.0), (0.01, 0.3), (0.2, 0.0)] {
            assert!(validate(&params.with_costs(lb, ls).unwrap(), &emm, DEFAULT_TOL).is_valid());
        }
        assert!(from_martingale_measure(&params, 1.0).is_err());
    }

    #[test]
    fn dual_expectation_examples() {
        let params = costly(3);
        let cash = Payoff::constant_cash(3, 7.5);
        for seed in 0..5 {
            let tree = generate(&params, &sample_random_controls(&params, seed).unwrap()).unwrap();
            assert!((dual_payoff_expectation(&params, &tree, &cash).unwrap() - 7.5).abs() < 1e-12);
        }
        let crr = crr_unit();
        let tree = from_martingale_measure(&crr, 1.0 / 3.0).unwrap();
        let call = Payoff::call_cash(&crr, 1.0);
        assert!((dual_payoff_expectation(&crr, &tree, &call).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_forced_without_costs() {
        let params = costly(4);
        assert_eq!(
            sample_random_controls(&params, 11).unwrap(),
            sample_random_controls(&params, 11).unwrap()
        );
        assert_ne!(
            sample_random_controls(&params, 11).unwrap(),
            sample_random_controls(&params, 12).unwrap()
        );
        let free = params.with_costs(0.0, 0.0).unwrap();
        let field = sample_random_controls(&free, 5).unwrap();
        assert_eq!(field.a0, 100.0);
        for (k, level) in field.branches.iter().enumerate() {
            for (i, b) in level.iter().enumerate() {
                let s = free.stock_price(node_of(k, i));
                assert_eq!(b.a_up, s * free.u);
                assert_eq!(b.a_down, s * free.d);
            }
        }
    }

    #[test]
    fn horizon_cap() {
        let params = costly(MAX_PATH_HORIZON + 1);
        assert!(matches!(
            sample_random_controls(&params, 0),
            Err(Error::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn single_precision_generation() {
        let params = MarketParams::<f32>::new(1.2, 0.9, 0.5, 4, 100.0, 0.05, 0.05).unwrap();
        let tree = generate(&params, &sample_random_controls(&params, 1).unwrap()).unwrap();
        let report = validate(&params, &tree, 1e-5);
        assert!(report.is_valid(), "{:?}", report.violations);
    }
}
