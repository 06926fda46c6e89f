//! Super-replication price by backward induction over the shadow price.
//!
//! `W_k(S, ·)` is the largest dual value reachable from a node with stock
//! price `S` when the shadow price there is `A`. At maturity it is the
//! affine map `A ↦ Y⁰(S) + A·Y¹(S)` on the band. One step back, the
//! supremum over `α ∈ (0,1)`, `Aᵘ` in the up band and `A^d` in the down
//! band with `αAᵘ + (1-α)A^d = A` of `αW_{k+1}(Su, Aᵘ) + (1-α)W_{k+1}(Sd, A^d)`
//! equals the upper concave envelope of the union of the two child graphs,
//! restricted to the parent band:
//!
//! - a mixture of one point from each graph is a point below the envelope;
//! - mixing two points of the same graph never beats that (concave) graph;
//! - a point of a single graph (the `α → 0` or `α → 1` limit) is reached by
//!   sliding the other control, so the closed hull is the supremum.
//!
//! The functions stay concave and piecewise linear, so the recursion is exact
//! up to rounding. The price is the maximum of `W_0` over the root band.

use crate::error::{Error, Result};
use crate::market::{MarketParams, NodeIndex, Payoff};
use crate::price_system::{self, check_path_horizon, BranchTargets, ControlField, PriceSystemTree};
use crate::pwl::{self, clip_hull, upper_hull, PiecewiseLinearConcave, TaggedPoint};
use crate::scalar::Scalar;

/// Largest horizon accepted by [`price`].
pub const MAX_LATTICE_HORIZON: usize = 1000;

/// Relative tolerance when matching a child function's domain to its band.
const DOMAIN_MATCH_TOL: f64 = 1e-9;

/// Weight given to the idle child when the optimum sits on one child's graph.
const EDGE_WEIGHT: f64 = 1e-11;

/// `W_k(S_{k,j}, ·)` for every recombining node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface<T> {
    levels: Vec<Vec<PiecewiseLinearConcave<T>>>,
}

impl<T: Scalar> ValueSurface<T> {
    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn at(&self, node: NodeIndex) -> &PiecewiseLinearConcave<T> {
        &self.levels[node.k][node.j]
    }

    pub fn levels(&self) -> &[Vec<PiecewiseLinearConcave<T>>] {
        &self.levels
    }
}

/// `A ↦ Y⁰(S) + A·Y¹(S)` on the band at terminal node `j`.
pub fn terminal_value<T: Scalar>(
    params: &MarketParams<T>,
    payoff: &Payoff<T>,
    j: usize,
) -> PiecewiseLinearConcave<T> {
    let s = params.stock_price(NodeIndex::new(params.horizon, j));
    let (lo, hi) = params.band(s);
    PiecewiseLinearConcave::affine(lo, hi, payoff.y0[j], payoff.y1[j])
}

fn check_domain<T: Scalar>(
    f: &PiecewiseLinearConcave<T>,
    expected: (T, T),
    which: &str,
) -> Result<()> {
    let (lo, hi) = f.domain();
    let tol = T::rel_tol(DOMAIN_MATCH_TOL) * expected.1.abs().max(T::one());
    if (lo - expected.0).abs() > tol || (hi - expected.1).abs() > tol {
        return Err(Error::DomainMismatch(format!(
            "{which} child domain [{lo}, {hi}] differs from band [{}, {}]",
            expected.0, expected.1
        )));
    }
    Ok(())
}

/// One backward step at a node with stock price `s`.
pub fn backstep<T: Scalar>(
    params: &MarketParams<T>,
    w_up: &PiecewiseLinearConcave<T>,
    w_down: &PiecewiseLinearConcave<T>,
    s: T,
) -> Result<PiecewiseLinearConcave<T>> {
    check_domain(w_up, params.band(s * params.u), "up")?;
    check_domain(w_down, params.band(s * params.d), "down")?;
    let (lo, hi) = params.band(s);
    pwl::envelope_on(&[w_up, w_down], lo, hi)
}

/// Super-replication price and the full value surface.
pub fn price<T: Scalar>(
    params: &MarketParams<T>,
    payoff: &Payoff<T>,
) -> Result<(T, ValueSurface<T>)> {
    let horizon = params.horizon;
    if horizon > MAX_LATTICE_HORIZON {
        return Err(Error::HorizonTooLarge {
            horizon,
            cap: MAX_LATTICE_HORIZON,
            what: "super-replication lattices",
        });
    }
    payoff.check_horizon(horizon)?;

    let mut levels: Vec<Vec<PiecewiseLinearConcave<T>>> = Vec::with_capacity(horizon + 1);
    levels.push((0..=horizon).map(|j| terminal_value(params, payoff, j)).collect());
    for k in (0..horizon).rev() {
        let next = levels.last().expect("terminal level present");
        let level = (0..=k)
            .map(|j| {
                let s = params.stock_price(NodeIndex::new(k, j));
                let w = backstep(params, &next[j + 1], &next[j], s)?;
                if !w.is_concave() {
                    return Err(Error::InvariantBreach(format!(
                        "W at node ({k}, {j}) is not concave"
                    )));
                }
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(level);
    }
    levels.reverse();
    let surface = ValueSurface { levels };
    let pi_star = surface.levels[0][0].max_value();
    Ok((pi_star, surface))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Child {
    Up,
    Down,
}

/// Envelope of a node's two children, before clipping, with provenance.
fn tagged_envelope<T: Scalar>(
    surface: &ValueSurface<T>,
    node: NodeIndex,
) -> Vec<TaggedPoint<T, Child>> {
    let next = &surface.levels[node.k + 1];
    let tag = |f: &PiecewiseLinearConcave<T>, tag: Child| {
        f.breakpoints()
            .iter()
            .map(move |&(a, w)| TaggedPoint { a, w, tag })
            .collect::<Vec<_>>()
    };
    let mut cloud = tag(&next[node.j + 1], Child::Up);
    cloud.extend(tag(&next[node.j], Child::Down));
    upper_hull(cloud)
}

/// Child targets realizing the envelope value at shadow price `a`.
fn supporting_targets<T: Scalar>(
    params: &MarketParams<T>,
    hull: &[TaggedPoint<T, Child>],
    s: T,
    a: T,
) -> BranchTargets<T> {
    let near = T::rel_tol(1e-12) * s;
    let idx = hull.partition_point(|p| p.a < a);
    let single = if idx < hull.len() && (hull[idx].a - a).abs() <= near {
        Some(hull[idx].tag)
    } else if idx > 0 && (hull[idx - 1].a - a).abs() <= near {
        Some(hull[idx - 1].tag)
    } else {
        let left = hull[idx.max(1) - 1];
        let right = hull[idx.min(hull.len() - 1)];
        match (left.tag, right.tag) {
            (Child::Up, Child::Down) => {
                return BranchTargets {
                    a_up: left.a,
                    a_down: right.a,
                }
            }
            (Child::Down, Child::Up) => {
                return BranchTargets {
                    a_up: right.a,
                    a_down: left.a,
                }
            }
            (tag, _) => Some(tag),
        }
    };
    // The optimum lies on one child's graph: give the other child a tiny
    // weight at the far edge of its band.
    let eps = T::lit(EDGE_WEIGHT);
    let keep = T::one() - eps;
    match single.expect("set above") {
        Child::Up => {
            let a_down = params.band(s * params.d).0;
            BranchTargets {
                a_up: (a - eps * a_down) / keep,
                a_down,
            }
        }
        Child::Down => {
            let a_up = params.band(s * params.u).1;
            BranchTargets {
                a_up,
                a_down: (a - eps * a_up) / keep,
            }
        }
    }
}

/// Traces the maximizers of the recursion forward into a price system whose
/// dual value matches the price (up to a relative `1e-11` edge weight where
/// the optimum sits on a single child's graph).
pub fn extract_worst_case_price_system<T: Scalar>(
    params: &MarketParams<T>,
    surface: &ValueSurface<T>,
) -> Result<PriceSystemTree<T>> {
    let horizon = params.horizon;
    check_path_horizon(horizon, "price-system trees")?;
    if surface.horizon() != horizon {
        return Err(Error::LengthMismatch {
            expected: horizon,
            got: surface.horizon(),
        });
    }
    let hulls: Vec<Vec<Vec<TaggedPoint<T, Child>>>> = (0..horizon)
        .map(|k| {
            (0..=k)
                .map(|j| tagged_envelope(surface, NodeIndex::new(k, j)))
                .collect()
        })
        .collect();
    let (a0, _) = surface.levels[0][0].argmax();
    let field = ControlField::build(horizon, a0, |k, i, a| {
        let node = NodeIndex::new(k, i.count_ones() as usize);
        let s = params.stock_price(node);
        supporting_targets(params, &hulls[k][node.j], s, a)
    });
    price_system::generate(params, &field)
}

/// The envelope at a node before clipping, for diagnostics.
pub fn unclipped_envelope<T: Scalar>(
    surface: &ValueSurface<T>,
    node: NodeIndex,
) -> Result<PiecewiseLinearConcave<T>> {
    let hull = tagged_envelope(surface, node);
    clip_hull(&hull, hull[0].a, hull[hull.len() - 1].a)
}
