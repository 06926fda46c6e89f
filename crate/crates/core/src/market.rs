//! Binomial market with proportional transaction costs.
//!
//! The bond is the numeraire (its price is 1 at every date), so discounted
//! and nominal stock prices coincide. Trades `I(k)` happen at dates
//! `k = 0..=T`; buying `z > 0` shares costs `(1 + λ₀) z S`, selling
//! `-z` shares yields `(1 - λ₁) |z| S`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams<T> {
    /// Up factor `u > 1`.
    pub u: T,
    /// Down factor `0 < d < 1`.
    pub d: T,
    /// Probability of an up move under the physical measure.
    pub p: T,
    /// Number of periods `T`.
    pub horizon: usize,
    /// Initial stock price.
    pub s0: T,
    /// Proportional cost of buying, `λ₀`.
    pub lambda_buy: T,
    /// Proportional cost of selling, `λ₁`.
    pub lambda_sell: T,
}

impl<T: Scalar> MarketParams<T> {
    pub fn new(u: T, d: T, p: T, horizon: usize, s0: T, lambda_buy: T, lambda_sell: T) -> Result<Self> {
        let params = Self {
            u,
            d,
            p,
            horizon,
            s0,
            lambda_buy,
            lambda_sell,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let one = T::one();
        let all_finite = [self.u, self.d, self.p, self.s0, self.lambda_buy, self.lambda_sell]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidParams("all parameters must be finite".into()));
        }
        if !(zero < self.d && self.d < one && one < self.u) {
            return Err(Error::InvalidParams(format!(
                "need 0 < d < 1 < u, got d={}, u={}",
                self.d, self.u
            )));
        }
        if !(zero < self.p && self.p < one) {
            return Err(Error::InvalidParams(format!("need 0 < p < 1, got p={}", self.p)));
        }
        if !(self.s0 > zero) {
            return Err(Error::InvalidParams(format!("need s0 > 0, got {}", self.s0)));
        }
        if self.lambda_buy < zero || self.lambda_sell < zero || self.lambda_sell >= one {
            return Err(Error::InvalidParams(format!(
                "need lambda_buy >= 0 and 0 <= lambda_sell < 1, got {} and {}",
                self.lambda_buy, self.lambda_sell
            )));
        }
        Ok(())
    }

    /// Same market with different cost rates.
    pub fn with_costs(&self, lambda_buy: T, lambda_sell: T) -> Result<Self> {
        Self::new(self.u, self.d, self.p, self.horizon, self.s0, lambda_buy, lambda_sell)
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..*self }
    }

    pub fn is_frictionless(&self) -> bool {
        self.lambda_buy == T::zero() && self.lambda_sell == T::zero()
    }

    /// `P_k¹ = s0 · u^j · d^(k-j)`.
    pub fn stock_price(&self, node: NodeIndex) -> T {
        debug_assert!(node.j <= node.k);
        self.s0 * self.u.powi(node.j as i32) * self.d.powi((node.k - node.j) as i32)
    }

    /// Cash needed to trade `z` shares at unit price: `(1+λ₀)z` for buys, `(1-λ₁)z` otherwise.
    pub fn transaction_cost_h(&self, z: T) -> T {
        if z > T::zero() {
            (T::one() + self.lambda_buy) * z
        } else {
            (T::one() - self.lambda_sell) * z
        }
    }

    /// Bid-ask band `[(1-λ₁)S, (1+λ₀)S]` for the shadow price at stock price `s`.
    pub fn band(&self, s: T) -> (T, T) {
        (
            (T::one() - self.lambda_sell) * s,
            (T::one() + self.lambda_buy) * s,
        )
    }

    /// Normalized band `[1-λ₁, 1+λ₀]`.
    pub fn unit_band(&self) -> (T, T) {
        self.band(T::one())
    }

    /// Drift factor `pu + (1-p)d`.
    pub fn drift(&self) -> T {
        self.p * self.u + (T::one() - self.p) * self.d
    }

    /// Frictionless risk-neutral up probability `(1-d)/(u-d)`.
    pub fn risk_neutral_q(&self) -> T {
        (T::one() - self.d) / (self.u - self.d)
    }

    /// `p^m (1-p)^(T-m)` for a full-length path with `m` up moves.
    pub fn path_probability(&self, word: &PathWord) -> Result<T> {
        if word.len() != self.horizon {
            return Err(Error::LengthMismatch {
                expected: self.horizon,
                got: word.len(),
            });
        }
        Ok(self.node_probability(word.len(), word.ups()))
    }

    /// Probability of any single path prefix with `ups` up moves out of `k`.
    pub(crate) fn node_probability(&self, k: usize, ups: usize) -> T {
        self.p.powi(ups as i32) * (T::one() - self.p).powi((k - ups) as i32)
    }

    /// Cash left after closing the share position at `price`: `x0 - h(-x1)·price`.
    pub fn liquidation_value(&self, x: PortfolioState<T>, price: T) -> T {
        x.x0 - self.transaction_cost_h(-x.x1) * price
    }

    /// Portfolio after trading `z` shares at `price`.
    pub fn apply_trade(&self, x: PortfolioState<T>, z: T, price: T) -> PortfolioState<T> {
        PortfolioState {
            x0: x.x0 - self.transaction_cost_h(z) * price,
            x1: x.x1 + z,
        }
    }

    /// States after the trade at each date `0..=word.len()` along `word`.
    ///
    /// Date `k` uses the price at the node reached by the first `k` moves.
    pub fn portfolio_evolution(
        &self,
        x: PortfolioState<T>,
        strat: &Strategy<T>,
        word: &PathWord,
    ) -> Result<Vec<PortfolioState<T>>> {
        if word.len() > strat.horizon() {
            return Err(Error::LengthMismatch {
                expected: strat.horizon(),
                got: word.len(),
            });
        }
        let mut state = x;
        let mut out = Vec::with_capacity(word.len() + 1);
        for k in 0..=word.len() {
            let prefix = word.prefix(k);
            let price = self.stock_price(prefix.node());
            state = self.apply_trade(state, strat.trade(k, prefix.index()), price);
            out.push(state);
        }
        Ok(out)
    }

    /// True iff the liquidation value is nonnegative after the trade at every
    /// node of the path tree.
    pub fn is_admissible(&self, strat: &Strategy<T>, x: PortfolioState<T>) -> bool {
        self.terminal_states(strat, x).is_some()
    }

    /// Terminal states by terminal path index, or `None` if the strategy is
    /// inadmissible somewhere along the way.
    pub fn terminal_states(
        &self,
        strat: &Strategy<T>,
        x: PortfolioState<T>,
    ) -> Option<Vec<PortfolioState<T>>> {
        let horizon = strat.horizon();
        let mut level = vec![x];
        for k in 0..=horizon {
            let mut traded = Vec::with_capacity(level.len());
            for (idx, state) in level.iter().enumerate() {
                let price = self.stock_price(NodeIndex::new(k, idx.count_ones() as usize));
                let next = self.apply_trade(*state, strat.trade(k, idx), price);
                if !self.is_solvent(next, price) {
                    return None;
                }
                traded.push(next);
            }
            if k == horizon {
                return Some(traded);
            }
            level = traded
                .iter()
                .flat_map(|s| [*s, *s])
                .collect();
        }
        unreachable!()
    }

    fn is_solvent(&self, x: PortfolioState<T>, price: T) -> bool {
        let scale = x.x0.abs() + x.x1.abs() * price * (T::one() + self.lambda_buy);
        self.liquidation_value(x, price) >= -T::rel_tol(1e-12) * scale
    }

    /// Interval of trades `z` at a node with stock price `price` that keep the
    /// post-trade position solvent now and, before any further trade, at every
    /// price in `next_prices`. `None` if no such trade exists.
    ///
    /// An endpoint is infinite when no constraint binds on that side.
    pub fn trade_range(&self, x: PortfolioState<T>, price: T, next_prices: &[T]) -> Option<(T, T)> {
        let mut lo = T::neg_infinity();
        let mut hi = T::infinity();
        let kinks = [T::zero(), -x.x1];
        for &quote in std::iter::once(&price).chain(next_prices) {
            let g = |z: T| self.liquidation_value(self.apply_trade(x, z, price), quote);
            let (a, b) = concave_superlevel(g, &kinks)?;
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Superlevel set `{z : g(z) >= 0}` of a concave piecewise-linear `g` whose
/// kinks are among `kinks` (nonempty). `None` if the set is empty.
fn concave_superlevel<T: Scalar>(g: impl Fn(T) -> T, kinks: &[T]) -> Option<(T, T)> {
    let mut pts: Vec<(T, T)> = kinks.iter().map(|&z| (z, g(z))).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite kinks"));
    pts.dedup_by(|a, b| a.0 == b.0);
    let slack = |v: T| T::rel_tol(1e-12) * (T::one() + v.abs());

    let (first, last) = (pts[0], pts[pts.len() - 1]);
    let best = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite values"))
        .map(|(i, _)| i)
        .expect("nonempty kinks");
    if pts[best].1 < -slack(pts[best].1) {
        // max over kinks is negative: only an outward-increasing ray can help
        let right = g(last.0 + T::one()) - last.1;
        if right > T::zero() {
            return Some((last.0 - last.1 / right, T::infinity()));
        }
        let left = g(first.0 - T::one()) - first.1;
        if left > T::zero() {
            return Some((T::neg_infinity(), first.0 + first.1 / left));
        }
        return None;
    }

    // Walk outward from the best kink until g turns negative.
    let walk = |path: &mut dyn Iterator<Item = (T, T)>, dir: T| -> T {
        let (mut z, mut gz) = pts[best];
        gz = gz.max(T::zero());
        for (c, gc) in path {
            if gc < T::zero() {
                return z + (c - z) * gz / (gz - gc);
            }
            z = c;
            gz = gc;
        }
        let slope = g(z + dir) - g(z);
        if slope >= T::zero() {
            dir * T::infinity()
        } else {
            z + dir * gz / -slope
        }
    };
    let hi = walk(&mut pts[best + 1..].iter().copied(), T::one());
    let lo = walk(&mut pts[..best].iter().rev().copied(), -T::one());
    Some((lo, hi))
}

/// Recombining lattice node: `k` periods elapsed, `j` of them up moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIndex {
    pub k: usize,
    pub j: usize,
}

impl NodeIndex {
    pub fn new(k: usize, j: usize) -> Self {
        assert!(j <= k, "node ({k}, {j}) has more up moves than periods");
        Self { k, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Up,
    Down,
}

/// A path prefix `ωᵏ = (a₁, …, a_k)`.
///
/// Path-indexed tables store level `k` as `2^k` entries; the entry of a word
/// is its binary code with the first move most significant and `Up = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PathWord {
    moves: Vec<Move>,
}

impl PathWord {
    pub fn new(moves: Vec<Move>) -> Self {
        Self { moves }
    }

    pub fn root() -> Self {
        Self::default()
    }

    /// Word of length `len` whose binary code is `index`.
    pub fn from_index(len: usize, index: usize) -> Self {
        assert!(len < usize::BITS as usize && index < (1usize << len));
        let moves = (0..len)
            .map(|i| {
                if index >> (len - 1 - i) & 1 == 1 {
                    Move::Up
                } else {
                    Move::Down
                }
            })
            .collect();
        Self { moves }
    }

    /// All `2^len` words in index order.
    pub fn all(len: usize) -> impl Iterator<Item = PathWord> {
        (0..1usize << len).map(move |i| PathWord::from_index(len, i))
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn ups(&self) -> usize {
        self.moves.iter().filter(|m| **m == Move::Up).count()
    }

    pub fn prefix(&self, k: usize) -> PathWord {
        PathWord {
            moves: self.moves[..k].to_vec(),
        }
    }

    pub fn child(&self, m: Move) -> PathWord {
        let mut moves = self.moves.clone();
        moves.push(m);
        PathWord { moves }
    }

    pub fn index(&self) -> usize {
        self.moves
            .iter()
            .fold(0, |acc, m| (acc << 1) | usize::from(*m == Move::Up))
    }

    pub fn node(&self) -> NodeIndex {
        NodeIndex::new(self.len(), self.ups())
    }
}

impl fmt::Display for PathWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.moves {
            f.write_str(match m {
                Move::Up => "U",
                Move::Down => "D",
            })?;
        }
        Ok(())
    }
}

impl FromStr for PathWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                'U' | 'u' => Ok(Move::Up),
                'D' | 'd' => Ok(Move::Down),
                other => Err(Error::Precondition(format!("invalid move '{other}' in path word"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(PathWord::new)
    }
}

/// Terminal claim `(Y⁰, Y¹)` tabulated per terminal node `j = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoff<T> {
    /// Cash leg.
    pub y0: Vec<T>,
    /// Share leg.
    pub y1: Vec<T>,
}

impl<T: Scalar> Payoff<T> {
    pub fn from_table(y0: Vec<T>, y1: Vec<T>, horizon: usize) -> Result<Self> {
        for leg in [&y0, &y1] {
            if leg.len() != horizon + 1 {
                return Err(Error::LengthMismatch {
                    expected: horizon + 1,
                    got: leg.len(),
                });
            }
        }
        Ok(Self { y0, y1 })
    }

    fn cash_only(params: &MarketParams<T>, f: impl Fn(T) -> T) -> Self {
        let y0 = (0..=params.horizon)
            .map(|j| f(params.stock_price(NodeIndex::new(params.horizon, j))))
            .collect();
        Self {
            y0,
            y1: vec![T::zero(); params.horizon + 1],
        }
    }

    /// Cash-settled call: `Y⁰ = (S_T - K)⁺`.
    pub fn call_cash(params: &MarketParams<T>, strike: T) -> Self {
        Self::cash_only(params, |s| (s - strike).max(T::zero()))
    }

    /// Cash-settled put: `Y⁰ = (K - S_T)⁺`.
    pub fn put_cash(params: &MarketParams<T>, strike: T) -> Self {
        Self::cash_only(params, |s| (strike - s).max(T::zero()))
    }

    /// Physically settled call: deliver one share against `K` cash when `S_T > K`.
    pub fn call_physical(params: &MarketParams<T>, strike: T) -> Self {
        let n = params.horizon + 1;
        let mut y0 = vec![T::zero(); n];
        let mut y1 = vec![T::zero(); n];
        for j in 0..n {
            if params.stock_price(NodeIndex::new(params.horizon, j)) > strike {
                y0[j] = -strike;
                y1[j] = T::one();
            }
        }
        Self { y0, y1 }
    }

    pub fn constant_cash(horizon: usize, amount: T) -> Self {
        Self {
            y0: vec![amount; horizon + 1],
            y1: vec![T::zero(); horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.y0.len() - 1
    }

    pub(crate) fn check_horizon(&self, horizon: usize) -> Result<()> {
        if self.y0.len() != horizon + 1 || self.y1.len() != horizon + 1 {
            return Err(Error::LengthMismatch {
                expected: horizon + 1,
                got: self.y0.len().min(self.y1.len()),
            });
        }
        Ok(())
    }
}

/// Holdings `(X⁰, X¹)`: bond units (cash) and shares.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PortfolioState<T> {
    pub x0: T,
    pub x1: T,
}

impl<T> PortfolioState<T> {
    pub fn new(x0: T, x1: T) -> Self {
        Self { x0, x1 }
    }
}

/// Adapted trading strategy `I(k, ωᵏ)`, one entry per path-tree node at
/// dates `0..=T`. Positive entries buy shares.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy<T> {
    levels: Vec<Vec<T>>,
}

impl<T: Scalar> Strategy<T> {
    pub fn zero(horizon: usize) -> Self {
        Self::from_fn(horizon, |_, _| T::zero())
    }

    /// Builds the strategy from `f(k, path_index)`.
    pub fn from_fn(horizon: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let levels = (0..=horizon)
            .map(|k| (0..1usize << k).map(|i| f(k, i)).collect())
            .collect();
        Self { levels }
    }

    /// Strategy that depends on the path only through the recombining node.
    pub fn from_node_fn(horizon: usize, mut f: impl FnMut(NodeIndex) -> T) -> Self {
        Self::from_fn(horizon, |k, i| f(NodeIndex::new(k, i.count_ones() as usize)))
    }

    pub fn from_levels(levels: Vec<Vec<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Precondition("strategy needs at least one date".into()));
        }
        for (k, level) in levels.iter().enumerate() {
            if level.len() != 1 << k {
                return Err(Error::LengthMismatch {
                    expected: 1 << k,
                    got: level.len(),
                });
            }
        }
        Ok(Self { levels })
    }

    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn trade(&self, k: usize, index: usize) -> T {
        self.levels[k][index]
    }

    pub fn set_trade(&mut self, k: usize, index: usize, z: T) {
        self.levels[k][index] = z;
    }

    pub fn levels(&self) -> &[Vec<T>] {
        &self.levels
    }
}
