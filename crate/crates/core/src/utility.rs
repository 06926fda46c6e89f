//! Power-utility maximization through the dual recursion.
//!
//! With `U(x) = x^γ/γ` the conjugate is `U*(y) = -y^μ/μ`, `μ = γ/(γ-1) < 0`,
//! and the dual problem reduces to minimizing `E[ρ⁰(T)^μ]` over price
//! systems. Normalizing the shadow price by the stock price, the conditional
//! minimum `V̂_k(A)` no longer depends on the stock price and satisfies
//!
//! ```text
//! V̂_T ≡ 1
//! V̂_k(A) = inf p^(1-μ) α^μ V̂_{k+1}(Aᵘ) + (1-p)^(1-μ) (1-α)^μ V̂_{k+1}(A^d)
//! ```
//!
//! over `α ∈ (0,1)` and `Aᵘ, A^d ∈ [1-λ₁, 1+λ₀]` with `αuAᵘ + (1-α)dA^d = A`.
//! The value function is then
//! `V(x₀, x₁) = (1/γ) inf_R (x₀ + x₁ S R)^γ V̂₀(R)^(1-γ)`.
//!
//! `V̂_k` is stored on a uniform grid over the normalized band and
//! interpolated linearly. For each grid abscissa the infimum is taken over a
//! uniform `α` grid (plus `p` and the feasibility endpoints) refined by
//! golden-section search; for fixed `α` the inner problem is one-dimensional
//! in `Aᵘ` and is solved by a short scan followed by golden-section search.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{MarketParams, NodeIndex, PortfolioState, Strategy};
use crate::price_system::{self, BranchTargets, ControlField, PriceSystemTree};
use crate::scalar::Scalar;

/// Default number of grid abscissae for `V̂_k`.
pub const DEFAULT_GRID_SIZE: usize = 2001;

/// Distance kept from `α ∈ {0, 1}`, where the objective diverges.
const ALPHA_EPS: f64 = 1e-9;

/// Relative slack in the duality-bound comparison.
pub const DUALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerUtility<T> {
    gamma: T,
    mu: T,
}

impl<T: Scalar> PowerUtility<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::Precondition(format!("gamma={gamma} must lie in (0, 1)")));
        }
        Ok(Self {
            gamma,
            mu: gamma / (gamma - T::one()),
        })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Conjugate exponent `μ = γ/(γ-1)`.
    pub fn mu(&self) -> T {
        self.mu
    }

    /// `x^γ/γ` for `x ≥ 0`.
    pub fn utility(&self, x: T) -> T {
        x.powf(self.gamma) / self.gamma
    }

    /// `U*(y) = sup_{x≥0} U(x) - xy = -y^μ/μ` for `y > 0`.
    pub fn conjugate(&self, y: T) -> T {
        -y.powf(self.mu) / self.mu
    }
}

/// `f(α) = p^(1-μ) α^μ + (1-p)^(1-μ) (1-α)^μ`, minimal (= 1) at `α = p`.
pub fn f_alpha<T: Scalar>(alpha: T, p: T, mu: T) -> Result<T> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::Precondition(format!("alpha={alpha} must lie in (0, 1)")));
    }
    let one = T::one();
    Ok(p.powf(one - mu) * alpha.powf(mu) + (one - p).powf(one - mu) * (one - alpha).powf(mu))
}

/// `V̂_k` sampled on a uniform grid over `[1-λ₁, 1+λ₀]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VhatCurve<T> {
    pub k: usize,
    lo: T,
    hi: T,
    values: Vec<T>,
}

impl<T: Scalar> VhatCurve<T> {
    /// The terminal curve `V̂_T ≡ 1`.
    pub fn terminal(params: &MarketParams<T>, grid_size: usize) -> Result<Self> {
        if grid_size < 3 {
            return Err(Error::Precondition(format!("grid size {grid_size} must be at least 3")));
        }
        let (lo, hi) = params.unit_band();
        Ok(Self {
            k: params.horizon,
            lo,
            hi,
            values: vec![T::one(); grid_size],
        })
    }

    pub fn from_values(k: usize, lo: T, hi: T, values: Vec<T>) -> Result<Self> {
        if values.len() < 2 || hi < lo {
            return Err(Error::Precondition("curve needs two values on a nonempty band".into()));
        }
        Ok(Self { k, lo, hi, values })
    }

    pub fn band(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn abscissa(&self, i: usize) -> T {
        let n = self.values.len() - 1;
        if i == n {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * T::lit(i as f64) / T::lit(n as f64)
    }

    pub fn grid(&self) -> Vec<T> {
        (0..self.values.len()).map(|i| self.abscissa(i)).collect()
    }

    /// Linear interpolation, clamped to the band.
    pub fn eval(&self, a: T) -> T {
        let n = self.values.len() - 1;
        let width = self.hi - self.lo;
        if width <= T::zero() {
            return self.values[0];
        }
        let pos = ((a - self.lo) / width * T::lit(n as f64))
            .max(T::zero())
            .min(T::lit(n as f64));
        let i = pos.floor().to_usize().unwrap_or(0).min(n - 1);
        let t = pos - T::lit(i as f64);
        self.values[i] + (self.values[i + 1] - self.values[i]) * t
    }
}

/// Inner-solver resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VhatSolver {
    /// Uniform `α` candidates per abscissa before refinement.
    pub alpha_grid: usize,
    /// Scan points for `Aᵘ` at fixed `α` before refinement.
    pub inner_scan: usize,
    /// Golden-section iterations (per refinement).
    pub golden_iters: usize,
}

impl Default for VhatSolver {
    fn default() -> Self {
        Self {
            alpha_grid: 512,
            inner_scan: 9,
            golden_iters: 48,
        }
    }
}

/// How child shadow prices outside the band are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Feasible {
    /// Both children confined to the band.
    Band,
    /// Past the favourable edge of the band the curve is continued by its
    /// edge value; past the other edge the objective is infinite.
    Extended,
}

/// Drift factor `pu + (1-p)d` compared with 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    Up,
    Down,
    Neutral,
}

pub fn drift_direction<T: Scalar>(params: &MarketParams<T>) -> Drift {
    let m = params.drift();
    let tol = T::rel_tol(1e-14);
    if (m - T::one()).abs() <= tol {
        Drift::Neutral
    } else if m > T::one() {
        Drift::Up
    } else {
        Drift::Down
    }
}

struct StepProblem<'a, T> {
    next: &'a VhatCurve<T>,
    u: T,
    d: T,
    p: T,
    mu: T,
    cu: T,
    cd: T,
    lo: T,
    hi: T,
    mode: Feasible,
    drift: Drift,
    solver: VhatSolver,
}

impl<'a, T: Scalar> StepProblem<'a, T> {
    fn new(
        next: &'a VhatCurve<T>,
        params: &MarketParams<T>,
        putil: &PowerUtility<T>,
        mode: Feasible,
        solver: VhatSolver,
    ) -> Self {
        let one = T::one();
        let mu = putil.mu();
        let (lo, hi) = next.band();
        Self {
            next,
            u: params.u,
            d: params.d,
            p: params.p,
            mu,
            cu: params.p.powf(one - mu),
            cd: (one - params.p).powf(one - mu),
            lo,
            hi,
            mode,
            drift: drift_direction(params),
            solver,
        }
    }

    /// Curve value with the extension rule applied outside the band.
    fn g(&self, a: T) -> T {
        match self.mode {
            Feasible::Band => self.next.eval(a),
            Feasible::Extended => {
                let below = a < self.lo - T::rel_tol(1e-13);
                let above = a > self.hi + T::rel_tol(1e-13);
                match (self.drift, below, above) {
                    (Drift::Down, _, true) | (Drift::Up, true, _) => T::infinity(),
                    _ => self.next.eval(a),
                }
            }
        }
    }

    /// Feasible range of the `Aᵘ` and `A^d` coordinates.
    fn coord_range(&self) -> (T, T) {
        match (self.mode, self.drift) {
            (Feasible::Band, _) => (self.lo, self.hi),
            (Feasible::Extended, Drift::Down) => (T::zero(), self.hi),
            (Feasible::Extended, _) => (self.lo, T::infinity()),
        }
    }

    /// Range of `α` for which some feasible `(Aᵘ, A^d)` exists.
    fn alpha_range(&self, a: T) -> (T, T) {
        let (clo, chi) = self.coord_range();
        let spread = self.u - self.d;
        let eps = T::lit(ALPHA_EPS);
        let lower = if chi.is_finite() { (a / chi - self.d) / spread } else { T::zero() };
        let upper = if clo > T::zero() { (a / clo - self.d) / spread } else { T::one() };
        (lower.max(eps), upper.min(T::one() - eps))
    }

    /// `min over Aᵘ` of the objective at fixed `α`.
    fn inner(&self, a: T, alpha: T) -> T {
        let one = T::one();
        let (clo, chi) = self.coord_range();
        let wu = self.cu * alpha.powf(self.mu);
        let wd = self.cd * (one - alpha).powf(self.mu);
        let up_coef = alpha * self.u;
        let down_coef = (one - alpha) * self.d;
        let y_of = |x: T| ((a - up_coef * x) / down_coef).max(clo).min(chi);
        let phi = |x: T| wu * self.g(x) + wd * self.g(y_of(x));

        let mut x_lo = clo.max((a - down_coef * chi) / up_coef);
        let x_hi = chi.min((a - down_coef * clo) / up_coef);
        if !x_lo.is_finite() {
            x_lo = clo;
        }
        let x_hi = x_hi.max(x_lo);
        if x_hi - x_lo <= T::epsilon() * x_hi.abs().max(one) {
            return phi(x_lo);
        }
        let n = self.solver.inner_scan.max(3);
        let mut xs: Vec<T> = (0..n)
            .map(|i| x_lo + (x_hi - x_lo) * T::lit(i as f64) / T::lit((n - 1) as f64))
            .collect();
        // equal children A^u = A^d
        let diag = a / (up_coef + down_coef);
        if diag > x_lo && diag < x_hi {
            xs.push(diag);
        }
        xs.sort_by(|l, r| l.partial_cmp(r).expect("finite"));
        let (x, v) = scan_then_golden(&xs, &phi, self.solver.golden_iters);
        let _ = x;
        v
    }

    fn solve(&self, a: T) -> Result<T> {
        let (a_min, a_max) = self.alpha_range(a);
        if a_min > a_max {
            let slack = T::rel_tol(1e-12);
            if a_min - a_max > slack {
                return Err(Error::InvariantBreach(format!(
                    "empty feasible set for A={a}: alpha range [{a_min}, {a_max}]"
                )));
            }
            return Ok(self.inner(a, a_min));
        }
        if a_max - a_min <= T::epsilon() {
            return Ok(self.inner(a, a_min));
        }
        let n = self.solver.alpha_grid.max(2);
        let mut alphas: Vec<T> = (0..n)
            .map(|i| a_min + (a_max - a_min) * T::lit(i as f64) / T::lit((n - 1) as f64))
            .collect();
        if self.p > a_min && self.p < a_max {
            alphas.push(self.p);
        }
        alphas.sort_by(|l, r| l.partial_cmp(r).expect("finite"));
        let obj = |alpha: T| self.inner(a, alpha);
        let (_, v) = scan_then_golden(&alphas, &obj, self.solver.golden_iters);
        Ok(v)
    }
}

/// Evaluates `f` on sorted `xs`, then runs golden-section search on the
/// bracket around the best sample. Returns the best point seen.
fn scan_then_golden<T: Scalar>(xs: &[T], f: &impl Fn(T) -> T, iters: usize) -> (T, T) {
    let vals: Vec<T> = xs.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v < vals[best] {
            best = i;
        }
    }
    let mut best_x = xs[best];
    let mut best_v = vals[best];
    let lo_i = best.saturating_sub(1);
    let hi_i = (best + 1).min(xs.len() - 1);
    let (mut l, mut r) = (xs[lo_i], xs[hi_i]);
    if r <= l {
        return (best_x, best_v);
    }
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut c = r - (r - l) * inv_phi;
    let mut e = l + (r - l) * inv_phi;
    let mut fc = f(c);
    let mut fe = f(e);
    for _ in 0..iters {
        if fc <= fe {
            r = e;
            e = c;
            fe = fc;
            c = r - (r - l) * inv_phi;
            fc = f(c);
        } else {
            l = c;
            c = e;
            fc = fe;
            e = l + (r - l) * inv_phi;
            fe = f(e);
        }
        if r - l <= T::epsilon() * (l.abs() + r.abs()) {
            break;
        }
    }
    for (x, v) in [(c, fc), (e, fe)] {
        if v < best_v {
            best_x = x;
            best_v = v;
        }
    }
    (best_x, best_v)
}

/// One step of the dual recursion on `next`'s grid.
pub fn backstep_vhat<T: Scalar>(
    next: &VhatCurve<T>,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
) -> Result<VhatCurve<T>> {
    backstep_vhat_with(next, params, putil, VhatSolver::default())
}

pub fn backstep_vhat_with<T: Scalar>(
    next: &VhatCurve<T>,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
    solver: VhatSolver,
) -> Result<VhatCurve<T>> {
    if next.k == 0 {
        return Err(Error::Precondition("cannot step back from k = 0".into()));
    }
    let (lo, hi) = params.unit_band();
    if next.lo != lo || next.hi != hi {
        return Err(Error::DomainMismatch(format!(
            "curve band [{}, {}] differs from [{lo}, {hi}]",
            next.lo, next.hi
        )));
    }
    if drift_direction(params) == Drift::Neutral {
        return Ok(VhatCurve {
            k: next.k - 1,
            values: vec![T::one(); next.len()],
            ..next.clone()
        });
    }
    let problem = StepProblem::new(next, params, putil, Feasible::Band, solver);
    let values = (0..next.len())
        .into_par_iter()
        .map(|i| problem.solve(next.abscissa(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(VhatCurve {
        k: next.k - 1,
        lo,
        hi,
        values,
    })
}

/// The one-step infimum at `a` with the band constraint replaced by the
/// edge-value extension of `next` (finite past the edge where `next` is
/// smallest, infinite past the other). When `next` is monotone in the
/// direction the drift predicts, this agrees with [`backstep_vhat`]: clipping
/// children to the band loses nothing.
pub fn extended_backstep_value<T: Scalar>(
    next: &VhatCurve<T>,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
    a: T,
) -> Result<T> {
    let problem = StepProblem::new(next, params, putil, Feasible::Extended, VhatSolver::default());
    problem.solve(a)
}

/// `V̂_k` for `k = 0..=T`, indexed by `k`.
pub fn vhat_recursion<T: Scalar>(
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
    grid_size: usize,
) -> Result<Vec<VhatCurve<T>>> {
    vhat_recursion_with(params, putil, grid_size, VhatSolver::default())
}

pub fn vhat_recursion_with<T: Scalar>(
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
    grid_size: usize,
    solver: VhatSolver,
) -> Result<Vec<VhatCurve<T>>> {
    let mut curves = vec![VhatCurve::terminal(params, grid_size)?];
    for _ in 0..params.horizon {
        let prev = curves.last().expect("nonempty");
        curves.push(backstep_vhat_with(prev, params, putil, solver)?);
    }
    curves.reverse();
    Ok(curves)
}

/// Normalized shadow prices where `V̂_k = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatRegion<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> FlatRegion<T> {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, a: T) -> bool {
        self.lo <= a && a <= self.hi
    }
}

/// `[(1-λ₁)m^(T-k), 1+λ₀]` for drift `m > 1`, `[1-λ₁, (1+λ₀)m^(T-k)]` for
/// `m < 1`, the whole band for `m = 1`. Empty when `lo > hi`.
pub fn flat_region_bounds<T: Scalar>(params: &MarketParams<T>, k: usize) -> FlatRegion<T> {
    let (lo, hi) = params.unit_band();
    let steps = params.horizon.saturating_sub(k) as i32;
    let growth = params.drift().powi(steps);
    match drift_direction(params) {
        Drift::Up => FlatRegion { lo: lo * growth, hi },
        Drift::Down => FlatRegion { lo, hi: hi * growth },
        Drift::Neutral => FlatRegion { lo, hi },
    }
}

fn check_solvent<T: Scalar>(params: &MarketParams<T>, x0: T, x1: T) -> Result<()> {
    let liq = params.liquidation_value(PortfolioState::new(x0, x1), params.s0);
    if !(liq > T::zero()) {
        return Err(Error::Precondition(format!(
            "initial position ({x0}, {x1}) has liquidation value {liq} <= 0"
        )));
    }
    Ok(())
}

/// `V(x₀, x₁) = (1/γ) inf_R (x₀ + x₁ s₀ R)^γ V̂₀(R)^(1-γ)` over the band.
///
/// When the drift and the sign of `x₁` agree (up drift with `x₁ ≤ 0`, down
/// drift with `x₁ ≥ 0`) both factors are optimized at the same band edge
/// and the edge value is returned directly.
pub fn value_function<T: Scalar>(
    x0: T,
    x1: T,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
    vhat0: &VhatCurve<T>,
) -> Result<T> {
    check_solvent(params, x0, x1)?;
    if vhat0.k != 0 {
        return Err(Error::Precondition(format!("expected the k = 0 curve, got k = {}", vhat0.k)));
    }
    let gamma = putil.gamma();
    let one = T::one();
    let objective = |r: T| (x0 + x1 * params.s0 * r).powf(gamma) * vhat0.eval(r).powf(one - gamma);
    let (lo, hi) = vhat0.band();
    let edge = match drift_direction(params) {
        Drift::Up if x1 <= T::zero() => Some(hi),
        Drift::Down if x1 >= T::zero() => Some(lo),
        _ => None,
    };
    let best = match edge {
        Some(r) => objective(r),
        None => scan_then_golden(&vhat0.grid(), &objective, 64).1,
    };
    Ok(best / gamma)
}

/// Minimizer `ξ̂ = ((x₀ + x₁ s₀ R)/V̂₀(R))^(1/(μ-1))` of
/// `-ξ^μ V̂₀(R)/μ + ξ(x₀ + x₁ s₀ R)`.
pub fn optimal_xi<T: Scalar>(
    r: T,
    x0: T,
    x1: T,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
    vhat0: &VhatCurve<T>,
) -> Result<T> {
    let base = x0 + x1 * params.s0 * r;
    if !(base > T::zero()) {
        return Err(Error::Precondition(format!("x0 + x1*s0*R = {base} must be positive")));
    }
    Ok((base / vhat0.eval(r)).powf(T::one() / (putil.mu() - T::one())))
}

/// Both sides of the weak-duality inequality for one strategy, price system
/// and multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityBound<T> {
    /// `E[U(liquidation value at T)]`.
    pub primal: T,
    /// `E[U*(ξρ⁰(T))] + x₁ξE[ρ¹(T)] + x₀ξ`.
    pub dual: T,
}

impl<T: Scalar> DualityBound<T> {
    pub fn gap(&self) -> T {
        self.dual - self.primal
    }

    pub fn holds(&self) -> bool {
        self.primal <= self.dual + T::rel_tol(DUALITY_TOL) * (T::one() + self.dual.abs())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn duality_bound<T: Scalar>(
    strat: &Strategy<T>,
    tree: &PriceSystemTree<T>,
    xi: T,
    x0: T,
    x1: T,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
) -> Result<DualityBound<T>> {
    let horizon = params.horizon;
    if strat.horizon() != horizon || tree.horizon() != horizon {
        return Err(Error::LengthMismatch {
            expected: horizon,
            got: if strat.horizon() != horizon { strat.horizon() } else { tree.horizon() },
        });
    }
    if !(xi > T::zero()) {
        return Err(Error::Precondition(format!("xi={xi} must be positive")));
    }
    let start = PortfolioState::new(x0, x1);
    let terminal = params
        .terminal_states(strat, start)
        .ok_or_else(|| Error::Precondition("strategy is not admissible".into()))?;
    let mut primal = T::zero();
    let mut conj = T::zero();
    let mut rho1 = T::zero();
    for (i, (state, node)) in terminal.iter().zip(tree.terminal()).enumerate() {
        let j = i.count_ones() as usize;
        let prob = params.node_probability(horizon, j);
        let price = params.stock_price(NodeIndex::new(horizon, j));
        let wealth = params.liquidation_value(*state, price).max(T::zero());
        primal = primal + prob * putil.utility(wealth);
        conj = conj + prob * putil.conjugate(xi * node.rho0);
        rho1 = rho1 + prob * node.rho1;
    }
    Ok(DualityBound {
        primal,
        dual: conj + x1 * xi * rho1 + x0 * xi,
    })
}

/// Weak duality `E[U(X_T)] ≤ E[U*(ξρ⁰(T))] + x₁ξE[ρ¹(T)] + x₀ξ`, with
/// relative slack [`DUALITY_TOL`].
#[allow(clippy::too_many_arguments)]
pub fn verify_duality_bound<T: Scalar>(
    strat: &Strategy<T>,
    tree: &PriceSystemTree<T>,
    xi: T,
    x0: T,
    x1: T,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
) -> Result<bool> {
    Ok(duality_bound(strat, tree, xi, x0, x1, params, putil)?.holds())
}

/// Edge ratio at which the hold policy closes the share position, if the
/// drift/sign/horizon conditions under which holding is optimal are met.
fn hold_edge<T: Scalar>(x1: T, params: &MarketParams<T>) -> Result<T> {
    let (lo, hi) = params.unit_band();
    let growth = params.drift().powi(params.horizon as i32);
    match drift_direction(params) {
        Drift::Up => {
            if x1 > T::zero() {
                return Err(Error::Precondition(format!(
                    "up drift requires x1 <= 0 for buy-and-hold, got {x1}"
                )));
            }
            if lo * growth > hi {
                return Err(Error::Precondition(format!(
                    "(1-lambda_sell)*drift^T = {} exceeds 1+lambda_buy = {hi}",
                    lo * growth
                )));
            }
            Ok(hi)
        }
        Drift::Down => {
            if x1 < T::zero() {
                return Err(Error::Precondition(format!(
                    "down drift requires x1 >= 0 for sell-and-hold, got {x1}"
                )));
            }
            if hi * growth < lo {
                return Err(Error::Precondition(format!(
                    "(1+lambda_buy)*drift^T = {} is below 1-lambda_sell = {lo}",
                    hi * growth
                )));
            }
            Ok(lo)
        }
        Drift::Neutral => Err(Error::Precondition("drift factor equals 1".into())),
    }
}

/// Utility of closing the share position at time 0 at the unfavourable band
/// edge and holding cash, under the conditions making this optimal.
pub fn hold_policy_value<T: Scalar>(
    x0: T,
    x1: T,
    params: &MarketParams<T>,
    putil: &PowerUtility<T>,
) -> Result<T> {
    check_solvent(params, x0, x1)?;
    let edge = hold_edge(x1, params)?;
    Ok(putil.utility(x0 + x1 * params.s0 * edge))
}

/// Close the share position at time 0, then never trade.
pub fn hold_strategy<T: Scalar>(params: &MarketParams<T>, x1: T) -> Strategy<T> {
    Strategy::from_fn(params.horizon, |k, _| if k == 0 { -x1 } else { T::zero() })
}

/// Price system with `ρ⁰ ≡ 1` whose band ratio starts at `r0` and divides by
/// the drift factor each period. It certifies the hold policy when `r0` is
/// the edge returned for the hold conditions.
pub fn unit_density_tree<T: Scalar>(params: &MarketParams<T>, r0: T) -> Result<PriceSystemTree<T>> {
    let m = params.drift();
    let field = ControlField::build(params.horizon, r0 * params.s0, |k, i, a| {
        let s = params.stock_price(NodeIndex::new(k, i.count_ones() as usize));
        let r_next = a / s / m;
        BranchTargets {
            a_up: s * params.u * r_next,
            a_down: s * params.d * r_next,
        }
    });
    price_system::generate(params, &field)
}

/// The unit-density tree at the hold edge, when the hold conditions hold.
pub fn hold_dual_tree<T: Scalar>(params: &MarketParams<T>, x1: T) -> Result<PriceSystemTree<T>> {
    unit_density_tree(params, hold_edge(x1, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_market(horizon: usize) -> MarketParams<f64> {
        MarketParams::<f64>::new(1.2, 0.9, 0.5, horizon, 100.0, 0.1, 0.1).unwrap()
    }

    #[test]
    fn f_alpha_examples() {
        for p in [0.2, 0.5, 0.77] {
            for mu in [-0.5, -1.0, -3.0] {
                assert!((f_alpha::<f64>(p, p, mu).unwrap() - 1.0).abs() < 1e-14);
                for a in [0.01, 0.3, 0.6, 0.99] {
                    assert!(f_alpha::<f64>(a, p, mu).unwrap() >= 1.0 - 1e-14);
                }
            }
        }
        assert!((f_alpha::<f64>(0.25, 0.5, -1.0).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        assert!(f_alpha::<f64>(0.0, 0.5, -1.0).is_err());
        assert!(f_alpha::<f64>(1.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn conjugate_matches_definition() {
        let putil = PowerUtility::new(0.5).unwrap();
        assert_eq!(putil.mu(), -1.0);
        for y in [0.1, 0.7, 2.5] {
            // sup over a fine x grid
            let brute = (1..200_000)
                .map(|i| {
                    let x = i as f64 * 1e-3;
                    putil.utility(x) - x * y
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((brute - putil.conjugate(y)).abs() < 1e-5);
        }
    }

    #[test]
    fn one_step_lower_edge_closed_form() {
        let params = example_market(1);
        let putil = PowerUtility::new(0.5).unwrap();
        let curve = backstep_vhat(&VhatCurve::terminal(&params, 101).unwrap(), &params, &putil).unwrap();
        assert!((curve.values()[0] - 1.125).abs() < 1e-9);
        assert!((curve.eval(0.9) - 1.125).abs() < 1e-9);
        // flat from (1-λ₁)·m = 0.945 upward
        for (a, v) in curve.grid().iter().zip(curve.values()) {
            if *a >= 0.945 + 1e-12 {
                assert!((v - 1.0).abs() < 1e-12, "A={a} V={v}");
            }
        }
    }

    #[test]
    fn flat_region_examples() {
        let params = example_market(2);
        let r = flat_region_bounds(&params, 0);
        assert!((r.lo - 0.99225).abs() < 1e-12 && (r.hi - 1.1).abs() < 1e-15);
        let r = flat_region_bounds(&params, 2);
        assert!((r.lo - 0.9).abs() < 1e-15 && (r.hi - 1.1).abs() < 1e-15);
        let long = example_market(10);
        assert!(flat_region_bounds(&long, 0).is_empty());
        let neutral = MarketParams::<f64>::new(1.2, 0.9, 1.0 / 3.0, 4, 100.0, 0.1, 0.1).unwrap();
        assert_eq!(drift_direction(&neutral), Drift::Neutral);
        let r = flat_region_bounds(&neutral, 0);
        assert_eq!((r.lo, r.hi), neutral.unit_band());
    }

    #[test]
    fn terminal_recursion() {
        let params = example_market(0);
        let putil = PowerUtility::new(0.5).unwrap();
        let curves = vhat_recursion(&params, &putil, 11).unwrap();
        assert_eq!(curves.len(), 1);
        assert!(curves[0].values().iter().all(|v| *v == 1.0));
        assert!(vhat_recursion(&params, &putil, 2).is_err());
    }

    #[test]
    fn optimal_xi_examples() {
        let params = example_market(1);
        let putil = PowerUtility::new(0.5).unwrap();
        let flat = VhatCurve::terminal(&params, 11).unwrap();
        let flat0 = VhatCurve { k: 0, ..flat };
        // x0 + x1·s0·R = 4 with R = 1
        let xi = optimal_xi(1.0, 4.0, 0.0, &params, &putil, &flat0).unwrap();
        assert!((xi - 0.5).abs() < 1e-15);
        let scaled = optimal_xi(1.0, 12.0, 0.0, &params, &putil, &flat0).unwrap();
        assert!((scaled - 3f64.powf(-0.5) * xi).abs() < 1e-15);
        assert!(optimal_xi(1.0, -1.0, 0.0, &params, &putil, &flat0).is_err());
    }

    #[test]
    fn xi_plugs_into_dual_objective() {
        let params = example_market(2);
        let putil = PowerUtility::new(0.3).unwrap();
        let curves = vhat_recursion_with(&params, &putil, 41, VhatSolver { alpha_grid: 64, ..Default::default() })
            .unwrap();
        let (x0, x1) = (250.0, 0.7);
        for r in [0.9, 0.95, 1.02, 1.1] {
            let xi = optimal_xi(r, x0, x1, &params, &putil, &curves[0]).unwrap();
            let v = curves[0].eval(r);
            let base = x0 + x1 * params.s0 * r;
            let dual = -xi.powf(putil.mu()) * v / putil.mu() + xi * base;
            let closed = base.powf(putil.gamma()) * v.powf(1.0 - putil.gamma()) / putil.gamma();
            assert!((dual - closed).abs() < 1e-10 * closed);
        }
    }

    #[test]
    fn hold_policy_examples() {
        let params = MarketParams::<f64>::new(1.2, 0.9, 0.4, 1, 100.0, 0.01, 0.01).unwrap();
        let putil = PowerUtility::new(0.5).unwrap();
        let v = hold_policy_value(300.0, -2.0, &params, &putil).unwrap();
        assert!((v - 2.0 * 98f64.sqrt()).abs() < 1e-12);
        let cash = hold_policy_value(100.0, 0.0, &params, &putil).unwrap();
        assert!((cash - 20.0).abs() < 1e-12);
        // wrong sign for an up drift
        assert!(hold_policy_value(300.0, 1.0, &params, &putil).is_err());
        // horizon too long for the band
        assert!(hold_policy_value(300.0, -1.0, &params.with_horizon(40), &putil).is_err());
    }

    #[test]
    fn hold_policy_meets_its_dual_certificate() {
        let params = MarketParams::<f64>::new(1.2, 0.9, 0.5, 2, 100.0, 0.1, 0.1).unwrap();
        let putil = PowerUtility::new(0.5).unwrap();
        let (x0, x1) = (300.0, -1.5);
        let tree = hold_dual_tree(&params, x1).unwrap();
        let flat = VhatCurve { k: 0, ..VhatCurve::terminal(&params, 11).unwrap() };
        let xi = optimal_xi(1.1, x0, x1, &params, &putil, &flat).unwrap();
        let bound = duality_bound(&hold_strategy(&params, x1), &tree, xi, x0, x1, &params, &putil).unwrap();
        assert!(bound.holds());
        assert!(bound.gap().abs() < 1e-9, "gap {}", bound.gap());
    }

    #[test]
    fn idle_strategy_satisfies_weak_duality() {
        let params = example_market(2);
        let putil = PowerUtility::new(0.5).unwrap();
        for seed in 0..20 {
            let controls = price_system::sample_random_controls(&params, seed).unwrap();
            let tree = price_system::generate(&params, &controls).unwrap();
            for xi in [0.01, 0.3, 2.0] {
                assert!(verify_duality_bound(&Strategy::zero(2), &tree, xi, 50.0, 0.2, &params, &putil).unwrap());
            }
        }
        let greedy = Strategy::from_fn(2, |k, _| if k == 0 { 100.0 } else { 0.0 });
        let tree = unit_density_tree(&params, 1.0).unwrap();
        assert!(verify_duality_bound(&greedy, &tree, 1.0, 50.0, 0.0, &params, &putil).is_err());
    }
}
