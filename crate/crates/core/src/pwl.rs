//! Concave piecewise-linear functions on a closed interval and the upper
//! concave envelope of several such graphs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative cross-product threshold below which three breakpoints count as collinear.
pub const COLLINEAR_TOL: f64 = 1e-12;

/// Relative slack accepted when evaluating just outside the domain.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Concave piecewise-linear function given by its breakpoints.
///
/// Abscissae are strictly increasing and slopes are nonincreasing. A single
/// breakpoint is a function on a one-point domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearConcave<T> {
    points: Vec<(T, T)>,
}

impl<T: Scalar> PiecewiseLinearConcave<T> {
    pub fn new(points: Vec<(T, T)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Precondition("at least one breakpoint required".into()));
        }
        if points.iter().any(|(a, w)| !a.is_finite() || !w.is_finite()) {
            return Err(Error::Precondition("breakpoints must be finite".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Precondition("abscissae must be strictly increasing".into()));
        }
        let f = Self { points };
        if !f.is_concave() {
            return Err(Error::Precondition("slopes must be nonincreasing".into()));
        }
        Ok(f)
    }

    pub fn point(a: T, w: T) -> Self {
        Self { points: vec![(a, w)] }
    }

    /// `a ↦ intercept + slope·a` on `[lo, hi]`.
    pub fn affine(lo: T, hi: T, intercept: T, slope: T) -> Self {
        if hi <= lo {
            return Self::point(lo, intercept + slope * lo);
        }
        Self {
            points: vec![(lo, intercept + slope * lo), (hi, intercept + slope * hi)],
        }
    }

    pub fn breakpoints(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn domain(&self) -> (T, T) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    pub fn is_point(&self) -> bool {
        self.points.len() == 1
    }

    pub fn slopes(&self) -> Vec<T> {
        self.points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect()
    }

    /// Exact slope monotonicity check.
    pub fn is_concave(&self) -> bool {
        self.slopes().windows(2).all(|s| s[1] <= s[0])
    }

    /// Linear interpolation; points within `1e-12` (relative) of the domain
    /// are clamped onto it.
    pub fn eval(&self, a: T) -> Result<T> {
        let (lo, hi) = self.domain();
        let slack = T::rel_tol(DOMAIN_TOL) * (lo.abs().max(hi.abs()).max(hi - lo));
        if !(a >= lo - slack && a <= hi + slack) {
            return Err(Error::OutOfDomain {
                a: a.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        Ok(interpolate(&self.points, a.max(lo).min(hi), |p| (p.0, p.1)))
    }

    /// Maximum value and its smallest maximizer. Values within `1e-12`
    /// (relative) of the maximum count as ties.
    pub fn argmax(&self) -> (T, T) {
        let best = self
            .points
            .iter()
            .map(|p| p.1)
            .fold(T::neg_infinity(), T::max);
        let tie = T::rel_tol(1e-12) * (T::one() + best.abs());
        self.points
            .iter()
            .copied()
            .find(|p| p.1 >= best - tie)
            .expect("nonempty breakpoints")
    }

    pub fn max_value(&self) -> T {
        self.points.iter().map(|p| p.1).fold(T::neg_infinity(), T::max)
    }
}

/// Interpolates along sorted `pts` at `a`, which must lie in their span.
fn interpolate<T: Scalar, P>(pts: &[P], a: T, xy: impl Fn(&P) -> (T, T)) -> T {
    let idx = pts.partition_point(|p| xy(p).0 < a);
    if idx < pts.len() && xy(&pts[idx]).0 == a {
        return xy(&pts[idx]).1;
    }
    if idx == 0 {
        return xy(&pts[0]).1;
    }
    if idx == pts.len() {
        return xy(&pts[pts.len() - 1]).1;
    }
    let (x0, y0) = xy(&pts[idx - 1]);
    let (x1, y1) = xy(&pts[idx]);
    y0 + (y1 - y0) * ((a - x0) / (x1 - x0))
}

/// Twice the signed area of `(o, a, b)`, with the magnitude of its terms.
fn cross<T: Scalar>(o: (T, T), a: (T, T), b: (T, T)) -> (T, T) {
    let t1 = (a.0 - o.0) * (b.1 - o.1);
    let t2 = (a.1 - o.1) * (b.0 - o.0);
    (t1 - t2, t1.abs() + t2.abs())
}

/// A graph vertex carrying the identity of the function it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedPoint<T, P> {
    pub a: T,
    pub w: T,
    pub tag: P,
}

/// Upper concave hull (monotone chain) of a point cloud.
///
/// Points sharing an abscissa keep only the highest; a middle point that is
/// collinear with its neighbours (relative cross product below
/// [`COLLINEAR_TOL`]) or below their chord is dropped.
pub fn upper_hull<T: Scalar, P: Copy>(mut pts: Vec<TaggedPoint<T, P>>) -> Vec<TaggedPoint<T, P>> {
    pts.sort_by(|x, y| {
        x.a.partial_cmp(&y.a)
            .expect("finite abscissae")
            .then(y.w.partial_cmp(&x.w).expect("finite values"))
    });
    pts.dedup_by(|later, kept| later.a == kept.a);
    let tol = T::rel_tol(COLLINEAR_TOL);
    let mut hull: Vec<TaggedPoint<T, P>> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let (c, scale) = cross((o.a, o.w), (a.a, a.w), (p.a, p.w));
            if c >= -tol * scale {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Value of a hull (as returned by [`upper_hull`]) at `a` within its span.
pub fn hull_value<T: Scalar, P>(hull: &[TaggedPoint<T, P>], a: T) -> T {
    interpolate(hull, a, |p| (p.a, p.w))
}

/// Upper concave envelope of the union of the graphs of `parts`, restricted
/// to `[lo, hi]`, which must lie inside the union of their domains' hull.
pub fn envelope_on<T: Scalar>(
    parts: &[&PiecewiseLinearConcave<T>],
    lo: T,
    hi: T,
) -> Result<PiecewiseLinearConcave<T>> {
    let cloud: Vec<TaggedPoint<T, ()>> = parts
        .iter()
        .flat_map(|f| f.points.iter().map(|&(a, w)| TaggedPoint { a, w, tag: () }))
        .collect();
    let hull = upper_hull(cloud);
    clip_hull(&hull, lo, hi)
}

/// Restricts a hull to `[lo, hi]`, adding interpolated endpoints.
pub fn clip_hull<T: Scalar, P: Copy>(
    hull: &[TaggedPoint<T, P>],
    lo: T,
    hi: T,
) -> Result<PiecewiseLinearConcave<T>> {
    let span_lo = hull[0].a;
    let span_hi = hull[hull.len() - 1].a;
    let scale = lo.abs().max(hi.abs()).max(span_hi - span_lo);
    let slack = T::rel_tol(DOMAIN_TOL) * scale;
    if lo < span_lo - slack || hi > span_hi + slack || hi < lo {
        return Err(Error::DomainMismatch(format!(
            "clip window [{lo}, {hi}] not inside hull span [{span_lo}, {span_hi}]"
        )));
    }
    let lo = lo.max(span_lo).min(span_hi);
    let hi = hi.min(span_hi).max(lo);
    let start = (lo, hull_value(hull, lo));
    if hi - lo <= T::zero() {
        return Ok(PiecewiseLinearConcave::point(start.0, start.1));
    }
    let gap = T::rel_tol(COLLINEAR_TOL) * scale;
    let mut pts: Vec<TaggedPoint<T, ()>> = vec![TaggedPoint {
        a: start.0,
        w: start.1,
        tag: (),
    }];
    pts.extend(
        hull.iter()
            .filter(|p| p.a > lo + gap && p.a < hi - gap)
            .map(|p| TaggedPoint { a: p.a, w: p.w, tag: () }),
    );
    pts.push(TaggedPoint {
        a: hi,
        w: hull_value(hull, hi),
        tag: (),
    });
    // a second pass removes rounding-level kinks introduced by interpolation
    let points = upper_hull(pts).into_iter().map(|p| (p.a, p.w)).collect();
    let f = PiecewiseLinearConcave { points };
    if !f.is_concave() {
        return Err(Error::InvariantBreach("envelope lost concavity".into()));
    }
    Ok(f)
}
