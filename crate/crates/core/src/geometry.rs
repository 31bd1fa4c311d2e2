//! Closed state spaces, membership, boundary sampling and first-order normal
//! cone generators.
//!
//! Two shapes are supported: products of closed subsets of the real line, in
//! any dimension, and planar composites
//! `{(x1, x2) : x1 in D1, phi(x1, x2) in D2}` with `d phi / d x2 != 0` on
//! the boundary.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{real_roots_in, real_roots_low_degree, Polynomial};

/// Default boundary tolerance `1e-9 (1 + |x|)`.
pub fn default_tol(x: &DVector<f64>) -> f64 {
    1e-9 * (1.0 + x.norm())
}

/// Closed interval `[lo, hi]`; endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

/// Finite union of disjoint closed intervals, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedSet1D {
    intervals: Vec<Interval>,
}

impl ClosedSet1D {
    pub fn new(intervals: &[(f64, f64)]) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidSet("empty list of intervals".into()));
        }
        let mut iv: Vec<Interval> = intervals
            .iter()
            .map(|&(lo, hi)| Interval { lo, hi })
            .collect();
        for i in &iv {
            if i.lo.is_nan() || i.hi.is_nan() || i.lo == f64::INFINITY || i.hi == f64::NEG_INFINITY
            {
                return Err(Error::InvalidSet(format!(
                    "bad endpoints [{}, {}]",
                    i.lo, i.hi
                )));
            }
            if !(i.lo < i.hi) {
                return Err(Error::InvalidSet(format!(
                    "degenerate interval [{}, {}]",
                    i.lo, i.hi
                )));
            }
        }
        iv.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for w in iv.windows(2) {
            if w[1].lo <= w[0].hi {
                return Err(Error::InvalidSet(format!(
                    "intervals [{}, {}] and [{}, {}] overlap or touch",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(ClosedSet1D { intervals: iv })
    }

    pub fn real_line() -> Self {
        ClosedSet1D {
            intervals: vec![Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            }],
        }
    }

    /// `[0, inf)`.
    pub fn nonnegative() -> Self {
        ClosedSet1D {
            intervals: vec![Interval {
                lo: 0.0,
                hi: f64::INFINITY,
            }],
        }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_real_line(&self) -> bool {
        self.intervals.len() == 1
            && self.intervals[0].lo == f64::NEG_INFINITY
            && self.intervals[0].hi == f64::INFINITY
    }

    pub fn distance(&self, x: f64) -> f64 {
        self.intervals
            .iter()
            .map(|i| i.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        self.distance(x) <= tol
    }

    /// Outward normal generators at `x`: `-1` at a left endpoint, `+1` at a
    /// right endpoint, none in the interior.
    pub fn generators(&self, x: f64, tol: f64) -> Vec<f64> {
        let mut g = Vec::new();
        for i in &self.intervals {
            if i.lo.is_finite() && (x - i.lo).abs() <= tol {
                g.push(-1.0);
            }
            if i.hi.is_finite() && (x - i.hi).abs() <= tol {
                g.push(1.0);
            }
        }
        g.dedup();
        g
    }

    /// Finite endpoints, ascending.
    pub fn endpoints(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .flat_map(|i| [i.lo, i.hi])
            .filter(|e| e.is_finite())
            .collect()
    }
}

/// Closed state space.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Product `D_1 x ... x D_d`.
    Canonical(Vec<ClosedSet1D>),
    /// `{x in R^2 : x1 in d1, phi(x) in d2}`.
    Composite {
        d1: ClosedSet1D,
        d2: ClosedSet1D,
        phi: Polynomial,
    },
}

/// Generator of the first-order normal cone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalRay {
    /// Unit outward normal.
    #[serde(serialize_with = "crate::matcalc::serialize_dvector")]
    pub direction: DVector<f64>,
    /// One-dimensional generators the ray was built from: one per coordinate
    /// for products, `(u1, u2)` for composites (`0` when inactive).
    pub components: Vec<f64>,
}

impl NormalRay {
    /// True for composite rays with both components nonzero.
    pub fn is_mixed(&self) -> bool {
        self.components.iter().filter(|c| **c != 0.0).count() > 1
    }
}

/// Axis-aligned sampling box; `bounds[k]` restricts coordinate `k`.
///
/// For composite domains the boundary is parametrized by the first
/// coordinate; the second bound is only used to locate level-set roots of
/// high degree and to sample vertical boundary pieces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub bounds: Vec<(f64, f64)>,
}

impl Window {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Window {
            bounds: vec![(lo, hi); dim],
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn sort_dedup(points: &mut Vec<DVector<f64>>) {
    points.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    points.dedup();
}

impl Domain {
    /// The half-line `[0, inf)` in one dimension.
    pub fn half_line() -> Self {
        Domain::Canonical(vec![ClosedSet1D::nonnegative()])
    }

    /// `R x [0, inf)`.
    pub fn upper_half_plane() -> Self {
        Domain::Canonical(vec![ClosedSet1D::real_line(), ClosedSet1D::nonnegative()])
    }

    /// `{x2 >= s x1^2}`; `s = 1` is the convex epigraph, `s = -1` the concave one.
    pub fn parabola(s: f64) -> Self {
        Domain::Composite {
            d1: ClosedSet1D::real_line(),
            d2: ClosedSet1D::nonnegative(),
            phi: Polynomial::from_pairs(2, &[(1.0, &[0, 1]), (-s, &[2, 0])]),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Canonical(f) => f.len(),
            Domain::Composite { .. } => 2,
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Membership with an outward tolerance band.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Domain::Canonical(f) => f.iter().zip(x.iter()).all(|(s, &xi)| s.contains(xi, tol)),
            Domain::Composite { d1, d2, phi } => {
                d1.contains(x[0], tol) && d2.contains(phi.eval(x.as_slice()), tol)
            }
        }
    }

    /// First-order estimate of the distance from `x` to the domain; zero inside.
    pub fn excursion(&self, x: &DVector<f64>) -> f64 {
        match self {
            Domain::Canonical(f) => f
                .iter()
                .zip(x.iter())
                .map(|(s, &xi)| s.distance(xi))
                .fold(0.0, f64::max),
            Domain::Composite { d1, d2, phi } => {
                let level = d2.distance(phi.eval(x.as_slice()));
                let scaled = if level > 0.0 {
                    let g = phi.gradient(x.as_slice());
                    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        level / n
                    } else {
                        level
                    }
                } else {
                    0.0
                };
                d1.distance(x[0]).max(scaled)
            }
        }
    }

    /// Generators of the first-order normal cone at `x`. Empty in the
    /// interior. Where several constraints are active every nonzero
    /// combination of their generators is returned.
    pub fn normal_cone_gens(&self, x: &DVector<f64>, tol: f64) -> Result<Vec<NormalRay>> {
        self.check_dim(x)?;
        if !self.contains(x, tol) {
            return Err(Error::InvalidArgument(format!(
                "point {:?} is outside the domain",
                x.as_slice()
            )));
        }
        let per_coord: Vec<Vec<f64>> = match self {
            Domain::Canonical(f) => f
                .iter()
                .zip(x.iter())
                .map(|(s, &xi)| s.generators(xi, tol))
                .collect(),
            Domain::Composite { d1, d2, phi } => {
                vec![
                    d1.generators(x[0], tol),
                    d2.generators(phi.eval(x.as_slice()), tol),
                ]
            }
        };
        let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
        for gens in &per_coord {
            let mut next = Vec::new();
            for c in &combos {
                for g in std::iter::once(0.0).chain(gens.iter().copied()) {
                    let mut c2 = c.clone();
                    c2.push(g);
                    next.push(c2);
                }
            }
            combos = next;
        }
        combos.retain(|c| c.iter().any(|v| *v != 0.0));
        if combos.is_empty() {
            return Ok(Vec::new());
        }
        let (d1phi, d2phi) = match self {
            Domain::Canonical(_) => (0.0, 1.0),
            Domain::Composite { phi, .. } => {
                let g = phi.gradient(x.as_slice());
                if g[1].abs() <= 1e-12 * (1.0 + g[0].abs()) {
                    return Err(Error::SingularBoundaryPoint {
                        point: x.iter().copied().collect(),
                    });
                }
                (g[0], g[1])
            }
        };
        let rays = combos
            .into_iter()
            .map(|c| {
                let raw = match self {
                    Domain::Canonical(_) => DVector::from_column_slice(&c),
                    Domain::Composite { .. } => {
                        DVector::from_vec(vec![c[0] + d1phi * c[1], d2phi * c[1]])
                    }
                };
                NormalRay {
                    direction: raw.normalize(),
                    components: c,
                }
            })
            .collect();
        Ok(rays)
    }

    /// Up to `n` boundary points per boundary piece inside `window`, spread
    /// uniformly in the parametrizing coordinate. Corners are always
    /// included. Sorted lexicographically without duplicates.
    pub fn boundary_sample(&self, n: usize, window: &Window) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be >= 1".into()));
        }
        if window.bounds.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: window.bounds.len(),
            });
        }
        for &(lo, hi) in &window.bounds {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "window bound [{lo}, {hi}] must be finite and ordered"
                )));
            }
        }
        let mut points = match self {
            Domain::Canonical(f) => canonical_sample(f, n, window),
            Domain::Composite { d1, d2, phi } => composite_sample(d1, d2, phi, n, window)?,
        };
        sort_dedup(&mut points);
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(points)
    }

    /// Curvature bound `kappa >= 0` such that `<u, y - x> <= kappa/2 |y - x|^2`
    /// for sampled `y` in the domain within `radius` of `x`.
    ///
    /// Samples combine random points of the ball with points on the same level
    /// set through `x` at geometrically shrinking offsets.
    pub fn fit_proximal_kappa(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        radius: f64,
        n: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = x.len();
        let mut ratio = 0.0f64;
        let mut consider = |y: &DVector<f64>| {
            let dy = y - x;
            let r2 = dy.norm_squared();
            if r2 > 0.0 && self.contains(y, 0.0) {
                ratio = ratio.max(u.dot(&dy) / r2);
            }
        };
        for _ in 0..n {
            let dir = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let s = radius * rng.random_range(0.0..1.0f64);
            if dir.norm() > 0.0 {
                consider(&(x + dir.normalize() * s));
            }
        }
        if let Domain::Composite { d1, phi, .. } = self {
            let level = phi.eval(x.as_slice());
            for k in 0..30 {
                let s = radius * 0.5f64.powi(k);
                for sign in [-1.0, 1.0] {
                    let x1 = x[0] + sign * s;
                    if !d1.contains(x1, 0.0) {
                        continue;
                    }
                    if let Some(x2) = newton_level(phi, x1, x[1], level) {
                        let y = DVector::from_vec(vec![x1, x2]);
                        let dy = &y - x;
                        let r2 = dy.norm_squared();
                        if r2 > 0.0 {
                            ratio = ratio.max(u.dot(&dy) / r2);
                        }
                    }
                }
            }
        }
        2.0 * ratio.max(0.0)
    }
}

/// Solve `phi(x1, x2) = level` for `x2` by Newton from `start`.
fn newton_level(phi: &Polynomial, x1: f64, start: f64, level: f64) -> Option<f64> {
    let dphi = phi.partial(1);
    let mut x2 = start;
    for _ in 0..50 {
        let f = phi.eval(&[x1, x2]) - level;
        let g = dphi.eval(&[x1, x2]);
        if g == 0.0 {
            return None;
        }
        let step = f / g;
        x2 -= step;
        if step.abs() <= 1e-15 * (1.0 + x2.abs()) {
            break;
        }
    }
    let err = (phi.eval(&[x1, x2]) - level).abs();
    (err <= 1e-12 * (1.0 + level.abs())).then_some(x2)
}

/// Grid over `[lo, hi]` restricted to `set`, plus the set's endpoints in range.
fn grid_in(set: &ClosedSet1D, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = grid(lo, hi, n)
        .into_iter()
        .filter(|v| set.contains(*v, 0.0))
        .collect();
    g.extend(set.endpoints().into_iter().filter(|e| *e >= lo && *e <= hi));
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn canonical_sample(factors: &[ClosedSet1D], n: usize, window: &Window) -> Vec<DVector<f64>> {
    let d = factors.len();
    let per_axis = if d <= 1 {
        1
    } else {
        ((n as f64).powf(1.0 / (d - 1) as f64).round() as usize)
            .max(2)
            .min(n.max(2))
    };
    let axis_grids: Vec<Vec<f64>> = factors
        .iter()
        .zip(&window.bounds)
        .map(|(s, &(lo, hi))| grid_in(s, lo, hi, if d == 2 { n } else { per_axis }))
        .collect();
    let mut points = Vec::new();
    for (k, set) in factors.iter().enumerate() {
        let (lo, hi) = window.bounds[k];
        for e in set.endpoints().into_iter().filter(|e| *e >= lo && *e <= hi) {
            // cartesian product of the free axes
            let mut partial: Vec<Vec<f64>> = vec![Vec::with_capacity(d)];
            for j in 0..d {
                let choices: &[f64] = if j == k {
                    std::slice::from_ref(&e)
                } else {
                    &axis_grids[j]
                };
                partial = partial
                    .iter()
                    .flat_map(|p| {
                        choices.iter().map(move |&c| {
                            let mut q = p.clone();
                            q.push(c);
                            q
                        })
                    })
                    .collect();
            }
            points.extend(partial.into_iter().map(DVector::from_vec));
        }
    }
    points
}

fn composite_sample(
    d1: &ClosedSet1D,
    d2: &ClosedSet1D,
    phi: &Polynomial,
    n: usize,
    window: &Window,
) -> Result<Vec<DVector<f64>>> {
    let (lo1, hi1) = window.bounds[0];
    let (lo2, hi2) = window.bounds[1];
    let mut points = Vec::new();
    let xs = grid_in(d1, lo1, hi1, n);
    for level in d2.endpoints() {
        for &x1 in &xs {
            let mut coeffs = phi.restrict(1, &[x1, 0.0]);
            coeffs[0] -= level;
            let roots = match real_roots_low_degree(&coeffs) {
                Some(r) => r,
                None => real_roots_in(&coeffs, lo2, hi2, 4 * n.max(50)),
            };
            points.extend(roots.into_iter().map(|x2| DVector::from_vec(vec![x1, x2])));
        }
    }
    for e in d1
        .endpoints()
        .into_iter()
        .filter(|e| *e >= lo1 && *e <= hi1)
    {
        for x2 in grid(lo2, hi2, n) {
            if d2.contains(phi.eval(&[e, x2]), 0.0) {
                points.push(DVector::from_vec(vec![e, x2]));
            }
        }
    }
    Ok(points)
}
