//! Multivariate real polynomials (used for spec files, level sets and
//! boundary functions) and closed-form nonnegativity of low-degree univariate
//! polynomials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A monomial `coef * prod_i x_i^exp[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub exp: Vec<u32>,
}

/// Polynomial in `nvars` variables, kept normalized: like terms merged,
/// exact zeros dropped, terms sorted by exponent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(nvars: usize, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            if t.exp.len() != nvars {
                return Err(Error::Dimension {
                    expected: nvars,
                    got: t.exp.len(),
                });
            }
            if !t.coef.is_finite() {
                return Err(Error::InvalidArgument(
                    "non-finite polynomial coefficient".into(),
                ));
            }
        }
        Ok(Self::normalized(nvars, terms))
    }

    fn normalized(nvars: usize, mut terms: Vec<Term>) -> Self {
        terms.sort_by(|a, b| a.exp.cmp(&b.exp));
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.exp == t.exp => last.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coef != 0.0);
        Polynomial {
            nvars,
            terms: merged,
        }
    }

    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::normalized(
            nvars,
            vec![Term {
                coef: c,
                exp: vec![0; nvars],
            }],
        )
    }

    /// `coef * x_i`.
    pub fn linear(nvars: usize, i: usize, coef: f64) -> Self {
        let mut exp = vec![0; nvars];
        exp[i] = 1;
        Self::normalized(nvars, vec![Term { coef, exp }])
    }

    /// Build from `(coef, exponents)` pairs; panics on length mismatch.
    pub fn from_pairs(nvars: usize, pairs: &[(f64, &[u32])]) -> Self {
        let terms = pairs
            .iter()
            .map(|(c, e)| {
                assert_eq!(e.len(), nvars, "exponent length must equal nvars");
                Term {
                    coef: *c,
                    exp: e.to_vec(),
                }
            })
            .collect();
        Self::normalized(nvars, terms)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exp.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, exp: &[u32]) -> f64 {
        self.terms
            .iter()
            .find(|t| t.exp == exp)
            .map_or(0.0, |t| t.coef)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|t| {
                t.exp
                    .iter()
                    .zip(x)
                    .fold(t.coef, |acc, (&e, &xi)| acc * xi.powi(e as i32))
            })
            .sum()
    }

    pub fn partial(&self, i: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exp[i] > 0)
            .map(|t| {
                let mut exp = t.exp.clone();
                exp[i] -= 1;
                Term {
                    coef: t.coef * t.exp[i] as f64,
                    exp,
                }
            })
            .collect();
        Self::normalized(self.nvars, terms)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nvars).map(|i| self.partial(i).eval(x)).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.nvars)
            .map(|i| {
                let pi = self.partial(i);
                (0..self.nvars).map(|j| pi.partial(j).eval(x)).collect()
            })
            .collect()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, other.nvars);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::normalized(self.nvars, terms)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                coef: t.coef * s,
                exp: t.exp.clone(),
            })
            .collect();
        Self::normalized(self.nvars, terms)
    }

    /// Coefficients (ascending powers) of the univariate polynomial obtained
    /// by fixing every variable except `var` at `at`.
    pub fn restrict(&self, var: usize, at: &[f64]) -> Vec<f64> {
        let max_pow = self.terms.iter().map(|t| t.exp[var]).max().unwrap_or(0) as usize;
        let mut coeffs = vec![0.0; max_pow + 1];
        for t in &self.terms {
            let mut c = t.coef;
            for (k, (&e, &xk)) in t.exp.iter().zip(at).enumerate() {
                if k != var {
                    c *= xk.powi(e as i32);
                }
            }
            coeffs[t.exp[var] as usize] += c;
        }
        coeffs
    }
}

/// Evaluate ascending-power coefficients at `x` (Horner).
pub fn eval_uni(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Real roots of a univariate polynomial of degree at most two, ascending.
/// Returns `None` for higher degree or the zero polynomial.
pub fn real_roots_low_degree(coeffs: &[f64]) -> Option<Vec<f64>> {
    let deg = coeffs.iter().rposition(|&c| c != 0.0)?;
    match deg {
        0 => Some(Vec::new()),
        1 => Some(vec![-coeffs[0] / coeffs[1]]),
        2 => {
            let (c, b, a) = (coeffs[0], coeffs[1], coeffs[2]);
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return Some(Vec::new());
            }
            // numerically stable pair
            let s = disc.sqrt();
            let q = -0.5 * (b + if b >= 0.0 { s } else { -s });
            let mut r = if q == 0.0 {
                vec![0.0, 0.0]
            } else {
                vec![q / a, c / q]
            };
            r.sort_by(|x, y| x.partial_cmp(y).unwrap());
            if disc == 0.0 {
                r.truncate(1);
            }
            Some(r)
        }
        _ => None,
    }
}

/// Real roots in `[lo, hi]` (finite) by sign-change bracketing and bisection.
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    if let Some(all) = real_roots_low_degree(coeffs) {
        return all.into_iter().filter(|r| *r >= lo && *r <= hi).collect();
    }
    let mut roots = Vec::new();
    let n = grid.max(2);
    let step = (hi - lo) / n as f64;
    let mut a = lo;
    let mut fa = eval_uni(coeffs, a);
    for k in 1..=n {
        let b = if k == n { hi } else { lo + step * k as f64 };
        let fb = eval_uni(coeffs, b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut l, mut r, mut fl) = (a, b, fa);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                let fm = eval_uni(coeffs, m);
                if fm == 0.0 || (r - l) <= f64::EPSILON * (1.0 + m.abs()) {
                    l = m;
                    r = m;
                    break;
                }
                if fl * fm < 0.0 {
                    r = m;
                } else {
                    l = m;
                    fl = fm;
                }
            }
            roots.push(0.5 * (l + r));
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        roots.push(hi);
    }
    roots.dedup();
    roots
}

/// How a univariate nonnegativity decision was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NonnegRoute {
    /// Degree 0: constant sign.
    Constant,
    /// Odd-degree (1 or 3) leading coefficient must vanish.
    LeadingMustVanish,
    /// Degree 2: leading coefficient sign and discriminant.
    Discriminant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonnegVerdict {
    pub nonneg: bool,
    pub effective_degree: usize,
    pub route: NonnegRoute,
    /// Infimum over R when finite (degree 0 or convex quadratic).
    pub minimum: Option<f64>,
    /// A point where the polynomial is negative, when it is not nonnegative.
    pub witness: Option<f64>,
}

/// Decide `p(x) >= -value_tol` for all real `x`, for degree at most three.
///
/// Coefficients with magnitude `<= coef_tol` in leading position are treated
/// as zero. Returns `None` if the effective degree exceeds three.
pub fn nonneg_on_reals(coeffs: &[f64], coef_tol: f64, value_tol: f64) -> Option<NonnegVerdict> {
    let mut deg = coeffs.len().saturating_sub(1);
    while deg > 0 && coeffs[deg].abs() <= coef_tol {
        deg -= 1;
    }
    if deg > 3 {
        return None;
    }
    let c = |i: usize| coeffs.get(i).copied().unwrap_or(0.0);
    let negative_far = |lead: f64, odd: bool| -> f64 {
        // Cauchy bound pushes past every real root
        let bound = 2.0 + (0..deg).map(|i| c(i).abs()).sum::<f64>() / lead.abs();
        if odd {
            -lead.signum() * bound
        } else {
            bound
        }
    };
    let verdict = match deg {
        0 => {
            let v = c(0);
            NonnegVerdict {
                nonneg: v >= -value_tol,
                effective_degree: 0,
                route: NonnegRoute::Constant,
                minimum: Some(v),
                witness: (v < -value_tol).then_some(0.0),
            }
        }
        1 | 3 => {
            let x = negative_far(c(deg), true);
            NonnegVerdict {
                nonneg: false,
                effective_degree: deg,
                route: NonnegRoute::LeadingMustVanish,
                minimum: None,
                witness: Some(x),
            }
        }
        _ => {
            let (c0, b, a) = (c(0), c(1), c(2));
            if a < 0.0 {
                let vertex = -b / (2.0 * a);
                let peak = eval_uni(&coeffs[..3], vertex);
                let x = vertex + ((peak.abs() + 1.0) / a.abs()).sqrt();
                NonnegVerdict {
                    nonneg: false,
                    effective_degree: 2,
                    route: NonnegRoute::Discriminant,
                    minimum: None,
                    witness: Some(x),
                }
            } else {
                let vertex = -b / (2.0 * a);
                let min = c0 - b * b / (4.0 * a);
                NonnegVerdict {
                    nonneg: min >= -value_tol,
                    effective_degree: 2,
                    route: NonnegRoute::Discriminant,
                    minimum: Some(min),
                    witness: (min < -value_tol).then_some(vertex),
                }
            }
        }
    };
    Some(verdict)
}
