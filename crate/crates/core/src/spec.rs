//! JSON model files, `"spec_version": 1`.
//!
//! ```json
//! {
//!   "spec_version": 1,
//!   "dimension": 1,
//!   "drift": [[{"coef": 0.3, "exp": [0]}, {"coef": -1.0, "exp": [1]}]],
//!   "covariance": [[[{"coef": 1.0, "exp": [1]}]]],
//!   "domain": {"canonical": [[[0.0, null]]]},
//!   "sim": {"dt": 0.0001, "horizon": 1.0, "paths": 1000, "seed": 7, "x0": [0.5]}
//! }
//! ```
//!
//! Polynomials are lists of monomials. The covariance is a full `d x d` table
//! whose entries below the diagonal may be `null`; given lower entries must
//! match their upper counterparts. Interval bounds use `null` for infinity.
//! Errors carry a JSON pointer (`#/covariance/1/0`) to the offending field.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::checker::Tolerances;
use crate::error::{Error, Result};
use crate::geometry::{ClosedSet1D, Domain};
use crate::model::PolynomialModel;
use crate::nonattain::LevelBoundary;
use crate::poly::{Polynomial, Term};
use crate::sim::SimConfig;

pub const SPEC_VERSION: u32 = 1;

/// `[lo, hi]` with `null` for an infinite end.
pub type IntervalSpec = [Option<f64>; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub spec_version: u32,
    pub dimension: usize,
    pub drift: Vec<Vec<Term>>,
    pub covariance: Vec<Vec<Option<Vec<Term>>>>,
    pub domain: DomainSpec,
    /// Level function for non-attainment; derived from the domain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Vec<Term>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// One union of intervals per coordinate.
    Canonical(Vec<Vec<IntervalSpec>>),
    Composite {
        d1: Vec<IntervalSpec>,
        d2: Vec<IntervalSpec>,
        phi: Vec<Term>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_band: Option<f64>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::from("#");
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1")))
            }
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

impl ModelSpec {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ModelSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::spec(pointer_of(e.path()), e.inner().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::spec(
                "#/spec_version",
                format!(
                    "unsupported version {}, expected {SPEC_VERSION}",
                    self.spec_version
                ),
            ));
        }
        let d = self.dimension;
        if d == 0 {
            return Err(Error::spec("#/dimension", "dimension must be >= 1"));
        }
        if self.drift.len() != d {
            return Err(Error::spec(
                "#/drift",
                format!("expected {d} components, got {}", self.drift.len()),
            ));
        }
        for (i, p) in self.drift.iter().enumerate() {
            poly_at(p, d, &format!("#/drift/{i}"))?;
        }
        self.covariance_table()?;
        self.domain()?;
        if let Some(level) = &self.level {
            poly_at(level, d, "#/level")?;
        }
        if let Some(t) = &self.tolerances {
            for (name, v) in [
                ("kernel", t.kernel),
                ("drift", t.drift),
                ("rank_tol", t.rank_tol),
                ("fd_step", t.fd_step),
            ] {
                if let Some(v) = v {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::spec(
                            format!("#/tolerances/{name}"),
                            "must be positive and finite",
                        ));
                    }
                }
            }
        }
        if let Some(s) = &self.sim {
            if s.x0.len() != d {
                return Err(Error::spec(
                    "#/sim/x0",
                    format!("expected {d} coordinates, got {}", s.x0.len()),
                ));
            }
            if let Err(e) = self.sim_config().expect("sim present").validate() {
                return Err(Error::spec("#/sim", e.to_string()));
            }
        }
        Ok(())
    }

    fn covariance_table(&self) -> Result<Vec<Vec<Polynomial>>> {
        let d = self.dimension;
        if self.covariance.len() != d {
            return Err(Error::spec(
                "#/covariance",
                format!("expected {d} rows, got {}", self.covariance.len()),
            ));
        }
        let mut table = vec![vec![Polynomial::zero(d); d]; d];
        for (i, row) in self.covariance.iter().enumerate() {
            if row.len() != d {
                return Err(Error::spec(
                    format!("#/covariance/{i}"),
                    format!("expected {d} entries, got {}", row.len()),
                ));
            }
            for j in i..d {
                let ptr = format!("#/covariance/{i}/{j}");
                let Some(terms) = &row[j] else {
                    return Err(Error::spec(
                        ptr,
                        "entries on and above the diagonal are required",
                    ));
                };
                table[i][j] = poly_at(terms, d, &ptr)?;
                table[j][i] = table[i][j].clone();
            }
        }
        for i in 0..d {
            for j in 0..i {
                if let Some(terms) = &self.covariance[i][j] {
                    let ptr = format!("#/covariance/{i}/{j}");
                    if poly_at(terms, d, &ptr)? != table[j][i] {
                        return Err(Error::spec(
                            ptr,
                            format!("covariance is not symmetric: differs from entry ({j},{i})"),
                        ));
                    }
                }
            }
        }
        Ok(table)
    }

    /// Like terms merged, zero terms dropped, lower covariance entries `null`.
    pub fn normalized(&self) -> Result<Self> {
        let d = self.dimension;
        let norm = |p: &[Term], ptr: &str| poly_at(p, d, ptr).map(|q| q.terms().to_vec());
        let table = self.covariance_table()?;
        let covariance = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (j >= i).then(|| table[i][j].terms().to_vec()))
                    .collect()
            })
            .collect();
        let domain = match &self.domain {
            DomainSpec::Canonical(f) => DomainSpec::Canonical(f.clone()),
            DomainSpec::Composite { d1, d2, phi } => DomainSpec::Composite {
                d1: d1.clone(),
                d2: d2.clone(),
                phi: norm(phi, "#/domain/composite/phi")?,
            },
        };
        Ok(ModelSpec {
            spec_version: self.spec_version,
            dimension: d,
            drift: self
                .drift
                .iter()
                .enumerate()
                .map(|(i, p)| norm(p, &format!("#/drift/{i}")))
                .collect::<Result<_>>()?,
            covariance,
            domain,
            level: self
                .level
                .as_ref()
                .map(|l| norm(l, "#/level"))
                .transpose()?,
            tolerances: self.tolerances.clone(),
            sim: self.sim.clone(),
        })
    }

    pub fn model(&self) -> Result<PolynomialModel> {
        let d = self.dimension;
        let drift = self
            .drift
            .iter()
            .enumerate()
            .map(|(i, p)| poly_at(p, d, &format!("#/drift/{i}")))
            .collect::<Result<Vec<_>>>()?;
        PolynomialModel::new(drift, self.covariance_table()?)
    }

    pub fn domain(&self) -> Result<Domain> {
        match &self.domain {
            DomainSpec::Canonical(factors) => {
                if factors.len() != self.dimension {
                    return Err(Error::spec(
                        "#/domain/canonical",
                        format!("expected {} factors, got {}", self.dimension, factors.len()),
                    ));
                }
                factors
                    .iter()
                    .enumerate()
                    .map(|(k, f)| closed_set_at(f, &format!("#/domain/canonical/{k}")))
                    .collect::<Result<Vec<_>>>()
                    .map(Domain::Canonical)
            }
            DomainSpec::Composite { d1, d2, phi } => {
                if self.dimension != 2 {
                    return Err(Error::spec(
                        "#/domain/composite",
                        "composite domains are two-dimensional",
                    ));
                }
                Ok(Domain::Composite {
                    d1: closed_set_at(d1, "#/domain/composite/d1")?,
                    d2: closed_set_at(d2, "#/domain/composite/d2")?,
                    phi: poly_at(phi, 2, "#/domain/composite/phi")?,
                })
            }
        }
    }

    /// Explicit level function, else one derived from the domain.
    pub fn level(&self) -> Result<LevelBoundary> {
        if let Some(l) = &self.level {
            return Ok(LevelBoundary::new(poly_at(l, self.dimension, "#/level")?));
        }
        LevelBoundary::derive(&self.domain()?).ok_or_else(|| {
            Error::spec(
                "#/level",
                "no level function given and none can be derived from a domain with more than one boundary constraint",
            )
        })
    }

    pub fn tolerances(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if let Some(s) = &self.tolerances {
            t.kernel = s.kernel.unwrap_or(t.kernel);
            t.drift = s.drift.unwrap_or(t.drift);
            t.rank_tol = s.rank_tol.unwrap_or(t.rank_tol);
            t.fd_step = s.fd_step.or(t.fd_step);
        }
        t
    }

    pub fn sim_config(&self) -> Option<SimConfig> {
        self.sim.as_ref().map(|s| SimConfig {
            dt: s.dt,
            horizon: s.horizon,
            n_paths: s.paths,
            seed: s.seed,
            exit_band: s.exit_band,
        })
    }

    pub fn sim_start(&self) -> Option<DVector<f64>> {
        self.sim.as_ref().map(|s| DVector::from_vec(s.x0.clone()))
    }
}

fn poly_at(terms: &[Term], nvars: usize, ptr: &str) -> Result<Polynomial> {
    for (k, t) in terms.iter().enumerate() {
        if t.exp.len() != nvars {
            return Err(Error::spec(
                format!("{ptr}/{k}/exp"),
                format!("expected {nvars} exponents, got {}", t.exp.len()),
            ));
        }
    }
    Polynomial::new(nvars, terms.to_vec()).map_err(|e| Error::spec(ptr, e.to_string()))
}

fn closed_set_at(intervals: &[IntervalSpec], ptr: &str) -> Result<ClosedSet1D> {
    let pairs: Vec<(f64, f64)> = intervals
        .iter()
        .map(|[lo, hi]| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
        .collect();
    ClosedSet1D::new(&pairs).map_err(|e| Error::spec(ptr, e.to_string()))
}
