//! Euler-Maruyama ensembles and exit statistics.
//!
//! Simulation is a falsifier only: paths are never projected back into the
//! domain, and an Euler step may legitimately overshoot a boundary that the
//! continuous process never crosses. Exits are counted beyond a band `delta`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::checker::{check_domain, Tolerances};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Window};
use crate::matcalc::{sym_eig, SymMatrix};
use crate::model::DiffusionModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `None` selects [`default_exit_band`].
    pub exit_band: Option<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must be finite and at least dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be >= 1".into()));
        }
        if let Some(b) = self.exit_band {
            if !(b >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "exit band must be >= 0, got {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

/// Why a path stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFailure {
    pub step: usize,
    pub state: Vec<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Row-major `(steps + 1) x d` states, shorter if the path failed.
    pub states: Vec<f64>,
    pub failure: Option<PathFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    pub paths: Vec<Path>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn state(&self, path: usize, step: usize) -> Option<&[f64]> {
        let d = self.dim;
        self.paths[path].states.get(step * d..(step + 1) * d)
    }

    pub fn terminal(&self, path: usize) -> Option<&[f64]> {
        let p = &self.paths[path];
        if p.failure.is_some() {
            return None;
        }
        self.state(path, self.times.len() - 1)
    }

    pub fn failed(&self) -> usize {
        self.paths.iter().filter(|p| p.failure.is_some()).count()
    }
}

/// `Q diag(sqrt(max(lambda, 0))) Q^T`; eigenvalues below `-clip_tol` are an error.
pub fn sym_sqrt_psd(c: &SymMatrix, clip_tol: f64) -> Result<SymMatrix> {
    let e = sym_eig(c, 0.0)?;
    let min = e.min_eigenvalue();
    if min < -clip_tol {
        return Err(Error::PsdViolation {
            eigenvalue: min,
            slack: clip_tol,
        });
    }
    SymMatrix::new(sqrt_from(&e.eigenvalues, &e.eigenvectors))
}

fn sqrt_from(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let roots = values.map(|l| l.max(0.0).sqrt());
    let m = vectors * DMatrix::from_diagonal(&roots) * vectors.transpose();
    (&m + m.transpose()) * 0.5
}

/// Square root with every negative eigenvalue set to zero; used where the
/// covariance extension outside the domain need not be positive.
pub fn clipped_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() == 1 {
        return Ok(DMatrix::from_element(1, 1, c[(0, 0)].max(0.0).sqrt()));
    }
    let e = sym_eig(&SymMatrix::new(c.clone())?, 0.0)?;
    Ok(sqrt_from(&e.eigenvalues, &e.eigenvectors))
}

fn simulate_path(
    model: &DiffusionModel,
    x0: &DVector<f64>,
    dt: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Path {
    let d = x0.len();
    let sqrt_dt = dt.sqrt();
    let mut states = Vec::with_capacity((steps + 1) * d);
    states.extend_from_slice(x0.as_slice());
    let mut x = x0.clone();
    for step in 0..steps {
        let b = model.drift(&x);
        let sigma = (|| -> Result<DMatrix<f64>> {
            let c = model.covariance_raw(&x);
            if c.shape() != (d, d) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    point: x.iter().copied().collect(),
                });
            }
            clipped_sqrt(&c)
        })();
        let (b, sigma) = match (b, sigma) {
            (Ok(b), Ok(s)) => (b, s),
            (Err(e), _) | (_, Err(e)) => {
                return Path {
                    states,
                    failure: Some(PathFailure {
                        step,
                        state: x.iter().copied().collect(),
                        message: e.to_string(),
                    }),
                };
            }
        };
        let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        x = &x + b * dt + sigma * xi * sqrt_dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Path {
                states,
                failure: Some(PathFailure {
                    step: step + 1,
                    state: x.iter().copied().collect(),
                    message: "state became non-finite".into(),
                }),
            };
        }
        states.extend_from_slice(x.as_slice());
    }
    Path {
        states,
        failure: None,
    }
}

/// `X_{n+1} = X_n + b(X_n) dt + sigma(X_n) sqrt(dt) xi_n`, with `sigma` the
/// clipped symmetric square root of `C`. Path `i` draws from the ChaCha8
/// stream `i` of `seed`, so results do not depend on the worker count.
pub fn euler_maruyama(
    model: &DiffusionModel,
    x0: &DVector<f64>,
    config: &SimConfig,
) -> Result<PathEnsemble> {
    config.validate()?;
    if x0.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    let steps = config.steps();
    let paths: Vec<Path> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            simulate_path(model, x0, config.dt, steps, &mut rng)
        })
        .collect();
    Ok(PathEnsemble {
        dim: model.dim(),
        times: (0..=steps).map(|k| k as f64 * config.dt).collect(),
        paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStatistics {
    pub n_paths: usize,
    pub exits: usize,
    pub exit_fraction: f64,
    pub failed_paths: usize,
    pub exit_band: f64,
    /// Largest distance outside the domain over all visited states.
    pub worst_excursion: f64,
    pub first_exit_time_histogram: Histogram,
    pub first_exit_steps: Vec<Option<usize>>,
}

const HISTOGRAM_BINS: usize = 20;

/// Paths with some state farther than `band` outside the domain.
pub fn exit_statistics(ensemble: &PathEnsemble, domain: &Domain, band: f64) -> ExitStatistics {
    let d = ensemble.dim;
    let per_path: Vec<(Option<usize>, f64)> = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut first = None;
            let mut worst = 0.0f64;
            for (k, s) in p.states.chunks(d).enumerate() {
                let e = domain.excursion(&DVector::from_column_slice(s));
                worst = worst.max(e);
                if first.is_none() && e > band {
                    first = Some(k);
                }
            }
            (first, worst)
        })
        .collect();
    let exits = per_path.iter().filter(|(f, _)| f.is_some()).count();
    let t_end = ensemble.times.last().copied().unwrap_or(0.0);
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|k| t_end * k as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for (f, _) in &per_path {
        if let Some(k) = f {
            let t = ensemble.times[*k];
            let bin = if t_end > 0.0 {
                ((t / t_end * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
            } else {
                0
            };
            counts[bin] += 1;
        }
    }
    let n = ensemble.n_paths();
    ExitStatistics {
        n_paths: n,
        exits,
        exit_fraction: if n > 0 { exits as f64 / n as f64 } else { 0.0 },
        failed_paths: ensemble.failed(),
        exit_band: band,
        worst_excursion: per_path.iter().map(|(_, w)| *w).fold(0.0, f64::max),
        first_exit_time_histogram: Histogram { edges, counts },
        first_exit_steps: per_path.into_iter().map(|(f, _)| f).collect(),
    }
}

/// `3 sqrt(dt) max |C(y)|^(1/2)` over boundary samples in `window` and the
/// start points (spectral norm). Start points matter where `C` vanishes on
/// the boundary.
pub fn default_exit_band(
    model: &DiffusionModel,
    domain: &Domain,
    starts: &[DVector<f64>],
    window: &Window,
    dt: f64,
) -> Result<f64> {
    let mut points = match domain.boundary_sample(21, window) {
        Ok(p) => p,
        Err(Error::EmptySample) => Vec::new(),
        Err(e) => return Err(e),
    };
    points.extend(starts.iter().cloned());
    let mut worst = 0.0f64;
    for y in &points {
        let c = model.covariance(y)?;
        let e = sym_eig(&c, 0.0)?;
        worst = worst.max(e.eigenvalues.amax());
    }
    Ok(3.0 * dt.sqrt() * worst.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub exit_fraction: f64,
    pub failed_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McComparison {
    pub checker_pass: Option<bool>,
    pub checker_error: Option<String>,
    pub exit_band: f64,
    pub threshold: f64,
    pub starts: Vec<StartRecord>,
    pub max_exit_fraction: f64,
    /// Set when the checker passes but some start exits more often than
    /// `threshold`: a discretization diagnostic, not a refutation.
    pub diagnostic: Option<String>,
}

/// Starts: a few boundary samples and points pushed inward from them.
pub fn mc_invariance_test(
    model: &DiffusionModel,
    domain: &Domain,
    config: &SimConfig,
    window: &Window,
    threshold: f64,
) -> Result<McComparison> {
    let boundary = domain.boundary_sample(5, window)?;
    let mut starts = Vec::new();
    for x in &boundary {
        starts.push(x.clone());
        if let Some(ray) = domain
            .normal_cone_gens(x, crate::geometry::default_tol(x))?
            .first()
        {
            for s in [0.01, 0.5] {
                let y = x - &ray.direction * s;
                if domain.contains(&y, 0.0) {
                    starts.push(y);
                }
            }
        }
    }
    let (checker_pass, checker_error) =
        match check_domain(model, domain, 101, window, &Tolerances::default()) {
            Ok(r) => (Some(r.overall_pass), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let band = match config.exit_band {
        Some(b) => b,
        None => default_exit_band(model, domain, &starts, window, config.dt)?,
    };
    let mut records = Vec::with_capacity(starts.len());
    for x0 in &starts {
        let ens = euler_maruyama(model, x0, config)?;
        let st = exit_statistics(&ens, domain, band);
        records.push(StartRecord {
            start: x0.iter().copied().collect(),
            exit_fraction: st.exit_fraction,
            failed_paths: st.failed_paths,
        });
    }
    let max_exit_fraction = records.iter().map(|r| r.exit_fraction).fold(0.0, f64::max);
    let diagnostic = (checker_pass == Some(true) && max_exit_fraction > threshold).then(|| {
        format!("checker passes but exit fraction {max_exit_fraction} exceeds {threshold}; likely discretization overshoot")
    });
    Ok(McComparison {
        checker_pass,
        checker_error,
        exit_band: band,
        threshold,
        starts: records,
        max_exit_fraction,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn cfg(dt: f64, horizon: f64, n: usize) -> SimConfig {
        SimConfig {
            dt,
            horizon,
            n_paths: n,
            seed: 42,
            exit_band: None,
        }
    }

    #[test]
    fn sqrt_examples() {
        let i = sym_sqrt_psd(&SymMatrix::identity(3), 1e-12).unwrap();
        assert!((i.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);
        let s = sym_sqrt_psd(&SymMatrix::from_diagonal(&[4.0, 0.0]), 1e-12).unwrap();
        assert_eq!(s.as_matrix(), &dmatrix![2.0, 0.0; 0.0, 0.0]);
        let c = SymMatrix::new(dmatrix![1.0, 2.0; 2.0, 4.0]).unwrap();
        let s = sym_sqrt_psd(&c, 1e-12).unwrap();
        assert!((s.as_matrix() * s.as_matrix() - c.as_matrix()).amax() < 1e-10);
        let err = sym_sqrt_psd(&SymMatrix::from_diagonal(&[1.0, -0.1]), 1e-6).unwrap_err();
        assert!(matches!(err, Error::PsdViolation { .. }));
        // within slack: clipped, error bounded by d * clip_tol
        let tol = 1e-6;
        let c = SymMatrix::from_diagonal(&[1.0, -0.5e-6]);
        let s = sym_sqrt_psd(&c, tol).unwrap();
        assert!((s.as_matrix() * s.as_matrix() - c.as_matrix()).amax() <= 2.0 * tol);
    }

    #[test]
    fn constant_paths_without_noise() {
        let m = DiffusionModel::new(2, |_| DVector::zeros(2), |_| DMatrix::zeros(2, 2));
        let x0 = DVector::from_vec(vec![0.3, -1.0]);
        let ens = euler_maruyama(&m, &x0, &cfg(0.1, 1.0, 3)).unwrap();
        for p in 0..3 {
            assert_eq!(ens.terminal(p).unwrap(), x0.as_slice());
        }
        let st = exit_statistics(&ens, &Domain::upper_half_plane(), 0.0);
        assert_eq!(st.exit_fraction, 1.0);
        let inside = DVector::from_vec(vec![0.3, 1.0]);
        let ens = euler_maruyama(&m, &inside, &cfg(0.1, 1.0, 3)).unwrap();
        assert_eq!(
            exit_statistics(&ens, &Domain::upper_half_plane(), 0.0).exit_fraction,
            0.0
        );
    }

    #[test]
    fn pure_drift_two_steps() {
        let m = DiffusionModel::new(
            2,
            |_| DVector::from_vec(vec![1.0, 0.0]),
            |_| DMatrix::zeros(2, 2),
        );
        let ens =
            euler_maruyama(&m, &DVector::from_vec(vec![0.0, 2.0]), &cfg(0.5, 1.0, 1)).unwrap();
        assert_eq!(ens.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(ens.terminal(0).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn outward_drift_exits() {
        let m = DiffusionModel::new(
            1,
            |_| DVector::from_element(1, -1.0),
            |_| DMatrix::zeros(1, 1),
        );
        let ens = euler_maruyama(&m, &DVector::zeros(1), &cfg(0.01, 1.0, 4)).unwrap();
        let st = exit_statistics(&ens, &Domain::half_line(), 0.05);
        assert_eq!(st.exit_fraction, 1.0);
        assert_eq!(st.first_exit_steps[0], Some(6));
        assert!((st.worst_excursion - 1.0).abs() < 1e-9);
        assert_eq!(st.first_exit_time_histogram.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn failure_is_recorded() {
        let m = DiffusionModel::new(
            1,
            |x| DVector::from_element(1, if x[0] > 0.25 { f64::NAN } else { 0.1 }),
            |_| DMatrix::zeros(1, 1),
        );
        let ens = euler_maruyama(&m, &DVector::zeros(1), &cfg(1.0, 5.0, 2)).unwrap();
        assert_eq!(ens.failed(), 2);
        let f = ens.paths[0].failure.as_ref().unwrap();
        assert_eq!(f.step, 3);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let m = DiffusionModel::new(
            1,
            |x| DVector::from_element(1, 0.5 - x[0]),
            |x| DMatrix::from_element(1, 1, x[0]),
        );
        let x0 = DVector::from_element(1, 0.5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| euler_maruyama(&m, &x0, &cfg(0.01, 0.5, 16)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn invalid_config() {
        assert!(cfg(0.0, 1.0, 1).validate().is_err());
        assert!(cfg(2.0, 1.0, 1).validate().is_err());
        assert!(cfg(0.1, 1.0, 0).validate().is_err());
    }
}
