//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{BoundParams, ParamStore};
use super::tape::{Fault, Tape, Var};
use crate::error::{Error, Result};

/// Worst relative error seen for one parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct ParamError {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub step: f64,
    pub params: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub coordinates_per_param: Option<usize>,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coordinates_per_param: Some(8),
            seed: 0,
            fault: None,
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `loss` against central differences.
///
/// `loss` must rebuild the same scalar for the same parameter values: any
/// randomness inside it has to be re-seeded on every call.
pub fn grad_check<F>(params: &ParamStore, cfg: &GradCheckConfig, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = match cfg.fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let bound = params.bind(&mut tape);
    let root = loss(&mut tape, &bound)?;
    let base = tape.value(root).item();
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {base}")));
    }
    let grads = tape.backward(root)?;
    let analytic = bound.gradients(&tape, &grads);
    drop(tape);

    let mut eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let r = loss(&mut t, &b)?;
        let v = t.value(r).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("loss is not finite: {v}")))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    let mut overall: f64 = 0.0;
    for id in params.ids() {
        let n = params.get(id).data().len();
        let coords: Vec<usize> = match cfg.coordinates_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = params.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + cfg.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - cfg.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            worst = worst.max(relative_error(analytic[id.0].data()[c], numeric));
        }
        overall = overall.max(worst);
        report.push(ParamError {
            name: params.name(id).to_string(),
            coordinates: coords.len(),
            max_relative_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_relative_error: overall,
        step: cfg.step,
        params: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Matrix;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w", Matrix::from_vec(2, 2, vec![0.3, -1.2, 0.7, 2.0]).unwrap());
        p
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let p = store();
        let report = grad_check(&p, &GradCheckConfig::default(), |t, b| {
            let w = b.var(crate::num::ParamId(0));
            let sq = t.mul(w, w)?;
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = store();
        let report = grad_check(&p, &GradCheckConfig::default(), |t, _| {
            Ok(t.constant(Matrix::scalar(4.0)))
        })
        .unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let p = store();
        let err = grad_check(&p, &GradCheckConfig::default(), |t, b| {
            let w = b.var(crate::num::ParamId(0));
            let z = t.affine(w, 0.0, -1.0);
            let l = t.log(z);
            Ok(t.sum(l))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
