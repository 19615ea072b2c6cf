//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::param::{Gradients, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Elements where both analytic and numeric magnitudes fall below this are skipped.
    pub abs_floor: f64,
    pub max_samples_per_tensor: usize,
    pub seed: u64,
    /// Re-test elements that miss `tol` at a second step one decade away
    /// (larger when that stays within range, else smaller).
    pub retry_second_step: bool,
    /// Test hook: multiply the analytic gradient of the named tensor by `1 + factor`.
    #[serde(skip)]
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-8,
            max_samples_per_tensor: 200,
            seed: 0,
            retry_second_step: true,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub sampled: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

impl GradCheckConfig {
    fn second_step(&self) -> f64 {
        if self.step * 10.0 <= MAX_STEP {
            self.step * 10.0
        } else {
            self.step / 10.0
        }
    }
}

const MIN_STEP: f64 = 1e-6;
const MAX_STEP: f64 = 1e-4;

fn evaluate<F>(store: &ParamStore, forward: &mut F) -> Result<(Tape, Var)>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = forward(store, &mut tape)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Dimension {
            op: "grad_check",
            left: tape.value(out).shape().to_vec(),
            right: vec![1],
        });
    }
    Ok((tape, out))
}

fn scalar<F>(store: &ParamStore, forward: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let (tape, out) = evaluate(store, forward)?;
    Ok(tape.value(out).values()[0])
}

fn central_difference<F>(
    store: &mut ParamStore,
    forward: &mut F,
    id: ParamId,
    k: usize,
    step: f64,
) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let original = store.get(id).value.values()[k];
    store.get_mut(id).value.values_mut()[k] = original + step;
    let plus = scalar(store, forward);
    store.get_mut(id).value.values_mut()[k] = original - step;
    let minus = scalar(store, forward);
    store.get_mut(id).value.values_mut()[k] = original;
    Ok((plus? - minus?) / (2.0 * step))
}

/// Compares reverse-mode gradients of a scalar `forward` against central differences.
///
/// Parameter values are perturbed in place and restored bit-exactly afterwards.
/// Rounding noise dominates small steps on tiny gradients while activation
/// kinks dominate large steps, so an element that misses `tol` is retried
/// once at a second step before it counts as a failure.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut forward: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(MIN_STEP..=MAX_STEP).contains(&config.step) {
        return Err(Error::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            config.step
        )));
    }
    let (tape, out) = evaluate(store, &mut forward)?;
    let baseline = tape.value(out).values()[0];
    let analytic: Gradients = tape.backward(out)?;
    drop(tape);

    let again = scalar(store, &mut forward)?;
    if baseline.to_bits() != again.to_bits() {
        return Err(Error::Determinism {
            first: baseline,
            second: again,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tensors = Vec::new();
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.get(id).name.clone();
        let len = store.get(id).value.len();
        let mut grad = analytic
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape()));
        if let Some((target, factor)) = &config.corrupt {
            if *target == name {
                for g in grad.values_mut() {
                    *g *= 1.0 + factor;
                }
            }
        }

        let picks = sample(&mut rng, len, config.max_samples_per_tensor.min(len));
        let mut check = TensorCheck {
            name,
            sampled: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            passed: true,
        };
        for k in picks.iter() {
            let a = grad.values()[k];
            let mut numeric = central_difference(store, &mut forward, id, k, config.step)?;
            check.sampled += 1;
            if a.abs() < config.abs_floor && numeric.abs() < config.abs_floor {
                check.skipped += 1;
                continue;
            }
            let mut err = relative_error(a, numeric);
            if (err >= config.tol || err.is_nan()) && config.retry_second_step {
                let retry = central_difference(store, &mut forward, id, k, config.second_step())?;
                let retry_err = relative_error(a, retry);
                if retry_err < err {
                    err = retry_err;
                    numeric = retry;
                }
            }
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = err;
                check.worst_index = k;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        check.passed = check.max_rel_error < config.tol;
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, r, c) in shapes {
            let vals = (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
            store
                .insert(*name, Tensor::matrix(*r, *c, vals).unwrap())
                .unwrap();
        }
        store
    }

    #[test]
    fn linear_sum_has_unit_gradient() {
        let mut store = random_store(&[("w", 3, 4)], 1);
        let id = store.id("w").unwrap();
        let report = grad_check(
            &mut store,
            |s, t| {
                let w = t.param(s, id);
                Ok(t.sum(w))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
    }

    #[test]
    fn matmul_gradients_match_differences() {
        let mut store = random_store(&[("a", 3, 4), ("b", 4, 2)], 2);
        let (a, b) = (store.id("a").unwrap(), store.id("b").unwrap());
        let report = grad_check(
            &mut store,
            |s, t| {
                let (va, vb) = (t.param(s, a), t.param(s, b));
                let p = t.matmul(va, vb)?;
                // square so the gradient depends on both operands nonlinearly
                let pt = t.transpose(p);
                let q = t.matmul(p, pt)?;
                Ok(t.sum(q))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut store = random_store(&[("w", 2, 3)], 3);
        let id = store.id("w").unwrap();
        let config = GradCheckConfig {
            corrupt: Some(("w".into(), 0.1)),
            ..GradCheckConfig::default()
        };
        let report = grad_check(
            &mut store,
            |s, t| {
                let w = t.param(s, id);
                let wt = t.transpose(w);
                let q = t.matmul(w, wt)?;
                Ok(t.sum(q))
            },
            &config,
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.failing().next().unwrap().name, "w");
    }

    #[test]
    fn nondeterministic_forward_is_rejected() {
        let mut store = random_store(&[("w", 1, 1)], 4);
        let id = store.id("w").unwrap();
        let mut calls = 0.0;
        let err = grad_check(
            &mut store,
            |s, t| {
                calls += 1.0;
                let w = t.param(s, id);
                Ok(t.scale(w, calls))
            },
            &GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism { .. }));
    }

    #[test]
    fn parameters_restored_after_check() {
        let mut store = random_store(&[("w", 2, 2)], 5);
        let before = store.iter().next().unwrap().value.clone();
        let id = store.id("w").unwrap();
        grad_check(
            &mut store,
            |s, t| {
                let w = t.param(s, id);
                let r = t.relu(w);
                Ok(t.sum(r))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(store.iter().next().unwrap().value, before);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let mut store = random_store(&[("w", 1, 1)], 6);
        let cfg = GradCheckConfig {
            step: 1e-2,
            ..GradCheckConfig::default()
        };
        assert!(grad_check(
            &mut store,
            |_, t| Ok(t.constant(Tensor::vector(vec![0.0]))),
            &cfg
        )
        .is_err());
    }
}
