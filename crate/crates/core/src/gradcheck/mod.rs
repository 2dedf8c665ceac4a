//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule in [`crate::tensor`].

mod suite;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tensor::{Graph, ParamId, ParamStore, RngState, Tensor, Var};
use crate::Result;

pub use suite::{layer_suite, op_suite, suite_table, SuiteRow};

/// What a single probe perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// One scalar coordinate of a parameter.
    Coordinate,
    /// A random Gaussian direction over a whole parameter tensor; the
    /// analytic side is the directional derivative `grad . u`.
    ///
    /// Deep compositions have many coordinates whose gradient is below the
    /// rounding floor of a central difference (about `eps * |f| / h`), where
    /// the relative error is meaningless. A direction aggregates every
    /// coordinate of the tensor, so the compared quantity stays well above
    /// that floor while still exposing any wrong backward rule.
    Direction,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub probes: usize,
    pub mode: ProbeMode,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, probes: 100, mode: ProbeMode::Coordinate }
    }
}

impl GradCheckConfig {
    /// Defaults with directional probes, for composed layers and models.
    pub fn directional() -> Self {
        Self { mode: ProbeMode::Direction, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    /// Perturbed coordinate; `None` for a directional probe.
    pub index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub tolerance: f64,
    /// Draws discarded because `x - h` and `x + h` fall on different sides
    /// of a ReLU kink, where a central difference does not estimate the
    /// derivative.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(Probe::rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.max_rel_err() < self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &Probe> {
        self.probes.iter().filter(move |p| p.rel_err() >= self.tolerance)
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.probes.extend(other.probes);
        self.kinks += other.kinks;
    }
}

/// `|a - n| / (|a| + |n| + 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Checks the gradient of the scalar built by `loss` with respect to every
/// parameter in `store`, at `config.probes` random coordinates or directions.
///
/// Probes cycle over parameters so small tensors are covered even next to a
/// large embedding table. A draw whose two perturbed evaluations disagree on
/// any ReLU sign is redrawn (up to ten times the probe budget in total).
/// `store` is perturbed in place and restored.
pub fn check<F>(store: &mut ParamStore, config: GradCheckConfig, rng: &mut RngState, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut g = Graph::with_params(store);
        let out = loss(&mut g)?;
        g.backward(out)?;
        store
            .ids()
            .map(|id| {
                let grad = g.param_grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
                (id, grad)
            })
            .collect()
    };

    let mut order: Vec<ParamId> = store.ids().collect();
    order.shuffle(rng);
    let mut probes = Vec::with_capacity(config.probes);
    let mut kinks = 0;
    let mut k = 0;
    while probes.len() < config.probes && k < 10 * config.probes && !order.is_empty() {
        let id = order[k % order.len()];
        k += 1;
        let grad = &analytic[id.index()].1;
        let numel = store.get(id).numel();
        let (index, direction, analytic) = match config.mode {
            ProbeMode::Coordinate => {
                let index = rng.random_range(0..numel);
                let mut u = vec![0.0; numel];
                u[index] = 1.0;
                (Some(index), u, grad[index])
            }
            ProbeMode::Direction => {
                let u = Tensor::randn(vec![numel], 1.0, rng)?.into_data();
                let a = grad.iter().zip(&u).map(|(g, u)| g * u).sum();
                (None, u, a)
            }
        };
        match central_difference(store, id, &direction, config.step, &loss)? {
            Some(numeric) => probes.push(Probe { param: store.name(id).to_string(), index, analytic, numeric }),
            None => kinks += 1,
        }
    }
    Ok(GradCheckReport { probes, tolerance: config.tolerance, kinks })
}

/// `(f(x + h u) - f(x - h u)) / 2h`, or `None` when the two evaluations
/// straddle a ReLU kink.
fn central_difference<F>(store: &mut ParamStore, id: ParamId, direction: &[f64], h: f64, loss: &F) -> Result<Option<f64>>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let original = store.get(id).clone();
    let eval = |sign: f64, store: &mut ParamStore| -> Result<(f64, Vec<bool>)> {
        for ((x, x0), u) in store.get_mut(id).data_mut().iter_mut().zip(original.data()).zip(direction) {
            *x = x0 + sign * h * u;
        }
        let mut g = Graph::with_params(store);
        let out = loss(&mut g)?;
        Ok((g.value(out).data()[0], g.relu_pattern()))
    };
    let plus = eval(1.0, store);
    let minus = eval(-1.0, store);
    *store.get_mut(id) = original;
    let ((plus, p_pattern), (minus, m_pattern)) = (plus?, minus?);
    Ok((p_pattern == m_pattern).then(|| (plus - minus) / (2.0 * h)))
}

/// Reduces `out` to a scalar with fixed random weights. Plain sums hide
/// gradient errors for outputs whose sum is invariant (softmax, layer norm).
pub fn random_projection(g: &mut Graph<'_>, out: Var, rng: &mut RngState) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let weights = g.constant(Tensor::uniform(shape, 1.0, rng)?);
    let prod = g.mul(out, weights)?;
    Ok(g.sum_all(prod))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamGroup;

    #[test]
    fn detects_a_correct_gradient() {
        let mut rng = RngState::new(1);
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::randn(vec![3, 4], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        let report = check(&mut store, GradCheckConfig::default(), &mut rng, |g| {
            let xv = g.param(x);
            let sq = g.mul(xv, xv)?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
        assert_eq!(report.probes.len(), 100);
    }

    #[test]
    fn directional_probes_check_the_dot_product_with_the_gradient() {
        let mut rng = RngState::new(2);
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::randn(vec![5], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        let before = store.get(x).clone();
        let loss = |g: &mut Graph<'_>| {
            let xv = g.param(x);
            let cube = g.mul(xv, xv)?;
            let cube = g.mul(cube, xv)?;
            Ok(g.sum_all(cube))
        };
        let report = check(&mut store, GradCheckConfig::directional(), &mut rng, loss).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
        assert!(report.probes.iter().all(|p| p.index.is_none()));
        assert_eq!(store.get(x), &before);
    }

    #[test]
    fn redraws_probes_that_straddle_a_relu_kink() {
        let mut rng = RngState::new(4);
        let mut store = ParamStore::new();
        // one coordinate sits closer to zero than the step
        let x = store.add("x", Tensor::new(vec![2], vec![1e-7, 0.7]).unwrap(), ParamGroup::Head).unwrap();
        let report = check(&mut store, GradCheckConfig { probes: 20, ..Default::default() }, &mut rng, |g| {
            let xv = g.param(x);
            let r = g.relu(xv);
            Ok(g.sum_all(r))
        })
        .unwrap();
        assert!(report.kinks > 0);
        assert!(report.passed());
        assert!(report.probes.iter().all(|p| p.index == Some(1)));
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // A loss whose graph value disagrees with the tape: the forward uses
        // x^2 but the constant factor hides a gradient mismatch.
        let mut rng = RngState::new(3);
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::randn(vec![4], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        for config in [GradCheckConfig::default(), GradCheckConfig::directional()] {
            let report = check(&mut store, config, &mut rng, |g| {
                let xv = g.param(x);
                // value depends on x through a constant snapshot the tape cannot see
                let frozen = g.constant(g.value(xv).clone());
                let sq = g.mul(xv, frozen)?;
                Ok(g.sum_all(sq))
            })
            .unwrap();
            assert!(!report.passed());
        }
    }

    #[test]
    fn relative_error_is_symmetric_and_bounded() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, -1.0) - 1.0).abs() < 1e-9);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
