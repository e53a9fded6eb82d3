//! Scripted force-regulating expert and the other fixed policies.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::sim::{action_bounds, obs, Action, N_A};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Anything that maps the most recent observation window to an action.
pub trait Policy: Send {
    fn name(&self) -> &str;
    /// Window length `N` the policy consumes.
    fn window(&self) -> usize;
    fn act(&mut self, window: &Matrix) -> Result<Action>;
}

/// Deterministic force regulator.
///
/// Feed is cut back before the material (detected from path progress) and,
/// once in contact, adjusted proportionally to the gap between a target force
/// and the exponentially smoothed sensed force magnitude. DoC is raised in
/// proportion to the smoothed normal deviation and stiffness rises with force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedExpert {
    pub window: usize,
    /// Progress fraction where the material begins.
    pub engage_progress: f64,
    /// Progress span over which the approach and contact laws are blended.
    pub blend: f64,
    /// N
    pub force_target: f64,
    pub feed_gain: f64,
    pub approach_feed: f64,
    /// mm of DoC increment per mm of deviation.
    pub doc_gain: f64,
    /// N/m
    pub k_base: f64,
    /// N/m per N
    pub k_gain: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// EWMA weight of the newest sample.
    pub smoothing: f64,
    /// Samples entering the EWMA.
    pub horizon: usize,
}

impl ScriptedExpert {
    pub fn for_config(cfg: &SimConfig, window: usize) -> Self {
        ScriptedExpert {
            window,
            engage_progress: cfg.engage_progress(),
            blend: 0.03,
            force_target: 2.0,
            feed_gain: 0.6,
            approach_feed: -0.3,
            doc_gain: 0.5,
            k_base: 1000.0,
            k_gain: 600.0,
            k_min: cfg.impedance.k_min,
            k_max: cfg.impedance.k_max,
            smoothing: 0.4,
            horizon: 8,
        }
    }

    fn ewma(&self, w: &Matrix, f: impl Fn(&[f64]) -> f64) -> f64 {
        let n = self.horizon.min(w.rows).max(1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut weight = 1.0;
        for r in (w.rows - n..w.rows).rev() {
            acc += weight * f(w.row(r));
            wsum += weight;
            weight *= 1.0 - self.smoothing;
        }
        acc / wsum
    }

    /// Feed adjustment as a function of smoothed force and progress.
    pub fn feed_law(&self, force: f64, progress: f64) -> f64 {
        let (lo, hi) = action_bounds(self.k_min, self.k_max)[0];
        let contact = (self.feed_gain * (self.force_target - force) / self.force_target).clamp(lo, hi);
        let approach = contact.min(self.approach_feed);
        let w = smoothstep((progress - (self.engage_progress - self.blend)) / self.blend);
        (1.0 - w) * approach + w * contact
    }

    pub fn evaluate(&self, w: &Matrix) -> Action {
        if w.rows == 0 {
            return Action::nominal(self.k_base);
        }
        let force = self.ewma(w, |r| (r[obs::FX].powi(2) + r[obs::FY].powi(2) + r[obs::FZ].powi(2)).sqrt());
        let dev = self.ewma(w, |r| r[obs::DEVIATION]);
        let progress = w.get(w.rows - 1, obs::PROGRESS);
        let b = action_bounds(self.k_min, self.k_max);
        let doc = (self.doc_gain * dev).clamp(b[1].0, b[1].1);
        let k = (self.k_base + self.k_gain * force).clamp(self.k_min, self.k_max);
        Action {
            feed_adjust: self.feed_law(force, progress),
            doc_offset: doc,
            stiffness: [k, self.k_base.clamp(self.k_min, self.k_max), k],
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl Policy for ScriptedExpert {
    fn name(&self) -> &str {
        "scripted-expert"
    }
    fn window(&self) -> usize {
        self.window
    }
    fn act(&mut self, window: &Matrix) -> Result<Action> {
        Ok(self.evaluate(window))
    }
}

/// Constant nominal process parameters.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub action: Action,
    pub window: usize,
}

impl ConstantPolicy {
    pub fn baseline(k: f64, window: usize) -> Self {
        ConstantPolicy {
            action: Action::nominal(k),
            window,
        }
    }
}

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        "baseline"
    }
    fn window(&self) -> usize {
        self.window
    }
    fn act(&mut self, _: &Matrix) -> Result<Action> {
        Ok(self.action)
    }
}

/// Uniformly random actions held for a random number of decisions.
#[derive(Debug, Clone)]
pub struct RandomHoldPolicy {
    pub window: usize,
    pub bounds: [(f64, f64); N_A],
    pub hold: (usize, usize),
    rng: Rng,
    current: Action,
    left: usize,
}

impl RandomHoldPolicy {
    pub fn new(window: usize, k_min: f64, k_max: f64, hold: (usize, usize), rng: Rng) -> Self {
        RandomHoldPolicy {
            window,
            bounds: action_bounds(k_min, k_max),
            hold,
            rng,
            current: Action::nominal(k_min),
            left: 0,
        }
    }
}

impl Policy for RandomHoldPolicy {
    fn name(&self) -> &str {
        "random-hold"
    }
    fn window(&self) -> usize {
        self.window
    }
    fn act(&mut self, _: &Matrix) -> Result<Action> {
        if self.left == 0 {
            let mut v = [0.0; N_A];
            for (i, (lo, hi)) in self.bounds.iter().enumerate() {
                v[i] = if i >= 2 {
                    (lo.ln() + self.rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + self.rng.gen::<f64>() * (hi - lo)
                };
            }
            self.current = Action::from_slice(&v);
            self.left = self.rng.gen_range(self.hold.0..=self.hold.1.max(self.hold.0));
        }
        self.left -= 1;
        Ok(self.current)
    }
}

/// Wraps a policy and perturbs its actions with held Gaussian noise,
/// expressed as a fraction of each channel's range.
pub struct NoisyPolicy<P: Policy> {
    pub inner: P,
    pub sigma: f64,
    pub hold: usize,
    pub bounds: [(f64, f64); N_A],
    rng: Rng,
    noise: [f64; N_A],
    left: usize,
}

impl<P: Policy> NoisyPolicy<P> {
    pub fn new(inner: P, sigma: f64, hold: usize, k_min: f64, k_max: f64, rng: Rng) -> Self {
        NoisyPolicy {
            inner,
            sigma,
            hold: hold.max(1),
            bounds: action_bounds(k_min, k_max),
            rng,
            noise: [0.0; N_A],
            left: 0,
        }
    }
}

impl<P: Policy> Policy for NoisyPolicy<P> {
    fn name(&self) -> &str {
        "noisy-expert"
    }
    fn window(&self) -> usize {
        self.inner.window()
    }
    fn act(&mut self, window: &Matrix) -> Result<Action> {
        if self.left == 0 {
            for (i, n) in self.noise.iter_mut().enumerate() {
                let z: f64 = self.rng.sample(StandardNormal);
                *n = z * self.sigma * (self.bounds[i].1 - self.bounds[i].0);
            }
            self.left = self.hold;
        }
        self.left -= 1;
        let mut v = self.inner.act(window)?.to_vec();
        for i in 0..N_A {
            v[i] = (v[i] + self.noise[i]).clamp(self.bounds[i].0, self.bounds[i].1);
        }
        Ok(Action::from_slice(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_with(force: f64, progress: f64) -> Matrix {
        let mut w = Matrix::zeros(100, 7);
        for r in 0..100 {
            w.set(r, obs::FZ, force);
            w.set(r, obs::PROGRESS, progress);
        }
        w
    }

    #[test]
    fn free_space_reduces_feed_before_engagement() {
        let e = ScriptedExpert::for_config(&SimConfig::default(), 100);
        let a = e.evaluate(&window_with(0.0, 0.0));
        assert!(a.feed_adjust < 0.0);
    }

    #[test]
    fn target_force_is_equilibrium() {
        let e = ScriptedExpert::for_config(&SimConfig::default(), 100);
        let a = e.evaluate(&window_with(e.force_target, 0.5));
        assert!(a.feed_adjust.abs() < 1e-12);
    }

    #[test]
    fn feed_is_monotone_in_force() {
        let e = ScriptedExpert::for_config(&SimConfig::default(), 100);
        for p in [0.0, 0.05, 0.09, 0.1, 0.11, 0.5, 1.0] {
            let mut prev = f64::INFINITY;
            for i in 0..400 {
                let a = e.evaluate(&window_with(i as f64 * 0.025, p)).feed_adjust;
                assert!(a <= prev, "progress {p}, force {}", i as f64 * 0.025);
                prev = a;
            }
        }
    }
}
