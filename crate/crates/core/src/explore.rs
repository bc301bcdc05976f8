//! Exploration noise: an Ornstein-Uhlenbeck process with linear sigma
//! decay, a clipped random-walk Gaussian, and the per-episode policy that
//! mixes action noise with parameter-space noise and switches itself off
//! and back on based on evaluation uncertainty.
//!
//! Every process is pure given its state and the rng stream position, so
//! replaying a seed reproduces the noise bitwise.

use crate::error::CoreError;
use crate::rng::SplitMix64;
use crate::Result;

/// Discrete OU process: x' = x + theta (mu - x) dt + sigma sqrt(dt) N(0,I).
/// Sigma decays linearly from its initial value to `sigma_min`, reaching it
/// exactly at `sigma_decay_steps` samples and staying there.
#[derive(Debug, Clone)]
pub struct OuNoise {
    x: Vec<f64>,
    theta: f64,
    mu: f64,
    sigma0: f64,
    sigma_min: f64,
    dt: f64,
    sigma_decay_steps: u64,
    steps: u64,
}

impl OuNoise {
    pub fn new(
        dim: usize,
        theta: f64,
        mu: f64,
        sigma: f64,
        sigma_min: f64,
        dt: f64,
        sigma_decay_steps: u64,
    ) -> Result<OuNoise> {
        if dim == 0 {
            return Err(CoreError::config("noise dimension must be positive"));
        }
        if !(dt > 0.0) {
            return Err(CoreError::config(format!("dt must be positive, got {dt}")));
        }
        if !(sigma >= sigma_min) || !(sigma_min >= 0.0) {
            return Err(CoreError::config(format!(
                "need sigma {sigma} >= sigma_min {sigma_min} >= 0"
            )));
        }
        Ok(OuNoise {
            x: vec![mu; dim],
            theta,
            mu,
            sigma0: sigma,
            sigma_min,
            dt,
            sigma_decay_steps,
            steps: 0,
        })
    }

    /// The temporally-correlated Gaussian variant: same process with a
    /// nearly-flat pullback, one code path for both.
    pub fn correlated_gaussian(dim: usize, sigma: f64, dt: f64) -> Result<OuNoise> {
        OuNoise::new(dim, 0.01, 0.0, sigma, sigma, dt, 0)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Sigma after `steps` samples: linear from sigma0 to sigma_min.
    /// Zero decay steps means no decay.
    pub fn current_sigma(&self) -> f64 {
        if self.sigma_decay_steps == 0 {
            return self.sigma0;
        }
        if self.steps >= self.sigma_decay_steps {
            return self.sigma_min;
        }
        let frac = self.steps as f64 / self.sigma_decay_steps as f64;
        self.sigma0 + (self.sigma_min - self.sigma0) * frac
    }

    /// Resets the state to the mean without touching the decay clock.
    pub fn reset_state(&mut self) {
        for v in self.x.iter_mut() {
            *v = self.mu;
        }
    }

    pub fn sample(&mut self, rng: &mut SplitMix64) -> Vec<f64> {
        let sigma = self.current_sigma();
        let scale = sigma * self.dt.sqrt();
        for v in self.x.iter_mut() {
            *v += self.theta * (self.mu - *v) * self.dt + scale * rng.normal();
        }
        self.steps += 1;
        self.x.clone()
    }
}

/// Clipped random-walk noise: each step adds N(0, step_sigma^2) and clamps
/// to [-clip, clip], so consecutive action perturbations stay close.
#[derive(Debug, Clone)]
pub struct RandomWalkNoise {
    x: Vec<f64>,
    step_sigma: f64,
    clip: f64,
}

impl RandomWalkNoise {
    pub fn new(dim: usize, step_sigma: f64, clip: f64) -> Result<RandomWalkNoise> {
        if dim == 0 {
            return Err(CoreError::config("noise dimension must be positive"));
        }
        if !(clip > 0.0) {
            return Err(CoreError::config(format!("clip must be positive, got {clip}")));
        }
        if !(step_sigma >= 0.0) {
            return Err(CoreError::config("step_sigma must be >= 0"));
        }
        Ok(RandomWalkNoise { x: vec![0.0; dim], step_sigma, clip })
    }

    pub fn sample(&mut self, rng: &mut SplitMix64) -> Vec<f64> {
        for v in self.x.iter_mut() {
            *v = (*v + self.step_sigma * rng.normal()).clamp(-self.clip, self.clip);
        }
        self.x.clone()
    }
}

/// What kind of noise an action-noise episode uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionNoiseKind {
    Ou,
    CorrelatedGaussian,
    RandomWalk,
}

/// The per-episode decision handed to the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeNoiseMode {
    Off,
    Action(ActionNoiseKind),
    Parameter,
}

/// Episode-level noise policy: draws action vs parameter noise once per
/// episode, decays a global scale, and switches exploration off below a
/// floor and back on when the agent looks uncertain.
#[derive(Debug, Clone)]
pub struct NoisePolicy {
    pub action_kind: ActionNoiseKind,
    p_action: f64,
    p_parameter: f64,
    pub decay: f64,
    pub off_below: f64,
    pub on_above: f64,
    pub scale: f64,
    pub enabled: bool,
}

impl NoisePolicy {
    pub fn new(
        action_kind: ActionNoiseKind,
        p_action: f64,
        p_parameter: f64,
        decay: f64,
        off_below: f64,
        on_above: f64,
        initial_scale: f64,
    ) -> Result<NoisePolicy> {
        if (p_action + p_parameter - 1.0).abs() > 1e-9 || !(0.0..=1.0).contains(&p_parameter) {
            return Err(CoreError::config(format!(
                "mixing probabilities ({p_action}, {p_parameter}) must be in [0,1] and sum to 1"
            )));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(CoreError::config(format!("decay {decay} must be in (0, 1]")));
        }
        if !(off_below <= on_above) || off_below < 0.0 {
            return Err(CoreError::config(format!(
                "need 0 <= off_below {off_below} <= on_above {on_above}"
            )));
        }
        if !(initial_scale >= 0.0) || !initial_scale.is_finite() {
            return Err(CoreError::config("initial scale must be finite >= 0"));
        }
        Ok(NoisePolicy {
            action_kind,
            p_action,
            p_parameter,
            decay,
            off_below,
            on_above,
            scale: initial_scale,
            enabled: true,
        })
    }

    /// The common mixture: OU action noise 70% of episodes, parameter
    /// noise the remaining 30%, no decay or switching.
    pub fn mixed_ou(p_action: f64) -> Result<NoisePolicy> {
        NoisePolicy::new(ActionNoiseKind::Ou, p_action, 1.0 - p_action, 1.0, 0.0, 0.0, 1.0)
    }

    /// One Bernoulli draw per episode boundary; the result applies to the
    /// whole episode.
    pub fn select_mode(&self, rng: &mut SplitMix64) -> EpisodeNoiseMode {
        if !self.enabled {
            return EpisodeNoiseMode::Off;
        }
        if rng.bernoulli(self.p_parameter) {
            EpisodeNoiseMode::Parameter
        } else {
            EpisodeNoiseMode::Action(self.action_kind)
        }
    }

    /// Advances the decay/switch schedule once (typically per episode).
    /// `uncertainty_signal` is the dispersion of recent evaluation returns;
    /// when exploration is off and the signal rises above `on_above`, noise
    /// comes back at exactly that threshold scale.
    pub fn schedule_step(&mut self, uncertainty_signal: f64) {
        self.scale *= self.decay;
        if self.scale < self.off_below {
            self.enabled = false;
        }
        if !self.enabled && uncertainty_signal > self.on_above {
            self.enabled = true;
            self.scale = self.on_above;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ou_zero_sigma_at_mean_is_fixed_point() {
        let mut ou = OuNoise::new(3, 0.1, 0.0, 0.0, 0.0, 0.01, 0).unwrap();
        let mut rng = SplitMix64::new(1);
        for _ in 0..100 {
            let n = ou.sample(&mut rng);
            assert!(n.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ou_stationary_std_matches_ar1_formula() {
        let (theta, sigma, dt) = (0.1, 0.2, 0.01);
        let mut ou = OuNoise::new(1, theta, 0.0, sigma, sigma, dt, 0).unwrap();
        let mut rng = SplitMix64::new(42);
        let n = 1_000_000usize;
        let burn = 50_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n + burn {
            let v = ou.sample(&mut rng)[0];
            if i >= burn {
                sum += v;
                sumsq += v * v;
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let a = 1.0 - theta * dt;
        let expect = (sigma * sigma * dt / (1.0 - a * a)).sqrt();
        assert_relative_eq!(var.sqrt(), expect, max_relative = 0.03);
    }

    #[test]
    fn ou_lag1_autocorrelation_matches_ar1() {
        let (theta, sigma, dt) = (0.1, 0.2, 0.01);
        let mut ou = OuNoise::new(1, theta, 0.0, sigma, sigma, dt, 0).unwrap();
        let mut rng = SplitMix64::new(7);
        let n = 1_000_000usize;
        let mut prev = 0.0;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut cross = 0.0;
        for i in 0..n {
            let v = ou.sample(&mut rng)[0];
            sum += v;
            sumsq += v * v;
            if i > 0 {
                cross += v * prev;
            }
            prev = v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let autocorr = (cross / (n - 1) as f64 - mean * mean) / var;
        assert!((autocorr - (1.0 - theta * dt)).abs() < 0.01, "lag-1 {autocorr}");
    }

    #[test]
    fn sigma_decays_linearly_and_hits_floor_exactly() {
        let mut ou = OuNoise::new(1, 0.1, 0.0, 0.2, 0.05, 0.01, 100).unwrap();
        let mut rng = SplitMix64::new(3);
        assert_eq!(ou.current_sigma(), 0.2);
        for _ in 0..50 {
            ou.sample(&mut rng);
        }
        assert_relative_eq!(ou.current_sigma(), 0.125, max_relative = 1e-12);
        for _ in 0..50 {
            ou.sample(&mut rng);
        }
        assert_eq!(ou.current_sigma(), 0.05);
        ou.sample(&mut rng);
        assert_eq!(ou.current_sigma(), 0.05, "sigma must stay at the floor");
        assert!(ou.current_sigma() > 0.0);
    }

    #[test]
    fn noise_replays_bitwise_from_same_seed() {
        let make = || OuNoise::new(4, 0.15, 0.0, 0.3, 0.1, 0.01, 10).unwrap();
        let mut a = make();
        let mut b = make();
        let mut ra = SplitMix64::new(99);
        let mut rb = SplitMix64::new(99);
        for _ in 0..200 {
            let na = a.sample(&mut ra);
            let nb = b.sample(&mut rb);
            for (x, y) in na.iter().zip(nb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn random_walk_zero_sigma_is_constant() {
        let mut rw = RandomWalkNoise::new(2, 0.0, 0.1).unwrap();
        let mut rng = SplitMix64::new(5);
        let first = rw.sample(&mut rng);
        for _ in 0..50 {
            assert_eq!(rw.sample(&mut rng), first);
        }
    }

    #[test]
    fn random_walk_respects_clip() {
        let mut rw = RandomWalkNoise::new(3, 0.5, 0.1).unwrap();
        let mut rng = SplitMix64::new(8);
        for _ in 0..1000 {
            let n = rw.sample(&mut rng);
            assert!(n.iter().all(|&v| (-0.1..=0.1).contains(&v)), "{n:?}");
        }
    }

    #[test]
    fn random_walk_variance_grows_linearly_before_clipping() {
        let steps = 10;
        let step_sigma = 0.01;
        let mut rng = SplitMix64::new(13);
        let chains = 20_000;
        let mut sumsq = 0.0;
        for _ in 0..chains {
            let mut rw = RandomWalkNoise::new(1, step_sigma, 1e6).unwrap();
            let mut last = 0.0;
            for _ in 0..steps {
                last = rw.sample(&mut rng)[0];
            }
            sumsq += last * last;
        }
        let var = sumsq / chains as f64;
        let expect = steps as f64 * step_sigma * step_sigma;
        assert_relative_eq!(var, expect, max_relative = 0.1);
    }

    #[test]
    fn correlated_gaussian_is_weakly_pulled_ou() {
        let mut g = OuNoise::correlated_gaussian(2, 0.1, 0.01).unwrap();
        assert_eq!(g.theta, 0.01);
        let mut rng = SplitMix64::new(4);
        let n = g.sample(&mut rng);
        assert_eq!(n.len(), 2);
    }

    #[test]
    fn mode_mixture_matches_probabilities() {
        let policy = NoisePolicy::mixed_ou(0.7).unwrap();
        let mut rng = SplitMix64::new(17);
        let mut param = 0u64;
        let episodes = 10_000;
        for _ in 0..episodes {
            match policy.select_mode(&mut rng) {
                EpisodeNoiseMode::Parameter => param += 1,
                EpisodeNoiseMode::Action(ActionNoiseKind::Ou) => {}
                other => panic!("unexpected mode {other:?}"),
            }
        }
        let frac = param as f64 / episodes as f64;
        assert!((0.28..=0.32).contains(&frac), "parameter fraction {frac}");
    }

    #[test]
    fn zero_parameter_probability_always_action() {
        let policy =
            NoisePolicy::new(ActionNoiseKind::RandomWalk, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let mut rng = SplitMix64::new(2);
        for _ in 0..1000 {
            assert_eq!(
                policy.select_mode(&mut rng),
                EpisodeNoiseMode::Action(ActionNoiseKind::RandomWalk)
            );
        }
    }

    #[test]
    fn schedule_decay_one_keeps_scale() {
        let mut p = NoisePolicy::new(ActionNoiseKind::Ou, 0.7, 0.3, 1.0, 0.0, 0.0, 0.5).unwrap();
        for _ in 0..10 {
            p.schedule_step(0.0);
        }
        assert_eq!(p.scale, 0.5);
        assert!(p.enabled);
    }

    #[test]
    fn schedule_disables_after_two_halvings() {
        let mut p =
            NoisePolicy::new(ActionNoiseKind::Ou, 0.7, 0.3, 0.5, 0.05, 0.2, 0.1).unwrap();
        p.schedule_step(0.0);
        // Scale is exactly 0.05, not strictly below the floor yet.
        assert!(p.enabled);
        p.schedule_step(0.0);
        assert!(!p.enabled);
        let mut rng = SplitMix64::new(0);
        assert_eq!(p.select_mode(&mut rng), EpisodeNoiseMode::Off);
    }

    #[test]
    fn schedule_reenables_at_threshold_scale() {
        let mut p =
            NoisePolicy::new(ActionNoiseKind::Ou, 0.7, 0.3, 0.5, 0.05, 0.2, 0.1).unwrap();
        p.schedule_step(0.0);
        p.schedule_step(0.0);
        assert!(!p.enabled);
        // Low uncertainty keeps it off.
        p.schedule_step(0.1);
        assert!(!p.enabled);
        // High uncertainty brings noise back at exactly on_above.
        p.schedule_step(0.3);
        assert!(p.enabled);
        assert_eq!(p.scale, 0.2);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(OuNoise::new(0, 0.1, 0.0, 0.2, 0.05, 0.01, 0).is_err());
        assert!(OuNoise::new(1, 0.1, 0.0, 0.2, 0.05, 0.0, 0).is_err());
        assert!(OuNoise::new(1, 0.1, 0.0, 0.01, 0.05, 0.01, 0).is_err());
        assert!(RandomWalkNoise::new(1, 0.1, 0.0).is_err());
        assert!(NoisePolicy::new(ActionNoiseKind::Ou, 0.5, 0.3, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(NoisePolicy::new(ActionNoiseKind::Ou, 0.7, 0.3, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(NoisePolicy::new(ActionNoiseKind::Ou, 0.7, 0.3, 1.0, 0.5, 0.2, 1.0).is_err());
    }
}
