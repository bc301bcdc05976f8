//! Convex blending of two policies' actions, plus the linear hand-over
//! schedule that walks the mix from the old policy to the new one.

use crate::error::CoreError;
use crate::Result;

/// alpha * a_pi + (1 - alpha) * a_eta, clamped to [0,1] per component.
/// The endpoints return the corresponding input exactly (clamped), so an
/// alpha = 1 run is indistinguishable from running a_pi's policy alone.
pub fn blend_actions(a_pi: &[f32], a_eta: &[f32], alpha: f64) -> Result<Vec<f32>> {
    if a_pi.len() != a_eta.len() {
        return Err(CoreError::contract(format!(
            "blend of {} dims with {} dims",
            a_pi.len(),
            a_eta.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::config(format!("alpha {alpha} not in [0,1]")));
    }
    if alpha == 1.0 {
        return Ok(a_pi.iter().map(|&v| v.clamp(0.0, 1.0)).collect());
    }
    if alpha == 0.0 {
        return Ok(a_eta.iter().map(|&v| v.clamp(0.0, 1.0)).collect());
    }
    Ok(a_pi
        .iter()
        .zip(a_eta.iter())
        .map(|(&p, &e)| {
            let mixed = alpha * p as f64 + (1.0 - alpha) * e as f64;
            mixed.clamp(0.0, 1.0) as f32
        })
        .collect())
}

/// Hand-over weight after k of n steps: 1 at the start, 0 at the end.
pub fn transition_alpha(k: u32, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(CoreError::config("schedule length must be positive"));
    }
    if k > n {
        return Err(CoreError::contract(format!("step {k} past schedule end {n}")));
    }
    Ok(1.0 - k as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn endpoints_return_the_inputs_exactly() {
        let pi = vec![0.1f32, 0.9, 0.5, 1.0];
        let eta = vec![0.7f32, 0.2, 0.0, 0.3];
        assert_eq!(blend_actions(&pi, &eta, 1.0).unwrap(), pi);
        assert_eq!(blend_actions(&pi, &eta, 0.0).unwrap(), eta);
    }

    #[test]
    fn small_alpha_mixes_linearly() {
        let out = blend_actions(&[1.0], &[0.0], 0.1).unwrap();
        assert_eq!(out, vec![0.1f32]);
        let out = blend_actions(&[0.8], &[0.4], 0.5).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn blended_actions_stay_in_the_box() {
        let mut rng = SplitMix64::new(2);
        for _ in 0..200 {
            let pi: Vec<f32> = (0..4).map(|_| rng.uniform(-0.5, 1.5) as f32).collect();
            let eta: Vec<f32> = (0..4).map(|_| rng.uniform(-0.5, 1.5) as f32).collect();
            let alpha = rng.uniform(0.0, 1.0);
            let out = blend_actions(&pi, &eta, alpha).unwrap();
            assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)), "{out:?}");
        }
    }

    #[test]
    fn schedule_hits_one_half_zero() {
        assert_eq!(transition_alpha(0, 150).unwrap(), 1.0);
        assert_eq!(transition_alpha(75, 150).unwrap(), 0.5);
        assert_eq!(transition_alpha(150, 150).unwrap(), 0.0);
    }

    #[test]
    fn contract_violations_rejected() {
        assert!(blend_actions(&[0.1, 0.2], &[0.1], 0.5).is_err());
        assert!(blend_actions(&[0.1], &[0.1], 1.5).is_err());
        assert!(blend_actions(&[0.1], &[0.1], -0.1).is_err());
        assert!(transition_alpha(151, 150).is_err());
        assert!(transition_alpha(0, 0).is_err());
    }
}
