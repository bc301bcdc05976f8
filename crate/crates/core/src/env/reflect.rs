//! Left/right reflection of observations, actions, and transitions.
//!
//! Reflection is a pure index permutation: swap every left-leg channel
//! with its right-leg partner. Applied to both state and action it
//! commutes with the dynamics, which doubles the effective sample count
//! when training batches include reflected copies.

use super::observe::{enriched_ch, raw_ch, KINEMATIC_CHANNELS, ENRICHED_FRAME_DIM, ENRICHED_STACK};
use crate::error::CoreError;
use crate::replay::{ObsLayout, Transition};
use crate::Result;

/// Left/right channel partners in a raw observation.
const RAW_SWAPS: [(usize, usize); 4] = [
    (raw_ch::PHI_L, raw_ch::PHI_R),
    (raw_ch::OMEGA_L, raw_ch::OMEGA_R),
    (raw_ch::CONTACT_L, raw_ch::CONTACT_R),
    (raw_ch::STRENGTH_L, raw_ch::STRENGTH_R),
];

fn kin_pos(channel: usize) -> usize {
    KINEMATIC_CHANNELS
        .iter()
        .position(|&c| c == channel)
        .expect("channel missing from kinematic list")
}

/// Swap pairs inside one enriched frame: the raw core plus the
/// finite-difference columns of the per-leg kinematic channels.
fn enriched_frame_swaps() -> Vec<(usize, usize)> {
    let mut swaps: Vec<(usize, usize)> = RAW_SWAPS.to_vec();
    for (l, r) in [
        (raw_ch::PHI_L, raw_ch::PHI_R),
        (raw_ch::OMEGA_L, raw_ch::OMEGA_R),
    ] {
        let (pl, pr) = (kin_pos(l), kin_pos(r));
        swaps.push((enriched_ch::VEL_BASE + pl, enriched_ch::VEL_BASE + pr));
        swaps.push((enriched_ch::ACC_BASE + pl, enriched_ch::ACC_BASE + pr));
    }
    swaps
}

/// Reflects an observation in place. Flat layouts carry no leg structure
/// and cannot be reflected.
pub fn reflect_obs(layout: ObsLayout, x: &mut [f32]) -> Result<()> {
    if x.len() != layout.dim() {
        return Err(CoreError::contract(format!(
            "observation length {} does not match layout dim {}",
            x.len(),
            layout.dim()
        )));
    }
    match layout {
        ObsLayout::Raw => {
            for &(a, b) in RAW_SWAPS.iter() {
                x.swap(a, b);
            }
            Ok(())
        }
        ObsLayout::Enriched => {
            let swaps = enriched_frame_swaps();
            for f in 0..ENRICHED_STACK {
                let base = f * ENRICHED_FRAME_DIM;
                for &(a, b) in swaps.iter() {
                    x.swap(base + a, base + b);
                }
            }
            Ok(())
        }
        ObsLayout::Flat(_) => {
            Err(CoreError::contract("reflection undefined for flat observation layout"))
        }
    }
}

/// Swaps the left and right (flexor, extensor) action pairs in place.
pub fn reflect_action(a: &mut [f32]) -> Result<()> {
    if a.len() != 4 {
        return Err(CoreError::contract(format!("action has {} dims, need 4", a.len())));
    }
    a.swap(0, 2);
    a.swap(1, 3);
    Ok(())
}

/// Mirrored copy of a transition: observations and action reflected,
/// reward, done flag, mask, and priority untouched.
pub fn reflect_transition(t: &Transition) -> Result<Transition> {
    let mut out = t.clone();
    reflect_obs(t.layout, &mut out.s)?;
    reflect_obs(t.layout, &mut out.s_next)?;
    reflect_action(&mut out.a)?;
    Ok(out)
}
