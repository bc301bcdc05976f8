//! Experience replay: FIFO ring storage, optional proportional
//! prioritization over a sum tree, bootstrap masks drawn at push time, and
//! episode-level admission filtering.
//!
//! Sampling hands out global insert ids, not slot indices. A priority
//! update for an id that has since been evicted is skipped silently and
//! counted, never applied to whatever reused the slot.

use crate::env::observe::{ENRICHED_DIM, RAW_DIM};
use crate::env::reflect::reflect_transition;
use crate::error::CoreError;
use crate::rng::SplitMix64;
use crate::Result;

/// How transition observations are laid out. Raw and enriched vectors can
/// be reflected; flat is an opaque externally-defined layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsLayout {
    Raw,
    Enriched,
    Flat(u32),
}

impl ObsLayout {
    pub fn dim(self) -> usize {
        match self {
            ObsLayout::Raw => RAW_DIM,
            ObsLayout::Enriched => ENRICHED_DIM,
            ObsLayout::Flat(d) => d as usize,
        }
    }

    pub fn for_mode(mode: crate::env::observe::ObsMode) -> ObsLayout {
        match mode {
            crate::env::observe::ObsMode::Raw => ObsLayout::Raw,
            crate::env::observe::ObsMode::Enriched => ObsLayout::Enriched,
        }
    }

    /// Wire tag. Flat carries its dimension separately.
    pub fn tag(self) -> u8 {
        match self {
            ObsLayout::Raw => 0,
            ObsLayout::Enriched => 1,
            ObsLayout::Flat(_) => 2,
        }
    }

    pub fn from_tag(tag: u8, dim: u32) -> Result<ObsLayout> {
        match tag {
            0 => Ok(ObsLayout::Raw),
            1 => Ok(ObsLayout::Enriched),
            2 => Ok(ObsLayout::Flat(dim)),
            other => Err(CoreError::contract(format!("unknown observation layout tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
    /// Per-head bootstrap mask, 0.0 or 1.0 entries. Drawn once at push
    /// time and immutable afterwards.
    pub mask: Vec<f32>,
    pub priority: f64,
    pub layout: ObsLayout,
}

impl Transition {
    pub fn new(
        s: Vec<f32>,
        a: Vec<f32>,
        r: f32,
        s_next: Vec<f32>,
        done: bool,
        layout: ObsLayout,
    ) -> Transition {
        Transition { s, a, r, s_next, done, mask: Vec::new(), priority: 1.0, layout }
    }

    fn validate(&self) -> Result<()> {
        let d = self.layout.dim();
        if self.s.len() != d || self.s_next.len() != d {
            return Err(CoreError::contract(format!(
                "observation dims {}/{} do not match layout dim {d}",
                self.s.len(),
                self.s_next.len()
            )));
        }
        if !self.priority.is_finite() || self.priority <= 0.0 {
            return Err(CoreError::contract(format!("priority {} must be finite > 0", self.priority)));
        }
        if !self.r.is_finite() {
            return Err(CoreError::numeric("non-finite reward pushed to replay"));
        }
        Ok(())
    }
}

/// Episode admission. Rules are conjunctive when both are set; the default
/// admits everything.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdmissionRule {
    /// Keep the episode only if its return ranks within this top fraction
    /// of all episode returns seen so far (the current one included).
    pub top_fraction: Option<f64>,
    /// Keep only steps with reward at or above this threshold.
    pub min_step_reward: Option<f32>,
}

impl AdmissionRule {
    pub fn admits_everything(&self) -> bool {
        self.top_fraction.is_none() && self.min_step_reward.is_none()
    }

    fn validate(&self) -> Result<()> {
        if let Some(f) = self.top_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(CoreError::config(format!("top_fraction {f} not in [0,1]")));
            }
        }
        if let Some(t) = self.min_step_reward {
            if !t.is_finite() {
                return Err(CoreError::config("min_step_reward must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Bootstrap head count K; masks have this length. 1 gives all-ones.
    pub n_heads: usize,
    /// Per-component Bernoulli probability for bootstrap masks.
    pub p_mask: f64,
    pub prioritized: bool,
    pub admission: AdmissionRule,
    /// Seed for the buffer-owned mask stream.
    pub seed: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 100_000,
            n_heads: 1,
            p_mask: 0.5,
            prioritized: false,
            admission: AdmissionRule::default(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    items: Vec<Transition>,
    ids: Vec<u64>,
    next_id: u64,
    tree: Option<SumTree>,
    /// Exponent the sum-tree leaves were computed with.
    cached_alpha: f64,
    mask_rng: SplitMix64,
    episode_returns: Vec<f64>,
    stale_skips: u64,
    layout: Option<ObsLayout>,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig) -> Result<ReplayBuffer> {
        if cfg.capacity == 0 {
            return Err(CoreError::config("replay capacity must be positive"));
        }
        if cfg.n_heads == 0 {
            return Err(CoreError::config("replay needs at least one head"));
        }
        if !(0.0..=1.0).contains(&cfg.p_mask) {
            return Err(CoreError::config(format!("p_mask {} not in [0,1]", cfg.p_mask)));
        }
        cfg.admission.validate()?;
        let tree = if cfg.prioritized { Some(SumTree::new(cfg.capacity)) } else { None };
        Ok(ReplayBuffer {
            mask_rng: SplitMix64::new(cfg.seed),
            items: Vec::new(),
            ids: Vec::new(),
            next_id: 0,
            tree,
            cached_alpha: 1.0,
            episode_returns: Vec::new(),
            stale_skips: 0,
            layout: None,
            cfg,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len().min(self.cfg.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn stale_skips(&self) -> u64 {
        self.stale_skips
    }

    pub fn total_inserted(&self) -> u64 {
        self.next_id
    }

    /// Stored transitions in slot order, oldest-first until wraparound.
    pub fn contents(&self) -> &[Transition] {
        &self.items
    }

    /// Pushes an episode through the admission rules. Returns the number of
    /// transitions actually stored. Masks are drawn here, one Bernoulli per
    /// head per transition, from the buffer-owned stream.
    pub fn push_episode(&mut self, episode: &[Transition]) -> Result<usize> {
        if episode.is_empty() {
            return Ok(0);
        }
        let layout = episode[0].layout;
        for t in episode {
            if t.layout != layout {
                return Err(CoreError::contract("mixed layouts within one episode"));
            }
            t.validate()?;
        }
        match self.layout {
            None => self.layout = Some(layout),
            Some(l) if l != layout => {
                return Err(CoreError::contract(
                    "episode layout differs from buffer contents",
                ));
            }
            _ => {}
        }
        let ep_return: f64 = episode.iter().map(|t| t.r as f64).sum();
        if let Some(frac) = self.cfg.admission.top_fraction {
            self.episode_returns.push(ep_return);
            let total = self.episode_returns.len();
            let better = self.episode_returns.iter().filter(|&&r| r > ep_return).count();
            let keep = (frac * total as f64).ceil() as usize;
            if better + 1 > keep {
                return Ok(0);
            }
        }
        let mut admitted = 0;
        for t in episode {
            if let Some(thr) = self.cfg.admission.min_step_reward {
                if t.r < thr {
                    continue;
                }
            }
            let mut stored = t.clone();
            // Single-head buffers always train on everything; bootstrap
            // masking only means something across K > 1 heads.
            stored.mask = if self.cfg.n_heads == 1 {
                vec![1.0]
            } else {
                (0..self.cfg.n_heads)
                    .map(|_| if self.mask_rng.bernoulli(self.cfg.p_mask) { 1.0 } else { 0.0 })
                    .collect()
            };
            self.insert(stored);
            admitted += 1;
        }
        Ok(admitted)
    }

    fn insert(&mut self, t: Transition) {
        let slot = (self.next_id % self.cfg.capacity as u64) as usize;
        let weight = t.priority.powf(self.cached_alpha);
        if slot == self.items.len() {
            self.items.push(t);
            self.ids.push(self.next_id);
        } else {
            self.items[slot] = t;
            self.ids[slot] = self.next_id;
        }
        if let Some(tree) = &mut self.tree {
            tree.set(slot, weight);
        }
        self.next_id += 1;
    }

    fn slot_of(&self, id: u64) -> Option<usize> {
        let slot = (id % self.cfg.capacity as u64) as usize;
        if slot < self.ids.len() && self.ids[slot] == id {
            Some(slot)
        } else {
            None
        }
    }

    /// Uniform i.i.d. sample with replacement. With `reflect_augment` each
    /// draw contributes itself and its mirror, adjacent in the batch.
    pub fn sample_uniform(
        &self,
        n: usize,
        reflect_augment: bool,
        rng: &mut SplitMix64,
    ) -> Result<Vec<Transition>> {
        if self.is_empty() {
            return Err(CoreError::contract("sample from empty replay buffer"));
        }
        let mut batch = Vec::with_capacity(if reflect_augment { 2 * n } else { n });
        for _ in 0..n {
            let slot = rng.below(self.items.len() as u64) as usize;
            let t = self.items[slot].clone();
            if reflect_augment {
                let reflected = reflect_transition(&t)?;
                batch.push(t);
                batch.push(reflected);
            } else {
                batch.push(t);
            }
        }
        Ok(batch)
    }

    /// Proportional prioritized sample: P(i) ∝ priority_i^alpha, stratified
    /// over the cumulative mass. Returns (batch, importance weights, ids);
    /// weights are (N·P)^−beta scaled so the largest in the batch is 1.
    pub fn sample_prioritized(
        &mut self,
        n: usize,
        alpha: f64,
        beta: f64,
        rng: &mut SplitMix64,
    ) -> Result<(Vec<Transition>, Vec<f32>, Vec<u64>)> {
        if self.is_empty() {
            return Err(CoreError::contract("sample from empty replay buffer"));
        }
        if n == 0 {
            return Ok((Vec::new(), Vec::new(), Vec::new()));
        }
        if !(alpha >= 0.0) || !(0.0..=1.0).contains(&beta) {
            return Err(CoreError::config(format!("bad alpha {alpha} / beta {beta}")));
        }
        let tree = self
            .tree
            .as_mut()
            .ok_or_else(|| CoreError::config("buffer not configured for prioritized replay"))?;
        if alpha != self.cached_alpha {
            for slot in 0..self.items.len() {
                tree.set(slot, self.items[slot].priority.powf(alpha));
            }
            self.cached_alpha = alpha;
        }
        let tree = self.tree.as_ref().unwrap();
        let total = tree.total();
        if !(total > 0.0) {
            return Err(CoreError::numeric("sum tree mass vanished"));
        }
        let count = self.items.len() as f64;
        let mut batch = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        let seg = total / n as f64;
        let mut max_w = 0.0f64;
        for k in 0..n {
            let u = seg * (k as f64 + rng.next_f64());
            let slot = tree.find(u.min(total * (1.0 - 1e-12)));
            let slot = slot.min(self.items.len() - 1);
            let p = tree.get(slot) / total;
            let w = (count * p).powf(-beta);
            max_w = max_w.max(w);
            batch.push(self.items[slot].clone());
            weights.push(w);
            ids.push(self.ids[slot]);
        }
        let weights = weights.iter().map(|&w| (w / max_w) as f32).collect();
        Ok((batch, weights, ids))
    }

    /// Sets priority_i = |td_error_i| + 1e-6. Ids that were evicted since
    /// sampling are skipped and counted.
    pub fn update_priorities(&mut self, ids: &[u64], td_errors: &[f32]) -> Result<()> {
        if ids.len() != td_errors.len() {
            return Err(CoreError::contract(format!(
                "{} ids vs {} td errors",
                ids.len(),
                td_errors.len()
            )));
        }
        for (&id, &delta) in ids.iter().zip(td_errors.iter()) {
            let Some(slot) = self.slot_of(id) else {
                self.stale_skips += 1;
                continue;
            };
            let p = delta.abs() as f64 + 1e-6;
            self.items[slot].priority = p;
            if let Some(tree) = &mut self.tree {
                tree.set(slot, p.powf(self.cached_alpha));
            }
        }
        Ok(())
    }

    /// Direct slot access for tests and trainers that iterate.
    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    #[cfg(test)]
    fn tree_root(&self) -> f64 {
        self.tree.as_ref().map(|t| t.total()).unwrap_or(0.0)
    }
}

/// Flat-array segment tree over non-negative weights. Leaf i lives at
/// node capacity+i; parent sums are exact f64 adds recomputed on the path,
/// so the root tracks the true sum to rounding error.
#[derive(Debug, Clone)]
struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> SumTree {
        SumTree { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[self.capacity + i]
    }

    fn set(&mut self, i: usize, w: f64) {
        debug_assert!(w >= 0.0 && w.is_finite());
        let mut node = self.capacity + i;
        self.nodes[node] = w;
        node >>= 1;
        while node >= 1 {
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
            node >>= 1;
        }
    }

    /// Finds the leaf where the running prefix sum passes `u`.
    fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.capacity {
            let left = self.nodes[2 * node];
            if u < left {
                node *= 2;
            } else {
                u -= left;
                node = 2 * node + 1;
            }
        }
        node - self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_t(r: f32, tag: f32) -> Transition {
        Transition::new(vec![tag, 0.0], vec![0.5; 4], r, vec![tag, 1.0], false, ObsLayout::Flat(2))
    }

    fn buffer(cfg: ReplayConfig) -> ReplayBuffer {
        ReplayBuffer::new(cfg).unwrap()
    }

    #[test]
    fn admit_all_keeps_whole_episode() {
        let mut b = buffer(ReplayConfig::default());
        let ep: Vec<_> = (0..10).map(|i| flat_t(i as f32, i as f32)).collect();
        assert_eq!(b.push_episode(&ep).unwrap(), 10);
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn empty_episode_is_noop() {
        let mut b = buffer(ReplayConfig::default());
        assert_eq!(b.push_episode(&[]).unwrap(), 0);
        assert!(b.is_empty());
    }

    #[test]
    fn min_step_reward_filters_steps() {
        let mut b = buffer(ReplayConfig {
            admission: AdmissionRule { min_step_reward: Some(0.0), ..Default::default() },
            ..Default::default()
        });
        let ep = vec![flat_t(-1.0, 0.0), flat_t(1.0, 1.0)];
        assert_eq!(b.push_episode(&ep).unwrap(), 1);
        assert_eq!(b.get(0).unwrap().r, 1.0);
    }

    #[test]
    fn top_fraction_ranks_episode_returns() {
        let mut b = buffer(ReplayConfig {
            admission: AdmissionRule { top_fraction: Some(0.5), ..Default::default() },
            ..Default::default()
        });
        // First episode is trivially in the top half.
        assert_eq!(b.push_episode(&[flat_t(1.0, 0.0)]).unwrap(), 1);
        // Return 2.0 is the best seen: admitted.
        assert_eq!(b.push_episode(&[flat_t(2.0, 1.0)]).unwrap(), 1);
        // Return 0.5 ranks 3rd of 3; top half keeps ceil(1.5)=2: rejected.
        assert_eq!(b.push_episode(&[flat_t(0.5, 2.0)]).unwrap(), 0);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn conjunctive_rules_both_apply() {
        let mut b = buffer(ReplayConfig {
            admission: AdmissionRule { top_fraction: Some(1.0), min_step_reward: Some(0.5) },
            ..Default::default()
        });
        let ep = vec![flat_t(0.2, 0.0), flat_t(0.8, 1.0)];
        // top_fraction 1.0 admits every episode; step filter still bites.
        assert_eq!(b.push_episode(&ep).unwrap(), 1);
    }

    #[test]
    fn fifo_eviction_drops_oldest() {
        let mut b = buffer(ReplayConfig { capacity: 4, ..Default::default() });
        for i in 0..6 {
            b.push_episode(&[flat_t(i as f32, i as f32)]).unwrap();
        }
        assert_eq!(b.len(), 4);
        let tags: Vec<f32> = (0..4).map(|s| b.get(s).unwrap().s[0]).collect();
        // Slots wrap: 4,5 overwrote 0,1.
        assert_eq!(tags, vec![4.0, 5.0, 2.0, 3.0]);
        assert!(b.slot_of(0).is_none());
        assert!(b.slot_of(1).is_none());
        assert!(b.slot_of(2).is_some());
    }

    #[test]
    fn masks_drawn_at_push_with_configured_heads() {
        let mut b = buffer(ReplayConfig { n_heads: 10, seed: 9, ..Default::default() });
        let ep: Vec<_> = (0..10_000).map(|i| flat_t(0.0, i as f32)).collect();
        b.push_episode(&ep).unwrap();
        let mut per_head = vec![0.0f64; 10];
        for s in 0..b.len() {
            let m = &b.get(s).unwrap().mask;
            assert_eq!(m.len(), 10);
            for (h, &v) in m.iter().enumerate() {
                assert!(v == 0.0 || v == 1.0);
                per_head[h] += v as f64;
            }
        }
        for h in 0..10 {
            let mean = per_head[h] / 10_000.0;
            assert!((0.48..=0.52).contains(&mean), "head {h} mask mean {mean}");
        }
    }

    #[test]
    fn single_head_mask_is_always_one() {
        let mut b = buffer(ReplayConfig { n_heads: 1, p_mask: 0.5, ..Default::default() });
        for i in 0..20 {
            b.push_episode(&[flat_t(0.0, i as f32)]).unwrap();
        }
        for s in 0..b.len() {
            assert_eq!(b.get(s).unwrap().mask, vec![1.0]);
        }
    }

    #[test]
    fn uniform_sampling_is_close_to_uniform() {
        let mut b = buffer(ReplayConfig::default());
        let ep: Vec<_> = (0..10).map(|i| flat_t(0.0, i as f32)).collect();
        b.push_episode(&ep).unwrap();
        let mut rng = SplitMix64::new(3);
        let mut counts = [0u64; 10];
        let draws = 100_000;
        let batch = b.sample_uniform(draws, false, &mut rng).unwrap();
        for t in &batch {
            counts[t.s[0] as usize] += 1;
        }
        // 3 sigma for Binomial(1e5, 0.1): sqrt(1e5*0.1*0.9) ~ 95.
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - 10_000.0).abs();
            assert!(dev < 3.0 * 95.0, "item {i} count {c}");
        }
    }

    #[test]
    fn single_item_buffer_samples_with_replacement() {
        let mut b = buffer(ReplayConfig::default());
        b.push_episode(&[flat_t(0.5, 7.0)]).unwrap();
        let mut rng = SplitMix64::new(1);
        let batch = b.sample_uniform(3, false, &mut rng).unwrap();
        assert_eq!(batch.len(), 3);
        assert!(batch.iter().all(|t| t.s[0] == 7.0));
    }

    #[test]
    fn sampling_empty_buffer_errors() {
        let b = buffer(ReplayConfig::default());
        let mut rng = SplitMix64::new(0);
        assert!(b.sample_uniform(1, false, &mut rng).is_err());
    }

    #[test]
    fn prioritized_ratio_oracle() {
        let mut b = buffer(ReplayConfig { prioritized: true, seed: 4, ..Default::default() });
        let mut t0 = flat_t(0.0, 0.0);
        t0.priority = 3.0;
        let mut t1 = flat_t(0.0, 1.0);
        t1.priority = 1.0;
        b.push_episode(&[t0, t1]).unwrap();
        let mut rng = SplitMix64::new(11);
        let mut counts = [0u64; 2];
        let rounds = 25_000;
        for _ in 0..rounds {
            let (batch, _, _) = b.sample_prioritized(4, 1.0, 0.0, &mut rng).unwrap();
            for t in &batch {
                counts[t.s[0] as usize] += 1;
            }
        }
        let total = (rounds * 4) as f64;
        assert!((counts[0] as f64 / total - 0.75).abs() < 0.01);
        assert!((counts[1] as f64 / total - 0.25).abs() < 0.01);
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let mut b = buffer(ReplayConfig { prioritized: true, ..Default::default() });
        let mut t0 = flat_t(0.0, 0.0);
        t0.priority = 100.0;
        let mut t1 = flat_t(0.0, 1.0);
        t1.priority = 0.001;
        b.push_episode(&[t0, t1]).unwrap();
        let mut rng = SplitMix64::new(21);
        let mut counts = [0u64; 2];
        for _ in 0..20_000 {
            let (batch, w, _) = b.sample_prioritized(2, 0.0, 0.0, &mut rng).unwrap();
            for t in &batch {
                counts[t.s[0] as usize] += 1;
            }
            assert!(w.iter().all(|&x| x == 1.0));
        }
        let f0 = counts[0] as f64 / 40_000.0;
        assert!((f0 - 0.5).abs() < 0.02, "alpha=0 frequency {f0}");
    }

    #[test]
    fn beta_one_uniform_priorities_gives_unit_weights() {
        let mut b = buffer(ReplayConfig { prioritized: true, ..Default::default() });
        let ep: Vec<_> = (0..8).map(|i| flat_t(0.0, i as f32)).collect();
        b.push_episode(&ep).unwrap();
        let mut rng = SplitMix64::new(2);
        let (_, w, _) = b.sample_prioritized(8, 1.0, 1.0, &mut rng).unwrap();
        assert!(w.iter().all(|&x| x == 1.0), "weights {w:?}");
    }

    #[test]
    fn update_priorities_floor_and_root() {
        let mut b = buffer(ReplayConfig { prioritized: true, ..Default::default() });
        let ep: Vec<_> = (0..4).map(|i| flat_t(0.0, i as f32)).collect();
        b.push_episode(&ep).unwrap();
        b.update_priorities(&[0, 1, 2, 3], &[0.0, 0.5, -2.0, 1.0]).unwrap();
        assert_eq!(b.get(0).unwrap().priority, 1e-6);
        assert_eq!(b.get(2).unwrap().priority, 2.0 + 1e-6);
        let expect: f64 = (0..4).map(|s| b.get(s).unwrap().priority).sum();
        assert_relative_eq!(b.tree_root(), expect, max_relative = 1e-12);
    }

    #[test]
    fn stale_ids_skipped_and_counted() {
        let mut b = buffer(ReplayConfig { capacity: 2, prioritized: true, ..Default::default() });
        b.push_episode(&[flat_t(0.0, 0.0), flat_t(0.0, 1.0)]).unwrap();
        // Evict id 0 by pushing a third item.
        b.push_episode(&[flat_t(0.0, 2.0)]).unwrap();
        let before = b.get(0).unwrap().priority;
        b.update_priorities(&[0], &[9.0]).unwrap();
        assert_eq!(b.stale_skips(), 1);
        assert_eq!(b.get(0).unwrap().priority, before, "stale update must not touch the slot");
    }

    #[test]
    fn alpha_change_rebuilds_weights() {
        let mut b = buffer(ReplayConfig { prioritized: true, ..Default::default() });
        let mut t0 = flat_t(0.0, 0.0);
        t0.priority = 4.0;
        let mut t1 = flat_t(0.0, 1.0);
        t1.priority = 1.0;
        b.push_episode(&[t0, t1]).unwrap();
        let mut rng = SplitMix64::new(5);
        // alpha = 0.5: P(0) = 2/3.
        let mut counts = [0u64; 2];
        for _ in 0..30_000 {
            let (batch, _, _) = b.sample_prioritized(1, 0.5, 0.0, &mut rng).unwrap();
            counts[batch[0].s[0] as usize] += 1;
        }
        let f0 = counts[0] as f64 / 30_000.0;
        assert!((f0 - 2.0 / 3.0).abs() < 0.02, "alpha=0.5 frequency {f0}");
    }

    #[test]
    fn mixed_layout_episode_rejected() {
        let mut b = buffer(ReplayConfig::default());
        let mut other = flat_t(0.0, 0.0);
        other.layout = ObsLayout::Flat(3);
        other.s = vec![0.0; 3];
        other.s_next = vec![0.0; 3];
        assert!(b.push_episode(&[flat_t(0.0, 0.0), other]).is_err());
    }

    #[test]
    fn layout_locked_after_first_push() {
        let mut b = buffer(ReplayConfig::default());
        b.push_episode(&[flat_t(0.0, 0.0)]).unwrap();
        let mut other = Transition::new(
            vec![0.0; 3],
            vec![0.0; 4],
            0.0,
            vec![0.0; 3],
            false,
            ObsLayout::Flat(3),
        );
        other.priority = 1.0;
        assert!(b.push_episode(&[other]).is_err());
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut b = buffer(ReplayConfig::default());
        let mut bad = flat_t(0.0, 0.0);
        bad.s_next = vec![0.0; 5];
        assert!(b.push_episode(&[bad]).is_err());
    }

    #[test]
    fn sum_tree_root_tracks_sum_under_random_ops() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..20 {
            let cap = 1 + rng.below(33) as usize;
            let mut tree = SumTree::new(cap);
            let mut naive = vec![0.0f64; cap];
            for _ in 0..400 {
                let i = rng.below(cap as u64) as usize;
                let w = rng.uniform(0.0, 10.0);
                tree.set(i, w);
                naive[i] = w;
                let sum: f64 = naive.iter().sum();
                let root = tree.total();
                assert!(
                    (root - sum).abs() <= 1e-6 * sum.max(1.0),
                    "root {root} vs sum {sum}"
                );
            }
            // Stratified find lands on positive-weight leaves only.
            let total = tree.total();
            if total > 0.0 {
                for k in 0..50 {
                    let u = total * (k as f64 + 0.5) / 50.0;
                    let leaf = tree.find(u);
                    assert!(naive[leaf] > 0.0, "find hit empty leaf {leaf}");
                }
            }
        }
    }
}
