//! Per-channel observation normalization.
//!
//! Two modes: frozen stats loaded from a text file (one line per channel:
//! `name mean std`), and an online running filter. The running filter
//! normalizes each sample with the statistics accumulated BEFORE that
//! sample, so a spike after a long constant stream comes out huge — tests
//! rely on that behavior, and it is the reason frozen stats exist.

use crate::error::CoreError;
use crate::Result;

/// Channels with std below this are treated as constant: mean-subtracted,
/// never divided.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Mean 0, std 1 for every channel: normalization is the identity.
    pub fn identity(names: Vec<String>) -> ChannelStats {
        let n = names.len();
        ChannelStats { names, mean: vec![0.0; n], std: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn normalize(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.len() {
            return Err(CoreError::config(format!(
                "observation has {} channels, stats have {}",
                x.len(),
                self.len()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let centered = v as f64 - self.mean[i];
                let y = if self.std[i] < STD_EPS { centered } else { centered / self.std[i] };
                y as f32
            })
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            s.push_str(&format!("{} {} {}\n", self.names[i], self.mean[i], self.std[i]));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<ChannelStats> {
        let mut names = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(CoreError::config(format!(
                    "stats line {}: expected `name mean std`, got {} fields",
                    lineno + 1,
                    parts.len()
                )));
            }
            let m: f64 = parts[1].parse().map_err(|_| {
                CoreError::config(format!("stats line {}: bad mean `{}`", lineno + 1, parts[1]))
            })?;
            let s: f64 = parts[2].parse().map_err(|_| {
                CoreError::config(format!("stats line {}: bad std `{}`", lineno + 1, parts[2]))
            })?;
            if !m.is_finite() || !s.is_finite() || s < 0.0 {
                return Err(CoreError::config(format!(
                    "stats line {}: mean/std must be finite with std >= 0",
                    lineno + 1
                )));
            }
            names.push(parts[0].to_string());
            mean.push(m);
            std.push(s);
        }
        if names.is_empty() {
            return Err(CoreError::config("stats file has no channel lines"));
        }
        Ok(ChannelStats { names, mean, std })
    }

    /// Checks the stats were written for this channel layout.
    pub fn check_names(&self, expected: &[String]) -> Result<()> {
        if self.names.len() != expected.len() {
            return Err(CoreError::config(format!(
                "stats cover {} channels, layout has {}",
                self.names.len(),
                expected.len()
            )));
        }
        for (i, (a, b)) in self.names.iter().zip(expected.iter()).enumerate() {
            if a != b {
                return Err(CoreError::config(format!(
                    "stats channel {i} is `{a}`, layout expects `{b}`"
                )));
            }
        }
        Ok(())
    }
}

/// Welford online mean/variance, population std.
#[derive(Debug, Clone, Default)]
pub struct RunningNorm {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> RunningNorm {
        RunningNorm { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn std(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2[i] / self.count as f64).sqrt()
        }
    }

    /// Normalizes with the statistics seen so far, THEN folds the sample in.
    /// Before any data every channel counts as constant at mean 0, so the
    /// first sample passes through unchanged.
    pub fn normalize_update(&mut self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.dim() {
            return Err(CoreError::config(format!(
                "observation has {} channels, filter has {}",
                x.len(),
                self.dim()
            )));
        }
        let out = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let centered = v as f64 - self.mean[i];
                let s = self.std(i);
                (if s < STD_EPS { centered } else { centered / s }) as f32
            })
            .collect();
        self.update(x);
        Ok(out)
    }

    /// Accumulates a sample without producing output.
    pub fn update(&mut self, x: &[f32]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.mean.len() {
            let v = x[i] as f64;
            let delta = v - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (v - self.mean[i]);
        }
    }

    pub fn stats(&self, names: Vec<String>) -> Result<ChannelStats> {
        if names.len() != self.dim() {
            return Err(CoreError::config(format!(
                "{} names for {} channels",
                names.len(),
                self.dim()
            )));
        }
        let std = (0..self.dim()).map(|i| self.std(i)).collect();
        Ok(ChannelStats { names, mean: self.mean.clone(), std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("ch{i}")).collect()
    }

    #[test]
    fn identity_stats_pass_through_bitwise() {
        let stats = ChannelStats::identity(names(4));
        let x = vec![1.5f32, -2.25, 0.0, 1e-7];
        let y = stats.normalize(&x).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn standard_normalization_oracle() {
        let stats = ChannelStats {
            names: names(2),
            mean: vec![10.0, -1.0],
            std: vec![2.0, 0.5],
        };
        let y = stats.normalize(&[14.0, 0.0]).unwrap();
        assert_relative_eq!(y[0] as f64, 2.0, max_relative = 1e-6);
        assert_relative_eq!(y[1] as f64, 2.0, max_relative = 1e-6);
    }

    #[test]
    fn constant_channel_is_centered_not_divided() {
        let stats = ChannelStats { names: names(1), mean: vec![5.0], std: vec![0.0] };
        let y = stats.normalize(&[5.0]).unwrap();
        assert_eq!(y[0], 0.0);
        let y = stats.normalize(&[7.5]).unwrap();
        assert_relative_eq!(y[0] as f64, 2.5, max_relative = 1e-6);
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let stats = ChannelStats::identity(names(3));
        assert!(stats.normalize(&[0.0; 2]).is_err());
        let mut f = RunningNorm::new(3);
        assert!(f.normalize_update(&[0.0; 4]).is_err());
    }

    #[test]
    fn running_filter_spike_saturates() {
        // A long constant stream drives std to 0; the first different value
        // is normalized by the stale stats and comes out enormous. This is
        // the failure mode that motivates frozen manual stats.
        let mut f = RunningNorm::new(1);
        for _ in 0..50 {
            f.normalize_update(&[5.0]).unwrap();
        }
        let y = f.normalize_update(&[50.0]).unwrap();
        assert!(y[0].abs() > 10.0, "spike normalized to {}", y[0]);
        assert_relative_eq!(y[0] as f64, 45.0, max_relative = 1e-5);
    }

    #[test]
    fn first_sample_passes_through() {
        let mut f = RunningNorm::new(2);
        let y = f.normalize_update(&[3.0, -4.0]).unwrap();
        assert_eq!(y, vec![3.0, -4.0]);
    }

    #[test]
    fn running_stats_match_batch_computation() {
        let mut f = RunningNorm::new(1);
        let data = [1.0f32, 4.0, 2.0, 8.0, 5.0, 7.0, 3.5, 0.5];
        for &v in &data {
            f.update(&[v]);
        }
        let n = data.len() as f64;
        let mean: f64 = data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let stats = f.stats(names(1)).unwrap();
        assert_relative_eq!(stats.mean[0], mean, max_relative = 1e-12);
        assert_relative_eq!(stats.std[0], var.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let stats = ChannelStats {
            names: vec!["px".into(), "height".into()],
            mean: vec![0.125, -3.5],
            std: vec![1.75, 0.0],
        };
        let text = stats.to_text();
        let back = ChannelStats::parse_text(&text).unwrap();
        assert_eq!(stats, back);
    }

    #[test]
    fn parse_accepts_comments_and_blank_lines() {
        let text = "# per-channel stats\n\npx 0.5 2.0\nheight 1.0 0.25\n";
        let stats = ChannelStats::parse_text(text).unwrap();
        assert_eq!(stats.names, vec!["px", "height"]);
        assert_eq!(stats.mean, vec![0.5, 1.0]);
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        assert!(ChannelStats::parse_text("px 0.5\n").is_err());
        assert!(ChannelStats::parse_text("px 0.5 abc\n").is_err());
        assert!(ChannelStats::parse_text("px 0.5 -1.0\n").is_err());
        assert!(ChannelStats::parse_text("px NaN 1.0\n").is_err());
        assert!(ChannelStats::parse_text("px 0.5 1.0 extra\n").is_err());
        assert!(ChannelStats::parse_text("").is_err());
    }

    #[test]
    fn name_check_catches_layout_drift() {
        let stats = ChannelStats::identity(vec!["a".into(), "b".into()]);
        assert!(stats.check_names(&["a".into(), "b".into()]).is_ok());
        assert!(stats.check_names(&["a".into(), "c".into()]).is_err());
        assert!(stats.check_names(&["a".into()]).is_err());
    }
}
