//! CSV artifacts. Every row is formatted in memory and written with a
//! single syscall plus flush, so a killed run still leaves a parseable file.

use crate::{CliError, Result};
use l2r_core::agents::PatternTable;
use std::fs::File;
use std::io::Write;
use std::path::Path;

pub const METRICS_HEADER: &str =
    "wall_seconds,episode,env_steps,return_raw,return_shaped,distance_m,fell,weights_version,noise_mode,stage";

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub wall_seconds: f64,
    pub episode: u64,
    pub env_steps: u64,
    pub return_raw: f64,
    pub return_shaped: f64,
    pub distance_m: f64,
    pub fell: bool,
    pub weights_version: u64,
    pub noise_mode: String,
    pub stage: String,
}

pub struct MetricsWriter {
    file: File,
    last_episode: Option<u64>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<MetricsWriter> {
        let mut file = File::create(path)?;
        file.write_all(METRICS_HEADER.as_bytes())?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(MetricsWriter { file, last_episode: None })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(last) = self.last_episode {
            if row.episode <= last {
                return Err(CliError::other(format!(
                    "episode column must increase: {} after {last}",
                    row.episode
                )));
            }
        }
        self.last_episode = Some(row.episode);
        let line = format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.wall_seconds,
            row.episode,
            row.env_steps,
            row.return_raw,
            row.return_shaped,
            row.distance_m.max(0.0),
            u8::from(row.fell),
            row.weights_version,
            row.noise_mode,
            row.stage,
        );
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub label: String,
    pub episodes: u32,
    pub mean_return: f64,
    pub max_return: f64,
    pub falls: u32,
}

impl EvalSummary {
    /// Collapses per-episode (return, fell) pairs; an empty slice is a
    /// legal summary of zero episodes.
    pub fn from_episodes(label: &str, results: &[(f64, bool)]) -> EvalSummary {
        let n = results.len() as u32;
        let mean = if results.is_empty() {
            0.0
        } else {
            results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64
        };
        let max = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        EvalSummary {
            label: label.to_string(),
            episodes: n,
            mean_return: mean,
            max_return: if results.is_empty() { 0.0 } else { max },
            falls: results.iter().filter(|r| r.1).count() as u32,
        }
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalSummary]) -> Result<()> {
    let mut text = String::from("label,episodes,mean_return,max_return,falls\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label, r.episodes, r.mean_return, r.max_return, r.falls
        ));
    }
    let mut file = File::create(path)?;
    file.write_all(text.as_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn print_eval_summary(rows: &[EvalSummary]) {
    println!("label,episodes,mean_return,max_return,falls");
    for r in rows {
        println!("{},{},{},{},{}", r.label, r.episodes, r.mean_return, r.max_return, r.falls);
    }
}

/// patterns.csv: one row per distinct binarized action, most frequent
/// first, with the running cumulative share.
pub fn write_patterns_csv(path: &Path, table: &PatternTable) -> Result<()> {
    let mut text = String::from("pattern,count,frequency_percent,cumulative_percent\n");
    let freqs = table.frequencies_percent();
    let mut cumulative = 0.0;
    for ((bits, count), freq) in table.patterns.iter().zip(freqs.iter()) {
        cumulative += freq;
        let pattern: String = bits.iter().map(|&b| char::from(b'0' + b)).collect();
        text.push_str(&format!("{pattern},{count},{freq},{cumulative}\n"));
    }
    let mut file = File::create(path)?;
    file.write_all(text.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Reads a patterns.csv back into a table. Percent columns are ignored;
/// counts are the source of truth.
pub fn read_patterns_csv(path: &Path) -> Result<PatternTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::schema(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("pattern,count,frequency_percent,cumulative_percent") => {}
        _ => {
            return Err(CliError::schema(format!(
                "{} is not a patterns.csv (bad header)",
                path.display()
            )))
        }
    }
    let mut patterns = Vec::new();
    let mut total = 0u64;
    let mut width = None;
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let (bits_str, count_str) = match (fields.next(), fields.next()) {
            (Some(b), Some(c)) => (b, c),
            _ => {
                return Err(CliError::schema(format!(
                    "{} row {}: expected 4 columns",
                    path.display(),
                    i + 2
                )))
            }
        };
        let mut bits = Vec::with_capacity(bits_str.len());
        for ch in bits_str.chars() {
            match ch {
                '0' => bits.push(0u8),
                '1' => bits.push(1u8),
                _ => {
                    return Err(CliError::schema(format!(
                        "{} row {}: pattern must be 0/1 digits, got {bits_str:?}",
                        path.display(),
                        i + 2
                    )))
                }
            }
        }
        if *width.get_or_insert(bits.len()) != bits.len() || bits.is_empty() {
            return Err(CliError::schema(format!(
                "{} row {}: inconsistent pattern width",
                path.display(),
                i + 2
            )));
        }
        let count: u64 = count_str.parse().map_err(|_| {
            CliError::schema(format!(
                "{} row {}: count {count_str:?} is not an integer",
                path.display(),
                i + 2
            ))
        })?;
        total += count;
        patterns.push((bits, count));
    }
    Ok(PatternTable { patterns, total_steps: total, saturation_bits: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_land_whole_and_episodes_must_increase() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let row = MetricsRow {
            wall_seconds: 0.25,
            episode: 1,
            env_steps: 50,
            return_raw: 1.5,
            return_shaped: 1.75,
            distance_m: -0.25,
            fell: true,
            weights_version: 3,
            noise_mode: "ou".into(),
            stage: "adam".into(),
        };
        w.append(&row).unwrap();
        let mut again = row.clone();
        assert!(w.append(&again).is_err());
        again.episode = 2;
        w.append(&again).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "0.25,1,50,1.5,1.75,0,1,3,ou,adam");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn eval_summary_handles_zero_episodes() {
        let s = EvalSummary::from_episodes("empty", &[]);
        assert_eq!(s.episodes, 0);
        assert_eq!(s.mean_return, 0.0);
        assert_eq!(s.max_return, 0.0);
        assert_eq!(s.falls, 0);
        let s = EvalSummary::from_episodes("two", &[(1.0, false), (3.0, true)]);
        assert_eq!(s.mean_return, 2.0);
        assert_eq!(s.max_return, 3.0);
        assert_eq!(s.falls, 1);
    }

    #[test]
    fn patterns_csv_has_prefix_sum_cumulative() {
        let table = PatternTable {
            patterns: vec![(vec![1, 0], 3), (vec![0, 0], 1)],
            total_steps: 4,
            saturation_bits: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patterns.csv");
        write_patterns_csv(&path, &table).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "pattern,count,frequency_percent,cumulative_percent");
        assert_eq!(lines[1], "10,3,75,75");
        assert_eq!(lines[2], "00,1,25,100");
    }

    #[test]
    fn patterns_csv_round_trips() {
        let table = PatternTable {
            patterns: vec![(vec![1, 0, 1, 1], 7), (vec![0, 0, 0, 0], 2), (vec![1, 1, 1, 1], 1)],
            total_steps: 10,
            saturation_bits: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patterns.csv");
        write_patterns_csv(&path, &table).unwrap();
        let back = read_patterns_csv(&path).unwrap();
        assert_eq!(back.patterns, table.patterns);
        assert_eq!(back.total_steps, 10);

        std::fs::write(&path, "pattern,count\n10,3\n").unwrap();
        assert!(matches!(read_patterns_csv(&path), Err(CliError::Schema(_))));
    }
}
