//! `key = value` configuration covering the database, generator, ingest and
//! workload settings. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use petg_core::DbConfig;

use crate::generate::SynthSpec;
use crate::ingest::IngestOptions;
use crate::workload::{OpKind, WorkloadSpec};

#[derive(Clone, Debug, Default)]
pub struct Config {
    pub db: DbConfig,
    pub synth: SynthSpec,
    pub ingest: IngestOptions,
    pub workload: WorkloadSpec,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("`{key}`: cannot parse `{v}`: {e}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            c.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        c.workload.validate()?;
        Ok(c)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let tim = &mut self.db.tim;
        let s = &mut self.synth;
        let w = &mut self.workload;
        match key {
            "tim.global_memtable_bytes" => tim.global_memtable_bytes = parse(key, v)?,
            "tim.local_memtable_bytes" => tim.local_memtable_bytes = parse(key, v)?,
            "tim.block_bytes" => tim.block_bytes = parse(key, v)?,
            "tim.compression_on" => tim.compression_on = parse(key, v)?,
            "tim.background_merge" => tim.background_merge = parse(key, v)?,
            "db.checkpoint_interval" => self.db.checkpoint_interval = parse(key, v)?,
            "db.coarse_lock_mode" => self.db.coarse_lock_mode = parse(key, v)?,
            "db.fsync_on_commit" => self.db.fsync_on_commit = parse(key, v)?,
            "synth.nodes" => s.nodes = parse(key, v)?,
            "synth.edges" => s.edges = parse(key, v)?,
            "synth.node_properties" => s.node_properties = parse(key, v)?,
            "synth.edge_properties" => s.edge_properties = parse(key, v)?,
            "synth.events" => s.events = parse(key, v)?,
            "synth.non_redundancy" => s.non_redundancy = parse(key, v)?,
            "synth.mean_gap" => s.mean_gap = parse(key, v)?,
            "synth.chronon_secs" => s.chronon_secs = parse(key, v)?,
            "synth.seed" => s.seed = parse(key, v)?,
            "ingest.batch" => self.ingest.batch = parse(key, v)?,
            "ingest.chronon_secs" => self.ingest.chronon_secs = parse(key, v)?,
            "workload.requests" => w.requests = parse(key, v)?,
            "workload.concurrency" => w.concurrency = parse(key, v)?,
            "workload.seed" => w.seed = parse(key, v)?,
            "workload.retry_ms" => w.retry_ms = parse(key, v)?,
            "workload.hot_fraction" => w.hot_fraction = parse(key, v)?,
            "workload.hot_share" => w.hot_share = parse(key, v)?,
            "workload.append_items" => w.append_items = parse(key, v)?,
            "workload.travel_property" => w.travel_property = v.to_owned(),
            _ => match key.strip_prefix("workload.mix.").and_then(OpKind::from_name) {
                Some(op) => w.mix[op as usize] = parse(key, v)?,
                None => bail!("unknown key `{key}`"),
            },
        }
        Ok(())
    }

    /// Every setting, in a form `parse` accepts.
    pub fn to_text(&self) -> String {
        let tim = &self.db.tim;
        let s = &self.synth;
        let w = &self.workload;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(out, "{k} = {v}").unwrap();
        kv("tim.global_memtable_bytes", &tim.global_memtable_bytes);
        kv("tim.local_memtable_bytes", &tim.local_memtable_bytes);
        kv("tim.block_bytes", &tim.block_bytes);
        kv("tim.compression_on", &tim.compression_on);
        kv("tim.background_merge", &tim.background_merge);
        kv("db.checkpoint_interval", &self.db.checkpoint_interval);
        kv("db.coarse_lock_mode", &self.db.coarse_lock_mode);
        kv("db.fsync_on_commit", &self.db.fsync_on_commit);
        kv("synth.nodes", &s.nodes);
        kv("synth.edges", &s.edges);
        kv("synth.node_properties", &s.node_properties);
        kv("synth.edge_properties", &s.edge_properties);
        kv("synth.events", &s.events);
        kv("synth.non_redundancy", &s.non_redundancy);
        kv("synth.mean_gap", &s.mean_gap);
        kv("synth.chronon_secs", &s.chronon_secs);
        kv("synth.seed", &s.seed);
        kv("ingest.batch", &self.ingest.batch);
        kv("ingest.chronon_secs", &self.ingest.chronon_secs);
        kv("workload.requests", &w.requests);
        kv("workload.concurrency", &w.concurrency);
        kv("workload.seed", &w.seed);
        kv("workload.retry_ms", &w.retry_ms);
        kv("workload.hot_fraction", &w.hot_fraction);
        kv("workload.hot_share", &w.hot_share);
        kv("workload.append_items", &w.append_items);
        kv("workload.travel_property", &w.travel_property);
        for op in OpKind::ALL {
            kv(&format!("workload.mix.{}", op.name()), &w.mix[op as usize]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_parses_back() {
        let mut c = Config::default();
        c.db.coarse_lock_mode = true;
        c.synth.non_redundancy = 0.25;
        c.workload.mix = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        let again = Config::parse(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_mixes() {
        assert!(Config::parse("nope = 1").is_err());
        assert!(Config::parse("db.checkpoint_interval = x").is_err());
        assert!(Config::parse("workload.mix.append = 0.9").is_err());
        let c = Config::parse("# comment\n\nworkload.concurrency=4\n").unwrap();
        assert_eq!(c.workload.concurrency, 4);
    }
}
