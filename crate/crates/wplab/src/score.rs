//! Per-component score tables and their CSV/JSON wire formats.
//!
//! CSV columns are `kind,layer,index,score` in stable component order;
//! metadata (which utility, which eval set, the normalization, the producing
//! config hash) rides along as `#`-prefixed header comments and in the JSON
//! mirror.

use crate::error::{Error, Result};
use crate::model::{ComponentId, ComponentKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreMeta {
    /// Which score this is (`wp_exact`, `ap_exact`, `attr_wt`, ...).
    pub score: String,
    pub utility: String,
    pub eval_id: String,
    pub normalization: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub meta: ScoreMeta,
    /// Deterministic iteration order (component enumeration order).
    pub entries: Vec<(ComponentId, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonEntry {
    kind: String,
    layer: usize,
    index: usize,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonTable {
    meta: ScoreMeta,
    config_hash: Option<String>,
    entries: Vec<JsonEntry>,
}

impl ScoreTable {
    pub fn get(&self, c: ComponentId) -> Option<f64> {
        self.entries.iter().find(|(id, _)| *id == c).map(|(_, s)| *s)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, s)| s.is_finite())
    }

    /// Entries sorted by descending score (absolute or signed), ties broken
    /// by component order.
    pub fn ranked(&self, by_abs: bool) -> Vec<(ComponentId, f64)> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| {
            let sa = if by_abs { self.entries[a].1.abs() } else { self.entries[a].1 };
            let sb = if by_abs { self.entries[b].1.abs() } else { self.entries[b].1 };
            sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        idx.into_iter().map(|i| self.entries[i]).collect()
    }

    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# score={} utility={} eval={} normalization={}\n",
            self.meta.score, self.meta.utility, self.meta.eval_id, self.meta.normalization
        ));
        if let Some(h) = config_hash {
            out.push_str(&format!("# config_hash={h}\n"));
        }
        out.push_str("kind,layer,index,score\n");
        for (c, s) in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", c.kind.as_str(), c.layer, c.index, s));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<(ScoreTable, Option<String>)> {
        let mut meta = ScoreMeta::default();
        let mut config_hash = None;
        let mut entries = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for field in comment.split_whitespace() {
                    if let Some((k, v)) = field.split_once('=') {
                        match k {
                            "score" => meta.score = v.to_string(),
                            "utility" => meta.utility = v.to_string(),
                            "eval" => meta.eval_id = v.to_string(),
                            "normalization" => meta.normalization = v.to_string(),
                            "config_hash" => config_hash = Some(v.to_string()),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "kind,layer,index,score" {
                    return Err(Error::Config(format!("unexpected score CSV header: {line}")));
                }
                saw_header = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!("bad score CSV row: {line}")));
            }
            let kind = match parts[0] {
                "head" => ComponentKind::Head,
                "neuron" => ComponentKind::Neuron,
                other => return Err(Error::Config(format!("unknown component kind: {other}"))),
            };
            let layer = parts[1].parse().map_err(|_| Error::Config(format!("bad layer: {}", parts[1])))?;
            let index = parts[2].parse().map_err(|_| Error::Config(format!("bad index: {}", parts[2])))?;
            let score = parts[3].parse().map_err(|_| Error::Config(format!("bad score: {}", parts[3])))?;
            entries.push((ComponentId { kind, layer, index }, score));
        }
        if !saw_header {
            return Err(Error::Config("score CSV missing header".into()));
        }
        Ok((ScoreTable { meta, entries }, config_hash))
    }

    pub fn to_json(&self, config_hash: Option<&str>) -> Result<String> {
        let t = JsonTable {
            meta: self.meta.clone(),
            config_hash: config_hash.map(str::to_string),
            entries: self
                .entries
                .iter()
                .map(|(c, s)| JsonEntry {
                    kind: c.kind.as_str().to_string(),
                    layer: c.layer,
                    index: c.index,
                    score: *s,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&t)?)
    }

    pub fn from_json(text: &str) -> Result<(ScoreTable, Option<String>)> {
        let t: JsonTable = serde_json::from_str(text)?;
        let entries = t
            .entries
            .into_iter()
            .map(|e| {
                let kind = match e.kind.as_str() {
                    "head" => Ok(ComponentKind::Head),
                    "neuron" => Ok(ComponentKind::Neuron),
                    other => Err(Error::Config(format!("unknown component kind: {other}"))),
                };
                Ok((ComponentId { kind: kind?, layer: e.layer, index: e.index }, e.score))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((ScoreTable { meta: t.meta, entries }, t.config_hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ScoreTable {
        ScoreTable {
            meta: ScoreMeta {
                score: "wp_exact".into(),
                utility: "anchor_cosine@layer2".into(),
                eval_id: "n=8,excluded=0".into(),
                normalization: "gap_floor=0.05".into(),
            },
            entries: vec![
                (ComponentId::head(1, 0), 0.25),
                (ComponentId::head(1, 1), -0.5),
                (ComponentId::neuron(2, 3), 1.0),
            ],
        }
    }

    #[test]
    fn csv_round_trip_preserves_table_and_hash() {
        let t = table();
        let csv = t.to_csv(Some("abc123"));
        let (back, hash) = ScoreTable::from_csv(&csv).unwrap();
        assert_eq!(back, t);
        assert_eq!(hash.as_deref(), Some("abc123"));
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ScoreTable { meta: ScoreMeta::default(), entries: vec![] };
        let csv = t.to_csv(None);
        let data_rows: Vec<&str> =
            csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("kind,")).collect();
        assert!(data_rows.is_empty());
        assert!(csv.lines().any(|l| l == "kind,layer,index,score"));
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        let json = t.to_json(Some("deadbeef")).unwrap();
        let (back, hash) = ScoreTable::from_json(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(hash.as_deref(), Some("deadbeef"));
    }

    #[test]
    fn ranking_is_stable_with_ties() {
        let t = ScoreTable {
            meta: ScoreMeta::default(),
            entries: vec![
                (ComponentId::head(1, 0), 0.5),
                (ComponentId::head(1, 1), 0.5),
                (ComponentId::neuron(1, 0), -0.9),
            ],
        };
        let signed = t.ranked(false);
        assert_eq!(signed[0].0, ComponentId::head(1, 0));
        assert_eq!(signed[1].0, ComponentId::head(1, 1));
        let abs = t.ranked(true);
        assert_eq!(abs[0].0, ComponentId::neuron(1, 0));
    }
}
