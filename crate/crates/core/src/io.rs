//! On-disk formats: draws (CSV and binary), traces, curves, JSON documents.
//!
//! Every file carries a [`Meta`] block: CSV files as leading `# key=value`
//! comment lines, JSON files under a top-level `meta` key, and the binary
//! draws file inside its JSON header.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{EffectCurve, KmCurve, SurvivalCurve};
use crate::sampler::PosteriorDraws;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DRAWS_MAGIC: &[u8; 8] = b"PSDRAWS\0";
pub const DRAWS_FORMAT_VERSION: u32 = 1;

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Meta {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Hash of the configuration that produced this stage's inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_hash: Option<String>,
}

impl Meta {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            version: VERSION.to_string(),
            seed,
            config_hash: config_hash.into(),
            upstream_hash: None,
            layout_hash: None,
        }
    }

    pub fn header_lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("psurv_version={}", self.version),
            format!("seed={}", self.seed),
            format!("config_hash={}", self.config_hash),
        ];
        if let Some(u) = &self.upstream_hash {
            v.push(format!("upstream_hash={u}"));
        }
        if let Some(l) = &self.layout_hash {
            v.push(format!("layout_hash={l}"));
        }
        v
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("metadata key `{k}` missing")))
        };
        Ok(Self {
            version: get("psurv_version")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Format("metadata seed is not an integer".into()))?,
            config_hash: get("config_hash")?,
            upstream_hash: map.get("upstream_hash").cloned(),
            layout_hash: map.get("layout_hash").cloned(),
        })
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    Ok(())
}

/// Write a text file, creating missing parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn csv_with_meta(meta: &Meta, header: &str, body: &str) -> String {
    let mut s = String::new();
    for line in meta.header_lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str(header);
    s.push('\n');
    s.push_str(body);
    s
}

/// Leading `# key=value` lines of a CSV file.
pub fn read_csv_meta(path: &Path) -> Result<Meta> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.trim().split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Meta::from_map(&map)
}

/// One row per draw: `chain, iteration, lp__`, then parameters.
pub fn write_draws_csv(draws: &PosteriorDraws, path: &Path, meta: &Meta) -> Result<()> {
    let mut header = String::from("chain,iteration,lp__");
    for n in &draws.param_names {
        header.push(',');
        header.push_str(n);
    }
    let mut body = String::new();
    for (c, chain) in draws.draws.iter().enumerate() {
        for (i, d) in chain.iter().enumerate() {
            let _ = write!(body, "{c},{i},{}", draws.log_posterior[c][i]);
            for v in d {
                let _ = write!(body, ",{v}");
            }
            body.push('\n');
        }
    }
    write_text(path, &csv_with_meta(meta, &header, &body))
}

/// Long format `chain, iteration, parameter, value` for trace plots.
pub fn write_traces_csv(draws: &PosteriorDraws, path: &Path, meta: &Meta) -> Result<()> {
    let mut body = String::new();
    for (c, chain) in draws.draws.iter().enumerate() {
        for (i, d) in chain.iter().enumerate() {
            let _ = writeln!(body, "{c},{i},lp__,{}", draws.log_posterior[c][i]);
            for (name, v) in draws.param_names.iter().zip(d) {
                let _ = writeln!(body, "{c},{i},{name},{v}");
            }
        }
    }
    write_text(path, &csv_with_meta(meta, "chain,iteration,parameter,value", &body))
}

#[derive(Serialize, Deserialize)]
struct DrawsHeader {
    meta: Meta,
    param_names: Vec<String>,
    chains: usize,
    draws_per_chain: usize,
    accept_stats: Vec<f64>,
    divergence_count: Vec<usize>,
    warmup_divergences: Vec<usize>,
    step_sizes: Vec<f64>,
    inv_metric: Vec<Vec<f64>>,
    warmup_iterations: Vec<usize>,
}

/// Binary layout: magic, `u32` format version, `u32` header length, JSON
/// header, then per chain and iteration `lp__` followed by the parameters,
/// all little-endian `f64`.
pub fn write_draws_binary(draws: &PosteriorDraws, path: &Path, meta: &Meta) -> Result<()> {
    let n_per = draws.draws_per_chain();
    if draws.draws.iter().any(|c| c.len() != n_per) {
        return Err(Error::Shape("chains must have equal length".into()));
    }
    let header = DrawsHeader {
        meta: meta.clone(),
        param_names: draws.param_names.clone(),
        chains: draws.n_chains(),
        draws_per_chain: n_per,
        accept_stats: draws.accept_stats.clone(),
        divergence_count: draws.divergence_count.clone(),
        warmup_divergences: draws.warmup_divergences.clone(),
        step_sizes: draws.step_sizes.clone(),
        inv_metric: draws.inv_metric.clone(),
        warmup_iterations: draws.warmup_iterations.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * draws.total_draws() * (draws.dim() + 1));
    buf.extend_from_slice(DRAWS_MAGIC);
    buf.extend_from_slice(&DRAWS_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (c, chain) in draws.draws.iter().enumerate() {
        for (i, d) in chain.iter().enumerate() {
            buf.extend_from_slice(&draws.log_posterior[c][i].to_le_bytes());
            for v in d {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    create_parent(path)?;
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn read_draws_binary(path: &Path) -> Result<(PosteriorDraws, Meta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != DRAWS_MAGIC {
        return Err(bad("not a draws file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != DRAWS_FORMAT_VERSION {
        return Err(bad(&format!("unsupported draws format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body_start = 16 + hlen;
    if bytes.len() < body_start {
        return Err(bad("truncated header"));
    }
    let header: DrawsHeader = serde_json::from_slice(&bytes[16..body_start]).map_err(|e| bad(&e.to_string()))?;
    let width = header.param_names.len() + 1;
    let expected = header.chains * header.draws_per_chain * width * 8;
    if bytes.len() - body_start != expected {
        return Err(bad("payload length does not match the header"));
    }
    let mut vals = bytes[body_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut draws = Vec::with_capacity(header.chains);
    let mut lps = Vec::with_capacity(header.chains);
    for _ in 0..header.chains {
        let mut chain = Vec::with_capacity(header.draws_per_chain);
        let mut lp = Vec::with_capacity(header.draws_per_chain);
        for _ in 0..header.draws_per_chain {
            lp.push(vals.next().expect("length checked"));
            chain.push((1..width).map(|_| vals.next().expect("length checked")).collect());
        }
        draws.push(chain);
        lps.push(lp);
    }
    Ok((
        PosteriorDraws {
            param_names: header.param_names,
            draws,
            log_posterior: lps,
            accept_stats: header.accept_stats,
            divergence_count: header.divergence_count,
            warmup_divergences: header.warmup_divergences,
            step_sizes: header.step_sizes,
            inv_metric: header.inv_metric,
            warmup_iterations: header.warmup_iterations,
        },
        header.meta,
    ))
}

/// Metadata from the header of a binary draws file.
pub fn read_draws_meta(path: &Path) -> Result<Meta> {
    read_draws_binary(path).map(|(_, m)| m)
}

/// Pretty JSON with `meta` inserted at the top level.
pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let m = serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?;
    match &mut v {
        serde_json::Value::Object(map) => {
            map.insert("meta".into(), m);
        }
        other => {
            let inner = std::mem::take(other);
            *other = serde_json::json!({ "meta": m, "value": inner });
        }
    }
    let text = serde_json::to_string_pretty(&v).map_err(|e| Error::Format(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json_meta(path: &Path) -> Result<Meta> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let m = v
        .get("meta")
        .ok_or_else(|| Error::Format(format!("{}: no meta block", path.display())))?;
    serde_json::from_value(m.clone()).map_err(|e| Error::Format(e.to_string()))
}

/// `stratum, arm, time, mean, lo, hi` for each curve.
pub fn write_survival_csv(curves: &[&SurvivalCurve], path: &Path, meta: &Meta) -> Result<()> {
    let mut body = String::new();
    for c in curves {
        for (j, t) in c.times.iter().enumerate() {
            let _ = writeln!(
                body,
                "{},{},{t},{},{},{}",
                c.stratum.name(),
                c.arm,
                c.summary.mean[j],
                c.summary.lo[j],
                c.summary.hi[j]
            );
        }
    }
    write_text(path, &csv_with_meta(meta, "stratum,arm,time,mean,lo,hi", &body))
}

/// `estimand, stratum, time, mean, lo, hi`; the aggregate uses stratum `itt`.
pub fn write_effect_csv(effects: &[&EffectCurve], path: &Path, meta: &Meta) -> Result<()> {
    let mut body = String::new();
    for e in effects {
        let s = e.stratum.map_or("itt", |s| s.name());
        for (j, t) in e.times.iter().enumerate() {
            let _ = writeln!(
                body,
                "{},{s},{t},{},{},{}",
                e.kind.name(),
                e.summary.mean[j],
                e.summary.lo[j],
                e.summary.hi[j]
            );
        }
    }
    write_text(path, &csv_with_meta(meta, "estimand,stratum,time,mean,lo,hi", &body))
}

/// Wide per-draw values: `draw`, then one column per time.
pub fn write_per_draw_csv(times: &[f64], values: &[Vec<f64>], path: &Path, meta: &Meta) -> Result<()> {
    let mut header = String::from("draw");
    for t in times {
        let _ = write!(header, ",t={t}");
    }
    let mut body = String::new();
    for (i, row) in values.iter().enumerate() {
        let _ = write!(body, "{i}");
        for v in row {
            let _ = write!(body, ",{v}");
        }
        body.push('\n');
    }
    write_text(path, &csv_with_meta(meta, &header, &body))
}

/// `arm, time, survival, variance, at_risk, events`, starting each arm at `(0, 1)`.
pub fn write_km_csv(curves: &[&KmCurve], path: &Path, meta: &Meta) -> Result<()> {
    let mut body = String::new();
    for c in curves {
        let _ = writeln!(body, "{},0,1,0,,", c.arm);
        for j in 0..c.times.len() {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{}",
                c.arm, c.times[j], c.survival[j], c.variance[j], c.at_risk[j], c.events[j]
            );
        }
    }
    write_text(path, &csv_with_meta(meta, "arm,time,survival,variance,at_risk,events", &body))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_draws() -> PosteriorDraws {
        PosteriorDraws {
            param_names: vec!["a".into(), "b[x]".into()],
            draws: vec![
                vec![vec![0.1, -2.5], vec![1.0 / 3.0, 1e-300]],
                vec![vec![f64::MAX, -0.0], vec![7.0, 8.0]],
            ],
            log_posterior: vec![vec![-1.0, -2.0], vec![-3.0, -4.0]],
            accept_stats: vec![0.8, 0.9],
            divergence_count: vec![0, 2],
            warmup_divergences: vec![1, 0],
            step_sizes: vec![0.1, 0.2],
            inv_metric: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            warmup_iterations: vec![5, 5],
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let meta = Meta {
            layout_hash: Some("abc".into()),
            ..Meta::new(9, "h")
        };
        write_draws_binary(&toy_draws(), &p, &meta).unwrap();
        let (d, m) = read_draws_binary(&p).unwrap();
        assert_eq!(m, meta);
        assert_eq!(d, toy_draws());
        assert!(d.draws[1][0][1].is_sign_negative());
    }

    #[test]
    fn binary_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_draws_binary(&toy_draws(), &p, &Meta::new(1, "h")).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_draws_binary(&p), Err(Error::Format(_))));
        std::fs::write(&p, b"nonsense").unwrap();
        assert!(read_draws_binary(&p).is_err());
    }

    #[test]
    fn csv_meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let meta = Meta {
            upstream_hash: Some("up".into()),
            ..Meta::new(3, "cfg")
        };
        write_draws_csv(&toy_draws(), &p, &meta).unwrap();
        assert_eq!(read_csv_meta(&p).unwrap(), meta);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("chain,iteration,lp__,a,b[x]"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 5);
    }

    #[test]
    fn json_meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        let meta = Meta::new(4, "q");
        write_json(&p, &meta, &serde_json::json!({"rhat": [1.0]})).unwrap();
        assert_eq!(read_json_meta(&p).unwrap(), meta);
        write_json(&p, &meta, &vec![1, 2]).unwrap();
        assert_eq!(read_json_meta(&p).unwrap(), meta);
    }
}
