//! Binary model snapshots.
//!
//! Layout:
//!
//! ```text
//! SCOURLSTM1\n
//! key=value\n          model configuration (see ModelConfig::to_kv)
//! norm.<channel>.mean=<f64>\n
//! norm.<channel>.std=<f64>\n
//! n_params=<count>\n
//! end\n
//! <n_params little-endian IEEE-754 f64 values>
//! ```
//!
//! Parameters follow the order of [`ParamLayout`](super::ParamLayout).
//! Floats in the text block use Rust's shortest round-trip formatting, so
//! save → load is exact.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Architecture, Model, ModelConfig};
use crate::ingest::Channel;
use crate::preprocess::NormStats;
use crate::{Error, Result};

pub const MAGIC: &str = "SCOURLSTM1";

/// A model plus the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub model: Model,
}

impl Snapshot {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in self.config.to_kv() {
            writeln!(w, "{k}={v}")?;
        }
        for (ch, mean, std) in self.norm.iter() {
            writeln!(w, "norm.{ch}.mean={mean:?}")?;
            writeln!(w, "norm.{ch}.std={std:?}")?;
        }
        writeln!(w, "n_params={}", self.model.n_params())?;
        writeln!(w, "end")?;
        let mut bytes = Vec::with_capacity(8 * self.model.n_params());
        for p in self.model.params() {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Snapshot> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Snapshot(format!("bad magic `{}`", line.trim_end())));
        }
        let mut kv = BTreeMap::new();
        let mut norm: BTreeMap<Channel, (Option<f64>, Option<f64>)> = BTreeMap::new();
        let mut n_params = None;
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Snapshot("truncated header".into()));
            }
            let text = line.trim_end();
            if text == "end" {
                break;
            }
            let (k, v) = text.split_once('=').ok_or_else(|| Error::Snapshot(format!("bad header line `{text}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Snapshot(format!("bad number `{v}` for `{k}`")));
            if let Some(rest) = k.strip_prefix("norm.") {
                let (ch, field) =
                    rest.rsplit_once('.').ok_or_else(|| Error::Snapshot(format!("bad norm key `{k}`")))?;
                let ch: Channel = ch.parse()?;
                let entry = norm.entry(ch).or_default();
                match field {
                    "mean" => entry.0 = Some(num(v)?),
                    "std" => entry.1 = Some(num(v)?),
                    _ => return Err(Error::Snapshot(format!("bad norm key `{k}`"))),
                }
            } else if k == "n_params" {
                n_params = Some(v.parse::<usize>().map_err(|_| Error::Snapshot(format!("bad n_params `{v}`")))?);
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let config = ModelConfig::from_kv(&kv)?;
        let norm = NormStats::from_values(
            norm.into_iter()
                .map(|(ch, (m, s))| match (m, s) {
                    (Some(m), Some(s)) => Ok((ch, m, s)),
                    _ => Err(Error::Snapshot(format!("incomplete normalization for {ch}"))),
                })
                .collect::<Result<Vec<_>>>()?,
        )?;
        for ch in config.combo.channels() {
            if !ch.is_calendar() {
                norm.get(*ch).map_err(|_| Error::Snapshot(format!("missing normalization for {ch}")))?;
            }
        }
        let n_params = n_params.ok_or_else(|| Error::Snapshot("missing n_params".into()))?;
        let arch = Architecture::from_config(&config);
        let expected = super::ParamLayout::for_arch(&arch).total;
        if n_params != expected {
            return Err(Error::Snapshot(format!("{n_params} parameters declared, architecture needs {expected}")));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * n_params {
            return Err(Error::Snapshot(format!("expected {} parameter bytes, found {}", 8 * n_params, bytes.len())));
        }
        let params: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Snapshot("non-finite parameter".into()));
        }
        let model = Model::from_params(arch, params)?;
        Ok(Snapshot { config, norm, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Snapshot> {
        let file = std::fs::File::open(path)?;
        Snapshot::read(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureCombo, WindowSpec};
    use crate::neural::Variant;

    fn sample() -> Snapshot {
        let config = ModelConfig {
            combo: FeatureCombo::Ssd,
            variant: Variant::TwoLayer,
            window: WindowSpec { input_width: 6, label_width: 3 },
            units: 4,
            seed: 3,
            ..Default::default()
        };
        let model = Model::init(Architecture::from_config(&config), 3);
        let norm = NormStats::from_values([
            (Channel::Sonar, 30.25, 0.5),
            (Channel::Stage, 33.0, 1.0 / 3.0),
            (Channel::Discharge, 120.0, 40.0),
        ])
        .unwrap();
        Snapshot { config, norm, model }
    }

    #[test]
    fn round_trip_is_exact() {
        let snap = sample();
        let mut buf = Vec::new();
        snap.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"SCOURLSTM1\n"));
        let back = Snapshot::read(&buf[..]).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn truncated_parameters_are_rejected() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Snapshot::read(&buf[..]), Err(Error::Snapshot(_))));
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf).replacen("units=4", "units=5", 1);
        let bytes: Vec<u8> = {
            let head_end = buf.windows(4).position(|w| w == b"end\n").unwrap() + 4;
            let mut b = text.as_bytes()[..text.find("end\n").unwrap() + 4].to_vec();
            b.extend_from_slice(&buf[head_end..]);
            b
        };
        assert!(matches!(Snapshot::read(&bytes[..]), Err(Error::Snapshot(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Snapshot::read(&b"NOTAMODEL\n"[..]).is_err());
    }
}
