//! Binary checkpoints: `HPGN`, format version, step, the run config as TOML,
//! then named little-endian `f64` tensors. Adam moments are stored as extra
//! records under `adam/m/` and `adam/v/`.

use std::collections::BTreeMap;
use std::path::Path;

use hpgnn::model::{init_model_params, HpgnnConfig};
use hpgnn::nncore::{AdamConfig, AdamState, ParamStore, Tensor};

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"HPGN";
pub const FORMAT_VERSION: u32 = 1;
const FIRST_MOMENT: &str = "adam/m/";
const SECOND_MOMENT: &str = "adam/v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Resolved run config that produced the parameters.
    pub config: String,
    pub params: BTreeMap<String, Tensor>,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn capture(config: &str, store: &ParamStore, adam: &AdamState) -> Self {
        Self {
            step: adam.step,
            config: config.to_string(),
            params: store.iter().map(|(n, p)| (n.clone(), p.value.clone())).collect(),
            first_moment: adam.first.clone(),
            second_moment: adam.second.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        let records: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t))
            .chain(self.first_moment.iter().map(|(n, t)| (format!("{FIRST_MOMENT}{n}"), t)))
            .chain(self.second_moment.iter().map(|(n, t)| (format!("{SECOND_MOMENT}{n}"), t)))
            .collect();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CliError::BadCheckpoint("missing HPGN magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CliError::BadCheckpoint(format!("unsupported format version {version}")));
        }
        let step = r.u64()?;
        let len = r.u32()? as usize;
        let config = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CliError::BadCheckpoint("config is not UTF-8".into()))?;
        let count = r.u32()?;
        let mut ck = Checkpoint {
            step,
            config,
            params: BTreeMap::new(),
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        };
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CliError::BadCheckpoint("record name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| CliError::BadCheckpoint(format!("{name}: implausible shape {shape:?}")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CliError::BadCheckpoint(e.to_string()))?;
            let (map, key) = if let Some(k) = name.strip_prefix(FIRST_MOMENT) {
                (&mut ck.first_moment, k.to_string())
            } else if let Some(k) = name.strip_prefix(SECOND_MOMENT) {
                (&mut ck.second_moment, k.to_string())
            } else {
                (&mut ck.params, name.clone())
            };
            if map.insert(key, t).is_some() {
                return Err(CliError::BadCheckpoint(format!("duplicate record {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(CliError::BadCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Parameters and optimizer state for `config`; every parameter the
    /// config needs must be present with the same shape, and nothing else.
    pub fn restore(&self, config: &HpgnnConfig, adam: AdamConfig) -> Result<(ParamStore, AdamState), CliError> {
        let mut store = init_model_params(config, 0)?;
        let expected: Vec<String> = store.names().cloned().collect();
        if let Some(extra) = self.params.keys().find(|k| !store.contains(k)) {
            return Err(CliError::IncompatibleCheckpoint(format!("unexpected parameter {extra}")));
        }
        for name in &expected {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| CliError::IncompatibleCheckpoint(format!("missing parameter {name}")))?;
            let p = store.get_mut(name)?;
            if p.value.shape() != t.shape() {
                return Err(CliError::IncompatibleCheckpoint(format!(
                    "{name}: checkpoint shape {:?}, config needs {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        let moments_ok = |m: &BTreeMap<String, Tensor>| {
            m.iter().all(|(k, t)| self.params.get(k).is_some_and(|p| p.shape() == t.shape()))
        };
        if !moments_ok(&self.first_moment) || !moments_ok(&self.second_moment) {
            return Err(CliError::IncompatibleCheckpoint("optimizer state does not match parameters".into()));
        }
        let mut state = AdamState::new(adam);
        state.step = self.step;
        state.first = self.first_moment.clone();
        state.second = self.second_moment.clone();
        Ok((store, state))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::BadCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hpgnn::model::Schedule;

    #[test]
    fn header_layout() {
        let ck = Checkpoint {
            step: 3,
            config: "seed = 1\n".into(),
            params: BTreeMap::from([("a/w1".to_string(), Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap())]),
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        };
        let b = ck.to_bytes();
        assert_eq!(&b[..4], b"HPGN");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..16], &3u64.to_le_bytes());
        assert_eq!(&b[16..20], &9u32.to_le_bytes());
        assert_eq!(b.len(), 4 + 4 + 8 + 4 + 9 + 4 + (4 + 4) + 4 + 2 * 8 + 2 * 8);
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), ck);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(Checkpoint::from_bytes(b"HPGX").is_err());
        let ck = Checkpoint {
            step: 0,
            config: String::new(),
            params: BTreeMap::new(),
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        };
        let mut b = ck.to_bytes();
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
        assert!(Checkpoint::from_bytes(&b[..10]).is_err());
    }

    #[test]
    fn restore_checks_layout() {
        let config = HpgnnConfig::default();
        let store = init_model_params(&config, 5).unwrap();
        let ck = Checkpoint::capture("", &store, &AdamState::new(AdamConfig::default()));
        let (restored, _) = ck.restore(&config, AdamConfig::default()).unwrap();
        assert_eq!(restored, store);
        let other = HpgnnConfig::default().with_schedule(Schedule::two_level(1, 1, 1));
        assert!(matches!(
            ck.restore(&other, AdamConfig::default()),
            Err(CliError::IncompatibleCheckpoint(_))
        ));
    }
}
