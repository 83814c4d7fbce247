//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "XAGN"  u32 version  u32 entry_count
//! per entry: u32 name_len  name (UTF-8)  u32 rank  rank × u32 dims  f64 values
//! ```
//!
//! The network configuration travels as rank-1 `config/<key>` entries so a
//! checkpoint is self-describing. f32 parameters widen to f64 losslessly,
//! so a round trip is bit-exact for either scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"XAGN";
const VERSION: u32 = 1;
const CONFIG_PREFIX: &str = "config/";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl CheckpointEntry {
    fn scalar(name: &str, v: f64) -> Self {
        Self { name: format!("{CONFIG_PREFIX}{name}"), shape: vec![1], values: vec![v] }
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_checkpoint(w: &mut impl Write, entries: &[CheckpointEntry]) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_u32(w, entries.len())?;
    for e in entries {
        let n: usize = e.shape.iter().product();
        if n != e.values.len() {
            return Err(Error::Dimension(format!("entry {:?}: shape {:?} holds {} values", e.name, e.shape, e.values.len())));
        }
        put_u32(w, e.name.len())?;
        w.write_all(e.name.as_bytes())?;
        put_u32(w, e.shape.len())?;
        for &d in &e.shape {
            put_u32(w, d)?;
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<CheckpointEntry>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = get_u32(r)?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = get_u32(r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let rank = get_u32(r)?;
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(truncated)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

fn config_entries(c: &NetworkConfig) -> Vec<CheckpointEntry> {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    vec![
        CheckpointEntry::scalar("input_height", c.input_size.0 as f64),
        CheckpointEntry::scalar("input_width", c.input_size.1 as f64),
        CheckpointEntry::scalar("in_slices", c.in_slices as f64),
        CheckpointEntry::scalar("base_filters", c.base_filters as f64),
        CheckpointEntry::scalar("depth", c.depth as f64),
        CheckpointEntry::scalar("use_input_csa", b(c.use_input_csa)),
        CheckpointEntry::scalar("use_skip_csa", b(c.use_skip_csa)),
        CheckpointEntry::scalar("use_skip_ag", b(c.use_skip_ag)),
        CheckpointEntry::scalar("convs_per_stage", c.convs_per_stage as f64),
        CheckpointEntry::scalar("bn_before_relu", b(c.bn_before_relu)),
        // a u64 seed does not fit an f64 mantissa, so split it
        CheckpointEntry::scalar("seed_hi", (c.seed >> 32) as f64),
        CheckpointEntry::scalar("seed_lo", (c.seed & 0xffff_ffff) as f64),
    ]
}

fn parse_config(entries: &[CheckpointEntry]) -> Result<NetworkConfig> {
    let get = |key: &str| -> Result<f64> {
        let name = format!("{CONFIG_PREFIX}{key}");
        entries
            .iter()
            .find(|e| e.name == name)
            .and_then(|e| e.values.first().copied())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
    };
    let int = |key: &str| -> Result<usize> {
        let v = get(key)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Format(format!("{CONFIG_PREFIX}{key} = {v} is not a non-negative integer")));
        }
        Ok(v as usize)
    };
    let flag = |key: &str| -> Result<bool> { Ok(get(key)? != 0.0) };
    Ok(NetworkConfig {
        input_size: (int("input_height")?, int("input_width")?),
        in_slices: int("in_slices")?,
        base_filters: int("base_filters")?,
        depth: int("depth")?,
        use_input_csa: flag("use_input_csa")?,
        use_skip_csa: flag("use_skip_csa")?,
        use_skip_ag: flag("use_skip_ag")?,
        convs_per_stage: int("convs_per_stage")?,
        bn_before_relu: flag("bn_before_relu")?,
        seed: ((int("seed_hi")? as u64) << 32) | int("seed_lo")? as u64,
    })
}

impl<R: Real> Network<R> {
    /// Configuration entries followed by every stored tensor, including
    /// batch-norm running statistics.
    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        let mut out = config_entries(self.config());
        out.extend(self.params().iter().map(|p| CheckpointEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            values: p.value.iter().map(|v| v.as_f64()).collect(),
        }));
        out
    }

    /// Rebuilds a network from checkpoint entries. Every parameter of the
    /// rebuilt architecture must be present with a matching shape.
    pub fn from_entries(entries: &[CheckpointEntry]) -> Result<Self> {
        let config = parse_config(entries)?;
        let mut net = Self::build(&config)?;
        let mut seen = 0;
        for e in entries.iter().filter(|e| !e.name.starts_with(CONFIG_PREFIX)) {
            let p = net
                .params_mut()
                .by_name_mut(&e.name)
                .ok_or_else(|| Error::Format(format!("unexpected entry {:?}", e.name)))?;
            if p.shape != e.shape {
                return Err(Error::Format(format!("entry {:?}: shape {:?}, expected {:?}", e.name, e.shape, p.shape)));
            }
            p.value = e.values.iter().map(|&v| R::lit(v)).collect();
            seen += 1;
        }
        if seen != net.params().len() {
            let missing: Vec<_> = net
                .params()
                .iter()
                .filter(|p| !entries.iter().any(|e| e.name == p.name))
                .map(|p| p.name.clone())
                .collect();
            return Err(Error::Format(format!("checkpoint is missing {missing:?}")));
        }
        Ok(net)
    }
}

pub fn save_checkpoint<R: Real>(net: &Network<R>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, &net.to_entries())?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<Network<R>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let entries = read_checkpoint(&mut BufReader::new(file))?;
    Network::from_entries(&entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(entries: &[CheckpointEntry]) -> Vec<u8> {
        let mut v = Vec::new();
        write_checkpoint(&mut v, entries).unwrap();
        v
    }

    #[test]
    fn layout_of_single_entry() {
        let e = CheckpointEntry { name: "w".into(), shape: vec![2], values: vec![1.0, -2.0] };
        let b = bytes(&[e]);
        let mut expected = b"XAGN".to_vec();
        for v in [1u32, 1, 1] {
            expected.extend(v.to_le_bytes());
        }
        expected.push(b'w');
        for v in [1u32, 2] {
            expected.extend(v.to_le_bytes());
        }
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-2.0f64).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig { seed: u64::MAX - 7, input_size: (16, 16), ..NetworkConfig::desk() };
        let mut net = Network::<f32>::build(&cfg).unwrap();
        // perturb running stats so they are not at their initial values
        let mut r = crate::rng::SplitMix64::new(3);
        let x = crate::tensor::Tensor4::from_fn([2, 3, 16, 16], |_| r.uniform() as f32);
        net.forward_train(&x).unwrap();
        let back = Network::<f32>::from_entries(&read_checkpoint(&mut &bytes(&net.to_entries())[..]).unwrap()).unwrap();
        assert_eq!(back.config(), net.config());
        for (a, b) in net.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let ab: Vec<u32> = a.value.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.value.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{}", a.name);
        }
        assert_eq!(net.infer(&x).unwrap(), back.infer(&x).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let net = Network::<f64>::build(&NetworkConfig { input_size: (16, 16), ..NetworkConfig::desk() }).unwrap();
        let mut b = bytes(&net.to_entries());
        let cut = &b[..b.len() - 3];
        assert!(matches!(read_checkpoint(&mut &cut[..]), Err(Error::Format(_))));
        b[0] = b'Y';
        assert!(matches!(read_checkpoint(&mut &b[..]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_missing_parameter() {
        let net = Network::<f64>::build(&NetworkConfig { input_size: (16, 16), ..NetworkConfig::desk() }).unwrap();
        let mut entries = net.to_entries();
        entries.retain(|e| e.name != "head.bias");
        let err = Network::<f64>::from_entries(&entries).unwrap_err().to_string();
        assert!(err.contains("head.bias"), "{err}");
    }
}
