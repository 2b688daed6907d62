//! Checkpoint container: a text manifest followed by raw little-endian f32
//! tensor data.
//!
//! Layout:
//! ```text
//! IDVAE-CKPT-v1
//! cfg <key> = <value>          one line per resolved config key
//! step <n>
//! epoch <n>
//! rng <name> <key> <counter>   counter-based generator states
//! opt_t <param> <t>            per-parameter optimizer step counts
//! tensor <name> <offset> <len> <dim0> <dim1> ...
//! @@DATA@@
//! <raw f32 little-endian arrays at the stated byte offsets>
//! ```
//!
//! Offsets are relative to the byte after the `@@DATA@@` line. Tensors cover
//! model parameters plus optimizer moments (`opt.m.<param>`, `opt.v.<param>`).
//! Loading a checkpoint and resuming reproduces the uninterrupted run
//! bit for bit.

use std::io::Write;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::tensor::numel;

const MAGIC: &str = "IDVAE-CKPT-v1";
const DATA_MARKER: &str = "@@DATA@@";

pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub step: u64,
    pub epoch: u64,
    /// (stream name, key, counter)
    pub rng_states: Vec<(String, u64, u64)>,
    /// (param name, optimizer step count)
    pub opt_t: Vec<(String, u64)>,
    /// (name, shape, values) — sorted by name on save.
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<&(String, Vec<usize>, Vec<f32>)> = self.tensors.iter().collect();
        tensors.sort_by(|a, b| a.0.cmp(&b.0));

        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in self.config.to_pairs() {
            header.push_str(&format!("cfg {k} = {v}\n"));
        }
        header.push_str(&format!("step {}\n", self.step));
        header.push_str(&format!("epoch {}\n", self.epoch));
        let mut rngs = self.rng_states.clone();
        rngs.sort();
        for (name, key, counter) in &rngs {
            header.push_str(&format!("rng {name} {key} {counter}\n"));
        }
        let mut opt_t = self.opt_t.clone();
        opt_t.sort();
        for (name, t) in &opt_t {
            header.push_str(&format!("opt_t {name} {t}\n"));
        }
        let mut offset = 0usize;
        for (name, shape, values) in &tensors {
            debug_assert_eq!(numel(shape), values.len());
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "tensor {name} {offset} {} {}\n",
                values.len(),
                dims.join(" ")
            ));
            offset += values.len() * 4;
        }
        header.push_str(DATA_MARKER);
        header.push('\n');

        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        file.write_all(header.as_bytes()).map_err(io_err)?;
        for (_, _, values) in &tensors {
            for v in values.iter() {
                file.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        file.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let marker = format!("\n{DATA_MARKER}\n");
        let marker_pos = find_subsequence(&bytes, marker.as_bytes()).ok_or_else(|| {
            Error::Data(format!("{}: missing {DATA_MARKER} marker", path.display()))
        })?;
        let header = std::str::from_utf8(&bytes[..marker_pos])
            .map_err(|_| Error::Data(format!("{}: header is not UTF-8", path.display())))?;
        let data = &bytes[marker_pos + marker.len()..];

        let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("bad magic, expected {MAGIC}")));
        }
        let mut cfg_pairs = Vec::new();
        let mut step = None;
        let mut epoch = None;
        let mut rng_states = Vec::new();
        let mut opt_t = Vec::new();
        let mut tensors = Vec::new();
        for line in lines {
            let Some((tag, rest)) = line.split_once(' ') else {
                return Err(bad(format!("malformed line '{line}'")));
            };
            match tag {
                "cfg" => {
                    let Some((k, v)) = rest.split_once(" = ") else {
                        return Err(bad(format!("malformed cfg line '{line}'")));
                    };
                    cfg_pairs.push((k.to_string(), v.to_string()));
                }
                "step" => step = Some(rest.parse::<u64>().map_err(|_| bad(line.into()))?),
                "epoch" => epoch = Some(rest.parse::<u64>().map_err(|_| bad(line.into()))?),
                "rng" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    if parts.len() != 3 {
                        return Err(bad(format!("malformed rng line '{line}'")));
                    }
                    rng_states.push((
                        parts[0].to_string(),
                        parts[1].parse().map_err(|_| bad(line.into()))?,
                        parts[2].parse().map_err(|_| bad(line.into()))?,
                    ));
                }
                "opt_t" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    if parts.len() != 2 {
                        return Err(bad(format!("malformed opt_t line '{line}'")));
                    }
                    opt_t.push((
                        parts[0].to_string(),
                        parts[1].parse().map_err(|_| bad(line.into()))?,
                    ));
                }
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    if parts.len() < 3 {
                        return Err(bad(format!("malformed tensor line '{line}'")));
                    }
                    let name = parts[0].to_string();
                    let offset: usize = parts[1].parse().map_err(|_| bad(line.into()))?;
                    let len: usize = parts[2].parse().map_err(|_| bad(line.into()))?;
                    let shape: Vec<usize> = parts[3..]
                        .iter()
                        .map(|d| d.parse::<usize>().map_err(|_| bad(line.into())))
                        .collect::<Result<_>>()?;
                    if numel(&shape) != len {
                        return Err(bad(format!("tensor {name}: shape/len mismatch")));
                    }
                    let end = offset + len * 4;
                    if end > data.len() {
                        return Err(bad(format!("tensor {name}: data out of range")));
                    }
                    let mut values = Vec::with_capacity(len);
                    for i in 0..len {
                        let at = offset + i * 4;
                        values.push(f32::from_le_bytes([
                            data[at],
                            data[at + 1],
                            data[at + 2],
                            data[at + 3],
                        ]));
                    }
                    tensors.push((name, shape, values));
                }
                other => return Err(bad(format!("unknown header tag '{other}'"))),
            }
        }
        let config = ExperimentConfig::from_pairs(&cfg_pairs)
            .map_err(|e| bad(format!("embedded config: {e}")))?;
        Ok(Checkpoint {
            config,
            step: step.ok_or_else(|| bad("missing step".into()))?,
            epoch: epoch.ok_or_else(|| bad("missing epoch".into()))?,
            rng_states,
            opt_t,
            tensors,
        })
    }
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.idvae");
        let ck = Checkpoint {
            config: ExperimentConfig::ring_defaults(),
            step: 123,
            epoch: 4,
            rng_states: vec![("eps".into(), 42, 1000), ("prior".into(), 7, 3)],
            opt_t: vec![("trunk.0.w".into(), 123)],
            tensors: vec![
                ("trunk.0.w".into(), vec![2, 3], vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE, 0.0, 2e-7]),
                ("opt.m.trunk.0.w".into(), vec![2, 3], vec![0.125; 6]),
            ],
        };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 123);
        assert_eq!(back.epoch, 4);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.rng_states.len(), 2);
        let (shape, vals) = back.tensor("trunk.0.w").unwrap();
        assert_eq!(shape, &[2, 3]);
        // bit-exact round trip
        for (a, b) in vals.iter().zip(&ck.tensors[0].2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.idvae"), dir.path().join("b.idvae"));
        let ck = Checkpoint {
            config: ExperimentConfig::ring_defaults(),
            step: 5,
            epoch: 1,
            rng_states: vec![("shuffle".into(), 1, 2)],
            opt_t: vec![],
            tensors: vec![("w".into(), vec![3], vec![0.1, 0.2, 0.3])],
        };
        ck.save(&p1).unwrap();
        ck.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_data_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idvae");
        let ck = Checkpoint {
            config: ExperimentConfig::ring_defaults(),
            step: 0,
            epoch: 0,
            rng_states: vec![],
            opt_t: vec![],
            tensors: vec![("w".into(), vec![4], vec![1.0; 4])],
        };
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
