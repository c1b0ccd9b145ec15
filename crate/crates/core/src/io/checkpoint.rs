//! Versioned binary checkpoint.
//!
//! Layout: magic `SNCK`, a version byte, a flags byte (bit 0: encoding
//! section present, bit 1: lineage section present), the body, and a
//! SHA-256 digest of everything before it. Integers are little-endian `u64`
//! unless noted, reals are little-endian `f32` for network parameters and
//! `f64` elsewhere, masks are one byte per synapse.

use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::arch::{ActShape, Conv2dSpec, LayerSpec, NetworkArchitecture};
use crate::dna::{LayerProbabilities, SynapticProbabilityModel};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionState, GenerationRecord, Individual, StopReason};
use crate::params::{LayerParams, ParameterSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SNCK";
pub const VERSION: u8 = 1;
const FLAG_DNA: u8 = 1;
const FLAG_LINEAGE: u8 = 2;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LineageSection {
    pub records: Vec<GenerationRecord>,
    pub best: usize,
    pub finished: Option<StopReason>,
    pub baseline: Individual,
    pub best_net: Individual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generation: u64,
    pub master_seed: u64,
    /// Next generation counter the seed derivation will use.
    pub rng_counter: u64,
    pub network: Individual,
    pub dna: Option<SynapticProbabilityModel>,
    pub lineage: Option<LineageSection>,
}

impl Checkpoint {
    pub fn from_state(state: &EvolutionState, master_seed: u64) -> Self {
        Self {
            generation: state.generation as u64,
            master_seed,
            rng_counter: state.generation as u64 + 1,
            network: state.parent.clone(),
            dna: state.dna.clone(),
            lineage: Some(LineageSection {
                records: state.records.clone(),
                best: state.best,
                finished: state.finished,
                baseline: state.baseline.clone(),
                best_net: state.best_net.clone(),
            }),
        }
    }

    pub fn into_state(self) -> Result<EvolutionState> {
        let lin = self
            .lineage
            .ok_or_else(|| Error::Format("checkpoint carries no lineage section".into()))?;
        if lin.records.is_empty() || lin.best >= lin.records.len() {
            return Err(Error::Format(
                "checkpoint lineage section is inconsistent".into(),
            ));
        }
        Ok(EvolutionState {
            generation: self.generation as usize,
            records: lin.records,
            parent: self.network,
            baseline: lin.baseline,
            best: lin.best,
            best_net: lin.best_net,
            dna: self.dna,
            finished: lin.finished,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_unhashed(&mut buf)
            .expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    fn write_unhashed(&self, w: &mut Vec<u8>) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u8(VERSION)?;
        let flags = if self.dna.is_some() { FLAG_DNA } else { 0 }
            | if self.lineage.is_some() {
                FLAG_LINEAGE
            } else {
                0
            };
        w.write_u8(flags)?;
        w.write_u64::<LE>(self.generation)?;
        w.write_u64::<LE>(self.master_seed)?;
        w.write_u64::<LE>(self.rng_counter)?;
        write_individual(w, &self.network)?;
        if let Some(dna) = &self.dna {
            write_dna(w, dna)?;
        }
        if let Some(lin) = &self.lineage {
            w.write_u64::<LE>(lin.records.len() as u64)?;
            for r in &lin.records {
                write_record(w, r)?;
            }
            w.write_u64::<LE>(lin.best as u64)?;
            w.write_u8(match lin.finished {
                None => 0,
                Some(StopReason::BudgetExceeded) => 1,
                Some(StopReason::MaxGenerations) => 2,
                Some(StopReason::Extinct) => 3,
            })?;
            write_individual(w, &lin.baseline)?;
            write_individual(w, &lin.best_net)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 + DIGEST_LEN {
            return Err(Error::Format("checkpoint is too short".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: bytes[4],
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let flags = body[5];
        let mut r = Cursor::new(&body[6..]);
        let out = read_body(&mut r, flags).map_err(|e| match e {
            Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
                Error::Format("checkpoint body ends early".into())
            }
            other => other,
        })?;
        if r.position() as usize != body.len() - 6 {
            return Err(Error::Format("trailing bytes after checkpoint body".into()));
        }
        Ok(out)
    }
}

fn read_body(r: &mut impl Read, flags: u8) -> Result<Checkpoint> {
    let generation = r.read_u64::<LE>()?;
    let master_seed = r.read_u64::<LE>()?;
    let rng_counter = r.read_u64::<LE>()?;
    let network = read_individual(r)?;
    let dna = if flags & FLAG_DNA != 0 {
        Some(read_dna(r)?)
    } else {
        None
    };
    let lineage = if flags & FLAG_LINEAGE != 0 {
        let n = read_len(r)?;
        let records = (0..n).map(|_| read_record(r)).collect::<Result<Vec<_>>>()?;
        let best = read_len(r)?;
        let finished = match r.read_u8()? {
            0 => None,
            1 => Some(StopReason::BudgetExceeded),
            2 => Some(StopReason::MaxGenerations),
            3 => Some(StopReason::Extinct),
            other => return Err(Error::Format(format!("unknown stop reason tag {other}"))),
        };
        Some(LineageSection {
            records,
            best,
            finished,
            baseline: read_individual(r)?,
            best_net: read_individual(r)?,
        })
    } else {
        None
    };
    Ok(Checkpoint {
        generation,
        master_seed,
        rng_counter,
        network,
        dna,
        lineage,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn read_len(r: &mut impl Read) -> Result<usize> {
    let n = r.read_u64::<LE>()?;
    usize::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in memory")))
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_u64::<LE>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_len(r)?;
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Format("string ends early".into()));
    }
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

fn write_arch(w: &mut impl Write, arch: &NetworkArchitecture) -> io::Result<()> {
    write_str(w, &arch.descriptor())?;
    for v in [
        arch.input.c,
        arch.input.h,
        arch.input.w,
        arch.num_classes,
        arch.layers.len(),
    ] {
        w.write_u64::<LE>(v as u64)?;
    }
    for layer in &arch.layers {
        let (tag, fields): (u8, Vec<usize>) = match *layer {
            LayerSpec::Conv2d(c) => (
                0,
                vec![
                    c.filters,
                    c.in_channels,
                    c.kernel_h,
                    c.kernel_w,
                    c.stride,
                    c.padding,
                ],
            ),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => (1, vec![in_features, out_features]),
            LayerSpec::MaxPool { window, stride } => (2, vec![window, stride]),
            LayerSpec::Relu => (3, vec![]),
            LayerSpec::Softmax => (4, vec![]),
        };
        w.write_u8(tag)?;
        for f in fields {
            w.write_u64::<LE>(f as u64)?;
        }
    }
    Ok(())
}

fn read_arch(r: &mut impl Read) -> Result<NetworkArchitecture> {
    let descriptor = read_str(r)?;
    let mut head = [0usize; 5];
    for h in &mut head {
        *h = read_len(r)?;
    }
    let [c, h, w, classes, n] = head;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let tag = r.read_u8()?;
        let mut take = |k: usize| (0..k).map(|_| read_len(r)).collect::<Result<Vec<_>>>();
        layers.push(match tag {
            0 => {
                let f = take(6)?;
                LayerSpec::Conv2d(Conv2dSpec {
                    filters: f[0],
                    in_channels: f[1],
                    kernel_h: f[2],
                    kernel_w: f[3],
                    stride: f[4],
                    padding: f[5],
                })
            }
            1 => {
                let f = take(2)?;
                LayerSpec::FullyConnected {
                    in_features: f[0],
                    out_features: f[1],
                }
            }
            2 => {
                let f = take(2)?;
                LayerSpec::MaxPool {
                    window: f[0],
                    stride: f[1],
                }
            }
            3 => LayerSpec::Relu,
            4 => LayerSpec::Softmax,
            other => return Err(Error::Format(format!("unknown layer tag {other}"))),
        });
    }
    let arch = NetworkArchitecture::new(ActShape::new(c, h, w), layers, classes)?;
    if arch.descriptor() != descriptor {
        return Err(Error::Format(format!(
            "stored descriptor {descriptor} does not match layers ({})",
            arch.descriptor()
        )));
    }
    Ok(arch)
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    w.write_u64::<LE>(values.len() as u64)?;
    values.iter().try_for_each(|&v| w.write_f32::<LE>(v))
}

fn read_f32s(r: &mut impl Read, expected: usize) -> Result<Vec<f32>> {
    let n = read_len(r)?;
    if n != expected {
        return Err(Error::Format(format!(
            "array of {n} values where {expected} expected"
        )));
    }
    let mut out = vec![0.0f32; n];
    r.read_f32_into::<LE>(&mut out)?;
    Ok(out)
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> io::Result<()> {
    w.write_u64::<LE>(values.len() as u64)?;
    values.iter().try_for_each(|&v| w.write_f64::<LE>(v))
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = read_len(r)?;
    let mut out = Vec::new();
    for _ in 0..n {
        out.push(r.read_f64::<LE>()?);
    }
    Ok(out)
}

fn write_individual(w: &mut impl Write, net: &Individual) -> io::Result<()> {
    write_arch(w, &net.arch)?;
    for layer in &net.params.layers {
        write_f32s(w, layer.weights.data())?;
        w.write_all(&layer.mask.iter().map(|&m| u8::from(m)).collect::<Vec<_>>())?;
        write_f32s(w, layer.bias.data())?;
    }
    Ok(())
}

fn read_individual(r: &mut impl Read) -> Result<Individual> {
    let arch = read_arch(r)?;
    let mut layers = Vec::new();
    for spec in arch.layers.iter().filter(|l| l.is_weighted()) {
        let shape = spec.weight_shape().expect("weighted");
        let n: usize = shape.iter().product();
        let weights = read_f32s(r, n)?;
        let mut raw = vec![0u8; n];
        r.read_exact(&mut raw)?;
        let mask = raw
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let units = shape[0];
        let bias = read_f32s(r, units)?;
        layers.push(LayerParams {
            weights: Tensor::new(shape, weights)?,
            mask,
            bias: Tensor::new(vec![units], bias)?,
        });
    }
    let params = ParameterSet { layers };
    params.validate(&arch)?;
    Ok(Individual { arch, params })
}

fn write_dna(w: &mut impl Write, dna: &SynapticProbabilityModel) -> io::Result<()> {
    w.write_u64::<LE>(dna.source_generation as u64)?;
    w.write_u64::<LE>(dna.layers.len() as u64)?;
    for l in &dna.layers {
        write_f64s(w, &l.synapse)?;
        write_f64s(w, &l.cluster)?;
    }
    Ok(())
}

fn read_dna(r: &mut impl Read) -> Result<SynapticProbabilityModel> {
    let source_generation = read_len(r)?;
    let n = read_len(r)?;
    let layers = (0..n)
        .map(|_| {
            Ok(LayerProbabilities {
                synapse: read_f64s(r)?,
                cluster: read_f64s(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynapticProbabilityModel {
        layers,
        source_generation,
    })
}

fn write_record(w: &mut impl Write, rec: &GenerationRecord) -> io::Result<()> {
    w.write_u64::<LE>(rec.generation as u64)?;
    write_str(w, &rec.descriptor)?;
    w.write_u64::<LE>(rec.params_total as u64)?;
    w.write_u64::<LE>(rec.params_nonzero as u64)?;
    w.write_f64::<LE>(rec.nonzero_ratio)?;
    w.write_f64::<LE>(rec.test_error)?;
    w.write_u64::<LE>(rec.model_size_bytes)?;
    w.write_u64::<LE>(rec.seed)?;
    w.write_f64::<LE>(rec.wall_seconds)?;
    match rec.expected_synapses {
        Some(v) => {
            w.write_u8(1)?;
            w.write_f64::<LE>(v)
        }
        None => w.write_u8(0),
    }
}

fn read_record(r: &mut impl Read) -> Result<GenerationRecord> {
    Ok(GenerationRecord {
        generation: read_len(r)?,
        descriptor: read_str(r)?,
        params_total: read_len(r)?,
        params_nonzero: read_len(r)?,
        nonzero_ratio: r.read_f64::<LE>()?,
        test_error: r.read_f64::<LE>()?,
        model_size_bytes: r.read_u64::<LE>()?,
        seed: r.read_u64::<LE>()?,
        wall_seconds: r.read_f64::<LE>()?,
        expected_synapses: match r.read_u8()? {
            0 => None,
            1 => Some(r.read_f64::<LE>()?),
            other => return Err(Error::Format(format!("bad option tag {other}"))),
        },
    })
}
