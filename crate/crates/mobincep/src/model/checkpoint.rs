//! Checkpoint file format.
//!
//! Layout: magic `MBCP`, format version (u32 LE), a length-prefixed UTF-8
//! config block (`key = value` lines, one `class_name` line per class in
//! label order), then per-tensor records: name length (u32) + name bytes +
//! rank (u32) + extents (u64 each) + little-endian f32 data. Parameters
//! come first in traversal order, then the batch-norm running statistics.
//! Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::model::{MobincepConfig, MobincepNet};
use crate::nn::InceptionSpec;
use crate::tensor::Tensor;
use crate::Result;

const MAGIC: &[u8; 4] = b"MBCP";
const VERSION: u32 = 1;

/// A loaded checkpoint: the network plus the class names embedded at save
/// time (global label order).
pub struct Checkpoint {
    pub net: MobincepNet<f32>,
    pub class_names: Vec<String>,
}

pub fn save(net: &MobincepNet<f32>, class_names: &[String], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let config_text = config_to_text(&net.config, class_names);
    let config_bytes = config_text.as_bytes();
    w.write_all(&(config_bytes.len() as u32).to_le_bytes())?;
    w.write_all(config_bytes)?;

    let mut records: Vec<(String, Tensor<f32>)> = Vec::new();
    net.visit_params(&mut |name, t| records.push((name.to_string(), t.clone())));
    net.visit_buffers(&mut |name, t| records.push((name.to_string(), t.clone())));

    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in &records {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, not a checkpoint file"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}"
        )));
    }

    let config_len = read_u32(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_exact(&mut r, &mut config_bytes)?;
    let config_text = String::from_utf8(config_bytes)
        .map_err(|e| Error::Format(format!("config block is not UTF-8: {e}")))?;
    let (config, class_names) = config_from_text(&config_text)?;

    let count = read_u32(&mut r)? as usize;
    let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            read_exact(&mut r, &mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor record `{name}`")));
        }
    }

    // rebuild the skeleton, then fill every tensor from the file
    let mut net = MobincepNet::<f32>::build(config, 0)?;
    let mut missing = Vec::new();
    let mut fill = |name: &str, t: &mut Tensor<f32>| match tensors.remove(name) {
        Some(loaded) => {
            if loaded.shape() != t.shape() {
                missing.push(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    loaded.shape(),
                    t.shape()
                ));
            } else {
                *t = loaded;
            }
        }
        None => missing.push(format!("tensor `{name}` absent from checkpoint")),
    };
    net.visit_params_mut(&mut fill);
    net.visit_buffers_mut(&mut fill);
    if !missing.is_empty() {
        return Err(Error::Format(missing.join("; ")));
    }
    if !tensors.is_empty() {
        let extra: Vec<String> = tensors.keys().cloned().collect();
        return Err(Error::Format(format!(
            "unknown tensor records: {}",
            extra.join(", ")
        )));
    }
    Ok(Checkpoint { net, class_names })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated checkpoint file".to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn config_to_text(config: &MobincepConfig, class_names: &[String]) -> String {
    let mut s = String::new();
    s.push_str(&format!("input_channels = {}\n", config.input_channels));
    s.push_str(&format!("input_size = {}\n", config.input_size));
    s.push_str(&format!("stem_kernel = {}\n", config.stem_kernel));
    s.push_str(&format!("stem_stride = {}\n", config.stem_stride));
    s.push_str(&format!("stem_out = {}\n", config.stem_out));
    let i = &config.inception;
    s.push_str(&format!(
        "inception = {},{},{},{},{},{}\n",
        i.a_out, i.b_reduce, i.b_out, i.c_reduce, i.c_out, i.d_out
    ));
    let stack: Vec<String> = config
        .ds_stack
        .iter()
        .map(|&(c, st)| format!("{c}:{st}"))
        .collect();
    s.push_str(&format!("ds_stack = {}\n", stack.join(",")));
    s.push_str(&format!("num_classes = {}\n", config.num_classes));
    if let Some((lo, hi)) = config.budget {
        s.push_str(&format!("budget = {lo},{hi}\n"));
    }
    for name in class_names {
        s.push_str(&format!("class_name = {name}\n"));
    }
    s
}

fn config_from_text(text: &str) -> Result<(MobincepConfig, Vec<String>)> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    let mut class_names = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed config line `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "class_name" {
            class_names.push(value.to_string());
        } else {
            map.insert(key, value);
        }
    }
    let req = |key: &str| -> Result<&str> {
        map.get(key)
            .copied()
            .ok_or_else(|| Error::Format(format!("config key `{key}` missing")))
    };
    let int = |key: &str| -> Result<usize> {
        req(key)?
            .parse()
            .map_err(|_| Error::Format(format!("config key `{key}` is not an integer")))
    };

    let inception_parts: Vec<usize> = req("inception")?
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("malformed inception spec".to_string()))?;
    if inception_parts.len() != 6 {
        return Err(Error::Format("inception spec wants 6 extents".to_string()));
    }
    let mut ds_stack = Vec::new();
    for part in req("ds_stack")?.split(',') {
        let (c, st) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("malformed ds_stack entry `{part}`")))?;
        ds_stack.push((
            c.parse()
                .map_err(|_| Error::Format("bad ds channel".to_string()))?,
            st.parse()
                .map_err(|_| Error::Format("bad ds stride".to_string()))?,
        ));
    }
    let budget = match map.get("budget") {
        Some(v) => {
            let (lo, hi) = v
                .split_once(',')
                .ok_or_else(|| Error::Format("malformed budget".to_string()))?;
            Some((
                lo.trim()
                    .parse()
                    .map_err(|_| Error::Format("bad budget lo".to_string()))?,
                hi.trim()
                    .parse()
                    .map_err(|_| Error::Format("bad budget hi".to_string()))?,
            ))
        }
        None => None,
    };

    let config = MobincepConfig {
        input_channels: int("input_channels")?,
        input_size: int("input_size")?,
        stem_kernel: int("stem_kernel")?,
        stem_stride: int("stem_stride")?,
        stem_out: int("stem_out")?,
        inception: InceptionSpec {
            a_out: inception_parts[0],
            b_reduce: inception_parts[1],
            b_out: inception_parts[2],
            c_reduce: inception_parts[3],
            c_out: inception_parts[4],
            d_out: inception_parts[5],
        },
        ds_stack,
        num_classes: int("num_classes")?,
        budget,
    };
    Ok((config, class_names))
}
