//! Weights file and loss-history CSV.
//!
//! A weights file is a text header terminated by `end\n`, followed by raw
//! little-endian `f64` arrays in header order:
//!
//! ```text
//! METADESIGN-VAE
//! version 1
//! latent 16
//! input 50 50
//! encoder 8 16 32
//! decoder 16 8 8
//! regressor 64 64
//! layer enc.conv0.w 9 8
//! ...
//! layer labels.mean 4
//! layer labels.std 4
//! end
//! ```

use super::network::Architecture;
use super::train::EpochRecord;
use super::{LatentError, ModelParameters};
use crate::homogenization::PropertyScaler;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

const MAGIC: &str = "METADESIGN-VAE";
const VERSION: u32 = 1;

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn header(p: &ModelParameters) -> String {
    let a = p.architecture();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}\nversion {VERSION}\nlatent {}\ninput {} {}", a.latent_dim, a.height, a.width);
    let _ = writeln!(s, "encoder {}", join(&a.encoder_channels));
    let _ = writeln!(s, "decoder {}", join(&a.decoder_channels));
    let _ = writeln!(s, "regressor {}", join(&a.regressor_hidden));
    for l in p.layout() {
        let _ = writeln!(s, "layer {} {}", l.name, join(&l.shape));
    }
    s.push_str("layer labels.mean 4\nlayer labels.std 4\nend\n");
    s
}

pub fn weights_to_bytes(p: &ModelParameters) -> Vec<u8> {
    let mut out = header(p).into_bytes();
    let tail = p.labels.mean.iter().chain(&p.labels.std);
    for v in p.values.iter().chain(tail) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelParameters, LatentError> {
    let fmt = |m: String| LatentError::Format(m);
    let end = bytes
        .windows(4)
        .position(|w| w == b"end\n")
        .ok_or_else(|| fmt("missing header terminator".into()))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| fmt("header is not UTF-8".into()))?;
    let body = &bytes[end + 4..];
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(fmt("bad magic string".into()));
    }
    let mut fields = std::collections::HashMap::new();
    let mut manifest = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("");
        let nums = |it: std::str::SplitWhitespace| -> Result<Vec<usize>, LatentError> {
            it.map(|t| t.parse::<usize>().map_err(|_| fmt(format!("header line {}: bad number `{t}`", i + 2)))).collect()
        };
        if key == "layer" {
            let name = parts.next().ok_or_else(|| fmt(format!("header line {}: layer without name", i + 2)))?;
            manifest.push((name.to_string(), nums(parts)?));
        } else {
            fields.insert(key.to_string(), nums(parts)?);
        }
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| fmt(format!("missing `{k}`")));
    let version = get("version")?;
    if version != [VERSION as usize] {
        return Err(fmt(format!("unsupported version {version:?}")));
    }
    let input = get("input")?;
    let latent = get("latent")?;
    if input.len() != 2 || latent.len() != 1 {
        return Err(fmt("malformed input or latent line".into()));
    }
    let arch = Architecture {
        height: input[0],
        width: input[1],
        latent_dim: latent[0],
        encoder_channels: get("encoder")?,
        decoder_channels: get("decoder")?,
        regressor_hidden: get("regressor")?,
    };
    arch.validate()?;
    let expected: Vec<(String, Vec<usize>)> = arch
        .plan()
        .layout
        .into_iter()
        .map(|l| (l.name, l.shape))
        .chain([("labels.mean".to_string(), vec![4]), ("labels.std".to_string(), vec![4])])
        .collect();
    if manifest != expected {
        return Err(fmt("layer manifest does not match the architecture".into()));
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if body.len() != 8 * total {
        return Err(fmt(format!("expected {} data bytes, found {}", 8 * total, body.len())));
    }
    let data: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let n = total - 8;
    let labels = PropertyScaler {
        mean: data[n..n + 4].try_into().unwrap(),
        std: data[n + 4..].try_into().unwrap(),
    };
    ModelParameters::from_values(arch, data[..n].to_vec(), labels)
}

pub fn write_weights(path: &Path, p: &ModelParameters) -> Result<(), LatentError> {
    std::fs::write(path, weights_to_bytes(p))?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<ModelParameters, LatentError> {
    weights_from_bytes(&std::fs::read(path)?)
}

/// Columns `epoch,recon,kl,reg,total` with training-split means.
pub fn write_loss_csv(path: &Path, history: &[EpochRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,recon,kl,reg,total")?;
    for h in history {
        let t = &h.train;
        writeln!(f, "{},{},{},{},{}", h.epoch, t.recon, t.kl, t.reg, t.total)?;
    }
    f.flush()
}
