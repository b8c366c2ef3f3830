//! Checkpoint layout: a short text header followed by little-endian f32 weights.
//!
//! ```text
//! OCCFUSE-CKPT 1
//! arch unet3d dim=16 channels=8,16,32 temb=16
//! resolution 0.4125
//! schedule 3f9a...
//! params 12345
//! <12345 x f32>
//! ```

use std::io::{BufRead, Write};

use super::unet::{Arch, Denoiser};
use super::{DiffusionError, NoiseSchedule};

const MAGIC: &str = "OCCFUSE-CKPT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub arch: Arch,
    /// Metres per voxel of the grids the model was trained on.
    pub resolution: f64,
    pub schedule_hash: String,
}

pub fn save_checkpoint<W: Write>(
    mut w: W,
    net: &Denoiser,
    resolution: f64,
    schedule: &NoiseSchedule,
) -> Result<(), DiffusionError> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "arch {}", net.arch().descriptor())?;
    writeln!(w, "resolution {resolution}")?;
    writeln!(w, "schedule {}", schedule.hash())?;
    writeln!(w, "params {}", net.param_count())?;
    let mut bytes = Vec::with_capacity(net.param_count() * 4);
    for p in net.params() {
        bytes.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> DiffusionError {
    DiffusionError::Checkpoint(msg.into())
}

fn header_line<R: BufRead>(r: &mut R, key: &str) -> Result<String, DiffusionError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(bad(format!("truncated header, missing `{key}`")));
    }
    let line = line.trim_end();
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_owned)
        .ok_or_else(|| bad(format!("expected `{key}` line, found `{line}`")))
}

fn parse_arch(desc: &str) -> Result<Arch, DiffusionError> {
    let mut parts = desc.split_whitespace();
    if parts.next() != Some("unet3d") {
        return Err(bad(format!("unknown architecture `{desc}`")));
    }
    let mut arch = Arch { dim: 0, channels: [0; 3], temb_dim: 0 };
    for part in parts {
        let (k, v) = part.split_once('=').ok_or_else(|| bad(format!("bad arch field `{part}`")))?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad arch value `{part}`")));
        match k {
            "dim" => arch.dim = num(v)?,
            "temb" => arch.temb_dim = num(v)?,
            "channels" => {
                let c: Vec<usize> = v.split(',').map(num).collect::<Result<_, _>>()?;
                arch.channels = c.try_into().map_err(|_| bad("channels needs three widths"))?;
            }
            _ => return Err(bad(format!("unknown arch field `{k}`"))),
        }
    }
    arch.validate()?;
    Ok(arch)
}

/// Reads a checkpoint, refusing one trained under a different noise schedule.
pub fn load_checkpoint<R: BufRead>(
    mut r: R,
    schedule: &NoiseSchedule,
) -> Result<(Denoiser, CheckpointMeta), DiffusionError> {
    let mut magic = String::new();
    r.read_line(&mut magic)?;
    if magic.trim_end() != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let arch = parse_arch(&header_line(&mut r, "arch")?)?;
    let resolution: f64 = header_line(&mut r, "resolution")?
        .parse()
        .map_err(|_| bad("bad resolution"))?;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(bad("resolution must be positive"));
    }
    let schedule_hash = header_line(&mut r, "schedule")?;
    if schedule_hash != schedule.hash() {
        return Err(bad(format!(
            "schedule hash {schedule_hash} does not match {}",
            schedule.hash()
        )));
    }
    let n: usize = header_line(&mut r, "params")?.parse().map_err(|_| bad("bad params count"))?;
    if n != arch.param_count() {
        return Err(bad(format!("{n} params but architecture needs {}", arch.param_count())));
    }
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|_| bad("truncated weights"))?;
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let net = Denoiser::from_params(arch, params)?;
    Ok((net, CheckpointMeta { arch, resolution, schedule_hash }))
}
