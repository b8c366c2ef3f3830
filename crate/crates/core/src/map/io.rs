//! VOXMAP text format.
//!
//! ```text
//! VOXMAP 1 <resolution> <prior>
//! <i> <j> <k> <log_odds> <observed 0|1>
//! ...
//! ```
//!
//! Cells are written in ascending key order so identical maps serialize to
//! identical bytes.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::merge::MergeConfig;

use super::{OccupancyMap, VoxelCell, VoxelKey};

#[derive(Debug, Error)]
pub enum VoxmapError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("missing VOXMAP header")]
    MissingHeader,
    #[error("unsupported VOXMAP version {0}")]
    Version(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn write_voxmap<W: Write>(map: &OccupancyMap, mut w: W) -> io::Result<()> {
    writeln!(w, "VOXMAP 1 {} {}", map.resolution(), map.prior())?;
    for (key, cell) in map.sorted_cells() {
        writeln!(
            w,
            "{} {} {} {} {}",
            key.i,
            key.j,
            key.k,
            cell.log_odds,
            u8::from(cell.observed)
        )?;
    }
    Ok(())
}

/// Loads a map; threshold and clamps come from `config`, the prior from the
/// file header.
pub fn read_voxmap<R: BufRead>(r: R, config: &MergeConfig) -> Result<OccupancyMap, VoxmapError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(VoxmapError::MissingHeader)??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"VOXMAP") || fields.len() != 4 {
        return Err(VoxmapError::MissingHeader);
    }
    if fields[1] != "1" {
        return Err(VoxmapError::Version(fields[1].to_string()));
    }
    let parse_f = |s: &str, line: usize| {
        s.parse::<f64>().map_err(|e| VoxmapError::Parse {
            line,
            msg: format!("{s:?}: {e}"),
        })
    };
    let resolution = parse_f(fields[2], 1)?;
    let prior = parse_f(fields[3], 1)?;
    if !(resolution > 0.0) || !(prior > 0.0 && prior < 1.0) {
        return Err(VoxmapError::Parse {
            line: 1,
            msg: "resolution must be positive and prior in (0, 1)".into(),
        });
    }
    let mut map = OccupancyMap::new(resolution, config);
    map.set_params(prior, config);
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(VoxmapError::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", f.len()),
            });
        }
        let idx = |s: &str| {
            s.parse::<i32>().map_err(|e| VoxmapError::Parse {
                line: line_no,
                msg: format!("{s:?}: {e}"),
            })
        };
        let key = VoxelKey::new(idx(f[0])?, idx(f[1])?, idx(f[2])?);
        let log_odds = parse_f(f[3], line_no)?;
        let observed = match f[4] {
            "0" => false,
            "1" => true,
            other => {
                return Err(VoxmapError::Parse {
                    line: line_no,
                    msg: format!("observed flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        map.insert_cell(key, VoxelCell { log_odds, observed });
    }
    Ok(map)
}
