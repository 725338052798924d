//! `.rlae` checkpoints: one JSON header line, then the parameters as
//! little-endian `f64`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Arch, PolicyNet, Variant};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: String,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    variant: Variant,
}

pub fn write_checkpoint<W: Write>(net: &PolicyNet, mut w: W) -> Result<()> {
    let header = Header {
        arch: net.arch().name(),
        d: net.input_dim(),
        k: net.k(),
        variant: net.variant(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut block = Vec::with_capacity(8 * net.num_params());
    for p in net.params() {
        block.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&block)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<PolicyNet> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::invalid(format!("bad checkpoint header: {e}")))?;
    let hidden = Arch::parse_name(&header.arch)?;
    let arch = Arch::new(header.variant, header.d, header.k).with_hidden(hidden);
    let mut block = Vec::new();
    r.read_to_end(&mut block)?;
    if block.len() % 8 != 0 {
        return Err(Error::invalid("checkpoint parameter block is truncated"));
    }
    let theta: Vec<f64> = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PolicyNet::from_params(arch, theta)
}

pub fn save(net: &PolicyNet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(net, std::io::BufWriter::new(f))
}

pub fn load(path: &Path) -> Result<PolicyNet> {
    read_checkpoint(std::fs::File::open(path)?)
}
