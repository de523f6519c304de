//! Binary embedding (`MVPF`) and source-statistics (`MVPS`) files.
//!
//! All integers and floats are little-endian and densely packed.
//!
//! ```text
//! MVPF: "MVPF" u32 version=1, u32 C, u32 L, u32 feat_dim, u64 count,
//!       count x { u64 scene_id, u16 config_rank, u16 aug_index,
//!                 f32[L*feat_dim] means, f32[L*feat_dim] vars, f32[C] probs }
//! MVPS: "MVPS" u32 version=1, u32 L, u32 feat_dim,
//!       L x { f32[feat_dim] means, f32[feat_dim] vars }
//! ```

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::ViewKey;
use crate::domain::{LayerStats, SourceStats};
use crate::{Error, Result};

pub const MVPF_MAGIC: [u8; 4] = *b"MVPF";
pub const MVPS_MAGIC: [u8; 4] = *b"MVPS";
pub const VERSION: u32 = 1;
pub const MVPF_HEADER_LEN: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MvpfHeader {
    pub n_classes: u32,
    pub n_layers: u32,
    pub feat_dim: u32,
    pub count: u64,
}

impl MvpfHeader {
    pub fn record_len(&self) -> usize {
        12 + 4 * (2 * self.n_layers as usize * self.feat_dim as usize + self.n_classes as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub key: ViewKey,
    /// Layer-major: `means[l * feat_dim + d]`.
    pub means: Vec<f32>,
    pub vars: Vec<f32>,
    pub probs: Vec<f32>,
}

pub fn write_mvpf<W: Write>(
    mut w: W,
    n_classes: u32,
    n_layers: u32,
    feat_dim: u32,
    records: &[EmbeddingRecord],
) -> Result<()> {
    let stat_len = (n_layers * feat_dim) as usize;
    w.write_all(&MVPF_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(n_classes)?;
    w.write_u32::<LittleEndian>(n_layers)?;
    w.write_u32::<LittleEndian>(feat_dim)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    for r in records {
        if r.means.len() != stat_len
            || r.vars.len() != stat_len
            || r.probs.len() != n_classes as usize
        {
            return Err(Error::Dimension(format!(
                "record {:?} does not match {n_layers} layers x {feat_dim} dims, {n_classes} classes",
                r.key
            )));
        }
        w.write_u64::<LittleEndian>(r.key.scene_id)?;
        w.write_u16::<LittleEndian>(r.key.config_rank)?;
        w.write_u16::<LittleEndian>(r.key.aug_index)?;
        for x in r.means.iter().chain(&r.vars).chain(&r.probs) {
            w.write_f32::<LittleEndian>(*x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cursor over a byte buffer that reports absolute offsets in errors.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let at = self.pos as u64;
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(Error::Format {
                offset: at,
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            });
        }
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, what)?;
        let mut out = vec![0f32; n];
        LittleEndian::read_f32_into(raw, &mut out);
        Ok(out)
    }

    fn version(&mut self) -> Result<()> {
        let at = self.pos as u64;
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(Error::Format {
                offset: at,
                reason: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }

    fn nonzero(&mut self, what: &str) -> Result<u32> {
        let at = self.pos as u64;
        let v = self.u32(what)?;
        if v == 0 {
            return Err(Error::Format {
                offset: at,
                reason: format!("{what} must be positive"),
            });
        }
        Ok(v)
    }
}

pub fn read_mvpf(buf: &[u8]) -> Result<(MvpfHeader, Vec<EmbeddingRecord>)> {
    let mut c = Cursor { buf, pos: 0 };
    c.magic(&MVPF_MAGIC)?;
    c.version()?;
    let header = MvpfHeader {
        n_classes: c.nonzero("class count")?,
        n_layers: c.nonzero("layer count")?,
        feat_dim: c.nonzero("feature dim")?,
        count: c.u64("record count")?,
    };
    let expected = header.count.checked_mul(header.record_len() as u64);
    let remaining = (buf.len() - c.pos) as u64;
    if expected != Some(remaining) {
        let offset = match expected {
            Some(e) if e > remaining => buf.len() as u64,
            Some(e) => c.pos as u64 + e,
            None => c.pos as u64,
        };
        return Err(Error::Format {
            offset,
            reason: format!(
                "payload holds {remaining} bytes but {} records of {} bytes were declared",
                header.count,
                header.record_len()
            ),
        });
    }
    let stat_len = (header.n_layers * header.feat_dim) as usize;
    let mut records = Vec::with_capacity(header.count as usize);
    for _ in 0..header.count {
        let key = ViewKey {
            scene_id: c.u64("scene id")?,
            config_rank: c.u16("config rank")?,
            aug_index: c.u16("aug index")?,
        };
        records.push(EmbeddingRecord {
            key,
            means: c.f32s(stat_len, "means")?,
            vars: c.f32s(stat_len, "vars")?,
            probs: c.f32s(header.n_classes as usize, "probs")?,
        });
    }
    Ok((header, records))
}

pub fn write_mvps<W: Write>(mut w: W, stats: &SourceStats) -> Result<()> {
    w.write_all(&MVPS_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(stats.n_layers() as u32)?;
    w.write_u32::<LittleEndian>(stats.feat_dim() as u32)?;
    for l in stats.layers() {
        for x in l.mean.iter().chain(&l.var) {
            w.write_f32::<LittleEndian>(*x as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_mvps(buf: &[u8], provenance: impl Into<String>) -> Result<SourceStats> {
    let mut c = Cursor { buf, pos: 0 };
    c.magic(&MVPS_MAGIC)?;
    c.version()?;
    let n_layers = c.nonzero("layer count")? as usize;
    let dim = c.nonzero("feature dim")? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
        let mean = widen(c.f32s(dim, "layer means")?);
        let at = c.pos as u64;
        let var = widen(c.f32s(dim, "layer vars")?);
        let stats = LayerStats::new(l + 1, mean, var).map_err(|e| Error::Format {
            offset: at,
            reason: e.to_string(),
        })?;
        layers.push(stats);
    }
    if c.pos != buf.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            reason: format!("{} trailing bytes", buf.len() - c.pos),
        });
    }
    SourceStats::new(layers, provenance)
}

pub fn save_source_stats(path: &Path, stats: &SourceStats) -> Result<()> {
    let mut buf = Vec::new();
    write_mvps(&mut buf, stats)?;
    std::fs::write(path, buf).map_err(Error::at_path(path))
}

pub fn load_source_stats(path: &Path) -> Result<SourceStats> {
    let buf = std::fs::read(path).map_err(Error::at_path(path))?;
    read_mvps(&buf, format!("file:{}", path.display()))
}
