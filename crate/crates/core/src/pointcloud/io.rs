//! Cloud file formats.
//!
//! `SQNC v1` is the native binary layout, all integers little-endian:
//!
//! ```text
//! "SQNC" | u8 version=1 | u8 flags (bit0 colors, bit1 labels) | u16 num_classes | u64 N
//! N x 3 f32 positions
//! N x 3 u8 colors      (if bit0)
//! N u16 labels         (if bit1)
//! ```
//!
//! The ASCII import reads whitespace-separated `x y z [r g b] [label]` lines;
//! `#` starts a comment.

use std::fs;
use std::path::Path;

use super::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};

pub const SQNC_MAGIC: &[u8; 4] = b"SQNC";
pub const SQNC_VERSION: u8 = 1;
const FLAG_COLORS: u8 = 1;
const FLAG_LABELS: u8 = 2;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// Binary `SQNC v1`.
    Sqnc,
    /// ASCII `x y z [r g b] [label]`.
    Xyz,
}

impl CloudFormat {
    /// `.sqnc` is binary, anything else is treated as ASCII.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("sqnc") => CloudFormat::Sqnc,
            _ => CloudFormat::Xyz,
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    match format {
        CloudFormat::Sqnc => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_sqnc(&bytes)
        }
        CloudFormat::Xyz => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_xyz(&text, None)
        }
    }
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        CloudFormat::Sqnc => encode_sqnc(cloud),
        CloudFormat::Xyz => format_xyz(cloud).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_sqnc(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut flags = 0u8;
    if cloud.colors().is_some() {
        flags |= FLAG_COLORS;
    }
    if cloud.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n * 12 + n * 3 + n * 2);
    out.extend_from_slice(SQNC_MAGIC);
    out.push(SQNC_VERSION);
    out.push(flags);
    out.extend_from_slice(&cloud.num_classes().to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for p in cloud.positions() {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    if let Some(colors) = cloud.colors() {
        for c in colors {
            out.extend_from_slice(c);
        }
    }
    if let Some(labels) = cloud.labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_sqnc(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader {
            offset: bytes.len() as u64,
            reason: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    if &bytes[0..4] != SQNC_MAGIC {
        return Err(Error::MalformedHeader {
            offset: 0,
            reason: "bad magic, expected \"SQNC\"".into(),
        });
    }
    if bytes[4] != SQNC_VERSION {
        return Err(Error::MalformedHeader {
            offset: 4,
            reason: format!("unsupported version {}", bytes[4]),
        });
    }
    let flags = bytes[5];
    if flags & !(FLAG_COLORS | FLAG_LABELS) != 0 {
        return Err(Error::MalformedHeader {
            offset: 5,
            reason: format!("unknown flag bits {flags:#04x}"),
        });
    }
    let num_classes = u16::from_le_bytes([bytes[6], bytes[7]]);
    let n64 = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let n = usize::try_from(n64).map_err(|_| Error::MalformedHeader {
        offset: 8,
        reason: format!("point count {n64} does not fit in memory"),
    })?;

    let mut cursor = HEADER_LEN;
    let mut block = |record_len: usize| -> Result<&[u8]> {
        let available = (bytes.len() - cursor) / record_len;
        if available < n {
            return Err(Error::Truncated {
                expected: n64,
                record: available as u64,
            });
        }
        let start = cursor;
        cursor += n * record_len;
        Ok(&bytes[start..cursor])
    };

    let positions: Vec<[f32; 3]> = block(12)?
        .chunks_exact(12)
        .map(|r| {
            let f = |o: usize| f32::from_le_bytes(r[o..o + 4].try_into().expect("4-byte slice"));
            [f(0), f(4), f(8)]
        })
        .collect();
    let colors = if flags & FLAG_COLORS != 0 {
        Some(
            block(3)?
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let labels = if flags & FLAG_LABELS != 0 {
        let labels: Vec<ClassId> = block(2)?
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                record: i as u64,
                label: l as u32,
                num_classes: num_classes as u32,
            });
        }
        Some(labels)
    } else {
        None
    };
    if cursor != bytes.len() {
        return Err(Error::InvalidCloud(format!(
            "{} trailing bytes after offset {cursor}",
            bytes.len() - cursor
        )));
    }
    PointCloud::new(positions, colors, labels, num_classes)
}

/// Parse the ASCII layout. Every data line must use the same column layout.
/// When `num_classes` is `None` it is inferred as `max label + 1`.
pub fn parse_xyz(text: &str, num_classes: Option<u16>) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels: Vec<ClassId> = Vec::new();
    let mut columns: Option<usize> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if !matches!(tokens.len(), 3 | 4 | 6 | 7) {
            return Err(Error::Parse {
                line,
                reason: format!("expected 3, 4, 6 or 7 columns, found {}", tokens.len()),
            });
        }
        match columns {
            None => columns = Some(tokens.len()),
            Some(c) if c != tokens.len() => {
                return Err(Error::Parse {
                    line,
                    reason: format!("column count {} differs from first record ({c})", tokens.len()),
                })
            }
            _ => {}
        }
        let num = |s: &str| -> Result<f32> {
            s.parse::<f32>().map_err(|e| Error::Parse {
                line,
                reason: format!("bad coordinate `{s}`: {e}"),
            })
        };
        positions.push([num(tokens[0])?, num(tokens[1])?, num(tokens[2])?]);
        if tokens.len() >= 6 {
            let mut rgb = [0u8; 3];
            for (slot, tok) in rgb.iter_mut().zip(&tokens[3..6]) {
                *slot = tok.parse::<u8>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("bad color channel `{tok}`: {e}"),
                })?;
            }
            colors.push(rgb);
        }
        if tokens.len() == 4 || tokens.len() == 7 {
            let tok = tokens[tokens.len() - 1];
            let label = tok.parse::<u16>().map_err(|e| Error::Parse {
                line,
                reason: format!("bad label `{tok}`: {e}"),
            })?;
            if let Some(c) = num_classes {
                if label >= c {
                    return Err(Error::LabelOutOfRange {
                        record: (positions.len() - 1) as u64,
                        label: label as u32,
                        num_classes: c as u32,
                    });
                }
            }
            labels.push(label);
        }
    }

    let cols = columns.unwrap_or(3);
    let has_colors = cols >= 6;
    let has_labels = cols == 4 || cols == 7;
    let c = match num_classes {
        Some(c) => c,
        None => labels
            .iter()
            .max()
            .map(|&m| m.checked_add(1).ok_or_else(|| Error::invalid("label 65535 leaves no room for a class count")))
            .transpose()?
            .unwrap_or(0),
    };
    PointCloud::new(
        positions,
        has_colors.then_some(colors),
        has_labels.then_some(labels),
        c,
    )
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.positions()[i];
        out.push_str(&format!("{x} {y} {z}"));
        if let Some(c) = cloud.colors() {
            out.push_str(&format!(" {} {} {}", c[i][0], c[i][1], c[i][2]));
        }
        if let Some(l) = cloud.labels() {
            out.push_str(&format!(" {}", l[i]));
        }
        out.push('\n');
    }
    out
}
