//! NPY v1.0 container for little-endian `f32` C-order arrays.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use onetfwi_tensor::Tensor;

use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Largest array (in elements) read without an explicit budget: 64 Mi
/// elements, 256 MiB of `f32`.
pub const DEFAULT_ELEMENT_BUDGET: usize = 64 << 20;

/// Parsed header of an NPY file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NpyHeader {
    pub shape: Vec<usize>,
    /// Byte offset of the first array element.
    pub data_offset: u64,
}

impl NpyHeader {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn npy_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Npy(format!("{}: {msg}", path.display()))
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(NpyHeader, usize)> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(npy_err(path, "missing NPY magic bytes"));
    }
    let (len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(npy_err(path, "truncated header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(npy_err(path, format!("unsupported NPY version {v}"))),
    };
    let end = start + len;
    let text = bytes.get(start..end).ok_or_else(|| npy_err(path, "truncated header"))?;
    let text = std::str::from_utf8(text).map_err(|_| npy_err(path, "header is not text"))?;
    let descr = dict_value(text, "descr").ok_or_else(|| npy_err(path, "header lacks 'descr'"))?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    if descr != "<f4" && descr != "f4" {
        return Err(npy_err(path, format!("unsupported dtype {descr}, expected <f4")));
    }
    let fortran = dict_value(text, "fortran_order").ok_or_else(|| npy_err(path, "header lacks 'fortran_order'"))?;
    match fortran {
        "False" => {}
        "True" => return Err(npy_err(path, "Fortran-order arrays are not supported")),
        other => return Err(npy_err(path, format!("bad fortran_order {other}"))),
    }
    let shape = dict_value(text, "shape").ok_or_else(|| npy_err(path, "header lacks 'shape'"))?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| npy_err(path, format!("bad shape {shape}")))?;
    let dims = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| npy_err(path, format!("bad dimension {s}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((NpyHeader { shape: dims, data_offset: end as u64 }, end))
}

/// Raw text of `key`'s value in a Python dict literal.
fn dict_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    let quoted = [format!("'{key}'"), format!("\"{key}\"")];
    let pos = quoted.iter().find_map(|q| text.find(q.as_str()).map(|p| p + q.len()))?;
    let rest = text[pos..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}']).unwrap_or(rest.len())
    };
    Some(rest[..end].trim())
}

/// Reads just the header.
pub fn read_npy_header(path: &Path) -> Result<NpyHeader> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prefix = vec![0u8; 12];
    let n = f.read(&mut prefix).map_err(|e| Error::io(path, e))?;
    prefix.truncate(n);
    let len = match prefix.get(6) {
        Some(1) if n >= 10 => 10 + u16::from_le_bytes([prefix[8], prefix[9]]) as usize,
        Some(2 | 3) if n >= 12 => 12 + u32::from_le_bytes([prefix[8], prefix[9], prefix[10], prefix[11]]) as usize,
        _ => return parse_header(path, &prefix).map(|(h, _)| h),
    };
    let mut head = vec![0u8; len];
    f.seek(SeekFrom::Start(0)).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut head).map_err(|_| npy_err(path, "truncated header"))?;
    parse_header(path, &head).map(|(h, _)| h)
}

/// Reads a whole array, refusing ones above [`DEFAULT_ELEMENT_BUDGET`].
pub fn read_npy(path: &Path) -> Result<Tensor<f32>> {
    read_npy_with_budget(path, DEFAULT_ELEMENT_BUDGET)
}

pub fn read_npy_with_budget(path: &Path, max_elements: usize) -> Result<Tensor<f32>> {
    let header = read_npy_header(path)?;
    if header.len() > max_elements {
        return Err(npy_err(
            path,
            format!("array of {} elements exceeds the memory budget of {max_elements}", header.len()),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, offset) = parse_header(path, &bytes)?;
    let body = &bytes[offset..];
    if body.len() != 4 * header.len() {
        return Err(npy_err(path, format!("expected {} data bytes, found {}", 4 * header.len(), body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor::new(header.shape, data)?)
}

/// Reads `count` consecutive entries along axis 0 starting at `first`.
pub fn read_npy_rows(path: &Path, first: usize, count: usize) -> Result<Tensor<f32>> {
    let header = read_npy_header(path)?;
    let rows = *header.shape.first().ok_or_else(|| npy_err(path, "scalar array has no rows"))?;
    if first + count > rows {
        return Err(npy_err(path, format!("rows {first}..{} out of range 0..{rows}", first + count)));
    }
    let file_len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if file_len != header.data_offset + 4 * header.len() as u64 {
        return Err(npy_err(path, "file length does not match the header"));
    }
    let row_len: usize = header.shape[1..].iter().product();
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    f.seek(SeekFrom::Start(header.data_offset + 4 * (first * row_len) as u64)).map_err(|e| Error::io(path, e))?;
    let mut bytes = vec![0u8; 4 * count * row_len];
    f.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut shape = header.shape.clone();
    shape[0] = count;
    Ok(Tensor::new(shape, data)?)
}

/// Encodes an array as NPY v1.0 bytes.
pub fn encode_npy(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape { context: "npy write".into(), expected: shape.to_vec(), got: vec![data.len()] });
    }
    let dims = match shape {
        [d] => format!("({d},)"),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes atomically via a temporary sibling file.
pub fn write_npy(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode_npy(shape, data)?;
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        for shape in [vec![2usize, 3], vec![7], vec![0, 5, 1000, 70]] {
            let n: usize = shape.iter().product();
            let bytes = encode_npy(&shape, &vec![0.0; n]).unwrap();
            let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + hlen) % 64, 0);
            assert_eq!(bytes[10 + hlen - 1], b'\n');
        }
    }

    #[test]
    fn dict_values_parse() {
        let t = "{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }";
        assert_eq!(dict_value(t, "descr"), Some("'<f4'"));
        assert_eq!(dict_value(t, "fortran_order"), Some("False"));
        assert_eq!(dict_value(t, "shape"), Some("(3, 4)"));
    }
}
