//! NPY v1.0 reader/writer for little-endian `f32` C-order arrays.
//!
//! Only this subset is accepted and produced. Headers are written exactly as
//! NumPy writes them (64-byte alignment, trailing newline), so files saved by
//! NumPy round-trip byte for byte.

use std::fs;
use std::path::Path;

use crate::error::NpyError;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;
const MAX_RANK: usize = 4;

/// Row-major `f32` array with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NpyError> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(NpyError::InvalidShape(shape));
        }
        Ok(Self { shape, data })
    }

    /// Narrows `f64` values to `f32`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Serialized NPY bytes (header + payload).
    pub fn to_npy_bytes(&self) -> Result<Vec<u8>, NpyError> {
        validate_shape(&self.shape)?;
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(NpyError::NonFinite);
        }
        let header = encode_header(&self.shape);
        let mut out = Vec::with_capacity(header.len() + 4 * self.data.len());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_npy_bytes(bytes: &[u8]) -> Result<Self, NpyError> {
        if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
            return Err(NpyError::MalformedHeader("missing \\x93NUMPY magic".into()));
        }
        if bytes[6] != 1 || bytes[7] != 0 {
            return Err(NpyError::MalformedHeader(format!(
                "unsupported format version {}.{}",
                bytes[6], bytes[7]
            )));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let data_start = PREAMBLE_LEN + header_len;
        if bytes.len() < data_start {
            return Err(NpyError::MalformedHeader("header runs past end of file".into()));
        }
        let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
            .map_err(|_| NpyError::MalformedHeader("header is not valid ASCII".into()))?;
        let shape = parse_header(header)?;
        validate_shape(&shape)?;

        let count: usize = shape.iter().product();
        let expected = count * 4;
        let payload = &bytes[data_start..];
        if payload.len() < expected {
            return Err(NpyError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(NpyError::TrailingBytes {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { shape, data })
    }
}

fn validate_shape(shape: &[usize]) -> Result<(), NpyError> {
    if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
        return Err(NpyError::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

fn encode_header(shape: &[usize]) -> Vec<u8> {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    // pad with spaces so that preamble + dict + '\n' is 64-byte aligned
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Parses the Python dict literal and returns the shape after validating
/// `descr` and `fortran_order`.
fn parse_header(header: &str) -> Result<Vec<usize>, NpyError> {
    let malformed = |m: &str| NpyError::MalformedHeader(m.to_string());
    let body = header.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| malformed("header is not a dict literal"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after_key) = parse_quoted(rest).ok_or_else(|| malformed("expected quoted key"))?;
        let after_colon = after_key
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| malformed("expected ':' after key"))?
            .trim_start();
        let after_value = match key {
            "descr" => {
                let (v, r) = parse_quoted(after_colon).ok_or_else(|| malformed("descr must be a string"))?;
                descr = Some(v.to_string());
                r
            }
            "fortran_order" => {
                if let Some(r) = after_colon.strip_prefix("False") {
                    fortran = Some(false);
                    r
                } else if let Some(r) = after_colon.strip_prefix("True") {
                    fortran = Some(true);
                    r
                } else {
                    return Err(malformed("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let (dims, r) = parse_tuple(after_colon).ok_or_else(|| malformed("shape must be a tuple of integers"))?;
                shape = Some(dims);
                r
            }
            other => return Err(malformed(&format!("unexpected key '{other}'"))),
        };
        let after_value = after_value.trim_start();
        rest = match after_value.strip_prefix(',') {
            Some(r) => r.trim_start(),
            None if after_value.is_empty() => after_value,
            None => return Err(malformed("expected ',' between entries")),
        };
    }

    let descr = descr.ok_or_else(|| malformed("missing 'descr'"))?;
    let fortran = fortran.ok_or_else(|| malformed("missing 'fortran_order'"))?;
    let shape = shape.ok_or_else(|| malformed("missing 'shape'"))?;
    if descr != "<f4" {
        return Err(NpyError::UnsupportedDtype(descr));
    }
    if fortran {
        return Err(NpyError::FortranOrder);
    }
    Ok(shape)
}

fn parse_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}

fn parse_tuple(s: &str) -> Option<(Vec<usize>, &str)> {
    let inner = s.strip_prefix('(')?;
    let end = inner.find(')')?;
    let dims = inner[..end]
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect::<Option<Vec<usize>>>()?;
    Some((dims, &inner[end + 1..]))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor, NpyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Tensor::from_npy_bytes(&bytes)
}

pub fn save_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), NpyError> {
    let path = path.as_ref();
    let bytes = tensor.to_npy_bytes()?;
    fs::write(path, bytes).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_numpy_layout() {
        let bytes = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .to_npy_bytes()
            .unwrap();
        // np.save of np.float32 [[1,2],[3,4]] produces exactly this header
        let expected_dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }";
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.starts_with(expected_dict));
        assert!(header.ends_with('\n'));
        assert_eq!(bytes.len(), 10 + hlen + 16);
    }

    #[test]
    fn one_dimensional_shape_uses_trailing_comma() {
        let bytes = Tensor::new(vec![3], vec![0.0; 3]).unwrap().to_npy_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[10..]);
        assert!(text.contains("'shape': (3,)"));
    }

    #[test]
    fn f64_descr_is_unsupported() {
        let mut bytes = Tensor::new(vec![2], vec![0.0; 2]).unwrap().to_npy_bytes().unwrap();
        let pos = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        bytes[pos + 2] = b'8';
        assert!(matches!(
            Tensor::from_npy_bytes(&bytes),
            Err(NpyError::UnsupportedDtype(d)) if d == "<f8"
        ));
    }

    #[test]
    fn fortran_order_rejected() {
        let dict = "{'descr': '<f4', 'fortran_order': True, 'shape': (1,), }";
        assert!(matches!(parse_header(dict), Err(NpyError::FortranOrder)));
    }

    #[test]
    fn truncated_and_trailing_payloads_are_distinct() {
        let bytes = Tensor::new(vec![4], vec![1.0; 4]).unwrap().to_npy_bytes().unwrap();
        assert!(matches!(
            Tensor::from_npy_bytes(&bytes[..bytes.len() - 3]),
            Err(NpyError::TruncatedPayload { expected: 16, found: 13 })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Tensor::from_npy_bytes(&long),
            Err(NpyError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn bad_magic_is_malformed() {
        assert!(matches!(
            Tensor::from_npy_bytes(b"NOTNUMPY0000"),
            Err(NpyError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_header("{'descr': '<f4', 'fortran_order': False}"),
            Err(NpyError::MalformedHeader(_))
        ));
    }

    #[test]
    fn zero_length_dimension_rejected() {
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(NpyError::InvalidShape(_))
        ));
        let t = Tensor {
            shape: vec![0, 3],
            data: vec![],
        };
        assert!(matches!(t.to_npy_bytes(), Err(NpyError::InvalidShape(_))));
    }

    #[test]
    fn non_finite_rejected_on_save() {
        let t = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.to_npy_bytes(), Err(NpyError::NonFinite)));
    }

    #[test]
    fn header_with_reordered_keys_and_double_quotes_parses() {
        let dict = "{\"shape\": (4, 5), \"fortran_order\": False, \"descr\": \"<f4\"}";
        assert_eq!(parse_header(dict).unwrap(), vec![4, 5]);
    }

    #[test]
    fn displacement_field_file_size() {
        let t = Tensor::new(vec![2, 128, 128], vec![0.0; 2 * 128 * 128]).unwrap();
        let bytes = t.to_npy_bytes().unwrap();
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!(bytes.len() - 10 - hlen, 2 * 128 * 128 * 4);
        assert_eq!(bytes.len(), 131_200);
    }
}
