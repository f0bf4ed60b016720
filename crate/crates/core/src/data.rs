//! Binary datasets: the shifting-bar generator, IDX ingestion and
//! threshold binarization, and the newline-delimited bit-string file format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{DbmError, Result};

/// Binary visible vectors of one common dimension. Each vector carries equal
/// weight in the empirical distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDataset {
    dim: usize,
    vectors: Vec<Vec<u8>>,
}

impl BinaryDataset {
    pub fn new(vectors: Vec<Vec<u8>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(DbmError::shape(format!("vector {i} has dimension {}, expected {dim}", v.len())));
            }
            if v.iter().any(|&b| b > 1) {
                return Err(DbmError::shape(format!("vector {i} has a non-binary entry")));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<u8>] {
        &self.vectors
    }

    /// First `n` vectors (or all of them).
    pub fn head(&self, n: usize) -> Self {
        Self {
            dim: self.dim,
            vectors: self.vectors.iter().take(n).cloned().collect(),
        }
    }

    /// `(v, q(v))` for each distinct vector, sorted by vector.
    pub fn empirical_distribution(&self) -> Vec<(Vec<u8>, f64)> {
        let mut counts: BTreeMap<&[u8], usize> = BTreeMap::new();
        for v in &self.vectors {
            *counts.entry(v.as_slice()).or_default() += 1;
        }
        let n = self.vectors.len() as f64;
        counts.into_iter().map(|(v, c)| (v.to_vec(), c as f64 / n)).collect()
    }

    /// One `0`/`1` string per line.
    pub fn to_bit_strings(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.dim + 1));
        for v in &self.vectors {
            out.extend(v.iter().map(|&b| if b == 1 { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    pub fn from_bit_strings(text: &str) -> Result<Self> {
        let mut vectors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v = line
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    other => Err(DbmError::Config(format!("line {}: unexpected character {other:?}", lineno + 1))),
                })
                .collect::<Result<Vec<u8>>>()?;
            vectors.push(v);
        }
        Self::new(vectors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bit_strings()).map_err(|e| DbmError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DbmError::io(path, e))?;
        Self::from_bit_strings(&text)
    }
}

/// The `n_v` cyclic shifts of a block of `bar_len` ones, each once.
pub fn shifting_bar(n_v: usize, bar_len: usize) -> Result<BinaryDataset> {
    if bar_len == 0 || bar_len >= n_v {
        return Err(DbmError::domain(format!("bar length must be in [1, {n_v}), got {bar_len}")));
    }
    let vectors = (0..n_v)
        .map(|shift| {
            let mut v = vec![0u8; n_v];
            for k in 0..bar_len {
                v[(shift + k) % n_v] = 1;
            }
            v
        })
        .collect();
    BinaryDataset::new(vectors)
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Number of items along the first dimension.
    pub fn count(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Bytes per item (product of the remaining dimensions).
    pub fn item_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn item(&self, i: usize) -> &[u8] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Serializes back to IDX bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, 0x08, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn truncated(offset: usize, what: &str) -> DbmError {
    DbmError::Format {
        offset,
        message: format!("file truncated while reading {what}"),
    }
}

/// Parses an unsigned-byte IDX file: a big-endian magic `0x000008NN` (`NN` =
/// number of dimensions), `NN` big-endian `u32` sizes, then the payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let header: [u8; 4] = bytes.get(..4).ok_or_else(|| truncated(bytes.len(), "magic"))?.try_into().unwrap();
    let magic = u32::from_be_bytes(header);
    if header[0] != 0 || header[1] != 0 || header[2] != 0x08 || header[3] == 0 {
        return Err(DbmError::Format {
            offset: 0,
            message: format!("unsupported IDX magic 0x{magic:08x}"),
        });
    }
    let ndims = usize::from(header[3]);
    let mut dims = Vec::with_capacity(ndims);
    for k in 0..ndims {
        let off = 4 + 4 * k;
        let b = bytes.get(off..off + 4).ok_or_else(|| truncated(bytes.len(), "dimension sizes"))?;
        dims.push(u32::from_be_bytes(b.try_into().unwrap()) as usize);
    }
    let start = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    let payload = bytes.get(start..start + len).ok_or_else(|| truncated(bytes.len(), "payload"))?;
    if bytes.len() > start + len {
        return Err(DbmError::Format {
            offset: start + len,
            message: format!("{} trailing bytes after payload", bytes.len() - start - len),
        });
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DbmError::io(path, e))?;
    parse_idx(&bytes)
}

/// `pixel >= threshold → 1`, one flattened vector per item.
pub fn binarize(images: &IdxArray, threshold: u8) -> BinaryDataset {
    let vectors = (0..images.count())
        .map(|i| images.item(i).iter().map(|&p| u8::from(p >= threshold)).collect())
        .collect();
    BinaryDataset {
        dim: images.item_len(),
        vectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> Vec<u8> {
        s.bytes().map(|b| b - b'0').collect()
    }

    #[test]
    fn shifting_bar_small() {
        let d = shifting_bar(4, 2).unwrap();
        let expected: Vec<Vec<u8>> = ["1100", "0110", "0011", "1001"].iter().map(|s| bits(s)).collect();
        assert_eq!(d.vectors(), &expected[..]);
        assert_eq!(shifting_bar(12, 6).unwrap().empirical_distribution().len(), 12);
        assert!(shifting_bar(4, 4).is_err());
        assert!(shifting_bar(4, 0).is_err());
    }

    #[test]
    fn shifting_bar_entropy() {
        let q = shifting_bar(12, 6).unwrap().empirical_distribution();
        let h: f64 = -q.iter().map(|(_, p)| p * p.ln()).sum::<f64>();
        assert!((h - 12f64.ln()).abs() < 1e-12);
        assert!((-h + 2.484_906_649_788_000_3).abs() < 1e-12);
    }

    /// 2 images of 2×2: [0, 127, 128, 255] and [9, 200, 0, 130].
    fn fixture() -> Vec<u8> {
        let mut f = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        f.extend_from_slice(&[0, 127, 128, 255, 9, 200, 0, 130]);
        f
    }

    #[test]
    fn idx_fixture() {
        let arr = parse_idx(&fixture()).unwrap();
        assert_eq!(arr.dims, vec![2, 2, 2]);
        assert_eq!(arr.count(), 2);
        assert_eq!(arr.item(0), &[0, 127, 128, 255]);
        assert_eq!(arr.item(1), &[9, 200, 0, 130]);
        assert_eq!(arr.to_bytes(), fixture());
        let d = binarize(&arr, 128);
        assert_eq!(d.vectors(), &[bits("0011"), bits("0101")]);
    }

    #[test]
    fn idx_labels_magic() {
        let bytes = [0x00, 0x00, 0x08, 0x01, 0, 0, 0, 3, 7, 2, 1];
        let arr = parse_idx(&bytes).unwrap();
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()), IDX_LABELS_MAGIC);
        assert_eq!(arr.dims, vec![3]);
        assert_eq!(arr.data, vec![7, 2, 1]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = fixture();
        bad[2] = 0x0D;
        match parse_idx(&bad) {
            Err(DbmError::Format { offset: 0, message }) => assert!(message.contains("0x00000d03"), "{message}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&[]), Err(DbmError::Format { offset: 0, .. })));
        let short = &fixture()[..14];
        assert!(matches!(parse_idx(short), Err(DbmError::Format { offset: 14, .. })));
        let mut long = fixture();
        long.push(1);
        assert!(parse_idx(&long).is_err());
    }

    #[test]
    fn binarize_boundaries() {
        let arr = IdxArray {
            dims: vec![1, 3],
            data: vec![0, 0, 0],
        };
        assert_eq!(binarize(&arr, 128).vectors(), &[vec![0, 0, 0]]);
        let arr = IdxArray {
            dims: vec![1, 2],
            data: vec![128, 127],
        };
        assert_eq!(binarize(&arr, 128).vectors(), &[vec![1, 0]]);
    }

    #[test]
    fn bit_string_format() {
        let d = shifting_bar(4, 2).unwrap();
        assert_eq!(d.to_bit_strings(), "1100\n0110\n0011\n1001\n");
        assert_eq!(BinaryDataset::from_bit_strings(&d.to_bit_strings()).unwrap(), d);
        assert!(BinaryDataset::from_bit_strings("10\n1x\n").is_err());
        assert!(BinaryDataset::from_bit_strings("10\n101\n").is_err());
    }

    proptest! {
        #[test]
        fn shifting_bar_rows_distinct_with_bar_len_ones(n_v in 2usize..40, frac in 0.0f64..1.0) {
            let bar_len = 1 + ((n_v - 1) as f64 * frac) as usize % (n_v - 1);
            let d = shifting_bar(n_v, bar_len).unwrap();
            prop_assert_eq!(d.len(), n_v);
            prop_assert_eq!(d.empirical_distribution().len(), n_v);
            for v in d.vectors() {
                prop_assert_eq!(v.iter().map(|&b| usize::from(b)).sum::<usize>(), bar_len);
            }
        }

        #[test]
        fn binarize_idempotent_on_binary(data in proptest::collection::vec(0u8..2, 1..64)) {
            let arr = IdxArray { dims: vec![1, data.len()], data: data.clone() };
            let once = binarize(&arr, 1);
            prop_assert_eq!(&once.vectors()[0], &data);
            let again = IdxArray { dims: vec![1, data.len()], data: once.vectors()[0].clone() };
            prop_assert_eq!(binarize(&again, 1), once);
        }

        #[test]
        fn idx_round_trip(n in 1usize..5, rows in 1usize..4, cols in 1usize..4, seed in any::<u64>()) {
            let data: Vec<u8> = (0..n * rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let arr = IdxArray { dims: vec![n, rows, cols], data };
            prop_assert_eq!(parse_idx(&arr.to_bytes()).unwrap(), arr);
        }
    }
}
