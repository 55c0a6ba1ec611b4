//! Weight bank files.
//!
//! Layout (all integers little-endian):
//!
//! 1. header length `L` as `u64`;
//! 2. `L` bytes of UTF-8 JSON header, e.g.
//!    `{"format":"hetconv-weights","layout_version":1,"kind":"hetconv","in_channels":8,"out_channels":8,"kernel":3,"stride":1,"padding":1,"part":4}`
//!    (`part` is omitted for `"kind":"dense"`);
//! 3. tensor blobs (see [`crate::tensor`]) in this order:
//!    * dense: weights `(N, M, K, K)`, bias `(N, 1, 1, 1)`;
//!    * hetconv: `K×K` weights `(N, M/P, K, K)`, then `1×1` weights
//!      `(N, M − M/P, 1, 1)` only when `P > 1`, then bias `(N, 1, 1, 1)`.

use serde::{Deserialize, Serialize};

use crate::conv::{ConvGeometry, DenseFilterBank, HetConvFilterBank};
use crate::{Error, Result, Tensor4};

pub const WEIGHT_LAYOUT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "hetconv-weights";
const MAX_HEADER_LEN: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub enum WeightFile {
    Dense(DenseFilterBank),
    HetConv(HetConvFilterBank),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    layout_version: u32,
    kind: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    part: Option<usize>,
}

impl Header {
    fn new(kind: &str, g: &ConvGeometry, part: Option<usize>) -> Self {
        Header {
            format: FORMAT_TAG.to_string(),
            layout_version: WEIGHT_LAYOUT_VERSION,
            kind: kind.to_string(),
            in_channels: g.in_channels,
            out_channels: g.out_channels,
            kernel: g.kernel,
            stride: g.stride,
            padding: g.padding,
            part,
        }
    }
}

fn blob(dims: (usize, usize, usize, usize), data: &[f64]) -> Vec<u8> {
    Tensor4::from_vec(dims, data.to_vec())
        .expect("bank invariants fix blob dimensions")
        .to_blob()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn tensor(&mut self, what: &str, expected: [usize; 4]) -> Result<Vec<f64>> {
        let (t, used) =
            Tensor4::read_blob(&self.bytes[self.pos..]).map_err(|e| Error::Decode(format!("{what}: {e}")))?;
        if t.dims().as_array() != expected {
            return Err(Error::Decode(format!(
                "{what}: expected dims {expected:?}, found {:?}",
                t.dims()
            )));
        }
        self.pos += used;
        Ok(t.into_data())
    }
}

impl WeightFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (header, blobs) = match self {
            WeightFile::Dense(f) => {
                let g = f.geometry();
                let (m, n, k) = (g.in_channels, g.out_channels, g.kernel);
                (
                    Header::new("dense", g, None),
                    vec![blob((n, m, k, k), f.weights()), blob((n, 1, 1, 1), f.bias())],
                )
            }
            WeightFile::HetConv(f) => {
                let g = f.geometry();
                let (n, k) = (g.out_channels, g.kernel);
                let mut blobs = vec![blob((n, f.kxk_per_filter(), k, k), f.kxk())];
                if f.one_per_filter() > 0 {
                    blobs.push(blob((n, f.one_per_filter(), 1, 1), f.one()));
                }
                blobs.push(blob((n, 1, 1, 1), f.bias()));
                (Header::new("hetconv", g, Some(f.part())), blobs)
            }
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in blobs {
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Decode("missing header length".into()));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        if len > MAX_HEADER_LEN || len as usize > bytes.len() - 8 {
            return Err(Error::Decode(format!("bad header length {len}")));
        }
        let end = 8 + len as usize;
        let header: Header =
            serde_json::from_slice(&bytes[8..end]).map_err(|e| Error::Decode(format!("header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::Decode(format!("unknown format {:?}", header.format)));
        }
        if header.layout_version != WEIGHT_LAYOUT_VERSION {
            return Err(Error::Decode(format!(
                "unsupported layout version {}",
                header.layout_version
            )));
        }
        let g = ConvGeometry::new(
            header.in_channels,
            header.out_channels,
            header.kernel,
            header.stride,
            header.padding,
        )?;
        let (m, n, k) = (g.in_channels, g.out_channels, g.kernel);
        let mut r = Reader { bytes, pos: end };
        let file = match (header.kind.as_str(), header.part) {
            ("dense", None) => {
                let w = r.tensor("weights", [n, m, k, k])?;
                let b = r.tensor("bias", [n, 1, 1, 1])?;
                WeightFile::Dense(DenseFilterBank::new(g, w, Some(b))?)
            }
            ("hetconv", Some(p)) => {
                crate::conv::filters::check_part(m, p)?;
                let kxk = r.tensor("kxk weights", [n, m / p, k, k])?;
                let one = if p > 1 {
                    r.tensor("1x1 weights", [n, m - m / p, 1, 1])?
                } else {
                    Vec::new()
                };
                let b = r.tensor("bias", [n, 1, 1, 1])?;
                WeightFile::HetConv(HetConvFilterBank::new(g, p, kxk, one, Some(b))?)
            }
            (kind, part) => {
                return Err(Error::Decode(format!(
                    "kind {kind:?} with part {part:?} is not a valid bank"
                )))
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Decode(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(file)
    }
}
