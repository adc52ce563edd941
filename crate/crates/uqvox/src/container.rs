//! The SSCG container: every grid and depth map is stored as
//!
//! ```text
//! b"SSCG" | version: u32 LE (= 1) | header length: u64 LE | JSON header | payload
//! ```
//!
//! The JSON header is `{kind, dims, dtype, voxel_edge, origin, class_count?}`.
//! Payloads are little-endian and row-major: voxel grids are indexed
//! `[u][v][d]` (plus a trailing class axis for softmax grids), depth estimates
//! `[h][w][channel]`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use uqvox_core::{
    BinaryOccupancyGrid, DepthEstimate, GridGeometry, LabelGrid, ProbOccupancyGrid, SoftmaxGrid,
};

pub const MAGIC: [u8; 4] = *b"SSCG";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;
// a header is a few hundred bytes; anything huge is a corrupt length field
const MAX_HEADER: u64 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("format error: {0}")]
    Format(String),
    #[error("truncation error: {0}")]
    Truncated(String),
    #[error("validation error: {0}")]
    Validation(#[from] uqvox_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    ProbOccupancy,
    BinaryOccupancy,
    Softmax,
    Labels,
    DepthEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Uint16,
    Uint8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Uint16 => 2,
            Dtype::Uint8 => 1,
        }
    }
}

/// Depth estimate channels, in payload order.
pub const DEPTH_CHANNELS: [&str; 3] = ["mean", "sigma", "valid"];
const DEPTH_CHANNELS_NO_SIGMA: [&str; 2] = ["mean", "valid"];

/// Container header. Voxel grids carry `dims = [U, V, D]`, `voxel_edge` and
/// `origin`; depth estimates carry `dims = [H, W, C]` and their `channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: Kind,
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
}

impl Header {
    /// Number of scalars in the payload.
    pub fn element_count(&self) -> Result<usize> {
        let mut n = 1usize;
        for &d in &self.dims {
            n = n.checked_mul(d).ok_or_else(|| ContainerError::Format("dims overflow".into()))?;
        }
        Ok(n)
    }

    pub fn payload_len(&self) -> Result<usize> {
        self.element_count()?
            .checked_mul(self.dtype.size())
            .ok_or_else(|| ContainerError::Format("payload size overflow".into()))
    }

    fn geometry(&self) -> Result<GridGeometry> {
        let (Some(edge), Some(origin)) = (self.voxel_edge, self.origin) else {
            return Err(ContainerError::Format("voxel grid header needs voxel_edge and origin".into()));
        };
        let want = if self.kind == Kind::Softmax { 4 } else { 3 };
        if self.dims.len() != want {
            return Err(ContainerError::Format(format!("{:?} needs {want} dims, got {}", self.kind, self.dims.len())));
        }
        Ok(GridGeometry { dims: [self.dims[0], self.dims[1], self.dims[2]], voxel_edge: edge, origin })
    }

    fn voxel(kind: Kind, dtype: Dtype, g: &GridGeometry, class_count: Option<usize>) -> Self {
        let mut dims = g.dims.to_vec();
        if kind == Kind::Softmax {
            dims.push(class_count.unwrap_or(0));
        }
        Header {
            kind,
            dims,
            dtype,
            voxel_edge: Some(g.voxel_edge),
            origin: Some(g.origin),
            class_count,
            channels: None,
        }
    }
}

/// Any object the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Prob(ProbOccupancyGrid),
    Binary(BinaryOccupancyGrid),
    Softmax(SoftmaxGrid),
    Labels(LabelGrid),
    Depth(DepthEstimate),
}

impl Grid {
    pub fn kind(&self) -> Kind {
        match self {
            Grid::Prob(_) => Kind::ProbOccupancy,
            Grid::Binary(_) => Kind::BinaryOccupancy,
            Grid::Softmax(_) => Kind::Softmax,
            Grid::Labels(_) => Kind::Labels,
            Grid::Depth(_) => Kind::DepthEstimate,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), uqvox_core::Error> {
        match self {
            Grid::Prob(g) => g.validate(),
            Grid::Binary(g) => g.validate(),
            Grid::Softmax(g) => g.validate(),
            Grid::Labels(g) => g.validate(),
            Grid::Depth(g) => g.validate(),
        }
    }

    fn header(&self) -> Header {
        match self {
            Grid::Prob(g) => Header::voxel(Kind::ProbOccupancy, Dtype::Float32, &g.geometry, None),
            Grid::Binary(g) => Header::voxel(Kind::BinaryOccupancy, Dtype::Uint8, &g.geometry, None),
            Grid::Softmax(g) => Header::voxel(Kind::Softmax, Dtype::Float32, &g.geometry, Some(g.class_count)),
            Grid::Labels(g) => Header::voxel(Kind::Labels, Dtype::Uint16, &g.geometry, Some(g.class_count)),
            Grid::Depth(e) => {
                let channels: &[&str] = if e.sigma.is_some() { &DEPTH_CHANNELS } else { &DEPTH_CHANNELS_NO_SIGMA };
                Header {
                    kind: Kind::DepthEstimate,
                    dims: vec![e.height, e.width, channels.len()],
                    dtype: Dtype::Float32,
                    voxel_edge: None,
                    origin: None,
                    class_count: None,
                    channels: Some(channels.iter().map(|c| c.to_string()).collect()),
                }
            }
        }
    }

    fn payload(&self) -> Vec<u8> {
        fn f32s(v: &[f32]) -> Vec<u8> {
            v.iter().flat_map(|x| x.to_le_bytes()).collect()
        }
        match self {
            Grid::Prob(g) => f32s(&g.values),
            Grid::Binary(g) => g.values.clone(),
            Grid::Softmax(g) => f32s(&g.probs),
            Grid::Labels(g) => g.labels.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Grid::Depth(e) => {
                let mut out = Vec::with_capacity(e.mean.len() * 12);
                for i in 0..e.mean.len() {
                    out.extend_from_slice(&e.mean[i].to_le_bytes());
                    if let Some(s) = &e.sigma {
                        out.extend_from_slice(&s[i].to_le_bytes());
                    }
                    out.extend_from_slice(&(e.valid[i] as u8 as f32).to_le_bytes());
                }
                out
            }
        }
    }
}

macro_rules! grid_from {
    ($($variant:ident($ty:ty)),*) => {$(
        impl From<$ty> for Grid {
            fn from(g: $ty) -> Self {
                Grid::$variant(g)
            }
        }
    )*};
}
grid_from!(Prob(ProbOccupancyGrid), Binary(BinaryOccupancyGrid), Softmax(SoftmaxGrid), Labels(LabelGrid), Depth(DepthEstimate));

/// Serialize a validated grid into container bytes.
pub fn encode(grid: &Grid) -> Result<Vec<u8>> {
    grid.validate()?;
    let header = serde_json::to_vec(&grid.header()).expect("header serializes");
    let payload = grid.payload();
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Split container bytes into header and payload, checking the payload length.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(ContainerError::Format("missing SSCG magic".into()));
    }
    if bytes.len() < PREAMBLE {
        return Err(ContainerError::Truncated("file ends inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::Format(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if hlen > MAX_HEADER {
        return Err(ContainerError::Format(format!("header length {hlen} is implausible")));
    }
    let hend = PREAMBLE + hlen as usize;
    if bytes.len() < hend {
        return Err(ContainerError::Truncated("file ends inside the header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..hend])
        .map_err(|e| ContainerError::Format(format!("bad header: {e}")))?;
    let want = header.payload_len()?;
    let payload = &bytes[hend..];
    if payload.len() != want {
        return Err(ContainerError::Truncated(format!(
            "payload is {} bytes, header dims {:?} require {want}",
            payload.len(),
            header.dims
        )));
    }
    Ok((header, payload))
}

fn read_f32(p: &[u8]) -> Vec<f32> {
    p.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn expect_dtype(h: &Header, dtype: Dtype) -> Result<()> {
    if h.dtype != dtype {
        return Err(ContainerError::Format(format!("{:?} must be stored as {dtype:?}, not {:?}", h.kind, h.dtype)));
    }
    Ok(())
}

fn class_count(h: &Header) -> Result<usize> {
    h.class_count
        .ok_or_else(|| ContainerError::Format(format!("{:?} header needs class_count", h.kind)))
}

/// Parse and validate container bytes.
pub fn decode(bytes: &[u8]) -> Result<Grid> {
    let (h, p) = decode_header(bytes)?;
    let grid = match h.kind {
        Kind::ProbOccupancy => {
            expect_dtype(&h, Dtype::Float32)?;
            Grid::Prob(ProbOccupancyGrid { geometry: h.geometry()?, values: read_f32(p) })
        }
        Kind::BinaryOccupancy => {
            expect_dtype(&h, Dtype::Uint8)?;
            Grid::Binary(BinaryOccupancyGrid { geometry: h.geometry()?, values: p.to_vec() })
        }
        Kind::Softmax => {
            expect_dtype(&h, Dtype::Float32)?;
            let m = class_count(&h)?;
            if h.dims.get(3) != Some(&m) {
                return Err(ContainerError::Format(format!("softmax class axis {:?} differs from class_count {m}", h.dims.get(3))));
            }
            Grid::Softmax(SoftmaxGrid { geometry: h.geometry()?, class_count: m, probs: read_f32(p) })
        }
        Kind::Labels => {
            expect_dtype(&h, Dtype::Uint16)?;
            let labels = p.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
            Grid::Labels(LabelGrid { geometry: h.geometry()?, class_count: class_count(&h)?, labels })
        }
        Kind::DepthEstimate => {
            expect_dtype(&h, Dtype::Float32)?;
            decode_depth(&h, &read_f32(p))?
        }
    };
    grid.validate()?;
    Ok(grid)
}

fn decode_depth(h: &Header, values: &[f32]) -> Result<Grid> {
    let channels: Vec<&str> = h.channels.iter().flatten().map(String::as_str).collect();
    let with_sigma = if channels == DEPTH_CHANNELS {
        true
    } else if channels == DEPTH_CHANNELS_NO_SIGMA {
        false
    } else {
        return Err(ContainerError::Format(format!("unknown depth channels {channels:?}")));
    };
    if h.dims.len() != 3 || h.dims[2] != channels.len() {
        return Err(ContainerError::Format(format!("depth dims {:?} do not match channels", h.dims)));
    }
    let (height, width, c) = (h.dims[0], h.dims[1], h.dims[2]);
    let mut mean = Vec::with_capacity(height * width);
    let mut sigma = Vec::with_capacity(if with_sigma { height * width } else { 0 });
    let mut valid = Vec::with_capacity(height * width);
    for px in values.chunks_exact(c) {
        mean.push(px[0]);
        if with_sigma {
            sigma.push(px[1]);
        }
        let flag = px[c - 1];
        if flag != 0.0 && flag != 1.0 {
            return Err(ContainerError::Validation(uqvox_core::Error::Validation(format!(
                "valid channel must be 0 or 1, got {flag}"
            ))));
        }
        valid.push(flag == 1.0);
    }
    Ok(Grid::Depth(DepthEstimate { height, width, mean, sigma: with_sigma.then_some(sigma), valid }))
}

/// Read and validate a container file.
pub fn read_grid(path: &Path) -> Result<Grid> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Write a grid atomically: the bytes go to a temporary file in the target
/// directory which is renamed over `path` once fully flushed.
pub fn write_grid(grid: &Grid, path: &Path) -> Result<()> {
    let bytes = encode(grid)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(bytes)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ContainerError::Io(e.error))?;
    Ok(())
}

macro_rules! typed_reader {
    ($(#[$doc:meta] $name:ident => $variant:ident($ty:ty), $kind:ident;)*) => {$(
        #[$doc]
        pub fn $name(path: &Path) -> Result<$ty> {
            match read_grid(path)? {
                Grid::$variant(g) => Ok(g),
                other => Err(ContainerError::Format(format!(
                    "{} holds {:?}, expected {:?}",
                    path.display(),
                    other.kind(),
                    Kind::$kind
                ))),
            }
        }
    )*};
}

typed_reader! {
    /// Read a probabilistic occupancy grid.
    read_prob => Prob(ProbOccupancyGrid), ProbOccupancy;
    /// Read a binary occupancy grid.
    read_binary => Binary(BinaryOccupancyGrid), BinaryOccupancy;
    /// Read a softmax grid.
    read_softmax => Softmax(SoftmaxGrid), Softmax;
    /// Read a label grid.
    read_labels => Labels(LabelGrid), Labels;
    /// Read a depth estimate.
    read_depth => Depth(DepthEstimate), DepthEstimate;
}
