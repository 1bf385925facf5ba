use thiserror::Error;

/// Failures while reading a PLY file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PLY format `{0}`")]
    UnsupportedFormat(String),
    #[error("vertex element lacks coordinate property `{0}`")]
    MissingCoordinate(&'static str),
    #[error("vertex element lacks color property `{0}`")]
    MissingColor(&'static str),
    #[error("truncated payload in element `{element}` at record {index}")]
    Truncated { element: String, index: usize },
    #[error("bad value `{value}` for property `{property}` in record {index}")]
    BadValue {
        property: String,
        index: usize,
        value: String,
    },
    #[error("PLY has no vertices")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("octree depth {0} outside [1, 16]")]
    InvalidDepth(u32),
    #[error("coordinate ({x}, {y}, {z}) out of range for depth {depth}")]
    CoordinateOutOfRange { x: u32, y: u32, z: u32, depth: u32 },
    #[error("voxelization produced an empty cloud")]
    EmptyAfterVoxelize,
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("layer {layer} out of range for octree of depth {depth}")]
    LayerOutOfRange { layer: usize, depth: usize },
    #[error("coefficient count mismatch: expected {expected}, got {actual}")]
    CoefficientCount { expected: usize, actual: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot binarize a zero value; zeros are carried by runs")]
    ZeroValue,
    #[error("QP {0} outside [4, 51]")]
    InvalidQp(i32),
    #[error("Lagrange constant c must be positive and finite, got {0}")]
    InvalidLambdaConstant(f64),
    #[error("skip flag {flag} unavailable for a stream with {layers} coded layers")]
    InvalidSkipFlag { flag: u8, layers: usize },
    #[error("inter mode requires a reference frame")]
    MissingReference,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u8),
    #[error("truncated container: {0}")]
    Truncated(&'static str),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("geometry mismatch between clouds: {0}")]
    GeometryMismatch(String),
    #[error("BD-rate needs at least 4 points per curve, got {0}")]
    InsufficientPoints(usize),
    #[error("RD curves do not overlap in quality")]
    NoOverlap,
    #[error("invalid RD data: {0}")]
    InvalidRdData(String),
    #[error("CSV error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
