//! Self-describing model checkpoints.
//!
//! A text header of `key=value` lines closed by `end_header`, then named
//! arrays in a fixed order. Each array is
//! `u32 name length | name | u64 count | count × f64`, all little-endian.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::data::{feature_names, NormStats};
use crate::model::{FactorBank, Layer, LayerDims, ModelError, ModelKind, ModelParams};
use crate::training::TrainConfig;

pub const MAGIC: &str = "dffw-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
const END_HEADER: &str = "end_header";

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(String),
    #[error("not a checkpoint (missing magic line)")]
    BadMagic,
    #[error("unsupported format_version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("header: {0}")]
    Header(String),
    #[error("truncated array {name}")]
    TruncatedArray { name: String },
    #[error("expected array {expected}, found {found}")]
    UnexpectedArray { expected: String, found: String },
    #[error("array {name} has {found} values, dims require {expected}")]
    LengthMismatch { name: String, expected: usize, found: usize },
    #[error("trailing bytes after last array")]
    TrailingBytes,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CheckpointError {
    /// Stable identifier for scripts.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::Io(_) => "io",
            CheckpointError::BadMagic => "bad_magic",
            CheckpointError::VersionMismatch { .. } => "version_mismatch",
            CheckpointError::Header(_) => "bad_header",
            CheckpointError::TruncatedArray { .. } => "truncated_array",
            CheckpointError::UnexpectedArray { .. } => "unexpected_array",
            CheckpointError::LengthMismatch { .. } => "length_mismatch",
            CheckpointError::TrailingBytes => "trailing_bytes",
            CheckpointError::Model(_) => "invalid_params",
        }
    }
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e.to_string())
    }
}

/// Where a model came from, beyond its training config.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub init_seed: u64,
    pub init_std: f64,
    pub data_seed: u64,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub norm: NormStats,
    pub train: TrainConfig,
    pub provenance: Provenance,
}

fn array_names(kind: ModelKind) -> Vec<String> {
    let mut names = Vec::new();
    let banks: &[&str] = if kind == ModelKind::Dffw { &["bank1", "bank2"] } else { &["bank1"] };
    for bank in banks {
        for layer in Layer::ALL {
            names.push(format!("{bank}.{}", layer.as_str()));
        }
    }
    for n in ["a", "b", "c", "sigma", "sigma_hist", "norm.mean", "norm.std"] {
        names.push(n.to_string());
    }
    names
}

impl Checkpoint {
    fn arrays(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for bank in self.params.banks() {
            for layer in Layer::ALL {
                out.push(bank.weight(layer).iter().copied().collect());
            }
        }
        let p = &self.params;
        for v in [&p.a, &p.b, &p.c, &p.sigma, &p.sigma_hist] {
            out.push(v.to_vec());
        }
        out.push(self.norm.mean.clone());
        out.push(self.norm.std.clone());
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        self.params.validate()?;
        let d = &self.params.dims;
        let t = &self.train;
        let pv = &self.provenance;
        let degenerate: Vec<String> = self.norm.degenerate.iter().map(usize::to_string).collect();
        let header = [
            MAGIC.to_string(),
            format!("format_version={FORMAT_VERSION}"),
            format!("kind={}", self.params.kind()),
            format!("dims.n_v={}", d.n_v),
            format!("dims.n_h={}", d.n_h),
            format!("dims.n_hist={}", d.n_hist),
            format!("dims.n_l={}", d.n_l),
            format!("dims.n_f1={}", d.n_f1),
            format!("dims.n_f2={}", d.n_f2),
            format!("train.alpha={}", t.alpha),
            format!("train.rho={}", t.rho),
            format!("train.gamma={}", t.gamma),
            format!("train.cd_steps={}", t.cd_steps),
            format!("train.epochs={}", t.epochs),
            format!("train.seed={}", t.seed),
            format!("init.seed={}", pv.init_seed),
            format!("init.std={}", pv.init_std),
            format!("data.seed={}", pv.data_seed),
            format!("data.history_len={}", pv.history_len),
            format!("norm.n_present={}", self.norm.n_present),
            format!("norm.degenerate={}", degenerate.join(";")),
            END_HEADER.to_string(),
        ];
        for line in header {
            writeln!(out, "{line}")?;
        }
        for (name, values) in array_names(self.params.kind()).iter().zip(self.arrays()) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(values.len() as u64).to_le_bytes())?;
            for x in values {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        Checkpoint::read(bytes.as_slice())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Checkpoint, CheckpointError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        let header = Header::parse(&mut cur)?;
        let d = header.dims;
        let kind = d.kind();
        if kind != header.kind {
            return Err(CheckpointError::Header(format!("kind {} disagrees with dims.n_f2={}", header.kind, d.n_f2)));
        }
        let n_present = header.n_present;
        if n_present != d.n_v {
            return Err(CheckpointError::Header(format!("norm.n_present={n_present} but dims.n_v={}", d.n_v)));
        }
        let width = d.n_v + d.n_hist;
        let expected_len = |name: &str| -> usize {
            let (bank_f, rest) = match name.split_once('.') {
                Some(("bank1", rest)) => (d.n_f1, rest),
                Some(("bank2", rest)) => (d.n_f2, rest),
                _ => (0, name),
            };
            match rest {
                "w_v" => d.n_v * bank_f,
                "w_h" => d.n_h * bank_f,
                "w_hist" => d.n_hist * bank_f,
                "w_l" => d.n_l * bank_f,
                "a" | "sigma" => d.n_v,
                "b" => d.n_h,
                "c" => d.n_l,
                "sigma_hist" => d.n_hist,
                _ => width,
            }
        };
        let mut arrays = Vec::new();
        for name in array_names(kind) {
            arrays.push(cur.array(&name, expected_len(&name))?);
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes);
        }
        let mut it = arrays.into_iter();
        let mut bank = |n_f: usize| -> FactorBank {
            let mut m = |rows: usize| Array2::from_shape_vec((rows, n_f), it.next().expect("array count fixed by kind")).expect("length checked");
            let w_v = m(d.n_v);
            let w_h = m(d.n_h);
            let w_hist = m(d.n_hist);
            let w_l = m(d.n_l);
            FactorBank { w_v, w_h, w_hist, w_l }
        };
        let bank1 = bank(d.n_f1);
        let bank2 = (kind == ModelKind::Dffw).then(|| bank(d.n_f2));
        let mut vec = || Array1::from_vec(it.next().expect("array count fixed by kind"));
        let (a, b, c, sigma, sigma_hist) = (vec(), vec(), vec(), vec(), vec());
        let (mean, std) = (vec().to_vec(), vec().to_vec());
        let params = ModelParams { dims: d, bank1, bank2, a, b, c, sigma, sigma_hist };
        params.validate()?;
        let norm = NormStats {
            names: feature_names(n_present, d.n_hist),
            mean,
            std,
            degenerate: header.degenerate,
            n_present,
        };
        Ok(Checkpoint { params, norm, train: header.train, provenance: header.provenance })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn line(&mut self) -> Option<String> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        self.pos += end + 1;
        Some(String::from_utf8_lossy(&rest[..end]).into_owned())
    }

    fn array(&mut self, name: &str, expected: usize) -> Result<Vec<f64>, CheckpointError> {
        let truncated = || CheckpointError::TruncatedArray { name: name.to_string() };
        let name_len = u32::from_le_bytes(self.take(4).ok_or_else(truncated)?.try_into().expect("4 bytes")) as usize;
        let found = self.take(name_len).ok_or_else(truncated)?;
        if found != name.as_bytes() {
            return Err(CheckpointError::UnexpectedArray {
                expected: name.to_string(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let count = u64::from_le_bytes(self.take(8).ok_or_else(truncated)?.try_into().expect("8 bytes"));
        if count != expected as u64 {
            return Err(CheckpointError::LengthMismatch { name: name.to_string(), expected, found: count as usize });
        }
        let data = self.take(expected * 8).ok_or_else(truncated)?;
        Ok(data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

struct Header {
    kind: ModelKind,
    dims: LayerDims,
    train: TrainConfig,
    provenance: Provenance,
    n_present: usize,
    degenerate: Vec<usize>,
}

impl Header {
    fn parse(cur: &mut Cursor) -> Result<Header, CheckpointError> {
        if cur.line().as_deref() != Some(MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        let mut kv = std::collections::HashMap::new();
        loop {
            let line = cur.line().ok_or_else(|| CheckpointError::Header("missing end_header".into()))?;
            if line == END_HEADER {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Header(format!("malformed line '{line}'")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| CheckpointError::Header(format!("missing key {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, CheckpointError> {
            v.parse().map_err(|_| CheckpointError::Header(format!("bad value for {k}: '{v}'")))
        }
        let version: u32 = num("format_version", get("format_version")?)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        let n = |k: &str| -> Result<usize, CheckpointError> { num(k, get(k)?) };
        let f = |k: &str| -> Result<f64, CheckpointError> { num(k, get(k)?) };
        let u = |k: &str| -> Result<u64, CheckpointError> { num(k, get(k)?) };
        let kind: ModelKind = get("kind")?.parse().map_err(|e: String| CheckpointError::Header(e))?;
        let dims = LayerDims {
            n_v: n("dims.n_v")?,
            n_h: n("dims.n_h")?,
            n_hist: n("dims.n_hist")?,
            n_l: n("dims.n_l")?,
            n_f1: n("dims.n_f1")?,
            n_f2: n("dims.n_f2")?,
        };
        let train = TrainConfig {
            alpha: f("train.alpha")?,
            rho: f("train.rho")?,
            gamma: f("train.gamma")?,
            cd_steps: n("train.cd_steps")?,
            epochs: n("train.epochs")?,
            seed: u("train.seed")?,
        };
        let provenance = Provenance {
            init_seed: u("init.seed")?,
            init_std: f("init.std")?,
            data_seed: u("data.seed")?,
            history_len: n("data.history_len")?,
        };
        let degenerate = get("norm.degenerate")?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| num("norm.degenerate", s))
            .collect::<Result<_, _>>()?;
        Ok(Header { kind, dims, train, provenance, n_present: n("norm.n_present")?, degenerate })
    }
}
