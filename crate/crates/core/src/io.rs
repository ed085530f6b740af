//! Archive format for channels and measurement bundles.
//!
//! An archive is a directory holding `manifest.txt` and one `<name>.bin` per
//! array. The manifest is `key = value` lines (`#` starts a comment):
//!
//! ```text
//! format = dris-archive
//! version = 1
//! kind = measurements
//! m_bs = 4
//! m_ue = 2
//! m_s1 = 30
//! m_s2 = 20
//! i = 30
//! j = 20
//! k = 2
//! seed = 7
//! sigma2 = 0.01
//! array.y_ris1 = 4x2x30
//! ```
//!
//! Array files start with the magic `DRSA`, a little-endian `u16` version
//! and `u16` rank, then one `u64` per dimension, then the entries as
//! interleaved `f64` real and imaginary parts in column-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::{ChannelSet, MeasurementBundle, SystemDims};
use crate::tensor::{Complex, ComplexMatrix, Tensor3};

pub const MAGIC: &[u8; 4] = b"DRSA";
pub const ARRAY_VERSION: u16 = 1;
pub const MANIFEST_FORMAT: &str = "dris-archive";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
/// Upper bound on entries in one array, to refuse absurd headers early.
pub const MAX_ENTRIES: usize = 1 << 28;

const HEADER_LEN: usize = 8;
const ENTRY_LEN: usize = 16;

/// A decoded array of rank 1 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<Complex>,
}

impl Array {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn from_tensor(t: &Tensor3) -> Self {
        Self {
            dims: t.dims().to_vec(),
            data: t.as_slice().to_vec(),
        }
    }

    pub fn into_matrix(self) -> Result<ComplexMatrix> {
        match self.dims[..] {
            [r, c] => Ok(ComplexMatrix::from_vec(r, c, self.data)),
            _ => Err(Error::Format(format!("expected a matrix, got dims {:?}", self.dims))),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor3> {
        match self.dims[..] {
            [a, b, c] => Tensor3::from_vec([a, b, c], self.data),
            _ => Err(Error::Format(format!("expected a 3-way tensor, got dims {:?}", self.dims))),
        }
    }
}

fn entry_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ENTRIES)
        .ok_or_else(|| Error::Format(format!("array dims {dims:?} are too large")))
}

pub fn encode_array(a: &Array) -> Result<Vec<u8>> {
    if !(1..=3).contains(&a.dims.len()) {
        return Err(Error::Format(format!("rank {} is not supported", a.dims.len())));
    }
    if entry_count(&a.dims)? != a.data.len() {
        return Err(Error::Format(format!(
            "{} entries do not fill dims {:?}",
            a.data.len(),
            a.dims
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * a.dims.len() + ENTRY_LEN * a.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
    out.extend_from_slice(&(a.dims.len() as u16).to_le_bytes());
    for &d in &a.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for z in &a.data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> Option<[u8; N]> {
    bytes.get(at..at + N)?.try_into().ok()
}

/// Parses an array file, rejecting truncated or oversized payloads and
/// non-finite entries.
pub fn decode_array(bytes: &[u8]) -> Result<Array> {
    let short = || Error::Format("array header is truncated".into());
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Format("missing DRSA magic".into()));
    }
    let version = u16::from_le_bytes(take(bytes, 4).ok_or_else(short)?);
    if version != ARRAY_VERSION {
        return Err(Error::Format(format!("unsupported array version {version}")));
    }
    let rank = u16::from_le_bytes(take(bytes, 6).ok_or_else(short)?) as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::Format(format!("rank {rank} is not supported")));
    }
    let mut dims = Vec::with_capacity(rank);
    for r in 0..rank {
        let d = u64::from_le_bytes(take(bytes, HEADER_LEN + 8 * r).ok_or_else(short)?);
        dims.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} is too large")))?);
    }
    let n = entry_count(&dims)?;
    let body = &bytes[HEADER_LEN + 8 * rank..];
    if body.len() != n * ENTRY_LEN {
        return Err(Error::Format(format!(
            "payload has {} bytes, dims {dims:?} need {}",
            body.len(),
            n * ENTRY_LEN
        )));
    }
    let data = body
        .chunks_exact(ENTRY_LEN)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            if re.is_finite() && im.is_finite() {
                Ok(Complex::new(re, im))
            } else {
                Err(Error::Format("array holds a non-finite entry".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Array { dims, data })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchiveKind {
    Channels,
    Measurements,
}

impl ArchiveKind {
    fn name(self) -> &'static str {
        match self {
            ArchiveKind::Channels => "channels",
            ArchiveKind::Measurements => "measurements",
        }
    }

    fn array_names(self) -> &'static [&'static str] {
        match self {
            ArchiveKind::Channels => &["g1", "g2", "h1", "h2", "t"],
            ArchiveKind::Measurements => &["y_ris1", "y_ris2", "y1c", "y2c", "y3_gen"],
        }
    }
}

/// Shapes every array of `kind` must have for `d`.
fn expected_dims(kind: ArchiveKind, name: &str, d: &SystemDims) -> Vec<usize> {
    let (b, u, s1, s2, i, j) = (d.m_bs, d.m_ue, d.m_s1, d.m_s2, d.i_frames, d.j_frames);
    match (kind, name) {
        (ArchiveKind::Channels, "g1") => vec![s1, u],
        (ArchiveKind::Channels, "g2") => vec![s2, u],
        (ArchiveKind::Channels, "h1") => vec![b, s1],
        (ArchiveKind::Channels, "h2") => vec![b, s2],
        (ArchiveKind::Channels, "t") => vec![s2, s1],
        (ArchiveKind::Measurements, "y_ris1") => vec![b, u, i],
        (ArchiveKind::Measurements, "y_ris2") => vec![b, u, j],
        (ArchiveKind::Measurements, "y1c") => vec![u, (j + 1) * b, i],
        (ArchiveKind::Measurements, "y2c") => vec![b, (i + 1) * u, j],
        (ArchiveKind::Measurements, "y3_gen") => vec![j * b, i * u],
        _ => unreachable!("unknown array {name}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub kind: ArchiveKind,
    pub dims: SystemDims,
    pub seed: Option<u64>,
    pub sigma2: Option<f64>,
    /// Declared shape of each array.
    pub arrays: BTreeMap<String, Vec<usize>>,
}

impl Manifest {
    pub fn new(kind: ArchiveKind, dims: SystemDims) -> Self {
        let arrays = kind
            .array_names()
            .iter()
            .map(|&n| (n.to_string(), expected_dims(kind, n, &dims)))
            .collect();
        Self {
            kind,
            dims,
            seed: None,
            sigma2: None,
            arrays,
        }
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut s = format!(
            "format = {MANIFEST_FORMAT}\nversion = {MANIFEST_VERSION}\nkind = {}\n",
            self.kind.name()
        );
        for (k, v) in [
            ("m_bs", d.m_bs),
            ("m_ue", d.m_ue),
            ("m_s1", d.m_s1),
            ("m_s2", d.m_s2),
            ("i", d.i_frames),
            ("j", d.j_frames),
            ("k", d.k_pilots),
        ] {
            s += &format!("{k} = {v}\n");
        }
        if let Some(seed) = self.seed {
            s += &format!("seed = {seed}\n");
        }
        if let Some(sigma2) = self.sigma2 {
            s += &format!("sigma2 = {sigma2:e}\n");
        }
        for (name, dims) in &self.arrays {
            let shape: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            s += &format!("array.{name} = {}\n", shape.join("x"));
        }
        s
    }
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("manifest line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| line_err(line, format!("{key} = {v:?} is not a valid number")))
}

/// Parses and validates a manifest. Every key must appear at most once,
/// unknown keys are rejected and the declared array shapes must agree with
/// the dims.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut fields: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| line_err(n, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(line_err(n, "empty key"));
        }
        if fields.insert(k.to_string(), (n, v.to_string())).is_some() {
            return Err(line_err(n, format!("duplicate key {k:?}")));
        }
    }
    let mut get = |key: &str| fields.remove(key);
    let required = |f: Option<(usize, String)>, key: &str| {
        f.ok_or_else(|| Error::Format(format!("manifest is missing {key:?}")))
    };

    let (n, format) = required(get("format"), "format")?;
    if format != MANIFEST_FORMAT {
        return Err(line_err(n, format!("unknown format {format:?}")));
    }
    let (n, version) = required(get("version"), "version")?;
    if parse_num::<u32>(n, "version", &version)? != MANIFEST_VERSION {
        return Err(line_err(n, format!("unsupported version {version}")));
    }
    let (n, kind) = required(get("kind"), "kind")?;
    let kind = match kind.as_str() {
        "channels" => ArchiveKind::Channels,
        "measurements" => ArchiveKind::Measurements,
        other => return Err(line_err(n, format!("unknown kind {other:?}"))),
    };
    let mut dim = |key: &str| -> Result<usize> {
        let (n, v) = required(get(key), key)?;
        parse_num(n, key, &v)
    };
    let dims = SystemDims {
        m_bs: dim("m_bs")?,
        m_ue: dim("m_ue")?,
        m_s1: dim("m_s1")?,
        m_s2: dim("m_s2")?,
        i_frames: dim("i")?,
        j_frames: dim("j")?,
        k_pilots: dim("k")?,
    };
    dims.validate()?;
    let seed = get("seed").map(|(n, v)| parse_num(n, "seed", &v)).transpose()?;
    let sigma2 = get("sigma2")
        .map(|(n, v)| {
            let s: f64 = parse_num(n, "sigma2", &v)?;
            if s.is_finite() && s >= 0.0 {
                Ok(s)
            } else {
                Err(line_err(n, format!("sigma2 = {v} must be finite and ≥ 0")))
            }
        })
        .transpose()?;

    let mut arrays = BTreeMap::new();
    for &name in kind.array_names() {
        let key = format!("array.{name}");
        let (n, v) = required(get(&key), &key)?;
        let shape = v
            .split('x')
            .map(|p| parse_num::<usize>(n, &key, p.trim()))
            .collect::<Result<Vec<_>>>()?;
        let want = expected_dims(kind, name, &dims);
        if shape != want {
            return Err(line_err(n, format!("{key} is {shape:?}, dims imply {want:?}")));
        }
        arrays.insert(name.to_string(), shape);
    }
    if let Some((k, (n, _))) = fields.into_iter().next() {
        return Err(line_err(n, format!("unknown key {k:?}")));
    }
    Ok(Manifest {
        kind,
        dims,
        seed,
        sigma2,
        arrays,
    })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn write_archive(dir: &Path, manifest: &Manifest, arrays: &[(&str, Array)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, a) in arrays {
        write_atomic(&dir.join(format!("{name}.bin")), &encode_array(a)?)?;
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())
}

fn read_archive(dir: &Path, kind: ArchiveKind) -> Result<(Manifest, BTreeMap<String, Array>)> {
    let manifest = parse_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.kind != kind {
        return Err(Error::Format(format!(
            "archive holds {}, expected {}",
            manifest.kind.name(),
            kind.name()
        )));
    }
    let mut arrays = BTreeMap::new();
    for (name, dims) in &manifest.arrays {
        let a = decode_array(&fs::read(dir.join(format!("{name}.bin")))?)?;
        if &a.dims != dims {
            return Err(Error::Format(format!(
                "{name}.bin has dims {:?}, manifest declares {dims:?}",
                a.dims
            )));
        }
        arrays.insert(name.clone(), a);
    }
    Ok((manifest, arrays))
}

pub fn write_channels(dir: &Path, ch: &ChannelSet, dims: &SystemDims, seed: Option<u64>) -> Result<()> {
    ch.check_shapes(dims)?;
    let mut manifest = Manifest::new(ArchiveKind::Channels, *dims);
    manifest.seed = seed;
    let m = Array::from_matrix;
    let arrays = [
        ("g1", m(&ch.g1)),
        ("g2", m(&ch.g2)),
        ("h1", m(&ch.h1)),
        ("h2", m(&ch.h2)),
        ("t", m(&ch.t)),
    ];
    write_archive(dir, &manifest, &arrays)
}

pub fn read_channels(dir: &Path) -> Result<(ChannelSet, Manifest)> {
    let (manifest, mut arrays) = read_archive(dir, ArchiveKind::Channels)?;
    let mut take = |n: &str| arrays.remove(n).expect("validated by the manifest").into_matrix();
    let ch = ChannelSet {
        g1: take("g1")?,
        g2: take("g2")?,
        h1: take("h1")?,
        h2: take("h2")?,
        t: take("t")?,
    };
    Ok((ch, manifest))
}

pub fn write_measurements(
    dir: &Path,
    b: &MeasurementBundle,
    dims: &SystemDims,
    seed: Option<u64>,
    sigma2: Option<f64>,
) -> Result<()> {
    let mut manifest = Manifest::new(ArchiveKind::Measurements, *dims);
    manifest.seed = seed;
    manifest.sigma2 = sigma2;
    let t = Array::from_tensor;
    let arrays = [
        ("y_ris1", t(&b.y_ris1)),
        ("y_ris2", t(&b.y_ris2)),
        ("y1c", t(&b.y1c)),
        ("y2c", t(&b.y2c)),
        ("y3_gen", Array::from_matrix(&b.y3_gen)),
    ];
    for (name, a) in &arrays {
        let want = &manifest.arrays[*name];
        if &a.dims != want {
            return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected {want:?}", a.dims)));
        }
    }
    write_archive(dir, &manifest, &arrays)
}

pub fn read_measurements(dir: &Path) -> Result<(MeasurementBundle, Manifest)> {
    let (manifest, mut arrays) = read_archive(dir, ArchiveKind::Measurements)?;
    let mut take = |n: &str| arrays.remove(n).expect("validated by the manifest");
    let b = MeasurementBundle {
        y_ris1: take("y_ris1").into_tensor()?,
        y_ris2: take("y_ris2").into_tensor()?,
        y1c: take("y1c").into_tensor()?,
        y2c: take("y2c").into_tensor()?,
        y3_gen: take("y3_gen").into_matrix()?,
    };
    Ok((b, manifest))
}
