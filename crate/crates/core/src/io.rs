//! Binary container shared by every array type and by cloud checkpoints.
//!
//! Layout (little-endian): magic `GSMR`, version `u16`, kind `u16`,
//! `ndims: u16`, `ndims` x `u64` dims, payload. Complex samples are stored as
//! interleaved `f32` pairs, masks as `u8`, clouds as `M: u64` followed by
//! `M` records of 12 `f32` (position, log-scale, quaternion, density).

use std::path::Path;

use num_complex::Complex64;

use crate::acquisition::KSpaceData;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianCloud};
use crate::volume::{check_dims, num_voxels, ComplexVolume, Dims, Mask};

pub const MAGIC: &[u8; 4] = b"GSMR";
pub const FORMAT_VERSION: u16 = 1;
pub const CLOUD_RECORD_FLOATS: usize = 12;
const HEADER_FIXED: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ContainerKind {
    Volume = 1,
    KSpace = 2,
    Mask = 3,
    CoilMaps = 4,
    Cloud = 5,
}

impl ContainerKind {
    pub fn from_code(code: u16) -> Result<Self> {
        Ok(match code {
            1 => Self::Volume,
            2 => Self::KSpace,
            3 => Self::Mask,
            4 => Self::CoilMaps,
            5 => Self::Cloud,
            other => return Err(Error::format("kind", format!("unknown container kind {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Volume => "volume",
            Self::KSpace => "kspace",
            Self::Mask => "mask",
            Self::CoilMaps => "coils",
            Self::Cloud => "cloud",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u16,
    pub kind: ContainerKind,
    pub dims: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Container {
    Volume(ComplexVolume),
    KSpace(KSpaceData),
    Mask(Mask),
    CoilMaps(Vec<ComplexVolume>),
    Cloud(GaussianCloud),
}

impl Container {
    pub fn kind(&self) -> ContainerKind {
        match self {
            Container::Volume(_) => ContainerKind::Volume,
            Container::KSpace(_) => ContainerKind::KSpace,
            Container::Mask(_) => ContainerKind::Mask,
            Container::CoilMaps(_) => ContainerKind::CoilMaps,
            Container::Cloud(_) => ContainerKind::Cloud,
        }
    }
}

fn to_f32(v: f64) -> Result<f32> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::format("payload", format!("value {v} is not representable as float32")));
    }
    Ok(f)
}

fn header_bytes(kind: ContainerKind, dims: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u16).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u16).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

fn put_complex(out: &mut Vec<u8>, data: &[Complex64]) -> Result<()> {
    out.reserve(8 * data.len());
    for c in data {
        out.extend_from_slice(&to_f32(c.re)?.to_le_bytes());
        out.extend_from_slice(&to_f32(c.im)?.to_le_bytes());
    }
    Ok(())
}

fn stacked_dims(volumes: &[ComplexVolume]) -> Result<Vec<u64>> {
    let first = volumes.first().ok_or_else(|| Error::InvalidArgument("no coils to write".into()))?;
    for v in volumes {
        v.ensure_dims(first.dims())?;
    }
    let d = first.dims();
    Ok(vec![volumes.len() as u64, d[0] as u64, d[1] as u64, d[2] as u64])
}

/// Serializes a container to bytes.
pub fn encode(c: &Container) -> Result<Vec<u8>> {
    let dims3 = |d: Dims| d.map(|v| v as u64).to_vec();
    let mut out;
    match c {
        Container::Volume(v) => {
            out = header_bytes(c.kind(), &dims3(v.dims()));
            put_complex(&mut out, v.data())?;
        }
        Container::KSpace(KSpaceData { coils }) | Container::CoilMaps(coils) => {
            out = header_bytes(c.kind(), &stacked_dims(coils)?);
            for v in coils {
                put_complex(&mut out, v.data())?;
            }
        }
        Container::Mask(m) => {
            out = header_bytes(c.kind(), &dims3(m.dims()));
            out.extend_from_slice(m.data());
        }
        Container::Cloud(cloud) => {
            cloud.validate()?;
            out = header_bytes(c.kind(), &[]);
            out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
            for g in cloud.iter() {
                let rec = g.position.iter().chain(&g.log_scale).chain(&g.rotation).chain(&g.density);
                for &v in rec {
                    out.extend_from_slice(&to_f32(v)?.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                field,
                format!("truncated payload: need {n} bytes at offset {}, {} left", self.pos, self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn expect_exact(&self, n: usize) -> Result<()> {
        match self.remaining().cmp(&n) {
            std::cmp::Ordering::Less => Err(Error::format(
                "payload",
                format!("truncated payload: expected {n} bytes, found {}", self.remaining()),
            )),
            std::cmp::Ordering::Greater => Err(Error::format(
                "payload",
                format!("payload has {} trailing bytes", self.remaining() - n),
            )),
            std::cmp::Ordering::Equal => Ok(()),
        }
    }

    fn f32s(&mut self, n: usize) -> Result<impl Iterator<Item = f32> + 'a> {
        let bytes = self.take(4 * n, "payload")?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())))
    }

    fn complex(&mut self, dims: Dims) -> Result<ComplexVolume> {
        let n = num_voxels(dims);
        let mut it = self.f32s(2 * n)?;
        let data = (0..n)
            .map(|_| Complex64::new(it.next().unwrap() as f64, it.next().unwrap() as f64))
            .collect();
        ComplexVolume::from_data(dims, data)
    }
}

fn parse_header(r: &mut Reader) -> Result<ContainerHeader> {
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("magic", "bad magic, not a GSMR container"));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format("version", format!("unsupported format version {version}")));
    }
    let kind = ContainerKind::from_code(r.u16("kind")?)?;
    let ndims = r.u16("ndims")? as usize;
    let dims = (0..ndims).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
    let expected_ndims = match kind {
        ContainerKind::Volume | ContainerKind::Mask => 3,
        ContainerKind::KSpace | ContainerKind::CoilMaps => 4,
        ContainerKind::Cloud => 0,
    };
    if ndims != expected_ndims {
        return Err(Error::format("ndims", format!("{} container needs {expected_ndims} dims, found {ndims}", kind.name())));
    }
    Ok(ContainerHeader { version, kind, dims })
}

fn grid(dims: &[u64]) -> Result<Dims> {
    let d: Vec<usize> = dims
        .iter()
        .map(|&v| usize::try_from(v).map_err(|_| Error::format("dims", format!("dimension {v} too large"))))
        .collect::<Result<_>>()?;
    let d = [d[0], d[1], d[2]];
    check_dims(d).map_err(|e| Error::format("dims", e.to_string()))?;
    d.iter()
        .try_fold(1usize, |acc, &v| acc.checked_mul(v))
        .and_then(|n| n.checked_mul(8 * 4))
        .ok_or_else(|| Error::format("dims", format!("dims {d:?} overflow")))?;
    Ok(d)
}

pub fn decode_header(bytes: &[u8]) -> Result<ContainerHeader> {
    parse_header(&mut Reader { buf: bytes, pos: 0 })
}

/// Parses a container from bytes.
pub fn decode(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = parse_header(&mut r)?;
    match header.kind {
        ContainerKind::Volume => {
            let d = grid(&header.dims)?;
            r.expect_exact(8 * num_voxels(d))?;
            Ok(Container::Volume(r.complex(d)?))
        }
        ContainerKind::KSpace | ContainerKind::CoilMaps => {
            let coils = usize::try_from(header.dims[0]).map_err(|_| Error::format("dims", "coil count too large"))?;
            let d = grid(&header.dims[1..])?;
            let total = coils.checked_mul(8 * num_voxels(d)).ok_or_else(|| Error::format("dims", "size overflow"))?;
            r.expect_exact(total)?;
            let vols = (0..coils).map(|_| r.complex(d)).collect::<Result<Vec<_>>>()?;
            Ok(if header.kind == ContainerKind::KSpace {
                Container::KSpace(KSpaceData { coils: vols })
            } else {
                Container::CoilMaps(vols)
            })
        }
        ContainerKind::Mask => {
            let d = grid(&header.dims)?;
            r.expect_exact(num_voxels(d))?;
            let data = r.take(num_voxels(d), "payload")?.to_vec();
            Ok(Container::Mask(Mask::from_data(d, data).map_err(|e| Error::format("payload", e.to_string()))?))
        }
        ContainerKind::Cloud => {
            let m = usize::try_from(r.u64("count")?).map_err(|_| Error::format("count", "count too large"))?;
            let total = m
                .checked_mul(4 * CLOUD_RECORD_FLOATS)
                .ok_or_else(|| Error::format("count", "count overflows"))?;
            r.expect_exact(total)?;
            let mut it = r.f32s(m * CLOUD_RECORD_FLOATS)?.map(f64::from);
            let mut cloud = GaussianCloud::with_capacity(m);
            for _ in 0..m {
                let mut next = || it.next().unwrap();
                cloud.push(Gaussian {
                    position: [next(), next(), next()],
                    log_scale: [next(), next(), next()],
                    rotation: [next(), next(), next(), next()],
                    density: [next(), next()],
                });
            }
            cloud.validate().map_err(|e| Error::format("payload", e.to_string()))?;
            Ok(Container::Cloud(cloud))
        }
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    std::fs::write(path, encode(c)?)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    decode(&std::fs::read(path)?)
}

pub fn read_header(path: &Path) -> Result<ContainerHeader> {
    use std::io::Read;
    let mut buf = Vec::new();
    std::fs::File::open(path)?.take(HEADER_FIXED as u64 + 8 * u16::MAX as u64).read_to_end(&mut buf)?;
    decode_header(&buf)
}

fn wrong_kind(expected: ContainerKind, found: ContainerKind) -> Error {
    Error::format("kind", format!("expected a {} container, found {}", expected.name(), found.name()))
}

macro_rules! typed_reader {
    ($name:ident, $variant:ident, $ty:ty) => {
        pub fn $name(path: &Path) -> Result<$ty> {
            match read_container(path)? {
                Container::$variant(v) => Ok(v),
                other => Err(wrong_kind(ContainerKind::$variant, other.kind())),
            }
        }
    };
}

typed_reader!(read_volume, Volume, ComplexVolume);
typed_reader!(read_kspace, KSpace, KSpaceData);
typed_reader!(read_mask, Mask, Mask);
typed_reader!(read_coils, CoilMaps, Vec<ComplexVolume>);
typed_reader!(read_cloud, Cloud, GaussianCloud);

/// Writes one 8-bit PGM magnitude slice at `z`, scaled to the slice maximum.
pub fn write_pgm_slice(path: &Path, v: &ComplexVolume, z: usize) -> Result<()> {
    let [nx, ny, nz] = v.dims();
    if z >= nz {
        return Err(Error::InvalidArgument(format!("slice {z} out of range 0..{nz}")));
    }
    let slice = &v.data()[z * nx * ny..(z + 1) * nx * ny];
    let peak = slice.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    out.extend(slice.iter().map(|c| if peak > 0.0 { (255.0 * c.norm() / peak).round() as u8 } else { 0 }));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelizer::voxelize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, rng: &mut impl Rng) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |_, _, _| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
    }

    fn random_cloud(n: usize, rng: &mut impl Rng) -> GaussianCloud {
        GaussianCloud::from_gaussians((0..n).map(|_| Gaussian {
            position: [0; 3].map(|_| rng.gen_range(0.0..10.0)),
            log_scale: [0; 3].map(|_| rng.gen_range(-0.5..1.0)),
            rotation: [0; 4].map(|_| rng.gen_range(-1.0..1.0)),
            density: [0; 2].map(|_| rng.gen_range(-1.0..1.0)),
        }))
    }

    #[test]
    fn every_kind_round_trips_byte_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dims = [5, 4, 3];
        let items = vec![
            Container::Volume(random_volume(dims, &mut rng)),
            Container::KSpace(KSpaceData { coils: vec![random_volume(dims, &mut rng), random_volume(dims, &mut rng)] }),
            Container::Mask(Mask::from_data(dims, (0..60).map(|i| (i % 3 == 0) as u8).collect()).unwrap()),
            Container::CoilMaps(vec![random_volume(dims, &mut rng)]),
            Container::Cloud(random_cloud(7, &mut rng)),
        ];
        for c in items {
            let bytes = encode(&c).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back.kind(), c.kind());
            assert_eq!(encode(&back).unwrap(), bytes);
            assert_eq!(decode(&encode(&back).unwrap()).unwrap(), back);
        }
    }

    #[test]
    fn cloud_round_trip_voxelizes_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stored = match decode(&encode(&Container::Cloud(random_cloud(12, &mut rng))).unwrap()).unwrap() {
            Container::Cloud(c) => c,
            _ => unreachable!(),
        };
        let again = match decode(&encode(&Container::Cloud(stored.clone())).unwrap()).unwrap() {
            Container::Cloud(c) => c,
            _ => unreachable!(),
        };
        let dims = [12; 3];
        assert_eq!(voxelize(&again, dims).unwrap(), voxelize(&stored, dims).unwrap());
    }

    #[test]
    fn header_fields_on_disk() {
        let v = ComplexVolume::zeros([2, 3, 4]);
        let b = encode(&Container::Volume(v)).unwrap();
        assert_eq!(&b[..4], b"GSMR");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 1);
        assert_eq!(u16::from_le_bytes([b[8], b[9]]), 3);
        assert_eq!(b.len(), 10 + 24 + 8 * 24);
        let h = decode_header(&b).unwrap();
        assert_eq!(h.dims, vec![2, 3, 4]);
    }

    fn field_of(e: Error) -> &'static str {
        match e {
            Error::Format { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_name_the_field() {
        let good = encode(&Container::Volume(ComplexVolume::zeros([2, 2, 2]))).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(field_of(decode(&bad).unwrap_err()), "magic");
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(field_of(decode(&bad).unwrap_err()), "version");
        let mut bad = good.clone();
        bad[6] = 42;
        assert_eq!(field_of(decode(&bad).unwrap_err()), "kind");
        let e = decode(&good[..good.len() - 3]).unwrap_err();
        assert!(e.to_string().contains("truncated payload"));
        assert!(decode(&good[..7]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert_eq!(field_of(decode(&long).unwrap_err()), "payload");
    }

    #[test]
    fn zero_quaternion_is_rejected_on_read() {
        let mut cloud = GaussianCloud::from_gaussians([Gaussian::isotropic([1.0; 3], 1.0, Complex64::new(1.0, 0.0))]);
        let mut bytes = encode(&Container::Cloud(cloud.clone())).unwrap();
        let q0 = 10 + 8 + 4 * 6;
        bytes[q0..q0 + 4].copy_from_slice(&0f32.to_le_bytes());
        assert!(decode(&bytes).is_err());
        cloud.rotations[0] = [0.0; 4];
        assert!(encode(&Container::Cloud(cloud)).is_err());
    }

    #[test]
    fn typed_readers_check_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gsmr");
        write_container(&p, &Container::Mask(Mask::full([2, 2, 2]))).unwrap();
        assert!(read_mask(&p).is_ok());
        assert_eq!(field_of(read_volume(&p).unwrap_err()), "kind");
        assert_eq!(read_header(&p).unwrap().kind, ContainerKind::Mask);
    }

    #[test]
    fn pgm_slice() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        let v = ComplexVolume::from_fn([3, 2, 2], |x, _, z| Complex64::new((x + z) as f64, 0.0));
        write_pgm_slice(&p, &v, 1).unwrap();
        let b = std::fs::read(&p).unwrap();
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&b[b.len() - 6..], &[85, 170, 255, 85, 170, 255]);
    }
}
