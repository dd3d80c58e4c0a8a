//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use super::{Datatype, Volume, VolumeError};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum NiftiError {
    #[error("file too short for a NIfTI-1 header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("sizeof_hdr is {0}, expected 348")]
    HeaderSize(i32),
    #[error("bad magic {0:?}, expected single-file \"n+1\"")]
    BadMagic([u8; 4]),
    #[error("cannot determine byte order: dim[0] = {0}")]
    BadDimCount(i16),
    #[error("unsupported dimensions {0:?}: only 3D volumes are accepted")]
    UnsupportedDims([i16; 8]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("payload truncated: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("gzip stream: {0}")]
    Gzip(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        match self.endian {
            Endian::Little => i32::from_le_bytes(b),
            Endian::Big => i32::from_be_bytes(b),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_bits(self.i32(at) as u32)
    }
}

pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B
}

/// Parses a NIfTI-1 volume, transparently handling a gzip container.
///
/// Scale slope/intercept are applied to the voxel values. When scaling yields
/// values the on-disk type cannot hold, the volume is promoted to float32.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| NiftiError::Gzip(e.to_string()))?;
        return parse_raw(&raw);
    }
    parse_raw(bytes)
}

fn parse_raw(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TruncatedHeader(bytes.len()));
    }
    let le = i16::from_le_bytes([bytes[40], bytes[41]]);
    let endian = if (1..=7).contains(&le) {
        Endian::Little
    } else {
        let be = i16::from_be_bytes([bytes[40], bytes[41]]);
        if (1..=7).contains(&be) {
            Endian::Big
        } else {
            return Err(NiftiError::BadDimCount(le));
        }
    };
    let r = Reader { bytes, endian };

    let sizeof_hdr = r.i32(0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(NiftiError::HeaderSize(sizeof_hdr));
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != MAGIC_SINGLE {
        return Err(NiftiError::BadMagic(magic));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    let ndim = dim[0] as usize;
    let axis = |i: usize| -> i16 {
        if i <= ndim {
            dim[i]
        } else {
            1
        }
    };
    if (1..=3).any(|i| axis(i) < 1) || (4..=7).any(|i| axis(i) != 1) {
        return Err(NiftiError::UnsupportedDims(dim));
    }
    let dims = [axis(1) as usize, axis(2) as usize, axis(3) as usize];

    let code = r.i16(70);
    let (datatype, width) = match code {
        DT_UINT8 => (Datatype::Uint8, 1),
        DT_INT16 => (Datatype::Int16, 2),
        DT_FLOAT32 => (Datatype::Float32, 4),
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };

    let spacing = [1, 2, 3].map(|i| {
        let p = r.f32(76 + 4 * i).abs();
        if p.is_finite() && p > 0.0 {
            p
        } else {
            1.0
        }
    });

    let vox_offset = r.f32(108);
    let offset = if vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 {
        vox_offset as usize
    } else {
        DATA_OFFSET
    };
    let count = dims[0] * dims[1] * dims[2];
    let needed = offset + count * width;
    if bytes.len() < needed {
        return Err(NiftiError::TruncatedPayload {
            needed,
            available: bytes.len(),
        });
    }

    let payload = Reader {
        bytes: &bytes[offset..needed],
        endian,
    };
    let mut data: Vec<f32> = (0..count)
        .map(|i| match datatype {
            Datatype::Uint8 => payload.bytes[i] as f32,
            Datatype::Int16 => payload.i16(2 * i) as f32,
            Datatype::Float32 => payload.f32(4 * i),
        })
        .collect();

    let slope = r.f32(112);
    let inter = r.f32(116);
    let scaled = slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    let mut datatype = datatype;
    if scaled {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        for v in &mut data {
            *v = *v * slope + inter;
        }
        if data.iter().any(|v| !datatype.represents(*v)) {
            datatype = Datatype::Float32;
        }
    }

    Ok(Volume::new(dims, spacing, datatype, data)?)
}

/// Serializes a volume as little-endian single-file NIfTI-1.
pub fn write_nifti(v: &Volume) -> Vec<u8> {
    let (code, bitpix, width) = match v.datatype() {
        Datatype::Uint8 => (DT_UINT8, 8i16, 1),
        Datatype::Int16 => (DT_INT16, 16, 2),
        Datatype::Float32 => (DT_FLOAT32, 32, 4),
    };
    let dims = v.dims();
    let mut out = vec![0u8; DATA_OFFSET + v.data().len() * width];
    let put_i16 = |out: &mut [u8], at: usize, x: i16| out[at..at + 2].copy_from_slice(&x.to_le_bytes());
    let put_i32 = |out: &mut [u8], at: usize, x: i32| out[at..at + 4].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |out: &mut [u8], at: usize, x: f32| out[at..at + 4].copy_from_slice(&x.to_le_bytes());

    put_i32(&mut out, 0, HEADER_SIZE as i32);
    out[38] = b'r';
    let dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut out, 40 + 2 * i, *d);
    }
    put_i16(&mut out, 70, code);
    put_i16(&mut out, 72, bitpix);
    let spacing = v.spacing();
    let pixdim = [1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut out, 76 + 4 * i, *p);
    }
    put_f32(&mut out, 108, DATA_OFFSET as f32);
    put_f32(&mut out, 112, 1.0);
    put_f32(&mut out, 116, 0.0);
    // xyzt_units: millimeters
    out[123] = 2;
    out[344..348].copy_from_slice(MAGIC_SINGLE);

    let body = &mut out[DATA_OFFSET..];
    for (i, &value) in v.data().iter().enumerate() {
        match v.datatype() {
            Datatype::Uint8 => body[i] = value as u8,
            Datatype::Int16 => body[2 * i..2 * i + 2].copy_from_slice(&(value as i16).to_le_bytes()),
            Datatype::Float32 => body[4 * i..4 * i + 4].copy_from_slice(&value.to_le_bytes()),
        }
    }
    out
}

/// [`write_nifti`] wrapped in a gzip container (mtime 0, so output is reproducible).
pub fn write_nifti_gz(v: &Volume) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&write_nifti(v))
        .expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hand-assembled header, independent of `write_nifti`, used as the parse oracle.
    fn reference_file(big_endian: bool, dims: [i16; 3], code: i16, payload: &[u8]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        let i16b = |x: i16| if big_endian { x.to_be_bytes() } else { x.to_le_bytes() };
        let i32b = |x: i32| if big_endian { x.to_be_bytes() } else { x.to_le_bytes() };
        let f32b = |x: f32| if big_endian { x.to_be_bytes() } else { x.to_le_bytes() };
        h[0..4].copy_from_slice(&i32b(348));
        h[40..42].copy_from_slice(&i16b(3));
        for (i, d) in dims.iter().enumerate() {
            h[42 + 2 * i..44 + 2 * i].copy_from_slice(&i16b(*d));
        }
        h[70..72].copy_from_slice(&i16b(code));
        for i in 0..3 {
            h[80 + 4 * i..84 + 4 * i].copy_from_slice(&f32b(0.5 + i as f32));
        }
        h[108..112].copy_from_slice(&f32b(352.0));
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        h
    }

    fn int16_payload(values: &[i16], big_endian: bool) -> Vec<u8> {
        values
            .iter()
            .flat_map(|v| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() })
            .collect()
    }

    const VALUES: [i16; 8] = [-1000, -1, 0, 1, 40, 300, 1200, i16::MAX];

    #[test]
    fn reference_int16_volume_parses() {
        let file = reference_file(false, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, false));
        let v = parse_nifti(&file).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.spacing(), [0.5, 1.5, 2.5]);
        assert_eq!(v.datatype(), Datatype::Int16);
        let expected: Vec<f32> = VALUES.iter().map(|&x| x as f32).collect();
        assert_eq!(v.data(), &expected[..]);
    }

    #[test]
    fn big_endian_detected_from_dim0() {
        let file = reference_file(true, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, true));
        let le = parse_nifti(&reference_file(false, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, false))).unwrap();
        assert_eq!(parse_nifti(&file).unwrap(), le);
    }

    #[test]
    fn gzip_parses_identically() {
        let file = reference_file(false, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, false));
        let mut enc = GzEncoder::new(Vec::new(), Compression::best());
        enc.write_all(&file).unwrap();
        let gz = enc.finish().unwrap();
        assert!(is_gzip(&gz));
        assert_eq!(parse_nifti(&gz).unwrap(), parse_nifti(&file).unwrap());
    }

    #[test]
    fn header_size_violation() {
        let mut file = reference_file(false, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, false));
        file[0..4].copy_from_slice(&540i32.to_le_bytes());
        assert_eq!(parse_nifti(&file), Err(NiftiError::HeaderSize(540)));
    }

    #[test]
    fn distinct_errors() {
        let good = reference_file(false, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, false));

        let mut bad_magic = good.clone();
        bad_magic[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_nifti(&bad_magic), Err(NiftiError::BadMagic(_))));

        let mut bad_type = good.clone();
        bad_type[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert_eq!(parse_nifti(&bad_type), Err(NiftiError::UnsupportedDatatype(64)));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(
            parse_nifti(truncated),
            Err(NiftiError::TruncatedPayload { needed: 368, available: 367 })
        ));

        assert_eq!(parse_nifti(&good[..100]), Err(NiftiError::TruncatedHeader(100)));
    }

    #[test]
    fn slope_intercept_applied() {
        let mut file = reference_file(false, [2, 2, 2], DT_INT16, &int16_payload(&VALUES, false));
        file[112..116].copy_from_slice(&1.0f32.to_le_bytes());
        file[116..120].copy_from_slice(&(-1024.0f32).to_le_bytes());
        let v = parse_nifti(&file).unwrap();
        assert_eq!(v.datatype(), Datatype::Int16);
        assert_eq!(v.data()[4], 40.0 - 1024.0);

        file[112..116].copy_from_slice(&0.5f32.to_le_bytes());
        let v = parse_nifti(&file).unwrap();
        assert_eq!(v.datatype(), Datatype::Float32);
        assert_eq!(v.data()[3], 0.5 - 1024.0);
    }

    #[test]
    fn single_uint8_voxel_round_trip() {
        let v = Volume::new([1, 1, 1], [1.0, 1.0, 1.0], Datatype::Uint8, vec![7.0]).unwrap();
        let parsed = parse_nifti(&write_nifti(&v)).unwrap();
        assert_eq!(parsed.data(), &[7.0]);
        assert_eq!(parsed, v);
    }

    fn arb_volume() -> impl Strategy<Value = Volume> {
        (1usize..6, 1usize..6, 1usize..6, 0usize..3, 0.1f32..4.0).prop_flat_map(|(w, h, d, t, s)| {
            let n = w * h * d;
            let data = match t {
                0 => prop::collection::vec((0u8..=255).prop_map(|x| x as f32), n).boxed(),
                1 => prop::collection::vec(any::<i16>().prop_map(|x| x as f32), n).boxed(),
                _ => prop::collection::vec(-5000.0f32..5000.0, n).boxed(),
            };
            let dt = [Datatype::Uint8, Datatype::Int16, Datatype::Float32][t];
            data.prop_map(move |data| Volume::new([w, h, d], [s, s * 2.0, s * 0.5], dt, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(v in arb_volume(), gz in any::<bool>()) {
            let bytes = if gz { write_nifti_gz(&v) } else { write_nifti(&v) };
            prop_assert_eq!(parse_nifti(&bytes).unwrap(), v);
        }
    }
}
