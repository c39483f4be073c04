//! Self-describing binary payloads.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DGRD" | version u16 = 1 | kind u8 | elem u8 | ndim u8 | 3 reserved bytes
//!        | ndim x u64 dims | data bytes (row-major) | crc32(data) u32
//! ```
//!
//! A byte blob is written as a one-dimensional byte array with kind 1. A
//! key-value record (kind 2, ndim 0) stores in its data section a `u32` entry
//! count followed by `u16` key length, key bytes and a complete nested payload
//! for every entry.

use std::io::{self, Write};

use num_complex::Complex64;

use crate::element::Element;

pub const MAGIC: &[u8; 4] = b"DGRD";
pub const VERSION: u16 = 1;
pub const MAX_DIMS: usize = 4;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 1 + 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ElemType {
    F64 = 0,
    F32 = 1,
    I64 = 2,
    I32 = 3,
    U64 = 4,
    C64 = 5,
    Byte = 6,
}

impl ElemType {
    pub fn size(self) -> usize {
        match self {
            ElemType::F64 | ElemType::I64 | ElemType::U64 => 8,
            ElemType::F32 | ElemType::I32 => 4,
            ElemType::C64 => 16,
            ElemType::Byte => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ElemType::F64,
            1 => ElemType::F32,
            2 => ElemType::I64,
            3 => ElemType::I32,
            4 => ElemType::U64,
            5 => ElemType::C64,
            6 => ElemType::Byte,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Dense = 0,
    Blob = 1,
    Record = 2,
}

/// Element storage of a dense payload.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
    I32(Vec<i32>),
    U64(Vec<u64>),
    C64(Vec<Complex64>),
    Byte(Vec<u8>),
}

impl ArrayData {
    pub fn elem_type(&self) -> ElemType {
        match self {
            ArrayData::F64(_) => ElemType::F64,
            ArrayData::F32(_) => ElemType::F32,
            ArrayData::I64(_) => ElemType::I64,
            ArrayData::I32(_) => ElemType::I32,
            ArrayData::U64(_) => ElemType::U64,
            ArrayData::C64(_) => ElemType::C64,
            ArrayData::Byte(_) => ElemType::Byte,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::C64(v) => v.len(),
            ArrayData::Byte(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, w: &mut ChecksumWriter<'_, dyn Write + '_>) -> io::Result<()> {
        match self {
            ArrayData::F64(v) => write_chunked(w, v, |x, out| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F32(v) => write_chunked(w, v, |x, out| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I64(v) => write_chunked(w, v, |x, out| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I32(v) => write_chunked(w, v, |x, out| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U64(v) => write_chunked(w, v, |x, out| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::C64(v) => write_chunked(w, v, |x, out| {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }),
            ArrayData::Byte(v) => w.write_all(v),
        }
    }

    fn read_le(elem: ElemType, bytes: &[u8]) -> ArrayData {
        fn conv<T, const N: usize>(bytes: &[u8], f: impl Fn([u8; N]) -> T) -> Vec<T> {
            bytes
                .chunks_exact(N)
                .map(|c| f(c.try_into().expect("chunk size")))
                .collect()
        }
        match elem {
            ElemType::F64 => ArrayData::F64(conv(bytes, f64::from_le_bytes)),
            ElemType::F32 => ArrayData::F32(conv(bytes, f32::from_le_bytes)),
            ElemType::I64 => ArrayData::I64(conv(bytes, i64::from_le_bytes)),
            ElemType::I32 => ArrayData::I32(conv(bytes, i32::from_le_bytes)),
            ElemType::U64 => ArrayData::U64(conv(bytes, u64::from_le_bytes)),
            ElemType::C64 => ArrayData::C64(conv(bytes, |b: [u8; 16]| {
                let (re, im) = b.split_at(8);
                Complex64::new(
                    f64::from_le_bytes(re.try_into().unwrap()),
                    f64::from_le_bytes(im.try_into().unwrap()),
                )
            })),
            ElemType::Byte => ArrayData::Byte(bytes.to_vec()),
        }
    }
}

/// A typed, shaped array of up to four dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: ArrayData,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self, String> {
        if shape.len() > MAX_DIMS {
            return Err(format!("{} dimensions exceed the maximum of {MAX_DIMS}", shape.len()));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(format!(
                "shape {shape:?} holds {count} elements but data has {}",
                data.len()
            ));
        }
        Ok(DenseArray { shape, data })
    }

    pub fn from_vec<T: Element>(shape: Vec<usize>, values: Vec<T>) -> Result<Self, String> {
        DenseArray::new(shape, T::into_data(values))
    }

    pub fn vector<T: Element>(values: Vec<T>) -> Self {
        let n = values.len();
        DenseArray {
            shape: vec![n],
            data: T::into_data(values),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn elem_type(&self) -> ElemType {
        self.data.elem_type()
    }

    pub fn into_parts(self) -> (Vec<usize>, ArrayData) {
        (self.shape, self.data)
    }

    pub fn into_vec<T: Element>(self) -> Option<Vec<T>> {
        T::from_data(self.data)
    }
}

/// One message body.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Dense(DenseArray),
    Blob(Vec<u8>),
    Record(Vec<(String, Payload)>),
}

impl Payload {
    pub fn empty() -> Self {
        Payload::Blob(Vec::new())
    }

    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Dense(_) => PayloadKind::Dense,
            Payload::Blob(_) => PayloadKind::Blob,
            Payload::Record(_) => PayloadKind::Record,
        }
    }

    pub fn as_dense(&self) -> Option<&DenseArray> {
        match self {
            Payload::Dense(d) => Some(d),
            _ => None,
        }
    }

    pub fn into_dense(self) -> Option<DenseArray> {
        match self {
            Payload::Dense(d) => Some(d),
            _ => None,
        }
    }

    pub fn field(&self, key: &str) -> Option<&Payload> {
        match self {
            Payload::Record(entries) => entries.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    /// Size of the encoded form in bytes.
    pub fn encoded_len(&self) -> usize {
        let (ndim, data) = match self {
            Payload::Dense(d) => (d.shape.len(), d.data.len() * d.elem_type().size()),
            Payload::Blob(b) => (1, b.len()),
            Payload::Record(entries) => (
                0,
                4 + entries
                    .iter()
                    .map(|(k, v)| 2 + k.len() + v.encoded_len())
                    .sum::<usize>(),
            ),
        };
        HEADER_LEN + 8 * ndim + data + 4
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Streams the encoded payload into `w`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        self.write_dyn(w)
    }

    fn write_dyn(&self, w: &mut dyn Write) -> io::Result<()> {
        let (kind, elem, dims): (PayloadKind, ElemType, Vec<u64>) = match self {
            Payload::Dense(d) => (
                PayloadKind::Dense,
                d.elem_type(),
                d.shape.iter().map(|&x| x as u64).collect(),
            ),
            Payload::Blob(b) => (PayloadKind::Blob, ElemType::Byte, vec![b.len() as u64]),
            Payload::Record(_) => (PayloadKind::Record, ElemType::Byte, Vec::new()),
        };
        let mut header = Vec::with_capacity(HEADER_LEN + 8 * dims.len());
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.push(kind as u8);
        header.push(elem as u8);
        header.push(dims.len() as u8);
        header.extend_from_slice(&[0; 3]);
        for d in &dims {
            header.extend_from_slice(&d.to_le_bytes());
        }
        w.write_all(&header)?;

        let mut cw = ChecksumWriter::new(w);
        match self {
            Payload::Dense(d) => d.data.write_le(&mut cw)?,
            Payload::Blob(b) => cw.write_all(b)?,
            Payload::Record(entries) => {
                let count = u32::try_from(entries.len())
                    .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many record entries"))?;
                cw.write_all(&count.to_le_bytes())?;
                for (key, value) in entries {
                    let len = u16::try_from(key.len())
                        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "record key too long"))?;
                    cw.write_all(&len.to_le_bytes())?;
                    cw.write_all(key.as_bytes())?;
                    value.write_dyn(&mut cw)?;
                }
            }
        }
        let crc = cw.finish();
        w.write_all(&crc.to_le_bytes())
    }

    /// Decodes one payload that must span the whole buffer.
    pub fn decode(bytes: &[u8]) -> Result<Payload, String> {
        let (payload, used) = Payload::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(format!("{} trailing bytes after payload", bytes.len() - used));
        }
        Ok(payload)
    }

    /// Decodes one payload from the front of `bytes`, returning it and the number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Payload, usize), String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("truncated header ({} bytes)", bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err("bad magic".to_string());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let kind = bytes[6];
        let elem = ElemType::from_code(bytes[7]).ok_or_else(|| format!("unknown element type {}", bytes[7]))?;
        let ndim = bytes[8] as usize;
        if ndim > MAX_DIMS {
            return Err(format!("{ndim} dimensions exceed the maximum of {MAX_DIMS}"));
        }
        let mut pos = HEADER_LEN;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = read_u64(bytes, pos)?;
            shape.push(usize::try_from(d).map_err(|_| "dimension overflows usize".to_string())?);
            pos += 8;
        }
        let data_start = pos;

        let payload = match kind {
            0 | 1 => {
                let count = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or("element count overflows")?;
                let len = count.checked_mul(elem.size()).ok_or("byte length overflows")?;
                let end = data_start.checked_add(len).ok_or("byte length overflows")?;
                if end > bytes.len() {
                    return Err(format!("data section needs {len} bytes, {} available", bytes.len() - data_start));
                }
                pos = end;
                let data = &bytes[data_start..end];
                if kind == 1 {
                    if elem != ElemType::Byte || ndim != 1 {
                        return Err("blob must be a one-dimensional byte array".to_string());
                    }
                    Payload::Blob(data.to_vec())
                } else {
                    Payload::Dense(DenseArray {
                        shape,
                        data: ArrayData::read_le(elem, data),
                    })
                }
            }
            2 => {
                if ndim != 0 {
                    return Err("record must have ndim 0".to_string());
                }
                let count = read_u32(bytes, pos)? as usize;
                pos += 4;
                let mut entries = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    let klen = read_u16(bytes, pos)? as usize;
                    pos += 2;
                    let key = bytes
                        .get(pos..pos + klen)
                        .ok_or("truncated record key")?;
                    let key = String::from_utf8(key.to_vec()).map_err(|_| "record key is not UTF-8")?;
                    pos += klen;
                    let (value, used) = Payload::decode_prefix(&bytes[pos..])?;
                    pos += used;
                    entries.push((key, value));
                }
                Payload::Record(entries)
            }
            other => return Err(format!("unknown payload kind {other}")),
        };

        let stored = read_u32(bytes, pos).map_err(|_| "missing checksum".to_string())?;
        let actual = crc32fast::hash(&bytes[data_start..pos]);
        if stored != actual {
            return Err(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"));
        }
        Ok((payload, pos + 4))
    }
}

impl From<DenseArray> for Payload {
    fn from(d: DenseArray) -> Self {
        Payload::Dense(d)
    }
}

fn read_u64(bytes: &[u8], pos: usize) -> Result<u64, String> {
    bytes
        .get(pos..pos + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| "truncated header dimensions".to_string())
}

fn read_u32(bytes: &[u8], pos: usize) -> Result<u32, String> {
    bytes
        .get(pos..pos + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| "truncated u32 field".to_string())
}

fn read_u16(bytes: &[u8], pos: usize) -> Result<u16, String> {
    bytes
        .get(pos..pos + 2)
        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| "truncated u16 field".to_string())
}

struct ChecksumWriter<'a, W: Write + ?Sized> {
    inner: &'a mut W,
    hasher: crc32fast::Hasher,
}

impl<'a, W: Write + ?Sized> ChecksumWriter<'a, W> {
    fn new(inner: &'a mut W) -> Self {
        ChecksumWriter {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn finish(self) -> u32 {
        self.hasher.finalize()
    }
}

impl<W: Write + ?Sized> Write for ChecksumWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn write_chunked<T>(
    w: &mut ChecksumWriter<'_, dyn Write + '_>,
    values: &[T],
    put: impl Fn(&T, &mut Vec<u8>),
) -> io::Result<()> {
    const CHUNK: usize = 8192;
    let mut buf = Vec::with_capacity(CHUNK * 16);
    for chunk in values.chunks(CHUNK) {
        buf.clear();
        for v in chunk {
            put(v, &mut buf);
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let p = Payload::Dense(DenseArray::from_vec(vec![2], vec![1.0f64, 2.0]).unwrap());
        let bytes = p.encode();
        assert_eq!(&bytes[0..4], b"DGRD");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes[7], 0);
        assert_eq!(bytes[8], 1);
        assert_eq!(&bytes[9..12], &[0, 0, 0]);
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 8 + 16 + 4);
        assert_eq!(bytes.len(), p.encoded_len());
        let crc = crc32fast::hash(&bytes[20..36]);
        assert_eq!(&bytes[36..40], &crc.to_le_bytes());
    }

    #[test]
    fn complex_round_trip() {
        let v = vec![Complex64::new(1.5, -2.25), Complex64::new(f64::MIN_POSITIVE, 1e300)];
        let p = Payload::Dense(DenseArray::from_vec(vec![1, 2], v).unwrap());
        assert_eq!(Payload::decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn nested_record_round_trip() {
        let inner = Payload::Record(vec![("x".into(), Payload::Blob(vec![9, 8, 7]))]);
        let p = Payload::Record(vec![
            ("a".into(), Payload::Dense(DenseArray::vector(vec![1i32, -2, 3]))),
            ("nested".into(), inner),
            ("empty".into(), Payload::Dense(DenseArray::from_vec::<u64>(vec![0, 3], vec![]).unwrap())),
        ]);
        let bytes = p.encode();
        assert_eq!(bytes.len(), p.encoded_len());
        assert_eq!(Payload::decode(&bytes).unwrap(), p);
        assert_eq!(p.field("a").unwrap().kind(), PayloadKind::Dense);
    }

    #[test]
    fn rejects_corruption() {
        let p = Payload::Dense(DenseArray::vector(vec![1.0f32, 2.0, 3.0]));
        let mut bytes = p.encode();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Payload::decode(&bad_magic).unwrap_err().contains("magic"));
        let truncated = &bytes[..bytes.len() - 6];
        assert!(Payload::decode(truncated).is_err());
        let n = bytes.len();
        bytes[n - 6] ^= 0xff;
        assert!(Payload::decode(&bytes).unwrap_err().contains("checksum"));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(DenseArray::from_vec(vec![2, 2], vec![1.0f64; 3]).is_err());
        assert!(DenseArray::from_vec(vec![1, 1, 1, 1, 1], vec![1.0f64]).is_err());
    }
}
