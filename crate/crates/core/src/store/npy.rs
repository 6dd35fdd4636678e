//! Minimal NPY v1.0 codec.
//!
//! Only C-order little-endian arrays are accepted. Headers are emitted the
//! way numpy does it (growth padding for the leading axis, then spaces up to
//! a 64-byte boundary, terminated by `\n`) so files are byte-identical to
//! `numpy.save` output for the same array.

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;
const GROWTH_AXIS_MAX_DIGITS: usize = 21;

/// Element types understood by the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    U1,
    U2,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::U1 => "|u1",
            Dtype::U2 => "<u2",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
            Dtype::U1 => 1,
            Dtype::U2 => 2,
        }
    }

    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "|u1" | "<u1" => Ok(Dtype::U1),
            "<u2" => Ok(Dtype::U2),
            other => Err(Error::MalformedHeader(format!("unsupported descr `{other}`"))),
        }
    }
}

/// Decoded header plus a borrowed view of the payload.
#[derive(Debug)]
pub struct NpyArray<'a> {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub payload: &'a [u8],
}

impl NpyArray<'_> {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parse a complete NPY file held in memory.
pub fn decode(bytes: &[u8]) -> Result<NpyArray<'_>> {
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(Error::MalformedHeader("truncated header".into()));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(text)?;
    if dict.fortran_order {
        return Err(Error::MalformedHeader("fortran_order=True is not supported".into()));
    }
    let dtype = Dtype::parse(&dict.descr)?;
    let count = dict
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    let payload = &bytes[data_start..];
    if payload.len() != count * dtype.width() {
        return Err(Error::MalformedHeader(format!(
            "payload holds {} bytes, shape {:?} of {} needs {}",
            payload.len(),
            dict.shape,
            dtype.descr(),
            count * dtype.width()
        )));
    }
    Ok(NpyArray {
        dtype,
        shape: dict.shape,
        payload,
    })
}

/// Encode the preamble and padded header for an array of `shape`.
pub fn encode_header(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_repr = match shape {
        [] => "()".to_string(),
        [one] => format!("({one},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_repr
    );
    if let Some(first) = shape.first() {
        let digits = first.to_string().len();
        dict.extend(std::iter::repeat_n(' ', GROWTH_AXIS_MAX_DIGITS.saturating_sub(digits)));
    }
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    fn parse(text: &str) -> Result<Self> {
        let mut cur = Cursor::new(text.trim_end());
        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;

        cur.expect('{')?;
        loop {
            cur.skip_ws();
            if cur.eat('}') {
                break;
            }
            let key = cur.string()?;
            cur.skip_ws();
            cur.expect(':')?;
            cur.skip_ws();
            match key.as_str() {
                "descr" => descr = Some(cur.string()?),
                "fortran_order" => fortran_order = Some(cur.boolean()?),
                "shape" => shape = Some(cur.tuple()?),
                other => return Err(Error::MalformedHeader(format!("unexpected key `{other}`"))),
            }
            cur.skip_ws();
            if !cur.eat(',') {
                cur.skip_ws();
                cur.expect('}')?;
                break;
            }
        }
        cur.skip_ws();
        if !cur.at_end() {
            return Err(Error::MalformedHeader("trailing characters after dict".into()));
        }
        let missing = |k: &str| Error::MalformedHeader(format!("missing key `{k}`"));
        Ok(HeaderDict {
            descr: descr.ok_or_else(|| missing("descr"))?,
            fortran_order: fortran_order.ok_or_else(|| missing("fortran_order"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
        })
    }
}

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { rest: text }
    }

    fn at_end(&self) -> bool {
        self.rest.is_empty()
    }

    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn eat(&mut self, c: char) -> bool {
        match self.rest.strip_prefix(c) {
            Some(rest) => {
                self.rest = rest;
                true
            }
            None => false,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::MalformedHeader(format!(
                "expected `{c}` near `{}`",
                self.rest.chars().take(16).collect::<String>()
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = if self.eat('\'') {
            '\''
        } else if self.eat('"') {
            '"'
        } else {
            return Err(Error::MalformedHeader("expected quoted string".into()));
        };
        let end = self
            .rest
            .find(quote)
            .ok_or_else(|| Error::MalformedHeader("unterminated string".into()))?;
        let s = self.rest[..end].to_string();
        self.rest = &self.rest[end + 1..];
        Ok(s)
    }

    fn boolean(&mut self) -> Result<bool> {
        if let Some(rest) = self.rest.strip_prefix("True") {
            self.rest = rest;
            Ok(true)
        } else if let Some(rest) = self.rest.strip_prefix("False") {
            self.rest = rest;
            Ok(false)
        } else {
            Err(Error::MalformedHeader("expected True or False".into()))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect('(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(')') {
                return Ok(dims);
            }
            let digits = self.rest.len() - self.rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            if digits == 0 {
                return Err(Error::MalformedHeader("expected dimension".into()));
            }
            let dim = self.rest[..digits]
                .parse()
                .map_err(|_| Error::MalformedHeader("dimension overflows".into()))?;
            dims.push(dim);
            self.rest = &self.rest[digits..];
            self.skip_ws();
            if !self.eat(',') {
                self.skip_ws();
                self.expect(')')?;
                return Ok(dims);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_numpy_layout() {
        let header = encode_header(Dtype::F4, &[2, 1, 1]);
        assert_eq!(header.len(), 128);
        let text = std::str::from_utf8(&header[10..]).unwrap();
        assert!(text.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 1, 1), }"));
        assert!(text.ends_with(" \n"));
        assert_eq!(u16::from_le_bytes([header[8], header[9]]), 118);
    }

    #[test]
    fn large_leading_axis_still_aligned() {
        for shape in [vec![21, 256, 256], vec![123456789, 2], vec![7]] {
            let header = encode_header(Dtype::U2, &shape);
            assert_eq!(header.len() % ALIGN, 0, "{shape:?}");
            assert_eq!(*header.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn parses_numpy_style_and_compact_headers() {
        for text in [
            "{'descr': '<u2', 'fortran_order': False, 'shape': (3, 4), }      \n",
            "{'shape':(3,4),'fortran_order':False,'descr':'<u2'}\n",
        ] {
            let dict = HeaderDict::parse(text).unwrap();
            assert_eq!(dict.descr, "<u2");
            assert_eq!(dict.shape, vec![3, 4]);
        }
        let one = HeaderDict::parse("{'descr': '|u1', 'fortran_order': False, 'shape': (5,), }").unwrap();
        assert_eq!(one.shape, vec![5]);
    }

    #[test]
    fn rejects_bad_preamble_and_fortran_order() {
        assert!(matches!(decode(b"NOTNPY0000"), Err(Error::MalformedHeader(_))));

        let mut bytes = encode_header(Dtype::U1, &[1]);
        bytes.push(0);
        bytes[6] = 2;
        assert!(matches!(decode(&bytes), Err(Error::MalformedHeader(_))));

        let dict = "{'descr': '|u1', 'fortran_order': True, 'shape': (1,), }\n";
        let mut bytes = b"\x93NUMPY\x01\x00".to_vec();
        bytes.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn rejects_truncated_payload_and_unknown_descr() {
        let mut bytes = encode_header(Dtype::F4, &[2]);
        bytes.extend_from_slice(&[0; 7]);
        assert!(matches!(decode(&bytes), Err(Error::MalformedHeader(_))));

        assert!(Dtype::parse(">f4").is_err());
        assert!(Dtype::parse("<i8").is_err());
    }
}
