//! Canonical CBOR, restricted to the subset CTAP2 messages use.
//!
//! Integers, byte and text strings, arrays, maps and booleans are supported.
//! Floats, tags, `null`/`undefined` and indefinite-length items are not. The
//! encoder always emits the CTAP2 canonical form (shortest argument encoding,
//! definite lengths, map keys sorted length-first then bytewise) and the
//! decoder rejects anything that is not already in that form.

use std::cmp::Ordering;

use thiserror::Error;

/// Nesting limit applied by the decoder. CTAP2 messages nest at most four deep.
pub const MAX_DEPTH: usize = 16;

const MAJOR_UNSIGNED: u8 = 0;
const MAJOR_NEGATIVE: u8 = 1;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;
const MAJOR_SIMPLE: u8 = 7;

const SIMPLE_FALSE: u8 = 20;
const SIMPLE_TRUE: u8 = 21;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CborError {
    #[error("malformed CBOR: {0}")]
    Malformed(&'static str),
    #[error("non-canonical CBOR: {0}")]
    NonCanonical(&'static str),
    #[error("map contains duplicate keys")]
    NonCanonicalizable,
}

/// A CBOR data item.
///
/// `Negative(n)` holds the raw CBOR argument, i.e. the represented integer is
/// `-1 - n`. Use [`Value::int`] and [`Value::as_int`] to work in `i64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Unsigned(u64),
    Negative(u64),
    Bytes(Vec<u8>),
    Text(String),
    Array(Vec<Value>),
    Map(Vec<(Value, Value)>),
    Bool(bool),
}

impl Value {
    pub fn int(v: i64) -> Value {
        if v >= 0 {
            Value::Unsigned(v as u64)
        } else {
            Value::Negative(!(v as u64))
        }
    }

    pub fn bytes(b: impl Into<Vec<u8>>) -> Value {
        Value::Bytes(b.into())
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    /// Builds a map with its entries in canonical key order.
    ///
    /// Duplicate keys are kept; [`encode`] reports them.
    pub fn map(entries: impl IntoIterator<Item = (Value, Value)>) -> Value {
        let mut entries: Vec<_> = entries.into_iter().collect();
        sort_canonical(&mut entries);
        Value::Map(entries)
    }

    pub fn as_int(&self) -> Option<i64> {
        match *self {
            Value::Unsigned(u) => i64::try_from(u).ok(),
            Value::Negative(n) => i64::try_from(n).ok().map(|n| -1 - n),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[(Value, Value)]> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    /// Looks up `key` in a map value.
    pub fn get(&self, key: &Value) -> Option<&Value> {
        self.as_map()?.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Looks up an integer key, the common case for CTAP2 parameter maps.
    pub fn get_int(&self, key: i64) -> Option<&Value> {
        self.get(&Value::int(key))
    }

    /// Looks up a text key.
    pub fn get_text(&self, key: &str) -> Option<&Value> {
        self.as_map()?
            .iter()
            .find(|(k, _)| k.as_text() == Some(key))
            .map(|(_, v)| v)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::int(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl From<Vec<u8>> for Value {
    fn from(b: Vec<u8>) -> Self {
        Value::Bytes(b)
    }
}

/// CTAP2 canonical ordering of two encoded keys: shorter first, then bytewise.
fn canonical_cmp(a: &[u8], b: &[u8]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

fn sort_canonical(entries: &mut [(Value, Value)]) {
    entries.sort_by_cached_key(|(k, _)| {
        let mut buf = Vec::new();
        write_value(&mut buf, k);
        (buf.len(), buf)
    });
}

fn write_head(out: &mut Vec<u8>, major: u8, arg: u64) {
    let m = major << 5;
    if arg < 24 {
        out.push(m | arg as u8);
    } else if arg <= u8::MAX as u64 {
        out.push(m | 24);
        out.push(arg as u8);
    } else if arg <= u16::MAX as u64 {
        out.push(m | 25);
        out.extend_from_slice(&(arg as u16).to_be_bytes());
    } else if arg <= u32::MAX as u64 {
        out.push(m | 26);
        out.extend_from_slice(&(arg as u32).to_be_bytes());
    } else {
        out.push(m | 27);
        out.extend_from_slice(&arg.to_be_bytes());
    }
}

// Writes `v` sorting map keys but without duplicate detection.
fn write_value(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Unsigned(u) => write_head(out, MAJOR_UNSIGNED, *u),
        Value::Negative(n) => write_head(out, MAJOR_NEGATIVE, *n),
        Value::Bytes(b) => {
            write_head(out, MAJOR_BYTES, b.len() as u64);
            out.extend_from_slice(b);
        }
        Value::Text(s) => {
            write_head(out, MAJOR_TEXT, s.len() as u64);
            out.extend_from_slice(s.as_bytes());
        }
        Value::Array(items) => {
            write_head(out, MAJOR_ARRAY, items.len() as u64);
            for item in items {
                write_value(out, item);
            }
        }
        Value::Map(entries) => {
            let mut encoded: Vec<(Vec<u8>, &Value)> = entries
                .iter()
                .map(|(k, val)| {
                    let mut kb = Vec::new();
                    write_value(&mut kb, k);
                    (kb, val)
                })
                .collect();
            encoded.sort_by(|a, b| canonical_cmp(&a.0, &b.0));
            write_head(out, MAJOR_MAP, encoded.len() as u64);
            for (kb, val) in encoded {
                out.extend_from_slice(&kb);
                write_value(out, val);
            }
        }
        Value::Bool(b) => out.push((MAJOR_SIMPLE << 5) | if *b { SIMPLE_TRUE } else { SIMPLE_FALSE }),
    }
}

fn check_unique_keys(v: &Value) -> Result<(), CborError> {
    match v {
        Value::Array(items) => items.iter().try_for_each(check_unique_keys),
        Value::Map(entries) => {
            let mut keys: Vec<Vec<u8>> = entries
                .iter()
                .map(|(k, _)| {
                    let mut kb = Vec::new();
                    write_value(&mut kb, k);
                    kb
                })
                .collect();
            keys.sort_by(|a, b| canonical_cmp(a, b));
            if keys.windows(2).any(|w| w[0] == w[1]) {
                return Err(CborError::NonCanonicalizable);
            }
            entries.iter().try_for_each(|(k, val)| {
                check_unique_keys(k)?;
                check_unique_keys(val)
            })
        }
        _ => Ok(()),
    }
}

/// Encodes `value` in CTAP2 canonical form.
pub fn encode(value: &Value) -> Result<Vec<u8>, CborError> {
    check_unique_keys(value)?;
    let mut out = Vec::new();
    write_value(&mut out, value);
    Ok(out)
}

/// Decodes exactly one canonical data item; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Value, CborError> {
    let (value, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(CborError::Malformed("trailing bytes after data item"));
    }
    Ok(value)
}

/// Decodes one canonical data item from the front of `bytes`, returning it
/// with the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Value, usize), CborError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.read_value(0)?;
    Ok((value, reader.pos))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or(CborError::Malformed("truncated input"))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn read_head(&mut self) -> Result<(u8, u8, u64), CborError> {
        let initial = self.take(1)?[0];
        let major = initial >> 5;
        let info = initial & 0x1f;
        let arg = match info {
            0..=23 => info as u64,
            24 => {
                let v = self.take(1)?[0] as u64;
                if v < 24 {
                    return Err(CborError::NonCanonical("integer argument not minimally encoded"));
                }
                v
            }
            25 => {
                let v = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64;
                if v <= u8::MAX as u64 {
                    return Err(CborError::NonCanonical("integer argument not minimally encoded"));
                }
                v
            }
            26 => {
                let v = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64;
                if v <= u16::MAX as u64 {
                    return Err(CborError::NonCanonical("integer argument not minimally encoded"));
                }
                v
            }
            27 => {
                let v = u64::from_be_bytes(self.take(8)?.try_into().unwrap());
                if v <= u32::MAX as u64 {
                    return Err(CborError::NonCanonical("integer argument not minimally encoded"));
                }
                v
            }
            31 => return Err(CborError::Malformed("indefinite-length items are not supported")),
            _ => return Err(CborError::Malformed("reserved additional information value")),
        };
        Ok((major, info, arg))
    }

    fn read_len(&self, arg: u64) -> Result<usize, CborError> {
        let len = usize::try_from(arg).map_err(|_| CborError::Malformed("length overflow"))?;
        // Every element needs at least one byte, so this bounds allocations.
        if len > self.buf.len() - self.pos {
            return Err(CborError::Malformed("truncated input"));
        }
        Ok(len)
    }

    fn read_value(&mut self, depth: usize) -> Result<Value, CborError> {
        if depth > MAX_DEPTH {
            return Err(CborError::Malformed("nesting too deep"));
        }
        let (major, info, arg) = self.read_head()?;
        match major {
            MAJOR_UNSIGNED => Ok(Value::Unsigned(arg)),
            MAJOR_NEGATIVE => Ok(Value::Negative(arg)),
            MAJOR_BYTES => {
                let len = self.read_len(arg)?;
                Ok(Value::Bytes(self.take(len)?.to_vec()))
            }
            MAJOR_TEXT => {
                let len = self.read_len(arg)?;
                let raw = self.take(len)?;
                let s = std::str::from_utf8(raw).map_err(|_| CborError::Malformed("text string is not UTF-8"))?;
                Ok(Value::Text(s.to_owned()))
            }
            MAJOR_ARRAY => {
                let len = self.read_len(arg)?;
                let mut items = Vec::with_capacity(len);
                for _ in 0..len {
                    items.push(self.read_value(depth + 1)?);
                }
                Ok(Value::Array(items))
            }
            MAJOR_MAP => {
                let len = self.read_len(arg)?;
                let mut entries = Vec::with_capacity(len);
                let mut prev_key: Option<&[u8]> = None;
                for _ in 0..len {
                    let key_start = self.pos;
                    let key = self.read_value(depth + 1)?;
                    let key_bytes = &self.buf[key_start..self.pos];
                    if let Some(prev) = prev_key {
                        match canonical_cmp(prev, key_bytes) {
                            Ordering::Less => {}
                            Ordering::Equal => return Err(CborError::NonCanonical("duplicate map key")),
                            Ordering::Greater => return Err(CborError::NonCanonical("map keys out of order")),
                        }
                    }
                    prev_key = Some(key_bytes);
                    let value = self.read_value(depth + 1)?;
                    entries.push((key, value));
                }
                Ok(Value::Map(entries))
            }
            6 => Err(CborError::Malformed("tags are not supported")),
            MAJOR_SIMPLE => match info {
                SIMPLE_FALSE => Ok(Value::Bool(false)),
                SIMPLE_TRUE => Ok(Value::Bool(true)),
                25..=27 => Err(CborError::Malformed("floats are not supported")),
                _ => Err(CborError::Malformed("unsupported simple value")),
            },
            _ => unreachable!("major type is three bits"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_is_single_byte() {
        assert_eq!(encode(&Value::Unsigned(0)).unwrap(), [0x00]);
        assert_eq!(decode(&[0x00]).unwrap(), Value::Unsigned(0));
    }

    #[test]
    fn true_decodes() {
        assert_eq!(decode(&[0xf5]).unwrap(), Value::Bool(true));
        assert_eq!(decode(&[0xf4]).unwrap(), Value::Bool(false));
    }

    #[test]
    fn positive_key_sorts_before_negative() {
        // Reference bytes from an independent canonical encoder.
        let v = Value::Map(vec![(Value::int(-1), Value::int(1)), (Value::int(1), Value::int(2))]);
        assert_eq!(encode(&v).unwrap(), [0xa2, 0x01, 0x02, 0x20, 0x01]);
    }

    #[test]
    fn mixed_keys_sort_length_first() {
        let v = Value::Map(vec![
            (Value::text("a"), Value::int(1)),
            (Value::int(3), Value::int(2)),
            (Value::int(-1), Value::int(0)),
            (Value::text("bb"), Value::int(4)),
            (Value::int(200), Value::int(5)),
        ]);
        let expected = [
            0xa5, 0x03, 0x02, 0x20, 0x00, 0x18, 0xc8, 0x05, 0x61, 0x61, 0x01, 0x62, 0x62, 0x62, 0x04,
        ];
        assert_eq!(encode(&v).unwrap(), expected);
    }

    #[test]
    fn signature_sized_byte_string_uses_two_byte_length() {
        let enc = encode(&Value::Bytes(vec![0xab; 2420])).unwrap();
        assert_eq!(&enc[..3], &[0x59, 0x09, 0x74]);
        assert_eq!(enc.len(), 2423);
    }

    #[test]
    fn integer_boundaries() {
        let cases: &[(i64, &[u8])] = &[
            (23, &[0x17]),
            (24, &[0x18, 0x18]),
            (255, &[0x18, 0xff]),
            (256, &[0x19, 0x01, 0x00]),
            (-1, &[0x20]),
            (-24, &[0x37]),
            (-25, &[0x38, 0x18]),
            (-257, &[0x39, 0x01, 0x00]),
            (65536, &[0x1a, 0x00, 0x01, 0x00, 0x00]),
        ];
        for (v, bytes) in cases {
            assert_eq!(encode(&Value::int(*v)).unwrap(), *bytes, "encoding {v}");
            assert_eq!(decode(bytes).unwrap().as_int(), Some(*v));
        }
    }

    #[test]
    fn duplicate_key_rejected_on_decode() {
        let err = decode(&[0xa2, 0x01, 0x02, 0x01, 0x02]).unwrap_err();
        assert!(matches!(err, CborError::NonCanonical(_)));
    }

    #[test]
    fn unsorted_keys_rejected_on_decode() {
        let err = decode(&[0xa2, 0x20, 0x01, 0x01, 0x02]).unwrap_err();
        assert!(matches!(err, CborError::NonCanonical(_)));
    }

    #[test]
    fn duplicate_key_rejected_on_encode() {
        let v = Value::Map(vec![(Value::int(1), Value::int(2)), (Value::int(1), Value::int(3))]);
        assert_eq!(encode(&v), Err(CborError::NonCanonicalizable));
        let nested = Value::Array(vec![v]);
        assert_eq!(encode(&nested), Err(CborError::NonCanonicalizable));
    }

    #[test]
    fn non_minimal_integer_rejected() {
        assert!(matches!(decode(&[0x18, 0x05]), Err(CborError::NonCanonical(_))));
        assert!(matches!(decode(&[0x19, 0x00, 0xff]), Err(CborError::NonCanonical(_))));
        assert!(matches!(decode(&[0x58, 0x01, 0x00]), Err(CborError::NonCanonical(_))));
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            &[][..],
            &[0x59, 0x09],             // truncated length
            &[0x43, 0x01, 0x02],       // truncated bytes
            &[0x5f, 0x41, 0x00, 0xff], // indefinite
            &[0xc2, 0x40],             // tag
            &[0xf9, 0x3c, 0x00],       // half float
            &[0xf6],                   // null
            &[0x62, 0xff, 0xfe],       // invalid UTF-8
            &[0x1c],                   // reserved
            &[0x00, 0x00],             // trailing
        ] {
            assert!(matches!(decode(bad), Err(CborError::Malformed(_))), "{bad:02x?}");
        }
    }

    #[test]
    fn huge_declared_length_does_not_allocate() {
        let bytes = [0x9b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff];
        assert!(matches!(decode(&bytes), Err(CborError::Malformed(_))));
    }

    #[test]
    fn depth_limit() {
        let mut bytes = vec![0x81; MAX_DEPTH + 2];
        bytes.push(0x00);
        assert!(matches!(decode(&bytes), Err(CborError::Malformed(_))));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            any::<u64>().prop_map(Value::Unsigned),
            any::<u64>().prop_map(Value::Negative),
            proptest::collection::vec(any::<u8>(), 0..40).prop_map(Value::Bytes),
            ".{0,12}".prop_map(Value::Text),
            any::<bool>().prop_map(Value::Bool),
        ];
        leaf.prop_recursive(4, 48, 6, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
                proptest::collection::vec((inner.clone(), inner), 0..6).prop_map(|entries| {
                    let mut seen = Vec::new();
                    let unique = entries.into_iter().filter(|(k, _)| {
                        let kb = encode(k).unwrap_or_default();
                        if seen.contains(&kb) {
                            false
                        } else {
                            seen.push(kb);
                            true
                        }
                    });
                    Value::map(unique)
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn round_trip(v in arb_value()) {
            let bytes = encode(&v).unwrap();
            prop_assert_eq!(decode(&bytes).unwrap(), v);
        }

        #[test]
        fn accepted_input_is_canonical(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            if let Ok(v) = decode(&bytes) {
                prop_assert_eq!(encode(&v).unwrap(), bytes);
            }
        }

        #[test]
        fn int_helpers_round_trip(i in any::<i64>()) {
            prop_assert_eq!(Value::int(i).as_int(), Some(i));
        }
    }
}
