//! NMEA 0183 sentence codec for the two sentences the pipeline consumes.
//!
//! Wire format: `$<talker><type>,<field>,<field>...*HH\r\n`, where `HH` is the
//! XOR of every byte between `$` and `*`, written as two uppercase hex digits.
//! Only `GGA` and `RMC` are converted into fixes; any other well-formed
//! sentence parses structurally and is reported as [`NmeaError::Unsupported`].

use thiserror::Error;

use crate::telemetry::{strip_line_ending, GeoFix, NmeaLine, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NmeaError {
    #[error("checksum mismatch: computed {expected:#04X}, sentence carries {found:#04X}")]
    ChecksumMismatch { expected: u8, found: u8 },
    #[error("malformed sentence: {0}")]
    Malformed(String),
    #[error("unsupported sentence type {}", .0.sentence_type())]
    Unsupported(Box<NmeaSentence>),
    #[error("no position fix")]
    NoFix,
    #[error("bad coordinate field: {0}")]
    FieldError(String),
}

/// XOR-fold of the payload bytes.
pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

/// A structurally valid sentence with a checksum that matches its payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmeaSentence {
    talker: String,
    sentence_type: String,
    fields: Vec<String>,
    checksum: u8,
}

impl NmeaSentence {
    /// Builds a sentence and computes its checksum.
    ///
    /// `talker` must be two and `sentence_type` three ASCII alphanumerics.
    /// Fields may be empty but must not contain `$`, `*`, `,` or anything
    /// outside printable ASCII.
    pub fn new<S: Into<String>>(
        talker: &str,
        sentence_type: &str,
        fields: impl IntoIterator<Item = S>,
    ) -> Result<Self, NmeaError> {
        if talker.len() != 2 || !talker.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err(NmeaError::Malformed(format!("bad talker id {talker:?}")));
        }
        if sentence_type.len() != 3 || !sentence_type.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err(NmeaError::Malformed(format!("bad sentence type {sentence_type:?}")));
        }
        let fields: Vec<String> = fields.into_iter().map(Into::into).collect();
        for f in &fields {
            if let Some(b) = f.bytes().find(|&b| !is_field_byte(b)) {
                return Err(NmeaError::Malformed(format!(
                    "field {f:?} contains forbidden byte {b:#04x}"
                )));
            }
        }
        let mut s = NmeaSentence {
            talker: talker.to_owned(),
            sentence_type: sentence_type.to_owned(),
            fields,
            checksum: 0,
        };
        s.checksum = checksum(&s.payload());
        Ok(s)
    }

    pub fn talker(&self) -> &str {
        &self.talker
    }

    pub fn sentence_type(&self) -> &str {
        &self.sentence_type
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn checksum(&self) -> u8 {
        self.checksum
    }

    pub fn is_supported(&self) -> bool {
        matches!(self.sentence_type.as_str(), "GGA" | "RMC")
    }

    /// Bytes between `$` and `*`.
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + self.fields.iter().map(|f| f.len() + 1).sum::<usize>());
        out.extend_from_slice(self.talker.as_bytes());
        out.extend_from_slice(self.sentence_type.as_bytes());
        for f in &self.fields {
            out.push(b',');
            out.extend_from_slice(f.as_bytes());
        }
        out
    }

    /// Full wire form including the trailing CRLF.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(b'$');
        out.extend_from_slice(&self.payload());
        out.extend_from_slice(format!("*{:02X}\r\n", self.checksum).as_bytes());
        out
    }

    /// Parses any well-formed sentence regardless of type.
    ///
    /// The checksum is verified before the payload is inspected, so a
    /// corrupted payload byte always surfaces as `ChecksumMismatch`.
    pub fn parse_structure(raw: &[u8]) -> Result<Self, NmeaError> {
        let line = strip_line_ending(raw);
        let rest = line
            .strip_prefix(b"$")
            .ok_or_else(|| NmeaError::Malformed("missing leading '$'".into()))?;
        let star = rest
            .iter()
            .rposition(|&b| b == b'*')
            .ok_or_else(|| NmeaError::Malformed("missing '*' checksum delimiter".into()))?;
        let (payload, tail) = (&rest[..star], &rest[star + 1..]);
        let found = parse_hex_byte(tail)
            .ok_or_else(|| NmeaError::Malformed("checksum must be two uppercase hex digits".into()))?;
        let expected = checksum(payload);
        if expected != found {
            return Err(NmeaError::ChecksumMismatch { expected, found });
        }
        if let Some(&b) = payload.iter().find(|&&b| b != b',' && !is_field_byte(b)) {
            return Err(NmeaError::Malformed(format!("forbidden byte {b:#04x} in payload")));
        }
        // Only printable ASCII survives the check above, so this cannot fail.
        let text = std::str::from_utf8(payload).expect("ascii payload");
        let mut parts = text.split(',');
        let address = parts.next().unwrap_or_default();
        if address.len() != 5 {
            return Err(NmeaError::Malformed(format!("bad address field {address:?}")));
        }
        let (talker, sentence_type) = address.split_at(2);
        let s = NmeaSentence::new(talker, sentence_type, parts)?;
        debug_assert_eq!(s.checksum, found);
        Ok(s)
    }

    /// Converts a GGA or RMC sentence carrying a valid fix into a [`GeoFix`].
    pub fn to_geo_fix(&self, t: Timestamp) -> Result<GeoFix, NmeaError> {
        // (lat, N/S, lon, E/W) field positions
        let idx = match self.sentence_type.as_str() {
            "GGA" => {
                let quality = self.field(5);
                if quality.is_empty() || quality == "0" {
                    return Err(NmeaError::NoFix);
                }
                1
            }
            "RMC" => {
                if self.field(1) != "A" {
                    return Err(NmeaError::NoFix);
                }
                2
            }
            _ => return Err(NmeaError::Unsupported(Box::new(self.clone()))),
        };
        let lat = coordinate(self.field(idx), self.field(idx + 1), 2, 'N', 'S', 90.0)?;
        let lon = coordinate(self.field(idx + 2), self.field(idx + 3), 3, 'E', 'W', 180.0)?;
        GeoFix::new(lat, lon, t).map_err(|e| NmeaError::FieldError(e.to_string()))
    }

    fn field(&self, i: usize) -> &str {
        self.fields.get(i).map(String::as_str).unwrap_or("")
    }
}

/// Parses a validated line and requires a supported sentence type.
pub fn parse_sentence(line: &NmeaLine) -> Result<NmeaSentence, NmeaError> {
    let s = NmeaSentence::parse_structure(&line.raw)?;
    if !s.is_supported() {
        return Err(NmeaError::Unsupported(Box::new(s)));
    }
    Ok(s)
}

fn is_field_byte(b: u8) -> bool {
    (0x20..0x7f).contains(&b) && !matches!(b, b'$' | b'*' | b',')
}

fn parse_hex_byte(s: &[u8]) -> Option<u8> {
    if s.len() != 2 {
        return None;
    }
    let digit = |b: u8| match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    };
    Some(digit(s[0])? * 16 + digit(s[1])?)
}

/// `[d]ddmm.mmmm` plus hemisphere letter to signed decimal degrees.
fn coordinate(
    value: &str,
    hemisphere: &str,
    degree_digits: usize,
    positive: char,
    negative: char,
    limit: f64,
) -> Result<f64, NmeaError> {
    let bad = || NmeaError::FieldError(format!("{value:?} {hemisphere:?}"));
    let whole_len = value.find('.').unwrap_or(value.len());
    if whole_len != degree_digits + 2
        || !value
            .bytes()
            .enumerate()
            .all(|(i, b)| b.is_ascii_digit() || (i == whole_len && b == b'.'))
    {
        return Err(bad());
    }
    let degrees: f64 = value[..degree_digits].parse().map_err(|_| bad())?;
    let minutes: f64 = value[degree_digits..].parse().map_err(|_| bad())?;
    if minutes >= 60.0 {
        return Err(bad());
    }
    let magnitude = degrees + minutes / 60.0;
    if magnitude > limit {
        return Err(bad());
    }
    match hemisphere.chars().collect::<Vec<_>>().as_slice() {
        [c] if *c == positive => Ok(magnitude),
        [c] if *c == negative => Ok(-magnitude),
        _ => Err(bad()),
    }
}
