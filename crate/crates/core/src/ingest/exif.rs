//! Minimal JPEG/Exif reader for the handful of tags the pipeline uses.
//!
//! Only IFD0, the Exif sub-IFD and the GPS sub-IFD are walked. MakerNotes
//! and thumbnails (IFD1) are ignored.

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use thiserror::Error;

use crate::geodesy::GeoCoord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExifError {
    #[error("not a JPEG file (missing SOI marker)")]
    NotJpeg,
    #[error("no APP1 Exif segment")]
    NoExif,
    #[error("Exif data carries no GPS position")]
    MissingGeotag,
    #[error("malformed Exif at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
}

/// Everything the reader could recover; every field is optional because
/// phones omit tags freely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExifData {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub gps: Option<GeoCoord>,
    pub heading: Option<f64>,
    pub timestamp: Option<DateTime<Utc>>,
    pub focal35: Option<f64>,
    /// Set when `focal35` came from FocalLength rather than the
    /// 35 mm-equivalent tag.
    pub focal_unscaled: bool,
    pub orientation: Option<u16>,
}

const TAG_IMAGE_WIDTH: u16 = 0x0100;
const TAG_IMAGE_LENGTH: u16 = 0x0101;
const TAG_ORIENTATION: u16 = 0x0112;
const TAG_EXIF_IFD: u16 = 0x8769;
const TAG_GPS_IFD: u16 = 0x8825;
const TAG_DATETIME_ORIGINAL: u16 = 0x9003;
const TAG_OFFSET_TIME_ORIGINAL: u16 = 0x9011;
const TAG_FOCAL_LENGTH: u16 = 0x920A;
const TAG_PIXEL_X: u16 = 0xA002;
const TAG_PIXEL_Y: u16 = 0xA003;
const TAG_FOCAL_35: u16 = 0xA405;

const GPS_LAT_REF: u16 = 0x0001;
const GPS_LAT: u16 = 0x0002;
const GPS_LON_REF: u16 = 0x0003;
const GPS_LON: u16 = 0x0004;
const GPS_ALT_REF: u16 = 0x0005;
const GPS_ALT: u16 = 0x0006;
const GPS_TIME: u16 = 0x0007;
const GPS_IMG_DIRECTION: u16 = 0x0011;
const GPS_DATE: u16 = 0x001D;

/// Read Exif tags and frame dimensions from a JPEG byte stream.
///
/// Returns [`ExifError::NoExif`] when the file has no Exif segment; callers
/// that can fall back to a sidecar use [`read_jpeg_dimensions`] instead.
pub fn read_exif(bytes: &[u8]) -> Result<ExifData, ExifError> {
    let scan = scan_jpeg(bytes)?;
    let (tiff_start, tiff_len) = scan.exif.ok_or(ExifError::NoExif)?;
    let mut data = parse_tiff(bytes, tiff_start, tiff_len)?;
    // Encoded frame size wins over the (often stale) Exif pixel tags.
    if let Some((w, h)) = scan.frame {
        data.width = Some(w);
        data.height = Some(h);
    }
    Ok(data)
}

/// Like [`read_exif`] but treats a missing GPS position as an error.
pub fn read_geotagged_exif(bytes: &[u8]) -> Result<ExifData, ExifError> {
    let data = read_exif(bytes)?;
    if data.gps.is_none() {
        return Err(ExifError::MissingGeotag);
    }
    Ok(data)
}

/// Frame width and height from the SOF header, if one precedes the scan.
pub fn read_jpeg_dimensions(bytes: &[u8]) -> Result<Option<(u32, u32)>, ExifError> {
    Ok(scan_jpeg(bytes)?.frame)
}

struct JpegScan {
    exif: Option<(usize, usize)>,
    frame: Option<(u32, u32)>,
}

fn malformed(offset: usize, reason: &'static str) -> ExifError {
    ExifError::Malformed { offset, reason }
}

fn scan_jpeg(bytes: &[u8]) -> Result<JpegScan, ExifError> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != 0xD8 {
        return Err(ExifError::NotJpeg);
    }
    let mut scan = JpegScan { exif: None, frame: None };
    let mut pos = 2;
    loop {
        // Fill bytes (0xFF) may pad between segments.
        while pos < bytes.len() && bytes[pos] == 0xFF && bytes.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        if pos + 1 >= bytes.len() {
            break;
        }
        if bytes[pos] != 0xFF {
            return Err(malformed(pos, "expected a JPEG marker"));
        }
        let marker = bytes[pos + 1];
        pos += 2;
        match marker {
            0xD9 | 0xDA => break,
            0x01 | 0xD0..=0xD7 => continue,
            _ => {}
        }
        if pos + 2 > bytes.len() {
            return Err(malformed(pos, "truncated segment length"));
        }
        let len = usize::from(u16::from_be_bytes([bytes[pos], bytes[pos + 1]]));
        if len < 2 || pos + len > bytes.len() {
            return Err(malformed(pos, "segment extends past end of file"));
        }
        let body = &bytes[pos + 2..pos + len];
        match marker {
            0xE1 if scan.exif.is_none() && body.starts_with(b"Exif\0\0") => {
                scan.exif = Some((pos + 2 + 6, body.len() - 6));
            }
            0xC0..=0xC3 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF if scan.frame.is_none() => {
                if body.len() < 5 {
                    return Err(malformed(pos + 2, "truncated frame header"));
                }
                let h = u32::from(u16::from_be_bytes([body[1], body[2]]));
                let w = u32::from(u16::from_be_bytes([body[3], body[4]]));
                if w > 0 && h > 0 {
                    scan.frame = Some((w, h));
                }
            }
            _ => {}
        }
        pos += len;
    }
    Ok(scan)
}

/// View over the TIFF structure inside the Exif segment. Offsets inside
/// the TIFF are relative to `start`; errors report absolute file offsets.
struct Tiff<'a> {
    buf: &'a [u8],
    start: usize,
    big_endian: bool,
}

#[derive(Clone, Copy)]
struct Entry {
    tag: u16,
    kind: u16,
    count: u32,
    /// TIFF-relative offset of the value bytes.
    value_at: usize,
    /// Absolute file offset of the entry, for error reporting.
    at: usize,
}

impl<'a> Tiff<'a> {
    fn slice(&self, off: usize, len: usize) -> Result<&'a [u8], ExifError> {
        off.checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .map(|end| &self.buf[off..end])
            .ok_or_else(|| malformed(self.start + off.min(self.buf.len()), "offset outside Exif segment"))
    }

    fn u16_at(&self, off: usize) -> Result<u16, ExifError> {
        let b = self.slice(off, 2)?;
        Ok(if self.big_endian {
            u16::from_be_bytes([b[0], b[1]])
        } else {
            u16::from_le_bytes([b[0], b[1]])
        })
    }

    fn u32_at(&self, off: usize) -> Result<u32, ExifError> {
        let b = self.slice(off, 4)?;
        let a = [b[0], b[1], b[2], b[3]];
        Ok(if self.big_endian {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        })
    }

    fn entries(&self, ifd: usize) -> Result<Vec<Entry>, ExifError> {
        let n = usize::from(self.u16_at(ifd)?);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let e = ifd + 2 + 12 * i;
            let tag = self.u16_at(e)?;
            let kind = self.u16_at(e + 2)?;
            let count = self.u32_at(e + 4)?;
            let size = type_size(kind)
                .checked_mul(count as usize)
                .ok_or_else(|| malformed(self.start + e, "oversized IFD entry"))?;
            let value_at = if size <= 4 {
                e + 8
            } else {
                self.u32_at(e + 8)? as usize
            };
            // Unknown types have size 0 and are never read.
            self.slice(value_at, size)?;
            out.push(Entry {
                tag,
                kind,
                count,
                value_at,
                at: self.start + e,
            });
        }
        Ok(out)
    }

    fn uint(&self, e: &Entry) -> Result<u32, ExifError> {
        match e.kind {
            1 | 7 => Ok(u32::from(self.slice(e.value_at, 1)?[0])),
            3 => self.u16_at(e.value_at).map(u32::from),
            4 => self.u32_at(e.value_at),
            _ => Err(malformed(e.at, "expected an integer tag")),
        }
    }

    fn u64_at(&self, off: usize) -> Result<u64, ExifError> {
        let hi = u64::from(self.u32_at(off)?);
        let lo = u64::from(self.u32_at(off + 4)?);
        Ok(if self.big_endian { hi << 32 | lo } else { lo << 32 | hi })
    }

    /// Numeric values of a tag that should be RATIONAL. Writers also emit
    /// integers and IEEE floats here, so those are accepted too.
    fn rationals(&self, e: &Entry) -> Result<Vec<f64>, ExifError> {
        let size = type_size(e.kind);
        (0..e.count as usize)
            .map(|i| {
                let at = e.value_at + size * i;
                match e.kind {
                    1 => Ok(f64::from(self.slice(at, 1)?[0])),
                    3 => self.u16_at(at).map(f64::from),
                    4 => self.u32_at(at).map(f64::from),
                    11 => self.u32_at(at).map(|b| f64::from(f32::from_bits(b))),
                    12 => self.u64_at(at).map(f64::from_bits),
                    5 | 10 => {
                        let num = self.u32_at(at)?;
                        let den = self.u32_at(at + 4)?;
                        let (num, den) = if e.kind == 10 {
                            (f64::from(num as i32), f64::from(den as i32))
                        } else {
                            (f64::from(num), f64::from(den))
                        };
                        if den == 0.0 {
                            Err(malformed(e.at, "rational with zero denominator"))
                        } else {
                            Ok(num / den)
                        }
                    }
                    _ => Err(malformed(e.at, "expected a numeric tag")),
                }
            })
            .collect()
    }

    fn ascii(&self, e: &Entry) -> Result<String, ExifError> {
        if e.kind != 2 && e.kind != 7 {
            return Err(malformed(e.at, "expected an ASCII tag"));
        }
        let raw = self.slice(e.value_at, e.count as usize)?;
        let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
        Ok(String::from_utf8_lossy(&raw[..end]).trim().to_owned())
    }
}

fn type_size(kind: u16) -> usize {
    match kind {
        1 | 2 | 6 | 7 => 1,
        3 | 8 => 2,
        4 | 9 | 11 => 4,
        5 | 10 | 12 => 8,
        _ => 0,
    }
}

fn parse_tiff(bytes: &[u8], start: usize, len: usize) -> Result<ExifData, ExifError> {
    let buf = &bytes[start..start + len];
    if buf.len() < 8 {
        return Err(malformed(start, "truncated TIFF header"));
    }
    let big_endian = match &buf[..2] {
        b"MM" => true,
        b"II" => false,
        _ => return Err(malformed(start, "bad byte-order mark")),
    };
    let tiff = Tiff { buf, start, big_endian };
    if tiff.u16_at(2)? != 42 {
        return Err(malformed(start + 2, "bad TIFF magic"));
    }
    let ifd0 = tiff.u32_at(4)? as usize;

    let mut data = ExifData::default();
    let mut exif_ifd = None;
    let mut gps_ifd = None;
    let mut tag_dims = (None, None);
    for e in tiff.entries(ifd0)? {
        match e.tag {
            TAG_ORIENTATION => data.orientation = Some(tiff.uint(&e)? as u16),
            TAG_EXIF_IFD => exif_ifd = Some(tiff.uint(&e)? as usize),
            TAG_GPS_IFD => gps_ifd = Some(tiff.uint(&e)? as usize),
            TAG_IMAGE_WIDTH => tag_dims.0 = Some(tiff.uint(&e)?),
            TAG_IMAGE_LENGTH => tag_dims.1 = Some(tiff.uint(&e)?),
            _ => {}
        }
    }

    let mut original: Option<String> = None;
    let mut original_offset: Option<String> = None;
    let mut focal_plain = None;
    if let Some(ifd) = exif_ifd {
        for e in tiff.entries(ifd)? {
            match e.tag {
                TAG_DATETIME_ORIGINAL => original = Some(tiff.ascii(&e)?),
                TAG_OFFSET_TIME_ORIGINAL => original_offset = Some(tiff.ascii(&e)?),
                TAG_FOCAL_35 => {
                    let f = tiff.uint(&e)?;
                    if f > 0 {
                        data.focal35 = Some(f64::from(f));
                    }
                }
                TAG_FOCAL_LENGTH => focal_plain = tiff.rationals(&e)?.first().copied().filter(|f| *f > 0.0 && f.is_finite()),
                TAG_PIXEL_X => tag_dims.0 = Some(tiff.uint(&e)?),
                TAG_PIXEL_Y => tag_dims.1 = Some(tiff.uint(&e)?),
                _ => {}
            }
        }
    }
    if data.focal35.is_none() {
        if let Some(f) = focal_plain.filter(|f| *f > 0.0) {
            data.focal35 = Some(f);
            data.focal_unscaled = true;
        }
    }
    data.width = tag_dims.0.filter(|&w| w > 0);
    data.height = tag_dims.1.filter(|&h| h > 0);

    let mut gps_stamp = None;
    if let Some(ifd) = gps_ifd {
        let gps = read_gps(&tiff, ifd)?;
        data.gps = gps.position;
        data.heading = gps.heading;
        gps_stamp = gps.stamp;
    }

    let with_offset = original
        .as_deref()
        .zip(original_offset.as_deref())
        .and_then(|(dt, off)| parse_exif_datetime_with_offset(dt, off));
    let naive = original.as_deref().and_then(parse_exif_datetime);
    data.timestamp = with_offset.or(gps_stamp).or(naive);
    Ok(data)
}

struct Gps {
    position: Option<GeoCoord>,
    heading: Option<f64>,
    stamp: Option<DateTime<Utc>>,
}

fn read_gps(tiff: &Tiff<'_>, ifd: usize) -> Result<Gps, ExifError> {
    let (mut lat, mut lon, mut lat_ref, mut lon_ref) = (None, None, None, None);
    let (mut alt, mut alt_below) = (None, false);
    let (mut heading, mut date, mut time) = (None, None, None);
    for e in tiff.entries(ifd)? {
        match e.tag {
            GPS_LAT_REF => lat_ref = Some(tiff.ascii(&e)?),
            GPS_LON_REF => lon_ref = Some(tiff.ascii(&e)?),
            GPS_LAT => lat = Some((dms_to_degrees(&tiff.rationals(&e)?), e.at)),
            GPS_LON => lon = Some((dms_to_degrees(&tiff.rationals(&e)?), e.at)),
            GPS_ALT_REF => alt_below = tiff.uint(&e)? == 1,
            GPS_ALT => alt = tiff.rationals(&e)?.first().copied(),
            GPS_IMG_DIRECTION => heading = tiff.rationals(&e)?.first().copied(),
            GPS_DATE => date = Some(tiff.ascii(&e)?),
            GPS_TIME => time = Some(tiff.rationals(&e)?),
            _ => {}
        }
    }
    let position = match (lat, lon) {
        (Some((lat, lat_at)), Some((lon, lon_at))) => {
            let lat = lat.ok_or_else(|| malformed(lat_at, "GPS latitude needs three rationals"))?;
            let lon = lon.ok_or_else(|| malformed(lon_at, "GPS longitude needs three rationals"))?;
            let lat = if lat_ref.as_deref() == Some("S") { -lat } else { lat };
            let lon = if lon_ref.as_deref() == Some("W") { -lon } else { lon };
            let mut g = GeoCoord::new(lat, lon).map_err(|_| malformed(lat_at, "GPS position out of range"))?;
            g.alt = alt.filter(|a| a.is_finite()).map(|a| if alt_below { -a } else { a });
            Some(g)
        }
        _ => None,
    };
    let heading = heading.filter(|h| h.is_finite()).map(|h| h.rem_euclid(360.0));
    let stamp = date.zip(time).and_then(|(d, t)| gps_datetime(&d, &t));
    Ok(Gps {
        position,
        heading,
        stamp,
    })
}

/// Degrees + minutes/60 + seconds/3600 from a GPS rational triplet.
pub fn dms_to_degrees(dms: &[f64]) -> Option<f64> {
    match dms {
        [d, m, s, ..] => Some(d + m / 60.0 + s / 3600.0),
        _ => None,
    }
}

fn parse_exif_datetime(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, "%Y:%m:%d %H:%M:%S")
        .ok()
        .map(|n| Utc.from_utc_datetime(&n))
}

fn parse_exif_datetime_with_offset(dt: &str, offset: &str) -> Option<DateTime<Utc>> {
    let naive = NaiveDateTime::parse_from_str(dt, "%Y:%m:%d %H:%M:%S").ok()?;
    let off = *DateTime::parse_from_str(&format!("2000-01-01T00:00:00{offset}"), "%Y-%m-%dT%H:%M:%S%:z")
        .ok()?
        .offset();
    off.from_local_datetime(&naive)
        .single()
        .map(|d| d.with_timezone(&Utc))
}

fn gps_datetime(date: &str, hms: &[f64]) -> Option<DateTime<Utc>> {
    let d = NaiveDate::parse_from_str(date, "%Y:%m:%d").ok()?;
    let [h, m, s, ..] = hms else { return None };
    let secs = h * 3600.0 + m * 60.0 + s;
    if !(0.0..86_400.0).contains(&secs) {
        return None;
    }
    let millis = (secs * 1000.0).round() as i64;
    let base = Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0)?);
    Some(base + chrono::Duration::milliseconds(millis))
}
