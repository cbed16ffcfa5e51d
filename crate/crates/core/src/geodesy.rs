//! WGS84 geodetic ↔ UTM conversion and the anchor-relative local frame.
//!
//! The projection uses the Krüger series in the third flattening, carried
//! to sixth order (Karney 2011), which is accurate to a few nanometres
//! within a UTM zone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;

/// WGS84 semi-major axis in metres.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

const UTM_K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;
const UTM_MIN_LAT: f64 = -80.0;
const UTM_MAX_LAT: f64 = 84.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesyError {
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("latitude {0} outside the UTM band (-80, 84)")]
    OutsideUtmBand(f64),
    #[error("zone {0} outside 1..=60")]
    InvalidZone(u8),
    #[error("point is in UTM zone {found}{found_hemi} but the scene frame is zone {expected}{expected_hemi}")]
    ZoneMismatch {
        expected: u8,
        expected_hemi: Hemisphere,
        found: u8,
        found_hemi: Hemisphere,
    },
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Geodetic position on the WGS84 ellipsoid, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt: Option<f64>,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeodesyError> {
        let c = Self { lat, lon, alt: None };
        c.validate()?;
        Ok(c)
    }

    pub fn with_alt(mut self, alt: f64) -> Self {
        self.alt = Some(alt);
        self
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        if !self.lat.is_finite() || !self.lon.is_finite() || self.alt.is_some_and(|a| !a.is_finite()) {
            return Err(GeodesyError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeodesyError::LatitudeOutOfRange(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeodesyError::LongitudeOutOfRange(self.lon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    North,
    South,
}

impl std::fmt::Display for Hemisphere {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Hemisphere::North => "N",
            Hemisphere::South => "S",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmCoord {
    pub zone: u8,
    pub hemisphere: Hemisphere,
    pub easting: f64,
    pub northing: f64,
}

impl UtmCoord {
    pub fn same_zone(&self, other: &UtmCoord) -> bool {
        self.zone == other.zone && self.hemisphere == other.hemisphere
    }
}

/// Metric east-north-up coordinates relative to a [`LocalFrame`].
pub type LocalCoord = Vec3;

/// The single anchor every scene coordinate is expressed against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub anchor: UtmCoord,
    pub anchor_geo: GeoCoord,
    /// Elevation (same vertical datum as the terrain grid and GPS altitude)
    /// that maps to local z = 0.
    pub base_elevation: f64,
}

impl LocalFrame {
    pub fn new(anchor_geo: GeoCoord, base_elevation: f64) -> Result<Self, GeodesyError> {
        Ok(Self {
            anchor: latlon_to_utm(&anchor_geo)?,
            anchor_geo,
            base_elevation,
        })
    }

    /// Frame anchored at an arbitrary UTM position.
    pub fn from_utm(anchor: UtmCoord, base_elevation: f64) -> Result<Self, GeodesyError> {
        Ok(Self {
            anchor,
            anchor_geo: utm_to_latlon(&anchor)?,
            base_elevation,
        })
    }

    /// Horizontal local position of a geodetic point; z is left at 0.
    pub fn geo_to_local(&self, p: &GeoCoord) -> Result<LocalCoord, GeodesyError> {
        let utm = latlon_to_utm_in_zone(p, self.anchor.zone, self.anchor.hemisphere)?;
        // Reject anything whose natural zone differs from the frame's.
        let natural = zone_for(p.lon, p.lat)?;
        if natural != self.anchor.zone || hemisphere_of(p.lat) != self.anchor.hemisphere {
            return Err(GeodesyError::ZoneMismatch {
                expected: self.anchor.zone,
                expected_hemi: self.anchor.hemisphere,
                found: natural,
                found_hemi: hemisphere_of(p.lat),
            });
        }
        utm_to_local(&utm, self)
    }

    pub fn local_to_utm(&self, p: LocalCoord) -> UtmCoord {
        UtmCoord {
            zone: self.anchor.zone,
            hemisphere: self.anchor.hemisphere,
            easting: self.anchor.easting + p.x,
            northing: self.anchor.northing + p.y,
        }
    }
}

fn hemisphere_of(lat: f64) -> Hemisphere {
    if lat < 0.0 {
        Hemisphere::South
    } else {
        Hemisphere::North
    }
}

/// Standard 6° UTM zone for a longitude. Norway/Svalbard exceptions are not
/// applied. `lon = 180` is clamped into zone 60.
pub fn zone_for(lon: f64, _lat: f64) -> Result<u8, GeodesyError> {
    if !lon.is_finite() {
        return Err(GeodesyError::NonFinite);
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(GeodesyError::LongitudeOutOfRange(lon));
    }
    let z = ((lon + 180.0) / 6.0).floor() as i64 + 1;
    Ok(z.clamp(1, 60) as u8)
}

/// Longitude of a zone's central meridian in degrees.
pub fn central_meridian(zone: u8) -> f64 {
    f64::from(zone) * 6.0 - 183.0
}

/// Series coefficients derived from the ellipsoid's third flattening.
struct Krueger {
    e: f64,
    /// Rectifying radius scaled by k0.
    k0_a_rect: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

fn krueger() -> Krueger {
    let n = WGS84_F / (2.0 - WGS84_F);
    let n2 = n * n;
    let n3 = n2 * n;
    let n4 = n3 * n;
    let n5 = n4 * n;
    let n6 = n5 * n;
    let a_rect = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    let alpha = [
        n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 - 127.0 / 288.0 * n5
            + 7891.0 / 37800.0 * n6,
        13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 + 281.0 / 630.0 * n5
            - 1983433.0 / 1935360.0 * n6,
        61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5 + 167603.0 / 181440.0 * n6,
        49561.0 / 161280.0 * n4 - 179.0 / 168.0 * n5 + 6601661.0 / 7257600.0 * n6,
        34729.0 / 80640.0 * n5 - 3418889.0 / 1995840.0 * n6,
        212378941.0 / 319334400.0 * n6,
    ];
    let beta = [
        n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 - 81.0 / 512.0 * n5
            + 96199.0 / 604800.0 * n6,
        n2 / 48.0 + n3 / 15.0 - 437.0 / 1440.0 * n4 + 46.0 / 105.0 * n5 - 1118711.0 / 3870720.0 * n6,
        17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 + 5569.0 / 90720.0 * n6,
        4397.0 / 161280.0 * n4 - 11.0 / 504.0 * n5 - 830251.0 / 7257600.0 * n6,
        4583.0 / 161280.0 * n5 - 108847.0 / 3991680.0 * n6,
        20648693.0 / 638668800.0 * n6,
    ];
    Krueger {
        e: (WGS84_F * (2.0 - WGS84_F)).sqrt(),
        k0_a_rect: UTM_K0 * a_rect,
        alpha,
        beta,
    }
}

/// tan of the conformal latitude given tan of the geodetic latitude.
fn conformal_tan(tau: f64, e: f64) -> f64 {
    let tau1 = tau.hypot(1.0);
    let sig = (e * (e * tau / tau1).atanh()).sinh();
    sig.hypot(1.0) * tau - sig * tau1
}

/// Inverse of [`conformal_tan`] by Newton iteration.
fn geodetic_tan(taup: f64, e: f64) -> f64 {
    let e2m = 1.0 - e * e;
    let mut tau = taup / e2m;
    let stol = f64::EPSILON.sqrt() / 10.0 * taup.abs().max(1.0);
    for _ in 0..8 {
        let taupa = conformal_tan(tau, e);
        let dtau = (taup - taupa) * (1.0 + e2m * tau * tau) / (e2m * tau.hypot(1.0) * taupa.hypot(1.0));
        tau += dtau;
        if dtau.abs() < stol {
            break;
        }
    }
    tau
}

/// Project a WGS84 position into its natural UTM zone.
pub fn latlon_to_utm(p: &GeoCoord) -> Result<UtmCoord, GeodesyError> {
    p.validate()?;
    let zone = zone_for(p.lon, p.lat)?;
    latlon_to_utm_in_zone(p, zone, hemisphere_of(p.lat))
}

/// Project into an explicitly chosen zone and hemisphere.
pub fn latlon_to_utm_in_zone(
    p: &GeoCoord,
    zone: u8,
    hemisphere: Hemisphere,
) -> Result<UtmCoord, GeodesyError> {
    p.validate()?;
    if !(1..=60).contains(&zone) {
        return Err(GeodesyError::InvalidZone(zone));
    }
    if p.lat <= UTM_MIN_LAT || p.lat >= UTM_MAX_LAT {
        return Err(GeodesyError::OutsideUtmBand(p.lat));
    }
    let k = krueger();
    let mut dlon = p.lon - central_meridian(zone);
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let lam = dlon.to_radians();
    let tau = p.lat.to_radians().tan();
    let taup = conformal_tan(tau, k.e);
    let xi_p = taup.atan2(lam.cos());
    let eta_p = (lam.sin() / taup.hypot(lam.cos())).asinh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in k.alpha.iter().enumerate() {
        let m = 2.0 * (j + 1) as f64;
        xi += a * (m * xi_p).sin() * (m * eta_p).cosh();
        eta += a * (m * xi_p).cos() * (m * eta_p).sinh();
    }
    let easting = FALSE_EASTING + k.k0_a_rect * eta;
    let mut northing = k.k0_a_rect * xi;
    if hemisphere == Hemisphere::South {
        northing += FALSE_NORTHING_SOUTH;
    }
    Ok(UtmCoord {
        zone,
        hemisphere,
        easting,
        northing,
    })
}

/// Inverse projection back to WGS84 (altitude left unset).
pub fn utm_to_latlon(u: &UtmCoord) -> Result<GeoCoord, GeodesyError> {
    if !(1..=60).contains(&u.zone) {
        return Err(GeodesyError::InvalidZone(u.zone));
    }
    if !u.easting.is_finite() || !u.northing.is_finite() {
        return Err(GeodesyError::NonFinite);
    }
    let k = krueger();
    let y = match u.hemisphere {
        Hemisphere::North => u.northing,
        Hemisphere::South => u.northing - FALSE_NORTHING_SOUTH,
    };
    let xi = y / k.k0_a_rect;
    let eta = (u.easting - FALSE_EASTING) / k.k0_a_rect;
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in k.beta.iter().enumerate() {
        let m = 2.0 * (j + 1) as f64;
        xi_p -= b * (m * xi).sin() * (m * eta).cosh();
        eta_p -= b * (m * xi).cos() * (m * eta).sinh();
    }
    let taup = xi_p.sin() / eta_p.sinh().hypot(xi_p.cos());
    let lam = eta_p.sinh().atan2(xi_p.cos());
    let lat = geodetic_tan(taup, k.e).atan().to_degrees();
    let lon = central_meridian(u.zone) + lam.to_degrees();
    let lon = if lon > 180.0 { lon - 360.0 } else if lon < -180.0 { lon + 360.0 } else { lon };
    GeoCoord::new(lat, lon)
}

/// Translate a UTM position into the frame. z is 0; elevation is applied
/// separately from terrain or altitude data.
pub fn utm_to_local(p: &UtmCoord, frame: &LocalFrame) -> Result<LocalCoord, GeodesyError> {
    if !p.same_zone(&frame.anchor) {
        return Err(GeodesyError::ZoneMismatch {
            expected: frame.anchor.zone,
            expected_hemi: frame.anchor.hemisphere,
            found: p.zone,
            found_hemi: p.hemisphere,
        });
    }
    Ok(Vec3::new(
        p.easting - frame.anchor.easting,
        p.northing - frame.anchor.northing,
        0.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(lat: f64, lon: f64) -> GeoCoord {
        GeoCoord::new(lat, lon).unwrap()
    }

    #[test]
    fn zone_arithmetic() {
        assert_eq!(zone_for(3.0, 0.0).unwrap(), 31);
        assert_eq!(zone_for(-180.0, 10.0).unwrap(), 1);
        assert_eq!(zone_for(-0.12, 51.5).unwrap(), 30);
        assert_eq!(zone_for(180.0, 0.0).unwrap(), 60);
        // Norway exception deliberately absent.
        assert_eq!(zone_for(4.0, 60.0).unwrap(), 31);
        assert!(matches!(zone_for(180.5, 0.0), Err(GeodesyError::LongitudeOutOfRange(_))));
        assert!(matches!(zone_for(-181.0, 0.0), Err(GeodesyError::LongitudeOutOfRange(_))));
    }

    #[test]
    fn central_meridian_at_equator_is_false_easting() {
        let u = latlon_to_utm(&geo(0.0, 3.0)).unwrap();
        assert_eq!((u.zone, u.hemisphere), (31, Hemisphere::North));
        assert!((u.easting - 500_000.0).abs() < 1e-9);
        assert!(u.northing.abs() < 1e-9);
    }

    #[test]
    fn utm_band_is_enforced() {
        assert!(matches!(latlon_to_utm(&geo(84.0, 0.0)), Err(GeodesyError::OutsideUtmBand(_))));
        assert!(matches!(latlon_to_utm(&geo(-80.0, 0.0)), Err(GeodesyError::OutsideUtmBand(_))));
        assert!(latlon_to_utm(&geo(83.99, 0.0)).is_ok());
    }

    #[test]
    fn southern_hemisphere_uses_false_northing() {
        let u = latlon_to_utm(&geo(-33.86, 151.21)).unwrap();
        assert_eq!(u.hemisphere, Hemisphere::South);
        assert!(u.northing > 6_000_000.0 && u.northing < 10_000_000.0);
    }

    #[test]
    fn inverse_round_trips() {
        for &(lat, lon) in &[(51.5007, -0.1246), (-33.86, 151.21), (0.0, 0.0), (70.0, 25.0), (-79.0, -177.0)] {
            let u = latlon_to_utm(&geo(lat, lon)).unwrap();
            let g = utm_to_latlon(&u).unwrap();
            assert!((g.lat - lat).abs() < 1e-10, "{lat} {lon} -> {g:?}");
            assert!((g.lon - lon).abs() < 1e-10, "{lat} {lon} -> {g:?}");
        }
    }

    #[test]
    fn local_translation() {
        let frame = LocalFrame::new(geo(51.5, -0.12), 10.0).unwrap();
        assert_eq!(utm_to_local(&frame.anchor, &frame).unwrap(), Vec3::ZERO);
        let mut p = frame.anchor;
        p.easting += 12.5;
        p.northing -= 3.0;
        assert_eq!(utm_to_local(&p, &frame).unwrap(), Vec3::new(12.5, -3.0, 0.0));
    }

    #[test]
    fn zone_mismatch_names_both_zones() {
        let frame = LocalFrame::new(geo(48.85, 2.35), 0.0).unwrap();
        assert_eq!(frame.anchor.zone, 31);
        let p = latlon_to_utm(&geo(51.5, -0.12)).unwrap();
        let err = utm_to_local(&p, &frame).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("30") && msg.contains("31"), "{msg}");
        assert!(frame.geo_to_local(&geo(51.5, -0.12)).is_err());
    }

    #[test]
    fn easting_increases_with_longitude() {
        let mut prev = f64::MIN;
        for i in 0..50 {
            let lon = -5.9 + i as f64 * 0.1;
            let e = latlon_to_utm(&geo(51.0, lon)).unwrap().easting;
            assert!(e > prev);
            prev = e;
        }
    }
}
