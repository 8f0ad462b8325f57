//! WGS84 frames: ECEF, geodetic and local east-north-up.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis (meters).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS84 semi-minor axis (meters).
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// WGS84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const LATITUDE_TOLERANCE_RAD: f64 = 1e-12;
const MAX_LATITUDE_ITERATIONS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("position at the geocenter has no geodetic coordinates")]
    Geocenter,
    #[error("receiver and satellite positions coincide")]
    CoincidentPoints,
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Earth-centered earth-fixed position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const ORIGIN: EcefPosition = EcefPosition { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &EcefPosition) -> f64 {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl std::ops::Sub for EcefPosition {
    type Output = EcefPosition;

    fn sub(self, rhs: EcefPosition) -> EcefPosition {
        EcefPosition::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Add for EcefPosition {
    type Output = EcefPosition;

    fn add(self, rhs: EcefPosition) -> EcefPosition {
        EcefPosition::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Mul<f64> for EcefPosition {
    type Output = EcefPosition;

    fn mul(self, rhs: f64) -> EcefPosition {
        EcefPosition::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// Latitude/longitude in degrees, height in meters above the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Self {
        Self {
            latitude,
            longitude,
            height,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.latitude.is_finite()
            && self.longitude.is_finite()
            && self.height.is_finite()
            && (-90.0..=90.0).contains(&self.latitude)
            && self.longitude > -180.0
            && self.longitude <= 180.0
    }
}

/// Local tangent-plane vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuVector {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuVector {
    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn norm(&self) -> f64 {
        (self.east * self.east + self.north * self.north + self.up * self.up).sqrt()
    }
}

pub fn geodetic_to_ecef(g: GeodeticPosition) -> EcefPosition {
    let lat = g.latitude.to_radians();
    let lon = g.longitude.to_radians();
    let (sin_lat, cos_lat) = lat.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    EcefPosition::new(
        (n + g.height) * cos_lat * cos_lon,
        (n + g.height) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + g.height) * sin_lat,
    )
}

/// Fixed-point latitude iteration; longitude is reported as 0 on the polar axis.
pub fn ecef_to_geodetic(p: EcefPosition) -> Result<GeodeticPosition, GeodesyError> {
    if !p.is_finite() {
        return Err(GeodesyError::NonFinite);
    }
    if p.norm() == 0.0 {
        return Err(GeodesyError::Geocenter);
    }
    let rho = p.x.hypot(p.y);
    let longitude = if rho == 0.0 { 0.0 } else { p.y.atan2(p.x) };

    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    for _ in 0..MAX_LATITUDE_ITERATIONS {
        let sin_lat = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let next = (p.z + WGS84_E2 * n * sin_lat).atan2(rho);
        let delta = (next - lat).abs();
        lat = next;
        if delta < LATITUDE_TOLERANCE_RAD {
            break;
        }
    }
    let (sin_lat, cos_lat) = lat.sin_cos();
    let height = rho * cos_lat + p.z * sin_lat
        - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();

    let mut longitude = longitude.to_degrees();
    if longitude <= -180.0 {
        longitude += 360.0;
    }
    Ok(GeodeticPosition::new(lat.to_degrees(), longitude, height))
}

/// Rows of the ECEF to ENU rotation at the given geodetic point.
fn enu_rotation(reference: &GeodeticPosition) -> [[f64; 3]; 3] {
    let (sin_lat, cos_lat) = reference.latitude.to_radians().sin_cos();
    let (sin_lon, cos_lon) = reference.longitude.to_radians().sin_cos();
    [
        [-sin_lon, cos_lon, 0.0],
        [-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat],
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat],
    ]
}

fn rotate_delta(delta: EcefPosition, reference: &GeodeticPosition) -> EnuVector {
    let r = enu_rotation(reference);
    let d = delta.to_array();
    let row = |i: usize| r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2];
    EnuVector::new(row(0), row(1), row(2))
}

/// `p - reference` expressed in the tangent frame at `reference`.
///
/// Falls back to the spherical frame through the geocenter direction only if
/// the reference sits at the geocenter, which callers are expected to avoid.
pub fn ecef_to_enu(p: EcefPosition, reference: EcefPosition) -> EnuVector {
    let geo = ecef_to_geodetic(reference).unwrap_or(GeodeticPosition::new(0.0, 0.0, 0.0));
    rotate_delta(p - reference, &geo)
}

/// ECEF point at local offset `enu` from the geodetic `reference`.
pub fn enu_to_ecef(enu: EnuVector, reference: GeodeticPosition) -> EcefPosition {
    let r = enu_rotation(&reference);
    let v = [enu.east, enu.north, enu.up];
    let col = |j: usize| r[0][j] * v[0] + r[1][j] * v[1] + r[2][j] * v[2];
    geodetic_to_ecef(reference) + EcefPosition::new(col(0), col(1), col(2))
}

/// Elevation in [-90, 90] and azimuth in [0, 360) degrees, clockwise from north.
pub fn elevation_azimuth(
    receiver: EcefPosition,
    satellite: EcefPosition,
) -> Result<(f64, f64), GeodesyError> {
    let delta = satellite - receiver;
    if delta.norm() == 0.0 {
        return Err(GeodesyError::CoincidentPoints);
    }
    let geo = ecef_to_geodetic(receiver)?;
    Ok(elevation_azimuth_from_enu(rotate_delta(delta, &geo)))
}

pub(crate) fn elevation_azimuth_from_enu(enu: EnuVector) -> (f64, f64) {
    let horizontal = enu.east.hypot(enu.north);
    let elevation = enu.up.atan2(horizontal).to_degrees();
    let azimuth = if horizontal == 0.0 {
        0.0
    } else {
        let az = enu.east.atan2(enu.north).to_degrees();
        let az = if az < 0.0 { az + 360.0 } else { az };
        if az >= 360.0 {
            0.0
        } else {
            az
        }
    };
    (elevation, azimuth)
}
