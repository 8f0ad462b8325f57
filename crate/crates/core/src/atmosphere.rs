//! Optional broadcast ionosphere (Klobuchar) and Saastamoinen troposphere delays.
//!
//! Reproduction runs leave these off; they exist for sensitivity checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geodesy::GeodeticPosition;
use crate::gnss::{Constellation, GPS_L1_HZ, SPEED_OF_LIGHT};

/// Klobuchar coefficients as broadcast in the GPS navigation message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlobucharParams {
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
}

/// L1-equivalent ionospheric delay in meters, scaled to the constellation's carrier.
pub fn klobuchar_delay(
    params: &KlobucharParams,
    receiver: &GeodeticPosition,
    elevation_deg: f64,
    azimuth_deg: f64,
    gps_seconds: f64,
    constellation: Constellation,
) -> f64 {
    if elevation_deg <= 0.0 {
        return 0.0;
    }
    // Semicircle units throughout, as in the interface specification.
    let el = elevation_deg / 180.0;
    let az = azimuth_deg.to_radians();
    let lat_u = receiver.latitude / 180.0;
    let lon_u = receiver.longitude / 180.0;

    let psi = 0.0137 / (el + 0.11) - 0.022;
    let lat_i = (lat_u + psi * az.cos()).clamp(-0.416, 0.416);
    let lon_i = lon_u + psi * az.sin() / (lat_i * PI).cos();
    let lat_m = lat_i + 0.064 * ((lon_i - 1.617) * PI).cos();

    let local_time = (43_200.0 * lon_i + gps_seconds).rem_euclid(86_400.0);
    let slant = 1.0 + 16.0 * (0.53 - el).powi(3);

    let poly = |c: &[f64; 4]| c[0] + lat_m * (c[1] + lat_m * (c[2] + lat_m * c[3]));
    let amp = poly(&params.alpha).max(0.0);
    let per = poly(&params.beta).max(72_000.0);

    let x = 2.0 * PI * (local_time - 50_400.0) / per;
    let seconds = if x.abs() < 1.57 {
        slant * (5e-9 + amp * (1.0 - x * x / 2.0 + x.powi(4) / 24.0))
    } else {
        slant * 5e-9
    };
    let ratio = GPS_L1_HZ / constellation.carrier_frequency();
    SPEED_OF_LIGHT * seconds * ratio * ratio
}

/// Saastamoinen zenith model with a standard atmosphere and 70% humidity.
pub fn saastamoinen_delay(receiver: &GeodeticPosition, elevation_deg: f64) -> f64 {
    let h = receiver.height;
    if !(-100.0..=1e4).contains(&h) || elevation_deg <= 0.0 {
        return 0.0;
    }
    let height = h.max(0.0);
    let pressure = 1013.25 * (1.0 - 2.2557e-5 * height).powf(5.2568);
    let temperature = 15.0 - 6.5e-3 * height + 273.16;
    let humidity = 0.7;
    let vapour = 6.108
        * humidity
        * ((17.15 * temperature - 4684.0) / (temperature - 38.45)).exp();
    let zenith = PI / 2.0 - elevation_deg.to_radians();
    let lat = receiver.latitude.to_radians();
    let dry = 0.002_276_8 * pressure
        / (1.0 - 0.002_66 * (2.0 * lat).cos() - 0.000_28 * height / 1e3)
        / zenith.cos();
    let wet = 0.002_277 * (1255.0 / temperature + 0.05) * vapour / zenith.cos();
    dry + wet
}
