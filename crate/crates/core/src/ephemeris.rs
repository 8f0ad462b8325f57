//! Broadcast-orbit evaluation for GPS LNAV and BeiDou D1/D2 ephemerides.
//!
//! Times are continuous GPS seconds (seconds since the GPS epoch). BeiDou
//! records are converted to GPS time when they are parsed, so `toe`/`toc`
//! here are always GPS seconds-of-week with a GPS `week`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::EcefPosition;
use crate::gnss::{
    Constellation, SatelliteId, BDT_TO_GPST_SECONDS, SECONDS_PER_WEEK, SPEED_OF_LIGHT,
};

/// Relativistic clock constant F (s/sqrt(m)).
pub const RELATIVISTIC_F: f64 = -4.442_807_633e-10;
pub const GPS_GM: f64 = 3.986_005e14;
pub const GPS_EARTH_ROTATION: f64 = 7.292_115_146_7e-5;
pub const BDS_GM: f64 = 3.986_004_418e14;
pub const BDS_EARTH_ROTATION: f64 = 7.292_115e-5;
/// Default fit-interval guard (seconds).
pub const DEFAULT_MAX_AGE_S: f64 = 4.0 * 3600.0;

const KEPLER_TOLERANCE: f64 = 1e-12;
const KEPLER_MAX_ITERATIONS: usize = 30;
const GEO_INCLINATION_RAD: f64 = -5.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EphemerisError {
    #[error("Kepler equation did not converge (M = {mean_anomaly}, e = {eccentricity})")]
    KeplerDivergence {
        mean_anomaly: f64,
        eccentricity: f64,
    },
    #[error("eccentricity {0} outside [0, 0.1)")]
    Eccentricity(f64),
    #[error("ephemeris for {sat} is stale: {age_s:.0} s from toe")]
    Stale { sat: SatelliteId, age_s: f64 },
    #[error("no ephemeris for {0}")]
    Missing(SatelliteId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastEphemeris {
    pub constellation: Constellation,
    pub svid: u16,
    /// Reference time of ephemeris, GPS seconds-of-week.
    pub toe: f64,
    /// GPS week of `toe`.
    pub week: i64,
    pub sqrt_a: f64,
    pub e: f64,
    pub i0: f64,
    pub omega0: f64,
    pub omega: f64,
    pub m0: f64,
    pub delta_n: f64,
    pub idot: f64,
    pub omega_dot: f64,
    pub cuc: f64,
    pub cus: f64,
    pub crc: f64,
    pub crs: f64,
    pub cic: f64,
    pub cis: f64,
    pub af0: f64,
    pub af1: f64,
    pub af2: f64,
    /// Clock reference time, GPS seconds-of-week.
    pub toc: f64,
    pub tgd: f64,
    /// Message transmission time (GPS seconds-of-week), used to prefer later broadcasts.
    pub transmission_time: f64,
}

impl BroadcastEphemeris {
    pub fn sat(&self) -> SatelliteId {
        SatelliteId::new(self.constellation, self.svid)
    }

    pub fn toe_gps_seconds(&self) -> f64 {
        self.week as f64 * SECONDS_PER_WEEK + self.toe
    }

    /// `t - toe` with `t` in continuous GPS seconds.
    pub fn time_from_toe(&self, t: f64) -> f64 {
        t - self.toe_gps_seconds()
    }

    /// `t - toc`, resolving the clock epoch to the week closest to `toe`.
    pub fn time_from_toc(&self, t: f64) -> f64 {
        let mut toc = self.week as f64 * SECONDS_PER_WEEK + self.toc;
        let half = SECONDS_PER_WEEK / 2.0;
        let toe = self.toe_gps_seconds();
        if toc - toe > half {
            toc -= SECONDS_PER_WEEK;
        } else if toe - toc > half {
            toc += SECONDS_PER_WEEK;
        }
        t - toc
    }

    fn gm(&self) -> f64 {
        match self.constellation {
            Constellation::Gps => GPS_GM,
            Constellation::BeiDou => BDS_GM,
        }
    }

    pub fn earth_rotation_rate(&self) -> f64 {
        match self.constellation {
            Constellation::Gps => GPS_EARTH_ROTATION,
            Constellation::BeiDou => BDS_EARTH_ROTATION,
        }
    }

    /// toe in the satellite system's own time scale (seconds-of-week).
    fn system_toe(&self) -> f64 {
        match self.constellation {
            Constellation::Gps => self.toe,
            Constellation::BeiDou => (self.toe - BDT_TO_GPST_SECONDS).rem_euclid(SECONDS_PER_WEEK),
        }
    }

    pub fn is_beidou_geo(&self) -> bool {
        self.constellation == Constellation::BeiDou && is_beidou_geo_svid(self.svid)
    }
}

/// BeiDou GEO slots: C01–C05 and C59–C63.
pub fn is_beidou_geo_svid(svid: u16) -> bool {
    svid <= 5 || (59..=63).contains(&svid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EphemerisOptions {
    pub apply_tgd: bool,
    pub apply_relativity: bool,
    pub max_age_s: f64,
}

impl Default for EphemerisOptions {
    fn default() -> Self {
        Self {
            apply_tgd: true,
            apply_relativity: true,
            max_age_s: DEFAULT_MAX_AGE_S,
        }
    }
}

/// Satellite position in the reception-time ECEF frame and its clock correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteState {
    pub position: EcefPosition,
    /// c * (satellite clock bias + relativistic term - group delay), meters.
    pub clock_correction: f64,
}

/// Solves `E - e sin E = M` by Newton iteration.
pub fn solve_kepler(mean_anomaly: f64, eccentricity: f64) -> Result<f64, EphemerisError> {
    if !(0.0..=0.1).contains(&eccentricity) {
        return Err(EphemerisError::Eccentricity(eccentricity));
    }
    let m = mean_anomaly;
    let mut ecc_anomaly = m;
    for _ in 0..KEPLER_MAX_ITERATIONS {
        let residual = ecc_anomaly - eccentricity * ecc_anomaly.sin() - m;
        if residual.abs() < KEPLER_TOLERANCE {
            return Ok(ecc_anomaly);
        }
        ecc_anomaly -= residual / (1.0 - eccentricity * ecc_anomaly.cos());
    }
    let residual = ecc_anomaly - eccentricity * ecc_anomaly.sin() - m;
    if residual.abs() < KEPLER_TOLERANCE {
        Ok(ecc_anomaly)
    } else {
        Err(EphemerisError::KeplerDivergence {
            mean_anomaly,
            eccentricity,
        })
    }
}

fn eccentric_anomaly(eph: &BroadcastEphemeris, tk: f64) -> Result<f64, EphemerisError> {
    let a = eph.sqrt_a * eph.sqrt_a;
    let n0 = (eph.gm() / (a * a * a)).sqrt();
    let mean_anomaly = eph.m0 + (n0 + eph.delta_n) * tk;
    solve_kepler(mean_anomaly, eph.e)
}

fn check_age(eph: &BroadcastEphemeris, t: f64, opts: &EphemerisOptions) -> Result<f64, EphemerisError> {
    let tk = eph.time_from_toe(t);
    if tk.abs() > opts.max_age_s {
        return Err(EphemerisError::Stale {
            sat: eph.sat(),
            age_s: tk,
        });
    }
    Ok(tk)
}

fn clock_seconds(eph: &BroadcastEphemeris, t: f64, ecc_anomaly: f64, opts: &EphemerisOptions) -> f64 {
    let dt = eph.time_from_toc(t);
    let mut clock = eph.af0 + eph.af1 * dt + eph.af2 * dt * dt;
    if opts.apply_relativity {
        clock += RELATIVISTIC_F * eph.e * eph.sqrt_a * ecc_anomaly.sin();
    }
    if opts.apply_tgd {
        clock -= eph.tgd;
    }
    clock
}

/// Satellite clock correction in seconds at `t`.
pub fn satellite_clock(
    eph: &BroadcastEphemeris,
    t: f64,
    opts: &EphemerisOptions,
) -> Result<f64, EphemerisError> {
    let tk = check_age(eph, t, opts)?;
    let ecc_anomaly = eccentric_anomaly(eph, tk)?;
    Ok(clock_seconds(eph, t, ecc_anomaly, opts))
}

/// Rotates a position about the Z axis by `earth_rate * travel_time`.
pub fn sagnac_rotate(position: EcefPosition, earth_rate: f64, travel_time: f64) -> EcefPosition {
    let (s, c) = (earth_rate * travel_time).sin_cos();
    EcefPosition::new(
        c * position.x + s * position.y,
        -s * position.x + c * position.y,
        position.z,
    )
}

/// Evaluates the broadcast orbit at `transmit_time` (GPS seconds) and rotates the
/// result into the ECEF frame at reception, `travel_time` seconds later.
pub fn satellite_state(
    eph: &BroadcastEphemeris,
    transmit_time: f64,
    travel_time: f64,
    opts: &EphemerisOptions,
) -> Result<SatelliteState, EphemerisError> {
    let tk = check_age(eph, transmit_time, opts)?;
    let ecc_anomaly = eccentric_anomaly(eph, tk)?;
    let e = eph.e;
    let a = eph.sqrt_a * eph.sqrt_a;

    let (sin_e, cos_e) = ecc_anomaly.sin_cos();
    let true_anomaly = ((1.0 - e * e).sqrt() * sin_e).atan2(cos_e - e);
    let phi = true_anomaly + eph.omega;
    let (sin2p, cos2p) = (2.0 * phi).sin_cos();

    let u = phi + eph.cus * sin2p + eph.cuc * cos2p;
    let r = a * (1.0 - e * cos_e) + eph.crs * sin2p + eph.crc * cos2p;
    let inc = eph.i0 + eph.cis * sin2p + eph.cic * cos2p + eph.idot * tk;

    let x_orb = r * u.cos();
    let y_orb = r * u.sin();
    let (sin_i, cos_i) = inc.sin_cos();
    let earth_rate = eph.earth_rotation_rate();
    let toe = eph.system_toe();

    let position = if eph.is_beidou_geo() {
        // GEO: inertial-like node, then the -5 degree tilt and earth rotation.
        let node = eph.omega0 + eph.omega_dot * tk - earth_rate * toe;
        let (sin_o, cos_o) = node.sin_cos();
        let xg = x_orb * cos_o - y_orb * cos_i * sin_o;
        let yg = x_orb * sin_o + y_orb * cos_i * cos_o;
        let zg = y_orb * sin_i;

        let (sin_x, cos_x) = GEO_INCLINATION_RAD.sin_cos();
        let y1 = cos_x * yg + sin_x * zg;
        let z1 = -sin_x * yg + cos_x * zg;
        let (sin_z, cos_z) = (earth_rate * tk).sin_cos();
        EcefPosition::new(cos_z * xg + sin_z * y1, -sin_z * xg + cos_z * y1, z1)
    } else {
        let node = eph.omega0 + (eph.omega_dot - earth_rate) * tk - earth_rate * toe;
        let (sin_o, cos_o) = node.sin_cos();
        EcefPosition::new(
            x_orb * cos_o - y_orb * cos_i * sin_o,
            x_orb * sin_o + y_orb * cos_i * cos_o,
            y_orb * sin_i,
        )
    };

    let clock = clock_seconds(eph, transmit_time, ecc_anomaly, opts);
    Ok(SatelliteState {
        position: sagnac_rotate(position, earth_rate, travel_time),
        clock_correction: clock * SPEED_OF_LIGHT,
    })
}

/// Signal transmit time and flight time for a pseudorange received at `reception_time`.
///
/// `transmit_time = reception_time - rho/c - dt_sat(transmit_time)`; the
/// flight time returned is `reception_time - transmit_time`.
pub fn transmit_time_iteration(
    rho_obs: f64,
    reception_time: f64,
    eph: &BroadcastEphemeris,
    opts: &EphemerisOptions,
) -> Result<(f64, f64), EphemerisError> {
    let flight = rho_obs / SPEED_OF_LIGHT;
    let mut travel = flight;
    for _ in 0..3 {
        let next = flight + satellite_clock(eph, reception_time - travel, opts)?;
        let change = (next - travel).abs();
        travel = next;
        if change < 1e-9 {
            break;
        }
    }
    Ok((reception_time - travel, travel))
}

/// Ephemeris records grouped per satellite.
#[derive(Debug, Clone, Default)]
pub struct EphemerisStore {
    records: BTreeMap<SatelliteId, Vec<BroadcastEphemeris>>,
}

impl EphemerisStore {
    pub fn new(records: impl IntoIterator<Item = BroadcastEphemeris>) -> Self {
        let mut store = Self::default();
        for r in records {
            store.records.entry(r.sat()).or_default().push(r);
        }
        store
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record with the smallest |t - toe|; ties go to the later broadcast.
    pub fn select(&self, sat: SatelliteId, t: f64) -> Option<&BroadcastEphemeris> {
        self.records.get(&sat)?.iter().enumerate().min_by(|(ia, a), (ib, b)| {
            let da = a.time_from_toe(t).abs();
            let db = b.time_from_toe(t).abs();
            da.total_cmp(&db)
                .then_with(|| b.transmission_time.total_cmp(&a.transmission_time))
                .then_with(|| ib.cmp(ia))
        })
        .map(|(_, r)| r)
    }

    /// Transmit-time solve plus orbit evaluation for one pseudorange.
    pub fn signal_state(
        &self,
        sat: SatelliteId,
        rho_obs: f64,
        reception_time: f64,
        opts: &EphemerisOptions,
    ) -> Result<SatelliteState, EphemerisError> {
        let eph = self.select(sat, reception_time).ok_or(EphemerisError::Missing(sat))?;
        let (transmit, travel) = transmit_time_iteration(rho_obs, reception_time, eph, opts)?;
        satellite_state(eph, transmit, travel, opts)
    }
}
