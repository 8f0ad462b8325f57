//! Attaches broadcast satellite states to parsed observations.

use crate::atmosphere::{klobuchar_delay, saastamoinen_delay, KlobucharParams};
use crate::ephemeris::{EphemerisOptions, EphemerisStore};
use crate::geodesy::{ecef_to_geodetic, elevation_azimuth};
use crate::gnss::Constellation;
use crate::solver::{solve_ols, SolverConfig, StateVector};

use super::{EpochData, Measurement, ObservationEpoch, ParseWarning};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Corrections<'a> {
    pub ionosphere: Option<&'a KlobucharParams>,
    pub troposphere: bool,
}

/// Epochs with satellite states, plus one warning per signal that could not be placed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assembled {
    pub epochs: Vec<EpochData>,
    pub skipped: Vec<ParseWarning>,
}

/// Computes satellite states for every selected signal; epochs left empty are dropped.
pub fn assemble_epochs(
    observations: &[ObservationEpoch],
    store: &EphemerisStore,
    constellations: &[Constellation],
    opts: &EphemerisOptions,
    corrections: Corrections<'_>,
) -> Assembled {
    let mut out = Assembled::default();
    for (k, epoch) in observations.iter().enumerate() {
        let mut measurements = Vec::new();
        for s in &epoch.signals {
            if !constellations.contains(&s.constellation) {
                continue;
            }
            match store.signal_state(s.sat(), s.pseudorange, epoch.epoch_time, opts) {
                Ok(state) => measurements.push(Measurement { obs: s.clone(), state }),
                Err(e) => out.skipped.push(ParseWarning {
                    line: k,
                    message: format!("epoch {} {}: {e}", epoch.epoch_time, s.sat()),
                }),
            }
        }
        if measurements.is_empty() {
            continue;
        }
        if corrections.ionosphere.is_some() || corrections.troposphere {
            apply_corrections(epoch.epoch_time, &mut measurements, corrections);
        }
        out.epochs.push(EpochData {
            time: epoch.epoch_time,
            measurements,
        });
    }
    out
}

/// Removes modeled atmospheric delays using an uncorrected OLS position; no-op if that fails.
fn apply_corrections(time: f64, meas: &mut [Measurement], corrections: Corrections<'_>) {
    let Ok(sol) = solve_ols(meas, &StateVector::earth_center(), &SolverConfig::default()) else {
        return;
    };
    let rx = sol.position();
    let Ok(geo) = ecef_to_geodetic(rx) else {
        return;
    };
    for m in meas.iter_mut() {
        let Ok((el, az)) = elevation_azimuth(rx, m.state.position) else {
            continue;
        };
        let mut delay = 0.0;
        if let Some(k) = corrections.ionosphere {
            delay += klobuchar_delay(k, &geo, el, az, time, m.obs.constellation);
        }
        if corrections.troposphere {
            delay += saastamoinen_delay(&geo, el);
        }
        m.obs.pseudorange -= delay;
    }
}
