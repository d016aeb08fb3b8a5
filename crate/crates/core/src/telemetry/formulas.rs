use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Packet error rate under independent bit errors.
pub fn per_from_ber(ber: f64, packet_bits: u32) -> f64 {
    1.0 - (1.0 - ber).powi(packet_bits as i32)
}

pub fn snr_db(p_signal: f64, p_noise: f64) -> Result<f64> {
    if !(p_signal > 0.0 && p_noise > 0.0) {
        return Err(Error::Domain(format!(
            "SNR needs positive powers, got signal {p_signal} and noise {p_noise}"
        )));
    }
    Ok(10.0 * (p_signal / p_noise).log10())
}

/// Phase advance over one symbol caused by a carrier-frequency offset.
pub fn phase_drift(f_off_hz: f64, t_symb: f64) -> f64 {
    2.0 * PI * f_off_hz * t_symb
}
