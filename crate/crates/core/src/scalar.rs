//! Unit conversions and small special functions, generic over the float type.

use num_traits::Float;

/// Speed of light used for all wavelength computations.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

fn c<T: Float>(v: f64) -> T {
    T::from(v).expect("constant representable in target float")
}

pub fn dbm_to_watts<T: Float>(dbm: T) -> T {
    c::<T>(10.0).powf((dbm - c(30.0)) / c(10.0))
}

pub fn watts_to_dbm<T: Float>(w: T) -> T {
    c::<T>(10.0) * w.log10() + c(30.0)
}

pub fn db_to_linear<T: Float>(db: T) -> T {
    c::<T>(10.0).powf(db / c(10.0))
}

pub fn linear_to_db<T: Float>(x: T) -> T {
    c::<T>(10.0) * x.log10()
}

/// Normalized sinc, `sin(πx)/(πx)`.
pub fn sinc<T: Float>(x: T) -> T {
    if x == T::zero() {
        return T::one();
    }
    let px = c::<T>(std::f64::consts::PI) * x;
    px.sin() / px
}

pub fn wavelength<T: Float>(carrier_hz: T) -> T {
    c::<T>(SPEED_OF_LIGHT) / carrier_hz
}

/// Thermal noise power in watts for a noise density in dBm/Hz and a bandwidth.
pub fn noise_power<T: Float>(density_dbm_per_hz: T, bandwidth_hz: T) -> T {
    dbm_to_watts(density_dbm_per_hz + c::<T>(10.0) * bandwidth_hz.log10())
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase<T: Float>(phi: T) -> T {
    let two_pi = c::<T>(std::f64::consts::TAU);
    let r = phi % two_pi;
    let r = if r < T::zero() { r + two_pi } else { r };
    // `r + 2π` can round up to exactly 2π for tiny negative inputs.
    if r >= two_pi {
        T::zero()
    } else {
        r
    }
}
