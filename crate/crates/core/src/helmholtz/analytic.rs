//! Closed-form free-space solution for validating the discrete operator.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

/// Bessel `J0` and `Y0` for `x > 0` from the Abramowitz-Stegun polynomial
/// fits (absolute error below about 1e-7).
pub fn bessel_j0_y0(x: f64) -> (f64, f64) {
    assert!(x > 0.0, "Bessel functions evaluated at non-positive argument {x}");
    if x <= 3.0 {
        let t = (x / 3.0).powi(2);
        let j0 = 1.0 + t * (-2.2499997 + t * (1.2656208 + t * (-0.3163866 + t * (0.0444479 + t * (-0.0039444 + t * 0.0002100)))));
        let y0 = 2.0 / PI * (x / 2.0).ln() * j0
            + 0.36746691
            + t * (0.60559366 + t * (-0.74350384 + t * (0.25300117 + t * (-0.04261214 + t * (0.00427916 - t * 0.00024846)))));
        (j0, y0)
    } else {
        let u = 3.0 / x;
        let f0 = 0.79788456
            + u * (-0.00000077 + u * (-0.00552740 + u * (-0.00009512 + u * (0.00137237 + u * (-0.00072805 + u * 0.00014476)))));
        let th = x - 0.78539816
            + u * (-0.04166397 + u * (-0.00003954 + u * (0.00262573 + u * (-0.00054125 + u * (-0.00029333 + u * 0.00013558)))));
        let s = f0 / x.sqrt();
        (s * th.cos(), s * th.sin())
    }
}

/// `H0^(1)(x) = J0(x) + i Y0(x)`.
pub fn hankel1_0(x: f64) -> Complex64 {
    let (j, y) = bessel_j0_y0(x);
    Complex64::new(j, y)
}

/// Outgoing solution of `(lap + k^2) u = amplitude * delta` at distance
/// `r_m` (metres) for a real wavenumber `k` (1/m).
pub fn green_2d(k: f64, r_m: f64, amplitude: f64) -> Complex64 {
    Complex64::new(0.0, -0.25) * hankel1_0(k * r_m) * amplitude
}

/// Large-argument form, for checking the polynomial branch.
pub fn hankel1_0_asymptotic(x: f64) -> Complex64 {
    (2.0 / (PI * x)).sqrt() * Complex64::from_polar(1.0, x - FRAC_PI_2 / 2.0)
}
