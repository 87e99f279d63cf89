//! Reciprocal gamma function on the complex plane.

use std::f64::consts::PI;

use num_complex::Complex64;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// 1/Γ(z). Entire; exactly zero at z = 0, −1, −2, …
pub fn recip_gamma(z: Complex64) -> Complex64 {
    if z.im == 0.0 && z.re <= 0.0 && z.re.fract() == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if z.re < 0.5 {
        // 1/Γ(z) = sin(πz) Γ(1−z) / π
        let one_minus = Complex64::new(1.0, 0.0) - z;
        return (z * PI).sin() / (PI * recip_gamma(one_minus));
    }
    let zm = z - 1.0;
    let mut series = Complex64::new(LANCZOS_COEFFS[0], 0.0);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (zm + i as f64);
    }
    let t = zm + LANCZOS_G + 0.5;
    // Γ(z) = √(2π) t^{z−1/2} e^{−t} series
    let log_gamma = 0.5 * (2.0 * PI).ln() + (zm + 0.5) * t.ln() - t + series.ln();
    (-log_gamma).exp()
}

/// 1 / ((s + k) Γ(s)) for a nonnegative integer `k`, written as
/// s(s+1)…(s+k−1) / Γ(s+k+1) so that it stays finite at s = −k.
pub fn recip_gamma_over_shift(s: Complex64, k: u32) -> Complex64 {
    let mut prod = Complex64::new(1.0, 0.0);
    for i in 0..k {
        prod *= s + i as f64;
    }
    prod * recip_gamma(s + (k + 1) as f64)
}
