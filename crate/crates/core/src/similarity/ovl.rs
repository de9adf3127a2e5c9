//! Overlapping coefficient of two univariate normal densities.

use libm::erfc;

use crate::error::{Error, Result};

/// Relative std difference below which the two densities are treated as
/// having a common std. The closed form error is of the same order.
const EQUAL_STD_RTOL: f64 = 1e-9;

/// Standard normal CDF, computed through `erfc` so both tails stay accurate.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    std_normal_cdf((x - mean) / std)
}

fn normal_sf(x: f64, mean: f64, std: f64) -> f64 {
    std_normal_cdf((mean - x) / std)
}

/// Area under `min(f1, f2)` for `f1 = N(mean1, std1²)` and `f2 = N(mean2, std2²)`.
///
/// With equal stds the densities cross once at the midpoint and the overlap
/// is `2 Φ(-|Δμ| / 2σ)`. Otherwise they cross twice; the narrower density is
/// the lower one outside the crossing points and the wider one between them.
pub fn gaussian_ovl(mean1: f64, std1: f64, mean2: f64, std2: f64) -> Result<f64> {
    for s in [std1, std2] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("OVL needs positive finite stds, got {s}")));
        }
    }
    if !(mean1.is_finite() && mean2.is_finite()) {
        return Err(Error::Domain("OVL needs finite means".into()));
    }

    let scale = std1.max(std2);
    if (std1 - std2).abs() <= EQUAL_STD_RTOL * scale {
        let sigma = 0.5 * (std1 + std2);
        let ovl = 2.0 * std_normal_cdf(-(mean1 - mean2).abs() / (2.0 * sigma));
        return Ok(ovl.clamp(0.0, 1.0));
    }

    let (mn, sn, mw, sw) = if std1 < std2 {
        (mean1, std1, mean2, std2)
    } else {
        (mean2, std2, mean1, std1)
    };
    let (lo, hi) = crossing_points(mn, sn, mw, sw);
    let outside = normal_cdf(lo, mn, sn) + normal_sf(hi, mn, sn);
    let inside = normal_cdf(hi, mw, sw) - normal_cdf(lo, mw, sw);
    Ok((outside + inside).clamp(0.0, 1.0))
}

/// Roots of `sw²(x-mn)² - sn²(x-mw)² + 2 sn² sw² ln(sn/sw) = 0`, i.e. the
/// points where the two log-densities are equal. Requires `sn < sw`.
fn crossing_points(mn: f64, sn: f64, mw: f64, sw: f64) -> (f64, f64) {
    let (vn, vw) = (sn * sn, sw * sw);
    let a = vw - vn;
    let b = -2.0 * (mn * vw - mw * vn);
    let c = mn * mn * vw - mw * mw * vn + 2.0 * vn * vw * (sn / sw).ln();
    // a > 0 and c-term keeps the discriminant positive for sn < sw
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 {
        let r = (-c / a).max(0.0).sqrt();
        (-r, r)
    } else {
        (q / a, c / q)
    };
    if r1 <= r2 {
        (r1, r2)
    } else {
        (r2, r1)
    }
}
