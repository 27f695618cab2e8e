//! Black-Scholes with unit spot and zero rates.

use crate::error::{Error, Result};

pub const VOL_LO: f64 = 1e-4;
pub const VOL_HI: f64 = 5.0;
pub const MAX_ITERATIONS: usize = 200;
/// Prices this close to a no-arbitrage bound have no usable implied vol.
pub const BAND_EPSILON: f64 = 1e-14;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn check_inputs(strike: f64, maturity: f64) -> Result<()> {
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(Error::invalid(format!("strike must be positive, got {strike}")));
    }
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::invalid(format!("maturity must be positive, got {maturity}")));
    }
    Ok(())
}

fn d1_d2(strike: f64, maturity: f64, vol: f64) -> (f64, f64) {
    let s = vol * maturity.sqrt();
    let d1 = (-strike.ln() + 0.5 * s * s) / s;
    (d1, d1 - s)
}

/// Call price with spot one.
pub fn bs_price(spot: f64, strike: f64, maturity: f64, vol: f64) -> Result<f64> {
    if spot != 1.0 {
        return Err(Error::invalid("spot is normalized to one"));
    }
    check_inputs(strike, maturity)?;
    if !(vol > 0.0 && vol.is_finite()) {
        return Err(Error::invalid(format!("vol must be positive, got {vol}")));
    }
    let (d1, d2) = d1_d2(strike, maturity, vol);
    Ok(norm_cdf(d1) - strike * norm_cdf(d2))
}

/// Price of the out-of-the-money option: put below strike one, call at or
/// above it.
pub fn bs_otm_price(strike: f64, maturity: f64, vol: f64) -> f64 {
    let (d1, d2) = d1_d2(strike, maturity, vol);
    if strike < 1.0 {
        strike * norm_cdf(-d2) - norm_cdf(-d1)
    } else {
        norm_cdf(d1) - strike * norm_cdf(d2)
    }
}

/// Vega with spot one.
pub fn bs_vega(strike: f64, maturity: f64, vol: f64) -> f64 {
    let (d1, _) = d1_d2(strike, maturity, vol);
    norm_pdf(d1) * maturity.sqrt()
}

/// Implied vol of a call price.
pub fn implied_vol(price: f64, strike: f64, maturity: f64) -> Result<f64> {
    check_inputs(strike, maturity)?;
    let lower = (1.0 - strike).max(0.0);
    if !(price > lower + BAND_EPSILON && price < 1.0 - BAND_EPSILON) {
        return Err(Error::NoSolution { price, lower, upper: 1.0 });
    }
    if strike < 1.0 {
        implied_vol_otm(price - lower, strike, maturity)
    } else {
        implied_vol_otm(price, strike, maturity)
    }
}

/// Implied vol from the out-of-the-money price (see [`bs_otm_price`]).
///
/// Safeguarded Newton inside a shrinking bracket on `[1e-4, 5]`, falling back
/// to bisection whenever the Newton step leaves the bracket.
pub fn implied_vol_otm(price: f64, strike: f64, maturity: f64) -> Result<f64> {
    check_inputs(strike, maturity)?;
    let upper = if strike < 1.0 { strike } else { 1.0 };
    if !(price > BAND_EPSILON && price < upper - BAND_EPSILON) {
        return Err(Error::NoSolution { price, lower: 0.0, upper });
    }
    let f = |v: f64| bs_otm_price(strike, maturity, v) - price;
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::SolverFailure(format!(
            "price {price} implies a vol outside [{VOL_LO}, {VOL_HI}] (K = {strike}, T = {maturity})"
        )));
    }
    // Moneyness-based start, clamped.
    let mut v = ((2.0 * strike.ln().abs() / maturity).sqrt()).clamp(0.05, 1.0);
    for _ in 0..MAX_ITERATIONS {
        let fv = f(v);
        if fv == 0.0 {
            return Ok(v);
        }
        if fv < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let vega = bs_vega(strike, maturity, v);
        let newton = v - fv / vega;
        let next = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - v).abs() <= 1e-15 * v || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        v = next;
    }
    Err(Error::SolverFailure(format!(
        "no convergence after {MAX_ITERATIONS} iterations (price {price}, K = {strike}, T = {maturity})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_the_money_price() {
        let p = bs_price(1.0, 1.0, 1.0, 0.2).unwrap();
        assert!((p - 0.07965567).abs() < 5e-9, "{p}");
    }

    #[test]
    fn round_trip() {
        let p = bs_price(1.0, 0.9, 0.5, 0.35).unwrap();
        assert!((implied_vol(p, 0.9, 0.5).unwrap() - 0.35).abs() < 1e-10);
        for &k in &[0.5, 0.7, 1.0, 1.3, 2.0] {
            for &t in &[0.05, 0.3, 2.0] {
                for &v in &[0.05, 0.2, 0.8, 2.5] {
                    let p = bs_otm_price(k, t, v);
                    if p < 1e-12 {
                        continue;
                    }
                    let back = implied_vol_otm(p, k, t).unwrap();
                    assert!((back - v).abs() < 1e-10, "k {k} t {t} v {v}: {back}");
                }
            }
        }
    }

    #[test]
    fn rejects_prices_at_the_bounds() {
        let k = 0.7;
        assert!(matches!(implied_vol(1.0 - k + 1e-15, k, 1.0), Err(Error::NoSolution { .. })));
        assert!(matches!(implied_vol(1.0, k, 1.0), Err(Error::NoSolution { .. })));
        assert!(matches!(implied_vol(0.0, 1.2, 1.0), Err(Error::NoSolution { .. })));
        assert!(implied_vol(0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn parity_between_call_and_otm_forms() {
        let (k, t, v) = (0.8, 0.7, 0.3);
        let call = bs_price(1.0, k, t, v).unwrap();
        assert!((call - (1.0 - k) - bs_otm_price(k, t, v)).abs() < 1e-15);
    }
}
