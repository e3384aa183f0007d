//! Rational-rate polyphase resampling with a Kaiser-windowed sinc low-pass.

use crate::error::{Error, Result};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(up, down)` for converting `from` Hz to `to` Hz, assuming both are
/// representable in milli-Hz.
pub fn rational_factors(from: f64, to: f64) -> Result<(usize, usize)> {
    if !(from > 0.0 && to > 0.0) {
        return Err(Error::Config(format!("cannot resample {from} Hz to {to} Hz")));
    }
    let f = (from * 1000.0).round() as u64;
    let t = (to * 1000.0).round() as u64;
    if ((f as f64) / 1000.0 - from).abs() > 1e-6 || ((t as f64) / 1000.0 - to).abs() > 1e-6 {
        return Err(Error::Config(format!("sample rates {from} / {to} are not rational at 1 mHz resolution")));
    }
    let g = gcd(f, t);
    let (up, down) = ((t / g) as usize, (f / g) as usize);
    if up.max(down) > 10_000 {
        return Err(Error::Config(format!("resampling ratio {up}/{down} is too fine")));
    }
    Ok((up, down))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Low-pass prototype with cutoff at the lower of the two Nyquist rates and unit DC gain per phase.
fn design_filter(up: usize, down: usize) -> Vec<f64> {
    const HALF_TAPS: usize = 10;
    const BETA: f64 = 5.0;
    let max = up.max(down);
    let half = HALF_TAPS * max;
    let n = 2 * half + 1;
    let cutoff = 1.0 / max as f64;
    let i0b = bessel_i0(BETA);
    let mut h: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 - half as f64;
            let x = cutoff * t;
            let sinc = if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let r = t / half as f64;
            let w = bessel_i0(BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            cutoff * sinc * w
        })
        .collect();
    let s: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / s;
    }
    h
}

/// Resample `x` by `up/down` with zero-phase polyphase filtering.
///
/// Output length is `ceil(len * up / down)`; samples outside the input are
/// treated as zero.
pub fn resample_poly(x: &[f32], up: usize, down: usize) -> Vec<f32> {
    if up == down {
        return x.to_vec();
    }
    let h = design_filter(up, down);
    let c = (h.len() - 1) / 2;
    let n_out = (x.len() * up).div_ceil(down);
    let last = h.len() - 1;
    (0..n_out)
        .map(|j| {
            // y[j] = sum_i x[i] h[j*down - i*up + c], 0 <= index <= last
            let t = j * down + c;
            let i_hi = (t / up).min(x.len().saturating_sub(1));
            let i_lo = t.saturating_sub(last).div_ceil(up);
            let mut acc = 0.0f64;
            if i_lo <= i_hi {
                for i in i_lo..=i_hi {
                    acc += x[i] as f64 * h[t - i * up];
                }
            }
            acc as f32
        })
        .collect()
}

pub fn resample(x: &[f32], from_hz: f64, to_hz: f64) -> Result<Vec<f32>> {
    let (up, down) = rational_factors(from_hz, to_hz)?;
    Ok(resample_poly(x, up, down))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(rate: f64, freq: f64, secs: f64) -> Vec<f32> {
        let n = (rate * secs) as usize;
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin() as f32)
            .collect()
    }

    #[test]
    fn factors_reduce() {
        assert_eq!(rational_factors(125.0, 100.0).unwrap(), (4, 5));
        assert_eq!(rational_factors(256.0, 100.0).unwrap(), (25, 64));
        assert_eq!(rational_factors(100.0, 100.0).unwrap(), (1, 1));
        assert!(rational_factors(0.0, 100.0).is_err());
    }

    #[test]
    fn in_band_sine_survives_rate_changes() {
        for &(from, to) in &[(125.0, 100.0), (200.0, 100.0), (256.0, 100.0), (100.0, 250.0)] {
            let x = sine(from, 5.0, 20.0);
            let y = resample(&x, from, to).unwrap();
            assert_eq!(y.len(), (x.len() as f64 * to / from).ceil() as usize);
            let expect = sine(to, 5.0, 20.0);
            // skip filter edges
            let m = y.len() / 10;
            for k in m..y.len() - m {
                assert!((y[k] - expect[k]).abs() < 2e-3, "{from}->{to} at {k}: {} vs {}", y[k], expect[k]);
            }
        }
    }

    #[test]
    fn out_of_band_tone_is_suppressed() {
        // 45 Hz is above the 50 Hz output's passband edge region once filtered
        let x = sine(200.0, 70.0, 10.0);
        let y = resample(&x, 200.0, 100.0).unwrap();
        let m = y.len() / 10;
        let peak = y[m..y.len() - m].iter().fold(0.0f32, |a, v| a.max(v.abs()));
        assert!(peak < 0.01, "alias peak {peak}");
    }
}
