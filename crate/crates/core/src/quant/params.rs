use crate::error::{Error, Result};

/// Half-width used to widen a degenerate `[a, a]` range.
pub const DEGENERATE_HALF_WIDTH: f64 = 1e-8;

/// Default bit-width.
pub const DEFAULT_BITS: u32 = 8;

/// `min(max(x, a), b)`.
pub fn clamp(x: f64, a: f64, b: f64) -> Result<f64> {
    if a > b || a.is_nan() || b.is_nan() {
        return Err(Error::contract(format!("clamp range [{a}, {b}] is empty")));
    }
    Ok(x.max(a).min(b))
}

/// A uniform K-bit grid over `[a, b]`.
///
/// Stored canonically as `(a, Δ, K)`; the upper bound is derived as
/// `a + Δ·(2^K − 1)` so that the serialized form round-trips exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    a: f64,
    delta: f64,
    bits: u32,
}

impl QuantParams {
    /// Grid over `[a, b]` with `Δ = (b − a)/(2^K − 1)`. A degenerate range
    /// `a == b` is widened by [`DEGENERATE_HALF_WIDTH`] on both sides.
    pub fn from_range(a: f64, b: f64, bits: u32) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::contract(format!("range [{a}, {b}] is not finite")));
        }
        if a > b {
            return Err(Error::contract(format!("range [{a}, {b}] has a > b")));
        }
        check_bits(bits)?;
        let (a, b) = if a == b {
            (a - DEGENERATE_HALF_WIDTH, b + DEGENERATE_HALF_WIDTH)
        } else {
            (a, b)
        };
        let delta = (b - a) / levels(bits) as f64;
        Self::from_parts(a, delta, bits)
    }

    /// Rebuilds parameters from their stored `(a, Δ, K)` form.
    pub fn from_parts(a: f64, delta: f64, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if !a.is_finite() || !delta.is_finite() || delta <= 0.0 {
            return Err(Error::contract(format!("invalid grid a={a} Δ={delta}")));
        }
        Ok(Self { a, delta, bits })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.a + self.delta * self.max_code() as f64
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Largest code, `2^K − 1`.
    pub fn max_code(&self) -> u32 {
        levels(self.bits)
    }

    /// `round((clamp(x, a, b) − a)/Δ)`, rounding half away from zero.
    pub fn quantize(&self, x: f64) -> u8 {
        let x = if x.is_nan() { self.a } else { x.max(self.a).min(self.b()) };
        let code = ((x - self.a) / self.delta).round();
        code.max(0.0).min(self.max_code() as f64) as u8
    }

    /// `code·Δ + a`.
    pub fn dequantize(&self, code: u32) -> Result<f64> {
        if code > self.max_code() {
            return Err(Error::contract(format!(
                "code {code} outside [0, {}]",
                self.max_code()
            )));
        }
        Ok(self.value(code as u8))
    }

    /// Dequantize a code already known to be on the grid.
    #[inline]
    pub fn value(&self, code: u8) -> f64 {
        code as f64 * self.delta + self.a
    }

    /// `dequantize(quantize(x))`.
    #[inline]
    pub fn fake(&self, x: f64) -> f64 {
        self.value(self.quantize(x))
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if !(2..=8).contains(&bits) {
        return Err(Error::contract(format!("bit-width {bits} outside [2, 8]")));
    }
    Ok(())
}

fn levels(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_cases() {
        assert_eq!(clamp(0.5, 0.0, 1.0).unwrap(), 0.5);
        assert_eq!(clamp(-3.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(clamp(7.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(clamp(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn endpoints_map_to_extreme_codes() {
        let p = QuantParams::from_range(-1.5, 2.5, 8).unwrap();
        assert_eq!(p.quantize(-1.5), 0);
        assert_eq!(p.quantize(2.5), 255);
        assert_eq!(p.dequantize(0).unwrap(), -1.5);
        let top = p.dequantize(255).unwrap();
        assert!((top - 2.5).abs() <= f64::EPSILON * 4.0);
    }

    #[test]
    fn symmetric_range_example() {
        // Δ = 2/255; (0.3 + 1)/Δ = 165.75 -> 166
        let p = QuantParams::from_range(-1.0, 1.0, 8).unwrap();
        assert_eq!(p.quantize(0.3), 166);
        let back = p.dequantize(166).unwrap();
        assert!((back - (166.0 * 2.0 / 255.0 - 1.0)).abs() < 1e-15);
        assert!((back - 0.301_960_784_313_725_5).abs() < 1e-12);
    }

    #[test]
    fn unit_step_grid_rounds_like_round() {
        let p = QuantParams::from_range(0.0, 255.0, 8).unwrap();
        assert_eq!(p.delta(), 1.0);
        for i in 0..=2550 {
            let t = i as f64 * 0.1;
            assert_eq!(p.quantize(t) as f64, t.round().min(255.0), "t={t}");
        }
        // half away from zero
        assert_eq!(p.quantize(2.5), 3);
        assert_eq!(p.quantize(3.5), 4);
    }

    #[test]
    fn degenerate_range_is_widened() {
        let p = QuantParams::from_range(3.0, 3.0, 8).unwrap();
        assert!(p.delta() > 0.0);
        assert!((p.a() - (3.0 - DEGENERATE_HALF_WIDTH)).abs() < 1e-15);
        // 3.0 sits on a half-step boundary of the widened grid
        assert!((p.fake(3.0) - 3.0).abs() <= p.delta() * 0.5 + 1e-13);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(QuantParams::from_range(1.0, 0.0, 8).is_err());
        assert!(QuantParams::from_range(0.0, 1.0, 1).is_err());
        assert!(QuantParams::from_range(0.0, 1.0, 9).is_err());
        assert!(QuantParams::from_range(f64::NAN, 1.0, 8).is_err());
        assert!(QuantParams::from_parts(0.0, 0.0, 8).is_err());
        let p = QuantParams::from_range(0.0, 1.0, 8).unwrap();
        assert!(p.dequantize(256).is_err());
    }

    #[test]
    fn far_outside_values_stay_in_code_range() {
        let p = QuantParams::from_range(-0.1, 0.1, 8).unwrap();
        assert_eq!(p.quantize(-1e300), 0);
        assert_eq!(p.quantize(1e300), 255);
        assert_eq!(p.quantize(f64::INFINITY), 255);
        assert_eq!(p.quantize(f64::NEG_INFINITY), 0);
    }

    #[test]
    fn grid_points_are_fixed_points() {
        let p = QuantParams::from_range(-0.37, 1.91, 8).unwrap();
        for k in 0..=255u32 {
            let x = p.value(k as u8);
            assert_eq!(p.quantize(x) as u32, k);
            assert!((p.fake(x) - x).abs() <= f64::EPSILON * x.abs().max(1.0));
        }
    }
}
