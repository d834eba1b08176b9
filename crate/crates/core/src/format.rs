//! Number formatting shared by every text format the crate emits.

/// Round to nine significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Shortest text that parses back to `round_sig9(x)`.
///
/// Plain decimal for moderate magnitudes, exponent form otherwise. Parsing
/// the output and formatting again yields the same string.
pub fn sig9(x: f64) -> String {
    let r = round_sig9(x);
    if r == 0.0 {
        return "0".to_string();
    }
    let a = r.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_values() {
        assert_eq!(sig9(110.0), "110");
        assert_eq!(sig9(-480.0), "-480");
        assert_eq!(sig9(0.5), "0.5");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-0.0), "0");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(1.2566370614359173e-6), "1.25663706e-6");
    }

    proptest! {
        #[test]
        fn reformat_is_stable(x in -1e20f64..1e20, e in -30i32..30) {
            let v = x * 10f64.powi(e);
            let s = sig9(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(sig9(back), s);
        }
    }
}
