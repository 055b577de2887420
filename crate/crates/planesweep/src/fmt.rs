//! Decimal formatting of floating-point outputs.

/// `v` rounded to 9 significant digits, printed like C's `%.9g`: fixed
/// notation for exponents in `[-5, 9)`, scientific otherwise, trailing zeros
/// dropped. Zero of either sign prints as `0`.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn matches_printf_g9() {
        let cases = [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (0.07, "0.07"),
            (1.0 / 3.0, "0.333333333"),
            (-2.0 / 3.0, "-0.666666667"),
            (123456789.4, "123456789"),
            (1234567890.0, "1.23456789e9"),
            (9.9999999996, "10"),
            (1e-5, "0.00001"),
            (1.5e-6, "1.5e-6"),
            (6.02214076e23, "6.02214076e23"),
        ];
        for (v, want) in cases {
            assert_eq!(sig9(v), want, "{v}");
        }
    }

    #[test]
    fn nine_digits_round_trip_closely() {
        for &v in &[std::f64::consts::PI, 0.0123456789123, -98765.4321987, 3.3e-12] {
            let back: f64 = sig9(v).parse().unwrap();
            assert!((back - v).abs() <= 5e-9 * v.abs(), "{v} -> {back}");
        }
    }
}
