//! Locale-independent number formatting for CSV/JSON emission.

/// Format with 12 significant digits, `%.12g`-style: plain decimal notation
/// for moderate exponents, scientific otherwise, trailing zeros trimmed.
/// Always uses `.` as the decimal separator.
pub fn sig12(x: f64) -> String {
    sig(x, 12)
}

/// Format with `digits` significant digits.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    // split "d.ddddde<exp>"
    let epos = sci.find('e').unwrap();
    let exp: i32 = sci[epos + 1..].parse().unwrap();
    if (-4..digits as i32).contains(&exp) {
        // plain decimal with the right number of fractional digits
        let frac = (digits as i32 - 1 - exp).max(0) as usize;
        let plain = format!("{:.*}", frac, x);
        trim_zeros(&plain)
    } else {
        let mantissa = trim_zeros(&sci[..epos]);
        format!("{mantissa}e{exp}")
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
