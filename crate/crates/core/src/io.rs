//! Number formatting shared by the JSON and CSV writers.

/// Scientific notation with 17 significant digits (exact `f64` round trip).
/// Non-finite values print as `nan`, `inf` or `-inf`.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub(crate) fn json_f64_array(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|&x| fmt17(x)).collect();
    format!("[{}]", items.join(","))
}

pub(crate) fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
            // Valid JSON number.
            assert_eq!(serde_json::from_str::<f64>(&s).unwrap(), x);
        }
        assert_eq!(fmt17(f64::NAN), "nan");
    }
}
