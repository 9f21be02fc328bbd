//! Shortest round-trip decimal formatting for numeric output.

/// Formats `v` with the shortest decimal representation that parses back to
/// the same `f64`. Integral values keep a trailing `.0` and negative zero is
/// printed as `0.0`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0.0".to_string();
    }
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        assert_eq!(fmt_f64(37.5), "37.5");
        assert_eq!(fmt_f64(-0.0), "0.0");
        assert_eq!(fmt_f64(11130.0), "11130.0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
