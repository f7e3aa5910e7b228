//! Fixed-precision number formatting shared by every text output.

/// Formats `x` rounded to 12 significant digits, in the shortest form that
/// reads back as the rounded value.
///
/// ```
/// use radlabel::format::real;
/// assert_eq!(real(0.5), "0.5");
/// assert_eq!(real(2.0 / 3.0), "0.666666666667");
/// assert_eq!(real(-0.0), "0");
/// ```
pub fn real(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".to_string();
    }
    rounded.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(real(1.0), "1");
        assert_eq!(real(0.1 + 0.2), "0.3");
        assert_eq!(real(123456.7890123456), "123456.789012");
        assert_eq!(real(1e-7), "0.0000001");
    }
}
