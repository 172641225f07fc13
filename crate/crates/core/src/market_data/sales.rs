use log::warn;

use crate::error::{Error, Result};

/// Splits observed total formula sales into the non-WIC part.
///
/// WIC infants who are not breastfed are removed in proportion to their
/// weight among all formula-fed infants. A WIC share above one (possible with
/// noisy inputs) is clamped so the result is zero.
pub fn non_wic_sales(total_sales: f64, wic_bf_rate: f64, n_wic: f64, overall_bf_rate: f64, n_all: f64) -> Result<f64> {
    for (name, r) in [("wic_bf_rate", wic_bf_rate), ("overall_bf_rate", overall_bf_rate)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("{name} must lie in [0,1], got {r}")));
        }
    }
    if overall_bf_rate >= 1.0 || n_all == 0.0 {
        return Err(Error::Numerical("formula-fed population is zero (overall_bf_rate = 1 or n_all = 0)".into()));
    }
    if n_wic < 0.0 || n_all < 0.0 {
        return Err(Error::invalid("infant counts must be nonnegative"));
    }
    let wic_fraction = (1.0 - wic_bf_rate) * n_wic / ((1.0 - overall_bf_rate) * n_all);
    if wic_fraction > 1.0 {
        warn!("WIC formula share {wic_fraction:.4} exceeds 1; non-WIC sales clamped to 0");
        return Ok(0.0);
    }
    Ok((1.0 - wic_fraction) * total_sales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let v = non_wic_sales(1000.0, 0.3, 50.0, 0.4, 100.0).unwrap();
        assert!((v - (1.0 - 35.0 / 60.0) * 1000.0).abs() < 1e-9);
        assert!((v - 416.666_666_666_7).abs() < 1e-6);
    }

    #[test]
    fn no_wic_infants_keeps_total() {
        assert_eq!(non_wic_sales(1000.0, 0.25, 0.0, 0.25, 100.0).unwrap(), 1000.0);
    }

    #[test]
    fn all_wic_gives_zero() {
        assert_eq!(non_wic_sales(500.0, 0.0, 100.0, 0.0, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn clamps_above_one() {
        assert_eq!(non_wic_sales(500.0, 0.0, 150.0, 0.0, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_denominator_errors() {
        assert!(non_wic_sales(1.0, 0.1, 1.0, 1.0, 10.0).is_err());
        assert!(non_wic_sales(1.0, 0.1, 0.0, 0.2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn linear_in_total(t in 0.0..1e6f64, a in 0.0..0.9f64, b in 0.0..0.9f64, nw in 0.0..50.0f64, extra in 0.0..100.0f64) {
            let n_all = nw + extra + 1.0;
            let one = non_wic_sales(1.0, a, nw, b, n_all).unwrap();
            let v = non_wic_sales(t, a, nw, b, n_all).unwrap();
            prop_assert!((v - one * t).abs() <= 1e-9 * (1.0 + t));
            let v2 = non_wic_sales(2.0 * t, a, nw, b, n_all).unwrap();
            prop_assert!((v2 - 2.0 * v).abs() <= 1e-9 * (1.0 + t));
        }

        #[test]
        fn decreasing_in_wic_count(t in 0.0..1e6f64, a in 0.0..0.9f64, b in 0.0..0.9f64, n1 in 0.0..50.0f64, dn in 0.0..50.0f64) {
            let n_all = 200.0;
            let lo = non_wic_sales(t, a, n1, b, n_all).unwrap();
            let hi = non_wic_sales(t, a, n1 + dn, b, n_all).unwrap();
            prop_assert!(hi <= lo + 1e-9);
        }
    }
}
