use serde::{Deserialize, Serialize};

/// Ratio range over which `f′` is evaluated; ratios come from probabilities
/// clamped to `[1e-7, 1 − 1e-7]`.
pub const RATIO_MIN: f64 = 1e-7;
pub const RATIO_MAX: f64 = 1e7;

/// The `f` of the f-divergence driving the flow, through `f′` and `f″`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FDivergence {
    /// `f(r) = r ln r`, so `f′(r) = ln r + 1`.
    #[default]
    Kl,
    /// `f′(r) = ln(r / (1 + r))`.
    Logd,
}

impl FDivergence {
    pub fn f_prime(self, r: f64) -> f64 {
        match self {
            FDivergence::Kl => kl_f_prime(r),
            FDivergence::Logd => logd_f_prime(r),
        }
    }

    /// `r · f″(r)`, the factor converting `∇ ln r` into `∇ f′(r)`.
    pub fn r_f_second(self, r: f64) -> f64 {
        let r = r.clamp(RATIO_MIN, RATIO_MAX);
        match self {
            FDivergence::Kl => 1.0,
            FDivergence::Logd => 1.0 / (1.0 + r),
        }
    }
}

pub fn kl_f_prime(r: f64) -> f64 {
    r.clamp(RATIO_MIN, RATIO_MAX).ln() + 1.0
}

pub fn logd_f_prime(r: f64) -> f64 {
    let r = r.clamp(RATIO_MIN, RATIO_MAX);
    -(1.0 / r).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_values() {
        assert_eq!(kl_f_prime(1.0), 1.0);
        assert!((kl_f_prime(std::f64::consts::E) - 2.0).abs() < 1e-15);
        assert!((kl_f_prime(0.25) - (1.0 + 0.25f64.ln())).abs() < 1e-15);
        assert!((kl_f_prime(0.25) + 0.3863).abs() < 1e-4);
        assert!((logd_f_prime(1.0) - 0.5f64.ln()).abs() < 1e-15);
        let big = logd_f_prime(1e7);
        assert!(big < 0.0 && big > -1e-6);
        assert!((logd_f_prime(0.0) - logd_f_prime(RATIO_MIN)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn second_derivative_matches_differences(lr in -15.0..15.0f64) {
            for div in [FDivergence::Kl, FDivergence::Logd] {
                let r = lr.exp();
                let h = 1e-6 * r;
                let fd = (div.f_prime(r + h) - div.f_prime(r - h)) / (2.0 * h);
                prop_assert!((fd * r - div.r_f_second(r)).abs() < 1e-6);
            }
        }

        #[test]
        fn finite_on_the_clamped_range(lr in -16.2..16.2f64) {
            for div in [FDivergence::Kl, FDivergence::Logd] {
                prop_assert!(div.f_prime(lr.exp()).is_finite());
            }
        }
    }
}
