use crate::linalg::C64;

/// `rho = sqrt(lambda)` on the branch `Re rho >= 0`, with `tau = Im rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralScalars {
    pub rho: C64,
    pub tau: f64,
}

impl SpectralScalars {
    pub fn new(lambda: C64) -> Self {
        let rho = branch_sqrt(lambda);
        Self { rho, tau: rho.im }
    }
}

/// Square root with `Re >= 0`; on the cut `Re = 0` the root with `Im >= 0` is taken.
pub fn branch_sqrt(lambda: C64) -> C64 {
    let mut r = lambda.sqrt();
    if r.re < 0.0 {
        r = -r;
    }
    if r.re == 0.0 && r.im < 0.0 {
        r = -r;
    }
    // normalise signed zeros so equal inputs print identically
    C64::new(r.re + 0.0, r.im + 0.0)
}

/// `sin(c x) / c`, continuous through `c = 0` where it equals `x`.
pub fn sinc_scaled(c: C64, x: f64) -> C64 {
    let z = c * x;
    if z.norm() < 1e-4 {
        let z2 = z * z;
        C64::new(x, 0.0) * (C64::new(1.0, 0.0) - z2 / 6.0 + z2 * z2 / 120.0)
    } else {
        (z).sin() / c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn negative_axis_takes_upper_root() {
        let r = branch_sqrt(C64::new(-4.0, -0.0));
        assert_eq!(r, C64::new(0.0, 2.0));
        let r = branch_sqrt(C64::new(-4.0, 0.0));
        assert_eq!(r, C64::new(0.0, 2.0));
        assert_eq!(branch_sqrt(C64::new(0.0, 0.0)), C64::new(0.0, 0.0));
    }

    #[test]
    fn sinc_limit() {
        assert!((sinc_scaled(C64::new(0.0, 0.0), 2.0) - C64::new(2.0, 0.0)).norm() < 1e-15);
        let c = C64::new(3e-6, 1e-6);
        let direct = (c * 1.7).sin() / c;
        assert!((sinc_scaled(c, 1.7) - direct).norm() < 1e-10);
    }

    proptest! {
        #[test]
        fn root_squares_back(re in -1e4f64..1e4, im in -1e4f64..1e4) {
            let lambda = C64::new(re, im);
            let s = SpectralScalars::new(lambda);
            prop_assert!(s.rho.re >= 0.0);
            prop_assert!((s.rho * s.rho - lambda).norm() <= 1e-12 * (1.0 + lambda.norm()));
            prop_assert_eq!(s.tau, s.rho.im);
        }
    }
}
