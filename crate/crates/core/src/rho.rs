//! Bounded loss functions and their derivatives.
//!
//! The bisquare family is normalized so that `sup rho = 1`; every solver in
//! this crate standardizes residuals before applying it. The squared loss is
//! kept behind the same interface for the classical least-squares path, but
//! it is unbounded and the robust solvers reject it.

use serde::{Deserialize, Serialize};

/// Tuning constant giving the bisquare M-scale a 50% breakdown point and
/// `E rho(Z) = 1/2` under standard normal errors.
pub const TUKEY_C_HALF: f64 = 1.54764;

/// Tuning constant giving the bisquare M-step 95% efficiency under normal
/// errors.
pub const TUKEY_C_95: f64 = 4.685;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Tukey's bisquare, bounded with rejection point `c`.
    TukeyBisquare,
    /// Squared loss `t^2`, unbounded; classical least-squares comparator.
    Square,
}

/// A loss family together with its tuning constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoFamily {
    kind: LossKind,
    c: f64,
}

impl RhoFamily {
    /// Bisquare loss with tuning constant `c > 0`.
    pub fn tukey(c: f64) -> Self {
        assert!(c > 0.0, "tuning constant must be positive");
        Self {
            kind: LossKind::TukeyBisquare,
            c,
        }
    }

    /// Squared loss. The tuning constant is irrelevant but kept at 1.
    pub fn square() -> Self {
        Self {
            kind: LossKind::Square,
            c: 1.0,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn tuning(&self) -> f64 {
        self.c
    }

    /// Whether `rho` is bounded; the robust solvers require this.
    pub fn is_bounded(&self) -> bool {
        matches!(self.kind, LossKind::TukeyBisquare)
    }

    /// rho(t); even, rho(0) = 0, and for the bisquare rho(t) = 1 when |t| >= c.
    pub fn rho(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::TukeyBisquare => {
                let u = (t / self.c) * (t / self.c);
                if u >= 1.0 {
                    1.0
                } else {
                    let v = 1.0 - u;
                    1.0 - v * v * v
                }
            }
            LossKind::Square => t * t,
        }
    }

    /// psi = rho'; odd, and for the bisquare it redescends to 0 at |t| = c.
    pub fn psi(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::TukeyBisquare => {
                let u = (t / self.c) * (t / self.c);
                if u >= 1.0 {
                    0.0
                } else {
                    let v = 1.0 - u;
                    6.0 * t / (self.c * self.c) * v * v
                }
            }
            LossKind::Square => 2.0 * t,
        }
    }

    /// psi'(t); piecewise polynomial, 0 beyond the rejection point.
    pub fn psi_prime(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::TukeyBisquare => {
                let u = (t / self.c) * (t / self.c);
                if u >= 1.0 {
                    0.0
                } else {
                    6.0 / (self.c * self.c) * (1.0 - u) * (1.0 - 5.0 * u)
                }
            }
            LossKind::Square => 2.0,
        }
    }

    /// w(t) = psi(t)/t, continuously extended with w(0) = psi'(0).
    pub fn weight(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::TukeyBisquare => {
                let u = (t / self.c) * (t / self.c);
                if u >= 1.0 {
                    0.0
                } else {
                    let v = 1.0 - u;
                    6.0 / (self.c * self.c) * v * v
                }
            }
            LossKind::Square => 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bisquare_matches_hand_values() {
        let f = RhoFamily::tukey(TUKEY_C_HALF);
        assert_eq!(f.rho(0.0), 0.0);
        assert_eq!(f.rho(2.0), 1.0);

        let g = RhoFamily::tukey(2.0);
        assert_abs_diff_eq!(g.rho(1.0), 0.578125, epsilon = 1e-15);
        assert_abs_diff_eq!(g.psi(1.0), 0.84375, epsilon = 1e-15);
        assert_abs_diff_eq!(g.weight(1.0), 0.84375, epsilon = 1e-15);
        assert_abs_diff_eq!(g.weight(0.0), 1.5, epsilon = 1e-15);
        assert_eq!(g.weight(3.0), 0.0);
        assert_abs_diff_eq!(g.psi_prime(0.0), 1.5, epsilon = 1e-15);
        assert_eq!(g.psi_prime(2.5), 0.0);

        let h = RhoFamily::tukey(TUKEY_C_95);
        assert_eq!(h.psi(0.0), 0.0);
        assert_eq!(RhoFamily::tukey(2.0).psi(2.0), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = RhoFamily::tukey(2.0);
        let h = 1e-5;
        let mut t = -4.0;
        while t <= 4.0 {
            let fd_psi = (f.rho(t + h) - f.rho(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(f.psi(t), fd_psi, epsilon = 1e-6);
            let fd_psi_prime = (f.psi(t + h) - f.psi(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(f.psi_prime(t), fd_psi_prime, epsilon = 1e-6);
            t += 0.0625;
        }
    }

    #[test]
    fn symmetry_and_bounds() {
        let f = RhoFamily::tukey(1.7);
        let mut zeta_sup: f64 = 0.0;
        let mut zeta_argmax = 0.0;
        let mut t = -3.4;
        while t <= 3.4 {
            assert_eq!(f.rho(-t), f.rho(t));
            assert_eq!(f.psi(-t), -f.psi(t));
            assert!((0.0..=1.0).contains(&f.rho(t)));
            assert!(f.weight(t) >= 0.0);
            let zeta = (t * f.psi(t)).abs();
            if zeta > zeta_sup {
                zeta_sup = zeta;
                zeta_argmax = t.abs();
            }
            t += 0.017;
        }
        // zeta(t) = t psi(t) is bounded, with the sup attained inside |t| < c
        assert!(zeta_sup.is_finite());
        assert!(zeta_argmax < f.tuning());
    }

    #[test]
    fn square_loss_is_flagged_unbounded() {
        let f = RhoFamily::square();
        assert!(!f.is_bounded());
        assert_eq!(f.rho(3.0), 9.0);
        assert_eq!(f.psi(3.0), 6.0);
        assert_eq!(f.weight(0.0), 2.0);
    }
}
