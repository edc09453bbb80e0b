//! Weak order conditions for stochastic Runge-Kutta (SRK) methods.
//!
//! The crate mechanizes the colored rooted-tree calculus for weak
//! approximation of stochastic differential equations:
//!
//! * [`trees`]: colored rooted trees, canonical forms, the tree families
//!   TS(I), TS(S) and TS(Δ), and the combinatorial coefficients α, β and γ.
//! * [`rvmodel`]: finite discrete random-variable models with an exact
//!   expectation algebra over half-integer powers of the step size.
//! * [`tableau`]: SRK coefficient tables keyed by index patterns and the
//!   elementary weight Φ_S.
//! * [`conditions`]: generation and verification of weak order conditions,
//!   plus an independent concrete-index oracle.
//! * [`simulate`]: explicit SRK time stepping and Monte Carlo weak
//!   convergence studies.
//! * [`expansion`]: elementary differentials and the truncated expansion of
//!   `E f(X_t)`.

pub mod conditions;
pub mod error;
pub mod expansion;
pub mod rational;
pub mod rvmodel;
pub mod simulate;
pub mod tableau;
pub mod trees;

pub use error::{Error, Result};
pub use rational::Q;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Stochastic calculus used to interpret the diffusion integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calculus {
    /// Itô integrals.
    Ito,
    /// Stratonovich integrals.
    Strat,
}

impl fmt::Display for Calculus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Calculus::Ito => f.write_str("ito"),
            Calculus::Strat => f.write_str("strat"),
        }
    }
}

impl FromStr for Calculus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ito" | "itô" | "i" => Ok(Calculus::Ito),
            "strat" | "stratonovich" | "s" => Ok(Calculus::Strat),
            other => Err(Error::Parse(format!("unknown calculus `{other}` (expected ito or strat)"))),
        }
    }
}
