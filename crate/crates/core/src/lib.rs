//! Minimax goodness-of-fit testing for multivariate nonparametric regression
//! with random design.
//!
//! The alternatives are functions in an ellipsoid `sum c_l^2 theta_l^2 <= 1`
//! of a tensor-product orthonormal basis, separated from the null in `L2` by
//! a radius `r_n`. The crate covers the whole pipeline:
//!
//! * [`families`]: coefficient families `c_l` and exact enumeration of
//!   `N(C) = {l : c_l < C}`;
//! * [`extremal`]: the water-filling extremal problem that gives the sharp
//!   detection boundary `u_n`, the balance equation and separation rates;
//! * [`basis`]: Fourier, Haar and Walsh tensor bases;
//! * [`testing`]: the U-statistic tests, thresholds and plug-in variance;
//! * [`sim`]: data generation, least-favorable alternatives and seeded
//!   Monte Carlo checks of the Gaussian error predictions.

pub mod basis;
pub mod error;
pub mod extremal;
pub mod families;
pub mod numeric;
pub mod sim;
pub mod testing;

pub use error::{Error, Result};
