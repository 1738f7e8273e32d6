//! Power-dependent internal loss from saturable two-level systems.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// `1/Q_int(n) = (1/q_tls0) / sqrt(1 + n/n_c) + 1/q_other`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsModel {
    pub q_tls0: f64,
    pub n_c: f64,
    pub q_other: f64,
}

impl TlsModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q_tls0", self.q_tls0), ("n_c", self.n_c), ("q_other", self.q_other)] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Solves for `(q_tls0, q_other)` passing through two `(photons, Q_int)`
    /// points at a chosen saturation photon number `n_c`. The model is linear
    /// in `1/q_tls0` and `1/q_other` once `n_c` is fixed.
    pub fn from_endpoints(low: (f64, f64), high: (f64, f64), n_c: f64) -> Result<Self> {
        let s = |n: f64| 1.0 / (1.0 + n / n_c).sqrt();
        let (s1, s2) = (s(low.0), s(high.0));
        let det = s1 - s2;
        if det.abs() < 1e-12 {
            return Err(Error::InvalidInput("endpoint photon numbers must differ".into()));
        }
        let inv_tls = (1.0 / low.1 - 1.0 / high.1) / det;
        let inv_other = 1.0 / low.1 - inv_tls * s1;
        let m = Self {
            q_tls0: 1.0 / inv_tls,
            n_c,
            q_other: 1.0 / inv_other,
        };
        m.validate()
            .map_err(|_| Error::NotFound(format!("no positive TLS parameters for n_c = {n_c}")))?;
        Ok(m)
    }
}

pub fn tls_qint(model: &TlsModel, n_photons: f64) -> f64 {
    let inv = (1.0 / model.q_tls0) / (1.0 + n_photons / model.n_c).sqrt() + 1.0 / model.q_other;
    1.0 / inv
}
