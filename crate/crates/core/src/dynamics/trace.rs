use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub sequence: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub notes: Vec<String>,
}

/// Sampled output field `a_out = I + iQ` in sqrt(photons/s).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub times: Vec<f64>,
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    /// Acquire window of each sample, `-1` outside acquire windows.
    pub window: Vec<i64>,
    pub windows: Vec<(f64, f64)>,
    /// `(t, sum w s_z)` at the end of every segment, starting at t = 0.
    pub polarization: Vec<(f64, f64)>,
    /// `sum w (s_z - s_z_eq)` once the first pulse has ended.
    pub excited_after_first_pulse: Option<f64>,
    /// Integrator step, s.
    pub step: f64,
    pub metadata: TraceMetadata,
}

impl TraceRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample indices belonging to acquire window `k`.
    pub fn window_range(&self, k: usize) -> std::ops::Range<usize> {
        let k = k as i64;
        let start = self.window.iter().position(|&w| w == k).unwrap_or(0);
        let end = self.window[start..]
            .iter()
            .position(|&w| w != k)
            .map_or(self.window.len(), |e| start + e);
        if start >= self.window.len() || self.window[start] != k {
            0..0
        } else {
            start..end
        }
    }

    /// Pointwise `(self - other) / 2` over identical sampling.
    pub fn half_difference(&self, other: &TraceRecord) -> Result<TraceRecord> {
        if self.times != other.times {
            return Err(Error::InvalidInput("traces sample different times".into()));
        }
        let mut out = self.clone();
        for k in 0..out.len() {
            out.i[k] = 0.5 * (self.i[k] - other.i[k]);
            out.q[k] = 0.5 * (self.q[k] - other.q[k]);
        }
        Ok(out)
    }

    /// `sum_k weights[k] traces[k]` over identical sampling; metadata and
    /// polarization come from the first trace.
    pub fn linear_combination(traces: &[TraceRecord], weights: &[f64]) -> Result<TraceRecord> {
        let first = traces
            .first()
            .ok_or_else(|| Error::InvalidInput("no traces to combine".into()))?;
        if traces.len() != weights.len() {
            return Err(Error::InvalidInput("one weight per trace required".into()));
        }
        let mut out = first.clone();
        out.i.iter_mut().chain(out.q.iter_mut()).for_each(|v| *v = 0.0);
        for (t, &w) in traces.iter().zip(weights) {
            if t.times != first.times {
                return Err(Error::InvalidInput("traces sample different times".into()));
            }
            for k in 0..out.len() {
                out.i[k] += w * t.i[k];
                out.q[k] += w * t.q[k];
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_s", "I", "Q"])?;
        for k in 0..self.len() {
            wr.write_record([
                format!("{:e}", self.times[k]),
                format!("{:e}", self.i[k]),
                format!("{:e}", self.q[k]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<TraceRecord> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = TraceRecord::default();
        for row in rd.records() {
            let row = row?;
            let get = |k: usize| -> Result<f64> {
                row.get(k)
                    .ok_or_else(|| Error::Format("trace row has fewer than 3 columns".into()))?
                    .trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("trace value: {e}")))
            };
            out.times.push(get(0)?);
            out.i.push(get(1)?);
            out.q.push(get(2)?);
            out.window.push(-1);
        }
        Ok(out)
    }

    /// Everything except the samples, as JSON.
    pub fn metadata_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "samples": self.len(),
            "step_s": self.step,
            "windows": self.windows,
            "polarization": self.polarization,
            "excited_after_first_pulse": self.excited_after_first_pulse,
            "metadata": self.metadata,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}
