//! Per-device operator speed relative to the reference device that the graph
//! timings were measured on.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{OpKind, OpSpec};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DeviceError {
    #[error("device profile `{device}` has no timing for op kind {kind:?}")]
    MissingKind { device: String, kind: OpKind },
    #[error("device profile `{0}` has a non-positive scale factor")]
    NonPositiveScale(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// Multiplier applied to the reference time of each op kind.
    pub kind_scale: BTreeMap<OpKind, f64>,
    /// Multiplier applied to reference codec compress/decompress times.
    pub codec_scale: f64,
}

impl DeviceProfile {
    /// The device the graph's `base_time_us` values were measured on.
    pub fn reference() -> Self {
        Self::uniform("reference", 1.0)
    }

    pub fn uniform(name: impl Into<String>, scale: f64) -> Self {
        Self {
            name: name.into(),
            kind_scale: OpKind::ALL.iter().map(|&k| (k, scale)).collect(),
            codec_scale: scale,
        }
    }

    /// This profile slowed down (factor > 1) or sped up (factor < 1) uniformly.
    pub fn scaled(&self, name: impl Into<String>, factor: f64) -> Self {
        Self {
            name: name.into(),
            kind_scale: self.kind_scale.iter().map(|(&k, &s)| (k, s * factor)).collect(),
            codec_scale: self.codec_scale * factor,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |s: f64| !(s > 0.0) || !s.is_finite();
        if bad(self.codec_scale) || self.kind_scale.values().any(|&s| bad(s)) {
            return Err(DeviceError::NonPositiveScale(self.name.clone()));
        }
        Ok(())
    }

    pub fn kind_scale(&self, kind: OpKind) -> Result<f64, DeviceError> {
        self.kind_scale
            .get(&kind)
            .copied()
            .ok_or_else(|| DeviceError::MissingKind { device: self.name.clone(), kind })
    }

    /// Execution time of `op` on this device, rounded to whole nanoseconds
    /// and never zero.
    pub fn op_time(&self, op: &OpSpec) -> Result<Duration, DeviceError> {
        let scale = self.kind_scale(op.kind)?;
        Ok(nanos(op.base_time_us * 1_000.0 * scale))
    }

    /// Reference-device codec time scaled to this device.
    pub fn codec_time(&self, reference: Duration) -> Duration {
        nanos(reference.as_nanos() as f64 * self.codec_scale)
    }
}

pub(crate) fn nanos(value: f64) -> Duration {
    Duration::from_nanos((value.round() as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{OpId, TensorId};

    fn op(kind: OpKind, us: f64) -> OpSpec {
        OpSpec {
            id: OpId(0),
            kind,
            inputs: vec![TensorId(0)],
            outputs: vec![TensorId(1)],
            base_time_us: us,
            is_layout_transform: false,
            crosses_processor: false,
        }
    }

    #[test]
    fn scaling_multiplies_times() {
        let slow = DeviceProfile::reference().scaled("slow", 2.5);
        assert_eq!(slow.op_time(&op(OpKind::Conv, 10.0)).unwrap(), Duration::from_micros(25));
        assert_eq!(slow.codec_time(Duration::from_micros(4)), Duration::from_micros(10));
    }

    #[test]
    fn missing_kind_and_bad_scale() {
        let mut d = DeviceProfile::reference();
        d.kind_scale.remove(&OpKind::MatMul);
        assert!(matches!(d.op_time(&op(OpKind::MatMul, 1.0)), Err(DeviceError::MissingKind { .. })));
        d.codec_scale = 0.0;
        assert!(d.validate().is_err());
    }
}
