//! Inverse-time under/over-voltage relays and fixed-delay frequency shedding.

use serde::{Deserialize, Serialize};

/// Static lower threshold, 176 kV on a 220 kV base.
pub const STATIC_V_LOWER: f64 = 0.8;
/// Upper/lower ratio that maps 176 kV to 286 kV.
pub const DEFAULT_ALPHA: f64 = 1.625;
pub const F_LOWER: f64 = 59.5;
pub const F_UPPER: f64 = 60.5;
pub const SHED_DELAY_S: f64 = 540.0;
pub const THRESHOLD_MIN: f64 = 0.80;
pub const THRESHOLD_MAX: f64 = 1.30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtectionError {
    #[error("voltage {v} is not in violation of threshold {threshold}")]
    NotInViolation { v: f64, threshold: f64 },
    #[error("threshold {0} outside [0.80, 1.30] pu")]
    ThresholdOutOfRange(f64),
    #[error("alpha {0} outside (1, 2]")]
    AlphaOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UvTrip,
    OvTrip,
    UflsShed,
    OflsShed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UvTrip => "uv_trip",
            Self::OvTrip => "ov_trip",
            Self::UflsShed => "ufls_shed",
            Self::OflsShed => "ofls_shed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectionEvent {
    pub kind: EventKind,
    pub bus: usize,
    pub time: f64,
}

/// Under-voltage delay in minutes.
pub fn uv_delay(v: f64, v_lower: f64) -> Result<f64, ProtectionError> {
    if !(v >= 0.0 && v < v_lower) {
        return Err(ProtectionError::NotInViolation {
            v,
            threshold: v_lower,
        });
    }
    Ok(0.5 / (1.0 - v / v_lower))
}

/// Over-voltage delay in minutes.
pub fn ov_delay(v: f64, v_upper: f64) -> Result<f64, ProtectionError> {
    if !(v > v_upper) {
        return Err(ProtectionError::NotInViolation {
            v,
            threshold: v_upper,
        });
    }
    Ok(0.5 / (v / v_upper - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageRelay {
    pub bus: usize,
    pub v_lower: f64,
    pub alpha: f64,
    /// Accumulated violation time, seconds.
    pub uv_timer: f64,
    pub ov_timer: f64,
    pub tripped: bool,
}

impl VoltageRelay {
    pub fn new(bus: usize) -> Self {
        Self {
            bus,
            v_lower: STATIC_V_LOWER,
            alpha: DEFAULT_ALPHA,
            uv_timer: 0.0,
            ov_timer: 0.0,
            tripped: false,
        }
    }

    pub fn v_upper(&self) -> f64 {
        self.alpha * self.v_lower
    }

    pub fn in_uv_pickup(&self, v: f64) -> bool {
        !self.tripped && v < self.v_lower
    }

    /// Retune. Timers carry over.
    pub fn set_thresholds(&mut self, v_lower: f64, alpha: f64) -> Result<(), ProtectionError> {
        // Small slack so grid points computed as 0.8 + k*0.05 pass.
        if !(THRESHOLD_MIN - 1e-9..=THRESHOLD_MAX + 1e-9).contains(&v_lower) {
            return Err(ProtectionError::ThresholdOutOfRange(v_lower));
        }
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(ProtectionError::AlphaOutOfRange(alpha));
        }
        self.v_lower = v_lower;
        self.alpha = alpha;
        Ok(())
    }

    /// Advance by `dt` seconds at voltage `v`; `t` stamps any event.
    pub fn step(&mut self, v: f64, dt: f64, t: f64) -> Option<ProtectionEvent> {
        if self.tripped {
            return None;
        }
        let mut event = None;
        if let Ok(delay_min) = uv_delay(v, self.v_lower) {
            self.uv_timer += dt;
            if self.uv_timer >= delay_min * 60.0 {
                event = Some(EventKind::UvTrip);
            }
        } else {
            self.uv_timer = 0.0;
        }
        if let Ok(delay_min) = ov_delay(v, self.v_upper()) {
            self.ov_timer += dt;
            if event.is_none() && self.ov_timer >= delay_min * 60.0 {
                event = Some(EventKind::OvTrip);
            }
        } else {
            self.ov_timer = 0.0;
        }
        event.map(|kind| {
            self.tripped = true;
            ProtectionEvent {
                kind,
                bus: self.bus,
                time: t,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqRelay {
    pub bus: usize,
    pub f_lower: f64,
    pub f_upper: f64,
    pub delay: f64,
    pub timer: f64,
    pub shed: bool,
}

impl FreqRelay {
    pub fn new(bus: usize) -> Self {
        Self {
            bus,
            f_lower: F_LOWER,
            f_upper: F_UPPER,
            delay: SHED_DELAY_S,
            timer: 0.0,
            shed: false,
        }
    }

    pub fn step(&mut self, f: f64, dt: f64, t: f64) -> Option<ProtectionEvent> {
        if self.shed {
            return None;
        }
        let kind = if f < self.f_lower {
            EventKind::UflsShed
        } else if f > self.f_upper {
            EventKind::OflsShed
        } else {
            self.timer = 0.0;
            return None;
        };
        self.timer += dt;
        // Tolerate float accumulation of many small steps.
        if self.timer >= self.delay - 1e-9 {
            self.shed = true;
            return Some(ProtectionEvent {
                kind,
                bus: self.bus,
                time: t,
            });
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_formulas() {
        assert_eq!(uv_delay(0.0, 0.8).unwrap(), 0.5);
        assert!(uv_delay(0.8, 0.8).is_err());
        assert!(ov_delay(1.3, 1.3).is_err());
        assert!((ov_delay(2.6, 1.3).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uv_trip_after_five_minutes() {
        let mut r = VoltageRelay::new(3);
        let v = 0.9 * r.v_lower;
        let dt = 0.5;
        let mut t = 0.0;
        let ev = loop {
            t += dt;
            if let Some(e) = r.step(v, dt, t) {
                break e;
            }
            assert!(t < 400.0);
        };
        assert_eq!(ev.kind, EventKind::UvTrip);
        assert!((ev.time - 300.0).abs() <= dt);
        assert!(r.step(v, dt, t + dt).is_none());
    }

    #[test]
    fn in_band_stays_quiet() {
        let mut r = VoltageRelay::new(4);
        for k in 0..2000 {
            let v = 0.85 + 0.4 * (k as f64 * 0.01).sin().abs();
            assert!(r.step(v, 1.0, k as f64).is_none());
            assert_eq!(r.uv_timer, 0.0);
            assert_eq!(r.ov_timer, 0.0);
        }
    }

    #[test]
    fn recovery_resets_timer() {
        let mut r = VoltageRelay::new(4);
        for k in 0..60 {
            assert!(r.step(0.75, 1.0, k as f64).is_none());
        }
        assert_eq!(r.uv_timer, 60.0);
        r.step(0.95, 1.0, 60.0);
        assert_eq!(r.uv_timer, 0.0);
        assert!(!r.tripped);
    }

    #[test]
    fn thresholds() {
        let mut r = VoltageRelay::new(2);
        r.set_thresholds(0.8, 1.625).unwrap();
        assert!((r.v_upper() - 1.3).abs() < 1e-12);
        assert_eq!(r.set_thresholds(0.9, 1.0), Err(ProtectionError::AlphaOutOfRange(1.0)));
        assert!(r.set_thresholds(1.4, 1.5).is_err());
        r.uv_timer = 12.0;
        let before = r.clone();
        r.set_thresholds(0.8, 1.625).unwrap();
        assert_eq!(r, before);
        r.set_thresholds(1.2, 1.625).unwrap();
        assert_eq!(r.uv_timer, 12.0);
    }

    #[test]
    fn freq_relays() {
        for (f, kind) in [(59.4, EventKind::UflsShed), (60.6, EventKind::OflsShed)] {
            let mut r = FreqRelay::new(1);
            let dt = 0.01;
            let mut n = 0u32;
            let ev = loop {
                n += 1;
                if let Some(e) = r.step(f, dt, f64::from(n) * dt) {
                    break e;
                }
            };
            assert_eq!(ev.kind, kind);
            assert!((ev.time - 540.0).abs() <= dt + 1e-9);
        }
        let mut r = FreqRelay::new(1);
        for n in 0..100_000 {
            assert!(r.step(60.0, 0.01, n as f64 * 0.01).is_none());
        }
    }
}
