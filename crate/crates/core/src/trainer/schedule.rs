//! Learning-rate schedule: linear warm-up from 0 to `lr_init`, then cosine
//! annealing to `lr_min` over `anneal_epochs`, constant afterwards.

use std::f64::consts::PI;

/// `epoch` may be fractional (steps within an epoch).
pub fn lr_at(epoch: f64, lr_init: f64, lr_min: f64, warmup_epochs: f64, anneal_epochs: f64) -> f64 {
    let floor = lr_min.min(lr_init);
    if warmup_epochs > 0.0 && epoch < warmup_epochs {
        return lr_init * epoch.max(0.0) / warmup_epochs;
    }
    let t = if anneal_epochs > 0.0 { ((epoch - warmup_epochs) / anneal_epochs).clamp(0.0, 1.0) } else { 1.0 };
    floor + 0.5 * (lr_init - floor) * (1.0 + (PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_landmarks() {
        let (lr0, lr_min, w, hzn) = (0.1, 1e-5, 3.0, 50.0);
        assert_eq!(lr_at(0.0, lr0, lr_min, w, hzn), 0.0);
        assert!((lr_at(1.5, lr0, lr_min, w, hzn) - 0.05).abs() < 1e-15);
        assert!((lr_at(w, lr0, lr_min, w, hzn) - lr0).abs() < 1e-15);
        assert!((lr_at(w + hzn, lr0, lr_min, w, hzn) - lr_min).abs() < 1e-15);
        assert!((lr_at(w + hzn / 2.0, lr0, lr_min, w, hzn) - (lr0 + lr_min) / 2.0).abs() < 1e-15);
        assert_eq!(lr_at(w + 10.0 * hzn, lr0, lr_min, w, hzn), lr_min);
    }

    #[test]
    fn zero_initial_rate_stays_zero() {
        for e in [0.0, 1.0, 10.0, 100.0] {
            assert_eq!(lr_at(e, 0.0, 1e-5, 2.0, 50.0), 0.0);
        }
    }

    #[test]
    fn monotone_after_warmup() {
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let lr = lr_at(2.0 + i as f64 * 0.3, 0.01, 1e-5, 2.0, 50.0);
            assert!(lr <= last);
            last = lr;
        }
    }
}
