//! Stepped polynomial learning-rate decay.

use crate::error::{Error, Result};

pub const LR_STEP_EPOCHS: usize = 5;

/// `initial * (1 - floor(epoch / 5) * 5 / max_epochs) ^ power`.
pub fn poly_lr(initial: f64, epoch: usize, max_epochs: usize, power: f64) -> Result<f64> {
    if max_epochs == 0 {
        return Err(Error::Domain("max_epochs must be positive".into()));
    }
    if epoch > max_epochs {
        return Err(Error::Domain(format!("epoch {epoch} exceeds max_epochs {max_epochs}")));
    }
    if power.is_nan() || power <= 0.0 || initial.is_nan() || initial < 0.0 {
        return Err(Error::Domain(format!("need power > 0 and lr >= 0 (got {power}, {initial})")));
    }
    let stepped = (epoch / LR_STEP_EPOCHS * LR_STEP_EPOCHS) as f64;
    Ok(initial * (1.0 - stepped / max_epochs as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_steps() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 4, 100, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100, 0.9).unwrap(), 0.0);
        assert!(poly_lr(0.01, 5, 100, 0.9).unwrap() < 0.01);
        assert!(matches!(poly_lr(0.01, 101, 100, 0.9), Err(Error::Domain(_))));
    }
}
