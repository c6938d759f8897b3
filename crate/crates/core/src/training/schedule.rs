use super::TrainConfig;

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then (with decay
/// enabled) linear decay to 0 at `total_steps`. Steps past the end give 0.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f32 {
    let peak = cfg.peak_lr as f64;
    let (warm, total) = (cfg.warmup_steps, cfg.total_steps);
    if step > total {
        return 0.0;
    }
    let lr = if step < warm {
        peak * step as f64 / warm as f64
    } else if cfg.linear_decay {
        if total == warm {
            return 0.0;
        }
        peak * (total - step) as f64 / (total - warm) as f64
    } else {
        peak
    };
    lr as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_decay() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert_eq!(lr_at(5_000, &cfg), 5e-5);
        assert_eq!(lr_at(102_500, &cfg), 2.5e-5);
        assert_eq!(lr_at(200_000, &cfg), 0.0);
        assert_eq!(lr_at(200_001, &cfg), 0.0);
        assert_eq!(lr_at(2_500, &cfg), 2.5e-5);
    }

    #[test]
    fn constant_after_warmup_when_decay_disabled() {
        let cfg = TrainConfig {
            linear_decay: false,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(150_000, &cfg), 5e-5);
    }
}
