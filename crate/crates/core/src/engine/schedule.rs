use crate::datamodel::ModelConfig;

/// Learning rate at optimizer step `step`.
///
/// Linear warmup from `lr_min` to `lr0` over `warmup_epochs`, then cosine
/// annealing from `lr0` to `lr_min` with warm restarts: the first cycle lasts
/// `t0_epochs`, each later cycle is `t_mult` times longer. Epochs are
/// fractional (`step / steps_per_epoch`).
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &ModelConfig) -> f64 {
    let lr0 = cfg.lr0;
    let lr_min = lr0 * cfg.lr_final_ratio;
    let epoch = step as f64 / steps_per_epoch.max(1) as f64;
    if epoch < cfg.warmup_epochs {
        let f = epoch / cfg.warmup_epochs;
        return lr_min * (1.0 - f) + lr0 * f;
    }
    let mut t = epoch - cfg.warmup_epochs;
    let mut cycle = cfg.t0_epochs;
    while t >= cycle {
        t -= cycle;
        cycle *= cfg.t_mult;
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t / cycle).cos());
    lr_min * (1.0 - w) + lr0 * w
}
