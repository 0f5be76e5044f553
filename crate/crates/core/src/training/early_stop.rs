use super::{EarlyStopSpec, EpochRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopCheck {
    pub decision: StopDecision,
    /// 1-based epoch holding the best monitored value, earliest on ties.
    pub best_epoch: usize,
}

/// Decides whether training should stop after the last epoch in `history`.
///
/// An epoch counts as an improvement when it beats the last improving value
/// by more than `min_delta` (the first epoch always does). Training stops once
/// `max(patience, 1)` consecutive epochs fail to improve.
///
/// # Panics
///
/// Panics on an empty history.
pub fn early_stop_check(history: &[EpochRecord], spec: &EarlyStopSpec) -> StopCheck {
    assert!(!history.is_empty(), "early_stop_check needs at least one epoch");
    let monitor = spec.monitor;
    let mut reference: Option<f64> = None;
    let mut waited = 0usize;
    let mut best: Option<(usize, f64)> = None;
    for (i, record) in history.iter().enumerate() {
        let value = monitor.value(record);
        match reference {
            Some(r) if !monitor.improves(value, r, spec.min_delta) => waited += 1,
            _ if value.is_nan() => waited += 1,
            _ => {
                reference = Some(value);
                waited = 0;
            }
        }
        if !value.is_nan() && best.is_none_or(|(_, b)| monitor.improves(value, b, 0.0)) {
            best = Some((i + 1, value));
        }
    }
    let decision = if waited >= spec.patience.max(1) { StopDecision::Stop } else { StopDecision::Continue };
    StopCheck { decision, best_epoch: best.map_or(1, |(e, _)| e) }
}
