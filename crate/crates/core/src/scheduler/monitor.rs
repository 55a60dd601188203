//! Plateau detection on per-episode returns.
//!
//! At episode `t` the monitor compares the best `l_sw`-episode rolling mean
//! among windows ending in `(t - l_sw, t]` against the best rolling mean of
//! any window ending at or before `t - l_sw`. It fires once no recent window
//! beats the earlier best by more than `eps`, provided `t - l_sw` is past
//! `min_episodes`.

/// Stateless form of the rule, evaluated at `history.len()`.
pub fn convergence_monitor(history: &[f64], l_sw: usize, min_episodes: u64, eps: f64) -> bool {
    let t = history.len();
    if l_sw == 0 || t < 2 * l_sw || ((t - l_sw) as u64) < min_episodes {
        return false;
    }
    let mut prefix = Vec::with_capacity(t + 1);
    prefix.push(0.0);
    for r in history {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + r);
    }
    let window = |end: usize| (prefix[end] - prefix[end - l_sw]) / l_sw as f64;
    let earlier = (l_sw..=t - l_sw)
        .map(window)
        .fold(f64::NEG_INFINITY, f64::max);
    let recent = (t - l_sw + 1..=t)
        .map(window)
        .fold(f64::NEG_INFINITY, f64::max);
    recent <= earlier + eps
}

/// Incremental version of [`convergence_monitor`] for long histories.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    l_sw: usize,
    min_episodes: u64,
    eps: f64,
    prefix: Vec<f64>,
    /// Best window ending at or before `cursor`.
    earlier_best: f64,
    cursor: usize,
}

impl ConvergenceMonitor {
    pub fn new(l_sw: usize, min_episodes: u64, eps: f64) -> Self {
        Self {
            l_sw,
            min_episodes,
            eps,
            prefix: vec![0.0],
            earlier_best: f64::NEG_INFINITY,
            cursor: 0,
        }
    }

    pub fn push(&mut self, episode_return: f64) {
        let last = self.prefix[self.prefix.len() - 1];
        self.prefix.push(last + episode_return);
    }

    pub fn len(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn window(&self, end: usize) -> f64 {
        (self.prefix[end] - self.prefix[end - self.l_sw]) / self.l_sw as f64
    }

    /// Mean of the most recent full window, if any.
    pub fn recent_mean(&self) -> Option<f64> {
        let t = self.len();
        (self.l_sw > 0 && t >= self.l_sw).then(|| self.window(t))
    }

    pub fn converged(&mut self) -> bool {
        let t = self.len();
        if self.l_sw == 0 || t < 2 * self.l_sw || ((t - self.l_sw) as u64) < self.min_episodes {
            return false;
        }
        while self.cursor < t - self.l_sw {
            self.cursor += 1;
            if self.cursor >= self.l_sw {
                self.earlier_best = self.earlier_best.max(self.window(self.cursor));
            }
        }
        let recent = (t - self.l_sw + 1..=t)
            .map(|e| self.window(e))
            .fold(f64::NEG_INFINITY, f64::max);
        recent <= self.earlier_best + self.eps
    }
}
