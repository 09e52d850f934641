//! Warmup adaptation: dual-averaging step size and windowed variance estimates.

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;
const REGULARIZATION: f64 = 5.0;

#[derive(Debug, Clone)]
pub(super) struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    pub(super) fn new(initial: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial).ln(),
            target,
            h_bar: 0.0,
            log_eps: initial.ln(),
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    /// Feed one acceptance probability and return the next step size.
    pub(super) fn update(&mut self, accept: f64) -> f64 {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - m.sqrt() / GAMMA * self.h_bar;
        let eta = m.powf(-KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    pub(super) fn final_step_size(&self) -> f64 {
        if self.count == 0.0 {
            self.log_eps.exp()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Warmup split into 15% / 40% / 45%. The metric is re-estimated at the end
/// of the first two windows; the last one tunes only the step size.
#[derive(Debug, Clone, Copy)]
pub(super) struct WindowSchedule {
    ends: [usize; 2],
}

impl WindowSchedule {
    pub(super) fn new(warmup: usize) -> Self {
        let first = ((warmup as f64) * 0.15).round() as usize;
        let first = first.clamp(1, warmup);
        let second = (((warmup as f64) * 0.55).round() as usize).max(first + 1).min(warmup);
        Self { ends: [first, second] }
    }

    /// Metric window containing iteration `it`, if any.
    pub(super) fn window_of(&self, it: usize) -> Option<usize> {
        if it < self.ends[0] {
            Some(0)
        } else if it < self.ends[1] {
            Some(1)
        } else {
            None
        }
    }

    pub(super) fn is_window_end(&self, it: usize) -> bool {
        self.ends.iter().any(|&e| it + 1 == e)
    }
}

/// Running per-coordinate variance.
#[derive(Debug, Clone)]
pub(super) struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub(super) fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    pub(super) fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    /// Sample variance shrunk toward one with weight `5 / (n + 5)`.
    pub(super) fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + REGULARIZATION)) * var + REGULARIZATION / (n + REGULARIZATION)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_fifteen_and_forty_percent() {
        let s = WindowSchedule::new(500);
        assert_eq!(s.window_of(0), Some(0));
        assert_eq!(s.window_of(74), Some(0));
        assert_eq!(s.window_of(75), Some(1));
        assert_eq!(s.window_of(274), Some(1));
        assert_eq!(s.window_of(275), None);
        assert!(s.is_window_end(74) && s.is_window_end(274));
        assert!(!s.is_window_end(499));
    }

    #[test]
    fn tiny_warmup_windows_are_nonempty() {
        let s = WindowSchedule::new(2);
        assert_eq!(s.window_of(0), Some(0));
        assert_eq!(s.window_of(1), Some(1));
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 0.25];
        let mut w = Welford::new(1);
        for x in xs {
            w.push(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        let expect = 0.5 * var + 0.5;
        assert!((w.regularized_variance()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        // Acceptance always too low shrinks the step size.
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(0.2);
        }
        assert!(da.final_step_size() < 1.0);
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(1.0);
        }
        assert!(da.final_step_size() > 1.0);
    }
}
