/// Exponentially stretching rebuild schedule.
///
/// The `t`-th rebuild (1-based) happens at iteration
/// `round(sum_{i=0}^{t-1} n0 * exp(lambda * i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RebuildSchedule {
    n0: f64,
    lambda: f64,
    completed: u32,
    partial_sum: f64,
    next_at: u64,
}

impl RebuildSchedule {
    pub fn new(n0: u64, lambda: f64) -> Self {
        assert!(n0 >= 1, "initial rebuild period must be at least one iteration");
        assert!(lambda.is_finite(), "decay constant must be finite");
        let n0 = n0 as f64;
        Self {
            n0,
            lambda,
            completed: 0,
            partial_sum: n0,
            next_at: n0.round() as u64,
        }
    }

    pub fn completed(&self) -> u32 {
        self.completed
    }

    /// Iteration at which the next rebuild is due.
    pub fn next_at(&self) -> u64 {
        self.next_at
    }

    pub fn is_due(&self, iteration: u64) -> bool {
        iteration >= self.next_at
    }

    pub fn advance(&mut self) {
        self.completed += 1;
        self.partial_sum += self.n0 * (self.lambda * self.completed as f64).exp();
        self.next_at = self.partial_sum.round() as u64;
    }

    /// First `count` rebuild iterations.
    pub fn preview(&self, count: usize) -> Vec<u64> {
        let mut s = Self::new(self.n0 as u64, self.lambda);
        (0..count)
            .map(|_| {
                let at = s.next_at;
                s.advance();
                at
            })
            .collect()
    }
}
