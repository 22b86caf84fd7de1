/// Breakpoints as percentages of the total number of epochs.
pub const DROP_PERCENT: [usize; 4] = [50, 75, 89, 94];
pub const DROP_FACTOR: f64 = 0.25;

/// Piecewise-constant learning rate, multiplied by 0.25 at each breakpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(base: f64, total: usize) -> Self {
        LrSchedule { base, total }
    }

    /// Epochs at which a drop takes effect: `⌈f·total⌉`, computed in
    /// integers so that e.g. `0.89·100` lands on 89.
    pub fn breakpoints(&self) -> [usize; 4] {
        DROP_PERCENT.map(|p| (p * self.total).div_ceil(100))
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.breakpoints().iter().filter(|&&b| epoch >= b).count();
        (0..drops).fold(self.base, |lr, _| lr * DROP_FACTOR)
    }

    pub fn first_drop_epoch(&self) -> usize {
        self.breakpoints()[0]
    }
}
