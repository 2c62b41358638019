/// Writes only during the `window` steps following a change of the
/// language observation. The first observation of an episode counts as a
/// change. Observations are compared as token sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveWriter {
    pub window: usize,
    last: Option<Vec<usize>>,
    last_change: usize,
    t: usize,
}

impl SelectiveWriter {
    pub fn new(window: usize) -> Self {
        Self { window, last: None, last_change: 0, t: 0 }
    }

    /// Step index of the most recent change.
    pub fn last_change(&self) -> usize {
        self.last_change
    }

    /// Consumes one step's tokens and says whether that step is written.
    pub fn should_write(&mut self, tokens: &[usize]) -> bool {
        let t = self.t;
        if self.last.as_deref() != Some(tokens) {
            self.last_change = t;
            self.last = Some(tokens.to_vec());
        }
        self.t += 1;
        t - self.last_change < self.window
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.window);
    }
}

impl Default for SelectiveWriter {
    fn default() -> Self {
        Self::new(3)
    }
}
