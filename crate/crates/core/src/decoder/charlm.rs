use super::DecodeError;

/// Character-level language model consulted on every prefix extension.
///
/// A context summarizes the labels consumed so far; the decoder keeps one
/// per live hypothesis and hands it back through [`CharLm::release`] when
/// the hypothesis dies.
pub trait CharLm {
    type Context;

    /// Context before any label has been consumed.
    fn initial(&mut self) -> Result<Self::Context, DecodeError>;

    /// Context after consuming `label`. Leaves `ctx` untouched.
    fn advance(&mut self, ctx: &Self::Context, label: usize) -> Result<Self::Context, DecodeError>;

    /// Natural-log probability of `label` following `ctx`.
    fn log_prob(&self, ctx: &Self::Context, label: usize) -> f64;

    fn release(&mut self, _ctx: Self::Context) {}

    /// Number of model evaluations so far.
    fn calls(&self) -> u64 {
        0
    }
}

impl<T: CharLm + ?Sized> CharLm for &mut T {
    type Context = T::Context;

    fn initial(&mut self) -> Result<Self::Context, DecodeError> {
        (**self).initial()
    }

    fn advance(&mut self, ctx: &Self::Context, label: usize) -> Result<Self::Context, DecodeError> {
        (**self).advance(ctx, label)
    }

    fn log_prob(&self, ctx: &Self::Context, label: usize) -> f64 {
        (**self).log_prob(ctx, label)
    }

    fn release(&mut self, ctx: Self::Context) {
        (**self).release(ctx)
    }

    fn calls(&self) -> u64 {
        (**self).calls()
    }
}

/// No character model: every extension scores `ln 1 = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoCharLm;

impl CharLm for NoCharLm {
    type Context = ();

    fn initial(&mut self) -> Result<(), DecodeError> {
        Ok(())
    }

    fn advance(&mut self, _: &(), _: usize) -> Result<(), DecodeError> {
        Ok(())
    }

    fn log_prob(&self, _: &(), _: usize) -> f64 {
        0.0
    }
}

/// Bigram character model from an explicit table: row `labels` is the
/// start-of-stream row, row `k` the distribution after label `k`.
#[derive(Debug, Clone)]
pub struct TableCharLm {
    log_probs: Vec<Vec<f64>>,
    calls: u64,
}

impl TableCharLm {
    pub fn new(probs: Vec<Vec<f64>>) -> Self {
        let log_probs = probs.into_iter().map(|row| row.into_iter().map(f64::ln).collect()).collect();
        Self { log_probs, calls: 0 }
    }

    pub fn uniform(labels: usize) -> Self {
        Self::new(vec![vec![1.0 / labels as f64; labels]; labels + 1])
    }

    pub fn random<R: rand::Rng>(labels: usize, rng: &mut R) -> Self {
        let rows = (0..=labels)
            .map(|_| {
                let raw: Vec<f64> = (0..labels).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Self::new(rows)
    }

    fn start(&self) -> usize {
        self.log_probs.len() - 1
    }
}

impl CharLm for TableCharLm {
    type Context = usize;

    fn initial(&mut self) -> Result<usize, DecodeError> {
        Ok(self.start())
    }

    fn advance(&mut self, _: &usize, label: usize) -> Result<usize, DecodeError> {
        self.calls += 1;
        Ok(label)
    }

    fn log_prob(&self, ctx: &usize, label: usize) -> f64 {
        self.log_probs[*ctx][label]
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}
