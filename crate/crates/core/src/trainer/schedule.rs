//! Line-count curriculum and the synthetic-to-real mixing ramp.

use rand::Rng;

use super::{Result, TrainError};

/// Line budget that starts at one and grows by one every `every` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Curriculum {
    pub l_max: usize,
    pub every: u64,
}

impl Curriculum {
    pub fn new(l_max: usize, every: u64) -> Result<Self> {
        if l_max == 0 || every == 0 {
            return Err(TrainError::Config(format!(
                "curriculum needs l_max ≥ 1 and a positive period, got {l_max}/{every}"
            )));
        }
        Ok(Self { l_max, every })
    }

    pub fn lines(&self, step: u64) -> usize {
        let grown = (step / self.every).min(self.l_max as u64 - 1) as usize;
        1 + grown
    }

    /// First step at which the budget reaches `l_max`.
    pub fn ramp_end(&self) -> u64 {
        (self.l_max as u64 - 1) * self.every
    }
}

/// Probability of drawing a real sample, linear from `start` to `end` over
/// `length` steps and constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingRamp {
    pub start: f64,
    pub end: f64,
    pub length: u64,
}

impl MixingRamp {
    pub fn new(start: f64, end: f64, length: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
            return Err(TrainError::Config(format!("mixing ramp needs 0 ≤ start ≤ end ≤ 1, got {start}..{end}")));
        }
        Ok(Self { start, end, length })
    }

    /// 0 → 0.8 over `length` steps.
    pub fn standard(length: u64) -> Self {
        Self { start: 0.0, end: 0.8, length }
    }

    pub fn p_real(&self, step: u64) -> f64 {
        if self.length == 0 || step >= self.length {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / self.length as f64)
    }
}

/// Where a training sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Real(usize),
    Synthetic,
}

/// Draws real with probability `p_real(step)`, else synthetic. An empty real
/// pool always yields synthetic.
pub fn mix_sample(step: u64, ramp: &MixingRamp, rng: &mut impl Rng, real_len: usize) -> Source {
    let u: f64 = rng.gen();
    if real_len > 0 && u < ramp.p_real(step) {
        Source::Real(rng.gen_range(0..real_len))
    } else {
        Source::Synthetic
    }
}
