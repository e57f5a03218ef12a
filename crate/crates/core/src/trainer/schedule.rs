/// Warm-up and reestimation windows, in iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSchedule {
    /// Iterations with the bottleneck bypassed.
    pub m_init: u64,
    /// Length of the window after warm-up in which the codebook is rebuilt.
    pub m_reestim: u64,
    /// Rebuild period inside that window.
    pub r_reestim: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            m_init: 200,
            m_reestim: 1000,
            r_reestim: 100,
        }
    }
}

impl TrainSchedule {
    /// Schedule with no warm-up and no reestimation window.
    pub fn plain() -> Self {
        Self {
            m_init: 0,
            m_reestim: 0,
            r_reestim: 1,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.r_reestim == 0 {
            return Err(crate::VqError::Config("r_reestim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Encoder outputs pass through unquantized.
    Warmup,
    Quantize { reestimate_now: bool },
}

/// Phase of 0-based iteration `it`.
pub fn schedule_step(it: u64, s: &TrainSchedule) -> Phase {
    if it < s.m_init {
        return Phase::Warmup;
    }
    let r = s.r_reestim.max(1);
    Phase::Quantize {
        reestimate_now: it % r == 0 && it < s.m_init + s.m_reestim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = TrainSchedule {
            m_init: 100,
            m_reestim: 200,
            r_reestim: 50,
        };
        assert_eq!(schedule_step(50, &s), Phase::Warmup);
        assert_eq!(schedule_step(99, &s), Phase::Warmup);
        assert_eq!(schedule_step(100, &s), Phase::Quantize { reestimate_now: true });
        assert_eq!(schedule_step(120, &s), Phase::Quantize { reestimate_now: false });
        assert_eq!(schedule_step(150, &s), Phase::Quantize { reestimate_now: true });
        assert_eq!(schedule_step(250, &s), Phase::Quantize { reestimate_now: true });
        assert_eq!(schedule_step(300, &s), Phase::Quantize { reestimate_now: false });
        assert_eq!(schedule_step(350, &s), Phase::Quantize { reestimate_now: false });
    }

    #[test]
    fn plain_schedule_never_warms_up_or_reestimates() {
        let s = TrainSchedule::plain();
        for it in 0..10 {
            assert_eq!(schedule_step(it, &s), Phase::Quantize { reestimate_now: false });
        }
    }
}
