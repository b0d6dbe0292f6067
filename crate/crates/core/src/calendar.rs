//! Simulated calendar: fixed 30-day months, weeks starting on day 0.

pub const DAYS_PER_MONTH: u32 = 30;
pub const DAYS_PER_WEEK: u32 = 7;
/// Months of natural data a tiny-model update consumes.
pub const TPM_WINDOW_MONTHS: u32 = 6;
/// Length of the sliding window for weekly and daily training.
pub const RECENT_WINDOW_DAYS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calendar {
    pub horizon_days: u32,
    pub current_day: u32,
}

#[inline]
pub fn month(day: u32) -> u32 {
    day / DAYS_PER_MONTH
}

#[inline]
pub fn is_month_start(day: u32) -> bool {
    day % DAYS_PER_MONTH == 0
}

#[inline]
pub fn is_monday(day: u32) -> bool {
    day % DAYS_PER_WEEK == 0
}

impl Calendar {
    pub fn new(horizon_months: u32) -> Self {
        Self {
            horizon_days: horizon_months * DAYS_PER_MONTH,
            current_day: 0,
        }
    }

    pub fn days(&self) -> std::ops::Range<u32> {
        0..self.horizon_days
    }

    /// First day with a full tiny-model window behind it.
    pub fn warmup_day() -> u32 {
        TPM_WINDOW_MONTHS * DAYS_PER_MONTH
    }

    /// First Monday on or after warm-up; weekly and daily updates start here.
    pub fn first_weekly_day() -> u32 {
        Self::warmup_day().div_ceil(DAYS_PER_WEEK) * DAYS_PER_WEEK
    }

    /// Month starts at which the tiny model is retrained.
    pub fn tpm_days(&self) -> Vec<u32> {
        self.days()
            .filter(|&d| is_month_start(d) && d >= Self::warmup_day())
            .collect()
    }

    pub fn cpm_days(&self) -> Vec<u32> {
        self.days()
            .filter(|&d| is_monday(d) && d >= Self::warmup_day())
            .collect()
    }

    pub fn actr_days(&self) -> Vec<u32> {
        (Self::first_weekly_day()..self.horizon_days).collect()
    }

    /// Days of the last simulated month, over which results are reported.
    pub fn final_month(&self) -> std::ops::Range<u32> {
        self.horizon_days.saturating_sub(DAYS_PER_MONTH)..self.horizon_days
    }

    pub fn advance(&mut self) -> Option<u32> {
        if self.current_day < self.horizon_days {
            let d = self.current_day;
            self.current_day += 1;
            Some(d)
        } else {
            None
        }
    }
}
