//! Right-continuous piecewise-constant switching signals with a dwell-time
//! guarantee.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One switch event: `(instant, pre-mode, post-mode)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// Serialized form of an explicit signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub initial_mode: usize,
    pub switch_times: Vec<f64>,
    /// Post-switch modes, one per entry of `switch_times`.
    pub modes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    switch_times: Vec<f64>,
    /// Initial mode followed by one post-switch mode per switch.
    mode_sequence: Vec<usize>,
    dwell_time: f64,
    horizon: f64,
}

impl SwitchingSignal {
    /// Validated constructor. `modes` lists the post-switch modes; switches
    /// that do not change the mode are dropped.
    ///
    /// The first switch must come no earlier than `dwell_time` unless
    /// `allow_short_first_dwell` is set.
    pub fn new(
        initial_mode: usize,
        switch_times: &[f64],
        modes: &[usize],
        dwell_time: f64,
        horizon: f64,
        allow_short_first_dwell: bool,
    ) -> Result<Self> {
        if !(dwell_time > 0.0 && dwell_time.is_finite()) {
            return Err(Error::InvalidInput(format!("dwell time must be > 0, got {dwell_time}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
        }
        if switch_times.len() != modes.len() {
            return Err(Error::InvalidInput(format!(
                "{} switch times but {} post-switch modes",
                switch_times.len(),
                modes.len()
            )));
        }
        let mut times = Vec::with_capacity(switch_times.len());
        let mut seq = vec![initial_mode];
        for (&s, &m) in switch_times.iter().zip(modes) {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidInput(format!("switch time {s} must be finite and > 0")));
            }
            if let Some(&prev) = times.last() {
                if s <= prev {
                    return Err(Error::InvalidInput("switch times must be strictly increasing".into()));
                }
            }
            if m == *seq.last().unwrap() {
                continue;
            }
            times.push(s);
            seq.push(m);
        }
        for w in times.windows(2) {
            if w[1] - w[0] < dwell_time {
                return Err(Error::InvalidInput(format!(
                    "switches at {} and {} are closer than the dwell time {dwell_time}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&first) = times.first() {
            if first < dwell_time && !allow_short_first_dwell {
                return Err(Error::InvalidInput(format!(
                    "first switch at {first} precedes the dwell time {dwell_time}"
                )));
            }
        }
        Ok(Self {
            switch_times: times,
            mode_sequence: seq,
            dwell_time,
            horizon,
        })
    }

    pub fn constant(mode: usize, dwell_time: f64, horizon: f64) -> Result<Self> {
        Self::new(mode, &[], &[], dwell_time, horizon, false)
    }

    pub fn from_record(rec: &SignalRecord, dwell_time: f64, horizon: f64, allow_short_first_dwell: bool) -> Result<Self> {
        Self::new(
            rec.initial_mode,
            &rec.switch_times,
            &rec.modes,
            dwell_time,
            horizon,
            allow_short_first_dwell,
        )
    }

    pub fn to_record(&self) -> SignalRecord {
        SignalRecord {
            initial_mode: self.mode_sequence[0],
            switch_times: self.switch_times.clone(),
            modes: self.mode_sequence[1..].to_vec(),
        }
    }

    /// Seeded random signal: gaps are `τ_d + Exp(mean_extra_dwell)`, the
    /// next mode is uniform over the other modes. Never switches at 0 or at
    /// `horizon`.
    pub fn generate_random(
        num_modes: usize,
        dwell_time: f64,
        horizon: f64,
        seed: u64,
        mean_extra_dwell: f64,
    ) -> Result<Self> {
        if num_modes == 0 {
            return Err(Error::InvalidInput("need at least one mode".into()));
        }
        if !(mean_extra_dwell >= 0.0 && mean_extra_dwell.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mean extra dwell must be ≥ 0, got {mean_extra_dwell}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = rng.random_range(0..num_modes);
        if num_modes == 1 {
            return Self::constant(initial, dwell_time, horizon);
        }
        let extra = if mean_extra_dwell > 0.0 {
            Some(Exp::new(1.0 / mean_extra_dwell).map_err(|e| Error::InvalidInput(e.to_string()))?)
        } else {
            None
        };
        let mut times = Vec::new();
        let mut modes = Vec::new();
        let mut current = initial;
        let mut last = 0.0_f64;
        loop {
            let gap = dwell_time + extra.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            let mut next = last + gap;
            // rounding in the sum must never shrink a gap below τ_d
            while next - last < dwell_time {
                next = next.next_up();
            }
            if next >= horizon {
                break;
            }
            let mut to = rng.random_range(0..num_modes - 1);
            if to >= current {
                to += 1;
            }
            times.push(next);
            modes.push(to);
            current = to;
            last = next;
        }
        Self::new(initial, &times, &modes, dwell_time, horizon, false)
    }

    /// Round-robin `0, 1, …, l, 0, …` with a switch every `period`, strictly
    /// inside `(0, horizon)`.
    pub fn periodic(num_modes: usize, period: f64, dwell_time: f64, horizon: f64) -> Result<Self> {
        if num_modes == 0 {
            return Err(Error::InvalidInput("need at least one mode".into()));
        }
        if !(period >= dwell_time) {
            return Err(Error::InvalidInput(format!(
                "period {period} is shorter than the dwell time {dwell_time}"
            )));
        }
        if num_modes == 1 {
            return Self::constant(0, dwell_time, horizon);
        }
        let mut times = Vec::new();
        let mut modes = Vec::new();
        let mut k = 1usize;
        loop {
            let s = k as f64 * period;
            if s >= horizon {
                break;
            }
            times.push(s);
            modes.push(k % num_modes);
            k += 1;
        }
        Self::new(0, &times, &modes, dwell_time, horizon, false)
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn mode_sequence(&self) -> &[usize] {
        &self.mode_sequence
    }

    pub fn dwell_time(&self) -> f64 {
        self.dwell_time
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn max_mode(&self) -> usize {
        *self.mode_sequence.iter().max().unwrap()
    }

    /// Checks that every mode index fits a plant with `num_modes` modes.
    pub fn validate_for(&self, num_modes: usize) -> Result<()> {
        if self.max_mode() >= num_modes {
            return Err(Error::InvalidInput(format!(
                "signal uses mode {} but the plant has {num_modes} modes",
                self.max_mode()
            )));
        }
        Ok(())
    }

    fn check_instant(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!(
                "instant {t} outside signal definition [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Active mode at `t`; at a switch instant this is the post-switch mode.
    pub fn mode_at(&self, t: f64) -> Result<usize> {
        self.check_instant(t)?;
        Ok(self.mode_sequence[self.switch_times.partition_point(|&s| s <= t)])
    }

    /// Switch events with `t0 < s ≤ t1`, ascending.
    pub fn switches_in(&self, t0: f64, t1: f64) -> Result<Vec<SwitchEvent>> {
        self.check_instant(t0)?;
        self.check_instant(t1)?;
        if t0 > t1 {
            return Err(Error::Domain(format!("inverted interval ({t0}, {t1}]")));
        }
        let lo = self.switch_times.partition_point(|&s| s <= t0);
        let hi = self.switch_times.partition_point(|&s| s <= t1);
        Ok((lo..hi)
            .map(|i| SwitchEvent {
                time: self.switch_times[i],
                from: self.mode_sequence[i],
                to: self.mode_sequence[i + 1],
            })
            .collect())
    }

    /// Constant-mode segments covering `[t0, t1]` as `(start, end, mode)`.
    /// A switch exactly at `t1` does not open a new segment.
    pub fn segments(&self, t0: f64, t1: f64) -> Result<Vec<(f64, f64, usize)>> {
        let mut out = Vec::new();
        let mut start = t0;
        let mut mode = self.mode_at(t0)?;
        for ev in self.switches_in(t0, t1)? {
            if ev.time >= t1 {
                break;
            }
            out.push((start, ev.time, mode));
            start = ev.time;
            mode = ev.to;
        }
        out.push((start, t1, mode));
        Ok(out)
    }
}
