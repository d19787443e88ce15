//! Stimulus sequences: a signal stimulus followed by target stimuli at fixed
//! offsets, repeated with jittered onsets, plus one uncorrelated control
//! stimulus per inter-sequence gap.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Group, Layout};
use crate::neuron::Millis;

/// Stream of the seeded generator reserved for stimulus timing.
const STIMULUS_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Signal, then one target after one interval.
    Minimal,
    /// Signal, then all targets together after one interval.
    Spatial,
    /// Signal, then target `k` after `k + 1` intervals.
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusEvent {
    pub time: Millis,
    pub neuron: usize,
    /// Depolarization in mV applied for one step.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub pattern: Pattern,
    pub intra_interval: Millis,
    pub inter_interval_mean: Millis,
    pub inter_interval_jitter: Millis,
    pub amplitude: f64,
    pub signal_target: Group,
    pub target_list: Vec<Group>,
    pub random_target: Group,
    pub total_duration: Millis,
}

impl SequenceSpec {
    /// Defaults shared by every experiment: 10 ms within a sequence, 300 ms
    /// between onsets with 100 ms jitter.
    pub fn new(
        pattern: Pattern,
        amplitude: f64,
        signal_target: Group,
        target_list: Vec<Group>,
        random_target: Group,
        total_duration: Millis,
    ) -> Self {
        Self {
            pattern,
            intra_interval: 10,
            inter_interval_mean: 300,
            inter_interval_jitter: 100,
            amplitude,
            signal_target,
            target_list,
            random_target,
            total_duration,
        }
    }

    /// Offset from onset of each target group.
    pub fn target_offsets(&self) -> Vec<Millis> {
        (0..self.target_list.len() as Millis)
            .map(|k| match self.pattern {
                Pattern::Minimal | Pattern::Spatial => self.intra_interval,
                Pattern::Temporal => self.intra_interval * (k + 1),
            })
            .collect()
    }

    pub fn sequence_length(&self) -> Millis {
        self.target_offsets().into_iter().max().unwrap_or(0)
    }

    pub fn validate(&self, layout: &Layout) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidStimulus(msg));
        if self.target_list.is_empty() {
            return bad("target list is empty".into());
        }
        if self.pattern == Pattern::Minimal && self.target_list.len() != 1 {
            return bad(format!(
                "minimal pattern takes one target, got {}",
                self.target_list.len()
            ));
        }
        let mut roles = vec![self.signal_target, self.random_target];
        roles.extend(&self.target_list);
        for (k, g) in roles.iter().enumerate() {
            if roles[..k].contains(g) {
                return bad(format!("group {g} is assigned more than one role"));
            }
            if layout.members(*g).is_empty() {
                return Err(Error::EmptyGroup(g.to_string()));
            }
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be positive, got {}", self.amplitude));
        }
        if self.intra_interval == 0 {
            return bad("intra-sequence interval must be positive".into());
        }
        if self.inter_interval_jitter >= self.inter_interval_mean {
            return bad(format!(
                "jitter {} must be below the mean interval {}",
                self.inter_interval_jitter, self.inter_interval_mean
            ));
        }
        if self.inter_interval_mean - self.inter_interval_jitter <= self.sequence_length() {
            return bad("sequences would overlap; increase the inter-sequence interval".into());
        }
        if self.total_duration <= self.inter_interval_mean {
            return bad(format!(
                "total duration {} must exceed the inter-sequence interval {}",
                self.total_duration, self.inter_interval_mean
            ));
        }
        Ok(())
    }
}

/// Time-sorted stimulus events.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StimulusSchedule {
    events: Vec<StimulusEvent>,
    /// Onset of each sequence instance.
    onsets: Vec<Millis>,
}

/// Schedules are equal when they deliver the same events; onsets are
/// generator bookkeeping and are not persisted.
impl PartialEq for StimulusSchedule {
    fn eq(&self, other: &Self) -> bool {
        self.events == other.events
    }
}

impl StimulusSchedule {
    pub fn from_events(mut events: Vec<StimulusEvent>) -> Self {
        events.sort_by_key(|e| (e.time, e.neuron));
        Self {
            events,
            onsets: Vec::new(),
        }
    }

    pub fn events(&self) -> &[StimulusEvent] {
        &self.events
    }

    pub fn onsets(&self) -> &[Millis] {
        &self.onsets
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Distinct delivery times to any member of `members`.
    pub fn delivery_times(&self, members: &[usize]) -> Vec<Millis> {
        let mut times: Vec<Millis> = self
            .events
            .iter()
            .filter(|e| members.contains(&e.neuron))
            .map(|e| e.time)
            .collect();
        times.dedup();
        times
    }

    /// Steps through the schedule one millisecond at a time.
    pub fn cursor(&self) -> ScheduleCursor<'_> {
        ScheduleCursor {
            events: &self.events,
            next: 0,
            buf: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(["time_ms", "neuron", "amplitude_mv"])?;
        for e in &self.events {
            w.write_record([
                e.time.to_string(),
                e.neuron.to_string(),
                format!("{:?}", e.amplitude),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r
            .headers()
            .map_err(|e| Error::data(origin, e.to_string()))?
            .clone();
        if headers != vec!["time_ms", "neuron", "amplitude_mv"] {
            return Err(Error::data(
                origin,
                format!("expected header time_ms,neuron,amplitude_mv, found {headers:?}"),
            ));
        }
        let mut events = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::data(origin, format!("line {line}: {e}")))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let parse_err = |what: &str| Error::data(origin, format!("line {line}: bad {what}"));
            let amplitude: f64 = field(2).parse().map_err(|_| parse_err("amplitude_mv"))?;
            if !(amplitude > 0.0) {
                return Err(parse_err("amplitude_mv"));
            }
            events.push(StimulusEvent {
                time: field(0).parse().map_err(|_| parse_err("time_ms"))?,
                neuron: field(1).parse().map_err(|_| parse_err("neuron"))?,
                amplitude,
            });
        }
        Ok(Self::from_events(events))
    }
}

pub struct ScheduleCursor<'a> {
    events: &'a [StimulusEvent],
    next: usize,
    buf: Vec<(usize, f64)>,
}

impl ScheduleCursor<'_> {
    /// Inputs due at `t`. Calls must use non-decreasing `t`.
    pub fn inputs_at(&mut self, t: Millis) -> &[(usize, f64)] {
        self.buf.clear();
        while let Some(e) = self.events.get(self.next) {
            if e.time > t {
                break;
            }
            if e.time == t {
                self.buf.push((e.neuron, e.amplitude));
            }
            self.next += 1;
        }
        &self.buf
    }
}

/// Builds the schedule for `spec` on the neurons of `layout`.
///
/// Onsets are separated by gaps drawn uniformly from
/// `mean ± jitter`; the first onset is one such gap after time zero. Each
/// gap between consecutive onsets receives one control stimulus at a
/// uniformly drawn time.
pub fn generate_schedule(spec: &SequenceSpec, layout: &Layout, seed: u64) -> Result<StimulusSchedule> {
    spec.validate(layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STIMULUS_STREAM);

    let signal = layout.members(spec.signal_target);
    let targets: Vec<Vec<usize>> = spec.target_list.iter().map(|&g| layout.members(g)).collect();
    let random = layout.members(spec.random_target);
    let offsets = spec.target_offsets();
    let length = spec.sequence_length();

    let lo = spec.inter_interval_mean - spec.inter_interval_jitter;
    let hi = spec.inter_interval_mean + spec.inter_interval_jitter;
    let gap = |rng: &mut ChaCha8Rng| rng.random_range(lo..=hi);

    let mut events = Vec::new();
    let mut onsets = Vec::new();
    let mut prev_onset: Millis = 0;
    let mut onset = gap(&mut rng);
    let push_group = |events: &mut Vec<StimulusEvent>, members: &[usize], time: Millis| {
        events.extend(members.iter().map(|&neuron| StimulusEvent {
            time,
            neuron,
            amplitude: spec.amplitude,
        }));
    };
    while onset + length < spec.total_duration {
        let control = rng.random_range(prev_onset..onset);
        push_group(&mut events, &random, control);
        push_group(&mut events, &signal, onset);
        for (members, &off) in targets.iter().zip(&offsets) {
            push_group(&mut events, members, onset + off);
        }
        onsets.push(onset);
        prev_onset = onset;
        onset += gap(&mut rng);
    }

    let mut schedule = StimulusSchedule::from_events(events);
    schedule.onsets = onsets;
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn minimal_layout(n: u8) -> Layout {
        let mut groups: Vec<Group> = (0..n).map(Group::Input).collect();
        groups.push(Group::Inhibitory);
        Layout::new(groups)
    }

    fn spec(pattern: Pattern, targets: Vec<Group>, random: Group) -> SequenceSpec {
        SequenceSpec::new(pattern, 100.0, Group::Input(0), targets, random, 30_000)
    }

    fn times_for(s: &StimulusSchedule, neuron: usize) -> Vec<Millis> {
        s.events().iter().filter(|e| e.neuron == neuron).map(|e| e.time).collect()
    }

    #[test]
    fn minimal_pattern_layout() {
        let layout = minimal_layout(3);
        let sp = spec(Pattern::Minimal, vec![Group::Input(1)], Group::Input(2));
        let s = generate_schedule(&sp, &layout, 1).unwrap();
        let sig = times_for(&s, 0);
        let tgt = times_for(&s, 1);
        assert_eq!(sig, s.onsets());
        assert_eq!(tgt, sig.iter().map(|t| t + 10).collect::<Vec<_>>());
        assert!(times_for(&s, 3).is_empty());
    }

    #[test]
    fn spatial_pattern_layout() {
        let layout = minimal_layout(5);
        let sp = spec(
            Pattern::Spatial,
            vec![Group::Input(1), Group::Input(2), Group::Input(3)],
            Group::Input(4),
        );
        let s = generate_schedule(&sp, &layout, 2).unwrap();
        for k in 1..=3 {
            let expected: Vec<_> = s.onsets().iter().map(|t| t + 10).collect();
            assert_eq!(times_for(&s, k), expected);
        }
    }

    #[test]
    fn temporal_pattern_layout() {
        let layout = minimal_layout(5);
        let sp = spec(
            Pattern::Temporal,
            vec![Group::Input(1), Group::Input(2), Group::Input(3)],
            Group::Input(4),
        );
        let s = generate_schedule(&sp, &layout, 3).unwrap();
        for k in 1..=3u64 {
            let expected: Vec<_> = s.onsets().iter().map(|t| t + 10 * k).collect();
            assert_eq!(times_for(&s, k as usize), expected);
        }
    }

    #[test]
    fn group_targets_expand_to_members() {
        let mut groups = vec![Group::InputGroup(0); 2];
        groups.extend([Group::InputGroup(1); 2]);
        groups.extend([Group::InputGroup(2); 2]);
        let layout = Layout::new(groups);
        let sp = SequenceSpec::new(
            Pattern::Minimal,
            10.0,
            Group::InputGroup(0),
            vec![Group::InputGroup(1)],
            Group::InputGroup(2),
            5_000,
        );
        let s = generate_schedule(&sp, &layout, 0).unwrap();
        assert_eq!(times_for(&s, 0), s.onsets());
        assert_eq!(times_for(&s, 0), times_for(&s, 1));
        assert_eq!(times_for(&s, 2), times_for(&s, 3));
    }

    #[test]
    fn zero_jitter_gives_literal_interval() {
        let layout = minimal_layout(3);
        let mut sp = spec(Pattern::Minimal, vec![Group::Input(1)], Group::Input(2));
        sp.inter_interval_jitter = 0;
        let s = generate_schedule(&sp, &layout, 9).unwrap();
        assert!(s.onsets().windows(2).all(|w| w[1] - w[0] == 300));
    }

    #[test]
    fn rejects_bad_specs() {
        let layout = minimal_layout(3);
        let empty = spec(Pattern::Spatial, vec![], Group::Input(2));
        assert!(matches!(generate_schedule(&empty, &layout, 0), Err(Error::InvalidStimulus(_))));
        let overlap = spec(Pattern::Minimal, vec![Group::Input(0)], Group::Input(2));
        assert!(generate_schedule(&overlap, &layout, 0).is_err());
        let overlap = spec(Pattern::Minimal, vec![Group::Input(1)], Group::Input(1));
        assert!(generate_schedule(&overlap, &layout, 0).is_err());
        let missing = spec(Pattern::Minimal, vec![Group::Input(4)], Group::Input(2));
        assert!(generate_schedule(&missing, &layout, 0).is_err());
        let mut short = spec(Pattern::Minimal, vec![Group::Input(1)], Group::Input(2));
        short.total_duration = 300;
        assert!(generate_schedule(&short, &layout, 0).is_err());
    }

    #[test]
    fn cursor_yields_events_by_time() {
        let s = StimulusSchedule::from_events(vec![
            StimulusEvent { time: 5, neuron: 1, amplitude: 10.0 },
            StimulusEvent { time: 2, neuron: 0, amplitude: 10.0 },
            StimulusEvent { time: 5, neuron: 0, amplitude: 20.0 },
        ]);
        let mut c = s.cursor();
        let got: Vec<Vec<(usize, f64)>> = (0..8).map(|t| c.inputs_at(t).to_vec()).collect();
        assert_eq!(got[2], vec![(0, 10.0)]);
        assert_eq!(got[5], vec![(0, 20.0), (1, 10.0)]);
        assert_eq!(got.iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let layout = minimal_layout(3);
        let sp = spec(Pattern::Minimal, vec![Group::Input(1)], Group::Input(2));
        let s = generate_schedule(&sp, &layout, 5).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"time_ms,neuron,amplitude_mv\n"));
        let back = StimulusSchedule::read_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.events(), s.events());
        assert!(StimulusSchedule::read_csv(&b"t,n,a\n1,2,3\n"[..], Path::new("mem")).is_err());
        assert!(StimulusSchedule::read_csv(&b"time_ms,neuron,amplitude_mv\n1,x,3\n"[..], Path::new("mem")).is_err());
    }

    #[test]
    fn matched_rate_control() {
        let layout = minimal_layout(3);
        let mut ratios = 0.0;
        for seed in 0..10 {
            let mut sp = spec(Pattern::Minimal, vec![Group::Input(1)], Group::Input(2));
            sp.total_duration = 100_000;
            let s = generate_schedule(&sp, &layout, seed).unwrap();
            ratios += times_for(&s, 2).len() as f64 / s.onsets().len() as f64;
        }
        let mean = ratios / 10.0;
        assert!((mean - 1.0).abs() <= 0.1, "mean ratio {mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn offsets_are_interval_multiples(
            pattern in prop_oneof![Just(Pattern::Minimal), Just(Pattern::Spatial), Just(Pattern::Temporal)],
            intra in 1u64..=15,
            mean in 100u64..=400,
            jitter_frac in 0.0f64..0.5,
            amplitude in 1.0f64..=120.0,
            seed in any::<u64>(),
        ) {
            let layout = minimal_layout(5);
            let targets = match pattern {
                Pattern::Minimal => vec![Group::Input(1)],
                _ => vec![Group::Input(1), Group::Input(2), Group::Input(3)],
            };
            let mut sp = SequenceSpec::new(pattern, amplitude, Group::Input(0), targets, Group::Input(4), 5_000);
            sp.intra_interval = intra;
            sp.inter_interval_mean = mean;
            sp.inter_interval_jitter = (mean as f64 * jitter_frac) as u64;
            let s = generate_schedule(&sp, &layout, seed).unwrap();
            let again = generate_schedule(&sp, &layout, seed).unwrap();
            prop_assert_eq!(&s, &again);
            for e in s.events() {
                prop_assert_eq!(e.amplitude, amplitude);
                prop_assert!(e.time < sp.total_duration);
            }
            for &onset in s.onsets() {
                for e in s.events().iter().filter(|e| (1..=3).contains(&e.neuron)) {
                    if e.time >= onset && e.time <= onset + sp.sequence_length() {
                        prop_assert_eq!((e.time - onset) % intra, 0);
                    }
                }
            }
            prop_assert!(s.events().windows(2).all(|w| (w[0].time, w[0].neuron) <= (w[1].time, w[1].neuron)));
        }
    }
}
