//! Run recording: spike raster, sliding-window rates, group-pair weight
//! series, the derived summary metrics, and their on-disk layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::network::{Group, Layout, Network};
use crate::neuron::Millis;
use crate::stimulus::StimulusSchedule;

pub const META_FILE: &str = "meta.json";
pub const SPIKES_FILE: &str = "spikes.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordingConfig {
    /// Sliding window for rate curves, ms.
    pub rate_window: Millis,
    pub rate_stride: Millis,
    /// Group-pair weights are sampled at this period, ms.
    pub weight_interval: Millis,
    /// A stimulus counts as answered if a spike follows within this many ms.
    pub latency_window: Millis,
    /// Number of equal epochs the run is divided into for summary metrics.
    pub epochs: usize,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        Self {
            rate_window: 1000,
            rate_stride: 100,
            weight_interval: 1000,
            latency_window: 5,
            epochs: 10,
        }
    }
}

impl RecordingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rate_stride == 0 || self.rate_window < self.rate_stride {
            return Err(Error::Config(format!(
                "recording: need rate_window >= rate_stride > 0, got {} / {}",
                self.rate_window, self.rate_stride
            )));
        }
        if self.weight_interval == 0 || self.latency_window == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "recording: weight_interval, latency_window and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoch {
    pub start: Millis,
    pub end: Millis,
}

impl Epoch {
    /// Splits `[0, duration)` into `n` contiguous epochs of near-equal length.
    pub fn split(duration: Millis, n: usize) -> Vec<Epoch> {
        let n = n as u64;
        (0..n)
            .map(|k| Epoch {
                start: duration * k / n,
                end: duration * (k + 1) / n,
            })
            .collect()
    }

    pub fn contains(&self, t: Millis) -> bool {
        t >= self.start && t < self.end
    }

    pub fn len(&self) -> Millis {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Spikes as `(time, neuron)`, sorted by time then neuron.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpikeRaster {
    events: Vec<(Millis, u32)>,
}

impl SpikeRaster {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a raster from arbitrary events; rejects duplicates.
    pub fn from_events(mut events: Vec<(Millis, u32)>) -> Result<Self> {
        events.sort_unstable();
        if let Some(w) = events.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "duplicate spike of neuron {} at {} ms",
                w[0].1, w[0].0
            )));
        }
        Ok(Self { events })
    }

    /// Appends the spikes of one step; `neurons` must be ascending and `t`
    /// later than every recorded spike.
    pub fn push_step(&mut self, t: Millis, neurons: &[usize]) {
        debug_assert!(self.events.last().is_none_or(|&(last, _)| last < t));
        self.events.extend(neurons.iter().map(|&n| (t, n as u32)));
    }

    pub fn events(&self) -> &[(Millis, u32)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sorted spike times of any neuron in `members`.
    pub fn times_of(&self, members: &[usize]) -> Vec<Millis> {
        let mut mask = vec![false; members.iter().max().map_or(0, |m| m + 1)];
        for &m in members {
            mask[m] = true;
        }
        self.events
            .iter()
            .filter(|&&(_, n)| mask.get(n as usize).copied().unwrap_or(false))
            .map(|&(t, _)| t)
            .collect()
    }

    pub fn count_in(&self, members: &[usize], epoch: Epoch) -> usize {
        self.times_of(members).iter().filter(|&&t| epoch.contains(t)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// Window center, ms.
    pub time: f64,
    /// Mean rate per neuron of the group, Hz.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub group: Group,
    pub points: Vec<RatePoint>,
}

/// Sliding-window mean firing rate of `group`: spikes in each window divided
/// by window length (s) and group size. Windows start at 0 and advance by
/// `stride` while they fit inside `duration`.
pub fn firing_rate(
    raster: &SpikeRaster,
    layout: &Layout,
    group: Group,
    window: Millis,
    stride: Millis,
    duration: Millis,
) -> Result<RateSeries> {
    if stride == 0 || window < stride {
        return Err(Error::InvalidParameter(format!(
            "rate window {window} must be >= stride {stride} > 0"
        )));
    }
    let members = layout.members(group);
    if members.is_empty() {
        return Err(Error::EmptyGroup(group.to_string()));
    }
    let times = raster.times_of(&members);
    let norm = window as f64 / 1000.0 * members.len() as f64;
    let mut points = Vec::new();
    let mut start = 0;
    while start + window <= duration {
        let lo = times.partition_point(|&t| t < start);
        let hi = times.partition_point(|&t| t < start + window);
        points.push(RatePoint {
            time: start as f64 + window as f64 / 2.0,
            rate: (hi - lo) as f64 / norm,
        });
        start += stride;
    }
    Ok(RateSeries { group, points })
}

/// Fraction of stimuli to `group` answered by at least one spike of the group
/// within `[t, t + latency_window]`, per epoch. Epochs without stimuli yield
/// `None`.
pub fn evoked_response_probability(
    raster: &SpikeRaster,
    schedule: &StimulusSchedule,
    layout: &Layout,
    group: Group,
    latency_window: Millis,
    epochs: &[Epoch],
) -> Result<Vec<Option<f64>>> {
    if latency_window == 0 {
        return Err(Error::InvalidParameter("latency window must be >= 1 ms".into()));
    }
    let members = layout.members(group);
    if members.is_empty() {
        return Err(Error::EmptyGroup(group.to_string()));
    }
    let stimuli = schedule.delivery_times(&members);
    if stimuli.is_empty() {
        return Err(Error::NoStimuli(group.to_string()));
    }
    let spikes = raster.times_of(&members);
    let answered = |t: Millis| {
        let k = spikes.partition_point(|&s| s < t);
        spikes.get(k).is_some_and(|&s| s <= t + latency_window)
    };
    Ok(epochs
        .iter()
        .map(|epoch| {
            let in_epoch: Vec<Millis> = stimuli.iter().copied().filter(|&t| epoch.contains(t)).collect();
            if in_epoch.is_empty() {
                None
            } else {
                let hits = in_epoch.iter().filter(|&&t| answered(t)).count();
                Some(hits as f64 / in_epoch.len() as f64)
            }
        })
        .collect())
}

/// Mean weight of all synapses from `from` neurons onto `to` neurons.
pub fn group_mean_weight(net: &Network, from: Group, to: Group) -> Result<f64> {
    let layout = net.layout();
    let (sum, n) = net
        .synapses()
        .iter()
        .filter(|s| layout.group_of(s.pre as usize) == from && layout.group_of(s.post as usize) == to)
        .fold((0.0, 0usize), |(sum, n), s| (sum + s.weight, n + 1));
    if n == 0 {
        return Err(Error::NoSynapses {
            from: from.to_string(),
            to: to.to_string(),
        });
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint {
    pub time: Millis,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSeries {
    pub from: Group,
    pub to: Group,
    pub points: Vec<WeightPoint>,
}

impl WeightSeries {
    pub fn first(&self) -> Option<f64> {
        self.points.first().map(|p| p.mean)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.mean)
    }
}

/// Collects spikes and periodic weight samples while a network runs.
#[derive(Debug)]
pub struct Recorder {
    raster: SpikeRaster,
    pairs: Vec<(Group, Group, Vec<usize>)>,
    weights: Vec<WeightSeries>,
    interval: Millis,
    bound_violations: usize,
    samples: usize,
}

impl Recorder {
    /// Tracks every ordered group pair joined by at least one synapse and
    /// takes the initial weight sample.
    pub fn new(net: &Network, weight_interval: Millis) -> Self {
        let layout = net.layout();
        let mut by_pair: BTreeMap<(Group, Group), Vec<usize>> = BTreeMap::new();
        for (k, s) in net.synapses().iter().enumerate() {
            let key = (layout.group_of(s.pre as usize), layout.group_of(s.post as usize));
            by_pair.entry(key).or_default().push(k);
        }
        let pairs: Vec<_> = by_pair.into_iter().map(|((f, t), idx)| (f, t, idx)).collect();
        let weights = pairs
            .iter()
            .map(|(from, to, _)| WeightSeries {
                from: *from,
                to: *to,
                points: Vec::new(),
            })
            .collect();
        let mut rec = Self {
            raster: SpikeRaster::new(),
            pairs,
            weights,
            interval: weight_interval.max(1),
            bound_violations: 0,
            samples: 0,
        };
        rec.sample(net);
        rec
    }

    /// Records the spikes of the step that just ran; samples weights when
    /// the network clock reaches a multiple of the sampling interval.
    pub fn observe(&mut self, net: &Network) {
        self.raster.push_step(net.time() - 1, net.fired());
        if net.time().is_multiple_of(self.interval) {
            self.sample(net);
        }
    }

    fn sample(&mut self, net: &Network) {
        let synapses = net.synapses();
        for ((_, _, idx), series) in self.pairs.iter().zip(&mut self.weights) {
            let sum: f64 = idx.iter().map(|&k| synapses[k].weight).sum();
            series.points.push(WeightPoint {
                time: net.time(),
                mean: sum / idx.len() as f64,
            });
        }
        self.bound_violations += net.bound_violations();
        self.samples += 1;
    }

    pub fn finish(self) -> (SpikeRaster, Vec<WeightSeries>, usize, usize) {
        (self.raster, self.weights, self.bound_violations, self.samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    /// Distinct stimulus deliveries to the group.
    pub stimuli: usize,
    /// Evoked response probability per epoch; empty for unstimulated groups.
    pub evoked: Vec<Option<f64>>,
    /// Mean per-neuron rate per epoch, Hz.
    pub epoch_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub from: Group,
    pub to: Group,
    pub initial: f64,
    #[serde(rename = "final")]
    pub last: f64,
}

/// Metrics derived purely from the raster, schedule, and weight series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spike_count: usize,
    pub groups: Vec<GroupSummary>,
    pub weights: Vec<PairSummary>,
}

impl RunSummary {
    pub fn compute(
        raster: &SpikeRaster,
        schedule: &StimulusSchedule,
        layout: &Layout,
        weights: &[WeightSeries],
        duration: Millis,
        rec: &RecordingConfig,
    ) -> Result<Self> {
        let epochs = Epoch::split(duration, rec.epochs);
        let mut groups = Vec::new();
        for group in layout.groups() {
            let members = layout.members(group);
            let stimuli = schedule.delivery_times(&members).len();
            let evoked = if stimuli > 0 {
                evoked_response_probability(raster, schedule, layout, group, rec.latency_window, &epochs)?
            } else {
                Vec::new()
            };
            let times = raster.times_of(&members);
            let epoch_rates = epochs
                .iter()
                .map(|e| {
                    let n = times.iter().filter(|&&t| e.contains(t)).count();
                    n as f64 / (e.len() as f64 / 1000.0 * members.len() as f64)
                })
                .collect();
            groups.push(GroupSummary {
                group,
                stimuli,
                evoked,
                epoch_rates,
            });
        }
        let weights = weights
            .iter()
            .filter_map(|w| {
                Some(PairSummary {
                    from: w.from,
                    to: w.to,
                    initial: w.first()?,
                    last: w.last()?,
                })
            })
            .collect();
        Ok(Self {
            spike_count: raster.len(),
            groups,
            weights,
        })
    }

    pub fn group(&self, group: Group) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == group)
    }

    pub fn pair(&self, from: Group, to: Group) -> Option<&PairSummary> {
        self.weights.iter().find(|p| p.from == from && p.to == to)
    }
}

/// Everything one seeded run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub duration: Millis,
    pub layout: Layout,
    pub raster: SpikeRaster,
    pub schedule: StimulusSchedule,
    pub rates: Vec<RateSeries>,
    pub weights: Vec<WeightSeries>,
    /// Synapse-bound violations summed over all weight samples.
    pub bound_violations: usize,
    pub weight_samples: usize,
    pub summary: RunSummary,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    experiment: ExperimentConfig,
    seed: u64,
    duration_ms: Millis,
    layout: Layout,
    bound_violations: usize,
    weight_samples: usize,
    summary: RunSummary,
}

impl RunRecord {
    pub fn compute_rates(
        raster: &SpikeRaster,
        layout: &Layout,
        duration: Millis,
        rec: &RecordingConfig,
    ) -> Result<Vec<RateSeries>> {
        layout
            .groups()
            .into_iter()
            .map(|g| firing_rate(raster, layout, g, rec.rate_window, rec.rate_stride, duration))
            .collect()
    }

    /// Recomputes rates and summary from the raw data and lists every
    /// disagreement with the stored values.
    pub fn verify(&self) -> Result<Vec<String>> {
        let rec = &self.config.recording;
        let mut problems = Vec::new();
        let rates = Self::compute_rates(&self.raster, &self.layout, self.duration, rec)?;
        if rates != self.rates {
            problems.push("rates differ from recomputation".to_string());
        }
        let summary = RunSummary::compute(
            &self.raster,
            &self.schedule,
            &self.layout,
            &self.weights,
            self.duration,
            rec,
        )?;
        if summary.spike_count != self.summary.spike_count {
            problems.push(format!(
                "spike count: stored {} vs recomputed {}",
                self.summary.spike_count, summary.spike_count
            ));
        }
        for (stored, fresh) in self.summary.groups.iter().zip(&summary.groups) {
            if stored != fresh {
                problems.push(format!("group {} metrics differ from recomputation", fresh.group));
            }
        }
        if self.summary.groups.len() != summary.groups.len() {
            problems.push("group list differs from recomputation".into());
        }
        if self.summary.weights != summary.weights {
            problems.push("weight summary differs from recomputation".into());
        }
        Ok(problems)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = Meta {
            experiment: self.config.clone(),
            seed: self.seed,
            duration_ms: self.duration,
            layout: self.layout.clone(),
            bound_violations: self.bound_violations,
            weight_samples: self.weight_samples,
            summary: self.summary.clone(),
        };
        let path = dir.join(META_FILE);
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::data(&path, e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

        write_csv(&dir.join(SPIKES_FILE), &["time_ms", "neuron"], |w| {
            for &(t, n) in self.raster.events() {
                w.write_record([t.to_string(), n.to_string()])?;
            }
            Ok(())
        })?;
        write_csv(&dir.join(RATES_FILE), &["time_ms", "group", "rate_hz"], |w| {
            for s in &self.rates {
                for p in &s.points {
                    w.write_record([fmt_f64(p.time), s.group.to_string(), fmt_f64(p.rate)])?;
                }
            }
            Ok(())
        })?;
        write_csv(
            &dir.join(WEIGHTS_FILE),
            &["time_ms", "from_group", "to_group", "mean_weight"],
            |w| {
                for s in &self.weights {
                    for p in &s.points {
                        w.write_record([
                            p.time.to_string(),
                            s.from.to_string(),
                            s.to.to_string(),
                            fmt_f64(p.mean),
                        ])?;
                    }
                }
                Ok(())
            },
        )?;
        let path = dir.join(SCHEDULE_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.schedule
            .write_csv(BufWriter::new(file))
            .map_err(|e| Error::data(&path, e.to_string()))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::data(&path, e.to_string()))?;

        let path = dir.join(SPIKES_FILE);
        let mut events = Vec::new();
        read_csv(&path, &["time_ms", "neuron"], |line, rec| {
            events.push((parse(&path, line, rec, 0)?, parse(&path, line, rec, 1)?));
            Ok(())
        })?;
        let raster = SpikeRaster::from_events(events).map_err(|e| Error::data(&path, e.to_string()))?;
        if let Some(&(_, n)) = raster.events().iter().find(|&&(_, n)| n as usize >= meta.layout.len()) {
            return Err(Error::data(&path, format!("neuron {n} outside the network")));
        }

        let path = dir.join(RATES_FILE);
        let mut rates: Vec<RateSeries> = Vec::new();
        read_csv(&path, &["time_ms", "group", "rate_hz"], |line, rec| {
            let group: Group = parse(&path, line, rec, 1)?;
            let point = RatePoint {
                time: parse(&path, line, rec, 0)?,
                rate: parse(&path, line, rec, 2)?,
            };
            match rates.last_mut() {
                Some(s) if s.group == group => s.points.push(point),
                _ => rates.push(RateSeries {
                    group,
                    points: vec![point],
                }),
            }
            Ok(())
        })?;

        let path = dir.join(WEIGHTS_FILE);
        let mut weights: Vec<WeightSeries> = Vec::new();
        read_csv(
            &path,
            &["time_ms", "from_group", "to_group", "mean_weight"],
            |line, rec| {
                let from: Group = parse(&path, line, rec, 1)?;
                let to: Group = parse(&path, line, rec, 2)?;
                let point = WeightPoint {
                    time: parse(&path, line, rec, 0)?,
                    mean: parse(&path, line, rec, 3)?,
                };
                match weights.last_mut() {
                    Some(s) if s.from == from && s.to == to => s.points.push(point),
                    _ => weights.push(WeightSeries {
                        from,
                        to,
                        points: vec![point],
                    }),
                }
                Ok(())
            },
        )?;

        let path = dir.join(SCHEDULE_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let schedule = StimulusSchedule::read_csv(std::io::BufReader::new(file), &path)?;

        Ok(Self {
            config: meta.experiment,
            seed: meta.seed,
            duration: meta.duration_ms,
            layout: meta.layout,
            raster,
            schedule,
            rates,
            weights,
            bound_violations: meta.bound_violations,
            weight_samples: meta.weight_samples,
            summary: meta.summary,
        })
    }
}

/// Shortest representation that parses back to the same bits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn write_csv<F>(path: &Path, header: &[&str], body: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<BufWriter<fs::File>>) -> csv::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
    let res = w
        .write_record(header)
        .and_then(|_| body(&mut w))
        .and_then(|_| w.flush().map_err(csv::Error::from));
    res.map_err(|e| Error::data(path, e.to_string()))
}

fn read_csv<F>(path: &Path, header: &[&str], mut row: F) -> Result<()>
where
    F: FnMut(usize, &csv::StringRecord) -> Result<()>,
{
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let found = r.headers().map_err(|e| Error::data(path, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::data(
            path,
            format!("expected header {}, found {}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::data(path, format!("line {line}: {e}")))?;
        row(line, &rec)?;
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, col: usize) -> Result<T> {
    let field = rec.get(col).unwrap_or("");
    field
        .parse()
        .map_err(|_| Error::data(path, format!("line {line}, column {}: cannot parse `{field}`", col + 1)))
}

/// Pointwise mean and standard error across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatPoint {
    pub time: f64,
    pub mean: f64,
    /// `None` when fewer than two runs contribute.
    pub sem: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    /// `rate:<group>` or `weight:<from>-><to>`.
    pub metric: String,
    pub points: Vec<StatPoint>,
}

pub fn mean_sem(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Aggregates rate and weight series across runs that share a configuration.
pub fn aggregate_runs(records: &[RunRecord]) -> Result<Vec<SeriesStats>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Aggregate("no records".into()))?;
    for r in &records[1..] {
        if r.config != first.config || r.duration != first.duration || r.layout != first.layout {
            return Err(Error::Aggregate(format!(
                "run with seed {} has a different configuration than seed {}",
                r.seed, first.seed
            )));
        }
    }

    let mut out = Vec::new();
    let shape_err = |what: &str| Error::Aggregate(format!("{what} series do not line up across runs"));
    for (k, base) in first.rates.iter().enumerate() {
        let mut points = Vec::with_capacity(base.points.len());
        for (i, p) in base.points.iter().enumerate() {
            let mut values = Vec::with_capacity(records.len());
            for r in records {
                let s = r.rates.get(k).filter(|s| s.group == base.group).ok_or_else(|| shape_err("rate"))?;
                let q = s.points.get(i).filter(|q| q.time == p.time).ok_or_else(|| shape_err("rate"))?;
                values.push(q.rate);
            }
            let (mean, sem) = mean_sem(&values);
            points.push(StatPoint {
                time: p.time,
                mean,
                sem,
            });
        }
        out.push(SeriesStats {
            metric: format!("rate:{}", base.group),
            points,
        });
    }
    for (k, base) in first.weights.iter().enumerate() {
        let mut points = Vec::with_capacity(base.points.len());
        for (i, p) in base.points.iter().enumerate() {
            let mut values = Vec::with_capacity(records.len());
            for r in records {
                let s = r
                    .weights
                    .get(k)
                    .filter(|s| s.from == base.from && s.to == base.to)
                    .ok_or_else(|| shape_err("weight"))?;
                let q = s.points.get(i).filter(|q| q.time == p.time).ok_or_else(|| shape_err("weight"))?;
                values.push(q.mean);
            }
            let (mean, sem) = mean_sem(&values);
            points.push(StatPoint {
                time: p.time as f64,
                mean,
                sem,
            });
        }
        out.push(SeriesStats {
            metric: format!("weight:{}->{}", base.from, base.to),
            points,
        });
    }
    Ok(out)
}

pub fn write_aggregate<W: std::io::Write>(out: W, stats: &[SeriesStats]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "time_ms", "mean", "sem"])?;
    for s in stats {
        for p in &s.points {
            w.write_record([
                s.metric.clone(),
                fmt_f64(p.time),
                fmt_f64(p.mean),
                p.sem.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(path: &Path, stats: &[SeriesStats]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_aggregate(BufWriter::new(file), stats).map_err(|e| Error::data(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::network::SimConfig;
    use crate::stimulus::StimulusEvent;

    fn one_group(n: usize) -> Layout {
        Layout::new(vec![Group::Input(0); n])
    }

    #[test]
    fn rate_of_single_neuron() {
        let raster = SpikeRaster::from_events((0..10).map(|k| (k * 100 + 5, 0)).collect()).unwrap();
        let s = firing_rate(&raster, &one_group(1), Group::Input(0), 1000, 1000, 1000).unwrap();
        assert_eq!(s.points, vec![RatePoint { time: 500.0, rate: 10.0 }]);
    }

    #[test]
    fn rate_of_empty_raster_is_zero() {
        let s = firing_rate(&SpikeRaster::new(), &one_group(3), Group::Input(0), 1000, 100, 5000).unwrap();
        assert_eq!(s.points.len(), 41);
        assert!(s.points.iter().all(|p| p.rate == 0.0));
        assert_eq!(s.points[0].time, 500.0);
    }

    #[test]
    fn rate_averages_over_group() {
        let raster = SpikeRaster::from_events((0..10).map(|k| (k * 100, 0)).collect()).unwrap();
        let s = firing_rate(&raster, &one_group(2), Group::Input(0), 1000, 1000, 1000).unwrap();
        assert_eq!(s.points[0].rate, 5.0);
    }

    #[test]
    fn rate_rejects_bad_arguments() {
        let layout = one_group(1);
        assert!(firing_rate(&SpikeRaster::new(), &layout, Group::Input(0), 100, 200, 1000).is_err());
        assert!(firing_rate(&SpikeRaster::new(), &layout, Group::Input(0), 100, 0, 1000).is_err());
        assert!(matches!(
            firing_rate(&SpikeRaster::new(), &layout, Group::Hidden, 100, 100, 1000),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn raster_rejects_duplicates() {
        assert!(SpikeRaster::from_events(vec![(1, 0), (1, 0)]).is_err());
        let r = SpikeRaster::from_events(vec![(5, 1), (1, 0), (5, 0)]).unwrap();
        assert_eq!(r.events(), &[(1, 0), (5, 0), (5, 1)]);
    }

    fn stim(times: &[Millis]) -> StimulusSchedule {
        StimulusSchedule::from_events(
            times
                .iter()
                .map(|&time| StimulusEvent {
                    time,
                    neuron: 0,
                    amplitude: 100.0,
                })
                .collect(),
        )
    }

    #[test]
    fn evoked_probability_counts() {
        let layout = one_group(1);
        let times: Vec<Millis> = (0..10).map(|k| k * 100).collect();
        let schedule = stim(&times);
        let whole = [Epoch { start: 0, end: 1000 }];

        let all = SpikeRaster::from_events(times.iter().map(|&t| (t + 5, 0)).collect()).unwrap();
        let p = evoked_response_probability(&all, &schedule, &layout, Group::Input(0), 5, &whole).unwrap();
        assert_eq!(p, vec![Some(1.0)]);

        let late = SpikeRaster::from_events(times.iter().map(|&t| (t + 6, 0)).collect()).unwrap();
        let p = evoked_response_probability(&late, &schedule, &layout, Group::Input(0), 5, &whole).unwrap();
        assert_eq!(p, vec![Some(0.0)]);

        let seven = SpikeRaster::from_events(times[..7].iter().map(|&t| (t, 0)).collect()).unwrap();
        let p = evoked_response_probability(&seven, &schedule, &layout, Group::Input(0), 5, &whole).unwrap();
        assert!((p[0].unwrap() - 0.7).abs() < 1e-12);

        let halves = Epoch::split(1000, 2);
        let p = evoked_response_probability(&seven, &schedule, &layout, Group::Input(0), 5, &halves).unwrap();
        assert_eq!(p, vec![Some(1.0), Some(0.4)]);

        let empty = [Epoch { start: 5000, end: 6000 }];
        let p = evoked_response_probability(&seven, &schedule, &layout, Group::Input(0), 5, &empty).unwrap();
        assert_eq!(p, vec![None]);
    }

    #[test]
    fn evoked_probability_errors() {
        let layout = Layout::new(vec![Group::Input(0), Group::Input(1)]);
        let schedule = stim(&[10]);
        let whole = [Epoch { start: 0, end: 100 }];
        assert!(matches!(
            evoked_response_probability(&SpikeRaster::new(), &schedule, &layout, Group::Input(1), 5, &whole),
            Err(Error::NoStimuli(_))
        ));
        assert!(evoked_response_probability(&SpikeRaster::new(), &schedule, &layout, Group::Input(0), 0, &whole).is_err());
    }

    #[test]
    fn group_means() {
        let cfg = SimConfig::default();
        let net = Network::minimal(3, 15.0, &cfg, 0).unwrap();
        assert_eq!(group_mean_weight(&net, Group::Input(0), Group::Inhibitory).unwrap(), 15.0);
        assert_eq!(group_mean_weight(&net, Group::Inhibitory, Group::Input(2)).unwrap(), -15.0);
        assert!(matches!(
            group_mean_weight(&net, Group::Input(0), Group::Input(1)),
            Err(Error::NoSynapses { .. })
        ));

        let mut b = crate::network::NetworkBuilder::new();
        let a = b.add_neuron(crate::neuron::NeuronKind::Excitatory, Group::Input(0));
        let c = b.add_neuron(crate::neuron::NeuronKind::Excitatory, Group::Input(1));
        let d = b.add_neuron(crate::neuron::NeuronKind::Excitatory, Group::Input(1));
        b.connect(a, c, 10.0, 1, false).unwrap();
        b.connect(a, d, 20.0, 1, false).unwrap();
        let net = b.build(&cfg, 0).unwrap();
        assert_eq!(group_mean_weight(&net, Group::Input(0), Group::Input(1)).unwrap(), 15.0);
    }

    #[test]
    fn mean_and_sem() {
        assert_eq!(mean_sem(&[4.0, 6.0]), (5.0, Some(1.0)));
        assert_eq!(mean_sem(&[3.0]), (3.0, None));
        assert_eq!(mean_sem(&[2.5; 20]), (2.5, Some(0.0)));
    }

    #[test]
    fn epochs_tile_duration() {
        let e = Epoch::split(1001, 10);
        assert_eq!(e.first().unwrap().start, 0);
        assert_eq!(e.last().unwrap().end, 1001);
        assert!(e.windows(2).all(|w| w[0].end == w[1].start));
    }

    proptest! {
        #[test]
        fn rates_conserve_spikes_when_windows_tile(
            spikes in proptest::collection::btree_set((0u64..10_000, 0u32..4), 0..300),
            window in 1u64..=2000,
        ) {
            let raster = SpikeRaster::from_events(spikes.iter().copied().collect()).unwrap();
            let layout = one_group(4);
            let duration = 10_000;
            let s = firing_rate(&raster, &layout, Group::Input(0), window, window, duration).unwrap();
            let covered = s.points.len() as u64 * window;
            let total: f64 = s.points.iter().map(|p| p.rate * window as f64 / 1000.0 * 4.0).sum();
            let expected = raster.events().iter().filter(|&&(t, _)| t < covered).count();
            prop_assert!((total - expected as f64).abs() < 1e-6);
            prop_assert!(s.points.iter().all(|p| p.rate >= 0.0));
        }
    }
}
