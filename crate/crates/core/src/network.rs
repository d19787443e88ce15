//! Network topologies, delayed spike delivery, and online STDP.
//!
//! Every spike emitted at step `t` over a synapse with delay `d >= 1` is added
//! to the postsynaptic input of step `t + d`. Networks without explicit delays
//! use `d = 1`, i.e. delivery on the following step. The delivered amount is
//! the synapse weight at emission.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::neuron::{Integration, IzhikevichParams, Millis, NeuronKind, NeuronState};
use crate::plasticity::{StdpConfig, StdpKernel, StdpTiming};

/// Functional group a neuron belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Single input neuron of a minimal network (`E0`, `E1`, ...).
    Input(u8),
    /// Input group of the large network (`EG0`, `EG1`, ...).
    InputGroup(u8),
    /// Unstimulated excitatory neurons of the large network.
    Hidden,
    /// Inhibitory neuron(s).
    Inhibitory,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Input(k) => write!(f, "E{k}"),
            Group::InputGroup(k) => write!(f, "EG{k}"),
            Group::Hidden => f.write_str("hidden"),
            Group::Inhibitory => f.write_str("I"),
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownGroup(s.to_string());
        match s {
            "hidden" | "H" => Ok(Group::Hidden),
            "I" | "inh" | "inhibitory" => Ok(Group::Inhibitory),
            _ => {
                if let Some(k) = s.strip_prefix("EG") {
                    k.parse().map(Group::InputGroup).map_err(|_| unknown())
                } else if let Some(k) = s.strip_prefix('E') {
                    k.parse().map(Group::Input).map_err(|_| unknown())
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

impl Serialize for Group {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Neuron-to-group assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    groups: Vec<Group>,
}

impl Layout {
    pub fn new(groups: Vec<Group>) -> Self {
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_of(&self, neuron: usize) -> Group {
        self.groups[neuron]
    }

    pub fn members(&self, group: Group) -> Vec<usize> {
        (0..self.groups.len())
            .filter(|&i| self.groups[i] == group)
            .collect()
    }

    /// Distinct groups in ascending order.
    pub fn groups(&self) -> Vec<Group> {
        let mut g = self.groups.clone();
        g.sort();
        g.dedup();
        g
    }

    pub fn contains(&self, group: Group) -> bool {
        self.groups.contains(&group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub integration: Integration,
    /// Standard deviation of the per-step Gaussian input noise, mV.
    pub noise_sigma: f64,
    pub stdp_timing: StdpTiming,
    pub pairing_window: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            integration: Integration::HalfStep,
            noise_sigma: 3.0,
            stdp_timing: StdpTiming::Emission,
            pairing_window: StdpConfig::DEFAULT_WINDOW,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: u32,
    pub post: u32,
    pub weight: f64,
    /// Transmission delay in ms, at least 1.
    pub delay: u16,
    pub plastic: bool,
    /// Presynaptic kind; selects the STDP preset and weight bounds.
    pub rule: NeuronKind,
}

/// Incremental construction of a [`Network`].
#[derive(Debug, Clone, Default)]
pub struct NetworkBuilder {
    kinds: Vec<NeuronKind>,
    groups: Vec<Group>,
    synapses: Vec<Synapse>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_neuron(&mut self, kind: NeuronKind, group: Group) -> usize {
        self.kinds.push(kind);
        self.groups.push(group);
        self.kinds.len() - 1
    }

    pub fn connect(
        &mut self,
        pre: usize,
        post: usize,
        weight: f64,
        delay: u16,
        plastic: bool,
    ) -> Result<&mut Self> {
        let n = self.kinds.len();
        if pre >= n || post >= n {
            return Err(Error::InvalidParameter(format!(
                "synapse {pre}->{post} references a neuron outside 0..{n}"
            )));
        }
        if pre == post {
            return Err(Error::InvalidParameter(format!("self-connection on neuron {pre}")));
        }
        if delay == 0 {
            return Err(Error::InvalidParameter(format!(
                "synapse {pre}->{post} has zero delay"
            )));
        }
        let rule = self.kinds[pre];
        let bounds = StdpConfig::preset(rule);
        if !bounds.contains(weight) {
            return Err(Error::InvalidParameter(format!(
                "synapse {pre}->{post} weight {weight} outside [{}, {}] for a {rule:?} source",
                bounds.w_min, bounds.w_max
            )));
        }
        self.synapses.push(Synapse {
            pre: pre as u32,
            post: post as u32,
            weight,
            delay,
            plastic,
            rule,
        });
        Ok(self)
    }

    pub fn build(self, cfg: &SimConfig, seed: u64) -> Result<Network> {
        Network::assemble(self, cfg, seed)
    }
}

const STRUCTURE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

pub const LARGE_EXCITATORY: usize = 80;
pub const LARGE_INHIBITORY: usize = 20;
pub const LARGE_GROUP_SIZE: usize = 10;
pub const LARGE_INPUT_GROUPS: usize = 3;
pub const MAX_LADDER_DELAY: u16 = 15;

#[derive(Debug, Clone)]
pub struct Network {
    params: Vec<IzhikevichParams>,
    states: Vec<NeuronState>,
    kinds: Vec<NeuronKind>,
    layout: Layout,
    synapses: Vec<Synapse>,
    outgoing: Vec<Vec<u32>>,
    incoming: Vec<Vec<u32>>,
    kernels: [StdpKernel; 2],
    /// Ring of per-neuron input accumulators indexed by `t % ring.len()`.
    ring: Vec<Vec<f64>>,
    time: Millis,
    cfg: SimConfig,
    seed: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    last_input: Vec<f64>,
    fired: Vec<usize>,
}

impl Network {
    /// `n_inputs` excitatory neurons `E0..`, all connected to and from a
    /// single inhibitory neuron `I` with next-step delivery.
    pub fn minimal(n_inputs: usize, initial_weight: f64, cfg: &SimConfig, seed: u64) -> Result<Self> {
        check_inputs(n_inputs)?;
        let mut b = NetworkBuilder::new();
        let inputs: Vec<usize> = (0..n_inputs)
            .map(|k| b.add_neuron(NeuronKind::Excitatory, Group::Input(k as u8)))
            .collect();
        let inh = b.add_neuron(NeuronKind::Inhibitory, Group::Inhibitory);
        for &e in &inputs {
            b.connect(e, inh, initial_weight, 1, true)?;
            b.connect(inh, e, -initial_weight, 1, true)?;
        }
        b.build(cfg, seed)
    }

    /// Minimal topology where each input/inhibitory pair is linked by 15
    /// parallel synapses per direction with delays 1..=15 ms.
    pub fn delayed_minimal(n_inputs: usize, initial_weight: f64, cfg: &SimConfig, seed: u64) -> Result<Self> {
        check_inputs(n_inputs)?;
        let mut b = NetworkBuilder::new();
        let inputs: Vec<usize> = (0..n_inputs)
            .map(|k| b.add_neuron(NeuronKind::Excitatory, Group::Input(k as u8)))
            .collect();
        let inh = b.add_neuron(NeuronKind::Inhibitory, Group::Inhibitory);
        for &e in &inputs {
            for delay in 1..=MAX_LADDER_DELAY {
                b.connect(e, inh, initial_weight, delay, true)?;
            }
            for delay in 1..=MAX_LADDER_DELAY {
                b.connect(inh, e, -initial_weight, delay, true)?;
            }
        }
        b.build(cfg, seed)
    }

    /// 80 excitatory + 20 inhibitory neurons, fully connected without
    /// self-loops, weights uniform in (0, 5) or (-5, 0) by source kind.
    /// Inhibitory-to-inhibitory synapses are static.
    pub fn large_random(cfg: &SimConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STRUCTURE_STREAM);
        let mut b = NetworkBuilder::new();
        for i in 0..LARGE_EXCITATORY {
            let group = match i / LARGE_GROUP_SIZE {
                g if g < LARGE_INPUT_GROUPS => Group::InputGroup(g as u8),
                _ => Group::Hidden,
            };
            b.add_neuron(NeuronKind::Excitatory, group);
        }
        for _ in 0..LARGE_INHIBITORY {
            b.add_neuron(NeuronKind::Inhibitory, Group::Inhibitory);
        }
        let n = LARGE_EXCITATORY + LARGE_INHIBITORY;
        for pre in 0..n {
            let pre_kind = b.kinds[pre];
            for post in (0..n).filter(|&p| p != pre) {
                let magnitude = open_uniform(&mut rng, 5.0);
                let (weight, plastic) = match pre_kind {
                    NeuronKind::Excitatory => (magnitude, true),
                    NeuronKind::Inhibitory => (-magnitude, b.kinds[post] == NeuronKind::Excitatory),
                };
                b.connect(pre, post, weight, 1, plastic)?;
            }
        }
        b.build(cfg, seed)
    }

    fn assemble(b: NetworkBuilder, cfg: &SimConfig, seed: u64) -> Result<Self> {
        if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be finite and non-negative, got {}",
                cfg.noise_sigma
            )));
        }
        let n = b.kinds.len();
        let params: Vec<_> = b.kinds.iter().map(|&k| IzhikevichParams::preset(k)).collect();
        let states = params.iter().map(NeuronState::at_rest).collect();
        let mut outgoing = vec![Vec::new(); n];
        let mut incoming = vec![Vec::new(); n];
        for (idx, s) in b.synapses.iter().enumerate() {
            outgoing[s.pre as usize].push(idx as u32);
            incoming[s.post as usize].push(idx as u32);
        }
        let max_delay = b.synapses.iter().map(|s| s.delay).max().unwrap_or(1) as usize;
        let kernels = [
            StdpKernel::new(StdpConfig::excitatory().with_window(cfg.pairing_window))?,
            StdpKernel::new(StdpConfig::inhibitory().with_window(cfg.pairing_window))?,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM);
        let noise = if cfg.noise_sigma > 0.0 {
            Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            params,
            states,
            kinds: b.kinds,
            layout: Layout::new(b.groups),
            synapses: b.synapses,
            outgoing,
            incoming,
            kernels,
            ring: vec![vec![0.0; n]; max_delay + 1],
            time: 0,
            cfg: cfg.clone(),
            seed,
            rng,
            noise,
            last_input: vec![0.0; n],
            fired: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Time of the next step.
    pub fn time(&self) -> Millis {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn kind(&self, neuron: usize) -> NeuronKind {
        self.kinds[neuron]
    }

    pub fn state(&self, neuron: usize) -> &NeuronState {
        &self.states[neuron]
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn stdp(&self, rule: NeuronKind) -> &StdpConfig {
        self.kernel(rule).config()
    }

    /// Neurons that fired on the most recent step, ascending.
    pub fn fired(&self) -> &[usize] {
        &self.fired
    }

    /// Total input each neuron received on the most recent step.
    pub fn last_input(&self) -> &[f64] {
        &self.last_input
    }

    /// Number of synapses whose weight lies outside the bounds of its rule.
    pub fn bound_violations(&self) -> usize {
        self.synapses
            .iter()
            .filter(|s| !self.stdp(s.rule).contains(s.weight))
            .count()
    }

    fn kernel(&self, rule: NeuronKind) -> &StdpKernel {
        match rule {
            NeuronKind::Excitatory => &self.kernels[0],
            NeuronKind::Inhibitory => &self.kernels[1],
        }
    }

    /// Advances the network by one millisecond.
    ///
    /// `external` lists `(neuron, mV)` depolarizations applied during this
    /// step. Returns the neurons that fired, in ascending order.
    pub fn step(&mut self, external: &[(usize, f64)]) -> Result<&[usize]> {
        let t = self.time;
        let n = self.states.len();
        let slot = (t % self.ring.len() as u64) as usize;

        let arriving = &mut self.ring[slot];
        self.last_input.copy_from_slice(arriving);
        arriving.fill(0.0);
        for &(neuron, amplitude) in external {
            if neuron >= n {
                return Err(Error::InvalidParameter(format!(
                    "external input targets neuron {neuron} of {n}"
                )));
            }
            self.last_input[neuron] += amplitude;
        }
        if let Some(noise) = &self.noise {
            for input in &mut self.last_input {
                *input += noise.sample(&mut self.rng);
            }
        }

        self.fired.clear();
        for i in 0..n {
            let fired = self.states[i]
                .step(&self.params[i], self.last_input[i], t, self.cfg.integration)
                .map_err(|e| match e {
                    Error::NonFinite { t, v, u, input, .. } => Error::NonFinite {
                        neuron: i,
                        t,
                        v,
                        u,
                        input,
                    },
                    other => other,
                })?;
            if fired {
                self.fired.push(i);
            }
        }

        let ring_len = self.ring.len() as u64;
        for &pre in &self.fired {
            for &s in &self.outgoing[pre] {
                let syn = &self.synapses[s as usize];
                let slot = ((t + u64::from(syn.delay)) % ring_len) as usize;
                self.ring[slot][syn.post as usize] += syn.weight;
            }
        }

        self.apply_stdp(t);
        self.time += 1;
        Ok(&self.fired)
    }

    /// Nearest-spike pairing for every neuron that fired at `t`: as
    /// postsynaptic partner against each input's latest spike, and as
    /// presynaptic partner against each target's latest spike.
    fn apply_stdp(&mut self, t: Millis) {
        let arrival = self.cfg.stdp_timing == StdpTiming::Arrival;
        let t = t as i64;
        for &n in &self.fired {
            for &s in &self.incoming[n] {
                let syn = &self.synapses[s as usize];
                if !syn.plastic {
                    continue;
                }
                let Some(pre_spike) = self.states[syn.pre as usize].last_spike else {
                    continue;
                };
                let mut dt = t - pre_spike as i64;
                if arrival {
                    dt -= i64::from(syn.delay);
                    if dt < 0 {
                        continue;
                    }
                }
                let kernel = match syn.rule {
                    NeuronKind::Excitatory => &self.kernels[0],
                    NeuronKind::Inhibitory => &self.kernels[1],
                };
                let w = kernel.apply(syn.weight, kernel.delta(dt));
                self.synapses[s as usize].weight = w;
            }
            for &s in &self.outgoing[n] {
                let syn = &self.synapses[s as usize];
                if !syn.plastic {
                    continue;
                }
                let Some(post_spike) = self.states[syn.post as usize].last_spike else {
                    continue;
                };
                let mut dt = post_spike as i64 - t;
                if arrival {
                    dt -= i64::from(syn.delay);
                }
                let kernel = match syn.rule {
                    NeuronKind::Excitatory => &self.kernels[0],
                    NeuronKind::Inhibitory => &self.kernels[1],
                };
                let w = kernel.apply(syn.weight, kernel.delta(dt));
                self.synapses[s as usize].weight = w;
            }
        }
    }
}

fn check_inputs(n_inputs: usize) -> Result<()> {
    if !(3..=5).contains(&n_inputs) {
        return Err(Error::InvalidParameter(format!(
            "minimal networks take 3 to 5 input neurons, got {n_inputs}"
        )));
    }
    Ok(())
}

/// Uniform sample from the open interval (0, max).
fn open_uniform(rng: &mut impl Rng, max: f64) -> f64 {
    loop {
        let x: f64 = rng.random_range(0.0..max);
        if x > 0.0 {
            return x;
        }
    }
}
