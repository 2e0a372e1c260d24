//! Deterministic synthetic traffic.
//!
//! Flow sizes come from a bounded Pareto law (many mice, a few elephants).
//! A bounded pool of flows is active at any time and each packet is taken
//! from a randomly chosen active flow, so packets of different flows
//! interleave. Everything is driven by one seeded ChaCha stream.

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::flow::{FlowKey, PacketRecord, Protocol};
use crate::hash::mix64;

pub const MAX_FLOWS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SizeDistribution {
    /// Payload bytes per flow, `floor` of a Pareto(shape, scale) draw truncated at `max`.
    BoundedPareto { shape: f64, scale: f64, max: f64 },
    Fixed(u64),
}

impl SizeDistribution {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let SizeDistribution::BoundedPareto { shape, scale, max } = *self {
            if !shape.is_finite() || shape <= 0.0 {
                return Err(ConfigError::Distribution("shape must be positive"));
            }
            if !scale.is_finite() || scale <= 0.0 {
                return Err(ConfigError::Distribution("scale must be positive"));
            }
            if !max.is_finite() || max <= scale {
                return Err(ConfigError::Distribution("max must exceed scale"));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            SizeDistribution::Fixed(n) => n,
            SizeDistribution::BoundedPareto { shape, scale, max } => {
                let u: f64 = rng.gen();
                let tail = libm::pow(scale / max, shape);
                let x = scale / libm::pow(1.0 - u * (1.0 - tail), 1.0 / shape);
                libm::floor(x.min(max)) as u64
            }
        }
    }

    /// Probability that a draw is below `x` bytes.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            SizeDistribution::Fixed(n) => {
                if (n as f64) < x {
                    1.0
                } else {
                    0.0
                }
            }
            SizeDistribution::BoundedPareto { shape, scale, max } => {
                // floor(X) < x  <=>  X < ceil(x)
                let c = libm::ceil(x);
                if c <= scale {
                    0.0
                } else if c > max {
                    1.0
                } else {
                    (1.0 - libm::pow(scale / c, shape)) / (1.0 - libm::pow(scale / max, shape))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PayloadEntropy {
    Random,
    /// This fraction of flows alternates long zero runs with random runs.
    MixedZeroRuns { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub flow_count: usize,
    pub size: SizeDistribution,
    pub entropy: PayloadEntropy,
    pub seed: u64,
    /// Stop starting new flows once this many payload bytes are scheduled.
    pub byte_budget: Option<u64>,
    pub mss: usize,
    pub tcp_fraction: f64,
    /// Flows transmitting at the same time.
    pub concurrency: usize,
    pub packet_gap_us: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            flow_count: 1400,
            size: SizeDistribution::BoundedPareto { shape: 0.45, scale: 250.0, max: 10_000_000.0 },
            entropy: PayloadEntropy::MixedZeroRuns { fraction: 0.1 },
            seed: 1,
            byte_budget: None,
            mss: 1460,
            tcp_fraction: 0.81,
            concurrency: 64,
            packet_gap_us: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.flow_count == 0 || self.flow_count > MAX_FLOWS {
            return Err(ConfigError::FlowCount(self.flow_count));
        }
        self.size.validate()?;
        if let PayloadEntropy::MixedZeroRuns { fraction } = self.entropy {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(ConfigError::Distribution("zero-run fraction outside [0, 1]"));
            }
        }
        if self.mss == 0 || self.concurrency == 0 {
            return Err(ConfigError::Distribution("mss and concurrency must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tcp_fraction) {
            return Err(ConfigError::Distribution("tcp fraction outside [0, 1]"));
        }
        Ok(())
    }
}

const DPORTS: [u16; 8] = [80, 443, 53, 25, 22, 8080, 993, 3478];
const RUN_MIN: usize = 64;
const RUN_MAX: usize = 512;

struct ActiveFlow {
    key: FlowKey,
    remaining: u64,
    rng: ChaCha8Rng,
    zero_runs: bool,
    in_zero: bool,
    run_left: usize,
}

impl ActiveFlow {
    fn fill(&mut self, out: &mut [u8]) {
        if !self.zero_runs {
            self.rng.fill_bytes(out);
            return;
        }
        let mut at = 0;
        while at < out.len() {
            if self.run_left == 0 {
                self.in_zero = !self.in_zero;
                self.run_left = self.rng.gen_range(RUN_MIN..=RUN_MAX);
            }
            let n = self.run_left.min(out.len() - at);
            if self.in_zero {
                out[at..at + n].fill(0);
            } else {
                self.rng.fill_bytes(&mut out[at..at + n]);
            }
            at += n;
            self.run_left -= n;
        }
    }
}

/// Packet iterator for one [`SynthConfig`].
pub struct SynthStream {
    cfg: SynthConfig,
    rng: ChaCha8Rng,
    active: Vec<ActiveFlow>,
    next_flow: usize,
    scheduled: u64,
    packets: u64,
}

impl SynthStream {
    pub fn new(cfg: SynthConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            active: Vec::new(),
            next_flow: 0,
            scheduled: 0,
            packets: 0,
        };
        s.admit();
        Ok(s)
    }

    fn admit(&mut self) {
        while self.active.len() < self.cfg.concurrency && self.next_flow < self.cfg.flow_count {
            if self.cfg.byte_budget.is_some_and(|b| self.scheduled >= b) {
                return;
            }
            let i = self.next_flow as u32;
            self.next_flow += 1;
            let size = self.cfg.size.sample(&mut self.rng);
            let protocol = if self.rng.gen_bool(self.cfg.tcp_fraction) { Protocol::Tcp } else { Protocol::Udp };
            let dst: [u8; 4] = [172, 16 + self.rng.gen_range(0..16), self.rng.gen(), self.rng.gen()];
            let key = FlowKey::v4(
                [10, (i >> 16) as u8, (i >> 8) as u8, i as u8],
                dst,
                self.rng.gen_range(1024..=u16::MAX),
                DPORTS[self.rng.gen_range(0..DPORTS.len())],
                protocol,
            );
            let zero_runs = match self.cfg.entropy {
                PayloadEntropy::Random => false,
                PayloadEntropy::MixedZeroRuns { fraction } => self.rng.gen_bool(fraction),
            };
            let flow_seed = mix64(self.cfg.seed ^ mix64(i as u64 + 1));
            self.scheduled += size;
            self.active.push(ActiveFlow {
                key,
                remaining: size,
                rng: ChaCha8Rng::seed_from_u64(flow_seed),
                zero_runs,
                in_zero: true,
                run_left: 0,
            });
        }
    }

    /// Flows started so far.
    pub fn flows_started(&self) -> usize {
        self.next_flow
    }
}

impl Iterator for SynthStream {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        if self.active.is_empty() {
            return None;
        }
        let idx = self.rng.gen_range(0..self.active.len());
        let mss = self.cfg.mss as u64;
        let f = &mut self.active[idx];
        let n = f.remaining.min(mss) as usize;
        let mut payload = alloc::vec![0u8; n];
        f.fill(&mut payload);
        f.remaining -= n as u64;
        let key = f.key;
        if f.remaining == 0 {
            self.active.swap_remove(idx);
            self.admit();
        }
        let ts = self.packets * self.cfg.packet_gap_us;
        self.packets += 1;
        Some(PacketRecord { flow: key, payload, timestamp_us: ts })
    }
}

pub fn synth_generate(cfg: SynthConfig) -> Result<SynthStream, ConfigError> {
    SynthStream::new(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn corpus(cfg: SynthConfig) -> Vec<PacketRecord> {
        synth_generate(cfg).unwrap().collect()
    }

    fn per_flow(pkts: &[PacketRecord]) -> HashMap<FlowKey, u64> {
        let mut m = HashMap::new();
        for p in pkts {
            *m.entry(p.flow).or_insert(0) += p.payload.len() as u64;
        }
        m
    }

    #[test]
    fn single_fixed_flow() {
        let pkts = corpus(SynthConfig { flow_count: 1, size: SizeDistribution::Fixed(1000), ..Default::default() });
        let m = per_flow(&pkts);
        assert_eq!(m.len(), 1);
        assert_eq!(m.values().sum::<u64>(), 1000);
    }

    #[test]
    fn zero_size_flow_emits_one_empty_packet() {
        let pkts = corpus(SynthConfig { flow_count: 3, size: SizeDistribution::Fixed(0), ..Default::default() });
        assert_eq!(pkts.len(), 3);
        assert!(pkts.iter().all(|p| p.payload.is_empty()));
    }

    #[test]
    fn runs_are_identical() {
        let cfg = SynthConfig { flow_count: 200, ..Default::default() };
        assert_eq!(corpus(cfg), corpus(cfg));
        let other = corpus(SynthConfig { seed: 2, ..cfg });
        assert_ne!(corpus(cfg), other);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let bad = [
            SynthConfig { flow_count: 0, ..Default::default() },
            SynthConfig { size: SizeDistribution::BoundedPareto { shape: 0.0, scale: 1.0, max: 10.0 }, ..Default::default() },
            SynthConfig { size: SizeDistribution::BoundedPareto { shape: 1.0, scale: -1.0, max: 10.0 }, ..Default::default() },
            SynthConfig { size: SizeDistribution::BoundedPareto { shape: 1.0, scale: 10.0, max: 10.0 }, ..Default::default() },
        ];
        for c in bad {
            assert!(synth_generate(c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn default_sizes_meet_the_mice_anchor() {
        let cfg = SynthConfig::default();
        let analytic = cfg.size.cdf(2000.0);
        assert!(analytic >= 0.6, "{analytic}");
        let m = per_flow(&corpus(cfg));
        assert_eq!(m.len(), cfg.flow_count);
        let small = m.values().filter(|&&b| b < 2000).count() as f64 / m.len() as f64;
        assert!(small >= 0.6, "{small}");
    }

    #[test]
    fn sample_matches_cdf() {
        let d = SizeDistribution::BoundedPareto { shape: 0.45, scale: 250.0, max: 1e7 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let xs: Vec<u64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        for x in [300.0, 2000.0, 50_000.0, 1e6] {
            let emp = xs.iter().filter(|&&v| (v as f64) < x).count() as f64 / n as f64;
            assert!((emp - d.cdf(x)).abs() < 0.005, "{x}: {emp} vs {}", d.cdf(x));
        }
        assert!(xs.iter().all(|&v| (250..=10_000_000).contains(&v)));
    }

    #[test]
    fn flows_interleave_and_respect_mss() {
        let pkts = corpus(SynthConfig { flow_count: 50, size: SizeDistribution::Fixed(10_000), ..Default::default() });
        assert!(pkts.iter().all(|p| p.payload.len() <= 1460));
        let switches = pkts.windows(2).filter(|w| w[0].flow != w[1].flow).count();
        assert!(switches > pkts.len() / 2);
        assert!(pkts.windows(2).all(|w| w[0].timestamp_us < w[1].timestamp_us));
    }

    #[test]
    fn zero_run_flows_contain_long_zero_runs() {
        let cfg = SynthConfig {
            flow_count: 20,
            size: SizeDistribution::Fixed(20_000),
            entropy: PayloadEntropy::MixedZeroRuns { fraction: 1.0 },
            ..Default::default()
        };
        let pkts = corpus(cfg);
        let zeros: usize = pkts.iter().map(|p| p.payload.iter().filter(|&&b| b == 0).count()).sum();
        let total: usize = pkts.iter().map(|p| p.payload.len()).sum();
        let frac = zeros as f64 / total as f64;
        assert!((0.4..0.6).contains(&frac), "{frac}");
    }

    #[test]
    fn byte_budget_stops_new_flows() {
        let cfg = SynthConfig { byte_budget: Some(1_000_000), ..Default::default() };
        let mut s = synth_generate(cfg).unwrap();
        let total: u64 = s.by_ref().map(|p| p.payload.len() as u64).sum();
        assert!(total >= 1_000_000);
        assert!(s.flows_started() < cfg.flow_count);
    }
}
