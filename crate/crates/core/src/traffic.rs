//! Seeded randomness, demand arrivals and entanglement-generation successes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};

/// What a stream is used for. Each purpose maps to its own ChaCha stream id,
/// so adding a session never perturbs another session's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Demand arrivals and generation successes of one session.
    Session(usize),
    /// Tie-breaking inside the max-weight scheduler.
    Scheduler,
    /// Random session sampling.
    SessionSampling,
    /// Random node-tier assignment.
    NodeTiers,
    /// Random scenario generation (e.g. resource walks).
    Scenario,
}

impl Purpose {
    fn tag(self) -> u64 {
        const KIND_SHIFT: u32 = 56;
        match self {
            Purpose::Session(s) => s as u64,
            Purpose::Scheduler => 1 << KIND_SHIFT,
            Purpose::SessionSampling => 2 << KIND_SHIFT,
            Purpose::NodeTiers => 3 << KIND_SHIFT,
            Purpose::Scenario => 4 << KIND_SHIFT,
        }
    }
}

/// A deterministic random stream identified by `(master seed, run index, purpose)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, run: u64, purpose: Purpose) -> Self {
        let (mut a, mut b) = (master_seed, !run);
        let mut state = splitmix64(&mut a) ^ splitmix64(&mut b).rotate_left(29);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(purpose.tag());
        Self { rng }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One stream per session for a single run.
#[derive(Debug, Clone)]
pub struct SessionStreams {
    streams: Vec<RngStream>,
}

impl SessionStreams {
    pub fn new(master_seed: u64, run: u64, sessions: usize) -> Self {
        Self {
            streams: (0..sessions)
                .map(|s| RngStream::new(master_seed, run, Purpose::Session(s)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn get_mut(&mut self, s: usize) -> &mut RngStream {
        &mut self.streams[s]
    }
}

/// Demands submitted by every session in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DemandBatch(pub Vec<u64>);

/// `floor(rate) + Bernoulli(rate - floor(rate))`.
pub fn draw_demand<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let whole = rate.floor();
    let frac = rate - whole;
    let extra = frac > 0.0 && rng.random::<f64>() < frac;
    whole as u64 + u64::from(extra)
}

pub fn draw_demands(rates: &[f64], streams: &mut SessionStreams) -> Result<DemandBatch> {
    if rates.len() != streams.len() {
        return Err(Error::Dimension {
            expected: streams.len(),
            actual: rates.len(),
        });
    }
    if let Some((session, &rate)) = rates.iter().enumerate().find(|(_, r)| !(**r >= 0.0)) {
        return Err(Error::NegativeRate { session, rate });
    }
    Ok(DemandBatch(
        rates
            .iter()
            .enumerate()
            .map(|(s, &rate)| draw_demand(rate, streams.get_mut(s)))
            .collect(),
    ))
}

/// Number of successful generations out of `trials` independent attempts.
pub fn draw_successes<R: Rng + ?Sized>(trials: u32, p_gen: f64, rng: &mut R) -> u64 {
    match trials {
        0 => 0,
        1 => u64::from(rng.random::<f64>() < p_gen),
        n => Binomial::new(u64::from(n), p_gen)
            .expect("p_gen validated to lie in [0, 1]")
            .sample(rng),
    }
}
