use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

use super::{Distribution, IngestError, StopFlag, Throttle, TrafficSourceConfig};
use crate::ip::{IpAddr32, IpPair};

/// Seeded pseudo-random pair generator. Identical seeds give identical
/// sequences on every platform.
pub struct SyntheticStream {
    rng: ChaCha8Rng,
    sampler: Sampler,
    throttle: Option<Throttle>,
    remaining: Option<u64>,
    stop: StopFlag,
}

enum Sampler {
    Uniform,
    Zipf(Zipf<f64>),
}

/// Odd multiplier: a bijection on u32 that scatters Zipf ranks over the address space.
const SCATTER: u32 = 0x9E37_79B1;

impl SyntheticStream {
    pub fn new(cfg: &TrafficSourceConfig, stop: StopFlag) -> Result<Self, IngestError> {
        cfg.validate()?;
        let sampler = match cfg.distribution {
            Distribution::Uniform32 => Sampler::Uniform,
            Distribution::Zipf { exponent, universe } => Sampler::Zipf(
                Zipf::new(universe as f64, exponent)
                    .map_err(|e| IngestError::InvalidConfig(e.to_string()))?,
            ),
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            sampler,
            throttle: Throttle::new(cfg.rate),
            remaining: cfg.total,
            stop,
        })
    }

    fn draw(&mut self) -> IpAddr32 {
        match &self.sampler {
            Sampler::Uniform => IpAddr32(self.rng.next_u32()),
            Sampler::Zipf(z) => {
                let rank = self.rng.sample(z) as u64;
                IpAddr32(((rank - 1) as u32).wrapping_mul(SCATTER))
            }
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = IpPair;

    fn next(&mut self) -> Option<IpPair> {
        if let Some(r) = self.remaining.as_mut() {
            if *r == 0 {
                return None;
            }
            *r -= 1;
        }
        if self.stop.is_stopped() {
            return None;
        }
        if let Some(t) = self.throttle.as_mut() {
            t.take();
        }
        let src = self.draw();
        let dst = self.draw();
        Some(IpPair { src, dst })
    }
}
