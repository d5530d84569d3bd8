//! Named random streams.
//!
//! Every stochastic component of a run draws from its own ChaCha stream keyed
//! by `(seed, stream id)`, so adding draws in one component never shifts the
//! randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Articles,
    Users,
    Bootstrap,
    Arrivals,
    Clicks,
    /// Model initialisation and shuffling for the n-th training (0 = bootstrap model).
    Training(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Articles => 1,
            Stream::Users => 2,
            Stream::Bootstrap => 3,
            Stream::Arrivals => 4,
            Stream::Clicks => 5,
            Stream::Training(n) => 1024 + n as u64,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
