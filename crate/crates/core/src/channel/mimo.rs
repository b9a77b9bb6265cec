use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::taps::{TapProfile, TapSpec};
use super::{ChannelConfig, ChannelError};
use crate::block::{Block, ObservationBlock, SymbolBlock};

/// A flat `N x K` channel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MimoChannelSpec {
    h: Block,
}

impl MimoChannelSpec {
    pub fn new(h: Block) -> Result<Self, ChannelError> {
        if h.rows() == 0 || h.cols() == 0 {
            return Err(ChannelError::EmptyProfile);
        }
        if let Some(bad) = h.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(ChannelError::NonFinite(*bad));
        }
        Ok(MimoChannelSpec { h })
    }

    pub fn antennas(&self) -> usize {
        self.h.rows()
    }

    pub fn users(&self) -> usize {
        self.h.cols()
    }

    pub fn matrix(&self) -> &Block {
        &self.h
    }
}

/// `(H)_{n,k} = e^{-|n-k|}`.
pub fn exp_decay_matrix(antennas: usize, users: usize) -> MimoChannelSpec {
    let mut h = Block::zeros(antennas, users);
    for n in 0..antennas {
        for k in 0..users {
            h.set(n, k, (-(n.abs_diff(k) as f64)).exp());
        }
    }
    MimoChannelSpec { h }
}

/// Sends a `K x B` block through `y = H s + w`, column by column.
pub fn mimo_transmit<R: Rng + ?Sized>(
    symbols: &SymbolBlock,
    spec: &MimoChannelSpec,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<ObservationBlock, ChannelError> {
    if symbols.rows() != spec.users() {
        return Err(ChannelError::DimensionMismatch {
            expected: spec.users(),
            actual: symbols.rows(),
        });
    }
    let (n_ant, len) = (spec.antennas(), symbols.cols());
    let mut y = Block::zeros(n_ant, len);
    for i in 0..len {
        for n in 0..n_ant {
            let clean: f64 = (0..spec.users())
                .map(|k| spec.h.get(n, k) * symbols.get(k, i))
                .sum();
            let w: f64 = rng.sample(StandardNormal);
            y.set(n, i, cfg.nonlinearity.apply(clean + cfg.sigma * w));
        }
    }
    Ok(y)
}

/// How the MIMO matrix evolves over blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum MimoProfile {
    /// The same matrix in every block.
    Static(MimoChannelSpec),
    /// Column `k` of the base matrix is scaled by `0.8 + 0.2 cos(2πj/P_k + ψ_k)`
    /// for users with a spec; other users stay fixed.
    Modulated {
        base: MimoChannelSpec,
        users: Vec<Option<TapSpec>>,
    },
    /// One trace column per matrix entry, row-major over `(n, k)`.
    Trace {
        antennas: usize,
        users: usize,
        profile: TapProfile,
    },
}

impl MimoProfile {
    /// Exponential-decay matrix with every user's column oscillating.
    pub fn modulated_all(antennas: usize, users: usize, test_phase: bool) -> Self {
        let specs = (0..users).map(|k| Some(user_spec(k, test_phase))).collect();
        MimoProfile::Modulated {
            base: exp_decay_matrix(antennas, users),
            users: specs,
        }
    }

    /// Exponential-decay matrix where only `mobile` (0-based) moves.
    pub fn single_mobile(antennas: usize, users: usize, mobile: usize, test_phase: bool) -> Self {
        let specs = (0..users)
            .map(|k| (k == mobile).then(|| user_spec(k, test_phase)))
            .collect();
        MimoProfile::Modulated {
            base: exp_decay_matrix(antennas, users),
            users: specs,
        }
    }

    pub fn from_trace(antennas: usize, users: usize, profile: TapProfile) -> Result<Self, ChannelError> {
        if profile.memory() != antennas * users {
            return Err(ChannelError::DimensionMismatch {
                expected: antennas * users,
                actual: profile.memory(),
            });
        }
        Ok(MimoProfile::Trace {
            antennas,
            users,
            profile,
        })
    }

    pub fn antennas(&self) -> usize {
        match self {
            MimoProfile::Static(s) | MimoProfile::Modulated { base: s, .. } => s.antennas(),
            MimoProfile::Trace { antennas, .. } => *antennas,
        }
    }

    pub fn users(&self) -> usize {
        match self {
            MimoProfile::Static(s) | MimoProfile::Modulated { base: s, .. } => s.users(),
            MimoProfile::Trace { users, .. } => *users,
        }
    }

    /// Channel matrix of block `j`.
    pub fn at(&self, j: usize) -> MimoChannelSpec {
        match self {
            MimoProfile::Static(s) => s.clone(),
            MimoProfile::Modulated { base, users } => {
                let mut h = base.h.clone();
                for (k, spec) in users.iter().enumerate() {
                    if let Some(spec) = spec {
                        let f = spec.value(j);
                        for n in 0..h.rows() {
                            h.set(n, k, h.get(n, k) * f);
                        }
                    }
                }
                MimoChannelSpec { h }
            }
            MimoProfile::Trace {
                antennas,
                users,
                profile,
            } => {
                let taps = profile.block_taps(j);
                MimoChannelSpec {
                    h: Block::from_vec(*antennas, *users, taps),
                }
            }
        }
    }
}

const USER_PERIODS_TRAIN: [f64; 8] = [23.0, 17.0, 29.0, 13.0, 19.0, 31.0, 11.0, 37.0];
const USER_PERIODS_TEST: [f64; 8] = [19.0, 11.0, 23.0, 9.0, 13.0, 29.0, 7.0, 17.0];

fn user_spec(k: usize, test_phase: bool) -> TapSpec {
    let periods = if test_phase {
        &USER_PERIODS_TEST
    } else {
        &USER_PERIODS_TRAIN
    };
    TapSpec {
        amplitude: 1.0,
        period: periods[k % periods.len()],
        phase: if test_phase { PI / 4.0 } else { 0.0 } + 0.5 * k as f64,
    }
}
