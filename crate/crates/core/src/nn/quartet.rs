use serde::{Deserialize, Serialize};

use super::{build_discriminator, build_generator, init_parameters, ArchConfig, Network};
use crate::autodiff::Scalar;
use crate::error::Result;

/// Position of a network inside the quartet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GAb,
    GBa,
    GAbPrime,
    GBaPrime,
    DA,
    DB,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::GAb,
        Role::GBa,
        Role::GAbPrime,
        Role::GBaPrime,
        Role::DA,
        Role::DB,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Role::GAb => "g_ab",
            Role::GBa => "g_ba",
            Role::GAbPrime => "g_ab_prime",
            Role::GBaPrime => "g_ba_prime",
            Role::DA => "d_a",
            Role::DB => "d_b",
        }
    }

    pub fn from_key(key: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.key() == key)
    }

    pub fn is_generator(self) -> bool {
        !matches!(self, Role::DA | Role::DB)
    }

    fn seed_salt(self) -> u64 {
        self as u64 + 1
    }
}

/// The forward generators, their independently parameterized return
/// generators, and the two discriminators.
///
/// In tied mode the primed generators are not stored: `G'_AB` resolves to
/// `G_AB` and `G'_BA` to `G_BA`, which is the two-generator CycleGAN.
#[derive(Clone, Debug)]
pub struct GeneratorQuartet<T: Scalar> {
    pub g_ab: Network<T>,
    pub g_ba: Network<T>,
    g_ab_prime: Option<Network<T>>,
    g_ba_prime: Option<Network<T>>,
    pub d_a: Network<T>,
    pub d_b: Network<T>,
}

/// Per-network init seed derived from the run seed.
pub fn role_seed(seed: u64, role: Role) -> u64 {
    seed ^ role.seed_salt().wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<T: Scalar> GeneratorQuartet<T> {
    /// Build and initialize every network from `seed`.
    pub fn new(arch: &ArchConfig, tied: bool, seed: u64) -> Result<Self> {
        let gen = |role: Role| -> Result<Network<T>> {
            let mut g = build_generator(role.key(), arch)?;
            init_parameters(&mut g, role_seed(seed, role));
            Ok(g)
        };
        let g_ab = gen(Role::GAb)?;
        let g_ba = gen(Role::GBa)?;
        let (g_ab_prime, g_ba_prime) = if tied {
            (None, None)
        } else {
            (Some(gen(Role::GAbPrime)?), Some(gen(Role::GBaPrime)?))
        };
        let disc = |role: Role| -> Result<Network<T>> {
            let mut d = build_discriminator(role.key(), arch)?;
            init_parameters(&mut d, role_seed(seed, role));
            Ok(d)
        };
        Ok(GeneratorQuartet {
            g_ab,
            g_ba,
            g_ab_prime,
            g_ba_prime,
            d_a: disc(Role::DA)?,
            d_b: disc(Role::DB)?,
        })
    }

    /// Assemble from explicit networks; `None` primes mean tied mode.
    pub fn from_parts(
        g_ab: Network<T>,
        g_ba: Network<T>,
        primes: Option<(Network<T>, Network<T>)>,
        d_a: Network<T>,
        d_b: Network<T>,
    ) -> Self {
        let (g_ab_prime, g_ba_prime) = match primes {
            Some((p, q)) => (Some(p), Some(q)),
            None => (None, None),
        };
        GeneratorQuartet {
            g_ab,
            g_ba,
            g_ab_prime,
            g_ba_prime,
            d_a,
            d_b,
        }
    }

    pub fn tied(&self) -> bool {
        self.g_ab_prime.is_none()
    }

    pub fn g_ab_prime(&self) -> &Network<T> {
        self.g_ab_prime.as_ref().unwrap_or(&self.g_ab)
    }

    pub fn g_ba_prime(&self) -> &Network<T> {
        self.g_ba_prime.as_ref().unwrap_or(&self.g_ba)
    }

    pub fn get(&self, role: Role) -> &Network<T> {
        match role {
            Role::GAb => &self.g_ab,
            Role::GBa => &self.g_ba,
            Role::GAbPrime => self.g_ab_prime(),
            Role::GBaPrime => self.g_ba_prime(),
            Role::DA => &self.d_a,
            Role::DB => &self.d_b,
        }
    }

    /// Mutable access; in tied mode a primed role yields its unprimed alias.
    pub fn get_mut(&mut self, role: Role) -> &mut Network<T> {
        match role {
            Role::GAb => &mut self.g_ab,
            Role::GBa => &mut self.g_ba,
            Role::GAbPrime => self.g_ab_prime.as_mut().unwrap_or(&mut self.g_ab),
            Role::GBaPrime => self.g_ba_prime.as_mut().unwrap_or(&mut self.g_ba),
            Role::DA => &mut self.d_a,
            Role::DB => &mut self.d_b,
        }
    }

    /// Generators with their own parameter storage (two when tied, else four).
    pub fn generator_roles(&self) -> Vec<Role> {
        if self.tied() {
            vec![Role::GAb, Role::GBa]
        } else {
            vec![Role::GAb, Role::GBa, Role::GAbPrime, Role::GBaPrime]
        }
    }

    pub fn discriminator_roles(&self) -> [Role; 2] {
        [Role::DA, Role::DB]
    }

    /// Every network with its own storage.
    pub fn owned_roles(&self) -> Vec<Role> {
        let mut roles = self.generator_roles();
        roles.extend(self.discriminator_roles());
        roles
    }

    pub fn zero_grad(&self) {
        for role in self.owned_roles() {
            self.get(role).zero_grad();
        }
    }
}
