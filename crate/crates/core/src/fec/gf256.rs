//! Arithmetic over GF(2^8) with reduction polynomial x^8 + x^4 + x^3 + x^2 + 1.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign};

use super::FecError;

/// Reduction polynomial (x^8 + x^4 + x^3 + x^2 + 1).
pub const REDUCTION_POLY: u16 = 0x11D;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
}

const fn build_tables() -> Tables {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= REDUCTION_POLY;
        }
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    Tables { exp, log }
}

static TABLES: Tables = build_tables();

/// An element of GF(256).
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    /// The primitive element used to build the field tables.
    pub const GENERATOR: Gf256 = Gf256(2);

    /// `GENERATOR^power`; the exponent is taken mod 255.
    pub fn alpha_pow(power: usize) -> Gf256 {
        Gf256(TABLES.exp[power % 255])
    }

    /// Discrete log base `GENERATOR`, `None` for zero.
    pub fn log(self) -> Option<usize> {
        (self.0 != 0).then(|| TABLES.log[self.0 as usize] as usize)
    }

    pub fn mul(self, rhs: Gf256) -> Gf256 {
        if self.0 == 0 || rhs.0 == 0 {
            return Gf256::ZERO;
        }
        let l = TABLES.log[self.0 as usize] as usize + TABLES.log[rhs.0 as usize] as usize;
        Gf256(TABLES.exp[l])
    }

    pub fn inv(self) -> Result<Gf256, FecError> {
        if self.0 == 0 {
            return Err(FecError::ZeroInverse);
        }
        Ok(Gf256(TABLES.exp[255 - TABLES.log[self.0 as usize] as usize]))
    }

    pub fn pow(self, e: usize) -> Gf256 {
        if e == 0 {
            return Gf256::ONE;
        }
        match self.log() {
            None => Gf256::ZERO,
            Some(l) => Gf256(TABLES.exp[(l * e) % 255]),
        }
    }
}

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf256({:#04x})", self.0)
    }
}

impl From<u8> for Gf256 {
    fn from(v: u8) -> Self {
        Gf256(v)
    }
}

impl Add for Gf256 {
    type Output = Gf256;
    fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf256 {
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    fn mul(self, rhs: Gf256) -> Gf256 {
        Gf256::mul(self, rhs)
    }
}

impl MulAssign for Gf256 {
    fn mul_assign(&mut self, rhs: Gf256) {
        *self = Gf256::mul(*self, rhs);
    }
}

/// Product of two field elements.
pub fn gf_mul(a: Gf256, b: Gf256) -> Gf256 {
    a * b
}

/// Multiplicative inverse; fails on zero.
pub fn gf_inv(a: Gf256) -> Result<Gf256, FecError> {
    a.inv()
}
