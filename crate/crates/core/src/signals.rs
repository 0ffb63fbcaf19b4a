//! Pilot codes, shifted pilot vectors, training matrices and received
//! snapshot synthesis.
//!
//! Symbols are indexed `n = −L+1 … T−1`; the `L−1` precursors are the cyclic
//! tail of the same code.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{c, CMatrix, CVector, C64};
use crate::scenario::{complex_gaussian_vector, ChannelRealization};

/// Period of the degree-6 code family.
pub const KASAMI_PERIOD: usize = 63;
/// Codes in the small Kasami set of period 63.
pub const KASAMI_SET_SIZE: usize = 8;

/// Binary m-sequence of `x^6 + x + 1`, register seeded with `000001`.
fn m_sequence() -> Vec<u8> {
    let mut reg = [0u8, 0, 0, 0, 0, 1];
    let mut out = Vec::with_capacity(KASAMI_PERIOD);
    for _ in 0..KASAMI_PERIOD {
        out.push(reg[0]);
        let next = reg[0] ^ reg[1];
        reg.rotate_left(1);
        reg[5] = next;
    }
    out
}

/// The small Kasami set of period 63 as bits. Code 0 is the m-sequence,
/// code `j+1` adds the decimated sequence cyclically shifted by `j`.
pub fn kasami_small_set() -> Vec<Vec<u8>> {
    let a = m_sequence();
    let q = 9;
    // The phase-0 decimation of this register seed is identically zero, so
    // take the first phase that yields the nonzero period-7 sequence.
    let b: Vec<u8> = (0..KASAMI_PERIOD)
        .map(|r| (0..KASAMI_PERIOD).map(|i| a[(i * q + r) % KASAMI_PERIOD]).collect::<Vec<u8>>())
        .find(|b| b.iter().any(|&x| x == 1))
        .expect("decimation of an m-sequence is nonzero for some phase");
    let mut set = vec![a.clone()];
    for shift in 0..KASAMI_SET_SIZE - 1 {
        set.push(
            (0..KASAMI_PERIOD)
                .map(|i| a[i] ^ b[(i + shift) % KASAMI_PERIOD])
                .collect(),
        );
    }
    set
}

/// BPSK pilot symbols for each user over `n = −L+1 … T−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSet {
    symbols: Vec<Vec<C64>>,
    len: usize,
    memory: usize,
}

impl PilotSet {
    /// Truncated Kasami codes of length `len` for `n_users` users, assigned
    /// in index order.
    pub fn kasami(n_users: usize, len: usize, memory: usize) -> Result<Self> {
        if n_users > KASAMI_SET_SIZE {
            return Err(Error::Pilots(format!(
                "{n_users} users requested but only {KASAMI_SET_SIZE} period-63 Kasami codes exist"
            )));
        }
        if len == 0 || len > KASAMI_PERIOD {
            return Err(Error::Pilots(format!("pilot length {len} outside 1..={KASAMI_PERIOD}")));
        }
        if memory == 0 {
            return Err(Error::Pilots("channel memory must be positive".into()));
        }
        let codes = kasami_small_set();
        let symbols = codes
            .iter()
            .take(n_users)
            .map(|bits| {
                let p = KASAMI_PERIOD as isize;
                (-(memory as isize) + 1..len as isize)
                    .map(|n| {
                        let bit = bits[n.rem_euclid(p) as usize];
                        c(if bit == 0 { 1.0 } else { -1.0 }, 0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            symbols,
            len,
            memory,
        })
    }

    /// Builds a set from explicit sequences over `n = −L+1 … T−1`.
    pub fn from_sequences(symbols: Vec<Vec<C64>>, len: usize, memory: usize) -> Result<Self> {
        if symbols.iter().any(|s| s.len() != len + memory - 1) {
            return Err(Error::Dimension(format!(
                "each sequence must hold T+L-1 = {} symbols",
                len + memory - 1
            )));
        }
        Ok(Self {
            symbols,
            len,
            memory,
        })
    }

    pub fn n_users(&self) -> usize {
        self.symbols.len()
    }

    /// Pilot length `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// `x_n^(k)` for `−L+1 ≤ n < T`.
    pub fn symbol(&self, k: usize, n: isize) -> C64 {
        self.symbols[k][(n + self.memory as isize - 1) as usize]
    }

    pub fn sequence(&self, k: usize) -> &[C64] {
        &self.symbols[k]
    }

    /// Writes `user,chip,value` rows; chip indices start at `−L+1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "chip", "value"])?;
        for k in 0..self.n_users() {
            for n in -(self.memory as isize) + 1..self.len as isize {
                let v = self.symbol(k, n);
                w.write_record([k.to_string(), n.to_string(), format!("{}", v.re)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `x_l^(k)` with entries `conj(x_{n−l})`, `n = 0 … len−1`.
pub fn shifted_pilot_len(pilots: &PilotSet, k: usize, l: usize, len: usize) -> CVector {
    CVector::from_fn(len, |n, _| pilots.symbol(k, n as isize - l as isize).conj())
}

pub fn shifted_pilot(pilots: &PilotSet, k: usize, l: usize) -> CVector {
    shifted_pilot_len(pilots, k, l, pilots.len())
}

/// Convolution matrix `X[t, k·L + l] = x^(k)_{t−l}` over the listed users.
pub fn training_matrix(pilots: &PilotSet, users: &[usize], t_fast: usize) -> Result<CMatrix> {
    if t_fast > pilots.len() {
        return Err(Error::Dimension(format!(
            "T_fast={t_fast} exceeds pilot length {}",
            pilots.len()
        )));
    }
    let l_mem = pilots.memory();
    Ok(CMatrix::from_fn(t_fast, users.len() * l_mem, |t, col| {
        let (k, l) = (users[col / l_mem], col % l_mem);
        pilots.symbol(k, t as isize - l as isize)
    }))
}

/// What a user sends during a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolMode {
    /// Its pilot code (row `k` of the pilot set).
    Pilot,
    /// i.i.d. unit-power QPSK data.
    Data,
}

/// Unit-power QPSK symbols for `n = −L+1 … T−1`.
pub fn random_qpsk<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<C64> {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re = if rng.random::<bool>() { a } else { -a };
            let im = if rng.random::<bool>() { a } else { -a };
            c(re, im)
        })
        .collect()
}

/// `Y = Σ_k Σ_l h_l^(k) x_l^(k)H + noise` for `T = pilots.len()` samples.
/// User `k` of the realization uses pilot row `k` when in pilot mode.
pub fn synthesize_snapshot<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    pilots: &PilotSet,
    modes: &[SymbolMode],
    noise_power: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    let t = pilots.len();
    let mem = pilots.memory();
    let k_users = realization.users();
    if modes.len() != k_users {
        return Err(Error::Dimension(format!(
            "{} symbol modes for {k_users} users",
            modes.len()
        )));
    }
    if realization.delays() > mem {
        return Err(Error::Dimension("channel memory exceeds pilot precursors".into()));
    }
    let n = realization.taps.first().and_then(|t| t.first()).map_or(0, |h| h.len());
    let mut y = CMatrix::zeros(n, t);
    for k in 0..k_users {
        let data;
        let seq: &[C64] = match modes[k] {
            SymbolMode::Pilot => {
                if k >= pilots.n_users() {
                    return Err(Error::Pilots(format!("no pilot for user index {k}")));
                }
                pilots.sequence(k)
            }
            SymbolMode::Data => {
                data = random_qpsk(rng, t + mem - 1);
                &data
            }
        };
        for (l, h) in realization.taps[k].iter().enumerate() {
            if !realization.active[k][l] {
                continue;
            }
            // Column n receives h · x_{n−l}; x_{n−l} sits at seq[n − l + L − 1].
            for col in 0..t {
                let x = seq[col + mem - 1 - l];
                let mut yc = y.column_mut(col);
                yc.axpy(x, h, c(1.0, 0.0));
            }
        }
    }
    if noise_power > 0.0 {
        let noise = complex_gaussian_vector(rng, n * t, noise_power);
        y += CMatrix::from_column_slice(n, t, noise.as_slice());
    }
    Ok(y)
}
