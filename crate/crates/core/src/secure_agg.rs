//! Additive M-of-M secret sharing over `Z_{2^64}`.
//!
//! Each participant `i` encodes its secret vector `h_i` into the ring, splits
//! every element into `M` random parts (the rows of its share matrix `H_i`),
//! keeps row `i` and sends row `k` to participant `k`. Participant `j` sums
//! the rows it holds column-wise into `V_j` and sends only `V_j` to the
//! server, which recovers `Σ_i h_i = Σ_j V_j`.
//!
//! Reconstruction reveals the elementwise sum. For membership vectors this is
//! the per-news click count within the group, not just the set union.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vector of ring residues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingVector(pub Vec<u64>);

impl RingVector {
    pub fn zeros(width: usize) -> Self {
        Self(vec![0; width])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &RingVector) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a = a.wrapping_add(*b));
    }

    pub fn sub_assign(&mut self, other: &RingVector) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a = a.wrapping_sub(*b));
    }

    fn random<R: RngCore>(width: usize, rng: &mut R) -> Self {
        Self((0..width).map(|_| rng.next_u64()).collect())
    }

    /// Residues read as two's-complement integers.
    pub fn to_signed(&self) -> Vec<i64> {
        self.0.iter().map(|&r| r as i64).collect()
    }

    pub fn byte_len(&self) -> usize {
        self.0.len() * 8
    }
}

/// `round(x · 2^f)` as a two's-complement residue.
pub fn encode_fixed_point(x: f64, frac_bits: u32) -> Result<u64> {
    let bound = 2f64.powi(63 - frac_bits as i32);
    if !x.is_finite() || x.abs() >= bound {
        return Err(Error::Encoding { value: x, bits: 63 - frac_bits });
    }
    let scaled = (x * 2f64.powi(frac_bits as i32)).round();
    Ok(scaled as i64 as u64)
}

pub fn decode_fixed_point(r: u64, frac_bits: u32) -> f64 {
    r as i64 as f64 / 2f64.powi(frac_bits as i32)
}

/// A participant's private vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretVector {
    pub owner: usize,
    pub values: Vec<f64>,
    pub frac_bits: u32,
}

impl SecretVector {
    /// Encodes every element, enforcing `|x| < 2^(63−f) / M` so that the
    /// sum of `M` such secrets cannot wrap around.
    pub fn encode(&self, group_size: usize) -> Result<RingVector> {
        let bound = 2f64.powi(63 - self.frac_bits as i32) / group_size.max(1) as f64;
        self.values
            .iter()
            .map(|&x| {
                if !x.is_finite() || x.abs() >= bound {
                    Err(Error::Encoding { value: x, bits: 63 - self.frac_bits })
                } else {
                    encode_fixed_point(x, self.frac_bits)
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(RingVector)
    }
}

/// `M` rows; row `k` is destined for participant `k`. Columns sum to the
/// encoded secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareMatrix {
    pub rows: Vec<RingVector>,
}

impl ShareMatrix {
    pub fn group_size(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, RingVector::len)
    }

    pub fn column_sum(&self) -> RingVector {
        let mut acc = RingVector::zeros(self.width());
        self.rows.iter().for_each(|r| acc.add_assign(r));
        acc
    }
}

/// Splits `secret` into `m` shares: rows `0..m−1` drawn from `rng`, the last
/// row is the ring difference.
pub fn make_shares<R: RngCore>(secret: &RingVector, m: usize, rng: &mut R) -> Result<ShareMatrix> {
    make_shares_with_correction(secret, m, m.saturating_sub(1), rng)
}

/// As [`make_shares`], with the secret-dependent row placed at `correction`.
/// Random rows are drawn in ascending row order skipping `correction`.
pub fn make_shares_with_correction<R: RngCore>(
    secret: &RingVector,
    m: usize,
    correction: usize,
    rng: &mut R,
) -> Result<ShareMatrix> {
    if m < 2 {
        return Err(Error::Parameter(format!("secret sharing needs at least 2 participants, got {m}")));
    }
    if correction >= m {
        return Err(Error::Index { index: correction, len: m });
    }
    let width = secret.len();
    let mut last = secret.clone();
    let mut rows = Vec::with_capacity(m);
    for k in 0..m {
        if k == correction {
            rows.push(RingVector::zeros(width));
            continue;
        }
        let r = RingVector::random(width, rng);
        last.sub_assign(&r);
        rows.push(r);
    }
    rows[correction] = last;
    Ok(ShareMatrix { rows })
}

/// Deterministic per-(round, sender, receiver) generator streams.
#[derive(Debug, Clone, Copy)]
pub struct PairwiseStreams {
    pub master_seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl PairwiseStreams {
    pub fn rng(&self, round: u64, from: usize, to: usize) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        let words = [
            splitmix(self.master_seed),
            splitmix(round ^ 0xA5A5_A5A5),
            splitmix(from as u64 ^ 0x5151_5151_0000),
            splitmix(to as u64 ^ 0x0000_7373_7373),
        ];
        for (chunk, w) in seed.chunks_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha20Rng::from_seed(seed)
    }

    /// Share matrix for `sender`: random row `k` comes from stream
    /// `(round, sender, k)`, the last row is the correction.
    pub fn make_shares(&self, secret: &RingVector, m: usize, round: u64, sender: usize) -> Result<ShareMatrix> {
        if m < 2 {
            return Err(Error::Parameter(format!("secret sharing needs at least 2 participants, got {m}")));
        }
        let mut last = secret.clone();
        let mut rows = Vec::with_capacity(m);
        for k in 0..m - 1 {
            let r = RingVector::random(secret.len(), &mut self.rng(round, sender, k));
            last.sub_assign(&r);
            rows.push(r);
        }
        rows.push(last);
        Ok(ShareMatrix { rows })
    }
}

/// Client-to-client message carrying one share row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareMessage {
    pub round: u64,
    pub from: usize,
    pub to: usize,
    pub row: RingVector,
}

/// Column sums `V_j` held by participant `holder`; the only thing a
/// participant sends to the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareSum {
    pub holder: usize,
    pub sums: RingVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    pub from: String,
    pub to: String,
    pub width: usize,
    pub byte_count: usize,
}

/// Optional log of every simulated message.
#[derive(Debug, Clone, Default)]
pub struct ChannelTrace {
    pub records: Vec<TraceRecord>,
}

impl ChannelTrace {
    pub fn total_bytes(&self) -> usize {
        self.records.iter().map(|r| r.byte_count).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Bytes moved by one secure sum: pairwise share rows plus one `V_j` per
/// participant to the server.
pub fn share_bytes(group_size: usize, width: usize) -> usize {
    group_size * group_size.saturating_sub(1) * width * 8 + group_size * width * 8
}

/// Delivers every off-diagonal row over simulated in-order channels and
/// returns each participant's column sums `V_j`.
///
/// Matrices are consumed one sender at a time, so memory stays at
/// `O(group_size · width)`. `None` marks a participant that dropped out,
/// which aborts the exchange.
pub fn exchange_and_sum<I>(
    matrices: I,
    group_size: usize,
    round: u64,
    mut trace: Option<&mut ChannelTrace>,
) -> Result<Vec<ShareSum>>
where
    I: IntoIterator<Item = Result<Option<ShareMatrix>>>,
{
    let m = group_size;
    if m < 2 {
        return Err(Error::Parameter(format!("secure sum needs at least 2 participants, got {m}")));
    }
    let mut holders: Option<Vec<RingVector>> = None;
    let mut senders = 0;
    for (from, h) in matrices.into_iter().enumerate() {
        let h = h?.ok_or(Error::Dropout(from))?;
        if from >= m {
            return Err(Error::Protocol(format!("more than {m} participants")));
        }
        if h.group_size() != m {
            return Err(Error::Protocol(format!("participant {from} produced {} rows for {m} peers", h.group_size())));
        }
        let width = h.width();
        let acc = holders.get_or_insert_with(|| vec![RingVector::zeros(width); m]);
        if h.rows.iter().any(|r| r.len() != acc[0].len()) {
            return Err(Error::Protocol(format!("participant {from} produced rows of the wrong width")));
        }
        for (to, row) in h.rows.into_iter().enumerate() {
            if from != to {
                if let Some(t) = trace.as_deref_mut() {
                    t.records.push(TraceRecord {
                        round,
                        from: format!("client{from}"),
                        to: format!("client{to}"),
                        width,
                        byte_count: row.byte_len(),
                    });
                }
            }
            let msg = ShareMessage { round, from, to, row };
            acc[msg.to].add_assign(&msg.row);
        }
        senders += 1;
    }
    if senders != m {
        return Err(Error::Dropout(senders));
    }
    let sums: Vec<ShareSum> = holders
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(holder, sums)| ShareSum { holder, sums })
        .collect();
    if let Some(t) = trace {
        for s in &sums {
            t.records.push(TraceRecord {
                round,
                from: format!("client{}", s.holder),
                to: "server".into(),
                width: s.sums.len(),
                byte_count: s.sums.byte_len(),
            });
        }
    }
    Ok(sums)
}

/// `Σ_j V_j` in the ring.
pub fn reconstruct_ring(sums: &[ShareSum], group_size: usize) -> Result<RingVector> {
    if sums.len() != group_size {
        return Err(Error::Protocol(format!("expected {group_size} share sums, got {}", sums.len())));
    }
    let width = sums.first().map_or(0, |s| s.sums.len());
    let mut acc = RingVector::zeros(width);
    for s in sums {
        if s.sums.len() != width {
            return Err(Error::Protocol(format!(
                "share sum from {} has width {}, expected {width}",
                s.holder,
                s.sums.len()
            )));
        }
        acc.add_assign(&s.sums);
    }
    Ok(acc)
}

/// Decoded `Σ_j V_j`.
pub fn reconstruct_sum(sums: &[ShareSum], group_size: usize, frac_bits: u32) -> Result<Vec<f64>> {
    Ok(reconstruct_ring(sums, group_size)?.0.into_iter().map(|r| decode_fixed_point(r, frac_bits)).collect())
}

/// 0/1 indicator over catalog positions.
pub fn membership_vector(owner: usize, clicked: &[usize], catalog_size: usize) -> Result<SecretVector> {
    let mut values = vec![0.0; catalog_size];
    for &j in clicked {
        if j >= catalog_size {
            return Err(Error::Index { index: j, len: catalog_size });
        }
        values[j] = 1.0;
    }
    Ok(SecretVector { owner, values, frac_bits: 0 })
}

/// Ascending indices with a positive count.
pub fn pool_from_sum(h: &[i64]) -> Result<Vec<usize>> {
    if let Some(j) = h.iter().position(|&c| c < 0) {
        return Err(Error::Protocol(format!("negative count {} at index {j}", h[j])));
    }
    Ok(h.iter().enumerate().filter(|(_, &c)| c > 0).map(|(j, _)| j).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SecureSumStats {
    pub share_bytes: usize,
    pub server_bytes: usize,
}

/// Runs sharing, exchange and reconstruction for a whole group. Secrets are
/// indexed by participant position.
pub fn secure_sum(
    secrets: &[SecretVector],
    streams: PairwiseStreams,
    round: u64,
    trace: Option<&mut ChannelTrace>,
) -> Result<(RingVector, SecureSumStats)> {
    let (sums, stats) = secure_share_sums(secrets, &vec![false; secrets.len()], streams, round, trace)?;
    Ok((reconstruct_ring(&sums, secrets.len())?, stats))
}

/// Client side of a secure sum: sharing and exchange, returning the `V_j`
/// that reach the server. Participants flagged in `dropped` never send.
pub fn secure_share_sums(
    secrets: &[SecretVector],
    dropped: &[bool],
    streams: PairwiseStreams,
    round: u64,
    trace: Option<&mut ChannelTrace>,
) -> Result<(Vec<ShareSum>, SecureSumStats)> {
    let m = secrets.len();
    let frac = secrets.first().map_or(0, |s| s.frac_bits);
    if secrets.iter().any(|s| s.frac_bits != frac) {
        return Err(Error::Protocol("participants disagree on fraction bits".into()));
    }
    let width = secrets.first().map_or(0, |s| s.values.len());
    let matrices = secrets.iter().enumerate().map(|(i, s)| {
        if dropped.get(i).copied().unwrap_or(false) {
            return Ok(None);
        }
        streams.make_shares(&s.encode(m)?, m, round, i).map(Some)
    });
    let sums = exchange_and_sum(matrices, m, round, trace)?;
    Ok((sums, SecureSumStats { share_bytes: m * (m - 1) * width * 8, server_bytes: m * width * 8 }))
}
