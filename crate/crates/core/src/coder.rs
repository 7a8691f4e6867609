//! Static-model range coder and the `NSC1` bitstream container.
//!
//! The coder is the 32-bit carry-less variant with byte renormalization:
//! the top byte of `low` is emitted once it can no longer change, and when
//! the range gets too small without a settled top byte it is cut down to the
//! next byte boundary.
//!
//! Layout of an `NSC1` stream, all integers little-endian:
//!
//! | field         | bytes |
//! |---------------|-------|
//! | magic `NSC1`  | 4     |
//! | version       | 1     |
//! | sample rate   | 4     |
//! | window length | 2     |
//! | overlap       | 2     |
//! | window count  | 4     |
//! | original len  | 8     |
//! | counts        | 4 * N |
//! | payload       | rest  |
//!
//! The payload is the range-coded symbol stream followed by a CRC-32 of
//! every preceding byte of the file.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NSC1";
pub const VERSION: u8 = 1;
/// Histogram scale used when quantizing probabilities to counts.
pub const FREQ_PRECISION_BITS: u32 = 16;

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 17;
/// Largest total count the coder accepts: a renormalized range is at least `BOT`.
pub const MAX_TOTAL: u32 = BOT;

/// Static symbol frequencies; every symbol has a nonzero count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u32>,
    cumulative: Vec<u32>,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::CorruptPayload("empty frequency table".into()));
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::CorruptPayload(format!("symbol {i} has zero frequency")));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total > MAX_TOTAL as u64 {
            return Err(Error::CorruptPayload(format!(
                "frequency total {total} exceeds {MAX_TOTAL}"
            )));
        }
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &c in &counts {
            acc += c;
            cumulative.push(acc);
        }
        Ok(Self { counts, cumulative })
    }

    /// `max(1, round(h_i * 2^16))` for each histogram entry.
    pub fn from_histogram(h: &[f64]) -> Result<Self> {
        let scale = (1u64 << FREQ_PRECISION_BITS) as f64;
        let counts = h
            .iter()
            .map(|&p| (p.max(0.0) * scale).round().max(1.0) as u32)
            .collect();
        Self::from_counts(counts)
    }

    /// Counts symbol occurrences and converts them to a normalized table.
    pub fn from_symbols(symbols: &[usize], num_symbols: usize) -> Result<Self> {
        let mut hist = vec![0.0; num_symbols];
        for &s in symbols {
            if s >= num_symbols {
                return Err(Error::SymbolOutOfRange { symbol: s, num_symbols });
            }
            hist[s] += 1.0;
        }
        let n = symbols.len().max(1) as f64;
        hist.iter_mut().for_each(|v| *v /= n);
        Self::from_histogram(&hist)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn num_symbols(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u32 {
        *self.cumulative.last().unwrap()
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        self.counts[symbol] as f64 / self.total() as f64
    }

    /// Entropy of the table's own distribution in bits per symbol.
    pub fn entropy(&self) -> f64 {
        (0..self.counts.len())
            .map(|s| {
                let p = self.probability(s);
                -p * p.log2()
            })
            .sum()
    }

    /// Ideal code length of `symbols` under this table, in bits.
    pub fn cross_entropy_bits(&self, symbols: &[usize]) -> f64 {
        symbols.iter().map(|&s| -self.probability(s).log2()).sum()
    }

    fn symbol_for(&self, value: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= value) - 1
    }
}

struct Encoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low = self.low.wrapping_add(r * cum);
        self.range = r * freq;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

struct Decoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn new(input: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            low: 0,
            range: u32::MAX,
            code: 0,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or_else(|| Error::CorruptPayload("payload ended early".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let total = table.total();
        let r = self.range / total;
        let value = self.code.wrapping_sub(self.low) / r;
        if value >= total {
            return Err(Error::CorruptPayload("code value outside the coding range".into()));
        }
        let s = table.symbol_for(value);
        self.low = self.low.wrapping_add(r * table.cumulative[s]);
        self.range = r * table.counts[s];
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(s)
    }
}

pub fn range_encode(symbols: &[usize], table: &FrequencyTable) -> Result<Vec<u8>> {
    let total = table.total();
    let mut enc = Encoder::new();
    for &s in symbols {
        if s >= table.num_symbols() {
            return Err(Error::SymbolOutOfRange {
                symbol: s,
                num_symbols: table.num_symbols(),
            });
        }
        enc.encode(table.cumulative[s], table.counts[s], total);
    }
    Ok(enc.finish())
}

/// Decodes exactly `count` symbols; the payload must be consumed exactly.
pub fn range_decode(bytes: &[u8], count: usize, table: &FrequencyTable) -> Result<Vec<usize>> {
    let mut dec = Decoder::new(bytes)?;
    let symbols = (0..count)
        .map(|_| dec.decode(table))
        .collect::<Result<Vec<_>>>()?;
    if dec.pos != bytes.len() {
        return Err(Error::CorruptPayload(format!(
            "{} trailing payload bytes",
            bytes.len() - dec.pos
        )));
    }
    Ok(symbols)
}

/// Framing parameters carried in the stream header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMeta {
    pub sample_rate: u32,
    pub window_len: u16,
    pub overlap: u16,
    pub num_windows: u32,
    pub original_len: u64,
}

impl StreamMeta {
    /// Symbols per window: the encoder halves the window length.
    pub fn symbols_per_window(&self) -> usize {
        self.window_len as usize / 2
    }

    pub fn num_symbols(&self) -> usize {
        self.num_windows as usize * self.symbols_per_window()
    }
}

pub fn header_len(num_bins: usize) -> usize {
    4 + 1 + 4 + 2 + 2 + 4 + 8 + 4 * num_bins
}

const CRC_LEN: usize = 4;

pub fn pack_bitstream(symbols: &[usize], meta: &StreamMeta, table: &FrequencyTable) -> Result<Vec<u8>> {
    if symbols.len() != meta.num_symbols() {
        return Err(Error::LengthMismatch {
            expected: meta.num_symbols(),
            actual: symbols.len(),
        });
    }
    let mut out = Vec::with_capacity(header_len(table.num_symbols()) + symbols.len() / 4);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&meta.sample_rate.to_le_bytes());
    out.extend_from_slice(&meta.window_len.to_le_bytes());
    out.extend_from_slice(&meta.overlap.to_le_bytes());
    out.extend_from_slice(&meta.num_windows.to_le_bytes());
    out.extend_from_slice(&meta.original_len.to_le_bytes());
    for &c in table.counts() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend(range_encode(symbols, table)?);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::CorruptPayload("stream header is truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a stream whose table has `num_bins` entries (the model's bin count).
pub fn unpack_bitstream(bytes: &[u8], num_bins: usize) -> Result<(Vec<usize>, StreamMeta, FrequencyTable)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r
        .take(4)
        .map_err(|_| Error::BadMagic {
            expected: MAGIC,
            found: [0; 4],
        })?
        .try_into()
        .unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let meta = StreamMeta {
        sample_rate: r.u32()?,
        window_len: r.u16()?,
        overlap: r.u16()?,
        num_windows: r.u32()?,
        original_len: r.u64()?,
    };
    let counts = (0..num_bins).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let table = FrequencyTable::from_counts(counts)?;
    if bytes.len() < r.pos + CRC_LEN {
        return Err(Error::CorruptPayload("missing checksum".into()));
    }
    let body_end = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::CorruptPayload("checksum mismatch".into()));
    }
    let symbols = range_decode(&bytes[r.pos..body_end], meta.num_symbols(), &table)?;
    Ok((symbols, meta, table))
}
