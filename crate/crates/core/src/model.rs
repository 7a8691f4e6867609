//! A trained codec and its `NSCM` checkpoint format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "NSCM" | version u8 | window_len u16 | overlap u16
//! encoder block count u32 | (kind u8, in u32, out u32)*
//! decoder block count u32 | (kind u8, in u32, out u32)*
//! parameter count u64 | f32*
//! bin count u32 | bins f32* | ln(sigma) f32 | table counts u32*
//! training configuration (see `write_config`)
//! ```

use std::path::Path;

use rand::SeedableRng;

use crate::audio::SplitCounts;
use crate::coder::FrequencyTable;
use crate::error::{Error, Result};
use crate::framing::FrameConfig;
use crate::nn::{BlockKind, BlockSpec, Network, NetworkSpec};
use crate::objective::LossWeights;
use crate::quantizer::Quantizer;
use crate::trainer::TrainConfig;

pub const MAGIC: [u8; 4] = *b"NSCM";
pub const VERSION: u8 = 1;

/// Everything needed to encode and decode: weights, quantizer and coding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network<f32>,
    pub quantizer: Quantizer<f32>,
    pub table: FrequencyTable,
    pub frame: FrameConfig,
    pub config: TrainConfig,
}

impl Model {
    /// Freshly initialized network with uniform bins and a flat table, for timing and tests.
    pub fn untrained(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            network: Network::new(&config.network_spec(), &mut rng),
            quantizer: Quantizer::uniform(config.num_bins, -1.0, 1.0, config.sigma_initial),
            table: FrequencyTable::from_counts(vec![1; config.num_bins])?,
            frame: FrameConfig::default(),
            config,
        })
    }

    pub fn target_bps(&self) -> f64 {
        self.config.target_bps
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.bytes(&MAGIC);
        w.u8(VERSION);
        w.u16(self.frame.window_len as u16);
        w.u16(self.frame.overlap as u16);
        let spec = self.network.spec();
        for blocks in [&spec.encoder, &spec.decoder] {
            w.u32(blocks.len() as u32);
            for b in blocks {
                w.u8(b.kind.code());
                w.u32(b.in_ch as u32);
                w.u32(b.out_ch as u32);
            }
        }
        let params = self.network.params();
        w.u64(params.iter().map(|p| p.len() as u64).sum());
        for p in params {
            for &v in p {
                w.f32(v);
            }
        }
        w.u32(self.quantizer.num_bins() as u32);
        for &b in &self.quantizer.bins {
            w.f32(b);
        }
        w.f32(self.quantizer.log_sigma);
        for &c in self.table.counts() {
            w.u32(c);
        }
        write_config(&mut w, &self.config);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let frame = FrameConfig::new(r.u16()? as usize, r.u16()? as usize)?;
        let mut lists = Vec::new();
        for _ in 0..2 {
            let n = r.u32()? as usize;
            if n > 4096 {
                return Err(Error::ModelMismatch(format!("{n} blocks is not a plausible network")));
            }
            let mut blocks = Vec::with_capacity(n);
            for _ in 0..n {
                let code = r.u8()?;
                let kind = BlockKind::from_code(code)
                    .ok_or_else(|| Error::ModelMismatch(format!("unknown block kind {code}")))?;
                let (in_ch, out_ch) = (r.u32()? as usize, r.u32()? as usize);
                if in_ch == 0 || out_ch == 0 || in_ch > 4096 || out_ch > 4096 {
                    return Err(Error::ModelMismatch(format!("implausible channel counts {in_ch}->{out_ch}")));
                }
                blocks.push(BlockSpec { kind, in_ch, out_ch });
            }
            lists.push(blocks);
        }
        let decoder = lists.pop().unwrap();
        let encoder = lists.pop().unwrap();
        let spec = NetworkSpec { encoder, decoder };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut network = Network::<f32>::new(&spec, &mut rng);
        let count = r.u64()?;
        if count != network.num_params() as u64 {
            return Err(Error::ModelMismatch(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                network.num_params()
            )));
        }
        for p in network.params_mut() {
            for v in p.iter_mut() {
                *v = r.f32()?;
            }
        }
        let n = r.u32()? as usize;
        if !(2..=1 << 16).contains(&n) {
            return Err(Error::ModelMismatch(format!("{n} quantization bins")));
        }
        let bins = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let log_sigma = r.f32()?;
        let counts = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let table = FrequencyTable::from_counts(counts)?;
        let config = read_config(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::CorruptPayload(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            network,
            quantizer: Quantizer { bins, log_sigma },
            table,
            frame,
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_config(w: &mut Writer, c: &TrainConfig) {
    w.u32(c.stage1_epochs as u32);
    w.u32(c.stage2_epochs as u32);
    w.u32(c.batch_size as u32);
    for v in [
        c.lr_initial,
        c.lr_final,
        c.tau_initial,
        c.tau_change,
        c.target_bps,
        c.target_halfwidth,
        c.weights.mse,
        c.weights.perceptual,
        c.weights.quantization,
        c.weights.entropy,
    ] {
        w.f64(v);
    }
    w.u32(c.channels as u32);
    w.u32(c.residual_blocks as u32);
    w.u32(c.num_bins as u32);
    w.f64(c.sigma_initial);
    w.f64(c.grad_clip);
    w.u32(c.split.train as u32);
    w.u32(c.split.validation as u32);
    w.u32(c.split.test as u32);
    w.u64(c.seed);
}

fn read_config(r: &mut Reader) -> Result<TrainConfig> {
    let stage1_epochs = r.u32()? as usize;
    let stage2_epochs = r.u32()? as usize;
    let batch_size = r.u32()? as usize;
    let mut f = [0.0; 10];
    for v in &mut f {
        *v = r.f64()?;
    }
    Ok(TrainConfig {
        stage1_epochs,
        stage2_epochs,
        batch_size,
        lr_initial: f[0],
        lr_final: f[1],
        tau_initial: f[2],
        tau_change: f[3],
        target_bps: f[4],
        target_halfwidth: f[5],
        weights: LossWeights {
            mse: f[6],
            perceptual: f[7],
            quantization: f[8],
            entropy: f[9],
        },
        channels: r.u32()? as usize,
        residual_blocks: r.u32()? as usize,
        num_bins: r.u32()? as usize,
        sigma_initial: r.f64()?,
        grad_clip: r.f64()?,
        split: SplitCounts::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize),
        seed: r.u64()?,
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| {
            Error::Truncated(format!("checkpoint ends at byte {} of a {n}-byte field", self.bytes.len()))
        })?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
