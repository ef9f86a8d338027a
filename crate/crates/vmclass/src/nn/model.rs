//! The end-to-end classifier: Conv1D -> ReLU -> MaxPool1D -> GRU -> FC ->
//! Dropout -> Softmax, plus parameter initialization, the fused training
//! step (loss + all analytic gradients) and binary checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::grid::Grid;
use crate::nn::gru::{gru_sequence, gru_sequence_backward, GruParams, GruStepCache};
use crate::nn::layers::{
    conv1d_backward, conv1d_forward, dims2, dropout, dropout_backward, fc_backward, fc_forward,
    maxpool1d, maxpool1d_backward, relu, relu_backward, softmax, Mode,
};
use crate::nn::loss::log_softmax_loss;

/// Network hyperparameters. The defaults give the 25,346-parameter
/// configuration used throughout: 9 input features treated as a length-9
/// sequence, 64 conv filters of width 3, pool window 2, a 64-unit GRU and a
/// 2-class head with dropout 0.4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_len: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_len: 9,
            filters: 64,
            kernel: 3,
            pool: 2,
            hidden: 64,
            classes: 2,
            dropout: 0.4,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0
            || self.filters == 0
            || self.kernel == 0
            || self.pool == 0
            || self.hidden == 0
            || self.classes < 2
        {
            return Err(Error::BadArchitecture(format!(
                "all dimensions must be positive and classes >= 2, got {self:?}"
            )));
        }
        if self.kernel > self.input_len {
            return Err(Error::BadArchitecture(format!(
                "kernel {} exceeds input length {}",
                self.kernel, self.input_len
            )));
        }
        if self.conv_out() < self.pool {
            return Err(Error::BadArchitecture(format!(
                "conv output {} is shorter than pool window {}",
                self.conv_out(),
                self.pool
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::BadDropoutRate(self.dropout));
        }
        Ok(())
    }

    /// Length after the valid convolution.
    pub fn conv_out(&self) -> usize {
        self.input_len - self.kernel + 1
    }

    /// Pooled length; this is the number of GRU timesteps.
    pub fn steps(&self) -> usize {
        self.conv_out() / self.pool
    }

    pub fn param_count(&self) -> usize {
        let conv = self.filters * self.kernel + self.filters;
        let gru = 3 * (self.hidden * self.filters + self.hidden * self.hidden + 2 * self.hidden);
        let fc = self.classes * self.hidden + self.classes;
        conv + gru + fc
    }
}

/// All learnable parameters, exposed as named grids in a fixed order (the
/// order is part of the checkpoint format and of init's RNG draw sequence).
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub conv_w: Grid,
    pub conv_b: Grid,
    pub gru: GruParams,
    pub fc_w: Grid,
    pub fc_b: Grid,
}

impl ParamSet {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            conv_w: Grid::zeros(&[arch.filters, 1, arch.kernel]),
            conv_b: Grid::zeros(&[arch.filters]),
            gru: GruParams::zeros(arch.filters, arch.hidden),
            fc_w: Grid::zeros(&[arch.classes, arch.hidden]),
            fc_b: Grid::zeros(&[arch.classes]),
        }
    }

    /// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero
    /// biases. Weight grids are filled in declaration order from a single
    /// seeded stream, so a seed fully determines the parameters.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch);
        glorot_fill(&mut p.conv_w, arch.kernel, arch.filters * arch.kernel, &mut rng);
        let (fi, fh) = (arch.filters, arch.hidden);
        glorot_fill(&mut p.gru.w_ux, fi, fh, &mut rng);
        glorot_fill(&mut p.gru.w_uh, fh, fh, &mut rng);
        glorot_fill(&mut p.gru.w_rx, fi, fh, &mut rng);
        glorot_fill(&mut p.gru.w_rh, fh, fh, &mut rng);
        glorot_fill(&mut p.gru.w_cx, fi, fh, &mut rng);
        glorot_fill(&mut p.gru.w_ch, fh, fh, &mut rng);
        glorot_fill(&mut p.fc_w, fh, arch.classes, &mut rng);
        p
    }

    pub fn grids(&self) -> Vec<(&'static str, &Grid)> {
        let mut v = vec![("conv.w", &self.conv_w), ("conv.b", &self.conv_b)];
        v.extend(self.gru.grids());
        v.push(("fc.w", &self.fc_w));
        v.push(("fc.b", &self.fc_b));
        v
    }

    pub fn grids_mut(&mut self) -> Vec<(&'static str, &mut Grid)> {
        let mut v: Vec<(&'static str, &mut Grid)> = Vec::with_capacity(16);
        v.push(("conv.w", &mut self.conv_w));
        v.push(("conv.b", &mut self.conv_b));
        v.extend(self.gru.grids_mut());
        v.push(("fc.w", &mut self.fc_w));
        v.push(("fc.b", &mut self.fc_b));
        v
    }

    pub fn param_count(&self) -> usize {
        self.grids().iter().map(|(_, g)| g.len()).sum()
    }
}

fn glorot_fill<R: Rng>(g: &mut Grid, fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in g.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

/// Whether dropout is active. Train mode draws the dropout mask from the
/// supplied stream; eval mode is deterministic.
pub enum Phase<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

/// Intermediates kept by the forward pass for backprop.
pub struct ForwardCache {
    x: Grid,
    relu_out: Grid,
    pool_argmax: Vec<usize>,
    gru_caches: Vec<GruStepCache>,
    h: Grid,
    dropout_mask: Vec<f64>,
    pub logits: Grid,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub params: ParamSet,
}

impl Model {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            params: ParamSet::init(&arch, seed),
            arch,
        })
    }

    /// Forward pass on a [batch, input_len] grid; returns class
    /// probabilities [batch, classes] and the cache for backprop.
    pub fn forward(&self, x: &Grid, phase: Phase<'_>) -> Result<(Grid, ForwardCache)> {
        let (batch, feat) = dims2(x, "model forward input")?;
        if feat != self.arch.input_len {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                expected: format!("{} features", self.arch.input_len),
                got: format!("{feat}"),
            });
        }
        let x3 = Grid::from_vec(&[batch, 1, self.arch.input_len], x.data().to_vec())?;
        let conv = conv1d_forward(&x3, &self.params.conv_w, &self.params.conv_b)?;
        let relu_out = relu(&conv);
        let (pooled, pool_argmax) = maxpool1d(&relu_out, self.arch.pool)?;
        let seq = channels_to_steps(&pooled);
        let (h, gru_caches) = gru_sequence(&seq, &self.params.gru)?;
        let fc = fc_forward(&h, &self.params.fc_w, &self.params.fc_b)?;
        let (logits, dropout_mask) = match phase {
            Phase::Train(rng) => dropout(&fc, self.arch.dropout, Mode::Train, rng)?,
            Phase::Eval => {
                let n = fc.len();
                (fc, vec![1.0; n])
            }
        };
        let probs = softmax(&logits)?;
        Ok((
            probs,
            ForwardCache {
                x: x3,
                relu_out,
                pool_argmax,
                gru_caches,
                h,
                dropout_mask,
                logits,
            },
        ))
    }

    /// Mean cross-entropy of a labeled batch plus the gradient of every
    /// parameter, computed by backprop through the whole stack.
    pub fn loss_and_grads(
        &self,
        x: &Grid,
        labels: &[u8],
        phase: Phase<'_>,
    ) -> Result<(f64, ParamSet)> {
        let (_, cache) = self.forward(x, phase)?;
        let (loss, dscores) = log_softmax_loss(&cache.logits, labels)?;

        let mut grads = ParamSet::zeros(&self.arch);
        let d_fc_out = dropout_backward(&dscores, &cache.dropout_mask);
        let (d_fc_w, d_fc_b, dh) = fc_backward(&d_fc_out, &cache.h, &self.params.fc_w)?;
        grads.fc_w = d_fc_w;
        grads.fc_b = d_fc_b;

        let (gru_grads, dseq) = gru_sequence_backward(&dh, &cache.gru_caches, &self.params.gru)?;
        grads.gru = gru_grads;

        let dpool = steps_to_channels(&dseq);
        let da = maxpool1d_backward(&dpool, &cache.pool_argmax, self.arch.conv_out())?;
        let dconv = relu_backward(&da, &cache.relu_out);
        let (d_conv_w, d_conv_b, _) = conv1d_backward(&dconv, &cache.x, &self.params.conv_w)?;
        grads.conv_w = d_conv_w;
        grads.conv_b = d_conv_b;

        Ok((loss, grads))
    }

    /// Eval-mode loss only (used by the finite-difference checker).
    pub fn loss(&self, x: &Grid, labels: &[u8]) -> Result<f64> {
        let (_, cache) = self.forward(x, Phase::Eval)?;
        let (loss, _) = log_softmax_loss(&cache.logits, labels)?;
        Ok(loss)
    }

    /// Eval-mode class probabilities.
    pub fn predict_proba(&self, x: &Grid) -> Result<Grid> {
        Ok(self.forward(x, Phase::Eval)?.0)
    }

    /// Eval-mode hard predictions; ties go to the lower class index.
    pub fn predict(&self, x: &Grid) -> Result<Vec<u8>> {
        let probs = self.predict_proba(x)?;
        let (batch, _) = dims2(&probs, "predict probs")?;
        Ok((0..batch).map(|b| argmax_row(probs.row(b)) as u8).collect())
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }
}

/// First index of the row maximum.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// [batch, channels, steps] -> [batch, steps, channels]
fn channels_to_steps(pooled: &Grid) -> Grid {
    let (batch, ch, steps) = (pooled.shape()[0], pooled.shape()[1], pooled.shape()[2]);
    let mut seq = Grid::zeros(&[batch, steps, ch]);
    let pd = pooled.data();
    let sd = seq.data_mut();
    for b in 0..batch {
        for c in 0..ch {
            for t in 0..steps {
                sd[(b * steps + t) * ch + c] = pd[(b * ch + c) * steps + t];
            }
        }
    }
    seq
}

/// [batch, steps, channels] -> [batch, channels, steps]
fn steps_to_channels(seq: &Grid) -> Grid {
    let (batch, steps, ch) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
    let mut pooled = Grid::zeros(&[batch, ch, steps]);
    let sd = seq.data();
    let pd = pooled.data_mut();
    for b in 0..batch {
        for t in 0..steps {
            for c in 0..ch {
                pd[(b * ch + c) * steps + t] = sd[(b * steps + t) * ch + c];
            }
        }
    }
    pooled
}

/// A trained (or training) model plus optimizer state, as persisted to disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub seed: u64,
    pub lr: f64,
    pub adam_step: u64,
    pub params: ParamSet,
    pub adam_m: Vec<Grid>,
    pub adam_v: Vec<Grid>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"VMGC";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(model: &Model, seed: u64, opt: &Adam) -> Self {
        let (m, v) = opt.moments();
        Self {
            arch: model.arch,
            seed,
            lr: opt.lr,
            adam_step: opt.step_count(),
            params: model.params.clone(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        }
    }

    pub fn model(&self) -> Model {
        Model {
            arch: self.arch,
            params: self.params.clone(),
        }
    }

    pub fn optimizer(&self) -> Result<Adam> {
        Adam::from_parts(
            self.lr,
            self.adam_step,
            self.adam_m.clone(),
            self.adam_v.clone(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);

        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        for dim in [
            self.arch.input_len,
            self.arch.filters,
            self.arch.kernel,
            self.arch.pool,
            self.arch.hidden,
            self.arch.classes,
        ] {
            w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.arch.dropout.to_le_bytes()).map_err(io)?;
        w.write_all(&self.seed.to_le_bytes()).map_err(io)?;
        w.write_all(&self.adam_step.to_le_bytes()).map_err(io)?;
        w.write_all(&self.lr.to_le_bytes()).map_err(io)?;

        let params = self.params.grids();
        let total = params.len() + self.adam_m.len() + self.adam_v.len();
        w.write_all(&(total as u32).to_le_bytes()).map_err(io)?;
        for (name, grid) in &params {
            write_grid(&mut w, name, grid).map_err(io)?;
        }
        for (prefix, grids) in [("m.", &self.adam_m), ("v.", &self.adam_v)] {
            for ((name, _), grid) in params.iter().zip(grids.iter()) {
                write_grid(&mut w, &format!("{prefix}{name}"), grid).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        read_exact(&mut r, path, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::BadCheckpoint("bad magic bytes".into()));
        }
        let version = read_u32(&mut r, path)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let arch = Architecture {
            input_len: read_u32(&mut r, path)? as usize,
            filters: read_u32(&mut r, path)? as usize,
            kernel: read_u32(&mut r, path)? as usize,
            pool: read_u32(&mut r, path)? as usize,
            hidden: read_u32(&mut r, path)? as usize,
            classes: read_u32(&mut r, path)? as usize,
            dropout: read_f64(&mut r, path)?,
        };
        arch.validate()?;
        let seed = read_u64(&mut r, path)?;
        let adam_step = read_u64(&mut r, path)?;
        let lr = read_f64(&mut r, path)?;

        let mut params = ParamSet::zeros(&arch);
        let expected: Vec<String> = {
            let names: Vec<&str> = params.grids().iter().map(|(n, _)| *n).collect();
            let mut v: Vec<String> = names.iter().map(|n| n.to_string()).collect();
            v.extend(names.iter().map(|n| format!("m.{n}")));
            v.extend(names.iter().map(|n| format!("v.{n}")));
            v
        };
        let total = read_u32(&mut r, path)? as usize;
        if total != expected.len() {
            return Err(Error::BadCheckpoint(format!(
                "expected {} grids, file has {total}",
                expected.len()
            )));
        }
        let n_params = expected.len() / 3;
        let mut adam_m = Vec::with_capacity(n_params);
        let mut adam_v = Vec::with_capacity(n_params);
        for (i, want) in expected.iter().enumerate() {
            let (name, grid) = read_grid(&mut r, path)?;
            if &name != want {
                return Err(Error::BadCheckpoint(format!(
                    "grid {i} is named {name:?}, expected {want:?}"
                )));
            }
            if i < n_params {
                let mut slots = params.grids_mut();
                let slot = &mut slots[i].1;
                grid.expect_shape("checkpoint grid", slot.shape())?;
                **slot = grid;
            } else {
                let slot_shape = params.grids()[i % n_params].1.shape().to_vec();
                grid.expect_shape("checkpoint moment", &slot_shape)?;
                if i < 2 * n_params {
                    adam_m.push(grid);
                } else {
                    adam_v.push(grid);
                }
            }
        }
        Ok(Self {
            arch,
            seed,
            lr,
            adam_step,
            params,
            adam_m,
            adam_v,
        })
    }
}

fn write_grid<W: Write>(w: &mut W, name: &str, grid: &Grid) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(grid.shape().len() as u32).to_le_bytes())?;
    for &d in grid.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in grid.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_grid<R: Read>(r: &mut R, path: &Path) -> Result<(String, Grid)> {
    let name_len = read_u32(r, path)? as usize;
    if name_len > 64 {
        return Err(Error::BadCheckpoint(format!(
            "grid name length {name_len} out of range"
        )));
    }
    let mut name = vec![0u8; name_len];
    read_exact(r, path, &mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::BadCheckpoint("grid name is not utf-8".into()))?;
    let ndim = read_u32(r, path)? as usize;
    if ndim == 0 || ndim > 4 {
        return Err(Error::BadCheckpoint(format!("grid rank {ndim} out of range")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(r, path)? as usize);
    }
    let len: usize = shape.iter().product();
    if len > 1 << 28 {
        return Err(Error::BadCheckpoint(format!("grid of {len} elements")));
    }
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(read_f64(r, path)?);
    }
    Ok((name, Grid::from_vec(&shape, data)?))
}

fn read_exact<R: Read>(r: &mut R, path: &Path, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::BadCheckpoint("file truncated".into())
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, path, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, path, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, path, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
