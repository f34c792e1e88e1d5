use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ops::{
    channel_affine, channel_stats, concat_channels, conv_backward, conv_forward, split_channels, ConvGeom, Shape,
};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    None,
    Batch,
}

/// Encoder-decoder layout. Every stage runs `convs_per_stage` 3x3
/// conv-norm-ReLU blocks; encoder stage outputs are concatenated onto the
/// mirrored decoder stage inputs. A bridge stage sits between encoder and
/// decoder, and a final 3x1 convolution followed by a mean over the receive
/// axis produces `[out_channels x te]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stages: usize,
    pub convs_per_stage: usize,
    pub channels: usize,
    pub norm: Norm,
    pub bias: bool,
    /// Nominal transmit-event (scanline) extent of one input.
    pub te: usize,
    /// Receive channels; the network averages over this axis at the end.
    pub rx: usize,
    /// Also feed the raw input to the final convolution.
    #[serde(default)]
    pub input_skip: bool,
}

impl ArchSpec {
    /// Full-size layout: 4 stages of 4 convolutions with 64 channels on
    /// `3 x 96 x 64` inputs, 37 convolutions in total.
    pub fn full() -> Self {
        Self {
            in_channels: 3,
            out_channels: 2,
            stages: 4,
            convs_per_stage: 4,
            channels: 64,
            norm: Norm::Batch,
            bias: false,
            te: 96,
            rx: 64,
            input_skip: false,
        }
    }

    /// Small layout that trains in minutes on one CPU core.
    pub fn desk(te: usize, rx: usize) -> Self {
        Self {
            stages: 1,
            convs_per_stage: 2,
            channels: 8,
            te,
            rx,
            input_skip: true,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.channels == 0 {
            return Err(Error::invalid("architecture channel counts must be positive"));
        }
        if self.convs_per_stage == 0 {
            return Err(Error::invalid("convs_per_stage must be at least 1"));
        }
        if self.te == 0 || self.rx == 0 {
            return Err(Error::invalid("architecture input extent must be positive"));
        }
        Ok(())
    }

    pub fn conv_count(&self) -> usize {
        (2 * self.stages + 1) * self.convs_per_stage + 1
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.te * self.rx
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.te
    }

    /// Layer geometries in execution order.
    fn geoms(&self) -> Vec<ConvGeom> {
        let q = self.channels;
        let cps = self.convs_per_stage;
        let mut g = Vec::with_capacity(self.conv_count());
        let mut c = self.in_channels;
        for _ in 0..=self.stages {
            for _ in 0..cps {
                g.push(ConvGeom { cin: c, cout: q, kh: 3, kw: 3 });
                c = q;
            }
        }
        for _ in 0..self.stages {
            for k in 0..cps {
                let cin = if k == 0 { 2 * q } else { q };
                g.push(ConvGeom { cin, cout: q, kh: 3, kw: 3 });
            }
        }
        if self.input_skip {
            c += self.in_channels;
        }
        g.push(ConvGeom { cin: c, cout: self.out_channels, kh: 3, kw: 1 });
        g
    }

    fn plan(&self) -> Vec<Step> {
        let cps = self.convs_per_stage;
        let mut plan = Vec::new();
        let mut k = 0;
        if self.input_skip {
            plan.push(Step::Save);
        }
        for _ in 0..self.stages {
            for _ in 0..cps {
                plan.push(Step::Block(k));
                k += 1;
            }
            plan.push(Step::Save);
        }
        for _ in 0..cps {
            plan.push(Step::Block(k));
            k += 1;
        }
        for _ in 0..self.stages {
            plan.push(Step::Concat);
            for _ in 0..cps {
                plan.push(Step::Block(k));
                k += 1;
            }
        }
        if self.input_skip {
            plan.push(Step::Concat);
        }
        plan.push(Step::Final(k));
        plan
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Block(usize),
    Save,
    Concat,
    Final(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in the norm layers.
    Train,
    /// Running statistics; a pure function of the input.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub geom: ConvGeom,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }
}

/// All network parameters. `norms[k]` belongs to `convs[k]`; the final
/// convolution never has one.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchSpec,
    pub convs: Vec<Conv>,
    pub norms: Vec<Option<BatchNorm>>,
}

/// Per-channel batch statistics of every norm layer from one training
/// forward pass.
pub type BatchStats = Vec<Option<(Vec<f64>, Vec<f64>)>>;

/// Gradient tensors in [`NetworkParams::trainable`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

struct BlockCache {
    input: Vec<f64>,
    in_shape: Shape,
    xhat: Option<Vec<f64>>,
    inv_std: Option<Vec<f64>>,
    /// Post-activation output (ReLU mask is `out > 0`).
    out: Vec<f64>,
}

struct Cache {
    blocks: Vec<Option<BlockCache>>,
    final_input: Vec<f64>,
    final_shape: Shape,
}

/// ReLU on/off patterns from one forward pass, one vector per block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReluMasks {
    pub masks: Vec<Vec<bool>>,
    /// A pre-activation was exactly zero somewhere (resolved as off).
    pub tie: bool,
}

impl NetworkParams {
    /// Gaussian Xavier initialisation, `std = sqrt(2 / (fan_in + fan_out))`.
    pub fn xavier(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geoms = arch.geoms();
        let last = geoms.len() - 1;
        let convs = geoms
            .iter()
            .map(|g| {
                let rf = (g.kh * g.kw) as f64;
                let std = (2.0 / ((g.cin as f64 + g.cout as f64) * rf)).sqrt();
                Conv {
                    geom: *g,
                    weight: (0..g.weight_len())
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    bias: arch.bias.then(|| vec![0.0; g.cout]),
                }
            })
            .collect();
        let norms = (0..geoms.len())
            .map(|k| (arch.norm == Norm::Batch && k != last).then(|| BatchNorm::new(geoms[k].cout)))
            .collect();
        Ok(Self { arch, convs, norms })
    }

    /// All-zero weights and biases, identity norms.
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        let mut p = Self::xavier(arch, 0)?;
        for c in p.convs.iter_mut() {
            c.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(p)
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            v.push(&c.weight);
            if let Some(b) = &c.bias {
                v.push(b);
            }
            if let Some(n) = n {
                v.push(&n.gamma);
                v.push(&n.beta);
            }
        }
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            v.push(&mut c.weight);
            if let Some(b) = c.bias.as_mut() {
                v.push(b);
            }
            if let Some(n) = n.as_mut() {
                v.push(&mut n.gamma);
                v.push(&mut n.beta);
            }
        }
        v
    }

    /// Which trainable tensors carry the l2 penalty (the filters).
    pub fn regularized(&self) -> Vec<bool> {
        let mut v = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            v.push(true);
            if c.bias.is_some() {
                v.push(false);
            }
            if n.is_some() {
                v.push(false);
                v.push(false);
            }
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Squared l2 norm of the filters.
    pub fn filter_norm_sq(&self) -> f64 {
        self.convs.iter().flat_map(|c| &c.weight).map(|w| w * w).sum()
    }

    /// Folds inference-mode batch norm into the convolutions, giving an
    /// equivalent network of convolutions with bias and no norm layers.
    pub fn fold_norm(&self) -> Self {
        let mut out = self.clone();
        out.arch.norm = Norm::None;
        let any_norm = self.norms.iter().any(|n| n.is_some());
        out.arch.bias = self.arch.bias || any_norm;
        for (c, n) in out.convs.iter_mut().zip(self.norms.iter()) {
            let g = c.geom;
            let mut bias = c.bias.take().unwrap_or_else(|| vec![0.0; g.cout]);
            if let Some(n) = n {
                let per_out = g.cin * g.kh * g.kw;
                for o in 0..g.cout {
                    let s = n.gamma[o] / (n.running_var[o] + BN_EPS).sqrt();
                    c.weight[o * per_out..(o + 1) * per_out].iter_mut().for_each(|w| *w *= s);
                    bias[o] = s * (bias[o] - n.running_mean[o]) + n.beta[o];
                }
            }
            c.bias = out.arch.bias.then_some(bias);
        }
        out.norms = vec![None; out.convs.len()];
        out
    }

    pub(crate) fn plan(&self) -> Vec<Step> {
        self.arch.plan()
    }

    fn check_input(&self, x: &[f64], n: usize, h: usize) -> Result<()> {
        let want = n * self.arch.in_channels * h * self.arch.rx;
        if x.len() != want || n == 0 || h == 0 {
            return Err(Error::dims(format!(
                "network input has {} values, expected {n} x {} x {h} x {}",
                x.len(),
                self.arch.in_channels,
                self.arch.rx
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &[f64],
        n: usize,
        h: usize,
        mode: Mode,
        mut cache: Option<&mut Cache>,
        mut masks: Option<&mut ReluMasks>,
    ) -> Result<(Vec<f64>, BatchStats)> {
        self.check_input(x, n, h)?;
        let w = self.arch.rx;
        let plane = h * w;
        let mut cur = x.to_vec();
        let mut c = self.arch.in_channels;
        let mut skips: Vec<(Vec<f64>, usize)> = Vec::new();
        let mut stats: BatchStats = vec![None; self.convs.len()];
        let mut out = Vec::new();
        for step in self.plan() {
            match step {
                Step::Block(k) => {
                    let conv = &self.convs[k];
                    let s = Shape { n, c, h, w };
                    let mut y = conv_forward(&cur, s, &conv.geom, &conv.weight, conv.bias.as_deref());
                    let so = Shape { c: conv.geom.cout, ..s };
                    let (mut xhat, mut inv) = (None, None);
                    if let Some(bn) = &self.norms[k] {
                        let (mean, var) = match mode {
                            Mode::Train => channel_stats(&y, so),
                            Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
                        };
                        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                        let shift: Vec<f64> = mean.iter().zip(&inv_std).map(|(m, i)| -m * i).collect();
                        channel_affine(&mut y, so, &inv_std, &shift);
                        if cache.is_some() {
                            xhat = Some(y.clone());
                            inv = Some(inv_std);
                        }
                        channel_affine(&mut y, so, &bn.gamma, &bn.beta);
                        if mode == Mode::Train {
                            stats[k] = Some((mean, var));
                        }
                    }
                    if let Some(m) = masks.as_deref_mut() {
                        m.tie |= y.iter().any(|&v| v == 0.0);
                        m.masks.push(y.iter().map(|&v| v > 0.0).collect());
                    }
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(Error::numerical(format!("non-finite activation after layer {k}")));
                    }
                    let prev = std::mem::replace(&mut cur, y);
                    if let Some(cache) = cache.as_deref_mut() {
                        cache.blocks[k] = Some(BlockCache {
                            input: prev,
                            in_shape: s,
                            xhat,
                            inv_std: inv,
                            out: cur.clone(),
                        });
                    }
                    c = conv.geom.cout;
                }
                Step::Save => skips.push((cur.clone(), c)),
                Step::Concat => {
                    let (skip, cs) = skips.pop().expect("plan pairs every concat with a save");
                    cur = concat_channels(&cur, c, &skip, cs, n, plane);
                    c += cs;
                }
                Step::Final(k) => {
                    let conv = &self.convs[k];
                    let s = Shape { n, c, h, w };
                    let y = conv_forward(&cur, s, &conv.geom, &conv.weight, conv.bias.as_deref());
                    let oc = conv.geom.cout;
                    out = vec![0.0; n * oc * h];
                    for (row, chunk) in out.iter_mut().zip(y.chunks_exact(w)) {
                        *row = chunk.iter().sum::<f64>() / w as f64;
                    }
                    if out.iter().any(|v| !v.is_finite()) {
                        return Err(Error::numerical(format!("non-finite activation after layer {k}")));
                    }
                    if let Some(cache) = cache.as_deref_mut() {
                        cache.final_input = std::mem::take(&mut cur);
                        cache.final_shape = s;
                    }
                }
            }
        }
        Ok((out, stats))
    }

    /// Forward pass of `n` inputs of `h` transmit events each; output is
    /// `[n x out_channels x h]`.
    pub fn forward_batch(&self, x: &[f64], n: usize, h: usize, mode: Mode) -> Result<Vec<f64>> {
        Ok(self.run(x, n, h, mode, None, None)?.0)
    }

    /// Single input of the nominal `[in_channels x te x rx]` shape.
    pub fn forward(&self, slab: &[f64], mode: Mode) -> Result<Vec<f64>> {
        self.forward_batch(slab, 1, self.arch.te, mode)
    }

    /// Inference forward pass that also records every ReLU pattern.
    pub fn forward_with_masks(&self, x: &[f64], h: usize) -> Result<(Vec<f64>, ReluMasks)> {
        let mut m = ReluMasks::default();
        let (out, _) = self.run(x, 1, h, Mode::Infer, None, Some(&mut m))?;
        Ok((out, m))
    }

    /// Loss `mean_b |t_b - f_b|^2 + lambda |W|^2` and its exact gradient.
    /// Also returns the batch statistics for the running-average update.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        targets: &[f64],
        n: usize,
        h: usize,
        lambda: f64,
        mode: Mode,
    ) -> Result<(f64, Gradients, BatchStats)> {
        let mut cache = Cache {
            blocks: (0..self.convs.len()).map(|_| None).collect(),
            final_input: Vec::new(),
            final_shape: Shape { n: 0, c: 0, h: 0, w: 0 },
        };
        let (out, stats) = self.run(x, n, h, mode, Some(&mut cache), None)?;
        if targets.len() != out.len() {
            return Err(Error::dims(format!(
                "target has {} values, network output {}",
                targets.len(),
                out.len()
            )));
        }
        let data: f64 = out.iter().zip(targets).map(|(f, t)| (t - f) * (t - f)).sum::<f64>() / n as f64;
        let loss = data + lambda * self.filter_norm_sq();
        let dout: Vec<f64> = out.iter().zip(targets).map(|(f, t)| 2.0 * (f - t) / n as f64).collect();
        let grads = self.backward(&cache, &dout, mode, lambda);
        Ok((loss, grads, stats))
    }

    fn backward(&self, cache: &Cache, dout: &[f64], mode: Mode, lambda: f64) -> Gradients {
        let w = self.arch.rx;
        let k_count = self.convs.len();
        let mut dw: Vec<Vec<f64>> = vec![Vec::new(); k_count];
        let mut db: Vec<Option<Vec<f64>>> = vec![None; k_count];
        let mut dgamma: Vec<Option<Vec<f64>>> = vec![None; k_count];
        let mut dbeta: Vec<Option<Vec<f64>>> = vec![None; k_count];

        let fs = cache.final_shape;
        let plane = fs.h * w;
        let mut g: Vec<f64> = Vec::new();
        let mut c = 0;
        let mut skip_grads: Vec<Vec<f64>> = Vec::new();
        // Channel counts before each concat, recovered while walking back.
        let mut concat_in: Vec<(usize, usize)> = Vec::new();
        {
            let mut cc = self.arch.in_channels;
            let mut saved = Vec::new();
            for step in self.plan() {
                match step {
                    Step::Block(k) => cc = self.convs[k].geom.cout,
                    Step::Save => saved.push(cc),
                    Step::Concat => {
                        let cs = saved.pop().unwrap();
                        concat_in.push((cc, cs));
                        cc += cs;
                    }
                    Step::Final(_) => {}
                }
            }
        }
        for step in self.plan().into_iter().rev() {
            match step {
                Step::Final(k) => {
                    let conv = &self.convs[k];
                    let oc = conv.geom.cout;
                    let mut dy = vec![0.0; fs.n * oc * plane];
                    for (chunk, d) in dy.chunks_exact_mut(w).zip(dout) {
                        chunk.iter_mut().for_each(|v| *v = d / w as f64);
                    }
                    let (dx, dwk, dbk) =
                        conv_backward(&cache.final_input, fs, &conv.geom, &conv.weight, &dy, conv.bias.is_some(), true);
                    g = dx;
                    dw[k] = dwk;
                    db[k] = dbk;
                    c = fs.c;
                }
                Step::Concat => {
                    let (ca, cb) = concat_in.pop().unwrap();
                    debug_assert_eq!(ca + cb, c);
                    let (ga, gb) = split_channels(&g, ca, cb, fs.n, plane);
                    g = ga;
                    skip_grads.push(gb);
                    c = ca;
                }
                Step::Save => {
                    let gs = skip_grads.pop().unwrap();
                    g.iter_mut().zip(gs).for_each(|(a, b)| *a += b);
                }
                Step::Block(k) => {
                    let bc = cache.blocks[k].as_ref().expect("forward cached every block");
                    let conv = &self.convs[k];
                    let so = Shape { c: conv.geom.cout, ..bc.in_shape };
                    g.iter_mut().zip(&bc.out).for_each(|(d, o)| {
                        if *o <= 0.0 {
                            *d = 0.0
                        }
                    });
                    if let Some(bn) = &self.norms[k] {
                        let xhat = bc.xhat.as_ref().unwrap();
                        let inv = bc.inv_std.as_ref().unwrap();
                        let pl = so.plane();
                        let count = (so.n * pl) as f64;
                        let mut dg = vec![0.0; so.c];
                        let mut dbt = vec![0.0; so.c];
                        for b in 0..so.n {
                            for ch in 0..so.c {
                                let off = (b * so.c + ch) * pl;
                                for i in off..off + pl {
                                    dg[ch] += g[i] * xhat[i];
                                    dbt[ch] += g[i];
                                }
                            }
                        }
                        for b in 0..so.n {
                            for ch in 0..so.c {
                                let off = (b * so.c + ch) * pl;
                                let scale = bn.gamma[ch] * inv[ch];
                                for i in off..off + pl {
                                    g[i] = match mode {
                                        Mode::Train => {
                                            scale * (g[i] - dbt[ch] / count - xhat[i] * dg[ch] / count)
                                        }
                                        Mode::Infer => scale * g[i],
                                    };
                                }
                            }
                        }
                        dgamma[k] = Some(dg);
                        dbeta[k] = Some(dbt);
                    }
                    let (dx, dwk, dbk) = conv_backward(
                        &bc.input,
                        bc.in_shape,
                        &conv.geom,
                        &conv.weight,
                        &g,
                        conv.bias.is_some(),
                        k != 0,
                    );
                    g = dx;
                    dw[k] = dwk;
                    db[k] = dbk;
                    c = bc.in_shape.c;
                }
            }
        }
        let _ = c;
        let mut tensors = Vec::new();
        for k in 0..k_count {
            let mut wk = std::mem::take(&mut dw[k]);
            for (gw, w) in wk.iter_mut().zip(&self.convs[k].weight) {
                *gw += 2.0 * lambda * w;
            }
            tensors.push(wk);
            if let Some(b) = db[k].take() {
                tensors.push(b);
            }
            if let Some(gm) = dgamma[k].take() {
                tensors.push(gm);
                tensors.push(dbeta[k].take().unwrap());
            } else if self.norms[k].is_some() {
                let cc = self.convs[k].geom.cout;
                tensors.push(vec![0.0; cc]);
                tensors.push(vec![0.0; cc]);
            }
        }
        Gradients { tensors }
    }

    /// Updates running norm statistics from one batch.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (norm, st) in self.norms.iter_mut().zip(stats) {
            if let (Some(bn), Some((mean, var))) = (norm.as_mut(), st) {
                for c in 0..bn.gamma.len() {
                    bn.running_mean[c] = (1.0 - BN_MOMENTUM) * bn.running_mean[c] + BN_MOMENTUM * mean[c];
                    bn.running_var[c] = (1.0 - BN_MOMENTUM) * bn.running_var[c] + BN_MOMENTUM * var[c];
                }
            }
        }
    }

    /// Order-sensitive checksum of every parameter and running statistic.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in self.trainable() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        for bn in self.norms.iter().flatten() {
            for v in bn.running_mean.iter().chain(&bn.running_var) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
