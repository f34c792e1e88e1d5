//! Piecewise-linear view of a ReLU network.
//!
//! With the norm layers folded into the convolutions, a forward pass fixes
//! every ReLU to on or off. Inside that activation region the network is
//! the affine map `f(z) = A z + b`, with `b = 0` for bias-free networks.
//! [`extract_pwl`] records the region and materialises `A` by replaying the
//! network with the recorded masks in place of the ReLUs.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{concat_channels, conv_forward, NetworkParams, ReluMasks, Shape, Step};

/// Largest input dimension for which the dense operator is built.
pub const MAX_DENSE_INPUT: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PwlMap {
    pub masks: ReluMasks,
    pub region_id: String,
    /// `[out_dim x in_dim]`, row-major.
    pub effective_linear: Vec<f64>,
    /// Affine term; all zero for bias-free networks.
    pub offset: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl PwlMap {
    /// `A z + b`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.effective_linear
            .chunks_exact(self.in_dim)
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.effective_linear.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Hash of the concatenated ReLU patterns.
pub fn region_id(masks: &ReluMasks) -> String {
    let mut h = Sha256::new();
    for m in &masks.masks {
        let mut byte = 0u8;
        for (i, &on) in m.iter().enumerate() {
            byte |= (on as u8) << (i % 8);
            if i % 8 == 7 {
                h.update([byte]);
                byte = 0;
            }
        }
        h.update([byte, 0xFF]);
        h.update((m.len() as u64).to_le_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

fn folded(params: &NetworkParams) -> NetworkParams {
    if params.norms.iter().any(|n| n.is_some()) {
        params.fold_norm()
    } else {
        params.clone()
    }
}

/// Runs `n` inputs through the network with the ReLUs replaced by the fixed
/// 0/1 `masks` of one input; biases only when `with_bias`.
fn replay(params: &NetworkParams, x: &[f64], n: usize, h: usize, masks: &ReluMasks, with_bias: bool) -> Vec<f64> {
    let w = params.arch.rx;
    let plane = h * w;
    let mut cur = x.to_vec();
    let mut c = params.arch.in_channels;
    let mut skips: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut block = 0;
    let mut out = Vec::new();
    for step in params.plan() {
        match step {
            Step::Block(k) | Step::Final(k) => {
                let conv = &params.convs[k];
                let s = Shape { n, c, h, w };
                let bias = if with_bias { conv.bias.as_deref() } else { None };
                let mut y = conv_forward(&cur, s, &conv.geom, &conv.weight, bias);
                if let Step::Final(_) = step {
                    out = y.chunks_exact(w).map(|r| r.iter().sum::<f64>() / w as f64).collect();
                    continue;
                }
                let m = &masks.masks[block];
                block += 1;
                for chunk in y.chunks_exact_mut(m.len()) {
                    chunk.iter_mut().zip(m).for_each(|(v, &on)| {
                        if !on {
                            *v = 0.0
                        }
                    });
                }
                cur = y;
                c = conv.geom.cout;
            }
            Step::Save => skips.push((cur.clone(), c)),
            Step::Concat => {
                let (skip, cs) = skips.pop().expect("plan pairs every concat with a save");
                cur = concat_channels(&cur, c, &skip, cs, n, plane);
                c += cs;
            }
        }
    }
    out
}

/// Activation region and affine map of the network at `z` (`h` transmit
/// events). Norm layers are folded first.
pub fn extract_pwl(params: &NetworkParams, z: &[f64], h: usize) -> Result<PwlMap> {
    let p = folded(params);
    let in_dim = z.len();
    if in_dim > MAX_DENSE_INPUT {
        return Err(Error::invalid(format!(
            "input dimension {in_dim} is too large for a dense operator (max {MAX_DENSE_INPUT})"
        )));
    }
    let (_, masks) = p.forward_with_masks(z, h)?;
    let out_dim = p.arch.out_channels * h;
    let mut basis = vec![0.0; in_dim * in_dim];
    for i in 0..in_dim {
        basis[i * in_dim + i] = 1.0;
    }
    let cols = replay(&p, &basis, in_dim, h, &masks, false);
    let mut a = vec![0.0; out_dim * in_dim];
    for i in 0..in_dim {
        for o in 0..out_dim {
            a[o * in_dim + i] = cols[i * out_dim + o];
        }
    }
    let offset = if p.arch.bias {
        replay(&p, &vec![0.0; in_dim], 1, h, &masks, true)
    } else {
        vec![0.0; out_dim]
    };
    Ok(PwlMap {
        region_id: region_id(&masks),
        masks,
        effective_linear: a,
        offset,
        in_dim,
        out_dim,
    })
}

/// Region id at `z` without building the operator.
pub fn region_at(params: &NetworkParams, z: &[f64], h: usize) -> Result<String> {
    let (_, masks) = folded(params).forward_with_masks(z, h)?;
    Ok(region_id(&masks))
}

/// `k`-th point of the base-2 van der Corput sequence in `[0, 1)`.
fn van_der_corput(mut k: u64) -> f64 {
    let (mut v, mut denom) = (0.0, 1.0);
    while k > 0 {
        denom *= 2.0;
        v += (k & 1) as f64 / denom;
        k >>= 1;
    }
    v
}

/// Distinct activation regions met at `samples` points of the segment
/// `z_a + alpha (z_b - z_a)`. The points form a low-discrepancy sequence, so
/// a larger `samples` probes a superset of points.
pub fn count_regions(params: &NetworkParams, z_a: &[f64], z_b: &[f64], h: usize, samples: usize) -> Result<usize> {
    if z_a.len() != z_b.len() {
        return Err(Error::dims("segment endpoints differ in length"));
    }
    let p = folded(params);
    let mut seen = std::collections::BTreeSet::new();
    let mut z = vec![0.0; z_a.len()];
    for k in 0..samples as u64 {
        let alpha = van_der_corput(k);
        for ((v, a), b) in z.iter_mut().zip(z_a).zip(z_b) {
            *v = a + alpha * (b - a);
        }
        let (_, masks) = p.forward_with_masks(&z, h)?;
        seen.insert(region_id(&masks));
    }
    Ok(seen.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivityReport {
    pub region_ids: Vec<String>,
    /// `same_region[i][j]`: inputs `i` and `j` share an activation region.
    pub same_region: Vec<Vec<bool>>,
    /// Frobenius norm of each input's effective operator.
    pub operator_norms: Vec<f64>,
}

/// Compares the effective linear beamformers the network applies to a set
/// of inputs.
pub fn adaptivity_probe(params: &NetworkParams, inputs: &[Vec<f64>], h: usize) -> Result<AdaptivityReport> {
    let maps = inputs
        .iter()
        .map(|z| extract_pwl(params, z, h))
        .collect::<Result<Vec<_>>>()?;
    let region_ids: Vec<String> = maps.iter().map(|m| m.region_id.clone()).collect();
    let same_region = region_ids
        .iter()
        .map(|a| region_ids.iter().map(|b| a == b).collect())
        .collect();
    Ok(AdaptivityReport {
        operator_norms: maps.iter().map(|m| m.frobenius_norm()).collect(),
        region_ids,
        same_region,
    })
}

/// Relative residual `|f(z) - (A z + b)| / |f(z)|` of a map at its own
/// probe input.
pub fn exactness_residual(params: &NetworkParams, map: &PwlMap, z: &[f64], h: usize) -> Result<f64> {
    let f = folded(params).forward_batch(z, 1, h, crate::net::Mode::Infer)?;
    let g = map.apply(z);
    let num: f64 = f.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = f.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(if den == 0.0 { num } else { num / den })
}

/// One-hidden-unit network `f(x) = w_out relu(w_in x)` on a scalar input.
pub fn single_hinge(w_in: f64, w_out: f64) -> NetworkParams {
    use crate::net::{ArchSpec, Norm};
    let arch = ArchSpec {
        in_channels: 1,
        out_channels: 1,
        stages: 0,
        convs_per_stage: 1,
        channels: 1,
        norm: Norm::None,
        bias: false,
        te: 1,
        rx: 1,
        input_skip: false,
    };
    let mut p = NetworkParams::zeros(arch).expect("valid architecture");
    p.convs[0].weight.iter_mut().for_each(|v| *v = 0.0);
    p.convs[0].weight[4] = w_in;
    p.convs[1].weight.iter_mut().for_each(|v| *v = 0.0);
    p.convs[1].weight[1] = w_out;
    p
}
