use crate::error::{shape_err, Result};
use crate::hsidata::Band;
use crate::numerics::{Graph, Scalar, Tensor, Var};
use crate::pyramid::{decompose_with, mean_high_frequency, GaussianKernel};

use super::params::{Cab, HsieParams, Net};

/// Pyramid decomposition of a band and its spectral neighbours. Computed
/// outside the graph: it has no learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs<T> {
    pub kernel: GaussianKernel,
    /// Detail layer of the band, full resolution.
    pub i_h: Band<T>,
    /// Base layer of the band, half resolution.
    pub i_l: Band<T>,
    pub c_h: Vec<Band<T>>,
    pub c_l: Vec<Band<T>>,
    /// Mean of `i_h` and every `c_h`.
    pub i_mean: Band<T>,
}

impl<T: Scalar> ModelInputs<T> {
    pub fn prepare(band: &Band<T>, adjacent: &[Band<T>]) -> Result<Self> {
        Self::prepare_with(band, adjacent, &GaussianKernel::default())
    }

    pub fn prepare_with(band: &Band<T>, adjacent: &[Band<T>], kernel: &GaussianKernel) -> Result<Self> {
        if let Some(b) = adjacent.iter().find(|b| b.dims() != band.dims()) {
            return Err(shape_err!(
                "adjacent band {:?} does not match target band {:?}",
                b.dims(),
                band.dims()
            ));
        }
        let own = decompose_with(band, kernel)?;
        let mut c_h = Vec::with_capacity(adjacent.len());
        let mut c_l = Vec::with_capacity(adjacent.len());
        for b in adjacent {
            let p = decompose_with(b, kernel)?;
            c_h.push(p.high);
            c_l.push(p.low);
        }
        let i_mean = mean_high_frequency(&own.high, &c_h)?;
        Ok(Self {
            kernel: *kernel,
            i_h: own.high,
            i_l: own.low,
            c_h,
            c_l,
            i_mean,
        })
    }

    pub fn k(&self) -> usize {
        self.c_l.len()
    }

    /// Adjacent base layers stacked as `[k, H/2, W/2]`.
    pub fn c_l_tensor(&self) -> Tensor<T> {
        stack(&self.c_l)
    }

    pub fn c_h_tensor(&self) -> Tensor<T> {
        stack(&self.c_h)
    }
}

fn stack<T: Scalar>(bands: &[Band<T>]) -> Tensor<T> {
    let (h, w) = bands.first().map_or((0, 0), |b| b.dims());
    let data = bands.iter().flat_map(|b| b.data().iter().copied()).collect();
    Tensor::new(vec![bands.len(), h, w], data).expect("bands share dimensions")
}

/// Registers every parameter in `g`; trainable parameters receive gradients.
pub fn register<T: Scalar>(g: &mut Graph<T>, params: &HsieParams<T>, trainable: bool) -> Net<Var> {
    params.net().map(&mut |_, t| {
        if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        }
    })
}

fn conv<T: Scalar>(g: &mut Graph<T>, x: Var, layer: &crate::numerics::Conv2d<Var>) -> Result<Var> {
    g.conv2d(x, layer.weight, Some(layer.bias))
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, x: Var, layer: &crate::numerics::Conv2d<Var>) -> Result<Var> {
    let y = conv(g, x, layer)?;
    Ok(g.relu(y))
}

/// Shallow feature extraction. Returns `(F_S, F_0)`: the rectified `2 * feat`
/// channel concatenation of the multi-scale convolutions on the band and on
/// its neighbours, and its 3x3 merge.
pub fn shallow_features<T: Scalar>(g: &mut Graph<T>, net: &Net<Var>, i_l: Var, c_l: Var) -> Result<(Var, Var)> {
    let mut parts = Vec::with_capacity(6);
    for layer in &net.sfe_band {
        parts.push(conv(g, i_l, layer)?);
    }
    for layer in &net.sfe_cube {
        parts.push(conv(g, c_l, layer)?);
    }
    let f_s = g.concat(&parts)?;
    let f_s = g.relu(f_s);
    let f_0 = conv_relu(g, f_s, &net.sfe_merge)?;
    Ok((f_s, f_0))
}

/// Intermediate handles of one channel attention block.
#[derive(Debug, Clone, Copy)]
pub struct CabVars {
    /// Input plus every dense layer output, `feat + n_dense * growth` channels.
    pub dense_concat: Var,
    pub transition: Var,
    /// Per-channel attention weights in `(0, 1)`.
    pub attention: Var,
    pub out: Var,
}

/// Dense convolutions, 1x1 transition, efficient channel attention and a
/// residual connection.
pub fn channel_attention_block<T: Scalar>(g: &mut Graph<T>, cab: &Cab<Var>, x: Var) -> Result<CabVars> {
    let mut features = vec![x];
    for layer in &cab.dense {
        let input = g.concat(&features)?;
        features.push(conv_relu(g, input, layer)?);
    }
    let dense_concat = g.concat(&features)?;
    let transition = conv(g, dense_concat, &cab.transition)?;
    let pooled = g.global_avg_pool(transition)?;
    let logits = g.conv1d(pooled, cab.eca.weight, cab.eca.bias)?;
    let attention = g.sigmoid(logits);
    let scaled = g.channel_mul(transition, attention)?;
    let out = g.add(x, scaled)?;
    Ok(CabVars {
        dense_concat,
        transition,
        attention,
        out,
    })
}

/// Chains the attention blocks and fuses `F_0..F_N` with a 1x1 conv.
/// Returns the per-block handles and `F_D`.
pub fn enlighten<T: Scalar>(g: &mut Graph<T>, net: &Net<Var>, f_0: Var) -> Result<(Vec<CabVars>, Var)> {
    let mut blocks = Vec::with_capacity(net.cabs.len());
    let mut outputs = vec![f_0];
    let mut x = f_0;
    for cab in &net.cabs {
        let b = channel_attention_block(g, cab, x)?;
        x = b.out;
        outputs.push(x);
        blocks.push(b);
    }
    let all = g.concat(&outputs)?;
    let f_d = conv(g, all, &net.fusion)?;
    Ok((blocks, f_d))
}

/// Returns `(I_R, Î_L)` with `Î_L = I_R + I_L`.
pub fn reconstruct_low<T: Scalar>(g: &mut Graph<T>, net: &Net<Var>, f_d: Var, i_l: Var) -> Result<(Var, Var)> {
    let i_r = conv(g, f_d, &net.recon)?;
    let i_l_hat = g.add(i_r, i_l)?;
    Ok((i_r, i_l_hat))
}

/// Predicts the multiplicative mask from the mean detail layer and both base
/// layers (bilinearly upsampled). Returns `(I_Mask, Î_H)`.
pub fn refine_high<T: Scalar>(
    g: &mut Graph<T>,
    net: &Net<Var>,
    i_mean: Var,
    i_l: Var,
    i_l_hat: Var,
) -> Result<(Var, Var)> {
    let up_l = g.bilinear_upsample_x2(i_l)?;
    let up_l_hat = g.bilinear_upsample_x2(i_l_hat)?;
    let input = g.concat(&[i_mean, up_l, up_l_hat])?;
    let mut h = conv(g, input, &net.mask_head)?;
    for block in &net.mask_blocks {
        let r = conv_relu(g, h, &block.conv1)?;
        let r = conv(g, r, &block.conv2)?;
        h = g.add(h, r)?;
    }
    let raw = conv(g, h, &net.mask_tail)?;
    let i_mask = g.add_scalar(raw, T::one());
    let i_h_hat = g.mul(i_mean, i_mask)?;
    Ok((i_mask, i_h_hat))
}

/// Graph handles of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub i_l: Var,
    pub c_l: Var,
    pub i_mean: Var,
    pub f_s: Var,
    pub f_0: Var,
    pub blocks: Vec<CabVars>,
    pub f_d: Var,
    pub i_r: Var,
    pub i_l_hat: Var,
    pub i_mask: Var,
    pub i_h_hat: Var,
    pub i_e: Var,
}

/// Builds the network on prepared inputs. `net` must have been registered in
/// the same graph.
pub fn forward_graph<T: Scalar>(g: &mut Graph<T>, net: &Net<Var>, inputs: &ModelInputs<T>) -> Result<ForwardVars> {
    let i_l = g.constant(inputs.i_l.to_tensor());
    let c_l = g.constant(inputs.c_l_tensor());
    let i_mean = g.constant(inputs.i_mean.to_tensor());
    let (f_s, f_0) = shallow_features(g, net, i_l, c_l)?;
    let (blocks, f_d) = enlighten(g, net, f_0)?;
    let (i_r, i_l_hat) = reconstruct_low(g, net, f_d, i_l)?;
    let (i_mask, i_h_hat) = refine_high(g, net, i_mean, i_l, i_l_hat)?;
    let up = g.laplacian_upscale(i_l_hat, &inputs.kernel)?;
    let merged = g.add(i_h_hat, up)?;
    let i_e = conv(g, merged, &net.output)?;
    Ok(ForwardVars {
        i_l,
        c_l,
        i_mean,
        f_s,
        f_0,
        blocks,
        f_d,
        i_r,
        i_l_hat,
        i_mask,
        i_h_hat,
        i_e,
    })
}

fn check_inputs<T: Scalar>(params: &HsieParams<T>, band: &Band<T>, adjacent: &[Band<T>]) -> Result<()> {
    let k = params.config().k;
    if adjacent.len() != k {
        return Err(shape_err!("model expects {k} adjacent bands, got {}", adjacent.len()));
    }
    let (h, w) = band.dims();
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("band must have even dimensions of at least 2, got {h}x{w}"));
    }
    Ok(())
}

/// Enhances one band given its `k` spectral neighbours. The output is not
/// clamped.
pub fn hsie_forward<T: Scalar>(params: &HsieParams<T>, band: &Band<T>, adjacent: &[Band<T>]) -> Result<Band<T>> {
    check_inputs(params, band, adjacent)?;
    let inputs = ModelInputs::prepare(band, adjacent)?;
    let mut g = Graph::new();
    let net = register(&mut g, params, false);
    let vars = forward_graph(&mut g, &net, &inputs)?;
    Band::from_tensor(g.value(vars.i_e))
}

/// Every intermediate map of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub inputs: ModelInputs<T>,
    pub f_s: Tensor<T>,
    pub f_0: Tensor<T>,
    /// Channel count of each block's dense concatenation.
    pub dense_concat_widths: Vec<usize>,
    pub attention: Vec<Tensor<T>>,
    /// `F_1..F_N`.
    pub block_outputs: Vec<Tensor<T>>,
    pub f_d: Tensor<T>,
    pub i_r: Band<T>,
    pub i_l_hat: Band<T>,
    pub i_mask: Band<T>,
    pub i_h_hat: Band<T>,
    pub i_e: Band<T>,
}

pub fn hsie_forward_traced<T: Scalar>(
    params: &HsieParams<T>,
    band: &Band<T>,
    adjacent: &[Band<T>],
) -> Result<ForwardTrace<T>> {
    check_inputs(params, band, adjacent)?;
    let inputs = ModelInputs::prepare(band, adjacent)?;
    let mut g = Graph::new();
    let net = register(&mut g, params, false);
    let v = forward_graph(&mut g, &net, &inputs)?;
    let band_of = |var: Var| Band::from_tensor(g.value(var));
    Ok(ForwardTrace {
        f_s: g.value(v.f_s).clone(),
        f_0: g.value(v.f_0).clone(),
        dense_concat_widths: v.blocks.iter().map(|b| g.value(b.dense_concat).shape()[0]).collect(),
        attention: v.blocks.iter().map(|b| g.value(b.attention).clone()).collect(),
        block_outputs: v.blocks.iter().map(|b| g.value(b.out).clone()).collect(),
        f_d: g.value(v.f_d).clone(),
        i_r: band_of(v.i_r)?,
        i_l_hat: band_of(v.i_l_hat)?,
        i_mask: band_of(v.i_mask)?,
        i_h_hat: band_of(v.i_h_hat)?,
        i_e: band_of(v.i_e)?,
        inputs,
    })
}
