use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Conv1d, Conv2d, Scalar, Tensor};
use crate::rng;

use rand_distr::{Distribution, Normal};

/// Network hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HsieConfig {
    /// Number of adjacent bands fed as spectral context.
    pub k: usize,
    /// Feature width of the illumination branch.
    pub feat: usize,
    /// Channel attention blocks in the enlightening module.
    pub n_cab: usize,
    /// Densely connected conv layers per block.
    pub n_dense: usize,
    pub eca_kernel: usize,
    /// Width of the high-frequency mask network.
    pub mask_channels: usize,
    /// Output channels of each dense layer; `None` means `feat`.
    pub growth: Option<usize>,
}

impl Default for HsieConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl HsieConfig {
    /// Full-size configuration: 24 adjacent bands, width 60, 4 blocks of 4
    /// dense layers.
    pub fn full() -> Self {
        Self {
            k: 24,
            feat: 60,
            n_cab: 4,
            n_dense: 4,
            eca_kernel: 3,
            mask_channels: 16,
            growth: None,
        }
    }

    /// Workstation-scale configuration used by default for training.
    pub fn desk() -> Self {
        Self {
            k: 8,
            feat: 16,
            n_cab: 2,
            n_dense: 3,
            ..Self::full()
        }
    }

    pub fn growth(&self) -> usize {
        self.growth.unwrap_or(self.feat)
    }

    /// Same configuration with the growth default made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            growth: Some(self.growth()),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feat < 3 {
            return Err(invalid!("feat must be at least 3 (three parallel kernels), got {}", self.feat));
        }
        for (name, v) in [
            ("k", self.k),
            ("n_cab", self.n_cab),
            ("n_dense", self.n_dense),
            ("mask_channels", self.mask_channels),
            ("growth", self.growth()),
        ] {
            if v == 0 {
                return Err(invalid!("{name} must be at least 1"));
            }
        }
        if self.eca_kernel.is_multiple_of(2) {
            return Err(invalid!("eca_kernel must be odd, got {}", self.eca_kernel));
        }
        Ok(())
    }

    /// Output channels of the 3x3, 5x5 and 7x7 shallow convolutions: `feat`
    /// split as evenly as possible, larger shares first.
    pub fn sfe_split(&self) -> [usize; 3] {
        let (q, r) = (self.feat / 3, self.feat % 3);
        [q + usize::from(r > 0), q + usize::from(r > 1), q]
    }

    /// Channel count entering each block's transition layer.
    pub fn dense_concat_width(&self) -> usize {
        self.feat + self.n_dense * self.growth()
    }

    pub fn fusion_width(&self) -> usize {
        (self.n_cab + 1) * self.feat
    }
}

pub const SFE_KERNELS: [usize; 3] = [3, 5, 7];
pub const MASK_BLOCKS: usize = 3;

/// Channel attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct Cab<P> {
    pub dense: Vec<Conv2d<P>>,
    pub transition: Conv2d<P>,
    pub eca: Conv1d<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<P> {
    pub conv1: Conv2d<P>,
    pub conv2: Conv2d<P>,
}

/// Every learnable layer of the network. `P` is the per-tensor slot: a
/// [`Tensor`] for stored weights, a graph handle during a forward pass, a
/// shape while building.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<P> {
    /// 3x3, 5x5, 7x7 on the band's low-frequency base.
    pub sfe_band: [Conv2d<P>; 3],
    /// 3x3, 5x5, 7x7 on the adjacent bands' bases.
    pub sfe_cube: [Conv2d<P>; 3],
    /// 3x3 halving `2 * feat` to `feat`.
    pub sfe_merge: Conv2d<P>,
    pub cabs: Vec<Cab<P>>,
    /// 1x1 fusion of all block outputs.
    pub fusion: Conv2d<P>,
    /// 3x3 residual head of the low-frequency branch.
    pub recon: Conv2d<P>,
    pub mask_head: Conv2d<P>,
    pub mask_blocks: Vec<ResBlock<P>>,
    pub mask_tail: Conv2d<P>,
    /// 3x3 refinement of the reconstructed band.
    pub output: Conv2d<P>,
}

fn map_conv<'a, P, Q>(c: &'a Conv2d<P>, name: &str, f: &mut dyn FnMut(&str, &'a P) -> Q) -> Conv2d<Q> {
    Conv2d {
        weight: f(&format!("{name}.weight"), &c.weight),
        bias: f(&format!("{name}.bias"), &c.bias),
    }
}

fn visit_conv_mut<'a, P>(c: &'a mut Conv2d<P>, name: &str, f: &mut dyn FnMut(&str, &'a mut P)) {
    f(&format!("{name}.weight"), &mut c.weight);
    f(&format!("{name}.bias"), &mut c.bias);
}

fn kernel_name(prefix: &str, i: usize) -> String {
    format!("{prefix}{}", SFE_KERNELS[i])
}

impl<P> Net<P> {
    /// Maps every slot in the canonical order (the serialization order).
    pub fn map<'a, Q>(&'a self, f: &mut dyn FnMut(&str, &'a P) -> Q) -> Net<Q> {
        let sfe_band = [0, 1, 2].map(|i| map_conv(&self.sfe_band[i], &kernel_name("sfe.band", i), f));
        let sfe_cube = [0, 1, 2].map(|i| map_conv(&self.sfe_cube[i], &kernel_name("sfe.cube", i), f));
        let sfe_merge = map_conv(&self.sfe_merge, "sfe.merge", f);
        let cabs = self
            .cabs
            .iter()
            .enumerate()
            .map(|(n, cab)| Cab {
                dense: cab
                    .dense
                    .iter()
                    .enumerate()
                    .map(|(c, d)| map_conv(d, &format!("cab{n}.dense{c}"), f))
                    .collect(),
                transition: map_conv(&cab.transition, &format!("cab{n}.transition"), f),
                eca: Conv1d {
                    weight: f(&format!("cab{n}.eca.weight"), &cab.eca.weight),
                    bias: cab.eca.bias.as_ref().map(|b| f(&format!("cab{n}.eca.bias"), b)),
                },
            })
            .collect();
        let fusion = map_conv(&self.fusion, "fusion", f);
        let recon = map_conv(&self.recon, "recon", f);
        let mask_head = map_conv(&self.mask_head, "mask.head", f);
        let mask_blocks = self
            .mask_blocks
            .iter()
            .enumerate()
            .map(|(j, b)| ResBlock {
                conv1: map_conv(&b.conv1, &format!("mask.block{j}.conv1"), f),
                conv2: map_conv(&b.conv2, &format!("mask.block{j}.conv2"), f),
            })
            .collect();
        let mask_tail = map_conv(&self.mask_tail, "mask.tail", f);
        let output = map_conv(&self.output, "output", f);
        Net {
            sfe_band,
            sfe_cube,
            sfe_merge,
            cabs,
            fusion,
            recon,
            mask_head,
            mask_blocks,
            mask_tail,
            output,
        }
    }

    /// Mutable visit in the same order as [`Net::map`].
    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut P)) {
        for (i, c) in self.sfe_band.iter_mut().enumerate() {
            visit_conv_mut(c, &kernel_name("sfe.band", i), f);
        }
        for (i, c) in self.sfe_cube.iter_mut().enumerate() {
            visit_conv_mut(c, &kernel_name("sfe.cube", i), f);
        }
        visit_conv_mut(&mut self.sfe_merge, "sfe.merge", f);
        for (n, cab) in self.cabs.iter_mut().enumerate() {
            for (c, d) in cab.dense.iter_mut().enumerate() {
                visit_conv_mut(d, &format!("cab{n}.dense{c}"), f);
            }
            visit_conv_mut(&mut cab.transition, &format!("cab{n}.transition"), f);
            f(&format!("cab{n}.eca.weight"), &mut cab.eca.weight);
            if let Some(b) = &mut cab.eca.bias {
                f(&format!("cab{n}.eca.bias"), b);
            }
        }
        visit_conv_mut(&mut self.fusion, "fusion", f);
        visit_conv_mut(&mut self.recon, "recon", f);
        visit_conv_mut(&mut self.mask_head, "mask.head", f);
        for (j, b) in self.mask_blocks.iter_mut().enumerate() {
            visit_conv_mut(&mut b.conv1, &format!("mask.block{j}.conv1"), f);
            visit_conv_mut(&mut b.conv2, &format!("mask.block{j}.conv2"), f);
        }
        visit_conv_mut(&mut self.mask_tail, "mask.tail", f);
        visit_conv_mut(&mut self.output, "output", f);
    }

    /// `(name, slot)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map(&mut |name, p| out.push((name.to_string(), p)));
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, p| out.push(p));
        out
    }
}

fn conv_shape(cin: usize, cout: usize, k: usize) -> Conv2d<Vec<usize>> {
    Conv2d {
        weight: vec![cout, cin, k, k],
        bias: vec![cout],
    }
}

impl Net<Vec<usize>> {
    /// Parameter shapes implied by a configuration.
    pub fn shapes(cfg: &HsieConfig) -> Self {
        let split = cfg.sfe_split();
        let (feat, growth, mc) = (cfg.feat, cfg.growth(), cfg.mask_channels);
        Net {
            sfe_band: [0, 1, 2].map(|i| conv_shape(1, split[i], SFE_KERNELS[i])),
            sfe_cube: [0, 1, 2].map(|i| conv_shape(cfg.k, split[i], SFE_KERNELS[i])),
            sfe_merge: conv_shape(2 * feat, feat, 3),
            cabs: (0..cfg.n_cab)
                .map(|_| Cab {
                    dense: (0..cfg.n_dense).map(|c| conv_shape(feat + c * growth, growth, 3)).collect(),
                    transition: conv_shape(cfg.dense_concat_width(), feat, 1),
                    eca: Conv1d {
                        weight: vec![1, 1, cfg.eca_kernel],
                        bias: None,
                    },
                })
                .collect(),
            fusion: conv_shape(cfg.fusion_width(), feat, 1),
            recon: conv_shape(feat, 1, 3),
            mask_head: conv_shape(3, mc, 3),
            mask_blocks: (0..MASK_BLOCKS)
                .map(|_| ResBlock {
                    conv1: conv_shape(mc, mc, 3),
                    conv2: conv_shape(mc, mc, 3),
                })
                .collect(),
            mask_tail: conv_shape(mc, 1, 3),
            output: conv_shape(1, 1, 3),
        }
    }
}

/// Learnable weights of the network together with the configuration that
/// determines their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct HsieParams<T> {
    config: HsieConfig,
    net: Net<Tensor<T>>,
}

impl<T: Scalar> HsieParams<T> {
    pub fn zeros(config: &HsieConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.resolved(),
            net: Net::shapes(config).map(&mut |_, s| Tensor::zeros(s)),
        })
    }

    /// Assembles parameters from a flat canonical-order value list.
    pub fn from_flat(config: &HsieConfig, values: &[T]) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let total = params.param_count();
        if values.len() != total {
            return Err(invalid!(
                "configuration needs {total} parameter values, got {}",
                values.len()
            ));
        }
        let mut offset = 0;
        for t in params.net.slots_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(params)
    }

    pub fn config(&self) -> &HsieConfig {
        &self.config
    }

    pub fn net(&self) -> &Net<Tensor<T>> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net<Tensor<T>> {
        &mut self.net
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.net.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.slots_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.net.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> HsieParams<U> {
        HsieParams {
            config: self.config,
            net: self.net.map(&mut |_, t| t.cast()),
        }
    }

    /// Checks that `expected` yields exactly these parameter shapes; the error
    /// names the first layer that differs.
    pub fn check_compatible(&self, expected: &HsieConfig) -> Result<()> {
        let want = Net::shapes(expected);
        let want = want.named();
        let have = self.net.named();
        for ((name, shape), (_, t)) in want.iter().zip(&have) {
            if shape.as_slice() != t.shape() {
                return Err(Error::LayerMismatch {
                    layer: layer_of(name),
                    expected: (*shape).clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if want.len() != have.len() {
            let (name, shape, found) = if want.len() > have.len() {
                let (n, s) = &want[have.len()];
                (n.clone(), (*s).clone(), vec![])
            } else {
                let (n, t) = &have[want.len()];
                (n.clone(), vec![], t.shape().to_vec())
            };
            return Err(Error::LayerMismatch {
                layer: layer_of(&name),
                expected: shape,
                found,
            });
        }
        Ok(())
    }
}

fn layer_of(param_name: &str) -> String {
    param_name
        .rsplit_once('.')
        .map(|(l, _)| l.to_string())
        .unwrap_or_else(|| param_name.to_string())
}

/// Kaiming-normal initialization of every weight (fan-in mode, `N(0, 2 /
/// fan_in)`), zero biases. Deterministic per seed and independent of `T`
/// up to rounding.
pub fn init_model<T: Scalar>(config: &HsieConfig, seed: u64) -> Result<HsieParams<T>> {
    config.validate()?;
    let mut rng = rng::stream(seed, "init", 0);
    let net = Net::shapes(config).map(&mut |name, shape| {
        if name.ends_with(".bias") {
            return Tensor::zeros(shape);
        }
        let fan_in: usize = shape[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
        Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng)))
    });
    Ok(HsieParams {
        config: config.resolved(),
        net,
    })
}
