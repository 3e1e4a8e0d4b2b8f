use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::hsidata::Band;
use crate::numerics::{grad_check, Graph, Scalar, Tensor, Var, DEFAULT_STEP};
use crate::pyramid::{decompose, mean_high_frequency, upscale_band, GaussianKernel};
use crate::rng;
use rand::Rng as _;

fn toy() -> HsieConfig {
    HsieConfig {
        k: 4,
        feat: 6,
        n_cab: 2,
        n_dense: 2,
        eca_kernel: 3,
        mask_channels: 4,
        growth: None,
    }
}

fn random_band<T: Scalar>(h: usize, w: usize, seed: u64) -> Band<T> {
    let mut r = rng::stream(seed, "test-band", 0);
    Band::from_fn(h, w, |_, _| T::of(r.random_range(0.0..1.0)))
}

fn random_bands<T: Scalar>(n: usize, h: usize, w: usize, seed: u64) -> Vec<Band<T>> {
    (0..n).map(|i| random_band(h, w, seed * 1000 + i as u64 + 1)).collect()
}

fn conv_count(i: usize, o: usize, s: usize) -> usize {
    o * i * s * s + o
}

fn closed_form_count(c: &HsieConfig) -> usize {
    let (k, f, g, m) = (c.k, c.feat, c.growth(), c.mask_channels);
    let split = c.sfe_split();
    let mut total = 0;
    for (j, s) in [3, 5, 7].into_iter().enumerate() {
        total += conv_count(1, split[j], s) + conv_count(k, split[j], s);
    }
    total += conv_count(2 * f, f, 3);
    let dense: usize = (0..c.n_dense).map(|i| conv_count(f + i * g, g, 3)).sum();
    total += c.n_cab * (dense + conv_count(f + c.n_dense * g, f, 1) + c.eca_kernel);
    total += conv_count((c.n_cab + 1) * f, f, 1) + conv_count(f, 1, 3);
    total += conv_count(3, m, 3) + 6 * conv_count(m, m, 3) + conv_count(m, 1, 3) + conv_count(1, 1, 3);
    total
}

/// Zero network whose final conv passes its input through.
fn identity_params<T: Scalar>(cfg: &HsieConfig) -> HsieParams<T> {
    let mut p = HsieParams::<T>::zeros(cfg).unwrap();
    p.net_mut().output.weight.data_mut()[4] = T::one();
    p
}

#[test]
fn sfe_split_matches_examples() {
    assert_eq!(HsieConfig::full().sfe_split(), [20, 20, 20]);
    assert_eq!(HsieConfig::desk().sfe_split(), [6, 5, 5]);
    assert_eq!(toy().sfe_split(), [2, 2, 2]);
}

proptest! {
    #[test]
    fn sfe_split_sums_to_feat(feat in 3usize..300) {
        let cfg = HsieConfig { feat, ..HsieConfig::full() };
        let s = cfg.sfe_split();
        prop_assert_eq!(s.iter().sum::<usize>(), feat);
        prop_assert!(s[0] >= s[1] && s[1] >= s[2] && s[0] - s[2] <= 1);
    }
}

#[test]
fn config_validation() {
    assert!(HsieConfig::full().validate().is_ok());
    assert!(HsieConfig::desk().validate().is_ok());
    for bad in [
        HsieConfig { feat: 2, ..toy() },
        HsieConfig { k: 0, ..toy() },
        HsieConfig { n_cab: 0, ..toy() },
        HsieConfig { n_dense: 0, ..toy() },
        HsieConfig { mask_channels: 0, ..toy() },
        HsieConfig { growth: Some(0), ..toy() },
        HsieConfig { eca_kernel: 4, ..toy() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Invalid(_))), "{bad:?}");
        assert!(init_model::<f32>(&bad, 0).is_err());
    }
}

#[test]
fn config_json_defaults_and_unknown_fields() {
    let c: HsieConfig = serde_json::from_str(r#"{"feat": 12}"#).unwrap();
    assert_eq!(c, HsieConfig { feat: 12, ..HsieConfig::full() });
    assert_eq!(c.growth(), 12);
    assert!(serde_json::from_str::<HsieConfig>(r#"{"width": 12}"#).is_err());
}

#[test]
fn parameter_count_matches_closed_form() {
    assert_eq!(HsieParams::<f32>::zeros(&HsieConfig::full()).unwrap().param_count(), 1_508_816);
    assert_eq!(HsieParams::<f32>::zeros(&HsieConfig::desk()).unwrap().param_count(), 53_754);
    for cfg in [HsieConfig::full(), HsieConfig::desk(), toy(), HsieConfig { growth: Some(5), ..toy() }] {
        let p = HsieParams::<f32>::zeros(&cfg).unwrap();
        assert_eq!(p.param_count(), closed_form_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn names_are_unique_and_orders_agree() {
    let mut p = init_model::<f32>(&toy(), 3).unwrap();
    let names = p.names();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert_eq!(names[0], "sfe.band3.weight");
    assert!(names.contains(&"cab1.dense1.bias".to_string()));
    assert!(names.contains(&"cab0.eca.weight".to_string()));
    assert!(!names.iter().any(|n| n.contains("eca.bias")));
    assert_eq!(names.last().unwrap(), "output.bias");

    let flat = p.flat();
    let via_mut: Vec<f32> = p.tensors_mut().iter().flat_map(|t| t.data().to_vec()).collect();
    assert_eq!(flat, via_mut);
    let rebuilt = HsieParams::from_flat(&toy(), &flat).unwrap();
    assert_eq!(rebuilt, p);
    assert!(HsieParams::<f32>::from_flat(&toy(), &flat[1..]).is_err());
}

#[test]
fn init_is_deterministic_and_kaiming() {
    let a = init_model::<f32>(&HsieConfig::desk(), 11).unwrap();
    let b = init_model::<f32>(&HsieConfig::desk(), 11).unwrap();
    let c = init_model::<f32>(&HsieConfig::desk(), 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let wide = init_model::<f64>(&HsieConfig::desk(), 11).unwrap();
    assert_eq!(wide.cast::<f32>(), a);

    for (name, t) in a.net().named() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    // Transition of the full config: fan-in 300, 18000 draws.
    let full = init_model::<f64>(&HsieConfig::full(), 1).unwrap();
    let w = full.net().cabs[0].transition.weight.data();
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var / (2.0 / 300.0) - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn check_compatible_names_first_mismatch() {
    let p = HsieParams::<f32>::zeros(&HsieConfig::desk()).unwrap();
    p.check_compatible(&HsieConfig::desk()).unwrap();
    match p.check_compatible(&HsieConfig { k: 9, ..HsieConfig::desk() }) {
        Err(Error::LayerMismatch { layer, expected, found }) => {
            assert_eq!(layer, "sfe.cube3");
            assert_eq!(expected, vec![6, 9, 3, 3]);
            assert_eq!(found, vec![6, 8, 3, 3]);
        }
        other => panic!("{other:?}"),
    }
    match p.check_compatible(&HsieConfig { n_cab: 3, ..HsieConfig::desk() }) {
        Err(Error::LayerMismatch { layer, .. }) => assert_eq!(layer, "cab2.dense0"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn full_config_shapes_via_instrumented_forward() {
    let cfg = HsieConfig::full();
    let p = init_model::<f32>(&cfg, 0).unwrap();
    let band = random_band::<f32>(8, 8, 1);
    let adj = random_bands::<f32>(24, 8, 8, 2);
    let t = hsie_forward_traced(&p, &band, &adj).unwrap();
    assert_eq!(t.f_s.shape(), &[120, 4, 4]);
    assert_eq!(t.f_0.shape(), &[60, 4, 4]);
    assert_eq!(t.dense_concat_widths, vec![300; 4]);
    assert_eq!(t.block_outputs.len(), 4);
    assert_eq!(t.f_d.shape(), &[60, 4, 4]);
    assert_eq!(cfg.fusion_width(), 300);
    assert_eq!(t.inputs.i_l.dims(), (4, 4));
    assert_eq!(t.inputs.c_l_tensor().shape(), &[24, 4, 4]);
    assert_eq!(t.inputs.c_h_tensor().shape(), &[24, 8, 8]);
    assert_eq!(t.i_r.dims(), (4, 4));
    assert_eq!(t.i_mask.dims(), (8, 8));
    assert_eq!(t.i_e.dims(), (8, 8));
    for a in &t.attention {
        assert_eq!(a.shape(), &[60]);
        assert!(a.data().iter().all(|&w| w > 0.0 && w < 1.0));
    }
}

#[test]
fn output_shape_matches_input() {
    let cfg = HsieConfig { k: 2, feat: 6, n_cab: 1, n_dense: 2, ..HsieConfig::full() };
    let p = init_model::<f32>(&cfg, 5).unwrap();
    for (h, w) in [(64, 64), (390, 512), (2, 6)] {
        let band = random_band::<f32>(h, w, 3);
        let adj = random_bands::<f32>(2, h, w, 4);
        let out = hsie_forward(&p, &band, &adj).unwrap();
        assert_eq!(out.dims(), (h, w));
        assert!(out.data().iter().all(|v| v.is_finite() && v.abs() < 1e3));
    }
}

#[test]
fn rejects_wrong_k_and_odd_dims() {
    let p = HsieParams::<f32>::zeros(&toy()).unwrap();
    let band = random_band::<f32>(8, 8, 1);
    assert!(matches!(
        hsie_forward(&p, &band, &random_bands(3, 8, 8, 1)),
        Err(Error::Shape(_))
    ));
    let odd = random_band::<f32>(7, 8, 1);
    assert!(matches!(hsie_forward(&p, &odd, &random_bands(4, 7, 8, 1)), Err(Error::Shape(_))));
    assert!(hsie_forward(&p, &band, &random_bands(4, 6, 8, 1)).is_err());
}

#[test]
fn zero_network_is_pyramid_mean_reconstruction() {
    let cfg = toy();
    let p = identity_params::<f64>(&cfg);
    let band = random_band::<f64>(16, 16, 7);
    let adj = random_bands::<f64>(4, 16, 16, 8);
    let t = hsie_forward_traced(&p, &band, &adj).unwrap();

    assert!(t.f_0.data().iter().all(|&v| v == 0.0));
    for f in &t.block_outputs {
        assert_eq!(f, &t.f_0);
    }
    assert_eq!(t.i_l_hat, t.inputs.i_l);
    assert!(t.i_mask.data().iter().all(|&v| v == 1.0));
    assert_eq!(t.i_h_hat, t.inputs.i_mean);

    // Oracle straight from the pyramid module.
    let own = decompose(&band).unwrap();
    let highs: Vec<_> = adj.iter().map(|b| decompose(b).unwrap().high).collect();
    let mean = mean_high_frequency(&own.high, &highs).unwrap();
    let up = upscale_band(&own.low, &GaussianKernel::default());
    let expected = Band::from_fn(16, 16, |y, x| mean.get(y, x) + up.get(y, x));
    assert!(t.i_e.max_abs_diff(&expected).unwrap() < 1e-12);

    // With identical neighbours the mean detail is the band's own, so the
    // off-state network reproduces its input.
    let same = vec![band.clone(); 4];
    let out = hsie_forward(&p, &band, &same).unwrap();
    assert!(out.max_abs_diff(&band).unwrap() < 1e-12);
}

#[test]
fn zero_cab_is_identity_and_zero_mean_kills_detail() {
    let cfg = toy();
    let mut p = init_model::<f64>(&cfg, 4).unwrap();
    for cab in &mut p.net_mut().cabs {
        for t in cab.dense.iter_mut().flat_map(|d| [&mut d.weight, &mut d.bias]) {
            t.data_mut().fill(0.0);
        }
        cab.transition.weight.data_mut().fill(0.0);
        cab.transition.bias.data_mut().fill(0.0);
        cab.eca.weight.data_mut().fill(0.0);
    }
    let band = random_band::<f64>(8, 8, 1);
    let adj = random_bands::<f64>(4, 8, 8, 2);
    let t = hsie_forward_traced(&p, &band, &adj).unwrap();
    for f in &t.block_outputs {
        assert_eq!(f, &t.f_0);
    }
    for a in &t.attention {
        assert!(a.data().iter().all(|&w| w == 0.5));
    }

    let mut g = Graph::<f64>::new();
    let net = register(&mut g, &p, false);
    let zero = g.constant(Tensor::zeros(&[1, 8, 8]));
    let i_l = g.constant(t.inputs.i_l.to_tensor());
    let (_, i_h_hat) = refine_high(&mut g, &net, zero, i_l, i_l).unwrap();
    assert!(g.value(i_h_hat).data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_deterministic() {
    let p = init_model::<f32>(&HsieConfig::desk(), 9).unwrap();
    let band = random_band::<f32>(32, 32, 1);
    let adj = random_bands::<f32>(8, 32, 32, 2);
    let a = hsie_forward(&p, &band, &adj).unwrap();
    let b = hsie_forward(&p, &band, &adj).unwrap();
    assert_eq!(a, b);
}

/// Rebuilds a `Net<Var>` from graph inputs in canonical order.
fn net_from_vars(cfg: &HsieConfig, vars: &[Var]) -> Net<Var> {
    let mut it = vars.iter().copied();
    crate::model::Net::shapes(cfg).map(&mut |_, _| it.next().expect("one var per tensor"))
}

#[test]
fn low_branch_recon_gradient() {
    let cfg = toy();
    let p = init_model::<f64>(&cfg, 21).unwrap();
    let inputs = ModelInputs::prepare(&random_band::<f64>(8, 8, 1), &random_bands(4, 8, 8, 2)).unwrap();
    let target = random_band::<f64>(4, 4, 9).to_tensor();

    // F_D is held fixed; only the H_R weight and bias vary.
    let mut g = Graph::new();
    let net = register(&mut g, &p, false);
    let v = forward_graph(&mut g, &net, &inputs).unwrap();
    let f_d = g.value(v.f_d).clone();
    let i_l = inputs.i_l.to_tensor();

    let recon = &p.net().recon;
    let report = grad_check(&[recon.weight.clone(), recon.bias.clone()], DEFAULT_STEP, |g, vars| {
        let mut net = net.clone();
        net.recon.weight = vars[0];
        net.recon.bias = vars[1];
        let f_d = g.constant(f_d.clone());
        let i_l = g.constant(i_l.clone());
        let (_, i_l_hat) = reconstruct_low(g, &net, f_d, i_l)?;
        let t = g.constant(target.clone());
        g.l1_loss(i_l_hat, t)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn mask_gradient_on_8x8() {
    let cfg = toy();
    let p = init_model::<f64>(&cfg, 22).unwrap();
    let inputs = ModelInputs::prepare(&random_band::<f64>(8, 8, 3), &random_bands(4, 8, 8, 4)).unwrap();
    let mut refine: Vec<Tensor<f64>> = vec![p.net().mask_head.weight.clone(), p.net().mask_head.bias.clone()];
    for b in &p.net().mask_blocks {
        refine.extend([b.conv1.weight.clone(), b.conv1.bias.clone(), b.conv2.weight.clone(), b.conv2.bias.clone()]);
    }
    refine.extend([p.net().mask_tail.weight.clone(), p.net().mask_tail.bias.clone()]);

    let report = grad_check(&refine, DEFAULT_STEP, |g, vars| {
        let mut net = Net::shapes(&cfg).map(&mut |_, s| g.constant(Tensor::zeros(s)));
        net.mask_head.weight = vars[0];
        net.mask_head.bias = vars[1];
        for (j, b) in net.mask_blocks.iter_mut().enumerate() {
            let o = 2 + 4 * j;
            b.conv1.weight = vars[o];
            b.conv1.bias = vars[o + 1];
            b.conv2.weight = vars[o + 2];
            b.conv2.bias = vars[o + 3];
        }
        net.mask_tail.weight = vars[14];
        net.mask_tail.bias = vars[15];
        let i_mean = g.constant(inputs.i_mean.to_tensor());
        let i_l = g.constant(inputs.i_l.to_tensor());
        let (mask, _) = refine_high(g, &net, i_mean, i_l, i_l)?;
        Ok(mask)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn full_model_gradient_on_toy_config() {
    let cfg = toy();
    let p = init_model::<f64>(&cfg, 23).unwrap();
    let inputs = ModelInputs::prepare(&random_band::<f64>(16, 16, 5), &random_bands(4, 16, 16, 6)).unwrap();
    let target = random_band::<f64>(16, 16, 10).to_tensor();
    let tensors: Vec<Tensor<f64>> = p.tensors().into_iter().cloned().collect();

    let report = grad_check(&tensors, DEFAULT_STEP, |g, vars| {
        let net = net_from_vars(&cfg, vars);
        let v = forward_graph(g, &net, &inputs)?;
        let t = g.constant(target.clone());
        g.l1_loss(v.i_e, t)
    })
    .unwrap();
    assert_eq!(report.checked, closed_form_count(&cfg));
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn every_parameter_group_receives_gradient() {
    let cfg = toy();
    let p = init_model::<f64>(&cfg, 24).unwrap();
    let inputs = ModelInputs::prepare(&random_band::<f64>(16, 16, 5), &random_bands(4, 16, 16, 6)).unwrap();
    let mut g = Graph::new();
    let net = register(&mut g, &p, true);
    let v = forward_graph(&mut g, &net, &inputs).unwrap();
    let t = g.constant(random_band::<f64>(16, 16, 11).to_tensor());
    let loss = g.l1_loss(v.i_e, t).unwrap();
    let grads = g.backward(loss).unwrap();
    for ((name, var), _) in net.named().into_iter().zip(p.tensors()) {
        if name.ends_with(".weight") {
            let gr = grads.get(*var).unwrap_or_else(|| panic!("no gradient for {name}"));
            assert!(gr.data().iter().any(|&x| x != 0.0), "dead gradient for {name}");
        }
    }
}
