use super::*;
use crate::selfcheck::{check_network_gradients, randomize_biases, random_tensor, seeded};
use crate::tensor::{Graph, Shape, Tensor};
use proptest::prelude::*;

fn image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    random_tensor(&mut seeded(seed), Shape::new(1, 3, h, w), 0.0, 1.0).cast()
}

fn toy() -> MsrNet<f32> {
    MsrNet::new(NetworkConfig::toy(), Task::Region, 11).unwrap()
}

#[test]
fn toy_config_channels() {
    let c = NetworkConfig::toy();
    let stages: Vec<usize> = c.backbone.stages.iter().map(|s| c.ch(s.channels)).collect();
    assert_eq!(stages, [8, 16, 32, 64, 64]);
    assert_eq!(c.ch(c.lateral_channels), 8);
    assert_eq!(c.ch(c.attention_channels), 64);
    assert_eq!(c.backbone.reduction(), 8);
}

#[test]
fn backbone_config_invariants_are_enforced() {
    let mut c = BackboneConfig::vgg16();
    c.stride_one_pools = vec![2, 3];
    assert!(c.validate().is_err());
    let mut c = BackboneConfig::vgg16();
    c.atrous_rate_after_penultimate_pool = 1;
    assert!(c.validate().is_err());
    let mut c = BackboneConfig::vgg16();
    c.stages.pop();
    assert!(c.validate().is_err());
}

#[test]
fn refinement_modes_follow_pool_strides() {
    let c = NetworkConfig::toy();
    let modes: Vec<_> = (0..5).map(|i| c.refinement_mode(i)).collect();
    use RefinementMode::*;
    assert_eq!(modes, [Merge, Merge, MergeUpsample, MergeUpsample, MergeUpsample]);
}

#[test]
fn backbone_resolutions() {
    let net = toy();
    let mut g = Graph::new();
    let x = g.input(image(1, 64, 64)).unwrap();
    let out = net.backbone_forward(&mut g, x).unwrap();
    assert_eq!((g.shape(out.top).h, g.shape(out.top).w), (8, 8));
    let lat: Vec<usize> = out.laterals.iter().map(|&v| g.shape(v).h).collect();
    assert_eq!(lat, [32, 16, 8, 8, 8]);

    let x = g.input(image(2, 320, 320)).unwrap();
    let out = net.backbone_forward(&mut g, x).unwrap();
    assert_eq!((g.shape(out.top).h, g.shape(out.top).w), (40, 40));
}

#[test]
fn backbone_rejects_indivisible_input() {
    let net = toy();
    let mut g = Graph::new();
    let x = g.input(image(1, 60, 64)).unwrap();
    let err = net.backbone_forward(&mut g, x).err().unwrap();
    assert!(err.to_string().contains("pad"));
}

#[test]
fn refinement_module_shapes() {
    let net = toy();
    let c = net.config().ch(8 * 8);
    let mut g = Graph::new();
    let td = g.input(Tensor::full(Shape::new(1, c, 8, 8), 0.1f32)).unwrap();
    let bu = g.input(Tensor::full(Shape::new(1, 8, 8, 8), 0.2f32)).unwrap();
    let a = net.refine(&mut g, 1, td, bu).unwrap();
    assert_eq!((g.shape(a).h, g.shape(a).w), (8, 8));
    let td = g.input(Tensor::full(Shape::new(1, 8, 16, 16), 0.1f32)).unwrap();
    let bu = g.input(Tensor::full(Shape::new(1, 8, 16, 16), 0.2f32)).unwrap();
    let b = net.refine(&mut g, 3, td, bu).unwrap();
    assert_eq!((g.shape(b).c, g.shape(b).h, g.shape(b).w), (8, 32, 32));
    let bad = g.input(Tensor::full(Shape::new(1, 8, 8, 8), 0.2f32)).unwrap();
    assert!(net.refine(&mut g, 3, td, bad).is_err());
}

#[test]
fn stream_restores_input_resolution() {
    let net = toy();
    let mut g = Graph::new();
    let x = g.input(image(3, 160, 160)).unwrap();
    let out = net.stream_forward(&mut g, x).unwrap();
    let s = g.shape(out.probs);
    assert_eq!((s.c, s.h, s.w), (2, 160, 160));
    let p = g.value(out.probs);
    for i in 0..s.plane() {
        assert!((p.plane(0, 0)[i] + p.plane(0, 1)[i] - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn attention_is_uniform_for_identical_features_and_zero_output_layer() {
    let mut net = toy();
    let [_, (w2, b2)] = net.attention_params().unwrap();
    net.params_mut().get_mut(w2).value.fill(0.0);
    net.params_mut().get_mut(b2).value.fill(0.0);
    let mut g = Graph::new();
    let f = random_tensor(&mut seeded(5), Shape::new(1, 8, 12, 12), 0.0, 1.0).cast::<f32>();
    let f = g.input(f).unwrap();
    let w = net.attention_forward(&mut g, &[f, f, f]).unwrap();
    assert!(g.value(w).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
    assert!(net.attention_forward(&mut g, &[f, f]).is_err());
}

#[test]
fn attention_gradients_reach_both_layers() {
    let net: MsrNet<f64> = MsrNet::new(NetworkConfig::uniform(2), Task::Region, 3).unwrap();
    let img: Tensor<f64> = random_tensor(&mut seeded(4), Shape::new(1, 3, 16, 16), 0.0, 1.0);
    let target = Tensor::from_vec(
        Shape::new(1, 1, 16, 16),
        (0..256).map(|i| ((i % 16) > 7) as u8 as f64).collect(),
    )
    .unwrap();
    let mut store = net.params().clone();
    let mut g = Graph::new();
    let out = net.forward(&mut g, &img).unwrap();
    let p = g.slice_channels(out.fused, 1, 1).unwrap();
    let l = g.weighted_cross_entropy(p, &target, 2.0).unwrap();
    g.backward_into(l, &mut store).unwrap();
    for (w, b) in net.attention_params().unwrap() {
        let gw = store.get(w).grad.data().iter().map(|v| v.abs()).sum::<f64>();
        let gb = store.get(b).grad.data().iter().map(|v| v.abs()).sum::<f64>();
        assert!(gw > 0.0 && gb > 0.0);
    }
}

#[test]
fn fuse_examples() {
    let mut g = Graph::new();
    let m = |g: &mut Graph<f64>, a: f64| g.input(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0 - a, a]).unwrap()).unwrap();
    let m1 = m(&mut g, 0.8);
    let m2 = m(&mut g, 0.6);
    let m3 = m(&mut g, 0.4);
    let w = g.input(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.5, 0.3, 0.2]).unwrap()).unwrap();
    let f = fuse(&mut g, &[m1, m2, m3], w).unwrap();
    assert!((g.value(f).data()[1] - 0.66).abs() < 1e-12);

    let one_hot = g.input(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
    let f = fuse(&mut g, &[m1, m2, m3], one_hot).unwrap();
    assert_eq!(g.value(f), g.value(m1));

    let f = fuse(&mut g, &[m2, m2, m2], w).unwrap();
    assert!(g.value(f).max_abs_diff(g.value(m2)) < 1e-15);
}

#[test]
fn full_forward_keeps_input_size_and_normalisation() {
    let net = toy();
    let img = image(7, 97, 131);
    let p = net.predict(&img).unwrap();
    assert_eq!(p.scale_maps.len(), 3);
    for t in p.scale_maps.iter().chain([&p.fused, &p.weights]) {
        assert_eq!((t.shape().h, t.shape().w), (97, 131));
    }
    for i in 0..97 * 131 {
        let f = p.fused.plane(0, 0)[i] + p.fused.plane(0, 1)[i];
        assert!((f - 1.0).abs() <= 1e-5);
        let w: f32 = (0..3).map(|s| p.weights.plane(0, s)[i]).sum();
        assert!((w - 1.0).abs() <= 1e-6);
    }
    // three per-scale contour maps plus the fused one
    let maps: Vec<_> = p.scale_maps.iter().map(|m| m.channel(1)).chain([p.foreground()]).collect();
    assert_eq!(maps.len(), 4);
    assert_eq!(net.predict(&img).unwrap().fused, p.fused);
}

#[test]
fn weight_sharing_couples_all_streams() {
    let net = toy();
    let img = image(8, 64, 64);
    let before = net.predict(&img).unwrap();
    let mut perturbed = net.clone();
    let id = crate::tensor::ParamId(0);
    perturbed.params_mut().get_mut(id).value.data_mut().iter_mut().for_each(|v| *v += 0.05);
    let after = perturbed.predict(&img).unwrap();
    for s in 0..3 {
        assert!(before.scale_maps[s].max_abs_diff(&after.scale_maps[s]) > 0.0, "stream {s}");
    }
}

#[test]
fn whole_network_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut net: MsrNet<f64> = MsrNet::new(NetworkConfig::uniform(2), Task::Region, seed).unwrap();
        randomize_biases(&mut net, 300 + seed);
        let img = random_tensor(&mut seeded(100 + seed), Shape::new(1, 3, 8, 8), 0.0, 1.0);
        let target = random_tensor(&mut seeded(200 + seed), Shape::new(1, 1, 8, 8), 0.0, 1.0).map(|v| (v > 0.6) as u8 as f64);
        let r = check_network_gradients(&net, &img, &target, 2.0, 1e-4).unwrap();
        assert!(r.max_relative_error <= 1e-3, "seed {seed}: {r:?}");
        assert!(r.skipped * 100 <= r.checked, "seed {seed}: {r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn fused_map_is_a_convex_combination(seed in 0u64..1000, h in 8usize..30, w in 8usize..30) {
        let net: MsrNet<f32> = MsrNet::new(NetworkConfig::uniform(4), Task::Contour, seed).unwrap();
        let p = net.predict(&image(seed, h, w)).unwrap();
        prop_assert_eq!((p.fused.shape().h, p.fused.shape().w), (h, w));
        for c in 0..2 {
            for i in 0..h * w {
                let vals: Vec<f32> = p.scale_maps.iter().map(|m| m.plane(0, c)[i]).collect();
                let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
                let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let f = p.fused.plane(0, c)[i];
                prop_assert!(f >= lo - 1e-6 && f <= hi + 1e-6);
            }
        }
    }
}

#[test]
fn parameter_count_matches_built_network() {
    for c in [NetworkConfig::toy(), NetworkConfig::uniform(3), NetworkConfig::full()] {
        let net: MsrNet<f32> = MsrNet::new(c.clone(), Task::Region, 0).unwrap();
        assert_eq!(c.parameter_count(), net.params().num_elements() as u128);
    }
}
