//! Residual trunk checked against direct convolution loops.

use echopipe::autograd::{Graph, ParamStore};
use echopipe::domain::{EchoImage, ViewLabel};
use echopipe::featnet::{extract_features, FeatureExtractor, TrunkConfig};
use echopipe::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[C, H, W]` activation.
#[derive(Clone)]
struct Act {
    c: usize,
    h: usize,
    w: usize,
    d: Vec<f64>,
}

impl Act {
    fn at(&self, c: usize, y: isize, x: isize) -> Option<f64> {
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w)
            .then(|| self.d[(c * self.h + y as usize) * self.w + x as usize])
    }
}

fn conv(x: &Act, w: &[f64], o: usize, k: usize, stride: usize, pad: usize) -> Act {
    let ho = (x.h + 2 * pad - k) / stride + 1;
    let wo = (x.w + 2 * pad - k) / stride + 1;
    let mut d = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ic in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let xx = (ox * stride + kx) as isize - pad as isize;
                            if let Some(v) = x.at(ic, y, xx) {
                                s += v * w[((oc * x.c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                d[(oc * ho + oy) * wo + ox] = s;
            }
        }
    }
    Act { c: o, h: ho, w: wo, d }
}

fn max_pool(x: &Act) -> Act {
    let (ho, wo) = ((x.h + 2 - 3) / 2 + 1, (x.w + 2 - 3) / 2 + 1);
    let mut d = vec![0.0; x.c * ho * wo];
    for c in 0..x.c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..3 {
                    for kx in 0..3 {
                        if let Some(v) = x.at(c, (oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1) {
                            m = m.max(v);
                        }
                    }
                }
                d[(c * ho + oy) * wo + ox] = m;
            }
        }
    }
    Act { c: x.c, h: ho, w: wo, d }
}

fn bn(x: &Act, store: &ParamStore<f64>, name: &str) -> Act {
    let f = |s: &str| store.by_name(&format!("{name}.{s}")).unwrap().data().to_vec();
    let (g, b, m, v) = (f("weight"), f("bias"), f("running_mean"), f("running_var"));
    let hw = x.h * x.w;
    let d = x.d.iter().enumerate().map(|(i, &a)| {
        let c = i / hw;
        (a - m[c]) / (v[c] + 1e-5).sqrt() * g[c] + b[c]
    });
    Act { d: d.collect(), ..x.clone() }
}

fn relu(mut x: Act) -> Act {
    x.d.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

fn naive_trunk(cfg: &TrunkConfig, store: &ParamStore<f64>, input: Act) -> Act {
    let wt = |n: &str| store.by_name(&format!("{n}.weight")).unwrap().data().to_vec();
    let w = cfg.widths;
    let mut x = max_pool(&relu(bn(&conv(&input, &wt("conv1"), w[0], 7, 2, 3), store, "bn1")));
    for (s, &ch) in w.iter().enumerate() {
        for b in 0..2 {
            let p = format!("layer{}.{b}", s + 1);
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            let h = relu(bn(&conv(&x, &wt(&format!("{p}.conv1")), ch, 3, stride, 1), store, &format!("{p}.bn1")));
            let h = bn(&conv(&h, &wt(&format!("{p}.conv2")), ch, 3, 1, 1), store, &format!("{p}.bn2"));
            let short = if store.by_name(&format!("{p}.downsample.0.weight")).is_some() {
                let s = conv(&x, &wt(&format!("{p}.downsample.0")), ch, 1, stride, 0);
                bn(&s, store, &format!("{p}.downsample.1"))
            } else {
                x.clone()
            };
            x = relu(Act { d: h.d.iter().zip(&short.d).map(|(a, b)| a + b).collect(), ..h });
        }
    }
    x
}

fn randomized(seed: u64) -> FeatureExtractor<f64> {
    let mut ext = FeatureExtractor::new(TrunkConfig::tiny(), seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for e in ext.params.entries_mut() {
        let var = e.name.ends_with("running_var");
        let gamma = e.name.ends_with("bn1.weight") || e.name.ends_with("bn2.weight");
        for v in e.value.data_mut() {
            if var {
                *v = rng.gen_range(0.5..2.0);
            } else if gamma {
                *v = rng.gen_range(0.5..1.5);
            } else if !e.name.contains("conv") && !e.name.contains("downsample.0") {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    ext
}

#[test]
fn trunk_matches_direct_convolution() {
    for seed in 0..3 {
        let ext = randomized(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let img = EchoImage::from_pixels(64, 64, (0..64 * 64).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let plane: Vec<f64> = img.pixels.iter().map(|&v| (v as f64 - 0.5) / 0.5).collect();
        let input = Act { c: 3, h: 64, w: 64, d: plane.repeat(3) };
        let expect = naive_trunk(&ext.trunk.config, &ext.params, input);
        let got = extract_features(&ext, &img, ViewLabel::A4c).unwrap();
        assert_eq!((got.channels, got.height, got.width), (expect.c, expect.h, expect.w));
        let scale = expect.d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in got.data.iter().zip(&expect.d) {
            assert!((*a as f64 - b).abs() <= 1e-5 * scale, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn zeroed_residual_branch_passes_the_input_through() {
    let mut ext = FeatureExtractor::new(TrunkConfig::tiny(), 3).unwrap().cast::<f64>();
    for name in ["layer1.1.bn2.weight", "layer1.1.bn2.bias"] {
        ext.params.by_name_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let img = echopipe::ingest::synth_study(4, echopipe::domain::DiseaseLabel::Hcm).views[&ViewLabel::Plax].clone();
    let mut g = Graph::new(&ext.params);
    let x = g.input(echopipe::featnet::to_three_channel(&img).unwrap(), false);
    let out = ext.trunk.forward(&mut g, x, false);
    assert_eq!(g.value(out.blocks[1]).data(), g.value(out.blocks[0]).data());
}

#[test]
fn output_side_follows_the_strides() {
    for side in [32, 64, 224] {
        assert_eq!(TrunkConfig::tiny().out_side(side), side.div_ceil(32));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_loops(
        seed in any::<u64>(),
        c in 1usize..4,
        o in 1usize..4,
        side in 3usize..10,
        k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..c * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..o * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expect = conv(&Act { c, h: side, w: side, d: x.clone() }, &w, o, k, stride, pad);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let xv = g.input(Tensor::from_vec(&[1, c, side, side], x).unwrap(), false);
        let wv = g.input(Tensor::from_vec(&[o, c, k, k], w).unwrap(), false);
        let y = g.conv2d(xv, wv, stride, pad);
        prop_assert_eq!(g.value(y).shape(), &[1, o, expect.h, expect.w][..]);
        for (a, b) in g.value(y).data().iter().zip(&expect.d) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
