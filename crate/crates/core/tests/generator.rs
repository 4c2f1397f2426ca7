mod common;

use common::{random_annotation, random_image, rng};
use rand::Rng;
use sgg_autodiff::{Tensor, Var};
use sgg_core::nn::ParamSet;
use sgg_core::{
    EmbeddingRaster, Error, Generator, GeneratorConfig, GeneratorMode, MappingConfig, Modulation, OmegaMean, Region,
    RegionMask, SurfaceAnnotation, SurfaceBatch, VertexTable,
};

fn small(modulation: Modulation, mode: GeneratorMode, h: usize, w: usize, levels: usize) -> GeneratorConfig {
    GeneratorConfig {
        height: h,
        width: w,
        base_channels: 3,
        channel_mults: (0..levels).map(|l| l + 1).collect(),
        mode,
        modulation,
        mapping: MappingConfig { depth: 1, width: 8, out_dim: 5, variational: modulation == Modulation::VSam, z_dim: 4, embed_dim: 16 },
        spatial_z_channels: 2,
    }
}

fn table() -> VertexTable {
    VertexTable::random_unit(10, 16, 5).unwrap()
}

fn z(n: usize, seed: u64) -> Var<f32> {
    Var::constant(Tensor::randn(&[n, 4], &mut rng(seed)))
}

#[test]
fn forward_is_deterministic_and_z_matters() {
    let t = table();
    for modulation in [Modulation::VSam, Modulation::Sam, Modulation::None] {
        let (g, params) = Generator::new::<f32>(small(modulation, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
        let ann = random_annotation(16, 8, &t, true, 2);
        let batch = SurfaceBatch::<f32>::new(&[ann.clone()], Some(&t)).unwrap();
        let p = params.bind(false);
        let a = g.forward(&p, &batch, &z(1, 3), Some(&t), None).unwrap();
        let b = g.forward(&p, &batch, &z(1, 3), Some(&t), None).unwrap();
        assert_eq!(a.composite.value(), b.composite.value());
        let c = g.forward(&p, &batch, &z(1, 4), Some(&t), None).unwrap();
        let body: Vec<usize> = ann.mask().classes().iter().enumerate().filter(|(_, r)| **r == Region::Body).map(|(i, _)| i).collect();
        let diff: f32 = body
            .iter()
            .flat_map(|&px| (0..3).map(move |ch| ch * 128 + px))
            .map(|i| (a.composite.value().data()[i] - c.composite.value().data()[i]).abs())
            .sum();
        assert!(diff > 0.0, "{modulation:?}: z has no effect on BODY");
    }
}

#[test]
fn composite_keeps_known_pixels_exactly() {
    let t = table();
    let (g, params) = Generator::new::<f32>(small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
    let anns = [random_annotation(16, 8, &t, true, 5), random_annotation(16, 8, &t, true, 6)];
    let batch = SurfaceBatch::<f32>::new(&anns, Some(&t)).unwrap();
    let out = g.forward(&params.bind(false), &batch, &z(2, 1), Some(&t), None).unwrap();
    let raw = out.raw.value().data();
    for (s, ann) in anns.iter().enumerate() {
        for (px, r) in ann.mask().classes().iter().enumerate() {
            for c in 0..3 {
                let i = (s * 3 + c) * 128 + px;
                let v = out.composite.value().data()[i];
                if *r == Region::Known {
                    assert_eq!(v, ann.image().data()[px * 3 + c]);
                } else {
                    assert_eq!(v, raw[i]);
                }
            }
        }
    }
    assert!(raw.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn inpaint_returns_the_composite_image() {
    let t = table();
    let (g, params) = Generator::new::<f32>(small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
    let ann = random_annotation(16, 8, &t, true, 5);
    let img = g.inpaint(&params, &ann, &[0.1, 0.2, 0.3, 0.4], Some(&t), None).unwrap();
    for (px, r) in ann.mask().classes().iter().enumerate() {
        if *r == Region::Known {
            assert_eq!(img.pixel(px / 8, px % 8), ann.image().pixel(px / 8, px % 8));
        }
    }
    assert!(g.inpaint(&params, &ann, &[0.1, 0.2], Some(&t), None).is_err());
}

#[test]
fn decoder_only_ignores_the_image() {
    let t = table();
    let (g, params) = Generator::new::<f32>(small(Modulation::VSam, GeneratorMode::DecoderOnly, 16, 8, 3), 1).unwrap();
    let ann = random_annotation(16, 8, &t, true, 5);
    let other = ann.with_image(random_image(16, 8, &mut rng(99))).unwrap();
    let p = params.bind(false);
    let run = |a: &SurfaceAnnotation| g.forward(&p, &SurfaceBatch::new(&[a.clone()], Some(&t)).unwrap(), &z(1, 2), Some(&t), None).unwrap();
    let (a, b) = (run(&ann), run(&other));
    assert_eq!(a.composite.value(), b.composite.value());
    assert_eq!(a.composite.value(), a.raw.value());
}

#[test]
fn rejects_mismatched_inputs() {
    let t = table();
    let (g, params) = Generator::new::<f32>(small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
    let p = params.bind(false);
    let wrong_size = SurfaceBatch::<f32>::new(&[random_annotation(8, 8, &t, true, 1)], Some(&t)).unwrap();
    assert!(g.forward(&p, &wrong_size, &z(1, 0), Some(&t), None).is_err());
    let batch = SurfaceBatch::<f32>::new(&[random_annotation(16, 8, &t, true, 1)], Some(&t)).unwrap();
    assert!(g.forward(&p, &batch, &z(2, 0), Some(&t), None).is_err());
    // truncation needs a populated mean
    let empty = OmegaMean::new(5, 0.995);
    assert!(matches!(g.forward(&p, &batch, &z(1, 0), Some(&t), Some((0.5, &empty))), Err(Error::Precondition(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3);
    cfg.height = 18;
    assert!(Generator::new::<f32>(cfg, 0).is_err());
    let mut cfg = small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3);
    cfg.mapping.variational = false;
    assert!(Generator::new::<f32>(cfg, 0).is_err());
    let mut cfg = small(Modulation::Sam, GeneratorMode::Inpaint, 16, 8, 3);
    cfg.spatial_z_channels = 0;
    assert!(Generator::new::<f32>(cfg, 0).is_err());
}

#[test]
fn every_parameter_receives_gradient() {
    let t = table();
    for modulation in [Modulation::VSam, Modulation::Sam, Modulation::None] {
        for mode in [GeneratorMode::Inpaint, GeneratorMode::DecoderOnly] {
            let (g, params) = Generator::new::<f64>(small(modulation, mode, 16, 8, 3), 2).unwrap();
            let anns = [random_annotation(16, 8, &t, true, 7), random_annotation(16, 8, &t, true, 8)];
            let batch = SurfaceBatch::<f64>::new(&anns, Some(&t)).unwrap();
            let p = params.bind(true);
            let zz = Var::constant(Tensor::randn(&[2, 4], &mut rng(9)));
            let out = g.forward(&p, &batch, &zz, Some(&t), None).unwrap();
            // random cosine loss on the raw output
            let target = Var::constant(Tensor::randn(out.raw.shape(), &mut rng(10)));
            let dot = out.raw.mul(&target).sum();
            let norm = out.raw.square().sum().powf(0.5).mul(&target.square().sum().powf(0.5));
            let loss = dot.div(&norm);
            let grads = p.grads(&loss);
            for (id, gr) in params.ids().zip(&grads) {
                assert!(
                    gr.data().iter().any(|&v| v != 0.0),
                    "{modulation:?}/{mode:?}: {} gets no gradient",
                    params.name(id)
                );
            }
        }
    }
}

#[test]
fn truncation_towards_the_mean_changes_only_body_styles() {
    let t = table();
    let (g, params) = Generator::new::<f32>(small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
    let batch = SurfaceBatch::<f32>::new(&[random_annotation(16, 8, &t, true, 3)], Some(&t)).unwrap();
    let mut mean = OmegaMean::new(5, 0.995);
    mean.update(&[0.1, 0.2, 0.3, 0.4, 0.5]);
    let p = params.bind(false);
    let free = g.forward(&p, &batch, &z(1, 1), Some(&t), None).unwrap().field.unwrap();
    let half = g.forward(&p, &batch, &z(1, 1), Some(&t), Some((0.5, &mean))).unwrap().field.unwrap();
    for px in 0..128 {
        let body = batch.body.data()[px] > 0.0;
        for c in 0..5 {
            let (f, h) = (free.value().data()[c * 128 + px], half.value().data()[c * 128 + px]);
            if body {
                assert!((h - 0.5 * (f + mean.mean[c])).abs() < 1e-6);
            } else {
                assert_eq!(h, f);
            }
        }
    }
}

/// Pose of random table rows in a small square centred on (cy, cx) of a flat canvas.
fn pose_at(h: usize, w: usize, cy: usize, cx: usize, t: &VertexTable) -> SurfaceAnnotation {
    let mut r = rng(42);
    let mut regions = vec![Region::Known; h * w];
    let mut emb = EmbeddingRaster::empty(h, w, 16);
    for dy in 0..6 {
        for dx in 0..6 {
            let p = (cy - 3 + dy) * w + cx - 3 + dx;
            if dy == 0 || dx == 0 || dy == 5 || dx == 5 {
                regions[p] = Region::Dilated;
            } else {
                regions[p] = Region::Body;
                emb.set(p, Some(t.row(r.random_range(0..t.len()))));
            }
        }
    }
    let image = sgg_core::ImageRgb::filled(h, w, [0.2, -0.4, 0.6]);
    SurfaceAnnotation::new(image, emb, RegionMask::new(h, w, regions).unwrap()).unwrap()
}

#[test]
fn translated_pose_gives_translated_output_away_from_the_border() {
    let t = table();
    let (g, params) = Generator::new::<f32>(small(Modulation::VSam, GeneratorMode::Inpaint, 48, 48, 2), 3).unwrap();
    let a = pose_at(48, 48, 22, 20, &t);
    // same random rows, shifted by an even offset so pooling grids line up
    let (dy, dx) = (2, 4);
    let b = sgg_core::training::translate(&a, dy as i64, dx as i64).unwrap();
    let zz = z(1, 5);
    let p = params.bind(false);
    let run = |ann: &SurfaceAnnotation| {
        g.forward(&p, &SurfaceBatch::new(&[ann.clone()], Some(&t)).unwrap(), &zz, Some(&t), None).unwrap().composite.value().clone()
    };
    let (oa, ob) = (run(&a), run(&b));
    let mut worst = 0.0f32;
    for y in 12..32 {
        for x in 12..30 {
            for c in 0..3 {
                let va = oa.data()[c * 48 * 48 + y * 48 + x];
                let vb = ob.data()[c * 48 * 48 + (y + dy) * 48 + x + dx];
                worst = worst.max((va - vb).abs());
            }
        }
    }
    assert!(worst <= 1e-4, "max deviation {worst}");
}

fn count(cfg: GeneratorConfig) -> usize {
    Generator::new::<f32>(cfg, 0).unwrap().1.num_elements()
}

#[test]
fn desk_generator_has_about_a_million_parameters() {
    let n = count(GeneratorConfig::desk(Modulation::VSam));
    assert!((900_000..1_100_000).contains(&n), "{n}");
}

#[test]
fn full_size_parameter_counts() {
    let base = count(GeneratorConfig::full_size_baseline()) as f64;
    let large = count(GeneratorConfig::full_size_large()) as f64;
    assert!((base / 7.4e6 - 1.0).abs() <= 0.1, "baseline {base}");
    assert!((large / 39.4e6 - 1.0).abs() <= 0.1, "large {large}");
}

#[test]
fn f64_and_f32_generators_agree() {
    let t = table();
    let (g, params) = Generator::new::<f64>(small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
    let p32: ParamSet<f32> = params.cast();
    let ann = random_annotation(16, 8, &t, true, 4);
    let zz = [0.3f32, -0.2, 0.9, 0.0];
    let a = g.inpaint(&params, &ann, &zz, Some(&t), None).unwrap();
    let b = g.inpaint(&p32, &ann, &zz, Some(&t), None).unwrap();
    let dev = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(dev < 1e-4, "{dev}");
}

#[test]
fn generated_pixels_of_the_input_image_are_ignored() {
    // generated pixels of the input image are zeroed before the network sees them
    let t = table();
    let (g, params) = Generator::new::<f64>(small(Modulation::VSam, GeneratorMode::Inpaint, 16, 8, 3), 1).unwrap();
    let ann = random_annotation(16, 8, &t, true, 4);
    let other = {
        let mut img = ann.image().clone();
        for (px, r) in ann.mask().classes().iter().enumerate() {
            if r.is_generated() {
                img.set_pixel(px / 8, px % 8, [0.9, -0.9, 0.3]);
            }
        }
        ann.with_image(img).unwrap()
    };
    let zz = [0.1f32, 0.2, 0.3, 0.4];
    let a = g.inpaint(&params, &ann, &zz, Some(&t), None).unwrap();
    let b = g.inpaint(&params, &other, &zz, Some(&t), None).unwrap();
    assert_eq!(a, b);
}
