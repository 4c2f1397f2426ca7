mod common;

use std::fs;

use common::{random_image, rng, PointwiseMock};
use rand::Rng;
use sgg_core::anonymizer::{
    anonymize_image, crop_person, detections_path, parse_detections, run_job_with_model, save_detections, load_detections,
    AnonymizationJob, AnonymizeOptions, Detection,
};
use sgg_core::surface::save_annotation;
use sgg_core::{EmbeddingRaster, Error, ImageRgb, InpaintModel, Region, RegionMask, SurfaceAnnotation, VertexTable};

/// Returns its input image untouched.
struct IdentityMock;

impl InpaintModel for IdentityMock {
    fn resolution(&self) -> (usize, usize) {
        (32, 16)
    }

    fn z_dim(&self) -> usize {
        2
    }

    fn vertex_table(&self) -> Option<&VertexTable> {
        None
    }

    fn inpaint(&self, ann: &SurfaceAnnotation, _z: &[f32], _t: f64) -> sgg_core::Result<ImageRgb> {
        Ok(ann.image().clone())
    }
}

fn mock() -> PointwiseMock {
    PointwiseMock { resolution: (32, 16), z_dim: 4 }
}

/// Scene with people given as BODY rectangles `(y0, x0, y1, x1)`, each with a DILATED rim row above.
fn scene(h: usize, w: usize, people: &[(usize, usize, usize, usize)], seed: u64) -> SurfaceAnnotation {
    let table = VertexTable::random_unit(6, 16, 1).unwrap();
    let mut r = rng(seed);
    let mut regions = vec![Region::Known; h * w];
    let mut emb = EmbeddingRaster::empty(h, w, 16);
    for &(y0, x0, y1, x1) in people {
        for y in y0..y1 {
            for x in x0..x1 {
                regions[y * w + x] = Region::Body;
                emb.set(y * w + x, Some(table.row(r.random_range(0..6))));
            }
        }
        for x in x0..x1 {
            regions[(y0 - 1) * w + x] = Region::Dilated;
        }
    }
    SurfaceAnnotation::new(random_image(h, w, &mut r), emb, RegionMask::new(h, w, regions).unwrap()).unwrap()
}

fn det(x0: usize, y0: usize, x1: usize, y1: usize, score: f64) -> Detection {
    Detection { x0, y0, x1, y1, score }
}

/// Pixels of the crop rectangle that are input BODY/DILATED inside the box or within
/// Chebyshev distance `dilation` of a BODY pixel inside the box.
fn expected_region(ann: &SurfaceAnnotation, d: &Detection, margin: f64, dilation: usize) -> Vec<bool> {
    let (h, w) = (ann.height(), ann.width());
    let mx = (margin * d.width() as f64).round() as usize;
    let my = (margin * d.height() as f64).round() as usize;
    let (cy0, cx0) = (d.y0.saturating_sub(my), d.x0.saturating_sub(mx));
    let (cy1, cx1) = ((d.y1 + my).min(h), (d.x1 + mx).min(w));
    let inside = |y: usize, x: usize| (d.y0..d.y1).contains(&y) && (d.x0..d.x1).contains(&x);
    let mut out = vec![false; h * w];
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            let own = inside(y, x) && ann.mask().get(y, x).is_generated();
            let near = (d.y0..d.y1).any(|by| {
                (d.x0..d.x1).any(|bx| {
                    ann.mask().get(by, bx) == Region::Body && by.abs_diff(y) <= dilation && bx.abs_diff(x) <= dilation
                })
            });
            out[y * w + x] = own || near;
        }
    }
    out
}

#[test]
fn only_the_dilated_generation_region_changes() {
    let ann = scene(60, 50, &[(10, 10, 30, 20), (35, 30, 55, 42)], 0);
    let dets = [det(10, 9, 20, 30, 0.9), det(30, 34, 42, 55, 0.8)];
    let opts = AnonymizeOptions { dilation: 2, ..Default::default() };
    let out = anonymize_image(&ann, &dets, &mock(), &opts, &mut rng(1)).unwrap();
    assert_eq!(out.persons, 2);
    assert!(out.skipped.is_empty());
    let a = expected_region(&ann, &dets[0], opts.margin, opts.dilation);
    let b = expected_region(&ann, &dets[1], opts.margin, opts.dilation);
    let expected: Vec<bool> = a.iter().zip(&b).map(|(x, y)| *x || *y).collect();
    assert_eq!(out.written, expected);
    let input = ann.image().to_u8();
    let mut changed = 0;
    for p in 0..60 * 50 {
        let same = input[p * 3..p * 3 + 3] == out.pixels[p * 3..p * 3 + 3];
        if !expected[p] {
            assert!(same, "pixel {p} outside the generation region changed");
        } else if !same {
            changed += 1;
        }
    }
    assert!(changed > 0);
}

#[test]
fn zero_detections_pass_through_bit_identical() {
    let ann = scene(40, 30, &[(10, 10, 30, 20)], 2);
    let out = anonymize_image(&ann, &[], &mock(), &AnonymizeOptions::default(), &mut rng(0)).unwrap();
    assert_eq!(out.pixels, ann.image().to_u8());
    assert!(out.written.iter().all(|w| !w));
    // detections at or below the threshold count as none
    let weak = [det(10, 9, 20, 30, 0.1), det(10, 9, 20, 30, 0.05)];
    let out = anonymize_image(&ann, &weak, &mock(), &AnonymizeOptions::default(), &mut rng(0)).unwrap();
    assert_eq!(out.pixels, ann.image().to_u8());
    assert_eq!(out.persons, 0);
}

#[test]
fn bad_boxes_are_skipped_not_fatal() {
    let ann = scene(40, 30, &[(10, 10, 30, 20)], 3);
    let dets = [det(10, 9, 20, 30, 0.9), det(25, 30, 35, 41, 0.8), det(0, 0, 3, 10, 0.7), det(22, 0, 30, 8, 0.6)];
    let out = anonymize_image(&ann, &dets, &mock(), &AnonymizeOptions::default(), &mut rng(0)).unwrap();
    assert_eq!(out.persons, 4);
    let mut idx: Vec<usize> = out.skipped.iter().map(|s| s.index).collect();
    idx.sort();
    assert_eq!(idx, vec![1, 2, 3]);
    assert!(out.written.iter().any(|w| *w));
}

#[test]
fn same_seed_same_output_and_fresh_latents_differ() {
    let ann = scene(60, 50, &[(10, 10, 30, 20), (35, 30, 55, 42)], 4);
    let dets = [det(10, 9, 20, 30, 0.9), det(30, 34, 42, 55, 0.8)];
    let opts = AnonymizeOptions::default();
    let a = anonymize_image(&ann, &dets, &mock(), &opts, &mut rng(5)).unwrap();
    let b = anonymize_image(&ann, &dets, &mock(), &opts, &mut rng(5)).unwrap();
    let c = anonymize_image(&ann, &dets, &mock(), &opts, &mut rng(6)).unwrap();
    assert_eq!(a.pixels, b.pixels);
    assert_ne!(a.pixels, c.pixels);
    let fixed = AnonymizeOptions { fixed_z: true, ..Default::default() };
    let d = anonymize_image(&ann, &dets, &mock(), &fixed, &mut rng(5)).unwrap();
    let e = anonymize_image(&ann, &dets, &mock(), &fixed, &mut rng(6)).unwrap();
    assert_eq!(d.pixels, e.pixels);
}

#[test]
fn identity_model_round_trips_a_crop_at_model_size() {
    // box 20x10 plus a 0.3 margin gives a 32x16 crop, the model size, so no resampling happens
    let ann = scene(48, 40, &[(14, 12, 34, 22)], 6);
    let d = det(12, 14, 22, 34, 0.9);
    let opts = AnonymizeOptions { margin: 0.3, ..Default::default() };
    let crop = crop_person(&ann, &d, (32, 16), opts.margin, opts.dilation).unwrap().unwrap();
    assert_eq!((crop.rect.2, crop.rect.3), (32, 16));
    let out = anonymize_image(&ann, &[d], &IdentityMock, &opts, &mut rng(0)).unwrap();
    let input = ann.image().to_u8();
    let worst = input.iter().zip(&out.pixels).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
    assert!(worst <= 1, "max byte error {worst}");
}

#[test]
fn crop_of_an_empty_box_is_none() {
    let ann = scene(40, 30, &[(10, 10, 30, 20)], 7);
    assert!(crop_person(&ann, &det(22, 0, 30, 8, 0.9), (32, 16), 0.2, 2).unwrap().is_none());
}

#[test]
fn options_are_validated() {
    let ann = scene(40, 30, &[(10, 10, 30, 20)], 7);
    for opts in [
        AnonymizeOptions { truncation: 1.5, ..Default::default() },
        AnonymizeOptions { margin: -0.1, ..Default::default() },
    ] {
        assert!(anonymize_image(&ann, &[], &mock(), &opts, &mut rng(0)).is_err());
    }
}

#[test]
fn sidecar_parsing() {
    let text = "# x0 y0 x1 y1 score\n1 2 10 20 0.5\n\n3 4 5 6 1\n";
    let dets = parse_detections(text).unwrap();
    assert_eq!(dets, vec![det(1, 2, 10, 20, 0.5), det(3, 4, 5, 6, 1.0)]);
    for bad in ["1 2 3 4", "1 2 3 4 0.5 6", "-1 2 3 4 0.5", "1 2 3 4 1.5", "a b c d e"] {
        match parse_detections(bad) {
            Err(Error::Format { plane, .. }) => assert_eq!(plane, "detections"),
            other => panic!("{bad:?} parsed as {other:?}"),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = detections_path(dir.path(), "s1");
    assert!(path.ends_with("s1.detections.txt"));
    save_detections(&path, &dets).unwrap();
    assert_eq!(load_detections(&path).unwrap(), dets);
}

#[test]
fn job_skips_broken_images_and_counts_the_rest() {
    let input = tempfile::tempdir().unwrap();
    let output = tempfile::tempdir().unwrap();
    let good = scene(40, 30, &[(10, 10, 30, 20)], 8);
    for id in ["a", "b", "c", "d"] {
        save_annotation(&good, input.path(), id).unwrap();
    }
    save_detections(&detections_path(input.path(), "a"), &[det(10, 9, 20, 30, 0.9), det(0, 0, 2, 2, 0.9)]).unwrap();
    // b has no sidecar, c a corrupt one, d a corrupt embeddings file
    fs::write(detections_path(input.path(), "c"), "1 2 3\n").unwrap();
    save_detections(&detections_path(input.path(), "d"), &[]).unwrap();
    fs::write(input.path().join("d.emb"), b"junk").unwrap();
    let job = AnonymizationJob {
        input: input.path().to_path_buf(),
        output: output.path().to_path_buf(),
        checkpoint: "unused".into(),
        options: AnonymizeOptions::default(),
    };
    let report = run_job_with_model(&job, &mock()).unwrap();
    assert_eq!(report.images, 1);
    assert_eq!(report.persons, 2);
    assert_eq!(report.skipped_detections, 1);
    let skipped: Vec<&str> = report.skipped_images.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(skipped, vec!["b", "c", "d"]);
    assert!(output.path().join("a.image.png").exists());
    assert!(!output.path().join("b.image.png").exists());
    let written = ImageRgb::load_png(&output.path().join("a.image.png")).unwrap();
    let direct = anonymize_image(&good, &load_detections(&detections_path(input.path(), "a")).unwrap(), &mock(), &job.options, &mut {
        let mut r = rng(0);
        r.set_stream(0);
        r
    })
    .unwrap();
    assert_eq!(written.to_u8(), direct.pixels);
}

#[test]
fn job_needs_an_input_directory() {
    let output = tempfile::tempdir().unwrap();
    let job = AnonymizationJob {
        input: output.path().join("missing"),
        output: output.path().to_path_buf(),
        checkpoint: "unused".into(),
        options: AnonymizeOptions::default(),
    };
    assert!(run_job_with_model(&job, &mock()).is_err());
}
