use std::fs;

use proptest::prelude::*;
use sgg_core::dataset::{sample_ids, Dataset, DirectoryDataset, Subset};
use sgg_core::surface::{dilate_mask, nearest_vertex, RegionMask};
use sgg_core::synthetic::{sample_id, smooth_table, Synthetic, SyntheticSpec};
use sgg_core::Region;

fn small(samples: usize) -> Synthetic {
    Synthetic::new(SyntheticSpec { samples, grid_u: 8, grid_v: 8, ..Default::default() }).unwrap()
}

#[test]
fn rendering_is_deterministic() {
    let s = small(4);
    assert_eq!(s.render(2).unwrap(), s.render(2).unwrap());
    assert_ne!(s.render(2).unwrap().annotation, s.render(3).unwrap().annotation);
    let again = small(4);
    assert_eq!(s.render(1).unwrap(), again.render(1).unwrap());
}

#[test]
fn invalid_specs_are_rejected() {
    for spec in [
        SyntheticSpec { height: 4, ..Default::default() },
        SyntheticSpec { grid_u: 1, ..Default::default() },
        SyntheticSpec { min_blobs: 1, ..Default::default() },
        SyntheticSpec { min_blobs: 4, max_blobs: 3, ..Default::default() },
    ] {
        assert!(Synthetic::new(spec).is_err());
    }
    assert!(small(3).render(3).is_err());
}

#[test]
fn body_texture_is_the_oracle_function_of_the_embedding() {
    let s = small(10);
    for i in 0..10 {
        let sample = s.render(i).unwrap();
        let ann = &sample.annotation;
        assert!(ann.mask().count(Region::Body) > 0);
        let oracle = s.oracle_texture(ann, sample.hue_shift);
        assert_eq!(&oracle, ann.image());
        for (p, r) in ann.mask().classes().iter().enumerate() {
            match r {
                Region::Body => {
                    let e = ann.embeddings().at(p);
                    assert_eq!(ann.image().pixel(p / ann.width(), p % ann.width()), s.texture(e, sample.hue_shift));
                    // every embedding is a table row
                    assert_eq!(s.table().row(nearest_vertex(e, s.table()).unwrap()), e);
                }
                _ => assert!(!ann.embeddings().is_valid(p)),
            }
        }
    }
}

#[test]
fn hue_shift_only_moves_the_blue_channel() {
    let s = small(1);
    let e = s.table().row(5).to_vec();
    let (a, b) = (s.texture(&e, 0.0), s.texture(&e, 0.3));
    assert_eq!(a[..2], b[..2]);
    assert!(b[2] > a[2]);
}

#[test]
fn generated_region_is_the_dilated_body() {
    let s = small(5);
    for i in 0..5 {
        let ann = s.render(i).unwrap().annotation;
        let body: Vec<Region> =
            ann.mask().classes().iter().map(|r| if *r == Region::Body { Region::Body } else { Region::Known }).collect();
        let redilated = dilate_mask(&RegionMask::new(ann.height(), ann.width(), body).unwrap(), s.spec().dilation);
        assert_eq!(&redilated, ann.mask());
        assert!(ann.mask().count(Region::Dilated) > 0);
    }
}

#[test]
fn write_dataset_round_trips() {
    let s = small(3);
    let dir = tempfile::tempdir().unwrap();
    s.write_dataset(dir.path()).unwrap();
    assert_eq!(sample_ids(dir.path()).unwrap(), vec!["00000", "00001", "00002"]);
    assert_eq!(sample_id(12), "00012");
    let ds = DirectoryDataset::open(dir.path()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(&ds.vertex_table().unwrap().unwrap(), s.table());
    for i in 0..3 {
        // images are stored as 8-bit PNG, the other planes exactly
        let (loaded, rendered) = (ds.get(i).unwrap(), s.get(i).unwrap());
        assert_eq!(loaded.image().to_u8(), rendered.image().to_u8());
        assert_eq!(loaded.mask(), rendered.mask());
        assert_eq!(loaded.embeddings(), rendered.embeddings());
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("synthetic.json")).unwrap()).unwrap();
    assert_eq!(meta["hue_shifts"].as_array().unwrap().len(), 3);
    assert_eq!(meta["hue_shifts"][1].as_f64().unwrap(), s.render(1).unwrap().hue_shift);
    let spec: SyntheticSpec = serde_json::from_value(meta["spec"].clone()).unwrap();
    assert_eq!(&spec, s.spec());
}

#[test]
fn subsets_index_into_the_parent() {
    let s = small(6);
    let sub = Subset::new(&s, 2, 3);
    assert_eq!(sub.len(), 3);
    assert_eq!(sub.get(1).unwrap(), s.get(3).unwrap());
    assert!(sub.get(3).is_err());
}

#[test]
fn smooth_table_rows_are_unit_and_neighbours_are_close() {
    let t = smooth_table(16, 16, 7).unwrap();
    assert_eq!((t.len(), t.dim()), (256, 16));
    let dist = |a: usize, b: usize| t.row(a).iter().zip(t.row(b)).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt();
    let mut near = 0.0;
    let mut far = 0.0;
    for k in 0..256 {
        let norm: f32 = t.row(k).iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-5);
        if k % 16 < 15 {
            near += dist(k, k + 1);
            far += dist(k, 255 - k);
        }
    }
    assert!(near < far);
    assert_eq!(smooth_table(16, 16, 7).unwrap(), t);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_sample_has_body_and_valid_planes(index in 0usize..2000) {
        let s = Synthetic::new(SyntheticSpec::default()).unwrap();
        let ann = s.render(index).unwrap().annotation;
        prop_assert!(ann.mask().count(Region::Body) > 0);
        prop_assert!(ann.image().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
