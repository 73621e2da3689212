use proptest::prelude::*;

use super::*;
use crate::grid::Map;

fn rect(h: usize, w: usize, t: usize, l: usize, b: usize, r: usize) -> Mask {
    Mask::from_fn(h, w, |y, x| y >= t && y < b && x >= l && x < r)
}

fn ridge_map() -> Map {
    Map::from_fn(8, 8, |_, x| if x == 4 { 0.9 } else { 0.0 })
}

/// Every region at `fine` lies inside a single region at `coarse`.
fn refines(fine: &[u32], coarse: &[u32]) -> bool {
    let mut parent = std::collections::HashMap::new();
    fine.iter().zip(coarse).all(|(f, c)| *parent.entry(*f).or_insert(*c) == *c)
}

fn assert_nested(u: &Ucm) {
    let top = u.levels().last().copied().unwrap_or(0.0);
    let ts: Vec<f64> = (0..10).map(|i| top * i as f64 / 9.0).collect();
    for pair in ts.windows(2) {
        assert!(refines(&u.labels_at(pair[0]), &u.labels_at(pair[1])));
    }
    for m in u.merges().windows(2) {
        assert!(m[0].level <= m[1].level);
    }
}

#[test]
fn ridge_separates_two_regions() {
    let u = contour_to_ucm(&ridge_map()).unwrap();
    assert_eq!(u.region_count_at(0.0), 2);
    assert_eq!(u.region_count_at(0.89), 2);
    assert_eq!(u.region_count_at(0.9), 1);
    assert_eq!(u.levels().len(), 1);
    assert!((u.levels()[0] - 0.9).abs() < 1e-6);
    let (right, down) = u.edge_values();
    let boundary: Vec<f64> = right.iter().chain(&down).copied().filter(|&v| v > 0.0).collect();
    assert_eq!(boundary.len(), 8, "one vertical boundary of 8 edges");
    assert!(boundary.iter().all(|v| (v - 0.9).abs() < 1e-6));
}

#[test]
fn zero_map_is_one_region() {
    let u = contour_to_ucm(&Map::new(6, 5, 0.0)).unwrap();
    assert_eq!(u.leaf_count(), 1);
    assert!(u.merges().is_empty());
    let p = extract_proposals(&u, DEFAULT_PROPOSALS);
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].mask, Mask::new(6, 5, true));
    assert_eq!(p[0].bbox, [0, 0, 6, 5]);
}

#[test]
fn two_regions_give_three_proposals() {
    let u = contour_to_ucm(&ridge_map()).unwrap();
    let p = extract_proposals(&u, DEFAULT_PROPOSALS);
    assert_eq!(p.len(), 3);
    let areas: Vec<usize> = p.iter().map(ProposalMask::area).collect();
    assert!(areas.contains(&64));
    assert_eq!(areas.iter().sum::<usize>(), 128);
    assert_eq!(extract_proposals(&u, 2).len(), 2);
}

#[test]
fn invalid_contour_maps_are_rejected() {
    assert!(contour_to_ucm(&Map::new(2, 2, 1.5)).is_err());
    assert!(contour_to_ucm(&Map::new(2, 2, f32::NAN)).is_err());
    assert!(contour_to_ucm(&Map::new(0, 0, 0.0)).is_err());
}

#[test]
fn ridge_pixels_belong_to_the_enclosed_region() {
    // a closed ring marks the inner boundary of a 6x6 square
    let obj = rect(14, 14, 4, 4, 10, 10);
    let ring = Map::from_fn(14, 14, |y, x| {
        let inner = y > 4 && y < 9 && x > 4 && x < 9;
        if obj.at(y, x) && !inner {
            1.0
        } else {
            0.0
        }
    });
    let u = contour_to_ucm(&ring).unwrap();
    let labels = u.labels_at(0.5);
    let inside = labels[4 * 14 + 4];
    for y in 0..14 {
        for x in 0..14 {
            assert_eq!(labels[y * 14 + x] == inside, obj.at(y, x), "({y}, {x})");
        }
    }
}

#[test]
fn combination_needs_four() {
    let u = contour_to_ucm(&ridge_map()).unwrap();
    assert!(combine_hierarchies(&[u.clone(), u.clone(), u.clone()]).is_err());
    let small = contour_to_ucm(&Map::new(3, 3, 0.0)).unwrap();
    assert!(combine_hierarchies(&[u.clone(), u.clone(), u.clone(), small]).is_err());
}

#[test]
fn identical_hierarchies_combine_to_themselves() {
    let ring = Map::from_fn(16, 16, |y, x| {
        let on = |a: usize| a == 3 || a == 12;
        let box_ = (3..=12).contains(&y) && (3..=12).contains(&x);
        if box_ && (on(y) || on(x)) {
            0.8
        } else if x == 7 && y > 3 && y < 12 {
            0.4
        } else {
            0.0
        }
    });
    let u = contour_to_ucm(&ring).unwrap();
    let c = combine_hierarchies(&[u.clone(), u.clone(), u.clone(), u.clone()]).unwrap();
    // same sequence of partitions away from ridge pixels, whose ownership
    // is re-derived; level values are re-derived too
    let off_ridge = |l: Vec<u32>| -> Vec<u32> {
        let mut ids = std::collections::HashMap::new();
        l.iter()
            .zip(ring.data())
            .filter(|(_, &v)| v == 0.0)
            .map(|(&r, _)| {
                let next = ids.len() as u32;
                *ids.entry(r).or_insert(next)
            })
            .collect()
    };
    assert_eq!(c.levels().len(), u.levels().len());
    assert_eq!(off_ridge(c.labels_at(-1.0)), off_ridge(u.labels_at(-1.0)));
    for (&a, &b) in c.levels().iter().zip(u.levels().iter()) {
        assert_eq!(c.region_count_at(a), u.region_count_at(b));
        assert_eq!(off_ridge(c.labels_at(a)), off_ridge(u.labels_at(b)));
    }
    assert_nested(&c);
}

#[test]
fn one_strong_hierarchy_is_quartered() {
    let u = contour_to_ucm(&ridge_map()).unwrap();
    let zero = contour_to_ucm(&Map::new(8, 8, 0.0)).unwrap();
    let c = combine_hierarchies(&[u.clone(), zero.clone(), zero.clone(), zero]).unwrap();
    assert_eq!(c.levels().len(), 1);
    assert!((c.levels()[0] - 0.9 / 4.0).abs() < 1e-6);
    assert_eq!(c.labels_at(0.0), u.labels_at(0.0));
    assert_nested(&c);
}

#[test]
fn screening_boundary_is_inclusive() {
    let p = ProposalMask::new(Mask::new(1, 100, true), 1.0).unwrap();
    let salient = |n: usize| Mask::from_fn(1, 100, |_, x| x < n);
    assert!(screen_by_saliency(&[p.clone()], &salient(79), MIN_SALIENT_FRACTION).unwrap().is_empty());
    assert_eq!(screen_by_saliency(&[p.clone()], &salient(80), MIN_SALIENT_FRACTION).unwrap().len(), 1);
    assert_eq!(screen_by_saliency(&[p.clone()], &salient(100), MIN_SALIENT_FRACTION).unwrap().len(), 1);
    assert!(screen_by_saliency(&[p], &Mask::new(1, 100, false), MIN_SALIENT_FRACTION).unwrap().is_empty());
}

#[test]
fn disjoint_blobs_are_both_selected() {
    let a = rect(20, 20, 2, 2, 8, 8);
    let b = rect(20, 20, 10, 10, 16, 16);
    let salient = a.or(&b);
    let props = vec![
        ProposalMask::new(a.clone(), 0.9).unwrap(),
        ProposalMask::new(b.clone(), 0.9).unwrap(),
    ];
    let set = subset_select(&props, &salient).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(set.masks(), vec![a, b]);
}

#[test]
fn duplicates_collapse_to_one() {
    let a = rect(20, 20, 2, 2, 12, 12);
    let nearly = rect(20, 20, 2, 2, 12, 11);
    let props = vec![
        ProposalMask::new(a.clone(), 0.6).unwrap(),
        ProposalMask::new(a.clone(), 0.6).unwrap(),
        ProposalMask::new(nearly, 0.5).unwrap(),
    ];
    let set = subset_select(&props, &a).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(set.instances[0].proposal.mask, a);
}

#[test]
fn nothing_to_select() {
    assert!(subset_select(&[], &Mask::new(4, 4, true)).unwrap().is_empty());
    let p = ProposalMask::new(Mask::new(4, 4, true), 1.0).unwrap();
    assert!(subset_select(&[p], &Mask::new(4, 4, false)).unwrap().is_empty());
}

#[test]
fn small_gains_stop_selection() {
    // the second blob holds 4 of 104 salient pixels, under 5%
    let a = rect(20, 20, 0, 0, 10, 10);
    let b = rect(20, 20, 15, 15, 17, 17);
    let props = vec![ProposalMask::new(a.clone(), 1.0).unwrap(), ProposalMask::new(b.clone(), 1.0).unwrap()];
    assert_eq!(subset_select(&props, &a.or(&b)).unwrap().len(), 1);
}

#[test]
fn selection_ties_prefer_smaller_then_earlier() {
    let s = Mask::new(10, 10, true);
    let big = rect(10, 10, 0, 0, 10, 5);
    let small = rect(10, 10, 0, 5, 10, 10);
    let props = vec![ProposalMask::new(big, 1.0).unwrap(), ProposalMask::new(small.clone(), 1.0).unwrap()];
    // equal value (both fully salient) and score, equal area: earlier first pixel wins
    let set = subset_select(&props, &s).unwrap();
    assert_eq!(set.instances[0].proposal.first_pixel(), 0);
    let tiny = rect(10, 10, 0, 5, 5, 10);
    let props = vec![ProposalMask::new(rect(10, 10, 0, 0, 10, 5), 1.0).unwrap(), ProposalMask::new(tiny.clone(), 1.0).unwrap()];
    assert_eq!(subset_select(&props, &s).unwrap().instances[0].proposal.mask, tiny);
}

#[test]
fn oracle_contours_recover_disjoint_instances() {
    let c = crate::selfcheck::proposal_oracle_check(2).unwrap();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn dump_round_trip() {
    let props = vec![
        ProposalMask::new(rect(5, 7, 1, 2, 4, 6), 0.75).unwrap(),
        ProposalMask::new(Mask::new(5, 7, true), 0.0).unwrap(),
        ProposalMask::new(Mask::from_fn(5, 7, |y, x| (y + x) % 3 == 0), 1e-3).unwrap(),
    ];
    let text = write_proposals(&props);
    assert_eq!(text.lines().count(), 3);
    assert_eq!(read_proposals(&text).unwrap(), props);
}

#[test]
fn dump_errors_name_the_line() {
    let good = write_proposals(&[ProposalMask::new(rect(3, 3, 0, 0, 1, 1), 1.0).unwrap()]);
    let bad_bbox = good.replace("[0,0,1,1]", "[0,0,2,2]");
    let err = read_proposals(&format!("{good}\n{bad_bbox}")).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    assert!(read_proposals(r#"{"height":2,"width":2,"score":1.0,"bbox":[0,0,1,1],"rle":[0,1,2]}"#).is_err());
    assert!(read_proposals(r#"{"height":1,"width":2,"score":1.0,"bbox":[0,0,0,0],"rle":[2]}"#).is_err());
    assert!(rle_decode(usize::MAX, 2, &[1]).is_err());
    assert!(rle_decode(1, 3, &[1, 0, 2]).is_err());
}

#[test]
fn rle_starts_with_background() {
    let m = Mask::from_fn(1, 5, |_, x| x < 2);
    assert_eq!(rle_encode(&m), vec![0, 2, 3]);
    assert_eq!(rle_decode(1, 5, &[0, 2, 3]).unwrap(), m);
    assert!(rle_decode(1 << 14, 1 << 13, &[1 << 27]).is_err());
}

fn contour_map() -> impl Strategy<Value = Map> {
    (3usize..12, 3usize..12).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..6, h * w).prop_map(move |v| {
            Map::from_vec(h, w, v.into_iter().map(|q| q as f32 / 5.0).collect()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn hierarchies_are_nested(c in contour_map()) {
        let u = contour_to_ucm(&c).unwrap();
        assert_nested(&u);
        prop_assert_eq!(u.region_count_at(f64::INFINITY), 1);
        prop_assert_eq!(u.region_count_at(-1.0), u.leaf_count());
    }

    #[test]
    fn combined_hierarchies_are_nested(a in contour_map()) {
        let (h, w) = a.dims();
        let shifted = Map::from_fn(h, w, |y, x| a.at(y, (x + 1) % w));
        let flipped = Map::from_fn(h, w, |y, x| a.at(h - 1 - y, x));
        let u: Vec<Ucm> = [&a, &shifted, &flipped, &a].iter().map(|m| contour_to_ucm(m).unwrap()).collect();
        assert_nested(&combine_hierarchies(&u).unwrap());
    }

    #[test]
    fn proposals_are_ranked_and_distinct(c in contour_map()) {
        let p = extract_proposals(&contour_to_ucm(&c).unwrap(), 50);
        prop_assert!(!p.is_empty() && p.len() <= 50);
        for pair in p.windows(2) {
            prop_assert!(pair[0].score >= pair[1].score);
        }
        for i in 0..p.len() {
            prop_assert_eq!(Some(p[i].bbox), p[i].mask.bbox());
            for j in 0..i {
                prop_assert!(p[i].mask.iou(&p[j].mask) <= DEDUP_IOU);
            }
        }
    }

    #[test]
    fn screening_is_monotone(c in contour_map(), lo in 0.0f64..1.0, step in 0.0f64..0.5, seed in 0u64..1000) {
        let p = extract_proposals(&contour_to_ucm(&c).unwrap(), 30);
        let (h, w) = c.dims();
        let salient = Mask::from_fn(h, w, |y, x| (y * 31 + x * 17 + seed as usize) % 5 < 3);
        let a = screen_by_saliency(&p, &salient, lo).unwrap();
        let b = screen_by_saliency(&p, &salient, lo + step).unwrap();
        prop_assert!(b.iter().all(|q| a.contains(q)));
        prop_assert!(b.len() <= a.len());
    }

    #[test]
    fn selection_has_low_overlap(c in contour_map(), seed in 0u64..1000) {
        let p = extract_proposals(&contour_to_ucm(&c).unwrap(), 100);
        let (h, w) = c.dims();
        let salient = Mask::from_fn(h, w, |y, x| (y * 7 + x * 3 + seed as usize) % 4 != 0);
        let set = subset_select(&p, &salient).unwrap();
        let again = subset_select(&p, &salient).unwrap();
        prop_assert_eq!(&set, &again);
        for i in 0..set.len() {
            for j in 0..i {
                prop_assert!(set.instances[i].proposal.mask.iou(&set.instances[j].proposal.mask) <= SELECT_MAX_IOU);
            }
        }
    }
}
