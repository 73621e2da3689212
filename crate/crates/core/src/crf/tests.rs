use super::*;
use crate::grid::Mask;
use crate::selfcheck::{crf_case, default_fixture_dir};
use crate::tensor::Shape;

fn flat_image(h: usize, w: usize, rgb: impl Fn(usize, usize) -> [f32; 3]) -> Tensor<f32> {
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            for (c, v) in rgb(y, x).iter().enumerate() {
                t.set(0, c, y, x, *v);
            }
        }
    }
    t
}

fn rect(h: usize, w: usize, t: usize, l: usize, b: usize, r: usize) -> Mask {
    Mask::from_fn(h, w, |y, x| y >= t && y < b && x >= l && x < r)
}

#[test]
fn unary_rules() {
    let sal = Mask::from_fn(1, 6, |_, x| x < 4);
    let a = Mask::from_fn(1, 6, |_, x| x == 0 || x == 1 || x == 4);
    let b = Mask::from_fn(1, 6, |_, x| x == 1 || x == 4);
    let u = build_unaries(&sal, &[a, b]).unwrap();
    assert_eq!(u.labels(), 3);
    assert_eq!(u.pixel(0), &[0.0, 1.0, 0.0]);
    assert_eq!(u.pixel(1), &[0.0, 0.5, 0.5]);
    assert_eq!(u.pixel(2), &[0.0, 0.5, 0.5]);
    let third = 1.0 / 3.0;
    assert_eq!(u.pixel(4), &[third, third, third]);
    assert_eq!(u.pixel(5), &[1.0, 0.0, 0.0]);

    let one = Mask::from_fn(1, 6, |_, x| x == 5);
    let u = build_unaries(&sal, &[one]).unwrap();
    assert_eq!(u.pixel(5), &[0.5, 0.5]);

    let four: Vec<Mask> = (0..4).map(|_| Mask::new(1, 6, false)).collect();
    let u = build_unaries(&sal, &four).unwrap();
    assert_eq!(u.pixel(0), &[0.0, 0.25, 0.25, 0.25, 0.25]);
}

#[test]
fn unaries_without_instances_are_background() {
    let u = build_unaries(&Mask::new(3, 3, true), &[]).unwrap();
    assert_eq!(u.labels(), 1);
    assert!(u.data().iter().all(|&p| p == 1.0));
}

#[test]
fn unaries_reject_mismatched_masks() {
    assert!(build_unaries(&Mask::new(4, 4, true), &[Mask::new(4, 5, true)]).is_err());
}

#[test]
fn unary_fixture() {
    let c = crate::selfcheck::crf_unary_fixture_check(&default_fixture_dir()).unwrap();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn unary_field_validates_distributions() {
    assert!(UnaryField::from_vec(1, 1, 2, vec![0.5, 0.6]).is_err());
    assert!(UnaryField::from_vec(1, 1, 2, vec![1.5, -0.5]).is_err());
    assert!(UnaryField::from_vec(1, 2, 2, vec![0.5, 0.5]).is_err());
    assert!(UnaryField::from_vec(1, 1, 2, vec![0.25, 0.75]).is_ok());
}

#[test]
fn pairwise_examples() {
    let p = CrfParams::default();
    let img = flat_image(8, 8, |_, _| [0.2, 0.4, 0.6]);
    assert_eq!(pairwise_potential((0, 0), (3, 4), 1, 1, &img, &p).unwrap(), 0.0);
    assert_eq!(pairwise_potential((2, 2), (2, 2), 0, 1, &img, &p).unwrap(), 7.0);
    let d2: f64 = 25.0;
    let want = 4.0 * (-d2 / (2.0 * 49.0 * 49.0)).exp() + 3.0 * (-d2 / 18.0).exp();
    let got = pairwise_potential((0, 0), (3, 4), 0, 2, &img, &p).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!(pairwise_potential((0, 0), (8, 0), 0, 1, &img, &p).is_err());
}

#[test]
fn energy_examples() {
    let p = CrfParams::default();
    let img = flat_image(1, 1, |_, _| [0.5; 3]);
    let u = UnaryField::from_vec(1, 1, 2, vec![0.25, 0.75]).unwrap();
    let e = total_energy(&LabelMap::new(1, 1, 1), &u, &img, &p).unwrap();
    assert!((e + 0.75f64.ln()).abs() < 1e-15);

    let img = flat_image(1, 2, |_, _| [0.5; 3]);
    let u = UnaryField::from_vec(1, 2, 2, vec![0.5; 4]).unwrap();
    let e = total_energy(&LabelMap::new(1, 2, 0), &u, &img, &p).unwrap();
    assert!((e - 2.0 * 2f64.ln()).abs() < 1e-12);
    // different labels add the pair once
    let split = LabelMap::from_vec(1, 2, vec![0, 1]).unwrap();
    let e2 = total_energy(&split, &u, &img, &p).unwrap();
    let k = pairwise_potential((0, 0), (0, 1), 0, 1, &img, &p).unwrap();
    assert!((e2 - e - k).abs() < 1e-12);
}

#[test]
fn zero_probability_labels_are_clamped() {
    let img = flat_image(1, 1, |_, _| [0.0; 3]);
    let u = UnaryField::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap();
    let e = total_energy(&LabelMap::new(1, 1, 1), &u, &img, &CrfParams::default()).unwrap();
    assert!((e + UNARY_FLOOR.ln()).abs() < 1e-9);
}

#[test]
fn zero_iterations_give_unary_argmax() {
    let c = crf_case(3, 16, 2).unwrap();
    let p = CrfParams::default();
    assert_eq!(meanfield_brute(&c.unaries, &c.image, &p, 0).unwrap().labeling, c.unaries.argmax());
    assert_eq!(meanfield_fast(&c.unaries, &c.image, &p, 0).unwrap().labeling, c.unaries.argmax());
}

#[test]
fn no_pairwise_gives_unary_argmax() {
    let c = crf_case(4, 20, 3).unwrap();
    let p = CrfParams::default().without_pairwise();
    let brute = meanfield_brute(&c.unaries, &c.image, &p, 10).unwrap();
    let fast = meanfield_fast(&c.unaries, &c.image, &p, 10).unwrap();
    assert_eq!(brute, fast);
    assert_eq!(brute.labeling, c.unaries.argmax());
    let refined = refine_instances(&c.salient, &c.instances, &c.image, &p).unwrap();
    assert_eq!(refined, c.unaries.argmax());
}

#[test]
fn uniform_unaries_with_strong_smoothing_are_constant() {
    let img = flat_image(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0, 0.5, 0.5]);
    let u = UnaryField::from_vec(4, 4, 2, vec![0.5; 32]).unwrap();
    let p = CrfParams { w1: 10.0, w2: 10.0, ..CrfParams::default() };
    let r = meanfield_brute(&u, &img, &p, 10).unwrap();
    assert!(r.labeling.data().iter().all(|&l| l == r.labeling.data()[0]));
}

#[test]
fn brute_force_is_guarded() {
    let u = UnaryField::from_vec(65, 64, 1, vec![1.0; 65 * 64]).unwrap();
    let img = flat_image(65, 64, |_, _| [0.0; 3]);
    let err = meanfield_brute(&u, &img, &CrfParams::default(), 1).unwrap_err();
    assert!(err.to_string().contains("meanfield_fast"));
}

#[test]
fn marginals_stay_normalized() {
    let c = crf_case(11, 24, 3).unwrap();
    let p = CrfParams::default();
    for iters in 1..=p.iterations {
        for r in [
            meanfield_brute(&c.unaries, &c.image, &p, iters).unwrap(),
            meanfield_fast(&c.unaries, &c.image, &p, iters).unwrap(),
        ] {
            for q in r.marginals.data().chunks_exact(r.marginals.labels()) {
                assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                assert!(q.iter().all(|&v| v >= 0.0));
            }
        }
    }
}

#[test]
fn fast_matches_brute() {
    let checks = crate::selfcheck::crf_oracle_checks(3).unwrap();
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
}

#[test]
fn relabeling_instances_permutes_output() {
    let p = CrfParams::default();
    for seed in 0..3 {
        let c = crf_case(40 + seed, 24, 3).unwrap();
        let base = refine_instances(&c.salient, &c.instances, &c.image, &p).unwrap();
        for perm in [[1, 2, 0], [2, 0, 1], [0, 2, 1]] {
            let shuffled: Vec<Mask> = perm.iter().map(|&k| c.instances[k].clone()).collect();
            let out = refine_instances(&c.salient, &shuffled, &c.image, &p).unwrap();
            // new label j+1 is old label perm[j]+1
            let mapped = out.map(|&l| if l == 0 { 0 } else { perm[l as usize - 1] as u16 + 1 });
            assert_eq!(mapped, base);
        }
    }
}

#[test]
fn exact_instance_is_kept() {
    let (h, w) = (16, 16);
    let obj = rect(h, w, 4, 3, 12, 11);
    let img = flat_image(h, w, |y, x| if obj.at(y, x) { [0.9, 0.1, 0.1] } else { [0.4, 0.4, 0.4] });
    let out = refine_instances(&obj, std::slice::from_ref(&obj), &img, &CrfParams::default()).unwrap();
    assert_eq!(out, obj.map(|&v| v as u16));
}

#[test]
fn no_instances_is_background() {
    let img = flat_image(5, 7, |_, _| [0.3; 3]);
    let out = refine_instances(&Mask::new(5, 7, true), &[], &img, &CrfParams::default()).unwrap();
    assert_eq!(out, LabelMap::new(5, 7, 0));
}

#[test]
fn overlap_follows_color_boundary() {
    // red left half and blue right half of one object; the two instances
    // overlap by four columns across the color edge at x = 8
    let (h, w) = (12, 16);
    let obj = rect(h, w, 2, 2, 10, 14);
    let img = flat_image(h, w, |y, x| match (obj.at(y, x), x < 8) {
        (false, _) => [0.5, 0.5, 0.5],
        (true, true) => [0.9, 0.1, 0.1],
        (true, false) => [0.1, 0.1, 0.9],
    });
    let a = rect(h, w, 2, 2, 10, 10);
    let b = rect(h, w, 2, 6, 10, 14);
    let p = CrfParams::default();
    let out = refine_instances(&obj, &[a.clone(), b.clone()], &img, &p).unwrap();
    let want = LabelMap::from_fn(h, w, |y, x| match (obj.at(y, x), x < 8) {
        (false, _) => 0,
        (true, true) => 1,
        (true, false) => 2,
    });
    assert_eq!(out, want);
    let u = build_unaries(&obj, &[a, b]).unwrap();
    assert_eq!(meanfield_brute(&u, &img, &p, p.iterations).unwrap().labeling, want);
}

#[test]
fn energy_does_not_increase_on_most_cases() {
    let c = crate::selfcheck::crf_energy_check(20).unwrap();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn colorize_leaves_background_black() {
    let l = LabelMap::from_vec(1, 3, vec![0, 1, 2]).unwrap();
    let img = colorize(&l);
    assert_eq!([img.at(0, 0, 0, 0), img.at(0, 1, 0, 0), img.at(0, 2, 0, 0)], [0.0; 3]);
    assert_ne!(img.at(0, 0, 0, 1), img.at(0, 0, 0, 2));
}

#[test]
fn params_validate() {
    assert!(CrfParams::default().validate().is_ok());
    assert!(CrfParams { sigma_beta: 0.0, ..CrfParams::default() }.validate().is_err());
    assert!(CrfParams { w1: -1.0, ..CrfParams::default() }.validate().is_err());
}
