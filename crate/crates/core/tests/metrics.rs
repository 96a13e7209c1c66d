use approx::assert_abs_diff_eq;
use invnet_core::dataset::{Meta, RecordView};
use invnet_core::metrics::*;
use invnet_core::nn::PredictionBundle;
use invnet_core::phdist::MomentVector;
use invnet_core::rng::rng_from_seed;
use invnet_core::simulate::Labels;
use proptest::prelude::*;
use rand::Rng;

fn pmf(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let t: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= t);
    p
}

/// A labelled record that lands in `group`, plus a noisy prediction of it.
fn member(group: u8, id: u64, rng: &mut impl Rng) -> (RecordView, PredictionBundle) {
    let bits = group - 1;
    let big_s = if bits & 2 != 0 { rng.random_range(16..=30) } else { rng.random_range(3..=15) };
    let s = if bits & 1 != 0 { rng.random_range(big_s / 2 + 1..big_s) } else { rng.random_range(0..=big_s / 2) };
    let meta = Meta {
        scv_d: if bits & 16 != 0 { 7.0 } else { 0.8 },
        scv_l: if bits & 8 != 0 { 9.0 } else { 2.0 },
        rho: if bits & 4 != 0 { 3.0 } else { 0.4 },
        group_id: group,
        seed: 0,
    };
    let labels = Labels {
        p: pmf(big_s as usize + 1, rng),
        ec: rng.random_range(1.0..40.0),
        pi0: rng.random_range(0.0..0.5),
        pi_arrival: None,
        diag: None,
    };
    let mut p_hat = pmf(big_s as usize + 1, rng);
    p_hat.resize(31, 0.0);
    let pred = PredictionBundle { p_hat, ec_hat: rng.random_range(1.0..40.0), pi0_hat: rng.random_range(0.0..0.5) };
    let view = RecordView {
        id,
        s,
        big_s,
        mom_d: MomentVector::new(vec![1.0, 2.0]).unwrap(),
        mom_l: MomentVector::new(vec![1.0, 2.0]).unwrap(),
        labels: Some(labels),
        meta,
    };
    (view, pred)
}

fn test_set(per_group: usize, seed: u64) -> (Vec<RecordView>, Vec<PredictionBundle>) {
    let mut rng = rng_from_seed(seed);
    let mut id = 0;
    (1..=32u8)
        .flat_map(|g| (0..per_group).map(move |_| g))
        .map(|g| {
            id += 1;
            member(g, id, &mut rng)
        })
        .unzip()
}

#[test]
fn metric_examples() {
    let a = vec![vec![0.2, 0.3, 0.5]];
    assert_eq!(sae(&a, &a).unwrap(), 0.0);
    assert_eq!(sae(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap(), 2.0);
    assert_eq!(rem(&a, &a).unwrap().abs_pct, 0.0);

    // true mean 10, predicted 9.9
    let mut t = vec![0.0; 11];
    t[10] = 1.0;
    let mut h = vec![0.0; 11];
    h[10] = 0.99;
    assert_abs_diff_eq!(mean(&h), 9.9, epsilon = 1e-12);
    let r = rem(&[t.clone()], &[h]).unwrap();
    assert_abs_diff_eq!(r.abs_pct, 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(r.signed_pct, 1.0, epsilon = 1e-9);

    let mut over = vec![0.0; 12];
    over[11] = 1.0;
    let r = rem(&[t], &[over]).unwrap();
    assert_abs_diff_eq!(r.abs_pct, 10.0, epsilon = 1e-9);
    assert_abs_diff_eq!(r.signed_pct, -10.0, epsilon = 1e-9);

    assert_abs_diff_eq!(re_c(&[2.0], &[2.1]).unwrap(), 5.0, epsilon = 1e-9);
    assert_abs_diff_eq!(ae_pi0(&[0.5], &[0.48]).unwrap(), 0.02, epsilon = 1e-12);
}

fn mean(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, v)| i as f64 * v).sum()
}

#[test]
fn rem_excludes_zero_mean() {
    let r = rem(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
    assert_eq!(r.excluded, 1);
    assert_eq!(r.abs_pct, 0.0);
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(sae(&[vec![1.0]], &[]).is_err());
    assert!(re_c(&[1.0, 2.0], &[1.0]).is_err());
    assert!(ae_pi0(&[], &[]).is_err());
}

#[test]
fn two_per_group_gives_32_rows() {
    let (views, preds) = test_set(2, 1);
    let (rep, rows) = evaluate_predictions(&views, &preds).unwrap();
    assert_eq!(rep.groups.len(), 32);
    assert!(rep.groups.iter().all(|g| g.n == 2));
    assert_eq!(rep.overall.n, 64);
    assert_eq!(rows.len(), 64);
    let csv = rep.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "group,n,scvD,scvL,rho,S,s,SAE,REM,REc,AEpi0");
    assert_eq!(lines.len(), 34);
    assert!(lines[33].starts_with("overall,64,"));
    assert!(lines[32].starts_with("32,2,>5,>5,>1,>15,large,"));
}

#[test]
fn echoed_labels_score_zero() {
    let (views, _) = test_set(2, 2);
    let perfect: Vec<PredictionBundle> = views
        .iter()
        .map(|v| {
            let l = v.labels.as_ref().unwrap();
            PredictionBundle { p_hat: l.padded(31).unwrap(), ec_hat: l.ec, pi0_hat: l.pi0 }
        })
        .collect();
    let (rep, _) = evaluate_predictions(&views, &perfect).unwrap();
    for g in rep.groups.iter().chain([&rep.overall]) {
        assert_eq!(g.sae, Some(0.0));
        assert_eq!(g.rem, Some(0.0));
        assert_eq!(g.re_c, Some(0.0));
        assert_eq!(g.ae_pi0, Some(0.0));
    }
}

#[test]
fn group_metrics_match_naive_loops() {
    let (views, preds) = test_set(3, 3);
    let (rep, _) = evaluate_predictions(&views, &preds).unwrap();
    for g in 1..=32u8 {
        let (mut s, mut r, mut c, mut a, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (v, p) in views.iter().zip(&preds) {
            if v.meta.group_id != g {
                continue;
            }
            let l = v.labels.as_ref().unwrap();
            for j in 0..31 {
                let t = if j < l.p.len() { l.p[j] } else { 0.0 };
                s += (t - p.p_hat[j]).abs();
            }
            let (mt, mh) = (mean(&l.p), mean(&p.p_hat));
            r += 100.0 * ((mt - mh) / mt).abs();
            c += 100.0 * ((l.ec - p.ec_hat) / l.ec).abs();
            a += (l.pi0 - p.pi0_hat).abs();
            n += 1.0;
        }
        let row = &rep.groups[g as usize - 1];
        assert_eq!(row.n as f64, n);
        assert!((row.sae.unwrap() - s / n).abs() <= 1e-10);
        assert!((row.rem.unwrap() - r / n).abs() <= 1e-10);
        assert!((row.re_c.unwrap() - c / n).abs() <= 1e-10);
        assert!((row.ae_pi0.unwrap() - a / n).abs() <= 1e-10);
    }
}

#[test]
fn metrics_ignore_row_order() {
    let (views, preds) = test_set(2, 4);
    let (a, _) = evaluate_predictions(&views, &preds).unwrap();
    let mut idx: Vec<usize> = (0..views.len()).collect();
    idx.reverse();
    idx.rotate_left(7);
    let v2: Vec<RecordView> = idx.iter().map(|&i| views[i].clone()).collect();
    let p2: Vec<PredictionBundle> = idx.iter().map(|&i| preds[i].clone()).collect();
    let (b, _) = evaluate_predictions(&v2, &p2).unwrap();
    for (x, y) in a.groups.iter().chain([&a.overall]).zip(b.groups.iter().chain([&b.overall])) {
        for (u, w) in [(x.sae, y.sae), (x.rem, y.rem), (x.re_c, y.re_c), (x.ae_pi0, y.ae_pi0)] {
            assert!((u.unwrap() - w.unwrap()).abs() <= 1e-12);
        }
    }
}

#[test]
fn empty_groups_leave_blank_cells() {
    let (views, preds) = test_set(1, 5);
    let (rep, _) = evaluate_predictions(&views[..3], &preds[..3]).unwrap();
    assert_eq!(rep.groups[10].n, 0);
    assert_eq!(rep.groups[10].sae, None);
    assert!(rep.to_csv().lines().nth(11).unwrap().ends_with(",,,,"));
}

#[test]
fn baseline_shapes() {
    let (views, _) = test_set(1, 6);
    let base = naive_baseline(&views);
    for (v, b) in views.iter().zip(&base) {
        assert!((b.p_hat.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.p_hat[v.big_s as usize + 1..].iter().all(|&x| x == 0.0));
        assert_eq!(b.ec_hat, (v.big_s - v.s) as f64 * (1.0 + v.meta.rho));
        assert_eq!(b.pi0_hat, 0.0);
    }
}

fn arb_pmf() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.001f64..1.0, 31).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

proptest! {
    #[test]
    fn sae_is_a_bounded_metric(a in arb_pmf(), b in arb_pmf(), c in arb_pmf()) {
        let d = |x: &Vec<f64>, y: &Vec<f64>| sae(std::slice::from_ref(x), std::slice::from_ref(y)).unwrap();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!(d(&a, &b) <= 2.0 + 1e-12);
        prop_assert_eq!(d(&a, &a), 0.0);
    }

    #[test]
    fn ae_is_bounded(t in proptest::collection::vec(0.0f64..=1.0, 1..20), h in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
        let n = t.len().min(h.len());
        prop_assert!(ae_pi0(&t[..n], &h[..n]).unwrap() <= 1.0);
    }
}
