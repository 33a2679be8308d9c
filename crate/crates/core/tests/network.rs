use std::sync::Arc;

use deepdt::delaunay::build_delaunay;
use deepdt::geom::{cross, dot, norm, Vec3};
use deepdt::geonet::{
    encode, encode_point_features, encode_surface_feature, feature_extraction_layer, init_encoder_params,
    local_surface_input, relative_normals, signed_distance, signed_distance_checked, EncoderConfig, EncoderPlan,
    GeoError,
};
use deepdt::graphnet::{
    aggregate_tet_features, argmax_inside, gather_ids, gcn_layer, init_graph_params, predict_labels, GraphConfig,
};
use deepdt::model::{forward, infer, GraphInputs, ModelConfig};
use deepdt::nn::{
    gradient_check, mlp, ops, Backend, Eval, GradCheckOptions, Matrix, ParameterStore, Probe, TVar, Tape,
};
use deepdt::pointcloud::PointCloud;
use deepdt_testkit::{dense_normalized_adjacency, sphere_samples};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let l = norm(v);
        if l > 0.1 && l <= 1.0 {
            return [v[0] / l, v[1] / l, v[2] / l];
        }
    }
}

fn sphere_cloud(n: usize, seed: u64) -> PointCloud {
    let (p, nrm) = sphere_samples(n, 1.0, seed);
    PointCloud::new(p, nrm).unwrap()
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            k: 4,
            channels: vec![4, 6],
            keep_ratios: vec![1.0, 0.5],
            out_channels: 5,
            normalize_distances: true,
        },
        graph: GraphConfig { hidden: vec![6, 4] },
    }
}

/// `Σ y ⊙ R` for a fixed random `R`.
fn project<B: Backend<T = f64>>(b: &mut B, y: B::Var) -> B::Var {
    let (r, c) = b.value(&y).shape();
    let weights = b.constant(random(r, c, 4242));
    let prod = b.mul(y, weights);
    let ones = b.constant(Matrix::filled(c, 1, 1.0));
    let col = b.matmul(prod, ones);
    b.group_sum(col, r)
}

fn grad_check(store: &ParameterStore, tol: f64, forward: impl Fn(&mut Tape<f64>) -> TVar) -> f64 {
    let mut tape = Tape::new(store);
    let out = forward(&mut tape);
    let grads = tape.backward(out).for_store(store);
    let report = gradient_check(
        store,
        &grads,
        |s| {
            let mut t = Tape::new(s);
            let o = forward(&mut t);
            Probe {
                value: t.value(&o).get(0, 0),
                signature: t.kink_signature(),
            }
        },
        GradCheckOptions {
            tol,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "worst {:?}", report.worst);
    assert!(report.checked > 100, "only {} entries checked", report.checked);
    report.max_rel_error
}

#[test]
fn signed_distance_examples_and_plane_oracle() {
    assert_eq!(signed_distance([0.0, 0.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]), 1.0);
    assert_eq!(signed_distance([0.3, -2.0, 5.0], [0.3, -2.0, 5.0], [0.0, 1.0, 0.0]), 0.0);
    assert!(matches!(
        signed_distance_checked([0.0; 3], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
        Err(GeoError::NonUnitNormal(_))
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = unit(&mut rng);
        let q: Vec3 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let p: Vec3 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        // plane through q spanned by two tangents; distance from the triple product
        let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let t1 = cross(n, a);
        let t2 = cross(n, t1);
        let pq = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
        let c = cross(t1, t2);
        let mut oracle = dot(pq, c) / norm(c);
        if dot(c, n) < 0.0 {
            oracle = -oracle;
        }
        assert!((signed_distance_checked(p, q, n).unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn relative_normal_identities() {
    let n = [0.0, 0.6, 0.8];
    let (v, h) = relative_normals(n, n);
    assert!(v.iter().zip(&n).all(|(a, b)| (a - b).abs() < 1e-15) && norm(h) < 1e-15);
    let (v, h) = relative_normals([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
    assert_eq!(v, [0.0; 3]);
    assert_eq!(h, [1.0, 0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (ni, nk) = (unit(&mut rng), unit(&mut rng));
        let (v, h) = relative_normals(ni, nk);
        assert!(norm(cross(v, nk)) < 1e-9);
        assert!(dot(h, nk).abs() < 1e-9);
        for c in 0..3 {
            assert!((v[c] + h[c] - ni[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn rigid_motion_behavior() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let rot = Rotation3::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0));
        let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let mv = |p: Vec3| {
            let r = rot * Vector3::from(p) + t;
            [r.x, r.y, r.z]
        };
        let rt = |v: Vec3| {
            let r = rot * Vector3::from(v);
            [r.x, r.y, r.z]
        };
        let (pi, pk) = (unit(&mut rng), unit(&mut rng));
        let (ni, nk) = (unit(&mut rng), unit(&mut rng));
        let a = local_surface_input(pi, ni, pk, nk);
        let b = local_surface_input(mv(pi), rt(ni), mv(pk), rt(nk));
        assert!((a.d - b.d).abs() < 1e-9);
        let (va, ha) = (rt(a.v), rt(a.h));
        for c in 0..3 {
            assert!((va[c] - b.v[c]).abs() < 1e-9 && (ha[c] - b.h[c]).abs() < 1e-9);
        }
    }
}

fn encoder_store(cfg: &EncoderConfig, seed: u64) -> ParameterStore {
    let mut s = ParameterStore::new(seed);
    init_encoder_params(&mut s, cfg, &mut ParameterStore::rng(seed)).unwrap();
    s
}

#[test]
fn surface_feature_shape_zero_and_order() {
    let cfg = EncoderConfig::default();
    let mut s = encoder_store(&cfg, 5);
    let mut e = Eval::<f64>::new(&s);
    let x = e.constant(random(2, 7, 6));
    let y = encode_surface_feature(&mut e, x, 0).unwrap();
    assert_eq!(y.shape(), (2, 32));
    // rows are per-neighbor, so swapping the neighbors swaps the rows
    assert_ne!(y.row(0), y.row(1));
    let mut swapped = random(2, 7, 6);
    let r0 = swapped.row(0).to_vec();
    let r1 = swapped.row(1).to_vec();
    swapped.row_mut(0).copy_from_slice(&r1);
    swapped.row_mut(1).copy_from_slice(&r0);
    let x = e.constant(swapped);
    let y2 = encode_surface_feature(&mut e, x, 0).unwrap();
    assert_eq!(y.row(0), y2.row(1));

    s.set("enc.0.surf.1.w", Matrix::zeros(32, 32)).unwrap();
    let mut e = Eval::<f64>::new(&s);
    let x = e.constant(Matrix::zeros(1, 7));
    let y = encode_surface_feature(&mut e, x, 0).unwrap();
    assert_eq!(y.shape(), (1, 32));
    assert!(y.data().iter().all(|&v| v == 0.0));
    let x = e.constant(Matrix::zeros(1, 6));
    assert!(encode_surface_feature(&mut e, x, 0).is_err());
}

#[test]
fn extraction_layer_k1_shape_and_order_invariance() {
    let cfg = EncoderConfig::default();
    let s = encoder_store(&cfg, 7);
    let mut e = Eval::<f64>::new(&s);
    // K = 1: pooling passes the single row through
    let x = random(5, 7, 8);
    let y = feature_extraction_layer(&mut e, 0, 1, x.clone(), None).unwrap();
    let xv = e.constant(x);
    let sf = mlp(&mut e, xv, "enc.0.surf", 2).unwrap();
    let direct = mlp(&mut e, sf, "enc.0.post", 2).unwrap();
    for (a, b) in y.data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-12);
    }

    let k = 16;
    let m = 6;
    let x = random(m * k, 7, 9);
    let prev = e.constant(random(10, 32, 10));
    let rows: Vec<i64> = vec![3, 0, 9, 4, 4, 7];
    let y = feature_extraction_layer(&mut e, 1, k, x.clone(), Some((prev.clone(), &rows))).unwrap();
    assert_eq!(y.shape(), (m, 64));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut shuffled = x.clone();
    for r in 0..m {
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        for (dst, &src) in perm.iter().enumerate() {
            shuffled.row_mut(r * k + dst).copy_from_slice(x.row(r * k + src));
        }
    }
    let y2 = feature_extraction_layer(&mut e, 1, k, shuffled, Some((prev.clone(), &rows))).unwrap();
    for (a, b) in y.data().iter().zip(y2.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(feature_extraction_layer(&mut e, 1, k, random(m * k + 1, 7, 12), Some((prev, &rows))).is_err());
}

#[test]
fn encoder_shapes_determinism_and_errors() {
    let cloud = sphere_cloud(1000, 13);
    let cfg = EncoderConfig::default();
    let s = encoder_store(&cfg, 14);
    let a = encode_point_features::<f64>(&cloud, &cfg, &s, 99).unwrap();
    assert_eq!(a.shape(), (1000, 64));
    assert!(a.is_finite());
    let b = encode_point_features::<f64>(&cloud, &cfg, &s, 99).unwrap();
    assert_eq!(a.data(), b.data());
    let plan = EncoderPlan::build(&cloud, &cfg, 99).unwrap();
    assert_eq!(plan.levels.iter().map(|l| l.active.len()).collect::<Vec<_>>(), vec![1000, 250, 63]);

    let single = EncoderConfig {
        channels: vec![32],
        keep_ratios: vec![1.0],
        ..cfg.clone()
    };
    let s1 = encoder_store(&single, 15);
    assert_eq!(encode_point_features::<f64>(&cloud, &single, &s1, 0).unwrap().shape(), (1000, 64));

    let small = sphere_cloud(100, 16);
    assert!(matches!(
        encode_point_features::<f64>(&small, &cfg, &s, 0),
        Err(GeoError::TooFewPoints { level: 2, .. })
    ));
    let tiny = sphere_cloud(16, 17);
    assert!(matches!(
        encode_point_features::<f64>(&tiny, &single, &s1, 0),
        Err(GeoError::TooFewPoints { level: 0, .. })
    ));
    for bad in [
        EncoderConfig { keep_ratios: vec![1.0, 0.0, 0.5], ..cfg.clone() },
        EncoderConfig { keep_ratios: vec![1.0, 1.5, 0.5], ..cfg.clone() },
        EncoderConfig { channels: vec![32, 0, 8], ..cfg.clone() },
        EncoderConfig { channels: vec![32, 8], ..cfg.clone() },
        EncoderConfig { k: 0, ..cfg.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn chunked_encoder_matches_single_pass() {
    let cloud = sphere_cloud(700, 18);
    let cfg = EncoderConfig::default();
    let s = encoder_store(&cfg, 19);
    let plan = EncoderPlan::build(&cloud, &cfg, 3).unwrap();
    let mut e = Eval::<f64>::new(&s);
    let whole = encode(&mut e, &plan, usize::MAX).unwrap();
    let parts = encode(&mut e, &plan, 37).unwrap();
    assert_eq!(whole.data(), parts.data());
}

#[test]
fn encoder_gradient_check_30_points() {
    let cloud = sphere_cloud(30, 20);
    let cfg = toy_config().encoder;
    let s = encoder_store(&cfg, 21);
    let plan = EncoderPlan::build(&cloud, &cfg, 22).unwrap();
    let err = grad_check(&s, 1e-4, |t| {
        let f = encode(t, &plan, usize::MAX).unwrap();
        project(t, f)
    });
    assert!(err < 1e-4);
}

fn circulant(n: usize) -> Arc<Vec<[u32; 4]>> {
    Arc::new(
        (0..n)
            .map(|i| [(i + 1) % n, (i + n - 1) % n, (i + 2) % n, (i + n - 2) % n].map(|j| j as u32))
            .collect(),
    )
}

fn graph_store(c: usize, cfg: &GraphConfig, seed: u64) -> ParameterStore {
    let mut s = ParameterStore::new(seed);
    init_graph_params(&mut s, cfg, c, &mut ParameterStore::rng(seed)).unwrap();
    s
}

#[test]
fn aggregation_fixed_points_and_mean() {
    let cfg = GraphConfig::default();
    let mut s = graph_store(8, &cfg, 30);
    let mut e = Eval::<f64>::new(&s);
    // identical vertex rows
    let row = random(1, 8, 31);
    let feats = e.constant(Matrix::from_fn(5, 8, |_, j| row.get(0, j)));
    let ids = vec![0, 1, 2, 3, 4, 3, 2, 1];
    let t = aggregate_tet_features(&mut e, feats, &ids, 1000).unwrap();
    for r in 0..2 {
        for j in 0..8 {
            assert!((t.get(r, j) - row.get(0, j)).abs() < 1e-12);
        }
    }
    // constant weight MLP
    s.set("agg.1.w", Matrix::zeros(8, 8)).unwrap();
    let mut e = Eval::<f64>::new(&s);
    let x = random(5, 8, 32);
    let feats = e.constant(x.clone());
    let t = aggregate_tet_features(&mut e, feats, &ids, 1000).unwrap();
    let mean = ops::scale(ops::group_sum(&ops::gather_rows(&x, &ids), 4), 0.25);
    for (a, b) in t.data().iter().zip(mean.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let feats = e.constant(x);
    assert!(aggregate_tet_features(&mut e, feats.clone(), &[0, 1, 2, 5], 10).is_err());
    assert!(aggregate_tet_features(&mut e, feats, &[0, 1, 2], 10).is_err());
    assert!(gather_ids(&[[0, 1, 2, 7]], 5).is_err());
}

#[test]
fn aggregation_gradient_check_10_tets() {
    let mut s = graph_store(6, &GraphConfig::default(), 33);
    s.insert("x", random(8, 6, 34)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let ids: Vec<i64> = (0..40).map(|i| if i % 7 == 3 { -1 } else { rng.gen_range(0..8) }).collect();
    let err = grad_check(&s, 1e-5, |t| {
        let x = t.param("x");
        let y = aggregate_tet_features(t, x, &ids, usize::MAX).unwrap();
        project(t, y)
    });
    assert!(err < 1e-5);
}

#[test]
fn aggregation_is_permutation_equivariant_and_sentinel_is_a_mask() {
    let s = graph_store(8, &GraphConfig::default(), 36);
    let mut e = Eval::<f64>::new(&s);
    let x = random(12, 8, 37);
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let tets: Vec<[i64; 4]> = (0..30)
        .map(|_| [0; 4].map(|_| if rng.gen_bool(0.1) { -1 } else { rng.gen_range(0..12) }))
        .collect();
    let flat: Vec<i64> = tets.iter().flatten().copied().collect();
    let feats = e.constant(x.clone());
    let t = aggregate_tet_features(&mut e, feats.clone(), &flat, 7).unwrap();
    let mut perm: Vec<usize> = (0..30).collect();
    for i in (1..30).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let permuted: Vec<i64> = perm.iter().flat_map(|&p| tets[p]).collect();
    let tp = aggregate_tet_features(&mut e, feats, &permuted, 7).unwrap();
    for (r, &p) in perm.iter().enumerate() {
        assert_eq!(tp.row(r), t.row(p));
    }
    // appending an explicit zero row and pointing the sentinel at it
    let padded = Matrix::vstack(&[x, Matrix::zeros(1, 8)]);
    let masked: Vec<i64> = flat.iter().map(|&i| if i < 0 { 12 } else { i }).collect();
    let pv = e.constant(padded);
    let tm = aggregate_tet_features(&mut e, pv, &masked, 7).unwrap();
    assert_eq!(t.data(), tm.data());
}

#[test]
fn gcn_layer_algebra_and_dense_oracle() {
    let n = 50;
    let adj = circulant(n);
    let mut s = ParameterStore::new(0);
    s.insert("g.w", Matrix::identity(3)).unwrap();
    s.insert("g.b", Matrix::zeros(1, 3)).unwrap();
    let mut e = Eval::<f64>::new(&s);
    let x = random(n, 3, 40);
    let xv = e.constant(x.clone());
    let y = gcn_layer(&mut e, xv, &adj, "g", true).unwrap();
    for i in 0..n {
        for c in 0..3 {
            let mut sum = x.get(i, c);
            for &j in &adj[i] {
                sum += x.get(j as usize, c);
            }
            assert!((y.get(i, c) - sum / 5.0).abs() < 1e-12);
        }
    }
    let constant = e.constant(Matrix::filled(n, 3, -0.8125));
    let y = gcn_layer(&mut e, constant, &adj, "g", true).unwrap();
    assert!(y.data().iter().all(|&v| v == -0.8125));

    let dense = dense_normalized_adjacency(&adj);
    let p = ops::propagate(&x, &adj);
    for i in 0..n {
        for c in 0..3 {
            let d: f64 = (0..n).map(|j| dense[i][j] * x.get(j, c)).sum();
            assert!((p.get(i, c) - d).abs() < 1e-9);
        }
    }
    let bad = e.constant(random(n - 1, 3, 41));
    assert!(gcn_layer(&mut e, bad, &adj, "g", true).is_err());
}

#[test]
fn gcn_both_propagation_orders_agree() {
    let n = 20;
    let adj = circulant(n);
    let mut s = ParameterStore::new(0);
    s.insert("wide.w", random(3, 7, 42)).unwrap();
    s.insert("wide.b", random(1, 7, 43)).unwrap();
    let mut e = Eval::<f64>::new(&s);
    let x = random(n, 3, 44);
    let xv = e.constant(x.clone());
    let y = gcn_layer(&mut e, xv, &adj, "wide", false).unwrap();
    // the layer propagates before the product here; the reference after it
    let reference = ops::relu(ops::add_bias(
        ops::propagate(&deepdt::nn::matmul(&x, false, s.expect("wide.w"), false), &adj),
        s.expect("wide.b"),
    ));
    for (a, b) in y.data().iter().zip(reference.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn toy_inputs(n: usize, cfg: &ModelConfig, seed: u64) -> (PointCloud, GraphInputs) {
    let cloud = sphere_cloud(n, seed);
    let tets = build_delaunay(&cloud, seed).unwrap();
    let inputs = GraphInputs::build(&cloud, &tets, &cfg.encoder, seed).unwrap();
    (cloud, inputs)
}

#[test]
fn predictions_are_distributions_and_zero_head_is_uniform() {
    let cfg = toy_config();
    let (_, inputs) = toy_inputs(60, &cfg, 50);
    let mut s = cfg.init_params(51).unwrap();
    let p = infer::<f64>(&cfg, &s, &inputs).unwrap();
    assert_eq!(p.shape(), (inputs.num_tets(), 2));
    for r in 0..p.rows() {
        assert!((p.get(r, 0) + p.get(r, 1) - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&p.get(r, 0)));
    }
    let last = cfg.graph.hidden.len();
    let (a, b) = s.expect(&format!("gcn.{last}.w")).shape();
    s.set(&format!("gcn.{last}.w"), Matrix::zeros(a, b)).unwrap();
    s.set(&format!("gcn.{last}.b"), Matrix::zeros(1, b)).unwrap();
    let p = infer::<f64>(&cfg, &s, &inputs).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
    assert!(argmax_inside(&p).iter().all(|&inside| !inside));
    let q = Matrix::from_vec(3, 2, vec![0.6, 0.4, 0.4, 0.6, 0.5, 0.5]);
    assert_eq!(argmax_inside(&q), vec![true, false, false]);
}

#[test]
fn full_network_gradient_check_20_points() {
    let cfg = toy_config();
    let (_, inputs) = toy_inputs(20, &cfg, 52);
    let s = cfg.init_params(53).unwrap();
    let err = grad_check(&s, 1e-4, |t| {
        let p = forward(t, &cfg, &inputs, usize::MAX).unwrap();
        project(t, p)
    });
    assert!(err < 1e-4);
}

#[test]
fn predict_labels_checks_alignment() {
    let cfg = GraphConfig::default();
    let s = graph_store(4, &cfg, 54);
    let mut e = Eval::<f64>::new(&s);
    let f = e.constant(random(6, 4, 55));
    let adj = circulant(5);
    assert!(predict_labels(&mut e, f, &[0; 24], &adj, &cfg, 100).is_err());
}

#[test]
fn f32_inference_tracks_f64() {
    let cfg = ModelConfig::default();
    let (_, inputs) = toy_inputs(800, &cfg, 56);
    let s = cfg.init_params(57).unwrap();
    let a = infer::<f64>(&cfg, &s, &inputs).unwrap();
    let b = infer::<f32>(&cfg, &s, &inputs).unwrap();
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - *y as f64).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "f32 drift {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn propagation_matches_dense(seed in any::<u64>(), n in 5usize..40) {
        let adj = circulant(n);
        let x = random(n, 2, seed);
        let dense = dense_normalized_adjacency(&adj);
        let p = ops::propagate(&x, &adj);
        for i in 0..n {
            for c in 0..2 {
                let d: f64 = (0..n).map(|j| dense[i][j] * x.get(j, c)).sum();
                prop_assert!((p.get(i, c) - d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_inputs_decompose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ni, nk) = (unit(&mut rng), unit(&mut rng));
        let li = local_surface_input([0.0; 3], ni, [1.0, 2.0, 3.0], nk);
        prop_assert!(norm(cross(li.v, nk)) < 1e-9);
        prop_assert!(dot(li.h, nk).abs() < 1e-9);
        for c in 0..3 {
            prop_assert!((li.v[c] + li.h[c] - ni[c]).abs() < 1e-9);
        }
    }
}
