//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line and asserts.
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1` to see the lines in order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use moseg::affinity::{
    accumulate_similarity, inlier_vectors, ork_inliers, raw_votes, AffinityConfig, InlierVector, ResidualMatrix,
};
use moseg::cli::run_from;
use moseg::clustering::{canonicalize, spectral_partition, Labeling};
use moseg::cues::flo::{decode_flow, encode_flow};
use moseg::cues::pfm::{decode_pfm, encode_pfm};
use moseg::cues::{FloatGrid, FlowField, MaskFrame, Sequence};
use moseg::evaluation::{adjusted_rand, prf_metrics};
use moseg::motion_model::{
    design_system, fit_linear_model, fit_model, model_residual, FittedModel, ModelKind, PixelSample,
};
use moseg::pipeline::{run_segment, Ablation, RunConfig, SegmentOutput};
use moseg::proposal_filter::TrackTable;
use moseg::synthetic::{add_noise, moving_instance_masks, parallax_static, render_sequence, NoiseConfig, Preset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id:02} {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

/// Closed-form image velocity of a rigid point, written independently of the simulator.
fn rigid_flow(x: f64, y: f64, z: f64, f: f64, t: [f64; 3], w: [f64; 3]) -> (f64, f64) {
    let rot_u = -w[0] * x * y / f + w[1] * (f + x * x / f) - w[2] * y;
    let rot_v = -w[0] * (f + y * y / f) + w[1] * x * y / f + w[2] * x;
    (rot_u + (f * t[0] - x * t[2]) / z, rot_v + (f * t[1] - y * t[2]) / z)
}

fn random_rigid_sample(rng: &mut ChaCha8Rng, side: usize, noise: f64) -> PixelSample {
    let t = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
    let w = [0, 1, 2].map(|_| rng.random_range(-0.2..0.2));
    let f = rng.random_range(0.5..2.0);
    let mut s = PixelSample::default();
    let half = side as f64 / 2.0;
    for r in 0..side {
        for c in 0..side {
            let x = (c as f64 - (side as f64 - 1.0) / 2.0) / half;
            let y = (r as f64 - (side as f64 - 1.0) / 2.0) / half;
            let z = rng.random_range(0.5..50.0);
            let (u, v) = rigid_flow(x, y, z, f, t, w);
            s.x.push(x);
            s.y.push(y);
            s.q.push(1.0 / z);
            s.u.push(u + noise * rng.random_range(-1.0..1.0));
            s.v.push(v + noise * rng.random_range(-1.0..1.0));
        }
    }
    s
}

#[test]
fn c01_model_expressiveness() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let samples: Vec<PixelSample> = (0..100).map(|_| random_rigid_sample(&mut rng, 64, 0.0)).collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for s in &samples {
        let m = FittedModel::Linear(fit_linear_model(s).unwrap());
        worst = worst.max(model_residual(&m, s));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "model expressiveness",
        worst <= 1e-12 && secs < 5.0,
        format!("max mse {worst:.2e} (tol 1e-12) over 100 fits in {secs:.2} s (limit 5 s)"),
    );
}

fn loss(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (a * x - b).norm_squared()
}

#[test]
fn c02_gradient_and_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_grad = 0.0f64;
    let mut lowered = 0usize;
    let mut fits = 0usize;
    for _ in 0..40 {
        let s = random_rigid_sample(&mut rng, 24, 0.05);
        for kind in [ModelKind::LinearDepth, ModelKind::LinearDepthPrinted, ModelKind::Quadratic] {
            let model = fit_model(kind, &s).unwrap();
            let (a, b) = design_system(kind, &s);
            let x = DVector::from_column_slice(model.coefficients());
            let g = (a.transpose() * (&a * &x - &b)) * 2.0;
            let scale = (a.transpose() * &b * 2.0).norm().max(g.norm());
            let base = loss(&a, &b, &x);
            let h = 1e-4;
            for k in 0..x.len() {
                let mut e = DVector::zeros(x.len());
                e[k] = h;
                let fd = (loss(&a, &b, &(&x + &e)) - loss(&a, &b, &(&x - &e))) / (2.0 * h);
                worst_grad = worst_grad.max((fd - g[k]).abs() / scale);
                for d in [1e-3, -1e-3] {
                    let mut p = x.clone();
                    p[k] += d;
                    if loss(&a, &b, &p) < base {
                        lowered += 1;
                    }
                }
            }
            fits += 1;
        }
    }
    verdict(
        2,
        "gradient and optimality",
        worst_grad <= 1e-6 && lowered == 0,
        format!("{fits} fits, max relative gradient error {worst_grad:.2e} (tol 1e-6), {lowered} loss-lowering perturbations of ±1e-3"),
    );
}

fn noisy_two_movers(seed: u64) -> (Sequence, Labeling) {
    let (clean, gt) = render_sequence(&Preset::TwoMovers.scene()).unwrap();
    let noise = NoiseConfig { flow_sigma: 0.1, depth_sigma: 0.05, seed };
    (add_noise(&clean, &noise).unwrap(), gt)
}

fn ari_vs(out: &SegmentOutput, gt: &Labeling) -> f64 {
    adjusted_rand(&out.labeling, &gt.restricted_to(&out.track_ids)).unwrap()
}

#[test]
fn c03_depth_scale_invariance() {
    let (seq, _) = noisy_two_movers(3);
    let cfg = RunConfig::new(3);
    let base = run_segment(&seq, &cfg).unwrap();
    let mut worst = 0.0f64;
    let mut min_ari = 1.0f64;
    for s in [0.1, 3.0, 50.0] {
        let out = run_segment(&seq.with_inverse_depth_scale(s), &cfg).unwrap();
        for (r0, r1) in base.residuals.iter().zip(&out.residuals) {
            for i in 0..r0.size() {
                for j in 0..r0.size() {
                    if let (Some(a), Some(b)) = (r0.get(i, j), r1.get(i, j)) {
                        worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
                    }
                }
            }
        }
        min_ari = min_ari.min(adjusted_rand(&out.labeling, &base.labeling).unwrap());
    }
    verdict(
        3,
        "depth-scale invariance",
        worst <= 1e-10 && min_ari == 1.0,
        format!("s in {{0.1, 3, 50}}: max relative residual change {worst:.2e} (tol 1e-10), min ARI vs unscaled {min_ari}"),
    );
}

#[test]
fn c04_noise_free_oracle_clustering() {
    let mut detail = Vec::new();
    let mut pass = true;
    for (preset, k) in [(Preset::TwoMovers, 3), (Preset::Rotor, 2)] {
        let (seq, gt) = render_sequence(&preset.scene()).unwrap();
        let out = run_segment(&seq, &RunConfig::new(k)).unwrap();
        let ari = ari_vs(&out, &gt);
        pass &= ari == 1.0;
        detail.push(format!("{} K={k} ARI {ari}", preset.name()));
    }
    verdict(4, "noise-free oracle clustering", pass, detail.join(", "));
}

#[test]
fn c05_noisy_oracle_clustering() {
    let aris: Vec<f64> = (0..20u64)
        .map(|trial| {
            let (seq, gt) = noisy_two_movers(1000 + trial);
            let mut cfg = RunConfig::new(3);
            cfg.seed = trial;
            ari_vs(&run_segment(&seq, &cfg).unwrap(), &gt)
        })
        .collect();
    let min = aris.iter().copied().fold(1.0, f64::min);
    let mean = aris.iter().sum::<f64>() / aris.len() as f64;
    verdict(
        5,
        "noisy oracle clustering",
        min >= 0.9,
        format!("two-movers, flow sigma 0.1 px, depth sigma 0.05, 20 trials: min ARI {min:.4}, mean {mean:.4} (tol: every trial >= 0.9)"),
    );
}

#[test]
fn c06_parallax_ablation_trend() {
    let (seq, gt) = render_sequence(&Preset::ParallaxTrap.scene()).unwrap();
    let mut depth_aris = Vec::new();
    let mut flow_aris = Vec::new();
    for seed in 0..10u64 {
        let mut cfg = RunConfig::new(2);
        cfg.seed = seed;
        cfg.sampling.max_samples = 400;
        depth_aris.push(ari_vs(&run_segment(&seq, &cfg).unwrap(), &gt));
        cfg.ablation = Ablation::FlowOnly;
        flow_aris.push(ari_vs(&run_segment(&seq, &cfg).unwrap(), &gt));
    }
    let strict = depth_aris.iter().zip(&flow_aris).all(|(d, f)| d > f);
    let depth_min = depth_aris.iter().copied().fold(1.0, f64::min);
    let flow_max = flow_aris.iter().copied().fold(-1.0, f64::max);

    // The static layers alone form one group for the depth-aware model only.
    let (stat, _) = render_sequence(&parallax_static()).unwrap();
    let mut one = RunConfig::new(1);
    let linear = run_segment(&stat, &one).unwrap().affinity().unwrap();
    one.ablation = Ablation::FlowOnly;
    let quad = run_segment(&stat, &one).unwrap().affinity().unwrap();
    let linear_min = linear.iter().copied().fold(1.0, f64::min);
    let quad_min = quad.iter().copied().fold(1.0, f64::min);
    let pass = strict && depth_min == 1.0 && flow_max <= 0.5 && linear_min == 1.0 && quad_min < 1.0;
    verdict(
        6,
        "parallax ablation trend",
        pass,
        format!(
            "10 seeds: depth-aware min ARI {depth_min}, flow-only max ARI {flow_max:.4}, strict on every seed: {strict}; \
             static layers min affinity linear {linear_min} vs quadratic {quad_min}"
        ),
    );
}

#[test]
fn c07_baseline_trend() {
    let mut pass = true;
    let mut detail = Vec::new();
    for preset in Preset::ALL {
        let scene = preset.scene();
        let (seq, gt) = render_sequence(&scene).unwrap();
        let statics = scene.objects.iter().filter(|o| o.group == scene.background.group).count();
        assert!(statics >= 2);
        let truth = moving_instance_masks(&seq, &gt);
        let mut cfg = RunConfig::new(preset.num_groups());
        let full = prf_metrics(&run_segment(&seq, &cfg).unwrap().motion_masks, &truth).unwrap();
        cfg.ablation = Ablation::ProposalsBaseline;
        let base = prf_metrics(&run_segment(&seq, &cfg).unwrap().motion_masks, &truth).unwrap();
        pass &= base.ru >= full.ru && base.pu <= full.pu;
        detail.push(format!(
            "{}: base Pu {:.3} Ru {:.3} vs full Pu {:.3} Ru {:.3}",
            preset.name(),
            base.pu,
            base.ru,
            full.pu,
            full.ru
        ));
    }
    verdict(7, "baseline trend", pass, detail.join("; "));
}

#[test]
fn c08_ork_affinity_oracles() {
    let mut hand = true;
    hand &= ork_inliers(&[Some(0.1), Some(5.0), Some(5.0)], 2) == vec![true, true, false];
    hand &= ork_inliers(&[Some(2.0), Some(1.0), Some(3.0)], 7) == vec![true, true, true];
    hand &= ork_inliers(&[Some(3.0)], 1) == vec![true];
    let vs: Vec<InlierVector> = [[1, 1, 0], [0, 1, 1], [0, 1, 1]]
        .iter()
        .enumerate()
        .map(|(i, b)| InlierVector { object: i, pair: 0, bits: b.iter().map(|x| *x == 1).collect() })
        .collect();
    let votes = raw_votes(&vs, 3);
    hand &= votes[(0, 1)] == 1.0 && votes[(1, 2)] == 2.0 && votes[(0, 2)] == 1.0;
    let apart = TrackTable::from_visibility(vec![1, 2], vec![vec![true, false], vec![false, true]]);
    let sep = accumulate_similarity(
        &[
            InlierVector { object: 0, pair: 0, bits: vec![true, false] },
            InlierVector { object: 1, pair: 1, bits: vec![false, true] },
        ],
        &apart,
    );
    hand &= sep.get(0, 1) == 0.0 && sep.count(0, 1) == 0;

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut fuzz_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..10usize);
        let pairs = rng.random_range(1..5usize);
        let vis: Vec<Vec<bool>> = (0..n).map(|_| (0..pairs).map(|_| rng.random_bool(0.8)).collect()).collect();
        let table = TrackTable::from_visibility((1..=n as u32).collect(), vis.clone());
        let cfg = AffinityConfig { ork_fraction: rng.random_range(0.05..1.0), ..Default::default() };
        let mut vectors = Vec::new();
        for m in 0..pairs {
            let entries = (0..n * n)
                .map(|k| {
                    let (i, j) = (k / n, k % n);
                    let r = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) };
                    (vis[i][m] && vis[j][m]).then_some(r)
                })
                .collect();
            vectors.extend(inlier_vectors(&ResidualMatrix::from_entries(m, n, entries).unwrap(), &cfg));
        }
        let d = accumulate_similarity(&vectors, &table);
        for i in 0..n {
            for j in 0..n {
                fuzz_ok &= d.get(i, j) == d.get(j, i) && (0.0..=1.0).contains(&d.get(i, j));
            }
        }
    }
    verdict(
        8,
        "ORK and affinity oracles",
        hand && fuzz_ok,
        format!("hand examples exact: {hand}; 1000 fuzzed residual sets symmetric and in [0, 1]: {fuzz_ok}"),
    );
}

fn integer_partitions(n: usize, max: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in (1..=n.min(max)).rev() {
        for mut rest in integer_partitions(n - first, first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Every assignment of `n` items to exactly `k` nonempty groups, as restricted growth strings.
fn set_partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(i: usize, n: usize, k: usize, used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            if used == k {
                out.push(cur.clone());
            }
            return;
        }
        if k - used > n - i {
            return;
        }
        for g in 0..(used + 1).min(k) {
            cur.push(g);
            go(i + 1, n, k, used.max(g + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, 0, &mut Vec::new(), &mut out);
    out
}

fn normalized_cut(w: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|g| {
            let (mut cut, mut vol) = (0.0, 0.0);
            for i in (0..labels.len()).filter(|&i| labels[i] == g) {
                for j in 0..labels.len() {
                    vol += w[(i, j)];
                    if labels[j] != g {
                        cut += w[(i, j)];
                    }
                }
            }
            cut / vol
        })
        .sum()
}

fn ari_of(a: &[usize], b: &[usize]) -> f64 {
    let ids: Vec<u32> = (1..=a.len() as u32).collect();
    adjusted_rand(&Labeling::from_pairs(&ids, a), &Labeling::from_pairs(&ids, b)).unwrap()
}

#[test]
fn c09_spectral_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut structures = 0;
    let mut exact_ok = true;
    for n in 1..=12 {
        for sizes in integer_partitions(n, n) {
            let mut blocks: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
            for i in (1..n).rev() {
                blocks.swap(i, rng.random_range(0..=i));
            }
            let w = DMatrix::from_fn(n, n, |i, j| if blocks[i] == blocks[j] { 1.0 } else { 0.0 });
            let got = spectral_partition(&w, sizes.len(), rng.random()).unwrap();
            exact_ok &= ari_of(&got, &blocks) == 1.0 && got == canonicalize(&blocks);
            structures += 1;
        }
    }
    let mut brute_cases = 0;
    let mut brute_ok = true;
    for n in 2..=8 {
        for k in 2..=n.min(4) {
            for _ in 0..3 {
                let truth: Vec<usize> = canonicalize(&(0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect::<Vec<_>>());
                let mut w = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = if truth[i] == truth[j] { rng.random_range(0.7..1.0) } else { rng.random_range(0.0..0.15) };
                        w[(i, j)] = v;
                        w[(j, i)] = v;
                    }
                }
                let best = set_partitions(n, k)
                    .into_iter()
                    .map(|p| (normalized_cut(&w, &p, k), p))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .unwrap()
                    .1;
                let got = spectral_partition(&w, k, rng.random()).unwrap();
                brute_ok &= got == best;
                brute_cases += 1;
            }
        }
    }
    verdict(
        9,
        "spectral oracle",
        exact_ok && brute_ok,
        format!(
            "{structures} block structures N<=12 recovered exactly: {exact_ok}; \
             {brute_cases} noisy cases N<=8 match brute-force minimum normalized cut: {brute_ok}"
        ),
    );
}

#[test]
fn c10_metrics() {
    let g = MaskFrame::new(4, 2, vec![1, 1, 2, 2, 0, 3, 3, 0]).unwrap();
    let same = prf_metrics(&[g.clone()], &[g]).unwrap();
    let gt = MaskFrame::new(4, 2, vec![1, 1, 2, 2, 0, 0, 0, 0]).unwrap();
    let half = MaskFrame::new(4, 2, vec![5, 0, 6, 0, 0, 0, 0, 0]).unwrap();
    let h = prf_metrics(&[half], &[gt]).unwrap();
    let lab = |g: &[usize]| Labeling::from_pairs(&[1, 2, 3, 4], g);
    let aris = [
        adjusted_rand(&lab(&[0, 0, 1, 1]), &lab(&[0, 1, 0, 1])).unwrap(),
        adjusted_rand(&lab(&[0, 0, 0, 0]), &lab(&[0, 1, 2, 3])).unwrap(),
        adjusted_rand(&lab(&[1, 1, 0, 2]), &lab(&[0, 0, 2, 1])).unwrap(),
    ];
    let pass = (same.pu, same.ru, same.fu) == (1.0, 1.0, 1.0)
        && (h.pu, h.ru, h.fu) == (1.0, 0.5, 2.0 / 3.0)
        && aris == [-0.5, 0.0, 1.0];
    verdict(
        10,
        "metrics",
        pass,
        format!(
            "identity ({}, {}, {}); half coverage ({}, {}, {}); ARI hand cases {:?}",
            same.pu, same.ru, same.fu, h.pu, h.ru, h.fu, aris
        ),
    );
}

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

#[test]
fn c11_format_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let path = Path::new("<fuzz>");
    let mut ok = 0;
    for _ in 0..500 {
        let (w, h) = (rng.random_range(1..40usize), rng.random_range(1..40usize));
        let flow = FlowField::new(w, h, (0..2 * w * h).map(|_| random_f32(&mut rng)).collect()).unwrap();
        let back = decode_flow(&encode_flow(&flow), path).unwrap();
        let flo_exact = back.data().iter().zip(flow.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            && (back.width(), back.height()) == (w, h);
        let grid = FloatGrid { width: w, height: h, data: (0..w * h).map(|_| random_f32(&mut rng)).collect() };
        let back = decode_pfm(&encode_pfm(&grid), path).unwrap();
        let pfm_exact = back.data.iter().zip(&grid.data).all(|(a, b)| a.to_bits() == b.to_bits())
            && (back.width, back.height) == (w, h);
        if flo_exact && pfm_exact {
            ok += 1;
        }
    }
    verdict(11, "format round trips", ok == 500, format!("{ok}/500 fuzzed grids bit-exact in .flo and PFM"));
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn c12_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let dir = root.join(run);
        let sim = dir.join("scene");
        let s = |p: &Path| p.to_str().unwrap().to_string();
        run_from([
            "moseg", "simulate", "--preset", "two-movers", "--out", &s(&sim), "--flow-noise", "0.1",
            "--depth-noise", "0.05", "--seed", "12",
        ])
        .unwrap();
        let out = dir.join("run");
        run_from([
            "moseg", "segment", "--manifest", &s(&sim.join("manifest.toml")), "--out", &s(&out),
            "--num-motions", "3", "--seed", "5", "--max-samples", "300", "--dump-affinity",
            &s(&out.join("affinity.txt")),
        ])
        .unwrap();
        run_from([
            "moseg", "evaluate", "--pred", &s(&out.join("motion")), "--gt", &s(&sim.join("gt")), "--report",
            &s(&out.join("report.json")), "--csv", &s(&out.join("frames.csv")), "--pred-labels",
            &s(&out.join("labeling.toml")), "--gt-labels", &s(&sim.join("groundtruth.toml")),
        ])
        .unwrap();
        trees.push(dir);
    }
    let a = files_under(&trees[0]);
    let b = files_under(&trees[1]);
    let same_names = a.iter().map(|p| p.strip_prefix(&trees[0]).unwrap()).eq(b.iter().map(|p| p.strip_prefix(&trees[1]).unwrap()));
    let identical = same_names && a.iter().zip(&b).all(|(x, y)| fs::read(x).unwrap() == fs::read(y).unwrap());
    verdict(
        12,
        "determinism",
        identical,
        format!("{} output files from two simulate/segment/evaluate runs byte-identical: {identical}", a.len()),
    );
}
