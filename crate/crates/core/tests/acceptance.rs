//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spotmatch::bench::{self, Difficulty, SynthSpec};
use spotmatch::cluster::{best_edge_forest, build_clusters, components, ClusterGraph};
use spotmatch::config::{RunConfig, DEFAULT_THRESHOLD};
use spotmatch::image::GrayImage;
use spotmatch::matching::{ratio_match, SimilarityRecord};
use spotmatch::pipeline;
use spotmatch::sift::pyramid::DoGPyramid;
use spotmatch::sift::{self, detect_candidates, refine_and_filter, Candidate, Descriptor, RefineParams, SiftConfig};
use spotmatch::store::{self, FeatureStore};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn record(a: &str, b: &str, score: f64) -> SimilarityRecord {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    SimilarityRecord {
        video_a: a.into(),
        video_b: b.into(),
        score,
        best_frame_pair: (0, 0),
        n_contributing_matches: 1,
        same_camera_location: false,
    }
}

// 1 --------------------------------------------------------------------------

fn metric_reproduction() -> Outcome {
    // 116 disjoint video pairs, 97 of them showing one individual
    let mut records = Vec::new();
    let mut labels = BTreeMap::new();
    for i in 0..116 {
        let (a, b) = (format!("a{i:03}"), format!("b{i:03}"));
        labels.insert(a.clone(), format!("ind{i}"));
        let other = if i < 97 { format!("ind{i}") } else { format!("other{i}") };
        labels.insert(b.clone(), other);
        records.push(record(&a, &b, 1.0 + i as f64 / 1000.0));
    }
    let graph = build_clusters(&records, 0.5);
    let r = bench::evaluate(&graph, &labels).map_err(|e| e.to_string())?;
    let rate = r.success_rate.unwrap_or(f64::NAN);
    // reported headline: 83.6 %
    let paper = 0.836;
    check(
        r.n_matches == 116 && r.n_correct == 97 && (rate - 0.8362).abs() <= 1e-4 && (rate - paper).abs() < 5e-4,
        format!("{}/{} -> success_rate {rate:.6}", r.n_correct, r.n_matches),
    )
}

// 2 --------------------------------------------------------------------------

fn brute_force_extrema(stack: &[GrayImage], floor: f32) -> BTreeSet<(usize, usize, usize)> {
    let (w, h) = stack[0].dimensions();
    let mut out = BTreeSet::new();
    for l in 1..stack.len() - 1 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = stack[l].get(x, y);
                if v.abs() <= floor {
                    continue;
                }
                let mut neighbours = Vec::with_capacity(26);
                for dl in [-1i32, 0, 1] {
                    for dy in [-1i32, 0, 1] {
                        for dx in [-1i32, 0, 1] {
                            if (dl, dy, dx) != (0, 0, 0) {
                                let img = &stack[(l as i32 + dl) as usize];
                                neighbours.push(img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize));
                            }
                        }
                    }
                }
                if neighbours.iter().all(|&n| v > n) || neighbours.iter().all(|&n| v < n) {
                    out.insert((l, y, x));
                }
            }
        }
    }
    out
}

/// Random symmetric positive-definite 3×3 matrix with eigenvalues in [1, 2].
fn random_spd(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // Gram-Schmidt on random vectors gives a random orthonormal basis
    let mut q = [[0.0f64; 3]; 3];
    for i in 0..3 {
        let mut v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for qj in q.iter().take(i) {
            let d: f64 = (0..3).map(|k| v[k] * qj[k]).sum();
            for k in 0..3 {
                v[k] -= d * qj[k];
            }
        }
        let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        q[i] = v.map(|x| x / n);
    }
    let lambda: [f64; 3] = [rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0)];
    let mut h = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            h[r][c] = (0..3).map(|k| lambda[k] * q[k][r] * q[k][c]).sum();
        }
    }
    h
}

fn sift_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut total = 0;
    for trial in 0..50 {
        let levels: Vec<GrayImage> = (0..3)
            .map(|_| {
                GrayImage::from_fn(16, 16, |_, _| {
                    let v: f32 = rng.gen_range(-1.0..1.0);
                    // every other stack is coarsely quantised to force ties
                    if trial % 2 == 0 { (v * 4.0).round() / 4.0 } else { v }
                })
            })
            .collect();
        let expected = brute_force_extrema(&levels, 0.0);
        let dog = DoGPyramid { octaves: vec![levels] };
        let got: BTreeSet<_> = detect_candidates(&dog, 0.0).iter().map(|c| (c.level, c.row, c.col)).collect();
        if got != expected {
            return Err(format!("extrema differ on stack {trial}"));
        }
        total += expected.len();
    }

    let params = RefineParams {
        contrast_threshold: 0.0,
        edge_ratio: 10.0,
        max_iters: 5,
    };
    let mut worst = 0f64;
    for _ in 0..100 {
        let h = random_spd(&mut rng);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let peak: [f64; 3] = [rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45)];
        let v0 = sign * 0.5;
        // D(p) = v0 + sign/2 (p - peak)^T H (p - peak), around grid point (3, 3, level 2)
        let d = |x: f64, y: f64, s: f64| {
            let p = [x - peak[0], y - peak[1], s - peak[2]];
            let mut q = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    q += p[r] * h[r][c] * p[c];
                }
            }
            v0 + sign * 0.5 * q
        };
        let levels: Vec<GrayImage> = (0..5)
            .map(|l| GrayImage::from_fn(7, 7, |x, y| d(x as f64 - 3.0, y as f64 - 3.0, l as f64 - 2.0) as f32))
            .collect();
        let dog = DoGPyramid { octaves: vec![levels] };
        let cand = Candidate {
            octave: 0,
            level: 2,
            row: 3,
            col: 3,
        };
        let r = refine_and_filter(cand, &dog, &params).map_err(|e| format!("refinement rejected: {e:?}"))?;
        for k in 0..3 {
            worst = worst.max((r.offset[k] - peak[k]).abs());
        }
    }
    check(
        worst <= 1e-6,
        format!("50 stacks equal brute force ({total} extrema); max refinement offset error {worst:.2e}"),
    )
}

// 3 --------------------------------------------------------------------------

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn invariance() -> Outcome {
    let start = Instant::now();
    let cfg = SiftConfig::default();
    // 2x2 mosaic of seeded spot textures
    let tiles: Vec<GrayImage> = (0..4).map(|i| bench::spot_texture(42, i)).collect();
    let (tw, th) = tiles[0].dimensions();
    let tex = GrayImage::from_fn(2 * tw, 2 * th, |x, y| tiles[(y / th) * 2 + x / tw].get(x % tw, y % th));
    let (w, h) = tex.dimensions();
    let base = sift::extract_image(&tex, &cfg).map_err(|e| e.to_string())?;

    // R(x', y') = I(y', h - 1 - x'), so (x, y) maps to (h - 1 - y, x)
    let rot = GrayImage::from_fn(h, w, |x, y| tex.get(y, h - 1 - x));
    let rotated = sift::extract_image(&rot, &cfg).map_err(|e| e.to_string())?;
    let level = 1.0 / cfg.intervals as f64;
    let near = |x: f64, y: f64, s: f64| {
        rotated
            .iter()
            .filter(move |(k, _)| (k.x - x).hypot(k.y - y) <= 2.0 && (k.scale / s).log2().abs() <= level + 1e-9)
    };
    let positions: BTreeSet<(u64, u64, u64)> =
        base.iter().map(|(k, _)| (k.x.to_bits(), k.y.to_bits(), k.scale.to_bits())).collect();
    let repeated = positions
        .iter()
        .filter(|(x, y, s)| {
            let (x, y, s) = (f64::from_bits(*x), f64::from_bits(*y), f64::from_bits(*s));
            near(h as f64 - 1.0 - y, x, s).next().is_some()
        })
        .count();
    let repeatability = repeated as f64 / positions.len() as f64;

    let mut dists = Vec::new();
    for (k, d) in &base {
        let want = k.orientation + FRAC_PI_2;
        let best = near(h as f64 - 1.0 - k.y, k.x, k.scale)
            .min_by(|a, b| angle_diff(a.0.orientation, want).total_cmp(&angle_diff(b.0.orientation, want)));
        if let Some((rk, rd)) = best {
            if angle_diff(rk.orientation, want) <= 2.0 * TAU / 36.0 {
                dists.push(d.distance(rd) as f64);
            }
        }
    }
    dists.sort_by(f64::total_cmp);
    let median_rot = dists.get(dists.len() / 2).copied().unwrap_or(f64::INFINITY);

    // affine change that stays inside [0, 1]: base = 0.7 I + 0.05, then gain 1.3
    let dim = GrayImage::from_fn(w, h, |x, y| 0.7 * tex.get(x, y) + 0.05);
    let bright = GrayImage::from_fn(w, h, |x, y| 1.3 * dim.get(x, y));
    let fa = sift::extract_image(&dim, &cfg).map_err(|e| e.to_string())?;
    let fb = sift::extract_image(&bright, &cfg).map_err(|e| e.to_string())?;
    let mut drift = 0f64;
    let mut n_pairs = 0;
    for (ka, da) in &fa {
        let m = fb.iter().find(|(kb, _)| {
            (ka.x - kb.x).hypot(ka.y - kb.y) <= 0.5
                && (ka.scale / kb.scale).log2().abs() <= 0.1
                && angle_diff(ka.orientation, kb.orientation) <= TAU / 72.0
        });
        if let Some((_, db)) = m {
            drift = drift.max(da.distance(db) as f64);
            n_pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        base.len() >= 20 && repeatability >= 0.70 && median_rot < 0.35 && n_pairs >= 20 && drift < 0.15 && secs < 30.0,
        format!(
            "{} keypoints, rotation repeatability {:.3}, median rotated descriptor distance {:.3} over {} pairs, gain drift max {:.4} over {} pairs, {:.1}s",
            base.len(),
            repeatability,
            median_rot,
            dists.len(),
            drift,
            n_pairs,
            secs
        ),
    )
}

// 4 --------------------------------------------------------------------------

/// SIFT-like random descriptor: non-negative, unit length, clamped at 0.2.
fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
    let mut v = [0f32; 128];
    for x in v.iter_mut() {
        *x = rng.gen::<f32>().powi(3);
    }
    normalize_clamped(v)
}

fn normalize_clamped(mut v: [f32; 128]) -> Descriptor {
    for pass in 0..2 {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        if pass == 0 {
            v.iter_mut().for_each(|x| *x = x.min(0.2));
        }
    }
    Descriptor(v)
}

fn brute_force_matches(q: &[Descriptor], r: &[Descriptor], ratio: f64) -> Vec<(usize, usize)> {
    let two = |ds: Vec<(f32, usize)>| {
        let mut ds = ds;
        ds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        (ds[0].1, ds[0].0, ds.get(1).map_or(f32::INFINITY, |x| x.0))
    };
    let pass = |d1: f32, d2: f32| if d2 == 0.0 { d1 == 0.0 } else { (d1 as f64) < ratio * d2 as f64 };
    let mut out = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        let (j, d1, d2) = two(r.iter().enumerate().map(|(j, rj)| (qi.distance(rj), j)).collect());
        let (back, e1, e2) = two(q.iter().enumerate().map(|(k, qk)| (qk.distance(&r[j]), k)).collect());
        if pass(d1, d2) && back == i && pass(e1, e2) {
            out.push((i, j));
        }
    }
    out
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut n_matches = Vec::new();
    for _ in 0..5 {
        let query: Vec<Descriptor> = (0..200).map(|_| random_descriptor(&mut rng)).collect();
        // half the references are noisy copies of query descriptors
        let mut reference: Vec<Descriptor> = (0..200)
            .map(|i| {
                if i % 2 == 0 {
                    let mut v = query[(i * 7) % 200].0;
                    for x in v.iter_mut() {
                        *x += rng.gen_range(-0.03..0.03f32);
                        *x = x.max(0.0);
                    }
                    normalize_clamped(v)
                } else {
                    random_descriptor(&mut rng)
                }
            })
            .collect();
        reference.shuffle(&mut rng);
        let got: Vec<(usize, usize)> = ratio_match(&query, &reference, 0.8).iter().map(|m| (m.query, m.reference)).collect();
        let want = brute_force_matches(&query, &reference, 0.8);
        if got != want {
            return Err(format!("ratio_match differs from brute force ({} vs {} pairs)", got.len(), want.len()));
        }
        n_matches.push(got.len());
    }
    let trials = 1000;
    let mut accepted = 0;
    for _ in 0..trials {
        let q = [random_descriptor(&mut rng)];
        let set: Vec<Descriptor> = (0..100).map(|_| random_descriptor(&mut rng)).collect();
        accepted += usize::from(!ratio_match(&q, &set, 0.8).is_empty());
    }
    let rate = accepted as f64 / trials as f64;
    check(
        rate < 0.05,
        format!("5 sets of 200x200 equal brute force ({n_matches:?} matches); random false-accept rate {rate:.3}"),
    )
}

// 5 --------------------------------------------------------------------------

fn random_records(rng: &mut ChaCha8Rng, n: usize, density: f64, quantised: bool) -> Vec<SimilarityRecord> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                let mut s: f64 = rng.gen_range(0.0..1.0);
                if quantised {
                    s = (s * 10.0).round() / 10.0;
                }
                out.push(record(&format!("v{i:02}"), &format!("v{j:02}"), s));
            }
        }
    }
    out.shuffle(rng);
    out
}

fn partition_of(groups: impl IntoIterator<Item = Vec<String>>) -> BTreeSet<BTreeSet<String>> {
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

fn clustering_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let n = rng.gen_range(2..=50);
        let recs = random_records(&mut rng, n, 1.0, trial % 3 == 0);
        let t = rng.gen_range(0.3..0.95);
        let a = build_clusters(&recs, t);
        let b = best_edge_forest(&recs, t);
        if a.partition() != b.partition() {
            return Err(format!("partition differs on matrix {trial} (n = {n}, threshold {t:.3})"));
        }
    }
    for trial in 0..200 {
        let n = rng.gen_range(1..=40);
        let p = rng.gen_range(0.0..0.15);
        let mut g = ClusterGraph::new(0.5);
        let ids: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
        ids.iter().for_each(|id| g.add_node(id));
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    g.edges.insert((ids[i].clone(), ids[j].clone()), 1.0);
                    reach[i][j] = true;
                    reach[j][i] = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let oracle = partition_of(
            (0..n).map(|i| (0..n).filter(|&j| reach[i][j]).map(|j| ids[j].clone()).collect::<Vec<_>>()),
        );
        let got = partition_of(components(&g).into_iter().map(|c| c.members));
        if got != oracle {
            return Err(format!("components differ from transitive closure on graph {trial}"));
        }
    }
    check(true, "1000 score matrices and 200 graphs agree with their oracles".into())
}

// 6 --------------------------------------------------------------------------

fn threshold_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let thresholds = [0.2, 0.4, 0.6, 0.8, 0.9];
    for trial in 0..100 {
        let n = rng.gen_range(2..=40);
        let density = rng.gen_range(0.1..1.0);
        let recs = random_records(&mut rng, n, density, trial % 2 == 0);
        let graphs: Vec<ClusterGraph> = thresholds.iter().map(|&t| build_clusters(&recs, t)).collect();
        for (lo, hi) in graphs.iter().zip(&graphs[1..]) {
            if hi.n_matches() > lo.n_matches() {
                return Err(format!("kept edges grew with the threshold on instance {trial}"));
            }
            let coarse = lo.assignment();
            for cluster in hi.partition() {
                let owners: BTreeSet<_> = cluster.iter().map(|v| coarse.get(v)).collect();
                if owners.len() != 1 {
                    return Err(format!("partition at higher threshold is not a refinement on instance {trial}"));
                }
            }
        }
    }
    check(true, format!("100 instances at thresholds {thresholds:?}"))
}

// 7 --------------------------------------------------------------------------

fn synth_run(seed: u64, difficulty: Difficulty, dir: &Path, tweak: impl FnOnce(&mut RunConfig)) -> Result<bench::SyntheticDataset, String> {
    let spec = SynthSpec::new(seed, 5, 3, 10, difficulty);
    let data = bench::generate_synthetic_dataset(&spec, &dir.join("data")).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig {
        input_manifest: Some(data.manifest.clone()),
        out_dir: dir.join("run"),
        ..Default::default()
    };
    cfg.detect.detections = Some(data.detections_path.clone());
    tweak(&mut cfg);
    pipeline::run(&cfg).map_err(|e| e.to_string())?;
    Ok(data)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for (seed, difficulty, min_success, min_agreement) in
        [(11, Difficulty::Easy, 0.90, Some(0.90)), (12, Difficulty::Medium, 0.75, None)]
    {
        let dir = tmp.path().join(format!("{difficulty:?}"));
        fs::create_dir_all(dir.join("data")).map_err(|e| e.to_string())?;
        let data = synth_run(seed, difficulty, &dir, |_| {})?;
        let r = pipeline::evaluate_run(&dir.join("run"), &data.labels_path).map_err(|e| e.to_string())?;
        let success = r.success_rate.unwrap_or(0.0);
        let agreement = r.partition_agreement.unwrap_or(0.0);
        ok &= success >= min_success && min_agreement.is_none_or(|m| agreement >= m);
        lines.push(format!(
            "{difficulty:?}: success_rate {success:.3} ({}/{}), partition agreement {agreement:.3}, pair recall {:.3}",
            r.n_correct,
            r.n_matches,
            r.pair_recall.unwrap_or(0.0)
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        ok && secs < 300.0,
        format!("threshold {DEFAULT_THRESHOLD}; {}; {secs:.1}s", lines.join("; ")),
    )
}

// 8 --------------------------------------------------------------------------

/// Video pairs from different individuals at one camera location that score
/// at or above the threshold.
fn false_same_location(run: &Path, data: &bench::SyntheticDataset) -> Result<Vec<(String, String)>, String> {
    let recs = store::load_similarities(&run.join(store::SIMILARITIES_FILE)).map_err(|e| e.to_string())?;
    Ok(recs
        .into_iter()
        .filter(|r| r.score >= DEFAULT_THRESHOLD && r.same_camera_location && data.labels[&r.video_a] != data.labels[&r.video_b])
        .map(|r| (r.video_a, r.video_b))
        .collect())
}

fn flagged_pairs(html: &str) -> Result<BTreeSet<(String, String)>, String> {
    let opts = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let doc = roxmltree::Document::parse_with_options(html, opts).map_err(|e| e.to_string())?;
    Ok(doc
        .descendants()
        .filter(|n| {
            n.has_tag_name("line") && n.attribute("class").is_some_and(|c| c.split(' ').any(|t| t == "same-location"))
        })
        .filter_map(|n| Some((n.attribute("data-a")?.to_string(), n.attribute("data-b")?.to_string())))
        .collect())
}

fn background_failure_mode() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    let mut flagged = 0;
    for crop in [false, true] {
        let dir = tmp.path().join(if crop { "crop" } else { "full" });
        fs::create_dir_all(dir.join("data")).map_err(|e| e.to_string())?;
        let data = synth_run(13, Difficulty::Easy, &dir, |c| c.detect.crop_to_detection = crop)?;
        let run = dir.join("run");
        let false_pairs = false_same_location(&run, &data)?;
        if !crop {
            let html = fs::read_to_string(run.join("report.html")).map_err(|e| e.to_string())?;
            let lines = flagged_pairs(&html)?;
            flagged = false_pairs.iter().filter(|p| lines.contains(*p)).count();
        }
        counts.push(false_pairs.len());
    }
    let (full, cropped) = (counts[0], counts[1]);
    check(
        full >= 1 && flagged >= 1 && (cropped as f64) <= 0.5 * full as f64,
        format!("false same-location matches: {full} on whole frames ({flagged} drawn dashed), {cropped} with cropping"),
    )
}

// 9 --------------------------------------------------------------------------

fn determinism_and_formats() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for workers in [1, 8] {
        let dir = tmp.path().join(format!("w{workers}"));
        fs::create_dir_all(dir.join("data")).map_err(|e| e.to_string())?;
        synth_run(14, Difficulty::Easy, &dir, |c| c.workers = workers)?;
        runs.push(dir.join("run"));
    }
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    for name in [store::SIMILARITIES_FILE, store::CLUSTERS_FILE, store::FEATURES_FILE] {
        if read(&runs[0].join(name))? != read(&runs[1].join(name))? {
            return Err(format!("{name} differs between 1 and 8 workers"));
        }
    }
    let run = &runs[0];
    let features_bytes = read(&run.join(store::FEATURES_FILE))?;
    let features = FeatureStore::open(&run.join(store::FEATURES_FILE)).map_err(|e| e.to_string())?;
    let sims_bytes = read(&run.join(store::SIMILARITIES_FILE))?;
    let sims = store::load_similarities(&run.join(store::SIMILARITIES_FILE)).map_err(|e| e.to_string())?;
    let clusters_bytes = read(&run.join(store::CLUSTERS_FILE))?;
    let graph = store::load_clusters(&run.join(store::CLUSTERS_FILE)).map_err(|e| e.to_string())?;
    let reparsed = store::parse_similarities(&store::similarities_to_csv(&sims), Path::new("mem")).map_err(|e| e.to_string())?;
    let roundtrips = features.to_bytes() == features_bytes
        && store::similarities_to_csv(&sims) == sims_bytes
        && reparsed == sims
        && store::clusters_to_json(&graph) == clusters_bytes;
    if !roundtrips {
        return Err("store roundtrip is not exact".into());
    }
    let html = fs::read_to_string(run.join("report.html")).map_err(|e| e.to_string())?;
    flagged_pairs(&html).map_err(|e| format!("report is not well-formed: {e}"))?;
    let external = ["http://", "https://", "src=\"//", "href=\"//"].iter().any(|p| html.contains(p));
    check(
        !external,
        format!(
            "similarities.csv ({} rows), clusters.json and features.bin identical for 1 and 8 workers; roundtrips exact; report well-formed without external URLs",
            sims.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric reproduction", metric_reproduction),
        ("SIFT oracle equality", sift_oracles),
        ("invariance suite", invariance),
        ("matching oracle", matching_oracle),
        ("clustering equivalence", clustering_equivalence),
        ("threshold monotonicity", threshold_monotonicity),
        ("end-to-end synthetic study", end_to_end),
        ("background failure mode", background_failure_mode),
        ("determinism and formats", determinism_and_formats),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
