//! Release gate for the workspace: nine end-to-end checks covering solver
//! correctness, metric identities, refinement quality on a synthetic
//! corpus, robustness, and bitwise reproducibility. Each test prints one
//! `criterion N (...): PASS` line when it holds; the oracles here are
//! written independently of the library code they check.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use tsr_core::baselines::{glr_refine, glr_train, ne_weights};
use tsr_core::ingest::{generate_synthetic, Extent, SynthScenario};
use tsr_core::metrics;
use tsr_core::nalr::{self, fit_neighborhood, NalrConfig, Neighborhood};
use tsr_core::patches::{Patch2, Patch3, SampleSet};
use tsr_core::perturb;
use tsr_core::tsgrid::{CellSize, TSDiagram};

// ---------------------------------------------------------------------------
// Independent solvers used as oracles.

/// Gauss-Jordan elimination with partial pivoting, followed by two rounds
/// of iterative refinement. `a` is row-major n×n and stays untouched.
fn dense_solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let gj = |rhs: &[f64]| -> Vec<f64> {
        let mut m = vec![0.0; n * (n + 1)];
        for r in 0..n {
            m[r * (n + 1)..r * (n + 1) + n].copy_from_slice(&a[r * n..(r + 1) * n]);
            m[r * (n + 1) + n] = rhs[r];
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| m[i * (n + 1) + col].abs().total_cmp(&m[j * (n + 1) + col].abs()))
                .unwrap();
            assert!(m[pivot * (n + 1) + col] != 0.0, "oracle system is singular");
            if pivot != col {
                for k in 0..=n {
                    m.swap(col * (n + 1) + k, pivot * (n + 1) + k);
                }
            }
            let d = m[col * (n + 1) + col];
            for k in 0..=n {
                m[col * (n + 1) + k] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = m[r * (n + 1) + col];
                    if f != 0.0 {
                        for k in 0..=n {
                            m[r * (n + 1) + k] -= f * m[col * (n + 1) + k];
                        }
                    }
                }
            }
        }
        (0..n).map(|r| m[r * (n + 1) + n]).collect()
    };
    let mut x = gj(b);
    for _ in 0..2 {
        let mut residual = vec![0.0; n];
        for r in 0..n {
            let mut acc = -b[r];
            for c in 0..n {
                acc += a[r * n + c] * x[c];
            }
            residual[r] = acc;
        }
        let correction = gj(&residual);
        for (xi, ci) in x.iter_mut().zip(&correction) {
            *xi -= ci;
        }
    }
    x
}

/// Least-squares fit of the four affine block maps straight from the
/// normal equations, with an optional ridge penalty on the nine slopes.
fn fit_oracle(members: &[(Patch3, Patch2)], lambda: f64) -> [[f64; 10]; 4] {
    let n = 10;
    let mut a = vec![0.0; n * n];
    let mut rhs = [[0.0; 10]; 4];
    for (low, high) in members {
        let mut x = [0.0; 10];
        x[0] = 1.0;
        x[1..].copy_from_slice(&low.0);
        for r in 0..n {
            for c in 0..n {
                a[r * n + c] += x[r] * x[c];
            }
            for m in 0..4 {
                rhs[m][r] += x[r] * high.0[m];
            }
        }
    }
    for d in 1..n {
        a[d * n + d] += lambda;
    }
    let mut out = [[0.0; 10]; 4];
    for m in 0..4 {
        out[m].copy_from_slice(&dense_solve(&a, &rhs[m], n));
    }
    out
}

/// Constrained least-squares reconstruction weights via the explicit
/// Lagrange-multiplier system: minimize wᵀGw subject to Σw = 1, where G is
/// the Gram matrix of neighbor-minus-query differences (plus the same
/// trace-scaled regularization the library applies).
fn ne_weights_oracle(query: &Patch3, neighbors: &[Patch3]) -> Vec<f64> {
    let k = neighbors.len();
    let diffs: Vec<[f64; 9]> = neighbors
        .iter()
        .map(|p| std::array::from_fn(|i| p.0[i] - query.0[i]))
        .collect();
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            gram[i * k + j] = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum();
        }
    }
    let trace: f64 = (0..k).map(|i| gram[i * k + i]).sum();
    let reg = if trace > 0.0 { 1e-6 * trace / k as f64 } else { 1e-12 };
    let n = k + 1;
    let mut kkt = vec![0.0; n * n];
    for i in 0..k {
        for j in 0..k {
            kkt[i * n + j] = 2.0 * (gram[i * k + j] + if i == j { reg } else { 0.0 });
        }
        kkt[i * n + k] = 1.0;
        kkt[k * n + i] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[k] = 1.0;
    let solution = dense_solve(&kkt, &b, n);
    solution[..k].to_vec()
}

fn random_patch3(rng: &mut ChaCha8Rng) -> Patch3 {
    Patch3(std::array::from_fn(|_| rng.random_range(0.0..100.0)))
}

// ---------------------------------------------------------------------------
// Synthetic corpus shared by the end-to-end checks.

struct Suite {
    train: SampleSet,
    tests: Vec<(TSDiagram, TSDiagram)>,
}

fn build_suite() -> Suite {
    let cell = CellSize::new(30.0, 50.0).unwrap();
    let extent = Extent::new(2400.0, 4000.0).unwrap();
    let slopes = [-3.4, -4.2, -5.0, -5.8, -3.8, -5.4];
    let mut pairs = Vec::new();
    for (i, &slope) in slopes.iter().enumerate() {
        let t0 = 150.0 + 120.0 * i as f64;
        let scenario = SynthScenario {
            free_speed: 95.0,
            jam_speed: 8.0 + (i % 3) as f64 * 2.0,
            wave_origins: vec![(t0 + 1250.0, 3700.0)],
            wave_slope_mps: slope,
            wave_width_s: 280.0,
            noise_sd: 1.5,
        };
        let high = generate_synthetic(&scenario, cell, extent, 100 + i as u64).unwrap();
        assert_eq!((high.rows(), high.cols()), (80, 80));
        let low_clean = high.downsample_mean(2).unwrap();
        let low = perturb::add_noise(&low_clean, 1.5, 500 + i as u64).unwrap();
        pairs.push((low, high));
    }
    let tests = pairs.split_off(4);
    let mut train: Option<SampleSet> = None;
    for (low, high) in &pairs {
        let set = SampleSet::build(low, high).unwrap();
        match &mut train {
            Some(t) => t.append(set).unwrap(),
            None => train = Some(set),
        }
    }
    Suite { train: train.unwrap(), tests }
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(build_suite)
}

fn nalr_cfg(k: usize) -> NalrConfig {
    NalrConfig { k, ..NalrConfig::default() }
}

/// Mean NALR test error over the held-out diagrams at one neighborhood
/// size, optionally refining perturbed copies of the low inputs.
fn suite_mae(k: usize, prep: impl Fn(usize, &TSDiagram) -> TSDiagram) -> f64 {
    let s = suite();
    let cfg = nalr_cfg(k);
    let mut total = 0.0;
    for (i, (low, high)) in s.tests.iter().enumerate() {
        let refined = nalr::refine(&prep(i, low), &s.train, &cfg).unwrap();
        total += metrics::mae(high, &refined).unwrap();
    }
    total / s.tests.len() as f64
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_regression_and_embedding_match_independent_solvers() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_001);
    for trial in 0..200 {
        let k = [10, 50, 200][trial % 3];
        let members: Vec<(Patch3, Patch2)> = (0..k)
            .map(|_| {
                let low = random_patch3(&mut rng);
                let high = Patch2(std::array::from_fn(|_| rng.random_range(0.0..100.0)));
                (low, high)
            })
            .collect();
        let neighborhood = Neighborhood {
            caes: vec![0.0; members.len()],
            indices: (0..members.len()).collect(),
            members: members.clone(),
        };
        let cfg = NalrConfig { k, ridge_lambda: 0.0, ..NalrConfig::default() };
        let fitted = fit_neighborhood(&neighborhood, &cfg).unwrap();
        let wanted = fit_oracle(&members, 0.0);
        for m in 0..4 {
            for c in 0..10 {
                let (got, want) = (fitted.rows[m][c], wanted[m][c]);
                assert!(
                    (got - want).abs() <= 1e-8 * want.abs().max(1.0),
                    "trial {trial} k {k}: map {m} coefficient {c}: {got} vs oracle {want}"
                );
            }
        }
    }
    for trial in 0..60 {
        let k = [3, 5, 8][trial % 3];
        let query = random_patch3(&mut rng);
        let neighbors: Vec<Patch3> = (0..k).map(|_| random_patch3(&mut rng)).collect();
        let got = ne_weights(&query, &neighbors).unwrap();
        let want = ne_weights_oracle(&query, &neighbors);
        for i in 0..k {
            assert!(
                (got[i] - want[i]).abs() <= 1e-8 * want[i].abs().max(1.0),
                "trial {trial}: weight {i}: {} vs oracle {}",
                got[i],
                want[i]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10 s");
    println!("criterion 1 (regression and embedding fits match independent solvers): PASS");
}

#[test]
fn criterion_2_training_data_is_reproduced_exactly_at_k_1() {
    let start = Instant::now();
    let cell = CellSize::new(30.0, 50.0).unwrap();
    let scenario = SynthScenario {
        free_speed: 95.0,
        jam_speed: 10.0,
        wave_origins: vec![(400.0, 1000.0), (1100.0, 1200.0)],
        wave_slope_mps: -4.5,
        wave_width_s: 300.0,
        noise_sd: 1.0,
    };
    let high = generate_synthetic(&scenario, cell, Extent::new(1500.0, 1250.0).unwrap(), 42).unwrap();
    assert_eq!((high.rows(), high.cols()), (25, 50));
    let wide = generate_synthetic(&scenario, cell, Extent::new(1500.0, 2500.0).unwrap(), 42).unwrap();
    assert_eq!((wide.rows(), wide.cols()), (50, 50));
    let low = wide.downsample_mean(2).unwrap();
    let set = SampleSet::build(&low, &wide).unwrap();
    let cfg = NalrConfig { k: 1, clamp_output: false, ..NalrConfig::default() };
    let refined = nalr::refine(&low, &set, &cfg).unwrap();

    // Interior low cells have genuine 3×3 windows, so their queries equal
    // training patches exactly and the k=1 fit must return the paired block.
    let mut total = 0.0;
    let mut cells = 0usize;
    for r in 1..low.rows() - 1 {
        for c in 1..low.cols() - 1 {
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                total += (refined.value(2 * r + dr, 2 * c + dc) - wide.value(2 * r + dr, 2 * c + dc)).abs();
                cells += 1;
            }
        }
    }
    let interior_mae = total / cells as f64;
    assert!(interior_mae <= 1e-6, "interior reconstruction MAE {interior_mae}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}, budget 5 s");
    println!("criterion 2 (training data reproduced exactly at k=1): PASS");
}

fn random_diagram(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> TSDiagram {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    TSDiagram::from_values(rows, cols, values, CellSize::new(30.0, 50.0).unwrap()).unwrap()
}

fn shift_diagram(d: &TSDiagram, delta: f64) -> TSDiagram {
    let values: Vec<f64> = d.values().iter().map(|v| v + delta).collect();
    TSDiagram::from_values(d.rows(), d.cols(), values, d.cell_size()).unwrap()
}

#[test]
fn criterion_3_metric_identities_hold_on_random_diagrams() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..100 {
        let x = random_diagram(&mut rng, 9, 11, 5.0, 85.0);
        let ssim_xx = metrics::ssim(&x, &x).unwrap();
        assert!((ssim_xx - 1.0).abs() <= 1e-9, "trial {trial}: ssim(x,x) = {ssim_xx}");
        let gmsd_xx = metrics::gmsd(&x, &x).unwrap();
        assert!(gmsd_xx.abs() <= 1e-12, "trial {trial}: gmsd(x,x) = {gmsd_xx}");
        assert_eq!(metrics::cmjs(&x, &x, 30.0).unwrap(), 1.0, "trial {trial}");
        assert_eq!(metrics::mae(&x, &x).unwrap(), 0.0, "trial {trial}");

        // A +10 km/h shift of both inputs leaves every gradient unchanged,
        // so the gradient-similarity deviation must not move either.
        let y = random_diagram(&mut rng, 9, 11, 5.0, 85.0);
        let base = metrics::gmsd(&x, &y).unwrap();
        let shifted = metrics::gmsd(&shift_diagram(&x, 10.0), &shift_diagram(&y, 10.0)).unwrap();
        assert!(
            (base - shifted).abs() <= 1e-10,
            "trial {trial}: gmsd moved from {base} to {shifted} under a +10 shift"
        );
    }
    println!("criterion 3 (metric identities on random diagrams): PASS");
}

/// Windowed structural similarity computed directly from its definition,
/// written without reference to the library implementation.
fn ssim_direct(a: &TSDiagram, b: &TSDiagram) -> f64 {
    let (rows, cols) = (a.rows(), a.cols());
    let w = 7usize.min(rows).min(cols);
    let mut scores = Vec::new();
    for r0 in 0..=(rows - w) {
        for c0 in 0..=(cols - w) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    xs.push(a.value(r, c));
                    ys.push(b.value(r, c));
                }
            }
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n;
            let vy = ys.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n;
            let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
            let c1 = 1.0;
            let c2 = 9.0;
            scores.push(((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Sobel gradient-magnitude similarity deviation computed directly: edge
/// cells replicate the border, the similarity map uses the same small
/// stabilizer, and the score is the population standard deviation.
fn gmsd_direct(a: &TSDiagram, b: &TSDiagram) -> f64 {
    let grad = |d: &TSDiagram, r: isize, c: isize| -> f64 {
        let at = |rr: isize, cc: isize| -> f64 {
            let rr = rr.clamp(0, d.rows() as isize - 1) as usize;
            let cc = cc.clamp(0, d.cols() as isize - 1) as usize;
            d.value(rr, cc)
        };
        let gx = at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)
            - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
        let gy = at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)
            - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        (gx * gx + gy * gy).sqrt()
    };
    let mut map = Vec::new();
    for r in 0..a.rows() as isize {
        for c in 0..a.cols() as isize {
            let (ga, gb) = (grad(a, r, c), grad(b, r, c));
            map.push((2.0 * ga * gb + 1e-8) / (ga * ga + gb * gb + 1e-8));
        }
    }
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    (map.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n).sqrt()
}

#[test]
fn criterion_4_metric_values_match_direct_formula_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for trial in 0..50 {
        let a = random_diagram(&mut rng, 8, 8, 0.0, 100.0);
        let b = random_diagram(&mut rng, 8, 8, 0.0, 100.0);
        let (got_ssim, want_ssim) = (metrics::ssim(&a, &b).unwrap(), ssim_direct(&a, &b));
        assert!((got_ssim - want_ssim).abs() <= 1e-9, "trial {trial}: ssim {got_ssim} vs {want_ssim}");
        let (got_gmsd, want_gmsd) = (metrics::gmsd(&a, &b).unwrap(), gmsd_direct(&a, &b));
        assert!((got_gmsd - want_gmsd).abs() <= 1e-9, "trial {trial}: gmsd {got_gmsd} vs {want_gmsd}");
    }

    // Congestion-map agreement is plain set arithmetic on the cells below
    // the threshold, so hand-counted intersections must match exactly.
    let cell = CellSize::new(30.0, 50.0).unwrap();
    let d = |values: [f64; 4]| TSDiagram::from_values(2, 2, values.to_vec(), cell).unwrap();
    let truth = d([10.0, 10.0, 80.0, 80.0]); // congested: cells 0, 1
    let pred = d([10.0, 80.0, 10.0, 80.0]); // congested: cells 0, 2
    assert_eq!(metrics::cmjs(&truth, &pred, 30.0).unwrap(), 1.0 / 3.0); // |∩|=1, |∪|=3
    let disjoint = d([80.0, 80.0, 10.0, 10.0]); // congested: cells 2, 3
    assert_eq!(metrics::cmjs(&truth, &disjoint, 30.0).unwrap(), 0.0);
    let free = d([80.0, 80.0, 80.0, 80.0]);
    assert_eq!(metrics::cmjs(&free, &free, 30.0).unwrap(), 1.0); // both maps empty
    println!("criterion 4 (ssim/gmsd/cmjs match direct formula evaluation): PASS");
}

#[test]
fn criterion_5_refinement_beats_baselines_on_the_synthetic_corpus() {
    let start = Instant::now();
    let s = build_suite(); // fresh build so the generation cost is inside the budget
    let cfg = nalr_cfg(100);
    let glr = glr_train(&s.train, 30.0).unwrap();
    let mut beats_glr = 0;
    for (i, (low, high)) in s.tests.iter().enumerate() {
        let nalr_mae = metrics::mae(high, &nalr::refine(low, &s.train, &cfg).unwrap()).unwrap();
        let nn_mae = metrics::mae(high, &low.upsample_nearest(2).unwrap()).unwrap();
        let glr_mae = metrics::mae(high, &glr_refine(low, &glr).unwrap()).unwrap();
        let gain = (nn_mae - nalr_mae) / nn_mae;
        assert!(
            gain >= 0.20,
            "test {i}: only {:.1}% better than nearest-neighbor ({nalr_mae:.3} vs {nn_mae:.3})",
            gain * 100.0
        );
        if nalr_mae <= glr_mae {
            beats_glr += 1;
        }
    }
    assert!(beats_glr >= 1, "global regression won every test diagram");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 60 s");
    println!("criterion 5 (neighborhood regression beats both baselines end to end): PASS");
}

#[test]
fn criterion_6_neighborhood_size_error_curve_is_u_shaped() {
    let identity = |_: usize, low: &TSDiagram| low.clone();
    let interior_best = [25, 50, 100, 200]
        .into_iter()
        .map(|k| suite_mae(k, identity))
        .fold(f64::INFINITY, f64::min);
    let tiny = suite_mae(5, identity);
    let full = suite_mae(suite().train.len(), identity);
    assert!(
        tiny > interior_best,
        "MAE at k=5 ({tiny:.4}) does not exceed the interior minimum ({interior_best:.4})"
    );
    assert!(
        full > interior_best,
        "MAE at k=full ({full:.4}) does not exceed the interior minimum ({interior_best:.4})"
    );
    println!("criterion 6 (neighborhood-size error curve is U-shaped): PASS");
}

#[test]
fn criterion_7_noise_and_missing_data_degrade_gracefully() {
    let clean = suite_mae(100, |_, low| low.clone());
    let noisy = suite_mae(100, |i, low| perturb::add_noise(low, 2.0, 7 + i as u64).unwrap());
    assert!(
        noisy - clean <= 2.5,
        "adding 2 km/h input noise moved MAE from {clean:.4} to {noisy:.4}"
    );
    let imputed = suite_mae(100, |i, low| {
        let holed = perturb::drop_random(low, 0.2, 7 + i as u64).unwrap();
        perturb::impute_nine_cell(&holed).unwrap()
    });
    assert!(
        imputed <= 1.25 * clean,
        "20% missing cells moved MAE from {clean:.4} to {imputed:.4}, beyond 25%"
    );
    println!("criterion 7 (noise and missing data degrade gracefully): PASS");
}

#[test]
fn criterion_8_improvement_rates_and_optional_real_data_range() {
    let mae_rate = tsr_cli::summary::improvement_lower_better(3.604, 3.287) * 100.0;
    assert!((mae_rate - 8.80).abs() <= 0.05, "MAE improvement rate {mae_rate:.3}%");
    let ssim_rate = tsr_cli::summary::improvement_higher_better(0.862, 0.889) * 100.0;
    assert!((ssim_rate - 3.10).abs() <= 0.05, "SSIM improvement rate {ssim_rate:.3}%");

    match std::env::var_os("TSR_NGSIM_DIR") {
        None => {
            println!("criterion 8 (ngsim spot check): SKIP — TSR_NGSIM_DIR not set");
        }
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let load = |name: &str| {
                tsr_core::tsgrid::load_matrix(&dir.join(name))
                    .unwrap_or_else(|e| panic!("loading {name} from TSR_NGSIM_DIR: {e}"))
            };
            let set = SampleSet::build(&load("train_low.csv"), &load("train_high.csv")).unwrap();
            let refined = nalr::refine(&load("test_low.csv"), &set, &nalr_cfg(100)).unwrap();
            let mae = metrics::mae(&load("test_high.csv"), &refined).unwrap();
            assert!(
                (0.7..=1.4).contains(&mae),
                "real-data 4x refinement MAE {mae:.3} outside [0.7, 1.4]"
            );
        }
    }
    println!("criterion 8 (improvement-rate arithmetic): PASS");
}

// ---------------------------------------------------------------------------
// Bitwise reproducibility through the installed binary.

fn tsr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsr"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("spawning tsr");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn assert_identical_outputs(a: &Path, b: &Path) {
    let mut names: Vec<PathBuf> = Vec::new();
    let mut stack = vec![a.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv" || e == "meta")
                && !path.file_name().is_some_and(|n| n.to_string_lossy().contains("timings"))
            {
                names.push(path.strip_prefix(a).unwrap().to_path_buf());
            }
        }
    }
    assert!(!names.is_empty(), "no outputs found under {}", a.display());
    for name in names {
        assert_eq!(
            read_bytes(&a.join(&name)),
            read_bytes(&b.join(&name)),
            "{} differs between worker counts",
            name.display()
        );
    }
}

#[test]
fn criterion_9_outputs_are_byte_identical_at_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Deterministic generation: the same seed must give the same bytes.
    for name in ["gen_a", "gen_b"] {
        run_ok(tsr().args([
            "synth",
            "--output",
            root.join(format!("{name}.csv")).to_str().unwrap(),
            "--low-output",
            root.join(format!("{name}_low.csv")).to_str().unwrap(),
            "--extent-time",
            "1200",
            "--extent-space",
            "2000",
            "--cell-time",
            "30",
            "--cell-space",
            "50",
            "--wave",
            "400,1800",
            "--wave-width",
            "280",
            "--noise-sd",
            "1.5",
            "--seed",
            "9",
        ]));
    }
    assert_eq!(read_bytes(&root.join("gen_a.csv")), read_bytes(&root.join("gen_b.csv")));
    assert_eq!(read_bytes(&root.join("gen_a_low.csv")), read_bytes(&root.join("gen_b_low.csv")));

    // A small corpus for the experiment and sweep runners.
    for i in 0..3 {
        let t0 = 300 + 200 * i;
        run_ok(tsr().args([
            "synth",
            "--output",
            root.join(format!("high{i}.csv")).to_str().unwrap(),
            "--low-output",
            root.join(format!("low_clean{i}.csv")).to_str().unwrap(),
            "--extent-time",
            "1200",
            "--extent-space",
            "2000",
            "--cell-time",
            "30",
            "--cell-space",
            "50",
            "--wave",
            &format!("{t0},1800"),
            "--wave-width",
            "280",
            "--noise-sd",
            "1.5",
            "--seed",
            &format!("{}", 70 + i),
        ]));
        run_ok(tsr().args([
            "perturb",
            "--input",
            root.join(format!("low_clean{i}.csv")).to_str().unwrap(),
            "--output",
            root.join(format!("low{i}.csv")).to_str().unwrap(),
            "--noise-sd",
            "1.5",
            "--seed",
            &format!("{}", 570 + i),
        ]));
    }
    std::fs::write(
        root.join("exp.cfg"),
        "seed = 11\n\
         methods = nalr, glr, ne, nn\n\
         factors = 4\n\
         k = 60\n\
         [train]\n\
         low = low0.csv\n\
         high = high0.csv\n\
         [train]\n\
         low = low1.csv\n\
         high = high1.csv\n\
         [test]\n\
         low = low2.csv\n\
         high = high2.csv\n\
         [sweep]\n\
         kind = k\n\
         values = 25, 60\n\
         [sweep]\n\
         kind = noise\n\
         values = 0, 1\n\
         [sweep]\n\
         kind = missing\n\
         values = 0, 0.1\n\
         [sweep]\n\
         kind = train_size\n\
         values = 0.5, 1.0\n",
    )
    .unwrap();

    let cfg = root.join("exp.cfg");
    for (out_dir, workers) in [("exp_w1", "1"), ("exp_w4", "4")] {
        run_ok(tsr().args([
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--output-dir",
            root.join(out_dir).to_str().unwrap(),
            "--workers",
            workers,
        ]));
    }
    assert_identical_outputs(&root.join("exp_w1"), &root.join("exp_w4"));

    for (out_dir, workers) in [("sweep_w1", "1"), ("sweep_w4", "4")] {
        run_ok(tsr().args([
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--output-dir",
            root.join(out_dir).to_str().unwrap(),
            "--workers",
            workers,
        ]));
    }
    assert_identical_outputs(&root.join("sweep_w1"), &root.join("sweep_w4"));

    // The refine subcommand through both worker counts.
    for (out, workers) in [("ref_w1.csv", "1"), ("ref_w4.csv", "4")] {
        run_ok(tsr().args([
            "refine",
            "--input",
            root.join("low2.csv").to_str().unwrap(),
            "--output",
            root.join(out).to_str().unwrap(),
            "--method",
            "nalr",
            "--k",
            "60",
            "--train",
            &format!("{}:{}", root.join("low0.csv").display(), root.join("high0.csv").display()),
            "--workers",
            workers,
        ]));
    }
    assert_eq!(read_bytes(&root.join("ref_w1.csv")), read_bytes(&root.join("ref_w4.csv")));
    println!("criterion 9 (byte-identical outputs at any worker count): PASS");
}
