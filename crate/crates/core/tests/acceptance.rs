//! Acceptance suite. Runs every criterion at its stated size and tolerance
//! and prints one PASS/FAIL line per criterion, with the measured numbers.
//! Built with `harness = false` so the lines are never captured.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use abht_core::adaptive::{candidate_stream, stage_map, StopReason};
use abht_core::boosting::{fit_bht, BhtParams};
use abht_core::eval::{
    raw_csv, stage_trace, summary_csv, training_size_sweep, ExperimentReport, Method,
};
use abht_core::learners::{default_clip_bound, fit_ht, sample_binary_partition, SplitRule};
use abht_core::regions::initial_partition;
use abht_core::rotation::sample_rotation;
use abht_core::transform::sample_transform;
use abht_core::{
    fit_abht, fit_peht, run_experiment, AbhtConfig, BaseSpec, ExperimentConfig, RegionSpec, RngStream, Rows,
};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;

const TABLE1: [(Method, [f64; 4]); 3] = [
    (Method::Peht, [2.589e-4, 1.220e-3, 1.283e-4, 1.145e-4]),
    (Method::Bht, [1.687e-4, 4.631e-4, 1.270e-4, 1.259e-4]),
    (Method::Abht, [1.500e-4, 3.877e-4, 1.233e-4, 1.101e-4]),
];
const CASE_A_REGIONS: [&str; 4] = ["overall", "[0,1/8)", "[1/8,1/2)", "[1/2,1]"];

struct Outcome {
    pass: bool,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, note: String) {
        self.pass &= ok;
        self.notes.push(format!("{} {note}", if ok { "ok  " } else { "MISS" }));
    }
}

fn mean_of(r: &ExperimentReport, m: Method, region: &str) -> f64 {
    r.method(m).and_then(|x| x.row(region)).map_or(f64::NAN, |row| row.mean)
}

fn failures(r: &ExperimentReport) -> usize {
    r.methods.iter().map(|m| m.failures()).sum()
}

fn criterion_case_a() -> Outcome {
    let mut o = Outcome::new();
    let c = ExperimentConfig::case_a(1000, 1000, 10000, 30, 0);
    let r = run_experiment(&c).expect("valid config");
    o.check(failures(&r) == 0, format!("{} failed repetition fits", failures(&r)));
    let (p, b, a) = (
        mean_of(&r, Method::Peht, "overall"),
        mean_of(&r, Method::Bht, "overall"),
        mean_of(&r, Method::Abht, "overall"),
    );
    o.check(a < b, format!("ABHT {a:.4e} < BHT {b:.4e}"));
    o.check(a < p, format!("ABHT {a:.4e} < PEHT {p:.4e}"));
    let (pr, ar) = (mean_of(&r, Method::Peht, "[0,1/8)"), mean_of(&r, Method::Abht, "[0,1/8)"));
    o.check(pr >= 2.0 * ar, format!("PEHT/ABHT on [0,1/8) = {:.3} >= 2", pr / ar));
    for (m, refs) in TABLE1 {
        for (region, want) in CASE_A_REGIONS.iter().zip(refs) {
            let got = mean_of(&r, m, region);
            let ratio = got / want;
            o.check(
                (0.5..=2.0).contains(&ratio),
                format!("{} {region}: {got:.4e} vs {want:.4e} (x{ratio:.3})", m.name()),
            );
        }
    }
    o
}

fn criterion_case_b() -> Outcome {
    let mut o = Outcome::new();
    let mut c = ExperimentConfig::case_b(5000, 5000, 20000, 10, 0);
    c.methods = vec![Method::Peht, Method::Abht];
    let r = run_experiment(&c).expect("valid config");
    o.check(failures(&r) == 0, format!("{} failed repetition fits", failures(&r)));
    let (p, a) = (mean_of(&r, Method::Peht, "overall"), mean_of(&r, Method::Abht, "overall"));
    o.check(a < p, format!("ABHT {a:.4e} < PEHT {p:.4e}"));
    let rough = "[0,1/3]x[0,1/3]";
    let (pr, ar) = (mean_of(&r, Method::Peht, rough), mean_of(&r, Method::Abht, rough));
    o.check(pr / ar >= 1.3, format!("PEHT/ABHT on {rough} = {:.3} >= 1.3 ({pr:.4e} vs {ar:.4e})", pr / ar));
    o
}

fn criterion_sweep() -> Outcome {
    let mut o = Outcome::new();
    let mut c = ExperimentConfig::case_a(1000, 1000, 10000, 5, 0);
    c.methods = vec![Method::Peht, Method::Abht];
    let sizes = [1000, 3000, 10000];
    let pts = training_size_sweep(&c, &sizes).expect("valid config");
    let get = |n: usize, m: Method| pts.iter().find(|p| p.n == n && p.method == m).unwrap().mean;
    for m in [Method::Peht, Method::Abht] {
        let v: Vec<f64> = sizes.iter().map(|&n| get(n, m)).collect();
        let mono = v.windows(2).all(|w| w[1] <= w[0]);
        o.check(mono, format!("{} nonincreasing: {:.4e} {:.4e} {:.4e}", m.name(), v[0], v[1], v[2]));
    }
    let ratio = |n| get(n, Method::Peht) / get(n, Method::Abht);
    o.check(
        ratio(10000) <= ratio(1000),
        format!("PEHT/ABHT {:.3} at n=10000 <= {:.3} at n=1000", ratio(10000), ratio(1000)),
    );
    o
}

fn criterion_trace() -> Outcome {
    let mut o = Outcome::new();
    let mut early = 0;
    let mut rough_ok = true;
    for seed in 0..10 {
        let c = ExperimentConfig::case_a(1000, 1000, 10000, 1, seed);
        let (model, _) = stage_trace(&c, 0).expect("fit");
        let map = stage_map(&model);
        let right_done = map
            .iter()
            .filter(|b| b.1[0] > 0.5)
            .all(|b| b.2 <= 1 && b.3 != StopReason::Unresolved);
        let bad_rough = map
            .iter()
            .any(|b| b.0[0] < 0.125 && b.2 == 0 && b.3 != StopReason::Sparse);
        early += right_done as usize;
        rough_ok &= !bad_rough;
        o.notes.push(format!(
            "     seed {seed}: {} stages, [1/2,1] stopped by stage 2: {right_done}, stage-1 stop in [0,1/8): {bad_rough}",
            model.num_stages()
        ));
    }
    o.check(early >= 7, format!("[1/2,1] fully stopped within two stages in {early}/10 runs (need 7)"));
    o.check(rough_ok, "no non-sparse stage-1 stop inside [0,1/8) in any run".into());
    o
}

fn rotations(o: &mut Outcome) {
    let mut rng = RngStream::new(0, 1);
    let mut worst_orth: f64 = 0.0;
    let mut worst_det: f64 = 0.0;
    let mut angles = Vec::new();
    for d in 1..=8 {
        for _ in 0..1000 {
            let r = sample_rotation(d, &mut rng).unwrap();
            let e = r.entries();
            let m = DMatrix::from_fn(d, d, |i, j| e[[i, j]]);
            let err = (m.transpose() * &m - DMatrix::identity(d, d)).abs().max();
            worst_orth = worst_orth.max(err);
            worst_det = worst_det.max((m.determinant() - 1.0).abs());
            if d == 2 {
                angles.push(e[[1, 0]].atan2(e[[0, 0]]));
            }
        }
    }
    o.check(worst_orth <= 1e-10, format!("rotation max |RtR - I| = {worst_orth:.2e}"));
    o.check(worst_det <= 1e-10, format!("rotation max |det - 1| = {worst_det:.2e}"));
    // angles of Haar rotations in the plane are uniform on (-pi, pi]
    angles.sort_by(f64::total_cmp);
    let n = angles.len() as f64;
    let ks = angles
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let f = (a + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_p(ks, angles.len());
    o.check(p > 0.01, format!("d=2 angle KS D = {ks:.4}, p = {p:.3} > 0.01"));
}

/// Asymptotic Kolmogorov tail with the usual small-sample correction.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let x = d * (sn + 0.12 + 0.11 / sn);
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn inside(lo: &[f64], hi: &[f64], x: &[f64]) -> bool {
    // half-open, except that the unit cube's upper face is closed
    x.iter()
        .zip(lo.iter().zip(hi))
        .all(|(&v, (&a, &b))| a <= v && (v < b || (b == 1.0 && v == 1.0)))
}

fn partitions(o: &mut Outcome) {
    let mut rng = RngStream::new(0, 2);
    let mut grid_ok = true;
    let mut grid_checked = 0;
    for (d, w) in [(1, 0.2), (1, 0.03), (2, 0.1), (2, 0.3), (3, 0.25)] {
        let g = initial_partition(d, w).unwrap();
        let cells: Vec<_> = g.cells().iter().cloned().collect();
        for i in 0..10_000 {
            let mut x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            if i % 2 == 0 {
                // snap one coordinate to a grid line
                let k = rng.random_range(0..=((1.0 / w).ceil() as u32));
                x[i % d] = (k as f64 * w).min(1.0);
            }
            let hits = cells
                .iter()
                .filter(|c| {
                    let (lo, hi) = g.cell_bounds(c);
                    inside(&lo, &hi, &x)
                })
                .count();
            let (lo, hi) = g.cell_bounds(&g.cell_of(&x));
            grid_ok &= hits == 1 && inside(&lo, &hi, &x);
            grid_checked += 1;
        }
    }
    o.check(grid_ok, format!("grid partitions: {grid_checked} points each in exactly one half-open cell"));

    let mut tree_ok = true;
    let mut tree_checked = 0;
    for (d, depth, rule) in [(1, 5, SplitRule::Uniform), (2, 6, SplitRule::Uniform), (4, 8, SplitRule::Midpoint)] {
        let t = sample_binary_partition(d, depth, rule, &mut rng).unwrap();
        let boxes: Vec<_> = (0..t.num_leaves()).map(|l| t.leaf_box(l)).collect();
        for i in 0..10_000 {
            let mut x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            if i % 2 == 0 {
                // put the point on a split surface
                let s = t.splits()[rng.random_range(0..t.splits().len())];
                x[s.coordinate] = s.threshold;
            }
            let hits = boxes.iter().filter(|(lo, hi)| inside(lo, hi, &x)).count();
            let (lo, hi) = &boxes[t.leaf_of(&x)];
            tree_ok &= hits == 1 && inside(lo, hi, &x);
            tree_checked += 1;
        }
    }
    o.check(tree_ok, format!("binary partitions: {tree_checked} points each in exactly one half-open leaf"));
}

fn ht_oracle(o: &mut Outcome) {
    let mut rng = RngStream::new(0, 3);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let d = 1 + k % 4;
        let n = 50 + 5 * k;
        let xs = Array2::from_shape_simple_fn((n, d), || rng.random::<f64>());
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let clip = [0.5, 1.0, 3.0][k % 3];
        let t = sample_transform([0.05, 0.1, 0.3][k % 3], d, &mut rng).unwrap();
        let m = fit_ht(&Rows::new(&xs), &ys, t.clone(), clip).unwrap();
        let keys: Vec<_> = xs.rows().into_iter().map(|r| t.bin_key(r.as_slice().unwrap()).unwrap()).collect();
        for _ in 0..50 {
            let q: Vec<f64> = if rng.random::<bool>() {
                xs.row(rng.random_range(0..n)).to_vec()
            } else {
                (0..d).map(|_| rng.random::<f64>()).collect()
            };
            let qk = t.bin_key(&q).unwrap();
            let members: Vec<f64> = keys.iter().zip(&ys).filter(|(k, _)| **k == qk).map(|(_, &y)| y).collect();
            let want = if members.is_empty() {
                m.default_value()
            } else {
                (members.iter().sum::<f64>() / members.len() as f64).clamp(-clip, clip)
            };
            worst = worst.max((m.predict(&q) - want).abs());
        }
    }
    o.check(worst <= 1e-12, format!("100 HT fits vs group-by-mean-clip: max diff {worst:.2e}"));
}

fn boosting(o: &mut Outcome) {
    let mut rng = RngStream::new(0, 4);
    let mut mono = true;
    for k in 0..50 {
        let d = 1 + k % 3;
        let xs = Array2::from_shape_simple_fn((200, d), || rng.random::<f64>());
        let ys: Vec<f64> = xs.rows().into_iter().map(|r| (6.0 * r.sum()).sin() + 0.1 * rng.random::<f64>()).collect();
        let base = if k % 2 == 0 { BaseSpec::histogram(0.1) } else { BaseSpec::binary(4) };
        let p = BhtParams::new(base, [0.05, 0.2, 0.5][k % 3], 40, 1.5);
        let m = fit_bht(&Rows::new(&xs), &ys, &p, &mut rng.split(k as u64)).unwrap().model;
        let mut prev = m.initial_mse();
        for &e in m.mse_trace() {
            mono &= e <= prev;
            prev = e;
        }
    }
    o.check(mono, "mse_trace nonincreasing on 50 random fits".into());

    let mut worst: f64 = 0.0;
    for (c, rho) in [(0.7, 0.1), (-1.3, 0.25), (2.0, 0.5)] {
        let xs = Array2::from_shape_simple_fn((300, 2), || rng.random::<f64>());
        let ys = vec![c; 300];
        let p = BhtParams::new(BaseSpec::histogram(0.2), rho, 30, 5.0);
        let m = fit_bht(&Rows::new(&xs), &ys, &p, &mut RngStream::new(1, 0)).unwrap().model;
        for (t, &e) in m.mse_trace().iter().enumerate() {
            let want = c * c * (1.0 - rho).powi(2 * (t as i32 + 1));
            worst = worst.max((e - want).abs());
        }
    }
    o.check(worst <= 1e-10, format!("constant target decay c^2(1-rho)^(2t): max diff {worst:.2e}"));
}

fn abht_single_stage(o: &mut Outcome) {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed, 5);
        let draw = |rng: &mut RngStream, n| {
            let xs = Array2::from_shape_simple_fn((n, 1), || rng.random::<f64>());
            let ys: Vec<f64> = xs.iter().map(|&x| abht_core::data::case_a_target(x) + 0.01 * (rng.random::<f64>() - 0.5)).collect();
            (xs, ys)
        };
        let (xs, ys) = draw(&mut rng, 300);
        let (vx, vy) = draw(&mut rng, 300);
        let bases = vec![BaseSpec::histogram(0.02), BaseSpec::histogram(0.05), BaseSpec::histogram(0.1)];
        let mut cfg = AbhtConfig::new(bases.clone(), vec![0.1, 0.2], vec![10, 30], RegionSpec::Grid { initial_width: 0.2 });
        cfg.max_stages = 1;
        let root = RngStream::new(seed, 6);
        let m = fit_abht(&Rows::new(&xs), &ys, &Rows::new(&vx), &vy, &cfg, &root).unwrap();
        let st = &m.stages()[0];
        // candidate streams index the grid coarsest first
        let mut sorted = bases.clone();
        sorted.sort_by(|a, b| b.coarseness_cmp(a));
        let idx = sorted.iter().position(|b| *b == st.chosen_base).unwrap();
        let p = BhtParams::new(st.chosen_base, st.chosen_rate, st.chosen_iters, default_clip_bound(&ys));
        let bht = fit_bht(&Rows::new(&xs), &ys, &p, &mut candidate_stream(&root, 1, idx)).unwrap().model;
        for x in Rows::new(&vx).iter() {
            worst = worst.max((m.predict(x).unwrap() - bht.predict(x)).abs());
        }
    }
    o.check(worst <= 1e-12, format!("ABHT with one stage vs direct BHT on 20 seeds: max diff {worst:.2e}"));
}

fn peht_identity(o: &mut Outcome) {
    let mut rng = RngStream::new(0, 7);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let d = 1 + k % 3;
        let xs = Array2::from_shape_simple_fn((120, d), || rng.random::<f64>());
        let ys: Vec<f64> = xs.rows().into_iter().map(|r| r.sum().cos()).collect();
        let base = if k % 2 == 0 { BaseSpec::histogram(0.15) } else { BaseSpec::binary(5) };
        let m = fit_peht(&Rows::new(&xs), &ys, base, 1 + k % 17, 1.0, &rng.split(k as u64)).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let naive = m.learners().iter().map(|l| l.predict(&x)).sum::<f64>() / m.len() as f64;
            worst = worst.max((m.predict(&x) - naive).abs());
        }
    }
    o.check(worst <= 1e-12, format!("PEHT mean identity on 50 models: max diff {worst:.2e}"));
}

fn determinism(o: &mut Outcome) {
    let c = ExperimentConfig::case_a(1000, 1000, 10000, 2, 11);
    let render = |r: &ExperimentReport| {
        r.methods
            .iter()
            .map(|m| summary_csv(m) + &raw_csv(m))
            .collect::<String>()
    };
    let a = render(&run_experiment(&c).unwrap());
    let b = render(&run_experiment(&c).unwrap());
    o.check(a == b, format!("two same-seed Case A runs: byte-identical reports ({} bytes)", a.len()));
}

fn criterion_properties() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    rotations(&mut o);
    partitions(&mut o);
    ht_oracle(&mut o);
    boosting(&mut o);
    abht_single_stage(&mut o);
    peht_identity(&mut o);
    determinism(&mut o);
    let secs = start.elapsed().as_secs_f64();
    o.check(secs < 60.0, format!("suite time {secs:.1} s < 60 s"));
    o
}

fn criterion_tabular() -> Outcome {
    let mut o = Outcome::new();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/tabular_d8.csv");
    let mut c = ExperimentConfig::tabular(path, "y", 3, 0);
    c.methods = vec![Method::Peht, Method::Abht];
    let r = match run_experiment(&c) {
        Ok(r) => r,
        Err(e) => {
            o.check(false, format!("pipeline error: {e}"));
            return o;
        }
    };
    o.check(failures(&r) == 0, format!("{} failed repetition fits", failures(&r)));
    let (p, a) = (mean_of(&r, Method::Peht, "overall"), mean_of(&r, Method::Abht, "overall"));
    o.check(a <= 1.05 * p, format!("ABHT {a:.4e} <= 1.05 x PEHT {p:.4e} (ratio {:.3})", a / p));
    o
}

fn main() -> ExitCode {
    // accept and ignore the flags cargo passes to test binaries
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 6] = [
        ("1", "Case A ordering and Table 1 magnitudes (30 reps)", criterion_case_a),
        ("2", "Case B ordering and rough-block gap (10 reps)", criterion_case_b),
        ("3", "training-size trend on Case A (5 reps per n)", criterion_sweep),
        ("4", "stage trace over 10 seeds on Case A", criterion_trace),
        ("5", "property suites", criterion_properties),
        ("6", "tabular binary-histogram smoke (3 reps)", criterion_tabular),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id}: {name} [{:.1} s]", start.elapsed().as_secs_f64());
        for n in &out.notes {
            println!("    {n}");
        }
        if !out.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
