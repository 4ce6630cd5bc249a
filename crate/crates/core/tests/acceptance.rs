//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use lpm_core::filters::{composite_kernel, filter_stream, FilterSpec};
use lpm_core::geometry::{distance, forward_pseudo_range, Point, StationArray};
use lpm_core::harness::bench::compare;
use lpm_core::harness::figures::{default_scenario, reproduce};
use lpm_core::harness::io::write_measurements;
use lpm_core::harness::{run, Method, SolveOptions};
use lpm_core::simulate::{build_stations, synthesize};
use lpm_core::solvers::{
    build_linear_system, solve_linear, solve_nonlinear_tdoa, tdoa_jacobian, tdoa_residuals, LmConfig,
};
use lpm_core::transform::{augment, pairwise_diff, select_diffs, PairSelection};
use lpm_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Stations on a circle with jittered angles, so the origin stays inside the
/// polygon; the transponder is a random convex combination of the stations.
fn random_scene(rng: &mut ChaCha8Rng) -> (StationArray, Point, f64) {
    let n = rng.random_range(4..=8);
    let radius = rng.random_range(5.0..20.0);
    let rotation = rng.random_range(0.0..TAU);
    let bases: Vec<Point> = (0..n)
        .map(|i| {
            let a = rotation + (i as f64 + rng.random_range(-0.3..0.3)) * TAU / n as f64;
            Point::new2(radius * a.cos(), radius * a.sin())
        })
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64)).collect();
    let total: f64 = w.iter().sum();
    let (x, y) = bases
        .iter()
        .zip(&w)
        .fold((0.0, 0.0), |(x, y), (b, w)| (x + b.x() * w / total, y + b.y() * w / total));
    let offset = rng.random_range(0.0..1e7);
    let st = StationArray::new(bases, Point::new2(0.0, 0.0)).unwrap();
    (st, Point::new2(x, y), offset)
}

fn exact_recovery() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = LmConfig::default();
    let (mut lin_fail, mut nl_fail, mut off_fail) = (0, 0, 0);
    let (mut lin_worst, mut nl_worst, mut off_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (st, m, o) = random_scene(&mut rng);
        let aug = augment(&forward_pseudo_range(&st, &m, o).unwrap(), &st).unwrap();

        let sys = build_linear_system(&aug, &st, PairSelection::Pivot(0)).unwrap();
        let fix = solve_linear(&sys, None).unwrap();
        let e = fix.position.map_or(f64::INFINITY, |p| distance(&p, &m).unwrap());
        let oe = fix.offset.map_or(f64::INFINITY, |v| (v - o).abs());
        lin_worst = lin_worst.max(e);
        off_worst = off_worst.max(oe);
        lin_fail += usize::from(!(e <= 1e-6));
        off_fail += usize::from(!(oe <= 1e-3));

        let start = Point::origin(2).unwrap();
        let fix = solve_nonlinear_tdoa(&aug, &st, PairSelection::Pivot(0), &start, &cfg).unwrap();
        let e = fix.position.map_or(f64::INFINITY, |p| distance(&p, &m).unwrap());
        nl_worst = nl_worst.max(e);
        nl_fail += usize::from(!(e <= 1e-6));
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        lin_fail + nl_fail + off_fail == 0 && secs < 10.0,
        format!(
            "linear misses {lin_fail} (worst {lin_worst:.2e} m), offset misses {off_fail} \
             (worst {off_worst:.2e} m), nonlinear misses {nl_fail} (worst {nl_worst:.2e} m), {secs:.2} s"
        ),
    )
}

fn offset_elimination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (st, m, o) = random_scene(&mut rng);
        let mut frame = forward_pseudo_range(&st, &m, o).unwrap();
        for r in &mut frame.pseudo_ranges {
            *r += rng.random_range(-0.1..0.1);
        }
        let probe = Point::new2(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let aug = augment(&frame, &st).unwrap();
        let base_diffs = pairwise_diff(&aug, 0).unwrap();
        let base_res = tdoa_residuals(&probe, &aug, &st, PairSelection::AllPairs).unwrap();
        for c in [1.0, 1e3, 1e7] {
            let shifted = augment(&frame.shifted(c), &st).unwrap();
            let diffs = pairwise_diff(&shifted, 0).unwrap();
            for ((i, a), (j, b)) in base_diffs.diffs.iter().zip(&diffs.diffs) {
                assert_eq!(i, j);
                worst = worst.max((a - b).abs());
            }
            let res = tdoa_residuals(&probe, &shifted, &st, PairSelection::AllPairs).unwrap();
            for (a, b) in base_res.iter().zip(&res) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst <= 1e-6, format!("max change {worst:.2e} m over 200 frames"))
}

struct Figures {
    dir: PathBuf,
    summaries: BTreeMap<u32, BTreeMap<String, f64>>,
    seconds: BTreeMap<u32, f64>,
}

impl Figures {
    fn new() -> Self {
        let dir = std::env::temp_dir().join(format!("lpm-acceptance-{}", std::process::id()));
        Self {
            dir,
            summaries: BTreeMap::new(),
            seconds: BTreeMap::new(),
        }
    }

    fn get(&mut self, figure: u32, key: &str) -> f64 {
        if !self.summaries.contains_key(&figure) {
            let started = Instant::now();
            let out = reproduce(figure, &self.dir, None).unwrap();
            self.seconds.insert(figure, started.elapsed().as_secs_f64());
            self.summaries.insert(figure, out.summary);
        }
        *self.summaries[&figure]
            .get(key)
            .unwrap_or_else(|| panic!("figure {figure} has no {key}"))
    }
}

impl Drop for Figures {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn perfect_filter(figs: &mut Figures) -> Outcome {
    let mean = figs.get(7, "oracle_filtered_mean_error_m");
    let solved = figs.get(7, "oracle_filtered_frames_solved");
    let secs = figs.seconds[&7];
    outcome(
        mean <= 1e-9 && secs < 30.0,
        format!("mean {mean:.3e} m over {solved} solved frames, {secs:.2} s"),
    )
}

fn unfiltered_baseline(figs: &mut Figures) -> Outcome {
    let raw = figs.get(4, "linear_mean_error_m");
    let filtered = figs.get(12, "linear_filtered_mean_error_m");
    let ratio = raw / filtered;
    outcome(
        (0.1..=1.0).contains(&raw) && ratio >= 3.0,
        format!("unfiltered mean {raw:.4} m (band [0.1, 1.0]), filtered {filtered:.4} m, ratio {ratio:.2}"),
    )
}

fn outlier_handling(figs: &mut Figures) -> Outcome {
    let hit = figs.get(9, "window_hit_rate");
    let plain = figs.get(10, "unweighted_window_max_error_m");
    let weighted = figs.get(10, "weighted_window_max_error_m");
    let reduction = 1.0 - weighted / plain;
    let degenerate = figs.get(11, "degenerate_fraction");
    let (a, b, c) = (hit >= 0.95, reduction >= 0.5, degenerate == 1.0);
    let mark = |ok: bool| if ok { "ok" } else { "miss" };
    outcome(
        a && b && c,
        format!(
            "(a) window flagged {:.1}% [{}]; (b) max error {plain:.3} -> {weighted:.3} m, \
             reduction {:.1}% [{}]; (c) degenerate flag on {:.1}% of post-warm-up frames [{}]",
            100.0 * hit,
            mark(a),
            100.0 * reduction,
            mark(b),
            100.0 * degenerate,
            mark(c)
        ),
    )
}

fn speed_ordering() -> Outcome {
    let spec = default_scenario();
    let traj = synthesize(&spec).unwrap();
    let st = build_stations(&spec).unwrap();
    let base = SolveOptions {
        filter: spec.filter,
        ..SolveOptions::new(Method::LinearFiltered)
    };
    let c = compare(&traj, &st, &base, 5).unwrap();
    outcome(
        c.time_ratio < 0.8,
        format!(
            "linear-filtered {:.3} ms / nonlinear-tdoa {:.3} ms = {:.3} over {} frames",
            c.linear.median_ms, c.nonlinear.median_ms, c.time_ratio, c.frames
        ),
    )
}

fn accuracy_ordering(figs: &mut Figures) -> Outcome {
    let lin = figs.get(12, "linear_filtered_mean_error_m");
    let nl = figs.get(12, "nonlinear_tdoa_mean_error_m");
    outcome(
        nl <= lin * 1.1,
        format!("nonlinear-tdoa {nl:.4} m vs linear-filtered {lin:.4} m"),
    )
}

fn filter_spec(window: usize, passes: usize) -> FilterSpec {
    FilterSpec {
        window,
        passes,
        ..FilterSpec::default()
    }
}

/// Causal box averages applied `passes` times to a zero-history signal.
fn batch_filter(xs: &[f64], window: usize, passes: usize) -> Vec<f64> {
    let mut cur = xs.to_vec();
    for _ in 0..passes {
        cur = (0..cur.len())
            .map(|k| cur[k.saturating_sub(window - 1)..=k].iter().sum::<f64>() / window as f64)
            .collect();
    }
    cur
}

fn filter_contracts() -> Outcome {
    let mut sum_err = 0.0f64;
    let mut delay_ok = true;
    let mut stream_err = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (window, passes) in [(1, 1), (3, 1), (5, 2), (15, 4), (31, 4), (9, 7)] {
        let spec = filter_spec(window, passes);
        let kernel = composite_kernel(&spec);
        sum_err = sum_err.max((kernel.iter().sum::<f64>() - 1.0).abs());

        let len = passes * (window - 1) + 1;
        let mut impulse = vec![0.0; len + 50];
        impulse[0] = 1.0;
        let response: Vec<f64> = filter_stream(spec, &impulse).unwrap().iter().map(|s| s.value).collect();
        let mass: f64 = response.iter().sum();
        let centroid: f64 = response.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>() / mass;
        let expected = passes * (window - 1) / 2;
        delay_ok &= (centroid - expected as f64).abs() < 1e-9 && spec.group_delay() == expected;

        let xs: Vec<f64> = (0..3000).map(|_| rng.random_range(-50.0..50.0)).collect();
        let streamed = filter_stream(spec, &xs).unwrap();
        for (s, b) in streamed.iter().zip(batch_filter(&xs, window, passes)) {
            stream_err = stream_err.max((s.value - b).abs());
        }
    }

    let (window, passes) = (15usize, 4usize);
    let kernel = composite_kernel(&filter_spec(window, passes));
    let centre = (kernel.len() / 2) as f64;
    let var = passes as f64 * ((window * window - 1) as f64) / 12.0;
    let gauss: Vec<f64> = (0..kernel.len())
        .map(|k| (-(k as f64 - centre).powi(2) / (2.0 * var)).exp())
        .collect();
    let norm: f64 = gauss.iter().sum();
    let peak = kernel.iter().cloned().fold(0.0, f64::max);
    let gauss_err = kernel
        .iter()
        .zip(&gauss)
        .map(|(k, g)| (k - g / norm).abs())
        .fold(0.0, f64::max)
        / peak;

    let ok = [sum_err <= 1e-12, delay_ok, stream_err <= 1e-9, gauss_err <= 0.01];
    let mark = |ok: bool| if ok { "ok" } else { "miss" };
    outcome(
        ok.iter().all(|v| *v),
        format!(
            "kernel sum error {sum_err:.1e} [{}]; impulse delay [{}]; streaming vs batch {stream_err:.1e} m [{}]; \
             Gaussian gap {:.2}% of peak [{}]",
            mark(ok[0]),
            mark(ok[1]),
            mark(ok[2]),
            100.0 * gauss_err,
            mark(ok[3])
        ),
    )
}

fn jacobian_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 100 {
        let (st, truth, o) = random_scene(&mut rng);
        let aug = augment(&forward_pseudo_range(&st, &truth, o).unwrap(), &st).unwrap();
        let x = Point::new2(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
        if st.bases().iter().any(|b| distance(b, &x).unwrap() < 0.5) {
            continue;
        }
        let pairs = select_diffs(&aug, PairSelection::AllPairs).unwrap();
        let analytic = tdoa_jacobian(&x, &pairs, &st).unwrap();
        let h = 1e-5;
        let mut diff_sq = 0.0;
        for k in 0..2 {
            let mut c = [x.x(), x.y()];
            c[k] += h;
            let plus = tdoa_residuals(&Point::new2(c[0], c[1]), &aug, &st, PairSelection::AllPairs).unwrap();
            c[k] -= 2.0 * h;
            let minus = tdoa_residuals(&Point::new2(c[0], c[1]), &aug, &st, PairSelection::AllPairs).unwrap();
            for (r, (p, m)) in plus.iter().zip(&minus).enumerate() {
                diff_sq += (analytic[(r, k)] - (p - m) / (2.0 * h)).powi(2);
            }
        }
        worst = worst.max(diff_sq.sqrt() / analytic.norm());
        checked += 1;
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} over 100 points"))
}

fn determinism() -> Outcome {
    let spec = default_scenario();
    let bytes = || {
        let mut out = Vec::new();
        write_measurements(&mut out, &synthesize(&spec).unwrap()).unwrap();
        out
    };
    let same_csv = bytes() == bytes();
    let traj = synthesize(&spec).unwrap();
    let st = build_stations(&spec).unwrap();
    let mut same_fixes = true;
    for method in Method::ALL {
        let opts = SolveOptions {
            filter: spec.filter,
            execution: Execution::Parallel,
            ..SolveOptions::new(method)
        };
        let a = run(&traj, &st, &opts).unwrap().fixes;
        let b = run(&traj, &st, &opts).unwrap().fixes;
        same_fixes &= a == b;
    }
    outcome(
        same_csv && same_fixes,
        format!("measurement bytes identical: {same_csv}; fixes identical for every method: {same_fixes}"),
    )
}

fn main() -> ExitCode {
    let mut figs = Figures::new();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("exact recovery", exact_recovery()),
        ("offset elimination", offset_elimination()),
        ("perfect-filter bound", perfect_filter(&mut figs)),
        ("unfiltered baseline", unfiltered_baseline(&mut figs)),
        ("outlier handling", outlier_handling(&mut figs)),
        ("speed ordering", speed_ordering()),
        ("accuracy ordering", accuracy_ordering(&mut figs)),
        ("filter contracts", filter_contracts()),
        ("jacobian check", jacobian_check()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in criteria.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
