//! Scenario presets and plot-ready series for the reproduced figures.
//!
//! Each figure writes `fig<N>_scenario.json` (the exact scenario used) and
//! `fig<N>.csv`. Positions of filtered runs are listed against the truth at
//! `frame − delay`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::io::{fmt_f64, write_table};
use super::metrics::{fix_errors, max_error_in, outlier_detection};
use super::pipeline::{filter_channels, prepare, run, Method, RunReport, SolveOptions};
use crate::error::{Error, Result};
use crate::geometry::{distance_unchecked, Point, StationArray, Trajectory};
use crate::simulate::{build_stations, synthesize, OutlierWindow, ScenarioSpec};

pub const FIGURES: [u32; 7] = [4, 7, 8, 9, 10, 11, 12];

/// Station carrying the reflection in the outlier scenarios.
pub const OUTLIER_STATION: usize = 1;

pub fn outlier_window() -> OutlierWindow {
    OutlierWindow {
        start_frame: 3500,
        end_frame: 3600,
        station_index: OUTLIER_STATION,
        magnitude_m: 10.0,
    }
}

/// Default scene: four stations on a 10 m circle, 5 m transponder circle,
/// 0.1 m uniform noise, per-frame offsets in `[10⁶, 10⁷)` m.
pub fn default_scenario() -> ScenarioSpec {
    ScenarioSpec::default()
}

/// Six stations and a 10 m reflection on station 1 over frames 3500–3600.
/// Weighting needs more rows than unknowns to have any effect.
pub fn outlier_scenario() -> ScenarioSpec {
    ScenarioSpec {
        station_count: 6,
        outlier_windows: vec![outlier_window()],
        ..ScenarioSpec::default()
    }
}

/// The outlier scenario with every station within 10⁻¹⁰ m of the x-axis.
pub fn degenerate_scenario() -> ScenarioSpec {
    let xs = [-27.0, -17.0, -7.0, 7.0, 17.0, 27.0];
    let stations = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| Point::new2(x, if i % 2 == 0 { 1e-10 } else { -1e-10 }))
        .collect::<Vec<_>>();
    ScenarioSpec {
        station_count: stations.len(),
        stations: Some(stations),
        ..outlier_scenario()
    }
}

pub fn scenario(figure: u32) -> Result<ScenarioSpec> {
    match figure {
        4 | 7 | 8 | 12 => Ok(default_scenario()),
        9 | 10 => Ok(outlier_scenario()),
        11 => Ok(degenerate_scenario()),
        _ => Err(Error::InvalidInput(format!(
            "unknown figure {figure}; expected one of {FIGURES:?}"
        ))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureOutput {
    pub figure: u32,
    pub files: Vec<PathBuf>,
    pub summary: BTreeMap<String, f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `frame, true_x_m, true_y_m, <name>_x_m, <name>_y_m, <name>_error_m, ...`
fn track_table(
    path: &Path,
    truth: &[Point],
    runs: &[(&str, &RunReport)],
) -> Result<()> {
    let delay = runs[0].1.delay_frames;
    let mut header = vec!["frame".to_string(), "true_x_m".into(), "true_y_m".into()];
    for (name, _) in runs {
        header.extend([format!("{name}_x_m"), format!("{name}_y_m"), format!("{name}_error_m")]);
    }
    let errors = runs
        .iter()
        .map(|(_, r)| fix_errors(&r.fixes, truth, r.delay_frames))
        .collect::<Result<Vec<_>>>()?;
    let n = runs[0].1.fixes.len();
    let rows = (0..n).map(|k| {
        let t = k.checked_sub(delay).and_then(|g| truth.get(g));
        let mut row = vec![k.to_string(), opt(t.map(Point::x)), opt(t.map(Point::y))];
        for ((_, r), e) in runs.iter().zip(&errors) {
            let p = r.fixes[k].position.filter(|_| e[k].is_some());
            row.extend([opt(p.map(|p| p.x())), opt(p.map(|p| p.y())), opt(e[k])]);
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(BufWriter::new(File::create(path)?), &header, rows)
}

fn summarize(summary: &mut BTreeMap<String, f64>, name: &str, r: &RunReport) {
    if let Some(e) = r.mean_path_error {
        summary.insert(format!("{name}_mean_error_m"), e.mean_m);
        summary.insert(format!("{name}_max_error_m"), e.max_m);
    }
    summary.insert(format!("{name}_frames_solved"), r.frames_solved as f64);
    summary.insert(format!("{name}_degenerate"), r.flags.degenerate as f64);
}

struct Scene {
    traj: Trajectory,
    stations: StationArray,
    spec: ScenarioSpec,
}

impl Scene {
    fn new(spec: ScenarioSpec) -> Result<Self> {
        Ok(Self {
            traj: synthesize(&spec)?,
            stations: build_stations(&spec)?,
            spec,
        })
    }

    fn truth(&self) -> &[Point] {
        self.traj.truth.as_deref().unwrap_or(&[])
    }

    fn run(&self, method: Method, oracle: bool) -> Result<RunReport> {
        let opts = SolveOptions {
            filter: self.spec.filter,
            oracle_filter: oracle,
            ..SolveOptions::new(method)
        };
        run(&self.traj, &self.stations, &opts)
    }

    /// Raw and filtered channel `station − pivot 0`.
    fn channel_rows(&self, station: usize, with_variance: bool) -> Result<(Vec<Vec<String>>, usize)> {
        let opts = SolveOptions {
            filter: self.spec.filter,
            ..SolveOptions::new(Method::LinearFiltered)
        };
        let prep = prepare(&self.traj, &self.stations, &opts)?;
        let ch = prep.channels.as_ref().ok_or(Error::NoData)?;
        let c = ch
            .stations
            .iter()
            .position(|&i| i == station)
            .ok_or_else(|| Error::InvalidInput(format!("no channel for station {station}")))?;
        let s = &ch.samples[c];
        let truth = self.truth();
        let (bi, b0) = (self.stations.base(station), self.stations.base(ch.pivot));
        let rows = (0..s.len())
            .map(|k| {
                let true_diff = truth.get(k).map(|m| distance_unchecked(m, bi) - distance_unchecked(m, b0));
                let aligned = s.get(k + ch.delay).filter(|x| !x.warmup).map(|x| x.value);
                let mut row = vec![
                    k.to_string(),
                    fmt_f64(prep.augs[k].diff(station, ch.pivot)),
                    opt(true_diff),
                    fmt_f64(s[k].value),
                    opt(aligned),
                ];
                if with_variance {
                    row.push(fmt_f64(s[k].variance));
                    row.push(u8::from(s[k].outlier).to_string());
                }
                row.push(u8::from(s[k].warmup).to_string());
                row
            })
            .collect();
        Ok((rows, ch.delay))
    }
}

/// Writes the figure's scenario and series into `outdir`.
pub fn reproduce(figure: u32, outdir: &Path, seed: Option<u64>) -> Result<FigureOutput> {
    let mut spec = scenario(figure)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    std::fs::create_dir_all(outdir)?;
    let scenario_path = outdir.join(format!("fig{figure}_scenario.json"));
    std::fs::write(&scenario_path, spec.to_json()? + "\n")?;
    let csv_path = outdir.join(format!("fig{figure}.csv"));
    let scene = Scene::new(spec)?;
    let mut summary = BTreeMap::new();

    match figure {
        4 => {
            let r = scene.run(Method::Linear, false)?;
            summarize(&mut summary, "linear", &r);
            track_table(&csv_path, scene.truth(), &[("linear", &r)])?;
        }
        7 => {
            let r = scene.run(Method::LinearFiltered, true)?;
            summarize(&mut summary, "oracle_filtered", &r);
            track_table(&csv_path, scene.truth(), &[("oracle_filtered", &r)])?;
        }
        8 | 9 => {
            let station = if figure == 8 { 1 } else { OUTLIER_STATION };
            let (rows, delay) = scene.channel_rows(station, figure == 9)?;
            let mut header = vec!["frame", "raw_diff_m", "true_diff_m", "filtered_diff_m", "filtered_aligned_m"];
            if figure == 9 {
                header.extend(["variance_m2", "outlier"]);
                let opts = SolveOptions {
                    filter: scene.spec.filter,
                    ..SolveOptions::new(Method::LinearFiltered)
                };
                let augs = prepare(&scene.traj, &scene.stations, &opts)?.augs;
                let ch = filter_channels(&augs, 0, &scene.spec.filter, opts.execution)?;
                for w in &scene.spec.outlier_windows {
                    let d = outlier_detection(&ch, w, &scene.spec.filter);
                    summary.insert("window_hit_rate".into(), d.hit_rate());
                    summary.insert("false_flag_rate".into(), d.false_flag_rate());
                }
            }
            header.push("warmup");
            summary.insert("delay_frames".into(), delay as f64);
            write_table(BufWriter::new(File::create(&csv_path)?), &header, rows)?;
        }
        10 => {
            let plain = scene.run(Method::LinearFiltered, false)?;
            let weighted = scene.run(Method::LinearWeighted, false)?;
            summarize(&mut summary, "unweighted", &plain);
            summarize(&mut summary, "weighted", &weighted);
            for w in &scene.spec.outlier_windows {
                let d = plain.delay_frames;
                let span = w.start_frame + d..=w.end_frame + d;
                summary.insert(
                    "unweighted_window_max_error_m".into(),
                    max_error_in(&plain.fixes, scene.truth(), d, span.clone())?,
                );
                summary.insert(
                    "weighted_window_max_error_m".into(),
                    max_error_in(&weighted.fixes, scene.truth(), d, span)?,
                );
            }
            track_table(&csv_path, scene.truth(), &[("unweighted", &plain), ("weighted", &weighted)])?;
        }
        11 => {
            let r = scene.run(Method::LinearWeighted, false)?;
            summarize(&mut summary, "weighted", &r);
            let post = r.frames - r.flags.warmup;
            summary.insert("degenerate_fraction".into(), r.flags.degenerate as f64 / post.max(1) as f64);
            let rows = r.fixes.iter().map(|f| {
                vec![
                    f.frame_index.to_string(),
                    opt(f.position.map(|p| p.x())),
                    opt(f.position.map(|p| p.y())),
                    opt(f.condition_number.filter(|c| c.is_finite())),
                    u8::from(f.degenerate).to_string(),
                    u8::from(f.warmup).to_string(),
                ]
            });
            write_table(
                BufWriter::new(File::create(&csv_path)?),
                &["frame", "x_m", "y_m", "condition", "degenerate", "warmup"],
                rows,
            )?;
        }
        12 => {
            let lin = scene.run(Method::LinearFiltered, false)?;
            let nl = scene.run(Method::NonlinearTdoa, false)?;
            summarize(&mut summary, "linear_filtered", &lin);
            summarize(&mut summary, "nonlinear_tdoa", &nl);
            track_table(
                &csv_path,
                scene.truth(),
                &[("linear_filtered", &lin), ("nonlinear_tdoa", &nl)],
            )?;
        }
        _ => unreachable!("validated by scenario()"),
    }
    Ok(FigureOutput {
        figure,
        files: vec![scenario_path, csv_path],
        summary,
    })
}
