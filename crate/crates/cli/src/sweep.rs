//! Grid x seeds sweeps on the rayon pool.

use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Result};
use guided_langevin::config::{parse_assignment, RunConfig};
use guided_langevin::Error;
use rayon::prelude::*;

use crate::{resolve_out_dir, write_atomic, ConfigArgs};

/// Cartesian product of `key=v1,v2` axes, in argument order with the last
/// axis varying fastest.
pub fn grid_points(axes: &[String]) -> Result<Vec<Vec<(String, String)>>> {
    let mut parsed = Vec::new();
    for a in axes {
        let (k, vs) = parse_assignment(a)?;
        let values: Vec<String> = vs
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        parsed.push((k.to_string(), values));
    }
    if parsed.is_empty() || parsed.iter().any(|(_, v)| v.is_empty()) {
        bail!("no sweep points");
    }
    let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
    for (k, values) in &parsed {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug)]
struct Row {
    point: usize,
    params: String,
    seed: u64,
    final_r_tot: Option<f64>,
    distance_l2: Option<f64>,
    distance_rms: Option<f64>,
    diverged: bool,
    error: String,
}

fn run_cell(text: &str, origin: &str, base: &Path, overrides: &[(String, String)], seed: u64) -> Row {
    let mut row = Row {
        point: 0,
        params: String::new(),
        seed,
        final_r_tot: None,
        distance_l2: None,
        distance_rms: None,
        diverged: false,
        error: String::new(),
    };
    let prepared = RunConfig::from_toml_with_overrides(text, origin, overrides).and_then(|c| c.build(base));
    match prepared.and_then(|p| p.run(seed)) {
        Ok(out) => {
            row.final_r_tot = out.final_r_tot();
            row.distance_rms = out.source_distance();
            row.distance_l2 = out.source_image.as_ref().map(|s| (&out.final_image - s).norm());
        }
        Err(Error::Diverged { step, reason, .. }) => {
            row.diverged = true;
            row.error = format!("diverged at step {step}: {reason}");
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

fn cell(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_sweep(cfg: &ConfigArgs, axes: &[String], seeds: u64, out_dir: Option<&Path>) -> Result<ExitCode> {
    let points = grid_points(axes)?;
    let loaded = match cfg.load() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let seed0 = loaded.config.sampler.seed;
    let cells: Vec<(usize, &Vec<(String, String)>, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..seeds).map(move |s| (i, p, seed0 + s)))
        .collect();
    let rows: Vec<Row> = cells
        .par_iter()
        .map(|(i, p, seed)| {
            let mut overrides = loaded.overrides.clone();
            overrides.extend(p.iter().cloned());
            let mut row = run_cell(&loaded.text, &loaded.origin, &loaded.base, &overrides, *seed);
            row.point = *i;
            row.params = p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
            row
        })
        .collect();

    let mut csv = String::from("point,params,seed,final_r_tot,distance_l2,distance_rms,diverged,error\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.point,
            quote(&r.params),
            r.seed,
            cell(r.final_r_tot),
            cell(r.distance_l2),
            cell(r.distance_rms),
            r.diverged,
            quote(&r.error)
        ));
    }
    let dir = resolve_out_dir(out_dir, &loaded.config);
    let path = dir.join("sweep.csv");
    write_atomic(&path, csv.as_bytes())?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    eprintln!("{} cells ({} failed), written to {}", rows.len(), failed, path.display());
    Ok(ExitCode::SUCCESS)
}
