//! Flat `key = value` configuration covering the pipeline, filter, particle
//! filter and scenario parameters.
//!
//! Blank lines and `#` comments are ignored. Later assignments win, so
//! command-line overrides can be applied after a file with [`apply`].
//!
//! Covariances are set per kinematic block (`p0_pos`, `p0_vel`, `p0_acc`) or
//! as scaled identities (`q0`, `r0`). `gaps` takes `start:duration` pairs
//! separated by commas; `trajectory` takes maneuvers separated by `;`, e.g.
//! `hover 18 0 4; sweep 0 9 0 8 0; linear 0.5 0 0; spiral 6 15 0.1`.

use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::eval::Settings;
use crate::filter::{block_diagonal, CovMatrix9};
use crate::io::read_text;
use crate::sim::{Gap, Maneuver, ScenarioConfig, Trajectory};

pub const KEYS: &[&str] = &[
    // pipeline
    "voxel_size",
    "d_max",
    "z_min",
    "z_max",
    "dbscan_eps",
    "dbscan_min_pts",
    "cluster_max_pts",
    "sigma_max",
    // filter
    "dt",
    "alpha",
    "beta",
    "gate_gamma",
    "t_occ",
    "p0_pos",
    "p0_vel",
    "p0_acc",
    "q0",
    "r0",
    // particle filter
    "n_particles",
    "pf_process_noise",
    "pf_measurement_noise",
    "resample_fraction",
    // scenario
    "name",
    "duration",
    "frame_rate",
    "trajectory",
    "returns_min",
    "returns_max",
    "point_jitter_sigma",
    "clutter_rate",
    "clutter_min",
    "clutter_max",
    "gaps",
    "seed",
];

/// Parsed but not yet applied assignments, in file order.
pub fn parse(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: format!("expected key = value, found '{line}'"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
    parse(&read_text(path)?, path)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
}

fn triple(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = v
        .split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected three numbers, got '{v}'")))
}

fn parse_gaps(v: &str) -> Result<Vec<Gap>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|g| {
            let (s, d) = g
                .split_once(':')
                .ok_or_else(|| Error::config(format!("gaps: expected start:duration, got '{g}'")))?;
            Ok(Gap {
                start: num("gaps", s.trim())?,
                duration: num("gaps", d.trim())?,
            })
        })
        .collect()
}

pub fn parse_trajectory(v: &str) -> Result<Trajectory> {
    let mut maneuvers = Vec::new();
    for term in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let mut words = term.split_whitespace();
        let kind = words.next().unwrap_or_default();
        let args: Vec<f64> = words.map(|w| num("trajectory", w)).collect::<Result<_>>()?;
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "trajectory: '{kind}' takes {n} numbers, got {}",
                    args.len()
                )))
            }
        };
        maneuvers.push(match kind {
            "hover" => {
                want(3)?;
                Maneuver::Hover {
                    position: [args[0], args[1], args[2]],
                }
            }
            "linear" => {
                want(3)?;
                Maneuver::Linear {
                    velocity: [args[0], args[1], args[2]],
                }
            }
            "sweep" => {
                want(5)?;
                Maneuver::Sweep {
                    amplitude: [args[0], args[1], args[2]],
                    period: args[3],
                    phase: args[4],
                }
            }
            "spiral" => {
                want(3)?;
                Maneuver::Spiral {
                    radius: args[0],
                    period: args[1],
                    climb_rate: args[2],
                }
            }
            other => return Err(Error::config(format!("trajectory: unknown maneuver '{other}'"))),
        });
    }
    Ok(Trajectory::new(maneuvers))
}

fn p0_blocks(p0: &CovMatrix9) -> (f64, f64, f64) {
    (p0[(0, 0)], p0[(3, 3)], p0[(6, 6)])
}

/// Applies assignments in order. Unknown keys are an error.
pub fn apply(
    assignments: &[(String, String)],
    settings: &mut Settings,
    scenario: &mut ScenarioConfig,
) -> Result<()> {
    for (key, v) in assignments {
        let v = v.as_str();
        let k = key.as_str();
        let pl = &mut settings.pipeline;
        let f = &mut settings.filter;
        let pf = &mut settings.particles;
        match k {
            "voxel_size" => pl.voxel_size = num(k, v)?,
            "d_max" => pl.d_max = num(k, v)?,
            "z_min" => pl.z_min = num(k, v)?,
            "z_max" => pl.z_max = num(k, v)?,
            "dbscan_eps" => pl.dbscan_eps = num(k, v)?,
            "dbscan_min_pts" => pl.dbscan_min_pts = num(k, v)?,
            "cluster_max_pts" => pl.cluster_max_pts = num(k, v)?,
            "sigma_max" => pl.sigma_max = num(k, v)?,
            "dt" => f.dt = num(k, v)?,
            "alpha" => f.alpha = num(k, v)?,
            "beta" => f.beta = num(k, v)?,
            "gate_gamma" => f.gate_gamma = num(k, v)?,
            "t_occ" => f.t_occ = num(k, v)?,
            "p0_pos" | "p0_vel" | "p0_acc" => {
                let (mut pos, mut vel, mut acc) = p0_blocks(&f.p0);
                let x: f64 = num(k, v)?;
                match k {
                    "p0_pos" => pos = x,
                    "p0_vel" => vel = x,
                    _ => acc = x,
                }
                f.p0 = block_diagonal(pos, vel, acc);
            }
            "q0" => f.q0 = CovMatrix9::identity() * num::<f64>(k, v)?,
            "r0" => f.r0 = Matrix3::identity() * num::<f64>(k, v)?,
            "n_particles" => pf.n_particles = num(k, v)?,
            "pf_process_noise" => pf.process_noise = CovMatrix9::identity() * num::<f64>(k, v)?,
            "pf_measurement_noise" => pf.measurement_noise = Matrix3::identity() * num::<f64>(k, v)?,
            "resample_fraction" => pf.resample_fraction = num(k, v)?,
            "name" => scenario.name = v.to_string(),
            "duration" => scenario.duration = num(k, v)?,
            "frame_rate" => scenario.frame_rate = num(k, v)?,
            "trajectory" => scenario.trajectory = parse_trajectory(v)?,
            "returns_min" => scenario.returns_min = num(k, v)?,
            "returns_max" => scenario.returns_max = num(k, v)?,
            "point_jitter_sigma" => scenario.point_jitter_sigma = num(k, v)?,
            "clutter_rate" => scenario.clutter_rate = num(k, v)?,
            "clutter_min" => scenario.clutter_min = triple(k, v)?,
            "clutter_max" => scenario.clutter_max = triple(k, v)?,
            "gaps" => scenario.gaps = parse_gaps(v)?,
            "seed" => {
                scenario.seed = num(k, v)?;
                pf.seed = scenario.seed;
            }
            other => return Err(Error::config(format!("unknown configuration key '{other}'"))),
        }
    }
    Ok(())
}

/// Parses `key=value` strings given on the command line.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::config(format!("override '{s}' is not key=value")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_applied() {
        let text = "\
voxel_size = 0.1
d_max = 30
z_min = -1
z_max = 20
dbscan_eps = 0.4   # comment
dbscan_min_pts = 2
cluster_max_pts = 40
sigma_max = 0.6
dt = 0.2
alpha = 0.5
beta = 0.6
gate_gamma = 0.99
t_occ = 5
p0_pos = 2
p0_vel = 9
p0_acc = 16
q0 = 0.05
r0 = 0.5
n_particles = 500
pf_process_noise = 0.2
pf_measurement_noise = 0.3
resample_fraction = 0.7
name = demo
duration = 30
frame_rate = 10
trajectory = hover 1 2 3; sweep 0 4 0 8 0.5
returns_min = 2
returns_max = 3
point_jitter_sigma = 0.02
clutter_rate = 7
clutter_min = 0, -10, -1
clutter_max = 30 10 10
gaps = 5:2, 20:1.5
seed = 42
";
        let parsed = parse(text, Path::new("cfg")).unwrap();
        let seen: std::collections::BTreeSet<&str> = parsed.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(seen.len(), KEYS.len());
        let mut s = Settings::default();
        let mut sc = ScenarioConfig::default();
        apply(&parsed, &mut s, &mut sc).unwrap();
        assert_eq!(s.pipeline.cluster_max_pts, 40);
        assert_eq!(s.filter.t_occ, 5);
        assert_eq!(s.filter.p0[(3, 3)], 9.0);
        assert_eq!(s.filter.p0[(8, 8)], 16.0);
        assert_eq!(s.filter.r0[(1, 1)], 0.5);
        assert_eq!(s.particles.n_particles, 500);
        assert_eq!(s.particles.seed, 42);
        assert_eq!(sc.name, "demo");
        assert_eq!(sc.clutter_min, [0.0, -10.0, -1.0]);
        assert_eq!(sc.gaps.len(), 2);
        assert_eq!(sc.gaps[1].duration, 1.5);
        assert_eq!(sc.trajectory.maneuvers.len(), 2);
        s.pipeline.validate().unwrap();
        s.filter.validate().unwrap();
        sc.validate().unwrap();
    }

    #[test]
    fn overrides_apply_last() {
        let mut s = Settings::default();
        let mut sc = ScenarioConfig::default();
        let file = parse("alpha = 0.4\n", Path::new("cfg")).unwrap();
        let cli = parse_overrides(&["alpha=0.6".to_string()]).unwrap();
        apply(&[file, cli].concat(), &mut s, &mut sc).unwrap();
        assert_eq!(s.filter.alpha, 0.6);
    }

    #[test]
    fn errors() {
        let mut s = Settings::default();
        let mut sc = ScenarioConfig::default();
        assert!(parse("novalue\n", Path::new("cfg")).is_err());
        assert!(apply(&[("bogus".into(), "1".into())], &mut s, &mut sc).is_err());
        assert!(apply(&[("alpha".into(), "x".into())], &mut s, &mut sc).is_err());
        assert!(parse_trajectory("sweep 1 2").is_err());
        assert!(parse_trajectory("loop 1 2 3").is_err());
        assert!(parse_overrides(&["alpha".to_string()]).is_err());
    }
}
