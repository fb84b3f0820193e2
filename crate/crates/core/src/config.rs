//! JSON mission configuration.
//!
//! A single document with the sections `vehicle`, `workspace`, `currents`,
//! `ocp`, `solver` and `mission`. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::current::{CurrentField, CurrentGrid, JetField, Vec3};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::mission::{Backoff, MissionConfig, MissionSettings, OcpSettings};
use crate::ocp::{TerminalRegion, Weights};
use crate::solver::SolverConfig;
use crate::workspace::{Sphere, VelocityBounds, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    Uniform { velocity: Vec3 },
    Jet(JetField),
    /// Lattice file, resolved relative to the config file.
    Grid { path: PathBuf },
}

impl Default for FieldSource {
    fn default() -> Self {
        FieldSource::Uniform { velocity: [0.0; 3] }
    }
}

impl FieldSource {
    pub fn resolve(&self, base_dir: Option<&Path>, key: &str) -> Result<CurrentField> {
        match self {
            FieldSource::Uniform { velocity } => {
                if velocity.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("currents.{key}.velocity"), "must be finite"));
                }
                Ok(CurrentField::Uniform(*velocity))
            }
            FieldSource::Jet(j) => {
                if !(j.width > 0.0 && j.spread >= 0.0 && j.speed.is_finite()) {
                    return Err(Error::config(
                        format!("currents.{key}"),
                        "jet needs positive width, non-negative spread, finite speed",
                    ));
                }
                Ok(CurrentField::Jet(j.clone()))
            }
            FieldSource::Grid { path } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Ok(CurrentField::Grid(CurrentGrid::load(&full)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentsSection {
    /// Field driving the truth simulator.
    #[serde(default)]
    pub truth: FieldSource,
    /// Field assumed by the controller's predictor.
    #[serde(default)]
    pub controller: FieldSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub vehicle: VehicleParams,
    pub workspace: Workspace,
    #[serde(default)]
    pub currents: CurrentsSection,
    pub ocp: OcpSettings,
    #[serde(default)]
    pub solver: SolverConfig,
    pub mission: MissionSettings,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "mission config".into(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_json(&text)?, text))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (compact) serialisation.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn into_mission(&self, base_dir: Option<&Path>, seed: u64) -> Result<MissionConfig> {
        let cfg = MissionConfig {
            params: self.vehicle.clone(),
            workspace: self.workspace.clone(),
            truth_field: Arc::new(self.currents.truth.resolve(base_dir, "truth")?),
            controller_field: Arc::new(self.currents.controller.resolve(base_dir, "controller")?),
            ocp: self.ocp.clone(),
            solver: self.solver.clone(),
            mission: self.mission.clone(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Two-waypoint tank scenario: 5 x 3 m tank, two 0.16 m pillars, vehicle
    /// ball 0.3 m, depth kept within (0, 1.2) m, three laps.
    ///
    /// The depth limits apply to the vehicle centre, so the box is padded by
    /// `r_bar` vertically. Vehicle parameters and the jet are synthetic.
    pub fn tank_fixture() -> Self {
        let r_bar = 0.3;
        let mut workspace = Workspace::tank(5.0, 3.0, (-r_bar, 1.2 + r_bar), r_bar);
        workspace.obstacles = vec![Sphere::pillar(-0.625, -0.625, 0.16), Sphere::pillar(0.9375, 0.0, 0.16)];
        let jet = FieldSource::Jet(JetField {
            origin: [2.4, 0.9, 0.6],
            heading: PI,
            speed: 0.1,
            width: 0.35,
            spread: 0.15,
        });
        Self {
            vehicle: VehicleParams::default(),
            workspace,
            currents: CurrentsSection {
                truth: jet.clone(),
                controller: jet,
            },
            ocp: OcpSettings {
                horizon: 20,
                weights: Weights::default(),
                thrust_box: [12.0; 4],
                bounds: VelocityBounds::new(0.5, 0.25, 1.0),
                terminal_region: TerminalRegion {
                    radius: 0.3,
                    yaw_tolerance: 0.15,
                },
                backoff: Backoff {
                    velocity: 0.01,
                    clearance: 0.02,
                },
            },
            solver: SolverConfig::default(),
            mission: MissionSettings {
                initial_state: VehicleState::at_pose(-1.9, 0.8, 0.6, 0.0),
                waypoints: vec![
                    VehicleState::at_pose(-1.60, -0.35, 0.45, 0.0),
                    VehicleState::at_pose(1.75, 0.0, 0.30, PI),
                ],
                laps: 3,
                tick: 0.1,
                truth_substeps: 4,
                max_ticks: 3000,
                max_solver_failures: 30,
                measurement_noise: None,
            },
        }
    }
}

/// Best-effort 1-based line of a dotted config path such as
/// `workspace.obstacles[1]` inside the JSON source.
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0usize;
    for segment in path.split('.') {
        let (key, index) = match segment.find('[') {
            Some(b) => (&segment[..b], segment[b + 1..segment.len() - 1].parse::<usize>().ok()),
            None => (segment, None),
        };
        let needle = format!("\"{key}\"");
        pos += text[pos..].find(&needle)? + needle.len();
        if let Some(i) = index {
            pos = nth_array_element(text, pos, i)?;
        }
    }
    Some(text[..pos].matches('\n').count() + 1)
}

fn nth_array_element(text: &str, from: usize, n: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let open = from + text[from..].find('[')?;
    let mut depth = 0i32;
    let mut count = 0usize;
    let mut in_str = false;
    let mut expecting = true;
    for (k, &b) in bytes.iter().enumerate().skip(open + 1) {
        if in_str {
            if b == b'"' && bytes[k - 1] != b'\\' {
                in_str = false;
            }
            continue;
        }
        match b {
            b' ' | b'\n' | b'\r' | b'\t' => continue,
            b',' if depth == 0 => {
                expecting = true;
                continue;
            }
            b']' | b'}' if depth == 0 => return None,
            _ => {}
        }
        if depth == 0 && expecting {
            if count == n {
                return Some(k);
            }
            count += 1;
            expecting = false;
        }
        match b {
            b'"' => in_str = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => depth -= 1,
            _ => {}
        }
    }
    None
}
