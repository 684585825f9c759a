//! Structured configuration files for robot models, scenarios and controller
//! parameters. One human-readable TOML format, versioned with a
//! `schema_version` field; the exact schemas are documented in `docs/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector2, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::htidkc::HtidkcConfig;
use crate::htmpc::HtmpcConfig;
use crate::model::{
    ArmLink, Bounds, CollisionSphere, FkPoint, ModelError, RobotModel, WorldSphere,
};
use crate::nlp::LexKind;
use crate::tasks::{
    ReferencePath, ReferenceTrajectory, Scenario, ScenarioKind, TaskError, TaskSequence,
    TrackingTask,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse `{path}`: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(source),
    })
}

fn check_schema(version: u32, kind: &str, expected: &str) -> Result<(), ConfigError> {
    if version != SCHEMA_VERSION {
        return Err(ConfigError::Schema(format!(
            "unsupported schema_version {version}, expected {SCHEMA_VERSION}"
        )));
    }
    if kind != expected {
        return Err(ConfigError::Schema(format!(
            "expected kind = \"{expected}\", found \"{kind}\""
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Robot model files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ModelFile {
    schema_version: u32,
    kind: String,
    name: String,
    base: BaseSection,
    #[serde(default)]
    arm: ArmSection,
    fk_points: Vec<FkPointSection>,
    #[serde(default)]
    collision_spheres: Vec<SphereSection>,
    #[serde(default)]
    self_collision_pairs: Vec<[usize; 2]>,
    bounds: BoundsSection,
    home: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct BaseSection {
    kind: String,
}

#[derive(Debug, Default, Deserialize)]
struct ArmSection {
    #[serde(default)]
    links: Vec<LinkSection>,
}

#[derive(Debug, Deserialize)]
struct LinkSection {
    axis: [f64; 3],
    offset: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct FkPointSection {
    id: String,
    body: String,
    offset: [f64; 3],
    dim: usize,
}

#[derive(Debug, Deserialize)]
struct SphereSection {
    body: String,
    center: [f64; 3],
    radius: f64,
}

#[derive(Debug, Deserialize)]
struct BoundsSection {
    q_lower: Vec<f64>,
    q_upper: Vec<f64>,
    v_lower: Vec<f64>,
    v_upper: Vec<f64>,
    u_lower: Vec<f64>,
    u_upper: Vec<f64>,
    du_lower: Vec<f64>,
    du_upper: Vec<f64>,
    safe_distance: Vec<f64>,
}

fn body_index(name: &str, links: usize) -> Result<usize, ConfigError> {
    if name == "base" {
        return Ok(0);
    }
    if let Some(n) = name.strip_prefix("link") {
        if let Ok(idx) = n.parse::<usize>() {
            if idx >= 1 && idx <= links {
                return Ok(idx);
            }
        }
    }
    Err(ConfigError::Schema(format!(
        "unknown body `{name}` (expected \"base\" or \"link1\"..\"link{links}\")"
    )))
}

/// Load a robot model description.
pub fn load_model_file(path: &Path) -> Result<RobotModel, ConfigError> {
    let file: ModelFile = read_toml(path)?;
    check_schema(file.schema_version, &file.kind, "robot_model")?;
    if file.base.kind != "holonomic_planar" {
        return Err(ConfigError::Schema(format!(
            "unsupported base kind `{}`",
            file.base.kind
        )));
    }
    let links: Vec<ArmLink> = file
        .arm
        .links
        .iter()
        .map(|l| ArmLink {
            axis: Vector3::from_column_slice(&l.axis),
            offset: Vector3::from_column_slice(&l.offset),
        })
        .collect();
    let n_links = links.len();
    let fk_points = file
        .fk_points
        .iter()
        .map(|p| {
            Ok(FkPoint {
                id: p.id.clone(),
                body: body_index(&p.body, n_links)?,
                offset: Vector3::from_column_slice(&p.offset),
                dim: p.dim,
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let spheres = file
        .collision_spheres
        .iter()
        .map(|s| {
            Ok(CollisionSphere {
                body: body_index(&s.body, n_links)?,
                offset: Vector3::from_column_slice(&s.center),
                radius: s.radius,
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let b = &file.bounds;
    let bounds = Bounds {
        q_lower: DVector::from_vec(b.q_lower.clone()),
        q_upper: DVector::from_vec(b.q_upper.clone()),
        v_lower: DVector::from_vec(b.v_lower.clone()),
        v_upper: DVector::from_vec(b.v_upper.clone()),
        u_lower: DVector::from_vec(b.u_lower.clone()),
        u_upper: DVector::from_vec(b.u_upper.clone()),
        du_lower: DVector::from_vec(b.du_lower.clone()),
        du_upper: DVector::from_vec(b.du_upper.clone()),
    };
    Ok(RobotModel::new(
        file.name,
        links,
        fk_points,
        spheres,
        file.self_collision_pairs
            .iter()
            .map(|p| (p[0], p[1]))
            .collect(),
        bounds,
        DVector::from_vec(b.safe_distance.clone()),
        DVector::from_vec(file.home.clone()),
    )?)
}

/// Built-in models by id.
pub fn builtin_model(id: &str) -> Option<RobotModel> {
    match id {
        "planar5" => Some(RobotModel::planar5()),
        "spatial9" => Some(RobotModel::spatial9()),
        _ => None,
    }
}

/// Resolve a model reference: a built-in id or a path relative to `base_dir`.
pub fn resolve_model(reference: &str, base_dir: &Path) -> Result<RobotModel, ConfigError> {
    if let Some(model) = builtin_model(reference) {
        return Ok(model);
    }
    let path = base_dir.join(reference);
    load_model_file(&path)
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    schema_version: u32,
    kind: String,
    name: String,
    model: String,
    duration: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    obstacles: Vec<ObstacleSection>,
    #[serde(default)]
    persistent_tasks: Vec<TaskSection>,
    sequence_tasks: Vec<TaskSection>,
    window: WindowSection,
    #[serde(default)]
    meta: Option<MetaSection>,
}

#[derive(Debug, Deserialize)]
struct ObstacleSection {
    center: [f64; 3],
    radius: f64,
}

#[derive(Debug, Deserialize)]
struct TaskSection {
    name: String,
    point: String,
    reference: ReferenceSection,
    stage_weight: Vec<f64>,
    terminal_weight: Vec<f64>,
    delta: f64,
    eps_done: f64,
}

#[derive(Debug, Deserialize)]
struct ReferenceSection {
    kind: String,
    #[serde(default)]
    value: Option<Vec<f64>>,
    #[serde(default)]
    peak: Option<Vec<f64>>,
    #[serde(default)]
    valley: Option<Vec<f64>>,
    #[serde(default)]
    half_period: Option<f64>,
    #[serde(default)]
    duration: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct WindowSection {
    #[serde(default = "default_offset")]
    offset: usize,
    size: usize,
}

fn default_offset() -> usize {
    1
}

#[derive(Debug, Deserialize)]
struct MetaSection {
    kind: String,
    #[serde(default)]
    switch_time: Option<f64>,
    #[serde(default)]
    peak: Option<[f64; 2]>,
}

fn build_reference(section: &ReferenceSection) -> Result<ReferenceTrajectory, ConfigError> {
    match section.kind.as_str() {
        "constant" => {
            let value = section
                .value
                .as_ref()
                .ok_or_else(|| ConfigError::Schema("constant reference needs `value`".into()))?;
            let duration = section.duration.unwrap_or(0.0);
            Ok(ReferenceTrajectory::constant(
                DVector::from_vec(value.clone()),
                duration,
            ))
        }
        "square_wave" => {
            let peak = section
                .peak
                .as_ref()
                .ok_or_else(|| ConfigError::Schema("square wave needs `peak`".into()))?;
            let valley = section
                .valley
                .as_ref()
                .ok_or_else(|| ConfigError::Schema("square wave needs `valley`".into()))?;
            let half_period = section.half_period.unwrap_or(8.0);
            Ok(ReferenceTrajectory::square_wave(
                DVector::from_vec(peak.clone()),
                DVector::from_vec(valley.clone()),
                half_period,
            ))
        }
        other => Err(ConfigError::Schema(format!(
            "unknown reference kind `{other}`"
        ))),
    }
}

fn build_task(section: &TaskSection) -> Result<TrackingTask, ConfigError> {
    Ok(TrackingTask {
        name: section.name.clone(),
        point: section.point.clone(),
        reference: build_reference(&section.reference)?,
        stage_weight: DVector::from_vec(section.stage_weight.clone()),
        terminal_weight: DVector::from_vec(section.terminal_weight.clone()),
        delta: section.delta,
        eps_done: section.eps_done,
    })
}

/// Load a scenario, resolving the model reference relative to the scenario
/// file. A `seed` argument overrides the embedded seed.
pub fn load_scenario_file(path: &Path, seed: Option<u64>) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = read_toml(path)?;
    check_schema(file.schema_version, &file.kind, "scenario")?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let model = resolve_model(&file.model, base_dir)?;

    let persistent_tasks = file
        .persistent_tasks
        .iter()
        .map(build_task)
        .collect::<Result<Vec<_>, _>>()?;
    let tasks = file
        .sequence_tasks
        .iter()
        .map(build_task)
        .collect::<Result<Vec<_>, _>>()?;
    let mut sequence = TaskSequence::new(tasks, file.window.size)?;
    sequence.window_offset = file.window.offset;

    let kind = match &file.meta {
        Some(meta) => match meta.kind.as_str() {
            "square_wave" => {
                let peak = meta.peak.ok_or_else(|| {
                    ConfigError::Schema("square_wave meta needs `peak`".into())
                })?;
                let base_home = model.forward_kinematics(&model.q_home, "BASE")?;
                let dx = peak[0] - base_home[0];
                let dy = peak[1] - base_home[1];
                ScenarioKind::SquareWave {
                    switch_time: meta.switch_time.unwrap_or(8.0),
                    peak: Vector2::new(peak[0], peak[1]),
                    peak_angle: dy.atan2(dx),
                    peak_radius: (dx * dx + dy * dy).sqrt(),
                }
            }
            "delivery" => ScenarioKind::Delivery,
            "custom" => ScenarioKind::Custom,
            other => {
                return Err(ConfigError::Schema(format!(
                    "unknown scenario meta kind `{other}`"
                )))
            }
        },
        None => ScenarioKind::Custom,
    };

    let scenario = Scenario {
        name: file.name,
        model,
        persistent_tasks,
        sequence,
        obstacles: file
            .obstacles
            .iter()
            .map(|o| WorldSphere {
                center: Vector3::from_column_slice(&o.center),
                radius: o.radius,
            })
            .collect(),
        duration: file.duration,
        seed: seed.unwrap_or(file.seed),
        kind,
    };
    scenario.validate()?;
    Ok(scenario)
}

// ---------------------------------------------------------------------------
// Controller parameter files
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
struct ParamsFile {
    schema_version: Option<u32>,
    #[serde(default)]
    htmpc: Option<HtmpcSection>,
    #[serde(default)]
    htidkc: Option<HtidkcSection>,
}

#[derive(Debug, Deserialize)]
struct HtmpcSection {
    #[serde(default)]
    n_steps: Option<usize>,
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    control_period: Option<f64>,
    #[serde(default)]
    lex_constraint: Option<String>,
    #[serde(default)]
    max_iter: Option<usize>,
    #[serde(default)]
    effort_state_velocity: Option<f64>,
    #[serde(default)]
    effort_input: Option<f64>,
    #[serde(default)]
    effort_input_diff: Option<f64>,
    #[serde(default)]
    barrier_mu: Option<f64>,
    #[serde(default)]
    barrier_knot_frac: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct HtidkcSection {
    #[serde(default)]
    control_period: Option<f64>,
    #[serde(default)]
    gains: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    default_gain: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
}

/// Controller parameter overrides loaded from a params file.
#[derive(Debug, Default)]
pub struct ParamsOverlay {
    htmpc: Option<HtmpcSection>,
    htidkc: Option<HtidkcSection>,
}

/// Parse a lexicographic constraint kind name.
pub fn parse_lex_kind(name: &str) -> Result<LexKind, ConfigError> {
    match name {
        "box" => Ok(LexKind::Box),
        "coupled" => Ok(LexKind::Coupled),
        other => Err(ConfigError::Schema(format!(
            "unknown lexicographic constraint kind `{other}` (use box|coupled)"
        ))),
    }
}

pub fn load_params_file(path: &Path) -> Result<ParamsOverlay, ConfigError> {
    let file: ParamsFile = read_toml(path)?;
    if let Some(v) = file.schema_version {
        if v != SCHEMA_VERSION {
            return Err(ConfigError::Schema(format!(
                "unsupported schema_version {v}"
            )));
        }
    }
    Ok(ParamsOverlay {
        htmpc: file.htmpc,
        htidkc: file.htidkc,
    })
}

impl ParamsOverlay {
    pub fn apply_htmpc(&self, config: &mut HtmpcConfig) -> Result<(), ConfigError> {
        let Some(section) = &self.htmpc else {
            return Ok(());
        };
        if let Some(v) = section.n_steps {
            config.n_steps = v;
        }
        if let Some(v) = section.dt {
            config.dt = v;
        }
        if let Some(v) = section.control_period {
            config.control_period = v;
        }
        if let Some(kind) = &section.lex_constraint {
            config.lex_kind = parse_lex_kind(kind)?;
        }
        if let Some(v) = section.max_iter {
            config.sqp.max_iter = v;
        }
        let n = config.effort.input.len();
        if let Some(v) = section.effort_state_velocity {
            for j in n..2 * n {
                config.effort.state[j] = v;
            }
        }
        if let Some(v) = section.effort_input {
            config.effort.input = DVector::from_element(n, v);
        }
        if let Some(v) = section.effort_input_diff {
            config.effort.input_diff = DVector::from_element(n, v);
        }
        if let Some(v) = section.barrier_mu {
            config.barrier.mu = v;
        }
        if let Some(v) = section.barrier_knot_frac {
            config.barrier.knot_frac = v;
        }
        Ok(())
    }

    pub fn apply_htidkc(&self, config: &mut HtidkcConfig) {
        let Some(section) = &self.htidkc else {
            return;
        };
        if let Some(v) = section.control_period {
            config.control_period = v;
        }
        if let Some(gains) = &section.gains {
            config.gains = gains.clone();
        }
        if let Some(v) = section.default_gain {
            config.default_gain = v;
        }
        if let Some(v) = section.lambda {
            config.lambda = v;
        }
    }
}
