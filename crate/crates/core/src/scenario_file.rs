//! TOML scenario documents.
//!
//! ```toml
//! version = 1
//! ego = 0
//! beta = 0.8
//! distance_scale_m = 100.0   # optional
//! gamma_min = 0.05           # optional
//! min_ego_links = 1          # optional, see `ego_range_m`
//! ego_range_m = 150.0        # optional
//! volumes = [[0, 2e6], [3e6, 0]]
//!
//! [channel]                  # optional, every key optional
//! total_bandwidth_hz = 20e6
//! num_subchannels = 4
//! noise_mode = "literal-power"
//!
//! [[node]]
//! id = 0
//! x = 0.0
//! y = 0.0
//! image = "ego.ppm"          # optional, relative to the file
//! ```
//!
//! `volumes[i][j]` follows the order of the `[[node]]` entries. When
//! `min_ego_links` is absent it defaults to the number of collaborators
//! within `ego_range_m` of the ego, capped by the sub-channel count.

use std::collections::HashMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::channel::{ChannelParams, NoiseMode, VehicleNode};
use crate::scenario::{Scenario, DEFAULT_DISTANCE_SCALE_M, DEFAULT_GAMMA_MIN};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EGO_RANGE_M: f64 = 150.0;

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("{}", fmt_located(.line, .message))]
    Parse { line: Option<usize>, message: String },
    #[error("{}invalid `{field}`: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        field: String,
        reason: String,
    },
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_located(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {message}"),
        None => message.to_string(),
    }
}

impl ScenarioFileError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Parse { line, .. } | Self::Invalid { line, .. } => *line,
            Self::Io { .. } => None,
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// A parsed document: the validated scenario plus per-node image paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    /// In node order; relative paths are resolved by [`load_scenario`].
    pub images: Vec<Option<PathBuf>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    version: Spanned<u32>,
    ego: Spanned<u32>,
    beta: Spanned<f64>,
    distance_scale_m: Option<Spanned<f64>>,
    gamma_min: Option<Spanned<f64>>,
    min_ego_links: Option<Spanned<usize>>,
    ego_range_m: Option<Spanned<f64>>,
    volumes: Spanned<Vec<Vec<f64>>>,
    channel: Option<Spanned<RawChannel>>,
    #[serde(rename = "node")]
    nodes: Spanned<Vec<RawNode>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    total_bandwidth_hz: Option<Spanned<f64>>,
    num_subchannels: Option<Spanned<u32>>,
    transmit_power_w: Option<Spanned<f64>>,
    noise: Option<Spanned<f64>>,
    noise_mode: Option<Spanned<NoiseMode>>,
    pathloss_exponent: Option<Spanned<f64>>,
    reference_distance_m: Option<Spanned<f64>>,
    reference_gain: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: Spanned<u32>,
    x: Spanned<f64>,
    y: Spanned<f64>,
    image: Option<Spanned<String>>,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn of(&self, span: Range<usize>) -> usize {
        self.0[..span.start.min(self.0.len())].matches('\n').count() + 1
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioFileError> {
    let lines = Lines(text);
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioFileError::Parse {
        line: e.span().map(|s| lines.of(s)),
        message: e.message().to_string(),
    })?;
    let invalid = |span: Range<usize>, field: &str, reason: String| ScenarioFileError::Invalid {
        line: Some(lines.of(span)),
        field: field.to_string(),
        reason,
    };

    if *raw.version.get_ref() != FORMAT_VERSION {
        return Err(invalid(
            raw.version.span(),
            "version",
            format!("unsupported version {}, expected {FORMAT_VERSION}", raw.version.get_ref()),
        ));
    }

    // spans of every key, used to place errors from Scenario::validate
    let mut spans: HashMap<&str, Range<usize>> = HashMap::new();
    spans.insert("ego", raw.ego.span());
    spans.insert("beta", raw.beta.span());
    spans.insert("volumes", raw.volumes.span());
    spans.insert("nodes", raw.nodes.span());

    let mut channel = ChannelParams::default();
    if let Some(c) = &raw.channel {
        spans.insert("channel", c.span());
        let c = c.get_ref();
        macro_rules! take {
            ($($name:ident),*) => {$(
                if let Some(v) = &c.$name {
                    channel.$name = v.get_ref().clone();
                    spans.insert(stringify!($name), v.span());
                }
            )*};
        }
        take!(
            total_bandwidth_hz,
            num_subchannels,
            transmit_power_w,
            noise,
            noise_mode,
            pathloss_exponent,
            reference_distance_m,
            reference_gain
        );
    }

    let mut nodes = Vec::new();
    let mut images = Vec::new();
    let mut first_seen: HashMap<u32, usize> = HashMap::new();
    for n in raw.nodes.get_ref() {
        let id = *n.id.get_ref();
        if let Some(prev) = first_seen.insert(id, lines.of(n.id.span())) {
            return Err(invalid(
                n.id.span(),
                "node.id",
                format!("id {id} already used on line {prev}"),
            ));
        }
        for (v, name) in [(&n.x, "node.x"), (&n.y, "node.y")] {
            if !v.get_ref().is_finite() {
                return Err(invalid(v.span(), name, "must be finite".into()));
            }
        }
        nodes.push(VehicleNode::new(id, *n.x.get_ref(), *n.y.get_ref()));
        images.push(n.image.as_ref().map(|p| PathBuf::from(p.get_ref())));
    }

    let rows = raw.volumes.get_ref();
    let n = nodes.len();
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(
            raw.volumes.span(),
            "volumes",
            format!("expected {n} rows of {n} entries, one per [[node]]"),
        ));
    }
    let data_volumes = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);

    let opt = |v: &Option<Spanned<f64>>, name: &'static str, default: f64, spans: &mut HashMap<&str, Range<usize>>| {
        if let Some(v) = v {
            spans.insert(name, v.span());
        }
        v.as_ref().map_or(default, |v| *v.get_ref())
    };
    let distance_scale_m = opt(&raw.distance_scale_m, "distance_scale_m", DEFAULT_DISTANCE_SCALE_M, &mut spans);
    let gamma_min = opt(&raw.gamma_min, "gamma_min", DEFAULT_GAMMA_MIN, &mut spans);
    let ego_range_m = opt(&raw.ego_range_m, "ego_range_m", DEFAULT_EGO_RANGE_M, &mut spans);
    if !(ego_range_m.is_finite() && ego_range_m >= 0.0) {
        return Err(invalid(spans["ego_range_m"].clone(), "ego_range_m", "must be finite and >= 0".into()));
    }

    let mut scenario = Scenario {
        nodes,
        ego_id: *raw.ego.get_ref(),
        data_volumes,
        channel,
        beta: *raw.beta.get_ref(),
        distance_scale_m,
        gamma_min,
        min_ego_links: 1,
    };
    scenario.min_ego_links = match &raw.min_ego_links {
        Some(m) => {
            spans.insert("min_ego_links", m.span());
            *m.get_ref()
        }
        None => scenario.default_min_ego_links(ego_range_m),
    };

    scenario.validate().map_err(|e| {
        let field = e.field().unwrap_or("channel").to_string();
        let reason = match &e {
            crate::scenario::ScenarioError::Invalid { reason, .. } => reason.clone(),
            other => other.to_string(),
        };
        ScenarioFileError::Invalid {
            line: spans.get(field.as_str()).map(|s| lines.of(s.clone())),
            field,
            reason,
        }
    })?;
    Ok(ScenarioFile { scenario, images })
}

/// Reads and parses `path`, resolving image paths against its directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile, ScenarioFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut file = parse_scenario(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in file.images.iter_mut().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}
