//! `ave.toml`: every field optional, validated on load.
//!
//! ```toml
//! [overpass]
//! url = "https://overpass-api.de/api/interpreter"
//! timeout_secs = 60
//!
//! [projection]
//! fan = [32, 18]
//! near = 0.1
//! far = 500.0
//! eye_height = 1.6
//! default_focal35 = 28.0
//!
//! [buildings]
//! default_height = 8.0
//! level_height = 3.0
//!
//! [terrain]
//! crs = "auto"          # auto | utm | geographic
//!
//! [server]
//! bind = "127.0.0.1"
//! udp_port = 47701
//! ws_port = 47702
//!
//! [paths]
//! scene = "scene.json"
//! ```
//!
//! `AVE_OVERPASS_URL`, `AVE_BIND`, `AVE_UDP_PORT` and `AVE_WS_PORT` override
//! the file.

use std::net::IpAddr;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ave_core::ingest::HeightRule;
use ave_core::projection::FanSettings;
use ave_core::protocol::{DEFAULT_UDP_PORT, DEFAULT_WS_PORT};
use ave_core::scene::SceneSettings;
use serde::Deserialize;
use toml::Spanned;

pub const DEFAULT_OVERPASS_URL: &str = "https://overpass-api.de/api/interpreter";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}:{line}: {field}: {message}")]
    Invalid {
        path: String,
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("{var}={value:?}: {message}")]
    Env {
        var: &'static str,
        value: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainCrs {
    #[default]
    Auto,
    Utm,
    Geographic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub overpass_url: String,
    pub overpass_timeout: Duration,
    pub settings: SceneSettings,
    pub heights: HeightRule,
    pub terrain_crs: TerrainCrs,
    pub bind: IpAddr,
    pub udp_port: u16,
    pub ws_port: u16,
    pub scene_path: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            overpass_url: DEFAULT_OVERPASS_URL.into(),
            overpass_timeout: Duration::from_secs(60),
            settings: SceneSettings::default(),
            heights: HeightRule::default(),
            terrain_crs: TerrainCrs::Auto,
            bind: IpAddr::from([127, 0, 0, 1]),
            udp_port: DEFAULT_UDP_PORT,
            ws_port: DEFAULT_WS_PORT,
            scene_path: "scene.json".into(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    overpass: OverpassSection,
    #[serde(default)]
    projection: ProjectionSection,
    #[serde(default)]
    buildings: BuildingsSection,
    #[serde(default)]
    terrain: TerrainSection,
    #[serde(default)]
    server: ServerSection,
    #[serde(default)]
    paths: PathsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverpassSection {
    url: Option<Spanned<String>>,
    timeout_secs: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionSection {
    fan: Option<Spanned<[usize; 2]>>,
    near: Option<Spanned<f64>>,
    far: Option<Spanned<f64>>,
    eye_height: Option<Spanned<f64>>,
    default_focal35: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildingsSection {
    default_height: Option<Spanned<f64>>,
    level_height: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerrainSection {
    crs: Option<TerrainCrs>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServerSection {
    bind: Option<Spanned<String>>,
    udp_port: Option<u16>,
    ws_port: Option<u16>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    scene: Option<PathBuf>,
}

struct Checker<'a> {
    path: &'a str,
    text: &'a str,
}

impl Checker<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn fail(&self, field: &'static str, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            path: self.path.into(),
            line: self.line(span),
            field,
            message: message.into(),
        }
    }

    fn positive(&self, field: &'static str, v: &Option<Spanned<f64>>, out: &mut f64) -> Result<(), ConfigError> {
        if let Some(s) = v {
            let x = *s.get_ref();
            if !(x.is_finite() && x > 0.0) {
                return Err(self.fail(field, s.span(), format!("must be a positive number, got {x}")));
            }
            *out = x;
        }
        Ok(())
    }
}

impl Config {
    /// Load `path` if given, then apply environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Config::from_toml(&text, &p.display().to_string())?
            }
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str, path: &str) -> Result<Config, ConfigError> {
        let file: File = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let c = Checker { path, text };
        let mut cfg = Config::default();

        if let Some(u) = &file.overpass.url {
            let url = u.get_ref();
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(c.fail("overpass.url", u.span(), "must be an http(s) URL"));
            }
            cfg.overpass_url = url.clone();
        }
        let mut timeout = cfg.overpass_timeout.as_secs_f64();
        c.positive("overpass.timeout_secs", &file.overpass.timeout_secs, &mut timeout)?;
        cfg.overpass_timeout = Duration::from_secs_f64(timeout);

        let p = &file.projection;
        if let Some(f) = &p.fan {
            let [nx, ny] = *f.get_ref();
            if nx < 2 || ny < 2 || nx > 4096 || ny > 4096 {
                return Err(c.fail("projection.fan", f.span(), "each dimension must be in 2..=4096"));
            }
            cfg.settings.fan = FanSettings { nx, ny };
        }
        c.positive("projection.near", &p.near, &mut cfg.settings.near)?;
        c.positive("projection.far", &p.far, &mut cfg.settings.far)?;
        if cfg.settings.near >= cfg.settings.far {
            let span = p.far.as_ref().or(p.near.as_ref()).map_or(0..0, |s| s.span());
            return Err(c.fail("projection.far", span, "must be greater than projection.near"));
        }
        if let Some(s) = &p.eye_height {
            if !s.get_ref().is_finite() {
                return Err(c.fail("projection.eye_height", s.span(), "must be finite"));
            }
            cfg.settings.eye_height = *s.get_ref();
        }
        c.positive("projection.default_focal35", &p.default_focal35, &mut cfg.settings.default_focal35)?;

        c.positive("buildings.default_height", &file.buildings.default_height, &mut cfg.heights.default_height)?;
        c.positive("buildings.level_height", &file.buildings.level_height, &mut cfg.heights.level_height)?;

        cfg.terrain_crs = file.terrain.crs.unwrap_or_default();

        if let Some(b) = &file.server.bind {
            cfg.bind = b
                .get_ref()
                .parse()
                .map_err(|_| c.fail("server.bind", b.span(), "not an IP address"))?;
        }
        if let Some(port) = file.server.udp_port {
            cfg.udp_port = port;
        }
        if let Some(port) = file.server.ws_port {
            cfg.ws_port = port;
        }
        if let Some(scene) = file.paths.scene {
            cfg.scene_path = scene;
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn bad(var: &'static str, value: &str, message: &str) -> ConfigError {
            ConfigError::Env {
                var,
                value: value.into(),
                message: message.into(),
            }
        }
        if let Some(v) = get("AVE_OVERPASS_URL") {
            if !(v.starts_with("http://") || v.starts_with("https://")) {
                return Err(bad("AVE_OVERPASS_URL", &v, "must be an http(s) URL"));
            }
            self.overpass_url = v;
        }
        if let Some(v) = get("AVE_BIND") {
            self.bind = v.parse().map_err(|_| bad("AVE_BIND", &v, "not an IP address"))?;
        }
        if let Some(v) = get("AVE_UDP_PORT") {
            self.udp_port = v.parse().map_err(|_| bad("AVE_UDP_PORT", &v, "not a port number"))?;
        }
        if let Some(v) = get("AVE_WS_PORT") {
            self.ws_port = v.parse().map_err(|_| bad("AVE_WS_PORT", &v, "not a port number"))?;
        }
        Ok(())
    }
}
