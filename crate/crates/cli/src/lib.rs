//! Command-line front end for the scene engine: argument parsing, the
//! config file and the network services behind `ave serve`.

pub mod commands;
pub mod config;
pub mod overpass;
pub mod serve;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Io, OsmSource};
use config::Config;
use overpass::BBox;

#[derive(Debug, Parser)]
#[command(name = "ave", version, about = "Build projector-textured 3D scenes from geotagged photos and OSM")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "AVE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Scene file read and written by every command [default: paths.scene
    /// from the config, else scene.json].
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add photos and seed a projector for each.
    Ingest {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Directory holding `<image stem>.json` metadata overrides.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Mesh buildings (and terrain) into the scene.
    Build(BuildArgs),
    /// Recompute projector masks with the configured fan and clip range.
    Project,
    /// Place detections from a detection document.
    Place { detections: PathBuf },
    /// Run the datagram server and web-socket bridge until interrupted.
    Serve,
    /// Write OBJ + MTL.
    Export { obj: PathBuf },
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["osm", "bbox"])))]
pub struct BuildArgs {
    /// Overpass JSON document.
    #[arg(long)]
    pub osm: Option<PathBuf>,
    /// Fetch buildings live: S,W,N,E in degrees.
    #[arg(long, value_parser = clap::value_parser!(BBox), allow_hyphen_values = true)]
    pub bbox: Option<BBox>,
    /// ESRI ASCII grid.
    #[arg(long)]
    pub terrain: Option<PathBuf>,
    /// `auto` (footprint centroid) or LAT,LON.
    #[arg(long, default_value = "auto", value_parser = commands::parse_anchor, allow_hyphen_values = true)]
    pub anchor: ave_core::pipeline::AnchorChoice,
}

impl clap::builder::ValueParserFactory for BBox {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<BBox>())
    }
}

/// Run one command; the return value is the process exit status.
pub fn run(cli: Cli, io: &mut Io) -> anyhow::Result<u8> {
    let cfg = Config::load(cli.config.as_deref())?;
    let scene_path = cli.scene.clone().unwrap_or_else(|| cfg.scene_path.clone());
    match cli.command {
        Command::Ingest { images, sidecar } => commands::ingest(&cfg, &scene_path, &images, sidecar.as_deref(), io),
        Command::Build(b) => {
            let source = match (&b.osm, b.bbox) {
                (Some(p), _) => OsmSource::File(p),
                (None, Some(bb)) => OsmSource::BBox(bb),
                (None, None) => unreachable!("clap requires one source"),
            };
            commands::build(&cfg, &scene_path, source, b.terrain.as_deref(), b.anchor, io)
        }
        Command::Project => commands::project(&cfg, &scene_path, io),
        Command::Place { detections } => commands::place(&cfg, &scene_path, &detections, io),
        Command::Export { obj } => commands::export(&cfg, &scene_path, &obj, io),
        Command::Serve => {
            let scene = commands::load_scene(&scene_path, &cfg)?;
            let running = serve::start(
                scene,
                serve::ServeOptions {
                    bind: cfg.bind,
                    udp_port: cfg.udp_port,
                    ws_port: cfg.ws_port,
                    scene_path: Some(scene_path.clone()),
                    log: true,
                },
            )?;
            writeln!(
                io.out,
                "serving {} (datagrams {}, web sockets ws://{})",
                scene_path.display(),
                running.udp_addr,
                running.ws_addr
            )?;
            io.out.flush()?;
            running.wait()?;
            Ok(0)
        }
    }
}
