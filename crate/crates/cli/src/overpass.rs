//! Live Overpass fetch for `ave build --bbox`.

use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl FromStr for BBox {
    type Err = String;

    /// `S,W,N,E` in decimal degrees.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("{p:?} is not a number")))
            .collect::<Result<_, _>>()?;
        let [south, west, north, east] = parts[..] else {
            return Err(format!("expected S,W,N,E, got {} values", parts.len()));
        };
        if !(-90.0..=90.0).contains(&south) || !(-90.0..=90.0).contains(&north) {
            return Err("latitudes must be within ±90".into());
        }
        if !(-180.0..=180.0).contains(&west) || !(-180.0..=180.0).contains(&east) {
            return Err("longitudes must be within ±180".into());
        }
        if south >= north || west >= east {
            return Err("need S < N and W < E".into());
        }
        Ok(BBox { south, west, north, east })
    }
}

pub fn query(b: &BBox, timeout: Duration) -> String {
    format!(
        "[out:json][timeout:{}];way[\"building\"]({},{},{},{});out body;>;out skel qt;",
        timeout.as_secs().max(1),
        b.south,
        b.west,
        b.north,
        b.east
    )
}

/// POST the query and return the raw response document.
pub fn fetch(url: &str, b: &BBox, timeout: Duration) -> anyhow::Result<Vec<u8>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let q = query(b, timeout);
    let mut resp = agent
        .post(url)
        .send_form([("data", q.as_str())])
        .with_context(|| format!("network error: Overpass request to {url} failed"))?;
    let status = resp.status();
    if !status.is_success() {
        bail!("Overpass at {url} answered {status}");
    }
    resp.body_mut()
        .with_config()
        .limit(512 * 1024 * 1024)
        .read_to_vec()
        .with_context(|| format!("network error: reading the response from {url}"))
}
