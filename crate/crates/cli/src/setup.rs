//! Shared command wiring: device registration, placement parsing, model
//! loading and dataset resolution.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hetgrad_core::ingestion::{load_idx, Dataset};
use hetgrad_core::net::{BuildOptions, Net};
use hetgrad_core::netdef::{parse_net, NetSpec};
use hetgrad_core::{DeviceId, Phase, Placement, Runtime};

use crate::CommonArgs;

pub struct Devices {
    pub rt: Runtime<f32>,
    pub emu: Option<DeviceId>,
    pub default_placement: Placement,
}

pub fn devices(common: &CommonArgs) -> Result<Devices> {
    let mut rt = Runtime::new();
    rt.register_host();
    // The emulated accelerator exists whenever anything targets it.
    let wants_emu = common.device == "emu"
        || common.placement.iter().any(|p| p.ends_with("=emu"));
    let emu = if wants_emu { Some(rt.register_emulated(None)?) } else { None };
    let default_placement = match common.device.as_str() {
        "emu" => Placement::Device(emu.expect("registered above")),
        _ => Placement::Host,
    };
    Ok(Devices { rt, emu, default_placement })
}

pub fn effective_seed(common: &CommonArgs) -> u64 {
    match std::env::var("HETGRAD_SEED") {
        Ok(v) => v.parse().unwrap_or(common.seed),
        Err(_) => common.seed,
    }
}

pub fn load_net_spec(path: &Path) -> Result<NetSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read model '{}'", path.display()))?;
    let spec = parse_net(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e))?;
    for warning in &spec.warnings {
        eprintln!("warning: {}: {}", path.display(), warning);
    }
    Ok(spec)
}

pub fn apply_placements(net: &mut Net<f32>, devices: &Devices, common: &CommonArgs) -> Result<()> {
    net.set_placement_all(devices.default_placement);
    for entry in &common.placement {
        let Some((layer, target)) = entry.split_once('=') else {
            bail!("--placement expects LAYER=host|emu, got '{}'", entry);
        };
        let placement = match target {
            "host" => Placement::Host,
            "emu" => Placement::Device(
                devices.emu.context("--placement ...=emu requires an emulated device")?,
            ),
            other => bail!("unknown placement target '{}'", other),
        };
        net.set_layer_placement(layer, placement)
            .map_err(|e| anyhow::anyhow!("--placement {}: {}", entry, e))?;
    }
    Ok(())
}

pub fn build_net(
    devices: &mut Devices,
    spec: &NetSpec,
    phase: Phase,
    common: &CommonArgs,
    seed: u64,
    retain_col: bool,
) -> Result<Net<f32>> {
    let opts = BuildOptions { batch_override: common.batch, seed, retain_col };
    let mut net = Net::build(&mut devices.rt, spec, phase, &opts)
        .map_err(|e| anyhow::anyhow!("building net: {}", e))?;
    apply_placements(&mut net, devices, common)?;
    Ok(net)
}

/// Loads an IDX pair; the network's transform scale applies at batch time, so
/// pixels load raw here.
pub fn load_dataset(images: &Path, labels: &Path) -> Result<Arc<Dataset>> {
    let ds = load_idx(images, labels, 1.0, 0.0)
        .map_err(|e| anyhow::anyhow!("loading dataset: {}", e))?;
    Ok(Arc::new(ds))
}

/// Resolves a net path as written, then relative to the solver's directory.
pub fn resolve_relative(base_file: &Path, rel: &str) -> PathBuf {
    let as_given = PathBuf::from(rel);
    if as_given.exists() {
        return as_given;
    }
    if let Some(dir) = base_file.parent() {
        let joined = dir.join(rel);
        if joined.exists() {
            return joined;
        }
        if let Some(name) = as_given.file_name() {
            let sibling = dir.join(name);
            if sibling.exists() {
                return sibling;
            }
        }
    }
    as_given
}
