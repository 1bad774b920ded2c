//! Regenerates the shipped scenario files under `configs/`.

use lure::harness::ScenarioConfig;

fn main() -> lure::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let files = [
        ("uav_default.toml", ScenarioConfig::uav_default()),
        ("uav_attack_a.toml", ScenarioConfig::uav_attack(0.6)),
        ("uav_attack_b.toml", ScenarioConfig::uav_attack(0.9)),
        ("published_bounds.toml", ScenarioConfig::published_bounds()),
    ];
    for (name, cfg) in files {
        std::fs::write(dir.join(name), cfg.to_toml()?).map_err(|e| lure::Error::Io(e.to_string()))?;
    }
    Ok(())
}
