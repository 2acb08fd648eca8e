//! Calibration tool: builds every architecture at each preset geometry,
//! counts parameters, and prints the delta against the reference table.
//! The committed width plans in `models::presets` were fixed with this.

use nnuzoo::models::{build_model, preset_config, table3_reference, ArchitectureId, DatasetPreset};
use nnuzoo::Parameterized;

fn main() {
    let presets = [
        DatasetPreset::Microscopy,
        DatasetPreset::Acdc,
        DatasetPreset::Pet,
    ];
    println!(
        "{:<14} {:>10} {:>9} {:>9} {:>8}  preset",
        "architecture", "params", "millions", "ref(M)", "delta%"
    );
    for arch in ArchitectureId::ALL {
        for preset in presets {
            let config = preset_config(arch, preset);
            match build_model::<f32>(arch, &config) {
                Ok(model) => {
                    let n = model.param_count();
                    let m = n as f64 / 1e6;
                    match table3_reference(arch, preset) {
                        Some(r) => println!(
                            "{:<14} {:>10} {:>9.3} {:>9.2} {:>+7.1}%  {}",
                            arch.name(),
                            n,
                            m,
                            r,
                            (m - r) / r * 100.0,
                            preset.name()
                        ),
                        None => println!(
                            "{:<14} {:>10} {:>9.3} {:>9} {:>8}  {}",
                            arch.name(),
                            n,
                            m,
                            "-",
                            "-",
                            preset.name()
                        ),
                    }
                }
                Err(e) => println!("{:<14} build failed: {e}", arch.name()),
            }
        }
    }
}
