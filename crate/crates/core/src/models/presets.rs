//! Dataset presets (patch geometry, class counts, batch sizes) and the
//! calibrated per-architecture width plans. The width numbers were fixed by
//! the committed calibration pass (`cargo run --bin calibrate`) against the
//! reference parameter table and should not be edited casually.

use super::{ArchitectureId, MambaFlavor, ModelConfig, WidthPlan};
use crate::blocks::BlockAttrs;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The six benchmark modalities plus the desk-scale synthetic preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetPreset {
    Microscopy,
    Camus,
    Acdc,
    AbdomenMr,
    AbdomenCt,
    Pet,
    SynthShapes,
}

impl DatasetPreset {
    pub const ALL: [DatasetPreset; 7] = [
        DatasetPreset::Microscopy,
        DatasetPreset::Camus,
        DatasetPreset::Acdc,
        DatasetPreset::AbdomenMr,
        DatasetPreset::AbdomenCt,
        DatasetPreset::Pet,
        DatasetPreset::SynthShapes,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DatasetPreset::Microscopy => "Microscopy",
            DatasetPreset::Camus => "CAMUS",
            DatasetPreset::Acdc => "ACDC",
            DatasetPreset::AbdomenMr => "AbdomenMR",
            DatasetPreset::AbdomenCt => "AbdomenCT",
            DatasetPreset::Pet => "PET",
            DatasetPreset::SynthShapes => "SynthShapes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .find(|p| p.name().to_ascii_lowercase() == norm)
            .copied()
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }

    /// (H, W) patch size.
    pub fn input_hw(&self) -> (usize, usize) {
        match self {
            DatasetPreset::Microscopy => (256, 256),
            DatasetPreset::Camus => (256, 256),
            DatasetPreset::Acdc => (256, 224),
            DatasetPreset::AbdomenMr => (320, 320),
            DatasetPreset::AbdomenCt => (256, 256),
            DatasetPreset::Pet => (320, 192),
            DatasetPreset::SynthShapes => (64, 64),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetPreset::Microscopy => 2,
            DatasetPreset::Camus => 3,
            DatasetPreset::Acdc => 4,
            DatasetPreset::AbdomenMr => 14,
            DatasetPreset::AbdomenCt => 14,
            DatasetPreset::Pet => 23,
            DatasetPreset::SynthShapes => 3,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            DatasetPreset::Microscopy => 8,
            DatasetPreset::Camus => 6,
            DatasetPreset::Acdc => 16,
            DatasetPreset::AbdomenMr => 8,
            DatasetPreset::AbdomenCt => 6,
            DatasetPreset::Pet => 4,
            DatasetPreset::SynthShapes => 8,
        }
    }

    pub fn in_channels(&self) -> usize {
        1
    }
}

fn cnn_attrs() -> BlockAttrs {
    BlockAttrs::default()
}

/// Calibrated default widths per architecture.
pub fn default_width(arch: ArchitectureId) -> WidthPlan {
    match arch {
        ArchitectureId::U2Net => WidthPlan::X2 {
            enc_out: [64, 128, 256, 512, 512, 512],
            enc_mid: [32, 32, 64, 128, 256, 256],
            dec_out: [512, 256, 128, 64, 64],
            dec_mid: [256, 128, 64, 32, 16],
            depths: [6, 5, 4, 3, 3, 3],
            attrs: cnn_attrs(),
        },
        ArchitectureId::U2NetS => WidthPlan::X2 {
            enc_out: [64, 64, 64, 64, 64, 64],
            enc_mid: [16, 16, 16, 16, 16, 16],
            dec_out: [64, 64, 64, 64, 64],
            dec_mid: [16, 16, 16, 16, 16],
            depths: [6, 5, 4, 3, 3, 3],
            attrs: cnn_attrs(),
        },
        ArchitectureId::Ss2d2Net => WidthPlan::X2 {
            enc_out: [64, 128, 256, 512, 512, 512],
            enc_mid: [24, 32, 48, 64, 192, 192],
            dec_out: [512, 256, 128, 64, 64],
            dec_mid: [192, 64, 48, 32, 24],
            depths: [3, 3, 2, 2, 3, 3],
            attrs: BlockAttrs {
                state_dim: 16,
                expansion: 2,
                vss_layers: 2,
                ..Default::default()
            },
        },
        ArchitectureId::Ss2d2NetS => WidthPlan::X2 {
            enc_out: [64, 64, 64, 64, 64, 64],
            enc_mid: [16, 16, 16, 16, 16, 16],
            dec_out: [64, 64, 64, 64, 64],
            dec_mid: [16, 16, 16, 16, 16],
            depths: [3, 3, 2, 2, 3, 3],
            attrs: BlockAttrs {
                state_dim: 16,
                expansion: 2,
                vss_layers: 1,
                ..Default::default()
            },
        },
        ArchitectureId::Swt2Net => WidthPlan::X2 {
            enc_out: [64, 128, 256, 512, 512, 512],
            enc_mid: [96, 144, 176, 192, 192, 192],
            dec_out: [512, 256, 128, 64, 64],
            dec_mid: [192, 192, 176, 144, 96],
            depths: [3, 3, 2, 2, 3, 3],
            attrs: BlockAttrs {
                heads: 4,
                window: 8,
                mlp_ratio: 4,
                ..Default::default()
            },
        },
        ArchitectureId::Alt1dm2Net => WidthPlan::X2 {
            enc_out: [32, 64, 128, 256, 256, 256],
            enc_mid: [20, 28, 40, 52, 52, 52],
            dec_out: [256, 128, 64, 32, 32],
            dec_mid: [52, 52, 40, 28, 20],
            depths: [3, 3, 2, 2, 3, 3],
            attrs: BlockAttrs {
                state_dim: 16,
                expansion: 2,
                ..Default::default()
            },
        },
        ArchitectureId::Alt1dm2NetS => WidthPlan::X2 {
            enc_out: [46, 46, 46, 46, 46, 46],
            enc_mid: [15, 15, 15, 15, 15, 15],
            dec_out: [46, 46, 46, 46, 46],
            dec_mid: [15, 15, 15, 15, 15],
            depths: [3, 3, 2, 2, 3, 3],
            attrs: BlockAttrs {
                state_dim: 8,
                expansion: 2,
                ..Default::default()
            },
        },
        ArchitectureId::Unetr2Net => WidthPlan::X2 {
            enc_out: [64, 128, 256, 512, 512, 512],
            enc_mid: [64, 64, 96, 96, 96, 96],
            dec_out: [512, 256, 128, 64, 64],
            dec_mid: [96, 96, 96, 64, 64],
            depths: [3, 3, 2, 2, 2, 2],
            attrs: BlockAttrs {
                heads: 8,
                embed: 576,
                mlp_ratio: 4,
                ..Default::default()
            },
        },
        ArchitectureId::MambaNd2Net => WidthPlan::X2 {
            enc_out: [64, 128, 256, 512, 512, 512],
            enc_mid: [56, 76, 96, 112, 112, 112],
            dec_out: [512, 256, 128, 64, 64],
            dec_mid: [112, 112, 96, 76, 56],
            depths: [3, 3, 2, 2, 2, 2],
            attrs: BlockAttrs {
                state_dim: 16,
                expansion: 2,
                nd_axes: 2,
                ..Default::default()
            },
        },
        ArchitectureId::NnUnetLike => WidthPlan::PlainUnet {
            features: vec![72, 144, 288, 576, 576, 576],
        },
        ArchitectureId::Unetr => WidthPlan::Unetr {
            embed: 768,
            layers: 12,
            heads: 12,
            mlp_ratio: 4,
            patch: 16,
            feature_ch: 64,
            decoder_ch: 512,
        },
        ArchitectureId::Swt => WidthPlan::Swin {
            embed: 104,
            depths: vec![2, 2, 6, 2],
            heads: vec![4, 8, 16, 32],
            window: 8,
            mlp_ratio: 4,
            patch: 4,
        },
        ArchitectureId::SwinUMamba => WidthPlan::MambaUnet {
            dims: vec![96, 192, 384, 768],
            layers_per_stage: 2,
            expansion: 2,
            state_dim: 16,
            dt_rank_divisor: 16,
            flavor: MambaFlavor::Vss,
            patch: 4,
        },
        ArchitectureId::SegMamba => WidthPlan::MambaUnet {
            dims: vec![80, 160, 320, 640],
            layers_per_stage: 2,
            expansion: 2,
            state_dim: 16,
            dt_rank_divisor: 16,
            flavor: MambaFlavor::GscSs2d,
            patch: 4,
        },
        ArchitectureId::LightUMamba => WidthPlan::MambaUnet {
            dims: vec![64, 128, 256, 512],
            layers_per_stage: 1,
            expansion: 2,
            state_dim: 16,
            dt_rank_divisor: 16,
            flavor: MambaFlavor::Light,
            patch: 4,
        },
    }
}

/// Desk-scale widths for training smoke runs: same topologies, minimal
/// channel plans.
pub fn tiny_width(arch: ArchitectureId) -> WidthPlan {
    let tiny_attrs = BlockAttrs {
        heads: 2,
        window: 4,
        embed: 16,
        state_dim: 4,
        dt_rank_divisor: 4,
        expansion: 2,
        mlp_ratio: 2,
        vss_layers: 1,
        nd_axes: 2,
    };
    match default_width(arch) {
        WidthPlan::X2 { depths, .. } => WidthPlan::X2 {
            enc_out: [16, 16, 16, 16, 16, 16],
            enc_mid: [4, 4, 4, 4, 4, 4],
            dec_out: [16, 16, 16, 16, 16],
            dec_mid: [4, 4, 4, 4, 4],
            depths,
            attrs: tiny_attrs,
        },
        WidthPlan::Unetr { patch, .. } => WidthPlan::Unetr {
            embed: 32,
            layers: 4,
            heads: 2,
            mlp_ratio: 2,
            patch,
            feature_ch: 8,
            decoder_ch: 8,
        },
        WidthPlan::Swin { patch, window, .. } => WidthPlan::Swin {
            embed: 8,
            depths: vec![2, 2, 2, 2],
            heads: vec![2, 2, 2, 2],
            window,
            mlp_ratio: 2,
            patch,
        },
        WidthPlan::PlainUnet { .. } => WidthPlan::PlainUnet {
            features: vec![8, 16, 16, 16, 16, 16],
        },
        WidthPlan::MambaUnet { flavor, patch, .. } => WidthPlan::MambaUnet {
            dims: vec![8, 16, 16, 16],
            layers_per_stage: 1,
            expansion: 2,
            state_dim: 4,
            dt_rank_divisor: 4,
            flavor,
            patch,
        },
    }
}

/// Geometry per the benchmark table plus calibrated widths.
pub fn preset_config(arch: ArchitectureId, preset: DatasetPreset) -> ModelConfig {
    let (h, w) = preset.input_hw();
    ModelConfig {
        arch,
        in_channels: preset.in_channels(),
        num_classes: preset.num_classes(),
        input_hw: (h, w),
        seed: 0,
        width: default_width(arch),
    }
}

/// Reference parameter counts in millions per (architecture, preset column).
/// `None` for the synthetic preset, which has no reference row.
pub fn table3_reference(arch: ArchitectureId, preset: DatasetPreset) -> Option<f64> {
    use ArchitectureId::*;
    use DatasetPreset::*;
    let col = match preset {
        Microscopy => 0,
        Camus => 1,
        Acdc => 2,
        AbdomenMr => 3,
        AbdomenCt => 4,
        Pet => 5,
        SynthShapes => return None,
    };
    let row: [f64; 6] = match arch {
        NnUnetLike => [62.2, 62.2, 28.7, 45.4, 45.4, 45.5],
        Unetr => [110.7, 110.3, 110.3, 110.4, 110.3, 110.3],
        Swt => [39.5, 39.5, 39.5, 39.5, 39.5, 39.5],
        SwinUMamba => [26.2, 26.2, 26.2, 26.2, 26.2, 26.2],
        SegMamba => [25.3, 25.3, 25.3, 25.3, 25.3, 25.3],
        LightUMamba => [5.70, 5.70, 5.70, 5.70, 5.70, 5.70],
        U2Net => [42.0, 42.0, 42.0, 42.1, 42.1, 42.3],
        U2NetS => [1.10, 1.10, 1.10, 1.10, 1.10, 1.20],
        Unetr2Net => [149.1, 149.1, 149.0, 149.3, 149.1, 149.1],
        Swt2Net => [172.2, 172.2, 172.2, 172.3, 172.3, 172.3],
        Ss2d2Net => [39.0, 39.1, 39.1, 39.2, 39.2, 39.3],
        Ss2d2NetS => [2.00, 2.00, 2.00, 2.10, 2.10, 2.20],
        Alt1dm2Net => [8.90, 8.90, 8.90, 8.90, 8.90, 8.90],
        Alt1dm2NetS => [1.50, 1.50, 1.50, 1.50, 1.50, 1.50],
        MambaNd2Net => [39.5, 39.5, 39.5, 39.5, 39.5, 39.5],
    };
    Some(row[col])
}
