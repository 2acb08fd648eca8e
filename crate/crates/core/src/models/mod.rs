//! Named architecture builders for the fifteen networks of the zoo,
//! parameter accounting, dataset presets, and the checkpoint format.

pub mod baselines;
pub mod checkpoint;
pub mod presets;
pub mod x2net;

pub use baselines::{MambaFlavor, MambaUnet, PlainUnet, SwinUnet, UnetrNet};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use presets::{default_width, preset_config, table3_reference, tiny_width, DatasetPreset};
pub use x2net::X2Net;

use crate::blocks::{BlockAttrs, BlockKind, UBlockSpec};
use crate::error::{Error, Result};
use crate::kernels::ScanConfig;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The fifteen architectures of the zoo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchitectureId {
    NnUnetLike,
    Unetr,
    Swt,
    SwinUMamba,
    SegMamba,
    LightUMamba,
    U2Net,
    U2NetS,
    Unetr2Net,
    Swt2Net,
    Ss2d2Net,
    Ss2d2NetS,
    Alt1dm2Net,
    Alt1dm2NetS,
    MambaNd2Net,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 15] = [
        ArchitectureId::NnUnetLike,
        ArchitectureId::Unetr,
        ArchitectureId::Swt,
        ArchitectureId::SwinUMamba,
        ArchitectureId::SegMamba,
        ArchitectureId::LightUMamba,
        ArchitectureId::U2Net,
        ArchitectureId::U2NetS,
        ArchitectureId::Unetr2Net,
        ArchitectureId::Swt2Net,
        ArchitectureId::Ss2d2Net,
        ArchitectureId::Ss2d2NetS,
        ArchitectureId::Alt1dm2Net,
        ArchitectureId::Alt1dm2NetS,
        ArchitectureId::MambaNd2Net,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ArchitectureId::NnUnetLike => "nnUNet-like",
            ArchitectureId::Unetr => "UNETR",
            ArchitectureId::Swt => "SwT",
            ArchitectureId::SwinUMamba => "SwinUMamba",
            ArchitectureId::SegMamba => "SegMamba",
            ArchitectureId::LightUMamba => "LightUMamba",
            ArchitectureId::U2Net => "U2Net",
            ArchitectureId::U2NetS => "U2NetS",
            ArchitectureId::Unetr2Net => "UNETR2Net",
            ArchitectureId::Swt2Net => "SwT2Net",
            ArchitectureId::Ss2d2Net => "SS2D2Net",
            ArchitectureId::Ss2d2NetS => "SS2D2NetS",
            ArchitectureId::Alt1dm2Net => "Alt1DM2Net",
            ArchitectureId::Alt1dm2NetS => "Alt1DM2NetS",
            ArchitectureId::MambaNd2Net => "MambaND2Net",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .find(|a| a.name().to_ascii_lowercase() == norm)
            .copied()
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }

    /// Input dims must be divisible by this.
    pub fn required_divisor(&self) -> usize {
        32
    }

    fn is_x2(&self) -> bool {
        matches!(
            self,
            ArchitectureId::U2Net
                | ArchitectureId::U2NetS
                | ArchitectureId::Unetr2Net
                | ArchitectureId::Swt2Net
                | ArchitectureId::Ss2d2Net
                | ArchitectureId::Ss2d2NetS
                | ArchitectureId::Alt1dm2Net
                | ArchitectureId::Alt1dm2NetS
                | ArchitectureId::MambaNd2Net
        )
    }
}

/// Width/depth knobs, one variant per structural family. The numbers live in
/// presets and were fixed by the committed calibration pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum WidthPlan {
    X2 {
        /// En1..En6 output channels.
        enc_out: [usize; 6],
        /// En1..En6 mid/embed widths.
        enc_mid: [usize; 6],
        /// De5..De1 output channels.
        dec_out: [usize; 5],
        /// De5..De1 mid/embed widths.
        dec_mid: [usize; 5],
        /// En1..En6 internal depths (decoder mirrors encoder).
        depths: [usize; 6],
        attrs: BlockAttrs,
    },
    Unetr {
        embed: usize,
        layers: usize,
        heads: usize,
        mlp_ratio: usize,
        patch: usize,
        feature_ch: usize,
        decoder_ch: usize,
    },
    Swin {
        embed: usize,
        depths: Vec<usize>,
        heads: Vec<usize>,
        window: usize,
        mlp_ratio: usize,
        patch: usize,
    },
    PlainUnet {
        features: Vec<usize>,
    },
    MambaUnet {
        dims: Vec<usize>,
        layers_per_stage: usize,
        expansion: usize,
        state_dim: usize,
        dt_rank_divisor: usize,
        flavor: MambaFlavor,
        patch: usize,
    },
}

/// Everything needed to build one model deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchitectureId,
    pub in_channels: usize,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
    pub seed: u64,
    pub width: WidthPlan,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let d = self.arch.required_divisor();
        let (h, w) = self.input_hw;
        if h % d != 0 || w % d != 0 {
            return Err(Error::Divisibility {
                what: format!("{} input {h}x{w}", self.arch.name()),
                required: d,
                got: h,
            });
        }
        Ok(())
    }

    /// Canonical JSON snapshot (stable field order).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

enum Net<T: Scalar> {
    X2(X2Net<T>),
    PlainUnet(PlainUnet<T>),
    Unetr(UnetrNet<T>),
    Swin(SwinUnet<T>),
    Mamba(MambaUnet<T>),
}

/// A built model: ordered stages, skip wiring, and heads, plus the config
/// that reproduces it.
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    net: Net<T>,
}

impl<T: Scalar> Model<T> {
    /// Fused logits (B, num_classes, H, W).
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.check_geometry(g, x)?;
        match &self.net {
            Net::X2(n) => n.forward_with_sides(g, x).map(|(fused, _)| fused),
            Net::PlainUnet(n) => n.forward(g, x),
            Net::Unetr(n) => n.forward(g, x),
            Net::Swin(n) => n.forward(g, x),
            Net::Mamba(n) => n.forward(g, x),
        }
    }

    /// Fused logits plus side outputs where the architecture has them.
    pub fn forward_with_sides(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_geometry(g, x)?;
        match &self.net {
            Net::X2(n) => n.forward_with_sides(g, x),
            _ => self.forward(g, x).map(|v| (v, Vec::new())),
        }
    }

    fn check_geometry(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::shape(
                "model::forward",
                format!("(B, {}, H, W)", self.config.in_channels),
                format!("{s:?}"),
            ));
        }
        let d = self.config.arch.required_divisor();
        if s[2] % d != 0 || s[3] % d != 0 {
            return Err(Error::Divisibility {
                what: format!("batch {}x{}", s[2], s[3]),
                required: d,
                got: s[2],
            });
        }
        Ok(())
    }

    /// Exact count of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.param_count()
    }

    /// Traversal orders of scan-based X2Net stages, flattened in stage order.
    pub fn traversal_orders(&self) -> Vec<crate::kernels::TraversalOrder> {
        match &self.net {
            Net::X2(n) => n
                .stages
                .iter()
                .flat_map(|s| s.block.traversal_orders())
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Stage kinds for X2Net-family models (En1..En6, De5..De1).
    pub fn stage_kinds(&self) -> Vec<BlockKind> {
        match &self.net {
            Net::X2(n) => n.stages.iter().map(|s| s.kind).collect(),
            _ => Vec::new(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match &self.net {
            Net::X2(n) => n.visit(f),
            Net::PlainUnet(n) => n.visit(f),
            Net::Unetr(n) => n.visit(f),
            Net::Swin(n) => n.visit(f),
            Net::Mamba(n) => n.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match &mut self.net {
            Net::X2(n) => n.visit_mut(f),
            Net::PlainUnet(n) => n.visit_mut(f),
            Net::Unetr(n) => n.visit_mut(f),
            Net::Swin(n) => n.visit_mut(f),
            Net::Mamba(n) => n.visit_mut(f),
        }
    }
}

/// Stage kinds for one X2Net-family architecture: En1..En6, De5..De1.
fn x2_kinds(arch: ArchitectureId) -> [BlockKind; 11] {
    use BlockKind::*;
    let hybrid = |k: BlockKind| [k, k, k, k, RsuF, RsuF, RsuF, k, k, k, k];
    match arch {
        ArchitectureId::U2Net | ArchitectureId::U2NetS => {
            [Rsu, Rsu, Rsu, Rsu, RsuF, RsuF, RsuF, Rsu, Rsu, Rsu, Rsu]
        }
        ArchitectureId::Ss2d2Net | ArchitectureId::Ss2d2NetS => hybrid(Ss2dB),
        ArchitectureId::Swt2Net => hybrid(SwtB),
        ArchitectureId::Alt1dm2Net | ArchitectureId::Alt1dm2NetS => hybrid(Alt1dmB),
        ArchitectureId::Unetr2Net => [UnetrB; 11],
        ArchitectureId::MambaNd2Net => [MambaNdB; 11],
        _ => unreachable!("not an x2 architecture"),
    }
}

fn build_x2<T: Scalar>(
    arch: ArchitectureId,
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<X2Net<T>> {
    let (enc_out, enc_mid, dec_out, dec_mid, depths, attrs) = match &config.width {
        WidthPlan::X2 {
            enc_out,
            enc_mid,
            dec_out,
            dec_mid,
            depths,
            attrs,
        } => (enc_out, enc_mid, dec_out, dec_mid, depths, attrs.clone()),
        other => {
            return Err(Error::InvalidArgument(format!(
                "{} needs an X2 width plan, got {other:?}",
                arch.name()
            )))
        }
    };
    let kinds = x2_kinds(arch);
    let mut specs = Vec::with_capacity(11);
    // Encoder inputs: image, then previous stage output.
    for i in 0..6 {
        let in_ch = if i == 0 {
            config.in_channels
        } else {
            enc_out[i - 1]
        };
        specs.push(make_spec(
            kinds[i], in_ch, enc_mid[i], enc_out[i], depths[i], &attrs, i,
        ));
    }
    // Decoder inputs: cat(deeper output, encoder skip).
    // De5 sees (En6 out + En5 out); De4 (De5 out + En4 out); ...
    let skip_src = [enc_out[4], enc_out[3], enc_out[2], enc_out[1], enc_out[0]];
    let dec_depths = [depths[4], depths[3], depths[2], depths[1], depths[0]];
    for j in 0..5 {
        let deeper = if j == 0 { enc_out[5] } else { dec_out[j - 1] };
        specs.push(make_spec(
            kinds[6 + j],
            deeper + skip_src[j],
            dec_mid[j],
            dec_out[j],
            dec_depths[j],
            &attrs,
            6 + j,
        ));
    }
    X2Net::new(&specs, config.num_classes, rng)
}

fn make_spec(
    kind: BlockKind,
    in_ch: usize,
    mid_ch: usize,
    out_ch: usize,
    depth: usize,
    attrs: &BlockAttrs,
    stage_index: usize,
) -> UBlockSpec {
    UBlockSpec::new(kind, in_ch, mid_ch, out_ch, depth)
        .with_attrs(attrs.clone())
        .with_traversal_seed(stage_index)
}

/// Build a named architecture from its config. Deterministic per seed.
pub fn build_model<T: Scalar>(arch: ArchitectureId, config: &ModelConfig) -> Result<Model<T>> {
    if arch != config.arch {
        return Err(Error::InvalidArgument(format!(
            "config is for {}, asked to build {}",
            config.arch.name(),
            arch.name()
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = if arch.is_x2() {
        Net::X2(build_x2(arch, config, &mut rng)?)
    } else {
        match (&config.width, arch) {
            (WidthPlan::PlainUnet { features }, ArchitectureId::NnUnetLike) => Net::PlainUnet(
                PlainUnet::new(config.in_channels, config.num_classes, features, &mut rng)?,
            ),
            (
                WidthPlan::Unetr {
                    embed,
                    layers,
                    heads,
                    mlp_ratio,
                    patch,
                    feature_ch,
                    decoder_ch,
                },
                ArchitectureId::Unetr,
            ) => Net::Unetr(UnetrNet::new(
                config.in_channels,
                config.num_classes,
                *feature_ch,
                *decoder_ch,
                *embed,
                *layers,
                *heads,
                *mlp_ratio,
                *patch,
                &mut rng,
            )?),
            (
                WidthPlan::Swin {
                    embed,
                    depths,
                    heads,
                    window,
                    mlp_ratio,
                    patch,
                },
                ArchitectureId::Swt,
            ) => Net::Swin(SwinUnet::new(
                config.in_channels,
                config.num_classes,
                *embed,
                depths,
                heads,
                *window,
                *mlp_ratio,
                *patch,
                &mut rng,
            )?),
            (
                WidthPlan::MambaUnet {
                    dims,
                    layers_per_stage,
                    expansion,
                    state_dim,
                    dt_rank_divisor,
                    flavor,
                    patch,
                },
                ArchitectureId::SwinUMamba
                | ArchitectureId::SegMamba
                | ArchitectureId::LightUMamba,
            ) => {
                let scan = ScanConfig {
                    state_dim: *state_dim,
                    dt_rank_divisor: *dt_rank_divisor,
                };
                Net::Mamba(MambaUnet::new(
                    config.in_channels,
                    config.num_classes,
                    dims,
                    *layers_per_stage,
                    *expansion,
                    &scan,
                    *flavor,
                    *patch,
                    &mut rng,
                )?)
            }
            (plan, arch) => {
                return Err(Error::InvalidArgument(format!(
                    "width plan {plan:?} does not fit architecture {}",
                    arch.name()
                )))
            }
        }
    };
    Ok(Model {
        config: config.clone(),
        net,
    })
}
