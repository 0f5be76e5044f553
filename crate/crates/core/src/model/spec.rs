use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Convolutional feature extractor the classifier head is attached to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    Vgg16,
    Vgg19,
    /// AlexNet convolutional stack (torchvision layout) with the replacement head.
    AlexnetModified,
    /// Small VGG-style stack: one 3x3 conv + 2x2 max-pool per entry. Used for
    /// fixtures and gradient checks; never pretrained.
    Tiny { channels: Vec<usize> },
}

impl BackboneId {
    /// Short label used in file names and report rows.
    pub fn label(&self) -> &'static str {
        match self {
            BackboneId::Vgg16 => "vgg16",
            BackboneId::Vgg19 => "vgg19",
            BackboneId::AlexnetModified => "alexnet_modified",
            BackboneId::Tiny { .. } => "tiny",
        }
    }

    /// Display name matching the comparison table rows.
    pub fn display_name(&self) -> &'static str {
        match self {
            BackboneId::Vgg16 => "VGG16",
            BackboneId::Vgg19 => "VGG19",
            BackboneId::AlexnetModified => "Modified AlexNet",
            BackboneId::Tiny { .. } => "Tiny",
        }
    }

    /// File stem of the pretrained weight file in the weight cache.
    pub fn weight_file_stem(&self) -> &'static str {
        match self {
            BackboneId::Vgg16 => "vgg16",
            BackboneId::Vgg19 => "vgg19",
            BackboneId::AlexnetModified => "alexnet",
            BackboneId::Tiny { .. } => "tiny",
        }
    }

    pub fn plan(&self) -> Vec<BackboneOp> {
        match self {
            BackboneId::Vgg16 => vgg_plan(&[2, 2, 3, 3, 3]),
            BackboneId::Vgg19 => vgg_plan(&[2, 2, 4, 4, 4]),
            BackboneId::AlexnetModified => vec![
                BackboneOp::conv("conv1", 64, 11, 4, 2),
                BackboneOp::pool("pool1", 3, 2),
                BackboneOp::conv("conv2", 192, 5, 1, 2),
                BackboneOp::pool("pool2", 3, 2),
                BackboneOp::conv("conv3", 384, 3, 1, 1),
                BackboneOp::conv("conv4", 256, 3, 1, 1),
                BackboneOp::conv("conv5", 256, 3, 1, 1),
                BackboneOp::pool("pool5", 3, 2),
            ],
            BackboneId::Tiny { channels } => channels
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| {
                    [
                        BackboneOp::conv(format!("conv{}_1", i + 1), c, 3, 1, 1),
                        BackboneOp::pool(format!("pool{}", i + 1), 2, 2),
                    ]
                })
                .collect(),
        }
    }

    /// Number of weight-bearing (convolution) layers in the backbone.
    pub fn conv_layer_count(&self) -> usize {
        self.plan().iter().filter(|op| matches!(op, BackboneOp::Conv { .. })).count()
    }
}

impl fmt::Display for BackboneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for BackboneId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vgg16" => Ok(BackboneId::Vgg16),
            "vgg19" => Ok(BackboneId::Vgg19),
            "alexnet_modified" | "alexnet" => Ok(BackboneId::AlexnetModified),
            other => Err(ModelError::Spec(format!("unknown backbone `{other}`"))),
        }
    }
}

// VGG blocks: 64, 128, 256, 512, 512 channels, each closed by a 2x2 max-pool.
fn vgg_plan(convs_per_block: &[usize]) -> Vec<BackboneOp> {
    const WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
    let mut ops = Vec::new();
    for (b, (&count, &width)) in convs_per_block.iter().zip(WIDTHS.iter()).enumerate() {
        for i in 0..count {
            ops.push(BackboneOp::conv(format!("conv{}_{}", b + 1, i + 1), width, 3, 1, 1));
        }
        ops.push(BackboneOp::pool(format!("pool{}", b + 1), 2, 2));
    }
    ops
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackboneOp {
    Conv { name: String, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Pool { name: String, kernel: usize, stride: usize },
}

impl BackboneOp {
    fn conv(name: impl Into<String>, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        BackboneOp::Conv { name: name.into(), out_channels, kernel, stride, padding }
    }

    fn pool(name: impl Into<String>, kernel: usize, stride: usize) -> Self {
        BackboneOp::Pool { name: name.into(), kernel, stride }
    }
}

/// Which backbone layers are excluded from gradient updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePolicy {
    /// Count of the earliest weight-bearing backbone layers to freeze.
    pub freeze_first_n: usize,
    /// Also freeze every remaining backbone layer (head stays trainable).
    #[serde(default)]
    pub freeze_backbone_rest: bool,
}

impl Default for FreezePolicy {
    fn default() -> Self {
        Self { freeze_first_n: 3, freeze_backbone_rest: false }
    }
}

impl FreezePolicy {
    pub fn none() -> Self {
        Self { freeze_first_n: 0, freeze_backbone_rest: false }
    }

    /// Conventional feature-extractor setup: the whole backbone frozen.
    pub fn whole_backbone() -> Self {
        Self { freeze_first_n: 0, freeze_backbone_rest: true }
    }

    pub fn validate(&self, backbone: &BackboneId) -> Result<(), ModelError> {
        let available = backbone.conv_layer_count();
        if self.freeze_first_n > available {
            return Err(ModelError::Policy {
                requested: self.freeze_first_n,
                available,
                backbone: backbone.label().to_string(),
            });
        }
        Ok(())
    }

    /// Whether the `index`-th backbone conv layer (0-based) is frozen.
    pub fn freezes(&self, index: usize) -> bool {
        index < self.freeze_first_n || self.freeze_backbone_rest
    }
}

fn default_input_size() -> usize {
    224
}

/// Declarative description of a backbone plus classifier head. Missing JSON
/// fields take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub backbone_id: BackboneId,
    pub pretrained: bool,
    pub num_classes: usize,
    pub dropout_rate: f64,
    /// Hidden fully connected widths before the output layer.
    pub head_widths: Vec<usize>,
    pub freeze: FreezePolicy,
    /// Hidden head layers left out of the network (ablation runs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_head_layers: Vec<String>,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    /// Explicit pretrained weight file; otherwise resolved from the weight cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            backbone_id: BackboneId::Vgg19,
            pretrained: true,
            num_classes: 2,
            dropout_rate: 0.5,
            head_widths: vec![4096, 4096],
            freeze: FreezePolicy::default(),
            excluded_head_layers: Vec::new(),
            input_size: default_input_size(),
            weights_path: None,
        }
    }
}

impl ModelSpec {
    pub fn new(backbone_id: BackboneId) -> Self {
        Self { backbone_id, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::Spec(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Spec(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        if self.head_widths.is_empty() {
            return Err(ModelError::Spec("head_widths must name at least one hidden layer".into()));
        }
        if let Some(w) = self.head_widths.iter().find(|&&w| w == 0) {
            return Err(ModelError::Spec(format!("head width {w} is not positive")));
        }
        if let BackboneId::Tiny { channels } = &self.backbone_id {
            if channels.is_empty() || channels.contains(&0) {
                return Err(ModelError::Spec("tiny backbone needs positive channel counts".into()));
            }
            if self.pretrained {
                return Err(ModelError::Spec("the tiny backbone has no pretrained weights".into()));
            }
        }
        let candidates = all_head_layer_names(self.head_widths.len());
        for (i, name) in self.excluded_head_layers.iter().enumerate() {
            if !candidates.contains(name) {
                return Err(ModelError::Spec(format!("`{name}` is not a removable head layer")));
            }
            if self.excluded_head_layers[..i].contains(name) {
                return Err(ModelError::Spec(format!("head layer `{name}` excluded twice")));
            }
        }
        self.freeze.validate(&self.backbone_id)?;
        Ok(())
    }

    /// Hidden head layers that are actually built, as `(name, width)`.
    pub fn active_head_layers(&self) -> Vec<(String, usize)> {
        all_head_layer_names(self.head_widths.len())
            .into_iter()
            .zip(self.head_widths.iter().copied())
            .filter(|(name, _)| !self.excluded_head_layers.contains(name))
            .collect()
    }

    /// Copy of this spec with one more head layer left out.
    pub fn without_head_layer(&self, name: &str) -> Result<ModelSpec, ModelError> {
        let mut spec = self.clone();
        spec.excluded_head_layers.push(name.to_string());
        spec.validate()?;
        Ok(spec)
    }
}

pub(crate) fn all_head_layer_names(count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("fc{i}")).collect()
}

pub const OUTPUT_LAYER_NAME: &str = "output";

/// Head layers added beyond the pretrained backbone that an ablation may
/// remove, in forward order. The output layer is never listed.
pub fn list_removable_head_layers(spec: &ModelSpec) -> Vec<String> {
    spec.active_head_layers().into_iter().map(|(name, _)| name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_conv_counts() {
        assert_eq!(BackboneId::Vgg16.conv_layer_count(), 13);
        assert_eq!(BackboneId::Vgg19.conv_layer_count(), 16);
        assert_eq!(BackboneId::AlexnetModified.conv_layer_count(), 5);
    }

    #[test]
    fn first_three_vgg16_layers() {
        let names: Vec<_> = BackboneId::Vgg16
            .plan()
            .into_iter()
            .filter_map(|op| match op {
                BackboneOp::Conv { name, .. } => Some(name),
                BackboneOp::Pool { .. } => None,
            })
            .take(3)
            .collect();
        assert_eq!(names, ["conv1_1", "conv1_2", "conv2_1"]);
    }

    #[test]
    fn removable_layers_follow_head_widths() {
        let spec = ModelSpec::new(BackboneId::Vgg16);
        assert_eq!(list_removable_head_layers(&spec), ["fc1", "fc2"]);
        let single = ModelSpec { head_widths: vec![256], ..spec.clone() };
        assert_eq!(list_removable_head_layers(&single), ["fc1"]);
        let ablated = spec.without_head_layer("fc1").unwrap();
        assert_eq!(list_removable_head_layers(&ablated), ["fc2"]);
        assert!(spec.without_head_layer("output").is_err());
    }

    #[test]
    fn policy_bounds() {
        let too_many = FreezePolicy { freeze_first_n: 6, freeze_backbone_rest: false };
        assert!(matches!(
            too_many.validate(&BackboneId::AlexnetModified),
            Err(ModelError::Policy { requested: 6, available: 5, .. })
        ));
        assert!(too_many.validate(&BackboneId::Vgg16).is_ok());
    }

    #[test]
    fn spec_rejections() {
        let base = ModelSpec::default();
        assert!(base.validate().is_ok());
        for bad in [
            ModelSpec { head_widths: vec![], ..base.clone() },
            ModelSpec { num_classes: 1, ..base.clone() },
            ModelSpec { dropout_rate: 1.0, ..base.clone() },
            ModelSpec { excluded_head_layers: vec!["fc9".into()], ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(ModelError::Spec(_))), "{bad:?}");
        }
    }

    #[test]
    fn json_shape() {
        let spec = ModelSpec::new(BackboneId::Tiny { channels: vec![4, 8] });
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains(r#""backbone_id":{"tiny":{"channels":[4,8]}}"#), "{text}");
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let vgg: ModelSpec = serde_json::from_str(
            r#"{"backbone_id":"vgg16","pretrained":false,"num_classes":2,"dropout_rate":0.5,
                "head_widths":[4096,4096],"freeze":{"freeze_first_n":3}}"#,
        )
        .unwrap();
        assert_eq!(vgg.input_size, 224);
        assert!(!vgg.freeze.freeze_backbone_rest);
    }
}
