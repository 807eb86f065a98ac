//! The complete stereo network: feature extraction, cost volume,
//! aggregation, and regression.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{build_aggregation, Aggregation};
use crate::backbone::{build_backbone, FeatureExtractor};
use crate::config::{ModelConfig, TapViews};
use crate::costvolume::{AttentionNet, CostVolumeBuilder};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Var};
use crate::regression::{predict, HeadOutput, Mode, RegressionHead};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct StereoNet {
    pub config: ModelConfig,
    pub backbone: FeatureExtractor,
    pub cost_volume: CostVolumeBuilder,
    pub aggregation: Aggregation,
    pub heads: Vec<RegressionHead>,
}

/// Every activation a forward pass exposes for distillation.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub fe_layer3: Var,
    pub fe_layer5: Var,
    pub left_features: Var,
    pub right_features: Var,
    pub cost_volume: Var,
    pub attention: Option<Var>,
    /// Final output of every ED network.
    pub aggregated: Vec<Var>,
    pub bottlenecks: Vec<Var>,
    /// One entry per regressed ED (all in training, the last in inference).
    pub heads: Vec<HeadOutput>,
}

impl ModelOutput {
    pub fn final_disparity(&self) -> Var {
        self.heads.last().unwrap().disparity
    }

    pub fn final_aggregated(&self) -> Var {
        *self.aggregated.last().unwrap()
    }
}

impl StereoNet {
    /// Builds the network, registering parameters under `prefix.` in `store`.
    pub fn build(config: &ModelConfig, store: &mut ParamStore, prefix: &str, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        let backbone = build_backbone(store, &mut rng, &p("backbone"), config.backbone)?;
        let attention = if config.use_attention {
            Some(AttentionNet::new(store, &mut rng, &p("attention"), config.attention_softmax)?)
        } else {
            None
        };
        let aggregation = build_aggregation(
            store,
            &mut rng,
            &p("aggregation"),
            config.correlation_groups,
            config.base_channels,
            config.num_ed_networks,
        )?;
        let heads = (0..config.num_ed_networks)
            .map(|i| {
                RegressionHead::new(
                    store,
                    &mut rng,
                    &p(&format!("head{}", i + 1)),
                    config.base_channels,
                    config.negate_cost,
                    config.upsample_before_head,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StereoNet {
            config: config.clone(),
            backbone,
            cost_volume: CostVolumeBuilder {
                groups: config.correlation_groups,
                max_disparity: config.max_disparity,
                attention,
            },
            aggregation,
            heads,
        })
    }

    /// `left`/`right` are `[B, 3, H, W]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, left: Var, right: Var, mode: Mode) -> Result<ModelOutput> {
        let s = g.shape(left).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("expected [B, 3, H, W] images, got {s:?}")));
        }
        self.config.validate_input(s[2], s[3]).map_err(|e| Error::Shape(e.to_string()))?;
        let (l, r) = self.backbone.extract_features(g, store, left, right)?;
        let (fe_layer3, fe_layer5) = match self.config.tap_views {
            TapViews::Left => (l.layer3, l.layer5),
            TapViews::Both => (g.concat_axis(&[l.layer3, r.layer3], 0), g.concat_axis(&[l.layer5, r.layer5], 0)),
        };
        let cv = self.cost_volume.forward(g, store, l.features, r.features);
        let eds = self.aggregation.aggregate(g, store, cv.volume)?;
        let aggregated: Vec<Var> = eds.iter().map(|e| e.output).collect();
        let heads = predict(g, store, &self.heads, &aggregated, mode)?;
        Ok(ModelOutput {
            fe_layer3,
            fe_layer5,
            left_features: l.features,
            right_features: r.features,
            cost_volume: cv.volume,
            attention: cv.attention,
            bottlenecks: eds.iter().map(|e| e.bottleneck).collect(),
            aggregated,
            heads,
        })
    }

    /// Inference on a batch of images; returns `[B, H, W]` disparities.
    pub fn infer(&self, store: &ParamStore, left: &Tensor, right: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let l = g.input(left.clone());
        let r = g.input(right.clone());
        let out = self.forward(&mut g, store, l, r, Mode::Infer)?;
        Ok(g.value(out.final_disparity()).clone())
    }

    /// Per-module parameter counts (all heads included).
    pub fn param_breakdown(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("backbone", self.backbone.num_params()),
            ("cost_volume", self.cost_volume.attention.as_ref().map_or(0, |a| a.num_params())),
            ("aggregation", self.aggregation.num_params()),
            ("regression", self.heads.iter().map(|h| h.num_params()).sum()),
        ]
    }

    /// Per-module inference MACs for one `h × w` stereo pair.
    pub fn mac_breakdown(&self, h: usize, w: usize) -> Vec<(&'static str, u64)> {
        let dims = [self.config.max_disparity / 4, h.div_ceil(4), w.div_ceil(4)];
        vec![
            ("backbone", 2 * self.backbone.macs(h, w)),
            ("cost_volume", self.cost_volume.attention.as_ref().map_or(0, |a| a.macs(dims[0], dims[1], dims[2]))),
            ("aggregation", self.aggregation.macs(dims)),
            ("regression", self.heads.last().unwrap().macs(self.config.base_channels, dims)),
        ]
    }
}
