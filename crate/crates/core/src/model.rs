//! Encoder-decoder detector and the five ways of attaching the contour task.
//!
//! | variant    | contour task                                                        |
//! |------------|---------------------------------------------------------------------|
//! | `baseline` | none                                                                |
//! | `aux1`     | separate decoder on the shared encoder                              |
//! | `aux2`     | extra output channel on the shared encoder and decoder              |
//! | `cascade1` | standalone network; its map becomes a 4th input channel of a second, unshared detection network |
//! | `cascade2` | shared trunk; the map is concatenated with the last decoder features, followed by three 3x3 convolutions of depth 32 |

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{Grads, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Default width of the three convolutions that follow the late contour merge.
pub const MERGE_DEPTH: usize = 32;
/// Input pixels per output pixel.
pub const OUTPUT_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Baseline,
    Aux1,
    Aux2,
    Cascade1,
    Cascade2,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Baseline,
        ModelVariant::Aux1,
        ModelVariant::Aux2,
        ModelVariant::Cascade1,
        ModelVariant::Cascade2,
    ];

    pub fn has_contour(self) -> bool {
        self != ModelVariant::Baseline
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Baseline => "baseline",
            ModelVariant::Aux1 => "aux1",
            ModelVariant::Aux2 => "aux2",
            ModelVariant::Cascade1 => "cascade1",
            ModelVariant::Cascade2 => "cascade2",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Width of each stride-2 encoder stage.
    pub stage_channels: Vec<usize>,
    /// Width of each decoder merge, deepest first; must be two shorter than the encoder.
    pub decoder_channels: Vec<usize>,
    pub input_size: usize,
    /// Width of the convolutions after the late contour merge (cascade with late merge only).
    pub merge_channels: usize,
    /// Identifier of pretrained encoder weights; none are bundled.
    pub pretrained_id: Option<String>,
    /// Subtracted from `[0, 1]`-scaled RGB channels.
    pub pixel_mean: [f64; 3],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_channels: vec![16, 32, 64, 128, 256],
            decoder_channels: vec![128, 64, 32],
            input_size: 256,
            merge_channels: MERGE_DEPTH,
            pretrained_id: None,
            pixel_mean: [0.485, 0.456, 0.406],
        }
    }
}

impl BackboneConfig {
    /// Input side lengths must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stage_channels.len();
        if s < 3 {
            return Err(Error::Config(
                "backbone needs at least 3 encoder stages".into(),
            ));
        }
        if self.decoder_channels.len() + 2 != s {
            return Err(Error::Config(format!(
                "{} encoder stages need {} decoder widths for output stride {OUTPUT_STRIDE}, got {}",
                s,
                s - 2,
                self.decoder_channels.len()
            )));
        }
        if self.merge_channels == 0
            || self
                .stage_channels
                .iter()
                .chain(&self.decoder_channels)
                .any(|&c| c == 0)
        {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        self.check_input_size(self.input_size, self.input_size)
    }

    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "input size {h}x{w} is not a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    fn feature_width(&self) -> usize {
        *self.decoder_channels.last().expect("validated")
    }
}

/// Which task a parameter subsystem serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskOwner {
    Shared,
    Contour,
    Detection,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

#[derive(Debug, Clone)]
struct Encoder {
    stages: Vec<[ConvLayer; 2]>,
}

#[derive(Debug, Clone)]
struct Decoder {
    merges: Vec<[ConvLayer; 2]>,
    out: ConvLayer,
}

#[derive(Debug, Clone)]
enum Layout {
    Baseline {
        enc: Encoder,
        dec: Decoder,
        det: ConvLayer,
    },
    Aux1 {
        enc: Encoder,
        dec: Decoder,
        contour_dec: Decoder,
        det: ConvLayer,
        contour: ConvLayer,
    },
    Aux2 {
        enc: Encoder,
        dec: Decoder,
        det: ConvLayer,
        contour: ConvLayer,
    },
    Cascade1 {
        c_enc: Encoder,
        c_dec: Decoder,
        contour: ConvLayer,
        d_enc: Encoder,
        d_dec: Decoder,
        det: ConvLayer,
    },
    Cascade2 {
        enc: Encoder,
        dec: Decoder,
        contour: ConvLayer,
        merge: [ConvLayer; 3],
        det: ConvLayer,
    },
}

struct Builder<'a, F> {
    store: &'a mut ParamStore<F>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Builder<'_, F> {
    /// He-normal weights for hidden layers, `1/fan_in` variance for heads.
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        group: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        head: bool,
    ) -> ConvLayer {
        let fan_in = (c_in * k * k) as f64;
        let std = if head {
            (1.0 / fan_in).sqrt()
        } else {
            (2.0 / fan_in).sqrt()
        };
        let dist = Normal::new(0.0, std).expect("valid std");
        let data: Vec<F> = (0..c_out * c_in * k * k)
            .map(|_| F::lit(dist.sample(&mut self.rng)))
            .collect();
        let w = self.store.add(
            format!("{name}.weight"),
            group,
            Tensor::from_vec([c_out, c_in, k, k], data),
        );
        let b = self.store.add(
            format!("{name}.bias"),
            group,
            Tensor::zeros([c_out, 1, 1, 1]),
        );
        ConvLayer { w, b, stride }
    }

    fn encoder(&mut self, group: &str, c_in: usize, cfg: &BackboneConfig) -> Encoder {
        let mut prev = c_in;
        let stages = cfg
            .stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let a = self.conv(
                    &format!("{group}.stage{i}.down"),
                    group,
                    prev,
                    c,
                    3,
                    2,
                    false,
                );
                let b = self.conv(&format!("{group}.stage{i}.conv"), group, c, c, 3, 1, false);
                prev = c;
                [a, b]
            })
            .collect();
        Encoder { stages }
    }

    fn decoder(&mut self, group: &str, cfg: &BackboneConfig) -> Decoder {
        let s = cfg.stage_channels.len();
        let mut prev = cfg.stage_channels[s - 1];
        let merges = cfg
            .decoder_channels
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let skip = cfg.stage_channels[s - 2 - j];
                let a = self.conv(
                    &format!("{group}.merge{j}.reduce"),
                    group,
                    prev + skip,
                    c,
                    1,
                    1,
                    false,
                );
                let b = self.conv(&format!("{group}.merge{j}.conv"), group, c, c, 3, 1, false);
                prev = c;
                [a, b]
            })
            .collect();
        let out = self.conv(&format!("{group}.out"), group, prev, prev, 3, 1, false);
        Decoder { merges, out }
    }
}

/// Post-activation outputs at 1/4 input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs<F> {
    /// `N x 1 x h x w`, absent for the baseline.
    pub contour: Option<Tensor<F>>,
    /// `N x 1 x h x w`.
    pub score: Tensor<F>,
    /// `N x 4 x h x w` (top, right, bottom, left) in output pixels.
    pub distances: Tensor<F>,
    /// `N x 1 x h x w` radians.
    pub angle: Tensor<F>,
}

/// A recorded forward pass; keeps the graph for backpropagation.
pub struct ForwardPass<'a, F> {
    pub graph: Graph<'a, F>,
    pub score: NodeId,
    pub distances: NodeId,
    pub angle: NodeId,
    pub contour: Option<NodeId>,
}

impl<F: Scalar> ForwardPass<'_, F> {
    pub fn outputs(&self) -> NetworkOutputs<F> {
        NetworkOutputs {
            contour: self.contour.map(|c| self.graph.value(c).clone()),
            score: self.graph.value(self.score).clone(),
            distances: self.graph.value(self.distances).clone(),
            angle: self.graph.value(self.angle).clone(),
        }
    }

    /// Backpropagates gradients given with respect to the activated outputs.
    pub fn backward(
        &self,
        d_score: Tensor<F>,
        d_distances: Tensor<F>,
        d_angle: Tensor<F>,
        d_contour: Option<Tensor<F>>,
    ) -> Grads<F> {
        let mut seeds = vec![
            (self.score, d_score),
            (self.distances, d_distances),
            (self.angle, d_angle),
        ];
        if let (Some(id), Some(g)) = (self.contour, d_contour) {
            seeds.push((id, g));
        }
        self.graph.backward(seeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemReport {
    pub name: String,
    pub params: usize,
    pub owner: TaskOwner,
}

/// Parameter counts per subsystem and which of them both tasks share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingReport {
    pub variant: ModelVariant,
    pub subsystems: Vec<SubsystemReport>,
    pub shared: Vec<String>,
    pub shared_params: usize,
    pub contour_params: usize,
    pub detection_params: usize,
    pub total_params: usize,
}

#[derive(Debug, Clone)]
pub struct Network<F> {
    pub variant: ModelVariant,
    pub backbone: BackboneConfig,
    pub params: ParamStore<F>,
    /// Detach the contour map where the detection path consumes it.
    pub stop_contour_grad: bool,
    owners: Vec<(String, TaskOwner)>,
    layout: Layout,
}

/// Builds a freshly initialized network; identical seeds give identical weights.
pub fn build_model<F: Scalar>(
    variant: ModelVariant,
    backbone: &BackboneConfig,
    seed: u64,
) -> Result<Network<F>> {
    backbone.validate()?;
    let mut store = ParamStore::new();
    let mut b = Builder {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let feat = backbone.feature_width();
    let mc = backbone.merge_channels;
    use TaskOwner::*;
    let (layout, owners): (Layout, Vec<(&str, TaskOwner)>) = match variant {
        ModelVariant::Baseline => {
            let enc = b.encoder("encoder", 3, backbone);
            let dec = b.decoder("decoder", backbone);
            let det = b.conv("det_head", "det_head", feat, 6, 1, 1, true);
            (
                Layout::Baseline { enc, dec, det },
                vec![
                    ("encoder", Detection),
                    ("decoder", Detection),
                    ("det_head", Detection),
                ],
            )
        }
        ModelVariant::Aux1 => {
            let enc = b.encoder("encoder", 3, backbone);
            let dec = b.decoder("decoder", backbone);
            let contour_dec = b.decoder("contour_decoder", backbone);
            let det = b.conv("det_head", "det_head", feat, 6, 1, 1, true);
            let contour = b.conv("contour_head", "contour_head", feat, 1, 1, 1, true);
            (
                Layout::Aux1 {
                    enc,
                    dec,
                    contour_dec,
                    det,
                    contour,
                },
                vec![
                    ("encoder", Shared),
                    ("decoder", Detection),
                    ("contour_decoder", Contour),
                    ("det_head", Detection),
                    ("contour_head", Contour),
                ],
            )
        }
        ModelVariant::Aux2 => {
            let enc = b.encoder("encoder", 3, backbone);
            let dec = b.decoder("decoder", backbone);
            let det = b.conv("det_head", "det_head", feat, 6, 1, 1, true);
            let contour = b.conv("contour_head", "contour_head", feat, 1, 1, 1, true);
            (
                Layout::Aux2 {
                    enc,
                    dec,
                    det,
                    contour,
                },
                vec![
                    ("encoder", Shared),
                    ("decoder", Shared),
                    ("det_head", Detection),
                    ("contour_head", Contour),
                ],
            )
        }
        ModelVariant::Cascade1 => {
            let c_enc = b.encoder("contour_encoder", 3, backbone);
            let c_dec = b.decoder("contour_decoder", backbone);
            let contour = b.conv("contour_head", "contour_head", feat, 1, 1, 1, true);
            let d_enc = b.encoder("det_encoder", 4, backbone);
            let d_dec = b.decoder("det_decoder", backbone);
            let det = b.conv("det_head", "det_head", feat, 6, 1, 1, true);
            (
                Layout::Cascade1 {
                    c_enc,
                    c_dec,
                    contour,
                    d_enc,
                    d_dec,
                    det,
                },
                vec![
                    ("contour_encoder", Contour),
                    ("contour_decoder", Contour),
                    ("contour_head", Contour),
                    ("det_encoder", Detection),
                    ("det_decoder", Detection),
                    ("det_head", Detection),
                ],
            )
        }
        ModelVariant::Cascade2 => {
            let enc = b.encoder("encoder", 3, backbone);
            let dec = b.decoder("decoder", backbone);
            let contour = b.conv("contour_head", "contour_head", feat, 1, 1, 1, true);
            let merge = [
                b.conv("merge.0", "merge", feat + 1, mc, 3, 1, false),
                b.conv("merge.1", "merge", mc, mc, 3, 1, false),
                b.conv("merge.2", "merge", mc, mc, 3, 1, false),
            ];
            let det = b.conv("det_head", "det_head", mc, 6, 1, 1, true);
            (
                Layout::Cascade2 {
                    enc,
                    dec,
                    contour,
                    merge,
                    det,
                },
                vec![
                    ("encoder", Shared),
                    ("decoder", Shared),
                    ("contour_head", Contour),
                    ("merge", Detection),
                    ("det_head", Detection),
                ],
            )
        }
    };
    Ok(Network {
        variant,
        backbone: backbone.clone(),
        params: store,
        stop_contour_grad: false,
        owners: owners
            .into_iter()
            .map(|(n, o)| (n.to_string(), o))
            .collect(),
        layout,
    })
}

fn conv_relu<F: Scalar>(g: &mut Graph<'_, F>, x: NodeId, l: &ConvLayer, label: &str) -> NodeId {
    let y = g.conv(x, l.w, l.b, l.stride, label);
    g.relu(y)
}

fn run_encoder<F: Scalar>(
    g: &mut Graph<'_, F>,
    x: NodeId,
    enc: &Encoder,
    tag: &str,
) -> Vec<NodeId> {
    let mut feats = Vec::with_capacity(enc.stages.len());
    let mut cur = x;
    for (i, [down, conv]) in enc.stages.iter().enumerate() {
        cur = conv_relu(g, cur, down, &format!("{tag}.stage{i}.down"));
        cur = conv_relu(g, cur, conv, &format!("{tag}.stage{i}.conv"));
        feats.push(cur);
    }
    feats
}

fn run_decoder<F: Scalar>(
    g: &mut Graph<'_, F>,
    feats: &[NodeId],
    dec: &Decoder,
    tag: &str,
) -> NodeId {
    let s = feats.len();
    let mut cur = feats[s - 1];
    for (j, [reduce, conv]) in dec.merges.iter().enumerate() {
        let up = g.upsample(cur, 2);
        let cat = g.concat(&[up, feats[s - 2 - j]], &format!("{tag}.merge{j}.cat"));
        cur = conv_relu(g, cat, reduce, &format!("{tag}.merge{j}.reduce"));
        cur = conv_relu(g, cur, conv, &format!("{tag}.merge{j}.conv"));
    }
    conv_relu(g, cur, &dec.out, &format!("{tag}.out"))
}

impl<F: Scalar> Network<F> {
    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    fn contour_head(&self, g: &mut Graph<'_, F>, feat: NodeId, l: &ConvLayer) -> NodeId {
        let raw = g.conv(feat, l.w, l.b, 1, "contour_head");
        g.sigmoid(raw)
    }

    /// Splits the 6-channel detection head into activated outputs.
    fn det_head(
        &self,
        g: &mut Graph<'_, F>,
        feat: NodeId,
        l: &ConvLayer,
    ) -> (NodeId, NodeId, NodeId) {
        let raw = g.conv(feat, l.w, l.b, 1, "det_head");
        let s = g.slice(raw, 0, 1, "det_head.score");
        let score = g.sigmoid(s);
        let d = g.slice(raw, 1, 4, "det_head.distances");
        let d = g.sigmoid(d);
        let distances = g.affine(d, self.distance_scale(), 0.0);
        let a = g.slice(raw, 5, 1, "det_head.angle");
        let a = g.sigmoid(a);
        let angle = g.affine(a, std::f64::consts::PI, -std::f64::consts::FRAC_PI_4);
        (score, distances, angle)
    }

    /// Upper bound of the distance outputs, in output pixels.
    pub fn distance_scale(&self) -> f64 {
        (self.backbone.input_size / OUTPUT_STRIDE) as f64
    }

    fn detach(&self, g: &mut Graph<'_, F>, x: NodeId) -> NodeId {
        if self.stop_contour_grad {
            g.stop_grad(x)
        } else {
            x
        }
    }

    /// Records a forward pass over an `N x 3 x H x W` normalized batch.
    pub fn forward_graph(&self, input: Tensor<F>) -> Result<ForwardPass<'_, F>> {
        if input.c() != 3 {
            return Err(Error::Config(format!(
                "expected 3 input channels, got {}",
                input.c()
            )));
        }
        self.backbone.check_input_size(input.h(), input.w())?;
        if !input.is_finite() {
            return Err(Error::NonFinite {
                what: "value in the input batch".into(),
            });
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(input, "image");
        let (contour, (score, distances, angle)) = match &self.layout {
            Layout::Baseline { enc, dec, det } => {
                let feats = run_encoder(&mut g, x, enc, "encoder");
                let f = run_decoder(&mut g, &feats, dec, "decoder");
                (None, self.det_head(&mut g, f, det))
            }
            Layout::Aux1 {
                enc,
                dec,
                contour_dec,
                det,
                contour,
            } => {
                let feats = run_encoder(&mut g, x, enc, "encoder");
                let fc = run_decoder(&mut g, &feats, contour_dec, "contour_decoder");
                let c = self.contour_head(&mut g, fc, contour);
                let f = run_decoder(&mut g, &feats, dec, "decoder");
                (Some(c), self.det_head(&mut g, f, det))
            }
            Layout::Aux2 {
                enc,
                dec,
                det,
                contour,
            } => {
                let feats = run_encoder(&mut g, x, enc, "encoder");
                let f = run_decoder(&mut g, &feats, dec, "decoder");
                let c = self.contour_head(&mut g, f, contour);
                (Some(c), self.det_head(&mut g, f, det))
            }
            Layout::Cascade1 {
                c_enc,
                c_dec,
                contour,
                d_enc,
                d_dec,
                det,
            } => {
                let feats = run_encoder(&mut g, x, c_enc, "contour_encoder");
                let fc = run_decoder(&mut g, &feats, c_dec, "contour_decoder");
                let c = self.contour_head(&mut g, fc, contour);
                let cd = self.detach(&mut g, c);
                let full = g.upsample(cd, OUTPUT_STRIDE);
                let x4 = g.concat(&[x, full], "early_merge");
                let dfeats = run_encoder(&mut g, x4, d_enc, "det_encoder");
                let f = run_decoder(&mut g, &dfeats, d_dec, "det_decoder");
                (Some(c), self.det_head(&mut g, f, det))
            }
            Layout::Cascade2 {
                enc,
                dec,
                contour,
                merge,
                det,
            } => {
                let feats = run_encoder(&mut g, x, enc, "encoder");
                let f = run_decoder(&mut g, &feats, dec, "decoder");
                let c = self.contour_head(&mut g, f, contour);
                let cd = self.detach(&mut g, c);
                let mut m = g.concat(&[f, cd], "late_merge");
                for (i, l) in merge.iter().enumerate() {
                    m = conv_relu(&mut g, m, l, &format!("merge.{i}"));
                }
                (Some(c), self.det_head(&mut g, m, det))
            }
        };
        let pass = ForwardPass {
            graph: g,
            score,
            distances,
            angle,
            contour,
        };
        let outs = [Some(score), Some(distances), Some(angle), contour];
        if outs
            .iter()
            .flatten()
            .any(|&id| !pass.graph.value(id).is_finite())
        {
            let layer = pass
                .graph
                .first_non_finite()
                .unwrap_or("unknown")
                .to_string();
            return Err(Error::NonFinite {
                what: format!("activation in layer `{layer}`"),
            });
        }
        Ok(pass)
    }

    pub fn forward(&self, input: Tensor<F>) -> Result<NetworkOutputs<F>> {
        Ok(self.forward_graph(input)?.outputs())
    }

    /// Parameter counts per subsystem and the subset both tasks use.
    pub fn sharing_report(&self) -> SharingReport {
        let mut subsystems = Vec::new();
        for (name, owner) in &self.owners {
            let params = self
                .params
                .entries()
                .iter()
                .filter(|e| &e.group == name)
                .map(|e| e.value.len())
                .sum();
            subsystems.push(SubsystemReport {
                name: name.clone(),
                params,
                owner: *owner,
            });
        }
        let sum = |o: TaskOwner| {
            subsystems
                .iter()
                .filter(|s| s.owner == o)
                .map(|s| s.params)
                .sum()
        };
        SharingReport {
            variant: self.variant,
            shared: subsystems
                .iter()
                .filter(|s| s.owner == TaskOwner::Shared)
                .map(|s| s.name.clone())
                .collect(),
            shared_params: sum(TaskOwner::Shared),
            contour_params: sum(TaskOwner::Contour),
            detection_params: sum(TaskOwner::Detection),
            total_params: self.num_params(),
            subsystems,
        }
    }

    /// Names of the parameter groups belonging to the contour task.
    pub fn contour_groups(&self) -> Vec<&str> {
        self.owners
            .iter()
            .filter(|(_, o)| *o == TaskOwner::Contour)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Sharing report for a built network.
pub fn count_shared_parameters<F: Scalar>(net: &Network<F>) -> SharingReport {
    net.sharing_report()
}

/// Packs RGB images into a normalized `N x 3 x H x W` tensor.
pub fn images_to_tensor<F: Scalar>(
    images: &[&RgbImage],
    pixel_mean: [f64; 3],
) -> Result<Tensor<F>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("empty image batch".into()))?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut t = Tensor::zeros([images.len(), 3, h, w]);
    let scale = F::lit(1.0 / 255.0);
    let mean = pixel_mean.map(F::lit);
    for (n, img) in images.iter().enumerate() {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Data("images in a batch must share one size".into()));
        }
        for (c, &m) in mean.iter().enumerate() {
            let plane = t.plane_mut(n, c);
            for (dst, px) in plane.iter_mut().zip(img.pixels()) {
                *dst = F::from_u8(px.0[c]).unwrap_or_else(F::zero) * scale - m;
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            stage_channels: vec![4, 4, 8, 8, 8],
            decoder_channels: vec![8, 4, 4],
            input_size: 64,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("cascade3".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = tiny();
        assert!(build_model::<f32>(
            ModelVariant::Baseline,
            &BackboneConfig {
                input_size: 48,
                ..cfg.clone()
            },
            0
        )
        .is_err());
        assert!(build_model::<f32>(
            ModelVariant::Baseline,
            &BackboneConfig {
                decoder_channels: vec![4],
                ..cfg.clone()
            },
            0
        )
        .is_err());
        let net = build_model::<f32>(ModelVariant::Baseline, &cfg, 0).unwrap();
        assert!(net.forward(Tensor::zeros([1, 3, 40, 64])).is_err());
    }

    #[test]
    fn output_ranges_on_zero_image() {
        for v in ModelVariant::ALL {
            let net = build_model::<f32>(v, &tiny(), 3).unwrap();
            let out = net.forward(Tensor::zeros([2, 3, 64, 64])).unwrap();
            assert_eq!(out.score.shape, [2, 1, 16, 16]);
            assert_eq!(out.distances.shape, [2, 4, 16, 16]);
            assert_eq!(out.contour.is_some(), v.has_contour());
            assert!(out.score.data.iter().all(|&s| s > 0.0 && s < 1.0));
            assert!(out.distances.data.iter().all(|&d| d >= 0.0));
            let (lo, hi) = (
                -std::f32::consts::FRAC_PI_4,
                3.0 * std::f32::consts::FRAC_PI_4,
            );
            assert!(out.angle.data.iter().all(|&a| a >= lo && a <= hi));
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_model::<f32>(ModelVariant::Cascade2, &tiny(), 11).unwrap();
        let b = build_model::<f32>(ModelVariant::Cascade2, &tiny(), 11).unwrap();
        assert_eq!(a.params, b.params);
        let c = build_model::<f32>(ModelVariant::Cascade2, &tiny(), 12).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn nonfinite_values_are_attributed() {
        let mut net = build_model::<f32>(ModelVariant::Baseline, &tiny(), 0).unwrap();
        let mut x = Tensor::zeros([1, 3, 64, 64]);
        x.data[5] = f32::NAN;
        assert!(net
            .forward(x)
            .unwrap_err()
            .to_string()
            .contains("input batch"));
        let id = net
            .params
            .entries()
            .iter()
            .position(|e| e.name == "encoder.stage2.conv.weight")
            .unwrap();
        net.params.entries_mut()[id].value.data[0] = f32::INFINITY;
        let err = net.forward(Tensor::zeros([1, 3, 64, 64])).unwrap_err();
        assert!(err.to_string().contains("`encoder.stage2.conv`"), "{err}");
    }

    fn conv_params(c_in: usize, c_out: usize, k: usize) -> usize {
        c_out * c_in * k * k + c_out
    }

    #[test]
    fn cascade2_parameter_arithmetic() {
        let cfg = tiny();
        let aux2 = build_model::<f32>(ModelVariant::Aux2, &cfg, 0)
            .unwrap()
            .num_params();
        let c2 = build_model::<f32>(ModelVariant::Cascade2, &cfg, 0)
            .unwrap()
            .num_params();
        let feat = *cfg.decoder_channels.last().unwrap();
        let mc = cfg.merge_channels;
        let merge = conv_params(feat + 1, mc, 3) + 2 * conv_params(mc, mc, 3);
        let head_delta = conv_params(mc, 6, 1) as isize - conv_params(feat, 6, 1) as isize;
        assert_eq!(c2 as isize, aux2 as isize + merge as isize + head_delta);
    }

    #[test]
    fn output_shapes_for_legal_sizes() {
        for v in ModelVariant::ALL {
            let net = build_model::<f32>(v, &tiny(), 0).unwrap();
            for size in [128, 256] {
                let out = net.forward(Tensor::zeros([1, 3, size, size / 2])).unwrap();
                assert_eq!(out.score.shape, [1, 1, size / 4, size / 8]);
                assert_eq!(out.angle.shape, [1, 1, size / 4, size / 8]);
                if let Some(c) = out.contour {
                    assert_eq!(c.shape, [1, 1, size / 4, size / 8]);
                }
            }
        }
    }

    fn pseudo_image(n: usize, size: usize, seed: f32) -> Tensor<f32> {
        let len = n * 3 * size * size;
        Tensor::from_vec(
            [n, 3, size, size],
            (0..len)
                .map(|i| ((i as f32 * 0.37 + seed).sin()) * 0.5)
                .collect(),
        )
    }

    #[test]
    fn duplicated_batch_items_agree() {
        for v in ModelVariant::ALL {
            let net = build_model::<f32>(v, &tiny(), 1).unwrap();
            let one = pseudo_image(1, 64, 0.0);
            let two = Tensor::stack(&[one.clone(), one.clone()]);
            let a = net.forward(one).unwrap();
            let b = net.forward(two).unwrap();
            for (t1, t2) in [
                (&a.score, &b.score),
                (&a.distances, &b.distances),
                (&a.angle, &b.angle),
            ] {
                for k in 0..2 {
                    for (x, y) in t1.item(0).iter().zip(t2.item(k)) {
                        assert!((x - y).abs() <= 1e-5);
                    }
                }
            }
        }
    }

    fn perturb_groups(net: &mut Network<f32>, groups: &[&str]) {
        for e in net.params.entries_mut() {
            if groups.contains(&e.group.as_str()) {
                e.value.data.iter_mut().for_each(|w| *w += 0.3);
            }
        }
    }

    #[test]
    fn cascade_detection_depends_on_contour_branch() {
        for v in [ModelVariant::Cascade1, ModelVariant::Cascade2] {
            let mut net = build_model::<f32>(v, &tiny(), 2).unwrap();
            let x = pseudo_image(1, 64, 1.0);
            let before = net.forward(x.clone()).unwrap();
            perturb_groups(&mut net, &["contour_head"]);
            let after = net.forward(x).unwrap();
            assert_ne!(before.score, after.score, "{v}");
            assert_ne!(before.distances, after.distances, "{v}");
        }
        for v in [ModelVariant::Aux1, ModelVariant::Aux2] {
            let mut net = build_model::<f32>(v, &tiny(), 2).unwrap();
            let x = pseudo_image(1, 64, 1.0);
            let before = net.forward(x.clone()).unwrap();
            perturb_groups(&mut net, &["contour_head", "contour_decoder"]);
            let after = net.forward(x).unwrap();
            assert_eq!(before.score, after.score, "{v}");
            assert_ne!(before.contour, after.contour, "{v}");
        }
    }

    fn contour_grad_norm(net: &Network<f32>, contour_seed: bool) -> f32 {
        let x = pseudo_image(1, 64, 2.0);
        let pass = net.forward_graph(x).unwrap();
        let out = pass.outputs();
        let ones = |t: &Tensor<f32>| Tensor::from_vec(t.shape, vec![1.0; t.len()]);
        let dc = out.contour.as_ref().filter(|_| contour_seed).map(ones);
        let grads = pass.backward(ones(&out.score), ones(&out.distances), ones(&out.angle), dc);
        net.params
            .entries()
            .iter()
            .zip(&grads.tensors)
            .filter(|(e, _)| e.group == "contour_head")
            .map(|(_, g)| g.sum_sq())
            .sum()
    }

    #[test]
    fn cascade2_contour_head_learns_from_detection() {
        let mut net = build_model::<f32>(ModelVariant::Cascade2, &tiny(), 4).unwrap();
        assert!(contour_grad_norm(&net, true) > 0.0);
        assert!(contour_grad_norm(&net, false) > 0.0);
        net.stop_contour_grad = true;
        assert_eq!(contour_grad_norm(&net, false), 0.0);
        let aux2 = build_model::<f32>(ModelVariant::Aux2, &tiny(), 4).unwrap();
        assert_eq!(contour_grad_norm(&aux2, false), 0.0);
    }

    #[test]
    fn sharing_reports() {
        let report = |v| build_model::<f32>(v, &tiny(), 0).unwrap().sharing_report();
        assert_eq!(
            report(ModelVariant::Aux1).shared,
            vec!["encoder".to_string()]
        );
        assert_eq!(
            report(ModelVariant::Aux2).shared,
            vec!["encoder".to_string(), "decoder".to_string()]
        );
        let c1 = report(ModelVariant::Cascade1);
        assert!(c1.shared.is_empty());
        assert_eq!(c1.shared_params, 0);
        let b = report(ModelVariant::Baseline);
        assert_eq!(b.contour_params, 0);
        assert!(b.subsystems.iter().all(|s| s.owner != TaskOwner::Contour));
        for v in ModelVariant::ALL {
            let r = report(v);
            assert_eq!(
                r.shared_params + r.contour_params + r.detection_params,
                r.total_params
            );
        }
    }
}
