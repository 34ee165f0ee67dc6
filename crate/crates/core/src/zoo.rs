//! Model builders: the Pix2Pix U-Net generator (and its deconvolution-substituted
//! variants) and opaque layer chains for profiled workloads.

use serde::{Deserialize, Serialize};

use crate::graph_ir::{Activation, ConvParams, DataType, LayerOp, LayerSpec, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pix2PixVariant {
    Original,
    CropSubstituted,
    ConvSubstituted,
}

impl Pix2PixVariant {
    pub const ALL: [Pix2PixVariant; 3] = [
        Pix2PixVariant::Original,
        Pix2PixVariant::CropSubstituted,
        Pix2PixVariant::ConvSubstituted,
    ];
}

const ENCODER_FILTERS: [usize; 8] = [64, 128, 256, 512, 512, 512, 512, 512];
const DECODER_FILTERS: [usize; 7] = [512, 512, 512, 512, 256, 128, 64];
const IMAGE_CHANNELS: usize = 3;
const DTYPE: DataType = DataType::Fp32;

struct ChainBuilder {
    layers: Vec<LayerSpec>,
    edges: Vec<(String, String)>,
}

impl ChainBuilder {
    fn push(&mut self, id: String, op: LayerOp, from: &[&str]) -> String {
        for src in from {
            self.edges.push((src.to_string(), id.clone()));
        }
        self.layers.push(LayerSpec::new(id.clone(), op, DTYPE));
        id
    }

    /// Upsampling deconvolution in the requested variant form; returns the id
    /// of the layer that carries its output.
    fn upsample(&mut self, prefix: &str, params: ConvParams, from: &str, variant: Pix2PixVariant) -> String {
        let deconv_id = format!("{prefix}.deconv");
        match variant {
            Pix2PixVariant::Original => self.push(deconv_id, LayerOp::Deconv(params), &[from]),
            Pix2PixVariant::CropSubstituted => {
                let d = self.push(deconv_id, LayerOp::Deconv(ConvParams { padding: 0, ..params }), &[from]);
                self.push(format!("{d}.crop"), LayerOp::Crop { border: 1 }, &[&d])
            }
            Pix2PixVariant::ConvSubstituted => {
                let d = self.push(deconv_id, LayerOp::Deconv(ConvParams { padding: 0, ..params }), &[from]);
                let c = params.out_channels;
                self.push(
                    format!("{d}.conv"),
                    LayerOp::Conv(ConvParams::square(3, 1, 0, c, c)),
                    &[&d],
                )
            }
        }
    }
}

/// U-Net generator for 256x256x3 images: eight downsampling blocks, seven
/// upsampling blocks with skip concatenation, and a final upsampling to the
/// image channels.
pub fn build_pix2pix_generator(variant: Pix2PixVariant) -> ModelGraph {
    let mut b = ChainBuilder {
        layers: Vec::new(),
        edges: Vec::new(),
    };
    let first = "down1.conv".to_string();

    let mut skips = Vec::with_capacity(ENCODER_FILTERS.len());
    let mut prev: Option<String> = None;
    let mut channels = IMAGE_CHANNELS;
    for (i, &filters) in ENCODER_FILTERS.iter().enumerate() {
        let p = format!("down{}", i + 1);
        let from: Vec<&str> = prev.as_deref().into_iter().collect();
        let mut x = b.push(
            format!("{p}.conv"),
            LayerOp::Conv(ConvParams::square(4, 2, 1, channels, filters)),
            &from,
        );
        if i > 0 {
            x = b.push(format!("{p}.bn"), LayerOp::BatchNorm { channels: filters }, &[&x]);
        }
        x = b.push(format!("{p}.lrelu"), LayerOp::Activation(Activation::LeakyReLU), &[&x]);
        channels = filters;
        skips.push(x.clone());
        prev = Some(x);
    }

    // Bottleneck output is not a skip source.
    skips.pop();
    let mut x = prev.expect("encoder is non-empty");
    for (i, &filters) in DECODER_FILTERS.iter().enumerate() {
        let p = format!("up{}", i + 1);
        let y = b.upsample(&p, ConvParams::square(4, 2, 1, channels, filters), &x, variant);
        let mut y = b.push(format!("{p}.bn"), LayerOp::BatchNorm { channels: filters }, &[&y]);
        if i < 3 {
            y = b.push(format!("{p}.dropout"), LayerOp::Dropout, &[&y]);
        }
        y = b.push(format!("{p}.relu"), LayerOp::Activation(Activation::ReLU), &[&y]);
        let skip = skips.pop().expect("one skip per decoder block");
        x = b.push(format!("{p}.concat"), LayerOp::Concat, &[&y, &skip]);
        channels = filters * 2;
    }

    // The output projection keeps its bias; every other convolution is bias-free.
    let out = ConvParams::square(4, 2, 1, channels, IMAGE_CHANNELS).with_bias(true);
    let y = b.upsample("out", out, &x, variant);
    let tanh = b.push("out.tanh".into(), LayerOp::Activation(Activation::Tanh), &[&y]);

    let name = match variant {
        Pix2PixVariant::Original => "pix2pix",
        Pix2PixVariant::CropSubstituted => "pix2pix-crop",
        Pix2PixVariant::ConvSubstituted => "pix2pix-conv",
    };
    ModelGraph::new(name, b.layers, b.edges, vec![first], vec![tanh]).expect("generator graph is well-formed")
}

/// Linear chain of `layer_count` shape-preserving opaque layers.
pub fn build_chain(name: &str, layer_count: usize) -> ModelGraph {
    assert!(layer_count >= 1, "chain needs at least one layer");
    let width = (layer_count - 1).to_string().len();
    let ids: Vec<String> = (0..layer_count).map(|i| format!("{name}.{i:0width$}")).collect();
    let layers = ids
        .iter()
        .map(|id| LayerSpec::new(id.clone(), LayerOp::Activation(Activation::ReLU), DataType::Fp16))
        .collect();
    let edges = ids.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    ModelGraph::new(
        name,
        layers,
        edges,
        vec![ids[0].clone()],
        vec![ids[layer_count - 1].clone()],
    )
    .expect("chain graph is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{infer_shapes, linearize, output_shapes, param_count, TensorShape};

    fn image() -> TensorShape {
        TensorShape::new(3, 256, 256).unwrap()
    }

    /// Independent tally of the conv-substitution overhead: 9·C² per site.
    fn substitution_delta() -> u64 {
        DECODER_FILTERS
            .iter()
            .chain(std::iter::once(&IMAGE_CHANNELS))
            .map(|&c| 9 * (c * c) as u64)
            .sum()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(
            param_count(&build_pix2pix_generator(Pix2PixVariant::Original)),
            54_425_859
        );
        assert_eq!(
            param_count(&build_pix2pix_generator(Pix2PixVariant::CropSubstituted)),
            54_425_859
        );
        assert_eq!(
            param_count(&build_pix2pix_generator(Pix2PixVariant::ConvSubstituted)),
            64_637_268
        );
        assert_eq!(substitution_delta(), 10_211_409);
        assert_eq!(9 * (4 * 512 * 512 + 256 * 256 + 128 * 128 + 64 * 64 + 9), 10_211_409);
    }

    #[test]
    fn every_variant_maps_image_to_image() {
        for v in Pix2PixVariant::ALL {
            let g = build_pix2pix_generator(v);
            assert_eq!(output_shapes(&g, image()).unwrap(), vec![image()], "{v:?}");
        }
    }

    #[test]
    fn padded_deconv_counts() {
        let padded = |v| {
            build_pix2pix_generator(v)
                .layers()
                .filter(|l| l.is_padded_deconv())
                .count()
        };
        assert_eq!(padded(Pix2PixVariant::Original), 8);
        assert_eq!(padded(Pix2PixVariant::CropSubstituted), 0);
        assert_eq!(padded(Pix2PixVariant::ConvSubstituted), 0);
    }

    #[test]
    fn linearize_follows_construction_order() {
        for v in Pix2PixVariant::ALL {
            let g = build_pix2pix_generator(v);
            let built: Vec<String> = g.layers().map(|l| l.id.clone()).collect();
            assert_eq!(linearize(&g), built.as_slice());
            assert_eq!(linearize(&g)[0], "down1.conv");
        }
        assert_eq!(build_pix2pix_generator(Pix2PixVariant::Original).len(), 56);
        assert_eq!(build_pix2pix_generator(Pix2PixVariant::CropSubstituted).len(), 64);
    }

    #[test]
    fn bottleneck_is_one_pixel() {
        let g = build_pix2pix_generator(Pix2PixVariant::Original);
        let shapes = infer_shapes(&g, image()).unwrap();
        assert_eq!(shapes["down8.lrelu"], TensorShape::new(512, 1, 1).unwrap());
        assert_eq!(shapes["up7.concat"], TensorShape::new(128, 128, 128).unwrap());
    }

    #[test]
    fn chains() {
        assert_eq!(build_chain("yolo", 1).len(), 1);
        let g = build_chain("yolo", 100);
        assert_eq!(linearize(&g).len(), 100);
        assert_eq!(linearize(&g)[0], "yolo.00");
        assert_eq!(linearize(&g)[99], "yolo.99");
    }
}
