use std::io::Write;
use std::path::Path;

use proactive_autograd::{Checkpoint, Graph, Mode, ParamId, ParamStore, Scalar, Tensor, Var};
use proactive_synth::{Image, SegMap, CHANNELS};
use rand::Rng;

use crate::config::{TemplateMode, TransformMode, WrapperConfig};
use crate::net::TemplateNet;
use crate::{Result, WrapperError};

#[derive(Debug, Clone)]
enum Encoder {
    Net(TemplateNet),
    /// Logits of a single shared map.
    Universal(ParamId),
    /// Buffer holding the map itself.
    Fixed(ParamId),
}

/// Encoder and decoder with their parameter stores (labelled `encoder` and
/// `decoder`).
#[derive(Debug, Clone)]
pub struct Wrapper {
    pub config: WrapperConfig,
    pub image_size: usize,
    pub encoder_store: ParamStore<f32>,
    pub decoder_store: ParamStore<f32>,
    encoder: Encoder,
    decoder: Option<TemplateNet>,
}

impl Wrapper {
    pub fn new(config: WrapperConfig, image_size: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate(image_size)?;
        let mut encoder_store = ParamStore::new("encoder");
        let mut decoder_store = ParamStore::new("decoder");
        let map_shape = [1, 1, image_size, image_size];
        let encoder = match config.template_mode {
            TemplateMode::ImageDependent => Encoder::Net(TemplateNet::new(
                &mut encoder_store,
                CHANNELS,
                &config.encoder,
                config.final_bias_offset,
                config.head_init_scale,
                rng,
            )),
            TemplateMode::UniversalLearnable => Encoder::Universal(encoder_store.add(
                "template_logits",
                Tensor::full(&map_shape, config.final_bias_offset as f32),
            )),
            TemplateMode::Fixed => {
                let lo = config.fixed_template_low;
                let data = (0..image_size * image_size)
                    .map(|_| if lo < 1.0 { rng.random_range(lo..=1.0) as f32 } else { 1.0 })
                    .collect();
                Encoder::Fixed(encoder_store.add_buffer("template", Tensor::new(&map_shape, data)?))
            }
        };
        let decoder = config.use_decoder.then(|| {
            TemplateNet::new(
                &mut decoder_store,
                CHANNELS,
                &config.decoder,
                config.final_bias_offset,
                config.head_init_scale,
                rng,
            )
        });
        Ok(Self {
            config,
            image_size,
            encoder_store,
            decoder_store,
            encoder,
            decoder,
        })
    }

    /// Template for a batch `x: [B, 3, H, W]`: `[B, 1, H, W]` for the encoder
    /// network, `[1, 1, H, W]` (broadcast over the batch) otherwise.
    pub fn template(&mut self, g: &mut Graph<f32>, x: Var, mode: Mode) -> Result<Var> {
        match &self.encoder {
            Encoder::Net(net) => Ok(net.forward(g, &mut self.encoder_store, x, mode)?),
            Encoder::Universal(id) => {
                let logits = g.param(&self.encoder_store, *id);
                Ok(g.sigmoid(logits))
            }
            Encoder::Fixed(id) => Ok(g.param(&self.encoder_store, *id)),
        }
    }

    pub fn encrypt(&self, g: &mut Graph<f32>, x: Var, template: Var) -> Result<Var> {
        Ok(encrypt(g, x, template, self.config.transform_mode)?)
    }

    /// Decoder estimate of the template from an encrypted batch.
    pub fn recover(&mut self, g: &mut Graph<f32>, encrypted: Var, mode: Mode) -> Result<Var> {
        let net = self
            .decoder
            .as_ref()
            .ok_or_else(|| WrapperError::InvalidConfig("decoder is disabled".into()))?;
        Ok(net.forward(g, &mut self.decoder_store, encrypted, mode)?)
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder.is_some()
    }

    /// Template values in evaluation mode, `[B or 1, 1, H, W]`.
    pub fn template_values(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let t = self.template(&mut g, x, Mode::Eval)?;
        Ok(g.value(t).clone())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.encoder_store);
        ck.extend_from_store(&self.decoder_store);
        ck
    }

    pub fn load(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.load_into(&mut self.encoder_store)?;
        ck.load_into(&mut self.decoder_store)?;
        Ok(())
    }
}

pub fn encrypt<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    template: Var,
    mode: TransformMode,
) -> proactive_autograd::Result<Var> {
    Ok(match mode {
        TransformMode::Multiply => g.mul(x, template)?,
        TransformMode::Add => {
            let shift = g.add_scalar(template, -1.0);
            let sum = g.add(x, shift)?;
            g.clamp(sum, 0.0, 1.0)
        }
    })
}

/// Stacks images into `[B, 3, H, W]`.
pub fn batch_images(images: &[&Image]) -> Result<Tensor<f32>> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut data = Vec::with_capacity(images.len() * CHANNELS * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(WrapperError::InvalidConfig("images in a batch must share a size".into()));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::new(&[images.len(), CHANNELS, h, w], data)?)
}

/// Stacks binary maps into `[B, 1, H, W]` of zeros and ones.
pub fn batch_maps(maps: &[&SegMap]) -> Result<Tensor<f32>> {
    let (h, w) = maps.first().map_or((0, 0), |m| (m.height(), m.width()));
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if (m.height(), m.width()) != (h, w) {
            return Err(WrapperError::InvalidConfig("maps in a batch must share a size".into()));
        }
        data.extend(m.to_f32());
    }
    Ok(Tensor::new(&[maps.len(), 1, h, w], data)?)
}

pub fn template_to_gray(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Binary greyscale PGM of one `height × width` map.
pub fn write_template_pgm(path: impl AsRef<Path>, values: &[f32], height: usize, width: usize) -> Result<()> {
    if values.len() != height * width {
        return Err(WrapperError::InvalidConfig(format!(
            "{} values for a {height}x{width} map",
            values.len()
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&template_to_gray(values))?;
    f.flush()?;
    Ok(())
}
