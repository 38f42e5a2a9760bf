use proactive_autograd::{Conv2d, ConvBnRelu, Graph, Mode, ParamStore, Scalar, Var};
use rand::Rng;

use crate::config::NetShape;
use proactive_autograd::Result;

/// Image-to-map network: stem, down/up block stack with one skip from the
/// first block to the last, and a 1×1 sigmoid head.
#[derive(Debug, Clone)]
pub struct TemplateNet {
    stem: Vec<ConvBnRelu>,
    blocks: Vec<ConvBnRelu>,
    head: Conv2d,
    levels: usize,
}

impl TemplateNet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        in_channels: usize,
        shape: &NetShape,
        bias_offset: f64,
        head_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut stem = Vec::with_capacity(shape.stem_layers);
        let mut c = in_channels;
        for i in 0..shape.stem_layers {
            stem.push(ConvBnRelu::new(store, &format!("stem{i}"), c, shape.stem_width, rng));
            c = shape.stem_width;
        }
        let mut blocks = Vec::with_capacity(shape.blocks);
        for i in 0..shape.blocks {
            blocks.push(ConvBnRelu::new(store, &format!("block{i}"), c, shape.block_width, rng));
            c = shape.block_width;
        }
        let head = Conv2d::new(store, "head", c, 1, 1, true, rng);
        for v in store.value_mut(head.weight).data_mut() {
            *v *= T::from_f64(head_scale);
        }
        let bias = head.bias.expect("head has a bias");
        store.value_mut(bias).data_mut().fill(T::from_f64(bias_offset));
        Self {
            stem,
            blocks,
            head,
            levels: shape.levels,
        }
    }

    /// `x: [B, C, H, W]` → `[B, 1, H, W]` in [0, 1].
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        for layer in &self.stem {
            h = layer.forward(g, store, h, mode)?;
        }
        let n = self.blocks.len();
        let mut skip = None;
        for (i, block) in self.blocks.iter().enumerate() {
            if (1..=self.levels).contains(&i) {
                h = g.avg_pool2(h)?;
            }
            if i >= n - self.levels {
                h = g.upsample2(h)?;
            }
            if i == n - 1 {
                if let Some(s) = skip {
                    h = g.add(h, s)?;
                }
            }
            h = block.forward(g, store, h, mode)?;
            if i == 0 {
                skip = Some(h);
            }
        }
        let logits = self.head.forward(g, store, h)?;
        Ok(g.sigmoid(logits))
    }
}
