use proactive_autograd::{Checkpoint, Conv2d, ConvBnRelu, Graph, Mode, ParamStore, Var};
use rand::Rng;

use crate::config::{DetectorConfig, STRIDE};
use crate::{DetectorError, Result, BOX_CHANNELS};

#[derive(Debug, Clone, Copy)]
pub struct DetectorOutput {
    /// `[B, 5 + N, G, G]`
    pub grid: Option<Var>,
    /// `[B, 1, H, W]` in [0, 1]
    pub seg: Option<Var>,
}

/// Four-block convolutional trunk and the configured heads. Parameters live
/// in a store labelled `detector`.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    pub image_size: usize,
    pub store: ParamStore<f32>,
    trunk: Vec<ConvBnRelu>,
    grid_head: Option<Conv2d>,
    seg_deep: Option<Conv2d>,
    seg_skip: Option<Conv2d>,
}

impl Detector {
    pub fn new(config: DetectorConfig, image_size: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate(image_size)?;
        let mut store = ParamStore::new("detector");
        let mut trunk = Vec::with_capacity(4);
        let mut c = 3;
        for (i, &w) in config.widths.iter().enumerate() {
            trunk.push(ConvBnRelu::new(&mut store, &format!("trunk{i}"), c, w, rng));
            c = w;
        }
        let grid_head = config.head.has_grid().then(|| {
            let head = Conv2d::new(&mut store, "grid_head", c, BOX_CHANNELS + config.num_classes, 1, true, rng);
            let bias = head.bias.expect("grid head has a bias");
            store.value_mut(bias).data_mut()[0] = config.objectness_prior as f32;
            head
        });
        let (seg_deep, seg_skip) = if config.head.has_seg() {
            (
                Some(Conv2d::new(&mut store, "seg_deep", c, 1, 1, true, rng)),
                Some(Conv2d::new(&mut store, "seg_skip", config.widths[0], 1, 1, false, rng)),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            image_size,
            store,
            trunk,
            grid_head,
            seg_deep,
            seg_skip,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / STRIDE
    }

    /// `x: [B, 3, H, W]`, the raw image when passive and the encrypted one when proactive.
    pub fn forward(&mut self, g: &mut Graph<f32>, x: Var, mode: Mode) -> Result<DetectorOutput> {
        let shape = g.shape(x);
        let n = self.image_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != n || shape[3] != n {
            return Err(DetectorError::InputShape {
                found: shape.to_vec(),
                size: n,
            });
        }
        let mut h = x;
        let mut first = None;
        for (i, block) in self.trunk.iter().enumerate() {
            h = block.forward(g, &mut self.store, h, mode)?;
            if i == 0 {
                first = Some(h);
            }
            if i < 3 {
                h = g.avg_pool2(h)?;
            }
        }
        let grid = match &self.grid_head {
            Some(head) => Some(head.forward(g, &self.store, h)?),
            None => None,
        };
        let seg = match (&self.seg_deep, &self.seg_skip, first) {
            (Some(deep), Some(skip), Some(first)) => {
                let mut d = deep.forward(g, &self.store, h)?;
                for _ in 0..3 {
                    d = g.upsample2(d)?;
                }
                let s = skip.forward(g, &self.store, first)?;
                let logits = g.add(d, s)?;
                Some(g.sigmoid(logits))
            }
            _ => None,
        };
        Ok(DetectorOutput { grid, seg })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn load(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.load_into(&mut self.store)?;
        Ok(())
    }
}
