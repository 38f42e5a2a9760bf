//! Synthetic generic and camouflaged scenes with boxes, labels and
//! segmentation maps.

mod format;
mod scene;

pub use format::{read_dataset, write_dataset, Dataset, FormatError, FORMAT_VERSION};
pub use proactive_metrics::{BBox, SegMap};
pub use scene::{
    class_color, generate_scene, pseudo_seg_from_boxes, Annotation, DatasetSpec, Image, Scene,
    SynthError, CHANNELS, MAX_PLACEMENT_ATTEMPTS,
};
