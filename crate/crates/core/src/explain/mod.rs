//! Grad-CAM heatmaps and t-SNE embeddings.

pub mod gradcam;
pub mod tsne;

pub use gradcam::{grad_cam, grad_cam_from_maps, grad_cam_on_graph, CamLayer, Heatmap};
pub use tsne::{conditional_affinities, silhouette, tsne_embed, Embedding2D, TsneConfig};
